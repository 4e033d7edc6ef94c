use super::{crown_bounds, BoundMode, Hyperrectangle, LinearRelaxation};
use crate::dynamics::DynamicsModel;
use crate::nn::Network;
use crate::{Error, Result};

/// Linear sandwich of `B(F(x) + v)` over the joint box `qx x qv`. The joint
/// input is `(x, v)` with `x` first.
pub fn composed_bounds(
    dynm: &DynamicsModel,
    net: &Network,
    qx: &Hyperrectangle,
    qv: &Hyperrectangle,
    mode: BoundMode,
) -> Result<LinearRelaxation> {
    let n = dynm.state_dim();
    if net.input_dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: net.input_dim(),
        });
    }
    if qv.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: qv.dim() });
    }
    let rel_f = dynm.relax_f(qx)?;
    let image = dynm.image_box(qx, &rel_f).offset_by(qv)?;
    let rel_b = crown_bounds(net, &image, mode)?;
    Ok(compose(&rel_f, &rel_b, qv))
}

/// Substitutes the dynamics sandwich `rel_f` (over `qx`) into the scalar
/// network relaxation `rel_b` (over an enclosure of `F(qx) + qv`). Positive
/// network coefficients take the dynamics upper line in the upper bound and
/// the lower line in the lower bound; negative ones the reverse.
pub(crate) fn compose(rel_f: &LinearRelaxation, rel_b: &LinearRelaxation, qv: &Hyperrectangle) -> LinearRelaxation {
    let n = rel_f.in_dim();
    let cu = rel_b.upper_row(0);
    let cl = rel_b.lower_row(0);
    let mut a_upper = vec![0.0; 2 * n];
    let mut a_lower = vec![0.0; 2 * n];
    let mut b_upper = rel_b.b_upper[0];
    let mut b_lower = rel_b.b_lower[0];
    for i in 0..n {
        let (fu, fl) = (rel_f.upper_row(i), rel_f.lower_row(i));
        let (ru, bu) = if cu[i] >= 0.0 { (fu, rel_f.b_upper[i]) } else { (fl, rel_f.b_lower[i]) };
        let (rl, bl) = if cl[i] >= 0.0 { (fl, rel_f.b_lower[i]) } else { (fu, rel_f.b_upper[i]) };
        for j in 0..n {
            a_upper[j] += cu[i] * ru[j];
            a_lower[j] += cl[i] * rl[j];
        }
        b_upper += cu[i] * bu;
        b_lower += cl[i] * bl;
        a_upper[n + i] = cu[i];
        a_lower[n + i] = cl[i];
    }
    LinearRelaxation {
        a_lower,
        b_lower: vec![b_lower],
        a_upper,
        b_upper: vec![b_upper],
        domain: rel_f.domain.product(qv),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ComponentExpr;
    use crate::nn::{Activation, LayerParams, LayerSpec};
    use crate::noise::DiagonalGaussian;
    use crate::sets::SetExpr;

    fn identity_system() -> DynamicsModel {
        let x = Hyperrectangle::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        DynamicsModel::new(
            "identity",
            vec![
                ComponentExpr { linear: vec![1.0, 0.0], constant: 0.0, terms: vec![] },
                ComponentExpr { linear: vec![0.0, 1.0], constant: 0.0, terms: vec![] },
            ],
            x.clone(),
            SetExpr::Empty,
            SetExpr::from_box(&x),
            SetExpr::Empty,
            DiagonalGaussian::new(vec![0.0; 2], vec![1.0; 2]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_dynamics_with_affine_net() {
        let net = Network::new(
            vec![LayerSpec { input_width: 2, output_width: 1, activation: Activation::Identity }],
            vec![LayerParams { weight: vec![1.5, -0.5], bias: vec![0.25] }],
        )
        .unwrap();
        let qx = Hyperrectangle::new(vec![-1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let qv = Hyperrectangle::new(vec![-0.1, -0.2], vec![0.3, 0.2]).unwrap();
        let rel = composed_bounds(&identity_system(), &net, &qx, &qv, BoundMode::Crown).unwrap();
        assert_eq!(rel.a_upper, vec![1.5, -0.5, 1.5, -0.5]);
        assert_eq!(rel.a_lower, rel.a_upper);
        assert_eq!(rel.b_lower, vec![0.25]);
        assert_eq!(rel.b_upper, vec![0.25]);
        assert_eq!(rel.in_dim(), 4);
    }

    #[test]
    fn constant_net_gives_constant_bounds() {
        let net = Network::constant(2, &[8], 0.7);
        let qx = Hyperrectangle::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let qv = Hyperrectangle::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
        let rel = composed_bounds(&DynamicsModel::polynomial2d(), &net, &qx, &qv, BoundMode::Crown).unwrap();
        assert!(rel.a_upper.iter().chain(&rel.a_lower).all(|a| *a == 0.0));
        assert_eq!((rel.b_lower[0], rel.b_upper[0]), (0.7, 0.7));
    }
}
