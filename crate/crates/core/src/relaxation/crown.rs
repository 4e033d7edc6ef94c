use super::ibp::{check_dim, ibp_preactivations};
use super::{linear_to_interval, BoundMode, Hyperrectangle, LinearRelaxation};
use crate::nn::{Activation, Network};
use crate::Result;

/// Linear bounds of a ReLU over a pre-activation interval:
/// `sl*z + tl <= relu(z) <= su*z + tu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ReluLine {
    pub su: f64,
    pub tu: f64,
    pub sl: f64,
    pub tl: f64,
}

impl ReluLine {
    const ZERO: ReluLine = ReluLine { su: 0.0, tu: 0.0, sl: 0.0, tl: 0.0 };
    const IDENTITY: ReluLine = ReluLine { su: 1.0, tu: 0.0, sl: 1.0, tl: 0.0 };

    /// Stable neurons are exact. Unstable ones take the chord as upper line and
    /// `alpha * z` below, with `alpha = 1` iff `u >= -l`.
    pub fn new(l: f64, u: f64) -> Self {
        if u <= 0.0 {
            return Self::ZERO;
        }
        if l >= 0.0 {
            return Self::IDENTITY;
        }
        let su = u / (u - l);
        Self {
            su,
            tu: -su * l,
            sl: if u >= -l { 1.0 } else { 0.0 },
            tl: 0.0,
        }
    }
}

/// Backward linear bound propagation for every output of `net` over `bx`.
pub fn crown_bounds(net: &Network, bx: &Hyperrectangle, mode: BoundMode) -> Result<LinearRelaxation> {
    check_dim(net, bx)?;
    let nl = net.specs().len();
    let ibp = ibp_preactivations(net, bx);
    let mut lines: Vec<Option<Vec<ReluLine>>> = Vec::with_capacity(nl);

    for k in 0..nl {
        if net.specs()[k].activation == Activation::Identity {
            lines.push(None);
            continue;
        }
        let (ibp_lo, ibp_hi) = &ibp[k];
        let bounds: Vec<(f64, f64)> = match mode {
            BoundMode::CrownIbp => ibp_lo.iter().copied().zip(ibp_hi.iter().copied()).collect(),
            BoundMode::Crown => {
                let rel = backward(net, &lines, k, bx);
                let iv = linear_to_interval(&rel);
                (0..iv.lo.len())
                    .map(|i| (iv.lo[i].max(ibp_lo[i]), iv.hi[i].min(ibp_hi[i])))
                    .collect()
            }
        };
        lines.push(Some(bounds.into_iter().map(|(l, u)| ReluLine::new(l, u)).collect()));
    }

    // pre-activation of the last layer, then its activation if any
    let last = nl - 1;
    let rel = backward(net, &lines, last, bx);
    match &lines[last] {
        None => Ok(rel),
        Some(out_lines) => {
            let n = bx.dim();
            let mut out = rel.clone();
            for (i, line) in out_lines.iter().enumerate() {
                for j in 0..n {
                    out.a_upper[i * n + j] = line.su * rel.a_upper[i * n + j];
                    out.a_lower[i * n + j] = line.sl * rel.a_lower[i * n + j];
                }
                out.b_upper[i] = line.su * rel.b_upper[i] + line.tu;
                out.b_lower[i] = line.sl * rel.b_lower[i] + line.tl;
            }
            Ok(out)
        }
    }
}

/// Linear bounds of the pre-activation `z_top` in terms of the network input,
/// using the activation relaxations of layers `0..top`.
fn backward(net: &Network, lines: &[Option<Vec<ReluLine>>], top: usize, bx: &Hyperrectangle) -> LinearRelaxation {
    let spec = &net.specs()[top];
    let p = &net.params()[top];
    let m = spec.output_width;
    let mut width = spec.input_width;
    let mut lam_u = p.weight.clone();
    let mut lam_l = p.weight.clone();
    let mut c_u = p.bias.clone();
    let mut c_l = p.bias.clone();

    for j in (0..top).rev() {
        if let Some(ls) = &lines[j] {
            for r in 0..m {
                let (ru, rl) = (&mut lam_u[r * width..(r + 1) * width], &mut lam_l[r * width..(r + 1) * width]);
                for i in 0..width {
                    let line = ls[i];
                    let lu = ru[i];
                    if lu >= 0.0 {
                        c_u[r] += lu * line.tu;
                        ru[i] = lu * line.su;
                    } else {
                        c_u[r] += lu * line.tl;
                        ru[i] = lu * line.sl;
                    }
                    let ll = rl[i];
                    if ll >= 0.0 {
                        c_l[r] += ll * line.tl;
                        rl[i] = ll * line.sl;
                    } else {
                        c_l[r] += ll * line.tu;
                        rl[i] = ll * line.su;
                    }
                }
            }
        }
        let s = &net.specs()[j];
        let pj = &net.params()[j];
        let n_in = s.input_width;
        let mut next_u = vec![0.0; m * n_in];
        let mut next_l = vec![0.0; m * n_in];
        for r in 0..m {
            for i in 0..width {
                let (lu, ll) = (lam_u[r * width + i], lam_l[r * width + i]);
                c_u[r] += lu * pj.bias[i];
                c_l[r] += ll * pj.bias[i];
                let row = pj.row(i, n_in);
                if lu != 0.0 {
                    let out = &mut next_u[r * n_in..(r + 1) * n_in];
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += lu * w;
                    }
                }
                if ll != 0.0 {
                    let out = &mut next_l[r * n_in..(r + 1) * n_in];
                    for (o, w) in out.iter_mut().zip(row) {
                        *o += ll * w;
                    }
                }
            }
        }
        lam_u = next_u;
        lam_l = next_l;
        width = n_in;
    }

    LinearRelaxation {
        a_lower: lam_l,
        b_lower: c_l,
        a_upper: lam_u,
        b_upper: c_u,
        domain: bx.clone(),
    }
}
