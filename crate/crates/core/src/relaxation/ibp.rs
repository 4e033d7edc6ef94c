use super::{Hyperrectangle, IntervalRelaxation};
use crate::nn::{Activation, GradientSet, Network};
use crate::{Error, Result};

/// Interval bound propagation in center/radius form.
pub fn ibp_bounds(net: &Network, bx: &Hyperrectangle) -> Result<IntervalRelaxation> {
    check_dim(net, bx)?;
    Ok(IntervalTape::forward(net, bx).output())
}

pub(crate) fn check_dim(net: &Network, bx: &Hyperrectangle) -> Result<()> {
    if bx.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: bx.dim(),
        });
    }
    Ok(())
}

/// Pre-activation intervals of every layer, computed by IBP.
pub(crate) fn ibp_preactivations(net: &Network, bx: &Hyperrectangle) -> Vec<(Vec<f64>, Vec<f64>)> {
    IntervalTape::forward(net, bx)
        .layers
        .into_iter()
        .map(|l| {
            let lo = l.mu_pre.iter().zip(&l.r_pre).map(|(m, r)| m - r).collect();
            let hi = l.mu_pre.iter().zip(&l.r_pre).map(|(m, r)| m + r).collect();
            (lo, hi)
        })
        .collect()
}

struct TapeLayer {
    mu_in: Vec<f64>,
    r_in: Vec<f64>,
    mu_pre: Vec<f64>,
    r_pre: Vec<f64>,
}

/// Recorded IBP forward pass that can be differentiated with respect to the
/// network parameters. The bounds are a piecewise-smooth function of the
/// weights, so `lo` and `hi` of the output can appear in a training loss.
pub struct IntervalTape {
    layers: Vec<TapeLayer>,
    mu_out: Vec<f64>,
    r_out: Vec<f64>,
}

impl IntervalTape {
    /// Caller guarantees `bx.dim() == net.input_dim()`.
    pub fn forward(net: &Network, bx: &Hyperrectangle) -> Self {
        let mut mu = bx.center();
        let mut r = bx.half_widths();
        let mut layers = Vec::with_capacity(net.specs().len());
        for (s, p) in net.specs().iter().zip(net.params()) {
            let n_in = s.input_width;
            let mut mu_pre = p.bias.clone();
            let mut r_pre = vec![0.0; s.output_width];
            for i in 0..s.output_width {
                let row = p.row(i, n_in);
                let mut m = 0.0;
                let mut rr = 0.0;
                for j in 0..n_in {
                    m += row[j] * mu[j];
                    rr += row[j].abs() * r[j];
                }
                mu_pre[i] += m;
                r_pre[i] = rr;
            }
            let (mu_next, r_next) = match s.activation {
                Activation::Identity => (mu_pre.clone(), r_pre.clone()),
                Activation::Relu => {
                    let mut mn = Vec::with_capacity(s.output_width);
                    let mut rn = Vec::with_capacity(s.output_width);
                    for (m, rr) in mu_pre.iter().zip(&r_pre) {
                        let lo = (m - rr).max(0.0);
                        let hi = (m + rr).max(0.0);
                        mn.push(0.5 * (hi + lo));
                        rn.push(0.5 * (hi - lo));
                    }
                    (mn, rn)
                }
            };
            layers.push(TapeLayer {
                mu_in: std::mem::replace(&mut mu, mu_next),
                r_in: std::mem::replace(&mut r, r_next),
                mu_pre,
                r_pre,
            });
        }
        Self {
            layers,
            mu_out: mu,
            r_out: r,
        }
    }

    pub fn output(&self) -> IntervalRelaxation {
        IntervalRelaxation {
            lo: self.mu_out.iter().zip(&self.r_out).map(|(m, r)| m - r).collect(),
            hi: self.mu_out.iter().zip(&self.r_out).map(|(m, r)| m + r).collect(),
        }
    }

    pub fn lo(&self, i: usize) -> f64 {
        self.mu_out[i] - self.r_out[i]
    }

    pub fn hi(&self, i: usize) -> f64 {
        self.mu_out[i] + self.r_out[i]
    }

    /// Accumulates `d(g_lo . lo + g_hi . hi) / d(theta)` into `grads`.
    pub fn backward(&self, net: &Network, g_lo: &[f64], g_hi: &[f64], grads: &mut GradientSet) {
        // output lo = mu - r, hi = mu + r
        let mut g_mu: Vec<f64> = g_lo.iter().zip(g_hi).map(|(a, b)| a + b).collect();
        let mut g_r: Vec<f64> = g_lo.iter().zip(g_hi).map(|(a, b)| b - a).collect();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let s = &net.specs()[k];
            let p = &net.params()[k];
            // through the activation: post (mu, r) -> pre (mu_pre, r_pre)
            let (g_mu_pre, g_r_pre) = match s.activation {
                Activation::Identity => (g_mu, g_r),
                Activation::Relu => {
                    let mut gm = vec![0.0; s.output_width];
                    let mut gr = vec![0.0; s.output_width];
                    for i in 0..s.output_width {
                        let l = layer.mu_pre[i] - layer.r_pre[i];
                        let u = layer.mu_pre[i] + layer.r_pre[i];
                        let g_hi_post = 0.5 * (g_mu[i] + g_r[i]);
                        let g_lo_post = 0.5 * (g_mu[i] - g_r[i]);
                        let g_u = if u > 0.0 { g_hi_post } else { 0.0 };
                        let g_l = if l > 0.0 { g_lo_post } else { 0.0 };
                        gm[i] = g_l + g_u;
                        gr[i] = g_u - g_l;
                    }
                    (gm, gr)
                }
            };
            let g = &mut grads.layers[k];
            let n_in = s.input_width;
            let mut g_mu_in = vec![0.0; n_in];
            let mut g_r_in = vec![0.0; n_in];
            for i in 0..s.output_width {
                let (gm, gr) = (g_mu_pre[i], g_r_pre[i]);
                g.bias[i] += gm;
                if gm == 0.0 && gr == 0.0 {
                    continue;
                }
                let row = p.row(i, n_in);
                let grow = &mut g.weight[i * n_in..(i + 1) * n_in];
                for j in 0..n_in {
                    let w = row[j];
                    let sign = if w > 0.0 {
                        1.0
                    } else if w < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    grow[j] += gm * layer.mu_in[j] + gr * sign * layer.r_in[j];
                    g_mu_in[j] += gm * w;
                    g_r_in[j] += gr * w.abs();
                }
            }
            g_mu = g_mu_in;
            g_r = g_r_in;
        }
    }
}
