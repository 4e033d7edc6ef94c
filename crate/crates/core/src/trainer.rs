//! Robust training of barrier candidates.
//!
//! The loss mixes sampled condition violations with the safety objective:
//! `(1 - kappa) * violation + kappa * (gamma_m + beta_m * H)`, with `gamma_m`
//! and `beta_m` floored at zero. Every term is evaluated on interval bounds
//! over `eps`-boxes around the samples so that gradients push the certified
//! bounds, not just point values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::nn::{GradientSet, Network};
use crate::relaxation::{Hyperrectangle, IntervalTape};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Samples per set per iteration.
    pub m: usize,
    /// Noise samples for the expectation term.
    pub l: usize,
    pub eps: f64,
    pub horizon: usize,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub kappa0: f64,
    pub kappa_decay: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub seed: u64,
    /// Value of the barrier outside the state space.
    pub exit_value: f64,
    /// Hinge clearance on `X`: the target is `B >= state_margin`.
    pub state_margin: f64,
    /// Hinge clearance on `X_u`: the target is `B >= 1 + unsafe_margin`.
    pub unsafe_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m: 250,
            l: 500,
            eps: 1e-5,
            horizon: 10,
            epochs: 150,
            iters_per_epoch: 400,
            kappa0: 1.0,
            kappa_decay: 0.97,
            learning_rate: 1e-3,
            lr_decay: 0.97,
            seed: 0,
            exit_value: 1.0,
            state_margin: 0.0,
            unsafe_margin: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.m == 0 || self.l == 0 || self.epochs == 0 || self.iters_per_epoch == 0 || self.horizon == 0 {
            return bad("training counts must be positive");
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad("eps must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.kappa0) || !(0.0..=1.0).contains(&self.kappa_decay) {
            return bad("kappa0 and kappa_decay must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning rate must be positive and its decay in (0, 1]");
        }
        if ![self.state_margin, self.unsafe_margin].iter().all(|m| m.is_finite() && *m >= 0.0) {
            return bad("margins must be finite and non-negative");
        }
        if !(self.exit_value.is_finite() && self.exit_value >= 0.0) {
            return bad("exit_value must be finite and non-negative");
        }
        Ok(())
    }

    /// `kappa0 * kappa_decay^epoch`.
    pub fn kappa(&self, epoch: usize) -> f64 {
        self.kappa0 * self.kappa_decay.powi(epoch as i32)
    }
}

/// Training points drawn from each set.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub x: Vec<Vec<f64>>,
    pub x0: Vec<Vec<f64>>,
    pub xs: Vec<Vec<f64>>,
    pub xu: Vec<Vec<f64>>,
}

pub fn sample_batch<R: rand::Rng + ?Sized>(dynm: &DynamicsModel, m: usize, rng: &mut R) -> Result<Batch> {
    let x = (0..m).map(|_| dynm.state_space().sample(rng)).collect();
    Ok(Batch {
        x,
        x0: dynm.initial_set().sample(m, rng)?,
        xs: dynm.safe_set().sample(m, rng)?,
        xu: dynm.unsafe_set().sample(m, rng)?,
    })
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub violation: f64,
    pub gamma_m: f64,
    pub beta_m: f64,
    pub grads: GradientSet,
}

/// How one noise sample enters the expectation bound at a given image box.
enum NextBound {
    Exit,
    Inside(IntervalTape),
    /// Straddles the boundary: `max(B, exit_value)`.
    Boundary(IntervalTape),
}

struct Expectation {
    value: f64,
    parts: Vec<NextBound>,
}

fn ball(x: &[f64], eps: f64) -> Hyperrectangle {
    Hyperrectangle::ball(x, eps).expect("finite sample")
}

/// Upper bound over the ball around `x` of `mean_j B~(F(x') + v_j)`.
fn expectation_bound(net: &Network, dynm: &DynamicsModel, x: &[f64], eps: f64, v: &[Vec<f64>], exit: f64) -> Expectation {
    let b = ball(x, eps);
    let img = dynm.image_box(&b, &dynm.relax_f_unchecked(&b));
    let space = dynm.state_space();
    let mut sum = 0.0;
    let mut parts = Vec::with_capacity(v.len());
    for vj in v {
        let y = Hyperrectangle::new(
            img.lower().iter().zip(vj).map(|(a, b)| a + b).collect(),
            img.upper().iter().zip(vj).map(|(a, b)| a + b).collect(),
        )
        .expect("finite image");
        if !space.intersects(&y) {
            sum += exit;
            parts.push(NextBound::Exit);
            continue;
        }
        let tape = IntervalTape::forward(net, &y);
        if space.contains_box(&y) {
            sum += tape.hi(0);
            parts.push(NextBound::Inside(tape));
        } else {
            sum += tape.hi(0).max(exit);
            parts.push(NextBound::Boundary(tape));
        }
    }
    Expectation {
        value: sum / v.len() as f64,
        parts,
    }
}

/// Robust loss and its parameter gradient.
///
/// Maxima over samples use the subgradient of the maximizing sample; hinge
/// terms contribute only when active.
/// Reads `eps`, `horizon`, `exit_value` and the margins from `cfg`.
pub fn robust_loss(net: &Network, dynm: &DynamicsModel, batch: &Batch, v_samples: &[Vec<f64>], kappa: f64, cfg: &TrainConfig) -> LossOutput {
    let mut grads = GradientSet::zeros_like(net);
    let (eps, exit_value) = (cfg.eps, cfg.exit_value);
    let h = cfg.horizon as f64;

    // violation: hinge on the ball minimum over X and X_u
    let mut violation = 0.0;
    let groups = [(&batch.x, cfg.state_margin), (&batch.xu, 1.0 + cfg.unsafe_margin)];
    let active_groups = groups.iter().filter(|(s, _)| !s.is_empty()).count().max(1) as f64;
    for (set, target) in groups {
        if set.is_empty() {
            continue;
        }
        let w = 1.0 / (active_groups * set.len() as f64);
        for x in set {
            let tape = IntervalTape::forward(net, &ball(x, eps));
            let gap = target - tape.lo(0);
            if gap > 0.0 {
                violation += w * gap;
                tape.backward(net, &[-(1.0 - kappa) * w], &[0.0], &mut grads);
            }
        }
    }

    // gamma_m: largest ball maximum over X_0
    let mut gamma_m = 0.0;
    let mut gamma_arg: Option<&Vec<f64>> = None;
    for x in &batch.x0 {
        let hi = IntervalTape::forward(net, &ball(x, eps)).hi(0);
        if gamma_arg.is_none() || hi > gamma_m {
            gamma_m = hi;
            gamma_arg = Some(x);
        }
    }
    if let Some(x) = gamma_arg {
        if kappa > 0.0 && gamma_m > 0.0 {
            IntervalTape::forward(net, &ball(x, eps)).backward(net, &[0.0], &[kappa], &mut grads);
        }
    }

    // beta_m: largest bound of mean_j B~(F(x') + v_j) - B(x') over X_s
    let mut beta_m = 0.0;
    let mut beta_arg: Option<&Vec<f64>> = None;
    for x in &batch.xs {
        let e = expectation_bound(net, dynm, x, eps, v_samples, exit_value).value;
        let here = IntervalTape::forward(net, &ball(x, eps)).lo(0);
        if beta_arg.is_none() || e - here > beta_m {
            beta_m = e - here;
            beta_arg = Some(x);
        }
    }
    if let Some(x) = beta_arg {
        if kappa > 0.0 && beta_m > 0.0 {
            let scale = kappa * h;
            let e = expectation_bound(net, dynm, x, eps, v_samples, exit_value);
            let per = scale / v_samples.len() as f64;
            for part in &e.parts {
                match part {
                    NextBound::Exit => {}
                    NextBound::Inside(t) => t.backward(net, &[0.0], &[per], &mut grads),
                    NextBound::Boundary(t) => {
                        if t.hi(0) > exit_value {
                            t.backward(net, &[0.0], &[per], &mut grads);
                        }
                    }
                }
            }
            IntervalTape::forward(net, &ball(x, eps)).backward(net, &[-scale], &[0.0], &mut grads);
        }
    }

    // gamma and beta are non-negative by definition; below zero they earn nothing
    let loss = (1.0 - kappa) * violation + kappa * (gamma_m.max(0.0) + beta_m.max(0.0) * h);
    LossOutput {
        loss,
        violation,
        gamma_m,
        beta_m,
        grads,
    }
}

/// Adam with bias correction.
pub struct Adam {
    m: GradientSet,
    v: GradientSet,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(net: &Network) -> Self {
        Self {
            m: GradientSet::zeros_like(net),
            v: GradientSet::zeros_like(net),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut Network, g: &GradientSet, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (k, p) in net.params_mut().iter_mut().enumerate() {
            let gl = &g.layers[k];
            let ml = &mut self.m.layers[k];
            let vl = &mut self.v.layers[k];
            let pairs = p
                .weight
                .iter_mut()
                .zip(&gl.weight)
                .zip(ml.weight.iter_mut().zip(vl.weight.iter_mut()))
                .chain(p.bias.iter_mut().zip(&gl.bias).zip(ml.bias.iter_mut().zip(vl.bias.iter_mut())));
            for ((w, gi), (mi, vi)) in pairs {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub violation: f64,
    pub gamma_m: f64,
    pub beta_m: f64,
    pub kappa: f64,
}

/// Trains a fresh barrier network with hidden widths `hidden`. `on_epoch` sees
/// every epoch's metrics and the current network (for checkpoints).
pub fn train(
    dynm: &DynamicsModel,
    hidden: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &Network) -> Result<()>,
) -> Result<(Network, Vec<EpochMetrics>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::barrier(dynm.state_dim(), hidden, &mut rng);
    let mut opt = Adam::new(&net);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let kappa = cfg.kappa(epoch);
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        let mut acc = EpochMetrics {
            epoch,
            loss: 0.0,
            violation: 0.0,
            gamma_m: 0.0,
            beta_m: 0.0,
            kappa,
        };
        for iteration in 0..cfg.iters_per_epoch {
            let batch = sample_batch(dynm, cfg.m, &mut rng)?;
            let v: Vec<Vec<f64>> = (0..cfg.l).map(|_| dynm.noise().sample(&mut rng)).collect();
            let out = robust_loss(&net, dynm, &batch, &v, kappa, cfg);
            if !out.loss.is_finite() || !out.grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration,
                    value: out.loss,
                });
            }
            opt.step(&mut net, &out.grads, lr);
            acc.loss += out.loss;
            acc.violation += out.violation;
            acc.gamma_m += out.gamma_m;
            acc.beta_m += out.beta_m;
        }
        let k = cfg.iters_per_epoch as f64;
        acc.loss /= k;
        acc.violation /= k;
        acc.gamma_m /= k;
        acc.beta_m /= k;
        on_epoch(&acc, &net)?;
        history.push(acc);
    }
    Ok((net, history))
}
