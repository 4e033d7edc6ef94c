//! Diagonal Gaussian noise: box probabilities, partial expectations and the
//! truncated support used by the expectation bound.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::relaxation::Hyperrectangle;
use crate::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// How the second parameter vector of a noise law is read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    #[default]
    Variance,
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variance.len(),
            });
        }
        if mean.iter().any(|m| !m.is_finite()) || variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("noise needs finite mean and non-negative variance".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn from_std(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if std.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidConfig("noise standard deviation must be non-negative".into()));
        }
        let variance = std.iter().map(|s| s * s).collect();
        Self::new(mean, variance)
    }

    pub fn with_scale(mean: Vec<f64>, spread: Vec<f64>, scale: NoiseScale) -> Result<Self> {
        match scale {
            NoiseScale::Variance => Self::new(mean, spread),
            NoiseScale::StdDev => Self::from_std(mean, spread),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn std(&self, i: usize) -> f64 {
        self.variance[i].sqrt()
    }

    pub fn is_deterministic_in(&self, i: usize) -> bool {
        self.variance[i] == 0.0
    }

    /// `P(lo <= v_i <= hi)`. A zero-variance coordinate sits at its mean.
    pub fn interval_probability(&self, i: usize, lo: f64, hi: f64) -> f64 {
        let (mu, s) = (self.mean[i], self.std(i));
        if s == 0.0 {
            return if lo <= mu && mu <= hi { 1.0 } else { 0.0 };
        }
        normal_mass((lo - mu) / s, (hi - mu) / s)
    }

    /// `E[v_i ; lo <= v_i <= hi]`, the unnormalized first moment.
    pub fn interval_moment(&self, i: usize, lo: f64, hi: f64) -> f64 {
        let (mu, s) = (self.mean[i], self.std(i));
        if s == 0.0 {
            return mu * self.interval_probability(i, lo, hi);
        }
        let (a, b) = ((lo - mu) / s, (hi - mu) / s);
        mu * normal_mass(a, b) - s * (std_pdf(b) - std_pdf(a))
    }

    pub fn box_probability(&self, bx: &Hyperrectangle) -> Result<f64> {
        self.check(bx)?;
        Ok((0..self.dim())
            .map(|i| self.interval_probability(i, bx.lower()[i], bx.upper()[i]))
            .product())
    }

    /// `E[v ; v in box]` per coordinate.
    pub fn partial_expectation(&self, bx: &Hyperrectangle) -> Result<Vec<f64>> {
        self.check(bx)?;
        let n = self.dim();
        let p: Vec<f64> = (0..n).map(|i| self.interval_probability(i, bx.lower()[i], bx.upper()[i])).collect();
        Ok((0..n)
            .map(|i| {
                let others: f64 = (0..n).filter(|&j| j != i).map(|j| p[j]).product();
                self.interval_moment(i, bx.lower()[i], bx.upper()[i]) * others
            })
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                self.mean[i] + self.std(i) * z
            })
            .collect()
    }

    fn check(&self, bx: &Hyperrectangle) -> Result<()> {
        if bx.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: bx.dim(),
            });
        }
        Ok(())
    }
}

fn std_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `Phi(b) - Phi(a)` for the standard normal, evaluated on the tail that
/// avoids cancellation.
fn normal_mass(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let q = |z: f64| 0.5 * libm::erfc(z * std::f64::consts::FRAC_1_SQRT_2);
    let m = if a >= 0.0 {
        q(a) - q(b)
    } else if b <= 0.0 {
        q(-b) - q(-a)
    } else {
        1.0 - q(-a) - q(b)
    };
    m.clamp(0.0, 1.0)
}

/// `V' = [x_lo - x_hi, x_hi - x_lo]` (noise values that can map some state of
/// `X` into `X`), clipped in stochastic coordinates to `mean +- sigmas * std`.
/// An infinite `sigmas` leaves `V'` as is.
pub fn truncated_support(x: &Hyperrectangle, g: &DiagonalGaussian, sigmas: f64) -> Hyperrectangle {
    let w = x.widths();
    let (mut lo, mut hi): (Vec<f64>, Vec<f64>) = (w.iter().map(|v| -v).collect(), w);
    for i in 0..lo.len().min(g.dim()) {
        if g.is_deterministic_in(i) || !sigmas.is_finite() {
            continue;
        }
        let r = sigmas * g.std(i);
        let (a, b) = (lo[i].max(g.mean()[i] - r), hi[i].min(g.mean()[i] + r));
        if a <= b {
            (lo[i], hi[i]) = (a, b);
        }
    }
    Hyperrectangle::new(lo, hi).expect("bounds are finite and ordered")
}

/// A noise box with its probability and partial expectation.
#[derive(Debug, Clone)]
pub struct NoiseCell {
    pub bx: Hyperrectangle,
    pub prob: f64,
    pub moment: Vec<f64>,
}

/// Uniform grid over `support` with `cells_per_dim` cells in each stochastic
/// coordinate. Deterministic coordinates get one degenerate cell at the mean,
/// or none when the mean lies outside the support. Cells of zero mass are
/// dropped.
pub fn noise_grid(g: &DiagonalGaussian, support: &Hyperrectangle, cells_per_dim: usize) -> Result<Vec<NoiseCell>> {
    g.check(support)?;
    if cells_per_dim == 0 {
        return Err(Error::InvalidConfig("cells_per_dim must be positive".into()));
    }
    let n = g.dim();
    let mut axes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = (support.lower()[i], support.upper()[i]);
        if g.is_deterministic_in(i) {
            let mu = g.mean()[i];
            axes.push(if lo <= mu && mu <= hi { vec![(mu, mu)] } else { Vec::new() });
        } else {
            let k = if lo == hi { 1 } else { cells_per_dim };
            let w = (hi - lo) / k as f64;
            axes.push(
                (0..k)
                    .map(|c| {
                        let a = lo + w * c as f64;
                        let b = if c + 1 == k { hi } else { lo + w * (c + 1) as f64 };
                        (a, b)
                    })
                    .collect(),
            );
        }
    }
    let total: usize = axes.iter().map(Vec::len).product();
    let mut cells = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let lower: Vec<f64> = (0..n).map(|i| axes[i][idx[i]].0).collect();
        let upper: Vec<f64> = (0..n).map(|i| axes[i][idx[i]].1).collect();
        let bx = Hyperrectangle::new(lower, upper)?;
        let prob = g.box_probability(&bx)?;
        if prob > 0.0 {
            let moment = g.partial_expectation(&bx)?;
            cells.push(NoiseCell { bx, prob, moment });
        }
        for i in (0..n).rev() {
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(cells)
}
