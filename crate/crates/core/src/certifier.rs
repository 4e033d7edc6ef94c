//! Barrier conditions and the finite-horizon safety bound.
//!
//! A candidate `B` certifies `P_safe >= 1 - (gamma + beta * H)` when
//! - `B >= 0` on `X`,
//! - `B >= 1` on `X_u`,
//! - `B <= gamma` on `X_0`,
//! - `E[B~(F(x) + v)] - B(x) <= beta` on `X_s`.
//!
//! `B~` is the barrier of the stopped process: `B` inside `X` and the constant
//! `exit_value` outside. With `exit_value >= 1` leaving `X` counts as reaching
//! the unsafe level, which is what the martingale argument needs; the default
//! is 1. Setting it to 0 treats the outside of `X` as free, which does not
//! bound the probability of leaving `X` and is kept only for comparison.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::nn::Network;
use crate::noise::{noise_grid, truncated_support, NoiseCell};
use crate::partition::{bnb_maximize, bnb_minimize, BnBConfig, BnBResult, BnBStatus, Objective};
use crate::relaxation::{compose, crown_bounds, extreme_of_line, linear_to_interval, BoundMode, Hyperrectangle, LinearRelaxation};
use crate::sets::SetExpr;
use crate::{Error, Result, SOUNDNESS_SLACK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub mode: BoundMode,
    pub bnb: BnBConfig,
    /// Cells per stochastic noise coordinate over the truncated support.
    pub noise_cells: usize,
    /// Half-width of the noise support in standard deviations; the mass
    /// outside is charged conservatively. `inf` keeps the full support.
    pub noise_sigmas: f64,
    pub exit_value: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            mode: BoundMode::Crown,
            bnb: BnBConfig::default(),
            noise_cells: 32,
            noise_sigmas: 8.0,
            exit_value: 1.0,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<()> {
        self.bnb.validate()?;
        if !(self.noise_sigmas > 0.0) {
            return Err(Error::InvalidConfig("noise_sigmas must be positive".into()));
        }
        if self.noise_cells == 0 {
            return Err(Error::InvalidConfig("noise_cells must be positive".into()));
        }
        if !(self.exit_value.is_finite() && self.exit_value >= 0.0) {
            return Err(Error::InvalidConfig("exit_value must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Certified,
    Violated,
    Inconclusive,
}

/// Outcome of one lower-bound check (`B >= threshold` on a set).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub verdict: Verdict,
    /// Certified lower bound of `B` over the set.
    pub bound: f64,
    /// Value of `B` at `witness_point`, an upper bound of the true minimum.
    pub witness: f64,
    pub witness_point: Option<Vec<f64>>,
    pub status: BnBStatus,
    pub regions: usize,
    pub iterations: usize,
    pub seconds: f64,
}

/// Outcome of one upper-bound computation (`gamma` or `beta`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    /// Certified upper bound, clamped at zero.
    pub value: f64,
    /// Largest value known to be attained (a lower bound of the true maximum).
    pub attained: f64,
    pub status: BnBStatus,
    pub regions: usize,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub certified: bool,
    pub cond_nonneg: ConditionReport,
    pub cond_unsafe: ConditionReport,
    pub gamma: f64,
    pub gamma_status: BnBStatus,
    pub beta: f64,
    pub beta_status: BnBStatus,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub epsilon: f64,
    /// `None` unless both non-negativity and the unsafe-set condition hold.
    pub p_safe_lower: Option<f64>,
    pub mode: BoundMode,
    pub exit_value: f64,
    pub regions: BTreeMap<String, usize>,
    pub timings: BTreeMap<String, f64>,
}

/// `max(0, min(1, 1 - (gamma + beta * H)))`.
pub fn p_safe_bound(gamma: f64, beta: f64, horizon: usize) -> f64 {
    (1.0 - (gamma + beta * horizon as f64)).clamp(0.0, 1.0)
}

/// `B` itself, relaxed by CROWN.
pub struct NetObjective<'a> {
    pub net: &'a Network,
    pub mode: BoundMode,
}

impl Objective for NetObjective<'_> {
    fn relax(&self, bx: &Hyperrectangle) -> Result<LinearRelaxation> {
        crown_bounds(self.net, bx, self.mode)
    }

    fn eval(&self, x: &[f64]) -> Option<f64> {
        Some(self.net.forward_unchecked(x)[0])
    }
}

fn check_dims(net: &Network, dynm: &DynamicsModel) -> Result<()> {
    if net.input_dim() != dynm.state_dim() || net.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: dynm.state_dim(),
            got: net.input_dim(),
        });
    }
    Ok(())
}

fn lower_check(net: &Network, dynm: &DynamicsModel, cfg: &CertifyConfig, target: &SetExpr, threshold: f64) -> Result<ConditionReport> {
    check_dims(net, dynm)?;
    cfg.validate()?;
    let t0 = Instant::now();
    let obj = NetObjective { net, mode: cfg.mode };
    let early = move |lo: f64, hi: f64| lo >= threshold - SOUNDNESS_SLACK || hi < threshold;
    let r = bnb_minimize(&obj, target, dynm.state_space(), &cfg.bnb, Some(&early))?;
    let verdict = if r.certified >= threshold - SOUNDNESS_SLACK {
        Verdict::Certified
    } else if r.achieved < threshold {
        Verdict::Violated
    } else {
        Verdict::Inconclusive
    };
    Ok(ConditionReport {
        verdict,
        bound: r.certified,
        witness: r.achieved,
        witness_point: r.witness,
        status: r.status,
        regions: r.regions_explored,
        iterations: r.iterations,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// `B >= 0` on `X`.
pub fn check_nonnegativity(net: &Network, dynm: &DynamicsModel, cfg: &CertifyConfig) -> Result<ConditionReport> {
    lower_check(net, dynm, cfg, &SetExpr::from_box(dynm.state_space()), 0.0)
}

/// `B >= 1` on `X_u`.
pub fn check_unsafe(net: &Network, dynm: &DynamicsModel, cfg: &CertifyConfig) -> Result<ConditionReport> {
    lower_check(net, dynm, cfg, dynm.unsafe_set(), 1.0)
}

fn upper_report(r: BnBResult, t0: Instant) -> BoundReport {
    BoundReport {
        value: r.certified.max(0.0),
        attained: r.achieved,
        status: r.status,
        regions: r.regions_explored,
        iterations: r.iterations,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// `gamma`: certified upper bound of `B` over `X_0`.
pub fn compute_gamma(net: &Network, dynm: &DynamicsModel, cfg: &CertifyConfig) -> Result<BoundReport> {
    check_dims(net, dynm)?;
    cfg.validate()?;
    let t0 = Instant::now();
    let obj = NetObjective { net, mode: cfg.mode };
    let r = bnb_maximize(&obj, dynm.initial_set(), dynm.state_space(), &cfg.bnb, None)?;
    Ok(upper_report(r, t0))
}

/// Linear sandwich of `x -> E[B~(F(x) + v)] - B(x)` over state boxes.
///
/// For each noise cell the image box `F(q) + q_v` decides how `B~` is bounded:
/// inside `X` by the composed relaxation, outside by the constant exit value,
/// and across the boundary by `min(B, c) <= B~ <= max(B, c)` relaxed with
/// ReLU chords. Noise mass outside the grid lands outside `X` when the noise
/// needed to reach `X` from `F(q)` fits in the truncated support; otherwise it
/// is charged with the global bounds of `B` over `X`.
pub struct BetaObjective<'a> {
    net: &'a Network,
    dynm: &'a DynamicsModel,
    mode: BoundMode,
    exit_value: f64,
    cells: Vec<NoiseCell>,
    support: Hyperrectangle,
    tail: f64,
    b_min_x: f64,
    b_max_x: f64,
}

impl<'a> BetaObjective<'a> {
    /// Reads `mode`, `noise_cells`, `noise_sigmas` and `exit_value` from `cfg`.
    pub fn new(net: &'a Network, dynm: &'a DynamicsModel, cfg: &CertifyConfig) -> Result<Self> {
        check_dims(net, dynm)?;
        let (mode, exit_value) = (cfg.mode, cfg.exit_value);
        let support = truncated_support(dynm.state_space(), dynm.noise(), cfg.noise_sigmas);
        let cells = noise_grid(dynm.noise(), &support, cfg.noise_cells)?;
        let mass: f64 = cells.iter().map(|c| c.prob).sum();
        let whole = linear_to_interval(&crown_bounds(net, dynm.state_space(), mode)?);
        Ok(Self {
            net,
            dynm,
            mode,
            exit_value,
            cells,
            support,
            tail: (1.0 - mass).max(0.0),
            b_min_x: whole.lo[0],
            b_max_x: whole.hi[0],
        })
    }

    pub fn noise_cells(&self) -> &[NoiseCell] {
        &self.cells
    }

    /// Upper (`upper = true`) or lower line of `B~(F(x) + v)` over `q x q_v`,
    /// as `(a_x, a_v, b)`.
    fn exit_aware_line(&self, joint: &LinearRelaxation, upper: bool) -> (Vec<f64>, Vec<f64>, f64) {
        let n = self.dynm.state_dim();
        let c = self.exit_value;
        let (row, b) = if upper {
            (joint.upper_row(0), joint.b_upper[0])
        } else {
            (joint.lower_row(0), joint.b_lower[0])
        };
        // upper: c + relu(g - c) with g the upper line; lower: c - relu(c - g)
        let (lo, _) = extreme_of_line(row, b, &joint.domain, false);
        let (hi, _) = extreme_of_line(row, b, &joint.domain, true);
        let (l, u) = if upper { (lo - c, hi - c) } else { (c - hi, c - lo) };
        if u <= 0.0 {
            return (vec![0.0; n], vec![0.0; n], c);
        }
        if l >= 0.0 {
            return (row[..n].to_vec(), row[n..].to_vec(), b);
        }
        let s = u / (u - l);
        // c + s * (g - c - l) for the upper line; c - s * (c - g - l) for the lower
        let shift = if upper { c * (1.0 - s) - s * l } else { c * (1.0 - s) + s * l };
        (row[..n].iter().map(|a| s * a).collect(), row[n..].iter().map(|a| s * a).collect(), s * b + shift)
    }
}

impl Objective for BetaObjective<'_> {
    fn relax(&self, q: &Hyperrectangle) -> Result<LinearRelaxation> {
        let n = self.dynm.state_dim();
        let x = self.dynm.state_space();
        let c = self.exit_value;
        let rel_f = self.dynm.relax_f_unchecked(q);
        let img = self.dynm.image_box(q, &rel_f);
        let b_here = crown_bounds(self.net, q, self.mode)?;

        let mut au = vec![0.0; n];
        let mut al = vec![0.0; n];
        let (mut bu, mut bl) = (0.0, 0.0);
        for cell in &self.cells {
            let y = img.offset_by(&cell.bx)?;
            let p = cell.prob;
            if !x.intersects(&y) {
                bu += p * c;
                bl += p * c;
                continue;
            }
            let joint = compose(&rel_f, &crown_bounds(self.net, &y, self.mode)?, &cell.bx);
            let inside = x.contains_box(&y);
            for (upper, a, b) in [(true, &mut au, &mut bu), (false, &mut al, &mut bl)] {
                let (ax, av, b0) = if inside {
                    let row = if upper { joint.upper_row(0) } else { joint.lower_row(0) };
                    let b0 = if upper { joint.b_upper[0] } else { joint.b_lower[0] };
                    (row[..n].to_vec(), row[n..].to_vec(), b0)
                } else {
                    self.exit_aware_line(&joint, upper)
                };
                for j in 0..n {
                    a[j] += p * ax[j];
                }
                *b += p * b0 + av.iter().zip(&cell.moment).map(|(s, m)| s * m).sum::<f64>();
            }
        }

        if self.tail > 0.0 {
            // noise that can bring some point of F(q) back into X
            let reach_back = (0..n).all(|i| {
                self.dynm.noise().is_deterministic_in(i)
                    || (self.support.lower()[i] <= x.lower()[i] - img.upper()[i]
                        && x.upper()[i] - img.lower()[i] <= self.support.upper()[i])
            });
            let (tu, tl) = if reach_back { (c, c) } else { (c.max(self.b_max_x), c.min(self.b_min_x)) };
            bu += self.tail * tu;
            bl += self.tail * tl;
        }

        // subtract B(x): its lower line from the upper bound and vice versa
        for j in 0..n {
            au[j] -= b_here.lower_row(0)[j];
            al[j] -= b_here.upper_row(0)[j];
        }
        bu -= b_here.b_lower[0];
        bl -= b_here.b_upper[0];
        Ok(LinearRelaxation {
            a_lower: al,
            b_lower: vec![bl],
            a_upper: au,
            b_upper: vec![bu],
            domain: q.clone(),
        })
    }
}

/// `beta`: certified upper bound of `E[B~(F(x) + v)] - B(x)` over `X_s`.
pub fn compute_beta(net: &Network, dynm: &DynamicsModel, cfg: &CertifyConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let t0 = Instant::now();
    let obj = BetaObjective::new(net, dynm, cfg)?;
    let r = bnb_maximize(&obj, dynm.safe_set(), dynm.state_space(), &cfg.bnb, None)?;
    Ok(upper_report(r, t0))
}

/// `beta` over a fixed partition of `X_s` given by `grid` cells per dimension,
/// without refinement.
pub fn beta_on_grid(net: &Network, dynm: &DynamicsModel, cfg: &CertifyConfig, grid: &[usize]) -> Result<f64> {
    cfg.validate()?;
    let obj = BetaObjective::new(net, dynm, cfg)?;
    let Some(start) = dynm.safe_set().bbox().and_then(|b| b.intersection(dynm.state_space())) else {
        return Ok(0.0);
    };
    let mut beta = f64::NEG_INFINITY;
    for q in start.grid(grid) {
        if dynm.safe_set().may_intersect(&q) {
            let rel = obj.relax(&q)?;
            beta = beta.max(linear_to_interval(&rel).hi[0]);
        }
    }
    Ok(beta.max(0.0))
}

/// Runs all four checks and combines them into the safety bound.
pub fn certify(net: &Network, dynm: &DynamicsModel, horizon: usize, cfg: &CertifyConfig) -> Result<CertificationReport> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let nonneg = check_nonnegativity(net, dynm, cfg)?;
    let unsafe_ = check_unsafe(net, dynm, cfg)?;
    let gamma = compute_gamma(net, dynm, cfg)?;
    let beta = compute_beta(net, dynm, cfg)?;
    let epsilon = gamma.value + beta.value * horizon as f64;
    let certified = nonneg.verdict == Verdict::Certified && unsafe_.verdict == Verdict::Certified;
    let regions = BTreeMap::from([
        ("nonneg".to_string(), nonneg.regions),
        ("unsafe".to_string(), unsafe_.regions),
        ("gamma".to_string(), gamma.regions),
        ("beta".to_string(), beta.regions),
    ]);
    let timings = BTreeMap::from([
        ("nonneg".to_string(), nonneg.seconds),
        ("unsafe".to_string(), unsafe_.seconds),
        ("gamma".to_string(), gamma.seconds),
        ("beta".to_string(), beta.seconds),
    ]);
    Ok(CertificationReport {
        certified,
        cond_nonneg: nonneg,
        cond_unsafe: unsafe_,
        gamma: gamma.value,
        gamma_status: gamma.status,
        beta: beta.value,
        beta_status: beta.status,
        horizon,
        epsilon,
        p_safe_lower: certified.then(|| p_safe_bound(gamma.value, beta.value, horizon)),
        mode: cfg.mode,
        exit_value: cfg.exit_value,
        regions,
        timings,
    })
}
