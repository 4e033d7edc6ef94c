//! Branch-and-bound over hyperrectangle partitions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::relaxation::{extreme_of_line, Hyperrectangle, LinearRelaxation};
use crate::sets::SetExpr;
use crate::{Error, Result};

/// Something that can be bounded linearly over a box.
pub trait Objective: Sync {
    /// Scalar linear sandwich of the objective over `bx`.
    fn relax(&self, bx: &Hyperrectangle) -> Result<LinearRelaxation>;

    /// Exact value at a point, when cheaply available. Tightens the witness.
    fn eval(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

struct Negated<'a, O: ?Sized>(&'a O);

impl<O: Objective + ?Sized> Objective for Negated<'_, O> {
    fn relax(&self, bx: &Hyperrectangle) -> Result<LinearRelaxation> {
        Ok(self.0.relax(bx)?.negated())
    }

    fn eval(&self, x: &[f64]) -> Option<f64> {
        self.0.eval(x).map(|v| -v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Split every live region each iteration.
    #[default]
    All,
    /// Split, worst bound first, only the regions still more than `t_gap`
    /// below the best upper bound, while the region budget lasts.
    Priority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnBConfig {
    pub t_gap: f64,
    pub max_regions: usize,
    pub max_iterations: usize,
    /// Cells per dimension of the starting grid; empty means 4 everywhere.
    pub initial_grid: Vec<usize>,
    pub split: SplitMode,
    pub prune: bool,
    pub trace: bool,
}

impl Default for BnBConfig {
    fn default() -> Self {
        Self {
            t_gap: 1e-3,
            max_regions: 200_000,
            max_iterations: 30,
            initial_grid: Vec::new(),
            split: SplitMode::All,
            prune: true,
            trace: false,
        }
    }
}

impl BnBConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_gap > 0.0 && self.t_gap.is_finite()) {
            return Err(Error::InvalidConfig("t_gap must be positive".into()));
        }
        if self.max_regions == 0 || self.max_iterations == 0 || self.initial_grid.contains(&0) {
            return Err(Error::InvalidConfig("region, iteration and grid budgets must be positive".into()));
        }
        Ok(())
    }

    fn grid_for(&self, dim: usize) -> Result<Vec<usize>> {
        match self.initial_grid.len() {
            0 => Ok(vec![4; dim]),
            1 => Ok(vec![self.initial_grid[0]; dim]),
            n if n == dim => Ok(self.initial_grid.clone()),
            n => Err(Error::DimensionMismatch { expected: dim, got: n }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnBStatus {
    /// Gap below `t_gap`.
    Converged,
    /// The caller's predicate accepted the bounds.
    EarlySuccess,
    /// A budget ran out first.
    Inconclusive,
    /// No starting cell meets the target set.
    Vacuous,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub bx: Hyperrectangle,
    pub rel: LinearRelaxation,
    /// Minimum of the lower line over the box.
    pub lo: f64,
    /// Upper line at a point of the box inside the target, or `+inf`.
    pub hi: f64,
    pub probe: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// Outcome of a minimization (or, through [`bnb_maximize`], maximization).
///
/// For minimization `certified <= min <= achieved`; for maximization
/// `achieved <= max <= certified`. A vacuous run reports `+inf` (`-inf` when
/// maximizing) in both.
#[derive(Debug, Clone)]
pub struct BnBResult {
    pub certified: f64,
    pub achieved: f64,
    pub witness: Option<Vec<f64>>,
    pub status: BnBStatus,
    pub regions_explored: usize,
    pub live_regions: usize,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

impl BnBResult {
    pub fn gap(&self) -> f64 {
        (self.achieved - self.certified).abs()
    }
}

/// Axis of largest `(|A_lower| + |A_upper|) * width`, ties to the lowest
/// index. Falls back to the widest axis when every score is zero.
pub fn split_axis(rel: &LinearRelaxation, bx: &Hyperrectangle) -> Result<usize> {
    let w = bx.widths();
    let (al, au) = (rel.lower_row(0), rel.upper_row(0));
    let mut best: Option<(usize, f64)> = None;
    let mut widest: Option<(usize, f64)> = None;
    for i in 0..bx.dim() {
        if w[i] <= 0.0 {
            continue;
        }
        let s = (al[i].abs() + au[i].abs()) * w[i];
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
        if widest.is_none_or(|(_, b)| w[i] > b) {
            widest = Some((i, w[i]));
        }
    }
    match (best, widest) {
        (Some((i, s)), _) if s > 0.0 => Ok(i),
        (_, Some((i, _))) => Ok(i),
        _ => Err(Error::DegenerateBox),
    }
}

/// Halves a region's box along `d`. The children still need relaxing.
pub fn split_mid(region: &Region, d: usize) -> Result<(Hyperrectangle, Hyperrectangle)> {
    region.bx.split_mid(d)
}

fn make_region<O: Objective + ?Sized>(obj: &O, target: &SetExpr, bx: Hyperrectangle, floor: f64) -> Result<Region> {
    let rel = obj.relax(&bx)?;
    let (lo, _) = extreme_of_line(rel.lower_row(0), rel.b_lower[0], &bx, false);
    let (_, corner) = extreme_of_line(rel.upper_row(0), rel.b_upper[0], &bx, false);
    let probe = if target.contains(&corner) {
        Some(corner)
    } else {
        let c = bx.center();
        target.contains(&c).then_some(c)
    };
    let hi = match &probe {
        Some(p) => {
            let line = rel.eval_upper(p)[0];
            obj.eval(p).map_or(line, |v| v.min(line))
        }
        None => f64::INFINITY,
    };
    Ok(Region {
        lo: lo.max(floor),
        hi,
        probe,
        bx,
        rel,
    })
}

/// Certified lower bound of the objective over `target`, refined on a grid over
/// the target's bounding box clipped to `within`.
pub fn bnb_minimize<O: Objective + ?Sized>(
    obj: &O,
    target: &SetExpr,
    within: &Hyperrectangle,
    cfg: &BnBConfig,
    early: Option<&(dyn Fn(f64, f64) -> bool + Sync)>,
) -> Result<BnBResult> {
    cfg.validate()?;
    let vacuous = |trace| BnBResult {
        certified: f64::INFINITY,
        achieved: f64::INFINITY,
        witness: None,
        status: BnBStatus::Vacuous,
        regions_explored: 0,
        live_regions: 0,
        iterations: 0,
        trace,
    };
    let Some(start) = target.bbox().and_then(|b| b.intersection(within)) else {
        return Ok(vacuous(Vec::new()));
    };
    let cells: Vec<Hyperrectangle> = start
        .grid(&cfg.grid_for(start.dim())?)
        .into_iter()
        .filter(|c| target.may_intersect(c))
        .collect();
    if cells.is_empty() {
        return Ok(vacuous(Vec::new()));
    }
    let mut regions: Vec<Region> = cells
        .into_par_iter()
        .map(|c| make_region(obj, target, c, f64::NEG_INFINITY))
        .collect::<Result<_>>()?;
    let mut explored = regions.len();
    let mut best_upper = f64::INFINITY;
    let mut pruned_floor = f64::INFINITY;
    let mut witness: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut iteration = 0;

    loop {
        for r in &regions {
            if r.hi < best_upper {
                best_upper = r.hi;
                witness = r.probe.clone();
            }
        }
        if cfg.prune {
            // rounding can put a region's lower bound a few ulps above best_upper
            // even when it holds the minimizer, so pruned bounds stay in the minimum
            for r in regions.iter().filter(|r| r.lo > best_upper) {
                pruned_floor = pruned_floor.min(r.lo);
            }
            regions.retain(|r| r.lo <= best_upper);
        }
        let certified = regions.iter().map(|r| r.lo).fold(pruned_floor, f64::min);
        if cfg.trace {
            trace.extend(regions.iter().map(|r| TraceRow {
                iteration,
                lower: r.bx.lower().to_vec(),
                upper: r.bx.upper().to_vec(),
                lo: r.lo,
                hi: r.hi,
            }));
        }
        let done = |status| BnBResult {
            certified,
            achieved: best_upper,
            witness: witness.clone(),
            status,
            regions_explored: explored,
            live_regions: regions.len(),
            iterations: iteration,
            trace: Vec::new(),
        };
        if early.is_some_and(|f| f(certified, best_upper)) {
            return Ok(BnBResult { trace, ..done(BnBStatus::EarlySuccess) });
        }
        if best_upper - certified < cfg.t_gap {
            return Ok(BnBResult { trace, ..done(BnBStatus::Converged) });
        }
        if iteration >= cfg.max_iterations {
            return Ok(BnBResult { trace, ..done(BnBStatus::Inconclusive) });
        }

        let splittable: Vec<usize> = (0..regions.len()).filter(|&i| !regions[i].bx.is_point()).collect();
        let budget = cfg.max_regions.saturating_sub(regions.len());
        let chosen: Vec<usize> = match cfg.split {
            SplitMode::All => {
                if splittable.is_empty() || splittable.len() > budget {
                    return Ok(BnBResult { trace, ..done(BnBStatus::Inconclusive) });
                }
                splittable
            }
            SplitMode::Priority => {
                // regions already within t_gap of the best upper bound cannot block convergence
                let threshold = best_upper - cfg.t_gap;
                let mut order: Vec<usize> = splittable.into_iter().filter(|&i| regions[i].lo < threshold).collect();
                order.sort_by(|&a, &b| regions[a].lo.total_cmp(&regions[b].lo).then(a.cmp(&b)));
                order.truncate(budget);
                if order.is_empty() {
                    return Ok(BnBResult { trace, ..done(BnBStatus::Inconclusive) });
                }
                order.sort_unstable();
                order
            }
        };

        let mut is_chosen = vec![false; regions.len()];
        for &i in &chosen {
            is_chosen[i] = true;
        }
        let mut children: Vec<(Hyperrectangle, f64)> = Vec::with_capacity(2 * chosen.len());
        for &i in &chosen {
            let r = &regions[i];
            let (a, b) = split_mid(r, split_axis(&r.rel, &r.bx)?)?;
            for c in [a, b] {
                if target.may_intersect(&c) {
                    children.push((c, r.lo));
                }
            }
        }
        let fresh: Vec<Region> = children
            .into_par_iter()
            .map(|(c, floor)| make_region(obj, target, c, floor))
            .collect::<Result<_>>()?;
        explored += fresh.len();
        let mut next: Vec<Region> = regions
            .into_iter()
            .zip(is_chosen)
            .filter_map(|(r, c)| (!c).then_some(r))
            .collect();
        next.extend(fresh);
        regions = next;
        iteration += 1;
    }
}

/// Mirror of [`bnb_minimize`]: certified upper bound of the objective.
pub fn bnb_maximize<O: Objective + ?Sized>(
    obj: &O,
    target: &SetExpr,
    within: &Hyperrectangle,
    cfg: &BnBConfig,
    early: Option<&(dyn Fn(f64, f64) -> bool + Sync)>,
) -> Result<BnBResult> {
    let flipped = early.map(|f| move |lo: f64, hi: f64| f(-lo, -hi));
    let flipped_ref = flipped.as_ref().map(|f| f as &(dyn Fn(f64, f64) -> bool + Sync));
    let r = bnb_minimize(&Negated(obj), target, within, cfg, flipped_ref)?;
    Ok(BnBResult {
        certified: -r.certified,
        achieved: -r.achieved,
        trace: r
            .trace
            .into_iter()
            .map(|t| TraceRow { lo: -t.hi, hi: -t.lo, ..t })
            .collect(),
        ..r
    })
}
