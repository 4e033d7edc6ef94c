//! Interval and linear relaxations over hyperrectangles.
//!
//! - [`ibp_bounds`]: interval bound propagation.
//! - [`crown_bounds`]: backward linear bound propagation, with intermediate
//!   pre-activation bounds from IBP ([`BoundMode::CrownIbp`]) or from CROWN on
//!   each prefix network ([`BoundMode::Crown`]).
//! - [`composed_bounds`]: linear sandwich of `B(F(x) + v)` jointly in `(x, v)`.
//! - [`linear_to_interval`]: exact box extremes of a linear sandwich.
//!
//! All operations are pure; none use directed rounding.

mod compose;
mod crown;
mod ibp;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use compose::composed_bounds;
pub(crate) use compose::compose;
pub use crown::crown_bounds;
pub use ibp::{ibp_bounds, IntervalTape};

/// Axis-aligned box `{x : lower <= x <= upper}` with finite bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperrectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Hyperrectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidBox("zero-dimensional box".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidBox(format!("non-finite bound in dimension {i}")));
            }
            if l > u {
                return Err(Error::InvalidBox(format!("lower {l} > upper {u} in dimension {i}")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn point(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec(), x.to_vec())
    }

    /// `[c - r, c + r]` in every dimension.
    pub fn ball(center: &[f64], radius: f64) -> Result<Self> {
        Self::new(
            center.iter().map(|c| c - radius).collect(),
            center.iter().map(|c| c + radius).collect(),
        )
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    pub fn is_degenerate_in(&self, d: usize) -> bool {
        self.lower[d] == self.upper[d]
    }

    pub fn is_point(&self) -> bool {
        (0..self.dim()).all(|d| self.is_degenerate_in(d))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn contains_box(&self, other: &Hyperrectangle) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    /// Closed-set intersection test.
    pub fn intersects(&self, other: &Hyperrectangle) -> bool {
        other.dim() == self.dim() && (0..self.dim()).all(|i| self.lower[i] <= other.upper[i] && other.lower[i] <= self.upper[i])
    }

    pub fn intersection(&self, other: &Hyperrectangle) -> Option<Hyperrectangle> {
        if !self.intersects(other) {
            return None;
        }
        let lower = self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect();
        let upper = self.upper.iter().zip(&other.upper).map(|(a, b)| a.min(*b)).collect();
        Some(Self { lower, upper })
    }

    /// Splits at the midpoint of axis `d`. Both halves share the midpoint face.
    pub fn split_mid(&self, d: usize) -> Result<(Hyperrectangle, Hyperrectangle)> {
        if d >= self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: d,
            });
        }
        if self.is_degenerate_in(d) {
            return Err(Error::DegenerateBox);
        }
        let mid = 0.5 * (self.lower[d] + self.upper[d]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[d] = mid;
        right.lower[d] = mid;
        Ok((left, right))
    }

    /// Uniform grid with `cells[i]` cells along axis `i`; degenerate axes get one cell.
    pub fn grid(&self, cells: &[usize]) -> Vec<Hyperrectangle> {
        let counts: Vec<usize> = (0..self.dim())
            .map(|i| if self.is_degenerate_in(i) { 1 } else { cells.get(i).copied().unwrap_or(1).max(1) })
            .collect();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.dim()];
        for _ in 0..total {
            let mut lower = Vec::with_capacity(self.dim());
            let mut upper = Vec::with_capacity(self.dim());
            for i in 0..self.dim() {
                let w = (self.upper[i] - self.lower[i]) / counts[i] as f64;
                let lo = self.lower[i] + w * idx[i] as f64;
                let hi = if idx[i] + 1 == counts[i] { self.upper[i] } else { self.lower[i] + w * (idx[i] + 1) as f64 };
                lower.push(lo);
                upper.push(hi);
            }
            out.push(Self { lower, upper });
            for i in (0..self.dim()).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        out
    }

    /// Cartesian product `self x other`.
    pub fn product(&self, other: &Hyperrectangle) -> Hyperrectangle {
        Self {
            lower: self.lower.iter().chain(&other.lower).copied().collect(),
            upper: self.upper.iter().chain(&other.upper).copied().collect(),
        }
    }

    /// Minkowski sum with another box.
    pub fn offset_by(&self, other: &Hyperrectangle) -> Result<Hyperrectangle> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Self {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a + b).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| if l == u { l } else { rng.random_range(l..=u) })
            .collect()
    }

    /// All `2^n` corners, ordered by the binary expansion of their index.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] }).collect())
            .collect()
    }
}

/// Constant bounds `lo <= f(x) <= hi` over a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRelaxation {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl IntervalRelaxation {
    pub fn contains(&self, y: &[f64], slack: f64) -> bool {
        y.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l - slack <= *v && *v <= *h + slack)
    }
}

/// Affine sandwich `A_lower x + b_lower <= f(x) <= A_upper x + b_upper` over `domain`.
/// Matrices are row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRelaxation {
    pub a_lower: Vec<f64>,
    pub b_lower: Vec<f64>,
    pub a_upper: Vec<f64>,
    pub b_upper: Vec<f64>,
    pub domain: Hyperrectangle,
}

impl LinearRelaxation {
    pub fn out_dim(&self) -> usize {
        self.b_lower.len()
    }

    pub fn in_dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn lower_row(&self, i: usize) -> &[f64] {
        let n = self.in_dim();
        &self.a_lower[i * n..(i + 1) * n]
    }

    pub fn upper_row(&self, i: usize) -> &[f64] {
        let n = self.in_dim();
        &self.a_upper[i * n..(i + 1) * n]
    }

    pub fn eval_lower(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim()).map(|i| dot(self.lower_row(i), x) + self.b_lower[i]).collect()
    }

    pub fn eval_upper(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim()).map(|i| dot(self.upper_row(i), x) + self.b_upper[i]).collect()
    }

    /// Constant relaxation `lo <= f <= hi`.
    pub fn constant(domain: Hyperrectangle, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        let n = domain.dim() * lo.len();
        Self {
            a_lower: vec![0.0; n],
            b_lower: lo,
            a_upper: vec![0.0; n],
            b_upper: hi,
            domain,
        }
    }

    /// Swaps and negates the bounds: a relaxation of `-f`.
    pub fn negated(&self) -> Self {
        Self {
            a_lower: self.a_upper.iter().map(|v| -v).collect(),
            b_lower: self.b_upper.iter().map(|v| -v).collect(),
            a_upper: self.a_lower.iter().map(|v| -v).collect(),
            b_upper: self.b_lower.iter().map(|v| -v).collect(),
            domain: self.domain.clone(),
        }
    }

    /// Checks the sandwich at `x` against the true value `fx`, allowing `slack`.
    pub fn sandwiches(&self, x: &[f64], fx: &[f64], slack: f64) -> bool {
        let lo = self.eval_lower(x);
        let hi = self.eval_upper(x);
        fx.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| *l - slack <= *v && *v <= *h + slack)
    }
}

/// Exact minimum of the lower lines and maximum of the upper lines over the domain box.
pub fn linear_to_interval(rel: &LinearRelaxation) -> IntervalRelaxation {
    let mid = rel.domain.center();
    let half = rel.domain.half_widths();
    let m = rel.out_dim();
    let mut lo = Vec::with_capacity(m);
    let mut hi = Vec::with_capacity(m);
    for i in 0..m {
        let (al, au) = (rel.lower_row(i), rel.upper_row(i));
        let mut l = rel.b_lower[i];
        let mut h = rel.b_upper[i];
        for j in 0..mid.len() {
            l += al[j] * mid[j] - al[j].abs() * half[j];
            h += au[j] * mid[j] + au[j].abs() * half[j];
        }
        lo.push(l);
        hi.push(h);
    }
    IntervalRelaxation { lo, hi }
}

/// Minimum over the domain of the upper line of output `i` (the least upper bound
/// candidate used by branch-and-bound) together with its minimizing corner.
pub fn min_of_upper(rel: &LinearRelaxation, i: usize) -> (f64, Vec<f64>) {
    extreme_of_line(rel.upper_row(i), rel.b_upper[i], &rel.domain, false)
}

/// Minimum over the domain of the lower line of output `i`.
pub fn min_of_lower(rel: &LinearRelaxation, i: usize) -> f64 {
    extreme_of_line(rel.lower_row(i), rel.b_lower[i], &rel.domain, false).0
}

/// Minimum (`maximize = false`) or maximum of `a.x + b` over `domain`, with the corner attaining it.
pub fn extreme_of_line(a: &[f64], b: f64, domain: &Hyperrectangle, maximize: bool) -> (f64, Vec<f64>) {
    let mid = domain.center();
    let half = domain.half_widths();
    let mut v = b;
    let mut arg = Vec::with_capacity(a.len());
    for j in 0..a.len() {
        let sign = if maximize { 1.0 } else { -1.0 };
        v += a[j] * mid[j] + sign * a[j].abs() * half[j];
        let up = (a[j] >= 0.0) == maximize;
        arg.push(if up { domain.upper()[j] } else { domain.lower()[j] });
    }
    (v, arg)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How intermediate pre-activation bounds are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoundMode {
    /// Intermediate bounds by interval propagation; cheap, used for training.
    #[serde(rename = "crown-ibp")]
    CrownIbp,
    /// Intermediate bounds by CROWN on every prefix network; tightest, used for certification.
    #[default]
    #[serde(rename = "crown")]
    Crown,
}

impl std::str::FromStr for BoundMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "crown" => Ok(BoundMode::Crown),
            "crown-ibp" => Ok(BoundMode::CrownIbp),
            other => Err(format!("unknown bound mode `{other}` (expected `crown` or `crown-ibp`)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn box_validation() {
        assert!(Hyperrectangle::new(vec![1.0], vec![0.0]).is_err());
        assert!(Hyperrectangle::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(Hyperrectangle::new(vec![f64::NEG_INFINITY], vec![0.0]).is_err());
    }

    #[test]
    fn split_examples() {
        let b = Hyperrectangle::new(vec![0.0], vec![2.0]).unwrap();
        let (l, r) = b.split_mid(0).unwrap();
        assert_eq!((l.lower(), l.upper()), (&[0.0][..], &[1.0][..]));
        assert_eq!((r.lower(), r.upper()), (&[1.0][..], &[2.0][..]));

        let b = Hyperrectangle::new(vec![-1.0, 0.0], vec![3.0, 1.0]).unwrap();
        let (l, r) = b.split_mid(0).unwrap();
        assert_eq!(l, Hyperrectangle::new(vec![-1.0, 0.0], vec![1.0, 1.0]).unwrap());
        assert_eq!(r, Hyperrectangle::new(vec![1.0, 0.0], vec![3.0, 1.0]).unwrap());

        let p = Hyperrectangle::point(&[1.0, 2.0]).unwrap();
        assert!(matches!(p.split_mid(1), Err(Error::DegenerateBox)));
    }

    #[test]
    fn repeated_splits_give_equal_children() {
        let mut boxes = vec![Hyperrectangle::new(vec![-1.0], vec![3.0]).unwrap()];
        for _ in 0..5 {
            boxes = boxes
                .iter()
                .flat_map(|b| {
                    let (l, r) = b.split_mid(0).unwrap();
                    [l, r]
                })
                .collect();
        }
        assert_eq!(boxes.len(), 32);
        assert!(boxes.iter().all(|b| (b.widths()[0] - 4.0 / 32.0).abs() < 1e-15));
    }

    #[test]
    fn grid_covers_box() {
        let b = Hyperrectangle::new(vec![0.0, -1.0, 2.0], vec![1.0, 1.0, 2.0]).unwrap();
        let g = b.grid(&[4, 3, 5]);
        assert_eq!(g.len(), 12);
        let vol: f64 = g.iter().map(|c| c.widths()[0] * c.widths()[1]).sum();
        assert!((vol - 2.0).abs() < 1e-12);
        assert!(g.iter().all(|c| b.contains_box(c)));
    }

    #[test]
    fn constant_bounds_interval() {
        let d = Hyperrectangle::new(vec![-1.0, -2.0], vec![3.0, 5.0]).unwrap();
        let rel = LinearRelaxation::constant(d, vec![-0.5], vec![2.0]);
        let iv = linear_to_interval(&rel);
        assert_eq!(iv.lo, vec![-0.5]);
        assert_eq!(iv.hi, vec![2.0]);
    }

    #[test]
    fn degenerate_box_interval_is_point_value() {
        let c = [0.5, -1.5];
        let rel = LinearRelaxation {
            a_lower: vec![2.0, 3.0],
            b_lower: vec![1.0],
            a_upper: vec![2.0, 3.0],
            b_upper: vec![1.0],
            domain: Hyperrectangle::point(&c).unwrap(),
        };
        let iv = linear_to_interval(&rel);
        let v = 2.0 * 0.5 + 3.0 * -1.5 + 1.0;
        assert_eq!(iv.lo, vec![v]);
        assert_eq!(iv.hi, vec![v]);
    }

    #[test]
    fn interval_matches_corner_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=10 {
            for _ in 0..20 {
                let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..1.0)).collect();
                let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..2.0)).collect();
                let d = Hyperrectangle::new(lo, hi).unwrap();
                let rel = LinearRelaxation {
                    a_lower: (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    b_lower: vec![rng.random_range(-1.0..1.0), 0.3],
                    a_upper: (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    b_upper: vec![rng.random_range(-1.0..1.0), -0.2],
                    domain: d.clone(),
                };
                let iv = linear_to_interval(&rel);
                for i in 0..2 {
                    let corners = d.corners();
                    let lo = corners.iter().map(|c| rel.eval_lower(c)[i]).fold(f64::INFINITY, f64::min);
                    let hi = corners.iter().map(|c| rel.eval_upper(c)[i]).fold(f64::NEG_INFINITY, f64::max);
                    assert!((iv.lo[i] - lo).abs() <= 1e-12 * (1.0 + lo.abs()), "n={n}");
                    assert!((iv.hi[i] - hi).abs() <= 1e-12 * (1.0 + hi.abs()), "n={n}");
                }
            }
        }
    }

    #[test]
    fn extreme_of_line_corner() {
        let d = Hyperrectangle::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let (v, arg) = extreme_of_line(&[1.0, -1.0], 0.5, &d, false);
        assert_eq!(arg, vec![0.0, 2.0]);
        assert_eq!(v, -1.5);
        let (v, arg) = extreme_of_line(&[1.0, -1.0], 0.5, &d, true);
        assert_eq!(arg, vec![1.0, 0.0]);
        assert_eq!(v, 1.5);
    }
}
