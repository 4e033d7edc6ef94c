//! Region algebra for initial, safe and unsafe sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::relaxation::Hyperrectangle;
use crate::{Error, Result};

/// A set built from boxes, balls and points by union and difference.
///
/// Membership is exact. Box queries are conservative in the direction that
/// keeps partitions covering: `may_intersect` never answers `false` for a box
/// that meets the set, and `contains_box` never answers `true` for a box that
/// sticks out of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetExpr {
    Empty,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Point { x: Vec<f64> },
    Union { members: Vec<SetExpr> },
    Diff { base: Box<SetExpr>, minus: Box<SetExpr> },
}

impl SetExpr {
    pub fn from_box(bx: &Hyperrectangle) -> Self {
        SetExpr::Box {
            lower: bx.lower().to_vec(),
            upper: bx.upper().to_vec(),
        }
    }

    /// Disk of radius `r` centered at `(a, b)`.
    pub fn circ(a: f64, b: f64, r: f64) -> Self {
        SetExpr::Ball {
            center: vec![a, b],
            radius: r,
        }
    }

    /// Rectangle `[a, a + c] x [b, b + d]`.
    pub fn rect(a: f64, b: f64, c: f64, d: f64) -> Self {
        SetExpr::Box {
            lower: vec![a, b],
            upper: vec![a + c, b + d],
        }
    }

    pub fn union(members: Vec<SetExpr>) -> Self {
        SetExpr::Union { members }
    }

    pub fn diff(base: SetExpr, minus: SetExpr) -> Self {
        SetExpr::Diff {
            base: Box::new(base),
            minus: Box::new(minus),
        }
    }

    /// Checks shapes and radii. `dim` is the ambient dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match self {
            SetExpr::Empty => Ok(()),
            SetExpr::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return bad(format!("box has dimension {} but the system has {dim}", lower.len()));
                }
                Hyperrectangle::new(lower.clone(), upper.clone()).map(|_| ())
            }
            SetExpr::Ball { center, radius } => {
                if center.len() != dim {
                    return bad(format!("ball has dimension {} but the system has {dim}", center.len()));
                }
                if !(radius.is_finite() && *radius >= 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return bad("ball must have finite center and non-negative radius".into());
                }
                Ok(())
            }
            SetExpr::Point { x } => {
                if x.len() != dim || x.iter().any(|c| !c.is_finite()) {
                    return bad("point must be finite with the system dimension".into());
                }
                Ok(())
            }
            SetExpr::Union { members } => members.iter().try_for_each(|m| m.validate(dim)),
            SetExpr::Diff { base, minus } => {
                base.validate(dim)?;
                minus.validate(dim)
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SetExpr::Empty => false,
            SetExpr::Box { lower, upper } => x.iter().zip(lower).zip(upper).all(|((v, l), u)| l <= v && v <= u),
            SetExpr::Ball { center, radius } => {
                x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum::<f64>() <= radius * radius
            }
            SetExpr::Point { x: p } => x == p.as_slice(),
            SetExpr::Union { members } => members.iter().any(|m| m.contains(x)),
            SetExpr::Diff { base, minus } => base.contains(x) && !minus.contains(x),
        }
    }

    /// `false` only if the box is certainly disjoint from the set.
    pub fn may_intersect(&self, bx: &Hyperrectangle) -> bool {
        match self {
            SetExpr::Empty => false,
            SetExpr::Box { lower, upper } => (0..bx.dim()).all(|i| bx.lower()[i] <= upper[i] && lower[i] <= bx.upper()[i]),
            SetExpr::Ball { center, radius } => {
                let d2: f64 = center
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let p = c.clamp(bx.lower()[i], bx.upper()[i]);
                        (p - c) * (p - c)
                    })
                    .sum();
                d2 <= radius * radius
            }
            SetExpr::Point { x } => bx.contains(x),
            SetExpr::Union { members } => members.iter().any(|m| m.may_intersect(bx)),
            SetExpr::Diff { base, minus } => base.may_intersect(bx) && !minus.contains_box(bx),
        }
    }

    /// `true` only if every point of the box is in the set.
    pub fn contains_box(&self, bx: &Hyperrectangle) -> bool {
        match self {
            SetExpr::Empty => false,
            SetExpr::Box { lower, upper } => (0..bx.dim()).all(|i| lower[i] <= bx.lower()[i] && bx.upper()[i] <= upper[i]),
            SetExpr::Ball { center, radius } => {
                let d2: f64 = center
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let far = (bx.lower()[i] - c).abs().max((bx.upper()[i] - c).abs());
                        far * far
                    })
                    .sum();
                d2 <= radius * radius
            }
            SetExpr::Point { x } => bx.is_point() && bx.lower() == x.as_slice(),
            SetExpr::Union { members } => members.iter().any(|m| m.contains_box(bx)),
            SetExpr::Diff { base, minus } => base.contains_box(bx) && !minus.may_intersect(bx),
        }
    }

    /// Smallest box around the set as built, `None` when structurally empty.
    pub fn bbox(&self) -> Option<Hyperrectangle> {
        match self {
            SetExpr::Empty => None,
            SetExpr::Box { lower, upper } => Hyperrectangle::new(lower.clone(), upper.clone()).ok(),
            SetExpr::Ball { center, radius } => Hyperrectangle::ball(center, *radius).ok(),
            SetExpr::Point { x } => Hyperrectangle::point(x).ok(),
            SetExpr::Union { members } => {
                let boxes: Vec<Hyperrectangle> = members.iter().filter_map(|m| m.bbox()).collect();
                let first = boxes.first()?;
                let mut lo = first.lower().to_vec();
                let mut hi = first.upper().to_vec();
                for b in &boxes[1..] {
                    for i in 0..lo.len() {
                        lo[i] = lo[i].min(b.lower()[i]);
                        hi[i] = hi[i].max(b.upper()[i]);
                    }
                }
                Hyperrectangle::new(lo, hi).ok()
            }
            SetExpr::Diff { base, .. } => base.bbox(),
        }
    }

    /// The unique member when the set is a single point.
    pub fn as_point(&self) -> Option<&[f64]> {
        match self {
            SetExpr::Point { x } => Some(x),
            SetExpr::Union { members } if members.len() == 1 => members[0].as_point(),
            _ => None,
        }
    }

    /// `n` points uniform over the set by rejection from its bounding box.
    /// Singletons repeat their point; a structurally empty set gives no points.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if let Some(p) = self.as_point() {
            return Ok(vec![p.to_vec(); n]);
        }
        let Some(bb) = self.bbox() else {
            return Ok(Vec::new());
        };
        const MIN_RATE: f64 = 1e-4;
        let budget = ((n as f64 / MIN_RATE).ceil() as usize).max(100_000);
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            if attempts >= budget {
                return Err(Error::DegenerateSet {
                    attempts,
                    threshold: MIN_RATE,
                });
            }
            attempts += 1;
            let x = bb.sample(rng);
            if self.contains(&x) {
                out.push(x);
            }
        }
        Ok(out)
    }
}
