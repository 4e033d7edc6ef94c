//! System models `x[k+1] = F(x[k]) + v[k]`, stopped trajectories and sound
//! linear relaxations of `F` over boxes.

use serde::{Deserialize, Serialize};

use crate::noise::{DiagonalGaussian, NoiseScale};
use crate::relaxation::{linear_to_interval, Hyperrectangle, LinearRelaxation};
use crate::sets::SetExpr;
use crate::{Error, Result};

/// Scalar nonlinearity applied to one state coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    /// `x^3`
    Cubic,
    Sin,
    Cos,
}

impl Nonlinearity {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Cubic => x * x * x,
            Nonlinearity::Sin => x.sin(),
            Nonlinearity::Cos => x.cos(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Cubic => 3.0 * x * x,
            Nonlinearity::Sin => x.cos(),
            Nonlinearity::Cos => -x.sin(),
        }
    }

    /// Points of `[l, u]` where the derivative equals `s`.
    fn stationary_points(self, s: f64, l: f64, u: f64) -> Vec<f64> {
        let mut pts = Vec::new();
        let mut periodic = |base: f64| {
            let two_pi = std::f64::consts::TAU;
            let k0 = ((l - base) / two_pi).floor() as i64;
            let k1 = ((u - base) / two_pi).ceil() as i64;
            for k in k0..=k1 {
                let x = base + two_pi * k as f64;
                if l <= x && x <= u {
                    pts.push(x);
                }
            }
        };
        match self {
            Nonlinearity::Cubic => {
                if s >= 0.0 {
                    let r = (s / 3.0).sqrt();
                    for x in [-r, r] {
                        if l <= x && x <= u {
                            pts.push(x);
                        }
                    }
                }
            }
            Nonlinearity::Sin => {
                if s.abs() <= 1.0 {
                    let a = s.acos();
                    periodic(a);
                    periodic(-a);
                }
            }
            Nonlinearity::Cos => {
                if s.abs() <= 1.0 {
                    let a = (-s).asin();
                    periodic(a);
                    periodic(std::f64::consts::PI - a);
                }
            }
        }
        pts
    }

    /// Exact range over `[l, u]`.
    fn range(self, l: f64, u: f64) -> (f64, f64) {
        let mut lo = self.eval(l).min(self.eval(u));
        let mut hi = self.eval(l).max(self.eval(u));
        if self != Nonlinearity::Cubic {
            for x in self.stationary_points(0.0, l, u) {
                let y = self.eval(x);
                lo = lo.min(y);
                hi = hi.max(y);
            }
        }
        (lo, hi)
    }

    /// Lines `(slope, intercept)` below and above `phi` on `[l, u]`.
    ///
    /// Candidate slopes are the chord and the midpoint tangent. For each slope
    /// the intercepts are the exact extremes of `phi(x) - s*x`, found at the
    /// endpoints and at the points where `phi'(x) = s`. The line with the
    /// smaller area against the function wins.
    pub fn linear_bounds(self, l: f64, u: f64) -> ((f64, f64), (f64, f64)) {
        if l == u {
            let y = self.eval(l);
            return ((0.0, y), (0.0, y));
        }
        let m = 0.5 * (l + u);
        let chord = (self.eval(u) - self.eval(l)) / (u - l);
        let tangent = self.derivative(m);
        let mut best_lo: Option<(f64, f64)> = None;
        let mut best_hi: Option<(f64, f64)> = None;
        for s in [chord, tangent] {
            let mut pts = vec![l, u];
            pts.extend(self.stationary_points(s, l, u));
            let vals = pts.iter().map(|&x| self.eval(x) - s * x);
            let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in vals {
                tmin = tmin.min(v);
                tmax = tmax.max(v);
            }
            // absorb rounding in the located extremes
            let pad = 1e-13 * (1.0 + tmin.abs().max(tmax.abs()) + s.abs() * l.abs().max(u.abs()));
            let (tmin, tmax) = (tmin - pad, tmax + pad);
            if best_lo.is_none_or(|(bs, bt)| s * m + tmin > bs * m + bt) {
                best_lo = Some((s, tmin));
            }
            if best_hi.is_none_or(|(bs, bt)| s * m + tmax < bs * m + bt) {
                best_hi = Some((s, tmax));
            }
        }
        (best_lo.unwrap(), best_hi.unwrap())
    }
}

/// `coef * phi(x[var])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coef: f64,
    pub var: usize,
    pub func: Nonlinearity,
}

/// One output coordinate of `F`: `linear . x + constant + sum(terms)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentExpr {
    pub linear: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
}

impl ComponentExpr {
    fn eval(&self, x: &[f64]) -> f64 {
        let mut y = self.constant;
        for (a, v) in self.linear.iter().zip(x) {
            y += a * v;
        }
        for t in &self.terms {
            y += t.coef * t.func.eval(x[t.var]);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub name: String,
    components: Vec<ComponentExpr>,
    state_space: Hyperrectangle,
    safe_set: SetExpr,
    unsafe_set: SetExpr,
    initial_set: SetExpr,
    noise: DiagonalGaussian,
}

impl DynamicsModel {
    /// `unsafe_set` is taken as given; callers usually pass `X \ Xs`.
    pub fn new(
        name: impl Into<String>,
        components: Vec<ComponentExpr>,
        state_space: Hyperrectangle,
        initial_set: SetExpr,
        safe_set: SetExpr,
        unsafe_set: SetExpr,
        noise: DiagonalGaussian,
    ) -> Result<Self> {
        let n = state_space.dim();
        if components.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: components.len(),
            });
        }
        for c in &components {
            if c.linear.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: c.linear.len(),
                });
            }
            if c.terms.iter().any(|t| t.var >= n || !t.coef.is_finite()) || !c.constant.is_finite() {
                return Err(Error::InvalidConfig("dynamics term refers to a missing state or is not finite".into()));
            }
        }
        if noise.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: noise.dim(),
            });
        }
        for s in [&initial_set, &safe_set, &unsafe_set] {
            s.validate(n)?;
        }
        Ok(Self {
            name: name.into(),
            components,
            state_space,
            safe_set,
            unsafe_set,
            initial_set,
            noise,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_space.dim()
    }

    pub fn components(&self) -> &[ComponentExpr] {
        &self.components
    }

    pub fn state_space(&self) -> &Hyperrectangle {
        &self.state_space
    }

    pub fn safe_set(&self) -> &SetExpr {
        &self.safe_set
    }

    pub fn unsafe_set(&self) -> &SetExpr {
        &self.unsafe_set
    }

    pub fn initial_set(&self) -> &SetExpr {
        &self.initial_set
    }

    pub fn noise(&self) -> &DiagonalGaussian {
        &self.noise
    }

    pub fn with_noise(mut self, noise: DiagonalGaussian) -> Result<Self> {
        if noise.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: noise.dim(),
            });
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn with_safe_set(mut self, safe: SetExpr, unsafe_set: SetExpr) -> Result<Self> {
        safe.validate(self.state_dim())?;
        unsafe_set.validate(self.state_dim())?;
        self.safe_set = safe;
        self.unsafe_set = unsafe_set;
        Ok(self)
    }

    /// `F(x)`.
    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// `F(x) + v`.
    pub fn step(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        self.components.iter().zip(v).map(|(c, vi)| c.eval(x) + vi).collect()
    }

    pub fn in_state_space(&self, x: &[f64]) -> bool {
        self.state_space.contains(x)
    }

    /// States `x[0..=H]` of the process stopped at its first exit from `X`;
    /// `draws` holds one noise vector per step.
    pub fn stopped_trajectory(&self, x0: &[f64], draws: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if x0.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: x0.len(),
            });
        }
        if !self.in_state_space(x0) {
            return Err(Error::StateOutsideDomain(x0.to_vec()));
        }
        let mut out = Vec::with_capacity(draws.len() + 1);
        out.push(x0.to_vec());
        let mut stopped = false;
        for v in draws {
            let last = out.last().unwrap();
            let next = if stopped { last.clone() } else { self.step(last, v) };
            stopped = stopped || !self.in_state_space(&next);
            out.push(next);
        }
        Ok(out)
    }

    /// Linear sandwich of `F` over `qx`, which must lie inside `X`.
    pub fn relax_f(&self, qx: &Hyperrectangle) -> Result<LinearRelaxation> {
        if qx.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: qx.dim(),
            });
        }
        if !self.state_space.contains_box(qx) {
            return Err(Error::OutsideStateSpace(format!("{qx:?}")));
        }
        Ok(self.relax_f_unchecked(qx))
    }

    pub(crate) fn relax_f_unchecked(&self, qx: &Hyperrectangle) -> LinearRelaxation {
        let n = self.state_dim();
        let mut a_lower = vec![0.0; n * n];
        let mut a_upper = vec![0.0; n * n];
        let mut b_lower = vec![0.0; n];
        let mut b_upper = vec![0.0; n];
        for (i, c) in self.components.iter().enumerate() {
            a_lower[i * n..(i + 1) * n].copy_from_slice(&c.linear);
            a_upper[i * n..(i + 1) * n].copy_from_slice(&c.linear);
            b_lower[i] = c.constant;
            b_upper[i] = c.constant;
            for t in &c.terms {
                let (l, u) = (qx.lower()[t.var], qx.upper()[t.var]);
                let ((sl, tl), (su, tu)) = t.func.linear_bounds(l, u);
                let (low, up) = if t.coef >= 0.0 { ((sl, tl), (su, tu)) } else { ((su, tu), (sl, tl)) };
                a_lower[i * n + t.var] += t.coef * low.0;
                b_lower[i] += t.coef * low.1;
                a_upper[i * n + t.var] += t.coef * up.0;
                b_upper[i] += t.coef * up.1;
            }
        }
        LinearRelaxation {
            a_lower,
            b_lower,
            a_upper,
            b_upper,
            domain: qx.clone(),
        }
    }

    /// Interval enclosure of `F(qx)`: the tighter of the linear relaxation's
    /// box extremes and natural interval evaluation, per coordinate.
    pub fn image_box(&self, qx: &Hyperrectangle, rel: &LinearRelaxation) -> Hyperrectangle {
        let iv = linear_to_interval(rel);
        let n = self.state_dim();
        let mut lo = iv.lo;
        let mut hi = iv.hi;
        for (i, c) in self.components.iter().enumerate() {
            let (mut nl, mut nh) = (c.constant, c.constant);
            for j in 0..n {
                let a = c.linear[j];
                let (p, q) = (a * qx.lower()[j], a * qx.upper()[j]);
                nl += p.min(q);
                nh += p.max(q);
            }
            for t in &c.terms {
                let (rl, rh) = t.func.range(qx.lower()[t.var], qx.upper()[t.var]);
                let (p, q) = (t.coef * rl, t.coef * rh);
                nl += p.min(q);
                nh += p.max(q);
            }
            let pad = 1e-12 * (1.0 + nl.abs().max(nh.abs()));
            lo[i] = lo[i].max(nl - pad);
            hi[i] = hi[i].min(nh + pad);
            if lo[i] > hi[i] {
                // both enclosures are sound, so they can only cross by rounding
                let mid = 0.5 * (lo[i] + hi[i]);
                lo[i] = mid;
                hi[i] = mid;
            }
        }
        Hyperrectangle::new(lo, hi).expect("finite enclosure")
    }

    /// Linear benchmark: `x' = [[0, 0.4], [0.3, 0.8]] x + v`, variance `(0, 0.1)`.
    pub fn linear() -> Self {
        let x = Hyperrectangle::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let xs = SetExpr::Ball { center: vec![0.0, 0.0], radius: 2.0 };
        Self::new(
            "linear",
            vec![
                ComponentExpr { linear: vec![0.0, 0.4], constant: 0.0, terms: vec![] },
                ComponentExpr { linear: vec![0.3, 0.8], constant: 0.0, terms: vec![] },
            ],
            x.clone(),
            SetExpr::Ball { center: vec![0.0, 0.0], radius: 1.5 },
            xs.clone(),
            SetExpr::diff(SetExpr::from_box(&x), xs),
            DiagonalGaussian::new(vec![0.0, 0.0], vec![0.0, 0.1]).unwrap(),
        )
        .unwrap()
    }

    /// Euler-discretized polynomial system with `h = 0.1`, variance `(0.01, 0)`.
    pub fn polynomial2d() -> Self {
        let h = 0.1;
        let x = Hyperrectangle::new(vec![-3.5, -2.0], vec![2.0, 1.0]).unwrap();
        let x0 = SetExpr::union(vec![
            SetExpr::circ(-1.5, 0.0, 0.5),
            SetExpr::rect(-1.8, -0.1, 0.6, 0.2),
            SetExpr::rect(-1.4, -0.5, 0.2, 0.6),
        ]);
        let xu = SetExpr::union(vec![
            SetExpr::circ(-1.0, -1.0, 0.4),
            SetExpr::rect(0.4, 0.1, 0.2, 0.4),
            SetExpr::rect(0.4, 0.1, 0.4, 0.2),
        ]);
        Self::new(
            "polynomial2d",
            vec![
                ComponentExpr { linear: vec![1.0, h], constant: 0.0, terms: vec![] },
                ComponentExpr {
                    linear: vec![-h, 1.0 - h],
                    constant: 0.0,
                    terms: vec![Term { coef: h / 3.0, var: 0, func: Nonlinearity::Cubic }],
                },
            ],
            x.clone(),
            x0,
            SetExpr::diff(SetExpr::from_box(&x), xu.clone()),
            xu,
            DiagonalGaussian::new(vec![0.0, 0.0], vec![0.01, 0.0]).unwrap(),
        )
        .unwrap()
    }

    /// Dubin's car with `h = 0.1`, speed 1, steering `1 / 0.95`, variance
    /// `(0, 0, 0.01)`.
    pub fn dubins() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let (h, speed, steer) = (0.1, 1.0, 1.0 / 0.95);
        let x = Hyperrectangle::new(vec![-2.0, -2.0, -FRAC_PI_2], vec![2.0, 2.0, FRAC_PI_2]).unwrap();
        let xs = SetExpr::Box {
            lower: vec![-1.9, -1.9, -FRAC_PI_2],
            upper: vec![1.9, 1.9, FRAC_PI_2],
        };
        Self::new(
            "dubins",
            vec![
                ComponentExpr {
                    linear: vec![1.0, 0.0, 0.0],
                    constant: 0.0,
                    terms: vec![Term { coef: h * speed, var: 2, func: Nonlinearity::Sin }],
                },
                ComponentExpr {
                    linear: vec![0.0, 1.0, 0.0],
                    constant: 0.0,
                    terms: vec![Term { coef: h * speed, var: 2, func: Nonlinearity::Cos }],
                },
                ComponentExpr { linear: vec![0.0, 0.0, 1.0], constant: h * steer, terms: vec![] },
            ],
            x.clone(),
            SetExpr::Point { x: vec![-0.95, 0.0, 0.0] },
            xs.clone(),
            SetExpr::diff(SetExpr::from_box(&x), xs),
            DiagonalGaussian::new(vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.01]).unwrap(),
        )
        .unwrap()
    }

    pub fn benchmark(name: &str) -> Option<Self> {
        match name {
            "linear" => Some(Self::linear()),
            "polynomial2d" => Some(Self::polynomial2d()),
            "dubins" => Some(Self::dubins()),
            _ => None,
        }
    }

    /// Built-in benchmark with its published noise vector read under `scale`.
    pub fn benchmark_with(name: &str, scale: NoiseScale) -> Option<Self> {
        let base = Self::benchmark(name)?;
        if scale == NoiseScale::Variance {
            return Some(base);
        }
        let n = base.noise().clone();
        let noise = DiagonalGaussian::with_scale(n.mean().to_vec(), n.variance().to_vec(), scale).ok()?;
        base.with_noise(noise).ok()
    }
}
