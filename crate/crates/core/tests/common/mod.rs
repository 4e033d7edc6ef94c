//! Independent oracles and check routines shared by the integration tests and
//! the acceptance run. Nothing here calls the library code it is checking
//! except to obtain the quantity under test.
#![allow(dead_code)]

use nbf::certifier::{beta_on_grid, CertificationReport, CertifyConfig};
use nbf::dynamics::DynamicsModel;
use nbf::nn::{Activation, GradientSet, LayerParams, LayerSpec, Network};
use nbf::noise::{DiagonalGaussian, NoiseScale};
use nbf::partition::{bnb_minimize, BnBConfig, BnBStatus};
use nbf::relaxation::{composed_bounds, crown_bounds, ibp_bounds, BoundMode, Hyperrectangle};
use nbf::sets::SetExpr;
use nbf::trainer::{robust_loss, sample_batch, TrainConfig};
use nbf::validator::{mc_expectation, mc_psafe_worst};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const SLACK: f64 = 1e-9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Outcome of one check with a one-line summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

pub fn benchmarks() -> Vec<DynamicsModel> {
    vec![DynamicsModel::linear(), DynamicsModel::polynomial2d(), DynamicsModel::dubins()]
}

/// Plain loop forward pass written against the raw parameter layout.
pub fn oracle_forward(net: &Network, x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    for (spec, p) in net.specs().iter().zip(net.params()) {
        let mut next = vec![0.0; spec.output_width];
        for (i, out) in next.iter_mut().enumerate() {
            let mut z = p.bias[i];
            for j in 0..spec.input_width {
                z += p.weight[i * spec.input_width + j] * a[j];
            }
            *out = match spec.activation {
                Activation::Relu => {
                    if z > 0.0 {
                        z
                    } else {
                        0.0
                    }
                }
                Activation::Identity => z,
            };
        }
        a = next;
    }
    a[0]
}

/// Barrier-shaped network with weights uniform in `+-scale / sqrt(fan_in)`
/// and biases uniform in `+-scale`.
pub fn random_net<R: Rng>(input: usize, width: usize, depth: usize, scale: f64, rng: &mut R) -> Network {
    let mut specs = Vec::new();
    let mut w = input;
    for _ in 0..depth {
        specs.push(LayerSpec { input_width: w, output_width: width, activation: Activation::Relu });
        w = width;
    }
    specs.push(LayerSpec { input_width: w, output_width: 1, activation: Activation::Identity });
    let params = specs
        .iter()
        .map(|s| {
            let b = scale / (s.input_width as f64).sqrt();
            LayerParams {
                weight: (0..s.input_width * s.output_width).map(|_| rng.random_range(-b..=b)).collect(),
                bias: (0..s.output_width).map(|_| rng.random_range(-scale..=scale)).collect(),
            }
        })
        .collect();
    Network::new(specs, params).unwrap()
}

/// Random box inside `space` whose side is at most `frac` of the space side.
pub fn random_subbox<R: Rng>(space: &Hyperrectangle, frac: f64, rng: &mut R) -> Hyperrectangle {
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for d in 0..space.dim() {
        let (a, b) = (space.lower()[d], space.upper()[d]);
        let w = (b - a) * frac * rng.random::<f64>();
        let l = a + (b - a - w) * rng.random::<f64>();
        lo.push(l);
        hi.push((l + w).min(b));
    }
    Hyperrectangle::new(lo, hi).unwrap()
}

/// Corners first, then uniform points.
pub fn box_points<R: Rng>(bx: &Hyperrectangle, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = if bx.dim() <= 6 { bx.corners() } else { Vec::new() };
    pts.push(bx.center());
    while pts.len() < n {
        pts.push(bx.sample(rng));
    }
    pts.truncate(n.max(1));
    pts
}

// ---------------------------------------------------------------------------
// relaxation soundness

pub fn soundness(pairs: usize, samples: usize, seed: u64) -> Outcome {
    let systems = benchmarks();
    let widths = [8, 32, 128];
    let results: Vec<(usize, f64)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut r = rng(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
            let dynm = &systems[k % 3];
            let n = dynm.state_dim();
            let width = widths[(k / 3) % 3];
            let depth = 1 + (k / 9) % 3;
            let scale = [0.5, 1.0, 2.0][k % 3];
            let net = random_net(n, width, depth, scale, &mut r);
            let space = dynm.state_space();
            let bx = random_subbox(space, 0.5, &mut r);
            let ibp = ibp_bounds(&net, &bx).unwrap();
            let crown = crown_bounds(&net, &bx, BoundMode::Crown).unwrap();
            let crown_ibp = crown_bounds(&net, &bx, BoundMode::CrownIbp).unwrap();
            let qv = Hyperrectangle::new(
                (0..n).map(|_| -0.4 * r.random::<f64>()).collect(),
                (0..n).map(|_| 0.4 * r.random::<f64>()).collect(),
            )
            .unwrap();
            let composed = composed_bounds(dynm, &net, &bx, &qv, BoundMode::Crown).unwrap();

            let mut violations = 0;
            let mut worst: f64 = 0.0;
            let mut note = |lo: f64, y: f64, hi: f64| {
                let excess = (lo - y).max(y - hi);
                worst = worst.max(excess);
                if excess > SLACK {
                    violations += 1;
                }
            };
            for x in box_points(&bx, samples, &mut r) {
                let y = oracle_forward(&net, &x);
                note(ibp.lo[0], y, ibp.hi[0]);
                for rel in [&crown, &crown_ibp] {
                    note(rel.eval_lower(&x)[0], y, rel.eval_upper(&x)[0]);
                }
            }
            let joint = bx.product(&qv);
            for xv in box_points(&joint, samples, &mut r) {
                let (x, v) = xv.split_at(n);
                let y = oracle_forward(&net, &dynm.step(x, v));
                note(composed.eval_lower(&xv)[0], y, composed.eval_upper(&xv)[0]);
            }
            (violations, worst)
        })
        .collect();
    let violations: usize = results.iter().map(|r| r.0).sum();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Outcome::new(
        violations == 0,
        format!("{pairs} pairs x {samples} points x 4 relaxations, {violations} violations, worst excess {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// Gaussian integrals

/// Adaptive Simpson quadrature.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 60)
}

/// `(P(v in [lo, hi]), E[v ; v in [lo, hi]])` for one coordinate, by
/// quadrature of the density (an indicator for zero variance).
pub fn quad_interval(mean: f64, var: f64, lo: f64, hi: f64) -> (f64, f64) {
    if var == 0.0 {
        let inside = lo <= mean && mean <= hi;
        return if inside { (1.0, mean) } else { (0.0, 0.0) };
    }
    let s = var.sqrt();
    let pdf = move |v: f64| (-0.5 * ((v - mean) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    // integrate on the bounded window where the density is not negligible
    let (a, b) = (lo.max(mean - 40.0 * s), hi.min(mean + 40.0 * s));
    if a >= b {
        return (0.0, 0.0);
    }
    // one-sigma panels so the first probes cannot all land in a flat tail
    let panels = ((b - a) / s).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    let (mut p, mut m) = (0.0, 0.0);
    for k in 0..panels {
        let (u, w) = (a + k as f64 * h, if k + 1 == panels { b } else { a + (k + 1) as f64 * h });
        p += simpson(&pdf, u, w, 1e-16);
        m += simpson(&|v| v * pdf(v), u, w, 1e-16);
    }
    (p, m)
}

pub fn gaussian(boxes: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut laws = 0;
    for dynm in benchmarks() {
        for scale in [NoiseScale::Variance, NoiseScale::StdDev] {
            let g = DynamicsModel::benchmark_with(&dynm.name, scale).unwrap().noise().clone();
            laws += 1;
            for _ in 0..boxes {
                let (mut lo, mut hi) = (Vec::new(), Vec::new());
                for i in 0..g.dim() {
                    let s = if g.is_deterministic_in(i) { 0.1 } else { g.std(i) };
                    let a = g.mean()[i] + s * r.random_range(-7.0..4.0);
                    let b = a + s * r.random_range(0.0..6.0);
                    lo.push(a);
                    hi.push(b);
                }
                let bx = Hyperrectangle::new(lo.clone(), hi.clone()).unwrap();
                let parts: Vec<(f64, f64)> =
                    (0..g.dim()).map(|i| quad_interval(g.mean()[i], g.variance()[i], lo[i], hi[i])).collect();
                let p_ref: f64 = parts.iter().map(|p| p.0).product();
                let e_ref: Vec<f64> = (0..g.dim())
                    .map(|i| parts[i].1 * (0..g.dim()).filter(|&j| j != i).map(|j| parts[j].0).product::<f64>())
                    .collect();
                worst = worst.max((g.box_probability(&bx).unwrap() - p_ref).abs());
                for (a, b) in g.partial_expectation(&bx).unwrap().iter().zip(&e_ref) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    Outcome::new(worst <= 1e-8, format!("{laws} noise laws x {boxes} boxes, max abs error {worst:.2e}"))
}

pub fn gaussian_of(mean: Vec<f64>, var: Vec<f64>) -> DiagonalGaussian {
    DiagonalGaussian::new(mean, var).unwrap()
}

// ---------------------------------------------------------------------------
// gradients

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` in parameter `k`, at two step sizes. `None`
/// when the two disagree, which signals a kink within the step.
fn central(net: &Network, k: usize, h: f64, f: &dyn Fn(&Network) -> f64) -> Option<f64> {
    let at = |delta: f64| {
        let mut m = net.clone();
        *m.param_mut(k) += delta;
        f(&m)
    };
    let d1 = (at(h) - at(-h)) / (2.0 * h);
    let d2 = (at(h / 4.0) - at(-h / 4.0)) / (h / 2.0);
    (rel_err(d1, d2) < 1e-7).then_some(d2)
}

pub fn gradients(instances: usize, seed: u64) -> Outcome {
    let mut r = rng(seed);
    let systems = benchmarks();
    let (mut checked, mut skipped) = (0usize, 0usize);
    let (mut worst_loss, mut worst_fwd): (f64, f64) = (0.0, 0.0);
    for k in 0..instances {
        let dynm = &systems[k % 3];
        let n = dynm.state_dim();
        let net = random_net(n, 6, 1 + k % 2, 1.0, &mut r);
        let p = net.num_params();

        // plain forward
        let x = dynm.state_space().sample(&mut r);
        if net.min_relu_margin(&x).unwrap() > 1e-4 {
            let g = net.grad_params(&x, 1.0).unwrap();
            for _ in 0..10 {
                let idx = r.random_range(0..p);
                match central(&net, idx, 1e-6, &|m| oracle_forward(m, &x)) {
                    Some(fd) => {
                        worst_fwd = worst_fwd.max(rel_err(g.get(idx), fd));
                        checked += 1;
                    }
                    None => skipped += 1,
                }
            }
        } else {
            skipped += 1;
        }

        // robust loss
        let cfg = TrainConfig {
            eps: 0.01,
            horizon: 10,
            state_margin: 0.05 * (k % 2) as f64,
            unsafe_margin: 0.1 * (k % 3) as f64,
            ..TrainConfig::default()
        };
        let batch = sample_batch(dynm, 6, &mut r).unwrap();
        let v: Vec<Vec<f64>> = (0..6).map(|_| dynm.noise().sample(&mut r)).collect();
        let kappa = r.random_range(0.0..1.0);
        let out = robust_loss(&net, dynm, &batch, &v, kappa, &cfg);
        let loss = |m: &Network| robust_loss(m, dynm, &batch, &v, kappa, &cfg).loss;
        for _ in 0..10 {
            let idx = r.random_range(0..p);
            match central(&net, idx, 1e-6, &loss) {
                Some(fd) => {
                    worst_loss = worst_loss.max(rel_err(out.grads.get(idx), fd));
                    checked += 1;
                }
                None => skipped += 1,
            }
        }
    }
    let enough = checked >= 5 * instances;
    Outcome::new(
        worst_loss < 1e-3 && worst_fwd < 1e-4 && enough,
        format!(
            "{instances} instances, {checked} coordinates checked ({skipped} kink-adjacent skipped), max rel err loss {worst_loss:.2e}, forward {worst_fwd:.2e}"
        ),
    )
}

pub fn grad_norm(g: &GradientSet) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// branch and bound

/// Exact minimum of a one-hidden-layer ReLU network over a 2-D box: the
/// function is linear on each cell of the hyperplane arrangement, so the
/// minimum sits at a vertex (box corners, line/edge and line/line crossings).
pub fn exact_min_2d(net: &Network, bx: &Hyperrectangle) -> f64 {
    assert_eq!(net.specs().len(), 2);
    let p = &net.params()[0];
    let (lo, hi) = (bx.lower(), bx.upper());
    let lines: Vec<(f64, f64, f64)> = (0..net.specs()[0].output_width).map(|i| (p.weight[2 * i], p.weight[2 * i + 1], p.bias[i])).collect();
    let mut cands = bx.corners();
    for &(a, b, c) in &lines {
        for x in [lo[0], hi[0]] {
            if b != 0.0 {
                cands.push(vec![x, -(a * x + c) / b]);
            }
        }
        for y in [lo[1], hi[1]] {
            if a != 0.0 {
                cands.push(vec![-(b * y + c) / a, y]);
            }
        }
    }
    for i in 0..lines.len() {
        for j in i + 1..lines.len() {
            let (a1, b1, c1) = lines[i];
            let (a2, b2, c2) = lines[j];
            let det = a1 * b2 - a2 * b1;
            if det.abs() > 1e-14 {
                cands.push(vec![(-c1 * b2 + c2 * b1) / det, (-a1 * c2 + a2 * c1) / det]);
            }
        }
    }
    cands
        .into_iter()
        .filter(|c| (0..2).all(|d| c[d] >= lo[d] - 1e-12 && c[d] <= hi[d] + 1e-12))
        .map(|c| oracle_forward(net, &[c[0].clamp(lo[0], hi[0]), c[1].clamp(lo[1], hi[1])]))
        .fold(f64::INFINITY, f64::min)
}

pub fn grid_min(net: &Network, bx: &Hyperrectangle, n: usize) -> f64 {
    let (lo, hi) = (bx.lower(), bx.upper());
    (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % n, k / n);
            let x = lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64;
            let y = lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64;
            oracle_forward(net, &[x, y])
        })
        .reduce(|| f64::INFINITY, f64::min)
}

pub fn bnb_oracle(nets: usize, grid: usize, t_gap: f64, seed: u64) -> Outcome {
    let mut r = rng(seed);
    let bx = Hyperrectangle::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let target = SetExpr::from_box(&bx);
    let cfg = BnBConfig { t_gap, max_iterations: 60, max_regions: 2_000_000, ..BnBConfig::default() };
    let mut fails = Vec::new();
    let mut worst_gap: f64 = 0.0;
    for k in 0..nets {
        let net = random_net(2, [4, 8, 16, 32][k % 4], 1, 1.5, &mut r);
        let obj = nbf::certifier::NetObjective { net: &net, mode: BoundMode::Crown };
        let res = bnb_minimize(&obj, &target, &bx, &cfg, None).unwrap();
        let g = grid_min(&net, &bx, grid);
        let exact = exact_min_2d(&net, &bx);
        worst_gap = worst_gap.max(exact - res.certified);
        let ok = res.status == BnBStatus::Converged
            && res.certified <= g + 1e-6
            && res.achieved <= g + t_gap + 1e-6
            && res.certified <= exact + SLACK
            && exact - res.certified <= t_gap + 1e-6
            && g >= exact - 1e-12;
        if !ok {
            fails.push(format!("net {k}: {:?} certified {} achieved {} grid {g} exact {exact}", res.status, res.certified, res.achieved));
        }
    }
    Outcome::new(
        fails.is_empty(),
        if fails.is_empty() {
            format!("{nets} nets, {grid}x{grid} grid, worst exact-min gap {worst_gap:.2e} (t_gap {t_gap:.0e})")
        } else {
            fails.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// checks on trained networks

/// Monte-Carlo drift `E[B~(F(x)+v)] - B(x)` on a grid over `X_s` must stay
/// below `beta + sigmas * SE` everywhere.
pub fn beta_vs_mc(net: &Network, dynm: &DynamicsModel, beta: f64, exit_value: f64, grid: usize, draws: usize, sigmas: f64) -> Outcome {
    let bb = dynm.safe_set().bbox().unwrap().intersection(dynm.state_space()).unwrap();
    let pts: Vec<Vec<f64>> = bb
        .grid(&vec![grid; dynm.state_dim()])
        .into_iter()
        .map(|c| c.center())
        .filter(|c| dynm.safe_set().contains(c))
        .collect();
    let worst = pts
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let e = mc_expectation(net, dynm, x, draws, 1000 + k as u64, exit_value).unwrap();
            let drift = e.estimate - net.forward(x).unwrap();
            (drift - sigmas * e.std_error, drift, e.std_error)
        })
        .reduce(|| (f64::NEG_INFINITY, 0.0, 0.0), |a, b| if a.0 >= b.0 { a } else { b });
    Outcome::new(
        worst.0 <= beta,
        format!(
            "{} points x {draws} draws, max drift {:.3e} (SE {:.1e}) vs beta {beta:.3e}",
            pts.len(),
            worst.1,
            worst.2
        ),
    )
}

pub fn mc_consistency(dynm: &DynamicsModel, report: &CertificationReport, x0s: usize, n_traj: usize, seed: u64) -> Outcome {
    let Some(p) = report.p_safe_lower else {
        return Outcome::new(false, "report is not certified");
    };
    let mut r = rng(seed);
    let x0s = if dynm.initial_set().as_point().is_some() { 1 } else { x0s };
    let starts = dynm.initial_set().sample(x0s, &mut r).unwrap();
    let (worst, at) = mc_psafe_worst(dynm, &starts, report.horizon, n_traj, seed).unwrap();
    Outcome::new(
        worst.estimate >= p - 3.0 * worst.std_error,
        format!(
            "worst of {x0s} x0 ({n_traj} traj each): {:.5} +- {:.1e} at {:?} vs p_safe_lower {p:.5}",
            worst.estimate,
            worst.std_error,
            at.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

pub fn noise_refinement(net: &Network, dynm: &DynamicsModel, base: &CertifyConfig, grid: usize) -> Outcome {
    let g = vec![grid; dynm.state_dim()];
    let coarse = beta_on_grid(net, dynm, &CertifyConfig { noise_cells: 32, ..base.clone() }, &g).unwrap();
    let fine = beta_on_grid(net, dynm, &CertifyConfig { noise_cells: 64, ..base.clone() }, &g).unwrap();
    Outcome::new(
        fine <= coarse + SLACK,
        format!("{grid}^{} state grid: beta {coarse:.6e} (32 cells) -> {fine:.6e} (64 cells)", dynm.state_dim()),
    )
}
