//! Monte-Carlo estimates for cross-checking certificates.
//!
//! Trajectory `i` of a run with seed `s` draws from ChaCha8 seeded with `s` on
//! stream `i`, so estimates do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::nn::Network;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fraction of stopped trajectories from `x0` whose `H + 1` states all lie in
/// `X_s`, with its binomial standard error.
pub fn mc_psafe(dynm: &DynamicsModel, x0: &[f64], horizon: usize, n_traj: usize, seed: u64) -> Result<Estimate> {
    if n_traj == 0 {
        return Err(Error::InvalidConfig("n_traj must be positive".into()));
    }
    if !dynm.in_state_space(x0) {
        return Err(Error::StateOutsideDomain(x0.to_vec()));
    }
    let safe: usize = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let mut x = x0.to_vec();
            if !dynm.safe_set().contains(&x) {
                return 0;
            }
            for _ in 0..horizon {
                let v = dynm.noise().sample(&mut rng);
                x = dynm.step(&x, &v);
                // once outside X the process is frozen outside X_s as well
                if !dynm.in_state_space(&x) || !dynm.safe_set().contains(&x) {
                    return 0;
                }
            }
            1
        })
        .sum();
    let p = safe as f64 / n_traj as f64;
    Ok(Estimate {
        estimate: p,
        std_error: (p * (1.0 - p) / n_traj as f64).sqrt(),
        n: n_traj,
    })
}

/// Worst estimate over several initial states, each run on its own seed.
pub fn mc_psafe_worst(dynm: &DynamicsModel, x0s: &[Vec<f64>], horizon: usize, n_traj: usize, seed: u64) -> Result<(Estimate, Vec<f64>)> {
    let mut worst: Option<(Estimate, Vec<f64>)> = None;
    for (k, x0) in x0s.iter().enumerate() {
        let e = mc_psafe(dynm, x0, horizon, n_traj, seed.wrapping_add(k as u64))?;
        if worst.as_ref().is_none_or(|(w, _)| e.estimate < w.estimate) {
            worst = Some((e, x0.clone()));
        }
    }
    worst.ok_or_else(|| Error::InvalidConfig("no initial states to simulate".into()))
}

/// Sample mean and standard error of `B~(F(x) + v)`, where `B~` equals `B`
/// inside `X` and `exit_value` outside.
pub fn mc_expectation(net: &Network, dynm: &DynamicsModel, x: &[f64], n: usize, seed: u64, exit_value: f64) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    if x.len() != dynm.state_dim() || net.input_dim() != dynm.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: dynm.state_dim(),
            got: x.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fx = dynm.map(x);
    // Welford running mean and squared deviations
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 1..=n {
        let v = dynm.noise().sample(&mut rng);
        let y: Vec<f64> = fx.iter().zip(&v).map(|(a, b)| a + b).collect();
        let b = if dynm.in_state_space(&y) { net.forward_unchecked(&y)[0] } else { exit_value };
        let d = b - mean;
        mean += d / k as f64;
        m2 += d * (b - mean);
    }
    let nf = n as f64;
    let var = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
    Ok(Estimate {
        estimate: mean,
        std_error: (var / nf).sqrt(),
        n,
    })
}
