use std::fmt::Write as _;
use std::path::Path;

use nbf::certifier::{certify as run_certify, CertificationReport, Verdict};
use nbf::json::{fmt17, to_string_pretty};
use nbf::nn::Network;
use nbf::relaxation::{crown_bounds, linear_to_interval, Hyperrectangle};
use nbf::trainer::train as run_train;
use nbf::validator::{mc_expectation, mc_psafe_worst};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::{CertifyArgs, CliError, ContourArgs, TrainArgs, ValidateArgs};

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_net(path: &Path, cfg: &Config) -> Result<Network, CliError> {
    let net = Network::from_json(&read(path)?)?;
    let n = cfg.dynamics()?.state_dim();
    if net.input_dim() != n || !net.is_barrier_shaped() {
        return Err(CliError::Config(format!(
            "{}: network must map {n} inputs to one output through an identity final layer",
            path.display()
        )));
    }
    Ok(net)
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = to_string_pretty(value).map_err(nbf::Error::from)?;
    if let Some(p) = out {
        write(p, &format!("{text}\n"))?;
    }
    println!("{text}");
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<u8, CliError> {
    let mut cfg = Config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    let dynm = cfg.dynamics()?;
    std::fs::create_dir_all(&args.out).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;
    write(&args.out.join("config.toml"), &cfg.to_toml())?;
    let net_path = args.out.join("net.json");
    let metrics_path = args.out.join("metrics.csv");
    let mut csv = String::from("epoch,loss,violation,gamma_m,beta_m,kappa\n");
    let (net, history) = run_train(&dynm, &cfg.network.hidden, &cfg.training, |m, net| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  violation {:.6}  gamma_m {:.6}  beta_m {:.6}  kappa {:.4}",
            m.epoch, m.loss, m.violation, m.gamma_m, m.beta_m, m.kappa
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            m.epoch,
            fmt17(m.loss),
            fmt17(m.violation),
            fmt17(m.gamma_m),
            fmt17(m.beta_m),
            fmt17(m.kappa)
        );
        // checkpoint after every epoch
        std::fs::write(&net_path, net.to_json()?)?;
        std::fs::write(&metrics_path, &csv)?;
        Ok(())
    })?;
    write(&net_path, &net.to_json()?)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        net: String,
        metrics: String,
        epochs: usize,
        last: Option<&'a nbf::trainer::EpochMetrics>,
    }
    print_json(
        &Summary {
            net: net_path.display().to_string(),
            metrics: metrics_path.display().to_string(),
            epochs: history.len(),
            last: history.last(),
        },
        None,
    )?;
    Ok(0)
}

/// 0 when both set conditions are certified, 4 when either is violated,
/// 5 otherwise.
pub fn verdict_code(report: &CertificationReport) -> u8 {
    let verdicts = [report.cond_nonneg.verdict, report.cond_unsafe.verdict];
    if verdicts.contains(&Verdict::Violated) {
        4
    } else if verdicts.contains(&Verdict::Inconclusive) {
        5
    } else {
        0
    }
}

pub fn certify(args: &CertifyArgs) -> Result<u8, CliError> {
    let mut cfg = Config::load(&args.config)?;
    if let Some(t) = args.t_gap {
        cfg.certification.t_gap = t;
    }
    if let Some(m) = args.mode {
        cfg.certification.mode = m;
    }
    cfg.validate()?;
    let net = load_net(&args.net, &cfg)?;
    let report = run_certify(&net, &cfg.dynamics()?, cfg.training.horizon, &cfg.certify_config())?;
    print_json(&report, args.out.as_deref())?;
    Ok(verdict_code(&report))
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    system: String,
    horizon: usize,
    seed: u64,
    n_traj: usize,
    x0_samples: usize,
    estimate: f64,
    std_error: f64,
    worst_x0: Vec<f64>,
    drift_points: usize,
    max_drift: Option<f64>,
    max_drift_std_error: Option<f64>,
    p_safe_lower: Option<f64>,
    /// `estimate >= p_safe_lower - 3 * std_error`
    consistent: Option<bool>,
    beta: Option<f64>,
    /// `max_drift <= beta + 5 * max_drift_std_error`
    drift_within_beta: Option<bool>,
}

pub fn validate(args: &ValidateArgs) -> Result<u8, CliError> {
    let cfg = Config::load(&args.config)?;
    if args.n_traj == 0 || args.x0_samples == 0 {
        return Err(CliError::Config("--n-traj and --x0-samples must be positive".into()));
    }
    if args.drift_points > 0 && args.drift_samples == 0 {
        return Err(CliError::Config("--drift-samples must be positive".into()));
    }
    let dynm = cfg.dynamics()?;
    let net = load_net(&args.net, &cfg)?;
    let certificate: Option<CertificationReport> = match &args.certificate {
        Some(p) => Some(serde_json::from_str(&read(p)?).map_err(nbf::Error::from)?),
        None => None,
    };
    let horizon = certificate.as_ref().map_or(cfg.training.horizon, |c| c.horizon);
    let exit_value = certificate.as_ref().map_or(cfg.certification.exit_value, |c| c.exit_value);

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let x0s = dynm.initial_set().sample(args.x0_samples, &mut rng)?;
    let (worst, worst_x0) = mc_psafe_worst(&dynm, &x0s, horizon, args.n_traj, args.seed)?;

    let xs = dynm.safe_set().sample(args.drift_points, &mut rng)?;
    let drifts = xs
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let e = mc_expectation(&net, &dynm, x, args.drift_samples, args.seed.wrapping_add(k as u64), exit_value)?;
            Ok((e.estimate - net.forward(x)?, e.std_error))
        })
        .collect::<nbf::Result<Vec<_>>>()?;
    let max = drifts.iter().copied().fold(None, |acc: Option<(f64, f64)>, d| match acc {
        Some(a) if a.0 >= d.0 => Some(a),
        _ => Some(d),
    });

    let p_safe_lower = certificate.as_ref().and_then(|c| c.p_safe_lower);
    let beta = certificate.as_ref().map(|c| c.beta);
    let report = ValidationReport {
        system: cfg.system.name.clone(),
        horizon,
        seed: args.seed,
        n_traj: args.n_traj,
        x0_samples: args.x0_samples,
        estimate: worst.estimate,
        std_error: worst.std_error,
        worst_x0,
        drift_points: args.drift_points,
        max_drift: max.map(|m| m.0),
        max_drift_std_error: max.map(|m| m.1),
        p_safe_lower,
        consistent: p_safe_lower.map(|p| worst.estimate >= p - 3.0 * worst.std_error),
        beta,
        drift_within_beta: beta.zip(max).map(|(b, (d, se))| d <= b + 5.0 * se),
    };
    print_json(&report, args.out.as_deref())?;
    Ok(0)
}

fn parse_grid(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config(format!("--grid: expected WxH with positive integers, got `{s}`"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn parse_slice(s: &str) -> Result<(usize, f64), CliError> {
    let bad = || CliError::Config(format!("--slice: expected dim=value, got `{s}`"));
    let (d, v) = s.split_once('=').ok_or_else(bad)?;
    let v: f64 = v.trim().parse().map_err(|_| bad())?;
    if !v.is_finite() {
        return Err(bad());
    }
    Ok((d.trim().parse().map_err(|_| bad())?, v))
}

pub fn export_contours(args: &ContourArgs) -> Result<u8, CliError> {
    let cfg = Config::load(&args.config)?;
    let dynm = cfg.dynamics()?;
    let net = load_net(&args.net, &cfg)?;
    let (w, h) = parse_grid(&args.grid)?;
    let space = dynm.state_space();
    let n = dynm.state_dim();
    let (free, fixed) = match (n, &args.slice) {
        (2, None) => ((0, 1), None),
        (3, Some(s)) => {
            let (d, v) = parse_slice(s)?;
            if d >= 3 {
                return Err(CliError::Config(format!("--slice: dimension {d} out of range")));
            }
            if !(space.lower()[d]..=space.upper()[d]).contains(&v) {
                return Err(CliError::Config(format!("--slice: value {v} lies outside the state space")));
            }
            let rest: Vec<usize> = (0..3).filter(|&k| k != d).collect();
            ((rest[0], rest[1]), Some((d, v)))
        }
        (3, None) => return Err(CliError::Config("--slice dim=value is required for 3-D systems".into())),
        (2, Some(_)) => return Err(CliError::Config("--slice only applies to 3-D systems".into())),
        _ => return Err(CliError::Config(format!("contours need a 2-D or 3-D system, got {n}-D"))),
    };
    let (a, b) = free;
    let step = |d: usize, cells: usize| (space.upper()[d] - space.lower()[d]) / cells as f64;
    let (sa, sb) = (step(a, w), step(b, h));
    let mode = cfg.certification.mode;
    let rows = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % w, k / w);
            let mut lo = space.lower().to_vec();
            let mut hi = space.upper().to_vec();
            lo[a] = space.lower()[a] + i as f64 * sa;
            hi[a] = if i + 1 == w { space.upper()[a] } else { lo[a] + sa };
            lo[b] = space.lower()[b] + j as f64 * sb;
            hi[b] = if j + 1 == h { space.upper()[b] } else { lo[b] + sb };
            if let Some((d, v)) = fixed {
                lo[d] = v;
                hi[d] = v;
            }
            let cell = Hyperrectangle::new(lo, hi)?;
            let c = cell.center();
            let bounds = linear_to_interval(&crown_bounds(&net, &cell, mode)?);
            Ok(format!(
                "{},{},{},{},{}\n",
                fmt17(c[a]),
                fmt17(c[b]),
                fmt17(net.forward(&c)?),
                fmt17(bounds.lo[0]),
                fmt17(bounds.hi[0])
            ))
        })
        .collect::<nbf::Result<Vec<String>>>()?;
    let mut csv = String::with_capacity(rows.len() * 100 + 16);
    csv.push_str("x1,x2,B,lo,hi\n");
    for r in rows {
        csv.push_str(&r);
    }
    write(&args.out, &csv)?;
    eprintln!("wrote {} rows to {}", w * h, args.out.display());
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("320x320").unwrap(), (320, 320));
        assert_eq!(parse_grid("1X2").unwrap(), (1, 2));
        for bad in ["0x3", "3", "ax2", "-1x2"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn slice_parsing() {
        assert_eq!(parse_slice("2=0.5").unwrap(), (2, 0.5));
        assert!(parse_slice("2").is_err());
        assert!(parse_slice("x=1").is_err());
        assert!(parse_slice("1=inf").is_err());
    }
}
