//! Propagation of chaos in the particle count against a large-N self-reference.

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::Value;

use super::{elapsed_ms, mean_and_se, ExpectedSlope, ExperimentKind, ExperimentReport, Record};
use crate::engine::{simulate, SimOptions, TamingConfig, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{to_f64, Rational, TimeGrid};
use crate::model::ModelSpec;

#[derive(Debug, Clone)]
pub struct ChaosConfig {
    pub horizon: Rational,
    pub taming: TamingConfig,
    pub delta: Rational,
    pub n_list: Vec<usize>,
    pub n_reference: usize,
    pub probe_count: usize,
    pub p: f64,
    pub seed: u64,
    pub snap: bool,
    pub workers: usize,
}

/// Empirical-measure exponent of the chaos bound for order `p` in dimension `d`
/// (log factor at `p = d/2` dropped).
pub fn measure_exponent(p: f64, d: usize) -> f64 {
    let half_d = d as f64 / 2.0;
    if p >= half_d {
        0.5
    } else {
        p / d as f64
    }
}

/// `((p - eps) / p)^{floor(T / rho)}`.
pub fn dampening(p: f64, eps: f64, horizon: f64, rho: f64) -> f64 {
    ((p - eps) / p).powi((horizon / rho).floor() as i32)
}

/// For each `N`, averages `sup_k |X^{i,N}(t_k) - X^{i,N_ref}(t_k)|^p` over the
/// first `probe_count` particles. Particle `i` has the same Brownian path and
/// initial copy in every run, so the difference isolates the particle-count
/// effect.
pub fn chaos_study(model: &ModelSpec, cfg: &ChaosConfig) -> Result<ExperimentReport> {
    if cfg.probe_count == 0 {
        return Err(Error::config("probe_count", "must be positive"));
    }
    if cfg.n_list.is_empty() {
        return Err(Error::config("n_list", "at least one particle count is required"));
    }
    let n_min = *cfg.n_list.iter().min().unwrap();
    let n_max = *cfg.n_list.iter().max().unwrap();
    if cfg.probe_count > n_min {
        return Err(Error::config(
            "probe_count",
            format!("exceeds the smallest N = {n_min}"),
        ));
    }
    if cfg.n_reference <= n_max {
        return Err(Error::config(
            "n_reference",
            format!("must exceed the largest N = {n_max}"),
        ));
    }
    if cfg.p.is_nan() || cfg.p < 1.0 {
        return Err(Error::config("p", "order must be at least 1"));
    }
    let mut n_list = cfg.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();

    let mut config = BTreeMap::new();
    config.insert("model".into(), Value::from(model.name.clone()));
    config.insert("params".into(), serde_json::to_value(&model.params)?);
    config.insert("horizon".into(), Value::from(cfg.horizon.to_string()));
    config.insert("gamma".into(), Value::from(cfg.taming.gamma));
    config.insert("tamed".into(), Value::from(cfg.taming.tamed));
    config.insert("delta".into(), Value::from(cfg.delta.to_string()));
    config.insert("n_list".into(), Value::from(n_list.clone()));
    config.insert("n_reference".into(), Value::from(cfg.n_reference));
    config.insert("probe_count".into(), Value::from(cfg.probe_count));
    config.insert("p".into(), Value::from(cfg.p));
    config.insert("seed".into(), Value::from(cfg.seed));
    config.insert("snap".into(), Value::from(cfg.snap));
    let mut report = ExperimentReport::new(ExperimentKind::Chaos, config);

    let grid = TimeGrid::build(&model.lags, cfg.horizon, cfg.delta, cfg.snap)?;
    let options = SimOptions {
        workers: cfg.workers,
        probe_particles: cfg.probe_count,
        ..Default::default()
    };
    let run = |n: usize| simulate(model, &grid, cfg.taming, n, cfg.seed, 1, &options);
    let start = Instant::now();
    let reference = run(cfg.n_reference)?;
    report.stats.insert("reference_wall_ms".into(), elapsed_ms(start));

    for &n in &n_list {
        let start = Instant::now();
        let traj = run(n)?;
        let per_probe = sup_differences(&traj, &reference, cfg.p);
        let (mean, se) = mean_and_se(&per_probe);
        let mut rec = Record::new(n as f64, n as f64, mean);
        rec.std_error = se;
        rec.wall_ms = elapsed_ms(start);
        rec.p = Some(cfg.p);
        report.records.push(rec);
    }
    if report.records.iter().all(|r| r.value > 0.0) {
        report.fit()?;
    } else {
        report.notes.push("zero proxy error at some N: slope not fitted".into());
    }

    let d = model.dim_state;
    let base = measure_exponent(cfg.p, d);
    let t = to_f64(cfg.horizon);
    let rho = to_f64(model.max_delay());
    report.expected.push(ExpectedSlope {
        label: "contractive delays (lambda = 1)".into(),
        slope: -base,
    });
    report.expected.push(ExpectedSlope {
        label: "general delays, eps -> 0".into(),
        slope: -base * dampening(cfg.p, 0.0, t, rho),
    });
    report.expected.push(ExpectedSlope {
        label: "general delays, eps = 1".into(),
        slope: -base * dampening(cfg.p, 1.0, t, rho),
    });
    Ok(report)
}

fn sup_differences(run: &Trajectory, reference: &Trajectory, p: f64) -> Vec<f64> {
    let d = run.dim;
    run.probes
        .iter()
        .zip(&reference.probes)
        .map(|(a, b)| {
            a.chunks_exact(d)
                .zip(b.chunks_exact(d))
                .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
                .fold(0.0f64, f64::max)
                .powf(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponents() {
        assert_eq!(measure_exponent(2.0, 1), 0.5);
        assert_eq!(measure_exponent(2.0, 4), 0.5);
        assert_eq!(measure_exponent(2.0, 6), 2.0 / 6.0);
        assert_eq!(dampening(2.0, 0.0, 4.0, 1.0), 1.0);
        assert_eq!(dampening(2.0, 1.0, 4.0, 2.0), 0.25);
    }
}
