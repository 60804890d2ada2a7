//! Strong convergence in the step size against a fine self-reference.

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::Value;

use super::{elapsed_ms, ExpectedSlope, ExperimentKind, ExperimentReport, Record};
use crate::engine::{simulate, SimOptions, TamingConfig};
use crate::error::{Error, Result};
use crate::grid::{dyadic, to_f64, Rational, TimeGrid};
use crate::measure::pairwise_sum;
use crate::model::ModelSpec;

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub horizon: Rational,
    pub taming: TamingConfig,
    pub n_particles: usize,
    /// Reference step is `2^{-finest_exponent}`.
    pub finest_exponent: u32,
    /// Comparison steps `2^{-e}`, each coarser than the reference.
    pub level_exponents: Vec<u32>,
    pub seed: u64,
    pub snap: bool,
    pub workers: usize,
}

/// Simulates the reference and every level on the same fine Brownian path
/// and the same initial copies, then reports
/// `err = [(1/N) sum_i |X_ref^i(T) - X_level^i(T)|^2]^{1/2}` per level and
/// the slope of `log err` against `log delta`.
pub fn convergence_study(model: &ModelSpec, cfg: &ConvergenceConfig) -> Result<ExperimentReport> {
    if cfg.level_exponents.len() < 3 {
        return Err(Error::SlopeUndefined {
            points: cfg.level_exponents.len(),
        });
    }
    if let Some(e) = cfg
        .level_exponents
        .iter()
        .find(|&&e| e >= cfg.finest_exponent || e == 0)
    {
        return Err(Error::config(
            "level_exponents",
            format!(
                "level 2^-{e} must be coarser than the reference 2^-{} and below 1",
                cfg.finest_exponent
            ),
        ));
    }
    if cfg.finest_exponent > 40 {
        return Err(Error::config("finest_exponent", "reference step too small"));
    }
    let mut levels = cfg.level_exponents.clone();
    levels.sort_unstable();
    levels.dedup();

    let mut config = BTreeMap::new();
    config.insert("model".into(), Value::from(model.name.clone()));
    config.insert("params".into(), serde_json::to_value(&model.params)?);
    config.insert("horizon".into(), Value::from(cfg.horizon.to_string()));
    config.insert("gamma".into(), Value::from(cfg.taming.gamma));
    config.insert("tamed".into(), Value::from(cfg.taming.tamed));
    config.insert("n_particles".into(), Value::from(cfg.n_particles));
    config.insert("finest_exponent".into(), Value::from(cfg.finest_exponent));
    config.insert("level_exponents".into(), Value::from(levels.clone()));
    config.insert("seed".into(), Value::from(cfg.seed));
    config.insert("snap".into(), Value::from(cfg.snap));
    let mut report = ExperimentReport::new(ExperimentKind::Convergence, config);

    let options = SimOptions {
        workers: cfg.workers,
        ..Default::default()
    };
    let ref_grid = TimeGrid::build(&model.lags, cfg.horizon, dyadic(cfg.finest_exponent), cfg.snap)?;
    let start = Instant::now();
    let reference = simulate(model, &ref_grid, cfg.taming, cfg.n_particles, cfg.seed, 1, &options)?;
    report.stats.insert("reference_wall_ms".into(), elapsed_ms(start));
    let mut snaps = BTreeMap::new();
    snaps.insert(cfg.finest_exponent.to_string(), serde_json::to_value(ref_grid.snaps())?);

    let d = model.dim_state;
    let n = cfg.n_particles;
    for &e in levels.iter().rev() {
        let grid = TimeGrid::build(&model.lags, cfg.horizon, dyadic(e), cfg.snap)?;
        snaps.insert(e.to_string(), serde_json::to_value(grid.snaps())?);
        let ratio = 1u64 << (cfg.finest_exponent - e);
        let start = Instant::now();
        let level = simulate(model, &grid, cfg.taming, n, cfg.seed, ratio, &options)?;
        let sq: Vec<f64> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|c| (reference.terminal[i * d + c] - level.terminal[i * d + c]).powi(2))
                    .sum()
            })
            .collect();
        let mean_sq = pairwise_sum(n, &|i| sq[i]) / n as f64;
        let err = mean_sq.sqrt();
        let se_sq = if n > 1 {
            (sq.iter().map(|s| (s - mean_sq).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt()
        } else {
            0.0
        };
        let mut rec = Record::new(e as f64, to_f64(dyadic(e)), err);
        rec.std_error = if err > 0.0 { se_sq / (2.0 * err) } else { 0.0 };
        rec.wall_ms = elapsed_ms(start);
        report.records.push(rec);
    }
    report
        .config
        .insert("snapped_lags".into(), serde_json::to_value(snaps)?);

    if report.records.iter().all(|r| r.value > 0.0) {
        report.fit()?;
    } else {
        report.notes.push("zero error at some level: slope not fitted".into());
    }
    report.expected.push(ExpectedSlope {
        label: "strong order gamma".into(),
        slope: cfg.taming.gamma.min(0.5),
    });
    Ok(report)
}
