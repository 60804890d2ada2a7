//! Moment bounds of the scheme across step sizes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::Value;

use super::{ExperimentKind, ExperimentReport, Record};
use crate::engine::{simulate, SimOptions, TamingConfig};
use crate::error::{Error, Result};
use crate::grid::{to_f64, Rational, TimeGrid};
use crate::model::ModelSpec;

/// Magnitude above which an untamed run counts as diverged.
pub const BLOWUP_THRESHOLD: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct MomentConfig {
    pub horizon: Rational,
    pub taming: TamingConfig,
    pub delta_list: Vec<Rational>,
    pub n_particles: usize,
    pub p: f64,
    pub seeds: Vec<u64>,
    pub snap: bool,
    pub workers: usize,
}

enum SeedOutcome {
    Finite { sum_pow: f64, count: usize },
    BlowUp,
}

/// Per step size, the mean over particles and seeds of `sup_k |X_i(t_k)|^p`
/// on `k = 0..=M_T`. In untamed mode diverging runs (non-finite state or a
/// state above [`BLOWUP_THRESHOLD`]) are counted instead of averaged; in
/// tamed mode every run is averaged and a non-finite state is an error.
pub fn moment_sweep(model: &ModelSpec, cfg: &MomentConfig) -> Result<ExperimentReport> {
    if cfg.p.is_nan() || cfg.p < 2.0 {
        return Err(Error::config("p", "moment order must be at least 2"));
    }
    if cfg.seeds.is_empty() || cfg.delta_list.is_empty() {
        return Err(Error::config("seeds", "need at least one seed and one step size"));
    }
    let mut config = BTreeMap::new();
    config.insert("model".into(), Value::from(model.name.clone()));
    config.insert("params".into(), serde_json::to_value(&model.params)?);
    config.insert("horizon".into(), Value::from(cfg.horizon.to_string()));
    config.insert("gamma".into(), Value::from(cfg.taming.gamma));
    config.insert("tamed".into(), Value::from(cfg.taming.tamed));
    config.insert(
        "delta_list".into(),
        Value::from(cfg.delta_list.iter().map(|d| d.to_string()).collect::<Vec<_>>()),
    );
    config.insert("n_particles".into(), Value::from(cfg.n_particles));
    config.insert("p".into(), Value::from(cfg.p));
    config.insert("seeds".into(), Value::from(cfg.seeds.clone()));
    config.insert("snap".into(), Value::from(cfg.snap));
    let mut report = ExperimentReport::new(ExperimentKind::Moments, config);

    let options = SimOptions {
        workers: cfg.workers,
        track_sup: true,
        ..Default::default()
    };
    for &delta in &cfg.delta_list {
        let grid = TimeGrid::build(&model.lags, cfg.horizon, delta, cfg.snap)?;
        let outcomes: Vec<Result<SeedOutcome>> = cfg
            .seeds
            .par_iter()
            .map(
                |&seed| match simulate(model, &grid, cfg.taming, cfg.n_particles, seed, 1, &options) {
                    Ok(traj) => {
                        let sup = traj.sup_norms.expect("sup tracking requested");
                        if !cfg.taming.tamed && sup.iter().any(|s| *s > BLOWUP_THRESHOLD) {
                            Ok(SeedOutcome::BlowUp)
                        } else {
                            Ok(SeedOutcome::Finite {
                                sum_pow: sup.iter().map(|s| s.powf(cfg.p)).sum(),
                                count: sup.len(),
                            })
                        }
                    }
                    Err(Error::NonFiniteState { .. }) if !cfg.taming.tamed => Ok(SeedOutcome::BlowUp),
                    Err(e) => Err(e),
                },
            )
            .collect();
        let mut blowups = 0usize;
        let mut total = 0.0;
        let mut count = 0usize;
        for o in outcomes {
            match o? {
                SeedOutcome::BlowUp => blowups += 1,
                SeedOutcome::Finite { sum_pow, count: c } => {
                    total += sum_pow;
                    count += c;
                }
            }
        }
        let moment = if count > 0 { total / count as f64 } else { f64::NAN };
        if count == 0 {
            report.notes.push(format!("delta {delta}: every seed diverged"));
        }
        let mut rec = Record::new(to_f64(delta), to_f64(delta), moment);
        rec.p = Some(cfg.p);
        rec.blowup_count = Some(blowups);
        report.records.push(rec);
    }
    let finite: Vec<f64> = report
        .records
        .iter()
        .map(|r| r.value)
        .filter(|v| v.is_finite() && *v > 0.0)
        .collect();
    if !finite.is_empty() {
        let max = finite.iter().cloned().fold(f64::MIN, f64::max);
        let min = finite.iter().cloned().fold(f64::MAX, f64::min);
        report.stats.insert("max_min_ratio".into(), max / min);
    }
    let blowups: usize = report.records.iter().filter_map(|r| r.blowup_count).sum();
    report.stats.insert("total_blowups".into(), blowups as f64);
    Ok(report)
}
