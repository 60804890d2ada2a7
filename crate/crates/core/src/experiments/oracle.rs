//! Mean-field check for the linear model: the particle mean against the
//! neutral delay ODE satisfied by `m(t) = E Y(t)`.

use std::collections::BTreeMap;

use serde_json::Value;

use super::{ExperimentKind, ExperimentReport, Record};
use crate::engine::{simulate, SimOptions, TamingConfig};
use crate::error::{Error, Result};
use crate::grid::{to_f64, Rational, TimeGrid};
use crate::model::{linear_model, LinearParams};

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub params: LinearParams,
    pub horizon: Rational,
    pub taming: TamingConfig,
    pub delta: Rational,
    pub n_particles: usize,
    pub seed: u64,
    pub workers: usize,
}

/// Heun integration of
/// `d[m - kappa m(t-1)] = [a m + b m(t-1/2) + c m(t-1)] dt`, `m = x0` on `[-1, 0]`,
/// with step `h`, which must divide `1/2` and the horizon.
pub fn integrate_mean_ode(params: &LinearParams, horizon: Rational, h: Rational) -> Result<f64> {
    let half = Rational::new(1, 2) / h;
    let total = horizon / h;
    if !half.is_integer() || !total.is_integer() || h <= Rational::from_integer(0) {
        return Err(Error::config("ode_step", format!("{h} does not divide 1/2 and T")));
    }
    let l2 = half.to_integer() as usize;
    let l = 2 * l2;
    let steps = total.to_integer() as usize;
    let hf = to_f64(h);
    let LinearParams { kappa, a, b, c, x0, .. } = *params;
    // m[j] holds m((j - l) h)
    let mut m = vec![x0; l + 1];
    m.reserve(steps);
    let field = |m: &[f64], j: usize, now: f64| a * now + b * m[j - l2] + c * m[j - l];
    let mut w = x0 - kappa * x0;
    for n in l..l + steps {
        let f0 = field(&m, n, m[n]);
        let w_pred = w + hf * f0;
        let m_pred = w_pred + kappa * m[n + 1 - l];
        let f1 = field(&m, n + 1, m_pred);
        w += 0.5 * hf * (f0 + f1);
        m.push(w + kappa * m[n + 1 - l]);
    }
    Ok(*m.last().unwrap())
}

/// Compares the particle mean at `T` with the ODE. The allowance is the
/// Monte Carlo band `3 sigma / sqrt(N)` plus `C delta^{1/2}`, where `C` is
/// read off the change of the particle mean between `2 delta` and `delta`
/// on the same noise.
pub fn meanfield_oracle(cfg: &OracleConfig) -> Result<ExperimentReport> {
    let model = linear_model(cfg.params);
    let mut config = BTreeMap::new();
    config.insert("model".into(), Value::from("linear"));
    config.insert("params".into(), serde_json::to_value(&model.params)?);
    config.insert("horizon".into(), Value::from(cfg.horizon.to_string()));
    config.insert("gamma".into(), Value::from(cfg.taming.gamma));
    config.insert("tamed".into(), Value::from(cfg.taming.tamed));
    config.insert("delta".into(), Value::from(cfg.delta.to_string()));
    config.insert("n_particles".into(), Value::from(cfg.n_particles));
    config.insert("seed".into(), Value::from(cfg.seed));
    let mut report = ExperimentReport::new(ExperimentKind::Oracle, config);

    let options = SimOptions {
        workers: cfg.workers,
        ..Default::default()
    };
    let grid = TimeGrid::build(&model.lags, cfg.horizon, cfg.delta, false)?;
    let fine = simulate(&model, &grid, cfg.taming, cfg.n_particles, cfg.seed, 1, &options)?;
    let coarse_grid = TimeGrid::build(&model.lags, cfg.horizon, cfg.delta * 2, false)?;
    let coarse = simulate(&model, &coarse_grid, cfg.taming, cfg.n_particles, cfg.seed, 2, &options)?;

    let view = fine.terminal_view();
    let mean = view.mean()[0];
    let n = cfg.n_particles as f64;
    let var = if cfg.n_particles > 1 {
        (view.second_moment() - mean * mean).max(0.0) * n / (n - 1.0)
    } else {
        0.0
    };
    let band = 3.0 * var.sqrt() / n.sqrt();
    let coarse_mean = coarse.terminal_view().mean()[0];
    let ode = integrate_mean_ode(&cfg.params, cfg.horizon, cfg.delta / 64)?;

    let delta = grid.delta_f64();
    let c_delta = (coarse_mean - mean).abs() / ((2.0 * delta).sqrt() - delta.sqrt());
    let allowed = band + c_delta * delta.sqrt();
    let gap = (mean - ode).abs();

    let mut rec = Record::new(delta, delta, mean);
    rec.reference = Some(ode);
    rec.band = Some(band);
    rec.std_error = var.sqrt() / n.sqrt();
    report.records.push(rec);
    report.stats.insert("gap".into(), gap);
    report.stats.insert("band".into(), band);
    report.stats.insert("c_delta".into(), c_delta);
    report.stats.insert("allowed".into(), allowed);
    report.stats.insert("coarse_mean".into(), coarse_mean);
    if gap > allowed {
        return Err(Error::OracleMismatch { gap, allowed });
    }
    Ok(report)
}
