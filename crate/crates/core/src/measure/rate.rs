//! Empirical-measure convergence rate: how fast `E W_p^p(mu_N, mu)` decays in `N`.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::Value;

use super::quantile_cost_1d;
use crate::error::{Error, Result};
use crate::experiments::{elapsed_ms, mean_and_se, ExpectedSlope, ExperimentKind, ExperimentReport, Record};
use crate::noise::{domain, keyed_normal, keyed_uniform};

/// One-dimensional i.i.d. sampling law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Normal,
    Uniform,
    Constant(f64),
}

impl Sampler {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "normal" | "gaussian" => Ok(Sampler::Normal),
            "uniform" => Ok(Sampler::Uniform),
            "constant" | "point-mass" => Ok(Sampler::Constant(0.0)),
            other => Err(Error::config("sampler", format!("unknown sampler `{other}`"))),
        }
    }

    fn name(&self) -> String {
        match self {
            Sampler::Normal => "normal".into(),
            Sampler::Uniform => "uniform".into(),
            Sampler::Constant(c) => format!("constant({c})"),
        }
    }

    fn draw(&self, words: &[u64]) -> f64 {
        match self {
            Sampler::Normal => keyed_normal(words),
            Sampler::Uniform => keyed_uniform(words),
            Sampler::Constant(c) => *c,
        }
    }

    fn sorted_sample(&self, seed: u64, stream: u64, replicate: u64, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n as u64)
            .map(|j| self.draw(&[domain::SAMPLER, seed, stream, replicate, j]))
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// For each `N` in `n_list`, averages `W_p^p(mu_N, mu_ref)` over `replications`
/// independent samples, where `mu_ref` is a `reference_size`-point empirical
/// stand-in for the law. Slope is fitted on `log E W_p^p` against `log N`.
pub fn fg_rate_check(
    sampler: Sampler,
    p: f64,
    n_list: &[usize],
    replications: usize,
    seed: u64,
    reference_size: usize,
) -> Result<ExperimentReport> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::config("p", "order must be at least 1"));
    }
    if replications == 0 {
        return Err(Error::config("replications", "must be positive"));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::config("n_list", "sample sizes must be positive"));
    }
    if reference_size == 0 {
        return Err(Error::config("reference_size", "must be positive"));
    }
    let mut config = BTreeMap::new();
    config.insert("sampler".into(), Value::from(sampler.name()));
    config.insert("p".into(), Value::from(p));
    config.insert("n_list".into(), Value::from(n_list.to_vec()));
    config.insert("replications".into(), Value::from(replications));
    config.insert("seed".into(), Value::from(seed));
    config.insert("reference_size".into(), Value::from(reference_size));
    let mut report = ExperimentReport::new(ExperimentKind::FgRate, config);

    let reference = sampler.sorted_sample(seed, u64::MAX, 0, reference_size);
    for &n in n_list {
        let start = Instant::now();
        let costs: Vec<f64> = (0..replications as u64)
            .into_par_iter()
            .map(|r| quantile_cost_1d(&sampler.sorted_sample(seed, n as u64, r, n), &reference, p))
            .collect();
        let (mean, se) = mean_and_se(&costs);
        let mut rec = Record::new(n as f64, n as f64, mean);
        rec.std_error = se;
        rec.wall_ms = elapsed_ms(start);
        rec.p = Some(p);
        report.records.push(rec);
    }
    if report.records.iter().all(|r| r.value > 0.0) {
        report.fit()?;
    } else {
        report.notes.push("zero distances: slope not fitted".into());
    }
    report.expected.push(ExpectedSlope {
        label: "upper-bound exponent for p > d/2".into(),
        slope: -0.5,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_has_zero_distance() {
        let rep = fg_rate_check(Sampler::Constant(1.5), 2.0, &[4, 8, 16], 3, 1, 1000).unwrap();
        assert!(rep.records.iter().all(|r| r.value == 0.0));
        assert!(rep.slope.is_none());
    }

    #[test]
    fn distances_shrink_with_n() {
        let rep = fg_rate_check(Sampler::Uniform, 2.0, &[16, 256, 4096], 10, 2, 100_000).unwrap();
        let v: Vec<f64> = rep.records.iter().map(|r| r.value).collect();
        assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");
        assert!(rep.slope.unwrap().slope < -0.35);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(fg_rate_check(Sampler::Normal, 0.5, &[4], 1, 0, 10).is_err());
        assert!(fg_rate_check(Sampler::Normal, 2.0, &[4], 0, 0, 10).is_err());
        assert!(fg_rate_check(Sampler::Normal, 2.0, &[0], 1, 0, 10).is_err());
        assert!(Sampler::parse("cauchy").is_err());
    }
}
