//! Experiment harnesses and their reports.
//!
//! Each harness returns an [`ExperimentReport`]: one [`Record`] per level or
//! particle count, a log-log slope fit when at least three points exist, the
//! theoretical slopes to compare against, and an echo of the configuration.
//! Reports serialize to a CSV whose bytes depend only on the configuration
//! and seed, plus a JSON-lines sidecar that also carries wall times.

mod chaos;
mod convergence;
mod moments;
mod oracle;

pub use chaos::{chaos_study, ChaosConfig};
pub use convergence::{convergence_study, ConvergenceConfig};
pub use moments::{moment_sweep, MomentConfig, BLOWUP_THRESHOLD};
pub use oracle::{integrate_mean_ode, meanfield_oracle, OracleConfig};

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::noise::hash_words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    Chaos,
    Moments,
    Oracle,
    FgRate,
}

impl ExperimentKind {
    pub fn csv_header(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Convergence => &["run_id", "level_exponent", "delta", "err", "wall_ms"],
            ExperimentKind::Chaos => &["run_id", "n_particles", "proxy_error", "p", "wall_ms"],
            ExperimentKind::Moments => &["run_id", "delta", "p", "moment", "blowup_count"],
            ExperimentKind::Oracle => &["run_id", "mean_particle", "mean_ode", "gap", "band"],
            ExperimentKind::FgRate => &["run_id", "n_samples", "p", "w_pp", "std_error", "wall_ms"],
        }
    }
}

/// One measured point of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    /// Level exponent, particle count or step size, depending on the kind.
    pub label: f64,
    /// Abscissa used for the slope fit.
    pub x: f64,
    pub value: f64,
    pub std_error: f64,
    pub wall_ms: f64,
    pub p: Option<f64>,
    pub blowup_count: Option<usize>,
    pub reference: Option<f64>,
    pub band: Option<f64>,
}

impl Record {
    pub fn new(label: f64, x: f64, value: f64) -> Self {
        Record {
            label,
            x,
            value,
            std_error: 0.0,
            wall_ms: 0.0,
            p: None,
            blowup_count: None,
            reference: None,
            band: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedSlope {
    pub label: String,
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub run_id: String,
    pub records: Vec<Record>,
    pub slope: Option<SlopeFit>,
    pub expected: Vec<ExpectedSlope>,
    pub config: BTreeMap<String, Value>,
    /// Scalar summaries such as the moment ratio or the oracle gap.
    pub stats: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(kind: ExperimentKind, config: BTreeMap<String, Value>) -> Self {
        let run_id = run_id_for(kind, &config);
        ExperimentReport {
            kind,
            run_id,
            records: Vec::new(),
            slope: None,
            expected: Vec::new(),
            config,
            stats: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Fits the log-log slope of `value` against `x` when there are enough points.
    pub fn fit(&mut self) -> Result<()> {
        let points: Vec<(f64, f64)> = self.records.iter().map(|r| (r.x, r.value)).collect();
        if points.len() >= 3 {
            self.slope = Some(fit_slope(&points)?);
        }
        Ok(())
    }

    pub fn records_finite(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.value.is_finite() && r.x.is_finite() && r.std_error.is_finite())
    }

    /// Writes the CSV. `wall_ms` columns are written as 0 unless `timings`
    /// is set, which keeps the bytes reproducible.
    pub fn write_csv<W: Write>(&self, out: W, timings: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.kind.csv_header())?;
        let wall = |r: &Record| if timings { fmt(r.wall_ms) } else { "0".into() };
        for r in &self.records {
            let row: Vec<String> = match self.kind {
                ExperimentKind::Convergence => vec![self.run_id.clone(), fmt(r.label), fmt(r.x), fmt(r.value), wall(r)],
                ExperimentKind::Chaos => vec![
                    self.run_id.clone(),
                    fmt(r.x),
                    fmt(r.value),
                    fmt(r.p.unwrap_or(f64::NAN)),
                    wall(r),
                ],
                ExperimentKind::Moments => vec![
                    self.run_id.clone(),
                    fmt(r.x),
                    fmt(r.p.unwrap_or(f64::NAN)),
                    fmt(r.value),
                    r.blowup_count.unwrap_or(0).to_string(),
                ],
                ExperimentKind::Oracle => vec![
                    self.run_id.clone(),
                    fmt(r.value),
                    fmt(r.reference.unwrap_or(f64::NAN)),
                    fmt((r.value - r.reference.unwrap_or(f64::NAN)).abs()),
                    fmt(r.band.unwrap_or(f64::NAN)),
                ],
                ExperimentKind::FgRate => vec![
                    self.run_id.clone(),
                    fmt(r.x),
                    fmt(r.p.unwrap_or(f64::NAN)),
                    fmt(r.value),
                    fmt(r.std_error),
                    wall(r),
                ],
            };
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self, timings: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timings).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Writes the JSON-lines sidecar: a header object followed by one object per record.
    pub fn write_sidecar<W: Write>(&self, mut out: W, created_unix: u64) -> Result<()> {
        let header = serde_json::json!({
            "kind": self.kind,
            "run_id": self.run_id,
            "created_unix": created_unix,
            "slope": self.slope,
            "expected": self.expected,
            "config": self.config,
            "stats": self.stats,
            "notes": self.notes,
        });
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        let mut s = format!("{:?} run {}: {} points", self.kind, self.run_id, self.records.len());
        if let Some(fit) = self.slope {
            s.push_str(&format!(
                ", fitted slope {:.4} (rms residual {:.3})",
                fit.slope, fit.residual
            ));
        }
        for e in &self.expected {
            s.push_str(&format!(", expected {} {:.3}", e.label, e.slope));
        }
        for (k, v) in &self.stats {
            if !k.ends_with("wall_ms") {
                s.push_str(&format!(", {k} {v:.4e}"));
            }
        }
        s
    }
}

/// Shortest round-trip decimal form.
fn fmt(x: f64) -> String {
    format!("{x}")
}

fn run_id_for(kind: ExperimentKind, config: &BTreeMap<String, Value>) -> String {
    run_id_of(&serde_json::to_string(&(kind, config)).expect("config serializes"))
}

/// 16 hex digits identifying a configuration given in canonical text form.
pub fn run_id_of(text: &str) -> String {
    let words: Vec<u64> = text
        .as_bytes()
        .chunks(8)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .collect();
    format!("{:016x}", hash_words(&words))
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::SlopeUndefined { points: points.len() });
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::SlopeUndefined { points: points.len() });
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(SlopeFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
    })
}

/// Mean and standard error of a sample.
pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub(crate) fn elapsed_ms(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
