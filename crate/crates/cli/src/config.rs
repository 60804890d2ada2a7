//! Run configuration: command-line flags layered over an optional TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use mvdelay_core::grid::dyadic;
use mvdelay_core::{parse_rational, Error, Rational, Result};

pub const OUT_ENV: &str = "MVDELAY_OUT";

/// A rational given in a TOML file either as an integer or as a string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RationalText {
    Int(i64),
    Text(String),
}

impl RationalText {
    fn into_text(self) -> String {
        match self {
            RationalText::Int(i) => i.to_string(),
            RationalText::Text(s) => s,
        }
    }
}

/// Keys accepted in a `--config` file. Any other key is rejected.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub params: Option<BTreeMap<String, f64>>,
    pub horizon: Option<RationalText>,
    pub delta: Option<RationalText>,
    pub deltas: Option<Vec<RationalText>>,
    pub gamma: Option<f64>,
    pub untamed: Option<bool>,
    pub n_particles: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub snap: Option<bool>,
    pub levels: Option<Vec<u32>>,
    pub finest: Option<u32>,
    pub n_list: Option<Vec<usize>>,
    pub n_ref: Option<usize>,
    pub probes: Option<usize>,
    pub p: Option<f64>,
    pub replications: Option<usize>,
    pub reference_size: Option<usize>,
    pub sampler: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub timings: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config("config", e.to_string().trim().to_string()))
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to per-subcommand defaults.
#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// TOML file with flat keys; flags given on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in model: example1, example2 or linear.
    #[arg(long)]
    pub model: Option<String>,
    /// Model parameter override, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Horizon T as n/d, integer or decimal.
    #[arg(short = 'T', long)]
    pub horizon: Option<String>,
    /// Step size as n/d or decimal (exponent notation is rejected).
    #[arg(long)]
    pub delta: Option<String>,
    /// Step sizes for the moment sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<String>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Classical Euler-Maruyama step without taming.
    #[arg(long)]
    pub untamed: bool,
    #[arg(short = 'N', long = "particles")]
    pub n_particles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seeds for the moment sweep: comma list or a range `a..b`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Snap delays onto the grid.
    #[arg(long, conflicts_with = "no_snap")]
    pub snap: bool,
    #[arg(long)]
    pub no_snap: bool,
    /// Level exponents e (step 2^-e), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u32>>,
    /// Reference exponent for the convergence study.
    #[arg(long)]
    pub finest: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    #[arg(long)]
    pub n_ref: Option<usize>,
    /// Probe particles (chaos) or recorded particles (simulate).
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(short = 'p', long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub reference_size: Option<usize>,
    /// Sampling law for fg-rate: normal, uniform or constant.
    #[arg(long)]
    pub sampler: Option<String>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory (default from MVDELAY_OUT, else ./results).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write measured wall times into the CSV instead of zeros.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Convergence,
    Chaos,
    Moments,
    FgRate,
    OracleMean,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub model: String,
    pub params: BTreeMap<String, String>,
    pub horizon: String,
    pub delta: String,
    pub deltas: Vec<String>,
    pub gamma: f64,
    pub untamed: bool,
    pub n_particles: usize,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub snap: Option<bool>,
    pub levels: Vec<u32>,
    pub finest: u32,
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub probes: usize,
    pub p: f64,
    pub replications: usize,
    pub reference_size: usize,
    pub sampler: String,
    pub workers: usize,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub timings: bool,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::config("seeds", format!("expected a comma list or a..b, got `{text}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn parse_param(text: &str) -> Result<(String, String)> {
    match text.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::config("param", format!("expected KEY=VALUE, got `{text}`"))),
    }
}

impl RunConfig {
    pub fn resolve(command: Command, flags: Flags, env_out: Option<PathBuf>) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let model = flags.model.or(file.model).unwrap_or_else(|| match command {
            Command::Chaos | Command::OracleMean => "linear".into(),
            _ => "example1".into(),
        });
        let mut params: BTreeMap<String, String> = file
            .params
            .unwrap_or_default()
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect();
        for p in &flags.params {
            let (k, v) = parse_param(p)?;
            params.insert(k, v);
        }
        let short_horizon = matches!(command, Command::Chaos | Command::OracleMean);
        let horizon = flags
            .horizon
            .or(file.horizon.map(RationalText::into_text))
            .unwrap_or_else(|| if short_horizon { "2" } else { "4" }.into());
        let delta = flags
            .delta
            .or(file.delta.map(RationalText::into_text))
            .unwrap_or_else(|| if command == Command::Chaos { "1/256" } else { "1/1024" }.into());
        let deltas = flags
            .deltas
            .or(file
                .deltas
                .map(|v| v.into_iter().map(RationalText::into_text).collect()))
            .unwrap_or_else(|| (6..=10).map(|e| dyadic(e).to_string()).collect());
        let seeds = match flags.seeds {
            Some(s) => parse_seeds(&s)?,
            None => file.seeds.unwrap_or_else(|| (0..20).collect()),
        };
        let snap = if flags.snap {
            Some(true)
        } else if flags.no_snap {
            Some(false)
        } else {
            file.snap
        };
        let n_list = flags.n_list.or(file.n_list).unwrap_or_else(|| match command {
            Command::FgRate => (5..=12).map(|e| 1usize << e).collect(),
            _ => vec![64, 128, 256, 512, 1024],
        });
        let n_particles = flags.n_particles.or(file.n_particles).unwrap_or(match command {
            Command::Convergence => 500,
            Command::Moments => 200,
            Command::OracleMean => 2000,
            _ => 100,
        });
        let probes = flags.probes.or(file.probes).unwrap_or(match command {
            Command::Chaos => n_list.iter().copied().min().unwrap_or(0),
            _ => n_particles.min(10),
        });
        let cfg = RunConfig {
            command,
            model,
            params,
            horizon,
            delta,
            deltas,
            gamma: flags.gamma.or(file.gamma).unwrap_or(0.5),
            untamed: flags.untamed || file.untamed.unwrap_or(false),
            n_particles,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            seeds,
            snap,
            levels: flags.levels.or(file.levels).unwrap_or_else(|| vec![9, 10, 11, 12]),
            finest: flags.finest.or(file.finest).unwrap_or(13),
            n_list,
            n_ref: flags.n_ref.or(file.n_ref).unwrap_or(4096),
            probes,
            p: flags.p.or(file.p).unwrap_or(2.0),
            replications: flags.replications.or(file.replications).unwrap_or(20),
            reference_size: flags.reference_size.or(file.reference_size).unwrap_or(1_000_000),
            sampler: flags.sampler.or(file.sampler).unwrap_or_else(|| "normal".into()),
            workers: flags.workers.or(file.workers).unwrap_or(0),
            out: flags
                .out
                .or(file.out)
                .or(env_out)
                .unwrap_or_else(|| PathBuf::from("results")),
            timings: flags.timings || file.timings.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not need the model; each error names its field.
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 0.5) {
            return Err(Error::config("gamma", format!("{} lies outside (0, 1/2]", self.gamma)));
        }
        if self.n_particles == 0 {
            return Err(Error::config("n_particles", "must be positive"));
        }
        if self.workers > 1024 {
            return Err(Error::config("workers", "at most 1024"));
        }
        if self.p.is_nan() || self.p < 1.0 {
            return Err(Error::config("p", "order must be at least 1"));
        }
        self.horizon_rational()?;
        self.delta_rational()?;
        self.deltas_rational()?;
        if self.command == Command::OracleMean && self.model != "linear" {
            return Err(Error::config("model", "oracle-mean runs the linear model only"));
        }
        if self.command == Command::Moments && self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    pub fn horizon_rational(&self) -> Result<Rational> {
        parse_rational(&self.horizon).map_err(|_| Error::config("horizon", format!("cannot parse `{}`", self.horizon)))
    }

    pub fn delta_rational(&self) -> Result<Rational> {
        parse_rational(&self.delta).map_err(|_| Error::config("delta", format!("cannot parse `{}`", self.delta)))
    }

    pub fn deltas_rational(&self) -> Result<Vec<Rational>> {
        self.deltas
            .iter()
            .map(|d| parse_rational(d).map_err(|_| Error::config("deltas", format!("cannot parse `{d}`"))))
            .collect()
    }

    /// Identifier of the invocation, used when a run fails before producing a report.
    pub fn run_id(&self) -> String {
        mvdelay_core::experiments::run_id_of(&serde_json::to_string(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_accept_ranges_and_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 9").unwrap(), vec![4, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn params_need_a_key() {
        assert_eq!(parse_param("kappa=0.1").unwrap(), ("kappa".into(), "0.1".into()));
        assert!(parse_param("=1").is_err());
        assert!(parse_param("kappa").is_err());
    }

    #[test]
    fn defaults_depend_on_the_command() {
        let c = RunConfig::resolve(Command::Chaos, Flags::default(), None).unwrap();
        assert_eq!(c.model, "linear");
        assert_eq!(c.probes, 64);
        assert_eq!(c.horizon, "2");
        let f = RunConfig::resolve(Command::FgRate, Flags::default(), None).unwrap();
        assert_eq!(f.n_list.first(), Some(&32));
        assert_eq!(f.n_list.last(), Some(&4096));
    }

    #[test]
    fn invalid_values_name_their_field() {
        let flags = Flags {
            gamma: Some(0.7),
            ..Default::default()
        };
        match RunConfig::resolve(Command::Simulate, flags, None) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "gamma"),
            other => panic!("unexpected {other:?}"),
        }
        let flags = Flags {
            delta: Some("1e-3".into()),
            ..Default::default()
        };
        match RunConfig::resolve(Command::Simulate, flags, None) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "delta"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn run_id_tracks_the_configuration() {
        let a = RunConfig::resolve(Command::Simulate, Flags::default(), None).unwrap();
        let b = RunConfig::resolve(
            Command::Simulate,
            Flags {
                seed: Some(1),
                ..Default::default()
            },
            None,
        )
        .unwrap();
        assert_ne!(a.run_id(), b.run_id());
        assert_eq!(a.run_id(), a.clone().run_id());
    }
}
