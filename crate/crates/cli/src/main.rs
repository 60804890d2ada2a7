use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use mvdelay_core::experiments::{
    chaos_study, convergence_study, meanfield_oracle, moment_sweep, ChaosConfig, ConvergenceConfig, MomentConfig,
    OracleConfig, BLOWUP_THRESHOLD,
};
use mvdelay_core::measure::{fg_rate_check, Sampler};
use mvdelay_core::model::{builtin, LinearParams};
use mvdelay_core::{simulate, Error, ExperimentReport, ModelSpec, Result, SimOptions, TamingConfig, TimeGrid};

mod config;

use config::{Command, Flags, RunConfig, OUT_ENV};

#[derive(Parser)]
#[command(
    name = "mvdelay",
    version,
    about = "Particle simulation of neutral multiple-delay McKean-Vlasov SDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run the particle system once and write recorded trajectories.
    Simulate(Flags),
    /// Strong error against a fine reference over dyadic levels.
    Convergence(Flags),
    /// Particle-count scaling of the coupled chaos proxy.
    Chaos(Flags),
    /// Moment bounds across step sizes and seeds.
    Moments(Flags),
    /// Decay of the empirical-measure Wasserstein cost in the sample size.
    FgRate(Flags),
    /// Particle mean of the linear model against its mean delay ODE.
    OracleMean(Flags),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (command, flags) = match cli.command {
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Convergence(f) => (Command::Convergence, f),
        Sub::Chaos(f) => (Command::Chaos, f),
        Sub::Moments(f) => (Command::Moments, f),
        Sub::FgRate(f) => (Command::FgRate, f),
        Sub::OracleMean(f) => (Command::OracleMean, f),
    };
    let env_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let cfg = match RunConfig::resolve(command, flags, env_out) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) if e.is_config() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("run {} failed: {e}", cfg.run_id());
            ExitCode::from(1)
        }
    }
}

fn load_model(cfg: &RunConfig) -> Result<ModelSpec> {
    builtin(&cfg.model, &cfg.params)
}

fn taming(cfg: &RunConfig) -> Result<TamingConfig> {
    if cfg.untamed {
        Ok(TamingConfig::untamed())
    } else {
        TamingConfig::tamed(cfg.gamma)
    }
}

fn snap_for(cfg: &RunConfig, model: &ModelSpec) -> bool {
    cfg.snap.unwrap_or(model.default_snap)
}

fn linear_params(cfg: &RunConfig) -> Result<LinearParams> {
    let mut params = LinearParams::default();
    for (k, v) in &cfg.params {
        let value: f64 = v
            .parse()
            .map_err(|_| Error::config(format!("params.{k}"), format!("`{v}` is not a number")))?;
        params.set(k, value)?;
    }
    Ok(params)
}

fn run(cfg: &RunConfig) -> Result<String> {
    let report = match cfg.command {
        Command::Simulate => return run_simulate(cfg),
        Command::Convergence => {
            let model = load_model(cfg)?;
            convergence_study(
                &model,
                &ConvergenceConfig {
                    horizon: cfg.horizon_rational()?,
                    taming: taming(cfg)?,
                    n_particles: cfg.n_particles,
                    finest_exponent: cfg.finest,
                    level_exponents: cfg.levels.clone(),
                    seed: cfg.seed,
                    snap: snap_for(cfg, &model),
                    workers: cfg.workers,
                },
            )?
        }
        Command::Chaos => {
            let model = load_model(cfg)?;
            chaos_study(
                &model,
                &ChaosConfig {
                    horizon: cfg.horizon_rational()?,
                    taming: taming(cfg)?,
                    delta: cfg.delta_rational()?,
                    n_list: cfg.n_list.clone(),
                    n_reference: cfg.n_ref,
                    probe_count: cfg.probes,
                    p: cfg.p,
                    seed: cfg.seed,
                    snap: snap_for(cfg, &model),
                    workers: cfg.workers,
                },
            )?
        }
        Command::Moments => {
            let model = load_model(cfg)?;
            moment_sweep(
                &model,
                &MomentConfig {
                    horizon: cfg.horizon_rational()?,
                    taming: taming(cfg)?,
                    delta_list: cfg.deltas_rational()?,
                    n_particles: cfg.n_particles,
                    p: cfg.p,
                    seeds: cfg.seeds.clone(),
                    snap: snap_for(cfg, &model),
                    workers: cfg.workers,
                },
            )?
        }
        Command::FgRate => fg_rate_check(
            Sampler::parse(&cfg.sampler)?,
            cfg.p,
            &cfg.n_list,
            cfg.replications,
            cfg.seed,
            cfg.reference_size,
        )?,
        Command::OracleMean => meanfield_oracle(&OracleConfig {
            params: linear_params(cfg)?,
            horizon: cfg.horizon_rational()?,
            taming: taming(cfg)?,
            delta: cfg.delta_rational()?,
            n_particles: cfg.n_particles,
            seed: cfg.seed,
            workers: cfg.workers,
        })?,
    };
    let (csv, sidecar) = write_report(&report, &cfg.out, cfg.timings)?;
    Ok(format!(
        "{} -> {} (+ {})",
        report.summary(),
        csv.display(),
        sidecar.display()
    ))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn kind_name(report: &ExperimentReport) -> String {
    serde_json::to_value(report.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| "report".into())
}

fn write_report(report: &ExperimentReport, out: &Path, timings: bool) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out)?;
    let stem = format!("{}-{}", kind_name(report), report.run_id);
    let csv = out.join(format!("{stem}.csv"));
    let sidecar = out.join(format!("{stem}.jsonl"));
    report.write_csv(BufWriter::new(File::create(&csv)?), timings)?;
    let mut w = BufWriter::new(File::create(&sidecar)?);
    report.write_sidecar(&mut w, unix_now())?;
    w.flush()?;
    Ok((csv, sidecar))
}

fn run_simulate(cfg: &RunConfig) -> Result<String> {
    let model = load_model(cfg)?;
    let grid = TimeGrid::build(
        &model.lags,
        cfg.horizon_rational()?,
        cfg.delta_rational()?,
        snap_for(cfg, &model),
    )?;
    if cfg.probes > cfg.n_particles {
        return Err(Error::config("probes", "cannot exceed the particle count"));
    }
    let options = SimOptions {
        workers: cfg.workers,
        probe_particles: cfg.probes,
        track_sup: true,
        ..Default::default()
    };
    let traj = simulate(&model, &grid, taming(cfg)?, cfg.n_particles, cfg.seed, 1, &options)?;
    let run_id = cfg.run_id();

    fs::create_dir_all(&cfg.out)?;
    let csv_path = cfg.out.join(format!("simulate-{run_id}.csv"));
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "run_id,particle,component,time,value")?;
    let d = traj.dim;
    for (i, path) in traj.probes.iter().enumerate() {
        for (k, x) in path.chunks_exact(d).enumerate() {
            let t = grid.time_f64(k as i64);
            for (c, v) in x.iter().enumerate() {
                writeln!(w, "{run_id},{i},{c},{t},{v}")?;
            }
        }
    }
    w.flush()?;

    let view = traj.terminal_view();
    let sup_max = traj.sup_norms.as_ref().map(|s| s.iter().copied().fold(0.0, f64::max));
    let sidecar_path = cfg.out.join(format!("simulate-{run_id}.jsonl"));
    let header = serde_json::json!({
        "kind": "simulate",
        "run_id": run_id,
        "created_unix": unix_now(),
        "config": cfg,
        "model": model.name,
        "big_m": grid.big_m(),
        "big_mt": grid.big_mt(),
        "snaps": grid.snaps(),
        "terminal_mean": view.mean(),
        "terminal_second_moment": view.second_moment(),
        "max_sup_norm": sup_max,
    });
    let mut w = BufWriter::new(File::create(&sidecar_path)?);
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    w.flush()?;

    if let (true, Some(max)) = (cfg.untamed, sup_max) {
        if max > BLOWUP_THRESHOLD {
            return Err(Error::Diverged {
                magnitude: max,
                threshold: BLOWUP_THRESHOLD,
            });
        }
    }
    Ok(format!(
        "simulate run {run_id}: {} particles to T = {}, terminal mean {:?}, second moment {:.6e} -> {}",
        cfg.n_particles,
        grid.horizon(),
        view.mean(),
        view.second_moment(),
        csv_path.display()
    ))
}
