//! Tamed Euler-Maruyama stepper for the interacting particle system.
//!
//! Per step `k -> k+1` and particle `i`:
//!
//! ```text
//! Z_i(k+1) = Z_i(k) + alpha_delta(lagged states, lagged empirical measures) * delta
//!                   + beta(lagged states, lagged empirical measures) * dB_i(k)
//! X_i(t_{k+1}) = Z_i(k+1) + D(X_i(t_{k+1-M}))
//! ```
//!
//! where `Z_i(k) = X_i(t_k) - D(X_i(t_{k-M}))` is carried explicitly and
//! `alpha_delta = alpha / (1 + delta^gamma |alpha|)`.
//!
//! States are kept as a ring of `M + 1` columns, one column per grid time
//! holding every particle, so a lagged empirical measure is a borrowed
//! column and its mean is computed once when the column is written.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{to_f64, Rational, TimeGrid};
use crate::measure::{column_stats, EmpiricalView};
use crate::model::{LaggedStates, ModelSpec};
use crate::noise::coarse_increment;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TamingConfig {
    pub gamma: f64,
    /// `false` runs the classical Euler-Maruyama step.
    pub tamed: bool,
}

impl TamingConfig {
    pub fn tamed(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 0.5) {
            return Err(Error::config("gamma", format!("{gamma} lies outside (0, 1/2]")));
        }
        Ok(TamingConfig { gamma, tamed: true })
    }

    pub fn untamed() -> Self {
        TamingConfig {
            gamma: 0.5,
            tamed: false,
        }
    }
}

/// `alpha / (1 + delta^gamma |alpha|)`.
pub fn tame_drift(alpha: &[f64], delta: f64, gamma: f64) -> Vec<f64> {
    let mut out = alpha.to_vec();
    tame_in_place(&mut out, delta.powf(gamma));
    out
}

#[inline]
fn tame_in_place(alpha: &mut [f64], delta_pow_gamma: f64) {
    let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = 1.0 / (1.0 + delta_pow_gamma * norm);
    alpha.iter_mut().for_each(|a| *a *= scale);
}

/// Brownian increments for one resolution: each scheme step sums `ratio`
/// fine increments of size `fine_delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSource {
    pub seed: u64,
    pub ratio: u64,
    pub fine_delta: f64,
}

impl NoiseSource {
    pub fn new(seed: u64, grid: &TimeGrid, ratio: u64) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::config("ratio", "must be at least 1"));
        }
        Ok(NoiseSource {
            seed,
            ratio,
            fine_delta: to_f64(grid.delta() / Rational::from_integer(ratio as i64)),
        })
    }

    #[inline]
    pub fn increment(&self, particle: u64, component: usize, step: usize) -> f64 {
        coarse_increment(
            self.seed,
            particle,
            component as u64,
            step as u64,
            self.ratio,
            self.fine_delta,
        )
    }
}

#[derive(Debug, Clone)]
struct Column {
    states: Vec<f64>,
    mean: Vec<f64>,
    second_moment: f64,
}

impl Column {
    fn zeros(len: usize, dim: usize) -> Self {
        Column {
            states: vec![0.0; len],
            mean: vec![0.0; dim],
            second_moment: 0.0,
        }
    }

    fn refresh_stats(&mut self, dim: usize) {
        let (mean, m2) = column_stats(&self.states, dim);
        self.mean = mean;
        self.second_moment = m2;
    }

    fn view(&self, dim: usize) -> EmpiricalView<'_> {
        EmpiricalView::from_parts(&self.states, dim, self.mean.clone(), self.second_moment)
    }
}

/// The `N` particle histories over the last `M + 1` grid times plus the
/// neutral differences `Z_i`.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    n: usize,
    dim: usize,
    grid: TimeGrid,
    ring: Vec<Column>,
    spare: Column,
    neutral: Vec<f64>,
    /// Noise and initial-data key of each particle slot.
    keys: Vec<u64>,
    step: usize,
}

const FAIL_NONE: u8 = 0;
const FAIL_DRIFT: u8 = 1;
const FAIL_DIFFUSION: u8 = 2;
const FAIL_STATE: u8 = 3;

impl ParticleEnsemble {
    /// Fills the histories with `xi^i(t_k)` for `k = -M..=0` and sets
    /// `Z_i(0) = xi^i(0) - D(xi^i(-rho))`.
    pub fn init(model: &ModelSpec, grid: &TimeGrid, n_particles: usize, seed: u64) -> Result<Self> {
        Self::init_keyed(model, grid, (0..n_particles as u64).collect(), seed)
    }

    /// Like [`ParticleEnsemble::init`], but slot `i` draws its initial copy
    /// and Brownian path from key `keys[i]` instead of `i`.
    pub fn init_keyed(model: &ModelSpec, grid: &TimeGrid, keys: Vec<u64>, seed: u64) -> Result<Self> {
        let n_particles = keys.len();
        if n_particles == 0 {
            return Err(Error::config("n_particles", "at least one particle is required"));
        }
        if grid.n_lags() != model.n_lags() {
            return Err(Error::DimensionMismatch {
                expected: model.n_lags(),
                found: grid.n_lags(),
            });
        }
        if n_particles == 1 {
            log::warn!("single particle: empirical measures reduce to the particle itself");
        }
        let d = model.dim_state;
        let big_m = grid.big_m();
        let mut ring = vec![Column::zeros(n_particles * d, d); big_m + 1];
        for k in -(big_m as i64)..=0 {
            let t = grid.time_f64(k);
            let col = &mut ring[(k + big_m as i64) as usize];
            for (i, x) in col.states.chunks_exact_mut(d).enumerate() {
                model.initial.value(t, keys[i] as usize, seed, x);
            }
            if col.states.iter().any(|x| !x.is_finite()) {
                return Err(Error::ModelEvaluation {
                    model: model.name.clone(),
                    quantity: "initial path",
                    lag: None,
                });
            }
            col.refresh_stats(d);
        }
        let mut ens = ParticleEnsemble {
            n: n_particles,
            dim: d,
            grid: grid.clone(),
            ring,
            spare: Column::zeros(n_particles * d, d),
            neutral: vec![0.0; n_particles * d],
            keys,
            step: 0,
        };
        let mut dx = vec![0.0; d];
        for i in 0..n_particles {
            model.coefficients.neutral(ens.state_at(-(big_m as i64), i), &mut dx);
            let x0 = ens.state_at(0, i).to_vec();
            for c in 0..d {
                ens.neutral[i * d + c] = x0[c] - dx[c];
            }
        }
        if ens.neutral.iter().any(|z| !z.is_finite()) {
            return Err(Error::ModelEvaluation {
                model: model.name.clone(),
                quantity: "neutral term",
                lag: None,
            });
        }
        Ok(ens)
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    fn slot(&self, k: i64) -> usize {
        let m = self.grid.big_m() as i64;
        ((k + m).rem_euclid(m + 1)) as usize
    }

    fn in_window(&self, k: i64) -> bool {
        let now = self.step as i64;
        k <= now && k >= now - self.grid.big_m() as i64
    }

    /// All particles at grid index `k`, if still held in the history window.
    pub fn column(&self, k: i64) -> Option<&[f64]> {
        self.in_window(k).then(|| self.ring[self.slot(k)].states.as_slice())
    }

    /// Empirical measure of the particles at grid index `k`.
    pub fn view(&self, k: i64) -> Option<EmpiricalView<'_>> {
        self.in_window(k).then(|| self.ring[self.slot(k)].view(self.dim))
    }

    pub fn current(&self) -> &[f64] {
        &self.ring[self.slot(self.step as i64)].states
    }

    fn state_at(&self, k: i64, i: usize) -> &[f64] {
        &self.ring[self.slot(k)].states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn neutral_state(&self, i: usize) -> &[f64] {
        &self.neutral[i * self.dim..(i + 1) * self.dim]
    }

    /// Largest `|X_i(t_k) - D(X_i(t_{k-M})) - Z_i(k)|`, each term scaled by
    /// `max(1, |X_i(t_k)|, |D(..)|)`.
    pub fn neutral_residual(&self, model: &ModelSpec) -> f64 {
        let k = self.step as i64;
        let m = self.grid.big_m() as i64;
        let mut dx = vec![0.0; self.dim];
        let mut worst = 0.0f64;
        for i in 0..self.n {
            model.coefficients.neutral(self.state_at(k - m, i), &mut dx);
            let x = self.state_at(k, i);
            for c in 0..self.dim {
                let scale = 1f64.max(x[c].abs()).max(dx[c].abs());
                let r = (x[c] - dx[c] - self.neutral[i * self.dim + c]).abs() / scale;
                worst = worst.max(r);
            }
        }
        worst
    }

    /// Advances every particle by one step.
    pub fn step(&mut self, model: &ModelSpec, taming: TamingConfig, noise: &NoiseSource) -> Result<()> {
        let k = self.step;
        if k >= self.grid.big_mt() {
            return Err(Error::config("step", "ensemble already reached the horizon"));
        }
        let d = self.dim;
        let m = model.dim_noise;
        let r = self.grid.n_lags();
        let big_m = self.grid.big_m() as i64;
        let delta = self.grid.delta_f64();
        let delta_pow_gamma = delta.powf(taming.gamma);

        let slots: Vec<usize> = (0..r).map(|v| self.slot(self.grid.lag_index(k as i64, v))).collect();
        let tail_slot = self.slot(k as i64 + 1 - big_m);

        let ParticleEnsemble {
            ring,
            spare,
            neutral,
            keys,
            ..
        } = self;
        let ring: &Vec<Column> = ring;
        let keys: &[u64] = keys;
        let views: Vec<EmpiricalView<'_>> = slots.iter().map(|&s| ring[s].view(d)).collect();
        let tail = &ring[tail_slot].states;
        let coeffs = &*model.coefficients;

        let mut status = vec![FAIL_NONE; self.n];
        spare
            .states
            .par_chunks_mut(d)
            .zip(neutral.par_chunks_mut(d))
            .zip(status.par_iter_mut())
            .enumerate()
            .with_min_len(32)
            .for_each_init(
                || {
                    (
                        vec![0.0; r * d],
                        vec![0.0; d],
                        vec![0.0; d * m],
                        vec![0.0; m],
                        vec![0.0; d],
                    )
                },
                |(lagged, drift, diff, dw, dx), (i, ((x_new, z), flag))| {
                    for (v, &s) in slots.iter().enumerate() {
                        lagged[v * d..(v + 1) * d].copy_from_slice(&ring[s].states[i * d..(i + 1) * d]);
                    }
                    let states = LaggedStates::new(lagged, d);
                    coeffs.drift(&states, &views, drift);
                    if drift.iter().any(|a| !a.is_finite()) {
                        *flag = FAIL_DRIFT;
                        return;
                    }
                    if taming.tamed {
                        tame_in_place(drift, delta_pow_gamma);
                    }
                    coeffs.diffusion(&states, &views, diff);
                    if diff.iter().any(|b| !b.is_finite()) {
                        *flag = FAIL_DIFFUSION;
                        return;
                    }
                    for (j, w) in dw.iter_mut().enumerate() {
                        *w = noise.increment(keys[i], j, k);
                    }
                    for c in 0..d {
                        let mut inc = drift[c] * delta;
                        for j in 0..m {
                            inc += diff[c * m + j] * dw[j];
                        }
                        z[c] += inc;
                    }
                    coeffs.neutral(&tail[i * d..(i + 1) * d], dx);
                    for c in 0..d {
                        x_new[c] = z[c] + dx[c];
                    }
                    if x_new.iter().chain(z.iter()).any(|x| !x.is_finite()) {
                        *flag = FAIL_STATE;
                    }
                },
            );
        drop(views);

        if let Some(i) = status.iter().position(|&s| s != FAIL_NONE) {
            let quantity = match status[i] {
                FAIL_DRIFT => "drift",
                FAIL_DIFFUSION => "diffusion",
                _ => "state",
            };
            return Err(Error::NonFiniteState {
                particle: i,
                step: k,
                quantity,
            });
        }

        self.spare.refresh_stats(d);
        let new_slot = self.slot(k as i64 + 1);
        std::mem::swap(&mut self.ring[new_slot], &mut self.spare);
        self.step += 1;
        Ok(())
    }
}

/// What to record while simulating.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    /// Grid steps at which all particles are captured.
    pub snapshot_steps: Vec<usize>,
    /// Full trajectories (steps `0..=M_T`) are kept for particles `0..probe_particles`.
    pub probe_particles: usize,
    /// Track `sup_k |X_i(t_k)|` over `k = 0..=M_T` for every particle.
    pub track_sup: bool,
    /// Check the neutral bookkeeping every this many steps.
    pub audit_every: Option<usize>,
    /// Per-slot particle keys; `None` uses `0..n`.
    pub particle_keys: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_particles: usize,
    pub dim: usize,
    /// `X_i(T)`, point-major.
    pub terminal: Vec<f64>,
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub sup_norms: Option<Vec<f64>>,
    /// Per probe particle, `(M_T + 1) * d` values.
    pub probes: Vec<Vec<f64>>,
    /// Worst neutral bookkeeping residual seen by the audits.
    pub worst_audit: f64,
}

impl Trajectory {
    pub fn terminal_view(&self) -> EmpiricalView<'_> {
        EmpiricalView::new(&self.terminal, self.dim).expect("terminal states are finite")
    }
}

/// Runs `init` and `M_T` steps. Outputs do not depend on `options.workers`.
pub fn simulate(
    model: &ModelSpec,
    grid: &TimeGrid,
    taming: TamingConfig,
    n_particles: usize,
    seed: u64,
    ratio: u64,
    options: &SimOptions,
) -> Result<Trajectory> {
    if options.probe_particles > n_particles {
        return Err(Error::config("probe_particles", "cannot exceed the particle count"));
    }
    let run = || simulate_inner(model, grid, taming, n_particles, seed, ratio, options);
    if options.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(run)
    }
}

fn simulate_inner(
    model: &ModelSpec,
    grid: &TimeGrid,
    taming: TamingConfig,
    n_particles: usize,
    seed: u64,
    ratio: u64,
    options: &SimOptions,
) -> Result<Trajectory> {
    let noise = NoiseSource::new(seed, grid, ratio)?;
    let mut ens = match &options.particle_keys {
        Some(keys) if keys.len() != n_particles => {
            return Err(Error::config("particle_keys", "need one key per particle"))
        }
        Some(keys) => ParticleEnsemble::init_keyed(model, grid, keys.clone(), seed)?,
        None => ParticleEnsemble::init(model, grid, n_particles, seed)?,
    };
    let d = model.dim_state;
    let steps = grid.big_mt();
    let mut snapshots = Vec::new();
    let mut probes: Vec<Vec<f64>> = (0..options.probe_particles)
        .map(|_| Vec::with_capacity((steps + 1) * d))
        .collect();
    let mut sup = options.track_sup.then(|| vec![0.0f64; n_particles]);
    let mut worst_audit = 0.0f64;

    let mut record = |ens: &ParticleEnsemble, k: usize| {
        let col = ens.current();
        if options.snapshot_steps.contains(&k) {
            snapshots.push((k, col.to_vec()));
        }
        for (i, p) in probes.iter_mut().enumerate() {
            p.extend_from_slice(&col[i * d..(i + 1) * d]);
        }
        if let Some(sup) = sup.as_mut() {
            for (s, x) in sup.iter_mut().zip(col.chunks_exact(d)) {
                *s = s.max(x.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
    };

    record(&ens, 0);
    for k in 0..steps {
        ens.step(model, taming, &noise)?;
        record(&ens, k + 1);
        if let Some(every) = options.audit_every {
            if every > 0 && (k + 1) % every == 0 {
                worst_audit = worst_audit.max(ens.neutral_residual(model));
            }
        }
    }
    Ok(Trajectory {
        n_particles,
        dim: d,
        terminal: ens.current().to_vec(),
        snapshots,
        sup_norms: sup,
        probes,
        worst_audit,
    })
}
