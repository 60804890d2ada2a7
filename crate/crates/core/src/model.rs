//! Coefficient interface and built-in models.
//!
//! A model is the equation
//!
//! ```text
//! d[Y(t) - D(Y(t - rho))] = alpha(Y(t - rho_1..r), L_{Y(t - rho_1..r)}) dt
//!                         + beta(Y(t - rho_1..r), L_{Y(t - rho_1..r)}) dB(t)
//! ```
//!
//! with delays `0 = rho_1 <= ... <= rho_r = rho`. The engine always forms
//! `Y - D`, so a model written as `d[Y + g(Y(t - rho))]` stores `D = -g`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{parse_rational, Rational};
use crate::measure::EmpiricalView;
use crate::noise::{domain, keyed_normal};

/// The lagged states `(Y(t - rho_1), ..., Y(t - rho_r))`, stored contiguously.
#[derive(Debug, Clone, Copy)]
pub struct LaggedStates<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> LaggedStates<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        debug_assert_eq!(data.len() % dim, 0);
        LaggedStates { data, dim }
    }

    #[inline]
    pub fn lag(&self, v: usize) -> &'a [f64] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Neutral map, drift and diffusion of a model. Implementations must be pure.
pub trait Coefficients: Send + Sync {
    /// `out = D(x)`.
    fn neutral(&self, x: &[f64], out: &mut [f64]);
    /// `out = alpha(states, measures)`, length `d`.
    fn drift(&self, states: &LaggedStates<'_>, measures: &[EmpiricalView<'_>], out: &mut [f64]);
    /// `out = beta(states, measures)`, row-major `d x m`.
    fn diffusion(&self, states: &LaggedStates<'_>, measures: &[EmpiricalView<'_>], out: &mut [f64]);
}

/// Initial segment `xi^i(t)` on `[-rho, 0]`.
pub trait InitialPath: Send + Sync {
    fn value(&self, t: f64, particle: usize, seed: u64, out: &mut [f64]);
}

/// Declarative growth exponents of the coefficient moduli. Not enforced.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct GrowthMeta {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// Contraction constant of the neutral term when it is globally Lipschitz with constant < 1.
    pub contraction: Option<f64>,
}

impl GrowthMeta {
    pub fn l_u(&self) -> f64 {
        self.l1.max(self.l2).max(self.l3)
    }
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim_state: usize,
    pub dim_noise: usize,
    pub lags: Vec<Rational>,
    pub coefficients: Arc<dyn Coefficients>,
    pub initial: Arc<dyn InitialPath>,
    pub growth: GrowthMeta,
    /// Parameter values used to build the model, echoed into reports.
    pub params: BTreeMap<String, f64>,
    /// Whether delays should be snapped onto dyadic grids by default.
    pub default_snap: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("lags", &self.lags.iter().map(|l| l.to_string()).collect::<Vec<_>>())
            .field("growth", &self.growth)
            .field("params", &self.params)
            .finish()
    }
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        lags: Vec<Rational>,
        coefficients: Arc<dyn Coefficients>,
        initial: Arc<dyn InitialPath>,
        growth: GrowthMeta,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(Error::config("dimensions", "d and m must be positive"));
        }
        let zero = Rational::from_integer(0);
        if lags.first() != Some(&zero) {
            return Err(Error::config("lags", "first lag must be 0"));
        }
        if lags.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("lags", "lags must be nondecreasing"));
        }
        if *lags.last().unwrap() <= zero {
            return Err(Error::config("lags", "maximal delay must be positive"));
        }
        let spec = ModelSpec {
            name: name.into(),
            dim_state,
            dim_noise,
            lags,
            coefficients,
            initial,
            growth,
            params: BTreeMap::new(),
            default_snap: false,
        };
        let mut d0 = vec![0.0; dim_state];
        spec.coefficients.neutral(&vec![0.0; dim_state], &mut d0);
        if d0.iter().any(|v| *v != 0.0) {
            return Err(Error::config("neutral", "D(0) must vanish"));
        }
        Ok(spec)
    }

    pub fn n_lags(&self) -> usize {
        self.lags.len()
    }

    pub fn max_delay(&self) -> Rational {
        *self.lags.last().unwrap()
    }

    fn check_inputs(&self, states: &[f64], measures: &[EmpiricalView<'_>]) -> Result<()> {
        let r = self.n_lags();
        if states.len() != r * self.dim_state {
            return Err(Error::DimensionMismatch {
                expected: r * self.dim_state,
                found: states.len(),
            });
        }
        if measures.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: measures.len(),
            });
        }
        if let Some(v) = measures.iter().position(|m| m.dim() != self.dim_state) {
            return Err(Error::DimensionMismatch {
                expected: self.dim_state,
                found: measures[v].dim(),
            });
        }
        if let Some(i) = states.iter().position(|x| !x.is_finite()) {
            return Err(Error::ModelEvaluation {
                model: self.name.clone(),
                quantity: "input state",
                lag: Some(i / self.dim_state),
            });
        }
        Ok(())
    }

    fn check_output(&self, out: &[f64], quantity: &'static str) -> Result<()> {
        match out.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::ModelEvaluation {
                model: self.name.clone(),
                quantity,
                lag: Some(i),
            }),
        }
    }

    /// Drift at lagged states given as `r * d` contiguous values.
    pub fn eval_drift(&self, states: &[f64], measures: &[EmpiricalView<'_>]) -> Result<Vec<f64>> {
        self.check_inputs(states, measures)?;
        let mut out = vec![0.0; self.dim_state];
        self.coefficients
            .drift(&LaggedStates::new(states, self.dim_state), measures, &mut out);
        self.check_output(&out, "drift")?;
        Ok(out)
    }

    /// Diffusion matrix, row-major `d x m`.
    pub fn eval_diffusion(&self, states: &[f64], measures: &[EmpiricalView<'_>]) -> Result<Vec<f64>> {
        self.check_inputs(states, measures)?;
        let mut out = vec![0.0; self.dim_state * self.dim_noise];
        self.coefficients
            .diffusion(&LaggedStates::new(states, self.dim_state), measures, &mut out);
        self.check_output(&out, "diffusion")?;
        Ok(out)
    }

    pub fn eval_neutral(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim_state {
            return Err(Error::DimensionMismatch {
                expected: self.dim_state,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim_state];
        self.coefficients.neutral(x, &mut out);
        self.check_output(&out, "neutral term")?;
        Ok(out)
    }
}

/// Deterministic initial path shared by all particles.
pub struct DeterministicPath<F>(pub F);

impl<F> InitialPath for DeterministicPath<F>
where
    F: Fn(f64, &mut [f64]) + Send + Sync,
{
    fn value(&self, t: f64, _particle: usize, _seed: u64, out: &mut [f64]) {
        (self.0)(t, out)
    }
}

/// Constant-in-time path `x0 + spread * Z_i` with `Z_i` i.i.d. standard normal per particle.
#[derive(Debug, Clone, Copy)]
pub struct SpreadConstantPath {
    pub x0: f64,
    pub spread: f64,
}

impl InitialPath for SpreadConstantPath {
    fn value(&self, _t: f64, particle: usize, seed: u64, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let z = if self.spread == 0.0 {
                0.0
            } else {
                keyed_normal(&[domain::INITIAL, seed, particle as u64, c as u64])
            };
            *o = self.x0 + self.spread * z;
        }
    }
}

type NeutralFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type FieldFn = dyn Fn(&LaggedStates<'_>, &[EmpiricalView<'_>], &mut [f64]) + Send + Sync;

/// Closure-backed coefficients for user-defined models.
pub struct FnCoefficients {
    pub neutral: Box<NeutralFn>,
    pub drift: Box<FieldFn>,
    pub diffusion: Box<FieldFn>,
}

impl Coefficients for FnCoefficients {
    fn neutral(&self, x: &[f64], out: &mut [f64]) {
        (self.neutral)(x, out)
    }
    fn drift(&self, s: &LaggedStates<'_>, m: &[EmpiricalView<'_>], out: &mut [f64]) {
        (self.drift)(s, m, out)
    }
    fn diffusion(&self, s: &LaggedStates<'_>, m: &[EmpiricalView<'_>], out: &mut [f64]) {
        (self.diffusion)(s, m, out)
    }
}

/// Scalar example with cubic neutral term and quintic delayed drift.
/// Lags in order: 0, 0.2, 0.25, 0.4, 0.5, 2.
#[derive(Debug, Clone, Copy, Default)]
pub struct CubicNeutralScalar;

impl Coefficients for CubicNeutralScalar {
    fn neutral(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0] * x[0] * x[0];
    }

    fn drift(&self, s: &LaggedStates<'_>, m: &[EmpiricalView<'_>], out: &mut [f64]) {
        let now = s.lag(0)[0];
        let y_quarter = s.lag(2)[0];
        let y_rho = s.lag(5)[0];
        out[0] = -2.0 * now + y_quarter - 2.0 * y_rho.powi(5) + m[2].mean()[0] - m[4].mean()[0];
    }

    fn diffusion(&self, s: &LaggedStates<'_>, m: &[EmpiricalView<'_>], out: &mut [f64]) {
        out[0] = s.lag(0)[0] + 0.25 * s.lag(1)[0] + m[3].mean()[0];
    }
}

/// Two-dimensional example with sine/quadratic neutral term and scalar noise.
/// Lags in order: 0, 0.1, 0.4, 1, 4.
#[derive(Debug, Clone, Copy, Default)]
pub struct SineQuadraticPlanar;

impl Coefficients for SineQuadraticPlanar {
    fn neutral(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -2.0 * x[0].sin();
        out[1] = -4.0 * x[1] * x[1];
    }

    fn drift(&self, s: &LaggedStates<'_>, m: &[EmpiricalView<'_>], out: &mut [f64]) {
        let now = s.lag(0);
        let tenth = s.lag(1);
        let rho = s.lag(4);
        out[0] = -3.0 * now[1] + tenth[0] - 4.0 * rho[0].powi(3) + m[2].mean()[1] - 3.0 * m[3].mean()[0];
        let w = now[1] + 4.0 * rho[1] * rho[1];
        out[1] = -4.0 * w * w.abs() + 30.0 * rho[1] * rho[1] + 6.0 * now[1] - 2.0 * rho[1].powi(5);
    }

    fn diffusion(&self, s: &LaggedStates<'_>, m: &[EmpiricalView<'_>], out: &mut [f64]) {
        let now = s.lag(0);
        let tenth_mean = m[1].mean();
        out[0] = 2.0 * now[1] + tenth_mean[0];
        out[1] = 4.0 * now[0] + tenth_mean[1];
    }
}

/// Scalar linear model with lags 0, 1/2, 1:
/// `d[Y - kappa Y(t-1)] = [a Y + b Y(t-1/2) + c E Y(t-1)] dt + [s1 Y + s2 E Y] dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearParams {
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub x0: f64,
    pub spread: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            kappa: 0.3,
            a: -1.0,
            b: 0.5,
            c: 0.5,
            sigma1: 0.2,
            sigma2: 0.1,
            x0: 1.0,
            spread: 0.0,
        }
    }
}

impl LinearParams {
    pub const LAGS: [(i64, i64); 3] = [(0, 1), (1, 2), (1, 1)];

    pub fn lags() -> Vec<Rational> {
        Self::LAGS.iter().map(|&(n, d)| Rational::new(n, d)).collect()
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "kappa" => &mut self.kappa,
            "a" => &mut self.a,
            "b" => &mut self.b,
            "c" => &mut self.c,
            "sigma1" => &mut self.sigma1,
            "sigma2" => &mut self.sigma2,
            "x0" => &mut self.x0,
            "spread" => &mut self.spread,
            other => {
                return Err(Error::config(
                    format!("params.{other}"),
                    "unknown linear-model parameter",
                ))
            }
        };
        *slot = value;
        Ok(())
    }

    fn to_map(self) -> BTreeMap<String, f64> {
        [
            ("kappa", self.kappa),
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("x0", self.x0),
            ("spread", self.spread),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

impl Coefficients for LinearParams {
    fn neutral(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.kappa * x[0];
    }

    fn drift(&self, s: &LaggedStates<'_>, m: &[EmpiricalView<'_>], out: &mut [f64]) {
        out[0] = self.a * s.lag(0)[0] + self.b * s.lag(1)[0] + self.c * m[2].mean()[0];
    }

    fn diffusion(&self, s: &LaggedStates<'_>, m: &[EmpiricalView<'_>], out: &mut [f64]) {
        out[0] = self.sigma1 * s.lag(0)[0] + self.sigma2 * m[0].mean()[0];
    }
}

fn rationals(values: &[&str]) -> Vec<Rational> {
    values.iter().map(|s| parse_rational(s).expect("literal lag")).collect()
}

pub fn linear_model(params: LinearParams) -> ModelSpec {
    let mut spec = ModelSpec::new(
        "linear",
        1,
        1,
        LinearParams::lags(),
        Arc::new(params),
        Arc::new(SpreadConstantPath {
            x0: params.x0,
            spread: params.spread,
        }),
        GrowthMeta {
            l1: 1.0,
            l2: 1.0,
            l3: 1.0,
            contraction: (params.kappa.abs() < 1.0).then_some(params.kappa.abs()),
        },
    )
    .expect("linear model is well formed");
    spec.params = params.to_map();
    spec
}

pub const BUILTIN_NAMES: [&str; 3] = ["example1", "example2", "linear"];

/// Looks up a built-in model, applying `params` overrides.
pub fn builtin(name: &str, params: &BTreeMap<String, String>) -> Result<ModelSpec> {
    let reject_params = |model: &str| -> Result<()> {
        match params.keys().next() {
            Some(k) => Err(Error::config(
                format!("params.{k}"),
                format!("model `{model}` takes no parameters"),
            )),
            None => Ok(()),
        }
    };
    match name {
        "example1" => {
            reject_params(name)?;
            let mut spec = ModelSpec::new(
                "example1",
                1,
                1,
                rationals(&["0", "0.2", "0.25", "0.4", "0.5", "2"]),
                Arc::new(CubicNeutralScalar),
                Arc::new(DeterministicPath(|t: f64, out: &mut [f64]| {
                    out[0] = t.abs().sqrt() + 4.0;
                })),
                GrowthMeta {
                    l1: 2.0,
                    l2: 4.0,
                    l3: 1.0,
                    contraction: None,
                },
            )?;
            spec.default_snap = true;
            Ok(spec)
        }
        "example2" => {
            reject_params(name)?;
            ModelSpec::new(
                "example2",
                2,
                1,
                rationals(&["0", "0.1", "0.4", "1", "4"]),
                Arc::new(SineQuadraticPlanar),
                Arc::new(DeterministicPath(|t: f64, out: &mut [f64]| {
                    let v = t.abs().powf(2.0 / 3.0) + 1.0;
                    out.iter_mut().for_each(|o| *o = v);
                })),
                GrowthMeta {
                    l1: 1.0,
                    l2: 4.0,
                    l3: 1.0,
                    contraction: None,
                },
            )
            .map(|mut s| {
                s.default_snap = true;
                s
            })
        }
        "linear" => {
            let mut p = LinearParams::default();
            for (k, v) in params {
                let value: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("params.{k}"), format!("`{v}` is not a number")))?;
                if !value.is_finite() {
                    return Err(Error::config(format!("params.{k}"), "must be finite"));
                }
                p.set(k, value)?;
            }
            Ok(linear_model(p))
        }
        other => Err(Error::config(
            "model",
            format!("unknown model `{other}` (expected one of {})", BUILTIN_NAMES.join(", ")),
        )),
    }
}
