//! Delay-aligned time grid.
//!
//! Every grid quantity is an exact rational so that each delay lands on a
//! grid point: `M * delta == rho`, `M_T * delta == T` and
//! `offset_v * delta == rho_v`. Times are rebuilt from integer step indices
//! on demand, never accumulated.

use num_integer::Integer;
use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

/// Parses `"num/den"`, an integer, or a decimal string into an exact rational.
///
/// Exponent notation and anything that does not denote a finite decimal is
/// rejected, so a value like `0.1` becomes exactly `1/10`.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    let bad = || Error::config("rational", format!("cannot parse `{text}` as num/den or decimal"));
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(Error::config("rational", format!("zero denominator in `{text}`")));
        }
        return Ok(Rational::new(n, d));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    if frac_part.len() > 17 {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i64 = if digits.is_empty() {
        0
    } else {
        digits.parse().map_err(|_| bad())?
    };
    let denom = 10i64.checked_pow(frac_part.len() as u32).ok_or_else(bad)?;
    let r = Rational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

pub fn to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `2^{-exponent}` as an exact rational.
pub fn dyadic(exponent: u32) -> Rational {
    Rational::new(1, 1i64 << exponent)
}

/// Perturbation applied to one delay when snapping it onto the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagSnap {
    pub lag_index: usize,
    pub original: String,
    pub snapped: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    delta: Rational,
    horizon: Rational,
    big_m: usize,
    big_mt: usize,
    lag_offsets: Vec<usize>,
    snaps: Vec<LagSnap>,
}

impl TimeGrid {
    /// Builds the grid for `lags` (nondecreasing, first 0, last rho > 0).
    ///
    /// With `snap` set, a lag that is not a multiple of `delta` is replaced by
    /// `round(rho_v / delta) * delta` and the move is recorded. The horizon is
    /// never snapped.
    pub fn build(lags: &[Rational], horizon: Rational, delta: Rational, snap: bool) -> Result<Self> {
        let zero = Rational::from_integer(0);
        let one = Rational::from_integer(1);
        if delta <= zero || delta >= one {
            return Err(Error::DeltaOutOfRange {
                delta: delta.to_string(),
            });
        }
        if horizon <= zero {
            return Err(Error::config("horizon", "T must be positive"));
        }
        validate_lags(lags)?;

        let mut offending = Vec::new();
        let big_mt = match exact_multiple(horizon, delta) {
            Some(n) => n,
            None => {
                offending.push(format!("T={horizon}"));
                0
            }
        };

        let mut lag_offsets = Vec::with_capacity(lags.len());
        let mut snaps = Vec::new();
        for (v, &lag) in lags.iter().enumerate() {
            match exact_multiple(lag, delta) {
                Some(n) => lag_offsets.push(n),
                None if snap => {
                    let ratio = lag / delta;
                    let n = ratio.round().to_integer() as usize;
                    let snapped = delta * Rational::from_integer(n as i64);
                    snaps.push(LagSnap {
                        lag_index: v,
                        original: lag.to_string(),
                        snapped: snapped.to_string(),
                        distance: to_f64(snapped - lag).abs(),
                    });
                    lag_offsets.push(n);
                }
                None => {
                    offending.push(format!("lag[{v}]={lag}"));
                    lag_offsets.push(0);
                }
            }
        }
        if !offending.is_empty() {
            return Err(Error::IncommensurableGrid {
                delta: delta.to_string(),
                offending,
            });
        }
        let big_m = *lag_offsets.last().expect("validated nonempty");
        if big_m == 0 {
            return Err(Error::IncommensurableGrid {
                delta: delta.to_string(),
                offending: vec![format!("lag[{}] snapped to 0", lags.len() - 1)],
            });
        }
        for s in &snaps {
            log::warn!(
                "delay {} snapped to {} at delta {} (moved by {:.3e})",
                s.original,
                s.snapped,
                delta,
                s.distance
            );
        }
        Ok(TimeGrid {
            delta,
            horizon,
            big_m,
            big_mt,
            lag_offsets,
            snaps,
        })
    }

    pub fn delta(&self) -> Rational {
        self.delta
    }

    pub fn delta_f64(&self) -> f64 {
        to_f64(self.delta)
    }

    pub fn horizon(&self) -> Rational {
        self.horizon
    }

    /// Number of steps per maximal delay.
    pub fn big_m(&self) -> usize {
        self.big_m
    }

    /// Number of steps up to the horizon.
    pub fn big_mt(&self) -> usize {
        self.big_mt
    }

    pub fn lag_offsets(&self) -> &[usize] {
        &self.lag_offsets
    }

    pub fn n_lags(&self) -> usize {
        self.lag_offsets.len()
    }

    pub fn snaps(&self) -> &[LagSnap] {
        &self.snaps
    }

    pub fn snapped(&self) -> bool {
        !self.snaps.is_empty()
    }

    /// Grid index addressed by lag `v` (zero based) from step `k`: `k - offset_v`.
    pub fn lag_index(&self, k: i64, v: usize) -> i64 {
        k - self.lag_offsets[v] as i64
    }

    /// Exact time of grid index `k`.
    pub fn time(&self, k: i64) -> Rational {
        self.delta * Rational::from_integer(k)
    }

    pub fn time_f64(&self, k: i64) -> f64 {
        to_f64(self.time(k))
    }
}

fn validate_lags(lags: &[Rational]) -> Result<()> {
    let zero = Rational::from_integer(0);
    match lags.first() {
        None => return Err(Error::config("lags", "at least one lag is required")),
        Some(l) if *l != zero => return Err(Error::config("lags", "first lag must be 0")),
        _ => {}
    }
    if lags.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("lags", "lags must be nondecreasing"));
    }
    if *lags.last().unwrap() <= zero {
        return Err(Error::config("lags", "maximal delay must be positive"));
    }
    Ok(())
}

fn exact_multiple(value: Rational, delta: Rational) -> Option<usize> {
    let q = value / delta;
    if q.is_integer() && *q.numer() >= 0 {
        Some(*q.numer() as usize)
    } else {
        None
    }
}

/// Greatest common grid step of a set of rationals (all lags and the horizon).
pub fn common_step(values: &[Rational]) -> Rational {
    let mut numer = 0i64;
    let mut denom = 1i64;
    for v in values.iter().filter(|v| **v != Rational::from_integer(0)) {
        let l = denom.lcm(v.denom());
        numer = (numer * (l / denom)).gcd(&(v.numer() * (l / v.denom())));
        denom = l;
    }
    Rational::new(numer, denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    fn example1_lags() -> Vec<Rational> {
        ["0", "0.2", "0.25", "0.4", "0.5", "2"].iter().map(|s| r(s)).collect()
    }

    #[test]
    fn parses_fractions_and_decimals_exactly() {
        assert_eq!(r("1/1024"), Rational::new(1, 1024));
        assert_eq!(r("0.2"), Rational::new(1, 5));
        assert_eq!(r("4"), Rational::from_integer(4));
        assert_eq!(r("-0.25"), Rational::new(-1, 4));
        assert!(parse_rational("1e-3").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational(".").is_err());
    }

    #[test]
    fn example1_grid_at_one_twentieth() {
        let g = TimeGrid::build(&example1_lags(), r("4"), r("1/20"), false).unwrap();
        assert_eq!(g.big_m(), 40);
        assert_eq!(g.big_mt(), 80);
        assert_eq!(g.lag_offsets(), &[0, 4, 5, 8, 10, 40]);
        assert!(!g.snapped());
        assert_eq!(g.lag_index(7, 2), 2);
    }

    #[test]
    fn dyadic_reference_grid() {
        let g = TimeGrid::build(&[r("0"), r("2")], r("4"), dyadic(16), false).unwrap();
        assert_eq!(g.big_m(), 131072);
        assert_eq!(g.big_mt(), 262144);
    }

    #[test]
    fn non_dyadic_delay_is_rejected_without_snap() {
        let err = TimeGrid::build(&[r("0"), r("0.2")], r("1"), dyadic(4), false).unwrap_err();
        match err {
            Error::IncommensurableGrid { offending, .. } => {
                assert_eq!(offending, vec!["lag[1]=1/5".to_string()])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn snapping_records_the_perturbation() {
        let g = TimeGrid::build(&example1_lags(), r("4"), dyadic(4), true).unwrap();
        // 0.2 * 16 = 3.2 -> 3, 0.4 * 16 = 6.4 -> 6
        assert_eq!(g.lag_offsets(), &[0, 3, 4, 6, 8, 32]);
        assert_eq!(g.snaps().len(), 2);
        assert!((g.snaps()[0].distance - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn delta_range_and_horizon_checks() {
        let lags = [r("0"), r("1")];
        assert!(matches!(
            TimeGrid::build(&lags, r("4"), r("3/2"), false),
            Err(Error::DeltaOutOfRange { .. })
        ));
        assert!(matches!(
            TimeGrid::build(&lags, r("4"), r("1"), false),
            Err(Error::DeltaOutOfRange { .. })
        ));
        assert!(TimeGrid::build(&lags, r("0.3"), r("1/4"), true).is_err());
    }

    #[test]
    fn lag_index_at_the_ends() {
        let g = TimeGrid::build(&example1_lags(), r("4"), r("1/20"), false).unwrap();
        let last = g.n_lags() - 1;
        assert_eq!(g.lag_index(0, last), -(g.big_m() as i64));
        assert_eq!(g.lag_index(g.big_m() as i64, last), 0);
        for v in 0..g.n_lags() {
            assert_eq!(g.lag_index(g.lag_offsets()[v] as i64, v), 0);
        }
    }

    #[test]
    fn times_are_exact() {
        let g = TimeGrid::build(&example1_lags(), r("4"), r("1/20"), false).unwrap();
        assert_eq!(g.time(80), r("4"));
        assert_eq!(g.time(-40), r("-2"));
        assert_eq!(g.time_f64(3), 0.15);
    }

    #[test]
    fn common_step_of_example_lags() {
        let mut vals = example1_lags();
        vals.push(r("4"));
        assert_eq!(common_step(&vals), r("1/20"));
    }
}
