//! Counter-based Brownian increments.
//!
//! A draw is a pure function of `(seed, particle, fine_step, component)`:
//! the key is hashed to 64 bits, mapped to a uniform on (0, 1) and pushed
//! through the inverse normal CDF. Nothing is stateful, so particles can be
//! stepped on any number of threads and coarse levels can be rebuilt from
//! the fine path without storing it.

use statrs::function::erf::erfc_inv;

use crate::grid::{to_f64, Rational};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags keep unrelated consumers of the same seed apart.
pub mod domain {
    pub const BROWNIAN: u64 = 0x4252_4f57_4e49_414e;
    pub const INITIAL: u64 = 0x494e_4954_4941_4c00;
    pub const PROJECTION: u64 = 0x5052_4f4a_4543_5400;
    pub const SAMPLER: u64 = 0x5341_4d50_4c45_5200;
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a word sequence; every word passes through a full avalanche round.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = GOLDEN;
    for (i, &w) in words.iter().enumerate() {
        h = mix64(h ^ mix64(w.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1))));
    }
    mix64(h)
}

/// Uniform on the open interval (0, 1) from 52 hashed bits; both ends stay
/// representable so the normal quantile is finite.
#[inline]
pub fn uniform_from_bits(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Standard normal quantile.
#[inline]
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Standard normal draw keyed by an arbitrary word sequence.
#[inline]
pub fn keyed_normal(words: &[u64]) -> f64 {
    normal_quantile(uniform_from_bits(hash_words(words)))
}

#[inline]
pub fn keyed_uniform(words: &[u64]) -> f64 {
    uniform_from_bits(hash_words(words))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub particle: u64,
    pub fine_step: u64,
    pub component: u64,
}

impl NoiseKey {
    #[inline]
    pub fn standard_normal(&self) -> f64 {
        keyed_normal(&[
            domain::BROWNIAN,
            self.seed,
            self.particle,
            self.fine_step,
            self.component,
        ])
    }
}

/// `sqrt(fine_delta) * Z` for the key's standard normal `Z`.
#[inline]
pub fn fine_increment(key: NoiseKey, fine_delta: f64) -> f64 {
    fine_delta.sqrt() * key.standard_normal()
}

pub fn fine_increment_exact(key: NoiseKey, fine_delta: Rational) -> f64 {
    fine_increment(key, to_f64(fine_delta))
}

/// Sum of the `ratio` fine increments covering coarse step `coarse_step`,
/// accumulated in ascending fine index.
#[inline]
pub fn coarse_increment(
    seed: u64,
    particle: u64,
    component: u64,
    coarse_step: u64,
    ratio: u64,
    fine_delta: f64,
) -> f64 {
    let first = coarse_step * ratio;
    let mut acc = 0.0;
    for j in 0..ratio {
        let key = NoiseKey {
            seed,
            particle,
            fine_step: first + j,
            component,
        };
        acc += fine_increment(key, fine_delta);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(particle: u64, step: u64, component: u64) -> NoiseKey {
        NoiseKey {
            seed: 42,
            particle,
            fine_step: step,
            component,
        }
    }

    #[test]
    fn same_key_same_value() {
        let k = key(3, 17, 0);
        assert_eq!(fine_increment(k, 0.01).to_bits(), fine_increment(k, 0.01).to_bits());
    }

    #[test]
    fn components_are_uncorrelated() {
        let n = 100_000u64;
        let (mut sxy, mut sxx, mut syy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in 0..n {
            let x = key(1, s, 0).standard_normal();
            let y = key(1, s, 1).standard_normal();
            sx += x;
            sy += y;
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx / nf * sy / nf;
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!(corr.abs() < 0.02, "corr = {corr}");
    }

    #[test]
    fn fine_variance_matches_step() {
        let n = 1_000_000u64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for s in 0..n {
            let x = fine_increment(key(7, s, 0), 0.01);
            sum += x;
            sq += x * x;
        }
        let nf = n as f64;
        let var = sq / nf - (sum / nf).powi(2);
        assert!((var - 0.01).abs() < 0.0005, "var = {var}");
    }

    #[test]
    fn ratio_one_is_the_fine_increment() {
        let fd = 1.0 / 1024.0;
        for s in 0..100 {
            assert_eq!(
                coarse_increment(42, 2, 0, s, 1, fd).to_bits(),
                fine_increment(key(2, s, 0), fd).to_bits()
            );
        }
    }

    #[test]
    fn ratio_four_is_the_ordered_sum() {
        let fd = 1.0 / 1024.0;
        for c in 0..50 {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += fine_increment(key(5, 4 * c + j, 0), fd);
            }
            assert_eq!(coarse_increment(42, 5, 0, c, 4, fd).to_bits(), acc.to_bits());
        }
    }

    #[test]
    fn coarse_variance_scales_with_ratio() {
        let fd = 1.0 / 1024.0;
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for s in 0..n {
            let x = coarse_increment(9, 0, 0, s, 8, fd);
            sum += x;
            sq += x * x;
        }
        let nf = n as f64;
        let var = sq / nf - (sum / nf).powi(2);
        let target = 8.0 * fd;
        assert!((var / target - 1.0).abs() < 0.03, "var = {var}");
    }

    #[test]
    fn quantile_tails_are_finite() {
        assert!(normal_quantile(uniform_from_bits(0)).is_finite());
        assert!(normal_quantile(uniform_from_bits(u64::MAX)).is_finite());
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
    }

    #[test]
    fn particles_are_uncorrelated() {
        let n = 50_000u64;
        let mut sxy = 0.0;
        for s in 0..n {
            sxy += key(0, s, 0).standard_normal() * key(1, s, 0).standard_normal();
        }
        assert!((sxy / n as f64).abs() < 0.02);
    }
}
