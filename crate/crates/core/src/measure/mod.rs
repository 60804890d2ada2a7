//! Empirical measures over particle columns and Wasserstein distances
//! between them.

mod assignment;
mod rate;

pub use assignment::min_cost_assignment;
pub use rate::{fg_rate_check, Sampler};

use crate::error::{Error, Result};
use crate::noise::{domain, keyed_normal};

/// Default size limit for exact assignment.
pub const EXACT_CAP: usize = 512;
/// Default number of random directions for the sliced surrogate.
pub const DEFAULT_PROJECTIONS: usize = 128;

/// Equal-weight empirical measure over `N` points of `R^d`, stored
/// point-major (`samples[j * d + c]`). Mean and raw second moment are cached.
#[derive(Debug, Clone)]
pub struct EmpiricalView<'a> {
    samples: &'a [f64],
    dim: usize,
    mean: Vec<f64>,
    second_moment: f64,
}

impl<'a> EmpiricalView<'a> {
    pub fn new(samples: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || samples.is_empty() || !samples.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: samples.len(),
            });
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("samples", "empirical measure samples must be finite"));
        }
        let (mean, second_moment) = column_stats(samples, dim);
        Ok(Self {
            samples,
            dim,
            mean,
            second_moment,
        })
    }

    /// Builds a view from statistics computed elsewhere by [`column_stats`].
    pub(crate) fn from_parts(samples: &'a [f64], dim: usize, mean: Vec<f64>, second_moment: f64) -> Self {
        debug_assert_eq!(samples.len() % dim, 0);
        debug_assert_eq!(mean.len(), dim);
        Self {
            samples,
            dim,
            mean,
            second_moment,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `(1/N) sum_j |x_j|^2`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn samples(&self) -> &'a [f64] {
        self.samples
    }

    pub fn point(&self, j: usize) -> &'a [f64] {
        &self.samples[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'a, f64> {
        self.samples.chunks_exact(self.dim)
    }
}

/// Deterministic pairwise summation of `f(0) + ... + f(n-1)`.
pub fn pairwise_sum(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= 16 {
            (lo..hi).map(f).sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, f)
}

/// Mean vector and raw second moment of a point-major column.
pub fn column_stats(samples: &[f64], dim: usize) -> (Vec<f64>, f64) {
    let n = samples.len() / dim;
    let inv = 1.0 / n as f64;
    let mean = (0..dim)
        .map(|c| pairwise_sum(n, &|j| samples[j * dim + c]) * inv)
        .collect();
    let m2 = pairwise_sum(samples.len(), &|j| samples[j] * samples[j]) * inv;
    (mean, m2)
}

fn norm_pow(a: &[f64], b: &[f64], p: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if p == 2.0 {
        sq
    } else {
        sq.sqrt().powf(p)
    }
}

/// `((1/N) sum_j |x_j|^q)^{1/q}`.
pub fn moment_norm(view: &EmpiricalView<'_>, q: f64) -> f64 {
    assert!(q >= 1.0, "moment order must be at least 1");
    let zero = vec![0.0; view.dim()];
    let s = pairwise_sum(view.len(), &|j| norm_pow(view.point(j), &zero, q));
    (s / view.len() as f64).powf(1.0 / q)
}

fn check_pair(a: &EmpiricalView<'_>, b: &EmpiricalView<'_>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.len() != b.len() {
        return Err(Error::CountMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean of `|a_(j) - b_(j)|^p` over sorted equal-length samples.
fn sorted_cost(a: &[f64], b: &[f64], p: f64) -> f64 {
    pairwise_sum(a.len(), &|j| (a[j] - b[j]).abs().powf(p)) / a.len() as f64
}

/// Exact `W_p` between two one-dimensional equal-count measures via order statistics.
pub fn wasserstein_1d(a: &EmpiricalView<'_>, b: &EmpiricalView<'_>, p: f64) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: a.dim(),
        });
    }
    let sa = sorted(a.samples().iter().copied());
    let sb = sorted(b.samples().iter().copied());
    Ok(sorted_cost(&sa, &sb, p).powf(1.0 / p))
}

/// `int_0^1 |F_a^{-1}(u) - F_b^{-1}(u)|^p du` for sorted samples of any sizes.
pub fn quantile_cost_1d(a_sorted: &[f64], b_sorted: &[f64], p: f64) -> f64 {
    let (n, m) = (a_sorted.len() as u128, b_sorted.len() as u128);
    // breakpoints i/n and j/m compared exactly as i*m vs j*n
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let mut acc = 0.0;
    let denom = (n * m) as f64;
    while i < a_sorted.len() && j < b_sorted.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        acc += (next - prev) as f64 / denom * (a_sorted[i] - b_sorted[j]).abs().powf(p);
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    acc
}

/// Exact `W_p` for equal-count clouds in any dimension through an optimal
/// assignment. Fails above [`EXACT_CAP`] points.
pub fn wasserstein_exact(a: &EmpiricalView<'_>, b: &EmpiricalView<'_>, p: f64) -> Result<f64> {
    wasserstein_exact_capped(a, b, p, EXACT_CAP)
}

pub fn wasserstein_exact_capped(a: &EmpiricalView<'_>, b: &EmpiricalView<'_>, p: f64, cap: usize) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| norm_pow(a.point(i), b.point(j), p))
        .collect();
    let perm = min_cost_assignment(&cost, n);
    let total = pairwise_sum(n, &|i| cost[i * n + perm[i]]);
    Ok((total / n as f64).powf(1.0 / p))
}

/// Sliced surrogate: average over random unit directions of the projected
/// one-dimensional `W_p^p`, raised to `1/p`. Each projection is 1-Lipschitz,
/// so the surrogate never exceeds the exact distance.
pub fn wasserstein_sliced(
    a: &EmpiricalView<'_>,
    b: &EmpiricalView<'_>,
    p: f64,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    let per = sliced_projection_costs(a, b, p, n_projections, seed)?;
    let mean = pairwise_sum(per.len(), &|k| per[k]) / per.len() as f64;
    Ok(mean.powf(1.0 / p))
}

/// Projected `W_p^p` for each random direction.
pub fn sliced_projection_costs(
    a: &EmpiricalView<'_>,
    b: &EmpiricalView<'_>,
    p: f64,
    n_projections: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_pair(a, b)?;
    if n_projections == 0 {
        return Err(Error::config("n_projections", "must be positive"));
    }
    let d = a.dim();
    Ok((0..n_projections)
        .map(|k| {
            let mut dir: Vec<f64> = (0..d)
                .map(|c| keyed_normal(&[domain::PROJECTION, seed, k as u64, c as u64]))
                .collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|x| *x /= norm);
            let project =
                |v: &EmpiricalView<'_>| sorted(v.points().map(|x| x.iter().zip(&dir).map(|(xi, di)| xi * di).sum()));
            sorted_cost(&project(a), &project(b), p)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use proptest::prelude::*;

    fn view(s: &[f64], d: usize) -> EmpiricalView<'_> {
        EmpiricalView::new(s, d).unwrap()
    }

    /// Exhaustive minimum of `(1/N) sum_i |a_i - b_perm(i)|^p` over all permutations.
    fn brute_force(a: &[f64], b: &[f64], d: usize, p: f64) -> f64 {
        let n = a.len() / d;
        (0..n)
            .permutations(n)
            .map(|perm| {
                (0..n)
                    .map(|i| norm_pow(&a[i * d..(i + 1) * d], &b[perm[i] * d..(perm[i] + 1) * d], p))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            / n as f64
    }

    #[test]
    fn moment_norm_examples() {
        assert_eq!(moment_norm(&view(&[1.0, 1.0, 1.0], 1), 2.0), 1.0);
        assert!((moment_norm(&view(&[0.0, 2.0], 1), 2.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cached_stats() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let v = view(&s, 2);
        assert_eq!(v.mean(), &[2.0, 3.0]);
        assert_eq!(v.second_moment(), 15.0);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn view_rejects_bad_input() {
        assert!(EmpiricalView::new(&[], 1).is_err());
        assert!(EmpiricalView::new(&[1.0, 2.0, 3.0], 2).is_err());
        assert!(EmpiricalView::new(&[f64::NAN], 1).is_err());
    }

    #[test]
    fn one_dimensional_examples() {
        let a = [0.0, 2.0];
        let b = [1.0, 3.0];
        assert_eq!(wasserstein_1d(&view(&a, 1), &view(&a, 1), 2.0).unwrap(), 0.0);
        for p in [1.0, 2.0, 3.5] {
            assert!((wasserstein_1d(&view(&[0.0], 1), &view(&[1.0], 1), p).unwrap() - 1.0).abs() < 1e-15);
        }
        assert_eq!(wasserstein_1d(&view(&a, 1), &view(&b, 1), 1.0).unwrap(), 1.0);
        assert_eq!(brute_force(&a, &b, 1, 1.0), 1.0);
    }

    #[test]
    fn mismatches_are_reported() {
        let a = [0.0, 1.0];
        let b = [0.0, 1.0, 2.0];
        assert!(matches!(
            wasserstein_1d(&view(&a, 1), &view(&b, 1), 1.0),
            Err(Error::CountMismatch { .. })
        ));
        assert!(matches!(
            wasserstein_1d(&view(&a, 2), &view(&a, 2), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            wasserstein_exact(&view(&a, 1), &view(&a, 2), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exact_examples() {
        let a = [0.0, 0.0, 1.0, 0.0];
        let b = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(wasserstein_exact(&view(&a, 2), &view(&b, 2), 2.0).unwrap(), 0.0);
        assert_eq!(wasserstein_exact(&view(&a, 2), &view(&a, 2), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn exact_cap() {
        let a = vec![0.0; 10];
        assert!(matches!(
            wasserstein_exact_capped(&view(&a, 1), &view(&a, 1), 1.0, 5),
            Err(Error::CapExceeded { n: 10, cap: 5 })
        ));
    }

    #[test]
    fn point_mass_realizes_moment_norm() {
        let s: Vec<f64> = (0..40).map(|j| ((j * 37) % 11) as f64 * 0.3 - 1.2).collect();
        let zero = vec![0.0; 40];
        let a = view(&s, 2);
        let w = wasserstein_exact(&a, &view(&zero, 2), 2.0).unwrap();
        assert!((w - moment_norm(&a, 2.0)).abs() < 1e-14);
    }

    #[test]
    fn quantile_cost_matches_equal_count_formula() {
        let a = [0.1, 0.5, 0.9];
        let b = [0.0, 0.4, 1.3];
        assert!((quantile_cost_1d(&a, &b, 2.0) - sorted_cost(&a, &b, 2.0)).abs() < 1e-15);
        // duplicating every point leaves the measure unchanged
        let b2 = [0.0, 0.0, 0.4, 0.4, 1.3, 1.3];
        assert!((quantile_cost_1d(&a, &b2, 2.0) - sorted_cost(&a, &b, 2.0)).abs() < 1e-15);
        assert!((quantile_cost_1d(&[0.0], &[0.0, 1.0], 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sliced_identity_and_bound() {
        let s: Vec<f64> = (0..60).map(|j| (j as f64 * 0.7).sin()).collect();
        let t: Vec<f64> = (0..60).map(|j| (j as f64 * 1.3).cos() + 0.5).collect();
        let (a, b) = (view(&s, 3), view(&t, 3));
        assert_eq!(wasserstein_sliced(&a, &a, 2.0, 32, 1).unwrap(), 0.0);
        let sl = wasserstein_sliced(&a, &b, 2.0, 256, 1).unwrap();
        let ex = wasserstein_exact(&a, &b, 2.0).unwrap();
        assert!(sl <= ex + 1e-12, "sliced {sl} exact {ex}");
    }

    fn cloud(max_n: usize, d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1..=max_n).prop_flat_map(move |n| {
            (
                prop::collection::vec(-5.0f64..5.0, n * d),
                prop::collection::vec(-5.0f64..5.0, n * d),
            )
        })
    }

    proptest! {
        #[test]
        fn exact_matches_brute_force((a, b) in cloud(6, 2), p in 1.0f64..3.0) {
            let w = wasserstein_exact(&view(&a, 2), &view(&b, 2), p).unwrap();
            let bf = brute_force(&a, &b, 2, p).powf(1.0 / p);
            prop_assert!((w - bf).abs() < 1e-12);
        }

        #[test]
        fn one_d_matches_exact((a, b) in cloud(64, 1), p in 1.0f64..3.0) {
            let w1 = wasserstein_1d(&view(&a, 1), &view(&b, 1), p).unwrap();
            let we = wasserstein_exact(&view(&a, 1), &view(&b, 1), p).unwrap();
            prop_assert!((w1 - we).abs() < 1e-10);
        }

        #[test]
        fn symmetric_and_triangle((a, b) in cloud(8, 2), c in prop::collection::vec(-5.0f64..5.0, 16)) {
            let n = a.len() / 2;
            let c = &c[..2 * n];
            let (va, vb, vc) = (view(&a, 2), view(&b, 2), view(c, 2));
            let ab = wasserstein_exact(&va, &vb, 2.0).unwrap();
            let ba = wasserstein_exact(&vb, &va, 2.0).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            let ac = wasserstein_exact(&va, &vc, 2.0).unwrap();
            let cb = wasserstein_exact(&vc, &vb, 2.0).unwrap();
            prop_assert!(ab <= ac + cb + 1e-9);
        }

        #[test]
        fn monotone_in_order((a, b) in cloud(8, 1), p in 1.0f64..2.0, dq in 0.0f64..2.0) {
            let wp = wasserstein_exact(&view(&a, 1), &view(&b, 1), p).unwrap();
            let wq = wasserstein_exact(&view(&a, 1), &view(&b, 1), p + dq).unwrap();
            prop_assert!(wp <= wq + 1e-12);
        }
    }
}
