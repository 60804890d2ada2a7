//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mvdelay_core::experiments::{
    chaos_study, convergence_study, meanfield_oracle, moment_sweep, ChaosConfig, ConvergenceConfig, MomentConfig,
    OracleConfig,
};
use mvdelay_core::grid::dyadic;
use mvdelay_core::measure::{fg_rate_check, wasserstein_1d, wasserstein_exact, Sampler};
use mvdelay_core::model::LinearParams;
use mvdelay_core::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn tamed() -> TamingConfig {
    TamingConfig::tamed(0.5).unwrap()
}

fn no_params() -> BTreeMap<String, String> {
    BTreeMap::new()
}

fn slope_in(report: &ExperimentReport, lo: f64, hi: f64) -> Outcome {
    match &report.slope {
        Some(fit) => Outcome {
            pass: fit.slope >= lo && fit.slope <= hi,
            detail: format!(
                "slope {:.4} (band [{lo}, {hi}]), values {:?}",
                fit.slope,
                report
                    .records
                    .iter()
                    .map(|r| format!("{:.3e}", r.value))
                    .collect::<Vec<_>>()
            ),
        },
        None => Outcome {
            pass: false,
            detail: format!("no slope fitted: {:?}", report.notes),
        },
    }
}

fn convergence(model: &str, n: usize, lo: f64, hi: f64) -> Outcome {
    let m = builtin(model, &no_params()).unwrap();
    let cfg = ConvergenceConfig {
        horizon: Rational::from_integer(4),
        taming: tamed(),
        n_particles: n,
        finest_exponent: 13,
        level_exponents: vec![9, 10, 11, 12],
        seed: 0,
        snap: true,
        workers: 0,
    };
    match convergence_study(&m, &cfg) {
        Ok(r) => slope_in(&r, lo, hi),
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn taming_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0usize;
    let checks = 1_000_000;
    for _ in 0..checks {
        let dim = rng.gen_range(1..=4);
        let scale = 10f64.powf(rng.gen_range(-6.0..12.0));
        let alpha: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let delta: f64 = rng.gen_range(1e-9..1.0);
        let gamma: f64 = rng.gen_range(1e-3..=0.5);
        let tamed = tame_drift(&alpha, delta, gamma);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (na, nt) = (norm(&alpha), norm(&tamed));
        let bound = delta.powf(-gamma).min(na);
        let dot: f64 = alpha.iter().zip(&tamed).map(|(a, t)| a * t).sum();
        let aligned = na == 0.0 || (dot / (na * nt) - 1.0).abs() < 1e-12;
        if nt > bound * (1.0 + 1e-12) || !aligned {
            violations += 1;
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations in {checks} checks"),
    }
}

fn untamed_witness() -> Outcome {
    let m = builtin("example1", &no_params()).unwrap();
    let grid = TimeGrid::build(&m.lags, Rational::from_integer(4), dyadic(6), true).unwrap();
    let opts = SimOptions {
        track_sup: true,
        ..Default::default()
    };
    let mut diverged = 0;
    let mut tamed_bad = 0;
    for seed in 0..100u64 {
        match simulate(&m, &grid, TamingConfig::untamed(), 100, seed, 1, &opts) {
            Err(Error::NonFiniteState { .. }) => diverged += 1,
            Ok(t) if t.sup_norms.as_ref().unwrap().iter().any(|s| *s > 1e10) => diverged += 1,
            Ok(_) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
        match simulate(&m, &grid, tamed(), 100, seed, 1, &opts) {
            Ok(t) if t.sup_norms.as_ref().unwrap().iter().all(|s| s.is_finite()) => {}
            _ => tamed_bad += 1,
        }
    }
    Outcome {
        pass: diverged >= 1 && tamed_bad == 0,
        detail: format!("untamed diverged on {diverged}/100 seeds, tamed non-finite on {tamed_bad}/100"),
    }
}

fn moment_uniformity() -> Outcome {
    let m = builtin("example1", &no_params()).unwrap();
    let cfg = MomentConfig {
        horizon: Rational::from_integer(4),
        taming: tamed(),
        delta_list: (6..=10).map(dyadic).collect(),
        n_particles: 200,
        p: 2.0,
        seeds: (0..20).collect(),
        snap: true,
        workers: 0,
    };
    match moment_sweep(&m, &cfg) {
        Ok(r) => {
            let ratio = r.stats.get("max_min_ratio").copied().unwrap_or(f64::NAN);
            Outcome {
                pass: ratio <= 2.0,
                detail: format!(
                    "max/min ratio {ratio:.3} (limit 2), moments {:?}",
                    r.records.iter().map(|r| format!("{:.3e}", r.value)).collect::<Vec<_>>()
                ),
            }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn example1_smoke() -> Outcome {
    let m = builtin("example1", &no_params()).unwrap();
    let grid = TimeGrid::build(&m.lags, Rational::from_integer(4), dyadic(10), true).unwrap();
    match simulate(&m, &grid, tamed(), 100, 0, 1, &SimOptions::default()) {
        Ok(t) => {
            let finite = t.terminal.iter().all(|x| x.is_finite());
            let m2 = t.terminal_view().second_moment();
            Outcome {
                pass: finite && m2 < 1e6,
                detail: format!("all finite: {finite}, second moment at T {m2:.3e} (limit 1e6)"),
            }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn brute_force(a: &[f64], b: &[f64], d: usize, p: f64) -> f64 {
    let n = a.len() / d;
    (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| {
                    (0..d)
                        .map(|c| (a[i * d + c] - b[j * d + c]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                        .powf(p)
                })
                .sum::<f64>()
                / n as f64
        })
        .fold(f64::INFINITY, f64::min)
        .powf(1.0 / p)
}

fn wasserstein_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_exact = 0.0f64;
    for _ in 0..500 {
        let d = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=6);
        let p = rng.gen_range(1..=3) as f64;
        let a: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let got = wasserstein_exact(
            &EmpiricalView::new(&a, d).unwrap(),
            &EmpiricalView::new(&b, d).unwrap(),
            p,
        )
        .unwrap();
        worst_exact = worst_exact.max((got - brute_force(&a, &b, d, p)).abs());
    }
    let mut worst_1d = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=64);
        let p = rng.gen_range(1..=3) as f64;
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (va, vb) = (EmpiricalView::new(&a, 1).unwrap(), EmpiricalView::new(&b, 1).unwrap());
        let gap = (wasserstein_1d(&va, &vb, p).unwrap() - wasserstein_exact(&va, &vb, p).unwrap()).abs();
        worst_1d = worst_1d.max(gap);
    }
    Outcome {
        pass: worst_exact <= 1e-12 && worst_1d <= 1e-10,
        detail: format!("exact vs permutations {worst_exact:.2e} (tol 1e-12), 1-D vs exact {worst_1d:.2e} (tol 1e-10)"),
    }
}

fn fg_rate() -> Outcome {
    let n_list: Vec<usize> = (5..=12).map(|e| 1usize << e).collect();
    match fg_rate_check(Sampler::Normal, 2.0, &n_list, 20, 0, 1_000_000) {
        Ok(r) => {
            let mut o = slope_in(&r, -0.65, -0.35);
            let root: Vec<(f64, f64)> = r.records.iter().map(|x| (x.x, x.value.sqrt())).collect();
            if let Ok(fit) = fit_slope(&root) {
                o.detail.push_str(&format!(
                    "; slope of E[W_2^2]^(1/2) {:.4} (information only)",
                    fit.slope
                ));
            }
            o
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn chaos() -> Outcome {
    let m = builtin("linear", &no_params()).unwrap();
    let cfg = ChaosConfig {
        horizon: Rational::from_integer(2),
        taming: tamed(),
        delta: dyadic(8),
        n_list: vec![64, 128, 256, 512, 1024],
        n_reference: 4096,
        probe_count: 64,
        p: 2.0,
        seed: 0,
        snap: false,
        workers: 0,
    };
    match chaos_study(&m, &cfg) {
        Ok(r) => slope_in(&r, -0.75, -0.25),
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn oracle() -> Outcome {
    let cfg = OracleConfig {
        params: LinearParams::default(),
        horizon: Rational::from_integer(2),
        taming: tamed(),
        delta: dyadic(10),
        n_particles: 2000,
        seed: 0,
        workers: 0,
    };
    match meanfield_oracle(&cfg) {
        Ok(r) => Outcome {
            pass: true,
            detail: format!("gap {:.3e} within allowance {:.3e}", r.stats["gap"], r.stats["allowed"]),
        },
        Err(e) => Outcome {
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn determinism() -> Outcome {
    let ex2 = builtin("example2", &no_params()).unwrap();
    let lin = builtin(
        "linear",
        &[("spread".to_string(), "0.5".to_string())].into_iter().collect(),
    )
    .unwrap();
    let ex1 = builtin("example1", &no_params()).unwrap();
    let runs = |workers: usize| -> Vec<String> {
        let conv = convergence_study(
            &ex2,
            &ConvergenceConfig {
                horizon: Rational::from_integer(4),
                taming: tamed(),
                n_particles: 64,
                finest_exponent: 9,
                level_exponents: vec![5, 6, 7, 8],
                seed: 5,
                snap: true,
                workers,
            },
        )
        .unwrap();
        let ch = chaos_study(
            &lin,
            &ChaosConfig {
                horizon: Rational::from_integer(2),
                taming: tamed(),
                delta: dyadic(6),
                n_list: vec![16, 32, 64],
                n_reference: 256,
                probe_count: 16,
                p: 2.0,
                seed: 5,
                snap: false,
                workers,
            },
        )
        .unwrap();
        let mo = moment_sweep(
            &ex1,
            &MomentConfig {
                horizon: Rational::from_integer(4),
                taming: tamed(),
                delta_list: vec![dyadic(5), dyadic(6)],
                n_particles: 50,
                p: 2.0,
                seeds: vec![1, 2, 3],
                snap: true,
                workers,
            },
        )
        .unwrap();
        [conv, ch, mo].iter().map(|r| r.csv_string(false)).collect()
    };
    let base = runs(1);
    let mismatched: Vec<usize> = [2, 4, 8].into_iter().filter(|&w| runs(w) != base).collect();
    Outcome {
        pass: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            "convergence, chaos and moment CSVs identical for 1, 2, 4 and 8 workers".into()
        } else {
            format!("CSV bytes differ for worker counts {mismatched:?}")
        },
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: Vec<Criterion> = vec![
        ("convergence example1 (N=500, levels 2^-9..2^-12, ref 2^-13)", || {
            convergence("example1", 500, 0.35, 0.65)
        }),
        ("convergence example2 (N=256, levels 2^-9..2^-12, ref 2^-13)", || {
            convergence("example2", 256, 0.30, 0.70)
        }),
        ("taming bound and direction, 10^6 checks", taming_suite),
        ("untamed divergence witness, 100 seeds", untamed_witness),
        ("moment uniformity example1, delta 2^-6..2^-10", moment_uniformity),
        (
            "example1 smoke bound (supplementary, delta 2^-10, N=100)",
            example1_smoke,
        ),
        ("wasserstein exactness", wasserstein_exactness),
        ("empirical-measure rate, normal, p=2", fg_rate),
        ("propagation of chaos proxy, linear model", chaos),
        ("mean-field oracle, linear defaults", oracle),
        ("determinism across worker counts", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
