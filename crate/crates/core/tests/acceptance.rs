//! Acceptance checks. Prints one line per criterion and exits non-zero if a
//! hard criterion fails. Run with `cargo test -p lowrank --test acceptance`.

use std::path::PathBuf;
use std::process::ExitCode;

use lowrank::conditionals::{
    log_gamma_prior_column_integral, row_conditional_m, row_conditional_n, slab_probability,
};
use lowrank::experiments::{
    generate_synthetic, mean_sd, rank_sweep_prior, run_cell, size_sweep_prior, PriorKind,
    SyntheticSpec, RANK_SWEEP_RMSE, SIZE_SWEEP_RMSE,
};
use lowrank::gibbs::{acf, run_gibbs, RunOptions};
use lowrank::io::{parse_ratings, train_test_split, RatingsFormat};
use lowrank::vb::{run_vb, vb_init, vb_update_gamma, vb_update_m, vb_update_n, VbConfig};
use lowrank::{
    holdout_rmse, FactorMatrix, ObservationSet, PriorSpec, Rating, RngStream, SamplerConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Clone, Copy, PartialEq)]
enum Outcome {
    Pass,
    Fail,
    SoftFail,
    Skip,
}

struct Report {
    lines: Vec<(usize, Outcome, String)>,
}

impl Report {
    fn record(&mut self, id: usize, outcome: Outcome, detail: String) {
        let tag = match outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::SoftFail => "SOFT-FAIL",
            Outcome::Skip => "SKIP",
        };
        println!("criterion {id}: {tag}: {detail}");
        self.lines.push((id, outcome, detail));
    }
}

fn pass_if(ok: bool) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

// ---------------------------------------------------------------- criterion 1

/// Ridge-regression posterior from the SVD of the stacked system
/// `[X / s; diag(gamma)^{-1/2}] beta ≈ [y / s; 0]`: the mean is its least-squares
/// solution and the covariance is `V Σ^{-2} V^T`.
fn regression_oracle(x: &DMatrix<f64>, y: &DVector<f64>, gamma: &[f64], s2: f64) -> (DVector<f64>, DMatrix<f64>) {
    let k = gamma.len();
    let rows = x.nrows();
    let s = s2.sqrt();
    let a = DMatrix::from_fn(rows + k, k, |r, h| {
        if r < rows {
            x[(r, h)] / s
        } else if r - rows == h {
            1.0 / gamma[h].sqrt()
        } else {
            0.0
        }
    });
    let b = DVector::from_fn(rows + k, |r, _| if r < rows { y[r] / s } else { 0.0 });
    let svd = a.svd(true, true);
    let mean = svd.solve(&b, 0.0).unwrap();
    let v = svd.v_t.as_ref().unwrap().transpose();
    let inv_sq = DMatrix::from_diagonal(&svd.singular_values.map(|sv| 1.0 / (sv * sv)));
    (mean, &v * inv_sq * v.transpose())
}

fn oracle_exactness() -> (Outcome, String) {
    let mut rng = RngStream::new(2024);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..500 {
        let rows = 1 + (rng.uniform() * 3.0) as usize;
        let cols = 1 + (rng.uniform() * 3.0) as usize;
        let k = 1 + (rng.uniform() * 2.0) as usize;
        let n_obs = 1 + (rng.uniform() * 8.0) as usize;
        let entries: Vec<Rating> = (0..n_obs)
            .map(|_| {
                let i = (rng.uniform() * rows as f64) as usize;
                let j = (rng.uniform() * cols as f64) as usize;
                Rating::new(i, j, 2.0 * rng.standard_normal())
            })
            .collect();
        let obs = ObservationSet::new(rows, cols, entries).unwrap();
        let m = FactorMatrix::from_fn(rows, k, |_, _| rng.standard_normal());
        let n = FactorMatrix::from_fn(cols, k, |_, _| rng.standard_normal());
        let gamma: Vec<f64> = (0..k).map(|_| 0.05 + 4.0 * rng.uniform()).collect();
        let lambda = 0.1 + 10.0 * rng.uniform();
        let s2 = obs.len() as f64 / (2.0 * lambda);
        for (target, other, by_row) in [(rows, &n, true), (cols, &m, false)] {
            for r in 0..target {
                let cond = if by_row {
                    row_conditional_m(r, other, &gamma, &obs, lambda)
                } else {
                    row_conditional_n(r, other, &gamma, &obs, lambda)
                }
                .unwrap();
                let picked: Vec<&Rating> = obs
                    .entries()
                    .iter()
                    .filter(|e| if by_row { e.row == r } else { e.col == r })
                    .collect();
                let x = DMatrix::from_fn(picked.len(), k, |q, h| {
                    let e = picked[q];
                    other.get(if by_row { e.col } else { e.row }, h)
                });
                let y = DVector::from_iterator(picked.len(), picked.iter().map(|e| e.value));
                let (mean, cov) = regression_oracle(&x, &y, &gamma, s2);
                let dm = (cond.mean().unwrap() - mean).abs().max();
                let dc = (cond.covariance().unwrap() - cov).abs().max();
                worst = worst.max(dm).max(dc);
                cases += 1;
            }
        }
    }
    (
        pass_if(worst < 1e-10),
        format!("{cases} row conditionals, max abs deviation {worst:.2e} (tol 1e-10)"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn quadrature_identity() -> (Outcome, String) {
    let dim = 10;
    let mut worst: f64 = 0.0;
    for beta in [0.5, 1.0, 5.0] {
        let ratio = |s: f64| {
            let log_i = log_gamma_prior_column_integral(s, beta, dim).unwrap();
            (log_i + beta * s.sqrt()).exp()
        };
        let reference = ratio(1.0);
        for s in [0.1, 1.0, 4.0, 10.0, 100.0] {
            worst = worst.max((ratio(s) / reference - 1.0).abs());
        }
    }
    (
        pass_if(worst < 1e-6),
        format!("integral / exp(-beta sqrt S) constant per beta to {worst:.2e} (tol 1e-6)"),
    )
}

// ---------------------------------------------------------------- criterion 3

/// CDF of `theta = M N` under `exp(-(y - M N)^2 / 2 - (M^2 + N^2) / (2 g))`.
/// `N | M` is Gaussian, so the inner integral is a normal CDF and the outer
/// one is a trapezoid rule on a fine grid in `M`.
struct MicroPosterior {
    grid: Vec<(f64, f64, f64, f64)>,
    total: f64,
}

impl MicroPosterior {
    fn new(y: f64, g: f64) -> Self {
        let steps = 20_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / steps as f64;
        let mut grid = Vec::with_capacity(steps + 1);
        let mut total = 0.0;
        for q in 0..=steps {
            let m = lo + q as f64 * h;
            let prec = 1.0 / g + m * m;
            let log_w = -m * m / (2.0 * g) - 0.5 * prec.ln() + 0.5 * (m * y).powi(2) / prec;
            let edge = if q == 0 || q == steps { 0.5 } else { 1.0 };
            let w = edge * h * log_w.exp();
            let mean = m * m * y / prec;
            let sd = m.abs() / prec.sqrt();
            grid.push((w, mean, sd, m));
            total += w;
        }
        MicroPosterior { grid, total }
    }

    fn cdf(&self, t: f64, phi: &Normal) -> f64 {
        self.grid
            .iter()
            .map(|&(w, mean, sd, _)| {
                let p = if sd == 0.0 {
                    if t >= mean { 1.0 } else { 0.0 }
                } else {
                    phi.cdf((t - mean) / sd)
                };
                w * p
            })
            .sum::<f64>()
            / self.total
    }
}

fn micro_posterior() -> (Outcome, String) {
    let y = 2.0;
    let gamma0 = 1.0;
    let obs = ObservationSet::new(1, 1, vec![Rating::new(0, 0, y)]).unwrap();
    let cfg = SamplerConfig {
        rank: 1,
        iterations: 1000 + 5 * 100_000,
        burn_in: 1000,
        thinning: 5,
        seed: 31,
        ..Default::default()
    };
    let summary = run_gibbs(&obs, &PriorSpec::Fixed { gamma0 }, &cfg, RunOptions::default()).unwrap();
    let trace = &summary.entry_traces[0].values;
    let mut draws: Vec<f64> = trace
        .iter()
        .enumerate()
        .filter(|(t, _)| cfg.is_retained(t + 1))
        .map(|(_, &v)| v)
        .collect();
    draws.sort_by(f64::total_cmp);
    let n = draws.len();

    let phi = Normal::new(0.0, 1.0).unwrap();
    let oracle = MicroPosterior::new(y, gamma0);
    let (lo, hi) = (draws[0], draws[n - 1]);
    let points = 2000;
    let table: Vec<f64> = (0..=points)
        .map(|q| oracle.cdf(lo + (hi - lo) * q as f64 / points as f64, &phi))
        .collect();
    let interp = |x: f64| {
        let u = (x - lo) / (hi - lo) * points as f64;
        let q = (u.floor() as usize).min(points - 1);
        let f = u - q as f64;
        table[q] * (1.0 - f) + table[q + 1] * f
    };
    let d = draws
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = interp(x);
            (f - k as f64 / n as f64).abs().max(((k + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    (
        pass_if(n == 100_000 && d < 0.02),
        format!("{n} retained draws, Kolmogorov distance {d:.4} (tol 0.02)"),
    )
}

// ---------------------------------------------------------------- criterion 4

const SEEDS: [u64; 3] = [1, 2, 3];

fn kind_label(kind: PriorKind) -> &'static str {
    match kind {
        PriorKind::Fixed => "fixed",
        PriorKind::Gamma => "gamma",
        PriorKind::InverseGamma => "invgamma",
        PriorKind::Discrete => "discrete",
    }
}

fn replicate(m: usize, rank: usize, prior: &PriorSpec) -> Vec<f64> {
    SEEDS
        .iter()
        .map(|&seed| {
            let spec = SyntheticSpec::benchmark(m, seed);
            let data = generate_synthetic(&spec, &RngStream::new(seed)).unwrap();
            let cfg = SamplerConfig {
                rank,
                seed: 100 + seed,
                ..Default::default()
            };
            run_cell(&spec, &data, prior, &cfg).unwrap().rmse
        })
        .collect()
}

fn table_size_sweep() -> (Outcome, String) {
    let mut ok = true;
    let mut cells = Vec::new();
    let mut trend_held = 0;
    let mut trend_total = 0;
    let mut per_seed: Vec<Vec<f64>> = Vec::new();
    for &(m, targets) in SIZE_SWEEP_RMSE.iter().filter(|(m, _)| *m <= 200) {
        for (kind, target) in PriorKind::ALL.into_iter().zip(targets) {
            let rmses = replicate(m, 5, &size_sweep_prior(m, kind).unwrap());
            let (mean, sd) = mean_sd(&rmses);
            let good = (mean - target).abs() <= 0.08;
            ok &= good;
            cells.push(format!(
                "m={m} {} {mean:.3}±{sd:.3} (reference {target:.2}){}",
                kind_label(kind),
                if good { "" } else { " OUT" }
            ));
            per_seed.push(rmses);
        }
    }
    for p in 1..4 {
        for s in 0..SEEDS.len() {
            trend_total += 1;
            if per_seed[4 + p][s] < per_seed[p][s] {
                trend_held += 1;
            }
        }
    }
    (
        pass_if(ok),
        format!(
            "{}; m=200 beats m=100 for adaptive priors in {trend_held}/{trend_total} seeds (tol ±0.08)",
            cells.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn table_rank_sweep() -> (Outcome, String) {
    let mut means = [[0.0; 4]; 4];
    let mut cells = Vec::new();
    for (r, &(k, targets)) in RANK_SWEEP_RMSE.iter().enumerate() {
        for (c, kind) in PriorKind::ALL.into_iter().enumerate() {
            let rmses = replicate(500, k, &rank_sweep_prior(k, kind).unwrap());
            means[r][c] = mean_sd(&rmses).0;
            cells.push(format!(
                "K={k} {} {:.3} (reference {:.2})",
                kind_label(kind),
                means[r][c],
                targets[c]
            ));
        }
    }
    let in_band = |c: usize| (0..4).all(|r| (0.17..=0.28).contains(&means[r][c]));
    let gamma_ok = in_band(1);
    let discrete_ok = in_band(3);
    let fixed_gap = means[3][0] - means[0][0];
    let flat: Vec<String> = [1usize, 3]
        .iter()
        .map(|&c| format!("{:.3}", (means[3][c] - means[0][c]).abs()))
        .collect();
    (
        pass_if(gamma_ok && discrete_ok && fixed_gap > 0.10),
        format!(
            "{}; gamma in [0.17,0.28]: {gamma_ok}, discrete in [0.17,0.28]: {discrete_ok}, \
             fixed K=20 minus K=2 = {fixed_gap:.3} (need > 0.10), |K=20 - K=2| gamma/discrete = {}",
            cells.join(", "),
            flat.join("/")
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn movielens() -> (Outcome, String) {
    let path = std::env::var_os("LOWRANK_MOVIELENS_100K")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/ml-100k/u.data"));
    if !path.is_file() {
        return (
            Outcome::Skip,
            format!(
                "MovieLens-100K not found at {}; set LOWRANK_MOVIELENS_100K to the u.data file",
                path.display()
            ),
        );
    }
    let data = parse_ratings(&path, RatingsFormat::Tab).unwrap();
    let (train, test) = train_test_split(&data.obs, 0.8, 1).unwrap();
    let rank = 10;
    let gibbs_cfg = SamplerConfig {
        rank,
        seed: 1,
        ..Default::default()
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for prior in [
        PriorSpec::Discrete {
            epsilon: 0.07,
            c: 1.0,
            p: 0.05,
        },
        PriorSpec::InverseGamma { a: 1.0, b: 0.1 },
    ] {
        let summary = run_gibbs(&train, &prior, &gibbs_cfg, RunOptions::default()).unwrap();
        let r = holdout_rmse(&summary, &test).unwrap();
        ok &= r <= 0.95;
        parts.push(format!("Gibbs {} {r:.3}", prior.name()));
    }
    let fit = run_vb(
        &train,
        &VbConfig {
            rank,
            a: 1.0,
            b: 0.1,
            seed: 1,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let r = holdout_rmse(&fit.state, &test).unwrap();
    ok &= r <= 0.95 && fit.converged && fit.iterations <= 30;
    parts.push(format!(
        "VB inverse_gamma {r:.3} after {} iterations (converged {})",
        fit.iterations, fit.converged
    ));
    (
        pass_if(ok),
        format!("{} (need RMSE <= 0.95, VB within 30 iterations)", parts.join(", ")),
    )
}

// ---------------------------------------------------------------- criterion 7

fn mixing() -> (Outcome, String) {
    let m = 200;
    let spec = SyntheticSpec::benchmark(m, 1);
    let data = generate_synthetic(&spec, &RngStream::new(1)).unwrap();
    let cfg = SamplerConfig {
        rank: 5,
        seed: 101,
        ..Default::default()
    };
    let prior = size_sweep_prior(m, PriorKind::Discrete).unwrap();
    let summary = run_gibbs(&data.obs, &prior, &cfg, RunOptions::default()).unwrap();
    let mut below = 0;
    let mut lag3 = Vec::new();
    for tr in &summary.entry_traces {
        let a = acf(&tr.values[cfg.burn_in..], 3).unwrap();
        if a.values[1..].iter().any(|&v| v < 0.2) {
            below += 1;
        }
        lag3.push(format!("{:.2}", a.values[3]));
    }
    let total = summary.entry_traces.len();
    let outcome = if below >= 7 { Outcome::Pass } else { Outcome::SoftFail };
    (
        outcome,
        format!(
            "{below}/{total} tracked entries have ACF < 0.2 by lag 3 (need 7); lag-3 values {}",
            lag3.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn small_obs(max_dim: usize, max_obs: usize) -> impl Strategy<Value = ObservationSet> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(move |(r, c)| {
        prop::collection::vec((0..r, 0..c, -4.0..4.0f64), 0..=max_obs).prop_map(move |cells| {
            ObservationSet::new(r, c, cells.into_iter().map(|(i, j, y)| Rating::new(i, j, y)).collect())
                .unwrap()
        })
    })
}

fn factors(rows: usize, cols: usize, k: usize, seed: u64) -> (FactorMatrix, FactorMatrix, Vec<f64>) {
    let mut rng = RngStream::new(seed);
    let m = FactorMatrix::from_fn(rows, k, |_, _| rng.standard_normal());
    let n = FactorMatrix::from_fn(cols, k, |_, _| rng.standard_normal());
    let gamma = (0..k).map(|_| 0.05 + 3.0 * rng.uniform()).collect();
    (m, n, gamma)
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> std::result::Result<(), TestCaseError>,
) -> std::result::Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 128,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

fn properties() -> (Outcome, String) {
    let results = [
        run_property(
            "precision symmetric and PD",
            (small_obs(8, 40), 1usize..6, any::<u64>(), 0.1..20.0f64),
            |(obs, k, seed, lambda)| {
                let (m, n, gamma) = factors(obs.rows(), obs.cols(), k, seed);
                for i in 0..obs.rows() {
                    let p = row_conditional_m(i, &n, &gamma, &obs, lambda).unwrap().precision;
                    prop_assert!((&p - p.transpose()).abs().max() <= 1e-12 * (1.0 + p.abs().max()));
                    prop_assert!(p.cholesky().is_some());
                }
                for j in 0..obs.cols() {
                    let p = row_conditional_n(j, &m, &gamma, &obs, lambda).unwrap().precision;
                    prop_assert!((&p - p.transpose()).abs().max() <= 1e-12 * (1.0 + p.abs().max()));
                    prop_assert!(p.cholesky().is_some());
                }
                Ok(())
            },
        ),
        run_property(
            "log-space slab weight",
            (0.0..5.0f64, 2usize..=20, 0.01..0.5f64, 0.6..3.0f64, 0.01..0.99f64),
            |(s, dim, eps, c, p)| {
                let h = dim as f64 / 2.0;
                let slab = p * c.powf(-h) * (-s / (2.0 * c)).exp();
                let spike = (1.0 - p) * eps.powf(-h) * (-s / (2.0 * eps)).exp();
                let naive = slab / (slab + spike);
                prop_assert!((slab_probability(s, dim, eps, c, p) - naive).abs() <= 1e-12);
                Ok(())
            },
        ),
        run_property(
            "VB fixed-point residual (every parameter < 10 tol)",
            (small_obs(6, 30), 0u64..1000),
            |(obs, seed)| {
                let cfg = VbConfig {
                    rank: 2,
                    seed,
                    max_iterations: 2000,
                    ..Default::default()
                };
                let fit = run_vb(&obs, &cfg, None).unwrap();
                prop_assume!(fit.converged);
                let lambda = cfg.lambda_for(obs.len());
                let mut s = fit.state.clone();
                vb_update_m(&mut s, &obs, lambda, cfg.a).unwrap();
                vb_update_n(&mut s, &obs, lambda, cfg.a).unwrap();
                vb_update_gamma(&mut s, cfg.b);
                let d = s.max_abs_diff(&fit.state);
                prop_assert!(d < 10.0 * cfg.tolerance, "extra cycle moved a parameter by {}", d);
                Ok(())
            },
        ),
        run_property(
            "transpose dualities",
            (small_obs(6, 30), 1usize..4, any::<u64>()),
            |(obs, k, seed)| {
                let t = obs.transpose();
                let (_, n, gamma) = factors(obs.rows(), obs.cols(), k, seed);
                for i in 0..obs.rows() {
                    prop_assert_eq!(
                        row_conditional_m(i, &n, &gamma, &obs, 3.0).unwrap(),
                        row_conditional_n(i, &n, &gamma, &t, 3.0).unwrap()
                    );
                }
                let cfg = VbConfig {
                    rank: k,
                    seed,
                    ..Default::default()
                };
                let lambda = cfg.lambda_for(obs.len());
                let mut s = vb_init(obs.rows(), obs.cols(), &cfg).unwrap();
                let mut st = s.transpose();
                vb_update_m(&mut s, &obs, lambda, cfg.a).unwrap();
                vb_update_n(&mut st, &t, lambda, cfg.a).unwrap();
                prop_assert!(s.transpose().max_abs_diff(&st) <= 1e-12);
                Ok(())
            },
        ),
        run_property(
            "Gibbs determinism",
            (small_obs(5, 20), any::<u64>()),
            |(obs, seed)| {
                let cfg = SamplerConfig {
                    rank: 2,
                    iterations: 12,
                    burn_in: 2,
                    thinning: 2,
                    seed,
                    ..Default::default()
                };
                let prior = PriorSpec::gamma_from_beta2(4.0);
                let a = run_gibbs(&obs, &prior, &cfg, RunOptions::default()).unwrap();
                let b = run_gibbs(&obs, &prior, &cfg, RunOptions::default()).unwrap();
                prop_assert_eq!(a, b);
                Ok(())
            },
        ),
        run_property(
            "split exactness",
            (2usize..400, 0.01..0.99f64, any::<u64>()),
            |(n, ratio, seed)| {
                let entries = (0..n).map(|k| Rating::new(k % 9, k % 4, k as f64)).collect();
                let obs = ObservationSet::new(9, 4, entries).unwrap();
                let (train, test) = train_test_split(&obs, ratio, seed).unwrap();
                prop_assert_eq!(train.len(), (ratio * n as f64).round() as usize);
                prop_assert_eq!(train.len() + test.len(), n);
                let mut seen: Vec<usize> = train
                    .entries()
                    .iter()
                    .chain(test.entries())
                    .map(|e| e.value as usize)
                    .collect();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(train_test_split(&obs, ratio, seed).unwrap(), (train, test));
                Ok(())
            },
        ),
    ];
    let failures: Vec<String> = results.iter().filter_map(|r| r.clone().err()).collect();
    let total = results.len();
    if failures.is_empty() {
        (Outcome::Pass, format!("{total}/{total} property suites hold (128 cases each)"))
    } else {
        let first_lines: Vec<String> = failures
            .iter()
            .map(|f| f.lines().next().unwrap_or_default().to_string())
            .collect();
        (
            Outcome::Fail,
            format!(
                "{}/{total} property suites hold; failing: {}",
                total - failures.len(),
                first_lines.join(" | ")
            ),
        )
    }
}

fn main() -> ExitCode {
    let mut report = Report { lines: Vec::new() };
    let checks: [(usize, fn() -> (Outcome, String)); 8] = [
        (1, oracle_exactness),
        (2, quadrature_identity),
        (3, micro_posterior),
        (4, table_size_sweep),
        (5, table_rank_sweep),
        (6, movielens),
        (7, mixing),
        (8, properties),
    ];
    let only: Option<Vec<usize>> = std::env::var("LOWRANK_ACCEPTANCE_ONLY").ok().map(|s| {
        s.split(',').filter_map(|x| x.trim().parse().ok()).collect()
    });
    for (id, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let (outcome, detail) = check();
        report.record(id, outcome, detail);
    }
    let hard = report.lines.iter().filter(|l| l.1 == Outcome::Fail).count();
    println!(
        "acceptance: {} pass, {hard} fail, {} soft-fail, {} skipped",
        report.lines.iter().filter(|l| l.1 == Outcome::Pass).count(),
        report.lines.iter().filter(|l| l.1 == Outcome::SoftFail).count(),
        report.lines.iter().filter(|l| l.1 == Outcome::Skip).count()
    );
    if hard == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
