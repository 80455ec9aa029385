//! Synthetic benchmark: low-rank truth, uniform noisy observations, and a
//! grid runner over priors.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{run_gibbs, RunOptions};
use crate::model::{rmse, ObservationSet, PriorSpec, Rating, SamplerConfig};
use crate::rng::RngStream;

/// How `entry_param` is read when drawing the factor entries of the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryScale {
    Variance,
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Side of the square matrix.
    pub m: usize,
    /// True rank `r`.
    pub rank: usize,
    /// Spread of the factor entries, read according to `scale`.
    pub entry_param: f64,
    pub scale: EntryScale,
    pub observe_fraction: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Draw observed cells with replacement (default) or as distinct cells.
    pub with_replacement: bool,
}

impl SyntheticSpec {
    /// Rank-2 truth with factor entries of variance `20 / sqrt(m)`, 20% of
    /// the cells observed with unit Gaussian noise.
    pub fn benchmark(m: usize, seed: u64) -> Self {
        SyntheticSpec {
            m,
            rank: 2,
            entry_param: 20.0 / (m as f64).sqrt(),
            scale: EntryScale::Variance,
            observe_fraction: 0.2,
            noise_sd: 1.0,
            seed,
            with_replacement: true,
        }
    }

    pub fn entry_sd(&self) -> f64 {
        match self.scale {
            EntryScale::Variance => self.entry_param.sqrt(),
            EntryScale::StdDev => self.entry_param,
        }
    }

    /// `n = round(observe_fraction * m^2)`.
    pub fn n_observations(&self) -> usize {
        (self.observe_fraction * (self.m * self.m) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.rank == 0 {
            return Err(Error::usage("m and rank must be positive"));
        }
        if self.rank > self.m {
            return Err(Error::usage(format!(
                "rank {} exceeds matrix side {}",
                self.rank, self.m
            )));
        }
        if !(self.observe_fraction > 0.0 && self.observe_fraction <= 1.0) {
            return Err(Error::usage("observe_fraction must lie in (0, 1]"));
        }
        if !(self.entry_param > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::usage("entry scale must be positive and noise_sd nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub truth: DMatrix<f64>,
    pub obs: ObservationSet,
}

/// Draw `theta0 = M0 N0^T` and `n` noisy observations of it.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &RngStream) -> Result<SyntheticData> {
    spec.validate()?;
    let (m, r) = (spec.m, spec.rank);
    let sd = spec.entry_sd();
    let mut factors = rng.fork(0);
    let m0 = DMatrix::from_fn(m, r, |_, _| sd * factors.standard_normal());
    let n0 = DMatrix::from_fn(m, r, |_, _| sd * factors.standard_normal());
    let truth = &m0 * n0.transpose();

    let n = spec.n_observations();
    let mut cells_rng = rng.fork(1);
    let cells: Vec<usize> = if spec.with_replacement {
        (0..n)
            .map(|_| cells_rng.random_range(0..m * m))
            .collect()
    } else {
        use rand::seq::index::sample;
        sample(&mut cells_rng, m * m, n).into_vec()
    };
    let mut noise = rng.fork(2);
    let entries = cells
        .into_iter()
        .map(|c| {
            let (i, j) = (c / m, c % m);
            Rating::new(i, j, truth[(i, j)] + spec.noise_sd * noise.standard_normal())
        })
        .collect();
    Ok(SyntheticData {
        truth,
        obs: ObservationSet::new(m, m, entries)?,
    })
}

/// One `(dataset, prior)` cell of a benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub m: usize,
    #[serde(rename = "K")]
    pub rank: usize,
    pub prior: String,
    pub hyperparams: String,
    pub seed: u64,
    pub rmse: f64,
    pub seconds: f64,
    pub retained_count: usize,
    pub true_rank: usize,
}

impl ExperimentResult {
    pub const CSV_HEADER: &'static str = "m,K,prior,hyperparams,seed,rmse,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{:.3}",
            self.m, self.rank, self.prior, self.hyperparams, self.seed, self.rmse, self.seconds
        )
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.seconds = other.seconds;
        a == *other
    }
}

pub fn results_to_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from(ExperimentResult::CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Fit one prior to one generated dataset and score it against the truth.
pub fn run_cell(
    spec: &SyntheticSpec,
    data: &SyntheticData,
    prior: &PriorSpec,
    config: &SamplerConfig,
) -> Result<ExperimentResult> {
    let start = Instant::now();
    let summary = run_gibbs(&data.obs, prior, config, RunOptions::default())?;
    let estimate = summary
        .theta_mean
        .as_dense()
        .ok_or_else(|| Error::usage("synthetic runs need a dense posterior mean"))?;
    Ok(ExperimentResult {
        m: spec.m,
        rank: config.rank,
        prior: prior.name().to_string(),
        hyperparams: prior.hyperparams(),
        seed: spec.seed,
        rmse: rmse(estimate, &data.truth)?,
        seconds: start.elapsed().as_secs_f64(),
        retained_count: summary.retained_count,
        true_rank: spec.rank,
    })
}

/// Every `(spec, prior)` combination, spec-major. Each spec's data come
/// from a stream seeded by `spec.seed`; each chain from its config's seed.
pub fn run_grid(
    specs: &[SyntheticSpec],
    priors: &[(PriorSpec, SamplerConfig)],
) -> Result<Vec<ExperimentResult>> {
    if specs.is_empty() || priors.is_empty() {
        return Err(Error::usage("grid needs at least one spec and one prior"));
    }
    let datasets = specs
        .iter()
        .map(|s| generate_synthetic(s, &RngStream::new(s.seed)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..priors.len()).map(move |p| (s, p)))
        .collect();
    jobs.par_iter()
        .map(|&(s, p)| run_cell(&specs[s], &datasets[s], &priors[p].0, &priors[p].1))
        .collect()
}

/// Prior kinds compared in the benchmark tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Fixed,
    Gamma,
    InverseGamma,
    Discrete,
}

impl PriorKind {
    pub const ALL: [PriorKind; 4] = [
        PriorKind::Fixed,
        PriorKind::Gamma,
        PriorKind::InverseGamma,
        PriorKind::Discrete,
    ];
}

/// Reference RMSE by `m` at `K = 5`: rows are `m = 100, 200, 500, 1000`,
/// columns fixed, gamma, inverse gamma, discrete.
pub const SIZE_SWEEP_RMSE: [(usize, [f64; 4]); 4] = [
    (100, [0.75, 0.60, 0.59, 0.60]),
    (200, [0.47, 0.37, 0.39, 0.36]),
    (500, [0.27, 0.23, 0.25, 0.22]),
    (1000, [0.18, 0.16, 0.18, 0.16]),
];

/// Reference RMSE by `K` at `m = 500`, same column order.
pub const RANK_SWEEP_RMSE: [(usize, [f64; 4]); 4] = [
    (2, [0.22, 0.22, 0.22, 0.22]),
    (5, [0.27, 0.23, 0.25, 0.22]),
    (10, [0.31, 0.23, 0.26, 0.22]),
    (20, [0.37, 0.22, 0.27, 0.22]),
];

/// Tuned hyperparameters for the size sweep (`K = 5`).
pub fn size_sweep_prior(m: usize, kind: PriorKind) -> Option<PriorSpec> {
    let (gamma0, beta2, b, epsilon) = match m {
        100 => (0.2, 500.0, 0.015, 0.11),
        200 => (1.0, 2000.0, 0.012, 0.08),
        500 => (7.0, 10_000.0, 0.005, 0.05),
        1000 => (10.0, 40_000.0, 0.007, 0.03),
        _ => return None,
    };
    Some(tuned(kind, gamma0, beta2, b, epsilon))
}

/// Tuned hyperparameters for the rank sweep (`m = 500`).
pub fn rank_sweep_prior(k: usize, kind: PriorKind) -> Option<PriorSpec> {
    let (gamma0, beta2, b, epsilon) = match k {
        2 => (1.0, 5000.0, 0.001, 0.05),
        5 => (7.0, 10_000.0, 0.005, 0.05),
        10 => (6.0, 12_500.0, 0.006, 0.03),
        20 => (6.0, 13_000.0, 0.003, 0.02),
        _ => return None,
    };
    Some(tuned(kind, gamma0, beta2, b, epsilon))
}

fn tuned(kind: PriorKind, gamma0: f64, beta2: f64, b: f64, epsilon: f64) -> PriorSpec {
    match kind {
        PriorKind::Fixed => PriorSpec::Fixed { gamma0 },
        PriorKind::Gamma => PriorSpec::gamma_from_beta2(beta2),
        PriorKind::InverseGamma => PriorSpec::InverseGamma { a: 1.0, b },
        PriorKind::Discrete => PriorSpec::Discrete {
            epsilon,
            c: 1.0,
            p: 0.05,
        },
    }
}

/// Sample mean and standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
