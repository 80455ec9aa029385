//! Coordinate-ascent variational Bayes under the inverse-gamma prior.
//!
//! The approximation is `q(M) q(N) q(gamma)` with Gaussian rows
//! `q(M_i) = N(m_i, V_i)`, `q(N_j) = N(n_j, W_j)` and
//! `q(gamma_h) = InvGamma(a + (m1 + m2)/2, b_h)`. Each cycle updates the
//! rows of `M`, then the rows of `N`, then `b`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{dot, FactorMatrix, ObservationSet, Predictor};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbConfig {
    pub rank: usize,
    /// Inverse temperature; `None` means `n / (2 noise_sd^2)`.
    pub lambda: Option<f64>,
    pub noise_sd: f64,
    /// Inverse-gamma prior shape.
    pub a: f64,
    /// Inverse-gamma prior rate.
    pub b: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            rank: 10,
            lambda: None,
            noise_sd: 1.0,
            a: 1.0,
            b: 0.1,
            tolerance: 1e-4,
            max_iterations: 100,
            seed: 0,
        }
    }
}

impl VbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::usage("rank K must be positive"));
        }
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("noise_sd", self.noise_sd),
            ("tolerance", self.tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::usage(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::usage("lambda must be positive"));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::usage("max_iterations must be positive"));
        }
        Ok(())
    }

    pub fn lambda_for(&self, n: usize) -> f64 {
        self.lambda
            .unwrap_or_else(|| n as f64 / (2.0 * self.noise_sd * self.noise_sd))
    }
}

/// Variational parameters. Covariances are stored row-major, `K * K` per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbState {
    pub m_mean: FactorMatrix,
    pub m_cov: Vec<f64>,
    pub n_mean: FactorMatrix,
    pub n_cov: Vec<f64>,
    /// Rates of the `q(gamma_h)` factors.
    pub b: Vec<f64>,
}

impl VbState {
    pub fn rank(&self) -> usize {
        self.b.len()
    }

    pub fn m_cov_row(&self, i: usize) -> &[f64] {
        let kk = self.rank() * self.rank();
        &self.m_cov[i * kk..(i + 1) * kk]
    }

    pub fn n_cov_row(&self, j: usize) -> &[f64] {
        let kk = self.rank() * self.rank();
        &self.n_cov[j * kk..(j + 1) * kk]
    }

    /// Shape of every `q(gamma_h)`.
    pub fn gamma_shape(&self, a: f64) -> f64 {
        a + (self.m_mean.rows() + self.n_mean.rows()) as f64 / 2.0
    }

    /// The same parameters for the transposed problem.
    pub fn transpose(&self) -> Self {
        VbState {
            m_mean: self.n_mean.clone(),
            m_cov: self.n_cov.clone(),
            n_mean: self.m_mean.clone(),
            n_cov: self.m_cov.clone(),
            b: self.b.clone(),
        }
    }

    /// Largest absolute difference over every parameter.
    pub fn max_abs_diff(&self, other: &VbState) -> f64 {
        let pairs = [
            (self.m_mean.as_slice(), other.m_mean.as_slice()),
            (self.n_mean.as_slice(), other.n_mean.as_slice()),
            (&self.m_cov[..], &other.m_cov[..]),
            (&self.n_cov[..], &other.n_cov[..]),
            (&self.b[..], &other.b[..]),
        ];
        pairs
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

impl Predictor for VbState {
    fn predict(&self, i: usize, j: usize) -> Option<f64> {
        (i < self.m_mean.rows() && j < self.n_mean.rows())
            .then(|| dot(self.m_mean.row(i), self.n_mean.row(j)))
    }
}

/// Seeded starting point: means `Normal(0, 0.1)`, covariances `0.1 I`,
/// `b_h = b + (m1 + m2)/20`.
pub fn vb_init(rows: usize, cols: usize, config: &VbConfig) -> Result<VbState> {
    config.validate()?;
    let k = config.rank;
    let root = RngStream::new(config.seed).fork(0x5642);
    let sd = 0.1f64.sqrt();
    let mut rm = root.fork(0);
    let mut rn = root.fork(1);
    let m_mean = FactorMatrix::from_fn(rows, k, |_, _| sd * rm.standard_normal());
    let n_mean = FactorMatrix::from_fn(cols, k, |_, _| sd * rn.standard_normal());
    let mut eye = vec![0.0; k * k];
    for h in 0..k {
        eye[h * k + h] = 0.1;
    }
    Ok(VbState {
        m_mean,
        m_cov: eye.repeat(rows),
        n_mean,
        n_cov: eye.repeat(cols),
        b: vec![config.b + (rows + cols) as f64 / 20.0; k],
    })
}

#[allow(clippy::too_many_arguments)]
fn update_rows(
    means: &mut FactorMatrix,
    covs: &mut [f64],
    other_means: &FactorMatrix,
    other_covs: &[f64],
    b: &[f64],
    shape: f64,
    obs: &ObservationSet,
    scale: f64,
    by_row: bool,
) -> Result<()> {
    let k = b.len();
    let kk = k * k;
    let entries = obs.entries();
    let prior_prec: Vec<f64> = b.iter().map(|bh| shape / bh).collect();
    means
        .as_mut_slice()
        .par_chunks_mut(k)
        .zip(covs.par_chunks_mut(kk))
        .enumerate()
        .try_for_each_init(
            || vec![0.0; kk],
            |prec, (r, (mean, cov))| {
                let positions = if by_row {
                    obs.row_entries(r)
                } else {
                    obs.col_entries(r)
                };
                prec.iter_mut().for_each(|x| *x = 0.0);
                mean.iter_mut().for_each(|x| *x = 0.0);
                for &p in positions {
                    let e = &entries[p];
                    let o = if by_row { e.col } else { e.row };
                    let x = other_means.row(o);
                    let oc = &other_covs[o * kk..(o + 1) * kk];
                    for i in 0..k {
                        for j in 0..=i {
                            prec[i * k + j] += scale * (oc[i * k + j] + x[i] * x[j]);
                        }
                    }
                    let sy = scale * e.value;
                    for (l, xi) in mean.iter_mut().zip(x) {
                        *l += sy * xi;
                    }
                }
                for h in 0..k {
                    prec[h * k + h] += prior_prec[h];
                }
                linalg::cholesky_in_place(prec, k).map_err(|e| {
                    e.with_context(format!("VB {} row {r}", if by_row { "M" } else { "N" }))
                })?;
                linalg::inverse_from_cholesky(prec, k, cov);
                linalg::solve_lower(prec, k, mean);
                linalg::solve_lower_transpose(prec, k, mean);
                Ok(())
            },
        )
}

fn scale_for(obs: &ObservationSet, lambda: f64) -> f64 {
    if obs.is_empty() {
        0.0
    } else {
        2.0 * lambda / obs.len() as f64
    }
}

fn check_dims(state: &VbState, obs: &ObservationSet) -> Result<()> {
    if state.m_mean.rows() != obs.rows() || state.n_mean.rows() != obs.cols() {
        return Err(Error::usage("VB state dimensions do not match the observations"));
    }
    Ok(())
}

/// Refresh `q(M)`: for each row,
/// `V_i^{-1} = (2 lambda/n) Σ_k [W_{j_k} + n_{j_k} n_{j_k}^T] + â diag(b)^{-1}`
/// and `m_i = (2 lambda/n) V_i Σ_k Y_k n_{j_k}`.
pub fn vb_update_m(state: &mut VbState, obs: &ObservationSet, lambda: f64, a: f64) -> Result<()> {
    check_dims(state, obs)?;
    let shape = state.gamma_shape(a);
    let VbState {
        m_mean,
        m_cov,
        n_mean,
        n_cov,
        b,
    } = state;
    update_rows(m_mean, m_cov, n_mean, n_cov, b, shape, obs, scale_for(obs, lambda), true)
}

/// Refresh `q(N)`; mirror image of [`vb_update_m`].
pub fn vb_update_n(state: &mut VbState, obs: &ObservationSet, lambda: f64, a: f64) -> Result<()> {
    check_dims(state, obs)?;
    let shape = state.gamma_shape(a);
    let VbState {
        m_mean,
        m_cov,
        n_mean,
        n_cov,
        b,
    } = state;
    update_rows(n_mean, n_cov, m_mean, m_cov, b, shape, obs, scale_for(obs, lambda), false)
}

/// Refresh `q(gamma)`:
/// `b_h = b_prior + (Σ_i (m_ih^2 + V_i[h,h]) + Σ_j (n_jh^2 + W_j[h,h])) / 2`.
pub fn vb_update_gamma(state: &mut VbState, b_prior: f64) {
    let k = state.rank();
    let mut acc = vec![0.0; k];
    for (mean, cov) in [
        (&state.m_mean, &state.m_cov),
        (&state.n_mean, &state.n_cov),
    ] {
        for r in 0..mean.rows() {
            let row = mean.row(r);
            let c = &cov[r * k * k..(r + 1) * k * k];
            for h in 0..k {
                acc[h] += row[h] * row[h] + c[h * k + h];
            }
        }
    }
    for (bh, s) in state.b.iter_mut().zip(acc) {
        *bh = b_prior + 0.5 * s;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbFit {
    pub state: VbState,
    pub iterations: usize,
    pub converged: bool,
    /// Max absolute change of the training-cell predictions, per iteration.
    /// The first cycle has no predecessor and records infinity.
    pub change_trace: Vec<f64>,
}

fn training_predictions(state: &VbState, cells: &[(usize, usize)]) -> Vec<f64> {
    cells
        .iter()
        .map(|&(i, j)| dot(state.m_mean.row(i), state.n_mean.row(j)))
        .collect()
}

/// Iterate `M -> N -> gamma` until the training predictions move by less
/// than `config.tolerance` between consecutive cycles.
pub fn run_vb(obs: &ObservationSet, config: &VbConfig, init: Option<VbState>) -> Result<VbFit> {
    config.validate()?;
    let mut state = match init {
        Some(s) => {
            if s.rank() != config.rank {
                return Err(Error::usage("initial VB state has the wrong rank"));
            }
            s
        }
        None => vb_init(obs.rows(), obs.cols(), config)?,
    };
    check_dims(&state, obs)?;
    let lambda = config.lambda_for(obs.len());
    let cells = obs.distinct_cells();
    let mut previous: Option<Vec<f64>> = None;
    let mut change_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        vb_update_m(&mut state, obs, lambda, config.a)?;
        vb_update_n(&mut state, obs, lambda, config.a)?;
        vb_update_gamma(&mut state, config.b);
        iterations += 1;
        let preds = training_predictions(&state, &cells);
        let change = match &previous {
            Some(prev) => prev
                .iter()
                .zip(&preds)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            None => f64::INFINITY,
        };
        change_trace.push(change);
        previous = Some(preds);
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(VbFit {
        state,
        iterations,
        converged,
        change_trace,
    })
}
