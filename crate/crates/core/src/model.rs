//! Observation model, factor state, priors, and error metrics shared by
//! every inference backend.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `m1 * m2` for which the posterior mean is stored densely.
pub const DENSE_MEAN_LIMIT: usize = 10_000_000;

/// One observed entry `(i_k, j_k, Y_k)`, zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Rating {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Rating { row, col, value }
    }
}

/// The observed data: a list of noisy entries of an `rows x cols` matrix,
/// indexed both by row and by column.
///
/// Repeated `(row, col)` pairs are kept as separate terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    rows: usize,
    cols: usize,
    entries: Vec<Rating>,
    row_index: Vec<Vec<usize>>,
    col_index: Vec<Vec<usize>>,
}

impl ObservationSet {
    pub fn new(rows: usize, cols: usize, entries: Vec<Rating>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::usage("matrix dimensions must be positive"));
        }
        let mut row_index = vec![Vec::new(); rows];
        let mut col_index = vec![Vec::new(); cols];
        for (k, e) in entries.iter().enumerate() {
            if e.row >= rows || e.col >= cols {
                return Err(Error::usage(format!(
                    "entry {k} at ({}, {}) outside {rows}x{cols}",
                    e.row, e.col
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::Data(format!("entry {k} has non-finite value")));
            }
            row_index[e.row].push(k);
            col_index[e.col].push(k);
        }
        Ok(ObservationSet {
            rows,
            cols,
            entries,
            row_index,
            col_index,
        })
    }

    pub fn empty(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, Vec::new())
    }

    /// Every cell of a dense matrix, in row-major order.
    pub fn from_dense(matrix: &DMatrix<f64>) -> Result<Self> {
        let mut entries = Vec::with_capacity(matrix.len());
        for i in 0..matrix.nrows() {
            for j in 0..matrix.ncols() {
                entries.push(Rating::new(i, j, matrix[(i, j)]));
            }
        }
        Self::new(matrix.nrows(), matrix.ncols(), entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of observations `n`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Rating] {
        &self.entries
    }

    /// Positions `k` of the entries lying in row `i`.
    pub fn row_entries(&self, i: usize) -> &[usize] {
        &self.row_index[i]
    }

    /// Positions `k` of the entries lying in column `j`.
    pub fn col_entries(&self, j: usize) -> &[usize] {
        &self.col_index[j]
    }

    /// The same data seen as observations of `theta^T`.
    pub fn transpose(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| Rating::new(e.col, e.row, e.value))
            .collect();
        ObservationSet {
            rows: self.cols,
            cols: self.rows,
            entries,
            row_index: self.col_index.clone(),
            col_index: self.row_index.clone(),
        }
    }

    /// Subset by entry positions, keeping the dimensions.
    pub fn select(&self, positions: &[usize]) -> Self {
        let entries = positions.iter().map(|&k| self.entries[k]).collect();
        Self::new(self.rows, self.cols, entries).expect("subset of a valid set")
    }

    /// Distinct observed cells in first-seen order.
    pub fn distinct_cells(&self) -> Vec<(usize, usize)> {
        let mut seen = std::collections::HashSet::with_capacity(self.entries.len());
        self.entries
            .iter()
            .filter(|e| seen.insert((e.row, e.col)))
            .map(|e| (e.row, e.col))
            .collect()
    }
}

/// A dense row-major `rows x cols` real matrix used for factor storage.
///
/// Row access is the hot path in every sampler, so rows are contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FactorMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(FactorMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for h in 0..cols {
                data.push(f(i, h));
            }
        }
        FactorMatrix { rows, cols, data }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, h: usize) -> f64 {
        self.data[i * self.cols + h]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Squared Euclidean norm of every column.
    pub fn column_sq_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x * x;
            }
        }
        out
    }
}

/// Current point `(M, N, gamma)` of the Markov chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    pub m: FactorMatrix,
    pub n: FactorMatrix,
    pub gamma: Vec<f64>,
}

impl FactorState {
    pub fn new(m: FactorMatrix, n: FactorMatrix, gamma: Vec<f64>) -> Result<Self> {
        if m.cols() != gamma.len() || n.cols() != gamma.len() {
            return Err(Error::usage(format!(
                "inconsistent ranks: M has {} columns, N has {}, gamma has {}",
                m.cols(),
                n.cols(),
                gamma.len()
            )));
        }
        if let Some(h) = gamma.iter().position(|&g| !(g > 0.0)) {
            return Err(Error::usage(format!("gamma[{h}] must be positive")));
        }
        Ok(FactorState { m, n, gamma })
    }

    pub fn rank(&self) -> usize {
        self.gamma.len()
    }

    /// Dense `M N^T`.
    pub fn theta(&self) -> DMatrix<f64> {
        let (m1, m2) = (self.m.rows(), self.n.rows());
        DMatrix::from_fn(m1, m2, |i, j| dot(self.m.row(i), self.n.row(j)))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(M N^T)_{ij}`.
pub fn predict_entry(state: &FactorState, i: usize, j: usize) -> Result<f64> {
    if i >= state.m.rows() || j >= state.n.rows() {
        return Err(Error::usage(format!(
            "cell ({i}, {j}) outside {}x{}",
            state.m.rows(),
            state.n.rows()
        )));
    }
    Ok(dot(state.m.row(i), state.n.row(j)))
}

/// Root-mean-square difference over all cells: `||estimate - truth||_F / sqrt(m1 m2)`.
pub fn rmse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::usage(format!(
            "shape mismatch: {:?} vs {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::usage("rmse of empty matrices"));
    }
    let ss: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / estimate.len() as f64).sqrt())
}

/// Anything that can produce a point prediction for a cell.
pub trait Predictor {
    /// Prediction for cell `(i, j)`, or `None` when this predictor holds no
    /// value for it.
    fn predict(&self, i: usize, j: usize) -> Option<f64>;
}

impl Predictor for FactorState {
    fn predict(&self, i: usize, j: usize) -> Option<f64> {
        predict_entry(self, i, j).ok()
    }
}

impl Predictor for DMatrix<f64> {
    fn predict(&self, i: usize, j: usize) -> Option<f64> {
        self.get((i, j)).copied()
    }
}

/// RMSE over the entries of a held-out set.
pub fn holdout_rmse<P: Predictor + ?Sized>(predictor: &P, test: &ObservationSet) -> Result<f64> {
    holdout_rmse_clipped(predictor, test, None)
}

/// [`holdout_rmse`] with predictions optionally clipped to `[lo, hi]`.
pub fn holdout_rmse_clipped<P: Predictor + ?Sized>(
    predictor: &P,
    test: &ObservationSet,
    clip: Option<(f64, f64)>,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::usage("held-out set is empty"));
    }
    let mut ss = 0.0;
    for e in test.entries() {
        let mut p = predictor.predict(e.row, e.col).ok_or_else(|| {
            Error::usage(format!("no prediction available for cell ({}, {})", e.row, e.col))
        })?;
        if let Some((lo, hi)) = clip {
            p = p.clamp(lo, hi);
        }
        ss += (p - e.value) * (p - e.value);
    }
    Ok((ss / test.len() as f64).sqrt())
}

/// Prior on the column scales `gamma_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorSpec {
    /// `gamma_h = gamma0` for every column.
    Fixed { gamma0: f64 },
    /// `gamma_h ~ InvGamma(a, b)` (shape, rate).
    InverseGamma { a: f64, b: f64 },
    /// `gamma_h ~ Gamma((m1 + m2 + 1)/2, beta^2/2)` (shape, rate).
    Gamma { beta: f64 },
    /// `gamma_h ~ (1 - p) δ_epsilon + p δ_C`.
    Discrete { epsilon: f64, c: f64, p: f64 },
}

impl PriorSpec {
    /// Gamma prior parameterized by `beta^2`, the form used in benchmark tables.
    pub fn gamma_from_beta2(beta2: f64) -> Self {
        PriorSpec::Gamma { beta: beta2.sqrt() }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::usage(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            PriorSpec::Fixed { gamma0 } => pos("gamma0", gamma0),
            PriorSpec::InverseGamma { a, b } => {
                pos("a", a)?;
                pos("b", b)
            }
            PriorSpec::Gamma { beta } => pos("beta", beta),
            PriorSpec::Discrete { epsilon, c, p } => {
                pos("epsilon", epsilon)?;
                pos("C", c)?;
                if epsilon >= c {
                    return Err(Error::usage(format!(
                        "discrete prior needs epsilon < C, got {epsilon} >= {c}"
                    )));
                }
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::usage(format!("p must lie in (0, 1), got {p}")));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::Fixed { .. } => "fixed",
            PriorSpec::InverseGamma { .. } => "invgamma",
            PriorSpec::Gamma { .. } => "gamma",
            PriorSpec::Discrete { .. } => "discrete",
        }
    }

    /// Compact `key=value` hyperparameter description.
    pub fn hyperparams(&self) -> String {
        match *self {
            PriorSpec::Fixed { gamma0 } => format!("gamma0={gamma0}"),
            PriorSpec::InverseGamma { a, b } => format!("a={a};b={b}"),
            PriorSpec::Gamma { beta } => format!("beta2={}", beta * beta),
            PriorSpec::Discrete { epsilon, c, p } => format!("epsilon={epsilon};C={c};p={p}"),
        }
    }
}

/// Settings for the tempered posterior and the Markov chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Inverse temperature. `None` means `n / (2 noise_sd^2)`.
    pub lambda: Option<f64>,
    /// Working rank `K`.
    pub rank: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub noise_sd: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            lambda: None,
            rank: 5,
            iterations: 1000,
            burn_in: 100,
            thinning: 10,
            seed: 0,
            noise_sd: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::usage("rank K must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::usage("iterations must be positive"));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::usage(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::usage("thinning must be positive"));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::usage("noise_sd must be positive"));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::usage("lambda must be positive"));
            }
        }
        Ok(())
    }

    /// Effective inverse temperature for `n` observations.
    pub fn lambda_for(&self, n: usize) -> f64 {
        self.lambda
            .unwrap_or_else(|| n as f64 / (2.0 * self.noise_sd * self.noise_sd))
    }

    /// Number of iterations contributing to the posterior mean.
    pub fn retained_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thinning
    }

    /// Whether 1-based iteration `t` is kept.
    pub fn is_retained(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in).is_multiple_of(self.thinning)
    }
}

/// Running posterior mean of `theta`, dense or restricted to a cell list.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaMean {
    Dense(DMatrix<f64>),
    Cells {
        cells: Vec<(usize, usize)>,
        values: Vec<f64>,
        lookup: HashMap<(usize, usize), usize>,
    },
}

impl ThetaMean {
    pub fn dense(rows: usize, cols: usize) -> Self {
        ThetaMean::Dense(DMatrix::zeros(rows, cols))
    }

    pub fn cells(cells: Vec<(usize, usize)>) -> Self {
        let mut unique = Vec::with_capacity(cells.len());
        let mut lookup = HashMap::with_capacity(cells.len());
        for c in cells {
            if let std::collections::hash_map::Entry::Vacant(slot) = lookup.entry(c) {
                slot.insert(unique.len());
                unique.push(c);
            }
        }
        let values = vec![0.0; unique.len()];
        ThetaMean::Cells {
            cells: unique,
            values,
            lookup,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        match self {
            ThetaMean::Dense(m) => m.get((i, j)).copied(),
            ThetaMean::Cells { values, lookup, .. } => lookup.get(&(i, j)).map(|&p| values[p]),
        }
    }

    /// Add `weight * (M N^T)` on the stored cells.
    pub(crate) fn accumulate(&mut self, state: &FactorState, weight: f64) {
        match self {
            ThetaMean::Dense(acc) => {
                let m2 = acc.ncols();
                for j in 0..m2 {
                    let nj = state.n.row(j);
                    for i in 0..acc.nrows() {
                        acc[(i, j)] += weight * dot(state.m.row(i), nj);
                    }
                }
            }
            ThetaMean::Cells { cells, values, .. } => {
                for (v, &(i, j)) in values.iter_mut().zip(cells.iter()) {
                    *v += weight * dot(state.m.row(i), state.n.row(j));
                }
            }
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        match self {
            ThetaMean::Dense(acc) => *acc *= factor,
            ThetaMean::Cells { values, .. } => values.iter_mut().for_each(|v| *v *= factor),
        }
    }

    /// Stored cells with their values, in row-major order for dense storage.
    pub fn iter_cells(&self) -> Box<dyn Iterator<Item = (usize, usize, f64)> + '_> {
        match self {
            ThetaMean::Dense(m) => Box::new(
                (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| (i, j, m[(i, j)]))),
            ),
            ThetaMean::Cells { cells, values, .. } => {
                Box::new(cells.iter().zip(values).map(|(&(i, j), &v)| (i, j, v)))
            }
        }
    }

    pub fn as_dense(&self) -> Option<&DMatrix<f64>> {
        match self {
            ThetaMean::Dense(m) => Some(m),
            ThetaMean::Cells { .. } => None,
        }
    }
}

impl Predictor for ThetaMean {
    fn predict(&self, i: usize, j: usize) -> Option<f64> {
        self.get(i, j)
    }
}

/// Trace of one tracked matrix entry across all iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryTrace {
    pub row: usize,
    pub col: usize,
    pub values: Vec<f64>,
}

/// Output of a Gibbs run.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// Mean of `M N^T` over retained iterations.
    pub theta_mean: ThetaMean,
    /// `gamma` at each retained iteration.
    pub gamma_trace: Vec<Vec<f64>>,
    /// RMSE of the current iterate against the reference, every iteration.
    pub rmse_trace: Vec<f64>,
    /// Tracked `theta` entries, every iteration (burn-in included).
    pub entry_traces: Vec<EntryTrace>,
    pub retained_count: usize,
    /// Iterations discarded as burn-in, for trace post-processing.
    pub burn_in: usize,
    pub final_state: FactorState,
}

impl Predictor for PosteriorSummary {
    fn predict(&self, i: usize, j: usize) -> Option<f64> {
        self.theta_mean.get(i, j)
    }
}
