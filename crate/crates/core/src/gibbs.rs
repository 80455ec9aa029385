//! Block Gibbs sampler: each sweep draws every row of `M`, then every row
//! of `N`, then `gamma`, from their exact conditionals.
//!
//! Random streams are forked along `(chain, iteration, block, row)`, so the
//! chain is bit-reproducible from the seed whatever the thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::conditionals::{assemble_row, gamma_conditional};
use crate::error::{Error, Result};
use crate::model::{
    dot, EntryTrace, FactorMatrix, FactorState, ObservationSet, PosteriorSummary, PriorSpec,
    Rating, SamplerConfig, ThetaMean, DENSE_MEAN_LIMIT,
};
use crate::rng::{mvn_draw_in_place, RngStream};

const BLOCK_M: u64 = 0;
const BLOCK_N: u64 = 1;
const BLOCK_GAMMA: u64 = 2;
const INIT_ITERATION: u64 = 0;

/// Initial `gamma` for a prior: its mean where finite, otherwise 1. The
/// two-point prior starts every column at the spike so that the data switch
/// on only the columns they support; a slab start leaves noise columns with
/// too much mass to ever drop back.
pub fn initial_gamma(prior: &PriorSpec, rows: usize, cols: usize) -> f64 {
    match *prior {
        PriorSpec::Fixed { gamma0 } => gamma0,
        PriorSpec::InverseGamma { a, b } => {
            if a > 1.0 {
                b / (a - 1.0)
            } else {
                1.0
            }
        }
        PriorSpec::Gamma { beta } => (rows + cols + 1) as f64 / (beta * beta),
        PriorSpec::Discrete { epsilon, .. } => epsilon,
    }
}

/// Draw a starting state: `gamma` from [`initial_gamma`], factor entries
/// independently `Normal(0, gamma)`.
pub fn init_state(
    rows: usize,
    cols: usize,
    config: &SamplerConfig,
    prior: &PriorSpec,
    rng: &RngStream,
) -> Result<FactorState> {
    config.validate()?;
    prior.validate()?;
    let k = config.rank;
    let g0 = initial_gamma(prior, rows, cols);
    let sd = g0.sqrt();
    let mut rm = rng.fork(BLOCK_M);
    let mut rn = rng.fork(BLOCK_N);
    let m = FactorMatrix::from_fn(rows, k, |_, _| sd * rm.standard_normal());
    let n = FactorMatrix::from_fn(cols, k, |_, _| sd * rn.standard_normal());
    FactorState::new(m, n, vec![g0; k])
}

/// Redraw every row of `target` from its Gaussian conditional.
fn draw_rows(
    target: &mut FactorMatrix,
    other: &FactorMatrix,
    inv_gamma: &[f64],
    obs: &ObservationSet,
    scale: f64,
    by_row: bool,
    stream: &RngStream,
    block_name: &str,
) -> Result<()> {
    let k = inv_gamma.len();
    let entries: &[Rating] = obs.entries();
    target
        .as_mut_slice()
        .par_chunks_mut(k)
        .enumerate()
        .try_for_each_init(
            || vec![0.0; k * k],
            |prec, (r, row)| {
                let positions = if by_row {
                    obs.row_entries(r)
                } else {
                    obs.col_entries(r)
                };
                if by_row {
                    assemble_row(prec, row, inv_gamma, other, positions, entries, |e| e.col, scale);
                } else {
                    assemble_row(prec, row, inv_gamma, other, positions, entries, |e| e.row, scale);
                }
                let mut rng = stream.fork(r as u64);
                mvn_draw_in_place(prec, k, row, &mut rng)
                    .map_err(|e| e.with_context(format!("{block_name} row {r}")))
            },
        )
}

/// One full sweep `M -> N -> gamma` using the streams of `iteration`.
pub fn gibbs_sweep(
    state: &mut FactorState,
    prior: &PriorSpec,
    obs: &ObservationSet,
    lambda: f64,
    iteration: &RngStream,
) -> Result<()> {
    if state.m.rows() != obs.rows() || state.n.rows() != obs.cols() {
        return Err(Error::usage("state dimensions do not match the observations"));
    }
    let scale = if obs.is_empty() {
        0.0
    } else {
        2.0 * lambda / obs.len() as f64
    };
    let inv_gamma: Vec<f64> = state.gamma.iter().map(|g| 1.0 / g).collect();
    draw_rows(
        &mut state.m,
        &state.n,
        &inv_gamma,
        obs,
        scale,
        true,
        &iteration.fork(BLOCK_M),
        "M",
    )?;
    draw_rows(
        &mut state.n,
        &state.m,
        &inv_gamma,
        obs,
        scale,
        false,
        &iteration.fork(BLOCK_N),
        "N",
    )?;
    let law = gamma_conditional(prior, &state.m, &state.n)?;
    state.gamma = law.sample(&mut iteration.fork(BLOCK_GAMMA))?;
    Ok(())
}

/// Up to nine cells on a corner/centre pattern.
pub fn default_tracked_entries(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let pick = |m: usize| {
        let mut v = vec![0, m / 2, m - 1];
        v.dedup();
        v
    };
    let mut out = Vec::new();
    for &i in &pick(rows) {
        for &j in &pick(cols) {
            if !out.contains(&(i, j)) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Optional extras for a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Truth used for the per-iteration RMSE trace.
    pub reference: Option<&'a DMatrix<f64>>,
    /// Restrict the posterior mean to these cells. Required when
    /// `m1 * m2` exceeds [`DENSE_MEAN_LIMIT`].
    pub cells: Option<Vec<(usize, usize)>>,
    /// Cells whose value is recorded every iteration. Defaults to
    /// [`default_tracked_entries`].
    pub tracked: Option<Vec<(usize, usize)>>,
    /// Keep a copy of every retained state.
    pub keep_retained_states: bool,
}

/// A Gibbs chain together with its accumulators.
#[derive(Debug, Clone)]
pub struct GibbsRun<'a> {
    pub config: SamplerConfig,
    pub prior: PriorSpec,
    pub state: FactorState,
    obs: &'a ObservationSet,
    reference: Option<&'a DMatrix<f64>>,
    lambda: f64,
    chain: RngStream,
    iteration: usize,
    theta_sum: ThetaMean,
    gamma_trace: Vec<Vec<f64>>,
    rmse_trace: Vec<f64>,
    entry_traces: Vec<EntryTrace>,
    retained: usize,
    retained_states: Vec<FactorState>,
    keep_retained_states: bool,
}

impl<'a> GibbsRun<'a> {
    pub fn new(
        obs: &'a ObservationSet,
        prior: PriorSpec,
        config: SamplerConfig,
        options: RunOptions<'a>,
    ) -> Result<Self> {
        config.validate()?;
        prior.validate()?;
        if config.retained_count() == 0 {
            return Err(Error::usage(
                "burn-in and thinning leave no retained iterations",
            ));
        }
        let (rows, cols) = (obs.rows(), obs.cols());
        if let Some(r) = options.reference {
            if r.shape() != (rows, cols) {
                return Err(Error::usage("reference matrix has the wrong shape"));
            }
        }
        let theta_sum = match options.cells {
            Some(cells) => {
                if let Some(&(i, j)) = cells.iter().find(|&&(i, j)| i >= rows || j >= cols) {
                    return Err(Error::usage(format!("requested cell ({i}, {j}) out of range")));
                }
                ThetaMean::cells(cells)
            }
            None if rows.saturating_mul(cols) <= DENSE_MEAN_LIMIT => ThetaMean::dense(rows, cols),
            None => {
                return Err(Error::usage(format!(
                    "{rows}x{cols} is too large for a dense posterior mean; request cells"
                )))
            }
        };
        let tracked = options
            .tracked
            .unwrap_or_else(|| default_tracked_entries(rows, cols));
        let entry_traces = tracked
            .into_iter()
            .map(|(row, col)| EntryTrace {
                row,
                col,
                values: Vec::with_capacity(config.iterations),
            })
            .collect();
        let chain = RngStream::new(config.seed).fork(0);
        let state = init_state(rows, cols, &config, &prior, &chain.fork(INIT_ITERATION))?;
        Ok(GibbsRun {
            lambda: config.lambda_for(obs.len()),
            prior,
            state,
            obs,
            reference: options.reference,
            chain,
            iteration: 0,
            theta_sum,
            gamma_trace: Vec::with_capacity(config.retained_count()),
            rmse_trace: Vec::new(),
            entry_traces,
            retained: 0,
            retained_states: Vec::new(),
            keep_retained_states: options.keep_retained_states,
            config,
        })
    }

    /// Completed sweeps so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Run one sweep and update traces and accumulators.
    pub fn step(&mut self) -> Result<()> {
        let t = self.iteration + 1;
        let stream = self.chain.fork(t as u64);
        gibbs_sweep(&mut self.state, &self.prior, self.obs, self.lambda, &stream)
            .map_err(|e| e.with_context(format!("iteration {t}")))?;
        self.iteration = t;

        for tr in &mut self.entry_traces {
            tr.values
                .push(dot(self.state.m.row(tr.row), self.state.n.row(tr.col)));
        }
        if let Some(reference) = self.reference {
            self.rmse_trace.push(current_rmse(&self.state, reference));
        }
        if self.config.is_retained(t) {
            self.theta_sum.accumulate(&self.state, 1.0);
            self.gamma_trace.push(self.state.gamma.clone());
            self.retained += 1;
            if self.keep_retained_states {
                self.retained_states.push(self.state.clone());
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> (PosteriorSummary, Vec<FactorState>) {
        if self.retained > 0 {
            self.theta_sum.scale(1.0 / self.retained as f64);
        }
        let summary = PosteriorSummary {
            theta_mean: self.theta_sum,
            gamma_trace: self.gamma_trace,
            rmse_trace: self.rmse_trace,
            entry_traces: self.entry_traces,
            retained_count: self.retained,
            burn_in: self.config.burn_in,
            final_state: self.state,
        };
        (summary, self.retained_states)
    }
}

fn current_rmse(state: &FactorState, reference: &DMatrix<f64>) -> f64 {
    let mut ss = 0.0;
    for j in 0..reference.ncols() {
        let nj = state.n.row(j);
        for i in 0..reference.nrows() {
            let d = dot(state.m.row(i), nj) - reference[(i, j)];
            ss += d * d;
        }
    }
    (ss / reference.len() as f64).sqrt()
}

/// Run the full chain and return the posterior summary.
pub fn run_gibbs(
    obs: &ObservationSet,
    prior: &PriorSpec,
    config: &SamplerConfig,
    options: RunOptions<'_>,
) -> Result<PosteriorSummary> {
    let mut run = GibbsRun::new(obs, *prior, config.clone(), options)?;
    while !run.is_done() {
        run.step()?;
    }
    Ok(run.finish().0)
}

/// Sample autocorrelation at lags `0..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct Acf {
    pub values: Vec<f64>,
    /// The trace was constant; only lag 0 is meaningful and the rest are zero.
    pub degenerate: bool,
}

/// Mean-centred sample autocorrelation normalized by the lag-0 autocovariance.
pub fn acf(trace: &[f64], max_lag: usize) -> Result<Acf> {
    if max_lag == 0 || trace.len() <= max_lag {
        return Err(Error::usage(format!(
            "trace of length {} too short for max lag {max_lag}",
            trace.len()
        )));
    }
    let n = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / n;
    let centred: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let c0: f64 = centred.iter().map(|x| x * x).sum();
    let mut values = vec![0.0; max_lag + 1];
    values[0] = 1.0;
    if !(c0 > 0.0) {
        return Ok(Acf {
            values,
            degenerate: true,
        });
    }
    for (lag, v) in values.iter_mut().enumerate().skip(1) {
        let c: f64 = centred[lag..]
            .iter()
            .zip(&centred[..centred.len() - lag])
            .map(|(a, b)| a * b)
            .sum();
        *v = c / c0;
    }
    Ok(Acf {
        values,
        degenerate: false,
    })
}
