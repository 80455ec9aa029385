//! Executing a run manifest and writing its artifacts.

use std::path::Path;
use std::time::Instant;

use lowrank::experiments::generate_synthetic;
use lowrank::gibbs::{acf, Acf, GibbsRun, RunOptions};
use lowrank::io::{
    acf_csv, entry_traces_csv, fmt17, gamma_trace_csv, parse_ratings, rmse_trace_csv,
    theta_mean_csv, train_test_split, write_json, write_text, Backend, DataSource, IdMap,
    RunManifest,
};
use lowrank::vb::{run_vb, VbConfig, VbState};
use lowrank::{
    holdout_rmse, rmse, Error, ObservationSet, Predictor, PriorSpec, Rating, Result, RngStream,
    model::DENSE_MEAN_LIMIT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const MAX_ACF_LAG: usize = 20;

/// Everything `evaluate` needs besides `theta_mean.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub backend: Backend,
    pub rows: usize,
    pub cols: usize,
    /// Added to every prediction; the training mean when centring was on.
    pub offset: f64,
    pub users: Option<IdMap>,
    pub items: Option<IdMap>,
    /// Variational factors. Gibbs fits predict from `theta_mean.csv`.
    pub vb: Option<VbState>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub prior: String,
    pub hyperparams: String,
    /// Against the generating matrix; synthetic data only.
    pub rmse: Option<f64>,
    pub holdout_rmse: Option<f64>,
    pub train_rmse: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub offset: f64,
    pub retained_count: Option<usize>,
    pub vb_iterations: Option<usize>,
    pub vb_converged: Option<bool>,
    pub seconds: f64,
}

/// Shifts another predictor by a constant; cells it cannot predict get the
/// constant alone.
pub struct Shifted<'a, P: ?Sized> {
    pub inner: &'a P,
    pub offset: f64,
}

impl<P: Predictor + ?Sized> Predictor for Shifted<'_, P> {
    fn predict(&self, i: usize, j: usize) -> Option<f64> {
        Some(self.inner.predict(i, j).unwrap_or(0.0) + self.offset)
    }
}

struct Dataset {
    train: ObservationSet,
    test: Option<ObservationSet>,
    truth: Option<DMatrix<f64>>,
    users: Option<IdMap>,
    items: Option<IdMap>,
}

fn load(manifest: &RunManifest) -> Result<Dataset> {
    let (obs, truth, users, items) = match &manifest.data {
        DataSource::File { path, format } => {
            let data = parse_ratings(path, *format)?;
            (data.obs, None, Some(data.users), Some(data.items))
        }
        DataSource::Synthetic(spec) => {
            let data = generate_synthetic(spec, &RngStream::new(spec.seed))?;
            (data.obs, Some(data.truth), None, None)
        }
    };
    let (train, test) = match manifest.split {
        Some(ratio) => {
            let (a, b) = train_test_split(&obs, ratio, manifest.seed)?;
            (a, Some(b))
        }
        None => (obs, None),
    };
    Ok(Dataset {
        train,
        test,
        truth,
        users,
        items,
    })
}

fn shift(obs: &ObservationSet, by: f64) -> Result<ObservationSet> {
    let entries = obs
        .entries()
        .iter()
        .map(|e| Rating::new(e.row, e.col, e.value - by))
        .collect();
    ObservationSet::new(obs.rows(), obs.cols(), entries)
}

fn dense_prediction<P: Predictor + ?Sized>(p: &P, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| p.predict(i, j).unwrap_or(0.0))
}

/// Run the manifest, write every artifact under its output directory when
/// `write` is set, and return the summary.
pub fn execute(manifest: &RunManifest, write: bool) -> Result<RunResult> {
    manifest.validate()?;
    let start = Instant::now();
    let data = load(manifest)?;
    let (rows, cols) = (data.train.rows(), data.train.cols());
    if data.train.is_empty() {
        return Err(Error::Data("no training observations".into()));
    }
    let offset = if manifest.center {
        data.train.entries().iter().map(|e| e.value).sum::<f64>() / data.train.len() as f64
    } else {
        0.0
    };
    let fit_obs = if offset != 0.0 {
        shift(&data.train, offset)?
    } else {
        data.train.clone()
    };
    let out = &manifest.output_dir;
    if write {
        write_json(out.join("manifest.json"), manifest)?;
    }

    let mut result = RunResult {
        manifest: manifest.clone(),
        prior: manifest.prior.name().to_string(),
        hyperparams: manifest.prior.hyperparams(),
        rmse: None,
        holdout_rmse: None,
        train_rmse: 0.0,
        n_train: data.train.len(),
        n_test: data.test.as_ref().map_or(0, ObservationSet::len),
        offset,
        retained_count: None,
        vb_iterations: None,
        vb_converged: None,
        seconds: 0.0,
    };
    let mut model = ModelArtifact {
        backend: manifest.backend,
        rows,
        cols,
        offset,
        users: data.users.clone(),
        items: data.items.clone(),
        vb: None,
    };

    match manifest.backend {
        Backend::Gibbs => {
            let cells = if rows.saturating_mul(cols) <= DENSE_MEAN_LIMIT {
                None
            } else {
                let mut cells = data.train.distinct_cells();
                if let Some(t) = &data.test {
                    cells.extend(t.distinct_cells());
                }
                Some(cells)
            };
            let truth_shifted = data.truth.as_ref().map(|t| t.add_scalar(-offset));
            let mut run = GibbsRun::new(
                &fit_obs,
                manifest.prior,
                manifest.sampler.clone(),
                RunOptions {
                    reference: truth_shifted.as_ref(),
                    cells,
                    ..Default::default()
                },
            )?;
            while !run.is_done() {
                run.step()?;
            }
            let (summary, _) = run.finish();
            let pred = Shifted {
                inner: &summary.theta_mean,
                offset,
            };
            result.retained_count = Some(summary.retained_count);
            result.train_rmse = holdout_rmse(&pred, &data.train)?;
            if let Some(t) = data.test.as_ref().filter(|t| !t.is_empty()) {
                result.holdout_rmse = Some(holdout_rmse(&pred, t)?);
            }
            if let Some(truth) = &data.truth {
                result.rmse = Some(rmse(&dense_prediction(&pred, rows, cols), truth)?);
            }
            if write {
                let iterations: Vec<usize> = (1..=manifest.sampler.iterations)
                    .filter(|&t| manifest.sampler.is_retained(t))
                    .collect();
                write_text(out.join("trace_gamma.csv"), &gamma_trace_csv(&summary.gamma_trace, &iterations))?;
                write_text(out.join("trace_rmse.csv"), &rmse_trace_csv(&summary.rmse_trace))?;
                write_text(out.join("trace_entries.csv"), &entry_traces_csv(&summary.entry_traces))?;
                let acfs = entry_acfs(&summary.entry_traces, manifest.sampler.burn_in, MAX_ACF_LAG)?;
                write_text(out.join("acf.csv"), &acf_csv(&acfs))?;
                write_text(out.join("theta_mean.csv"), &theta_mean_csv(&requested_mean(&summary.theta_mean, &data, offset)))?;
            }
        }
        Backend::Vb => {
            let (a, b) = match manifest.prior {
                PriorSpec::InverseGamma { a, b } => (a, b),
                _ => unreachable!("validated above"),
            };
            let defaults = VbConfig::default();
            let config = VbConfig {
                rank: manifest.sampler.rank,
                lambda: manifest.sampler.lambda,
                noise_sd: manifest.sampler.noise_sd,
                a,
                b,
                tolerance: manifest.vb_tolerance.unwrap_or(defaults.tolerance),
                max_iterations: manifest.vb_max_iterations.unwrap_or(defaults.max_iterations),
                seed: manifest.sampler.seed,
            };
            let fit = run_vb(&fit_obs, &config, None)?;
            let pred = Shifted {
                inner: &fit.state,
                offset,
            };
            result.vb_iterations = Some(fit.iterations);
            result.vb_converged = Some(fit.converged);
            result.train_rmse = holdout_rmse(&pred, &data.train)?;
            if let Some(t) = data.test.as_ref().filter(|t| !t.is_empty()) {
                result.holdout_rmse = Some(holdout_rmse(&pred, t)?);
            }
            if let Some(truth) = &data.truth {
                result.rmse = Some(rmse(&dense_prediction(&pred, rows, cols), truth)?);
            }
            if write {
                let mut text = String::from("iteration,max_change\n");
                for (t, c) in fit.change_trace.iter().enumerate() {
                    text.push_str(&format!("{},{}\n", t + 1, fmt17(*c)));
                }
                write_text(out.join("trace_vb.csv"), &text)?;
            }
            model.vb = Some(fit.state);
        }
    }
    result.seconds = start.elapsed().as_secs_f64();
    if write {
        write_json(out.join("model.json"), &model)?;
        write_json(out.join("result.json"), &result)?;
    }
    Ok(result)
}

/// The posterior mean restricted to training and test cells, shifted back
/// to the rating scale.
fn requested_mean(mean: &lowrank::ThetaMean, data: &Dataset, offset: f64) -> lowrank::ThetaMean {
    let mut cells = data.train.distinct_cells();
    if let Some(t) = &data.test {
        cells.extend(t.distinct_cells());
    }
    let mut out = lowrank::ThetaMean::cells(cells);
    if let lowrank::ThetaMean::Cells { cells, values, .. } = &mut out {
        for (v, &(i, j)) in values.iter_mut().zip(cells.iter()) {
            *v = mean.get(i, j).unwrap_or(0.0) + offset;
        }
    }
    out
}

/// ACF of each tracked entry over the post-burn-in part of its trace.
pub fn entry_acfs(traces: &[lowrank::model::EntryTrace], burn_in: usize, max_lag: usize) -> Result<Vec<(usize, Acf)>> {
    let mut out = Vec::new();
    for (id, tr) in traces.iter().enumerate() {
        let tail = tr.values.get(burn_in..).unwrap_or(&[]);
        let lag = max_lag.min(tail.len().saturating_sub(1));
        if lag == 0 {
            continue;
        }
        out.push((id, acf(tail, lag)?));
    }
    Ok(out)
}

pub fn load_model(dir: &Path) -> Result<ModelArtifact> {
    let path = dir.join("model.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
