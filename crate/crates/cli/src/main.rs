mod run;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lowrank::conditionals::log_gamma_prior_column_integral;
use lowrank::experiments::{EntryScale, SyntheticSpec};
use lowrank::io::{
    acf_csv, parse_entry_traces_csv, parse_raw_ratings, parse_theta_mean_csv, reindex_with,
    write_text, Backend, DataSource, RatingsFormat, RunManifest,
};
use lowrank::{Error, Predictor, PriorSpec, Result, SamplerConfig};
use serde_json::json;

use run::{entry_acfs, execute, load_model, MAX_ACF_LAG};

#[derive(Parser)]
#[command(name = "lowrank", version, about = "Bayesian low-rank matrix completion")]
struct Cli {
    /// Worker threads; overrides LOWRANK_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic low-rank matrix, fit it, and report RMSE against the truth.
    Simulate(SimulateArgs),
    /// Fit a ratings file (or rerun a saved manifest) and report held-out RMSE.
    Fit(FitArgs),
    /// Score saved model artifacts on a ratings file.
    Evaluate(EvaluateArgs),
    /// Autocorrelation of the tracked entries of a saved Gibbs run.
    Diagnose(DiagnoseArgs),
    /// Check numerically that the gamma prior integrates to exp(-beta sqrt(S)).
    VerifyProp1(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorFamily {
    Fixed,
    Invgamma,
    Gamma,
    Discrete,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Gibbs,
    Vb,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tab,
    Dcolon,
    Csv,
}

impl From<FormatArg> for RatingsFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tab => RatingsFormat::Tab,
            FormatArg::Dcolon => RatingsFormat::DoubleColon,
            FormatArg::Csv => RatingsFormat::CsvHeader,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleReading {
    Variance,
    Sd,
}

#[derive(Args)]
struct PriorArgs {
    #[arg(long, value_enum, default_value = "invgamma")]
    prior: PriorFamily,
    /// Fixed prior: the common column scale.
    #[arg(long, default_value_t = 1.0)]
    gamma0: f64,
    /// Inverse-gamma shape.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Inverse-gamma rate.
    #[arg(long, default_value_t = 0.1)]
    b: f64,
    /// Gamma prior: beta squared.
    #[arg(long)]
    beta2: Option<f64>,
    /// Discrete prior: spike value.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Discrete prior: slab value.
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    /// Discrete prior: slab probability.
    #[arg(long, default_value_t = 0.05)]
    p: f64,
}

impl PriorArgs {
    fn spec(&self) -> Result<PriorSpec> {
        let spec = match self.prior {
            PriorFamily::Fixed => PriorSpec::Fixed { gamma0: self.gamma0 },
            PriorFamily::Invgamma => PriorSpec::InverseGamma { a: self.a, b: self.b },
            PriorFamily::Gamma => PriorSpec::gamma_from_beta2(
                self.beta2
                    .ok_or_else(|| Error::usage("--prior gamma needs --beta2"))?,
            ),
            PriorFamily::Discrete => PriorSpec::Discrete {
                epsilon: self.epsilon,
                c: self.c,
                p: self.p,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct FitOptions {
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long, value_enum, default_value = "gibbs")]
    backend: BackendArg,
    /// Number of latent columns.
    #[arg(long = "K", default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 100)]
    burn_in: usize,
    #[arg(long, default_value_t = 10)]
    thinning: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Noise level used for the default temperature n / (2 sd^2).
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    /// Explicit temperature; overrides --noise-sd.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    vb_tolerance: f64,
    #[arg(long, default_value_t = 100)]
    vb_max_iterations: usize,
    /// Fit ratings minus their training mean and add it back to predictions.
    #[arg(long)]
    center: bool,
    /// Directory for artifacts; nothing is written without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl FitOptions {
    fn manifest(&self, data: DataSource, split: Option<f64>) -> Result<RunManifest> {
        let manifest = RunManifest {
            data,
            prior: self.prior.spec()?,
            sampler: SamplerConfig {
                lambda: self.lambda,
                rank: self.rank,
                iterations: self.iterations,
                burn_in: self.burn_in,
                thinning: self.thinning,
                seed: self.seed,
                noise_sd: self.noise_sd,
            },
            backend: match self.backend {
                BackendArg::Gibbs => Backend::Gibbs,
                BackendArg::Vb => Backend::Vb,
            },
            split,
            seed: self.seed,
            output_dir: self.out.clone().unwrap_or_default(),
            vb_tolerance: Some(self.vb_tolerance),
            vb_max_iterations: Some(self.vb_max_iterations),
            center: self.center,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Side of the square matrix.
    #[arg(long)]
    m: usize,
    /// Rank of the generating matrix.
    #[arg(long, default_value_t = 2)]
    true_rank: usize,
    /// Fraction of cells observed.
    #[arg(long, default_value_t = 0.2)]
    observe: f64,
    /// Spread of the factor entries; defaults to 20 / sqrt(m).
    #[arg(long)]
    entry_param: Option<f64>,
    /// Whether --entry-param is a variance or a standard deviation.
    #[arg(long, value_enum, default_value = "variance")]
    scale_reading: ScaleReading,
    /// Observe distinct cells instead of sampling with replacement.
    #[arg(long)]
    without_replacement: bool,
    /// Standard deviation of the observation noise.
    #[arg(long, default_value_t = 1.0)]
    data_noise_sd: f64,
    #[command(flatten)]
    fit: FitOptions,
}

#[derive(Args)]
struct FitArgs {
    /// Ratings file.
    #[arg(long, required_unless_present = "manifest")]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tab")]
    format: FormatArg,
    /// Training fraction of the per-rating split.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Rerun a saved manifest.json instead of reading the options below.
    #[arg(long, conflicts_with = "data")]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    fit: FitOptions,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory written by `fit --out`.
    #[arg(long)]
    model: PathBuf,
    /// Ratings to score.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value = "tab")]
    format: FormatArg,
    /// Clip predictions to LO,HI before scoring.
    #[arg(long, value_parser = parse_clip)]
    clip: Option<(f64, f64)>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Directory holding trace_entries.csv.
    #[arg(long)]
    dir: PathBuf,
    /// Iterations to drop; defaults to the burn-in in manifest.json.
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = MAX_ACF_LAG)]
    max_lag: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// m1 + m2.
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 5.0])]
    beta: Vec<f64>,
    #[arg(long = "S", value_delimiter = ',', default_values_t = [0.1, 1.0, 4.0, 10.0, 100.0])]
    s: Vec<f64>,
    /// Largest accepted relative deviation from a constant ratio.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

fn parse_clip(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|_| "bad lower bound")?;
    let hi: f64 = hi.trim().parse().map_err(|_| "bad upper bound")?;
    if lo > hi {
        return Err("LO must not exceed HI".into());
    }
    Ok((lo, hi))
}

/// Print to stdout, ignoring a closed pipe.
fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let spec = SyntheticSpec {
        m: args.m,
        rank: args.true_rank,
        entry_param: args.entry_param.unwrap_or(20.0 / (args.m as f64).sqrt()),
        scale: match args.scale_reading {
            ScaleReading::Variance => EntryScale::Variance,
            ScaleReading::Sd => EntryScale::StdDev,
        },
        observe_fraction: args.observe,
        noise_sd: args.data_noise_sd,
        seed: args.fit.seed,
        with_replacement: !args.without_replacement,
    };
    spec.validate()?;
    let manifest = args.fit.manifest(DataSource::Synthetic(spec), None)?;
    print_json(&execute(&manifest, args.fit.out.is_some())?)
}

fn fit(args: FitArgs) -> Result<()> {
    let manifest = match &args.manifest {
        Some(path) => RunManifest::load(path)?,
        None => {
            let path = args.data.clone().expect("clap enforces --data");
            args.fit.manifest(
                DataSource::File {
                    path,
                    format: args.format.into(),
                },
                Some(args.split),
            )?
        }
    };
    let write = args.manifest.is_some() || args.fit.out.is_some();
    print_json(&execute(&manifest, write)?)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let (users, items) = match (&model.users, &model.items) {
        (Some(u), Some(i)) => (u, i),
        _ => return Err(Error::usage("model has no id maps; it was not fitted on a ratings file")),
    };
    let text = std::fs::read_to_string(&args.test).map_err(|e| Error::io(&args.test, e))?;
    let raw = parse_raw_ratings(&text, args.format.into())?;
    let (known, unknown) = reindex_with(&raw, users, items)?;

    let gibbs_mean = match model.backend {
        Backend::Gibbs => {
            let path = args.model.join("theta_mean.csv");
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Some(parse_theta_mean_csv(&text)?)
        }
        Backend::Vb => None,
    };
    // Gibbs means are stored on the rating scale; VB factors need the offset.
    let predict = |i: usize, j: usize| -> Option<f64> {
        match (&gibbs_mean, &model.vb) {
            (Some(mean), _) => mean.predict(i, j),
            (None, Some(state)) => state.predict(i, j).map(|p| p + model.offset),
            (None, None) => None,
        }
    };
    let clip = |p: f64| args.clip.map_or(p, |(lo, hi)| p.clamp(lo, hi));
    let mut ss = 0.0;
    let mut missing = 0usize;
    for e in known.entries() {
        let p = predict(e.row, e.col).unwrap_or_else(|| {
            missing += 1;
            model.offset
        });
        ss += (clip(p) - e.value).powi(2);
    }
    for r in &unknown {
        ss += (clip(model.offset) - r.value).powi(2);
    }
    let n = known.len() + unknown.len();
    print_json(&json!({
        "rmse": (ss / n as f64).sqrt(),
        "n": n,
        "unknown_ids": unknown.len(),
        "missing_cells": missing,
        "clip": args.clip,
    }))
}

fn diagnose(args: DiagnoseArgs) -> Result<()> {
    let path = args.dir.join("trace_entries.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let traces = parse_entry_traces_csv(&text)?;
    let burn_in = match args.burn_in {
        Some(b) => b,
        None => manifest_burn_in(&args.dir)?,
    };
    if args.max_lag == 0 {
        return Err(Error::usage("--max-lag must be positive"));
    }
    let acfs = entry_acfs(&traces, burn_in, args.max_lag)?;
    write_text(args.dir.join("acf.csv"), &acf_csv(&acfs))?;
    let summary: Vec<_> = acfs
        .iter()
        .map(|(id, a)| {
            let tr = &traces[*id];
            json!({
                "entry": id,
                "row": tr.row,
                "col": tr.col,
                "first_lag_below_0.2": a.values.iter().position(|&v| v < 0.2),
                "degenerate": a.degenerate,
            })
        })
        .collect();
    let rmse = rmse_trace_summary(&args.dir, burn_in)?;
    print_json(&json!({ "burn_in": burn_in, "entries": summary, "rmse_trace": rmse }))
}

/// Last and smallest post-burn-in value of `trace_rmse.csv`, when the run
/// had a reference matrix to score against.
fn rmse_trace_summary(dir: &Path, burn_in: usize) -> Result<Option<serde_json::Value>> {
    let path = dir.join("trace_rmse.csv");
    let Ok(text) = std::fs::read_to_string(&path) else {
        return Ok(None);
    };
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let parsed = line
            .split_once(',')
            .and_then(|(_, v)| v.trim().parse::<f64>().ok());
        match parsed {
            Some(v) => values.push(v),
            None => {
                return Err(Error::Parse {
                    line: idx + 1,
                    content: line.to_string(),
                    message: "expected iteration,rmse".into(),
                })
            }
        }
    }
    let tail = values.get(burn_in..).unwrap_or(&[]);
    if tail.is_empty() {
        return Ok(None);
    }
    Ok(Some(json!({
        "last": tail[tail.len() - 1],
        "min": tail.iter().copied().fold(f64::INFINITY, f64::min),
        "iterations": values.len(),
    })))
}

fn manifest_burn_in(dir: &Path) -> Result<usize> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Ok(0);
    }
    Ok(RunManifest::load(&path)?.sampler.burn_in)
}

fn verify_prop1(args: VerifyArgs) -> Result<ExitCode> {
    if args.beta.is_empty() || args.s.is_empty() {
        return Err(Error::usage("need at least one beta and one S"));
    }
    let mut worst: f64 = 0.0;
    println!("beta,S,log_integral,log_ratio,relative_deviation");
    for &beta in &args.beta {
        let mut reference = None;
        for &s in &args.s {
            let log_i = log_gamma_prior_column_integral(s, beta, args.dim)?;
            let log_ratio = log_i + beta * s.sqrt();
            let r0 = *reference.get_or_insert(log_ratio);
            let dev = (log_ratio - r0).exp_m1().abs();
            worst = worst.max(dev);
            println!("{beta},{s},{log_i:.12e},{log_ratio:.12e},{dev:.3e}");
        }
    }
    if worst < args.tolerance {
        eprintln!("ok: largest relative deviation {worst:.3e}");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: relative deviation {worst:.3e} exceeds {}", args.tolerance);
        Ok(ExitCode::from(3))
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("LOWRANK_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::usage(format!("LOWRANK_THREADS=`{v}` is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::usage("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Simulate(a) => simulate(a).map(|()| ExitCode::SUCCESS),
        Command::Fit(a) => fit(a).map(|()| ExitCode::SUCCESS),
        Command::Evaluate(a) => evaluate(a).map(|()| ExitCode::SUCCESS),
        Command::Diagnose(a) => diagnose(a).map(|()| ExitCode::SUCCESS),
        Command::VerifyProp1(a) => verify_prop1(a),
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
