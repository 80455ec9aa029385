//! MovieLens ingestion, train/test splitting, run manifests and result
//! emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::SyntheticSpec;
use crate::gibbs::Acf;
use crate::model::{EntryTrace, ObservationSet, PriorSpec, Rating, SamplerConfig, ThetaMean};
use crate::rng::RngStream;

/// On-disk layouts of the MovieLens ratings files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingsFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp` (100K `u.data`).
    Tab,
    /// `user::item::rating::timestamp` (1M / 10M `ratings.dat`).
    DoubleColon,
    /// `userId,movieId,rating,timestamp` with a header line.
    CsvHeader,
}

impl RatingsFormat {
    fn separator(self) -> &'static str {
        match self {
            RatingsFormat::Tab => "\t",
            RatingsFormat::DoubleColon => "::",
            RatingsFormat::CsvHeader => ",",
        }
    }
}

impl FromStr for RatingsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tab" => Ok(RatingsFormat::Tab),
            "dcolon" | "double-colon" | "dat" => Ok(RatingsFormat::DoubleColon),
            "csv" => Ok(RatingsFormat::CsvHeader),
            other => Err(Error::usage(format!(
                "unknown ratings format `{other}` (expected tab, dcolon or csv)"
            ))),
        }
    }
}

const CSV_HEADER: &str = "userId,movieId,rating,timestamp";

/// Sorted original ids; position in the list is the dense index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    ids: Vec<u64>,
}

impl IdMap {
    fn from_unsorted(mut ids: Vec<u64>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        IdMap { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn id_of(&self, index: usize) -> Option<u64> {
        self.ids.get(index).copied()
    }
}

/// Ratings with users and items reindexed densely from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsData {
    pub obs: ObservationSet,
    pub users: IdMap,
    pub items: IdMap,
}

/// One parsed line with its original ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRating {
    pub user: u64,
    pub item: u64,
    pub value: f64,
    pub timestamp: Option<u64>,
}

fn parse_error(line: usize, content: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        content: content.to_string(),
        message: message.into(),
    }
}

fn parse_id(field: &str, what: &str, line: usize, content: &str) -> Result<u64> {
    match field.trim().parse::<u64>() {
        Ok(0) | Err(_) => Err(parse_error(
            line,
            content,
            format!("{what} id `{field}` is not a positive integer"),
        )),
        Ok(v) => Ok(v),
    }
}

/// Parse the raw lines of a ratings file, keeping original ids.
pub fn parse_raw_ratings(text: &str, format: RatingsFormat) -> Result<Vec<RawRating>> {
    let sep = format.separator();
    let mut out = Vec::new();
    let mut header_seen = format != RatingsFormat::CsvHeader;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line.trim() != CSV_HEADER {
                return Err(parse_error(
                    line_no,
                    line,
                    format!("expected header `{CSV_HEADER}`"),
                ));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(sep).collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(parse_error(
                line_no,
                line,
                format!("expected 3 or 4 fields, found {}", fields.len()),
            ));
        }
        let user = parse_id(fields[0], "user", line_no, line)?;
        let item = parse_id(fields[1], "item", line_no, line)?;
        let value: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_error(line_no, line, format!("rating `{}` is not a number", fields[2])))?;
        if !value.is_finite() {
            return Err(parse_error(line_no, line, "rating is not finite"));
        }
        let timestamp = match fields.get(3) {
            Some(t) => Some(t.trim().parse::<u64>().map_err(|_| {
                parse_error(line_no, line, format!("timestamp `{t}` is not an integer"))
            })?),
            None => None,
        };
        out.push(RawRating {
            user,
            item,
            value,
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(Error::usage("ratings file contains no ratings"));
    }
    Ok(out)
}

/// Parse ratings text and reindex users and items densely (sorted by id).
pub fn parse_ratings_str(text: &str, format: RatingsFormat) -> Result<RatingsData> {
    let raw = parse_raw_ratings(text, format)?;
    let users = IdMap::from_unsorted(raw.iter().map(|r| r.user).collect());
    let items = IdMap::from_unsorted(raw.iter().map(|r| r.item).collect());
    let entries = raw
        .iter()
        .map(|r| {
            Rating::new(
                users.index_of(r.user).expect("user in map"),
                items.index_of(r.item).expect("item in map"),
                r.value,
            )
        })
        .collect();
    let obs = ObservationSet::new(users.len(), items.len(), entries)?;
    Ok(RatingsData { obs, users, items })
}

pub fn parse_ratings(path: impl AsRef<Path>, format: RatingsFormat) -> Result<RatingsData> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_ratings_str(&text, format)
}

/// Map raw test ratings onto an existing index space. Ratings whose user or
/// item is unknown are returned separately.
pub fn reindex_with(
    raw: &[RawRating],
    users: &IdMap,
    items: &IdMap,
) -> Result<(ObservationSet, Vec<RawRating>)> {
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for r in raw {
        match (users.index_of(r.user), items.index_of(r.item)) {
            (Some(i), Some(j)) => known.push(Rating::new(i, j, r.value)),
            _ => unknown.push(*r),
        }
    }
    Ok((ObservationSet::new(users.len(), items.len(), known)?, unknown))
}

/// Serialize back to the given format with original ids and zero timestamps.
pub fn write_ratings(data: &RatingsData, format: RatingsFormat) -> String {
    let sep = format.separator();
    let mut out = String::new();
    if format == RatingsFormat::CsvHeader {
        out.push_str(CSV_HEADER);
        out.push('\n');
    }
    for e in data.obs.entries() {
        let _ = writeln!(
            out,
            "{}{sep}{}{sep}{}{sep}0",
            data.users.id_of(e.row).unwrap(),
            data.items.id_of(e.col).unwrap(),
            e.value
        );
    }
    out
}

/// Uniform random partition of the entries with `round(ratio * n)` in the
/// training part. Entries keep their original relative order.
pub fn train_test_split(
    obs: &ObservationSet,
    ratio: f64,
    seed: u64,
) -> Result<(ObservationSet, ObservationSet)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::usage(format!("split ratio {ratio} outside (0, 1)")));
    }
    if obs.len() < 2 {
        return Err(Error::usage("need at least two entries to split"));
    }
    let n = obs.len();
    let n_train = (ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed).fork(0x5EED);
    order.shuffle(&mut rng);
    let mut train_pos = order[..n_train].to_vec();
    let mut test_pos = order[n_train..].to_vec();
    train_pos.sort_unstable();
    test_pos.sort_unstable();
    Ok((obs.select(&train_pos), obs.select(&test_pos)))
}

/// Inference backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Gibbs,
    Vb,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gibbs" => Ok(Backend::Gibbs),
            "vb" => Ok(Backend::Vb),
            other => Err(Error::usage(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    File { path: PathBuf, format: RatingsFormat },
    Synthetic(SyntheticSpec),
}

/// Everything needed to rerun a fit; written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub data: DataSource,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub backend: Backend,
    /// Training fraction; `None` when there is no split (synthetic runs).
    pub split: Option<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// VB convergence tolerance and cap.
    #[serde(default)]
    pub vb_tolerance: Option<f64>,
    #[serde(default)]
    pub vb_max_iterations: Option<usize>,
    /// Subtract the training mean before fitting and add it back to every
    /// prediction. Off by default: the model has no intercept.
    #[serde(default)]
    pub center: bool,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.split {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::usage(format!("split ratio {r} outside (0, 1)")));
            }
        }
        if self.backend == Backend::Vb && !matches!(self.prior, PriorSpec::InverseGamma { .. }) {
            return Err(Error::usage("the VB backend supports only the inverse-gamma prior"));
        }
        self.prior.validate()?;
        self.sampler.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// 17 significant digits; parses back to the same `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// `iteration,gamma_1,...,gamma_K`.
pub fn gamma_trace_csv(trace: &[Vec<f64>], iterations: &[usize]) -> String {
    let k = trace.first().map_or(0, Vec::len);
    let mut out = String::from("iteration");
    for h in 1..=k {
        let _ = write!(out, ",gamma_{h}");
    }
    out.push('\n');
    for (t, g) in iterations.iter().zip(trace) {
        let _ = write!(out, "{t}");
        for v in g {
            let _ = write!(out, ",{}", fmt17(*v));
        }
        out.push('\n');
    }
    out
}

/// `iteration,rmse`, 1-based iterations.
pub fn rmse_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,rmse\n");
    for (t, v) in trace.iter().enumerate() {
        let _ = writeln!(out, "{},{}", t + 1, fmt17(*v));
    }
    out
}

/// `entry,row,col,iteration,value` for every tracked entry.
pub fn entry_traces_csv(traces: &[EntryTrace]) -> String {
    let mut out = String::from("entry,row,col,iteration,value\n");
    for (id, tr) in traces.iter().enumerate() {
        for (t, v) in tr.values.iter().enumerate() {
            let _ = writeln!(out, "{id},{},{},{},{}", tr.row, tr.col, t + 1, fmt17(*v));
        }
    }
    out
}

/// Inverse of [`entry_traces_csv`].
pub fn parse_entry_traces_csv(text: &str) -> Result<Vec<EntryTrace>> {
    let mut traces: Vec<EntryTrace> = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |msg: &str| parse_error(idx + 1, line, msg);
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let id: usize = f[0].parse().map_err(|_| bad("bad entry id"))?;
        let row: usize = f[1].parse().map_err(|_| bad("bad row"))?;
        let col: usize = f[2].parse().map_err(|_| bad("bad col"))?;
        let value: f64 = f[4].parse().map_err(|_| bad("bad value"))?;
        if id == traces.len() {
            traces.push(EntryTrace {
                row,
                col,
                values: Vec::new(),
            });
        } else if id + 1 != traces.len() {
            return Err(bad("entry ids must be contiguous"));
        }
        traces[id].values.push(value);
    }
    Ok(traces)
}

/// `entry,lag,value`.
pub fn acf_csv(acfs: &[(usize, Acf)]) -> String {
    let mut out = String::from("entry,lag,value\n");
    for (id, a) in acfs {
        for (lag, v) in a.values.iter().enumerate() {
            let _ = writeln!(out, "{id},{lag},{}", fmt17(*v));
        }
    }
    out
}

/// `i,j,value` for every stored cell.
pub fn theta_mean_csv(mean: &ThetaMean) -> String {
    let mut out = String::from("i,j,value\n");
    for (i, j, v) in mean.iter_cells() {
        let _ = writeln!(out, "{i},{j},{}", fmt17(v));
    }
    out
}

/// Inverse of [`theta_mean_csv`], as a cell-restricted mean.
pub fn parse_theta_mean_csv(text: &str) -> Result<ThetaMean> {
    let mut cells = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |msg: &str| parse_error(idx + 1, line, msg);
        if f.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let i: usize = f[0].parse().map_err(|_| bad("bad row"))?;
        let j: usize = f[1].parse().map_err(|_| bad("bad col"))?;
        let v: f64 = f[2].parse().map_err(|_| bad("bad value"))?;
        cells.push((i, j));
        values.push(v);
    }
    let mut mean = ThetaMean::cells(cells);
    if let ThetaMean::Cells { values: stored, .. } = &mut mean {
        if stored.len() != values.len() {
            return Err(Error::Data("duplicate cells in theta mean file".into()));
        }
        stored.copy_from_slice(&values);
    }
    Ok(mean)
}
