//! Stream ingestion, normalization and synthetic generators.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};

/// One min-max normalized stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSeries {
    pub values: Vec<f64>,
    pub raw_min: f64,
    pub raw_max: f64,
    pub label: String,
}

impl StreamSeries {
    /// Normalizes `raw` into `[0, 1]`; a constant series maps to 0.5.
    pub fn normalize(label: impl Into<String>, raw: &[f64]) -> Result<Self> {
        let (lo, hi) = min_max(raw)?;
        Ok(Self::normalize_with(label, raw, lo, hi))
    }

    /// Normalizes with an externally fixed range (e.g. a global min-max).
    pub fn normalize_with(label: impl Into<String>, raw: &[f64], lo: f64, hi: f64) -> Self {
        let values = if hi > lo {
            raw.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.5; raw.len()]
        };
        StreamSeries {
            values,
            raw_min: lo,
            raw_max: hi,
            label: label.into(),
        }
    }

    /// Wraps values already in `[0, 1]`.
    pub fn unit(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return domain(format!("value {v} outside [0, 1]"));
        }
        Ok(StreamSeries {
            values,
            raw_min: 0.0,
            raw_max: 1.0,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.raw_max <= self.raw_min
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        if self.is_constant() {
            self.raw_min
        } else {
            self.raw_min + v * (self.raw_max - self.raw_min)
        }
    }

    pub fn raw_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| self.denormalize(*v)).collect()
    }
}

fn min_max(raw: &[f64]) -> Result<(f64, f64)> {
    if raw.is_empty() {
        return domain("empty column");
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in raw {
        if !v.is_finite() {
            return domain(format!("non-finite value {v}"));
        }
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    Ok((lo, hi))
}

/// Streams from one or more users; user `u`, dimension `k` lives at
/// `streams[u * dims + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamCollection {
    pub streams: Vec<StreamSeries>,
    pub dims: usize,
}

impl StreamCollection {
    pub fn new(streams: Vec<StreamSeries>, dims: usize) -> Result<Self> {
        if dims == 0 || !streams.len().is_multiple_of(dims) {
            return domain(format!("{} streams do not split into {dims} dimensions", streams.len()));
        }
        Ok(StreamCollection { streams, dims })
    }

    pub fn single(series: StreamSeries) -> Self {
        StreamCollection {
            streams: vec![series],
            dims: 1,
        }
    }

    pub fn users(&self) -> usize {
        self.streams.len() / self.dims
    }

    /// All dimensions of user `u`.
    pub fn user(&self, u: usize) -> &[StreamSeries] {
        &self.streams[u * self.dims..(u + 1) * self.dims]
    }

    pub fn min_len(&self) -> usize {
        self.streams.iter().map(|s| s.len()).min().unwrap_or(0)
    }

    /// Flattens a multi-dimensional collection into one dimension per stream.
    pub fn flatten(mut self) -> Self {
        self.dims = 1;
        self
    }
}

/// How each CSV column is rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    PerStream,
    /// One min-max range shared by all selected columns.
    Global,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per-stream" | "stream" => Ok(Normalization::PerStream),
            "global" => Ok(Normalization::Global),
            other => Err(Error::Config(format!("unknown normalization `{other}`"))),
        }
    }
}

/// A column given by header name or 0-based index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Config("empty column name".into()));
        }
        Ok(s.parse::<usize>()
            .map(Column::Index)
            .unwrap_or_else(|_| Column::Name(s.to_string())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    /// `None` means every column.
    pub columns: Option<Vec<Column>>,
    /// `None` autodetects a header from the first row.
    pub has_header: Option<bool>,
    pub delimiter: u8,
    /// Rows where a selected cell equals this sentinel are dropped.
    pub missing: Option<f64>,
    pub normalization: Normalization,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            columns: None,
            has_header: None,
            delimiter: b',',
            missing: None,
            normalization: Normalization::PerStream,
        }
    }
}

/// Loads numeric columns of a CSV file, one stream per column.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<StreamCollection> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_csv(&text, path, opts)
}

fn parse_csv(text: &str, path: &Path, opts: &CsvOptions) -> Result<StreamCollection> {
    let parse_err = |row: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec?);
    }
    if records.is_empty() {
        return Err(parse_err(0, "file has no rows".into()));
    }
    let header_present = opts.has_header.unwrap_or_else(|| {
        records[0]
            .iter()
            .any(|c| !c.is_empty() && c.parse::<f64>().is_err())
    });
    let header: Vec<String> = if header_present {
        records[0].iter().map(str::to_string).collect()
    } else {
        (0..records[0].len()).map(|i| format!("col{i}")).collect()
    };
    let body = &records[usize::from(header_present)..];
    let selected: Vec<usize> = match &opts.columns {
        None => (0..header.len()).collect(),
        Some(cols) => cols
            .iter()
            .map(|c| match c {
                Column::Index(i) if *i < header.len() => Ok(*i),
                Column::Index(i) => Err(parse_err(1, format!("column index {i} out of range"))),
                Column::Name(n) => header
                    .iter()
                    .position(|h| h == n)
                    .ok_or_else(|| parse_err(1, format!("no column named `{n}`"))),
            })
            .collect::<Result<_>>()?,
    };
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(body.len()); selected.len()];
    let first_row = 1 + usize::from(header_present);
    'rows: for (r, rec) in body.iter().enumerate() {
        let row = first_row + r;
        let mut vals = Vec::with_capacity(selected.len());
        for &c in &selected {
            let cell = rec
                .get(c)
                .ok_or_else(|| parse_err(row, format!("missing cell in column `{}`", header[c])))?;
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, format!("non-numeric cell `{cell}` in column `{}`", header[c])))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("non-finite cell `{cell}` in column `{}`", header[c])));
            }
            if opts.missing == Some(v) {
                continue 'rows;
            }
            vals.push(v);
        }
        for (col, v) in columns.iter_mut().zip(vals) {
            col.push(v);
        }
    }
    if columns.iter().any(Vec::is_empty) {
        return Err(parse_err(first_row, "empty column".into()));
    }
    let streams = match opts.normalization {
        Normalization::PerStream => selected
            .iter()
            .zip(&columns)
            .map(|(c, raw)| StreamSeries::normalize(header[*c].clone(), raw))
            .collect::<Result<Vec<_>>>()?,
        Normalization::Global => {
            let all: Vec<f64> = columns.iter().flatten().copied().collect();
            let (lo, hi) = min_max(&all)?;
            selected
                .iter()
                .zip(&columns)
                .map(|(c, raw)| StreamSeries::normalize_with(header[*c].clone(), raw, lo, hi))
                .collect()
        }
    };
    StreamCollection::new(streams, 1)
}

/// Synthetic stream families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    Constant(f64),
    /// Zeros with a 1 at every `period`-th slot.
    Pulse(usize),
    /// `(1 + sin(freq·t + phase)) / 2`, `freq` in radians per slot.
    Sinusoidal { freq: f64, phase: f64 },
    /// `d` sinusoids with distinct frequencies and seeded phases.
    MultiSin(usize),
}

impl FromStr for SynthKind {
    type Err = Error;

    /// Accepts `constant(0.1)`, `pulse(5)`, `sinusoidal`, `sinusoidal(1.0)`,
    /// `sinusoidal(1.0, 0.5)` and `multisin(5)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], &s[open + 1..s.len() - 1]),
            Some(_) => return Err(Error::Config(format!("unbalanced parentheses in `{s}`"))),
            None => (s.as_str(), ""),
        };
        let nums = args
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(|a| a.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{a}` in `{s}`"))))
            .collect::<Result<Vec<f64>>>()?;
        let arg = |i: usize, default: f64| nums.get(i).copied().unwrap_or(default);
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("`{s}` needs a positive integer argument")))
            }
        };
        match name {
            "constant" => Ok(SynthKind::Constant(arg(0, 0.1))),
            "pulse" => Ok(SynthKind::Pulse(count(arg(0, 5.0))?)),
            "sinusoidal" | "sin" => Ok(SynthKind::Sinusoidal {
                freq: arg(0, 1.0),
                phase: arg(1, 0.0),
            }),
            "multisin" => Ok(SynthKind::MultiSin(count(arg(0, 5.0))?)),
            other => Err(Error::Config(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

/// Frequency of dimension `k` in a multisin collection.
pub fn multisin_freq(k: usize) -> f64 {
    0.25 * (k + 1) as f64
}

fn sinusoid(freq: f64, phase: f64, length: usize) -> Vec<f64> {
    (0..length)
        .map(|t| (0.5 + 0.5 * (freq * t as f64 + phase).sin()).clamp(0.0, 1.0))
        .collect()
}

/// Generates a synthetic collection. Multisin yields one user with `d` dimensions.
pub fn synth(kind: SynthKind, length: usize, seed: u64) -> Result<StreamCollection> {
    if length == 0 {
        return domain("synthetic length must be at least 1");
    }
    match kind {
        SynthKind::Constant(c) => {
            if !(0.0..=1.0).contains(&c) {
                return domain(format!("constant {c} outside [0, 1]"));
            }
            Ok(StreamCollection::single(StreamSeries::unit("constant", vec![c; length])?))
        }
        SynthKind::Pulse(period) => {
            if period == 0 {
                return domain("pulse period must be at least 1");
            }
            let v = (1..=length).map(|t| if t % period == 0 { 1.0 } else { 0.0 }).collect();
            Ok(StreamCollection::single(StreamSeries::unit("pulse", v)?))
        }
        SynthKind::Sinusoidal { freq, phase } => {
            if !freq.is_finite() || !phase.is_finite() {
                return domain("sinusoid parameters must be finite");
            }
            Ok(StreamCollection::single(StreamSeries::unit(
                "sinusoidal",
                sinusoid(freq, phase, length),
            )?))
        }
        SynthKind::MultiSin(d) => {
            if d == 0 {
                return domain("multisin needs at least one dimension");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let streams = (0..d)
                .map(|k| {
                    let phase = rng.gen::<f64>() * 2.0 * PI;
                    StreamSeries::unit(format!("sin{k}"), sinusoid(multisin_freq(k), phase, length))
                })
                .collect::<Result<Vec<_>>>()?;
            StreamCollection::new(streams, d)
        }
    }
}

/// `users` independent copies of a synthetic kind. Sinusoids get a seeded
/// random phase per user (user 0 keeps the configured phase); multisin draws
/// fresh phases per user.
pub fn synth_users(kind: SynthKind, length: usize, users: usize, seed: u64) -> Result<StreamCollection> {
    if users == 0 {
        return domain("need at least one user");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut streams = Vec::new();
    let mut dims = 1;
    for u in 0..users {
        let user_kind = match kind {
            SynthKind::Sinusoidal { freq, phase } if u > 0 => SynthKind::Sinusoidal {
                freq,
                phase: phase + rng.gen::<f64>() * 2.0 * PI,
            },
            other => other,
        };
        let c = synth(user_kind, length, rng.gen())?;
        dims = c.dims;
        streams.extend(c.streams);
    }
    StreamCollection::new(streams, dims)
}

/// A randomly placed query window `[i, j]` (inclusive) on stream `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub stream: usize,
    pub i: usize,
    pub j: usize,
}

/// Draws `count` windows of width `q` uniformly over the collection's streams
/// and valid start positions. `stream` indexes users.
pub fn subsequences(collection: &StreamCollection, q: usize, count: usize, seed: u64) -> Result<Vec<Window>> {
    let users = collection.users();
    if users == 0 {
        return domain("collection has no streams");
    }
    let len = collection.min_len();
    if q == 0 || q > len {
        return domain(format!("subsequence length {q} must lie in [1, {len}]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let stream = rng.gen_range(0..users);
            let i = rng.gen_range(0..=len - q);
            Window {
                stream,
                i,
                j: i + q - 1,
            }
        })
        .collect())
}

/// Location, layout and integrity data for an external dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    pub options: CsvOptions,
    pub expected_rows: Option<usize>,
    pub sha256: Option<String>,
    pub source_url: String,
}

impl DatasetSpec {
    /// Parses a `key = value` spec file. Relative `path` values resolve
    /// against the spec file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut spec = Self::parse(&text)?;
        if spec.path.is_relative() {
            if let Some(dir) = path.parent() {
                spec.path = dir.join(&spec.path);
            }
        }
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| kv.get(k).map(String::as_str);
        let need = |k: &str| get(k).ok_or_else(|| Error::Config(format!("dataset spec is missing `{k}`")));
        let mut options = CsvOptions::default();
        if let Some(cols) = get("columns") {
            options.columns = Some(cols.split(',').map(str::parse).collect::<Result<_>>()?);
        }
        if let Some(h) = get("header") {
            options.has_header = Some(parse_bool(h)?);
        }
        if let Some(d) = get("delimiter") {
            options.delimiter = match d {
                "tab" | "\\t" => b'\t',
                "semicolon" => b';',
                "comma" => b',',
                s if s.len() == 1 => s.as_bytes()[0],
                other => return Err(Error::Config(format!("bad delimiter `{other}`"))),
            };
        }
        if let Some(m) = get("missing") {
            options.missing = Some(m.parse().map_err(|_| Error::Config(format!("bad missing sentinel `{m}`")))?);
        }
        if let Some(n) = get("normalization") {
            options.normalization = n.parse()?;
        }
        Ok(DatasetSpec {
            name: need("name")?.to_string(),
            path: PathBuf::from(need("path")?),
            options,
            expected_rows: get("rows")
                .map(|r| r.parse().map_err(|_| Error::Config(format!("bad row count `{r}`"))))
                .transpose()?,
            sha256: get("sha256").map(|s| s.to_ascii_lowercase()),
            source_url: get("source").unwrap_or("").to_string(),
        })
    }

    /// Verifies presence and checksum, then loads and checks the row count.
    pub fn load(&self) -> Result<StreamCollection> {
        if !self.path.exists() {
            return Err(Error::DatasetMissing {
                name: self.name.clone(),
                path: self.path.clone(),
                source_url: self.source_url.clone(),
            });
        }
        if let Some(want) = &self.sha256 {
            let got = sha256_file(&self.path)?;
            if &got != want {
                return Err(Error::Config(format!(
                    "dataset `{}` checksum mismatch: expected {want}, found {got}",
                    self.name
                )));
            }
        }
        let coll = load_csv(&self.path, &self.options)?;
        if let Some(rows) = self.expected_rows {
            let got = coll.min_len();
            if got != rows {
                return Err(Error::Config(format!(
                    "dataset `{}` has {got} usable rows, expected {rows}",
                    self.name
                )));
            }
        }
        Ok(coll)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Specs for the public datasets used in the evaluation. Data files are not
/// shipped; `dir` is where the user placed the downloads.
pub fn builtin_spec(name: &str, dir: &Path) -> Option<DatasetSpec> {
    let (file, column, source, delimiter, missing) = match name.to_ascii_lowercase().as_str() {
        "c6h6" => (
            "AirQualityUCI.csv",
            "C6H6(GT)",
            "https://archive.ics.uci.edu/dataset/360/air+quality",
            b';',
            Some(-200.0),
        ),
        "volume" => (
            "Metro_Interstate_Traffic_Volume.csv",
            "traffic_volume",
            "https://archive.ics.uci.edu/dataset/492/metro+interstate+traffic+volume",
            b',',
            None,
        ),
        "power" => (
            "household_power_consumption.txt",
            "Global_active_power",
            "https://archive.ics.uci.edu/dataset/235/individual+household+electric+power+consumption",
            b';',
            None,
        ),
        "taxi" => (
            "taxi.csv",
            "latitude",
            "https://www.microsoft.com/en-us/research/publication/t-drive-trajectory-data-sample/",
            b',',
            None,
        ),
        _ => return None,
    };
    Some(DatasetSpec {
        name: name.to_ascii_lowercase(),
        path: dir.join(file),
        options: CsvOptions {
            columns: Some(vec![Column::Name(column.to_string())]),
            has_header: Some(true),
            delimiter,
            missing,
            normalization: Normalization::PerStream,
        },
        expected_rows: None,
        sha256: None,
        source_url: source.to_string(),
    })
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim().to_ascii_lowercase().replace('-', "_");
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

pub(crate) fn parse_bool(s: &str) -> Result<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("expected a boolean, got `{other}`"))),
    }
}
