//! Experiment grids: algorithms × ε × w × q over a dataset, repeated trials,
//! aggregated into long-format CSV rows.
//!
//! Seeds are derived with [`mix`]: the master seed is folded through
//! splitmix64 together with the cell coordinates (dataset, ε index, w, q) and
//! the trial index. The algorithm is deliberately left out so that every
//! algorithm in a cell sees the same subsequences and the same random draws.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clip::{bounds_from_delta, clip_bounds};
use crate::datasets::{
    builtin_spec, parse_bool, parse_key_values, subsequences, synth_users, Column, CsvOptions,
    DatasetSpec, StreamCollection, SynthKind,
};
use crate::error::{domain, Error, Result};
use crate::highdim::{run_budget_split, run_sample_split, GapFill, Strategy};
use crate::ledger::BudgetLedger;
use crate::mechanism::{randomizer, MechanismKind, Randomizer};
use crate::metrics::{cosine_distance, mse, wasserstein};
use crate::perturber::{Algorithm, ClipBudget, PerturberState, SlotReport};
use crate::sampling::{build_plan, pp_s_run, select_ns_with, NsBudgetMode};
use crate::smoothing::{sma, SmoothingConfig};

pub const RESULTS_HEADER: [&str; 9] = ["dataset", "algo", "eps", "w", "q", "trial_count", "metric", "mean", "stderr"];

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `seed`, one splitmix64 round per part.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |h, p| splitmix64(h ^ p))
}

/// How an algorithm is applied to the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    /// PP-S segment sampling around the base perturber.
    Sampled,
    /// Multi-dimensional strategy around the base perturber.
    Split(Strategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlgoSpec {
    pub base: Algorithm,
    pub variant: Variant,
}

impl AlgoSpec {
    pub const fn plain(base: Algorithm) -> Self {
        AlgoSpec {
            base,
            variant: Variant::Plain,
        }
    }

    /// Smoothing is applied to the parameterized family unless sampled.
    pub fn smoothed(&self) -> bool {
        self.base.is_parameterized() && self.variant != Variant::Sampled
    }
}

impl fmt::Display for AlgoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            Variant::Plain => write!(f, "{}", self.base),
            Variant::Sampled => write!(f, "{}-s", self.base),
            Variant::Split(s) => write!(f, "{}-{}", self.base, s.suffix()),
        }
    }
}

impl FromStr for AlgoSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (base, variant) = if let Some(b) = s.strip_suffix("-s") {
            (b, Variant::Sampled)
        } else if let Some(b) = s.strip_suffix("-bs") {
            (b, Variant::Split(Strategy::BudgetSplit))
        } else if let Some(b) = s.strip_suffix("-ss") {
            (b, Variant::Split(Strategy::SampleSplit))
        } else {
            (s.as_str(), Variant::Plain)
        };
        let base: Algorithm = base.parse()?;
        if variant == Variant::Sampled && base == Algorithm::BaSw {
            return Err(Error::Config("ba-sw cannot be combined with sampling".into()));
        }
        Ok(AlgoSpec { base, variant })
    }
}

/// Where the streams come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { kind: SynthKind, length: usize, users: usize },
    Spec(DatasetSpec),
}

impl DataSource {
    pub fn label(&self) -> String {
        match self {
            DataSource::Synthetic { kind, .. } => match kind {
                SynthKind::Constant(_) => "constant".into(),
                SynthKind::Pulse(_) => "pulse".into(),
                SynthKind::Sinusoidal { .. } => "sinusoidal".into(),
                SynthKind::MultiSin(d) => format!("multisin{d}"),
            },
            DataSource::Spec(spec) => spec.name.clone(),
        }
    }

    pub fn load(&self, seed: u64) -> Result<StreamCollection> {
        match self {
            DataSource::Synthetic { kind, length, users } => synth_users(*kind, *length, *users, seed),
            DataSource::Spec(spec) => spec.load(),
        }
    }
}

/// Metrics a run can report. Per-subsequence metrics are averaged over
/// subsequences, then over trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Squared error of the subsequence mean.
    Mse,
    /// Per-slot squared error.
    SeriesMse,
    Cosine,
    /// 1-Wasserstein distance between published and true slot values.
    Wasserstein,
    /// 1-Wasserstein distance between estimated and true per-user means over
    /// a common window.
    Crowd,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::SeriesMse => "series_mse",
            Metric::Cosine => "cosine",
            Metric::Wasserstein => "wasserstein",
            Metric::Crowd => "crowd_wasserstein",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Ok(Metric::Mse),
            "series_mse" | "series-mse" => Ok(Metric::SeriesMse),
            "cosine" | "cos" => Ok(Metric::Cosine),
            "wasserstein" | "w1" => Ok(Metric::Wasserstein),
            "crowd" | "crowd_wasserstein" => Ok(Metric::Crowd),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// How PP-S picks the number of segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NsChoice {
    #[default]
    Auto,
    Fixed(usize),
}

/// Perturbation settings shared by every algorithm in a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSettings {
    pub epsilon: f64,
    pub w: usize,
    pub mechanism: MechanismKind,
    pub smoothing: SmoothingConfig,
    pub clip_budget: ClipBudget,
    /// Fixed CAPP clip offset; `None` derives it from ε.
    pub delta: Option<f64>,
    pub ns: NsChoice,
    pub ns_mode: NsBudgetMode,
    pub gap_fill: GapFill,
}

impl PerturbSettings {
    pub fn new(epsilon: f64, w: usize) -> Self {
        PerturbSettings {
            epsilon,
            w,
            mechanism: MechanismKind::SquareWave,
            smoothing: SmoothingConfig::default(),
            clip_budget: ClipBudget::Window,
            delta: None,
            ns: NsChoice::Auto,
            ns_mode: NsBudgetMode::PerSample,
            gap_fill: GapFill::CarryForward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub algorithms: Vec<AlgoSpec>,
    pub epsilons: Vec<f64>,
    pub windows: Vec<usize>,
    pub qs: Vec<usize>,
    pub trials: usize,
    pub subsequences: usize,
    pub smoothing: SmoothingConfig,
    pub seed: u64,
    pub sampling: bool,
    pub ns: NsChoice,
    pub ns_mode: NsBudgetMode,
    pub strategy: Option<Strategy>,
    pub mechanism: MechanismKind,
    pub clip_budget: ClipBudget,
    pub delta: Option<f64>,
    pub gap_fill: GapFill,
    pub metrics: Vec<Metric>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: DataSource::Synthetic {
                kind: SynthKind::Sinusoidal { freq: 1.0, phase: 0.0 },
                length: 300,
                users: 1,
            },
            algorithms: vec![
                AlgoSpec::plain(Algorithm::SwDirect),
                AlgoSpec::plain(Algorithm::Ipp),
                AlgoSpec::plain(Algorithm::App),
                AlgoSpec::plain(Algorithm::Capp),
            ],
            epsilons: vec![0.1, 0.5, 1.0, 2.0, 4.0],
            windows: vec![10],
            qs: vec![10],
            trials: 100,
            subsequences: 50,
            smoothing: SmoothingConfig::default(),
            seed: 0,
            sampling: false,
            ns: NsChoice::Auto,
            ns_mode: NsBudgetMode::PerSample,
            strategy: None,
            mechanism: MechanismKind::SquareWave,
            clip_budget: ClipBudget::Window,
            delta: None,
            gap_fill: GapFill::CarryForward,
            metrics: vec![Metric::Mse, Metric::Cosine],
            output: None,
        }
    }
}

fn list<T: FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    let out = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{s}`")))
        })
        .collect::<Result<Vec<T>>>()?;
    if out.is_empty() {
        return Err(Error::Config(format!("`{key}` is empty")));
    }
    Ok(out)
}

fn num<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

/// Keys accepted by [`ExperimentConfig::parse`].
pub const CONFIG_KEYS: &[&str] = &[
    "dataset", "length", "users", "data_dir", "path", "columns", "delimiter", "header", "missing",
    "normalization", "algorithms", "epsilons", "w", "q", "trials", "subsequences", "smooth_window",
    "seed", "sampling", "ns", "ns_mode", "strategy", "dims", "mechanism", "clip_budget", "delta",
    "gap_fill", "metrics", "output", "preset",
];

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let (DataSource::Spec(spec), Some(dir)) = (&mut cfg.source, path.parent()) {
            if spec.path.is_relative() {
                spec.path = dir.join(&spec.path);
            }
        }
        Ok(cfg)
    }

    /// Parses flat `key = value` text. Lists are comma separated.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        if let Some(k) = kv.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let get = |k: &str| kv.get(k).map(String::as_str);
        let mut cfg = ExperimentConfig::default();
        match get("preset") {
            None | Some("full") => {}
            Some("desk") => {
                cfg.trials = 10;
                cfg.subsequences = 10;
            }
            Some(other) => return Err(Error::Config(format!("unknown preset `{other}`"))),
        }

        let length = get("length").map(|v| num::<usize>(v, "length")).transpose()?.unwrap_or(300);
        let users = get("users").map(|v| num::<usize>(v, "users")).transpose()?.unwrap_or(1);
        let dataset = get("dataset").unwrap_or("synth:sinusoidal");
        cfg.source = match dataset.split_once(':') {
            Some(("synth", kind)) => {
                let mut kind: SynthKind = kind.parse()?;
                if let (SynthKind::MultiSin(_), Some(d)) = (kind, get("dims")) {
                    kind = SynthKind::MultiSin(num(d, "dims")?);
                }
                DataSource::Synthetic { kind, length, users }
            }
            Some(("spec", path)) => DataSource::Spec(DatasetSpec::from_file(path.trim())?),
            Some(("csv", path)) => {
                let mut options = CsvOptions::default();
                if let Some(c) = get("columns") {
                    options.columns = Some(list::<Column>(c, "columns")?);
                }
                if let Some(h) = get("header") {
                    options.has_header = Some(parse_bool(h)?);
                }
                if let Some(d) = get("delimiter") {
                    let d = if d == "tab" { "\t" } else { d };
                    if d.len() != 1 {
                        return Err(Error::Config(format!("bad delimiter `{d}`")));
                    }
                    options.delimiter = d.as_bytes()[0];
                }
                if let Some(m) = get("missing") {
                    options.missing = Some(num(m, "missing")?);
                }
                if let Some(n) = get("normalization") {
                    options.normalization = n.parse()?;
                }
                let path = PathBuf::from(path.trim());
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "csv".into());
                DataSource::Spec(DatasetSpec {
                    name,
                    path,
                    options,
                    expected_rows: None,
                    sha256: None,
                    source_url: String::new(),
                })
            }
            Some(("builtin", name)) | Some(("dataset", name)) => {
                let dir = PathBuf::from(get("data_dir").unwrap_or("data"));
                let mut spec = builtin_spec(name.trim(), &dir)
                    .ok_or_else(|| Error::Config(format!("unknown builtin dataset `{name}`")))?;
                if let Some(n) = get("normalization") {
                    spec.options.normalization = n.parse()?;
                }
                if let Some(p) = get("path") {
                    spec.path = PathBuf::from(p);
                }
                DataSource::Spec(spec)
            }
            _ => return Err(Error::Config(format!("bad dataset `{dataset}`"))),
        };

        if let Some(v) = get("algorithms") {
            cfg.algorithms = list(v, "algorithms")?;
        }
        if let Some(v) = get("epsilons") {
            cfg.epsilons = list(v, "epsilons")?;
        }
        if let Some(v) = get("w") {
            cfg.windows = list(v, "w")?;
        }
        if let Some(v) = get("q") {
            cfg.qs = list(v, "q")?;
        }
        if let Some(v) = get("trials") {
            cfg.trials = num(v, "trials")?;
        }
        if let Some(v) = get("subsequences") {
            cfg.subsequences = num(v, "subsequences")?;
        }
        if let Some(v) = get("smooth_window") {
            cfg.smoothing = SmoothingConfig::from_window(num(v, "smooth_window")?)?;
        }
        if let Some(v) = get("seed") {
            cfg.seed = num(v, "seed")?;
        }
        if let Some(v) = get("sampling") {
            cfg.sampling = parse_bool(v)?;
        }
        if let Some(v) = get("ns") {
            cfg.ns = match v {
                "auto" => NsChoice::Auto,
                n => NsChoice::Fixed(num(n, "ns")?),
            };
        }
        if let Some(v) = get("ns_mode") {
            cfg.ns_mode = v.parse()?;
        }
        if let Some(v) = get("strategy") {
            cfg.strategy = match v {
                "none" => None,
                s => Some(s.parse()?),
            };
        }
        if let Some(v) = get("mechanism") {
            cfg.mechanism = v.parse()?;
        }
        if let Some(v) = get("clip_budget") {
            cfg.clip_budget = v.parse()?;
        }
        if let Some(v) = get("delta") {
            cfg.delta = Some(num(v, "delta")?);
        }
        if let Some(v) = get("gap_fill") {
            cfg.gap_fill = v.parse()?;
        }
        if let Some(v) = get("metrics") {
            cfg.metrics = list(v, "metrics")?;
        }
        cfg.output = get("output").map(PathBuf::from);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.subsequences == 0 {
            return Err(Error::Config("subsequences must be at least 1".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
            return Err(Error::Config(format!("epsilon {e} must be positive and finite")));
        }
        if self.windows.contains(&0) || self.qs.contains(&0) {
            return Err(Error::Config("w and q must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if let Some(d) = self.delta {
            bounds_from_delta(d)?;
        }
        if let DataSource::Synthetic { length, .. } = self.source {
            if let Some(q) = self.qs.iter().find(|q| **q > length) {
                return Err(Error::Config(format!("q = {q} exceeds stream length {length}")));
            }
        }
        Ok(())
    }

    /// The algorithm list with `sampling` and `strategy` applied.
    pub fn effective_algorithms(&self, dims: usize) -> Vec<AlgoSpec> {
        self.algorithms
            .iter()
            .map(|a| {
                let mut a = *a;
                if a.variant == Variant::Plain {
                    if dims > 1 {
                        a.variant = Variant::Split(self.strategy.unwrap_or_default());
                    } else if self.sampling && a.base != Algorithm::BaSw {
                        a.variant = Variant::Sampled;
                    }
                }
                a
            })
            .collect()
    }

    fn settings(&self, epsilon: f64, w: usize) -> PerturbSettings {
        PerturbSettings {
            epsilon,
            w,
            mechanism: self.mechanism,
            smoothing: self.smoothing,
            clip_budget: self.clip_budget,
            delta: self.delta,
            ns: self.ns,
            ns_mode: self.ns_mode,
            gap_fill: self.gap_fill,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub algo: String,
    pub eps: f64,
    pub w: usize,
    pub q: usize,
    pub trial_count: usize,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
}

/// Mean and standard error of per-trial values.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_ledger(spends: impl IntoIterator<Item = f64>, w: usize, epsilon: f64) -> Result<()> {
    let mut ledger = BudgetLedger::new(w, epsilon)?;
    for s in spends {
        ledger.push(s)?;
    }
    ledger.assert_w_event()
}

fn build_state(alg: Algorithm, s: &PerturbSettings, epsilon: f64, w: usize) -> Result<PerturberState> {
    let state = PerturberState::with_clip_budget(alg, epsilon, w, s.clip_budget)?;
    match (alg, s.delta) {
        (Algorithm::Capp, Some(d)) => state.with_bounds(bounds_from_delta(d)?),
        _ => Ok(state),
    }
}

/// Perturbs one series end to end and checks the w-event ledger.
pub fn perturb_series<Z: Randomizer + ?Sized>(
    alg: Algorithm,
    values: &[f64],
    s: &PerturbSettings,
    rz: &mut Z,
) -> Result<Vec<SlotReport>> {
    let reports = build_state(alg, s, s.epsilon, s.w)?.run(values, rz)?;
    check_ledger(reports.iter().map(|r| r.budget_spent), s.w, s.epsilon)?;
    Ok(reports)
}

/// Number of PP-S segments for an interval of `len` slots.
pub fn resolve_ns(s: &PerturbSettings, len: usize) -> Result<usize> {
    match s.ns {
        NsChoice::Fixed(n) => Ok(n.clamp(1, len)),
        NsChoice::Auto if len < 2 => Ok(1),
        NsChoice::Auto => Ok(select_ns_with(len, s.epsilon, s.w, s.ns_mode)?.best),
    }
}

/// Collector-side estimate of each dimension of `dims` under `algo`.
pub fn estimate<Z: Randomizer + ?Sized>(
    algo: AlgoSpec,
    dims: &[&[f64]],
    s: &PerturbSettings,
    rz: &mut Z,
) -> Result<Vec<Vec<f64>>> {
    let raw: Vec<Vec<f64>> = match algo.variant {
        Variant::Plain => dims
            .iter()
            .map(|d| Ok(perturb_series(algo.base, d, s, rz)?.iter().map(|r| r.perturbed).collect()))
            .collect::<Result<_>>()?,
        Variant::Sampled => dims
            .iter()
            .map(|d| {
                let n_s = resolve_ns(s, d.len())?;
                let plan = build_plan(0, d.len() - 1, n_s, s.w, s.epsilon)?;
                let run = pp_s_run(d, &plan, algo.base, s.clip_budget, rz)?;
                check_ledger(run.reports.iter().map(|r| r.budget_spent), s.w, s.epsilon)?;
                Ok(run.series)
            })
            .collect::<Result<_>>()?,
        Variant::Split(strategy) => {
            let owned: Vec<Vec<f64>> = dims.iter().map(|d| d.to_vec()).collect();
            let run = match strategy {
                Strategy::BudgetSplit => run_budget_split(&owned, s.w, s.epsilon, algo.base, rz)?,
                Strategy::SampleSplit => run_sample_split(&owned, s.w, s.epsilon, algo.base, s.gap_fill, rz)?,
            };
            check_ledger(run.joint_spends(), s.w, s.epsilon)?;
            run.series
        }
    };
    if algo.smoothed() {
        raw.iter().map(|r| sma(r, s.smoothing)).collect()
    } else {
        Ok(raw)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-subsequence metric value, averaged over dimensions.
fn window_metric(metric: Metric, est: &[Vec<f64>], truth: &[&[f64]]) -> Result<f64> {
    let mut total = 0.0;
    for (e, t) in est.iter().zip(truth) {
        total += match metric {
            Metric::Mse => (mean(e) - mean(t)).powi(2),
            Metric::SeriesMse => mse(e, t)?,
            Metric::Cosine => cosine_distance(e, t)?,
            Metric::Wasserstein => wasserstein(e, t)?,
            Metric::Crowd => unreachable!("crowd metric is computed across users"),
        };
    }
    Ok(total / est.len() as f64)
}

/// `wasserstein(estimated, truth)` over per-user means.
pub fn crowd_distribution(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return domain(format!(
            "{} estimated means for {} users",
            estimated.len(),
            truth.len()
        ));
    }
    wasserstein(estimated, truth)
}

fn randomizer_for(kind: MechanismKind, seed: u64) -> Box<dyn Randomizer> {
    randomizer(kind, ChaCha8Rng::seed_from_u64(seed))
}

const TAG_WINDOWS: u64 = 0x5eed_0001;
const TAG_CROWD: u64 = 0x5eed_0002;

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    algo: AlgoSpec,
    eps_index: usize,
    epsilon: f64,
    w: usize,
    q: usize,
}

/// Per-trial metric values for one cell, in `metrics` order.
fn run_trial(
    cfg: &ExperimentConfig,
    data: &StreamCollection,
    cell: &Cell,
    trial: usize,
) -> Result<Vec<f64>> {
    let s = cfg.settings(cell.epsilon, cell.w);
    let trial_seed = mix(cfg.seed, &[cell.eps_index as u64, cell.w as u64, cell.q as u64, trial as u64]);
    let window_seed = mix(cfg.seed, &[TAG_WINDOWS, cell.q as u64, trial as u64]);
    let mut out = Vec::with_capacity(cfg.metrics.len());
    let per_window: Vec<Metric> = cfg.metrics.iter().copied().filter(|m| *m != Metric::Crowd).collect();
    let mut sums = vec![0.0; per_window.len()];
    if !per_window.is_empty() {
        let windows = subsequences(data, cell.q, cfg.subsequences, window_seed)?;
        for (k, win) in windows.iter().enumerate() {
            let truth: Vec<&[f64]> = data
                .user(win.stream)
                .iter()
                .map(|s| &s.values[win.i..=win.j])
                .collect();
            let mut rz = randomizer_for(cfg.mechanism, mix(trial_seed, &[k as u64]));
            let est = estimate(cell.algo, &truth, &s, &mut *rz)?;
            for (acc, m) in sums.iter_mut().zip(&per_window) {
                *acc += window_metric(*m, &est, &truth)?;
            }
        }
    }
    let mut per_window_iter = sums.into_iter().map(|v| v / cfg.subsequences as f64);
    for m in &cfg.metrics {
        out.push(match m {
            Metric::Crowd => crowd_trial(cfg, data, cell, &s, trial_seed)?,
            _ => per_window_iter.next().expect("one sum per window metric"),
        });
    }
    Ok(out)
}

fn crowd_trial(
    cfg: &ExperimentConfig,
    data: &StreamCollection,
    cell: &Cell,
    s: &PerturbSettings,
    trial_seed: u64,
) -> Result<f64> {
    let len = data.min_len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(trial_seed, &[TAG_CROWD]));
    let i = rng.gen_range(0..=len - cell.q);
    let j = i + cell.q - 1;
    let mut estimated = Vec::new();
    let mut truth = Vec::new();
    for u in 0..data.users() {
        let dims: Vec<&[f64]> = data.user(u).iter().map(|st| &st.values[i..=j]).collect();
        let mut rz = randomizer_for(cfg.mechanism, mix(trial_seed, &[TAG_CROWD, u as u64]));
        let est = estimate(cell.algo, &dims, s, &mut *rz)?;
        for (e, t) in est.iter().zip(&dims) {
            estimated.push(mean(e));
            truth.push(mean(t));
        }
    }
    crowd_distribution(&estimated, &truth)
}

/// Runs every cell for all trials on the rayon pool. Rows come out in cell
/// order (algorithm, ε, w, q, metric) whatever the completion order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let data = cfg.source.load(cfg.seed)?;
    let len = data.min_len();
    if let Some(q) = cfg.qs.iter().find(|q| **q > len) {
        return Err(Error::Config(format!("q = {q} exceeds stream length {len}")));
    }
    let dataset = cfg.source.label();
    let mut cells = Vec::new();
    for algo in cfg.effective_algorithms(data.dims) {
        for (eps_index, &epsilon) in cfg.epsilons.iter().enumerate() {
            for &w in &cfg.windows {
                for &q in &cfg.qs {
                    cells.push(Cell {
                        algo,
                        eps_index,
                        epsilon,
                        w,
                        q,
                    });
                }
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let values: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(c, t)| run_trial(cfg, &data, &cells[c], t))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cells.len() * cfg.metrics.len());
    for (c, cell) in cells.iter().enumerate() {
        let trials = &values[c * cfg.trials..(c + 1) * cfg.trials];
        for (m, metric) in cfg.metrics.iter().enumerate() {
            let per_trial: Vec<f64> = trials.iter().map(|v| v[m]).collect();
            let (mean, stderr) = mean_stderr(&per_trial);
            rows.push(ResultRow {
                dataset: dataset.clone(),
                algo: cell.algo.to_string(),
                eps: cell.epsilon,
                w: cell.w,
                q: cell.q,
                trial_count: cfg.trials,
                metric: metric.name().to_string(),
                mean,
                stderr,
            });
        }
    }
    Ok(rows)
}

/// Per-trial values of one metric for one algorithm; the building block the
/// acceptance checks use for paired comparisons.
pub fn trial_values(cfg: &ExperimentConfig, algo: AlgoSpec, epsilon: f64, w: usize, q: usize) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let data = cfg.source.load(cfg.seed)?;
    let eps_index = cfg
        .epsilons
        .iter()
        .position(|e| *e == epsilon)
        .unwrap_or(cfg.epsilons.len());
    let cell = Cell {
        algo,
        eps_index,
        epsilon,
        w,
        q,
    };
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, &data, &cell, t))
        .collect()
}

/// Writes rows as CSV with [`RESULTS_HEADER`].
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(RESULTS_HEADER)?;
    for r in rows {
        wr.write_record([
            r.dataset.clone(),
            r.algo.clone(),
            r.eps.to_string(),
            r.w.to_string(),
            r.q.to_string(),
            r.trial_count.to_string(),
            r.metric.clone(),
            format!("{:.10e}", r.mean),
            format!("{:.10e}", r.stderr),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn results_csv(rows: &[ResultRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_results(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// One `(ε, δ)` point of a clip-offset sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub eps: f64,
    pub delta: f64,
    pub mean: f64,
    pub stderr: f64,
    /// The offset the clip rule recommends for this ε.
    pub recommended: f64,
}

pub const DELTA_HEADER: [&str; 9] = ["dataset", "eps", "w", "q", "delta", "recommended", "metric", "mean", "stderr"];

/// CAPP error under `metric` at each `(ε, δ)` with the clip interval fixed
/// to `[-δ, 1 + δ]`.
pub fn delta_sweep(
    cfg: &ExperimentConfig,
    w: usize,
    q: usize,
    deltas: &[f64],
    metric: Metric,
) -> Result<Vec<DeltaRow>> {
    if metric == Metric::Crowd {
        return domain("the crowd metric cannot drive a delta sweep");
    }
    for d in deltas {
        bounds_from_delta(*d)?;
        if *d > 0.5 {
            return domain(format!("delta {d} outside (-0.5, 0.5]"));
        }
    }
    let mut rows = Vec::new();
    for &eps in &cfg.epsilons {
        let recommended = clip_bounds(eps)?.t_value;
        for &delta in deltas {
            let sweep = ExperimentConfig {
                delta: Some(delta),
                metrics: vec![metric],
                ..cfg.clone()
            };
            let per_trial: Vec<f64> = trial_values(&sweep, AlgoSpec::plain(Algorithm::Capp), eps, w, q)?
                .into_iter()
                .map(|v| v[0])
                .collect();
            let (mean, stderr) = mean_stderr(&per_trial);
            rows.push(DeltaRow {
                eps,
                delta,
                mean,
                stderr,
                recommended,
            });
        }
    }
    Ok(rows)
}

/// True when both ends of the sweep are at least the interior minimum.
pub fn is_u_shaped(rows: &[DeltaRow]) -> bool {
    if rows.len() < 3 {
        return false;
    }
    let inner = rows[1..rows.len() - 1]
        .iter()
        .map(|r| r.mean)
        .fold(f64::INFINITY, f64::min);
    rows[0].mean >= inner && rows[rows.len() - 1].mean >= inner
}

pub fn write_delta_rows<W: Write>(
    dataset: &str,
    w: usize,
    q: usize,
    metric: Metric,
    rows: &[DeltaRow],
    out: W,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(DELTA_HEADER)?;
    for r in rows {
        wr.write_record([
            dataset.to_string(),
            r.eps.to_string(),
            w.to_string(),
            q.to_string(),
            r.delta.to_string(),
            format!("{:.6}", r.recommended),
            metric.name().to_string(),
            format!("{:.10e}", r.mean),
            format!("{:.10e}", r.stderr),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
