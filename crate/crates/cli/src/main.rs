use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ldpstream::clip::{clip_bounds, discarding_error, sensitivity_error};
use ldpstream::datasets::{load_csv, synth, CsvOptions, StreamCollection, SynthKind};
use ldpstream::harness::{
    delta_sweep, estimate, is_u_shaped, run_experiment, write_delta_rows, write_results, AlgoSpec, ExperimentConfig,
    Metric, NsChoice, PerturbSettings, Variant,
};
use ldpstream::highdim::Strategy;
use ldpstream::mechanism::{randomizer, sw_params, MechanismKind};
use ldpstream::metrics::{cosine_distance, mse, wasserstein};
use ldpstream::sampling::{select_ns_with, NsBudgetMode};
use ldpstream::smoothing::SmoothingConfig;
use ldpstream::Error;

#[derive(Parser)]
#[command(name = "ldpstream", version, about = "LDP stream publication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid described by a key = value config file.
    Run(RunArgs),
    /// Perturb one stream and print the collector's estimate, one slot per line.
    Perturb(PerturbArgs),
    /// Compare an estimated series against the true series.
    Analyze(AnalyzeArgs),
    /// Print the SW constants, moments and CAPP clip interval for a budget.
    Params(ParamsArgs),
    /// Choose the number of PP-S segments for an interval.
    SelectNs(SelectNsArgs),
    /// Sweep the CAPP clip offset δ.
    SweepDelta(SweepArgs),
}

#[derive(Args)]
struct Shared {
    /// Moving-average window (odd; 1 disables smoothing).
    #[arg(long)]
    smooth_window: Option<usize>,
    /// Number of dimensions for synthetic multisin input.
    #[arg(long)]
    dims: Option<usize>,
    /// Multi-dimensional strategy.
    #[arg(long, value_parser = ["bs", "ss"])]
    strategy: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Results CSV path; overrides the config's `output`, default stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct PerturbArgs {
    /// sw, ipp, app, capp, ba-sw, optionally suffixed -s, -bs or -ss.
    #[arg(long, default_value = "capp")]
    algo: String,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 10)]
    w: usize,
    /// CSV input; each selected column is one dimension.
    #[arg(long, conflicts_with = "synth")]
    input: Option<PathBuf>,
    /// Comma-separated column names or indices of the input CSV.
    #[arg(long)]
    columns: Option<String>,
    /// Synthetic input, e.g. `sinusoidal(1.0)`, `pulse(5)`, `multisin(5)`.
    #[arg(long)]
    synth: Option<String>,
    #[arg(long, default_value_t = 300)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sw")]
    mechanism: String,
    /// Fixed CAPP clip offset δ.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    /// Fixed PP-S segment count.
    #[arg(long)]
    ns: Option<usize>,
    /// Print values in the input's original units.
    #[arg(long)]
    denormalize: bool,
    /// Print the true value next to each estimate.
    #[arg(long)]
    with_truth: bool,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Estimated series, one value per line or first CSV column.
    estimate: PathBuf,
    truth: PathBuf,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long)]
    eps: f64,
    /// Window size; adds the per-slot constants at ε / w.
    #[arg(long)]
    w: Option<usize>,
}

#[derive(Args)]
struct SelectNsArgs {
    /// Interval length j - i + 1.
    #[arg(long)]
    len: usize,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    w: usize,
    #[arg(long, default_value = "per-sample")]
    mode: String,
    /// Print the objective for every candidate.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Optional config file supplying dataset, trials and seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "synth:constant(0.1)")]
    dataset: String,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 4.0])]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    w: usize,
    #[arg(long, default_value_t = 30)]
    q: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true,
          default_values_t = [-0.25, -0.15, -0.05, 0.0, 0.05, 0.15, 0.25])]
    deltas: Vec<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value = "series_mse")]
    metric: String,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    shared: Shared,
}

fn apply_shared(cfg: &mut ExperimentConfig, shared: &Shared) -> ldpstream::Result<()> {
    if let Some(k) = shared.smooth_window {
        cfg.smoothing = SmoothingConfig::from_window(k)?;
    }
    if let Some(s) = &shared.strategy {
        cfg.strategy = Some(s.parse()?);
    }
    if let Some(d) = shared.dims {
        if let ldpstream::harness::DataSource::Synthetic { kind, .. } = &mut cfg.source {
            *kind = SynthKind::MultiSin(d);
        }
    }
    Ok(())
}

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {
        writeln!(io::stdout().lock(), $($arg)*)?
    };
}

fn output(path: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_run(args: RunArgs) -> ldpstream::Result<()> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    apply_shared(&mut cfg, &args.shared)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    let rows = run_experiment(&cfg)?;
    let dest = args.output.or(cfg.output.clone());
    write_results(&rows, output(dest.as_ref())?)
}

fn perturb_input(args: &PerturbArgs) -> ldpstream::Result<StreamCollection> {
    if let Some(path) = &args.input {
        let mut opts = CsvOptions::default();
        if let Some(c) = &args.columns {
            opts.columns = Some(c.split(',').map(str::parse).collect::<ldpstream::Result<_>>()?);
        }
        let c = load_csv(path, &opts)?;
        let dims = c.streams.len();
        return StreamCollection::new(c.streams, dims);
    }
    let kind: SynthKind = match (&args.synth, args.shared.dims) {
        (_, Some(d)) if d > 1 => SynthKind::MultiSin(d),
        (Some(s), _) => s.parse()?,
        (None, _) => SynthKind::Sinusoidal { freq: 1.0, phase: 0.0 },
    };
    synth(kind, args.length, args.seed)
}

fn cmd_perturb(args: PerturbArgs) -> ldpstream::Result<()> {
    let data = perturb_input(&args)?;
    let mut algo: AlgoSpec = args.algo.parse()?;
    if data.dims > 1 && algo.variant == Variant::Plain {
        let strategy: Strategy = args.shared.strategy.as_deref().unwrap_or("bs").parse()?;
        algo.variant = Variant::Split(strategy);
    }
    let mut s = PerturbSettings::new(args.eps, args.w);
    s.mechanism = args.mechanism.parse::<MechanismKind>()?;
    s.delta = args.delta;
    if let Some(n) = args.ns {
        s.ns = NsChoice::Fixed(n);
    }
    if let Some(k) = args.shared.smooth_window {
        s.smoothing = SmoothingConfig::from_window(k)?;
    }
    let truth: Vec<&[f64]> = data.streams.iter().map(|st| st.values.as_slice()).collect();
    let mut rz = randomizer(s.mechanism, ChaCha8Rng::seed_from_u64(args.seed));
    let est = estimate(algo, &truth, &s, &mut *rz)?;
    let mut out = output(None)?;
    let len = truth[0].len();
    for t in 0..len {
        let mut cells = Vec::new();
        for (k, series) in est.iter().enumerate() {
            let st = &data.streams[k];
            let conv = |v: f64| if args.denormalize { st.denormalize(v) } else { v };
            if args.with_truth {
                cells.push(format!("{}", conv(truth[k][t])));
            }
            cells.push(format!("{}", conv(series[t])));
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn read_series(path: &PathBuf) -> ldpstream::Result<Vec<f64>> {
    let opts = CsvOptions {
        columns: Some(vec![ldpstream::datasets::Column::Index(0)]),
        ..CsvOptions::default()
    };
    let text = std::fs::read_to_string(path)?;
    let values: Vec<f64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').next().unwrap_or("").trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .or_else(|_| load_csv(path, &opts).map(|c| c.streams[0].raw_values()))?;
    Ok(values)
}

fn cmd_analyze(args: AnalyzeArgs) -> ldpstream::Result<()> {
    let est = read_series(&args.estimate)?;
    let truth = read_series(&args.truth)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    if est.is_empty() || est.len() != truth.len() {
        return Err(Error::Domain(format!(
            "series lengths differ: {} vs {}",
            est.len(),
            truth.len()
        )));
    }
    outln!("metric,value");
    outln!("mse,{}", (mean(&est) - mean(&truth)).powi(2));
    outln!("series_mse,{}", mse(&est, &truth)?);
    outln!("cosine,{}", cosine_distance(&est, &truth)?);
    outln!("wasserstein,{}", wasserstein(&est, &truth)?);
    Ok(())
}

fn print_params(label: &str, eps: f64) -> ldpstream::Result<()> {
    let p = sw_params(eps)?;
    let m = p.moments();
    outln!("{label}.eps,{eps}");
    outln!("{label}.b,{}", p.b);
    outln!("{label}.p,{}", p.p);
    outln!("{label}.q,{}", p.q);
    outln!("{label}.mu,{}", m.mu);
    outln!("{label}.sigma2,{}", m.sigma2);
    outln!("{label}.mu4,{}", m.mu4);
    outln!("{label}.var_dx,{}", m.var_dx);
    outln!("{label}.e_s,{}", sensitivity_error(&p));
    outln!("{label}.e_d,{}", discarding_error(&p));
    let c = clip_bounds(eps)?;
    outln!("{label}.t,{}", c.t_value);
    outln!("{label}.clip_lower,{}", c.lower);
    outln!("{label}.clip_upper,{}", c.upper);
    outln!("{label}.t_clamped,{}", c.was_clamped());
    Ok(())
}

fn cmd_params(args: ParamsArgs) -> ldpstream::Result<()> {
    outln!("key,value");
    print_params("window", args.eps)?;
    if let Some(w) = args.w {
        if w == 0 {
            return Err(Error::Domain("w must be at least 1".into()));
        }
        print_params("slot", args.eps / w as f64)?;
    }
    Ok(())
}

fn cmd_select_ns(args: SelectNsArgs) -> ldpstream::Result<()> {
    let mode: NsBudgetMode = args.mode.parse()?;
    let sel = select_ns_with(args.len, args.eps, args.w, mode)?;
    if args.table {
        outln!("n_s,objective");
        for (n, v) in &sel.candidates {
            outln!("{n},{v}");
        }
    } else {
        outln!("{}", sel.best);
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> ldpstream::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::parse(&format!("dataset = {}\n", args.dataset))?,
    };
    apply_shared(&mut cfg, &args.shared)?;
    cfg.epsilons = args.eps.clone();
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    let metric: Metric = args.metric.parse()?;
    let rows = delta_sweep(&cfg, args.w, args.q, &args.deltas, metric)?;
    write_delta_rows(&cfg.source.label(), args.w, args.q, metric, &rows, output(args.output.as_ref())?)?;
    for eps in &cfg.epsilons {
        let cell: Vec<_> = rows.iter().filter(|r| r.eps == *eps).cloned().collect();
        let best = cell.iter().min_by(|a, b| a.mean.total_cmp(&b.mean));
        if let Some(best) = best {
            eprintln!(
                "eps={eps}: argmin delta {:+.3}, recommended {:+.3}, u-shaped {}",
                best.delta,
                best.recommended,
                is_u_shaped(&cell)
            );
        }
    }
    Ok(())
}

/// Exit codes: 1 generic, 2 configuration or input, 3 dataset missing,
/// 4 w-event budget violation.
fn report(err: &Error) -> u8 {
    match err {
        Error::BudgetViolation { slot, sum, limit } => {
            eprintln!("error_kind,slot,window_sum,limit");
            eprintln!("budget_violation,{slot},{sum},{limit}");
            4
        }
        Error::DatasetMissing { .. } => {
            eprintln!("error: {err}");
            3
        }
        Error::Config(_) | Error::Parse { .. } | Error::Domain(_) | Error::Csv(_) => {
            eprintln!("error: {err}");
            2
        }
        Error::Io(e) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        _ => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Params(a) => cmd_params(a),
        Command::SelectNs(a) => cmd_select_ns(a),
        Command::SweepDelta(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match report(&e) {
            0 => ExitCode::SUCCESS,
            code => ExitCode::from(code),
        },
    }
}
