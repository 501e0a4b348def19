//! Acceptance gate. Runs every criterion, prints one PASS/FAIL/SKIP line per
//! criterion and exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ldpstream::datasets::{builtin_spec, SynthKind};
use ldpstream::harness::{
    results_csv, run_experiment, trial_values, AlgoSpec, DataSource, ExperimentConfig, Metric,
};
use ldpstream::highdim::{run_budget_split, run_sample_split, GapFill};
use ldpstream::ledger::BudgetLedger;
use ldpstream::mechanism::{sw_params, MechanismParams, SquareWave};
use ldpstream::perturber::{Algorithm, ClipBudget, PerturberState};
use ldpstream::sampling::{build_plan, pp_s_run, select_ns, var_of_sample_variance};
use ldpstream::smoothing::{sma, SmoothingConfig};

struct Outcome {
    status: Status,
    detail: String,
}

#[derive(PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

const EPS_GRID: [f64; 7] = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 4.0];

fn c1_anchor() -> Outcome {
    let b = sw_params(0.05).unwrap().b;
    check((b - 0.4836).abs() <= 5e-4, format!("b(0.05) = {b:.6}"))
}

fn c2_identities() -> Outcome {
    let mut worst: f64 = 0.0;
    for eps in EPS_GRID {
        let m = sw_params(eps).unwrap();
        worst = worst.max((m.p / m.q - eps.exp()).abs() / eps.exp());
        worst = worst.max((2.0 * m.b * m.p + m.q - 1.0).abs());
    }
    check(worst <= 1e-12, format!("max identity error {worst:.2e}"))
}

/// Gauss-Legendre nodes and weights on [-1, 1].
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, pieces: usize) -> f64 {
    let h = (hi - lo) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let a = lo + k as f64 * h;
            GL5.iter()
                .map(|(x, wt)| wt * f(a + 0.5 * h * (x + 1.0)))
                .sum::<f64>()
                * 0.5
                * h
        })
        .sum()
}

/// Quadrature of `g` against the density of SW(1).
fn sw1_expect(m: &MechanismParams, g: impl Fn(f64) -> f64) -> f64 {
    integrate(|v| m.q * g(v), -m.b, 1.0 - m.b, 64) + integrate(|v| m.p * g(v), 1.0 - m.b, 1.0 + m.b, 64)
}

fn c3_moments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let n = 1_000_000;
    let mut notes = Vec::new();
    let mut ok = true;
    for eps in [0.1, 1.0, 4.0] {
        let m = sw_params(eps).unwrap();
        let mo = m.moments();
        let mu_q = sw1_expect(&m, |v| v);
        let s2_q = sw1_expect(&m, |v| (v - mu_q).powi(2));
        let m4_q = sw1_expect(&m, |v| (v - mu_q).powi(4));
        let quad_err = (mu_q - mo.mu).abs().max((s2_q - mo.sigma2).abs()).max((m4_q - mo.mu4).abs());
        ok &= quad_err <= 1e-8;

        let draws: Vec<f64> = (0..n).map(|_| m.sample_with(1.0, rng.gen(), rng.gen())).collect();
        let nf = n as f64;
        let mean = draws.iter().sum::<f64>() / nf;
        let c2: Vec<f64> = draws.iter().map(|d| (d - mean).powi(2)).collect();
        let var = c2.iter().sum::<f64>() / (nf - 1.0);
        let c4: Vec<f64> = draws.iter().map(|d| (d - mean).powi(4)).collect();
        let m4 = c4.iter().sum::<f64>() / nf;
        let sd = |v: &[f64], mu: f64| (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let z_mean = (mean - mo.mu).abs() / (mo.sigma2 / nf).sqrt();
        let z_var = (var - mo.sigma2).abs() / (sd(&c2, var) / nf.sqrt());
        let z_m4 = (m4 - mo.mu4).abs() / (sd(&c4, m4) / nf.sqrt());
        ok &= z_mean <= 3.0 && z_var <= 3.0 && z_m4 <= 3.0;
        notes.push(format!(
            "eps={eps}: z=({z_mean:.2},{z_var:.2},{z_m4:.2}) quad={quad_err:.1e}"
        ));
    }
    check(ok, notes.join("; "))
}

fn c4_telescoping() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        for alg in [Algorithm::App, Algorithm::Capp] {
            let mut st = PerturberState::new(alg, 1.0, 10).unwrap();
            let reps = st
                .run(&stream, &mut SquareWave::new(ChaCha8Rng::seed_from_u64(seed ^ 0xff)))
                .unwrap();
            let published: f64 = reps.iter().map(|r| r.perturbed).sum();
            let truth: f64 = stream.iter().sum();
            worst = worst.max((published + st.accumulated_deviation - truth).abs());
        }
    }
    check(worst <= 1e-9, format!("max |Σx' + D - Σx| = {worst:.2e} over 100 seeds"))
}

fn ledger_ok(spends: &[f64], w: usize, eps: f64) -> bool {
    let mut l = BudgetLedger::new(w, eps).unwrap();
    spends.iter().for_each(|s| l.push(*s).unwrap());
    l.assert_w_event().is_ok()
}

fn c5_budget() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let plain = [
        Algorithm::SwDirect,
        Algorithm::Ipp,
        Algorithm::App,
        Algorithm::Capp,
        Algorithm::BaSw,
    ];
    for _ in 0..100 {
        let w = rng.gen_range(1..=30);
        let eps = rng.gen_range(0.1..5.0);
        let len = rng.gen_range(20..200);
        let d = rng.gen_range(1..=6);
        let streams: Vec<Vec<f64>> = (0..d).map(|_| (0..len).map(|_| rng.gen()).collect()).collect();
        let mut rz = SquareWave::new(ChaCha8Rng::seed_from_u64(rng.gen()));
        for alg in plain {
            let reps = PerturberState::new(alg, eps, w).unwrap().run(&streams[0], &mut rz).unwrap();
            let spends: Vec<f64> = reps.iter().map(|r| r.budget_spent).collect();
            if !ledger_ok(&spends, w, eps) {
                failures.push(format!("{alg} w={w} eps={eps:.3}"));
            }
        }
        let n_s = rng.gen_range(1..=len);
        let plan = build_plan(0, len - 1, n_s, w, eps).unwrap();
        let inner = plain[rng.gen_range(0..4)];
        let run = pp_s_run(&streams[0], &plan, inner, ClipBudget::Window, &mut rz).unwrap();
        let spends: Vec<f64> = run.reports.iter().map(|r| r.budget_spent).collect();
        if !ledger_ok(&spends, w, eps) {
            failures.push(format!("pp-s n_s={n_s} w={w}"));
        }
        let inner = plain[rng.gen_range(0..5)];
        let bs = run_budget_split(&streams, w, eps, inner, &mut rz).unwrap();
        if !ledger_ok(&bs.joint_spends(), w, eps) {
            failures.push(format!("bs d={d} w={w}"));
        }
        let ss = run_sample_split(&streams, w, eps, inner, GapFill::CarryForward, &mut rz).unwrap();
        if !ledger_ok(&ss.joint_spends(), w, eps) {
            failures.push(format!("ss d={d} w={w}"));
        }
    }
    // Mutant: divides the window budget by w - 1 instead of w.
    let w = 10;
    let mutant = PerturberState::new(Algorithm::App, 1.0, w - 1)
        .unwrap()
        .run(&[0.5; 50], &mut SquareWave::new(ChaCha8Rng::seed_from_u64(1)))
        .unwrap();
    let spends: Vec<f64> = mutant.iter().map(|r| r.budget_spent).collect();
    let mutant_caught = !ledger_ok(&spends, w, 1.0);
    check(
        failures.is_empty() && mutant_caught,
        format!(
            "800 configurations, {} violations; over-spending mutant {}",
            failures.len(),
            if mutant_caught { "rejected" } else { "NOT rejected" }
        ),
    )
}

fn c6_smoothing() -> Outcome {
    let (len, trials, eps_w, c) = (500, 200, 0.1, 0.5);
    let m = sw_params(eps_w).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut raw_sum = vec![0.0; len];
    let mut raw_sq = vec![0.0; len];
    let mut sm_sum = vec![0.0; len];
    let mut sm_sq = vec![0.0; len];
    for _ in 0..trials {
        let raw: Vec<f64> = (0..len).map(|_| m.sample_with(c, rng.gen(), rng.gen())).collect();
        let sm = sma(&raw, SmoothingConfig::from_window(3).unwrap()).unwrap();
        for t in 0..len {
            raw_sum[t] += raw[t];
            raw_sq[t] += raw[t] * raw[t];
            sm_sum[t] += sm[t];
            sm_sq[t] += sm[t] * sm[t];
        }
    }
    let n = trials as f64;
    let var = |s: f64, q: f64| (q - s * s / n) / (n - 1.0);
    let interior = 1..len - 1;
    let all_below = interior
        .clone()
        .all(|t| var(sm_sum[t], sm_sq[t]) < var(raw_sum[t], raw_sq[t]));
    let raw_mean: f64 = interior.clone().map(|t| var(raw_sum[t], raw_sq[t])).sum::<f64>() / (len - 2) as f64;
    let sm_mean: f64 = interior.map(|t| var(sm_sum[t], sm_sq[t])).sum::<f64>() / (len - 2) as f64;
    let ratio = sm_mean / (raw_mean / 3.0);
    check(
        all_below && (ratio - 1.0).abs() <= 0.15,
        format!("smoothed/raw-over-3 = {ratio:.3}; every interior slot below raw: {all_below}"),
    )
}

/// One-sided sign test p-value for `wins` successes among non-tied pairs.
fn sign_test(a: &[f64], b: &[f64]) -> (usize, usize, f64) {
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let n = wins + losses;
    if n == 0 {
        return (0, 0, 1.0);
    }
    let mut coef = 1.0f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += coef;
        }
        coef = coef * (n - k) as f64 / (k + 1) as f64;
    }
    (wins, n, tail / 2f64.powi(n as i32))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `a` beats `b` on average and by a sign test at α = 0.05.
fn ordered(a: &[f64], b: &[f64]) -> (bool, String) {
    let (wins, n, p) = sign_test(a, b);
    let ok = mean(a) <= mean(b) && p < 0.05;
    (ok, format!("{:.4}<={:.4} {wins}/{n} p={p:.3}", mean(a), mean(b)))
}

fn desk_config() -> ExperimentConfig {
    ExperimentConfig {
        source: DataSource::Synthetic {
            kind: SynthKind::Sinusoidal { freq: 1.0, phase: 0.0 },
            length: 300,
            users: 1,
        },
        trials: 100,
        subsequences: 50,
        seed: 2024,
        metrics: vec![Metric::Mse, Metric::Cosine],
        ..ExperimentConfig::default()
    }
}

fn per_trial(cfg: &ExperimentConfig, algo: &str, eps: f64, w: usize, q: usize) -> (Vec<f64>, Vec<f64>) {
    let vals = trial_values(cfg, algo.parse::<AlgoSpec>().unwrap(), eps, w, q).unwrap();
    (vals.iter().map(|v| v[0]).collect(), vals.iter().map(|v| v[1]).collect())
}

fn c7_ordering() -> Outcome {
    let cfg = desk_config();
    let (w, q) = (10, 30);
    let mut ok = true;
    let mut notes = Vec::new();
    for eps in [0.5, 1.0] {
        let (sw_mse, sw_cos) = per_trial(&cfg, "sw", eps, w, q);
        let (_, ipp_cos) = per_trial(&cfg, "ipp", eps, w, q);
        let (app_mse, _) = per_trial(&cfg, "app", eps, w, q);
        let (capp_mse, capp_cos) = per_trial(&cfg, "capp", eps, w, q);
        for (label, a, b) in [
            ("mse capp<=app", &capp_mse, &app_mse),
            ("mse app<=sw", &app_mse, &sw_mse),
            ("cos capp<=ipp", &capp_cos, &ipp_cos),
            ("cos ipp<=sw", &ipp_cos, &sw_cos),
        ] {
            let (good, note) = ordered(a, b);
            ok &= good;
            notes.push(format!("eps={eps} {label} {}{note}", if good { "" } else { "[x] " }));
        }
    }
    check(ok, notes.join("; "))
}

fn c8_sampling() -> Outcome {
    let cfg = desk_config();
    let (eps, w, q) = (1.0, 20, 30);
    let n_s = select_ns(q, eps, w).unwrap();
    let (app, _) = per_trial(&cfg, "app", eps, w, q);
    let (app_s, _) = per_trial(&cfg, "app-s", eps, w, q);
    let (wins, n, p) = sign_test(&app_s, &app);
    let ok = mean(&app_s) < mean(&app);
    let note = if n_s == q {
        "; n_s = q merges no slots, so any gap reflects smoothing applied to APP only"
    } else {
        ""
    };
    check(
        ok,
        format!(
            "selected n_s={n_s}; APP-S {:.5} vs APP {:.5}, {wins}/{n} p={p:.3}{note}",
            mean(&app_s),
            mean(&app)
        ),
    )
}

/// Independent enumeration of `argmin n·Var(n, ε/⌈w/⌊len/n⌋⌉)`.
fn brute_force_ns(len: usize, eps: f64, w: usize) -> usize {
    let mut best = (0, f64::INFINITY);
    for n in 2..=len {
        let seg = len / n;
        let per_window = w.div_ceil(seg);
        let m = sw_params(eps / per_window as f64).unwrap().moments();
        let nf = n as f64;
        let value = m.mu4 - m.sigma2 * m.sigma2 * (nf - 3.0) / (nf - 1.0);
        if value < best.1 {
            best = (n, value);
        }
    }
    best.0
}

fn c9_select_ns() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..50 {
        let len = rng.gen_range(2..80);
        let eps = rng.gen_range(0.05..5.0);
        let w = rng.gen_range(1..60);
        if select_ns(len, eps, w).unwrap() != brute_force_ns(len, eps, w) {
            mismatches += 1;
        }
    }
    let exact = [0.05, 0.5, 1.0, 4.0].iter().all(|e| {
        let p = sw_params(*e).unwrap();
        var_of_sample_variance(3, &p).unwrap() == p.moments().mu4 / 3.0
    });
    check(
        mismatches == 0 && exact,
        format!("{mismatches}/50 mismatches; Var(3) = mu4/3 exactly: {exact}"),
    )
}

fn c10_c6h6() -> Outcome {
    let dir = std::env::var_os("LDPSTREAM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data")));
    let spec = builtin_spec("c6h6", &dir).unwrap();
    if !spec.path.exists() {
        return Outcome {
            status: Status::Skip,
            detail: format!("optional: {} not present (download from {})", spec.path.display(), spec.source_url),
        };
    }
    let targets = [(20, 0.131), (40, 0.125), (60, 0.124)];
    let mut ok = true;
    let mut notes = Vec::new();
    for (w, target) in targets {
        let cfg = ExperimentConfig {
            source: DataSource::Spec(spec.clone()),
            epsilons: vec![1.0],
            metrics: vec![Metric::Mse],
            seed: 10,
            ..ExperimentConfig::default()
        };
        let sw = mean(&per_trial_one(&cfg, "sw", w));
        let app = mean(&per_trial_one(&cfg, "app", w));
        let cell = (sw / target - 1.0).abs() <= 0.2 && app <= sw;
        ok &= cell;
        notes.push(format!("w={w}: sw={sw:.4} (target {target}) app={app:.4}"));
    }
    check(ok, notes.join("; "))
}

fn per_trial_one(cfg: &ExperimentConfig, algo: &str, w: usize) -> Vec<f64> {
    trial_values(cfg, algo.parse().unwrap(), 1.0, w, w)
        .unwrap()
        .iter()
        .map(|v| v[0])
        .collect()
}

fn c11_determinism() -> Outcome {
    let cfg = ExperimentConfig::parse(
        "dataset = synth:sinusoidal\nlength = 120\nalgorithms = sw,ipp,app,capp,ba-sw,app-s\nepsilons = 0.5,1\nw = 10\nq = 20\ntrials = 5\nsubsequences = 5\nseed = 99\nmetrics = mse,cosine,wasserstein\n",
    )
    .unwrap();
    let a = results_csv(&run_experiment(&cfg).unwrap()).unwrap();
    let b = results_csv(&run_experiment(&cfg).unwrap()).unwrap();
    check(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 SW parameter anchor", c1_anchor),
        ("2 exact identities", c2_identities),
        ("3 moment agreement", c3_moments),
        ("4 telescoping invariant", c4_telescoping),
        ("5 budget safety", c5_budget),
        ("6 smoothing variance", c6_smoothing),
        ("7 ordering at desk scale", c7_ordering),
        ("8 sampling benefit", c8_sampling),
        ("9 n_s selection", c9_select_ns),
        ("10 C6H6 reproduction", c10_c6h6),
        ("11 determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let out = run();
        let tag = match out.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!(
            "criterion {name}: {tag} ({:.1}s) {}",
            start.elapsed().as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} of 11 criteria failed", failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
