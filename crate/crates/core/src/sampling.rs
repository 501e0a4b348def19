//! Perturbation-parameterization sampling (PP-S).
//!
//! A query interval is cut into `n_s` segments; each segment's mean is
//! perturbed once by an inner stream perturber with an enlarged per-sample
//! budget and replicated across the segment. With segment length `L`, any
//! window of `w` slots holds at most `n_w = ⌈w / L⌉` uploads, so each upload
//! may spend `ε / n_w`.

use std::ops::RangeInclusive;
use std::str::FromStr;

use crate::error::{domain, Error, Result};
use crate::mechanism::{sw_params, MechanismParams, Randomizer};
use crate::perturber::{Algorithm, ClipBudget, PerturberState, SlotReport};

/// `Var(s²)` for the unbiased sample variance of `n_s` i.i.d. `SW(1)` draws:
/// `(μ₄ - σ⁴ (n_s - 3) / (n_s - 1)) / n_s`.
pub fn var_of_sample_variance(n_s: usize, params: &MechanismParams) -> Result<f64> {
    if n_s < 2 {
        return domain(format!("sample-variance variance needs n_s >= 2, got {n_s}"));
    }
    let m = params.moments();
    let n = n_s as f64;
    Ok((m.mu4 - m.sigma2 * m.sigma2 * (n - 3.0) / (n - 1.0)) / n)
}

/// Which budget `Var(n_s, ε)` is evaluated at while selecting `n_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NsBudgetMode {
    /// The budget each sample would receive under that `n_s`.
    #[default]
    PerSample,
    /// The total window budget, independent of `n_s`.
    Total,
}

impl FromStr for NsBudgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per-sample" | "sample" => Ok(NsBudgetMode::PerSample),
            "total" | "fixed" => Ok(NsBudgetMode::Total),
            other => Err(Error::Config(format!("unknown n_s budget mode `{other}`"))),
        }
    }
}

/// `(n_w, ε / n_w)` for an interval of `interval_length` slots cut into `n_s`
/// segments under window `w`.
pub fn sample_budget(interval_length: usize, n_s: usize, w: usize, total_epsilon: f64) -> (usize, f64) {
    let seg = (interval_length / n_s).max(1);
    let n_w = w.div_ceil(seg).max(1);
    (n_w, total_epsilon / n_w as f64)
}

/// Objective value `n_s · Var(n_s, ε)` for each candidate and the argmin.
#[derive(Debug, Clone, PartialEq)]
pub struct NsSelection {
    pub candidates: Vec<(usize, f64)>,
    pub best: usize,
}

pub fn ns_objective(
    interval_length: usize,
    n_s: usize,
    total_epsilon: f64,
    w: usize,
    mode: NsBudgetMode,
) -> Result<f64> {
    let eps = match mode {
        NsBudgetMode::PerSample => sample_budget(interval_length, n_s, w, total_epsilon).1,
        NsBudgetMode::Total => total_epsilon,
    };
    Ok(n_s as f64 * var_of_sample_variance(n_s, &sw_params(eps)?)?)
}

pub fn select_ns_with(
    interval_length: usize,
    total_epsilon: f64,
    w: usize,
    mode: NsBudgetMode,
) -> Result<NsSelection> {
    if interval_length < 2 {
        return domain(format!("interval must span at least 2 slots, got {interval_length}"));
    }
    if w == 0 {
        return domain("window size must be at least 1");
    }
    let candidates = (2..=interval_length)
        .map(|n| ns_objective(interval_length, n, total_epsilon, w, mode).map(|v| (n, v)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.1 < best.1 {
            best = *c;
        }
    }
    Ok(NsSelection {
        candidates,
        best: best.0,
    })
}

/// `argmin_{n_s ∈ [2, len]} n_s · Var(n_s, ε_sample(n_s))`, ties to the smaller `n_s`.
pub fn select_ns(interval_length: usize, total_epsilon: f64, w: usize) -> Result<usize> {
    Ok(select_ns_with(interval_length, total_epsilon, w, NsBudgetMode::PerSample)?.best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    /// First slot of the interval.
    pub start: usize,
    /// Last slot of the interval (inclusive).
    pub end: usize,
    pub n_s: usize,
    pub segment_length: usize,
    pub samples_per_window: usize,
    pub per_sample_budget: f64,
    pub w: usize,
    pub total_epsilon: f64,
}

pub fn build_plan(i: usize, j: usize, n_s: usize, w: usize, total_epsilon: f64) -> Result<SamplingPlan> {
    if j < i {
        return domain(format!("interval [{i}, {j}] is empty"));
    }
    let len = j - i + 1;
    if n_s == 0 || n_s > len {
        return domain(format!("n_s must lie in [1, {len}], got {n_s}"));
    }
    if w == 0 {
        return domain("window size must be at least 1");
    }
    if !(total_epsilon > 0.0) || !total_epsilon.is_finite() {
        return domain(format!("epsilon must be positive, got {total_epsilon}"));
    }
    let (n_w, per_sample) = sample_budget(len, n_s, w, total_epsilon);
    Ok(SamplingPlan {
        start: i,
        end: j,
        n_s,
        segment_length: len / n_s,
        samples_per_window: n_w,
        per_sample_budget: per_sample,
        w,
        total_epsilon,
    })
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Segment slot ranges; the last segment absorbs the remainder.
    pub fn segments(&self) -> Vec<RangeInclusive<usize>> {
        let l = self.segment_length;
        (0..self.n_s)
            .map(|r| {
                let lo = self.start + r * l;
                let hi = if r + 1 == self.n_s { self.end } else { lo + l - 1 };
                lo..=hi
            })
            .collect()
    }

    /// Slot at which each segment's sample is uploaded (its last slot).
    pub fn upload_slots(&self) -> Vec<usize> {
        self.segments().into_iter().map(|s| *s.end()).collect()
    }
}

/// Output of a PP-S run over a plan's interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledRun {
    /// One value per slot of the interval.
    pub series: Vec<f64>,
    /// One report per slot; only upload slots spend budget.
    pub reports: Vec<SlotReport>,
    /// The inner perturber's per-segment reports.
    pub samples: Vec<SlotReport>,
}

/// Perturbs the segment means of `stream[plan.start..=plan.end]` with `inner`
/// and replicates each report across its segment. `stream` is indexed by
/// absolute slot.
pub fn pp_s_run<Z: Randomizer + ?Sized>(
    stream: &[f64],
    plan: &SamplingPlan,
    inner: Algorithm,
    clip: ClipBudget,
    rz: &mut Z,
) -> Result<SampledRun> {
    if plan.end >= stream.len() {
        return domain(format!(
            "plan covers slots [{}, {}] but the stream has {} slots",
            plan.start,
            plan.end,
            stream.len()
        ));
    }
    if inner == Algorithm::BaSw {
        return domain("PP-S inner perturber must be one of sw, ipp, app, capp");
    }
    let mut state = PerturberState::with_clip_budget(inner, plan.total_epsilon, plan.samples_per_window, clip)?;
    let mut series = Vec::with_capacity(plan.len());
    let mut reports = Vec::with_capacity(plan.len());
    let mut samples = Vec::with_capacity(plan.n_s);
    for seg in plan.segments() {
        let values = &stream[seg.clone()];
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let rep = state.step(mean.clamp(0.0, 1.0), rz)?;
        for slot in seg.clone() {
            series.push(rep.perturbed);
            reports.push(SlotReport {
                slot,
                perturbed: rep.perturbed,
                budget_spent: if slot == *seg.end() { rep.budget_spent } else { 0.0 },
            });
        }
        samples.push(rep);
    }
    Ok(SampledRun {
        series,
        reports,
        samples,
    })
}
