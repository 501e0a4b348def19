//! Budget-Split and Sample-Split strategies for `d`-dimensional streams.

use std::str::FromStr;

use crate::error::{domain, Error, Result};
use crate::mechanism::Randomizer;
use crate::perturber::{Algorithm, PerturberState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Every dimension reports every slot at `ε / (d·w)`.
    #[default]
    BudgetSplit,
    /// One dimension reports per slot, round-robin, at `ε / w`.
    SampleSplit,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bs" | "budget-split" => Ok(Strategy::BudgetSplit),
            "ss" | "sample-split" => Ok(Strategy::SampleSplit),
            other => Err(Error::Config(format!("unknown strategy `{other}` (expected bs or ss)"))),
        }
    }
}

impl Strategy {
    pub fn suffix(self) -> &'static str {
        match self {
            Strategy::BudgetSplit => "bs",
            Strategy::SampleSplit => "ss",
        }
    }
}

/// How Sample-Split reconstructs slots a dimension did not report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapFill {
    /// Repeat the last published value; leading gaps take the first one.
    #[default]
    CarryForward,
    /// Interpolate linearly between neighbouring reports.
    Linear,
}

impl FromStr for GapFill {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "carry" | "carry-forward" => Ok(GapFill::CarryForward),
            "linear" => Ok(GapFill::Linear),
            other => Err(Error::Config(format!("unknown gap fill `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRun {
    /// One reconstructed series per dimension.
    pub series: Vec<Vec<f64>>,
    /// `spends[k][t]`: budget dimension `k` spent at slot `t`.
    pub spends: Vec<Vec<f64>>,
}

impl MultiRun {
    /// Budget spent at each slot summed over dimensions.
    pub fn joint_spends(&self) -> Vec<f64> {
        let len = self.spends.first().map_or(0, Vec::len);
        (0..len).map(|t| self.spends.iter().map(|s| s[t]).sum()).collect()
    }
}

fn check_lengths(multistream: &[Vec<f64>]) -> Result<usize> {
    let len = match multistream.first() {
        Some(s) => s.len(),
        None => return domain("need at least one dimension"),
    };
    if let Some((k, s)) = multistream.iter().enumerate().find(|(_, s)| s.len() != len) {
        return domain(format!("dimension {k} has length {} but dimension 0 has {len}", s.len()));
    }
    Ok(len)
}

pub fn run_budget_split<Z: Randomizer + ?Sized>(
    multistream: &[Vec<f64>],
    w: usize,
    epsilon: f64,
    inner: Algorithm,
    rz: &mut Z,
) -> Result<MultiRun> {
    let len = check_lengths(multistream)?;
    let d = multistream.len();
    let mut states = (0..d)
        .map(|_| PerturberState::new(inner, epsilon / d as f64, w))
        .collect::<Result<Vec<_>>>()?;
    let mut series = vec![Vec::with_capacity(len); d];
    let mut spends = vec![Vec::with_capacity(len); d];
    for t in 0..len {
        for k in 0..d {
            let rep = states[k].step(multistream[k][t], rz)?;
            series[k].push(rep.perturbed);
            spends[k].push(rep.budget_spent);
        }
    }
    Ok(MultiRun { series, spends })
}

pub fn run_sample_split<Z: Randomizer + ?Sized>(
    multistream: &[Vec<f64>],
    w: usize,
    epsilon: f64,
    inner: Algorithm,
    fill: GapFill,
    rz: &mut Z,
) -> Result<MultiRun> {
    let len = check_lengths(multistream)?;
    let d = multistream.len();
    // Each dimension reports every d-th slot at ε/w. BA-SW may bank budget
    // into a single report, so its per-dimension window is capped at ε/d over
    // the ⌈w/d⌉ reports a w-slot window can contain.
    let make = || match inner {
        Algorithm::BaSw => PerturberState::new(inner, epsilon / d as f64, w.div_ceil(d)),
        _ => PerturberState::new(inner, epsilon, w),
    };
    let mut states = (0..d).map(|_| make()).collect::<Result<Vec<_>>>()?;
    let mut reports: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
    let mut spends = vec![vec![0.0; len]; d];
    for t in 0..len {
        let k = t % d;
        let rep = states[k].step(multistream[k][t], rz)?;
        reports[k].push((t, rep.perturbed));
        spends[k][t] = rep.budget_spent;
    }
    let series = reports.iter().map(|r| fill_gaps(r, len, fill)).collect();
    Ok(MultiRun { series, spends })
}

/// Expands sparse `(slot, value)` reports, sorted by slot, to `len` slots.
pub fn fill_gaps(reports: &[(usize, f64)], len: usize, fill: GapFill) -> Vec<f64> {
    let Some(&(_, first)) = reports.first() else {
        return vec![0.5; len];
    };
    let mut out = vec![first; len];
    let mut next = 0;
    let mut prev: Option<(usize, f64)> = None;
    for (t, slot) in out.iter_mut().enumerate() {
        while next < reports.len() && reports[next].0 <= t {
            prev = Some(reports[next]);
            next += 1;
        }
        *slot = match (prev, fill) {
            (None, _) => first,
            (Some((s, v)), GapFill::Linear) if s < t => match reports.get(next) {
                Some(&(s2, v2)) => v + (v2 - v) * (t - s) as f64 / (s2 - s) as f64,
                None => v,
            },
            (Some((_, v)), _) => v,
        };
    }
    out
}
