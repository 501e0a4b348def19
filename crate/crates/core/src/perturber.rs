//! Per-user stream perturbers.
//!
//! Each state machine consumes one true value `x_t ∈ [0, 1]` per slot and
//! emits one report. The perturbation-parameterization family feeds the
//! known deviation `d_t = x_t - x'_t` back into later inputs:
//!
//! * IPP adds the previous slot's deviation and clips to `[0, 1]`.
//! * APP adds the accumulated deviation `D = Σ d_t` and clips to `[0, 1]`.
//! * CAPP adds `D`, clips to `[l, u]`, rescales to `[0, 1]` for the
//!   randomizer and maps the report back to `[l, u]`.
//!
//! Because `D` is updated with the true value rather than the clipped input,
//! `Σ x'_t + D_t = Σ x_t` holds after every step for all algorithms.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::clip::{clip_bounds, ClipBounds};
use crate::error::{domain, Error, Result};
use crate::mechanism::{sw_params, Randomizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    SwDirect,
    Ipp,
    App,
    Capp,
    /// Budget absorption over SW (simplified variant).
    BaSw,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::SwDirect,
        Algorithm::Ipp,
        Algorithm::App,
        Algorithm::Capp,
        Algorithm::BaSw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SwDirect => "sw",
            Algorithm::Ipp => "ipp",
            Algorithm::App => "app",
            Algorithm::Capp => "capp",
            Algorithm::BaSw => "ba-sw",
        }
    }

    /// Whether the collector smooths this algorithm's output.
    pub fn is_parameterized(self) -> bool {
        matches!(self, Algorithm::Ipp | Algorithm::App | Algorithm::Capp)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sw" | "sw-direct" | "swdirect" => Ok(Algorithm::SwDirect),
            "ipp" => Ok(Algorithm::Ipp),
            "app" => Ok(Algorithm::App),
            "capp" => Ok(Algorithm::Capp),
            "ba-sw" | "basw" | "ba" => Ok(Algorithm::BaSw),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Which budget parameterizes the CAPP clip interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipBudget {
    /// The total window budget ε.
    #[default]
    Window,
    /// The per-report budget ε/w.
    PerSlot,
}

impl FromStr for ClipBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "window" | "total" => Ok(ClipBudget::Window),
            "slot" | "per-slot" => Ok(ClipBudget::PerSlot),
            other => Err(Error::Config(format!("unknown clip budget `{other}`"))),
        }
    }
}

/// One published report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotReport {
    pub slot: usize,
    pub perturbed: f64,
    pub budget_spent: f64,
}

/// Budget-absorption bookkeeping for BA-SW.
/// BA-SW skips rather than upload with less than this share of the window budget.
const MIN_UPLOAD_FRACTION: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct BaState {
    pub last_published: Option<f64>,
    /// True value at the last upload; skips are decided against it.
    pub reference: f64,
    pub absorbed: f64,
    pub threshold: f64,
    recent: VecDeque<f64>,
}

#[derive(Debug, Clone)]
pub struct PerturberState {
    pub algorithm: Algorithm,
    pub accumulated_deviation: f64,
    pub last_deviation: f64,
    pub bounds: ClipBounds,
    pub per_slot_budget: f64,
    pub slot_index: usize,
    window: usize,
    epsilon_total: f64,
    true_sum: f64,
    published_sum: f64,
    pub ba: Option<BaState>,
}

impl PerturberState {
    /// State for a stream with window budget `epsilon_total` over `w` slots.
    /// Each report spends `epsilon_total / w`; CAPP derives its clip interval
    /// from the window budget.
    pub fn new(algorithm: Algorithm, epsilon_total: f64, w: usize) -> Result<Self> {
        Self::with_clip_budget(algorithm, epsilon_total, w, ClipBudget::Window)
    }

    pub fn with_clip_budget(
        algorithm: Algorithm,
        epsilon_total: f64,
        w: usize,
        clip: ClipBudget,
    ) -> Result<Self> {
        if w == 0 {
            return domain("window size must be at least 1");
        }
        if !(epsilon_total > 0.0) || epsilon_total.is_nan() {
            return domain(format!("epsilon must be positive, got {epsilon_total}"));
        }
        let per_slot = epsilon_total / w as f64;
        let bounds = if algorithm == Algorithm::Capp {
            match clip {
                ClipBudget::Window => clip_bounds(epsilon_total)?,
                ClipBudget::PerSlot => clip_bounds(per_slot)?,
            }
        } else {
            ClipBounds::UNIT
        };
        let ba = if algorithm == Algorithm::BaSw {
            let threshold = if per_slot.is_finite() {
                sw_params(per_slot)?.b
            } else {
                0.0
            };
            Some(BaState {
                last_published: None,
                reference: 0.0,
                absorbed: 0.0,
                threshold,
                recent: VecDeque::with_capacity(w),
            })
        } else {
            None
        };
        Ok(Self {
            algorithm,
            accumulated_deviation: 0.0,
            last_deviation: 0.0,
            bounds,
            per_slot_budget: per_slot,
            slot_index: 0,
            window: w,
            epsilon_total,
            true_sum: 0.0,
            published_sum: 0.0,
            ba,
        })
    }

    /// Overrides the clip interval (CAPP only uses it).
    pub fn with_bounds(mut self, bounds: ClipBounds) -> Result<Self> {
        if !(bounds.lower < bounds.upper) {
            return domain(format!(
                "clip interval must satisfy l < u, got [{}, {}]",
                bounds.lower, bounds.upper
            ));
        }
        self.bounds = bounds;
        Ok(self)
    }

    /// Overrides the BA-SW skip threshold.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        if let Some(ba) = self.ba.as_mut() {
            ba.threshold = threshold;
        }
        self
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn epsilon_total(&self) -> f64 {
        self.epsilon_total
    }

    /// `Σ x'_t + D_t - Σ x_t`; zero up to rounding.
    pub fn bookkeeping_residual(&self) -> f64 {
        self.published_sum + self.accumulated_deviation - self.true_sum
    }

    /// Advances one slot with the algorithm this state was built for.
    pub fn step<Z: Randomizer + ?Sized>(&mut self, x: f64, rz: &mut Z) -> Result<SlotReport> {
        match self.algorithm {
            Algorithm::SwDirect => self.step_sw_direct(x, rz),
            Algorithm::Ipp => self.step_ipp(x, rz),
            Algorithm::App => self.step_app(x, rz),
            Algorithm::Capp => self.step_capp(x, rz),
            Algorithm::BaSw => self.step_ba_sw(x, rz),
        }
    }

    /// Perturbs every value of `stream` in order.
    pub fn run<Z: Randomizer + ?Sized>(&mut self, stream: &[f64], rz: &mut Z) -> Result<Vec<SlotReport>> {
        stream.iter().map(|x| self.step(*x, rz)).collect()
    }

    pub fn step_sw_direct<Z: Randomizer + ?Sized>(&mut self, x: f64, rz: &mut Z) -> Result<SlotReport> {
        check_unit(x)?;
        let out = rz.perturb(x, self.per_slot_budget)?;
        Ok(self.finish(x, out, self.per_slot_budget))
    }

    pub fn step_ipp<Z: Randomizer + ?Sized>(&mut self, x: f64, rz: &mut Z) -> Result<SlotReport> {
        check_unit(x)?;
        let input = (x + self.last_deviation).clamp(0.0, 1.0);
        let out = rz.perturb(input, self.per_slot_budget)?;
        Ok(self.finish(x, out, self.per_slot_budget))
    }

    pub fn step_app<Z: Randomizer + ?Sized>(&mut self, x: f64, rz: &mut Z) -> Result<SlotReport> {
        check_unit(x)?;
        let input = (x + self.accumulated_deviation).clamp(0.0, 1.0);
        let out = rz.perturb(input, self.per_slot_budget)?;
        Ok(self.finish(x, out, self.per_slot_budget))
    }

    pub fn step_capp<Z: Randomizer + ?Sized>(&mut self, x: f64, rz: &mut Z) -> Result<SlotReport> {
        check_unit(x)?;
        let bounds = self.bounds;
        if !(bounds.lower < bounds.upper) {
            return domain("clip interval must satisfy l < u");
        }
        let clipped = bounds.clip(x + self.accumulated_deviation);
        let z = rz.perturb(bounds.normalize(clipped).clamp(0.0, 1.0), self.per_slot_budget)?;
        Ok(self.finish(x, bounds.denormalize(z), self.per_slot_budget))
    }

    /// Republishes the last report for free when `x` has moved at most the
    /// threshold since the last upload, banking the slot's budget; otherwise
    /// uploads with the banked budget, capped so the window stays within ε.
    pub fn step_ba_sw<Z: Randomizer + ?Sized>(&mut self, x: f64, rz: &mut Z) -> Result<SlotReport> {
        check_unit(x)?;
        let per_slot = self.per_slot_budget;
        let (w, eps) = (self.window, self.epsilon_total);
        let ba = self
            .ba
            .as_mut()
            .ok_or_else(|| Error::Usage("BA-SW step on a state without absorption".into()))?;

        let recent: f64 = ba.recent.iter().sum();
        let available = (eps - recent).max(0.0);
        let skip = match ba.last_published {
            Some(_) if (x - ba.reference).abs() <= ba.threshold => true,
            Some(_) => available <= eps * MIN_UPLOAD_FRACTION,
            None => false,
        };

        let (out, spent) = if skip {
            ba.absorbed = (ba.absorbed + per_slot).min(eps - per_slot).max(0.0);
            (ba.last_published.unwrap_or(0.5), 0.0)
        } else {
            let budget = (per_slot + ba.absorbed).min(available);
            let out = rz.perturb(x, budget)?;
            ba.absorbed = 0.0;
            ba.reference = x;
            ba.last_published = Some(out);
            (out, budget)
        };

        if w > 1 {
            if ba.recent.len() == w - 1 {
                ba.recent.pop_front();
            }
            ba.recent.push_back(spent);
        }
        Ok(self.finish(x, out, spent))
    }

    fn finish(&mut self, x: f64, out: f64, spent: f64) -> SlotReport {
        let d = x - out;
        self.last_deviation = d;
        self.accumulated_deviation += d;
        self.true_sum += x;
        self.published_sum += out;
        let report = SlotReport {
            slot: self.slot_index,
            perturbed: out,
            budget_spent: spent,
        };
        self.slot_index += 1;
        report
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        domain(format!("stream value must lie in [0, 1], got {x}"))
    }
}
