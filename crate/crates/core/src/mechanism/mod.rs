//! Numeric LDP mechanisms and the [`Randomizer`] interface the stream
//! perturbers draw through.
//!
//! Stream perturbers always work in unit coordinates: mechanism inputs are in
//! `[0, 1]`, and a randomizer returns its report mapped back to that scale.
//! Mechanisms with other native domains (Laplace on `[-1, 1]`) convert at the
//! boundary. PM and SR would plug in the same way.

mod laplace;
mod sw;

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{domain, Error, Result};

pub use laplace::{laplace_perturb, laplace_scale, sample_laplace};
pub use sw::{sw_moments, sw_params, sw_perturb, MechanismParams, PerturbedValue, SwMoments};

/// Source of perturbed reports for a unit-scale input at a given budget.
pub trait Randomizer {
    fn perturb(&mut self, input: f64, epsilon: f64) -> Result<f64>;

    /// Support of the report in unit coordinates, if bounded.
    fn support(&self, epsilon: f64) -> Option<(f64, f64)>;
}

impl<T: Randomizer + ?Sized> Randomizer for &mut T {
    fn perturb(&mut self, input: f64, epsilon: f64) -> Result<f64> {
        (**self).perturb(input, epsilon)
    }

    fn support(&self, epsilon: f64) -> Option<(f64, f64)> {
        (**self).support(epsilon)
    }
}

/// Which built-in mechanism backs a randomizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MechanismKind {
    SquareWave,
    Laplace,
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sw" | "square-wave" | "squarewave" => Ok(Self::SquareWave),
            "laplace" | "lap" => Ok(Self::Laplace),
            other => Err(Error::Config(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// Square Wave randomizer over an owned RNG.
#[derive(Debug, Clone)]
pub struct SquareWave<R> {
    rng: R,
    cached: Option<MechanismParams>,
}

impl<R: Rng> SquareWave<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, cached: None }
    }

    fn params(&mut self, epsilon: f64) -> Result<MechanismParams> {
        match self.cached {
            Some(p) if p.epsilon == epsilon => Ok(p),
            _ => {
                let p = sw_params(epsilon)?;
                self.cached = Some(p);
                Ok(p)
            }
        }
    }
}

impl<R: Rng> Randomizer for SquareWave<R> {
    fn perturb(&mut self, input: f64, epsilon: f64) -> Result<f64> {
        let params = self.params(epsilon)?;
        Ok(sw_perturb(input, &params, &mut self.rng)?.value)
    }

    fn support(&self, epsilon: f64) -> Option<(f64, f64)> {
        sw_params(epsilon).ok().map(|p| p.support())
    }
}

/// Laplace randomizer: maps `[0, 1]` onto `[-1, 1]`, adds `Lap(2/ε)`, maps back.
#[derive(Debug, Clone)]
pub struct Laplace<R> {
    rng: R,
}

impl<R: Rng> Laplace<R> {
    pub fn new(rng: R) -> Self {
        Self { rng }
    }
}

impl<R: Rng> Randomizer for Laplace<R> {
    fn perturb(&mut self, input: f64, epsilon: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&input) {
            return domain(format!("unit input must lie in [0, 1], got {input}"));
        }
        let y = laplace_perturb(2.0 * input - 1.0, epsilon, &mut self.rng)?;
        Ok((y + 1.0) / 2.0)
    }

    fn support(&self, _epsilon: f64) -> Option<(f64, f64)> {
        None
    }
}

/// Replays a fixed queue of reports, ignoring input and budget. Used to
/// reproduce hand-worked traces deterministically.
#[derive(Debug, Clone, Default)]
pub struct ForcedDraws {
    queue: VecDeque<f64>,
    seen: Vec<(f64, f64)>,
}

impl ForcedDraws {
    pub fn new(draws: impl IntoIterator<Item = f64>) -> Self {
        Self {
            queue: draws.into_iter().collect(),
            seen: Vec::new(),
        }
    }

    /// `(input, epsilon)` pairs received so far.
    pub fn seen(&self) -> &[(f64, f64)] {
        &self.seen
    }
}

impl Randomizer for ForcedDraws {
    fn perturb(&mut self, input: f64, epsilon: f64) -> Result<f64> {
        self.seen.push((input, epsilon));
        self.queue
            .pop_front()
            .ok_or_else(|| Error::Usage("forced draw queue exhausted".into()))
    }

    fn support(&self, _epsilon: f64) -> Option<(f64, f64)> {
        None
    }
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Noiseless;

impl Randomizer for Noiseless {
    fn perturb(&mut self, input: f64, _epsilon: f64) -> Result<f64> {
        Ok(input)
    }

    fn support(&self, _epsilon: f64) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
}

/// A boxed randomizer for `kind` seeded from `rng`.
pub fn randomizer<R: Rng + 'static>(kind: MechanismKind, rng: R) -> Box<dyn Randomizer> {
    match kind {
        MechanismKind::SquareWave => Box::new(SquareWave::new(rng)),
        MechanismKind::Laplace => Box::new(Laplace::new(rng)),
    }
}
