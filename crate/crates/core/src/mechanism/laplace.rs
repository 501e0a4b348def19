//! Laplace plug-in mechanism on `[-1, 1]` inputs.

use rand::Rng;

use crate::error::{domain, Result};

/// Noise scale for inputs of width 2: `2 / ε`.
pub fn laplace_scale(epsilon: f64) -> f64 {
    2.0 / epsilon
}

/// Draws `Lap(0, scale)` by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * tail.ln();
        }
    }
}

/// Returns `x + Lap(2/ε)` for `x ∈ [-1, 1]`. The output is unbounded.
pub fn laplace_perturb<R: Rng + ?Sized>(x: f64, epsilon: f64, rng: &mut R) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return domain(format!("Laplace input must lie in [-1, 1], got {x}"));
    }
    if !(epsilon > 0.0) || epsilon.is_nan() {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    if epsilon.is_infinite() {
        return Ok(x);
    }
    Ok(x + sample_laplace(laplace_scale(epsilon), rng))
}
