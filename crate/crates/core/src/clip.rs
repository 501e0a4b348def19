//! Clip interval `[l, u] = [-T, 1 + T]` for CAPP, where `T = e_s - e_d`
//! balances the sensitivity error against the discarding error at the
//! worst-case input `x = 1`.

use crate::error::{domain, Result};
use crate::mechanism::{sw_params, MechanismParams};

/// `|T|` is clamped to this band before forming the interval.
pub const STABLE_DELTA: f64 = 0.25;

/// How a [`ClipBounds`] was derived from the mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipDerivation {
    pub e_s: f64,
    pub e_d: f64,
    /// `e_s - e_d` before clamping.
    pub raw_t: f64,
    pub epsilon_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds {
    pub lower: f64,
    pub upper: f64,
    /// `δ` with `lower = -δ`, `upper = 1 + δ`.
    pub t_value: f64,
    /// Present when computed by [`clip_bounds`]; absent for explicit `δ`.
    pub derivation: Option<ClipDerivation>,
}

impl ClipBounds {
    pub const UNIT: ClipBounds = ClipBounds {
        lower: 0.0,
        upper: 1.0,
        t_value: 0.0,
        derivation: None,
    };

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.lower) / self.width()
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.width() + self.lower
    }

    /// True when the raw `T` fell outside the stable band and was clamped.
    pub fn was_clamped(&self) -> bool {
        self.derivation
            .is_some_and(|d| d.raw_t != self.t_value)
    }
}

/// `e_s = e^(1 - E[SW(1)]) - 1`.
pub fn sensitivity_error(params: &MechanismParams) -> f64 {
    (1.0 - params.moments().mu).exp_m1()
}

/// `e_d = sqrt(Var(1 - SW(1)))`.
pub fn discarding_error(params: &MechanismParams) -> f64 {
    params.moments().var_dx.max(0.0).sqrt()
}

/// Clip interval for a stream perturbed by SW, derived from budget `epsilon`.
pub fn clip_bounds(epsilon: f64) -> Result<ClipBounds> {
    let params = sw_params(epsilon)?;
    let e_s = sensitivity_error(&params);
    let e_d = discarding_error(&params);
    let raw_t = e_s - e_d;
    let t = raw_t.clamp(-STABLE_DELTA, STABLE_DELTA);
    Ok(ClipBounds {
        lower: -t,
        upper: 1.0 + t,
        t_value: t,
        derivation: Some(ClipDerivation {
            e_s,
            e_d,
            raw_t,
            epsilon_used: epsilon,
        }),
    })
}

/// `[l, u] = [-δ, 1 + δ]` for an explicit `δ > -1/2`.
pub fn bounds_from_delta(delta: f64) -> Result<ClipBounds> {
    if !(delta > -0.5) || !delta.is_finite() {
        return domain(format!("delta must exceed -0.5 so that l < u, got {delta}"));
    }
    Ok(ClipBounds {
        lower: -delta,
        upper: 1.0 + delta,
        t_value: delta,
        derivation: None,
    })
}
