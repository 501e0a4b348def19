//! Simple moving average applied by the collector.

use crate::error::{domain, Result};

/// Window of `2k + 1` slots; `k = 0` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoothingConfig {
    pub half_width: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { half_width: 1 }
    }
}

impl SmoothingConfig {
    pub const IDENTITY: SmoothingConfig = SmoothingConfig { half_width: 0 };

    /// From an odd window length `2k + 1`.
    pub fn from_window(window: usize) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return domain(format!("smoothing window must be an odd integer >= 1, got {window}"));
        }
        Ok(Self {
            half_width: window / 2,
        })
    }

    pub fn window(&self) -> usize {
        2 * self.half_width + 1
    }
}

/// Centered moving average; boundary slots average whatever neighbours exist.
pub fn sma(series: &[f64], config: SmoothingConfig) -> Result<Vec<f64>> {
    if series.is_empty() {
        return domain("cannot smooth an empty series");
    }
    let k = config.half_width;
    if k == 0 {
        return Ok(series.to_vec());
    }
    let n = series.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in series {
        prefix.push(prefix.last().unwrap() + v);
    }
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(k);
            let hi = (t + k + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect())
}
