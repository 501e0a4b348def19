//! Utility metrics and the DKW sample-size bound.

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub cosine_distance: f64,
    pub wasserstein: f64,
}

impl MetricReport {
    pub fn compare(estimate: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            mse: mse(estimate, truth)?,
            cosine_distance: cosine_distance(estimate, truth)?,
            wasserstein: wasserstein(estimate, truth)?,
        })
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return domain("metric inputs must be non-empty");
    }
    if a.len() != b.len() {
        return domain(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `1 - <a, b> / (|a| |b|)`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a, b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return domain("cosine distance is undefined for a zero vector");
    }
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// 1-Wasserstein distance between two empirical distributions, computed as
/// the integral of `|F - G|` over the pooled support.
pub fn wasserstein(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return domain("wasserstein inputs must be non-empty");
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return domain("wasserstein inputs must be finite");
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    if sa.len() == sb.len() {
        let n = sa.len() as f64;
        return Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n);
    }

    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let mut pooled: Vec<f64> = sa.iter().chain(&sb).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    for w in pooled.windows(2) {
        while i < sa.len() && sa[i] <= w[0] {
            i += 1;
        }
        while j < sb.len() && sb[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    Ok(total)
}

/// Smallest `N` with `2 exp(-2N(η - β)²) ≤ δ`.
pub fn dkw_sample_size(eta: f64, beta: f64, delta: f64) -> Result<u64> {
    if !(eta > beta) || !(beta >= 0.0) {
        return domain(format!("need eta > beta >= 0, got eta={eta}, beta={beta}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    let gap = eta - beta;
    Ok(((2.0 / delta).ln() / (2.0 * gap * gap)).ceil() as u64)
}
