//! Small order-statistic helpers shared by thresholding code.

use crate::error::{Error, Result};

/// Nearest-rank percentile: the `ceil(p/100 · n)`-th smallest value
/// (1-based), with rank clamped to `[1, n]`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::TooFewValues {
            needed: 1,
            found: 0,
        });
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Config(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(sorted.len(), p) - 1])
}

/// 1-based nearest rank for `n` values at percentile `p`.
pub fn nearest_rank(n: usize, p: f64) -> usize {
    // Guard against 0.75 * 4 = 3.0000000000000004 style rounding.
    let exact = p / 100.0 * n as f64;
    let rank = (exact - 1e-9).ceil() as usize;
    rank.clamp(1, n.max(1))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Sample standard deviation (`n − 1` denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    // Shifted by the first value so a constant input gives exactly zero.
    let shift = values[0];
    let m = values.iter().map(|v| v - shift).sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - shift - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
