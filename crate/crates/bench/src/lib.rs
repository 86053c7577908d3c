//! Seeded inputs shared by the benchmarks.

use ndarray::Array2;
use wavecal::calibration::CalibrationPoint;

/// A smooth `len x dim` window with a little per-feature variation.
pub fn window(len: usize, dim: usize, seed: u64) -> Array2<f64> {
    let phase = seed as f64 * 0.37;
    Array2::from_shape_fn((len, dim), |(t, d)| {
        ((t as f64 + phase) * (0.3 + 0.1 * d as f64)).sin()
    })
}

/// `n` calibration points, every tenth one anomalous with a large error.
pub fn calibration_points(n: usize) -> Vec<CalibrationPoint> {
    (0..n)
        .map(|i| {
            let label = u8::from(i % 10 == 0);
            let jitter = ((i * 7919) % 1000) as f64 / 1000.0;
            CalibrationPoint {
                error: if label == 1 {
                    20.0 + 10.0 * jitter
                } else {
                    jitter
                },
                uncertainty: 1.0 + jitter,
                latent: vec![f64::from(label) * 3.0 + jitter, jitter, -jitter],
                label,
            }
        })
        .collect()
}
