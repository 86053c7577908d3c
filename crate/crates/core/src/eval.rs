//! Detection, labelling, metrics and plot-data export.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::NetworkParams;
use crate::calibration::{predict_label, EpisodeRecord};
use crate::error::{Error, Result};

/// `ŷ_n = 1` iff the reconstruction error of window `n`, divided by
/// `error_scale`, exceeds `theta`.
pub fn detect(
    images: &[Array2<f64>],
    params: &NetworkParams,
    theta: f64,
    error_scale: f64,
) -> Result<Vec<u8>> {
    images
        .par_iter()
        .map(|w| {
            params
                .recon_error(w)
                .map(|r| predict_label(r.error / error_scale, theta))
        })
        .collect()
}

/// Fixed-threshold predictions on precomputed errors.
pub fn baseline_static(errors: &[f64], threshold: f64) -> Vec<u8> {
    errors
        .iter()
        .map(|&e| predict_label(e, threshold))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyLabel {
    Normal,
    Abnormal,
    /// A score is missing or not finite; excluded from metrics.
    Indeterminate,
}

impl ProxyLabel {
    pub fn as_binary(self) -> Option<u8> {
        match self {
            ProxyLabel::Normal => Some(0),
            ProxyLabel::Abnormal => Some(1),
            ProxyLabel::Indeterminate => None,
        }
    }
}

/// Anomalous iff synthetic, or error above `error_threshold`, or uncertainty
/// above `uncertainty_threshold`; normal iff both scores are at or below
/// their thresholds.
pub fn proxy_labels(
    errors: &[f64],
    uncertainties: &[f64],
    synthetic: &[bool],
    error_threshold: f64,
    uncertainty_threshold: f64,
) -> Result<Vec<ProxyLabel>> {
    if errors.len() != uncertainties.len() || errors.len() != synthetic.len() {
        return Err(Error::LengthMismatch(format!(
            "{} errors, {} uncertainties, {} flags",
            errors.len(),
            uncertainties.len(),
            synthetic.len()
        )));
    }
    Ok(errors
        .iter()
        .zip(uncertainties)
        .zip(synthetic)
        .map(|((&e, &u), &syn)| {
            if syn || e > error_threshold || u > uncertainty_threshold {
                ProxyLabel::Abnormal
            } else if e <= error_threshold && u <= uncertainty_threshold {
                ProxyLabel::Normal
            } else {
                ProxyLabel::Indeterminate
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[u8], actual: &[u8]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::LengthMismatch(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &y) in predicted.iter().zip(actual) {
            match (p, y) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Precision is 0 when nothing is predicted positive; F1 is 0 when
    /// precision and recall are both 0.
    pub fn metrics(&self) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let accuracy = ratio(self.tp + self.tn, self.total());
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            accuracy,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Confusion counts and metrics; fails when `actual` holds one class only.
pub fn compute_metrics(predicted: &[u8], actual: &[u8]) -> Result<(Confusion, Metrics)> {
    let c = Confusion::from_labels(predicted, actual)?;
    if c.tp + c.fn_ == 0 || c.fp + c.tn == 0 {
        return Err(Error::MetricsUndefined);
    }
    Ok((c, c.metrics()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    HeldOut,
}

/// Scores and labels of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    /// 1-based start time.
    pub start: usize,
    pub split: Split,
    /// Normalized reconstruction error.
    pub error: f64,
    pub uncertainty: f64,
    pub predicted: u8,
    pub baseline: u8,
    pub label: u8,
    pub source: Source,
    pub proxy: ProxyLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub theta: f64,
    pub confusion: Confusion,
    pub metrics: Metrics,
}

impl DetectorSummary {
    pub fn evaluate(theta: f64, predicted: &[u8], actual: &[u8]) -> Result<Self> {
        let (confusion, metrics) = compute_metrics(predicted, actual)?;
        Ok(Self {
            theta,
            confusion,
            metrics,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// Which windows the metrics cover.
    pub evaluated_on: Split,
    pub windows_evaluated: usize,
    /// Raw reconstruction error equal to one normalized unit.
    pub error_scale: f64,
    pub proposed: DetectorSummary,
    pub baseline: DetectorSummary,
    /// Proposed detector scored against proxy labels, when defined.
    pub proposed_vs_proxy: Option<DetectorSummary>,
    pub records: Vec<WindowRecord>,
    pub config: serde_json::Value,
}

impl DetectionReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn write_rows(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `episode,epsilon,cumulative_reward,theta`, one row per episode.
pub fn write_reward_csv(path: impl AsRef<Path>, episodes: &[EpisodeRecord]) -> Result<()> {
    let header = ["episode", "epsilon", "cumulative_reward", "theta"].map(String::from);
    write_rows(
        path.as_ref(),
        &header,
        episodes.iter().map(|e| {
            vec![
                e.episode.to_string(),
                e.epsilon.to_string(),
                e.cumulative_reward.to_string(),
                e.theta.to_string(),
            ]
        }),
    )
}

/// `start,split,error,uncertainty,predicted`; split is 0 for training
/// windows and 1 for held-out ones.
pub fn write_detections_csv(
    path: impl AsRef<Path>,
    start_times: &[usize],
    held_out_from: usize,
    errors: &[f64],
    uncertainties: &[f64],
    predicted: &[u8],
) -> Result<()> {
    let header = ["start", "split", "error", "uncertainty", "predicted"].map(String::from);
    write_rows(
        path.as_ref(),
        &header,
        (0..start_times.len()).map(|n| {
            vec![
                start_times[n].to_string(),
                u8::from(n >= held_out_from).to_string(),
                errors[n].to_string(),
                uncertainties[n].to_string(),
                predicted[n].to_string(),
            ]
        }),
    )
}

/// `z1..zK,label,synthetic`, one row per window.
pub fn write_latent_csv(
    path: impl AsRef<Path>,
    latents: &[Vec<f64>],
    labels: &[u8],
    synthetic: &[bool],
) -> Result<()> {
    let k = latents.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=k).map(|i| format!("z{i}")).collect();
    header.push("label".into());
    header.push("synthetic".into());
    write_rows(
        path.as_ref(),
        &header,
        latents
            .iter()
            .zip(labels)
            .zip(synthetic)
            .map(|((z, y), s)| {
                let mut row: Vec<String> = z.iter().map(f64::to_string).collect();
                row.push(y.to_string());
                row.push(u8::from(*s).to_string());
                row
            }),
    )
}

/// Histogram of normalized errors split by label. Bins are equal-width in
/// log error between the smallest positive error and the largest of the
/// errors and the boundary; anomalous errors run orders of magnitude above
/// normal ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorHistogram {
    pub edges: Vec<f64>,
    pub normal: Vec<usize>,
    pub anomalous: Vec<usize>,
    pub boundary: f64,
}

impl ErrorHistogram {
    pub fn new(errors: &[f64], labels: &[u8], bins: usize, boundary: f64) -> Self {
        let bins = bins.max(1);
        let lo = errors
            .iter()
            .copied()
            .filter(|e| *e > 0.0)
            .fold(f64::INFINITY, f64::min);
        let lo = if lo.is_finite() { lo } else { 1.0 };
        let hi = errors
            .iter()
            .copied()
            .fold(boundary, f64::max)
            .max(lo * 2.0);
        let span = (hi / lo).ln();
        let mut edges: Vec<f64> = (0..=bins)
            .map(|i| lo * (span * i as f64 / bins as f64).exp())
            .collect();
        edges[0] = lo;
        edges[bins] = hi;
        let mut normal = vec![0; bins];
        let mut anomalous = vec![0; bins];
        for (&e, &y) in errors.iter().zip(labels) {
            let b = edges[1..bins].partition_point(|&edge| edge <= e);
            if y == 1 {
                anomalous[b] += 1;
            } else {
                normal[b] += 1;
            }
        }
        Self {
            edges,
            normal,
            anomalous,
            boundary,
        }
    }

    /// `bin_start,bin_end,normal,anomalous,boundary`; the last column is 1
    /// on the bin holding the decision boundary.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = ["bin_start", "bin_end", "normal", "anomalous", "boundary"].map(String::from);
        let n = self.normal.len();
        write_rows(
            path.as_ref(),
            &header,
            (0..n).map(|i| {
                let (lo, hi) = (self.edges[i], self.edges[i + 1]);
                let holds = (self.boundary >= lo && self.boundary < hi)
                    || (i == n - 1 && self.boundary >= hi);
                vec![
                    lo.to_string(),
                    hi.to_string(),
                    self.normal[i].to_string(),
                    self.anomalous[i].to_string(),
                    u8::from(holds).to_string(),
                ]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::Architecture;
    use crate::stats::percentile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_arithmetic() {
        let c = Confusion {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 6,
        };
        let m = c.metrics();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 0, 0];
        let (c, m) = compute_metrics(&y, &y).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 2,
                fp: 0,
                fn_: 0,
                tn: 3
            }
        );
        assert_eq!(
            (m.precision, m.recall, m.accuracy, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn zero_division_conventions() {
        let (_, m) = compute_metrics(&[0, 0, 0], &[1, 0, 0]).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!(matches!(
            compute_metrics(&[0, 1], &[0, 0]),
            Err(Error::MetricsUndefined)
        ));
        assert!(matches!(
            compute_metrics(&[0, 1], &[1, 1]),
            Err(Error::MetricsUndefined)
        ));
    }

    #[test]
    fn proxy_rule() {
        let e = [0.1, 0.1, 0.1, 5.0, f64::NAN];
        let u = [0.1, 0.1, 9.0, 0.1, 0.1];
        let syn = [false, true, false, false, false];
        let p = proxy_labels(&e, &u, &syn, 1.0, 1.0).unwrap();
        assert_eq!(
            p,
            vec![
                ProxyLabel::Normal,
                ProxyLabel::Abnormal,
                ProxyLabel::Abnormal,
                ProxyLabel::Abnormal,
                ProxyLabel::Indeterminate
            ]
        );
        // Synthetic windows are abnormal whatever their scores.
        let p = proxy_labels(&[f64::NAN], &[f64::NAN], &[true], 1.0, 1.0).unwrap();
        assert_eq!(p, vec![ProxyLabel::Abnormal]);
    }

    #[test]
    fn detect_extremes_and_order() {
        let params = NetworkParams::init(Architecture::for_input(12, 3), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let imgs: Vec<Array2<f64>> = (0..12)
            .map(|_| Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0)))
            .collect();
        assert!(detect(&imgs, &params, f64::INFINITY, 1.0)
            .unwrap()
            .iter()
            .all(|&y| y == 0));
        assert!(detect(&imgs, &params, 0.0, 1.0)
            .unwrap()
            .iter()
            .all(|&y| y == 1));
        let theta = 0.5 * params.recon_error(&imgs[0]).unwrap().error;
        let forward = detect(&imgs, &params, theta, 1.0).unwrap();
        let mut rev = imgs.clone();
        rev.reverse();
        let mut backward = detect(&rev, &params, theta, 1.0).unwrap();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn baseline_false_positive_rate() {
        // Squared-norm errors of clean windows: chi-square-like positive scores.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = || -> f64 {
            (0..6)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal).powi(2))
                .sum()
        };
        let train: Vec<f64> = (0..1000).map(|_| draw()).collect();
        let val: Vec<f64> = (0..1000).map(|_| draw()).collect();
        let theta = percentile(&train, 95.0).unwrap();
        let fp = baseline_static(&val, theta)
            .iter()
            .filter(|&&y| y == 1)
            .count() as f64
            / 1000.0;
        assert!((fp - 0.05).abs() <= 0.02, "fpr {fp}");
    }

    #[test]
    fn histogram_counts_and_marker() {
        let h = ErrorHistogram::new(&[0.1, 0.5, 0.9, 1000.0], &[0, 0, 1, 1], 4, 1.2);
        assert_eq!(
            h.normal.iter().sum::<usize>() + h.anomalous.iter().sum::<usize>(),
            4
        );
        assert_eq!(h.edges.len(), 5);
        assert!((h.edges[1] - 1.0).abs() < 1e-12);
        assert_eq!(h.normal, vec![2, 0, 0, 0]);
        assert_eq!(h.anomalous, vec![1, 0, 0, 1]);
    }
}
