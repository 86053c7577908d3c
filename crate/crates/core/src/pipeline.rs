//! End-to-end assembly: windows, wavelet images, training, scoring,
//! calibration and evaluation.
//!
//! Windows are split in time order: the leading `train_fraction` trains the
//! autoencoder and calibrates the boundary, the rest is held out. Errors are
//! reported in normalized units, one unit being the given percentile of the
//! normal training errors.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    mc_uncertainty, split_by_uncertainty, train_epoch, NetworkParams, OptimizerState, Sample,
};
use crate::calibration::{
    calibrate, predict_label, ActionMode, CalibrationPoint, CalibrationResult, Calibrator,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    baseline_static, proxy_labels, DetectionReport, DetectorSummary, Source, Split, WindowRecord,
};
use crate::series::{sliding_windows, NormStats, TimeSeries};
use crate::stats::percentile;
use crate::synth::AnomalySchedule;
use crate::wavelet::{coefficient_image, DecompositionLevels, FilterBank};

/// Wavelet images of every window, in parallel.
pub fn extract_images(
    windows: &[Array2<f64>],
    bank: &FilterBank,
    levels: DecompositionLevels,
) -> Result<Vec<Array2<f64>>> {
    windows
        .par_iter()
        .map(|w| coefficient_image(w.view(), bank, levels).map(|img| img.pixels))
        .collect()
}

/// Windows of one series ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub norm: NormStats,
    /// 1-based start time of each window.
    pub start_times: Vec<usize>,
    pub images: Vec<Array2<f64>>,
    /// 1 for windows that received a synthetic anomaly.
    pub labels: Vec<u8>,
    /// Windows `0..n_train` form the training split.
    pub n_train: usize,
}

impl Prepared {
    pub fn train_range(&self) -> Range<usize> {
        0..self.n_train
    }

    pub fn held_out_range(&self) -> Range<usize> {
        self.n_train..self.images.len()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.images[0].dim()
    }
}

/// Normalizes with statistics of the rows the training windows cover,
/// cuts windows, injects the scheduled anomalies and builds the images.
pub fn prepare(
    cfg: &RunConfig,
    series: &TimeSeries,
    schedule: &AnomalySchedule,
) -> Result<Prepared> {
    cfg.validate()?;
    if schedule.window != cfg.window {
        return Err(Error::Config(format!(
            "anomaly schedule was cut with {:?}, configuration uses {:?}",
            schedule.window, cfg.window
        )));
    }
    let w = cfg.window;
    let n = w.count(series.len());
    if n < 2 {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            window: w.length + w.stride,
        });
    }
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n - 1);
    let rows = (n_train - 1) * w.stride + w.length;
    let norm = NormStats::fit_values(series.values.slice(s![..rows, ..]));
    let normalized = norm.apply(series)?;
    let batch = sliding_windows(&normalized, w)?;
    let labelled = schedule.apply(&batch, None)?;
    let windows: Vec<Array2<f64>> = labelled.iter().map(|l| l.window.clone()).collect();
    let bank = cfg.wavelet.bank()?;
    let levels = cfg.wavelet.levels_for(w.length)?;
    Ok(Prepared {
        norm,
        start_times: (0..batch.len()).map(|i| batch.start_time(i)).collect(),
        images: extract_images(&windows, &bank, levels)?,
        labels: labelled.iter().map(|l| l.label()).collect(),
        n_train,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub separation: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: NetworkParams,
    pub log: Vec<EpochLog>,
    /// Present when calibration episodes were interleaved with training.
    pub calibrator: Option<Calibrator>,
}

/// Trains on the training split; synthetic windows feed the separation term.
pub fn train(cfg: &RunConfig, data: &Prepared) -> Result<Trained> {
    let (rows, cols) = data.image_shape();
    let arch = cfg.network.architecture(rows, cols);
    arch.validate()?;
    let mut params = NetworkParams::init(arch, cfg.seeds.train)?;
    let mut opt = OptimizerState::new(params.len(), cfg.seeds.train.wrapping_add(1));
    let samples: Vec<Sample> = data
        .train_range()
        .map(|i| Sample {
            image: &data.images[i],
            label: data.labels[i],
        })
        .collect();
    let mut log = Vec::with_capacity(cfg.train.epochs);
    let mut calibrator: Option<Calibrator> = None;
    for epoch in 0..cfg.train.epochs {
        let losses = train_epoch(&samples, &mut params, &mut opt, &cfg.train, epoch)?;
        let (recon, separation) = (losses.mean_recon(), losses.mean_separation());
        log.push(EpochLog {
            epoch,
            recon,
            separation,
            total: recon - cfg.train.eta * separation,
        });
        if cfg.interleave_episodes > 0 {
            let scores = score(cfg, &params, data, data.train_range())?;
            let scale = error_scale(cfg, data, &scores)?;
            let points = calibration_points(&scores, &data.labels, scale, data.train_range());
            let cal = match calibrator.as_mut() {
                Some(c) => c,
                None => {
                    let theta_max = theta_max(&points)?;
                    calibrator.insert(Calibrator::new(&points, &cfg.rl, theta_max, cfg.seeds.rl)?)
                }
            };
            let remaining = cfg.rl.episodes.saturating_sub(cal.episodes().len());
            cal.run(&points, remaining.min(cfg.interleave_episodes))?;
        }
    }
    Ok(Trained {
        params,
        log,
        calibrator,
    })
}

/// Raw scores of a range of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub range: Range<usize>,
    /// Reconstruction error `‖w − ŵ‖²`.
    pub errors: Vec<f64>,
    pub uncertainties: Vec<f64>,
    /// Deterministic latent encodings.
    pub latents: Vec<Vec<f64>>,
}

impl Scores {
    pub fn get(&self, n: usize) -> usize {
        n - self.range.start
    }
}

/// Monte-Carlo draws for window `n` use their own stream, so a window's
/// uncertainty does not depend on which other windows are scored.
fn mc_seed(cfg: &RunConfig, n: usize) -> u64 {
    cfg.seeds
        .train
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(n as u64)
}

pub fn score(
    cfg: &RunConfig,
    params: &NetworkParams,
    data: &Prepared,
    range: Range<usize>,
) -> Result<Scores> {
    let rows: Vec<(f64, f64, Vec<f64>)> = range
        .clone()
        .into_par_iter()
        .map(|n| {
            let img = &data.images[n];
            let e = params.recon_error(img)?.error;
            let u = mc_uncertainty(params, img, cfg.mc_samples, mc_seed(cfg, n))?.u;
            let z = params.encode(img)?.0;
            Ok((e, u, z))
        })
        .collect::<Result<_>>()?;
    let mut out = Scores {
        range,
        errors: Vec::with_capacity(rows.len()),
        uncertainties: Vec::with_capacity(rows.len()),
        latents: Vec::with_capacity(rows.len()),
    };
    for (e, u, z) in rows {
        out.errors.push(e);
        out.uncertainties.push(u);
        out.latents.push(z);
    }
    Ok(out)
}

/// Raw error of one normalized unit: the configured percentile of the
/// training windows without synthetic anomalies.
pub fn error_scale(cfg: &RunConfig, data: &Prepared, scores: &Scores) -> Result<f64> {
    let normal: Vec<f64> = data
        .train_range()
        .filter(|&n| data.labels[n] == 0)
        .map(|n| scores.errors[scores.get(n)])
        .collect();
    let p = percentile(&normal, cfg.error_scale_percentile)?;
    Ok(p.max(f64::MIN_POSITIVE))
}

pub fn calibration_points(
    scores: &Scores,
    labels: &[u8],
    scale: f64,
    range: Range<usize>,
) -> Vec<CalibrationPoint> {
    range
        .map(|n| {
            let i = scores.get(n);
            CalibrationPoint {
                error: scores.errors[i] / scale,
                uncertainty: scores.uncertainties[i],
                latent: scores.latents[i].clone(),
                label: labels[n],
            }
        })
        .collect()
}

/// Twice the 99.9th percentile of the calibration errors.
pub fn theta_max(points: &[CalibrationPoint]) -> Result<f64> {
    let errors: Vec<f64> = points.iter().map(|p| p.error).collect();
    Ok(2.0 * percentile(&errors, 99.9)?)
}

/// Everything detection needs besides the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFile {
    pub theta: f64,
    pub theta_max: f64,
    pub theta0: f64,
    pub action_mode: ActionMode,
    /// Raw reconstruction error equal to one normalized unit.
    pub error_scale: f64,
    /// High-uncertainty split fit on the training windows.
    pub uncertainty_threshold: f64,
}

impl BoundaryFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Calibrates on the training split; `scores` must cover it. A calibrator
/// carried over from interleaved training finishes its remaining episodes.
pub fn calibrate_boundary(
    cfg: &RunConfig,
    data: &Prepared,
    scores: &Scores,
    carried: Option<Calibrator>,
) -> Result<(CalibrationResult, BoundaryFile)> {
    let scale = error_scale(cfg, data, scores)?;
    let points = calibration_points(scores, &data.labels, scale, data.train_range());
    let tmax = theta_max(&points)?;
    let result = match carried {
        Some(mut cal) => {
            let remaining = cfg.rl.episodes.saturating_sub(cal.episodes().len());
            cal.run(&points, remaining)?;
            cal.finish(&points)
        }
        None => calibrate(&points, &cfg.rl, tmax, cfg.seeds.rl)?,
    };
    let train_u: Vec<f64> = data
        .train_range()
        .map(|n| scores.uncertainties[scores.get(n)])
        .collect();
    let boundary = BoundaryFile {
        theta: result.boundary.theta,
        theta_max: result.boundary.theta_max,
        theta0: result.theta0,
        action_mode: cfg.rl.action_mode,
        error_scale: scale,
        uncertainty_threshold: split_by_uncertainty(&train_u)?.threshold,
    };
    Ok((result, boundary))
}

/// Per-window predictions for every scored window.
pub fn detect_scored(scores: &Scores, boundary: &BoundaryFile) -> Vec<u8> {
    scores
        .errors
        .iter()
        .map(|e| predict_label(e / boundary.error_scale, boundary.theta))
        .collect()
}

/// Scores the held-out split against the injected ground truth, alongside
/// the static baseline at one normalized unit. `scores` must cover all windows.
pub fn evaluate(
    cfg: &RunConfig,
    data: &Prepared,
    scores: &Scores,
    boundary: &BoundaryFile,
) -> Result<DetectionReport> {
    if scores.range != (0..data.images.len()) {
        return Err(Error::LengthMismatch(
            "evaluation needs scores for every window".into(),
        ));
    }
    let errors: Vec<f64> = scores
        .errors
        .iter()
        .map(|e| e / boundary.error_scale)
        .collect();
    let predicted = baseline_static(&errors, boundary.theta);
    let baseline_theta = 1.0;
    let baseline = baseline_static(&errors, baseline_theta);
    let synthetic: Vec<bool> = data.labels.iter().map(|&y| y == 1).collect();
    let proxy = proxy_labels(
        &errors,
        &scores.uncertainties,
        &synthetic,
        1.0,
        boundary.uncertainty_threshold,
    )?;

    let records: Vec<WindowRecord> = (0..errors.len())
        .map(|n| WindowRecord {
            start: data.start_times[n],
            split: if n < data.n_train {
                Split::Train
            } else {
                Split::HeldOut
            },
            error: errors[n],
            uncertainty: scores.uncertainties[n],
            predicted: predicted[n],
            baseline: baseline[n],
            label: data.labels[n],
            source: if synthetic[n] {
                Source::Synthetic
            } else {
                Source::Real
            },
            proxy: proxy[n],
        })
        .collect();

    let held = data.held_out_range();
    let truth = &data.labels[held.clone()];
    let proposed = DetectorSummary::evaluate(boundary.theta, &predicted[held.clone()], truth)?;
    let base = DetectorSummary::evaluate(baseline_theta, &baseline[held.clone()], truth)?;
    let (proxy_pred, proxy_truth): (Vec<u8>, Vec<u8>) = held
        .clone()
        .filter_map(|n| proxy[n].as_binary().map(|y| (predicted[n], y)))
        .unzip();
    let proposed_vs_proxy =
        DetectorSummary::evaluate(boundary.theta, &proxy_pred, &proxy_truth).ok();
    Ok(DetectionReport {
        evaluated_on: Split::HeldOut,
        windows_evaluated: held.len(),
        error_scale: boundary.error_scale,
        proposed,
        baseline: base,
        proposed_vs_proxy,
        records,
        config: serde_json::to_value(cfg)?,
    })
}

/// All artifacts of a full run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub data: Prepared,
    pub trained: Trained,
    pub scores: Scores,
    pub calibration: CalibrationResult,
    pub boundary: BoundaryFile,
    pub report: DetectionReport,
}

/// Prepare, train, score, calibrate and evaluate in one go.
pub fn run(cfg: &RunConfig, series: &TimeSeries, schedule: &AnomalySchedule) -> Result<RunOutputs> {
    let data = prepare(cfg, series, schedule)?;
    let mut trained = train(cfg, &data)?;
    let scores = score(cfg, &trained.params, &data, 0..data.images.len())?;
    let (calibration, boundary) =
        calibrate_boundary(cfg, &data, &scores, trained.calibrator.take())?;
    let report = evaluate(cfg, &data, &scores, &boundary)?;
    Ok(RunOutputs {
        data,
        trained,
        scores,
        calibration,
        boundary,
        report,
    })
}
