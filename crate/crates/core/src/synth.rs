//! Synthetic anomaly injection and a seeded engine-degradation benchmark.
//!
//! Injectors add a perturbation to selected feature columns of a window.
//! Amplitudes are multiples of the per-feature standard deviation `σ_d`,
//! which is 1 for windows cut from a normalized series.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{SubsequenceBatch, TimeSeries, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Cyclic,
    SuddenDrift,
    GradualDrift,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [
        AnomalyKind::Cyclic,
        AnomalyKind::SuddenDrift,
        AnomalyKind::GradualDrift,
    ];
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::Cyclic => "cyclic",
            AnomalyKind::SuddenDrift => "sudden_drift",
            AnomalyKind::GradualDrift => "gradual_drift",
        })
    }
}

/// Parameters of one injected anomaly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub target_features: Vec<usize>,
    /// Multiple of the per-feature standard deviation.
    pub amplitude: f64,
    /// Cycle length in time steps, cyclic only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
    /// Window-relative first affected row, drifts only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset: Option<usize>,
}

impl AnomalySpec {
    pub fn cyclic(target_features: Vec<usize>, amplitude: f64, period: usize) -> Self {
        Self {
            kind: AnomalyKind::Cyclic,
            target_features,
            amplitude,
            period: Some(period),
            onset: None,
        }
    }

    pub fn sudden_drift(target_features: Vec<usize>, amplitude: f64, onset: usize) -> Self {
        Self {
            kind: AnomalyKind::SuddenDrift,
            target_features,
            amplitude,
            period: None,
            onset: Some(onset),
        }
    }

    pub fn gradual_drift(target_features: Vec<usize>, amplitude: f64, onset: usize) -> Self {
        Self {
            kind: AnomalyKind::GradualDrift,
            target_features,
            amplitude,
            period: None,
            onset: Some(onset),
        }
    }

    /// Checks the spec against an `len x dim` window.
    pub fn validate(&self, len: usize, dim: usize) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "amplitude must be positive and finite, got {}",
                self.amplitude
            )));
        }
        if self.target_features.is_empty() {
            return Err(Error::InvalidSpec("no target features".into()));
        }
        if let Some(&d) = self.target_features.iter().find(|&&d| d >= dim) {
            return Err(Error::InvalidSpec(format!(
                "target feature {d} out of range for {dim} features"
            )));
        }
        match self.kind {
            AnomalyKind::Cyclic => match self.period {
                Some(p) if (2..=len).contains(&p) => Ok(()),
                Some(p) => Err(Error::InvalidSpec(format!("period {p} outside [2, {len}]"))),
                None => Err(Error::InvalidSpec("cyclic anomaly needs a period".into())),
            },
            AnomalyKind::SuddenDrift | AnomalyKind::GradualDrift => {
                let onset = self
                    .onset
                    .ok_or_else(|| Error::InvalidSpec("drift needs an onset".into()))?;
                if onset >= len {
                    return Err(Error::InvalidSpec(format!(
                        "onset {onset} outside [0, {len})"
                    )));
                }
                if self.kind == AnomalyKind::GradualDrift && onset + 1 >= len {
                    return Err(Error::InvalidSpec(format!(
                        "gradual drift onset {onset} leaves a zero-length ramp"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Additive term at window row `t`, in units of `σ_d`.
    fn offset(&self, t: usize, len: usize) -> f64 {
        match self.kind {
            AnomalyKind::Cyclic => {
                let period = self.period.unwrap_or(len) as f64;
                self.amplitude * (2.0 * PI * t as f64 / period).sin()
            }
            AnomalyKind::SuddenDrift => {
                if t >= self.onset.unwrap_or(0) {
                    self.amplitude
                } else {
                    0.0
                }
            }
            AnomalyKind::GradualDrift => {
                let onset = self.onset.unwrap_or(0);
                if t <= onset {
                    0.0
                } else {
                    self.amplitude * (t - onset) as f64 / (len - 1 - onset) as f64
                }
            }
        }
    }
}

/// A window with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window: Array2<f64>,
    pub spec: Option<AnomalySpec>,
}

impl LabeledWindow {
    pub fn normal(window: Array2<f64>) -> Self {
        Self { window, spec: None }
    }

    /// `y`: 1 iff an anomaly was injected.
    pub fn label(&self) -> u8 {
        u8::from(self.spec.is_some())
    }
}

/// Applies `spec` to `window`. `sigma` holds the per-feature standard
/// deviations; pass `None` for normalized data (`σ_d = 1`).
pub fn inject(
    window: ArrayView2<'_, f64>,
    spec: &AnomalySpec,
    sigma: Option<&[f64]>,
) -> Result<LabeledWindow> {
    let (len, dim) = window.dim();
    spec.validate(len, dim)?;
    if let Some(s) = sigma {
        if s.len() != dim {
            return Err(Error::LengthMismatch(format!(
                "{} standard deviations for {dim} features",
                s.len()
            )));
        }
    }
    let mut out = window.to_owned();
    for &d in &spec.target_features {
        let scale = sigma.map_or(1.0, |s| s[d]);
        for t in 0..len {
            out[[t, d]] += scale * spec.offset(t, len);
        }
    }
    Ok(LabeledWindow {
        window: out,
        spec: Some(spec.clone()),
    })
}

fn expect_kind(spec: &AnomalySpec, kind: AnomalyKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::InvalidSpec(format!(
            "expected a {kind} spec, got {}",
            spec.kind
        )));
    }
    Ok(())
}

/// Adds `amplitude·σ_d·sin(2πt/period)` to every target column.
pub fn inject_cyclic(
    window: ArrayView2<'_, f64>,
    spec: &AnomalySpec,
    sigma: Option<&[f64]>,
) -> Result<LabeledWindow> {
    expect_kind(spec, AnomalyKind::Cyclic)?;
    inject(window, spec, sigma)
}

/// Adds a step of `amplitude·σ_d` from `onset` to the end of the window.
pub fn inject_sudden_drift(
    window: ArrayView2<'_, f64>,
    spec: &AnomalySpec,
    sigma: Option<&[f64]>,
) -> Result<LabeledWindow> {
    expect_kind(spec, AnomalyKind::SuddenDrift)?;
    inject(window, spec, sigma)
}

/// Adds a linear ramp from zero at `onset` to `amplitude·σ_d` at `L - 1`.
pub fn inject_gradual_drift(
    window: ArrayView2<'_, f64>,
    spec: &AnomalySpec,
    sigma: Option<&[f64]>,
) -> Result<LabeledWindow> {
    expect_kind(spec, AnomalyKind::GradualDrift)?;
    inject(window, spec, sigma)
}

/// Ground truth for one window of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AnomalyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<AnomalySpec>,
}

/// Which windows receive which anomaly, keyed by 1-based window start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySchedule {
    pub window: WindowConfig,
    pub labels: BTreeMap<usize, WindowLabel>,
}

impl AnomalySchedule {
    /// A schedule with every window normal.
    pub fn clean(window: WindowConfig, windows: usize) -> Self {
        let labels = (0..windows)
            .map(|n| {
                (
                    n * window.stride + 1,
                    WindowLabel {
                        label: 0,
                        kind: None,
                        spec: None,
                    },
                )
            })
            .collect();
        Self { window, labels }
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.values().filter(|l| l.label == 1).count()
    }

    /// Injects the scheduled anomalies into a batch cut with the same window
    /// configuration. Windows absent from the schedule stay normal.
    pub fn apply(
        &self,
        batch: &SubsequenceBatch,
        sigma: Option<&[f64]>,
    ) -> Result<Vec<LabeledWindow>> {
        batch
            .windows
            .iter()
            .enumerate()
            .map(|(n, w)| match self.labels.get(&batch.start_time(n)) {
                Some(WindowLabel {
                    spec: Some(spec), ..
                }) => inject(w.view(), spec, sigma),
                _ => Ok(LabeledWindow::normal(w.clone())),
            })
            .collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Settings for [`make_benchmark`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub seed: u64,
    /// Number of time steps `T`.
    pub length: usize,
    /// Number of sensors `D`.
    pub features: usize,
    /// Row at which slow degradation begins.
    pub degradation_onset: usize,
    /// Size of the degradation drift at the final row, in noise-free signal units.
    pub degradation_scale: f64,
    pub noise_std: f64,
    pub window: WindowConfig,
    pub anomaly_fraction: f64,
    pub cyclic_amplitude: f64,
    pub sudden_amplitude: f64,
    pub gradual_amplitude: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            length: 2000,
            features: 5,
            degradation_onset: 1400,
            degradation_scale: 0.1,
            noise_std: 0.05,
            window: WindowConfig::default(),
            anomaly_fraction: 0.1,
            cyclic_amplitude: 2.0,
            sudden_amplitude: 3.0,
            gradual_amplitude: 3.0,
        }
    }
}

/// A generated series with its anomaly schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub series: TimeSeries,
    pub schedule: AnomalySchedule,
}

impl Benchmark {
    /// Per-window ground-truth labels in window order.
    pub fn labels(&self) -> Vec<u8> {
        self.schedule.labels.values().map(|l| l.label).collect()
    }
}

/// Generates a deterministic multi-sensor series: a few shared smooth
/// operating factors mixed into every sensor, a late quadratic degradation
/// drift, and white noise. A fixed fraction of windows is scheduled for
/// anomaly injection; injection itself happens on normalized windows.
pub fn make_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    if cfg.length < 200 {
        return Err(Error::Config(format!(
            "benchmark needs at least 200 time steps, got {}",
            cfg.length
        )));
    }
    if cfg.features < 3 {
        return Err(Error::Config(format!(
            "benchmark needs at least 3 features, got {}",
            cfg.features
        )));
    }
    if !(0.0..=1.0).contains(&cfg.anomaly_fraction) {
        return Err(Error::Config(format!(
            "anomaly fraction {} outside [0, 1]",
            cfg.anomaly_fraction
        )));
    }
    cfg.window.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (t_len, dim) = (cfg.length, cfg.features);

    const FACTORS: usize = 2;
    let periods: [f64; FACTORS] = [
        rng.random_range(160.0..320.0),
        rng.random_range(60.0..120.0),
    ];
    let phases: [f64; FACTORS] = [
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    ];
    let loadings: Vec<[f64; FACTORS]> = (0..dim)
        .map(|_| [rng.random_range(0.5..1.5), rng.random_range(-0.8..0.8)])
        .collect();
    let offsets: Vec<f64> = (0..dim).map(|_| rng.random_range(-50.0..600.0)).collect();
    let scales: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..20.0)).collect();
    let wear: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();

    let onset = cfg.degradation_onset.min(t_len);
    let mut values = Array2::zeros((t_len, dim));
    for t in 0..t_len {
        let factors: Vec<f64> = (0..FACTORS)
            .map(|k| (2.0 * PI * t as f64 / periods[k] + phases[k]).sin())
            .collect();
        let degradation = if t >= onset && t_len > onset {
            let s = (t - onset) as f64 / (t_len - onset) as f64;
            cfg.degradation_scale * s * s
        } else {
            0.0
        };
        for d in 0..dim {
            let clean: f64 = loadings[d]
                .iter()
                .zip(&factors)
                .map(|(l, f)| l * f)
                .sum::<f64>()
                + wear[d] * degradation;
            let noise: f64 = rng.sample(StandardNormal);
            values[[t, d]] = offsets[d] + scales[d] * (clean + cfg.noise_std * noise);
        }
    }
    let names = (0..dim).map(|d| format!("sensor_{}", d + 1)).collect();
    let series = TimeSeries::new(values, names)?;

    let schedule = schedule_anomalies(cfg, cfg.window.count(t_len), dim, &mut rng);
    Ok(Benchmark { series, schedule })
}

/// Schedules anomalies for an externally supplied series, seeded by
/// `cfg.seed`.
pub fn schedule_for_series(cfg: &BenchmarkConfig, series: &TimeSeries) -> Result<AnomalySchedule> {
    cfg.window.validate()?;
    let windows = cfg.window.count(series.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(schedule_anomalies(cfg, windows, series.dim(), &mut rng))
}

/// Picks `round(fraction·windows)` windows at random and assigns them
/// cyclic, sudden and gradual anomalies in turn.
pub fn schedule_anomalies<R: Rng>(
    cfg: &BenchmarkConfig,
    windows: usize,
    dim: usize,
    rng: &mut R,
) -> AnomalySchedule {
    let mut schedule = AnomalySchedule::clean(cfg.window, windows);
    let count = (cfg.anomaly_fraction * windows as f64).round() as usize;
    let mut order: Vec<usize> = (0..windows).collect();
    order.shuffle(rng);
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();
    let len = cfg.window.length;
    for (i, n) in chosen.into_iter().enumerate() {
        let kind = AnomalyKind::ALL[i % 3];
        let spec = match kind {
            AnomalyKind::Cyclic => AnomalySpec::cyclic(
                (0..dim).collect(),
                cfg.cyclic_amplitude,
                rng.random_range(3..=len.max(3)),
            ),
            AnomalyKind::SuddenDrift => AnomalySpec::sudden_drift(
                vec![rng.random_range(0..dim)],
                cfg.sudden_amplitude,
                rng.random_range(0..=len / 2),
            ),
            AnomalyKind::GradualDrift => AnomalySpec::gradual_drift(
                vec![rng.random_range(0..dim)],
                cfg.gradual_amplitude,
                rng.random_range(0..=(len / 2).min(len - 2)),
            ),
        };
        schedule.labels.insert(
            n * cfg.window.stride + 1,
            WindowLabel {
                label: 1,
                kind: Some(kind),
                spec: Some(spec),
            },
        );
    }
    schedule
}
