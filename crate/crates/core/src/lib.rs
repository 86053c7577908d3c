//! Calibrated unsupervised anomaly detection for multivariate time series.
//!
//! Windows of a normalized series are turned into wavelet coefficient
//! images, a small convolutional autoencoder scores them by reconstruction
//! error, and a tabular Q-learning agent calibrates the error threshold
//! using synthetic anomalies and Monte-Carlo-dropout uncertainty.

pub mod autoencoder;
pub mod calibration;
pub mod config;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod series;
pub mod stats;
pub mod synth;
pub mod wavelet;

pub use autoencoder::{Architecture, LatentPoint, NetworkParams};
pub use calibration::{ActionMode, Boundary, QTable, RLParams};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{DetectionReport, Metrics};
pub use series::{NormStats, SubsequenceBatch, TimeSeries, WindowConfig};
pub use synth::{AnomalyKind, AnomalySpec, LabeledWindow};
pub use wavelet::{CoefficientImage, DecompositionLevels, FilterBank};
