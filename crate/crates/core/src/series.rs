//! Loading, z-score normalization and sliding-window segmentation of
//! multivariate time series.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `T x D` matrix of sensor readings, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Array2<f64>,
    pub feature_names: Vec<String>,
    /// Index of the first row in the source recording.
    pub t0: usize,
}

impl TimeSeries {
    pub fn new(values: Array2<f64>, feature_names: Vec<String>) -> Result<Self> {
        let (t, d) = values.dim();
        if t == 0 {
            return Err(Error::NoData);
        }
        if d == 0 || feature_names.len() != d {
            return Err(Error::LengthMismatch(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                d
            )));
        }
        if let Some(((row, column), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteCell { row, column });
        }
        Ok(Self {
            values,
            feature_names,
            t0: 0,
        })
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Number of features `D`.
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// The first `rows` time steps.
    pub fn head(&self, rows: usize) -> TimeSeries {
        let rows = rows.min(self.len());
        TimeSeries {
            values: self.values.slice(s![..rows, ..]).to_owned(),
            feature_names: self.feature_names.clone(),
            t0: self.t0,
        }
    }

    /// Writes the series as a header row of feature names followed by one
    /// row per time step. Values use Rust's shortest round-trip formatting.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = String::new();
        out.push_str(&self.feature_names.join(","));
        out.push('\n');
        for row in self.values.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Reads a headered, comma-separated file into a [`TimeSeries`].
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Same as [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let d = names.len();
    let mut flat = Vec::new();
    let mut rows = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row, header excluded.
        let row = i + 1;
        if record.len() != d {
            return Err(Error::RaggedRow {
                row,
                expected: d,
                found: record.len(),
            });
        }
        for (column, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::ParseCell {
                row,
                column: column + 1,
                name: names[column].clone(),
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteCell {
                    row,
                    column: column + 1,
                });
            }
            flat.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::NoData);
    }
    let values = Array2::from_shape_vec((rows, d), flat)
        .map_err(|e| Error::LengthMismatch(e.to_string()))?;
    TimeSeries::new(values, names)
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(series: &TimeSeries) -> Self {
        Self::fit_values(series.values.view())
    }

    pub fn fit_values(values: ArrayView2<'_, f64>) -> Self {
        let n = values.nrows() as f64;
        let mean: Vec<f64> = values.axis_iter(Axis(1)).map(|col| col.sum() / n).collect();
        let std = values
            .axis_iter(Axis(1))
            .zip(&mean)
            .map(|(col, m)| (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Self { mean, std }
    }

    /// Divisor used for column `d`; constant columns divide by one.
    fn scale(&self, d: usize) -> f64 {
        if self.std[d] > 0.0 {
            self.std[d]
        } else {
            1.0
        }
    }

    pub fn apply(&self, series: &TimeSeries) -> Result<TimeSeries> {
        self.check_dim(series)?;
        let mut out = series.clone();
        for (d, mut col) in out.values.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[d], self.scale(d));
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn invert(&self, series: &TimeSeries) -> Result<TimeSeries> {
        self.check_dim(series)?;
        let mut out = series.clone();
        for (d, mut col) in out.values.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[d], self.scale(d));
            col.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }

    fn check_dim(&self, series: &TimeSeries) -> Result<()> {
        if self.mean.len() != series.dim() || self.std.len() != series.dim() {
            return Err(Error::LengthMismatch(format!(
                "normalization stats cover {} features, series has {}",
                self.mean.len(),
                series.dim()
            )));
        }
        Ok(())
    }
}

/// Z-scores every column with statistics fit on `series` itself.
pub fn fit_normalize(series: &TimeSeries) -> (TimeSeries, NormStats) {
    let stats = NormStats::fit(series);
    let normalized = stats.apply(series).expect("stats fit on the same series");
    (normalized, stats)
}

/// Window length `L` and stride `Δ`, both in time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: 10,
            stride: 2,
        }
    }
}

impl WindowConfig {
    pub fn new(length: usize, stride: usize) -> Result<Self> {
        let cfg = Self { length, stride };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Config(format!(
                "window length must be at least 2, got {}",
                self.length
            )));
        }
        if self.stride < 1 {
            return Err(Error::Config("window stride must be positive".into()));
        }
        Ok(())
    }

    /// `floor((T - L) / Δ) + 1`, or zero when the series is too short.
    pub fn count(&self, len: usize) -> usize {
        if len < self.length {
            0
        } else {
            (len - self.length) / self.stride + 1
        }
    }
}

/// Overlapping `L x D` windows cut from one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsequenceBatch {
    pub windows: Vec<Array2<f64>>,
    /// 0-based row index of each window's first time step.
    pub start_indices: Vec<usize>,
}

impl SubsequenceBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// 1-based start time `t_n` as used in reports.
    pub fn start_time(&self, n: usize) -> usize {
        self.start_indices[n] + 1
    }
}

/// Cuts `series` into full windows; a partial trailing window is dropped.
pub fn sliding_windows(series: &TimeSeries, cfg: WindowConfig) -> Result<SubsequenceBatch> {
    cfg.validate()?;
    if series.len() < cfg.length {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            window: cfg.length,
        });
    }
    let n = cfg.count(series.len());
    let start_indices: Vec<usize> = (0..n).map(|i| i * cfg.stride).collect();
    let windows = start_indices
        .iter()
        .map(|&t| series.values.slice(s![t..t + cfg.length, ..]).to_owned())
        .collect();
    Ok(SubsequenceBatch {
        windows,
        start_indices,
    })
}
