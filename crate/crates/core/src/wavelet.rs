//! Discrete wavelet decomposition of windows into 2-D coefficient images.
//!
//! Each feature column of a window is decomposed independently into the
//! bands `[A_J, D_J, D_{J-1}, ..., D_1]`; the concatenated bands become one
//! column of the image. Analysis uses the correlation form
//! `A[n] = Σ_k h[k]·x[2n + k]`, `D[n] = Σ_k g[k]·x[2n + k]`, and signals that
//! run past their end are extended by half-sample symmetric reflection.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis filter pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub name: String,
    /// Low-pass taps.
    pub h: Vec<f64>,
    /// High-pass taps.
    pub g: Vec<f64>,
}

impl FilterBank {
    pub fn new(name: impl Into<String>, h: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if h.len() != g.len() || h.is_empty() || !h.len().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "filter taps must have equal even length, got {} and {}",
                h.len(),
                g.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            h,
            g,
        })
    }

    /// Daubechies 1 (Haar).
    pub fn db1() -> Self {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            name: "db1".into(),
            h: vec![c, c],
            g: vec![c, -c],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "db1" | "haar" => Ok(Self::db1()),
            other => Err(Error::Config(format!("unknown wavelet family {other:?}"))),
        }
    }

    pub fn taps(&self) -> usize {
        self.h.len()
    }
}

/// Number of decomposition levels `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecompositionLevels(pub usize);

impl DecompositionLevels {
    /// `floor(log2(len))`.
    pub fn max_for(len: usize) -> usize {
        if len == 0 {
            0
        } else {
            (usize::BITS - 1 - len.leading_zeros()) as usize
        }
    }

    pub fn check(self, len: usize) -> Result<()> {
        let max = Self::max_for(len);
        if self.0 == 0 || self.0 > max {
            return Err(Error::TooManyLevels {
                levels: self.0,
                max,
                len,
            });
        }
        Ok(())
    }
}

/// Band lengths `[A_J, D_J, ..., D_1]` for a signal of length `len`.
pub fn band_lengths(len: usize, levels: DecompositionLevels) -> Vec<usize> {
    let mut details = Vec::with_capacity(levels.0);
    let mut m = len;
    for _ in 0..levels.0 {
        m = m.div_ceil(2);
        details.push(m);
    }
    let mut out = Vec::with_capacity(levels.0 + 1);
    out.push(m);
    out.extend(details.iter().rev());
    out
}

#[inline]
fn reflect(x: &[f64], i: usize) -> f64 {
    let m = x.len();
    if i < m {
        return x[i];
    }
    // Half-sample symmetric: ... x[m-2], x[m-1] | x[m-1], x[m-2], ...
    let period = 2 * m;
    let j = i % period;
    if j < m {
        x[j]
    } else {
        x[period - 1 - j]
    }
}

/// One analysis step: low-pass and high-pass filtering followed by
/// downsampling by two. Both outputs have length `ceil(M / 2)`.
pub fn dwt_step(signal: &[f64], bank: &FilterBank) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = signal.len();
    if m < 2 {
        return Err(Error::SignalTooShort(m));
    }
    let half = m.div_ceil(2);
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for n in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for (k, (h, g)) in bank.h.iter().zip(&bank.g).enumerate() {
            let x = reflect(signal, 2 * n + k);
            a += h * x;
            d += g * x;
        }
        approx[n] = a;
        detail[n] = d;
    }
    Ok((approx, detail))
}

/// Synthesis step, the adjoint of [`dwt_step`] on even-length input.
/// Reconstruction is exact for two-tap orthonormal banks.
pub fn inverse_dwt_step(approx: &[f64], detail: &[f64], bank: &FilterBank) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(Error::LengthMismatch(format!(
            "approximation has {} coefficients, detail has {}",
            approx.len(),
            detail.len()
        )));
    }
    let len = 2 * approx.len();
    let mut out = vec![0.0; len];
    for (n, (a, d)) in approx.iter().zip(detail).enumerate() {
        for (k, (h, g)) in bank.h.iter().zip(&bank.g).enumerate() {
            out[(2 * n + k) % len] += h * a + g * d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandKind {
    Approximation,
    Detail,
}

/// One band of a multilevel decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub kind: BandKind,
    pub level: usize,
    pub coeffs: Vec<f64>,
}

impl Band {
    pub fn label(&self) -> String {
        match self.kind {
            BandKind::Approximation => format!("A{}", self.level),
            BandKind::Detail => format!("D{}", self.level),
        }
    }
}

/// Decomposes `signal` into `[A_J, D_J, D_{J-1}, ..., D_1]`.
pub fn multilevel_dwt(
    signal: &[f64],
    bank: &FilterBank,
    levels: DecompositionLevels,
) -> Result<Vec<Band>> {
    levels.check(signal.len())?;
    let mut details = Vec::with_capacity(levels.0);
    let mut current = signal.to_vec();
    for level in 1..=levels.0 {
        let (a, d) = dwt_step(&current, bank)?;
        details.push(Band {
            kind: BandKind::Detail,
            level,
            coeffs: d,
        });
        current = a;
    }
    let mut bands = Vec::with_capacity(levels.0 + 1);
    bands.push(Band {
        kind: BandKind::Approximation,
        level: levels.0,
        coeffs: current,
    });
    bands.extend(details.into_iter().rev());
    Ok(bands)
}

/// Identifies the band and in-band position a coefficient-image row holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub band: String,
    pub position: usize,
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.band, self.position)
    }
}

/// `R x D` image of stacked per-feature wavelet coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientImage {
    pub pixels: Array2<f64>,
    pub row_labels: Vec<RowLabel>,
}

impl CoefficientImage {
    pub fn shape(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        let header: Vec<String> = (0..self.pixels.ncols()).map(|d| format!("f{d}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in self.pixels.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_row_labels(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(&self.row_labels)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

fn column_bands(
    column: ArrayView1<'_, f64>,
    bank: &FilterBank,
    levels: DecompositionLevels,
) -> Result<Vec<Band>> {
    let signal: Vec<f64> = column.iter().copied().collect();
    multilevel_dwt(&signal, bank, levels)
}

/// Builds the coefficient image of an `L x D` window.
pub fn coefficient_image(
    window: ArrayView2<'_, f64>,
    bank: &FilterBank,
    levels: DecompositionLevels,
) -> Result<CoefficientImage> {
    let per_feature: Vec<Vec<Band>> = window
        .columns()
        .into_iter()
        .map(|col| column_bands(col, bank, levels))
        .collect::<Result<_>>()?;
    let rows = per_feature
        .iter()
        .map(|bands| bands.iter().map(|b| b.coeffs.len()).sum::<usize>())
        .max()
        .unwrap_or(0);
    let mut pixels = Array2::zeros((rows, window.ncols()));
    for (d, bands) in per_feature.iter().enumerate() {
        // Tail cells past this feature's length stay zero.
        for (r, v) in bands.iter().flat_map(|b| b.coeffs.iter()).enumerate() {
            pixels[[r, d]] = *v;
        }
    }
    let row_labels = per_feature
        .first()
        .map(|bands| {
            bands
                .iter()
                .flat_map(|b| {
                    (0..b.coeffs.len()).map(move |position| RowLabel {
                        band: b.label(),
                        position,
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(CoefficientImage { pixels, row_labels })
}
