use std::ops::Range;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{dense_backward, dense_forward, relu_backward_inplace, relu_inplace, ConvGeom};
use crate::error::{Error, Result};

/// Shape hyperparameters of the convolutional autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input image rows.
    pub input_rows: usize,
    /// Input image columns.
    pub input_cols: usize,
    /// Filters in the first and second encoder convolution.
    pub filters: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
    pub latent_dim: usize,
    pub dropout_rate: f64,
}

impl Architecture {
    /// 16 and 8 filters of 3x3, a 3-dimensional latent and latent dropout 0.5.
    pub fn for_input(rows: usize, cols: usize) -> Self {
        Self {
            input_rows: rows,
            input_cols: cols,
            filters: [16, 8],
            kernel: 3,
            stride: 2,
            latent_dim: 3,
            dropout_rate: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_rows == 0 || self.input_cols == 0 {
            return bad("input image must be non-empty".into());
        }
        if self.filters.contains(&0) || self.latent_dim == 0 || self.kernel == 0 || self.stride == 0
        {
            return bad(format!("degenerate architecture {self:?}"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn conv1(&self) -> ConvGeom {
        ConvGeom::same(
            1,
            self.input_rows,
            self.input_cols,
            self.filters[0],
            self.kernel,
            self.stride,
        )
    }

    pub fn conv2(&self) -> ConvGeom {
        let c1 = self.conv1();
        ConvGeom::same(
            c1.small_c,
            c1.small_h,
            c1.small_w,
            self.filters[1],
            self.kernel,
            self.stride,
        )
    }

    /// Length of the flattened second feature map.
    pub fn flat_len(&self) -> usize {
        self.conv2().small_len()
    }

    pub fn input_len(&self) -> usize {
        self.input_rows * self.input_cols
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Offsets of every parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub enc_conv1_w: Range<usize>,
    pub enc_conv1_b: Range<usize>,
    pub enc_conv2_w: Range<usize>,
    pub enc_conv2_b: Range<usize>,
    pub enc_dense_w: Range<usize>,
    pub enc_dense_b: Range<usize>,
    pub dec_dense_w: Range<usize>,
    pub dec_dense_b: Range<usize>,
    pub dec_tconv1_w: Range<usize>,
    pub dec_tconv1_b: Range<usize>,
    pub dec_tconv2_w: Range<usize>,
    pub dec_tconv2_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let c1 = arch.conv1();
        let c2 = arch.conv2();
        let flat = arch.flat_len();
        let z = arch.latent_dim;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let enc_conv1_w = take(c1.weight_len());
        let enc_conv1_b = take(c1.small_c);
        let enc_conv2_w = take(c2.weight_len());
        let enc_conv2_b = take(c2.small_c);
        let enc_dense_w = take(z * flat);
        let enc_dense_b = take(z);
        let dec_dense_w = take(flat * z);
        let dec_dense_b = take(flat);
        let dec_tconv1_w = take(c2.weight_len());
        let dec_tconv1_b = take(c2.big_c);
        let dec_tconv2_w = take(c1.weight_len());
        let dec_tconv2_b = take(c1.big_c);
        Self {
            enc_conv1_w,
            enc_conv1_b,
            enc_conv2_w,
            enc_conv2_b,
            enc_dense_w,
            enc_dense_b,
            dec_dense_w,
            dec_dense_b,
            dec_tconv1_w,
            dec_tconv1_b,
            dec_tconv2_w,
            dec_tconv2_b,
            total: at,
        }
    }

    /// Named tensors in storage order.
    pub fn tensors(&self) -> [(&'static str, Range<usize>); 12] {
        [
            ("encoder.conv1.weight", self.enc_conv1_w.clone()),
            ("encoder.conv1.bias", self.enc_conv1_b.clone()),
            ("encoder.conv2.weight", self.enc_conv2_w.clone()),
            ("encoder.conv2.bias", self.enc_conv2_b.clone()),
            ("encoder.dense.weight", self.enc_dense_w.clone()),
            ("encoder.dense.bias", self.enc_dense_b.clone()),
            ("decoder.dense.weight", self.dec_dense_w.clone()),
            ("decoder.dense.bias", self.dec_dense_b.clone()),
            ("decoder.tconv1.weight", self.dec_tconv1_w.clone()),
            ("decoder.tconv1.bias", self.dec_tconv1_b.clone()),
            ("decoder.tconv2.weight", self.dec_tconv2_w.clone()),
            ("decoder.tconv2.bias", self.dec_tconv2_b.clone()),
        ]
    }

    /// Encoder parameters occupy one contiguous prefix.
    pub fn encoder(&self) -> Range<usize> {
        0..self.enc_dense_b.end
    }

    pub fn decoder(&self) -> Range<usize> {
        self.dec_dense_w.start..self.total
    }

    /// Name of the tensor holding flat index `i`.
    pub fn name_of(&self, i: usize) -> &'static str {
        self.tensors()
            .into_iter()
            .find(|(_, r)| r.contains(&i))
            .map_or("unknown", |(n, _)| n)
    }
}

/// A point in latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint(pub Vec<f64>);

impl LatentPoint {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Reconstruction of one image and its squared Frobenius error.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub reconstruction: Array2<f64>,
    pub error: f64,
}

/// All weights and biases of the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub data: Vec<f64>,
    layout: Layout,
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub input: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    /// Latent before dropout.
    pub z: Vec<f64>,
    /// Inverted-dropout multipliers, when dropout was active.
    pub mask: Option<Vec<f64>>,
    /// Latent fed to the decoder.
    pub z_used: Vec<f64>,
    pub h: Vec<f64>,
    pub g1: Vec<f64>,
    pub out: Vec<f64>,
}

impl NetworkParams {
    /// He-normal weights and zero biases, drawn from `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut data = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c1 = arch.conv1();
        let c2 = arch.conv2();
        let k2 = arch.kernel * arch.kernel;
        let fans = [
            (layout.enc_conv1_w.clone(), c1.big_c * k2),
            (layout.enc_conv2_w.clone(), c2.big_c * k2),
            (layout.enc_dense_w.clone(), arch.flat_len()),
            (layout.dec_dense_w.clone(), arch.latent_dim),
            (layout.dec_tconv1_w.clone(), c2.small_c * k2),
            (layout.dec_tconv2_w.clone(), c1.small_c * k2),
        ];
        for (range, fan_in) in fans {
            let std = (2.0 / fan_in as f64).sqrt();
            for v in &mut data[range] {
                let n: f64 = rng.sample(StandardNormal);
                *v = std * n;
            }
        }
        Ok(Self { arch, data, layout })
    }

    pub fn from_data(arch: Architecture, data: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if data.len() != layout.total {
            return Err(Error::LengthMismatch(format!(
                "architecture needs {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: layout.name_of(i).into(),
            });
        }
        Ok(Self { arch, data, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.data[r.clone()]
    }

    pub(crate) fn check_image(&self, image: &Array2<f64>) -> Result<()> {
        let expected = (self.arch.input_rows, self.arch.input_cols);
        if image.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                found: image.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn flatten(image: &Array2<f64>) -> Vec<f64> {
        image.iter().copied().collect()
    }

    fn encode_trace(&self, input: Vec<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let (c1, c2) = (self.arch.conv1(), self.arch.conv2());
        let mut a1 = vec![0.0; c1.small_len()];
        c1.conv_forward(
            self.p(&l.enc_conv1_w),
            self.p(&l.enc_conv1_b),
            &input,
            &mut a1,
        );
        relu_inplace(&mut a1);
        let mut a2 = vec![0.0; c2.small_len()];
        c2.conv_forward(self.p(&l.enc_conv2_w), self.p(&l.enc_conv2_b), &a1, &mut a2);
        relu_inplace(&mut a2);
        let mut z = vec![0.0; self.arch.latent_dim];
        dense_forward(self.p(&l.enc_dense_w), self.p(&l.enc_dense_b), &a2, &mut z);
        (input, a1, a2, z)
    }

    fn decode_trace(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = &self.layout;
        let (c1, c2) = (self.arch.conv1(), self.arch.conv2());
        let mut h = vec![0.0; self.arch.flat_len()];
        dense_forward(self.p(&l.dec_dense_w), self.p(&l.dec_dense_b), z, &mut h);
        relu_inplace(&mut h);
        let mut g1 = vec![0.0; c2.big_len()];
        c2.tconv_forward(
            self.p(&l.dec_tconv1_w),
            self.p(&l.dec_tconv1_b),
            &h,
            &mut g1,
        );
        relu_inplace(&mut g1);
        let mut out = vec![0.0; c1.big_len()];
        c1.tconv_forward(
            self.p(&l.dec_tconv2_w),
            self.p(&l.dec_tconv2_b),
            &g1,
            &mut out,
        );
        (h, g1, out)
    }

    /// Inverted-dropout multipliers for the latent layer.
    pub(crate) fn dropout_mask<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let rate = self.arch.dropout_rate;
        let keep = 1.0 - rate;
        (0..self.arch.latent_dim)
            .map(|_| {
                if rate == 0.0 || rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub(crate) fn forward(&self, image: &Array2<f64>, mask: Option<Vec<f64>>) -> Trace {
        let (input, a1, a2, z) = self.encode_trace(Self::flatten(image));
        let z_used = match &mask {
            Some(m) => z.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => z.clone(),
        };
        let (h, g1, out) = self.decode_trace(&z_used);
        Trace {
            input,
            a1,
            a2,
            z,
            mask,
            z_used,
            h,
            g1,
            out,
        }
    }

    /// Deterministic encoding (dropout off).
    pub fn encode(&self, image: &Array2<f64>) -> Result<LatentPoint> {
        self.check_image(image)?;
        Ok(LatentPoint(self.encode_trace(Self::flatten(image)).3))
    }

    /// Encoding with latent inverted dropout drawn from `seed`.
    pub fn encode_with_dropout(&self, image: &Array2<f64>, seed: u64) -> Result<LatentPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.encode_masked(image, &mut rng)
    }

    pub(crate) fn encode_masked<R: Rng>(
        &self,
        image: &Array2<f64>,
        rng: &mut R,
    ) -> Result<LatentPoint> {
        self.check_image(image)?;
        let z = self.encode_trace(Self::flatten(image)).3;
        let mask = self.dropout_mask(rng);
        Ok(LatentPoint(
            z.iter().zip(&mask).map(|(a, b)| a * b).collect(),
        ))
    }

    pub fn decode(&self, z: &LatentPoint) -> Result<Array2<f64>> {
        if z.dim() != self.arch.latent_dim {
            return Err(Error::LengthMismatch(format!(
                "latent has {} entries, network expects {}",
                z.dim(),
                self.arch.latent_dim
            )));
        }
        if z.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "latent".into(),
            });
        }
        let out = self.decode_trace(&z.0).2;
        Ok(
            Array2::from_shape_vec((self.arch.input_rows, self.arch.input_cols), out)
                .expect("decoder output matches architecture"),
        )
    }

    /// `e = ‖w − ŵ‖²` with dropout off.
    pub fn recon_error(&self, image: &Array2<f64>) -> Result<ReconResult> {
        self.check_image(image)?;
        let trace = self.forward(image, None);
        let error = squared_distance(&trace.input, &trace.out);
        let reconstruction = Array2::from_shape_vec(image.dim(), trace.out)
            .expect("decoder output matches architecture");
        Ok(ReconResult {
            reconstruction,
            error,
        })
    }

    /// Backpropagates `dout` (gradient w.r.t. the reconstruction) and `dz`
    /// (extra gradient w.r.t. the pre-dropout latent) into `grad`.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        dout: &[f64],
        dz_extra: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let l = &self.layout;
        let (c1, c2) = (self.arch.conv1(), self.arch.conv2());
        let mut dz = vec![0.0; self.arch.latent_dim];

        if dout.iter().any(|&g| g != 0.0) {
            let mut dg1 = vec![0.0; trace.g1.len()];
            {
                let (dw, db) = split_pair(grad, &l.dec_tconv2_w, &l.dec_tconv2_b);
                c1.tconv_backward(
                    self.p(&l.dec_tconv2_w),
                    &trace.g1,
                    dout,
                    dw,
                    db,
                    Some(&mut dg1),
                );
            }
            relu_backward_inplace(&trace.g1, &mut dg1);
            let mut dh = vec![0.0; trace.h.len()];
            {
                let (dw, db) = split_pair(grad, &l.dec_tconv1_w, &l.dec_tconv1_b);
                c2.tconv_backward(
                    self.p(&l.dec_tconv1_w),
                    &trace.h,
                    &dg1,
                    dw,
                    db,
                    Some(&mut dh),
                );
            }
            relu_backward_inplace(&trace.h, &mut dh);
            let mut dz_used = vec![0.0; dz.len()];
            {
                let (dw, db) = split_pair(grad, &l.dec_dense_w, &l.dec_dense_b);
                dense_backward(
                    self.p(&l.dec_dense_w),
                    &trace.z_used,
                    &dh,
                    dw,
                    db,
                    Some(&mut dz_used),
                );
            }
            match &trace.mask {
                Some(m) => dz
                    .iter_mut()
                    .zip(dz_used.iter().zip(m))
                    .for_each(|(d, (g, k))| *d = g * k),
                None => dz.copy_from_slice(&dz_used),
            }
        }
        if let Some(extra) = dz_extra {
            dz.iter_mut().zip(extra).for_each(|(d, e)| *d += e);
        }
        if dz.iter().all(|&g| g == 0.0) {
            return;
        }

        let mut da2 = vec![0.0; trace.a2.len()];
        {
            let (dw, db) = split_pair(grad, &l.enc_dense_w, &l.enc_dense_b);
            dense_backward(
                self.p(&l.enc_dense_w),
                &trace.a2,
                &dz,
                dw,
                db,
                Some(&mut da2),
            );
        }
        relu_backward_inplace(&trace.a2, &mut da2);
        let mut da1 = vec![0.0; trace.a1.len()];
        {
            let (dw, db) = split_pair(grad, &l.enc_conv2_w, &l.enc_conv2_b);
            c2.conv_backward(
                self.p(&l.enc_conv2_w),
                &trace.a1,
                &da2,
                dw,
                db,
                Some(&mut da1),
            );
        }
        relu_backward_inplace(&trace.a1, &mut da1);
        let (dw, db) = split_pair(grad, &l.enc_conv1_w, &l.enc_conv1_b);
        c1.conv_backward(self.p(&l.enc_conv1_w), &trace.input, &da1, dw, db, None);
    }
}

/// Mutable views of a weight tensor and the bias that directly follows it.
fn split_pair<'a>(
    grad: &'a mut [f64],
    w: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `(1/N)·Σ ‖w_n − ŵ_n‖²`.
pub fn recon_loss<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a Array2<f64>, &'a Array2<f64>)>,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for (w, w_hat) in pairs {
        if w.dim() != w_hat.dim() {
            return Err(Error::ShapeMismatch {
                expected: w.dim(),
                found: w_hat.dim(),
            });
        }
        total += w
            .iter()
            .zip(w_hat.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(total / n as f64)
}
