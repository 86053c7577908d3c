//! The joint training objective and its analytic gradient.
//!
//! `L_total = L_recon − η·R_sep`, where `L_recon` is the mean squared
//! reconstruction error over the windows labelled normal and `R_sep` grows
//! with the distance `d² = ‖μ₀ − μ₁‖²` between the batch centroids of the
//! normal and the synthetic-anomaly latents. The centroids are taken on the
//! pre-dropout latents, so `R_sep` depends on encoder weights only.
//!
//! `R_sep = d²` itself is unbounded: minimizing `−η·d²` rewards inflating
//! the latent scale without limit. [`SeparationScale::Normalized`] divides
//! by the within-class scatter instead, which is invariant to that scale.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use super::network::{squared_distance, NetworkParams, Trace};
use crate::error::{Error, Result};

/// Form of the centroid-separation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparationScale {
    /// `d² = ‖μ₀ − μ₁‖²`.
    Raw,
    /// `d² / (d² + s²)` with `s²` the mean squared distance of each point
    /// to its own class centroid; lies in `[0, 1)`.
    Normalized,
}

/// Value of the separation term and its gradient with respect to each
/// latent point. `labels[i] == 0` marks the normal class.
pub fn separation_and_grad(
    latents: &[&[f64]],
    labels: &[u8],
    scale: SeparationScale,
) -> (f64, Vec<Vec<f64>>) {
    let dim = latents.first().map_or(0, |z| z.len());
    let zeros = || vec![vec![0.0; dim]; latents.len()];
    let mu0 = centroid(
        latents
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == 0)
            .map(|(z, _)| *z),
        dim,
    );
    let mu1 = centroid(
        latents
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y != 0)
            .map(|(z, _)| *z),
        dim,
    );
    let (Some(mu0), Some(mu1)) = (mu0, mu1) else {
        return (0.0, zeros());
    };
    let n0 = labels.iter().filter(|&&y| y == 0).count() as f64;
    let n1 = latents.len() as f64 - n0;
    let diff: Vec<f64> = mu0.iter().zip(&mu1).map(|(a, b)| a - b).collect();
    let d2: f64 = diff.iter().map(|d| d * d).sum();
    // ∂d²/∂z_n = +2(μ₀−μ₁)/N₀ for normal points, −2(μ₀−μ₁)/N₁ otherwise.
    let dd2 = |y: u8| -> Vec<f64> {
        let coef = if y == 0 { 2.0 / n0 } else { -2.0 / n1 };
        diff.iter().map(|d| coef * d).collect()
    };
    match scale {
        SeparationScale::Raw => (d2, labels.iter().map(|&y| dd2(y)).collect()),
        SeparationScale::Normalized => {
            let n = latents.len() as f64;
            let own = |y: u8| if y == 0 { &mu0 } else { &mu1 };
            let s2 = latents
                .iter()
                .zip(labels)
                .map(|(z, &y)| squared_distance(z, own(y)))
                .sum::<f64>()
                / n;
            let denom = d2 + s2;
            if denom <= 0.0 {
                return (0.0, zeros());
            }
            // ∂s²/∂z_n = 2(z_n − μ_c)/N; the centroid terms cancel.
            let grads = latents
                .iter()
                .zip(labels)
                .map(|(z, &y)| {
                    let mu = own(y);
                    dd2(y)
                        .iter()
                        .zip(z.iter().zip(mu))
                        .map(|(g, (zi, mi))| (s2 * g - d2 * 2.0 * (zi - mi) / n) / (denom * denom))
                        .collect()
                })
                .collect();
            (d2 / denom, grads)
        }
    }
}

/// One training image with its label (`1` = synthetic anomaly).
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub image: &'a Array2<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub grad: Vec<f64>,
    pub recon_loss: f64,
    pub separation: f64,
    pub total: f64,
}

fn first_non_finite(trace: &Trace) -> Option<&'static str> {
    let stages: [(&'static str, &[f64]); 6] = [
        ("encoder.conv1", &trace.a1),
        ("encoder.conv2", &trace.a2),
        ("encoder.dense", &trace.z),
        ("decoder.dense", &trace.h),
        ("decoder.tconv1", &trace.g1),
        ("decoder.tconv2", &trace.out),
    ];
    stages
        .into_iter()
        .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
        .map(|(name, _)| name)
}

fn centroid<'a>(points: impl Iterator<Item = &'a [f64]>, dim: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for p in points {
        sum.iter_mut().zip(p).for_each(|(s, v)| *s += v);
        n += 1;
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

/// Loss and gradient of the joint objective over `batch`.
///
/// `dropout` supplies the randomness for latent dropout masks; `None` runs
/// the network deterministically. With `eta == 0`, or a batch holding a
/// single class, the result is the pure reconstruction gradient.
pub fn grad_total_loss<R: Rng>(
    params: &NetworkParams,
    batch: &[Sample<'_>],
    eta: f64,
    scale: SeparationScale,
    dropout: Option<&mut R>,
) -> Result<LossGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!(
            "separation weight must be >= 0, got {eta}"
        )));
    }
    for s in batch {
        params.check_image(s.image)?;
    }
    let masks: Vec<Option<Vec<f64>>> = match dropout {
        Some(rng) => batch
            .iter()
            .map(|_| Some(params.dropout_mask(rng)))
            .collect(),
        None => vec![None; batch.len()],
    };
    let traces: Vec<Trace> = batch
        .par_iter()
        .zip(masks)
        .map(|(s, m)| params.forward(s.image, m))
        .collect();
    if let Some(layer) = traces.iter().find_map(first_non_finite) {
        return Err(Error::NonFinite {
            layer: layer.into(),
        });
    }

    let n_recon = batch.iter().filter(|s| s.label == 0).count();
    let recon_loss = if n_recon == 0 {
        0.0
    } else {
        batch
            .iter()
            .zip(&traces)
            .filter(|(s, _)| s.label == 0)
            .map(|(_, t)| squared_distance(&t.input, &t.out))
            .sum::<f64>()
            / n_recon as f64
    };

    let n0 = n_recon as f64;
    let latents: Vec<&[f64]> = traces.iter().map(|t| t.z.as_slice()).collect();
    let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
    let (separation, sep_grads) = separation_and_grad(&latents, &labels, scale);

    let separation_active = sep_grads.iter().any(|g| g.iter().any(|v| *v != 0.0));
    let grads: Vec<Vec<f64>> = batch
        .par_iter()
        .zip(&traces)
        .enumerate()
        .map(|(n, (s, t))| {
            let mut g = vec![0.0; params.len()];
            let dout: Vec<f64> = if s.label == 0 {
                t.out
                    .iter()
                    .zip(&t.input)
                    .map(|(o, x)| 2.0 * (o - x) / n0)
                    .collect()
            } else {
                vec![0.0; t.out.len()]
            };
            let dz: Option<Vec<f64>> = (eta > 0.0 && separation_active)
                .then(|| sep_grads[n].iter().map(|g| -eta * g).collect());
            params.backward(t, &dout, dz.as_deref(), &mut g);
            g
        })
        .collect();
    let mut grad = vec![0.0; params.len()];
    for g in &grads {
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: params.layout().name_of(i).into(),
        });
    }
    Ok(LossGradient {
        grad,
        recon_loss,
        separation,
        total: recon_loss - eta * separation,
    })
}

/// Loss only, without gradients and without dropout.
pub fn total_loss(
    params: &NetworkParams,
    batch: &[Sample<'_>],
    eta: f64,
    scale: SeparationScale,
) -> Result<f64> {
    grad_total_loss::<rand_chacha::ChaCha8Rng>(params, batch, eta, scale, None).map(|g| g.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type NoRng = ChaCha8Rng;

    fn tiny_arch() -> Architecture {
        Architecture {
            input_rows: 2,
            input_cols: 2,
            filters: [1, 1],
            kernel: 3,
            stride: 2,
            latent_dim: 2,
            dropout_rate: 0.5,
        }
    }

    fn images(seed: u64, n: usize, rows: usize, cols: usize) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn eta_zero_is_reconstruction_gradient() {
        let params = NetworkParams::init(Architecture::for_input(12, 3), 1).unwrap();
        let imgs = images(2, 6, 12, 3);
        let labelled: Vec<Sample> = imgs
            .iter()
            .enumerate()
            .map(|(i, im)| Sample {
                image: im,
                label: u8::from(i % 3 == 0),
            })
            .collect();
        let normals: Vec<Sample> = labelled.iter().copied().filter(|s| s.label == 0).collect();
        let joint =
            grad_total_loss::<NoRng>(&params, &labelled, 0.0, SeparationScale::Raw, None).unwrap();
        let recon =
            grad_total_loss::<NoRng>(&params, &normals, 0.0, SeparationScale::Raw, None).unwrap();
        assert_eq!(joint.grad, recon.grad);
        assert_eq!(joint.total, joint.recon_loss);
        assert!(joint.separation > 0.0);
    }

    #[test]
    fn separation_never_reaches_decoder() {
        let params = NetworkParams::init(Architecture::for_input(12, 3), 3).unwrap();
        let imgs = images(4, 8, 12, 3);
        let batch: Vec<Sample> = imgs
            .iter()
            .enumerate()
            .map(|(i, im)| Sample {
                image: im,
                label: u8::from(i % 2 == 0),
            })
            .collect();
        let with =
            grad_total_loss::<NoRng>(&params, &batch, 0.7, SeparationScale::Raw, None).unwrap();
        let without =
            grad_total_loss::<NoRng>(&params, &batch, 0.0, SeparationScale::Raw, None).unwrap();
        let dec = params.layout().decoder();
        // Exactly zero: the separation term's decoder gradient is identically zero.
        assert_eq!(with.grad[dec.clone()], without.grad[dec]);
        let enc = params.layout().encoder();
        assert_ne!(with.grad[enc.clone()], without.grad[enc]);
    }

    #[test]
    fn empty_batch_and_bad_eta() {
        let params = NetworkParams::init(tiny_arch(), 0).unwrap();
        assert!(matches!(
            grad_total_loss::<NoRng>(&params, &[], 0.1, SeparationScale::Raw, None),
            Err(Error::EmptyBatch)
        ));
        let img = Array2::zeros((2, 2));
        let batch = [Sample {
            image: &img,
            label: 0,
        }];
        assert!(
            grad_total_loss::<NoRng>(&params, &batch, -1.0, SeparationScale::Raw, None).is_err()
        );
        let wrong = Array2::zeros((3, 2));
        let batch = [Sample {
            image: &wrong,
            label: 0,
        }];
        assert!(matches!(
            grad_total_loss::<NoRng>(&params, &batch, 0.1, SeparationScale::Raw, None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_names_the_layer() {
        let mut params = NetworkParams::init(tiny_arch(), 0).unwrap();
        let r = params.layout().enc_conv2_b.clone();
        params.data[r][0] = f64::INFINITY;
        let img = Array2::from_elem((2, 2), 1.0);
        let batch = [Sample {
            image: &img,
            label: 0,
        }];
        match grad_total_loss::<NoRng>(&params, &batch, 0.1, SeparationScale::Raw, None) {
            Err(Error::NonFinite { layer }) => assert_eq!(layer, "encoder.conv2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Central differences with step 1e-5 against the analytic gradient.
    fn finite_difference_check(scale: SeparationScale) {
        let imgs = images(9, 4, 2, 2);
        let batch: Vec<Sample> = imgs
            .iter()
            .enumerate()
            .map(|(i, im)| Sample {
                image: im,
                label: u8::from(i >= 2),
            })
            .collect();
        let eta = 0.3;
        let mut params = NetworkParams::init(tiny_arch(), 5).unwrap();
        // Positive biases keep every ReLU of the 1-filter network active.
        for r in [
            params.layout().enc_conv1_b.clone(),
            params.layout().enc_conv2_b.clone(),
            params.layout().dec_dense_b.clone(),
            params.layout().dec_tconv1_b.clone(),
        ] {
            params.data[r].iter_mut().for_each(|b| *b = 2.0);
        }
        let analytic = grad_total_loss::<NoRng>(&params, &batch, eta, scale, None).unwrap();
        assert!(analytic.separation > 0.0);
        let h = 1e-5;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.data[i] += h;
            let mut minus = params.clone();
            minus.data[i] -= h;
            let fd = (total_loss(&plus, &batch, eta, scale).unwrap()
                - total_loss(&minus, &batch, eta, scale).unwrap())
                / (2.0 * h);
            let a = analytic.grad[i];
            let tol = 1e-4 * a.abs().max(fd.abs()) + 1e-9;
            assert!(
                (a - fd).abs() <= tol,
                "{} [{i}]: analytic {a}, numeric {fd}",
                params.layout().name_of(i)
            );
        }
    }

    #[test]
    fn finite_difference_check_raw_separation() {
        finite_difference_check(SeparationScale::Raw);
    }

    #[test]
    fn finite_difference_check_normalized_separation() {
        finite_difference_check(SeparationScale::Normalized);
    }

    #[test]
    fn normalized_separation_is_scale_free() {
        let pts = [[0.1, 2.0], [0.5, -1.0], [3.0, 0.2], [2.5, 1.5], [4.0, 0.0]];
        let labels = [0, 0, 1, 1, 1];
        let view = |c: f64| -> Vec<Vec<f64>> {
            pts.iter()
                .map(|p| p.iter().map(|v| v * c).collect())
                .collect()
        };
        let r = |c: f64| {
            let v = view(c);
            let refs: Vec<&[f64]> = v.iter().map(|p| p.as_slice()).collect();
            separation_and_grad(&refs, &labels, SeparationScale::Normalized).0
        };
        assert!((r(1.0) - r(1e3)).abs() < 1e-12);
        assert!(r(1.0) > 0.0 && r(1.0) < 1.0);
        let v = view(1.0);
        let refs: Vec<&[f64]> = v.iter().map(|p| p.as_slice()).collect();
        let (raw, _) = separation_and_grad(&refs, &labels, SeparationScale::Raw);
        let expected =
            (0.3f64 - 3.1666666666666665).powi(2) + (0.5f64 - 0.5666666666666667).powi(2);
        assert!((raw - expected).abs() < 1e-12);
        let (single, g) = separation_and_grad(&refs, &[0; 5], SeparationScale::Normalized);
        assert_eq!(single, 0.0);
        assert!(g.iter().flatten().all(|&x| x == 0.0));
    }
}
