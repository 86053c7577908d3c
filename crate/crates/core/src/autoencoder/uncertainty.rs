use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::NetworkParams;
use crate::error::{Error, Result};
use crate::stats::{percentile, sample_std};

/// Spread of Monte-Carlo-dropout latent encodings for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub u: f64,
    pub samples: usize,
}

/// Runs `samples` dropout-on encodings and returns the mean over latent
/// dimensions of the per-dimension sample standard deviation.
pub fn mc_uncertainty(
    params: &NetworkParams,
    image: &Array2<f64>,
    samples: usize,
    seed: u64,
) -> Result<UncertaintyScore> {
    if samples < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            found: samples,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..samples)
        .map(|_| params.encode_masked(image, &mut rng).map(|z| z.0))
        .collect::<Result<_>>()?;
    let dim = params.arch.latent_dim;
    let u = (0..dim)
        .map(|k| {
            let column: Vec<f64> = draws.iter().map(|z| z[k]).collect();
            sample_std(&column)
        })
        .sum::<f64>()
        / dim as f64;
    Ok(UncertaintyScore { u, samples })
}

/// Indices of low- and high-uncertainty scores around the nearest-rank
/// 75th percentile. Ties with the threshold count as low.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySplit {
    pub threshold: f64,
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

impl UncertaintySplit {
    pub fn is_high(&self, u: f64) -> bool {
        u > self.threshold
    }
}

pub const UNCERTAINTY_PERCENTILE: f64 = 75.0;

pub fn split_by_uncertainty(scores: &[f64]) -> Result<UncertaintySplit> {
    if scores.len() < 4 {
        return Err(Error::TooFewValues {
            needed: 4,
            found: scores.len(),
        });
    }
    let threshold = percentile(scores, UNCERTAINTY_PERCENTILE)?;
    let (high, low): (Vec<usize>, Vec<usize>) =
        (0..scores.len()).partition(|&i| scores[i] > threshold);
    Ok(UncertaintySplit {
        threshold,
        low,
        high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::Architecture;

    fn image() -> Array2<f64> {
        Array2::from_shape_fn((12, 5), |(r, c)| ((r * 5 + c) as f64 * 0.37).sin())
    }

    #[test]
    fn no_dropout_no_uncertainty() {
        let arch = Architecture {
            dropout_rate: 0.0,
            ..Architecture::for_input(12, 5)
        };
        let params = NetworkParams::init(arch, 3).unwrap();
        assert_eq!(mc_uncertainty(&params, &image(), 30, 1).unwrap().u, 0.0);
    }

    #[test]
    fn seeded_and_positive() {
        let params = NetworkParams::init(Architecture::for_input(12, 5), 3).unwrap();
        let a = mc_uncertainty(&params, &image(), 30, 8).unwrap();
        let b = mc_uncertainty(&params, &image(), 30, 8).unwrap();
        assert_eq!(a.u.to_bits(), b.u.to_bits());
        assert!(a.u > 0.0);
        assert_eq!(a.samples, 30);
    }

    #[test]
    fn needs_two_samples() {
        let params = NetworkParams::init(Architecture::for_input(12, 5), 3).unwrap();
        assert!(mc_uncertainty(&params, &image(), 1, 0).is_err());
    }

    #[test]
    fn split_one_to_hundred() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = split_by_uncertainty(&scores).unwrap();
        assert_eq!(s.threshold, 75.0);
        let high: Vec<f64> = s.high.iter().map(|&i| scores[i]).collect();
        assert_eq!(high, (76..=100).map(f64::from).collect::<Vec<_>>());
        assert_eq!(s.low.len(), 75);
    }

    #[test]
    fn split_ties_and_small() {
        let s = split_by_uncertainty(&[0.2; 9]).unwrap();
        assert!(s.high.is_empty());
        let s = split_by_uncertainty(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.threshold, 3.0);
        assert_eq!(s.high, vec![3]);
        assert!(split_by_uncertainty(&[1.0, 2.0, 3.0]).is_err());
    }
}
