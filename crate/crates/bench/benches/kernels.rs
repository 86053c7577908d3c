use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use wavecal::autoencoder::{grad_total_loss, mc_uncertainty, Sample, SeparationScale};
use wavecal::calibration::calibrate;
use wavecal::wavelet::coefficient_image;
use wavecal::{Architecture, DecompositionLevels, FilterBank, NetworkParams, RLParams};
use wavecal_bench::{calibration_points, window};

fn images(n: usize) -> Vec<Array2<f64>> {
    let bank = FilterBank::db1();
    (0..n)
        .map(|i| {
            coefficient_image(
                window(10, 5, i as u64).view(),
                &bank,
                DecompositionLevels(3),
            )
            .unwrap()
            .pixels
        })
        .collect()
}

fn wavelet(c: &mut Criterion) {
    let bank = FilterBank::db1();
    let w = window(10, 5, 1);
    c.bench_function("coefficient_image 10x5", |b| {
        b.iter(|| coefficient_image(black_box(w.view()), &bank, DecompositionLevels(3)).unwrap())
    });
}

fn autoencoder(c: &mut Criterion) {
    let imgs = images(16);
    let params = NetworkParams::init(Architecture::for_input(12, 5), 7).unwrap();
    c.bench_function("recon_error 12x5", |b| {
        b.iter(|| params.recon_error(black_box(&imgs[0])).unwrap())
    });
    let batch: Vec<Sample> = imgs
        .iter()
        .enumerate()
        .map(|(i, im)| Sample {
            image: im,
            label: u8::from(i % 4 == 0),
        })
        .collect();
    c.bench_function("grad_total_loss batch 16", |b| {
        b.iter(|| {
            grad_total_loss::<ChaCha8Rng>(
                &params,
                black_box(&batch),
                0.1,
                SeparationScale::Normalized,
                None,
            )
            .unwrap()
        })
    });
    c.bench_function("mc_uncertainty M=30", |b| {
        b.iter(|| mc_uncertainty(&params, black_box(&imgs[1]), 30, 3).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let points = calibration_points(1000);
    let params = RLParams {
        episodes: 20,
        ..RLParams::default()
    };
    c.bench_function("calibrate 1000 points x 20 episodes", |b| {
        b.iter(|| calibrate(black_box(&points), &params, 60.0, 13).unwrap())
    });
}

criterion_group!(kernels, wavelet, autoencoder, calibration);
criterion_main!(kernels);
