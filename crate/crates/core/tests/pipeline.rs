use wavecal::pipeline::{self, prepare};
use wavecal::synth::make_benchmark;
use wavecal::RunConfig;

fn small() -> RunConfig {
    let mut cfg = RunConfig::from_json_str(
        r#"{"synth": {"length": 400}, "train": {"epochs": 3}, "rl": {"episodes": 20}, "mc_samples": 4}"#,
    )
    .unwrap()
    .resolved();
    cfg.seeds.train = 11;
    cfg
}

#[test]
fn full_run_is_bit_reproducible() {
    let cfg = small();
    let bench = make_benchmark(&cfg.synth).unwrap();
    let a = pipeline::run(&cfg, &bench.series, &bench.schedule).unwrap();
    let b = pipeline::run(&cfg, &bench.series, &bench.schedule).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.boundary, b.boundary);
    assert_eq!(a.report, b.report);
    assert_eq!(a.calibration.episodes.len(), 20);
}

#[test]
fn normalization_ignores_held_out_rows() {
    let cfg = small();
    let bench = make_benchmark(&cfg.synth).unwrap();
    let base = prepare(&cfg, &bench.series, &bench.schedule).unwrap();
    let mut shifted = bench.series.clone();
    let rows = shifted.len();
    for t in rows - 50..rows {
        shifted.values.row_mut(t).mapv_inplace(|v| v + 1e3);
    }
    let moved = prepare(&cfg, &shifted, &bench.schedule).unwrap();
    assert_eq!(base.norm, moved.norm);
    assert_eq!(base.n_train, moved.n_train);
    let n = base.images.len();
    assert_eq!(base.n_train, (0.7 * n as f64).round() as usize);
    assert_eq!(base.images[..base.n_train], moved.images[..base.n_train]);
}

#[test]
fn mismatched_schedule_window_is_rejected() {
    let cfg = small();
    let bench = make_benchmark(&cfg.synth).unwrap();
    let mut other = cfg.clone();
    other.window.stride = 3;
    assert!(prepare(&other, &bench.series, &bench.schedule)
        .unwrap_err()
        .is_config());
}

#[test]
fn interleaved_calibration_runs_the_configured_episodes() {
    let mut cfg = small();
    cfg.interleave_episodes = 4;
    let bench = make_benchmark(&cfg.synth).unwrap();
    let out = pipeline::run(&cfg, &bench.series, &bench.schedule).unwrap();
    let eps: Vec<f64> = out.calibration.episodes.iter().map(|e| e.epsilon).collect();
    assert_eq!(eps.len(), 20);
    for (k, e) in eps.iter().enumerate() {
        assert!((e - 0.1 * 0.99f64.powi(k as i32)).abs() < 1e-15);
    }
}

#[test]
fn scores_cover_held_out_windows_in_report() {
    let cfg = small();
    let bench = make_benchmark(&cfg.synth).unwrap();
    let out = pipeline::run(&cfg, &bench.series, &bench.schedule).unwrap();
    let held = out.data.held_out_range();
    assert_eq!(out.report.windows_evaluated, held.len());
    let c = out.report.proposed.confusion;
    assert_eq!(c.total(), held.len());
    let positives = out.data.labels[held].iter().filter(|&&y| y == 1).count();
    assert_eq!(c.tp + c.fn_, positives);
}
