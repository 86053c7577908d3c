//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavecal::autoencoder::{grad_total_loss, recon_loss, total_loss, Sample, SeparationScale};
use wavecal::calibration::{
    apply_action, predict_label, q_update, reward_acc, reward_sep, select_action, total_reward,
    Action, QTable,
};
use wavecal::eval::{proxy_labels, Confusion, ProxyLabel};
use wavecal::series::{fit_normalize, sliding_windows, NormStats};
use wavecal::stats::{nearest_rank, percentile};
use wavecal::synth::{inject, make_benchmark, schedule_anomalies, AnomalySpec, BenchmarkConfig};
use wavecal::wavelet::{band_lengths, coefficient_image, dwt_step, inverse_dwt_step};
use wavecal::{
    pipeline, ActionMode, Architecture, Boundary, DecompositionLevels, FilterBank, NetworkParams,
    RLParams, RunConfig, TimeSeries, WindowConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    out.detail = format!("{}; {:.2?}", out.detail, took);
    if let Some(limit) = limit {
        if took >= limit {
            out.pass = false;
            out.detail = format!("{} exceeds {:?}", out.detail, limit);
        }
    }
    out
}

fn dwt_correctness() -> Outcome {
    let bank = FilterBank::db1();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut recon, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..64 {
        let len = 2 * rng.random_range(1..=128);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (a, d) = dwt_step(&x, &bank).unwrap();
        let back = inverse_dwt_step(&a, &d, &bank).unwrap();
        for (u, v) in x.iter().zip(&back) {
            recon = recon.max((u - v).abs());
        }
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = a.iter().chain(&d).map(|v| v * v).sum();
        energy = energy.max((ex - ec).abs());
    }
    Outcome::new(
        recon <= 1e-9 && energy <= 1e-9,
        format!("max reconstruction error {recon:.2e}, max energy gap {energy:.2e}"),
    )
}

fn gradient_correctness() -> Outcome {
    let arch = Architecture {
        input_rows: 2,
        input_cols: 2,
        filters: [1, 1],
        kernel: 3,
        stride: 2,
        latent_dim: 2,
        dropout_rate: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let imgs: Vec<Array2<f64>> = (0..5)
        .map(|_| Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let batch: Vec<Sample> = imgs
        .iter()
        .enumerate()
        .map(|(i, im)| Sample {
            image: im,
            label: u8::from(i >= 3),
        })
        .collect();
    let mut params = NetworkParams::init(arch, 5).unwrap();
    let l = params.layout().clone();
    for r in [l.enc_conv1_b, l.enc_conv2_b, l.dec_dense_b, l.dec_tconv1_b] {
        params.data[r].iter_mut().for_each(|b| *b = 2.0);
    }
    let (eta, h) = (0.3, 1e-5);
    let mut worst = 0.0f64;
    for scale in [SeparationScale::Normalized, SeparationScale::Raw] {
        let analytic = grad_total_loss::<ChaCha8Rng>(&params, &batch, eta, scale, None).unwrap();
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.data[i] += h;
            let mut minus = params.clone();
            minus.data[i] -= h;
            let fd = (total_loss(&plus, &batch, eta, scale).unwrap()
                - total_loss(&minus, &batch, eta, scale).unwrap())
                / (2.0 * h);
            let a = analytic.grad[i];
            let denom = a.abs().max(fd.abs());
            let rel = if denom < 1e-8 {
                (a - fd).abs()
            } else {
                (a - fd).abs() / denom
            };
            worst = worst.max(rel);
        }
    }
    Outcome::new(
        worst < 1e-4,
        format!(
            "{} parameters, max relative deviation {worst:.2e}",
            params.len()
        ),
    )
}

/// Deterministic MDP: `(next state, reward)` for each state and action.
const MDP: [[(usize, f64); 2]; 2] = [[(0, 0.0), (1, 1.0)], [(0, 2.0), (1, 0.5)]];

fn value_iteration(gamma: f64) -> [[f64; 2]; 2] {
    let mut q = [[0.0f64; 2]; 2];
    loop {
        let mut next = q;
        for s in 0..2 {
            for a in 0..2 {
                let (s2, r) = MDP[s][a];
                next[s][a] = r + gamma * q[s2][0].max(q[s2][1]);
            }
        }
        let gap = (0..4)
            .map(|i| (next[i / 2][i % 2] - q[i / 2][i % 2]).abs())
            .fold(0.0, f64::max);
        q = next;
        if gap < 1e-13 {
            return q;
        }
    }
}

fn q_learning_oracle() -> Outcome {
    let p = RLParams::default();
    let oracle = value_iteration(p.gamma);
    let mut q = QTable::zeros(2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = 0;
    for _ in 0..400_000 {
        let a = select_action(&q, s, 1.0, &mut rng);
        let (s2, r) = MDP[s][a];
        q_update(&mut q, s, a, r, Some(s2), p.alpha, p.gamma);
        s = s2;
    }
    let worst = (0..4)
        .map(|i| (q.get(i / 2, i % 2) - oracle[i / 2][i % 2]).abs())
        .fold(0.0f64, f64::max);
    let policy_ok = (0..2).all(|s| {
        let best = if oracle[s][1] > oracle[s][0] { 1 } else { 0 };
        q.argmax(s) == best
    });
    Outcome::new(
        worst < 1e-3 && policy_ok,
        format!(
            "max |Q - Q*| {worst:.2e}, greedy policy {}",
            if policy_ok { "matches" } else { "differs" }
        ),
    )
}

fn reward_trend(run: &pipeline::RunOutputs) -> Outcome {
    let rewards: Vec<f64> = run
        .calibration
        .episodes
        .iter()
        .map(|e| e.cumulative_reward)
        .collect();
    let n = rewards.len();
    if n < 200 {
        return Outcome::new(false, format!("only {n} episodes"));
    }
    let first = rewards[..100].iter().sum::<f64>() / 100.0;
    let last = rewards[n - 100..].iter().sum::<f64>() / 100.0;
    Outcome::new(
        last > first,
        format!("first-100 mean {first:.3}, last-100 mean {last:.3}"),
    )
}

fn detection_floor(run: &pipeline::RunOutputs) -> Outcome {
    let r = &run.report;
    let (p, b) = (r.proposed.metrics.f1, r.baseline.metrics.f1);
    Outcome::new(
        p >= 0.85 && p > b,
        format!(
            "proposed F1 {p:.4}, baseline F1 {b:.4} on {} held-out windows",
            r.windows_evaluated
        ),
    )
}

fn run_cli(out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_wavecal"))
        .arg("--out")
        .arg(out)
        .arg("run")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if !run_cli(a.path()) || !run_cli(b.path()) {
        return Outcome::new(false, "`wavecal run` failed");
    }
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.path().join(n)).ok() != std::fs::read(b.path().join(n)).ok())
        .collect();
    Outcome::new(
        differing.is_empty() && names.iter().any(|n| n == "report.json"),
        if differing.is_empty() {
            format!("{} files byte-identical", names.len())
        } else {
            format!("differ: {differing:?}")
        },
    )
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Literal rules and worked examples, each checked against an independent
/// computation.
fn unit_contracts() -> Outcome {
    let mut failed: Vec<&str> = Vec::new();
    let mut total = 0;
    let mut check = |name: &'static str, ok: bool| {
        total += 1;
        if !ok {
            failed.push(name);
        }
    };
    let bank = FilterBank::db1();
    let s2 = std::f64::consts::SQRT_2;

    let col = TimeSeries::new(
        Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 3.0]).unwrap(),
        vec!["x".into()],
    )
    .unwrap();
    let (z, stats) = fit_normalize(&col);
    let sd = (2.0f64 / 3.0).sqrt();
    check(
        "z-score stats",
        close(stats.mean[0], 2.0, 1e-12) && close(stats.std[0], sd, 1e-12),
    );
    check(
        "z-score values",
        (0..3).all(|i| close(z.values[[i, 0]], (i as f64 + 1.0 - 2.0) / sd, 1e-12)),
    );
    let again = NormStats::fit(&z).apply(&z).unwrap();
    check(
        "z-score idempotent",
        (0..3).all(|i| close(again.values[[i, 0]], z.values[[i, 0]], 1e-12)),
    );

    let series = TimeSeries::new(Array2::zeros((20, 1)), vec!["x".into()]).unwrap();
    let batch = sliding_windows(&series, WindowConfig::new(10, 2).unwrap()).unwrap();
    let starts: Vec<usize> = (0..batch.len()).map(|n| batch.start_time(n)).collect();
    check("window starts", starts == [1, 3, 5, 7, 9, 11]);

    let brute = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let h = [1.0 / s2, 1.0 / s2];
        let g = [1.0 / s2, -1.0 / s2];
        (0..x.len() / 2)
            .map(|n| {
                (
                    h[0] * x[2 * n] + h[1] * x[2 * n + 1],
                    g[0] * x[2 * n] + g[1] * x[2 * n + 1],
                )
            })
            .unzip()
    };
    let (a, d) = dwt_step(&[1.0, 2.0, 3.0, 4.0], &bank).unwrap();
    let (ba, bd) = brute(&[1.0, 2.0, 3.0, 4.0]);
    check(
        "db1 step",
        a.iter()
            .zip(&ba)
            .chain(d.iter().zip(&bd))
            .all(|(u, v)| close(*u, *v, 1e-12))
            && close(a[0], 3.0 / s2, 1e-12)
            && close(d[1], -1.0 / s2, 1e-12),
    );
    let (a, d) = dwt_step(&[1.0, 2.0, 3.0], &bank).unwrap();
    let (ba, bd) = brute(&[1.0, 2.0, 3.0, 3.0]);
    check(
        "db1 odd length",
        a.len() == 2
            && a.iter()
                .zip(&ba)
                .chain(d.iter().zip(&bd))
                .all(|(u, v)| close(*u, *v, 1e-12)),
    );
    let back = inverse_dwt_step(
        &brute(&[1.0, 2.0, 3.0, 4.0]).0,
        &brute(&[1.0, 2.0, 3.0, 4.0]).1,
        &bank,
    )
    .unwrap();
    check(
        "db1 round trip",
        back.iter()
            .zip([1.0, 2.0, 3.0, 4.0])
            .all(|(u, v)| close(*u, v, 1e-9)),
    );
    check(
        "band lengths",
        band_lengths(10, DecompositionLevels(3)) == [2, 2, 3, 5],
    );
    let img =
        coefficient_image(Array2::zeros((10, 3)).view(), &bank, DecompositionLevels(3)).unwrap();
    check("image shape", img.shape() == (12, 3));

    let zeros = Array2::<f64>::zeros((10, 1));
    let cyc = inject(
        zeros.view(),
        &AnomalySpec::cyclic(vec![0], 2.0, 5),
        Some(&[1.0]),
    )
    .unwrap();
    check(
        "cyclic term",
        close(
            cyc.window[[1, 0]],
            2.0 * (2.0 * std::f64::consts::PI / 5.0).sin(),
            1e-12,
        ),
    );
    let sud = inject(
        zeros.view(),
        &AnomalySpec::sudden_drift(vec![0], 3.0, 4),
        Some(&[1.0]),
    )
    .unwrap();
    check(
        "sudden mean shift",
        close(
            sud.window.column(0).mean().unwrap(),
            3.0 * 6.0 / 10.0,
            1e-12,
        ),
    );
    let ramp = inject(
        zeros.view(),
        &AnomalySpec::gradual_drift(vec![0], 3.0, 4),
        Some(&[1.0]),
    )
    .unwrap();
    let expected = [0.0, 0.0, 0.0, 0.0, 0.0, 0.6, 1.2, 1.8, 2.4, 3.0];
    check(
        "gradual ramp",
        (0..10).all(|t| close(ramp.window[[t, 0]], expected[t], 1e-12)),
    );
    let cfg = BenchmarkConfig::default();
    let sched = schedule_anomalies(&cfg, 500, 5, &mut ChaCha8Rng::seed_from_u64(1));
    check("schedule count", sched.anomaly_count() == 50);

    let w = Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap();
    let w_hat = Array2::zeros((1, 2));
    check(
        "reconstruction loss",
        recon_loss([(&w, &w_hat)]).unwrap() == 1.0,
    );
    let ints: Vec<f64> = (1..=100).map(f64::from).collect();
    check("nearest rank 100", percentile(&ints, 75.0).unwrap() == 75.0);
    check(
        "nearest rank 4",
        nearest_rank(4, 75.0) == 3 && percentile(&[1.0, 2.0, 3.0, 4.0], 75.0).unwrap() == 3.0,
    );

    check("threshold below", predict_label(0.3, 0.5) == 0);
    check("threshold equal is normal", predict_label(0.5, 0.5) == 0);
    check("threshold above", predict_label(0.6, 0.5) == 1);
    let mu0: [&[f64]; 1] = [&[0.0, 0.0, 0.0]];
    let mu1: [&[f64]; 1] = [&[3.0, 4.0, 0.0]];
    check("separation reward", reward_sep(&mu0, &mu1).unwrap() == 25.0);
    check(
        "accuracy reward",
        reward_acc(1, 1) == 1.0
            && reward_acc(0, 1) == -1.0
            && reward_acc(0, 0) == 1.0
            && reward_acc(1, 0) == -1.0,
    );
    check("total reward", total_reward(25.0, 1.0, 1.0).total == 26.0);
    let mut q = QTable::zeros(2, 2);
    q_update(&mut q, 0, 0, 1.0, None, 0.01, 0.95);
    check("q update from zero", close(q.get(0, 0), 0.01, 1e-15));
    let mut q = QTable::zeros(2, 2);
    q.set(1, 0, 0.5);
    q.set(1, 1, 0.2);
    q_update(&mut q, 0, 0, 0.0, Some(1), 0.1, 0.95);
    check(
        "q update bootstrap",
        close(q.get(0, 0), 0.1 * 0.95 * 0.5, 1e-15),
    );
    let b = apply_action(
        Boundary::new(0.5, 10.0),
        Action::Raise,
        ActionMode::Boundary,
        0.01,
    )
    .unwrap();
    check("boundary step", close(b.theta, 0.51, 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = QTable::zeros(1, 2);
    let draws = 10_000;
    let ones = (0..draws)
        .filter(|_| select_action(&q, 0, 1.0, &mut rng) == 1)
        .count() as f64;
    let sigma = (draws as f64 * 0.25).sqrt();
    check(
        "uniform exploration",
        (ones - draws as f64 / 2.0).abs() <= 3.0 * sigma,
    );

    let p = RLParams::default();
    check(
        "learning defaults",
        p.alpha == 0.01
            && p.gamma == 0.95
            && p.epsilon == 0.1
            && p.epsilon_decay == 0.99
            && p.theta0 == 0.5
            && p.lambda == 1.0
            && p.episodes == 1000,
    );
    check(
        "epsilon schedule",
        (0..50).all(|k| close(p.epsilon_at(k), 0.1 * 0.99f64.powi(k as i32), 1e-15)),
    );

    let m = Confusion {
        tp: 2,
        fp: 1,
        fn_: 1,
        tn: 6,
    }
    .metrics();
    check(
        "metrics arithmetic",
        close(m.precision, 2.0 / 3.0, 1e-12)
            && close(m.recall, 2.0 / 3.0, 1e-12)
            && close(m.accuracy, 0.8, 1e-12)
            && close(m.f1, 2.0 / 3.0, 1e-12),
    );
    let proxy = proxy_labels(
        &[0.1, 0.1, 0.1],
        &[0.1, 0.1, 9.0],
        &[true, false, false],
        1.0,
        1.0,
    )
    .unwrap();
    check(
        "proxy labels",
        proxy
            == [
                ProxyLabel::Abnormal,
                ProxyLabel::Normal,
                ProxyLabel::Abnormal,
            ],
    );

    Outcome::new(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{total} contracts hold")
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push((
        "1 wavelet transform",
        timed(Some(Duration::from_secs(1)), dwt_correctness),
    ));
    results.push((
        "2 objective gradients",
        timed(Some(Duration::from_secs(10)), gradient_correctness),
    ));
    results.push((
        "3 q-learning oracle",
        timed(Some(Duration::from_secs(5)), q_learning_oracle),
    ));

    let start = Instant::now();
    let cfg = RunConfig::default().resolved();
    let run = make_benchmark(&cfg.synth).and_then(|b| pipeline::run(&cfg, &b.series, &b.schedule));
    let took = start.elapsed();
    match &run {
        Ok(run) => {
            results.push(("4 reward trend", reward_trend(run)));
            let mut floor = detection_floor(run);
            floor.detail = format!("{}; {:.2?}", floor.detail, took);
            if took >= Duration::from_secs(300) {
                floor.pass = false;
            }
            results.push(("5 detection quality", floor));
        }
        Err(e) => {
            results.push((
                "4 reward trend",
                Outcome::new(false, format!("pipeline failed: {e}")),
            ));
            results.push((
                "5 detection quality",
                Outcome::new(false, format!("pipeline failed: {e}")),
            ));
        }
    }
    results.push(("6 determinism", timed(None, determinism)));
    results.push(("7 unit contracts", timed(None, unit_contracts)));

    let mut ok = true;
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        ok &= o.pass;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
