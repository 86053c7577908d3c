use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use wavecal::autoencoder::Checkpoint;
use wavecal::eval::{write_detections_csv, write_latent_csv, write_reward_csv, ErrorHistogram};
use wavecal::pipeline::{self, BoundaryFile, EpochLog, Prepared, Scores};
use wavecal::series::load_csv;
use wavecal::synth::{make_benchmark, schedule_for_series, AnomalySchedule};
use wavecal::{DetectionReport, Error, NetworkParams, Result, RunConfig, TimeSeries};

use crate::Cli;

const HISTOGRAM_BINS: usize = 40;

pub struct Context {
    cfg: RunConfig,
    out: PathBuf,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed_data {
            cfg.seeds.data = s;
        }
        if let Some(s) = cli.seed_train {
            cfg.seeds.train = s;
        }
        if let Some(s) = cli.seed_rl {
            cfg.seeds.rl = s;
        }
        let cfg = cfg.resolved();
        cfg.validate()?;
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.paths.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn series_path(&self) -> PathBuf {
        self.cfg
            .paths
            .input
            .clone()
            .unwrap_or_else(|| self.path("series.csv"))
    }

    fn labels_path(&self) -> PathBuf {
        self.cfg
            .paths
            .labels
            .clone()
            .unwrap_or_else(|| self.path("labels.json"))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.path("checkpoint.json")
    }

    pub fn generate(&self) -> Result<()> {
        let bench = make_benchmark(&self.cfg.synth)?;
        bench.series.write_csv(self.path("series.csv"))?;
        bench.schedule.write_json(self.path("labels.json"))?;
        println!(
            "generated {} rows x {} features, {} anomalous windows",
            bench.series.len(),
            bench.series.dim(),
            bench.schedule.anomaly_count()
        );
        Ok(())
    }

    /// Loads the series and its schedule. Without a schedule file (and none
    /// configured) anomalies are scheduled from `seeds.data` and saved.
    fn inputs(&self) -> Result<(TimeSeries, AnomalySchedule)> {
        let series = load_csv(self.series_path())?;
        let labels = self.labels_path();
        let schedule = if labels.exists() || self.cfg.paths.labels.is_some() {
            AnomalySchedule::read_json(&labels)?
        } else {
            let schedule = schedule_for_series(&self.cfg.synth, &series)?;
            schedule.write_json(&labels)?;
            eprintln!(
                "scheduled {} anomalous windows into {}",
                schedule.anomaly_count(),
                labels.display()
            );
            schedule
        };
        Ok((series, schedule))
    }

    fn prepared(&self) -> Result<Prepared> {
        let (series, schedule) = self.inputs()?;
        pipeline::prepare(&self.cfg, &series, &schedule)
    }

    /// An existing checkpoint is kept when it was trained with the same
    /// architecture, seed, settings and normalization, and is newer than
    /// the series and schedule files.
    fn checkpoint_current(&self, data: &Prepared) -> bool {
        let Ok(ckpt) = Checkpoint::load(self.checkpoint_path()) else {
            return false;
        };
        let (rows, cols) = data.image_shape();
        let same = ckpt.architecture == self.cfg.network.architecture(rows, cols)
            && ckpt.train_seed == self.cfg.seeds.train
            && ckpt.train_config.as_ref() == Some(&self.cfg.train)
            && ckpt.norm_stats.as_ref() == Some(&data.norm);
        let stamp = modified(&self.checkpoint_path());
        same && stamp.is_some()
            && [self.series_path(), self.labels_path()]
                .iter()
                .all(|p| modified(p).is_some_and(|t| t <= stamp.unwrap()))
    }

    fn save_training(
        &self,
        data: &Prepared,
        params: &NetworkParams,
        log: &[EpochLog],
    ) -> Result<()> {
        Checkpoint::new(params, self.cfg.seeds.train, Some(data.norm.clone()))
            .with_train_config(self.cfg.train.clone())
            .save(self.checkpoint_path())?;
        write_jsonl(&self.path("train_log.jsonl"), log)
    }

    pub fn train(&self) -> Result<()> {
        let data = self.prepared()?;
        if self.checkpoint_current(&data) {
            println!("checkpoint up to date, skipping training");
            return Ok(());
        }
        if self.cfg.interleave_episodes > 0 {
            eprintln!("note: interleaved calibration only carries over within `run`; `calibrate` starts afresh");
        }
        let trained = pipeline::train(&self.cfg, &data)?;
        self.save_training(&data, &trained.params, &trained.log)?;
        if let Some(last) = trained.log.last() {
            println!(
                "trained {} epochs: recon {:.6}, separation {:.6}",
                trained.log.len(),
                last.recon,
                last.separation
            );
        }
        Ok(())
    }

    fn params(&self, data: &Prepared) -> Result<NetworkParams> {
        let ckpt = Checkpoint::load(self.checkpoint_path())?;
        let (rows, cols) = data.image_shape();
        if ckpt.architecture.input_rows != rows || ckpt.architecture.input_cols != cols {
            return Err(Error::Config(format!(
                "checkpoint expects {}x{} images, data gives {rows}x{cols}",
                ckpt.architecture.input_rows, ckpt.architecture.input_cols
            )));
        }
        ckpt.params()
    }

    pub fn calibrate(&self) -> Result<()> {
        let data = self.prepared()?;
        let params = self.params(&data)?;
        let scores = pipeline::score(&self.cfg, &params, &data, data.train_range())?;
        let (result, boundary) = pipeline::calibrate_boundary(&self.cfg, &data, &scores, None)?;
        boundary.save(self.path("boundary.json"))?;
        result.write_jsonl(self.path("calibration_log.jsonl"))?;
        write_reward_csv(self.path("reward_curve.csv"), &result.episodes)?;
        println!(
            "boundary theta {:.6} (theta0 {:.6}, max {:.6})",
            boundary.theta, boundary.theta0, boundary.theta_max
        );
        Ok(())
    }

    fn all_scores(&self, data: &Prepared) -> Result<(Scores, BoundaryFile)> {
        let params = self.params(data)?;
        let boundary = BoundaryFile::load(self.path("boundary.json"))?;
        let scores = pipeline::score(&self.cfg, &params, data, 0..data.images.len())?;
        Ok((scores, boundary))
    }

    fn write_detections(
        &self,
        data: &Prepared,
        scores: &Scores,
        boundary: &BoundaryFile,
    ) -> Result<usize> {
        let predicted = pipeline::detect_scored(scores, boundary);
        let errors: Vec<f64> = scores
            .errors
            .iter()
            .map(|e| e / boundary.error_scale)
            .collect();
        write_detections_csv(
            self.path("detections.csv"),
            &data.start_times,
            data.n_train,
            &errors,
            &scores.uncertainties,
            &predicted,
        )?;
        Ok(predicted.iter().filter(|&&p| p == 1).count())
    }

    pub fn detect(&self) -> Result<()> {
        let data = self.prepared()?;
        let (scores, boundary) = self.all_scores(&data)?;
        let flagged = self.write_detections(&data, &scores, &boundary)?;
        println!("flagged {flagged} of {} windows", data.images.len());
        Ok(())
    }

    fn write_evaluation(
        &self,
        data: &Prepared,
        scores: &Scores,
        report: &DetectionReport,
    ) -> Result<()> {
        report.write_json(self.path("report.json"))?;
        let synthetic: Vec<bool> = data.labels.iter().map(|&y| y == 1).collect();
        write_latent_csv(
            self.path("latent.csv"),
            &scores.latents,
            &data.labels,
            &synthetic,
        )?;
        let errors: Vec<f64> = report.records.iter().map(|r| r.error).collect();
        ErrorHistogram::new(&errors, &data.labels, HISTOGRAM_BINS, report.proposed.theta)
            .write_csv(self.path("error_hist.csv"))?;
        print_summary(report);
        Ok(())
    }

    pub fn evaluate(&self) -> Result<()> {
        let data = self.prepared()?;
        let (scores, boundary) = self.all_scores(&data)?;
        let report = pipeline::evaluate(&self.cfg, &data, &scores, &boundary)?;
        self.write_evaluation(&data, &scores, &report)
    }

    /// Generates the benchmark unless an input series is configured, then
    /// trains, calibrates, detects and evaluates without touching disk in
    /// between.
    pub fn run(&self) -> Result<()> {
        let (series, schedule) = if self.cfg.paths.input.is_none() {
            let bench = make_benchmark(&self.cfg.synth)?;
            bench.series.write_csv(self.path("series.csv"))?;
            bench.schedule.write_json(self.path("labels.json"))?;
            (bench.series, bench.schedule)
        } else {
            self.inputs()?
        };
        let out = pipeline::run(&self.cfg, &series, &schedule)?;
        let mut echo = self.cfg.to_json_pretty();
        echo.push('\n');
        let config_path = self.path("config.json");
        fs::write(&config_path, echo).map_err(|e| Error::io(&config_path, e))?;
        self.save_training(&out.data, &out.trained.params, &out.trained.log)?;
        out.boundary.save(self.path("boundary.json"))?;
        out.calibration
            .write_jsonl(self.path("calibration_log.jsonl"))?;
        write_reward_csv(self.path("reward_curve.csv"), &out.calibration.episodes)?;
        self.write_detections(&out.data, &out.scores, &out.boundary)?;
        self.write_evaluation(&out.data, &out.scores, &out.report)
    }
}

fn modified(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn print_summary(report: &DetectionReport) {
    for (name, s) in [
        ("proposed", &report.proposed),
        ("baseline", &report.baseline),
    ] {
        let c = &s.confusion;
        println!(
            "{name:<8} theta {:>10.4}  precision {:.4}  recall {:.4}  f1 {:.4}  (tp {} fp {} fn {} tn {})",
            s.theta, s.metrics.precision, s.metrics.recall, s.metrics.f1, c.tp, c.fp, c.fn_, c.tn
        );
    }
}
