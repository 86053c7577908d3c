//! Tabular Q-learning calibration of the anomaly decision boundary.
//!
//! States discretize each window by its normalized reconstruction error
//! (decile bins of the calibration set) and its Monte-Carlo-dropout
//! uncertainty (below/above the 75th percentile). In `classify` mode the
//! agent's action is the predicted label itself; in `boundary` mode the
//! action nudges the threshold by `−δ`, `0` or `+δ` and the label follows
//! from `e > θ`. Each step is rewarded with `λ·R_sep + R_acc`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::autoencoder::SeparationScale;
use crate::error::{Error, Result};
use crate::stats::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Classify,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    PredictNormal,
    PredictAbnormal,
    Lower,
    Hold,
    Raise,
}

impl ActionMode {
    /// Action set in table-column order.
    pub fn actions(self) -> &'static [Action] {
        match self {
            ActionMode::Classify => &[Action::PredictNormal, Action::PredictAbnormal],
            ActionMode::Boundary => &[Action::Lower, Action::Hold, Action::Raise],
        }
    }
}

/// Agent hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RLParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub theta0: f64,
    /// When set, `θ₀` is this percentile of the normal-window errors instead.
    pub theta0_quantile: Option<f64>,
    pub lambda: f64,
    pub episodes: usize,
    pub action_mode: ActionMode,
    pub delta: f64,
    pub error_bins: usize,
    pub separation_scale: SeparationScale,
    /// Relabel high-uncertainty windows as abnormal.
    pub label_high_uncertainty: bool,
}

impl Default for RLParams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            gamma: 0.95,
            epsilon: 0.1,
            epsilon_decay: 0.99,
            theta0: 0.5,
            theta0_quantile: None,
            lambda: 1.0,
            episodes: 1000,
            action_mode: ActionMode::Classify,
            delta: 0.01,
            error_bins: 10,
            separation_scale: SeparationScale::Normalized,
            label_high_uncertainty: true,
        }
    }
}

impl RLParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay) {
            return bad(format!(
                "epsilon decay {} outside [0, 1]",
                self.epsilon_decay
            ));
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            return bad(format!("delta {} must be positive", self.delta));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if self.error_bins == 0 {
            return bad("need at least one error bin".into());
        }
        if let Some(q) = self.theta0_quantile {
            if !(0.0..=100.0).contains(&q) {
                return bad(format!("theta0 quantile {q} outside [0, 100]"));
            }
        }
        Ok(())
    }

    /// Exploration rate used during episode `k` (0-based).
    pub fn epsilon_at(&self, k: usize) -> f64 {
        self.epsilon * self.epsilon_decay.powi(k as i32)
    }
}

/// Discrete state: error bin and uncertainty bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateId {
    pub error_bin: usize,
    pub uncertainty_bin: usize,
}

pub const UNCERTAINTY_BINS: usize = 2;

/// Maps `(e, u)` to a [`StateId`] with edges fixed from a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBinner {
    /// Interior error edges; `error_edges.len() + 1` bins.
    pub error_edges: Vec<f64>,
    pub uncertainty_threshold: f64,
}

impl StateBinner {
    /// Error edges at the `k/bins` nearest-rank quantiles, uncertainty split
    /// at the 75th percentile.
    pub fn fit(errors: &[f64], uncertainties: &[f64], bins: usize) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let error_edges = (1..bins)
            .map(|k| percentile(errors, 100.0 * k as f64 / bins as f64))
            .collect::<Result<_>>()?;
        let uncertainty_threshold =
            crate::autoencoder::split_by_uncertainty(uncertainties)?.threshold;
        Ok(Self {
            error_edges,
            uncertainty_threshold,
        })
    }

    pub fn error_bins(&self) -> usize {
        self.error_edges.len() + 1
    }

    pub fn n_states(&self) -> usize {
        self.error_bins() * UNCERTAINTY_BINS
    }

    pub fn state(&self, e: f64, u: f64) -> StateId {
        StateId {
            error_bin: self.error_edges.partition_point(|&edge| edge < e),
            uncertainty_bin: usize::from(u > self.uncertainty_threshold),
        }
    }

    pub fn index(&self, s: StateId) -> usize {
        s.error_bin * UNCERTAINTY_BINS + s.uncertainty_bin
    }
}

/// Action values, one row per state, initialized to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Highest-valued action, lowest index on ties.
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Decision threshold on normalized reconstruction error, kept in `[0, θ_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub theta: f64,
    pub theta_max: f64,
}

impl Boundary {
    pub fn new(theta: f64, theta_max: f64) -> Self {
        Self {
            theta: theta.clamp(0.0, theta_max.max(0.0)),
            theta_max: theta_max.max(0.0),
        }
    }
}

/// Reward components of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_sep: f64,
    pub r_acc: f64,
    pub total: f64,
}

/// `ŷ = 0` if `e ≤ θ`, else `1`.
pub fn predict_label(e: f64, theta: f64) -> u8 {
    u8::from(e > theta)
}

fn centroid(points: &[&[f64]]) -> Result<Vec<f64>> {
    let first = points.first().ok_or(Error::CentroidUndefined)?;
    let mut c = vec![0.0; first.len()];
    for p in points {
        if p.len() != c.len() {
            return Err(Error::LengthMismatch("latent dimensions differ".into()));
        }
        c.iter_mut().zip(p.iter()).for_each(|(a, b)| *a += b);
    }
    let n = points.len() as f64;
    c.iter_mut().for_each(|a| *a /= n);
    Ok(c)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `‖μ₀ − μ₁‖²` between the centroids of the two latent sets.
pub fn reward_sep(normal: &[&[f64]], anomalous: &[&[f64]]) -> Result<f64> {
    let mu0 = centroid(normal)?;
    let mu1 = centroid(anomalous)?;
    if mu0.len() != mu1.len() {
        return Err(Error::LengthMismatch("latent dimensions differ".into()));
    }
    Ok(sq_dist(&mu0, &mu1))
}

/// Scale-free separation, see [`SeparationScale::Normalized`].
pub fn reward_sep_normalized(normal: &[&[f64]], anomalous: &[&[f64]]) -> Result<f64> {
    let mu0 = centroid(normal)?;
    let mu1 = centroid(anomalous)?;
    let d2 = sq_dist(&mu0, &mu1);
    let within = normal.iter().map(|p| sq_dist(p, &mu0)).sum::<f64>()
        + anomalous.iter().map(|p| sq_dist(p, &mu1)).sum::<f64>();
    let s2 = within / (normal.len() + anomalous.len()) as f64;
    Ok(if d2 + s2 > 0.0 { d2 / (d2 + s2) } else { 0.0 })
}

/// `+1` when the prediction matches the label, `−1` otherwise.
pub fn reward_acc(predicted: u8, actual: u8) -> f64 {
    if predicted == actual {
        1.0
    } else {
        -1.0
    }
}

pub fn total_reward(r_sep: f64, r_acc: f64, lambda: f64) -> RewardBreakdown {
    RewardBreakdown {
        r_sep,
        r_acc,
        total: lambda * r_sep + r_acc,
    }
}

/// ε-greedy choice: uniform with probability `epsilon`, else the greedy action.
pub fn select_action<R: Rng>(q: &QTable, s: usize, epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.n_actions)
    } else {
        q.argmax(s)
    }
}

/// One temporal-difference update of `Q(s, a)`; `next = None` is terminal.
pub fn q_update(
    q: &mut QTable,
    s: usize,
    a: usize,
    r: f64,
    next: Option<usize>,
    alpha: f64,
    gamma: f64,
) {
    let future = next.map_or(0.0, |n| q.max(n));
    let old = q.get(s, a);
    q.set(s, a, old + alpha * (r + gamma * future - old));
}

pub fn apply_action(
    boundary: Boundary,
    action: Action,
    mode: ActionMode,
    delta: f64,
) -> Result<Boundary> {
    let step = match (mode, action) {
        (ActionMode::Classify, Action::PredictNormal | Action::PredictAbnormal) => 0.0,
        (ActionMode::Boundary, Action::Lower) => -delta,
        (ActionMode::Boundary, Action::Hold) => 0.0,
        (ActionMode::Boundary, Action::Raise) => delta,
        _ => return Err(Error::ModeMismatch { mode, action }),
    };
    Ok(Boundary::new(boundary.theta + step, boundary.theta_max))
}

/// Per-window features the agent sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    /// Normalized reconstruction error.
    pub error: f64,
    pub uncertainty: f64,
    pub latent: Vec<f64>,
    /// 1 for synthetic anomalies.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub epsilon: f64,
    pub cumulative_reward: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub q: QTable,
    pub binner: StateBinner,
    pub boundary: Boundary,
    pub theta0: f64,
    pub separation: f64,
    pub episodes: Vec<EpisodeRecord>,
    /// Greedy-policy labels for the calibration set.
    pub greedy_labels: Vec<u8>,
    /// Labels the agent was rewarded against.
    pub targets: Vec<u8>,
}

impl CalibrationResult {
    /// θ at the end of each episode.
    pub fn trajectory(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.theta).collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for rec in &self.episodes {
            serde_json::to_writer(&mut out, rec)?;
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

/// Threshold that best agrees with per-window labels: among cuts between
/// consecutive distinct sorted errors, the one maximizing the number of
/// windows whose label equals `e > θ`, placed at the midpoint of the gap.
/// For labels monotone in error this is the midpoint between the highest
/// normal-labelled and the lowest abnormal-labelled error.
pub fn threshold_from_labels(errors: &[f64], labels: &[u8], theta_max: f64) -> f64 {
    let n = errors.len();
    if n == 0 {
        return theta_max;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]));
    let total_abnormal = labels.iter().filter(|&&y| y == 1).count();
    // Cut c: sorted[..c] normal, sorted[c..] abnormal.
    let mut agree = total_abnormal;
    let mut best = (agree, 0usize);
    for c in 1..=n {
        let i = order[c - 1];
        if labels[i] == 1 {
            agree -= 1;
        } else {
            agree += 1;
        }
        let realizable = c == n || errors[order[c]] > errors[i];
        if realizable && agree > best.0 {
            best = (agree, c);
        }
    }
    let theta = match best.1 {
        0 => 0.0,
        c if c == n => errors[order[n - 1]],
        c => 0.5 * (errors[order[c - 1]] + errors[order[c]]),
    };
    theta.clamp(0.0, theta_max.max(0.0))
}

/// Runs Q-learning over `points` for `params.episodes` episodes.
///
/// `theta_max` bounds the boundary; the state bins are fit on `points`.
pub fn calibrate(
    points: &[CalibrationPoint],
    params: &RLParams,
    theta_max: f64,
    seed: u64,
) -> Result<CalibrationResult> {
    let mut cal = Calibrator::new(points, params, theta_max, seed)?;
    cal.run(points, params.episodes)?;
    Ok(cal.finish(points))
}

/// Resumable calibration state, for schedules that interleave calibration
/// episodes with autoencoder training.
#[derive(Debug, Clone)]
pub struct Calibrator {
    params: RLParams,
    q: QTable,
    binner: StateBinner,
    boundary: Boundary,
    theta0: f64,
    rng: ChaCha8Rng,
    episodes: Vec<EpisodeRecord>,
    separation: f64,
}

impl Calibrator {
    pub fn new(
        points: &[CalibrationPoint],
        params: &RLParams,
        theta_max: f64,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if points.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let errors: Vec<f64> = points.iter().map(|p| p.error).collect();
        let uncertainties: Vec<f64> = points.iter().map(|p| p.uncertainty).collect();
        let binner = StateBinner::fit(&errors, &uncertainties, params.error_bins)?;
        let theta0 = match params.theta0_quantile {
            Some(q) => {
                let normal: Vec<f64> = points
                    .iter()
                    .filter(|p| p.label == 0)
                    .map(|p| p.error)
                    .collect();
                percentile(&normal, q)?
            }
            None => params.theta0,
        };
        let n_actions = params.action_mode.actions().len();
        Ok(Self {
            params: params.clone(),
            q: QTable::zeros(binner.n_states(), n_actions),
            binner,
            boundary: Boundary::new(theta0, theta_max),
            theta0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            episodes: Vec::new(),
            separation: 0.0,
        })
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn binner(&self) -> &StateBinner {
        &self.binner
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    fn targets(&self, points: &[CalibrationPoint]) -> Vec<u8> {
        points
            .iter()
            .map(|p| {
                let high = self.params.label_high_uncertainty
                    && p.uncertainty > self.binner.uncertainty_threshold;
                u8::from(p.label == 1 || high)
            })
            .collect()
    }

    fn separation(&self, points: &[CalibrationPoint]) -> Result<f64> {
        let normal: Vec<&[f64]> = points
            .iter()
            .filter(|p| p.label == 0)
            .map(|p| p.latent.as_slice())
            .collect();
        let anomalous: Vec<&[f64]> = points
            .iter()
            .filter(|p| p.label == 1)
            .map(|p| p.latent.as_slice())
            .collect();
        match self.params.separation_scale {
            SeparationScale::Raw => reward_sep(&normal, &anomalous),
            SeparationScale::Normalized => reward_sep_normalized(&normal, &anomalous),
        }
    }

    /// Runs `episodes` more episodes. The point set may change between calls
    /// (fresh encoder features) but the state bins stay fixed.
    pub fn run(&mut self, points: &[CalibrationPoint], episodes: usize) -> Result<()> {
        if !points.iter().any(|p| p.label == 1) || !points.iter().any(|p| p.label == 0) {
            return Err(Error::SingleClass);
        }
        let targets = self.targets(points);
        // Centroids are fixed while the encoder is frozen, so once per block.
        let r_sep = self.separation(points)?;
        self.separation = r_sep;
        let states: Vec<usize> = points
            .iter()
            .map(|p| self.binner.index(self.binner.state(p.error, p.uncertainty)))
            .collect();
        let actions = self.params.action_mode.actions();
        let p = &self.params;
        for _ in 0..episodes {
            let k = self.episodes.len();
            let epsilon = p.epsilon_at(k);
            let mut cumulative = 0.0;
            for n in 0..points.len() {
                let s = states[n];
                let a = select_action(&self.q, s, epsilon, &mut self.rng);
                let action = actions[a];
                self.boundary = apply_action(self.boundary, action, p.action_mode, p.delta)?;
                let predicted = match action {
                    Action::PredictNormal => 0,
                    Action::PredictAbnormal => 1,
                    _ => predict_label(points[n].error, self.boundary.theta),
                };
                let r = total_reward(r_sep, reward_acc(predicted, targets[n]), p.lambda).total;
                cumulative += r;
                let next = states.get(n + 1).copied();
                q_update(&mut self.q, s, a, r, next, p.alpha, p.gamma);
            }
            let theta = self
                .greedy_boundary(points, &self.greedy_labels(points))
                .theta;
            self.episodes.push(EpisodeRecord {
                episode: k,
                epsilon,
                cumulative_reward: cumulative,
                theta,
            });
        }
        Ok(())
    }

    fn greedy_labels(&self, points: &[CalibrationPoint]) -> Vec<u8> {
        points
            .iter()
            .map(|p| {
                let s = self.binner.index(self.binner.state(p.error, p.uncertainty));
                match self.params.action_mode.actions()[self.q.argmax(s)] {
                    Action::PredictAbnormal => 1,
                    Action::PredictNormal => 0,
                    _ => predict_label(p.error, self.boundary.theta),
                }
            })
            .collect()
    }

    /// The boundary the greedy policy implies: the tracked one in boundary
    /// mode, the best-agreement cut of the greedy labels in classify mode.
    fn greedy_boundary(&self, points: &[CalibrationPoint], greedy_labels: &[u8]) -> Boundary {
        match self.params.action_mode {
            ActionMode::Classify => {
                let errors: Vec<f64> = points.iter().map(|p| p.error).collect();
                Boundary::new(
                    threshold_from_labels(&errors, greedy_labels, self.boundary.theta_max),
                    self.boundary.theta_max,
                )
            }
            ActionMode::Boundary => self.boundary,
        }
    }

    /// Greedy labels and the final boundary.
    pub fn finish(self, points: &[CalibrationPoint]) -> CalibrationResult {
        let targets = self.targets(points);
        let greedy_labels = self.greedy_labels(points);
        let boundary = self.greedy_boundary(points, &greedy_labels);
        CalibrationResult {
            q: self.q,
            binner: self.binner,
            boundary,
            theta0: self.theta0,
            separation: self.separation,
            episodes: self.episodes,
            greedy_labels,
            targets,
        }
    }
}
