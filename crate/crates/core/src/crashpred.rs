//! Stacked-GRU crash-probability model.
//!
//! Windows are `(θ, ω, d)` at 50 Hz, standardized like pilot windows, with
//! `d` the deflection held while each sample was observed. A window ending
//! at `t_end` is positive when a crash occurs in `(t_end, t_end + H]`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{self, Activation, AdamState, Arch, Loss, Network, NetworkSpec, Sample};
use crate::physics::{self, PendulumState, PhysicsConfig};
use crate::pilots::{build_window_at, History, ObservationWindow, PdPilot, Policy, WindowConfig};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrashPredictorSpec {
    pub layers: usize,
    pub hidden: usize,
    pub window_seconds: f64,
    pub sample_hz: f64,
    /// Label horizon, seconds.
    pub horizon: f64,
    /// Spacing between consecutive training windows, seconds.
    pub stride: f64,
}

impl Default for CrashPredictorSpec {
    fn default() -> Self {
        CrashPredictorSpec {
            layers: 2,
            hidden: 32,
            window_seconds: 1.0,
            sample_hz: 50.0,
            horizon: 1.0,
            stride: 0.1,
        }
    }
}

impl CrashPredictorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.layers > 0
            && self.hidden > 0
            && self.window_seconds > 0.0
            && self.sample_hz > 0.0
            && self.horizon > 0.0
            && self.stride > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid crash predictor spec {self:?}")))
        }
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            win_size: self.window_seconds,
            future: 0.0,
            include_deflections: true,
            sample_hz: self.sample_hz,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::recurrent(
            Arch::Gru,
            3,
            &vec![self.hidden; self.layers],
            1,
            Activation::Sigmoid,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashWindowSample {
    pub window: ObservationWindow,
    pub label: u8,
}

/// A rollout with reset-on-crash semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub history: History,
    /// Steps `k` that crossed the bound; sample `k + 1` is the reset state
    /// and the crash time is `(k + 1) / sample_hz`.
    pub crash_steps: Vec<usize>,
}

/// Sliding windows over `traj`, labelled by whether a crash follows within
/// the horizon. Windows spanning a reset are dropped.
pub fn label_windows(traj: &Trajectory, spec: &CrashPredictorSpec) -> Result<Vec<CrashWindowSample>> {
    spec.validate()?;
    let h = &traj.history;
    if h.sample_hz < spec.sample_hz {
        return Err(Error::Config(format!(
            "trajectory rate {} Hz is below the predictor rate {} Hz",
            h.sample_hz, spec.sample_hz
        )));
    }
    let cfg = spec.window();
    let decim = (h.sample_hz / spec.sample_hz).round() as usize;
    let span = (cfg.len() - 1) * decim;
    if h.len() <= span {
        return Err(Error::Recording(format!(
            "trajectory of {} samples is shorter than the {} s window",
            h.len(),
            spec.window_seconds
        )));
    }
    let step = ((spec.stride * h.sample_hz).round() as usize).max(1);
    let horizon = (spec.horizon * h.sample_hz).round() as usize;
    let mut out = Vec::new();
    // Window ends sit on multiples of the stride.
    let mut k_end = span.div_ceil(step) * step;
    while k_end < h.len() {
        let start = k_end - span;
        let crosses_reset = traj.crash_steps.iter().any(|&c| start <= c && c < k_end);
        if !crosses_reset {
            let positive = traj
                .crash_steps
                .iter()
                .any(|&c| k_end <= c && c < k_end + horizon);
            out.push(CrashWindowSample {
                window: build_window_at(h, k_end, &cfg)?,
                label: u8::from(positive),
            });
        }
        k_end += step;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrashPredictor {
    pub spec: CrashPredictorSpec,
    pub net: Network,
}

impl CrashPredictor {
    pub fn new(spec: CrashPredictorSpec, net: Network) -> Result<Self> {
        spec.validate()?;
        let want = spec.network_spec();
        if net.spec != want {
            return Err(Error::Shape(format!(
                "crash predictor network is {} {:?}, expected {} {:?}",
                net.spec.arch, net.spec.hidden_dims, want.arch, want.hidden_dims
            )));
        }
        Ok(CrashPredictor { spec, net })
    }

    pub fn zeros(spec: CrashPredictorSpec) -> Self {
        CrashPredictor {
            net: Network::zeros(spec.network_spec()),
            spec,
        }
    }

    pub fn predict(&self, window: &ObservationWindow) -> Result<f64> {
        predict_crash_prob(&self.net, window)
    }

    /// Probability for the window ending at sample `k` of `history`, which
    /// may run at any integer multiple of the predictor rate.
    pub fn predict_at(&self, history: &History, k: usize) -> Result<f64> {
        self.predict(&build_window_at(history, k, &self.spec.window())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        nnet::save(&self.net.spec, &self.net.params, path)
    }

    pub fn load(spec: CrashPredictorSpec, path: impl AsRef<Path>) -> Result<Self> {
        let (ns, params) = nnet::load(path)?;
        CrashPredictor::new(spec, Network::new(ns, params)?)
    }
}

pub fn predict_crash_prob(net: &Network, window: &ObservationWindow) -> Result<f64> {
    if window.deflections.is_none() {
        return Err(Error::Dimension {
            context: "crash predictor features per step".into(),
            expected: 3,
            got: 2,
        });
    }
    Ok(net.forward(&window.features())?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrashTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Minibatches per epoch; 0 means one pass worth of samples.
    pub batches_per_epoch: usize,
}

impl Default for CrashTrainConfig {
    fn default() -> Self {
        CrashTrainConfig {
            epochs: 30,
            batch: 64,
            lr: 3e-3,
            batches_per_epoch: 0,
        }
    }
}

/// Held-out evaluation of a predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrashReport {
    pub auc: f64,
    #[serde(rename = "tpr@0.8")]
    pub tpr_at_08: f64,
    #[serde(rename = "fpr@0.8")]
    pub fpr_at_08: f64,
    pub mean_positive: f64,
    pub mean_negative: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// BCE training with class-balanced minibatches: each batch draws half its
/// windows from each class.
pub fn train_crash_predictor(
    samples: &[CrashWindowSample],
    spec: CrashPredictorSpec,
    seed: u64,
    cfg: &CrashTrainConfig,
) -> Result<CrashPredictor> {
    spec.validate()?;
    let (pos, neg): (Vec<&CrashWindowSample>, Vec<&CrashWindowSample>) =
        samples.iter().partition(|s| s.label == 1);
    if samples.is_empty() {
        return Err(Error::Empty("crash windows"));
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass(samples[0].label));
    }
    if cfg.batch < 2 || cfg.lr <= 0.0 {
        return Err(Error::Config(format!("invalid crash training config {cfg:?}")));
    }
    let mut rng = seeded(seed);
    let mut net = Network::init_with(spec.network_spec(), &mut rng)?;
    let mut opt = AdamState::new(net.params.len(), cfg.lr);
    let per_epoch = if cfg.batches_per_epoch == 0 {
        samples.len().div_ceil(cfg.batch)
    } else {
        cfg.batches_per_epoch
    };
    let half = cfg.batch / 2;
    for epoch in 0..cfg.epochs {
        for _ in 0..per_epoch {
            let mut batch = Vec::with_capacity(2 * half);
            for class in [&pos, &neg] {
                for _ in 0..half {
                    let s = class[rng.gen_range(0..class.len())];
                    batch.push(Sample {
                        inputs: s.window.features(),
                        target: vec![f64::from(s.label)],
                    });
                }
            }
            batch.shuffle(&mut rng);
            let (loss, g) = net.loss_and_gradients(&batch, Loss::Bce)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { index: epoch });
            }
            opt.step(net.params.as_mut_slice(), &g)?;
        }
    }
    CrashPredictor::new(spec, net)
}

pub fn evaluate_crash_predictor(pred: &CrashPredictor, held_out: &[CrashWindowSample]) -> Result<CrashReport> {
    let mut scored = Vec::with_capacity(held_out.len());
    for s in held_out {
        scored.push((pred.predict(&s.window)?, s.label == 1));
    }
    let positives = scored.iter().filter(|x| x.1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass(u8::from(positives > 0)));
    }
    let mean = |want: bool| {
        let v: Vec<f64> = scored.iter().filter(|x| x.1 == want).map(|x| x.0).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let above = |want: bool| scored.iter().filter(|x| x.1 == want && x.0 > 0.8).count() as f64;
    Ok(CrashReport {
        auc: roc_auc(&scored),
        tpr_at_08: above(true) / positives as f64,
        fpr_at_08: above(false) / negatives as f64,
        mean_positive: mean(true),
        mean_negative: mean(false),
        positives,
        negatives,
    })
}

/// Area under the ROC curve by the rank-sum statistic, ties at half
/// credit.
pub fn roc_auc(scored: &[(f64, bool)]) -> f64 {
    let mut v: Vec<(f64, bool)> = scored.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = v.iter().filter(|x| x.1).count() as f64;
    let n_neg = v.len() as f64 - n_pos;
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j].0 == v[i].0 {
            j += 1;
        }
        // 1-based average rank of the tie block.
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * v[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Pilot families the synthetic corpus mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusPilot {
    Random,
    Expert,
    /// Delayed, noisy, under-damped PD.
    Mediocre,
}

impl CorpusPilot {
    pub const ALL: [CorpusPilot; 3] = [CorpusPilot::Random, CorpusPilot::Expert, CorpusPilot::Mediocre];

    fn policy(self) -> Policy {
        match self {
            CorpusPilot::Random => Policy::Random,
            CorpusPilot::Expert => Policy::Pd(PdPilot::expert()),
            CorpusPilot::Mediocre => Policy::Pd(PdPilot::new(0.015, 0.003).with_delay(0.2).with_noise(0.3, 0.3)),
        }
    }
}

/// Closed-loop rollout at the physics rate with reset-on-crash, starting
/// from rest at `theta0`.
pub fn rollout(
    policy: &Policy,
    physics_cfg: &PhysicsConfig,
    theta0: f64,
    seconds: f64,
    seed: u64,
) -> Result<Trajectory> {
    let hz = 1.0 / physics_cfg.dt;
    let n = (seconds * hz).round() as usize;
    let mut rng = seeded(seed);
    let mut p = policy.clone();
    let mut history = History::new(hz);
    let mut crash_steps = Vec::new();
    let mut state = PendulumState::at_rest(theta0);
    for k in 0..n {
        history.push_state(state.theta, state.omega);
        let d = p.act(&history, k, &mut rng)?;
        history.push_deflection(d);
        let out = physics::step(state, d, physics_cfg)?;
        if out.crashed {
            crash_steps.push(k);
        }
        state = out.state;
    }
    Ok(Trajectory { history, crash_steps })
}

/// `per_pilot` rollouts of each corpus pilot with random starts in ±30°.
pub fn generate_corpus(per_pilot: usize, seconds: f64, seed: u64) -> Result<Vec<Trajectory>> {
    let physics_cfg = PhysicsConfig::default();
    let mut out = Vec::with_capacity(per_pilot * CorpusPilot::ALL.len());
    for (pi, pilot) in CorpusPilot::ALL.iter().enumerate() {
        for i in 0..per_pilot {
            let s = derive_seed(seed, pi as u64, i as u64);
            let theta0 = seeded(s ^ 0x5eed).gen_range(-30.0..30.0);
            out.push(rollout(&pilot.policy(), &physics_cfg, theta0, seconds, s)?);
        }
    }
    Ok(out)
}

pub fn label_corpus(corpus: &[Trajectory], spec: &CrashPredictorSpec) -> Result<Vec<CrashWindowSample>> {
    let mut out = Vec::new();
    for t in corpus {
        out.extend(label_windows(t, spec)?);
    }
    Ok(out)
}
