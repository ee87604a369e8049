//! Observation windows, pilot policies and the digital-twin behavioral
//! model.
//!
//! A window at sample `k` holds the last `n` samples of angular position and
//! velocity and, for models trained on human data, the joystick deflection
//! that was held when each sample was observed (the deflection executed on
//! the previous step). Windows shorter than `n` are left-padded with zeros.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assistant::Suggestion;
use crate::error::{Error, Result};
use crate::nnet::{Activation, Arch, Network, NetworkSpec};

/// Fixed input scales: θ/60, ω/300, d/1.
pub const THETA_SCALE: f64 = 60.0;
pub const OMEGA_SCALE: f64 = 300.0;

/// Deflections smaller than this count as "no deflection".
pub const DEAD_BAND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Seconds of history.
    pub win_size: f64,
    /// Seconds between the window end and the predicted deflection.
    pub future: f64,
    pub include_deflections: bool,
    pub sample_hz: f64,
}

impl WindowConfig {
    /// Current `(θ, ω)` only, as consumed by RL actors.
    pub fn state_only(sample_hz: f64) -> Self {
        WindowConfig {
            win_size: 0.0,
            future: 0.0,
            include_deflections: false,
            sample_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.win_size >= 0.0 && self.future >= 0.0 && self.sample_hz > 0.0) {
            return Err(Error::Config(format!("invalid window config {self:?}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.win_size * self.sample_hz).round() as usize).max(1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn features_per_step(&self) -> usize {
        if self.include_deflections {
            3
        } else {
            2
        }
    }

    /// Network input width for `arch`: per-step features for recurrent
    /// nets, the flattened window for an MLP.
    pub fn input_dim(&self, arch: Arch) -> usize {
        if arch.is_recurrent() {
            self.features_per_step()
        } else {
            self.features_per_step() * self.len()
        }
    }
}

/// Model input at one instant, oldest sample first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub thetas: Vec<f64>,
    pub omegas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deflections: Option<Vec<f64>>,
}

impl ObservationWindow {
    pub fn state(theta: f64, omega: f64) -> Self {
        ObservationWindow {
            thetas: vec![theta],
            omegas: vec![omega],
            deflections: None,
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// The most recent `(θ, ω)`.
    pub fn current(&self) -> (f64, f64) {
        (
            *self.thetas.last().unwrap_or(&0.0),
            *self.omegas.last().unwrap_or(&0.0),
        )
    }

    /// Standardized per-step feature vectors.
    pub fn features(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|j| {
                let mut f = vec![self.thetas[j] / THETA_SCALE, self.omegas[j] / OMEGA_SCALE];
                if let Some(d) = &self.deflections {
                    f.push(d[j]);
                }
                f
            })
            .collect()
    }

    /// Network input sequence for `arch`.
    pub fn network_input(&self, arch: Arch) -> Vec<Vec<f64>> {
        let steps = self.features();
        if arch.is_recurrent() {
            steps
        } else {
            vec![steps.concat()]
        }
    }
}

/// Sampled trajectory the pilots and predictor look back over.
///
/// `deflections[j]` is the deflection executed on step `j`, so while a
/// decision for sample `k` is pending it holds `k` entries against `k + 1`
/// states.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub sample_hz: f64,
    pub thetas: Vec<f64>,
    pub omegas: Vec<f64>,
    pub deflections: Vec<f64>,
}

impl History {
    pub fn new(sample_hz: f64) -> Self {
        History {
            sample_hz,
            ..Default::default()
        }
    }

    pub fn push_state(&mut self, theta: f64, omega: f64) {
        self.thetas.push(theta);
        self.omegas.push(omega);
    }

    pub fn push_deflection(&mut self, d: f64) {
        self.deflections.push(d);
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn time_of(&self, k: usize) -> f64 {
        k as f64 / self.sample_hz
    }

    fn index_of(&self, t: f64) -> usize {
        (t * self.sample_hz).round() as usize
    }

    /// Deflection held while sample `j` was observed.
    fn held_deflection(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.deflections.get(j - 1).copied().unwrap_or(0.0)
        }
    }
}

/// Window ending at `t_now` (inclusive).
pub fn build_window(history: &History, t_now: f64, cfg: &WindowConfig) -> Result<ObservationWindow> {
    if history.is_empty() {
        return Err(Error::Empty("history"));
    }
    let k = history.index_of(t_now).min(history.len() - 1);
    build_window_at(history, k, cfg)
}

/// Window ending at history index `k`.
pub fn build_window_at(history: &History, k: usize, cfg: &WindowConfig) -> Result<ObservationWindow> {
    if history.is_empty() {
        return Err(Error::Empty("history"));
    }
    if k >= history.len() {
        return Err(Error::Dimension {
            context: "window end index".into(),
            expected: history.len() - 1,
            got: k,
        });
    }
    let ratio = history.sample_hz / cfg.sample_hz;
    let stride = ratio.round() as usize;
    if stride == 0 || (ratio - stride as f64).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "window rate {} Hz does not divide history rate {} Hz",
            cfg.sample_hz, history.sample_hz
        )));
    }
    let n = cfg.len();
    let mut w = ObservationWindow {
        thetas: vec![0.0; n],
        omegas: vec![0.0; n],
        deflections: cfg.include_deflections.then(|| vec![0.0; n]),
    };
    for slot in 0..n {
        let back = (n - 1 - slot) * stride;
        if back > k {
            continue;
        }
        let j = k - back;
        w.thetas[slot] = history.thetas[j];
        w.omegas[slot] = history.omegas[j];
        if let Some(d) = w.deflections.as_mut() {
            d[slot] = history.held_deflection(j);
        }
    }
    Ok(w)
}

/// How an actor network's raw output maps to a deflection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActorHead {
    /// Single output, already bounded by a tanh head.
    #[default]
    Direct,
    /// `(mean, log_std)` of a tanh-squashed Gaussian; greedy action is
    /// `tanh(mean)`.
    SquashedGaussian,
}

/// Which training route produced a policy; selects the fine-tuning method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ddpg,
    Sac,
    Airl,
    Bc,
    #[default]
    Dl,
}

/// A network together with how to feed and read it.
#[derive(Debug, Clone, PartialEq)]
pub struct NetPolicy {
    pub net: Network,
    pub window: WindowConfig,
    pub head: ActorHead,
    pub kind: PolicyKind,
}

impl NetPolicy {
    pub fn new(net: Network, window: WindowConfig, head: ActorHead, kind: PolicyKind) -> Result<Self> {
        window.validate()?;
        let expected = window.input_dim(net.spec.arch);
        if net.spec.input_dim != expected {
            return Err(Error::Dimension {
                context: format!("{} policy input", net.spec.arch),
                expected,
                got: net.spec.input_dim,
            });
        }
        Ok(NetPolicy {
            net,
            window,
            head,
            kind,
        })
    }

    /// Deflection for an already-built window.
    pub fn act_on(&self, window: &ObservationWindow) -> Result<f64> {
        pilot_act(&self.net, window, self.head)
    }

    pub fn act(&self, history: &History, k: usize) -> Result<f64> {
        let w = build_window_at(history, k, &self.window)?;
        self.act_on(&w)
    }
}

/// Evaluates a pilot network on `window`; the result is in `[-1, 1]`.
pub fn pilot_act(net: &Network, window: &ObservationWindow, head: ActorHead) -> Result<f64> {
    let out = net.forward(&window.network_input(net.spec.arch))?;
    let d = match head {
        ActorHead::Direct => out[0],
        ActorHead::SquashedGaussian => out[0].tanh(),
    };
    Ok(d.clamp(-1.0, 1.0))
}

/// Scripted proportional-derivative pilot. With `delay > 0` it reacts to
/// the state `delay` seconds ago, and `noise_sd > 0` adds an
/// Ornstein-Uhlenbeck disturbance with time constant `noise_tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdPilot {
    pub kp: f64,
    pub kd: f64,
    #[serde(default)]
    pub delay: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default = "default_noise_tau")]
    pub noise_tau: f64,
    #[serde(skip)]
    noise: f64,
}

fn default_noise_tau() -> f64 {
    0.3
}

impl PdPilot {
    /// The synthetic expert: `d = clamp(−(0.02θ + 0.008ω))`.
    pub fn expert() -> Self {
        PdPilot::new(0.02, 0.008)
    }

    pub fn new(kp: f64, kd: f64) -> Self {
        PdPilot {
            kp,
            kd,
            delay: 0.0,
            noise_sd: 0.0,
            noise_tau: default_noise_tau(),
            noise: 0.0,
        }
    }

    pub fn with_delay(mut self, delay: f64) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_noise(mut self, sd: f64, tau: f64) -> Self {
        self.noise_sd = sd;
        self.noise_tau = tau;
        self
    }

    pub fn command(&self, theta: f64, omega: f64) -> f64 {
        (-(self.kp * theta + self.kd * omega)).clamp(-1.0, 1.0)
    }

    fn act(&mut self, history: &History, k: usize, rng: &mut ChaCha8Rng) -> f64 {
        let lag = (self.delay * history.sample_hz).round() as usize;
        let base = if lag > k {
            0.0
        } else {
            self.command(history.thetas[k - lag], history.omegas[k - lag])
        };
        if self.noise_sd > 0.0 {
            let dt = 1.0 / history.sample_hz;
            let z: f64 = StandardNormal.sample(rng);
            self.noise += -self.noise / self.noise_tau * dt
                + self.noise_sd * (2.0 * dt / self.noise_tau).sqrt() * z;
        }
        (base + self.noise).clamp(-1.0, 1.0)
    }
}

/// Anything that can fly the pendulum.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Network(NetPolicy),
    Pd(PdPilot),
    /// Uniform random deflection every sample.
    Random,
    Zero,
}

impl Policy {
    /// Deflection for history sample `k`.
    pub fn act(&mut self, history: &History, k: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
        match self {
            Policy::Network(p) => p.act(history, k),
            Policy::Pd(p) => Ok(p.act(history, k, rng)),
            Policy::Random => Ok(rng.gen_range(-1.0..=1.0)),
            Policy::Zero => Ok(0.0),
        }
    }

    /// Deflection for a window; only network and noiseless PD policies are
    /// window-driven.
    pub fn act_on_window(&self, window: &ObservationWindow) -> Result<f64> {
        match self {
            Policy::Network(p) => p.act_on(window),
            Policy::Pd(p) => {
                let (th, om) = window.current();
                Ok(p.command(th, om))
            }
            Policy::Random | Policy::Zero => Ok(0.0),
        }
    }

    pub fn window(&self) -> Option<&WindowConfig> {
        match self {
            Policy::Network(p) => Some(&p.window),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwinBehavior {
    pub accept_prob: f64,
    /// Seconds.
    pub delay_base: f64,
    /// Half-width of the uniform delay jitter, seconds.
    pub delay_jitter: f64,
    /// Half-width of the uniform execution noise.
    pub noise: f64,
}

impl Default for TwinBehavior {
    fn default() -> Self {
        TwinBehavior {
            accept_prob: 0.8,
            delay_base: 0.4,
            delay_jitter: 0.05,
            noise: 0.05,
        }
    }
}

impl TwinBehavior {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.accept_prob)
            && self.delay_jitter >= 0.0
            && self.delay_base > self.delay_jitter
            && self.noise >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid twin behavior {self:?}")))
        }
    }
}

/// What happens to accepted suggestions that are still waiting for the
/// reaction delay when another one arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PendingPolicy {
    /// Each accepted suggestion keeps its own execution time. When several
    /// fall due on the same sample the most recently issued one executes.
    #[default]
    Queue,
    /// A new suggestion discards whatever is pending.
    LatestWins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Executor {
    Pilot,
    Assistant,
}

/// One decision about an offered suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceEvent {
    pub t_issued: f64,
    pub accepted: bool,
    /// Drawn reaction delay (accepted suggestions only).
    pub delay: Option<f64>,
    /// Drawn execution noise (accepted suggestions only).
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scheduled {
    due: f64,
    issued: f64,
    value: f64,
}

/// Per-trial state of a digital twin's response to suggestions.
#[derive(Debug, Clone, Default)]
pub struct TwinExecutor {
    pub behavior: TwinBehavior,
    pub pending_policy: PendingPolicy,
    pending: Vec<Scheduled>,
    pub events: Vec<AcceptanceEvent>,
    pub executed_suggestions: usize,
}

impl TwinExecutor {
    pub fn new(behavior: TwinBehavior, pending_policy: PendingPolicy) -> Self {
        TwinExecutor {
            behavior,
            pending_policy,
            ..Default::default()
        }
    }

    /// Resolves the deflection executed at `t_now`.
    pub fn execute(
        &mut self,
        own_deflection: f64,
        suggestion: Option<&Suggestion>,
        t_now: f64,
        rng: &mut ChaCha8Rng,
    ) -> (f64, Executor) {
        if let Some(s) = suggestion {
            let b = self.behavior;
            let accepted = rng.gen_bool(b.accept_prob);
            let mut ev = AcceptanceEvent {
                t_issued: s.t_issued,
                accepted,
                delay: None,
                noise: None,
            };
            if accepted {
                let jitter = if b.delay_jitter > 0.0 {
                    rng.gen_range(-b.delay_jitter..=b.delay_jitter)
                } else {
                    0.0
                };
                let noise = if b.noise > 0.0 {
                    rng.gen_range(-b.noise..=b.noise)
                } else {
                    0.0
                };
                let delay = b.delay_base + jitter;
                ev.delay = Some(delay);
                ev.noise = Some(noise);
                let item = Scheduled {
                    due: s.t_issued + delay,
                    issued: s.t_issued,
                    value: (s.deflection + noise).clamp(-1.0, 1.0),
                };
                if self.pending_policy == PendingPolicy::LatestWins {
                    self.pending.clear();
                }
                self.pending.push(item);
            }
            self.events.push(ev);
        }

        const EPS: f64 = 1e-9;
        let mut chosen: Option<Scheduled> = None;
        self.pending.retain(|p| {
            if p.due <= t_now + EPS {
                if chosen.is_none_or(|c| p.issued >= c.issued) {
                    chosen = Some(*p);
                }
                false
            } else {
                true
            }
        });
        match chosen {
            Some(p) => {
                self.executed_suggestions += 1;
                (p.value, Executor::Assistant)
            }
            None => (own_deflection.clamp(-1.0, 1.0), Executor::Pilot),
        }
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Drops accepted suggestions that have not executed yet.
    pub fn cancel_pending(&mut self) {
        self.pending.clear();
    }
}

/// Delays the pilot's own commands by a fixed number of samples; the
/// executed deflection before the first scheduled one is 0.
#[derive(Debug, Clone, Default)]
pub struct DelayLine {
    slots: usize,
    queue: VecDeque<f64>,
}

impl DelayLine {
    pub fn new(slots: usize) -> Self {
        DelayLine {
            slots,
            queue: VecDeque::with_capacity(slots + 1),
        }
    }

    pub fn push(&mut self, d: f64) -> f64 {
        self.queue.push_back(d);
        if self.queue.len() > self.slots {
            self.queue.pop_front().unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Proficiency {
    Good,
    Medium,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataSource {
    #[serde(rename = "MARS")]
    Mars,
    #[serde(rename = "VIP")]
    Vip,
}

impl DataSource {
    pub fn sample_hz(self) -> f64 {
        match self {
            DataSource::Mars => 50.0,
            DataSource::Vip => 200.0,
        }
    }
}

/// How a positive `future` lead is realised at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FutureMode {
    /// The prediction made at `t` is executed at `t + future`.
    #[default]
    DelayedExecution,
    /// The lead only shifts the training labels; predictions execute at once.
    LabelOffset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinProfile {
    pub proficiency: Proficiency,
    pub arch: Arch,
    pub win_size: f64,
    pub future: f64,
    pub source: DataSource,
}

impl TwinProfile {
    /// The selected exemplar per proficiency, for both data sources.
    pub fn exemplars() -> Vec<TwinProfile> {
        let mut out = Vec::new();
        for source in [DataSource::Mars, DataSource::Vip] {
            out.push(TwinProfile::exemplar(Proficiency::Good, source));
            out.push(TwinProfile::exemplar(Proficiency::Medium, source));
            out.push(TwinProfile::exemplar(Proficiency::Bad, source));
        }
        out
    }

    pub fn exemplar(proficiency: Proficiency, source: DataSource) -> TwinProfile {
        let (arch, win_size, future) = match proficiency {
            Proficiency::Good => (Arch::Lstm, 0.2, 0.0),
            Proficiency::Medium => (Arch::Gru, 0.3, 0.1),
            Proficiency::Bad => (Arch::Mlp, 0.5, 0.0),
        };
        TwinProfile {
            proficiency,
            arch,
            win_size,
            future,
            source,
        }
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            win_size: self.win_size,
            future: self.future,
            include_deflections: true,
            sample_hz: self.source.sample_hz(),
        }
    }

    /// Default network for this profile: one recurrent layer of 32 units,
    /// or an MLP with two hidden layers of 64, tanh-bounded output.
    pub fn network_spec(&self) -> NetworkSpec {
        let input = self.window().input_dim(self.arch);
        match self.arch {
            Arch::Mlp => NetworkSpec::mlp(input, &[64, 64], 1, Activation::Tanh),
            arch => NetworkSpec::recurrent(arch, input, &[32], 1, Activation::Tanh),
        }
    }
}

/// A pilot policy wrapped in the twin's behavioral model.
#[derive(Debug, Clone)]
pub struct DigitalTwin {
    pub policy: Policy,
    pub executor: TwinExecutor,
    delay_line: DelayLine,
}

impl DigitalTwin {
    /// `future_samples` is the execution delay of the pilot's own actions,
    /// counted in simulation samples.
    pub fn new(
        policy: Policy,
        behavior: TwinBehavior,
        pending: PendingPolicy,
        future_samples: usize,
    ) -> Self {
        DigitalTwin {
            policy,
            executor: TwinExecutor::new(behavior, pending),
            delay_line: DelayLine::new(future_samples),
        }
    }

    /// Delay slots implied by a policy's window under `mode` at `sim_hz`.
    pub fn future_samples(policy: &Policy, mode: FutureMode, sim_hz: f64) -> usize {
        match (policy.window(), mode) {
            (Some(w), FutureMode::DelayedExecution) => (w.future * sim_hz).round() as usize,
            _ => 0,
        }
    }

    /// Returns `(own, executed, executor)` for history sample `k`.
    pub fn step(
        &mut self,
        history: &History,
        k: usize,
        suggestion: Option<&Suggestion>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, f64, Executor)> {
        let raw = self.policy.act(history, k, rng)?;
        let own = self.delay_line.push(raw);
        let t = history.time_of(k);
        let (d, who) = self.executor.execute(own, suggestion, t, rng);
        Ok((own, d, who))
    }
}

/// `(window, target)` pairs from a recorded trajectory. The target for the
/// window ending at `k` is the deflection executed at `k + future`.
pub fn demonstrations(history: &History, cfg: &WindowConfig) -> Result<Vec<(ObservationWindow, f64)>> {
    let lead = (cfg.future * history.sample_hz).round() as usize;
    let stride = (history.sample_hz / cfg.sample_hz).round().max(1.0) as usize;
    let n = history.deflections.len().min(history.len());
    let mut out = Vec::new();
    let mut k = 0;
    while k + lead < n {
        let w = build_window_at(history, k, cfg)?;
        out.push((w, history.deflections[k + lead]));
        k += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn history_with(n: usize, theta: f64) -> History {
        let mut h = History::new(200.0);
        for _ in 0..n {
            h.push_state(theta, 0.0);
            h.push_deflection(0.0);
        }
        h
    }

    #[test]
    fn zero_window_is_current_sample() {
        let mut h = History::new(200.0);
        h.push_state(1.0, 1.0);
        h.push_deflection(0.2);
        h.push_state(5.0, -2.0);
        let cfg = WindowConfig::state_only(200.0);
        let w = build_window(&h, 0.005, &cfg).unwrap();
        assert_eq!(w.thetas, vec![5.0]);
        assert_eq!(w.omegas, vec![-2.0]);
        assert!(w.deflections.is_none());
    }

    #[test]
    fn short_history_is_left_padded() {
        let h = history_with(10, 3.0);
        let cfg = WindowConfig {
            win_size: 0.2,
            future: 0.0,
            include_deflections: true,
            sample_hz: 200.0,
        };
        let w = build_window_at(&h, 9, &cfg).unwrap();
        assert_eq!(w.len(), 40);
        assert!(w.thetas[..30].iter().all(|&v| v == 0.0));
        assert!(w.thetas[30..].iter().all(|&v| v == 3.0));
    }

    #[test]
    fn constant_history_fills_window() {
        let h = history_with(100, 10.0);
        let cfg = WindowConfig {
            win_size: 0.2,
            future: 0.0,
            include_deflections: false,
            sample_hz: 200.0,
        };
        let w = build_window(&h, 0.495, &cfg).unwrap();
        assert!(w.thetas.iter().all(|&v| v == 10.0));
        assert_eq!(w.thetas.len(), 40);
    }

    #[test]
    fn decimated_window_and_held_deflection() {
        let mut h = History::new(200.0);
        for j in 0..20 {
            h.push_state(j as f64, 0.0);
            h.push_deflection(j as f64 / 100.0);
        }
        let cfg = WindowConfig {
            win_size: 0.06,
            future: 0.0,
            include_deflections: true,
            sample_hz: 50.0,
        };
        let w = build_window_at(&h, 19, &cfg).unwrap();
        assert_eq!(w.thetas, vec![11.0, 15.0, 19.0]);
        assert_eq!(w.deflections.unwrap(), vec![0.10, 0.14, 0.18]);
    }

    #[test]
    fn empty_history_rejected() {
        let h = History::new(200.0);
        assert!(matches!(
            build_window(&h, 0.0, &WindowConfig::state_only(200.0)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn zero_weight_pilot_outputs_zero() {
        let profile = TwinProfile::exemplar(Proficiency::Good, DataSource::Vip);
        let net = Network::zeros(profile.network_spec());
        let policy = NetPolicy::new(net, profile.window(), ActorHead::Direct, PolicyKind::Dl).unwrap();
        let h = history_with(60, 12.0);
        assert_eq!(policy.act(&h, 59).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_policy_input_rejected() {
        let net = Network::zeros(NetworkSpec::mlp(5, &[], 1, Activation::Tanh));
        assert!(NetPolicy::new(net, WindowConfig::state_only(200.0), ActorHead::Direct, PolicyKind::Ddpg).is_err());
    }

    #[test]
    fn registry_holds_the_exemplars() {
        let all = TwinProfile::exemplars();
        assert_eq!(all.len(), 6);
        let good = TwinProfile::exemplar(Proficiency::Good, DataSource::Mars);
        assert_eq!((good.arch, good.win_size, good.future), (Arch::Lstm, 0.2, 0.0));
        let med = TwinProfile::exemplar(Proficiency::Medium, DataSource::Vip);
        assert_eq!((med.arch, med.win_size, med.future), (Arch::Gru, 0.3, 0.1));
        let bad = TwinProfile::exemplar(Proficiency::Bad, DataSource::Vip);
        assert_eq!((bad.arch, bad.win_size, bad.future), (Arch::Mlp, 0.5, 0.0));
        assert_eq!(bad.network_spec().input_dim, 300);
        assert_eq!(good.network_spec().input_dim, 3);
    }

    fn suggestion(t: f64, d: f64) -> Suggestion {
        Suggestion::new(t, d)
    }

    #[test]
    fn never_accepting_twin_flies_itself() {
        let b = TwinBehavior {
            accept_prob: 0.0,
            ..Default::default()
        };
        let mut ex = TwinExecutor::new(b, PendingPolicy::Queue);
        let mut rng = seeded(1);
        for k in 0..400 {
            let t = k as f64 / 200.0;
            let s = suggestion(t, 0.9);
            let (d, who) = ex.execute(0.25, Some(&s), t, &mut rng);
            assert_eq!((d, who), (0.25, Executor::Pilot));
        }
    }

    #[test]
    fn accepted_suggestion_executes_after_reaction_delay() {
        let b = TwinBehavior {
            accept_prob: 1.0,
            delay_base: 0.4,
            delay_jitter: 0.0,
            noise: 0.0,
        };
        for policy in [PendingPolicy::Queue, PendingPolicy::LatestWins] {
            let mut ex = TwinExecutor::new(b, policy);
            let mut rng = seeded(2);
            let mut hits = Vec::new();
            for k in 0..400 {
                let t = k as f64 / 200.0;
                let s = (k == 200).then(|| suggestion(1.0, 0.5));
                let (d, who) = ex.execute(0.0, s.as_ref(), t, &mut rng);
                if who == Executor::Assistant {
                    hits.push((k, d));
                }
            }
            assert_eq!(hits, vec![(280, 0.5)], "{policy:?}");
        }
    }

    #[test]
    fn latest_wins_discards_pending() {
        let b = TwinBehavior {
            accept_prob: 1.0,
            delay_base: 0.4,
            delay_jitter: 0.0,
            noise: 0.0,
        };
        let mut ex = TwinExecutor::new(b, PendingPolicy::LatestWins);
        let mut rng = seeded(3);
        let mut hits = Vec::new();
        for k in 0..400 {
            let t = k as f64 / 200.0;
            let s = (k == 100 || k == 120).then(|| suggestion(t, if k == 100 { -0.3 } else { 0.7 }));
            let (d, who) = ex.execute(0.0, s.as_ref(), t, &mut rng);
            if who == Executor::Assistant {
                hits.push((k, d));
            }
        }
        assert_eq!(hits, vec![(200, 0.7)]);
    }

    #[test]
    fn acceptance_statistics() {
        let mut ex = TwinExecutor::new(TwinBehavior::default(), PendingPolicy::Queue);
        let mut rng = seeded(4);
        for k in 0..10_000 {
            let t = k as f64;
            ex.execute(0.0, Some(&suggestion(t, -0.4)), t, &mut rng);
        }
        let accepted = ex.events.iter().filter(|e| e.accepted).count();
        let rate = accepted as f64 / 10_000.0;
        assert!((0.77..=0.83).contains(&rate), "{rate}");
        for e in ex.events.iter().filter(|e| e.accepted) {
            assert!((0.35..=0.45).contains(&e.delay.unwrap()));
            assert!((-0.05..=0.05).contains(&e.noise.unwrap()));
        }
    }

    #[test]
    fn seeded_executor_is_reproducible() {
        let run = || {
            let mut ex = TwinExecutor::new(TwinBehavior::default(), PendingPolicy::Queue);
            let mut rng = seeded(9);
            (0..2000)
                .map(|k| {
                    let t = k as f64 / 200.0;
                    let s = (k % 7 == 0).then(|| suggestion(t, 0.8));
                    ex.execute(0.1, s.as_ref(), t, &mut rng)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn delay_line_shifts_by_slots() {
        let mut dl = DelayLine::new(3);
        let out: Vec<f64> = (1..=6).map(|v| dl.push(v as f64)).collect();
        assert_eq!(out, vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        let mut none = DelayLine::new(0);
        assert_eq!(none.push(0.4), 0.4);
    }

    #[test]
    fn demonstrations_pair_window_with_future_deflection() {
        let mut h = History::new(200.0);
        for j in 0..10 {
            h.push_state(j as f64, 0.0);
            h.push_deflection(j as f64 / 10.0);
        }
        let cfg = WindowConfig {
            win_size: 0.0,
            future: 0.01,
            include_deflections: true,
            sample_hz: 200.0,
        };
        let demos = demonstrations(&h, &cfg).unwrap();
        assert_eq!(demos.len(), 8);
        assert_eq!(demos[3].0.thetas, vec![3.0]);
        assert_eq!(demos[3].1, 0.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn executed_deflection_is_bounded(seed in 0u64..10_000, own in -1.0f64..=1.0, s in -1.0f64..=1.0) {
                let mut ex = TwinExecutor::new(TwinBehavior { noise: 0.3, ..Default::default() }, PendingPolicy::Queue);
                let mut rng = seeded(seed);
                for k in 0..300 {
                    let t = k as f64 / 200.0;
                    let sug = (k % 3 == 0).then(|| Suggestion::new(t, s));
                    let (d, _) = ex.execute(own, sug.as_ref(), t, &mut rng);
                    prop_assert!(d.abs() <= 1.0);
                }
            }
        }
    }
}
