//! Bounded pendulum environment and the RL/imitation trainers that produce
//! assistant and pilot policies.
//!
//! Actors see the standardized current state `(θ/60, ω/300)` and emit a
//! deflection in `[-1, 1]`; critics and the AIRL discriminator see
//! `(θ/60, ω/300, d)`.

mod airl;
mod bc;
mod buffer;
mod ddpg;
mod sac;

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::Parameters;
use crate::physics::{self, PendulumState, PhysicsConfig};
use crate::pilots::{PdPilot, Policy, THETA_SCALE, OMEGA_SCALE};
use crate::rng::seeded;

pub use airl::{train_airl, AirlOutput, AirlTrainer};
pub use bc::{clone_policy, train_bc, BcConfig};
pub use buffer::ReplayBuffer;
pub use ddpg::{train_ddpg, DdpgTrainer};
pub use sac::{train_sac, SacTrainer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub physics: PhysicsConfig,
    pub episode_seconds: f64,
    pub train_dt: f64,
    /// Starting angles are drawn from `(-start_range, start_range)`.
    pub start_range: f64,
    /// Half-width of the zero-reward band, degrees.
    pub reward_inner_bound: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            physics: PhysicsConfig::default(),
            episode_seconds: 30.0,
            train_dt: 0.02,
            start_range: 60.0,
            reward_inner_bound: 30.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        let ok = self.train_dt > 0.0
            && self.episode_seconds > 0.0
            && self.start_range > 0.0
            && self.start_range <= self.physics.crash_bound
            && 0.0 < self.reward_inner_bound
            && self.reward_inner_bound < self.physics.crash_bound;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid environment config {self:?}")))
        }
    }

    fn train_physics(&self) -> PhysicsConfig {
        self.physics.with_dt(self.train_dt)
    }
}

/// Zero inside `[-30°, 30°]`, otherwise `−(θ² + 0.1·ω² + 0.01·d²)`.
pub fn reward(theta: f64, omega: f64, deflection: f64) -> f64 {
    reward_with_bound(theta, omega, deflection, 30.0)
}

pub fn reward_with_bound(theta: f64, omega: f64, deflection: f64, bound: f64) -> f64 {
    if theta.abs() <= bound {
        0.0
    } else {
        -(theta * theta + 0.1 * omega * omega + 0.01 * deflection * deflection)
    }
}

/// Random start at rest, `θ ~ U(−start_range, start_range)`.
pub fn env_reset(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> PendulumState {
    let r = cfg.start_range;
    let mut theta = rng.gen_range(-r..r);
    // The open interval excludes the lower endpoint too.
    while theta == -r {
        theta = rng.gen_range(-r..r);
    }
    PendulumState::at_rest(theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    /// Pre-reset state after the step.
    pub next: PendulumState,
    pub reward: f64,
    pub done: bool,
    pub crashed: bool,
}

/// One training step. A crash ends the episode; it is scored on the state
/// that crossed the bound.
pub fn env_step(state: PendulumState, action: f64, cfg: &EnvConfig) -> Result<EnvStep> {
    let next = physics::step_unbounded(state, action, &cfg.train_physics())?;
    let crashed = next.theta.abs() >= cfg.physics.crash_bound;
    let r = reward_with_bound(next.theta, next.omega, action, cfg.reward_inner_bound);
    let timed_out = next.t >= cfg.episode_seconds - 1e-9;
    Ok(EnvStep {
        next,
        reward: r,
        done: crashed || timed_out,
        crashed,
    })
}

pub fn observe(s: &PendulumState) -> [f64; 2] {
    [s.theta / THETA_SCALE, s.omega / OMEGA_SCALE]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: [f64; 2],
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; 2],
    pub done: bool,
    /// Episode ended by a crash (no bootstrapping); a time-limit end is
    /// `done` but not terminal.
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "DDPG", alias = "ddpg")]
    Ddpg,
    #[serde(rename = "SAC", alias = "sac")]
    Sac,
    #[serde(rename = "BC", alias = "bc")]
    Bc,
    #[serde(rename = "AIRL", alias = "airl")]
    Airl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoConfig {
    pub algo: Algo,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch: usize,
    pub buffer_capacity: usize,
    /// DDPG Gaussian exploration noise, in deflection units.
    pub exploration_sigma: f64,
    /// SAC entropy target.
    pub target_entropy: f64,
    pub initial_alpha: f64,
    /// Uniform random actions before learning starts.
    pub learning_starts: usize,
    /// Rewards are multiplied by this before they reach the critics.
    pub reward_scale: f64,
    /// AIRL: environment steps per adversarial round.
    pub airl_steps_per_iter: usize,
    /// AIRL: discriminator updates per round.
    pub airl_disc_updates: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            algo: Algo::Ddpg,
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch: 256,
            buffer_capacity: 100_000,
            exploration_sigma: 0.1,
            target_entropy: -1.0,
            initial_alpha: 0.1,
            learning_starts: 1000,
            reward_scale: 1e-3,
            airl_steps_per_iter: 1000,
            airl_disc_updates: 50,
        }
    }
}

impl AlgoConfig {
    pub fn ddpg() -> Self {
        AlgoConfig::default()
    }

    pub fn sac() -> Self {
        AlgoConfig {
            algo: Algo::Sac,
            ..AlgoConfig::default()
        }
    }

    pub fn airl() -> Self {
        AlgoConfig {
            algo: Algo::Airl,
            ..AlgoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.gamma
            && self.gamma < 1.0
            && 0.0 < self.tau
            && self.tau <= 1.0
            && self.lr > 0.0
            && self.batch > 0
            && self.buffer_capacity >= self.batch
            && !self.hidden.is_empty();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid algorithm config {self:?}")))
        }
    }
}

/// One JSONL row of a training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub episode_return: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

pub fn write_train_log(path: impl AsRef<Path>, rows: &[TrainLogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Expert `(state, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub theta: f64,
    pub omega: f64,
    pub action: f64,
}

impl Demo {
    pub fn new(theta: f64, omega: f64, action: f64) -> Self {
        Demo {
            theta,
            omega,
            action,
        }
    }

    pub fn input(&self) -> [f64; 3] {
        [self.theta / THETA_SCALE, self.omega / OMEGA_SCALE, self.action]
    }
}

/// Rolls out `pilot` from random starts at the training rate and records
/// every `(state, action)` until `count` pairs exist. Episodes end on crash
/// or time-out.
pub fn collect_demos(
    pilot: &PdPilot,
    env: &EnvConfig,
    count: usize,
    episode_seconds: f64,
    seed: u64,
) -> Result<Vec<Demo>> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(count);
    let mut policy = Policy::Pd(pilot.clone());
    let hz = 1.0 / env.train_dt;
    while out.len() < count {
        let mut state = env_reset(env, &mut rng);
        let mut hist = crate::pilots::History::new(hz);
        let steps = (episode_seconds * hz).round() as usize;
        for k in 0..steps {
            hist.push_state(state.theta, state.omega);
            let a = policy.act(&hist, k, &mut rng)?;
            hist.push_deflection(a);
            out.push(Demo::new(state.theta, state.omega, a));
            if out.len() == count {
                break;
            }
            let st = env_step(state, a, env)?;
            if st.crashed {
                break;
            }
            state = st.next;
        }
    }
    Ok(out)
}

pub(crate) fn state_batch(rows: &[[f64; 2]]) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), 2));
    for (i, r) in rows.iter().enumerate() {
        m[[i, 0]] = r[0];
        m[[i, 1]] = r[1];
    }
    m
}

pub(crate) fn state_action_batch(states: &Array2<f64>, actions: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((states.nrows(), 3));
    for i in 0..states.nrows() {
        m[[i, 0]] = states[[i, 0]];
        m[[i, 1]] = states[[i, 1]];
        m[[i, 2]] = actions[i];
    }
    m
}

/// Trainable-parameter mask for an actor that is odd in the state: every
/// bias is frozen at zero except head rows listed in `free_head_rows`.
/// With tanh hidden units the frozen part maps `-s` to `-f(s)`.
pub(crate) fn odd_actor_mask(params: &Parameters, free_head_rows: &[usize]) -> Vec<bool> {
    let mut mask = vec![true; params.len()];
    for (i, s) in params.shapes().iter().enumerate() {
        if !s.name.ends_with(".b") {
            continue;
        }
        let o = params.offset(i);
        for r in 0..s.rows {
            let free = s.name == "head.b" && free_head_rows.contains(&r);
            mask[o + r] = free;
        }
    }
    mask
}

pub(crate) fn apply_mask(grads: &mut [f64], mask: &[bool]) {
    for (g, &m) in grads.iter_mut().zip(mask) {
        if !m {
            *g = 0.0;
        }
    }
}

pub(crate) fn check_finite(value: f64, what: &str, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{what} is {value} at step {step}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub crashes: usize,
    pub mean_abs_theta: f64,
    pub samples: usize,
}

/// Closed-loop evaluation at the VIP rate with crash-and-reset semantics.
/// Each seed draws the starting angle from `start_range` and runs
/// `seconds`.
pub fn evaluate(
    policy: &Policy,
    physics: &PhysicsConfig,
    start_range: f64,
    seeds: &[u64],
    seconds: f64,
) -> Result<EvalSummary> {
    let mut crashes = 0;
    let mut abs_sum = 0.0;
    let mut samples = 0;
    for &seed in seeds {
        let mut rng = seeded(seed);
        let env = EnvConfig {
            physics: *physics,
            start_range,
            ..EnvConfig::default()
        };
        let mut state = env_reset(&env, &mut rng);
        let hz = 1.0 / physics.dt;
        let mut hist = crate::pilots::History::new(hz);
        let mut p = policy.clone();
        let n = (seconds * hz).round() as usize;
        for k in 0..n {
            hist.push_state(state.theta, state.omega);
            abs_sum += state.theta.abs();
            samples += 1;
            let d = p.act(&hist, k, &mut rng)?;
            hist.push_deflection(d);
            let out = physics::step(state, d, physics)?;
            if out.crashed {
                crashes += 1;
            }
            state = out.state;
        }
    }
    Ok(EvalSummary {
        crashes,
        mean_abs_theta: abs_sum / samples.max(1) as f64,
        samples,
    })
}
