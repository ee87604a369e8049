//! Fixed-step inverted pendulum with joystick forcing.
//!
//! Angles are degrees from the direction of balance (DOB), positive
//! clockwise. The plant is `θ̈ = k_p·sin θ + gain·d`, integrated with
//! semi-implicit Euler. Reaching the crash bound resets the pendulum to the
//! DOB; the trial clock keeps running.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate of the VIP task.
pub const VIP_HZ: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PendulumState {
    /// Degrees from the DOB.
    pub theta: f64,
    /// Degrees per second.
    pub omega: f64,
    /// Seconds since trial start.
    pub t: f64,
}

impl PendulumState {
    pub fn at_rest(theta: f64) -> Self {
        PendulumState {
            theta,
            omega: 0.0,
            t: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    /// Pendulum constant, deg/s².
    pub k_p: f64,
    /// Angular acceleration produced by a full deflection, deg/s².
    pub gain: f64,
    /// Crash boundary in degrees.
    pub crash_bound: f64,
    /// Integration step in seconds.
    pub dt: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            k_p: 600.0,
            gain: 600.0,
            crash_bound: 60.0,
            dt: 1.0 / VIP_HZ,
        }
    }
}

impl PhysicsConfig {
    pub fn with_dt(self, dt: f64) -> Self {
        PhysicsConfig { dt, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_p", self.k_p),
            ("gain", self.gain),
            ("crash_bound", self.crash_bound),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("physics.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Angular acceleration at `theta` under deflection `d`.
    pub fn acceleration(&self, theta: f64, d: f64) -> f64 {
        self.k_p * theta.to_radians().sin() + self.gain * d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: PendulumState,
    pub crashed: bool,
}

/// Advances the pendulum by one step of `cfg.dt`.
pub fn step(state: PendulumState, deflection: f64, cfg: &PhysicsConfig) -> Result<StepOutcome> {
    let raw = step_unbounded(state, deflection, cfg)?;
    if raw.theta.abs() >= cfg.crash_bound {
        Ok(StepOutcome {
            state: PendulumState {
                theta: 0.0,
                omega: 0.0,
                t: raw.t,
            },
            crashed: true,
        })
    } else {
        Ok(StepOutcome {
            state: raw,
            crashed: false,
        })
    }
}

/// The integration step without crash handling. The training environment
/// needs the pre-reset state to score the crash.
pub fn step_unbounded(
    state: PendulumState,
    deflection: f64,
    cfg: &PhysicsConfig,
) -> Result<PendulumState> {
    if !(state.theta.is_finite() && state.omega.is_finite() && state.t.is_finite()) {
        return Err(Error::NonFinite("pendulum state"));
    }
    if !deflection.is_finite() {
        return Err(Error::NonFinite("deflection"));
    }
    if deflection.abs() > 1.0 {
        return Err(Error::DeflectionRange(deflection));
    }
    let alpha = cfg.acceleration(state.theta, deflection);
    let omega = state.omega + alpha * cfg.dt;
    let theta = state.theta + omega * cfg.dt;
    Ok(PendulumState {
        theta,
        omega,
        t: state.t + cfg.dt,
    })
}

/// Simulation clock for sample `k`. Computing `k·dt` instead of summing
/// keeps the clock an exact multiple of the step.
pub fn sample_time(k: usize, dt: f64) -> f64 {
    k as f64 * dt
}
