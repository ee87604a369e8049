//! JSON text messages exchanged with the browser client.

use serde::{Deserialize, Serialize};
use vip_core::metrics::TrialMetrics;

use crate::script::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Current joystick axis; clamped to [-1, 1] on arrival.
    Joystick { t_client: f64, deflection: f64 },
    Ready,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    pub coherence_seed: u64,
    pub cue: i8,
    pub crash_flag: bool,
    pub trial_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionSummary {
    pub trials_completed: usize,
    pub total_crashes: usize,
    pub episodes: usize,
    pub frames_dropped: u64,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(Frame),
    TrialStart {
        trial_index: usize,
        task_index: usize,
        task_trial: usize,
        mode: Mode,
        coherence: f64,
        seconds: f64,
    },
    TrialEnd {
        trial_index: usize,
        metrics: Option<TrialMetrics>,
    },
    SessionEnd { summary: SessionSummary },
}

impl ServerMessage {
    pub fn is_frame(&self) -> bool {
        matches!(self, ServerMessage::Frame(_))
    }
}
