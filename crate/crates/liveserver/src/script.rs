//! Session scripts and the models they reference.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vip_core::assistant::GatingPolicy;
use vip_core::crashpred::{CrashPredictor, CrashPredictorSpec};
use vip_core::harness::{load_assistant, load_predictor, read_config, AssistantEntry};
use vip_core::physics::PhysicsConfig;
use vip_core::pilots::NetPolicy;
use vip_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The human flies alone.
    Solo,
    /// The human flies; the assistant raises cues while the gate holds.
    Assisted,
    /// The assistant flies; the human's joystick is recorded as suggestions.
    Observe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub mode: Mode,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seconds")]
    pub trial_seconds: f64,
    #[serde(default)]
    pub assistant: Option<String>,
    #[serde(default = "default_coherence")]
    pub coherence: f64,
}

fn default_trials() -> usize {
    3
}

fn default_seconds() -> f64 {
    30.0
}

fn default_coherence() -> f64 {
    0.5
}

impl TaskSpec {
    pub fn new(mode: Mode) -> Self {
        TaskSpec {
            mode,
            trials: default_trials(),
            trial_seconds: default_seconds(),
            assistant: None,
            coherence: default_coherence(),
        }
    }

    pub fn with_assistant(mut self, id: &str) -> Self {
        self.assistant = Some(id.into());
        self
    }

    pub fn with_trials(mut self, trials: usize, seconds: f64) -> Self {
        self.trials = trials;
        self.trial_seconds = seconds;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSettings {
    pub physics: PhysicsConfig,
    pub gating: GatingPolicy,
    /// Trials start at rest at an angle drawn uniformly from this range.
    pub start_range: f64,
    pub frame_hz: u32,
    /// Overrides the predictor output; used for scripted checks.
    pub forced_crash_probability: Option<f64>,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings {
            physics: PhysicsConfig::default(),
            gating: GatingPolicy::default(),
            start_range: 5.0,
            frame_hz: 60,
            forced_crash_probability: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionScript {
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub assistants: Vec<AssistantEntry>,
    #[serde(default)]
    pub crash_predictor: Option<PathBuf>,
    #[serde(default)]
    pub crash_spec: CrashPredictorSpec,
    #[serde(default)]
    pub settings: SessionSettings,
}

impl SessionScript {
    /// Reads a TOML or JSON script; weight paths are relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut s: SessionScript = read_config(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        s.assistants.iter_mut().for_each(|a| a.resolve_paths(base));
        if let Some(p) = s.crash_predictor.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.physics.validate()?;
        self.settings.gating.validate()?;
        if !(0.0..self.settings.physics.crash_bound).contains(&self.settings.start_range) || self.settings.frame_hz == 0
            || self.settings.frame_hz as f64 > 1.0 / self.settings.physics.dt
        {
            return Err(Error::Config(
                "start_range must lie inside the crash bound and frame_hz in (0, simulation rate]".into(),
            ));
        }
        if let Some(p) = self.settings.forced_crash_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("forced crash probability {p} outside [0, 1]")));
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            let bad = |why: &str| Err(Error::Config(format!("task {i}: {why}")));
            if !(0.0..=1.0).contains(&t.coherence) {
                return bad("coherence must lie in [0, 1]");
            }
            if t.trials == 0 || !(t.trial_seconds > 0.0) {
                return bad("trials and trial_seconds must be positive");
            }
            match &t.assistant {
                Some(id) if !self.assistants.iter().any(|a| &a.name == id) => {
                    return bad(&format!("unknown assistant `{id}`"));
                }
                None if t.mode == Mode::Observe => return bad("observe mode needs an assistant to fly"),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn total_trials(&self) -> usize {
        self.tasks.iter().map(|t| t.trials).sum()
    }
}

/// Loaded weights for a script.
#[derive(Debug, Clone, Default)]
pub struct SessionModels {
    pub assistants: BTreeMap<String, NetPolicy>,
    pub predictor: Option<CrashPredictor>,
}

impl SessionModels {
    pub fn load(script: &SessionScript) -> Result<Self> {
        let mut assistants = BTreeMap::new();
        for a in &script.assistants {
            if let Some(p) = load_assistant(a)? {
                assistants.insert(a.name.clone(), p);
            }
        }
        Ok(SessionModels {
            assistants,
            predictor: load_predictor(script.crash_predictor.as_deref(), script.crash_spec)?,
        })
    }

    pub fn assistant_for(&self, task: &TaskSpec) -> Result<Option<&NetPolicy>> {
        match &task.assistant {
            None => Ok(None),
            Some(id) => self
                .assistants
                .get(id)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("assistant `{id}` has no loaded policy"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        let s: SessionScript = serde_json::from_str(r#"{"tasks": [{"mode": "solo"}]}"#).unwrap();
        assert_eq!(s.tasks[0], TaskSpec::new(Mode::Solo));
        assert_eq!(s.tasks[0].trials, 3);
        assert_eq!(s.tasks[0].trial_seconds, 30.0);
        assert_eq!(s.tasks[0].coherence, 0.5);
        s.validate().unwrap();
    }

    #[test]
    fn observe_needs_an_assistant() {
        let s = SessionScript {
            tasks: vec![TaskSpec::new(Mode::Observe)],
            ..Default::default()
        };
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let s = SessionScript {
            tasks: vec![TaskSpec::new(Mode::Assisted).with_assistant("ghost")],
            ..Default::default()
        };
        assert!(s.validate().unwrap_err().to_string().contains("ghost"));
    }

    #[test]
    fn coherence_range() {
        let mut t = TaskSpec::new(Mode::Solo);
        t.coherence = 1.5;
        let s = SessionScript {
            tasks: vec![t],
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_script_resolves_weights() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        std::fs::write(
            &p,
            r#"
[[assistants]]
name = "ddpg"
type = "network"
weights = "w/ddpg.json"
kind = "ddpg"

[[tasks]]
mode = "observe"
assistant = "ddpg"
trials = 2
"#,
        )
        .unwrap();
        let s = SessionScript::load(&p).unwrap();
        assert_eq!(s.tasks[0].trials, 2);
        match &s.assistants[0].source {
            vip_core::harness::AssistantSource::Network { weights, .. } => {
                assert_eq!(weights, &dir.path().join("w/ddpg.json"))
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(SessionModels::load(&s), Err(Error::ModelLoad { .. })));
    }
}
