//! Suggestion gating, suggestion generation, disagreement episodes and
//! human-in-the-loop fine-tuning.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pilots::{ObservationWindow, PolicyKind, DEAD_BAND};
use crate::pilots::NetPolicy;
use crate::rl::{self, AlgoConfig, EnvConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatingPolicy {
    pub prob_threshold: f64,
    /// Degrees; combined with the probability threshold.
    pub inner_angle: f64,
    /// Degrees; sufficient on its own.
    pub outer_angle: f64,
}

impl Default for GatingPolicy {
    fn default() -> Self {
        GatingPolicy {
            prob_threshold: 0.8,
            inner_angle: 12.0,
            outer_angle: 15.0,
        }
    }
}

impl GatingPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.inner_angle
            && self.inner_angle < self.outer_angle
            && (0.0..=1.0).contains(&self.prob_threshold);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid gating policy {self:?}")))
        }
    }
}

/// True when the assistant may make a suggestion: the crash probability is
/// above threshold and the pendulum is beyond the inner angle, or the
/// pendulum is beyond the outer angle regardless of probability.
pub fn gate(crash_prob: f64, theta: f64, policy: &GatingPolicy) -> bool {
    let dist = theta.abs();
    (crash_prob > policy.prob_threshold && dist > policy.inner_angle) || dist > policy.outer_angle
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub t_issued: f64,
    pub deflection: f64,
    pub direction: i8,
}

impl Suggestion {
    pub fn new(t_issued: f64, deflection: f64) -> Self {
        let deflection = deflection.clamp(-1.0, 1.0);
        Suggestion {
            t_issued,
            deflection,
            direction: direction_of(deflection),
        }
    }
}

/// Sign with a zero for anything inside the dead band.
pub fn direction_of(d: f64) -> i8 {
    if d.abs() < DEAD_BAND {
        0
    } else if d > 0.0 {
        1
    } else {
        -1
    }
}

/// Assistant output on `window`, stamped with `t_now`.
pub fn suggest(assistant: &NetPolicy, window: &ObservationWindow, t_now: f64) -> Result<Suggestion> {
    let d = assistant.act_on(window)?;
    Ok(Suggestion::new(t_now, d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementEpisode {
    pub t: f64,
    pub window: ObservationWindow,
    pub agent_d: f64,
    pub human_d: f64,
}

/// One sample of a session where both the agent and the human produced a
/// deflection (the observe-and-suggest task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoSample {
    pub t: f64,
    pub window: ObservationWindow,
    pub agent_d: Option<f64>,
    pub human_d: Option<f64>,
}

/// Samples where both deflections clear the dead band with opposite signs.
pub fn extract_disagreements(log: &[CoSample]) -> Result<Vec<DisagreementEpisode>> {
    let mut out = Vec::new();
    for (i, s) in log.iter().enumerate() {
        let (Some(a), Some(h)) = (s.agent_d, s.human_d) else {
            return Err(Error::Recording(format!(
                "sample {i} is missing the {} deflection stream",
                if s.agent_d.is_none() { "agent" } else { "human" }
            )));
        };
        if a.abs() >= DEAD_BAND && h.abs() >= DEAD_BAND && a.signum() != h.signum() {
            out.push(DisagreementEpisode {
                t: s.t,
                window: s.window.clone(),
                agent_d: a,
                human_d: h,
            });
        }
    }
    Ok(out)
}

pub fn write_episodes(path: impl AsRef<Path>, episodes: &[DisagreementEpisode]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for ep in episodes {
        let line = serde_json::to_string(ep)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_episodes(path: impl AsRef<Path>) -> Result<Vec<DisagreementEpisode>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// AIRL assistants: discriminator/generator rounds over the episodes.
    pub airl_iterations: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-4,
            epochs: 20,
            batch: 64,
            airl_iterations: 5,
        }
    }
}

/// Fine-tunes an assistant toward the human side of the disagreements.
///
/// DDPG/SAC actors and supervised (DL/BC) assistants are cloned onto the
/// human deflections; an AIRL assistant runs further AIRL rounds that treat
/// the episodes as expert data.
pub fn finetune(
    assistant: &NetPolicy,
    episodes: &[DisagreementEpisode],
    seed: u64,
    cfg: &FinetuneConfig,
) -> Result<NetPolicy> {
    if episodes.is_empty() {
        return Err(Error::Empty("disagreement episodes"));
    }
    let demos: Vec<(ObservationWindow, f64)> = episodes
        .iter()
        .map(|e| (e.window.clone(), e.human_d))
        .collect();
    match assistant.kind {
        PolicyKind::Airl => {
            let expert: Vec<rl::Demo> = demos
                .iter()
                .map(|(w, d)| {
                    let (th, om) = w.current();
                    rl::Demo::new(th, om, *d)
                })
                .collect();
            let algo = AlgoConfig {
                lr: cfg.lr,
                ..AlgoConfig::airl()
            };
            let mut trainer = rl::AirlTrainer::from_actor(
                EnvConfig::default(),
                algo,
                assistant.net.clone(),
                expert,
                seed,
            )?;
            // Cloning keeps the policy anchored to the episodes while the
            // adversarial rounds shape it further.
            trainer.pretrain_actor_bc(cfg.epochs, cfg.batch)?;
            trainer.run(cfg.airl_iterations)?;
            NetPolicy::new(
                trainer.actor().clone(),
                assistant.window,
                assistant.head,
                assistant.kind,
            )
        }
        PolicyKind::Ddpg | PolicyKind::Sac | PolicyKind::Bc | PolicyKind::Dl => {
            let bc = rl::BcConfig {
                lr: cfg.lr,
                epochs: cfg.epochs,
                batch: cfg.batch,
            };
            rl::clone_policy(assistant, &demos, seed, &bc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating_truth_table() {
        let p = GatingPolicy::default();
        assert!(gate(0.85, 12.5, &p));
        assert!(!gate(0.85, 10.0, &p));
        assert!(gate(0.2, 15.5, &p));
        assert!(!gate(0.79, 14.0, &p));
        assert!(gate(0.85, -12.5, &p));
        assert!(gate(0.0, -15.5, &p));
        // Strict inequalities at the thresholds.
        assert!(!gate(0.8, 13.0, &p));
        assert!(!gate(0.9, 12.0, &p));
        assert!(!gate(0.0, 15.0, &p));
    }

    #[test]
    fn suggestion_direction() {
        assert_eq!(Suggestion::new(0.0, 0.4).direction, 1);
        assert_eq!(Suggestion::new(0.0, -0.4).direction, -1);
        assert_eq!(Suggestion::new(0.0, 0.0).direction, 0);
        assert_eq!(Suggestion::new(0.0, 3.0).deflection, 1.0);
    }

    fn co(agent: f64, human: f64) -> CoSample {
        CoSample {
            t: 0.0,
            window: ObservationWindow::state(1.0, 0.0),
            agent_d: Some(agent),
            human_d: Some(human),
        }
    }

    #[test]
    fn disagreement_definition() {
        assert_eq!(extract_disagreements(&[co(0.4, -0.3)]).unwrap().len(), 1);
        assert!(extract_disagreements(&[co(0.4, 0.1)]).unwrap().is_empty());
        assert!(extract_disagreements(&[co(0.4, 0.005)]).unwrap().is_empty());
        let missing = CoSample {
            human_d: None,
            ..co(0.4, 0.0)
        };
        assert!(extract_disagreements(&[missing]).is_err());
    }

    #[test]
    fn hand_counted_fixture() {
        // Disagreements at indices 1, 4 and 6.
        let log = [
            co(0.5, 0.5),
            co(0.5, -0.5),
            co(-0.2, -0.9),
            co(0.0, 0.7),
            co(-0.02, 0.02),
            co(0.009, -0.8),
            co(1.0, -0.011),
            co(-0.3, 0.0),
        ];
        let eps = extract_disagreements(&log).unwrap();
        assert_eq!(eps.len(), 3);
        assert_eq!(
            eps.iter().map(|e| (e.agent_d, e.human_d)).collect::<Vec<_>>(),
            vec![(0.5, -0.5), (-0.02, 0.02), (1.0, -0.011)]
        );
        // Idempotent.
        assert_eq!(extract_disagreements(&log).unwrap(), eps);
    }

    #[test]
    fn episodes_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.jsonl");
        let eps = extract_disagreements(&[co(0.4, -0.3), co(-0.6, 0.2)]).unwrap();
        write_episodes(&path, &eps).unwrap();
        assert_eq!(read_episodes(&path).unwrap(), eps);
    }
}
