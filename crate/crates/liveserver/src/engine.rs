//! The authoritative simulation loop. Everything here is synchronous and
//! deterministic given the seed and the held-input stream; sockets live in
//! [`crate::server`].

use std::sync::mpsc::{Receiver, TryRecvError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use vip_core::assistant::{direction_of, extract_disagreements, gate, suggest, CoSample, DisagreementEpisode, Suggestion};
use vip_core::crashpred::CrashPredictor;
use vip_core::harness::{LogRow, TrialLog};
use vip_core::metrics::{classify_deflection, trial_metrics, TrialMetrics};
use vip_core::physics::{self, PendulumState};
use vip_core::pilots::{build_window_at, Executor, History, NetPolicy};
use vip_core::rng::{derive_seed, seeded};
use vip_core::{Error, Result};

use rand::Rng;

use crate::outbox::Outbox;
use crate::protocol::{ClientMessage, Frame, ServerMessage, SessionSummary};
use crate::script::{Mode, SessionModels, SessionScript, SessionSettings, TaskSpec};

/// What the socket reader hands the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inbound {
    Message(ClientMessage),
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pacing {
    /// One step every `dt` of monotonic wall-clock time.
    #[default]
    RealTime,
    /// As fast as the machine allows; for tests and replays.
    Unpaced,
    /// Unpaced, but blocks for one client message after every frame so a
    /// scripted client reacts to each frame it sees.
    Lockstep,
}

/// The held deflection changed to `deflection` before step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputEvent {
    pub trial: usize,
    pub step: usize,
    pub t_client: f64,
    pub deflection: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suggester {
    Assistant,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuggestionEvent {
    pub trial: usize,
    pub step: usize,
    pub t: f64,
    pub source: Suggester,
    pub deflection: f64,
    pub direction: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub task: usize,
    pub task_trial: usize,
    pub mode: Mode,
    pub seed: u64,
    pub planned_samples: usize,
    pub completed: bool,
    pub frames: usize,
    /// Lateness of the final step against the wall clock.
    pub drift_ms: Option<f64>,
    pub metrics: Option<TrialMetrics>,
    #[serde(skip)]
    pub log: TrialLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub seed: u64,
    pub script: SessionScript,
    pub trials: Vec<TrialRecord>,
    pub aborted: bool,
    pub replay_verified: Option<bool>,
    pub summary: SessionSummary,
    #[serde(skip)]
    pub inputs: Vec<InputEvent>,
    #[serde(skip)]
    pub suggestions: Vec<SuggestionEvent>,
    #[serde(skip)]
    pub episodes: Vec<DisagreementEpisode>,
}

impl SessionRecord {
    pub fn new(seed: u64, script: SessionScript) -> Self {
        SessionRecord {
            seed,
            script,
            trials: Vec::new(),
            aborted: false,
            replay_verified: None,
            summary: SessionSummary::default(),
            inputs: Vec::new(),
            suggestions: Vec::new(),
            episodes: Vec::new(),
        }
    }

    pub fn logs(&self) -> Vec<TrialLog> {
        self.trials.iter().map(|t| t.log.clone()).collect()
    }
}

pub fn trial_seed(session_seed: u64, trial_index: usize) -> u64 {
    derive_seed(session_seed, 1, trial_index as u64)
}

pub fn coherence_seed(trial_seed: u64, frame: u64) -> u64 {
    derive_seed(trial_seed, 2, frame)
}

/// Emits frame `f` on the first step at or after `f / frame_hz` seconds.
#[derive(Debug, Clone)]
pub struct FrameClock {
    sim_hz: u64,
    frame_hz: u64,
    next: u64,
}

impl FrameClock {
    pub fn new(sim_hz: u64, frame_hz: u64) -> Self {
        FrameClock {
            sim_hz,
            frame_hz,
            next: 0,
        }
    }

    pub fn due(&mut self, step: usize) -> Option<u64> {
        (step as u64 * self.frame_hz >= self.next * self.sim_hz).then(|| {
            self.next += 1;
            self.next - 1
        })
    }
}

pub struct StepOut {
    pub row: LogRow,
    pub cue: i8,
    pub suggestion: Option<Suggestion>,
}

/// One trial of one task mode.
pub struct TrialSim<'m> {
    mode: Mode,
    assistant: Option<&'m NetPolicy>,
    predictor: Option<&'m CrashPredictor>,
    settings: &'m SessionSettings,
    decim: usize,
    samples: usize,
    history: History,
    state: PendulumState,
    prob: f64,
    pub log: TrialLog,
    pub cosamples: Vec<CoSample>,
}

impl<'m> TrialSim<'m> {
    pub fn new(
        mode: Mode,
        assistant: Option<&'m NetPolicy>,
        predictor: Option<&'m CrashPredictor>,
        settings: &'m SessionSettings,
        seconds: f64,
        seed: u64,
    ) -> Result<Self> {
        if mode == Mode::Observe && assistant.is_none() {
            return Err(Error::Config("observe mode needs an assistant".into()));
        }
        let hz = 1.0 / settings.physics.dt;
        let mut rng = seeded(seed);
        let r = settings.start_range;
        let theta0 = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        Ok(TrialSim {
            mode,
            assistant,
            predictor,
            settings,
            decim: predictor.map_or(1, |p| ((hz / p.spec.sample_hz).round() as usize).max(1)),
            samples: (seconds / settings.physics.dt).round() as usize,
            history: History::new(hz),
            state: PendulumState::at_rest(theta0),
            prob: 0.0,
            log: TrialLog::default(),
            cosamples: Vec::new(),
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn step(&mut self, human: f64) -> Result<StepOut> {
        let k = self.log.len();
        let t = physics::sample_time(k, self.settings.physics.dt);
        let s = self.state;
        self.history.push_state(s.theta, s.omega);
        if let Some(p) = self.settings.forced_crash_probability {
            self.prob = p;
        } else if let Some(p) = self.predictor {
            if k.is_multiple_of(self.decim) {
                self.prob = p.predict_at(&self.history, k).map_err(|e| e.in_component("crash predictor"))?;
            }
        }
        let mut suggestion = None;
        let (d, executor) = match (self.mode, self.assistant) {
            (Mode::Assisted, Some(a)) if gate(self.prob, s.theta, &self.settings.gating) => {
                let w = build_window_at(&self.history, k, &a.window).map_err(|e| e.in_component("assistant"))?;
                suggestion = Some(suggest(a, &w, t).map_err(|e| e.in_component("assistant"))?);
                (human, Executor::Pilot)
            }
            (Mode::Observe, Some(a)) => {
                let w = build_window_at(&self.history, k, &a.window).map_err(|e| e.in_component("assistant"))?;
                let agent = a.act_on(&w).map_err(|e| e.in_component("assistant"))?.clamp(-1.0, 1.0);
                self.cosamples.push(CoSample {
                    t,
                    window: w,
                    agent_d: Some(agent),
                    human_d: Some(human),
                });
                (agent, Executor::Assistant)
            }
            _ => (human, Executor::Pilot),
        };
        self.history.push_deflection(d);
        let out = physics::step(s, d, &self.settings.physics)?;
        let row = LogRow {
            t,
            theta: s.theta,
            omega: s.omega,
            executed_deflection: d,
            crash_probability: self.prob,
            pilot_deflection: human,
            assistant_deflection: suggestion.map(|g| g.deflection),
            executor,
            deflection_class: classify_deflection(s.theta, s.omega, d),
            crash_flag: out.crashed,
        };
        self.log.rows.push(row);
        self.state = out.state;
        Ok(StepOut {
            row,
            cue: suggestion.map_or(0, |g| g.direction),
            suggestion,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Go,
    Abort,
}

struct Session<'a> {
    script: &'a SessionScript,
    models: &'a SessionModels,
    pacing: Pacing,
    inbox: &'a Receiver<Inbound>,
    outbox: &'a Outbox,
    rec: SessionRecord,
    held: f64,
    t_client: f64,
}

impl Session<'_> {
    fn apply(&mut self, msg: Inbound) -> Flow {
        match msg {
            Inbound::Message(ClientMessage::Joystick { t_client, deflection }) => {
                if deflection.is_finite() {
                    self.held = deflection.clamp(-1.0, 1.0);
                    self.t_client = t_client;
                }
                Flow::Go
            }
            Inbound::Message(ClientMessage::Ready) => Flow::Go,
            Inbound::Message(ClientMessage::Abort) | Inbound::Disconnected => Flow::Abort,
        }
    }

    fn drain(&mut self) -> Flow {
        loop {
            match self.inbox.try_recv() {
                Ok(m) => {
                    if self.apply(m) == Flow::Abort {
                        return Flow::Abort;
                    }
                }
                Err(TryRecvError::Empty) => return Flow::Go,
                Err(TryRecvError::Disconnected) => return Flow::Abort,
            }
        }
    }

    fn next_message(&mut self) -> Flow {
        match self.inbox.recv() {
            Ok(m) => self.apply(m),
            Err(_) => Flow::Abort,
        }
    }

    fn wait_ready(&mut self) -> Flow {
        loop {
            match self.inbox.recv() {
                Ok(Inbound::Message(ClientMessage::Ready)) => return Flow::Go,
                Ok(m) => {
                    if self.apply(m) == Flow::Abort {
                        return Flow::Abort;
                    }
                }
                Err(_) => return Flow::Abort,
            }
        }
    }

    fn run(mut self) -> Result<SessionRecord> {
        let mut index = 0;
        for (ti, task) in self.script.tasks.iter().enumerate() {
            let assistant = self.models.assistant_for(task)?;
            let mut cosamples = Vec::new();
            let mut flow = Flow::Go;
            for j in 0..task.trials {
                self.outbox.push(ServerMessage::TrialStart {
                    trial_index: index,
                    task_index: ti,
                    task_trial: j,
                    mode: task.mode,
                    coherence: task.coherence,
                    seconds: task.trial_seconds,
                });
                flow = self.wait_ready();
                if flow == Flow::Abort {
                    break;
                }
                flow = self.run_trial(ti, j, index, task, assistant, &mut cosamples)?;
                index += 1;
                if flow == Flow::Abort {
                    break;
                }
            }
            if task.mode == Mode::Observe && !cosamples.is_empty() {
                self.rec.episodes.extend(extract_disagreements(&cosamples)?);
            }
            if flow == Flow::Abort {
                self.rec.aborted = true;
                break;
            }
        }
        self.rec.replay_verified = Some(verify_replay(&self.rec, self.models)?);
        self.rec.summary = SessionSummary {
            trials_completed: self.rec.trials.iter().filter(|t| t.completed).count(),
            total_crashes: self.rec.trials.iter().filter_map(|t| t.metrics.map(|m| m.crashes)).sum(),
            episodes: self.rec.episodes.len(),
            frames_dropped: self.outbox.dropped(),
            aborted: self.rec.aborted,
        };
        self.outbox.push(ServerMessage::SessionEnd {
            summary: self.rec.summary,
        });
        Ok(self.rec)
    }

    fn run_trial(
        &mut self,
        task_index: usize,
        task_trial: usize,
        index: usize,
        task: &TaskSpec,
        assistant: Option<&NetPolicy>,
        cosamples: &mut Vec<CoSample>,
    ) -> Result<Flow> {
        let settings = &self.script.settings;
        let seed = trial_seed(self.rec.seed, index);
        let mut sim = TrialSim::new(task.mode, assistant, self.models.predictor.as_ref(), settings, task.trial_seconds, seed)?;
        let dt = settings.physics.dt;
        let mut clock = FrameClock::new((1.0 / dt).round() as u64, settings.frame_hz as u64);
        let n = sim.samples();
        self.rec.inputs.push(InputEvent {
            trial: index,
            step: 0,
            t_client: self.t_client,
            deflection: self.held,
        });
        let mut logged = self.held;
        let mut frames = 0;
        let mut human_dir = 0;
        let mut flow = Flow::Go;
        let start = Instant::now();
        for k in 0..n {
            if self.pacing == Pacing::RealTime {
                sleep_until(start + Duration::from_secs_f64(dt * k as f64));
            }
            if self.drain() == Flow::Abort {
                flow = Flow::Abort;
                break;
            }
            if self.held.to_bits() != logged.to_bits() {
                logged = self.held;
                self.rec.inputs.push(InputEvent {
                    trial: index,
                    step: k,
                    t_client: self.t_client,
                    deflection: self.held,
                });
            }
            let out = sim.step(self.held)?;
            if let Some(s) = out.suggestion {
                self.rec.suggestions.push(SuggestionEvent {
                    trial: index,
                    step: k,
                    t: out.row.t,
                    source: Suggester::Assistant,
                    deflection: s.deflection,
                    direction: s.direction,
                });
            }
            if task.mode == Mode::Observe {
                let dir = direction_of(self.held);
                if dir != 0 && dir != human_dir {
                    self.rec.suggestions.push(SuggestionEvent {
                        trial: index,
                        step: k,
                        t: out.row.t,
                        source: Suggester::Human,
                        deflection: self.held,
                        direction: dir,
                    });
                }
                human_dir = dir;
            }
            if let Some(f) = clock.due(k) {
                frames += 1;
                self.outbox.push(ServerMessage::Frame(Frame {
                    t: out.row.t,
                    theta: out.row.theta,
                    omega: out.row.omega,
                    coherence_seed: coherence_seed(seed, f),
                    cue: out.cue,
                    crash_flag: out.row.crash_flag,
                    trial_index: index,
                }));
                if self.pacing == Pacing::Lockstep && self.next_message() == Flow::Abort {
                    flow = Flow::Abort;
                    break;
                }
            }
        }
        let drift_ms = (self.pacing == Pacing::RealTime && flow == Flow::Go).then(|| {
            let end = start + Duration::from_secs_f64(dt * n as f64);
            sleep_until(end);
            Instant::now().duration_since(end).as_secs_f64() * 1e3
        });
        let metrics = trial_metrics(&sim.log).ok();
        self.outbox.push(ServerMessage::TrialEnd {
            trial_index: index,
            metrics,
        });
        cosamples.append(&mut sim.cosamples);
        self.rec.trials.push(TrialRecord {
            trial_index: index,
            task: task_index,
            task_trial,
            mode: task.mode,
            seed,
            planned_samples: n,
            completed: flow == Flow::Go,
            frames,
            drift_ms,
            metrics,
            log: sim.log,
        });
        Ok(flow)
    }
}

fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

/// Runs a whole script against the messages arriving on `inbox`, pushing
/// everything the client should see onto `outbox`. Returns the record even
/// when the client aborts or disconnects.
pub fn run_loop(
    script: &SessionScript,
    models: &SessionModels,
    seed: u64,
    pacing: Pacing,
    inbox: &Receiver<Inbound>,
    outbox: &Outbox,
) -> Result<SessionRecord> {
    script.validate()?;
    for t in &script.tasks {
        models.assistant_for(t)?;
    }
    Session {
        script,
        models,
        pacing,
        inbox,
        outbox,
        rec: SessionRecord::new(seed, script.clone()),
        held: 0.0,
        t_client: 0.0,
    }
    .run()
}

/// Re-simulates every trial from the recorded input stream.
pub fn replay(record: &SessionRecord, models: &SessionModels) -> Result<Vec<TrialLog>> {
    let mut out = Vec::with_capacity(record.trials.len());
    for tr in &record.trials {
        let task = record
            .script
            .tasks
            .get(tr.task)
            .ok_or_else(|| Error::Recording(format!("trial {} refers to missing task {}", tr.trial_index, tr.task)))?;
        let assistant = models.assistant_for(task)?;
        let mut sim = TrialSim::new(
            task.mode,
            assistant,
            models.predictor.as_ref(),
            &record.script.settings,
            task.trial_seconds,
            tr.seed,
        )?;
        let mut events = record.inputs.iter().filter(|e| e.trial == tr.trial_index).peekable();
        let mut held = 0.0;
        for k in 0..tr.log.len() {
            while let Some(e) = events.next_if(|e| e.step <= k) {
                held = e.deflection;
            }
            sim.step(held)?;
        }
        out.push(sim.log);
    }
    Ok(out)
}

/// True when replay reproduces every logged state bit for bit.
pub fn verify_replay(record: &SessionRecord, models: &SessionModels) -> Result<bool> {
    let again = replay(record, models)?;
    Ok(again.iter().zip(&record.trials).all(|(a, tr)| {
        a.len() == tr.log.len()
            && a.rows.iter().zip(&tr.log.rows).all(|(x, y)| {
                x.theta.to_bits() == y.theta.to_bits() && x.omega.to_bits() == y.omega.to_bits() && x == y
            })
    }))
}
