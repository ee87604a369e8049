//! Co-performance trials, batch experiments, human-data ingestion and log
//! export.
//!
//! A trial steps the pendulum at 200 Hz. Each step the crash predictor is
//! refreshed at its own rate (50 Hz by default), the gate is evaluated, and
//! while it is open the assistant issues a suggestion for the digital twin
//! to accept or ignore. Crashes reset the pendulum to the DOB and the trial
//! continues.

mod ingest;
mod log;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ingest::{ingest_human_csv, meta_path, resample, write_human_csv, HumanRecording, HumanRow, RecordingMeta};
pub use log::{export_logs, import_logs, LogFormat, LogRow, TrialLog, COLUMNS};

use crate::assistant::{gate, suggest, GatingPolicy};
use crate::crashpred::{CrashPredictor, CrashPredictorSpec};
use crate::error::{Error, Result};
use crate::metrics::{classify_deflection, trial_metrics, AggregateMetrics, MetricsRow, TrialMetrics};
use crate::nnet::{self, Network};
use crate::physics::{self, PendulumState, PhysicsConfig, VIP_HZ};
use crate::pilots::{
    build_window_at, AcceptanceEvent, ActorHead, DigitalTwin, FutureMode, History, NetPolicy, PdPilot,
    PendingPolicy, Policy, PolicyKind, TwinBehavior, TwinProfile, WindowConfig,
};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub seconds: f64,
    pub physics: PhysicsConfig,
    pub gating: GatingPolicy,
    pub behavior: TwinBehavior,
    pub pending: PendingPolicy,
    pub future_mode: FutureMode,
    /// Trials start at rest at an angle drawn uniformly from
    /// `[-start_range, start_range]` degrees.
    pub start_range: f64,
    /// A crash reset discards suggestions still waiting to execute.
    pub cancel_on_crash: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            seconds: 30.0,
            physics: PhysicsConfig::default(),
            gating: GatingPolicy::default(),
            behavior: TwinBehavior::default(),
            pending: PendingPolicy::default(),
            future_mode: FutureMode::default(),
            start_range: 5.0,
            cancel_on_crash: true,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.gating.validate()?;
        self.behavior.validate()?;
        if !(self.seconds > 0.0) || !(0.0..self.physics.crash_bound).contains(&self.start_range) {
            return Err(Error::Config(format!(
                "trial needs seconds > 0 and start_range in [0, {}), got {} and {}",
                self.physics.crash_bound, self.seconds, self.start_range
            )));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.seconds / self.physics.dt).round() as usize
    }
}

/// A trial log with the twin's decision on every suggestion offered.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub log: TrialLog,
    pub acceptance: Vec<AcceptanceEvent>,
    pub executed_suggestions: usize,
}

pub fn run_trial(
    pilot: &Policy,
    assistant: Option<&NetPolicy>,
    predictor: Option<&CrashPredictor>,
    cfg: &TrialConfig,
    seed: u64,
) -> Result<TrialLog> {
    Ok(run_trial_detailed(pilot, assistant, predictor, cfg, seed)?.log)
}

pub fn run_trial_detailed(
    pilot: &Policy,
    assistant: Option<&NetPolicy>,
    predictor: Option<&CrashPredictor>,
    cfg: &TrialConfig,
    seed: u64,
) -> Result<TrialRun> {
    cfg.validate()?;
    let hz = 1.0 / cfg.physics.dt;
    let mut rng = seeded(seed);
    let theta0 = if cfg.start_range > 0.0 {
        rng.gen_range(-cfg.start_range..=cfg.start_range)
    } else {
        0.0
    };
    let future = DigitalTwin::future_samples(pilot, cfg.future_mode, hz);
    let mut twin = DigitalTwin::new(pilot.clone(), cfg.behavior, cfg.pending, future);
    let decim = match predictor {
        Some(p) => ((hz / p.spec.sample_hz).round() as usize).max(1),
        None => 1,
    };
    let mut history = History::new(hz);
    let mut state = PendulumState::at_rest(theta0);
    let mut prob = 0.0;
    let n = cfg.samples();
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let t = physics::sample_time(k, cfg.physics.dt);
        history.push_state(state.theta, state.omega);
        if let Some(p) = predictor {
            if k % decim == 0 {
                prob = p.predict_at(&history, k).map_err(|e| e.in_component("crash predictor"))?;
            }
        }
        let suggestion = match assistant {
            Some(a) if gate(prob, state.theta, &cfg.gating) => {
                let w = build_window_at(&history, k, &a.window).map_err(|e| e.in_component("assistant"))?;
                Some(suggest(a, &w, t).map_err(|e| e.in_component("assistant"))?)
            }
            _ => None,
        };
        let (own, d, executor) = twin
            .step(&history, k, suggestion.as_ref(), &mut rng)
            .map_err(|e| e.in_component("pilot"))?;
        history.push_deflection(d);
        let out = physics::step(state, d, &cfg.physics)?;
        rows.push(LogRow {
            t,
            theta: state.theta,
            omega: state.omega,
            executed_deflection: d,
            crash_probability: prob,
            pilot_deflection: own,
            assistant_deflection: suggestion.map(|s| s.deflection),
            executor,
            deflection_class: classify_deflection(state.theta, state.omega, d),
            crash_flag: out.crashed,
        });
        if out.crashed && cfg.cancel_on_crash {
            twin.executor.cancel_pending();
        }
        state = out.state;
    }
    Ok(TrialRun {
        log: TrialLog { rows },
        acceptance: std::mem::take(&mut twin.executor.events),
        executed_suggestions: twin.executor.executed_suggestions,
    })
}

/// Where a pilot comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PilotSource {
    /// A trained twin network for one of the exemplar profiles.
    Twin { profile: TwinProfile, weights: PathBuf },
    /// Any pilot network with an explicit window.
    Network {
        weights: PathBuf,
        window: WindowConfig,
        #[serde(default)]
        head: ActorHead,
    },
    Pd(PdPilot),
    Random,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotEntry {
    pub name: String,
    #[serde(flatten)]
    pub source: PilotSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AssistantSource {
    None,
    Network {
        weights: PathBuf,
        kind: PolicyKind,
        /// Defaults by kind: squashed Gaussian for SAC and AIRL.
        #[serde(default)]
        head: Option<ActorHead>,
        /// Defaults to the state-only window.
        #[serde(default)]
        window: Option<WindowConfig>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantEntry {
    pub name: String,
    #[serde(flatten)]
    pub source: AssistantSource,
}

impl AssistantEntry {
    pub fn none() -> Self {
        AssistantEntry {
            name: "none".into(),
            source: AssistantSource::None,
        }
    }
}

pub fn default_head(kind: PolicyKind) -> ActorHead {
    match kind {
        PolicyKind::Sac | PolicyKind::Airl => ActorHead::SquashedGaussian,
        PolicyKind::Ddpg | PolicyKind::Bc | PolicyKind::Dl => ActorHead::Direct,
    }
}

fn load_network(path: &Path) -> Result<Network> {
    let (spec, params) = nnet::load(path)?;
    Network::new(spec, params)
}

pub fn load_pilot(entry: &PilotEntry) -> Result<Policy> {
    let wrap = |e: Error| e.model_load(&entry.name);
    Ok(match &entry.source {
        PilotSource::Twin { profile, weights } => {
            let net = load_network(weights).map_err(wrap)?;
            Policy::Network(NetPolicy::new(net, profile.window(), ActorHead::Direct, PolicyKind::Dl).map_err(wrap)?)
        }
        PilotSource::Network { weights, window, head } => {
            let net = load_network(weights).map_err(wrap)?;
            Policy::Network(NetPolicy::new(net, *window, *head, PolicyKind::Dl).map_err(wrap)?)
        }
        PilotSource::Pd(p) => Policy::Pd(p.clone()),
        PilotSource::Random => Policy::Random,
        PilotSource::Zero => Policy::Zero,
    })
}

pub fn load_assistant(entry: &AssistantEntry) -> Result<Option<NetPolicy>> {
    match &entry.source {
        AssistantSource::None => Ok(None),
        AssistantSource::Network {
            weights,
            kind,
            head,
            window,
        } => {
            let wrap = |e: Error| e.model_load(&entry.name);
            let net = load_network(weights).map_err(wrap)?;
            let window = window.unwrap_or(WindowConfig::state_only(VIP_HZ));
            let head = head.unwrap_or(default_head(*kind));
            Ok(Some(NetPolicy::new(net, window, head, *kind).map_err(wrap)?))
        }
    }
}

pub fn load_predictor(path: Option<&Path>, spec: CrashPredictorSpec) -> Result<Option<CrashPredictor>> {
    path.map(|p| CrashPredictor::load(spec, p).map_err(|e| e.model_load("crash predictor")))
        .transpose()
}

/// Parses a config file: TOML for `.toml`, JSON otherwise.
pub fn read_config<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PilotEntry {
    pub fn resolve_paths(&mut self, base: &Path) {
        match &mut self.source {
            PilotSource::Twin { weights, .. } | PilotSource::Network { weights, .. } => resolve(base, weights),
            _ => {}
        }
    }
}

impl AssistantEntry {
    pub fn resolve_paths(&mut self, base: &Path) {
        if let AssistantSource::Network { weights, .. } = &mut self.source {
            resolve(base, weights);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub pilots: Vec<PilotEntry>,
    pub assistants: Vec<AssistantEntry>,
    pub crash_predictor: Option<PathBuf>,
    pub crash_spec: CrashPredictorSpec,
    pub trials_per_cell: usize,
    pub trial: TrialConfig,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pilots: Vec::new(),
            assistants: vec![AssistantEntry::none()],
            crash_predictor: None,
            crash_spec: CrashPredictorSpec::default(),
            trials_per_cell: 3,
            trial: TrialConfig::default(),
            seed: 0,
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ExperimentConfig = read_config(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.pilots.iter_mut().for_each(|p| p.resolve_paths(base));
        cfg.assistants.iter_mut().for_each(|a| a.resolve_paths(base));
        if let Some(p) = cfg.crash_predictor.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pilots.is_empty() || self.assistants.is_empty() {
            return Err(Error::Config("pilot and assistant rosters must be non-empty".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::Config("trials_per_cell must be positive".into()));
        }
        let mut names: Vec<&str> = self.pilots.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        let mut anames: Vec<&str> = self.assistants.iter().map(|a| a.name.as_str()).collect();
        anames.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || anames.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("roster names must be unique".into()));
        }
        self.crash_spec.validate()?;
        self.trial.validate()
    }

    /// Seed of trial `trial` in cell `cell`; distinct for every pair.
    pub fn trial_seed(&self, cell: usize, trial: usize) -> u64 {
        derive_seed(self.seed, cell as u64, trial as u64)
    }
}

/// Loaded rosters for an experiment.
#[derive(Debug, Clone)]
pub struct Models {
    pub pilots: Vec<(String, Policy)>,
    pub assistants: Vec<(String, Option<NetPolicy>)>,
    pub predictor: Option<CrashPredictor>,
}

impl Models {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Models {
            pilots: cfg
                .pilots
                .iter()
                .map(|p| Ok((p.name.clone(), load_pilot(p)?)))
                .collect::<Result<_>>()?,
            assistants: cfg
                .assistants
                .iter()
                .map(|a| Ok((a.name.clone(), load_assistant(a)?)))
                .collect::<Result<_>>()?,
            predictor: load_predictor(cfg.crash_predictor.as_deref(), cfg.crash_spec)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub pilot: String,
    pub assistant: String,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub logs: Vec<TrialLog>,
    pub metrics: Vec<TrialMetrics>,
    pub mean: Option<AggregateMetrics>,
    /// First failure in the cell; its remaining trials are still run.
    pub error: Option<String>,
}

impl CellResult {
    pub fn total_crashes(&self) -> usize {
        self.metrics.iter().map(|m| m.crashes).sum()
    }
}

/// Assisted minus unassisted means for one pilot and assistant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub pilot: String,
    pub assistant: String,
    pub delta: AggregateMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub deltas: Vec<DeltaRow>,
}

impl ExperimentResult {
    pub fn cell(&self, pilot: &str, assistant: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.pilot == pilot && c.assistant == assistant)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let models = Models::load(cfg)?;
    run_experiment_with(cfg, &models)
}

/// Runs every pilot × assistant cell. Cells are indexed pilot-major, and
/// trial failures are recorded in their cell.
pub fn run_experiment_with(cfg: &ExperimentConfig, models: &Models) -> Result<ExperimentResult> {
    cfg.validate()?;
    let n_assist = models.assistants.len();
    let cells = models.pilots.len() * n_assist;
    let jobs: Vec<(usize, usize)> = (0..cells)
        .flat_map(|c| (0..cfg.trials_per_cell).map(move |t| (c, t)))
        .collect();
    let run = |&(c, t): &(usize, usize)| -> Result<TrialLog> {
        let pilot = &models.pilots[c / n_assist].1;
        let assistant = models.assistants[c % n_assist].1.as_ref();
        run_trial(pilot, assistant, models.predictor.as_ref(), &cfg.trial, cfg.trial_seed(c, t))
    };
    let outcomes: Vec<Result<TrialLog>> = if cfg.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    let mut results = Vec::with_capacity(cells);
    let mut it = outcomes.into_iter();
    for c in 0..cells {
        let mut cell = CellResult {
            pilot: models.pilots[c / n_assist].0.clone(),
            assistant: models.assistants[c % n_assist].0.clone(),
            seeds: (0..cfg.trials_per_cell).map(|t| cfg.trial_seed(c, t)).collect(),
            logs: Vec::new(),
            metrics: Vec::new(),
            mean: None,
            error: None,
        };
        for _ in 0..cfg.trials_per_cell {
            match it.next().expect("one outcome per job").and_then(|log| Ok((trial_metrics(&log)?, log))) {
                Ok((m, log)) => {
                    cell.metrics.push(m);
                    cell.logs.push(log);
                }
                Err(e) => {
                    cell.error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        cell.mean = AggregateMetrics::mean_of(&cell.metrics);
        results.push(cell);
    }
    let mut deltas = Vec::new();
    for (pi, (pilot, _)) in models.pilots.iter().enumerate() {
        let row = &results[pi * n_assist..(pi + 1) * n_assist];
        let Some(base) = models
            .assistants
            .iter()
            .position(|(_, a)| a.is_none())
            .and_then(|j| row[j].mean)
        else {
            continue;
        };
        for (j, (name, a)) in models.assistants.iter().enumerate() {
            if a.is_none() {
                continue;
            }
            if let Some(m) = row[j].mean {
                deltas.push(DeltaRow {
                    pilot: pilot.clone(),
                    assistant: name.clone(),
                    delta: m.minus(&base),
                });
            }
        }
    }
    Ok(ExperimentResult { cells: results, deltas })
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_aggregate_csv(path: &Path, rows: &[(String, String, AggregateMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Recording(format!("{}: {e}", path.display())))?;
    let mut header = vec!["pilot", "assistant"];
    header.extend(AggregateMetrics::FIELDS);
    w.write_record(&header)?;
    for (p, a, m) in rows {
        let mut rec = vec![p.clone(), a.clone()];
        rec.extend(m.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes trial logs, per-trial metrics, cell means, deltas and a JSON
/// summary under `dir`.
pub fn write_experiment(result: &ExperimentResult, dir: impl AsRef<Path>, format: LogFormat) -> Result<()> {
    let dir = dir.as_ref();
    let logs_dir = dir.join("logs");
    fs::create_dir_all(&logs_dir).map_err(|e| Error::io(&logs_dir, e))?;
    let ext = match format {
        LogFormat::Csv => "csv",
        LogFormat::Jsonl => "jsonl",
    };
    let mut per_trial = Vec::new();
    let mut means = Vec::new();
    for (i, c) in result.cells.iter().enumerate() {
        let name = format!("{i:03}_{}__{}.{ext}", file_stem(&c.pilot), file_stem(&c.assistant));
        export_logs(&c.logs, format, logs_dir.join(name))?;
        for (t, m) in c.metrics.iter().enumerate() {
            per_trial.push(MetricsRow {
                label: format!("{}/{}/{t}", c.pilot, c.assistant),
                metrics: *m,
            });
        }
        if let Some(m) = c.mean {
            means.push((c.pilot.clone(), c.assistant.clone(), m));
        }
    }
    crate::metrics::write_metrics_csv(dir.join("metrics.csv"), &per_trial)?;
    write_aggregate_csv(&dir.join("aggregate.csv"), &means)?;
    let deltas: Vec<_> = result
        .deltas
        .iter()
        .map(|d| (d.pilot.clone(), d.assistant.clone(), d.delta))
        .collect();
    write_aggregate_csv(&dir.join("deltas.csv"), &deltas)?;
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(result)?).map_err(|e| Error::io(&summary, e))
}

/// One pilot flown for a number of trials, optionally assisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub pilot: PilotEntry,
    #[serde(default = "AssistantEntry::none")]
    pub assistant: AssistantEntry,
    #[serde(default)]
    pub crash_predictor: Option<PathBuf>,
    #[serde(default)]
    pub crash_spec: CrashPredictorSpec,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub trial: TrialConfig,
}

fn one() -> usize {
    1
}

impl SimulateConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: SimulateConfig = read_config(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.pilot.resolve_paths(base);
        cfg.assistant.resolve_paths(base);
        if let Some(p) = cfg.crash_predictor.as_mut() {
            resolve(base, p);
        }
        Ok(cfg)
    }
}

/// Trial `i` uses `derive_seed(seed, 0, i)`.
pub fn simulate(cfg: &SimulateConfig, seed: u64) -> Result<Vec<TrialLog>> {
    cfg.trial.validate()?;
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    let pilot = load_pilot(&cfg.pilot)?;
    let assistant = load_assistant(&cfg.assistant)?;
    let predictor = load_predictor(cfg.crash_predictor.as_deref(), cfg.crash_spec)?;
    (0..cfg.trials)
        .map(|i| run_trial(&pilot, assistant.as_ref(), predictor.as_ref(), &cfg.trial, derive_seed(seed, 0, i as u64)))
        .collect()
}
