//! Subcommands of the `vip` binary. Each reads one TOML or JSON config
//! file (TOML when the extension is `.toml`) and takes `--seed`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use vip_core::crashpred::{
    evaluate_crash_predictor, generate_corpus, label_corpus, train_crash_predictor, CrashPredictorSpec,
    CrashTrainConfig, Trajectory,
};
use vip_core::harness::{
    export_logs, import_logs, ingest_human_csv, read_config, resample, run_experiment, simulate, write_experiment,
    write_human_csv, ExperimentConfig, LogFormat, SimulateConfig, TrialLog,
};
use vip_core::metrics::{
    cluster_proficiency, cohort_scores, equiprobability_curve, trial_metrics, write_metrics_csv, write_metrics_json,
    MetricsRow,
};
use vip_core::nnet;
use vip_core::physics::PhysicsConfig;
use vip_core::pilots::{demonstrations, History, PdPilot, Policy, TwinProfile};
use vip_core::rl::{
    collect_demos, evaluate, train_airl, train_bc, write_train_log, Algo, AlgoConfig, BcConfig, DdpgTrainer,
    EnvConfig, SacTrainer,
};
use vip_core::pilots::PolicyKind;
use vip_core::rng::{derive_seed, seeded};
use vip_core::{Error, Result};
use vip_liveserver::{record_session, LiveServer, ServeError, ServerOptions, SessionModels, SessionScript};

#[derive(Debug, Parser)]
#[command(name = "vip", version, about = "Inverted-pendulum pilots, assistants and co-performance studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML or JSON config file.
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file or directory; each command has its own default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a DDPG, SAC or AIRL assistant.
    TrainRl(Common),
    /// Behavior-clone a pilot twin from recordings or a scripted pilot.
    TrainPilot(Common),
    /// Train and evaluate the crash predictor.
    TrainCrashpred(Common),
    /// Run pilot/assistant trials and export the logs.
    Simulate(Common),
    /// Run a pilot x assistant matrix.
    Experiment(Common),
    /// Compute metrics, scores, clusters and equiprobability curves from logs.
    Metrics(Common),
    /// Validate and optionally resample a human recording.
    Ingest(Common),
    /// Serve one live session over a websocket.
    Serve {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status for an error: 2 for configuration problems, 3 for models
/// that fail to load, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::ModelLoad { .. } => 3,
        Error::Component { source, .. } => exit_code(source),
        _ => 1,
    }
}

pub fn serve_exit_code(e: &ServeError) -> i32 {
    match e {
        ServeError::Core(e) => exit_code(e),
        _ => 1,
    }
}

fn base_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Evaluation {
    pub seeds: Vec<u64>,
    pub seconds: f64,
    pub start_range: f64,
}

impl Default for Evaluation {
    fn default() -> Self {
        Evaluation {
            seeds: vec![1, 2, 3],
            seconds: 60.0,
            start_range: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertSource {
    pub pilot: PdPilot,
    pub demos: usize,
    pub episode_seconds: f64,
}

impl Default for ExpertSource {
    fn default() -> Self {
        ExpertSource {
            pilot: PdPilot::expert(),
            demos: 20_000,
            episode_seconds: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRlConfig {
    pub algo: AlgoConfig,
    pub env: EnvConfig,
    /// Environment steps; AIRL runs `steps / airl_steps_per_iter` rounds.
    pub steps: usize,
    /// Demonstrations for AIRL.
    pub expert: ExpertSource,
    pub eval: Evaluation,
}

impl Default for TrainRlConfig {
    fn default() -> Self {
        TrainRlConfig {
            algo: AlgoConfig::default(),
            env: EnvConfig::default(),
            steps: 200_000,
            expert: ExpertSource::default(),
            eval: Evaluation::default(),
        }
    }
}

pub fn train_rl(args: &Common) -> Result<()> {
    let cfg: TrainRlConfig = read_config(&args.config)?;
    cfg.algo.validate()?;
    cfg.env.validate()?;
    let out = args.out.clone().unwrap_or_else(|| "assistant.json".into());
    let (policy, log) = match cfg.algo.algo {
        Algo::Ddpg => {
            let mut t = DdpgTrainer::new(cfg.env, cfg.algo.clone(), args.seed)?;
            t.run(cfg.steps)?;
            (t.policy(), t.log().to_vec())
        }
        Algo::Sac => {
            let mut t = SacTrainer::new(cfg.env, cfg.algo.clone(), args.seed)?;
            t.run(cfg.steps)?;
            (t.policy(PolicyKind::Sac), t.log().to_vec())
        }
        Algo::Airl => {
            let demos = collect_demos(
                &cfg.expert.pilot,
                &cfg.env,
                cfg.expert.demos,
                cfg.expert.episode_seconds,
                derive_seed(args.seed, 1, 0),
            )?;
            let rounds = (cfg.steps / cfg.algo.airl_steps_per_iter.max(1)).max(1);
            (train_airl(&cfg.env, &cfg.algo, demos, args.seed, rounds)?.actor, Vec::new())
        }
        Algo::Bc => return Err(Error::Config("train-rl supports DDPG, SAC and AIRL; use train-pilot for cloning".into())),
    };
    create_parent(&out)?;
    nnet::save(&policy.net.spec, &policy.net.params, &out)?;
    if !log.is_empty() {
        write_train_log(out.with_extension("log.jsonl"), &log)?;
    }
    let e = evaluate(
        &Policy::Network(policy),
        &cfg.env.physics,
        cfg.eval.start_range,
        &cfg.eval.seeds,
        cfg.eval.seconds,
    )?;
    println!("{}", serde_json::to_string(&e)?);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedSource {
    pub pilot: PdPilot,
    pub trials: usize,
    pub seconds: f64,
    pub start_range: f64,
}

impl Default for ScriptedSource {
    fn default() -> Self {
        ScriptedSource {
            pilot: PdPilot::expert(),
            trials: 20,
            seconds: 30.0,
            start_range: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPilotConfig {
    pub profile: TwinProfile,
    /// Human recordings in the ingest CSV format.
    #[serde(default)]
    pub recordings: Vec<PathBuf>,
    /// Rollouts of a scripted pilot, used when there are no recordings.
    #[serde(default)]
    pub scripted: Option<ScriptedSource>,
    #[serde(default)]
    pub bc: BcConfig,
}

fn scripted_histories(src: &ScriptedSource, seed: u64) -> Result<Vec<History>> {
    use rand::Rng;
    let physics = PhysicsConfig::default();
    (0..src.trials)
        .map(|i| {
            let s = derive_seed(seed, 2, i as u64);
            let theta0 = seeded(s).gen_range(-src.start_range..=src.start_range);
            Ok(vip_core::crashpred::rollout(&Policy::Pd(src.pilot.clone()), &physics, theta0, src.seconds, s)?.history)
        })
        .collect()
}

pub fn train_pilot(args: &Common) -> Result<()> {
    let mut cfg: TrainPilotConfig = read_config(&args.config)?;
    cfg.bc.validate()?;
    let base = base_of(&args.config).to_path_buf();
    cfg.recordings.iter_mut().for_each(|p| resolve(&base, p));
    let histories: Vec<History> = if !cfg.recordings.is_empty() {
        cfg.recordings
            .iter()
            .map(|p| Ok(ingest_human_csv(p)?.to_history()))
            .collect::<Result<_>>()?
    } else if let Some(src) = &cfg.scripted {
        scripted_histories(src, args.seed)?
    } else {
        return Err(Error::Config("train-pilot needs `recordings` or a `scripted` source".into()));
    };
    let window = cfg.profile.window();
    let mut demos = Vec::new();
    for h in &histories {
        demos.extend(demonstrations(h, &window)?);
    }
    let net = train_bc(&cfg.profile.network_spec(), &demos, args.seed, &cfg.bc)?;
    let out = args.out.clone().unwrap_or_else(|| "pilot.json".into());
    create_parent(&out)?;
    nnet::save(&net.spec, &net.params, &out)?;
    println!("{{\"demonstrations\":{}}}", demos.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCrashConfig {
    pub spec: CrashPredictorSpec,
    pub train: CrashTrainConfig,
    /// Synthetic rollouts per corpus pilot.
    pub per_pilot: usize,
    pub seconds: f64,
    /// Extra human recordings appended to the training split.
    pub recordings: Vec<PathBuf>,
    /// Every n-th trajectory is held out for evaluation.
    pub hold_out_every: usize,
}

impl Default for TrainCrashConfig {
    fn default() -> Self {
        TrainCrashConfig {
            spec: CrashPredictorSpec::default(),
            train: CrashTrainConfig::default(),
            per_pilot: 10,
            seconds: 60.0,
            recordings: Vec::new(),
            hold_out_every: 5,
        }
    }
}

pub fn train_crashpred(args: &Common) -> Result<()> {
    let mut cfg: TrainCrashConfig = read_config(&args.config)?;
    cfg.spec.validate()?;
    if cfg.hold_out_every < 2 {
        return Err(Error::Config("hold_out_every must be at least 2".into()));
    }
    let base = base_of(&args.config).to_path_buf();
    cfg.recordings.iter_mut().for_each(|p| resolve(&base, p));
    let corpus = generate_corpus(cfg.per_pilot, cfg.seconds, args.seed)?;
    let (mut train, mut held): (Vec<Trajectory>, Vec<Trajectory>) = (Vec::new(), Vec::new());
    for (i, t) in corpus.into_iter().enumerate() {
        if i % cfg.hold_out_every == cfg.hold_out_every - 1 {
            held.push(t);
        } else {
            train.push(t);
        }
    }
    for p in &cfg.recordings {
        let rec = ingest_human_csv(p)?;
        let rec = if rec.sample_hz < 200.0 { resample(&rec, 200.0)? } else { rec };
        train.push(Trajectory {
            history: rec.to_history(),
            crash_steps: Vec::new(),
        });
    }
    let pred = train_crash_predictor(&label_corpus(&train, &cfg.spec)?, cfg.spec, args.seed, &cfg.train)?;
    let out = args.out.clone().unwrap_or_else(|| "crashpred.json".into());
    create_parent(&out)?;
    pred.save(&out)?;
    let report = evaluate_crash_predictor(&pred, &label_corpus(&held, &cfg.spec)?)?;
    write_json(&out.with_extension("report.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn run_simulate(args: &Common) -> Result<()> {
    let cfg = SimulateConfig::load(&args.config)?;
    let logs = simulate(&cfg, args.seed)?;
    let out = args.out.clone().unwrap_or_else(|| "simulate.csv".into());
    create_parent(&out)?;
    export_logs(&logs, LogFormat::from_path(&out)?, &out)
}

pub fn run_experiment_cmd(args: &Common) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.seed = args.seed;
    let result = run_experiment(&cfg)?;
    let out = args.out.clone().unwrap_or_else(|| "experiment".into());
    write_experiment(&result, &out, LogFormat::Csv)?;
    for c in &result.cells {
        if let Some(e) = &c.error {
            eprintln!("cell {} x {} failed: {e}", c.pilot, c.assistant);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Exported trial logs (`.csv` or `.jsonl`).
    pub logs: Vec<PathBuf>,
    pub bin_width: f64,
    /// Cluster trials into proficiency groups (needs three distinct trials).
    pub cluster: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            logs: Vec::new(),
            bin_width: 5.0,
            cluster: true,
        }
    }
}

#[derive(Serialize)]
struct TrialSummary {
    label: String,
    score: f64,
    proficiency: Option<String>,
}

pub fn run_metrics(args: &Common) -> Result<()> {
    let mut cfg: MetricsConfig = read_config(&args.config)?;
    if cfg.logs.is_empty() || !(cfg.bin_width > 0.0) {
        return Err(Error::Config("metrics needs at least one log file and a positive bin_width".into()));
    }
    let base = base_of(&args.config).to_path_buf();
    cfg.logs.iter_mut().for_each(|p| resolve(&base, p));
    let mut all: Vec<TrialLog> = Vec::new();
    let mut rows = Vec::new();
    for p in &cfg.logs {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (i, log) in import_logs(LogFormat::from_path(p)?, p)?.into_iter().enumerate() {
            if log.is_empty() {
                continue;
            }
            rows.push(MetricsRow {
                label: format!("{stem}#{i}"),
                metrics: trial_metrics(&log)?,
            });
            all.push(log);
        }
    }
    let out = args.out.clone().unwrap_or_else(|| "metrics".into());
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_metrics_csv(out.join("metrics.csv"), &rows)?;
    write_metrics_json(out.join("metrics.json"), &rows)?;

    let metrics: Vec<_> = rows.iter().map(|r| r.metrics).collect();
    let scores = cohort_scores(&metrics);
    let labels = if cfg.cluster {
        match cluster_proficiency(&metrics, args.seed) {
            Ok(l) => Some(l),
            Err(Error::Degenerate(why)) => {
                eprintln!("skipping clustering: {why}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let summary: Vec<TrialSummary> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| TrialSummary {
            label: r.label.clone(),
            score: scores[i],
            proficiency: labels.as_ref().map(|l| format!("{:?}", l[i])),
        })
        .collect();
    write_json(&out.join("scores.json"), &summary)?;

    let curve = equiprobability_curve(&all, cfg.bin_width)?;
    let mut text = String::from("bin_start,p_destabilizing,p_anticipatory,p_corrective,count\n");
    for (lo, d, a, c, n) in curve.rows() {
        text += &format!("{lo},{d},{a},{c},{n}\n");
    }
    let p = out.join("equiprobability.csv");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub resample_hz: Option<f64>,
}

pub fn run_ingest(args: &Common) -> Result<()> {
    let mut cfg: IngestConfig = read_config(&args.config)?;
    resolve(base_of(&args.config), &mut cfg.input);
    let mut rec = ingest_human_csv(&cfg.input)?;
    if let Some(hz) = cfg.resample_hz {
        rec = resample(&rec, hz)?;
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.input.with_extension("ingested.csv"));
    create_parent(&out)?;
    write_human_csv(&out, &rec)?;
    println!(
        "{{\"rows\":{},\"sample_hz\":{},\"duration\":{}}}",
        rec.rows.len(),
        rec.sample_hz,
        rec.duration()
    );
    Ok(())
}

pub fn run_serve(script: &Path, port: u16, seed: u64, out: &Path) -> Result<(), ServeError> {
    let script = SessionScript::load(script)?;
    let models = SessionModels::load(&script)?;
    let rt = tokio::runtime::Runtime::new()?;
    let record = rt.block_on(async {
        let server = LiveServer::bind(("0.0.0.0", port)).await?;
        eprintln!("waiting for a client on {}", server.local_addr()?);
        server.run_session(script, models, seed, ServerOptions::default()).await
    })?;
    record_session(&record, out)?;
    if record.aborted {
        eprintln!("session aborted; partial record written to {}", out.display());
    }
    Ok(())
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::TrainRl(a) => train_rl(a),
        Command::TrainPilot(a) => train_pilot(a),
        Command::TrainCrashpred(a) => train_crashpred(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Experiment(a) => run_experiment_cmd(a),
        Command::Metrics(a) => run_metrics(a),
        Command::Ingest(a) => run_ingest(a),
        Command::Serve { script, port, seed, out } => {
            return match run_serve(script, *port, *seed, out) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    serve_exit_code(&e)
                }
            };
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
