//! On-disk session records.
//!
//! A record directory holds `session.json` (script, seed, per-trial
//! metadata, replay flag) and, when at least one trial ran, `logs.csv`,
//! `inputs.jsonl`, `suggestions.jsonl` and `episodes.jsonl`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use vip_core::assistant::{read_episodes, write_episodes};
use vip_core::harness::{export_logs, import_logs, LogFormat, TrialLog};
use vip_core::{Error, Result};

use crate::engine::SessionRecord;

pub const SESSION_FILE: &str = "session.json";
pub const LOGS_FILE: &str = "logs.csv";
pub const INPUTS_FILE: &str = "inputs.jsonl";
pub const SUGGESTIONS_FILE: &str = "suggestions.jsonl";
pub const EPISODES_FILE: &str = "episodes.jsonl";

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn record_session(record: &SessionRecord, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = dir.join(SESSION_FILE);
    fs::write(&meta, serde_json::to_string_pretty(record)?).map_err(|e| Error::io(&meta, e))?;
    if record.trials.is_empty() {
        return Ok(());
    }
    export_logs(&record.logs(), LogFormat::Csv, dir.join(LOGS_FILE))?;
    write_jsonl(&dir.join(INPUTS_FILE), &record.inputs)?;
    write_jsonl(&dir.join(SUGGESTIONS_FILE), &record.suggestions)?;
    write_episodes(dir.join(EPISODES_FILE), &record.episodes)
}

pub fn load_record(dir: impl AsRef<Path>) -> Result<SessionRecord> {
    let dir = dir.as_ref();
    let meta = dir.join(SESSION_FILE);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let mut rec: SessionRecord = serde_json::from_str(&text)?;
    if rec.trials.is_empty() {
        return Ok(rec);
    }
    let mut logs = import_logs(LogFormat::Csv, dir.join(LOGS_FILE))?;
    if logs.len() > rec.trials.len() {
        return Err(Error::Recording(format!(
            "{} holds {} trials but the metadata lists {}",
            LOGS_FILE,
            logs.len(),
            rec.trials.len()
        )));
    }
    logs.resize(rec.trials.len(), TrialLog::default());
    for (t, log) in rec.trials.iter_mut().zip(logs) {
        t.log = log;
    }
    rec.inputs = read_jsonl(&dir.join(INPUTS_FILE))?;
    rec.suggestions = read_jsonl(&dir.join(SUGGESTIONS_FILE))?;
    rec.episodes = read_episodes(dir.join(EPISODES_FILE))?;
    Ok(rec)
}
