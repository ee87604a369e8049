use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::DeflectionClass;
use crate::pilots::Executor;

/// One 200 Hz sample of a co-performance trial. The state is the one
/// observed at `t`; `crash_flag` marks a step that crossed the bound, so the
/// next row holds the reset state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    pub executed_deflection: f64,
    pub crash_probability: f64,
    pub pilot_deflection: f64,
    /// Suggestion issued at this sample, if any.
    pub assistant_deflection: Option<f64>,
    pub executor: Executor,
    pub deflection_class: DeflectionClass,
    pub crash_flag: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub rows: Vec<LogRow>,
}

impl TrialLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.theta).collect()
    }

    pub fn suggestions(&self) -> usize {
        self.rows.iter().filter(|r| r.assistant_deflection.is_some()).count()
    }

    pub fn assistant_executions(&self) -> usize {
        self.rows.iter().filter(|r| r.executor == Executor::Assistant).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl LogFormat {
    /// Picks the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(LogFormat::Csv),
            Some("jsonl") => Ok(LogFormat::Jsonl),
            _ => Err(Error::Config(format!(
                "cannot infer log format from {}; use .csv or .jsonl",
                path.display()
            ))),
        }
    }
}

/// Column order of exported logs; `trial` indexes the log within the file.
pub const COLUMNS: [&str; 11] = [
    "trial",
    "t",
    "theta",
    "omega",
    "executed_deflection",
    "crash_probability",
    "pilot_deflection",
    "assistant_deflection",
    "executor",
    "deflection_class",
    "crash_flag",
];

#[derive(Serialize, Deserialize)]
struct Tagged<R> {
    trial: usize,
    #[serde(flatten)]
    row: R,
}

#[derive(Deserialize)]
struct CsvRow {
    trial: usize,
    t: f64,
    theta: f64,
    omega: f64,
    executed_deflection: f64,
    crash_probability: f64,
    pilot_deflection: f64,
    assistant_deflection: Option<f64>,
    executor: Executor,
    deflection_class: DeflectionClass,
    crash_flag: bool,
}

fn executor_str(e: Executor) -> &'static str {
    match e {
        Executor::Pilot => "pilot",
        Executor::Assistant => "assistant",
    }
}

/// Writes `logs` to one file. Floats use the shortest representation that
/// parses back to the same value.
pub fn export_logs(logs: &[TrialLog], format: LogFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match format {
        LogFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| Error::Recording(format!("{}: {e}", path.display())))?;
            w.write_record(COLUMNS)?;
            for (i, log) in logs.iter().enumerate() {
                for r in &log.rows {
                    w.write_record([
                        i.to_string(),
                        r.t.to_string(),
                        r.theta.to_string(),
                        r.omega.to_string(),
                        r.executed_deflection.to_string(),
                        r.crash_probability.to_string(),
                        r.pilot_deflection.to_string(),
                        r.assistant_deflection.map(|d| d.to_string()).unwrap_or_default(),
                        executor_str(r.executor).to_string(),
                        r.deflection_class.as_str().to_string(),
                        r.crash_flag.to_string(),
                    ])?;
                }
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        LogFormat::Jsonl => {
            let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(f);
            for (i, log) in logs.iter().enumerate() {
                for r in &log.rows {
                    let line = serde_json::to_string(&Tagged { trial: i, row: r })?;
                    writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
                }
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

fn push_row(logs: &mut Vec<TrialLog>, trial: usize, row: LogRow) -> Result<()> {
    if trial + 1 < logs.len() {
        return Err(Error::Recording(format!("trial index {trial} appears out of order")));
    }
    while logs.len() <= trial {
        logs.push(TrialLog::default());
    }
    logs[trial].rows.push(row);
    Ok(())
}

pub fn import_logs(format: LogFormat, path: impl AsRef<Path>) -> Result<Vec<TrialLog>> {
    let path = path.as_ref();
    let mut logs = Vec::new();
    match format {
        LogFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| Error::Recording(format!("{}: {e}", path.display())))?;
            let headers = r.headers()?.clone();
            for c in COLUMNS {
                if !headers.iter().any(|h| h == c) {
                    return Err(Error::MissingColumn(c.into()));
                }
            }
            for rec in r.deserialize() {
                let c: CsvRow = rec?;
                push_row(
                    &mut logs,
                    c.trial,
                    LogRow {
                        t: c.t,
                        theta: c.theta,
                        omega: c.omega,
                        executed_deflection: c.executed_deflection,
                        crash_probability: c.crash_probability,
                        pilot_deflection: c.pilot_deflection,
                        assistant_deflection: c.assistant_deflection,
                        executor: c.executor,
                        deflection_class: c.deflection_class,
                        crash_flag: c.crash_flag,
                    },
                )?;
            }
        }
        LogFormat::Jsonl => {
            let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let t: Tagged<LogRow> = serde_json::from_str(&line)?;
                push_row(&mut logs, t.trial, t.row)?;
            }
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, s: Option<f64>) -> LogRow {
        LogRow {
            t,
            theta: 0.1 + t,
            omega: -1.0 / 3.0,
            executed_deflection: 0.25,
            crash_probability: 0.123456789012345,
            pilot_deflection: -2.0e-17,
            assistant_deflection: s,
            executor: if s.is_some() { Executor::Assistant } else { Executor::Pilot },
            deflection_class: DeflectionClass::Corrective,
            crash_flag: t > 0.004,
        }
    }

    fn sample_logs() -> Vec<TrialLog> {
        vec![
            TrialLog {
                rows: vec![row(0.0, None), row(0.005, Some(-0.7))],
            },
            TrialLog {
                rows: vec![row(0.0, Some(1.0 / 7.0))],
            },
        ]
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        export_logs(&sample_logs(), LogFormat::Csv, &p).unwrap();
        assert_eq!(import_logs(LogFormat::Csv, &p).unwrap(), sample_logs());
        let header = fs::read_to_string(&p).unwrap();
        assert_eq!(header.lines().next().unwrap(), COLUMNS.join(","));
    }

    #[test]
    fn jsonl_round_trip_and_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        export_logs(&sample_logs(), LogFormat::Jsonl, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 3);
        assert_eq!(import_logs(LogFormat::Jsonl, &p).unwrap(), sample_logs());
    }

    #[test]
    fn empty_export_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        export_logs(&[], LogFormat::Csv, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().trim(), COLUMNS.join(","));
        assert!(import_logs(LogFormat::Csv, &p).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "trial,t,theta\n0,0,0\n").unwrap();
        assert!(matches!(import_logs(LogFormat::Csv, &p), Err(Error::MissingColumn(c)) if c == "omega"));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(LogFormat::from_path(Path::new("x.csv")).unwrap(), LogFormat::Csv);
        assert_eq!(LogFormat::from_path(Path::new("x.jsonl")).unwrap(), LogFormat::Jsonl);
        assert!(LogFormat::from_path(Path::new("x.txt")).is_err());
    }
}
