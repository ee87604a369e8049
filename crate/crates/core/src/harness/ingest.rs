use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pilots::History;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanRow {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    pub deflection: f64,
}

/// Optional `<file>.meta.json` next to a recording.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordingMeta {
    pub subject: String,
    pub session: String,
    pub trial: String,
    pub sample_hz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanRecording {
    pub subject: String,
    pub session: String,
    pub trial: String,
    pub sample_hz: f64,
    pub rows: Vec<HumanRow>,
}

/// Rates the recordings come at: MARS 50 Hz and VIP 200 Hz.
pub const RECORDING_RATES: [f64; 2] = [50.0, 200.0];

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

fn median_spacing(rows: &[HumanRow]) -> f64 {
    let mut d: Vec<f64> = rows.windows(2).map(|w| w[1].t - w[0].t).collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

impl HumanRecording {
    pub fn span(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Rows times the sample period.
    pub fn duration(&self) -> f64 {
        self.rows.len() as f64 / self.sample_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.len() < 2 {
            return Err(Error::Recording(format!("{} rows; at least 2 needed", self.rows.len())));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if ![r.t, r.theta, r.omega, r.deflection].iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("recording row"));
            }
            if r.deflection.abs() > 1.0 {
                return Err(Error::DeflectionRange(r.deflection));
            }
            if i > 0 && r.t <= self.rows[i - 1].t {
                return Err(Error::Recording(format!(
                    "time is not increasing at row {i} ({} after {})",
                    r.t,
                    self.rows[i - 1].t
                )));
            }
        }
        let measured = 1.0 / median_spacing(&self.rows);
        if ((measured - self.sample_hz) / self.sample_hz).abs() > 0.01 {
            return Err(Error::Recording(format!(
                "declared {} Hz but samples arrive at {measured:.3} Hz",
                self.sample_hz
            )));
        }
        Ok(())
    }

    /// The recording as a pilot history; the deflection of each row is the
    /// one executed on that step.
    pub fn to_history(&self) -> History {
        let mut h = History::new(self.sample_hz);
        for r in &self.rows {
            h.push_state(r.theta, r.omega);
            h.push_deflection(r.deflection);
        }
        h
    }
}

/// Reads a `t,theta,omega,deflection` CSV (degrees, deg/s, unit interval)
/// and its optional metadata sidecar. Without a declared rate the median
/// spacing must match 50 or 200 Hz.
pub fn ingest_human_csv(path: impl AsRef<Path>) -> Result<HumanRecording> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Recording(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in ["t", "theta", "omega", "deflection"].iter().enumerate() {
        idx[slot] = headers
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| Error::MissingColumn((*name).into()))?;
    }
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; 4];
        for (slot, &i) in idx.iter().enumerate() {
            let field = rec.get(i).unwrap_or("").trim();
            v[slot] = field
                .parse()
                .map_err(|_| Error::Recording(format!("row {}: `{field}` is not a number", line + 1)))?;
        }
        rows.push(HumanRow {
            t: v[0],
            theta: v[1],
            omega: v[2],
            deflection: v[3],
        });
    }
    let meta_file = meta_path(path);
    let meta: RecordingMeta = if meta_file.exists() {
        let text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
        serde_json::from_str(&text)?
    } else {
        RecordingMeta::default()
    };
    if rows.len() < 2 {
        return Err(Error::Recording(format!("{} rows; at least 2 needed", rows.len())));
    }
    let sample_hz = match meta.sample_hz {
        Some(hz) => hz,
        None => {
            let measured = 1.0 / median_spacing(&rows);
            RECORDING_RATES
                .into_iter()
                .find(|r| ((measured - r) / r).abs() <= 0.01)
                .unwrap_or(measured)
        }
    };
    if !RECORDING_RATES.contains(&sample_hz) {
        return Err(Error::Recording(format!("sample rate {sample_hz} Hz is neither 50 nor 200")));
    }
    let rec = HumanRecording {
        subject: meta.subject,
        session: meta.session,
        trial: meta.trial,
        sample_hz,
        rows,
    };
    rec.validate()?;
    Ok(rec)
}

/// Resamples onto a uniform grid from the first sample. Angle and velocity
/// are interpolated linearly; deflection is held from the latest original
/// sample. A final point at the original end time is kept when the grid
/// does not land on it.
pub fn resample(rec: &HumanRecording, target_hz: f64) -> Result<HumanRecording> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::Config(format!("target rate {target_hz} must be positive")));
    }
    let src = &rec.rows;
    let (Some(first), Some(last)) = (src.first(), src.last()) else {
        return Err(Error::Empty("recording"));
    };
    const EPS: f64 = 1e-9;
    let n = ((last.t - first.t) * target_hz + EPS).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|i| first.t + i as f64 / target_hz).collect();
    if last.t - times[n] > EPS {
        times.push(last.t);
    }
    let mut out = Vec::with_capacity(times.len());
    let mut j = 0;
    for (i, &t) in times.iter().enumerate() {
        if i == times.len() - 1 {
            out.push(HumanRow { t: last.t, ..*last });
            continue;
        }
        while j + 1 < src.len() && src[j + 1].t <= t + EPS {
            j += 1;
        }
        let a = src[j];
        let row = if j + 1 < src.len() && (t - a.t).abs() > EPS {
            let b = src[j + 1];
            let w = (t - a.t) / (b.t - a.t);
            HumanRow {
                t,
                theta: a.theta + w * (b.theta - a.theta),
                omega: a.omega + w * (b.omega - a.omega),
                deflection: a.deflection,
            }
        } else {
            HumanRow { t, ..a }
        };
        out.push(row);
    }
    Ok(HumanRecording {
        sample_hz: target_hz,
        rows: out,
        ..rec.clone()
    })
}

pub fn write_human_csv(path: impl AsRef<Path>, rec: &HumanRecording) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Recording(format!("{}: {e}", path.display())))?;
    w.write_record(["t", "theta", "omega", "deflection"])?;
    for r in &rec.rows {
        w.write_record([r.t.to_string(), r.theta.to_string(), r.omega.to_string(), r.deflection.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = RecordingMeta {
        subject: rec.subject.clone(),
        session: rec.session.clone(),
        trial: rec.trial.clone(),
        sample_hz: Some(rec.sample_hz),
    };
    let mp = meta_path(path);
    fs::write(&mp, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&mp, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, hz: f64) -> HumanRecording {
        HumanRecording {
            subject: "s1".into(),
            session: "1".into(),
            trial: "1".into(),
            sample_hz: hz,
            rows: (0..n)
                .map(|i| {
                    let t = i as f64 / hz;
                    HumanRow {
                        t,
                        theta: 2.0 * t - 1.0,
                        omega: 2.0,
                        deflection: if i < n / 2 { -0.5 } else { 0.5 },
                    }
                })
                .collect(),
        }
    }

    fn write_plain(dir: &Path, rec: &HumanRecording) -> PathBuf {
        let p = dir.join("rec.csv");
        let mut text = String::from("t,theta,omega,deflection\n");
        for r in &rec.rows {
            text.push_str(&format!("{},{},{},{}\n", r.t, r.theta, r.omega, r.deflection));
        }
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn well_formed_fifty_hz_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_plain(dir.path(), &ramp(5000, 50.0));
        let rec = ingest_human_csv(&p).unwrap();
        assert_eq!(rec.sample_hz, 50.0);
        assert_eq!(rec.rows.len(), 5000);
        assert_eq!(rec.duration(), 100.0);
        assert!((rec.span() - 99.98).abs() < 1e-9);
    }

    #[test]
    fn sidecar_metadata_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_human_csv(&p, &ramp(400, 200.0)).unwrap();
        let rec = ingest_human_csv(&p).unwrap();
        assert_eq!(rec, ramp(400, 200.0));
    }

    #[test]
    fn shuffled_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = ramp(100, 50.0);
        rec.rows.swap(10, 40);
        let p = write_plain(dir.path(), &rec);
        let err = ingest_human_csv(&p).unwrap_err();
        assert!(err.to_string().contains("not increasing"), "{err}");
    }

    #[test]
    fn out_of_range_deflection_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = ramp(100, 50.0);
        rec.rows[3].deflection = 1.7;
        let p = write_plain(dir.path(), &rec);
        assert!(matches!(ingest_human_csv(&p), Err(Error::DeflectionRange(d)) if d == 1.7));
    }

    #[test]
    fn missing_column_and_rate_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "t,theta,deflection\n0,0,0\n0.02,0,0\n").unwrap();
        assert!(matches!(ingest_human_csv(&p), Err(Error::MissingColumn(c)) if c == "omega"));
        let p = write_plain(dir.path(), &ramp(100, 50.0));
        fs::write(meta_path(&p), r#"{"sample_hz": 200}"#).unwrap();
        assert!(ingest_human_csv(&p).is_err());
        fs::remove_file(meta_path(&p)).unwrap();
        let p = write_plain(dir.path(), &ramp(100, 73.0));
        assert!(ingest_human_csv(&p).is_err());
    }

    #[test]
    fn upsampled_ramp_is_exact() {
        let up = resample(&ramp(50, 50.0), 200.0).unwrap();
        assert_eq!(up.rows.len(), 197);
        for r in &up.rows {
            assert!((r.theta - (2.0 * r.t - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_keeps_endpoints() {
        let src = ramp(801, 200.0);
        let back = resample(&resample(&src, 50.0).unwrap(), 200.0).unwrap();
        assert_eq!(back.rows.first(), src.rows.first());
        assert_eq!(back.rows.last(), src.rows.last());
    }

    #[test]
    fn deflection_is_held_not_interpolated() {
        let src = ramp(10, 50.0);
        let up = resample(&src, 200.0).unwrap();
        for r in &up.rows {
            assert!(r.deflection == -0.5 || r.deflection == 0.5);
            let expect = if r.t < 0.1 - 1e-9 { -0.5 } else { 0.5 };
            assert_eq!(r.deflection, expect, "t = {}", r.t);
        }
    }
}
