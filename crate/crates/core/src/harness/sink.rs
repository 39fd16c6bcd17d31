//! Results stream: one JSON object per line, appended atomically.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Method, RunOutcome};
use crate::error::{FhaError, Result};
use crate::numfmt::serialize_sig17;

/// One completed run, exactly as written to the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultLine {
    pub method: Method,
    pub task: String,
    pub n_t: usize,
    pub seed: u64,
    #[serde(serialize_with = "serialize_sig17")]
    pub accuracy: f64,
    #[serde(serialize_with = "serialize_sig17")]
    pub wa_accuracy: f64,
    pub wall_ms: u64,
}

/// A failed run. It keeps the grid coordinates so the batch stays auditable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorLine {
    pub method: Method,
    pub task: String,
    pub n_t: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunRecord {
    Result(ResultLine),
    Error(ErrorLine),
}

impl From<&RunOutcome> for RunRecord {
    fn from(o: &RunOutcome) -> Self {
        match o {
            Ok(r) => RunRecord::Result(ResultLine {
                method: r.method,
                task: r.task.clone(),
                n_t: r.n_t,
                seed: r.seed,
                accuracy: r.accuracy,
                wa_accuracy: r.wa_accuracy,
                wall_ms: r.wall_ms,
            }),
            Err(e) => RunRecord::Error(ErrorLine {
                method: e.method,
                task: e.task.clone(),
                n_t: e.n_t,
                seed: e.seed,
                error: e.error.clone(),
            }),
        }
    }
}

impl RunRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("run record serializes")
    }
}

/// Serializes appends from concurrent runs. Each record is formatted first
/// and written with a single call, then flushed, so a crash can at worst
/// truncate the record being written.
pub struct ResultSink {
    out: Mutex<Box<dyn Write + Send>>,
}

impl ResultSink {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        Self {
            out: Mutex::new(out),
        }
    }

    /// Appends to `path`, creating it if needed.
    pub fn append_to(path: &Path) -> Result<Self> {
        let f: File = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(Box::new(f)))
    }

    /// Truncates `path` and writes from the start.
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self::new(Box::new(File::create(path)?)))
    }

    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let mut line = record.to_line();
        line.push('\n');
        let mut out = self
            .out
            .lock()
            .map_err(|_| FhaError::Io(io::Error::other("result sink poisoned")))?;
        out.write_all(line.as_bytes())?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_line_has_exactly_the_documented_fields() {
        let rec = RunRecord::Result(ResultLine {
            method: Method::Tohan,
            task: "rot40".into(),
            n_t: 3,
            seed: 7,
            accuracy: 0.1,
            wa_accuracy: 0.5,
            wall_ms: 12,
        });
        let line = rec.to_line();
        assert_eq!(
            line,
            r#"{"method":"tohan","task":"rot40","n_t":3,"seed":7,"accuracy":0.10000000000000001,"wa_accuracy":0.50000000000000000,"wall_ms":12}"#
        );
        let back: RunRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn error_lines_parse_as_errors() {
        let line = r#"{"method":"ft","task":"t","n_t":1,"seed":0,"error":"boom"}"#;
        assert!(matches!(serde_json::from_str::<RunRecord>(line).unwrap(), RunRecord::Error(_)));
        let extra = r#"{"method":"ft","task":"t","n_t":1,"seed":0,"accuracy":0.5,"wa_accuracy":0.5,"wall_ms":1,"x":1}"#;
        assert!(serde_json::from_str::<RunRecord>(extra).is_err());
    }

    #[test]
    fn concurrent_appends_stay_whole() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let sink = ResultSink::create(&path).unwrap();
        std::thread::scope(|s| {
            for t in 0..4u64 {
                let sink = &sink;
                s.spawn(move || {
                    for i in 0..50 {
                        sink.append(&RunRecord::Error(ErrorLine {
                            method: Method::Wa,
                            task: "x".repeat(200),
                            n_t: 1,
                            seed: t * 100 + i,
                            error: "e".into(),
                        }))
                        .unwrap();
                    }
                });
            }
        });
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 200);
        for l in text.lines() {
            serde_json::from_str::<RunRecord>(l).unwrap();
        }
    }
}
