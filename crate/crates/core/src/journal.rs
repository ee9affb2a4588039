//! Run journal: one JSON header line followed by one JSON event per line.
//!
//! ```text
//! {"schema":"nexus-journal","version":1,"run":{...}}
//! {"seq":0,"t_ms":0,"worker":"prover-0","event":"episode_start",...}
//! ```
//!
//! `t_ms` and `dur_ms` are wall-clock; everything else is semantic and must be
//! identical between a run and its replay.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backends::{ProverVerdict, TokenUsage};
use crate::digest::Digest;
use crate::population::SketchId;

pub const SCHEMA: &str = "nexus-journal";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("journal is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Prover,
    Rater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStart {
        agent_kind: String,
        n_subagents: usize,
        n_raters: usize,
        budget: u64,
    },
    EpisodeStart {
        episode: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<SketchId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        directive: Option<String>,
    },
    Turn {
        turn: u32,
        component: Component,
        usage: TokenUsage,
        text: String,
        tool_calls: usize,
    },
    ToolCall {
        tool: String,
        ok: bool,
        detail: String,
    },
    Diagnostics {
        compiles: bool,
        errors: usize,
        open_goals: usize,
    },
    Limit {
        limit: String,
        value: u32,
    },
    GoalHit {
        goal_key: Digest,
        verdict: ProverVerdict,
    },
    ProverDispatch {
        goal_key: Digest,
        goal: String,
        verdict: ProverVerdict,
    },
    EpisodeEnd {
        episode: u64,
        solved: bool,
        edits: u32,
        prover_calls: u32,
        reason: String,
    },
    Rejected {
        reasons: Vec<String>,
    },
    Insert {
        id: SketchId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<SketchId>,
        open_goals: usize,
    },
    Match {
        players: Vec<SketchId>,
    },
    Select {
        parent: SketchId,
        fallback: bool,
    },
    Solve {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<SketchId>,
    },
    Stop {
        reason: String,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::RunStart { .. } => "run_start",
            Event::EpisodeStart { .. } => "episode_start",
            Event::Turn { .. } => "turn",
            Event::ToolCall { .. } => "tool_call",
            Event::Diagnostics { .. } => "diagnostics",
            Event::Limit { .. } => "limit",
            Event::GoalHit { .. } => "goal_hit",
            Event::ProverDispatch { .. } => "prover_dispatch",
            Event::EpisodeEnd { .. } => "episode_end",
            Event::Rejected { .. } => "rejected",
            Event::Insert { .. } => "insert",
            Event::Match { .. } => "match",
            Event::Select { .. } => "select",
            Event::Solve { .. } => "solve",
            Event::Stop { .. } => "stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dur_ms: Option<u64>,
    pub worker: String,
    #[serde(flatten)]
    pub event: Event,
}

impl JournalRecord {
    /// Canonical JSON of the record without its wall-clock fields.
    pub fn semantic(&self) -> String {
        let mut v = serde_json::to_value(self).expect("record serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("t_ms");
            obj.remove("dur_ms");
        }
        v.to_string()
    }
}

struct Inner {
    records: Vec<JournalRecord>,
    writer: Option<BufWriter<File>>,
    io_error: Option<String>,
}

/// Thread-safe, append-only event log for one run.
pub struct RunJournal {
    inner: Mutex<Inner>,
    start: Instant,
    header: Value,
}

impl std::fmt::Debug for RunJournal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunJournal").field("header", &self.header).finish()
    }
}

impl RunJournal {
    pub fn in_memory(run: Value) -> Self {
        RunJournal {
            inner: Mutex::new(Inner {
                records: Vec::new(),
                writer: None,
                io_error: None,
            }),
            start: Instant::now(),
            header: header(run),
        }
    }

    pub fn create(path: &Path, run: Value) -> Result<Self, JournalError> {
        let mut writer = BufWriter::new(File::create(path)?);
        let header = header(run);
        writeln!(writer, "{header}")?;
        writer.flush()?;
        Ok(RunJournal {
            inner: Mutex::new(Inner {
                records: Vec::new(),
                writer: Some(writer),
                io_error: None,
            }),
            start: Instant::now(),
            header,
        })
    }

    pub fn header(&self) -> &Value {
        &self.header
    }

    pub fn log(&self, worker: &str, event: Event) -> u64 {
        self.log_with_duration(worker, event, None)
    }

    pub fn log_with_duration(&self, worker: &str, event: Event, dur_ms: Option<u64>) -> u64 {
        let mut inner = self.inner.lock().expect("journal lock poisoned");
        let t_ms = self.start.elapsed().as_millis() as u64;
        let seq = inner.records.len() as u64;
        let record = JournalRecord {
            seq,
            t_ms,
            dur_ms,
            worker: worker.to_string(),
            event,
        };
        if let Some(w) = inner.writer.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            let res = writeln!(w, "{line}").and_then(|_| w.flush());
            if let Err(e) = res {
                inner.io_error.get_or_insert(e.to_string());
            }
        }
        inner.records.push(record);
        seq
    }

    pub fn records(&self) -> Vec<JournalRecord> {
        self.inner.lock().expect("journal lock poisoned").records.clone()
    }

    /// First write error, if any happened.
    pub fn io_error(&self) -> Option<String> {
        self.inner.lock().expect("journal lock poisoned").io_error.clone()
    }

    pub fn count(&self, pred: impl Fn(&Event) -> bool) -> usize {
        let inner = self.inner.lock().expect("journal lock poisoned");
        inner.records.iter().filter(|r| pred(&r.event)).count()
    }
}

fn header(run: Value) -> Value {
    json!({"schema": SCHEMA, "version": SCHEMA_VERSION, "run": run})
}

/// Reads a journal file, returning the `run` header value and the records.
pub fn read_journal(path: &Path) -> Result<(Value, Vec<JournalRecord>), JournalError> {
    let reader = BufReader::new(File::open(path)?);
    parse_journal(reader)
}

pub fn parse_journal(reader: impl BufRead) -> Result<(Value, Vec<JournalRecord>), JournalError> {
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or(JournalError::Empty)?;
    let first = first?;
    let head: Value = serde_json::from_str(&first).map_err(|e| JournalError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if head.get("schema").and_then(Value::as_str) != Some(SCHEMA) {
        return Err(JournalError::Malformed {
            line: 1,
            message: "missing journal schema header".into(),
        });
    }
    if head.get("version").and_then(Value::as_u64) != Some(SCHEMA_VERSION as u64) {
        return Err(JournalError::Malformed {
            line: 1,
            message: "unsupported journal version".into(),
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| JournalError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    let run = head.get("run").cloned().unwrap_or(Value::Null);
    Ok((run, records))
}

pub fn semantic_lines(records: &[JournalRecord]) -> Vec<String> {
    records.iter().map(JournalRecord::semantic).collect()
}

/// Index of the first differing semantic event, or `None` when identical.
pub fn first_divergence(a: &[String], b: &[String]) -> Option<usize> {
    let common = a.len().min(b.len());
    (0..common)
        .find(|&i| a[i] != b[i])
        .or((a.len() != b.len()).then_some(common))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(j: &RunJournal) {
        j.log(
            "prover-0",
            Event::EpisodeStart {
                episode: 0,
                parent: Some(SketchId(3)),
                directive: Some("no directive".into()),
            },
        );
        j.log(
            "prover-0",
            Event::Turn {
                turn: 1,
                component: Component::Prover,
                usage: TokenUsage {
                    input_tokens: 10,
                    cache_read_tokens: 2,
                    output_tokens: 3,
                },
                text: "hi".into(),
                tool_calls: 1,
            },
        );
        j.log_with_duration(
            "prover-0",
            Event::Stop {
                reason: "budget".into(),
            },
            Some(12),
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let j = RunJournal::create(&path, json!({"agent_kind": "D"})).unwrap();
        sample(&j);
        let (run, records) = read_journal(&path).unwrap();
        assert_eq!(run["agent_kind"], "D");
        assert_eq!(records, j.records());
        assert_eq!(records[2].dur_ms, Some(12));
        assert_eq!(j.count(|e| matches!(e, Event::Turn { .. })), 1);
    }

    #[test]
    fn event_tag_is_flat() {
        let j = RunJournal::in_memory(Value::Null);
        sample(&j);
        let v: Value = serde_json::from_str(&j.records()[0].semantic()).unwrap();
        assert_eq!(v["event"], "episode_start");
        assert_eq!(v["parent"], 3);
        assert!(v.get("t_ms").is_none());
    }

    #[test]
    fn malformed_line_is_located() {
        let text = "{\"schema\":\"nexus-journal\",\"version\":1,\"run\":null}\n{\"seq\":0}\n";
        match parse_journal(text.as_bytes()) {
            Err(JournalError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_journal(&b""[..]), Err(JournalError::Empty)));
    }

    #[test]
    fn divergence_index() {
        let a: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let mut b = a.clone();
        assert_eq!(first_divergence(&a, &b), None);
        b[1] = "q".into();
        assert_eq!(first_divergence(&a, &b), Some(1));
        assert_eq!(first_divergence(&a, &a[..2]), Some(2));
    }
}
