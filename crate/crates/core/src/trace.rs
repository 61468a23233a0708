//! Run traces: one JSON object per line, written as the run progresses.
//!
//! Record shapes (field `type` selects the variant):
//!
//! - `tool_call`: `seq`, `tool_id`, `kind`, `level`, `guidance`, `passes`,
//!   `cost_charged`, `success`, `improved`, `input_perf`, `perf`,
//!   `feedback_excerpt`, `duration_secs`
//! - `sample`: `seq` and `tool_id` of the owning level-agent call, then the
//!   sample record (`round`, `index`, `program_text`, `report`, `selected`)
//! - `malformed`: `reason` for a reply that was not dispatched
//! - `result`: the final summary (`speedup`, `terminated_by`, ...)

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::level_agent::SampleRecord;
use crate::model::{Program, ToolKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub seq: u64,
    pub tool_id: String,
    pub kind: ToolKind,
    /// Level of the program the call produced or worked on.
    pub level: String,
    pub guidance: Option<String>,
    pub passes: Option<String>,
    pub cost_charged: u64,
    pub success: bool,
    /// A level agent returned a strictly better program.
    pub improved: bool,
    pub input_perf: Option<f64>,
    pub perf: Option<f64>,
    pub feedback_excerpt: String,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEvent {
    pub seq: u64,
    pub tool_id: String,
    #[serde(flatten)]
    pub sample: SampleRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub speedup: f64,
    pub t_correct: f64,
    pub terminated_by: String,
    pub budget_total: u64,
    pub budget_spent: u64,
    pub final_from_level: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    ToolCall(ToolCallRecord),
    Sample(SampleEvent),
    Malformed { reason: String },
    Result(ResultSummary),
}

/// Receives trace events and intermediate programs as they happen.
pub trait TraceSink: Send + Sync {
    fn event(&self, ev: &TraceEvent);

    fn program(&self, _label: &str, _program: &Program) {}
}

/// Discards everything.
pub struct NullSink;

impl TraceSink for NullSink {
    fn event(&self, _ev: &TraceEvent) {}
}

/// Keeps events in memory.
#[derive(Default)]
pub struct MemorySink {
    events: Mutex<Vec<TraceEvent>>,
    programs: Mutex<Vec<(String, Program)>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn programs(&self) -> Vec<(String, Program)> {
        self.programs.lock().unwrap().clone()
    }
}

impl TraceSink for MemorySink {
    fn event(&self, ev: &TraceEvent) {
        self.events.lock().unwrap().push(ev.clone());
    }

    fn program(&self, label: &str, program: &Program) {
        self.programs
            .lock()
            .unwrap()
            .push((label.to_string(), program.clone()));
    }
}

/// Appends events to `<dir>/trace.jsonl` and programs to `<dir>/programs/`.
pub struct JsonlSink {
    file: Mutex<File>,
    programs_dir: PathBuf,
}

impl JsonlSink {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        let programs_dir = dir.join("programs");
        std::fs::create_dir_all(&programs_dir)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("trace.jsonl"))?;
        Ok(Self {
            file: Mutex::new(file),
            programs_dir,
        })
    }
}

fn extension(p: &Program) -> &'static str {
    match p.level.ordinal {
        1 => "c",
        2 => "ll",
        3 => "s",
        _ => "txt",
    }
}

impl TraceSink for JsonlSink {
    fn event(&self, ev: &TraceEvent) {
        let line = serde_json::to_string(ev).expect("trace events serialize");
        let mut f = self.file.lock().unwrap();
        if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
            log::error!("could not write trace: {e}");
        }
    }

    fn program(&self, label: &str, program: &Program) {
        let path = self
            .programs_dir
            .join(format!("{label}.{}", extension(program)));
        if let Err(e) = std::fs::write(&path, program.text()) {
            log::error!("could not write {}: {e}", path.display());
        }
    }
}

/// A parsed trace file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub calls: Vec<ToolCallRecord>,
    pub samples: Vec<SampleEvent>,
    pub result: Option<ResultSummary>,
}

impl Trace {
    pub fn from_events(events: impl IntoIterator<Item = TraceEvent>) -> Self {
        let mut t = Trace::default();
        for ev in events {
            match ev {
                TraceEvent::ToolCall(c) => t.calls.push(c),
                TraceEvent::Sample(s) => t.samples.push(s),
                TraceEvent::Result(r) => t.result = Some(r),
                TraceEvent::Malformed { .. } => {}
            }
        }
        t
    }

    pub fn tool_sequence(&self) -> Vec<&str> {
        self.calls.iter().map(|c| c.tool_id.as_str()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

pub fn read_trace(path: &Path) -> Result<Trace, TraceError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(&line).map_err(|e| TraceError::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?;
        events.push(ev);
    }
    Ok(Trace::from_events(events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::TestReport;

    fn call(seq: u64, tool: &str) -> ToolCallRecord {
        ToolCallRecord {
            seq,
            tool_id: tool.into(),
            kind: ToolKind::CompilerComponent,
            level: "IR".into(),
            guidance: None,
            passes: None,
            cost_charged: 0,
            success: true,
            improved: false,
            input_perf: Some(1.0),
            perf: Some(1.0),
            feedback_excerpt: "ok".into(),
            duration_secs: 0.0,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sink = JsonlSink::create(dir.path()).unwrap();
        let sample = SampleEvent {
            seq: 2,
            tool_id: "ir_agent".into(),
            sample: SampleRecord {
                round: 1,
                index: 1,
                program_text: "x".into(),
                report: TestReport {
                    t_correct: 1.0,
                    t_perf: Some(1.2),
                    per_input: vec![],
                    diagnostics: None,
                    failing_cases: vec![],
                },
                selected: true,
            },
        };
        sink.event(&TraceEvent::ToolCall(call(1, "frontend")));
        sink.event(&TraceEvent::Sample(sample.clone()));
        sink.event(&TraceEvent::Malformed { reason: "bad".into() });
        let t = read_trace(&dir.path().join("trace.jsonl")).unwrap();
        assert_eq!(t.tool_sequence(), ["frontend"]);
        assert_eq!(t.samples, vec![sample]);
        let text = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
        assert!(text.lines().next().unwrap().contains("\"type\":\"tool_call\""));
    }

    #[test]
    fn corrupt_line_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.jsonl");
        std::fs::write(&p, "{\"type\":\"malformed\",\"reason\":\"x\"}\nnot json\n").unwrap();
        assert!(matches!(read_trace(&p), Err(TraceError::Corrupt { line: 2, .. })));
    }
}
