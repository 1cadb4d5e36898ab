//! Append-only explainability log.
//!
//! Every reasoning episode produces exactly one record: the triggering
//! situation, the scored candidates, what was applied (and retried), the
//! outcome, and any learned case. Records are self-describing JSON, one per
//! line, so the log survives abrupt termination up to the last complete
//! line. Timestamps are logical (the machine cycle counter), which keeps
//! logs byte-identical across reruns of the same seed.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::ConfigWrite;
use crate::situation::Situation;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub case: String,
    pub raw_score: f64,
    pub effective_score: f64,
}

/// One application attempt within an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    /// The applied case, or `None` for a fallback plan.
    pub case: Option<String>,
    /// Executed (or recommended) configuration writes.
    pub writes: Vec<ConfigWrite>,
    /// Outcome of the attempt; `None` when it could not be observed
    /// (recommendation mode).
    pub success: Option<bool>,
    /// True when the writes were only recommended, not sent to the machine.
    pub recommended: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    /// A solution was applied and its postcondition held.
    Success,
    /// Every attempted solution (and any fallback plan) failed.
    Failure,
    /// The episode ended with an operator notification.
    Notified,
    /// Write-disabled mode: a recommendation was logged, nothing executed.
    Recommended,
    /// The episode aborted on an internal error (recorded in `notes`).
    Error,
}

impl std::fmt::Display for EpisodeOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EpisodeOutcome::Success => "success",
            EpisodeOutcome::Failure => "failure",
            EpisodeOutcome::Notified => "notified",
            EpisodeOutcome::Recommended => "recommended",
            EpisodeOutcome::Error => "error",
        };
        f.write_str(s)
    }
}

/// One reasoning episode, from trigger to conclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRecord {
    /// Sequential episode number within the run.
    pub episode: u64,
    /// Logical timestamp: the machine cycle that triggered the episode.
    pub cycle: u64,
    /// The case whose condition triggered the reasoner.
    pub trigger_case: String,
    /// The triggering situation (attribute path to value).
    pub situation: BTreeMap<String, Value>,
    /// Candidates at retrieval time, ranked.
    pub candidates: Vec<CandidateRecord>,
    /// Unknown/non-extractable cases whose condition held.
    pub triggers: Vec<String>,
    /// Application attempts in order.
    pub attempts: Vec<AttemptRecord>,
    pub outcome: EpisodeOutcome,
    /// Name of the case the retain phase added, if any.
    pub learned_case: Option<String>,
    /// Free-form notes: notifications, clamp warnings, planner statistics.
    pub notes: Vec<String>,
}

impl ExplainRecord {
    pub fn situation_map(s: &Situation) -> BTreeMap<String, Value> {
        s.values
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    fn involves(&self, case: &str) -> bool {
        self.trigger_case == case
            || self.learned_case.as_deref() == Some(case)
            || self.candidates.iter().any(|c| c.case == case)
            || self.triggers.iter().any(|t| t == case)
            || self
                .attempts
                .iter()
                .any(|a| a.case.as_deref() == Some(case))
    }
}

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("cannot read explain log {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("explain log {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Appends records as JSON lines, flushing after every record.
pub struct ExplainLogWriter {
    out: BufWriter<File>,
}

impl ExplainLogWriter {
    /// Opens (or creates) the log for appending.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    /// Creates a fresh log, truncating any previous content.
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = File::create(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &ExplainRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        writeln!(self.out, "{line}")?;
        self.out.flush()
    }
}

/// Reads all complete records. A trailing line without a newline (the
/// signature of an interrupted write) is ignored; corruption anywhere else
/// is an error.
pub fn read_explain_log(path: &Path) -> Result<Vec<ExplainRecord>, ExplainError> {
    let file = File::open(path).map_err(|e| ExplainError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| ExplainError::Unreadable {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = line.ends_with('\n');
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<ExplainRecord>(trimmed) {
            Ok(rec) => records.push(rec),
            Err(e) if !complete => {
                // interrupted final write: valid records end here
                let _ = e;
                break;
            }
            Err(e) => {
                return Err(ExplainError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(records)
}

/// Filter for [`render_report`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExplainFilter {
    /// Keep only episodes involving this case (as trigger, candidate,
    /// attempt, or learned case).
    pub case_name: Option<String>,
    pub from_cycle: Option<u64>,
    pub to_cycle: Option<u64>,
}

impl ExplainFilter {
    fn keeps(&self, rec: &ExplainRecord) -> bool {
        if let Some(case) = &self.case_name {
            if !rec.involves(case) {
                return false;
            }
        }
        if let Some(from) = self.from_cycle {
            if rec.cycle < from {
                return false;
            }
        }
        if let Some(to) = self.to_cycle {
            if rec.cycle > to {
                return false;
            }
        }
        true
    }
}

/// Renders a chronological, human-readable report of the reasoning
/// episodes. Deterministic for a fixed log.
pub fn render_report(records: &[ExplainRecord], filter: &ExplainFilter) -> String {
    let kept: Vec<&ExplainRecord> = records.iter().filter(|r| filter.keeps(r)).collect();
    if kept.is_empty() {
        return "no reasoning episodes recorded\n".to_string();
    }
    let mut out = String::new();
    for rec in kept {
        out.push_str(&format!(
            "episode {} (cycle {}): triggered by {}\n",
            rec.episode, rec.cycle, rec.trigger_case
        ));
        if rec.candidates.is_empty() {
            out.push_str("  candidates: none\n");
        } else {
            out.push_str("  candidates:\n");
            for c in &rec.candidates {
                out.push_str(&format!(
                    "    {} raw={:?} effective={:?}\n",
                    c.case, c.raw_score, c.effective_score
                ));
            }
        }
        if !rec.triggers.is_empty() {
            out.push_str(&format!("  also holding: {}\n", rec.triggers.join(", ")));
        }
        for attempt in &rec.attempts {
            let who = attempt.case.as_deref().unwrap_or("fallback plan");
            let verb = if attempt.recommended {
                "recommended"
            } else {
                "applied"
            };
            let result = match attempt.success {
                Some(true) => " -> success",
                Some(false) => " -> failure",
                None => "",
            };
            out.push_str(&format!("  {verb} {who}{result}\n"));
            for w in &attempt.writes {
                out.push_str(&format!("    {w}\n"));
            }
        }
        out.push_str(&format!("  outcome: {}\n", rec.outcome));
        if let Some(learned) = &rec.learned_case {
            out.push_str(&format!("  learned: {learned}\n"));
        }
        for note in &rec.notes {
            out.push_str(&format!("  note: {note}\n"));
        }
        out.push('\n');
    }
    out
}
