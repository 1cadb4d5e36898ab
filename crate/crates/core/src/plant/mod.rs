//! The machine port: the twin's only window onto the production process.
//!
//! Two implementations ship: a deterministic injection-molding simulator
//! and a read-only CSV replay of historical cycles. Both present the same
//! contract: cycle ids strictly increase, `read_cycle` yields one finished
//! cycle at a time, and an acknowledged configuration write takes effect no
//! earlier than the next cycle.

mod replay;
mod sim;

pub use replay::{ReplaySource, SituationCsvWriter};
pub use sim::{SimConfig, SimConstants, Simulator};

use thiserror::Error;

use crate::domain::AttributePath;
use crate::situation::Situation;
use crate::value::Value;

/// One configuration assignment sent to the machine.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfigWrite {
    pub path: AttributePath,
    pub value: Value,
}

impl std::fmt::Display for ConfigWrite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} = {}", self.path, self.value)
    }
}

/// Batch write result. A rejected batch changes nothing on the machine.
#[derive(Debug, Clone, PartialEq)]
pub enum WriteAck {
    Accepted { warnings: Vec<String> },
    Rejected { reason: String },
}

impl WriteAck {
    pub fn accepted(&self) -> bool {
        matches!(self, WriteAck::Accepted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortCapabilities {
    pub writable: bool,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PortError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
    #[error("port configuration error: {0}")]
    Config(String),
}

/// The OPC UA stand-in. Driven by a single consumer; `read_cycle` blocks
/// (or computes) until the next production cycle completes and returns
/// `None` when the source is exhausted.
pub trait MachinePort {
    fn read_cycle(&mut self) -> Result<Option<(u64, Situation)>, PortError>;
    fn write_config(&mut self, writes: &[ConfigWrite]) -> Result<WriteAck, PortError>;
    fn capabilities(&self) -> PortCapabilities;
}
