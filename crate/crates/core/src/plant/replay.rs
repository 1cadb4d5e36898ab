//! CSV replay of historical machine cycles, plus the matching situation log
//! writer.
//!
//! Schema: UTF-8, comma-separated, header row of dotted attribute paths
//! (e.g. `PhaseData.switchOverVolume`). One column must carry the machine
//! cycle counter (`ProcessData.cycleId` by default). A replay source is
//! read-only: configuration writes are rejected, matching a machine that
//! cannot be manipulated.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::domain::{AttributePath, ModelSet};
use crate::situation::Situation;
use crate::value::{PrimitiveType, Value};

use super::{ConfigWrite, MachinePort, PortCapabilities, PortError, WriteAck};

pub const DEFAULT_CYCLE_COLUMN: &str = "ProcessData.cycleId";

/// Streaming CSV source implementing the machine port.
pub struct ReplaySource {
    reader: csv::Reader<File>,
    columns: Vec<(AttributePath, PrimitiveType)>,
    cycle_col: usize,
    /// 1-based data row counter (header excluded), for diagnostics.
    row: u64,
    last_cycle: Option<u64>,
    /// Skip malformed rows (with a warning) instead of failing the run.
    pub skip_malformed: bool,
    warnings: Vec<String>,
}

impl ReplaySource {
    /// Opens a CSV file and resolves its header against the loaded domain
    /// models. Missing or unresolvable columns fail here, at open time.
    pub fn open(
        path: &Path,
        models: &ModelSet,
        cycle_column: Option<&str>,
        skip_malformed: bool,
    ) -> Result<Self, PortError> {
        let file = File::open(path).map_err(|e| PortError::Io(format!("{}: {e}", path.display())))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| PortError::Io(e.to_string()))?
            .clone();
        let all_models: Vec<String> = models.names().map(String::from).collect();
        let mut columns = Vec::new();
        for header in headers.iter() {
            let p = AttributePath::parse_dotted(header.trim()).ok_or_else(|| {
                PortError::Config(format!("header `{header}` is not a Class.attribute path"))
            })?;
            let info = models
                .resolve_in(&all_models, &p)
                .map_err(|e| PortError::Config(format!("header `{header}`: {e}")))?;
            columns.push((p, info.ty));
        }
        let wanted = cycle_column.unwrap_or(DEFAULT_CYCLE_COLUMN);
        let cycle_col = columns
            .iter()
            .position(|(p, _)| p.to_string() == wanted)
            .ok_or_else(|| {
                PortError::Config(format!("cycle counter column `{wanted}` missing from header"))
            })?;
        if columns[cycle_col].1 != PrimitiveType::Int {
            return Err(PortError::Config(format!(
                "cycle counter column `{wanted}` must be an int attribute"
            )));
        }
        Ok(Self {
            reader,
            columns,
            cycle_col,
            row: 0,
            last_cycle: None,
            skip_malformed,
            warnings: Vec::new(),
        })
    }

    /// Warnings collected while skipping malformed rows.
    pub fn take_warnings(&mut self) -> Vec<String> {
        std::mem::take(&mut self.warnings)
    }

    fn parse_row(&self, record: &csv::StringRecord) -> Result<(u64, Situation), PortError> {
        let row = self.row;
        if record.len() != self.columns.len() {
            return Err(PortError::Row {
                row,
                message: format!(
                    "expected {} fields, found {}",
                    self.columns.len(),
                    record.len()
                ),
            });
        }
        let mut values = Vec::with_capacity(self.columns.len());
        for ((path, ty), raw) in self.columns.iter().zip(record.iter()) {
            let raw = raw.trim();
            let value = match ty {
                PrimitiveType::Int => raw.parse::<i64>().map(Value::Int).map_err(|_| {
                    PortError::Row {
                        row,
                        message: format!("column {path}: `{raw}` is not an int"),
                    }
                })?,
                PrimitiveType::Float => raw.parse::<f64>().map(Value::Float).map_err(|_| {
                    PortError::Row {
                        row,
                        message: format!("column {path}: `{raw}` is not a float"),
                    }
                })?,
                PrimitiveType::Boolean => match raw {
                    "true" => Value::Bool(true),
                    "false" => Value::Bool(false),
                    _ => {
                        return Err(PortError::Row {
                            row,
                            message: format!("column {path}: `{raw}` is not a boolean"),
                        })
                    }
                },
                PrimitiveType::String => Value::Str(raw.to_string()),
            };
            values.push((path.clone(), value));
        }
        let cycle = match &values[self.cycle_col].1 {
            Value::Int(n) if *n >= 0 => *n as u64,
            other => {
                return Err(PortError::Row {
                    row,
                    message: format!("cycle counter `{other}` is not a non-negative int"),
                })
            }
        };
        if let Some(last) = self.last_cycle {
            if cycle <= last {
                return Err(PortError::Row {
                    row,
                    message: format!("cycle counter {cycle} does not increase (last was {last})"),
                });
            }
        }
        let mut s = Situation::new(cycle);
        for (path, value) in values {
            s.set(path, value);
        }
        Ok((cycle, s))
    }
}

impl MachinePort for ReplaySource {
    fn read_cycle(&mut self) -> Result<Option<(u64, Situation)>, PortError> {
        loop {
            let mut record = csv::StringRecord::new();
            let more = self
                .reader
                .read_record(&mut record)
                .map_err(|e| PortError::Io(e.to_string()))?;
            if !more {
                return Ok(None);
            }
            self.row += 1;
            match self.parse_row(&record) {
                Ok((cycle, s)) => {
                    self.last_cycle = Some(cycle);
                    return Ok(Some((cycle, s)));
                }
                Err(e) if self.skip_malformed => {
                    self.warnings.push(format!("skipped malformed row: {e}"));
                    continue;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn write_config(&mut self, _writes: &[ConfigWrite]) -> Result<WriteAck, PortError> {
        Ok(WriteAck::Rejected {
            reason: "read-only source".to_string(),
        })
    }

    fn capabilities(&self) -> PortCapabilities {
        PortCapabilities { writable: false }
    }
}

/// Appends situations as CSV rows with the replay schema, so a logged run
/// can be replayed identically.
pub struct SituationCsvWriter {
    out: BufWriter<File>,
    columns: Option<Vec<AttributePath>>,
}

impl SituationCsvWriter {
    pub fn create(path: &Path) -> Result<Self, PortError> {
        let file = File::create(path).map_err(|e| PortError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            out: BufWriter::new(file),
            columns: None,
        })
    }

    /// Writes the header on first call (columns = the situation's attribute
    /// paths in sorted order); later situations must carry the same set.
    pub fn append(&mut self, s: &Situation) -> Result<(), PortError> {
        if self.columns.is_none() {
            let columns: Vec<AttributePath> = s.values.keys().cloned().collect();
            let header: Vec<String> = columns.iter().map(|p| p.to_string()).collect();
            writeln!(self.out, "{}", header.join(",")).map_err(|e| PortError::Io(e.to_string()))?;
            self.columns = Some(columns);
        }
        let columns = self.columns.as_ref().unwrap();
        let mut fields = Vec::with_capacity(columns.len());
        for path in columns {
            let value = s.get(path).ok_or_else(|| {
                PortError::Config(format!("situation for cycle {} lacks {path}", s.cycle_id))
            })?;
            fields.push(match value {
                Value::Str(text) => csv_quote(text),
                other => other.to_string(),
            });
        }
        writeln!(self.out, "{}", fields.join(",")).map_err(|e| PortError::Io(e.to_string()))?;
        self.out.flush().map_err(|e| PortError::Io(e.to_string()))
    }
}

fn csv_quote(text: &str) -> String {
    if text.contains(',') || text.contains('"') || text.contains('\n') {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_domain_model;
    use crate::plant::{SimConfig, SimConstants, Simulator};

    fn models() -> ModelSet {
        let mut set = ModelSet::new();
        set.insert(
            parse_domain_model(
                "model M {
                   class ProcessData { cycleId: int; temp: float; ok: boolean; note: string; }
                 }",
            )
            .unwrap(),
        );
        set
    }

    fn write_fixture(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn replays_three_rows_then_end_of_data() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(
            dir.path(),
            "r.csv",
            "ProcessData.cycleId,ProcessData.temp\n1,10.5\n2,11.0\n3,12.25\n",
        );
        let mut src = ReplaySource::open(&p, &models(), None, false).unwrap();
        for expected in [1u64, 2, 3] {
            let (cycle, s) = src.read_cycle().unwrap().unwrap();
            assert_eq!(cycle, expected);
            assert!(s.get(&AttributePath::new("ProcessData", "temp")).is_some());
        }
        assert_eq!(src.read_cycle().unwrap(), None);
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(
            dir.path(),
            "r.csv",
            "ProcessData.cycleId,ProcessData.temp\n1,10.5\n2,oops\n",
        );
        let mut src = ReplaySource::open(&p, &models(), None, false).unwrap();
        src.read_cycle().unwrap();
        match src.read_cycle() {
            Err(PortError::Row { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("not a float"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn skip_malformed_mode_continues_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(
            dir.path(),
            "r.csv",
            "ProcessData.cycleId,ProcessData.temp\n1,10.5\n2,oops\n3,12.0\n",
        );
        let mut src = ReplaySource::open(&p, &models(), None, true).unwrap();
        assert_eq!(src.read_cycle().unwrap().unwrap().0, 1);
        assert_eq!(src.read_cycle().unwrap().unwrap().0, 3);
        assert_eq!(src.take_warnings().len(), 1);
    }

    #[test]
    fn missing_cycle_column_fails_at_open() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path(), "r.csv", "ProcessData.temp\n10.5\n");
        match ReplaySource::open(&p, &models(), None, false) {
            Err(PortError::Config(msg)) => assert!(msg.contains("cycle counter")),
            Err(other) => panic!("{other:?}"),
            Ok(_) => panic!("open should fail without a cycle counter column"),
        }
    }

    #[test]
    fn unresolvable_header_fails_at_open() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path(), "r.csv", "ProcessData.cycleId,Nope.x\n1,2\n");
        assert!(matches!(
            ReplaySource::open(&p, &models(), None, false),
            Err(PortError::Config(_))
        ));
    }

    #[test]
    fn non_increasing_cycle_counter_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(
            dir.path(),
            "r.csv",
            "ProcessData.cycleId,ProcessData.temp\n2,10.0\n2,11.0\n",
        );
        let mut src = ReplaySource::open(&p, &models(), None, false).unwrap();
        src.read_cycle().unwrap();
        assert!(matches!(src.read_cycle(), Err(PortError::Row { .. })));
    }

    #[test]
    fn writes_are_rejected_as_read_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path(), "r.csv", "ProcessData.cycleId\n1\n");
        let mut src = ReplaySource::open(&p, &models(), None, false).unwrap();
        let ack = src
            .write_config(&[ConfigWrite {
                path: AttributePath::new("ProcessData", "temp"),
                value: Value::Float(1.0),
            }])
            .unwrap();
        match ack {
            WriteAck::Rejected { reason } => assert_eq!(reason, "read-only source"),
            other => panic!("{other:?}"),
        }
        assert!(!src.capabilities().writable);
    }

    #[test]
    fn bool_and_string_columns_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(
            dir.path(),
            "r.csv",
            "ProcessData.cycleId,ProcessData.ok,ProcessData.note\n1,true,steady\n",
        );
        let mut src = ReplaySource::open(&p, &models(), None, false).unwrap();
        let (_, s) = src.read_cycle().unwrap().unwrap();
        assert_eq!(s.get(&AttributePath::new("ProcessData", "ok")), Some(&Value::Bool(true)));
        assert_eq!(
            s.get(&AttributePath::new("ProcessData", "note")),
            Some(&Value::Str("steady".into()))
        );
    }

    #[test]
    fn sim_log_replays_identically() {
        // the situation log of a simulator run must replay to the same
        // situations (same cycle ids, same values)
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("run.csv");
        let mut sim = Simulator::new(SimConstants::default(), SimConfig::default(), 11);
        let mut logged = Vec::new();
        {
            let mut writer = SituationCsvWriter::create(&log_path).unwrap();
            for _ in 0..5 {
                let (_, s) = sim.step();
                writer.append(&s).unwrap();
                logged.push(s);
            }
        }
        let mut set = ModelSet::new();
        set.insert(
            parse_domain_model(
                "model InjectionMolding {
                   class ProcessData {
                     cycleId: int; cycleTime: float; nozzleTemperature: float;
                     pressure: float; heating: int;
                   }
                   class PhaseData {
                     dosingTime: float; cylinderHeating: int; injectionFlow: float;
                     switchOverVolume: float; backPressure: float; meltCushion: float;
                   }
                 }",
            )
            .unwrap(),
        );
        let mut replay = ReplaySource::open(&log_path, &set, None, false).unwrap();
        for original in &logged {
            let (cycle, s) = replay.read_cycle().unwrap().unwrap();
            assert_eq!(cycle, original.cycle_id);
            assert_eq!(&s, original);
        }
        assert_eq!(replay.read_cycle().unwrap(), None);
    }
}
