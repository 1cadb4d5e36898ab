//! The digital twin runtime: configuration, model loading with
//! cross-validation, and the per-cycle control loop.
//!
//! A twin deployment is described by one TOML config file naming the model
//! files (domain, case base, similarity), the planning knowledge bases
//! (PDDL domain + discretization mapping pairs), the engine thresholds, and
//! the machine port (simulator or CSV replay). All referenced files load at
//! startup; any failure aborts before the first cycle.

mod twin;

pub use twin::{
    report_timings, run_twin, CyclePath, CycleTrace, PathCounts, RowStats, RunOptions, RunSummary,
    TimingTable, Twin,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::casebase::{parse_case_base, CaseBase, FallbackDirective};
use crate::domain::{parse_domain_model, ModelSet};
use crate::engine::EngineConfig;
use crate::pddl::{parse_pddl_domain, MachineMapping, PddlDomain, SearchLimits};
use crate::plant::{PortError, ReplaySource, SimConfig, SimConstants, Simulator};
use crate::similarity::{parse_similarity_spec, SimilaritySpec};

#[derive(Debug, Error)]
pub enum TwinError {
    /// A model file failed to parse or cross-validate.
    #[error("{path}: {message}")]
    Model { path: PathBuf, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Engine(#[from] crate::engine::EngineError),
    #[error("machine port error: {0}")]
    Port(#[from] PortError),
    #[error("I/O error: {0}")]
    Io(String),
}

impl TwinError {
    /// I/O-flavored errors exit with code 2 in the CLI; everything else is
    /// a domain error (exit 1).
    pub fn is_io(&self) -> bool {
        match self {
            TwinError::Io(_) => true,
            TwinError::Port(PortError::Io(_)) => true,
            _ => false,
        }
    }
}

fn read_file(path: &Path) -> Result<String, TwinError> {
    std::fs::read_to_string(path).map_err(|e| TwinError::Io(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// Which machine port to drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortKind {
    Sim,
    Replay,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModelsSection {
    /// Domain model files (`.dm`).
    pub domain: Vec<String>,
    /// Case base file (`.cb`); also the persistence target for retained
    /// cases and statistics.
    pub casebase: String,
    /// Similarity specification file (`.cs`).
    pub similarity: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PddlSection {
    /// PDDL domain file.
    pub domain: String,
    /// Discretization mapping file (`.map`, TOML).
    pub mapping: String,
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(default)]
pub struct EngineSection {
    pub retrieval_threshold: Option<f64>,
    pub learning_threshold: Option<f64>,
    pub success_penalty_factor: Option<f64>,
    pub max_expansions: Option<usize>,
    pub max_plan_length: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PortSection {
    pub kind: PortKind,
    /// Master switch: false forces recommendation-only mode.
    #[serde(default = "default_true")]
    pub write_enabled: bool,
    /// Simulator noise seed.
    #[serde(default)]
    pub seed: u64,
    /// Optional constants table file for the simulator (TOML).
    #[serde(default)]
    pub constants: Option<String>,
    /// Initial simulator configuration.
    #[serde(default)]
    pub initial: Option<SimConfig>,
    /// Replay CSV file.
    #[serde(default)]
    pub csv: Option<String>,
    /// Cycle counter column (defaults to `ProcessData.cycleId`).
    #[serde(default)]
    pub cycle_column: Option<String>,
    /// Skip malformed replay rows instead of aborting.
    #[serde(default)]
    pub skip_malformed: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default)]
pub struct LogsSection {
    /// Directory for run artifacts (explain log, traces, situation log).
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TwinConfig {
    pub models: ModelsSection,
    #[serde(default)]
    pub pddl: Vec<PddlSection>,
    #[serde(default)]
    pub engine: EngineSection,
    pub port: PortSection,
    #[serde(default)]
    pub logs: LogsSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl TwinConfig {
    /// Parses a config file. Relative paths inside it resolve against the
    /// file's own directory.
    pub fn load(path: &Path) -> Result<Self, TwinError> {
        let text = read_file(path)?;
        let mut cfg: TwinConfig = toml::from_str(&text).map_err(|e| TwinError::Model {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(cfg)
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn casebase_path(&self) -> PathBuf {
        self.resolve(&self.models.casebase)
    }

    pub fn engine_config(&self) -> EngineConfig {
        let defaults = EngineConfig::default();
        EngineConfig {
            retrieval_threshold: self
                .engine
                .retrieval_threshold
                .unwrap_or(defaults.retrieval_threshold),
            learning_threshold: self
                .engine
                .learning_threshold
                .unwrap_or(defaults.learning_threshold),
            success_penalty_factor: self
                .engine
                .success_penalty_factor
                .unwrap_or(defaults.success_penalty_factor),
        }
    }

    pub fn search_limits(&self) -> SearchLimits {
        let defaults = SearchLimits::default();
        SearchLimits {
            max_expansions: self.engine.max_expansions.unwrap_or(defaults.max_expansions),
            max_plan_length: self.engine.max_plan_length.unwrap_or(defaults.max_plan_length),
        }
    }

    pub fn log_dir(&self) -> Option<PathBuf> {
        self.logs.dir.as_deref().map(|d| self.resolve(d))
    }

    /// Builds the configured machine port.
    pub fn build_port(
        &self,
        models: &ModelSet,
    ) -> Result<Box<dyn crate::plant::MachinePort>, TwinError> {
        match self.port.kind {
            PortKind::Sim => {
                let constants = match &self.port.constants {
                    Some(file) => {
                        let path = self.resolve(file);
                        let text = read_file(&path)?;
                        toml::from_str::<SimConstants>(&text).map_err(|e| TwinError::Model {
                            path,
                            message: e.to_string(),
                        })?
                    }
                    None => SimConstants::default(),
                };
                let initial = self.port.initial.unwrap_or_default();
                Ok(Box::new(Simulator::new(constants, initial, self.port.seed)))
            }
            PortKind::Replay => {
                let csv = self.port.csv.as_deref().ok_or_else(|| {
                    TwinError::Config("replay port requires `port.csv`".to_string())
                })?;
                let source = ReplaySource::open(
                    &self.resolve(csv),
                    models,
                    self.port.cycle_column.as_deref(),
                    self.port.skip_malformed,
                )?;
                Ok(Box::new(source))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model loading and cross-validation
// ---------------------------------------------------------------------------

/// All models of a deployment, loaded and cross-checked.
#[derive(Debug)]
pub struct TwinSystem {
    pub models: ModelSet,
    pub casebase: CaseBase,
    pub spec: SimilaritySpec,
    /// Planning knowledge bases keyed by PDDL domain name.
    pub kbs: BTreeMap<String, (PddlDomain, MachineMapping)>,
}

impl TwinSystem {
    /// Loads every file referenced by the config, fail-fast, and
    /// cross-validates: case base and similarity paths resolve against the
    /// domain models, and every `pddl goal` directive resolves against its
    /// knowledge base.
    pub fn load(cfg: &TwinConfig) -> Result<Self, TwinError> {
        let mut models = ModelSet::new();
        for file in &cfg.models.domain {
            let path = cfg.resolve(file);
            let text = read_file(&path)?;
            let model = parse_domain_model(&text).map_err(|e| TwinError::Model {
                path: path.clone(),
                message: e.to_string(),
            })?;
            models.insert(model);
        }

        let cb_path = cfg.casebase_path();
        let cb_text = read_file(&cb_path)?;
        let casebase = parse_case_base(&cb_text, &models).map_err(|e| TwinError::Model {
            path: cb_path.clone(),
            message: e.to_string(),
        })?;

        let cs_path = cfg.resolve(&cfg.models.similarity);
        let cs_text = read_file(&cs_path)?;
        let spec = parse_similarity_spec(&cs_text, &models).map_err(|e| TwinError::Model {
            path: cs_path.clone(),
            message: e.to_string(),
        })?;

        let mut kbs = BTreeMap::new();
        for section in &cfg.pddl {
            let d_path = cfg.resolve(&section.domain);
            let d_text = read_file(&d_path)?;
            let domain = parse_pddl_domain(&d_text).map_err(|e| TwinError::Model {
                path: d_path.clone(),
                message: e.to_string(),
            })?;
            let m_path = cfg.resolve(&section.mapping);
            let mapping = MachineMapping::load(&m_path).map_err(|e| TwinError::Model {
                path: m_path.clone(),
                message: e.to_string(),
            })?;
            mapping.validate_against(&domain).map_err(|e| TwinError::Model {
                path: m_path.clone(),
                message: e.to_string(),
            })?;
            if kbs.contains_key(&domain.name) {
                return Err(TwinError::Config(format!(
                    "duplicate planning domain `{}`",
                    domain.name
                )));
            }
            kbs.insert(domain.name.clone(), (domain, mapping));
        }

        let system = TwinSystem {
            models,
            casebase,
            spec,
            kbs,
        };
        system.cross_validate().map_err(|message| TwinError::Model {
            path: cb_path,
            message,
        })?;
        Ok(system)
    }

    /// Checks every `pddl goal` fallback directive against the loaded
    /// knowledge bases.
    pub fn cross_validate(&self) -> Result<(), String> {
        for (case_name, goal, domain_ref) in self.casebase.pddl_goals() {
            let Some((domain, mapping)) = self.kbs.get(domain_ref) else {
                return Err(format!(
                    "case `{case_name}`: pddl goal references unknown planning domain `{domain_ref}`"
                ));
            };
            mapping
                .validate_goal(domain, goal)
                .map_err(|e| format!("case `{case_name}`: {e}"))?;
        }
        Ok(())
    }

    /// The fallback directive in force for a case: its own, or the runtime
    /// default of notifying the operator.
    pub fn fallback_for(&self, case_name: &str) -> FallbackDirective {
        self.casebase
            .case(case_name)
            .and_then(|c| c.fallback.clone())
            .unwrap_or(FallbackDirective::Notify {
                message: crate::engine::DEFAULT_NOTIFY_MESSAGE.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, content).unwrap();
        p
    }

    const DM: &str = "model M { class C { pressure: float range [0.0, 100.0]; } }";
    const CB_OK: &str = r#"casebase B { import M;
      case High { when C.pressure > 90.0; fallback pddl goal (eased m) domain ops; } }"#;
    const CS: &str = "similarity S { import M; local C.pressure absolute; global weighted { C.pressure weight 1.0; } }";
    const PDDL: &str = r#"(define (domain ops)
      (:requirements :strips :typing)
      (:types machine plevel)
      (:predicates (level ?m - machine ?l - plevel) (next ?a - plevel ?b - plevel) (eased ?m - machine))
      (:action ease :parameters (?m - machine ?from - plevel ?to - plevel)
        :precondition (and (level ?m ?from) (next ?to ?from))
        :effect (and (level ?m ?to) (not (level ?m ?from)) (eased ?m))))"#;
    const MAP: &str = r#"
domain = "ops"
[[objects]]
name = "m"
type = "machine"
[[objects]]
name = "lo"
type = "plevel"
[[objects]]
name = "hi"
type = "plevel"
[[statics]]
predicate = "next"
args = ["lo", "hi"]
[[attributes]]
path = "C.pressure"
predicate = "level"
prefix_args = ["m"]
[[attributes.bins]]
level = "lo"
min = 0.0
max = 50.0
value = 25.0
[[attributes.bins]]
level = "hi"
min = 50.0
max = 100.0
value = 75.0
"#;

    fn config_toml() -> String {
        r#"
[models]
domain = ["m.dm"]
casebase = "b.cb"
similarity = "s.cs"

[[pddl]]
domain = "ops.pddl"
mapping = "ops.map"

[port]
kind = "sim"
seed = 1
"#
        .to_string()
    }

    fn setup(dir: &Path) -> PathBuf {
        write(dir, "m.dm", DM);
        write(dir, "b.cb", CB_OK);
        write(dir, "s.cs", CS);
        write(dir, "ops.pddl", PDDL);
        write(dir, "ops.map", MAP);
        write(dir, "twin.toml", &config_toml())
    }

    #[test]
    fn loads_full_system() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = setup(dir.path());
        let cfg = TwinConfig::load(&cfg_path).unwrap();
        let system = TwinSystem::load(&cfg).unwrap();
        assert_eq!(system.casebase.cases.len(), 1);
        assert!(system.kbs.contains_key("ops"));
        assert_eq!(cfg.engine_config(), EngineConfig::default());
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = setup(dir.path());
        fs::remove_file(dir.path().join("s.cs")).unwrap();
        let cfg = TwinConfig::load(&cfg_path).unwrap();
        let err = TwinSystem::load(&cfg).unwrap_err();
        assert!(err.is_io(), "{err}");
    }

    #[test]
    fn goal_against_missing_kb_fails_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = setup(dir.path());
        // drop the pddl section: the directive now dangles
        let cfg_text = config_toml().replace("[[pddl]]\ndomain = \"ops.pddl\"\nmapping = \"ops.map\"\n", "");
        fs::write(&cfg_path, cfg_text).unwrap();
        let cfg = TwinConfig::load(&cfg_path).unwrap();
        let err = TwinSystem::load(&cfg).unwrap_err();
        assert!(err.to_string().contains("unknown planning domain"), "{err}");
    }

    #[test]
    fn goal_with_undeclared_predicate_fails_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = setup(dir.path());
        write(
            dir.path(),
            "b.cb",
            r#"casebase B { import M;
              case High { when C.pressure > 90.0; fallback pddl goal (no-such m) domain ops; } }"#,
        );
        let cfg = TwinConfig::load(&cfg_path).unwrap();
        let err = TwinSystem::load(&cfg).unwrap_err();
        assert!(err.to_string().contains("no-such"), "{err}");
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("deploy");
        fs::create_dir(&sub).unwrap();
        let cfg_path = setup(&sub);
        // load via a path that is not the cwd
        let cfg = TwinConfig::load(&cfg_path).unwrap();
        assert!(TwinSystem::load(&cfg).is_ok());
        assert_eq!(cfg.casebase_path(), sub.join("b.cb"));
    }
}
