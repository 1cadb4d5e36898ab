//! Core library of the casetwin digital twin.
//!
//! The twin reifies operator expertise as three textual models — a domain
//! model (`.dm`), a case base (`.cb`), and a similarity specification
//! (`.cs`) — and executes the case-based-reasoning cycle (retrieve, reuse,
//! revise, retain) against a live or replayed production process. When no
//! case applies, it falls back to STRIPS planning over a small PDDL
//! knowledge base.
//!
//! Module map:
//! - [`domain`] — the typed attribute vocabulary all other models reference
//! - [`casebase`] — known/unknown cases with conditions, solutions, fallbacks
//! - [`similarity`] — local/global similarity scoring between situations and cases
//! - [`engine`] — the four-phase reasoning cycle and the explain log
//! - [`pddl`] — STRIPS parser, grounder, forward search, plan validation
//! - [`plant`] — machine port abstraction: deterministic simulator and CSV replay
//! - [`runtime`] — the per-cycle control loop tying everything together

pub mod casebase;
pub mod diag;
pub mod domain;
pub mod engine;
pub mod expr;
pub mod pddl;
pub mod plant;
pub mod runtime;
pub mod similarity;
mod lex;
pub mod situation;
pub mod value;

pub use casebase::{
    parse_case_base, Case, CaseBase, CaseKind, CaseStats, FallbackDirective, Solution,
    SolutionPart,
};
pub use diag::ParseError;
pub use domain::{parse_domain_model, AttributePath, ClassDef, DomainModel, ModelSet};
pub use engine::{EngineConfig, Outcome, RetrievalResult, ReviseAction};
pub use similarity::{
    parse_similarity_spec, GlobalMetric, LocalMetric, PluginRegistry, ReferencePoint, Score,
    SimilaritySpec,
};
pub use situation::Situation;
pub use value::{PrimitiveType, Value};
