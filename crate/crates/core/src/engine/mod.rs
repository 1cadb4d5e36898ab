//! The four-phase reasoning cycle: retrieve, reuse, revise, retain.
//!
//! Retrieval scores every known case with an extractable reference point
//! against the current situation, filters by the retrieval threshold on the
//! raw score, and ranks by an effective score that folds in each case's
//! success history. Reuse instantiates the top candidate's solution.
//! Revise updates the applied case's statistics from the observed outcome
//! and steps down the ranking (or into the fallback) on failure. Retain
//! converts a successful adapted or fallback episode into a new case when
//! it is distant enough from everything already known.
//!
//! All case base mutation happens on the caller's single control thread;
//! scoring itself is pure.

pub mod explain;

pub use explain::{
    read_explain_log, render_report, AttemptRecord, CandidateRecord, EpisodeOutcome,
    ExplainFilter, ExplainLogWriter, ExplainRecord,
};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::casebase::{
    eval_condition, Case, CaseBase, CaseKind, CaseStats, FallbackDirective, Solution, SolutionPart,
};
use crate::domain::{AttributePath, ModelSet};
use crate::expr::{BoolExpr, CmpOp, EvalError, NumExpr};
use crate::plant::ConfigWrite;
use crate::similarity::{
    extract_reference, global_similarity, MetricError, PluginRegistry, SimilaritySpec,
};
use crate::situation::Situation;
use crate::value::Value;

/// Reasoner tuning knobs. All values live in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// A case is a reuse candidate only when its raw similarity score is
    /// strictly below this constant.
    pub retrieval_threshold: f64,
    /// A successful new experience is stored only when its minimum distance
    /// to every existing case exceeds this threshold.
    pub learning_threshold: f64,
    /// How strongly a poor success history pushes a case down the ranking.
    pub success_penalty_factor: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            retrieval_threshold: 0.2,
            learning_threshold: 0.3,
            success_penalty_factor: 0.5,
        }
    }
}

impl EngineConfig {
    /// Checks the `(0, 1]` bounds; returns advisory warnings (for example a
    /// retrieval threshold above the learning threshold, which is legal but
    /// usually unintended).
    pub fn validate(&self) -> Result<Vec<String>, String> {
        for (name, v) in [
            ("retrieval_threshold", self.retrieval_threshold),
            ("learning_threshold", self.learning_threshold),
            ("success_penalty_factor", self.success_penalty_factor),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        let mut warnings = Vec::new();
        if self.retrieval_threshold > self.learning_threshold {
            warnings.push(format!(
                "retrieval_threshold ({}) exceeds learning_threshold ({}); retained cases may immediately dominate retrieval",
                self.retrieval_threshold, self.learning_threshold
            ));
        }
        Ok(warnings)
    }

    /// The ranking score: raw distance plus a penalty that grows as the
    /// case's Laplace-smoothed success rate shrinks.
    pub fn effective_score(&self, raw: f64, stats: &CaseStats) -> f64 {
        raw + self.success_penalty_factor * (1.0 - stats.smoothed_success_rate())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EngineError {
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Metric(#[from] MetricError),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("solution handler `{0}` is not registered with the runtime")]
    HandlerUnresolved(String),
    #[error("cannot persist case base: {0}")]
    Persist(String),
    #[error("{0}")]
    Invalid(String),
}

/// One scored candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCase {
    pub name: String,
    pub raw_score: f64,
    pub effective_score: f64,
}

/// Result of the retrieve phase: candidates ranked ascending by effective
/// score (ties by name), every entry with a raw score below the threshold.
/// Unknown and non-extractable cases whose condition holds are reported as
/// triggers, not candidates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub ranked: Vec<RankedCase>,
    pub threshold: f64,
    pub triggers: Vec<String>,
}

/// Retrieves and ranks the cases applicable to a situation.
pub fn retrieve(
    s: &Situation,
    cb: &CaseBase,
    spec: &SimilaritySpec,
    cfg: &EngineConfig,
    plugins: &PluginRegistry,
) -> Result<RetrievalResult, EngineError> {
    let mut ranked = Vec::new();
    let mut triggers = Vec::new();
    for case in &cb.cases {
        let reference = if case.kind() == CaseKind::Known {
            extract_reference(case).ok()
        } else {
            None
        };
        match reference {
            Some(reference) => {
                let raw = global_similarity(spec, s, &reference, plugins)?.value();
                if raw < cfg.retrieval_threshold {
                    ranked.push(RankedCase {
                        name: case.name.clone(),
                        raw_score: raw,
                        effective_score: cfg.effective_score(raw, &case.stats),
                    });
                }
            }
            None => {
                if eval_condition(&case.condition, s)? {
                    triggers.push(case.name.clone());
                }
            }
        }
    }
    ranked.sort_by(|a, b| {
        a.effective_score
            .partial_cmp(&b.effective_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(RetrievalResult {
        ranked,
        threshold: cfg.retrieval_threshold,
        triggers,
    })
}

/// One executable step of an instantiated solution.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanStep {
    Set { path: AttributePath, value: Value },
    Invoke { handler: String, args: Vec<Value> },
}

/// A case solution instantiated against a concrete situation.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPlan {
    pub case: String,
    pub steps: Vec<PlanStep>,
}

/// In-process handlers for `call` solution parts, keyed by name.
pub trait SolutionHandler: Send + Sync {
    /// Returns the configuration writes the handler wants executed.
    fn apply(&self, args: &[Value], s: &Situation) -> Result<Vec<ConfigWrite>, String>;
}

struct HandlerFn<F>(F);

impl<F> SolutionHandler for HandlerFn<F>
where
    F: Fn(&[Value], &Situation) -> Result<Vec<ConfigWrite>, String> + Send + Sync,
{
    fn apply(&self, args: &[Value], s: &Situation) -> Result<Vec<ConfigWrite>, String> {
        (self.0)(args, s)
    }
}

#[derive(Default, Clone)]
pub struct SolutionHandlers {
    map: BTreeMap<String, Arc<dyn SolutionHandler>>,
}

impl SolutionHandlers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, handler: Arc<dyn SolutionHandler>) {
        self.map.insert(name.into(), handler);
    }

    pub fn register_fn<F>(&mut self, name: impl Into<String>, f: F)
    where
        F: Fn(&[Value], &Situation) -> Result<Vec<ConfigWrite>, String> + Send + Sync + 'static,
    {
        self.map.insert(name.into(), Arc::new(HandlerFn(f)));
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn SolutionHandler>> {
        self.map.get(name)
    }
}

impl std::fmt::Debug for SolutionHandlers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolutionHandlers")
            .field("handlers", &self.map.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Instantiates the top-ranked case's solution against the situation:
/// assignment expressions are evaluated with the situation's values, `call`
/// parts are checked against the handler registry. Returns `None` when the
/// candidate list is empty.
pub fn reuse(
    r: &RetrievalResult,
    s: &Situation,
    cb: &CaseBase,
    handlers: &SolutionHandlers,
) -> Result<Option<SolutionPlan>, EngineError> {
    let Some(top) = r.ranked.first() else {
        return Ok(None);
    };
    instantiate_solution(&top.name, s, cb, handlers).map(Some)
}

/// Instantiates a specific case's solution (used by reuse and by the
/// try-next path of revise).
pub fn instantiate_solution(
    case_name: &str,
    s: &Situation,
    cb: &CaseBase,
    handlers: &SolutionHandlers,
) -> Result<SolutionPlan, EngineError> {
    let case = cb
        .case(case_name)
        .ok_or_else(|| EngineError::UnknownCase(case_name.to_string()))?;
    let solution = case
        .solution
        .as_ref()
        .ok_or_else(|| EngineError::Invalid(format!("case `{case_name}` has no solution")))?;
    let mut steps = Vec::new();
    for part in &solution.parts {
        match part {
            SolutionPart::Assign { target, value } => {
                let value = crate::expr::eval_num(value, s)?;
                steps.push(PlanStep::Set {
                    path: target.clone(),
                    value,
                });
            }
            SolutionPart::Call { handler, args } => {
                if handlers.get(handler).is_none() {
                    return Err(EngineError::HandlerUnresolved(handler.clone()));
                }
                let mut resolved = Vec::with_capacity(args.len());
                for arg in args {
                    resolved.push(match arg {
                        crate::casebase::CallArg::Lit(v) => v.clone(),
                        crate::casebase::CallArg::Path(p) => s
                            .get(p)
                            .cloned()
                            .ok_or_else(|| EvalError::MissingAttribute(p.clone()))?,
                    });
                }
                steps.push(PlanStep::Invoke {
                    handler: handler.clone(),
                    args: resolved,
                });
            }
        }
    }
    Ok(SolutionPlan {
        case: case_name.to_string(),
        steps,
    })
}

/// The observed result of applying a plan: the situations before and after,
/// what was applied, and whether the expected postcondition held.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub before: Situation,
    pub after: Situation,
    /// The case whose solution was applied; `None` for a fallback plan.
    pub applied_case: Option<String>,
    /// True iff the applied case's `yields` (or, for fallback plans, the
    /// negated trigger condition) holds in `after`.
    pub success: bool,
    /// The case whose condition started the episode.
    pub trigger_case: String,
    /// The configuration writes that were executed.
    pub executed: Vec<ConfigWrite>,
    /// Raw similarity score of the applied case at retrieval time.
    pub raw_score: Option<f64>,
    /// True when the plan came from the planning fallback.
    pub from_fallback: bool,
}

/// What the revise phase decided after an outcome.
#[derive(Debug, Clone, PartialEq)]
pub enum ReviseAction {
    /// Success: statistics reinforced, episode can close.
    Done,
    /// Failure with another candidate remaining: try this case next.
    TryNext(String),
    /// Failure with no candidates left: run this fallback.
    Fallback(FallbackDirective),
}

pub const DEFAULT_NOTIFY_MESSAGE: &str =
    "no applicable case solution; operator attention required";

/// Updates the applied case's statistics from the outcome and picks the
/// next move: done on success, the next-ranked candidate on failure, the
/// trigger case's fallback (or the default notification) when the ranking
/// is exhausted.
pub fn revise(
    o: &Outcome,
    cb: &mut CaseBase,
    fallback: Option<&FallbackDirective>,
    next: &RetrievalResult,
) -> Result<ReviseAction, EngineError> {
    let name = o
        .applied_case
        .as_ref()
        .ok_or_else(|| EngineError::Invalid("revise called without an applied case".into()))?;
    let case = cb
        .case_mut(name)
        .ok_or_else(|| EngineError::UnknownCase(name.clone()))?;
    case.stats.applications += 1;
    if o.success {
        case.stats.successes += 1;
        return Ok(ReviseAction::Done);
    }
    let position = next.ranked.iter().position(|r| &r.name == name);
    if let Some(idx) = position {
        if let Some(next_case) = next.ranked.get(idx + 1) {
            return Ok(ReviseAction::TryNext(next_case.name.clone()));
        }
    }
    Ok(ReviseAction::Fallback(fallback.cloned().unwrap_or(
        FallbackDirective::Notify {
            message: DEFAULT_NOTIFY_MESSAGE.to_string(),
        },
    )))
}

/// Result of the retain phase.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainResult {
    /// Name of the case that was added, if any.
    pub added: Option<String>,
    /// Minimum distance of the new experience to the existing extractable
    /// cases; `None` when there were none to compare against.
    pub min_score: Option<f64>,
}

/// Stores a successful adapted or fallback experience as a new case when it
/// is far enough (above the learning threshold) from everything already in
/// the case base. Verbatim reuse of an existing case at raw score 0 only
/// reinforces statistics and never adds.
///
/// The learned case's condition is a conjunction of equalities over the
/// attributes the triggering condition or the solution touched (a full
/// snapshot equality would never match again on continuous sensors); its
/// solution is the executed plan as assignments; its postcondition is the
/// negated trigger condition.
pub fn retain(
    o: &Outcome,
    cb: &mut CaseBase,
    spec: &SimilaritySpec,
    cfg: &EngineConfig,
    plugins: &PluginRegistry,
    models: &ModelSet,
    persist_to: Option<&Path>,
) -> Result<RetainResult, EngineError> {
    if !o.success {
        return Ok(RetainResult {
            added: None,
            min_score: None,
        });
    }

    let mut min_score: Option<f64> = None;
    for case in &cb.cases {
        if case.kind() != CaseKind::Known {
            continue;
        }
        let Ok(reference) = extract_reference(case) else {
            continue;
        };
        let score = global_similarity(spec, &o.before, &reference, plugins)?.value();
        min_score = Some(min_score.map_or(score, |m: f64| m.min(score)));
    }

    // verbatim reuse of an existing case: pure reinforcement, never adds
    let adapted = o.from_fallback || o.raw_score.map_or(true, |r| r > 0.0);
    if !adapted {
        return Ok(RetainResult {
            added: None,
            min_score,
        });
    }
    if let Some(min) = min_score {
        if min <= cfg.learning_threshold {
            return Ok(RetainResult {
                added: None,
                min_score,
            });
        }
    }

    let trigger = cb
        .case(&o.trigger_case)
        .ok_or_else(|| EngineError::UnknownCase(o.trigger_case.clone()))?;

    let mut touched: Vec<AttributePath> = trigger.condition.paths();
    for write in &o.executed {
        if !touched.contains(&write.path) {
            touched.push(write.path.clone());
        }
    }
    touched.sort();

    let mut condition: Option<BoolExpr> = None;
    for path in &touched {
        let value = o.before.get(path).cloned().ok_or_else(|| {
            EngineError::Invalid(format!(
                "situation before the episode lacks touched attribute {path}"
            ))
        })?;
        let cmp = BoolExpr::cmp(path.clone(), CmpOp::Eq, value);
        condition = Some(match condition {
            Some(prev) => prev.and(cmp),
            None => cmp,
        });
    }
    let condition = condition
        .ok_or_else(|| EngineError::Invalid("episode touched no attributes".into()))?;

    let parts: Vec<SolutionPart> = o
        .executed
        .iter()
        .map(|w| SolutionPart::Assign {
            target: w.path.clone(),
            value: NumExpr::Lit(w.value.clone()),
        })
        .collect();
    if parts.is_empty() {
        return Err(EngineError::Invalid(
            "cannot retain an episode that executed no writes".into(),
        ));
    }

    let mut name = format!("learned_c{}", o.before.cycle_id);
    let mut suffix = 1;
    while cb.case(&name).is_some() {
        suffix += 1;
        name = format!("learned_c{}_{suffix}", o.before.cycle_id);
    }

    let learned = Case {
        name: name.clone(),
        condition,
        solution: Some(Solution {
            parts,
            yields: trigger.condition.clone().negate(),
        }),
        fallback: trigger.fallback.clone(),
        stats: CaseStats {
            applications: 1,
            successes: 1,
        },
    };
    cb.add_case(learned, models)
        .map_err(EngineError::Invalid)?;

    if let Some(path) = persist_to {
        persist_case_base(cb, path).map_err(|e| EngineError::Persist(e.to_string()))?;
    }

    Ok(RetainResult {
        added: Some(name),
        min_score,
    })
}

/// Atomically persists a case base to its source path: the text is written
/// to a temporary file in the same directory and renamed over the target,
/// so a crash mid-write leaves the previous file intact.
pub fn persist_case_base(cb: &CaseBase, path: &Path) -> std::io::Result<()> {
    let tmp = case_base_temp_path(path);
    std::fs::write(&tmp, cb.to_source())?;
    std::fs::rename(&tmp, path)
}

/// The temporary file used by [`persist_case_base`]: `<file>.tmp` next to
/// the target. Readers must only ever open the target path.
pub fn case_base_temp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::casebase::parse_case_base;
    use crate::domain::parse_domain_model;
    use crate::similarity::parse_similarity_spec;

    fn models() -> ModelSet {
        let mut set = ModelSet::new();
        set.insert(
            parse_domain_model(
                "model M {
                   class C {
                     temp: float range [0.0, 100.0];
                     level: int range [1.0, 5.0];
                     rate: float range [0.0, 10.0];
                   }
                 }",
            )
            .unwrap(),
        );
        set
    }

    fn spec() -> SimilaritySpec {
        parse_similarity_spec(
            "similarity S { import M;
               local C.temp absolute;
               local C.rate absolute;
               global weighted { C.temp weight 0.5; C.rate weight 0.5; } }",
            &models(),
        )
        .unwrap()
    }

    fn path(attr: &str) -> AttributePath {
        AttributePath::new("C", attr)
    }

    fn situation(temp: f64, rate: f64) -> Situation {
        Situation::new(1)
            .with(path("temp"), Value::Float(temp))
            .with(path("rate"), Value::Float(rate))
            .with(path("level"), Value::Int(3))
    }

    const CASES: &str = r#"casebase B {
      import M;
      case Cool { when C.temp > 80.0; solution { C.level = 1; } yields C.temp <= 80.0; }
      case Drain { when C.rate > 8.0; solution { C.rate = C.rate - 2.0; } yields C.rate <= 8.0; }
      case Watch { when C.temp > 95.0; fallback notify "check cooling"; }
    }"#;

    fn case_base() -> CaseBase {
        parse_case_base(CASES, &models()).unwrap()
    }

    #[test]
    fn zero_distance_identity_ranks_first() {
        let cb = case_base();
        // situation exactly at Cool's reference point (temp = 80)
        let s = situation(80.0, 0.0);
        let r = retrieve(&s, &cb, &spec(), &EngineConfig::default(), &PluginRegistry::new()).unwrap();
        assert_eq!(r.ranked[0].name, "Cool");
        assert_eq!(r.ranked[0].raw_score, 0.0);
    }

    #[test]
    fn threshold_filters_all_distant_cases() {
        let cb = case_base();
        // |20-80|/100 = 0.6 and |0-8|/10 = 0.8 weighted -> both raw >= 0.2
        let s = situation(20.0, 0.0);
        let r = retrieve(&s, &cb, &spec(), &EngineConfig::default(), &PluginRegistry::new()).unwrap();
        assert!(r.ranked.is_empty());
        assert!(r.triggers.is_empty());
    }

    #[test]
    fn unknown_case_with_holding_condition_is_a_trigger() {
        let cb = case_base();
        let s = situation(97.0, 0.0);
        let r = retrieve(&s, &cb, &spec(), &EngineConfig::default(), &PluginRegistry::new()).unwrap();
        assert_eq!(r.triggers, vec!["Watch".to_string()]);
        assert!(r.ranked.iter().all(|c| c.name != "Watch"));
    }

    #[test]
    fn success_history_breaks_raw_score_ties() {
        let mut cb = case_base();
        cb.case_mut("Cool").unwrap().stats = CaseStats {
            applications: 4,
            successes: 0,
        };
        cb.case_mut("Drain").unwrap().stats = CaseStats {
            applications: 4,
            successes: 4,
        };
        let cfg = EngineConfig::default();
        // equal raw scores by construction
        let raw = 0.05;
        let eff_bad = cfg.effective_score(raw, &cb.case("Cool").unwrap().stats);
        let eff_good = cfg.effective_score(raw, &cb.case("Drain").unwrap().stats);
        assert!(eff_good < eff_bad);
        // brute force over both orderings: the 4/4 case must come first
        let expected_good = raw + 0.5 * (1.0 - 5.0 / 6.0);
        let expected_bad = raw + 0.5 * (1.0 - 1.0 / 6.0);
        assert!((eff_good - expected_good).abs() < 1e-12);
        assert!((eff_bad - expected_bad).abs() < 1e-12);
    }

    #[test]
    fn retrieval_is_deterministic() {
        let cb = case_base();
        let s = situation(82.0, 7.6);
        let cfg = EngineConfig::default();
        let reg = PluginRegistry::new();
        let a = retrieve(&s, &cb, &spec(), &cfg, &reg).unwrap();
        let b = retrieve(&s, &cb, &spec(), &cfg, &reg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reuse_instantiates_assignments() {
        let cb = case_base();
        let s = situation(80.0, 6.0);
        let r = retrieve(&s, &cb, &spec(), &EngineConfig::default(), &PluginRegistry::new()).unwrap();
        let plan = reuse(&r, &s, &cb, &SolutionHandlers::new()).unwrap().unwrap();
        assert_eq!(plan.case, "Cool");
        assert_eq!(
            plan.steps,
            vec![PlanStep::Set {
                path: path("level"),
                value: Value::Int(1)
            }]
        );
    }

    #[test]
    fn reuse_evaluates_arithmetic_against_situation() {
        let cb = case_base();
        let s = situation(0.0, 8.0); // Drain reference: rate = 8 -> raw 0
        let r = retrieve(&s, &cb, &spec(), &EngineConfig::default(), &PluginRegistry::new()).unwrap();
        assert_eq!(r.ranked[0].name, "Drain");
        let plan = reuse(&r, &s, &cb, &SolutionHandlers::new()).unwrap().unwrap();
        assert_eq!(
            plan.steps,
            vec![PlanStep::Set {
                path: path("rate"),
                value: Value::Float(6.0)
            }]
        );
    }

    #[test]
    fn reuse_on_empty_retrieval_is_none() {
        let cb = case_base();
        let s = situation(20.0, 0.0);
        let r = retrieve(&s, &cb, &spec(), &EngineConfig::default(), &PluginRegistry::new()).unwrap();
        assert_eq!(reuse(&r, &s, &cb, &SolutionHandlers::new()).unwrap(), None);
    }

    #[test]
    fn unresolved_call_handler_fails_reuse() {
        let src = r#"casebase B { import M;
          case X { when C.temp > 1.0;
            solution { call tune(C.temp); } yields C.temp <= 1.0; } }"#;
        let cb = parse_case_base(src, &models()).unwrap();
        let err = instantiate_solution("X", &situation(5.0, 0.0), &cb, &SolutionHandlers::new())
            .unwrap_err();
        assert_eq!(err, EngineError::HandlerUnresolved("tune".into()));
    }

    fn outcome(applied: &str, success: bool, raw: f64) -> Outcome {
        Outcome {
            before: situation(85.0, 9.0),
            after: situation(70.0, 9.0),
            applied_case: Some(applied.to_string()),
            success,
            trigger_case: "Cool".to_string(),
            executed: vec![ConfigWrite {
                path: path("level"),
                value: Value::Int(1),
            }],
            raw_score: Some(raw),
            from_fallback: false,
        }
    }

    #[test]
    fn revise_success_updates_stats() {
        let mut cb = case_base();
        cb.case_mut("Cool").unwrap().stats = CaseStats {
            applications: 5,
            successes: 3,
        };
        let r = RetrievalResult::default();
        let action = revise(&outcome("Cool", true, 0.0), &mut cb, None, &r).unwrap();
        assert_eq!(action, ReviseAction::Done);
        assert_eq!(
            cb.case("Cool").unwrap().stats,
            CaseStats {
                applications: 6,
                successes: 4
            }
        );
    }

    #[test]
    fn revise_failure_steps_to_next_candidate() {
        let mut cb = case_base();
        let next = RetrievalResult {
            ranked: vec![
                RankedCase {
                    name: "Cool".into(),
                    raw_score: 0.05,
                    effective_score: 0.3,
                },
                RankedCase {
                    name: "Drain".into(),
                    raw_score: 0.1,
                    effective_score: 0.35,
                },
            ],
            threshold: 0.2,
            triggers: vec![],
        };
        let action = revise(&outcome("Cool", false, 0.05), &mut cb, None, &next).unwrap();
        assert_eq!(action, ReviseAction::TryNext("Drain".into()));
        assert_eq!(cb.case("Cool").unwrap().stats.applications, 1);
        assert_eq!(cb.case("Cool").unwrap().stats.successes, 0);
    }

    #[test]
    fn revise_failure_without_candidates_falls_back() {
        let mut cb = case_base();
        let fb = FallbackDirective::Notify {
            message: "check cooling".into(),
        };
        let action =
            revise(&outcome("Cool", false, 0.05), &mut cb, Some(&fb), &RetrievalResult::default())
                .unwrap();
        assert_eq!(action, ReviseAction::Fallback(fb));
        // default fallback is a notification
        let action =
            revise(&outcome("Cool", false, 0.05), &mut cb, None, &RetrievalResult::default())
                .unwrap();
        match action {
            ReviseAction::Fallback(FallbackDirective::Notify { message }) => {
                assert_eq!(message, DEFAULT_NOTIFY_MESSAGE)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failure_raises_and_success_lowers_effective_score() {
        let cfg = EngineConfig::default();
        let raw = 0.1;
        for (apps, succ) in [(0u64, 0u64), (3, 1), (10, 10), (7, 0)] {
            let before = CaseStats {
                applications: apps,
                successes: succ,
            };
            let after_failure = CaseStats {
                applications: apps + 1,
                successes: succ,
            };
            let after_success = CaseStats {
                applications: apps + 1,
                successes: succ + 1,
            };
            assert!(cfg.effective_score(raw, &after_failure) >= cfg.effective_score(raw, &before));
            assert!(cfg.effective_score(raw, &after_success) <= cfg.effective_score(raw, &before));
        }
    }

    /// Case base whose unknown case triggers far away from the references
    /// of the known cases (Cool pins temp = 80, Drain pins rate = 8).
    fn retain_case_base() -> CaseBase {
        parse_case_base(
            r#"casebase B {
              import M;
              case Cool { when C.temp > 80.0; solution { C.level = 1; } yields C.temp <= 80.0; }
              case Drain { when C.rate > 8.0; solution { C.rate = C.rate - 2.0; } yields C.rate <= 8.0; }
              case ColdIdle { when C.temp < 20.0 && C.rate < 2.0; fallback notify "cold idle"; }
            }"#,
            &models(),
        )
        .unwrap()
    }

    fn cold_idle_outcome() -> Outcome {
        // min distance: 0.5*|10-80|/100 = 0.35 vs Cool, 0.5*|0.5-8|/10 = 0.375 vs Drain
        Outcome {
            before: situation(10.0, 0.5),
            after: situation(10.0, 0.5),
            applied_case: None,
            success: true,
            trigger_case: "ColdIdle".into(),
            executed: vec![ConfigWrite {
                path: path("level"),
                value: Value::Int(2),
            }],
            raw_score: None,
            from_fallback: true,
        }
    }

    #[test]
    fn retain_adds_distant_experience() {
        let mut cb = retain_case_base();
        let result = retain(
            &cold_idle_outcome(),
            &mut cb,
            &spec(),
            &EngineConfig::default(),
            &PluginRegistry::new(),
            &models(),
            None,
        )
        .unwrap();
        let name = result.added.expect("case should be added");
        assert!((result.min_score.unwrap() - 0.35).abs() < 1e-12);
        let learned = cb.case(&name).unwrap();
        assert_eq!(learned.kind(), CaseKind::Known);
        assert_eq!(learned.stats, CaseStats { applications: 1, successes: 1 });
        // condition pins the touched attributes by equality
        let printed = cb.to_source();
        assert!(printed.contains("C.level == 3"), "{printed}");
        assert!(printed.contains("C.temp == 10.0"), "{printed}");
        assert!(printed.contains("C.rate == 0.5"), "{printed}");
    }

    #[test]
    fn retain_skips_near_duplicates() {
        let mut cb = case_base();
        let o = Outcome {
            before: situation(81.0, 7.9), // essentially Cool/Drain territory
            after: situation(81.0, 7.9),
            applied_case: Some("Cool".into()),
            success: true,
            trigger_case: "Cool".into(),
            executed: vec![ConfigWrite {
                path: path("level"),
                value: Value::Int(1),
            }],
            raw_score: Some(0.05),
            from_fallback: false,
        };
        let result = retain(
            &o,
            &mut cb,
            &spec(),
            &EngineConfig::default(),
            &PluginRegistry::new(),
            &models(),
            None,
        )
        .unwrap();
        assert_eq!(result.added, None);
        assert!(result.min_score.unwrap() <= 0.3);
        assert_eq!(cb.cases.len(), 3);
    }

    #[test]
    fn verbatim_reuse_never_adds() {
        let mut cb = case_base();
        let o = outcome("Cool", true, 0.0);
        let result = retain(
            &o,
            &mut cb,
            &spec(),
            &EngineConfig::default(),
            &PluginRegistry::new(),
            &models(),
            None,
        )
        .unwrap();
        assert_eq!(result.added, None);
        assert_eq!(cb.cases.len(), 3);
    }

    #[test]
    fn retain_is_idempotent() {
        let mut cb = retain_case_base();
        let o = cold_idle_outcome();
        let cfg = EngineConfig::default();
        let reg = PluginRegistry::new();
        let first = retain(&o, &mut cb, &spec(), &cfg, &reg, &models(), None).unwrap();
        assert!(first.added.is_some());
        let second = retain(&o, &mut cb, &spec(), &cfg, &reg, &models(), None).unwrap();
        // the second retain finds the first learned case at distance 0
        assert_eq!(second.added, None);
        assert_eq!(second.min_score, Some(0.0));
        assert_eq!(cb.cases.len(), 4);
    }

    #[test]
    fn persist_roundtrip_with_temp_cleanup() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("b.cb");
        let cb = case_base();
        persist_case_base(&cb, &target).unwrap();
        assert!(!case_base_temp_path(&target).exists());
        let text = std::fs::read_to_string(&target).unwrap();
        let reloaded = parse_case_base(&text, &models()).unwrap();
        assert_eq!(cb, reloaded);
    }

    #[test]
    fn config_bounds_are_enforced() {
        let mut cfg = EngineConfig::default();
        assert!(cfg.validate().unwrap().is_empty());
        cfg.retrieval_threshold = 0.4;
        assert_eq!(cfg.validate().unwrap().len(), 1); // warning, not error
        cfg.success_penalty_factor = 0.0;
        assert!(cfg.validate().is_err());
    }
}
