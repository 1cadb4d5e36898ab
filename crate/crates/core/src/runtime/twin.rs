//! The per-cycle control loop: snapshot, trigger detection, reasoning,
//! execution, outcome checking, learning, and logging.
//!
//! One control thread owns the loop, the port, the case base, and all
//! logs; no cycle overlaps another. Because configuration writes take
//! effect only in the next machine cycle, an episode spans at least two
//! cycles: the plan is applied on the trigger cycle and its outcome is
//! checked against the following cycle's snapshot. While an episode is
//! open, no new episode starts; the evaluator still runs every cycle to
//! classify it for the timing report.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::casebase::{eval_condition, parse_case_base, FallbackDirective};
use crate::domain::AttributePath;
use crate::engine::{
    self, instantiate_solution, persist_case_base, retain, retrieve, revise, AttemptRecord,
    CandidateRecord, EngineConfig, EpisodeOutcome, ExplainLogWriter, ExplainRecord, Outcome,
    PlanStep, RetrievalResult, ReviseAction, SolutionHandlers, SolutionPlan,
};
use crate::expr::BoolExpr;
use crate::pddl::{
    plan as pddl_plan, plan_to_assignments, situation_to_problem, PlanOutcome, SearchLimits,
};
use crate::plant::{ConfigWrite, MachinePort, PortError, SituationCsvWriter, WriteAck};
use crate::similarity::PluginRegistry;
use crate::situation::Situation;
use crate::value::{PrimitiveType, Value};

use super::{TwinConfig, TwinError, TwinSystem};

/// Which action a cycle took. Exactly one per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CyclePath {
    /// No new adaptation was started this cycle.
    NoTrigger,
    /// A case solution was applied (or recommended).
    CaseApplied,
    /// The planning fallback ran.
    Fallback,
    /// The episode ended in an operator notification.
    Notify,
}

impl CyclePath {
    pub fn as_str(self) -> &'static str {
        match self {
            CyclePath::NoTrigger => "no_trigger",
            CyclePath::CaseApplied => "case_applied",
            CyclePath::Fallback => "fallback",
            CyclePath::Notify => "notify",
        }
    }
}

/// Per-cycle phase timings in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTrace {
    pub cycle: u64,
    /// 0-based position in the run; index 0 is the first cycle.
    pub index: u64,
    pub path: CyclePath,
    /// True when any case condition held on this cycle's snapshot.
    pub case_detected: bool,
    pub evaluate_ms: f64,
    pub retrieve_ms: f64,
    pub reuse_ms: f64,
    pub execute_ms: f64,
    pub revise_ms: f64,
    pub retain_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RowStats {
    pub count: u64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub avg_ms: f64,
}

impl RowStats {
    fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        Some(Self {
            count: values.len() as u64,
            min_ms: min,
            max_ms: max,
            avg_ms: avg,
        })
    }
}

/// The three-row cycle-time table: the first cycle (which pays for model
/// loading), cycles where no case condition held, and cycles where one did.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimingTable {
    pub first_cycle: Option<RowStats>,
    pub no_case: Option<RowStats>,
    pub case_detected: Option<RowStats>,
}

impl std::fmt::Display for TimingTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:<15}{:>12}{:>12}{:>12}{:>9}",
            "", "min ms", "max ms", "avg ms", "cycles"
        )?;
        for (label, row) in [
            ("First Cycle", &self.first_cycle),
            ("No Case", &self.no_case),
            ("Case Detected", &self.case_detected),
        ] {
            match row {
                Some(r) => writeln!(
                    f,
                    "{label:<15}{:>12.4}{:>12.4}{:>12.4}{:>9}",
                    r.min_ms, r.max_ms, r.avg_ms, r.count
                )?,
                None => writeln!(f, "{label:<15}{:>12}{:>12}{:>12}{:>9}", "-", "-", "-", 0)?,
            }
        }
        Ok(())
    }
}

/// Splits traces into the three-row table over total cycle time.
pub fn report_timings(traces: &[CycleTrace]) -> TimingTable {
    let mut first = Vec::new();
    let mut no_case = Vec::new();
    let mut detected = Vec::new();
    for t in traces {
        if t.index == 0 {
            first.push(t.total_ms);
        } else if t.case_detected {
            detected.push(t.total_ms);
        } else {
            no_case.push(t.total_ms);
        }
    }
    TimingTable {
        first_cycle: RowStats::from_values(&first),
        no_case: RowStats::from_values(&no_case),
        case_detected: RowStats::from_values(&detected),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathCounts {
    pub no_trigger: u64,
    pub case_applied: u64,
    pub fallback: u64,
    pub notify: u64,
}

/// Aggregate result of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub cycles: u64,
    pub episodes: u64,
    /// Solutions executed (or recommended), counting retries.
    pub applications: u64,
    pub successes: u64,
    pub failures: u64,
    pub notifications: u64,
    pub recommendations: u64,
    pub learned_cases: Vec<String>,
    pub path_counts: PathCounts,
    pub timing: TimingTable,
    /// Number of write_config calls issued to the port.
    pub port_writes: u64,
    /// Set when the run aborted early (port failure after retries).
    pub aborted: Option<String>,
    pub warnings: Vec<String>,
}

/// External controls for a running twin.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Maximum number of cycles to process (0 means no budget; the run
    /// then ends on end-of-data or the stop signal).
    pub cycles: u64,
    pub stop: Option<Arc<AtomicBool>>,
    /// When set, the case base file is re-read between cycles; a failed
    /// reload keeps the old models and logs a warning.
    pub reload: Option<Arc<AtomicBool>>,
}

/// An applied plan waiting for the next cycle's snapshot to judge it.
struct PendingCheck {
    yields: BoolExpr,
    applied_case: Option<String>,
    raw_score: Option<f64>,
    from_fallback: bool,
    retrieval: RetrievalResult,
    writes: Vec<ConfigWrite>,
}

/// One reasoning episode being assembled into an explain record.
struct EpisodeDraft {
    record: ExplainRecord,
    trigger_situation: Situation,
    fallback: FallbackDirective,
    pending: Option<PendingCheck>,
}

/// The digital twin: loaded models plus the control loop.
pub struct Twin {
    pub system: TwinSystem,
    engine_cfg: EngineConfig,
    limits: SearchLimits,
    write_enabled: bool,
    casebase_path: Option<PathBuf>,
    log_dir: Option<PathBuf>,
    plugins: PluginRegistry,
    handlers: SolutionHandlers,
}

impl Twin {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: TwinSystem,
        engine_cfg: EngineConfig,
        limits: SearchLimits,
        write_enabled: bool,
        casebase_path: Option<PathBuf>,
        log_dir: Option<PathBuf>,
        plugins: PluginRegistry,
        handlers: SolutionHandlers,
    ) -> Result<Self, TwinError> {
        engine_cfg.validate().map_err(TwinError::Config)?;
        Ok(Self {
            system,
            engine_cfg,
            limits,
            write_enabled,
            casebase_path,
            log_dir,
            plugins,
            handlers,
        })
    }

    fn coerce_write(&self, path: &AttributePath, value: Value) -> Result<Value, TwinError> {
        let names: Vec<String> = self.system.models.names().map(String::from).collect();
        let info = self
            .system
            .models
            .resolve_in(&names, path)
            .map_err(|e| TwinError::Config(e.to_string()))?;
        if let Some(v) = value.coerce_to(info.ty) {
            return Ok(v);
        }
        if info.ty == PrimitiveType::Int {
            if let Value::Float(x) = value {
                if x.fract() == 0.0 {
                    return Ok(Value::Int(x as i64));
                }
            }
        }
        Err(TwinError::Config(format!(
            "cannot write a {} value to {path} ({})",
            value.primitive_type(),
            info.ty
        )))
    }

    /// Expands plan steps into concrete configuration writes, running
    /// `call` handlers in-process before the write batch.
    fn resolve_writes(
        &self,
        plan: &SolutionPlan,
        s: &Situation,
    ) -> Result<Vec<ConfigWrite>, TwinError> {
        let mut writes = Vec::new();
        for step in &plan.steps {
            match step {
                PlanStep::Set { path, value } => {
                    let value = self.coerce_write(path, value.clone())?;
                    writes.push(ConfigWrite {
                        path: path.clone(),
                        value,
                    });
                }
                PlanStep::Invoke { handler, args } => {
                    let h = self.handlers.get(handler).ok_or_else(|| {
                        TwinError::Engine(engine::EngineError::HandlerUnresolved(handler.clone()))
                    })?;
                    let produced = h
                        .apply(args, s)
                        .map_err(|e| TwinError::Config(format!("handler `{handler}`: {e}")))?;
                    for w in produced {
                        let value = self.coerce_write(&w.path, w.value)?;
                        writes.push(ConfigWrite {
                            path: w.path,
                            value,
                        });
                    }
                }
            }
        }
        Ok(writes)
    }

    /// Executes (or recommends) a batch of writes. Returns true when the
    /// episode closed on this cycle.
    #[allow(clippy::too_many_arguments)]
    fn dispatch_writes(
        &mut self,
        draft: &mut EpisodeDraft,
        writes: Vec<ConfigWrite>,
        applied_case: Option<String>,
        raw_score: Option<f64>,
        from_fallback: bool,
        yields: BoolExpr,
        retrieval: RetrievalResult,
        port: &mut dyn MachinePort,
        trace: &mut CycleTrace,
        summary: &mut RunSummary,
    ) -> Result<bool, TwinError> {
        summary.applications += 1;
        trace.path = if from_fallback {
            CyclePath::Fallback
        } else {
            CyclePath::CaseApplied
        };

        if !self.write_enabled {
            draft.record.attempts.push(AttemptRecord {
                case: applied_case,
                writes,
                success: None,
                recommended: true,
            });
            draft.record.outcome = EpisodeOutcome::Recommended;
            summary.recommendations += 1;
            return Ok(true);
        }

        summary.port_writes += 1;
        let ack = port.write_config(&writes).map_err(TwinError::Port)?;
        match ack {
            WriteAck::Accepted { warnings } => {
                for w in warnings {
                    draft.record.notes.push(format!("write warning: {w}"));
                }
                draft.pending = Some(PendingCheck {
                    yields,
                    applied_case,
                    raw_score,
                    from_fallback,
                    retrieval,
                    writes,
                });
                Ok(false)
            }
            WriteAck::Rejected { reason } => {
                draft.record.attempts.push(AttemptRecord {
                    case: applied_case,
                    writes,
                    success: Some(false),
                    recommended: false,
                });
                draft
                    .record
                    .notes
                    .push(format!("configuration write rejected: {reason}"));
                draft.record.outcome = EpisodeOutcome::Error;
                Ok(true)
            }
        }
    }

    /// Applies a case solution plan.
    #[allow(clippy::too_many_arguments)]
    fn apply_case_plan(
        &mut self,
        draft: &mut EpisodeDraft,
        plan: SolutionPlan,
        raw_score: Option<f64>,
        retrieval: RetrievalResult,
        situation: &Situation,
        port: &mut dyn MachinePort,
        trace: &mut CycleTrace,
        summary: &mut RunSummary,
    ) -> Result<bool, TwinError> {
        let t = Instant::now();
        let writes = self.resolve_writes(&plan, situation)?;
        let yields = self
            .system
            .casebase
            .case(&plan.case)
            .and_then(|c| c.solution.as_ref())
            .map(|s| s.yields.clone())
            .ok_or_else(|| TwinError::Engine(engine::EngineError::UnknownCase(plan.case.clone())))?;
        let case_name = plan.case.clone();
        let closed = self.dispatch_writes(
            draft,
            writes,
            Some(case_name),
            raw_score,
            false,
            yields,
            retrieval,
            port,
            trace,
            summary,
        )?;
        trace.execute_ms += ms(t);
        Ok(closed)
    }

    /// Runs a fallback directive: operator notification or PDDL planning.
    #[allow(clippy::too_many_arguments)]
    fn run_fallback(
        &mut self,
        draft: &mut EpisodeDraft,
        directive: &FallbackDirective,
        retrieval: RetrievalResult,
        situation: &Situation,
        port: &mut dyn MachinePort,
        trace: &mut CycleTrace,
        summary: &mut RunSummary,
    ) -> Result<bool, TwinError> {
        match directive {
            FallbackDirective::Notify { message } => {
                trace.path = CyclePath::Notify;
                draft.record.notes.push(format!("notification: {message}"));
                draft.record.outcome = EpisodeOutcome::Notified;
                summary.notifications += 1;
                Ok(true)
            }
            FallbackDirective::PddlGoal { goal, domain_ref } => {
                trace.path = CyclePath::Fallback;
                let Some((domain, mapping)) = self.system.kbs.get(domain_ref) else {
                    draft.record.notes.push(format!(
                        "planning domain `{domain_ref}` is not loaded"
                    ));
                    draft.record.outcome = EpisodeOutcome::Error;
                    return Ok(true);
                };

                let t = Instant::now();
                let problem_name = format!("fallback-c{}", situation.cycle_id);
                let (problem, clamp_warnings) =
                    match situation_to_problem(mapping, domain, goal, situation, &problem_name) {
                        Ok(out) => out,
                        Err(e) => {
                            draft
                                .record
                                .notes
                                .push(format!("cannot build planning problem: {e}"));
                            draft.record.outcome = EpisodeOutcome::Error;
                            trace.reuse_ms += ms(t);
                            return Ok(true);
                        }
                    };
                for w in clamp_warnings {
                    draft.record.notes.push(format!("discretization: {w}"));
                }
                let outcome = pddl_plan(domain, &problem, self.limits)
                    .map_err(|e| TwinError::Config(e.to_string()))?;
                trace.reuse_ms += ms(t);

                match outcome {
                    PlanOutcome::Solved(p, stats) => {
                        draft.record.notes.push(format!(
                            "plan found: {} step(s) after {} expansion(s)",
                            p.steps.len(),
                            stats.expansions
                        ));
                        for step in &p.steps {
                            draft.record.notes.push(format!("plan step: {step}"));
                        }
                        let writes = plan_to_assignments(mapping, domain, &problem, &p)
                            .map_err(|e| TwinError::Config(e.to_string()))?
                            .into_iter()
                            .map(|(path, value)| {
                                self.coerce_write(&path, value)
                                    .map(|value| ConfigWrite { path, value })
                            })
                            .collect::<Result<Vec<_>, _>>()?;
                        if writes.is_empty() {
                            draft
                                .record
                                .notes
                                .push("plan changes no mapped attribute".to_string());
                            draft.record.outcome = EpisodeOutcome::Failure;
                            summary.failures += 1;
                            return Ok(true);
                        }
                        let trigger_condition = self
                            .system
                            .casebase
                            .case(&draft.record.trigger_case)
                            .map(|c| c.condition.clone())
                            .ok_or_else(|| {
                                TwinError::Engine(engine::EngineError::UnknownCase(
                                    draft.record.trigger_case.clone(),
                                ))
                            })?;
                        let t = Instant::now();
                        let closed = self.dispatch_writes(
                            draft,
                            writes,
                            None,
                            None,
                            true,
                            trigger_condition.negate(),
                            retrieval,
                            port,
                            trace,
                            summary,
                        )?;
                        trace.execute_ms += ms(t);
                        Ok(closed)
                    }
                    PlanOutcome::Unsolvable(stats) => {
                        draft.record.notes.push(format!(
                            "planning goal unsolvable ({} expansions)",
                            stats.expansions
                        ));
                        draft.record.outcome = EpisodeOutcome::Failure;
                        summary.failures += 1;
                        Ok(true)
                    }
                    PlanOutcome::LimitExceeded(stats) => {
                        draft.record.notes.push(format!(
                            "planning limits exceeded ({} expansions, {} states generated)",
                            stats.expansions, stats.generated
                        ));
                        draft.record.outcome = EpisodeOutcome::Failure;
                        summary.failures += 1;
                        Ok(true)
                    }
                }
            }
        }
    }

    /// Judges a pending application against the new snapshot; may apply the
    /// next candidate or the fallback. Returns true when the episode closed.
    #[allow(clippy::too_many_arguments)]
    fn check_pending(
        &mut self,
        draft: &mut EpisodeDraft,
        situation: &Situation,
        port: &mut dyn MachinePort,
        trace: &mut CycleTrace,
        summary: &mut RunSummary,
        cb_dirty: &mut bool,
    ) -> Result<bool, TwinError> {
        let Some(pending) = draft.pending.take() else {
            return Ok(true);
        };

        let success =
            eval_condition(&pending.yields, situation).map_err(engine::EngineError::Eval)?;
        draft.record.attempts.push(AttemptRecord {
            case: pending.applied_case.clone(),
            writes: pending.writes.clone(),
            success: Some(success),
            recommended: false,
        });

        let outcome = Outcome {
            before: draft.trigger_situation.clone(),
            after: situation.clone(),
            applied_case: pending.applied_case.clone(),
            success,
            trigger_case: draft.record.trigger_case.clone(),
            executed: pending.writes.clone(),
            raw_score: pending.raw_score,
            from_fallback: pending.from_fallback,
        };

        if pending.from_fallback {
            // fallback plans carry no case statistics
            if success {
                self.retain_into(draft, &outcome, trace, summary)?;
                *cb_dirty = true;
                draft.record.outcome = EpisodeOutcome::Success;
                summary.successes += 1;
            } else {
                // failed fallback plans are logged but never retained
                draft.record.outcome = EpisodeOutcome::Failure;
                summary.failures += 1;
            }
            return Ok(true);
        }

        let t = Instant::now();
        let action = revise(
            &outcome,
            &mut self.system.casebase,
            Some(&draft.fallback),
            &pending.retrieval,
        )?;
        trace.revise_ms += ms(t);
        *cb_dirty = true;

        match action {
            ReviseAction::Done => {
                self.retain_into(draft, &outcome, trace, summary)?;
                draft.record.outcome = EpisodeOutcome::Success;
                summary.successes += 1;
                Ok(true)
            }
            ReviseAction::TryNext(next_case) => {
                let raw = pending
                    .retrieval
                    .ranked
                    .iter()
                    .find(|r| r.name == next_case)
                    .map(|r| r.raw_score);
                let plan = instantiate_solution(
                    &next_case,
                    situation,
                    &self.system.casebase,
                    &self.handlers,
                )?;
                self.apply_case_plan(
                    draft,
                    plan,
                    raw,
                    pending.retrieval,
                    situation,
                    port,
                    trace,
                    summary,
                )
            }
            ReviseAction::Fallback(directive) => self.run_fallback(
                draft,
                &directive,
                pending.retrieval,
                situation,
                port,
                trace,
                summary,
            ),
        }
    }

    fn retain_into(
        &mut self,
        draft: &mut EpisodeDraft,
        outcome: &Outcome,
        trace: &mut CycleTrace,
        summary: &mut RunSummary,
    ) -> Result<(), TwinError> {
        let t = Instant::now();
        let result = retain(
            outcome,
            &mut self.system.casebase,
            &self.system.spec,
            &self.engine_cfg,
            &self.plugins,
            &self.system.models,
            None,
        )?;
        trace.retain_ms += ms(t);
        if let Some(name) = &result.added {
            summary.learned_cases.push(name.clone());
        }
        if let Some(min) = result.min_score {
            draft
                .record
                .notes
                .push(format!("retain: min distance to existing cases {min:?}"));
        }
        draft.record.learned_case = result.added;
        Ok(())
    }

    fn hot_reload(&mut self, summary: &mut RunSummary) {
        let Some(path) = &self.casebase_path else {
            return;
        };
        match std::fs::read_to_string(path) {
            Ok(text) => match parse_case_base(&text, &self.system.models) {
                Ok(cb) => {
                    let previous = std::mem::replace(&mut self.system.casebase, cb);
                    match self.system.cross_validate() {
                        Ok(()) => summary.warnings.push("case base hot-reloaded".to_string()),
                        Err(e) => {
                            self.system.casebase = previous;
                            summary
                                .warnings
                                .push(format!("hot-reload rejected, keeping old case base: {e}"));
                        }
                    }
                }
                Err(e) => summary
                    .warnings
                    .push(format!("hot-reload rejected, keeping old case base: {e}")),
            },
            Err(e) => summary
                .warnings
                .push(format!("hot-reload failed to read {}: {e}", path.display())),
        }
    }

    /// Runs the control loop against a port. `preload_ms` is the model
    /// loading time attributed to the first cycle's trace.
    pub fn run(
        &mut self,
        port: &mut dyn MachinePort,
        opts: &RunOptions,
        preload_ms: f64,
    ) -> Result<RunSummary, TwinError> {
        let mut summary = RunSummary::default();
        for w in self.engine_cfg.validate().map_err(TwinError::Config)? {
            summary.warnings.push(w);
        }

        let mut explain_writer = None;
        let mut situations_writer = None;
        let mut traces_file: Option<std::fs::File> = None;
        if let Some(dir) = &self.log_dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| TwinError::Io(format!("{}: {e}", dir.display())))?;
            explain_writer = Some(
                ExplainLogWriter::create(&dir.join("explain.jsonl"))
                    .map_err(|e| TwinError::Io(e.to_string()))?,
            );
            situations_writer =
                Some(SituationCsvWriter::create(&dir.join("situations.csv")).map_err(TwinError::Port)?);
            let mut f = std::fs::File::create(dir.join("traces.csv"))
                .map_err(|e| TwinError::Io(e.to_string()))?;
            use std::io::Write as _;
            writeln!(
                f,
                "cycle,index,path,case_detected,evaluate_ms,retrieve_ms,reuse_ms,execute_ms,revise_ms,retain_ms,total_ms"
            )
            .map_err(|e| TwinError::Io(e.to_string()))?;
            traces_file = Some(f);
        }

        let mut traces: Vec<CycleTrace> = Vec::new();
        let mut episode: Option<EpisodeDraft> = None;
        let mut episode_counter: u64 = 0;
        let mut index: u64 = 0;

        loop {
            if opts.cycles > 0 && index >= opts.cycles {
                break;
            }
            if let Some(stop) = &opts.stop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
            }
            if let Some(reload) = &opts.reload {
                if reload.swap(false, Ordering::Relaxed) {
                    self.hot_reload(&mut summary);
                }
            }

            // (1) data processor: snapshot assembly
            let (cycle_id, situation) = match read_with_retries(port, 3) {
                Ok(Some(pair)) => pair,
                Ok(None) => break, // end of data
                Err(e) => {
                    summary.aborted = Some(format!("port failure after retries: {e}"));
                    break;
                }
            };
            let t_cycle = Instant::now();
            if let Some(w) = situations_writer.as_mut() {
                w.append(&situation).map_err(TwinError::Port)?;
            }

            let mut trace = CycleTrace {
                cycle: cycle_id,
                index,
                path: CyclePath::NoTrigger,
                case_detected: false,
                evaluate_ms: 0.0,
                retrieve_ms: 0.0,
                reuse_ms: 0.0,
                execute_ms: 0.0,
                revise_ms: 0.0,
                retain_ms: 0.0,
                total_ms: 0.0,
            };

            // (2) evaluator: which case conditions hold
            let t = Instant::now();
            let mut holding: Vec<String> = Vec::new();
            for case in &self.system.casebase.cases {
                if eval_condition(&case.condition, &situation).map_err(engine::EngineError::Eval)? {
                    holding.push(case.name.clone());
                }
            }
            trace.evaluate_ms = ms(t);
            trace.case_detected = !holding.is_empty();

            let mut cb_dirty = false;

            if let Some(mut draft) = episode.take() {
                // (3) an episode is waiting for its outcome
                let closed = self.check_pending(
                    &mut draft,
                    &situation,
                    port,
                    &mut trace,
                    &mut summary,
                    &mut cb_dirty,
                )?;
                if closed {
                    if let Some(w) = explain_writer.as_mut() {
                        w.append(&draft.record)
                            .map_err(|e| TwinError::Io(e.to_string()))?;
                    }
                } else {
                    episode = Some(draft);
                }
            } else if let Some(trigger) = holding.first().cloned() {
                // (4) fresh trigger: retrieve, reuse, execute
                episode_counter += 1;
                summary.episodes += 1;
                let mut draft = EpisodeDraft {
                    record: ExplainRecord {
                        episode: episode_counter,
                        cycle: cycle_id,
                        trigger_case: trigger.clone(),
                        situation: ExplainRecord::situation_map(&situation),
                        candidates: Vec::new(),
                        triggers: Vec::new(),
                        attempts: Vec::new(),
                        outcome: EpisodeOutcome::Error,
                        learned_case: None,
                        notes: Vec::new(),
                    },
                    trigger_situation: situation.clone(),
                    fallback: self.system.fallback_for(&trigger),
                    pending: None,
                };

                let t = Instant::now();
                let retrieval = retrieve(
                    &situation,
                    &self.system.casebase,
                    &self.system.spec,
                    &self.engine_cfg,
                    &self.plugins,
                )?;
                trace.retrieve_ms = ms(t);
                draft.record.candidates = retrieval
                    .ranked
                    .iter()
                    .map(|r| CandidateRecord {
                        case: r.name.clone(),
                        raw_score: r.raw_score,
                        effective_score: r.effective_score,
                    })
                    .collect();
                draft.record.triggers = retrieval.triggers.clone();

                let t = Instant::now();
                let plan = engine::reuse(
                    &retrieval,
                    &situation,
                    &self.system.casebase,
                    &self.handlers,
                )?;
                trace.reuse_ms = ms(t);

                let closed = match plan {
                    Some(plan) => {
                        let raw = retrieval.ranked.first().map(|r| r.raw_score);
                        self.apply_case_plan(
                            &mut draft,
                            plan,
                            raw,
                            retrieval,
                            &situation,
                            port,
                            &mut trace,
                            &mut summary,
                        )?
                    }
                    None => {
                        let directive = draft.fallback.clone();
                        self.run_fallback(
                            &mut draft,
                            &directive,
                            retrieval,
                            &situation,
                            port,
                            &mut trace,
                            &mut summary,
                        )?
                    }
                };
                if closed {
                    if let Some(w) = explain_writer.as_mut() {
                        w.append(&draft.record)
                            .map_err(|e| TwinError::Io(e.to_string()))?;
                    }
                } else {
                    episode = Some(draft);
                }
            }

            if cb_dirty {
                if let Some(path) = &self.casebase_path {
                    persist_case_base(&self.system.casebase, path)
                        .map_err(|e| TwinError::Io(e.to_string()))?;
                }
            }

            trace.total_ms = ms(t_cycle) + if index == 0 { preload_ms } else { 0.0 };
            match trace.path {
                CyclePath::NoTrigger => summary.path_counts.no_trigger += 1,
                CyclePath::CaseApplied => summary.path_counts.case_applied += 1,
                CyclePath::Fallback => summary.path_counts.fallback += 1,
                CyclePath::Notify => summary.path_counts.notify += 1,
            }
            if let Some(f) = traces_file.as_mut() {
                use std::io::Write as _;
                writeln!(
                    f,
                    "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    trace.cycle,
                    trace.index,
                    trace.path.as_str(),
                    trace.case_detected,
                    trace.evaluate_ms,
                    trace.retrieve_ms,
                    trace.reuse_ms,
                    trace.execute_ms,
                    trace.revise_ms,
                    trace.retain_ms,
                    trace.total_ms
                )
                .map_err(|e| TwinError::Io(e.to_string()))?;
            }
            traces.push(trace);
            summary.cycles += 1;
            index += 1;
        }

        // an episode left open at the end of the run still gets its record
        if let Some(mut draft) = episode.take() {
            if let Some(pending) = draft.pending.take() {
                draft.record.attempts.push(AttemptRecord {
                    case: pending.applied_case.clone(),
                    writes: pending.writes.clone(),
                    success: None,
                    recommended: false,
                });
            }
            draft
                .record
                .notes
                .push("run ended before the outcome could be observed".to_string());
            draft.record.outcome = EpisodeOutcome::Error;
            if let Some(w) = explain_writer.as_mut() {
                w.append(&draft.record)
                    .map_err(|e| TwinError::Io(e.to_string()))?;
            }
        }

        summary.timing = report_timings(&traces);
        Ok(summary)
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn read_with_retries(
    port: &mut dyn MachinePort,
    retries: u32,
) -> Result<Option<(u64, Situation)>, PortError> {
    let mut last = None;
    for _ in 0..=retries {
        match port.read_cycle() {
            Ok(v) => return Ok(v),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or(PortError::Io("unknown".into())))
}

/// Loads everything from a config and runs the twin. Model loading time is
/// attributed to the first cycle, mirroring a cold start.
pub fn run_twin(
    cfg: &TwinConfig,
    opts: &RunOptions,
    plugins: PluginRegistry,
    handlers: SolutionHandlers,
) -> Result<RunSummary, TwinError> {
    let t0 = Instant::now();
    let system = TwinSystem::load(cfg)?;
    let mut port = cfg.build_port(&system.models)?;
    let preload_ms = ms(t0);
    let mut twin = Twin::new(
        system,
        cfg.engine_config(),
        cfg.search_limits(),
        cfg.port.write_enabled,
        Some(cfg.casebase_path()),
        cfg.log_dir(),
        plugins,
        handlers,
    )?;
    twin.run(port.as_mut(), opts, preload_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_domain_model;
    use crate::domain::ModelSet;
    use crate::engine::read_explain_log;
    use crate::pddl::{parse_pddl_domain, MachineMapping};
    use crate::plant::PortCapabilities;
    use crate::similarity::parse_similarity_spec;
    use std::collections::BTreeMap;
    use std::collections::VecDeque;

    /// Scripted port: a queue of situations plus a record of writes.
    struct ScriptedPort {
        situations: VecDeque<Situation>,
        writes: Vec<Vec<ConfigWrite>>,
        writable: bool,
    }

    impl ScriptedPort {
        fn new(situations: Vec<Situation>) -> Self {
            Self {
                situations: situations.into(),
                writes: Vec::new(),
                writable: true,
            }
        }
    }

    impl MachinePort for ScriptedPort {
        fn read_cycle(&mut self) -> Result<Option<(u64, Situation)>, PortError> {
            Ok(self.situations.pop_front().map(|s| (s.cycle_id, s)))
        }
        fn write_config(&mut self, writes: &[ConfigWrite]) -> Result<WriteAck, PortError> {
            self.writes.push(writes.to_vec());
            Ok(WriteAck::Accepted { warnings: vec![] })
        }
        fn capabilities(&self) -> PortCapabilities {
            PortCapabilities {
                writable: self.writable,
            }
        }
    }

    fn models() -> ModelSet {
        let mut set = ModelSet::new();
        set.insert(
            parse_domain_model(
                "model M { class C { temp: float range [0.0, 100.0]; level: int range [1.0, 5.0]; } }",
            )
            .unwrap(),
        );
        set
    }

    fn system(cb_src: &str) -> TwinSystem {
        let models = models();
        let casebase = parse_case_base(cb_src, &models).unwrap();
        let spec = parse_similarity_spec(
            "similarity S { import M; local C.temp absolute; global weighted { C.temp weight 1.0; } }",
            &models,
        )
        .unwrap();
        TwinSystem {
            models,
            casebase,
            spec,
            kbs: BTreeMap::new(),
        }
    }

    fn twin(system: TwinSystem, log_dir: Option<PathBuf>) -> Twin {
        Twin::new(
            system,
            EngineConfig::default(),
            SearchLimits::default(),
            true,
            None,
            log_dir,
            PluginRegistry::new(),
            SolutionHandlers::new(),
        )
        .unwrap()
    }

    fn sit(cycle: u64, temp: f64, level: i64) -> Situation {
        Situation::new(cycle)
            .with(AttributePath::new("C", "temp"), Value::Float(temp))
            .with(AttributePath::new("C", "level"), Value::Int(level))
    }

    const COOL_CB: &str = r#"casebase B { import M;
      case Cool { when C.temp > 80.0; solution { C.level = 1; } yields C.temp <= 80.0; } }"#;

    #[test]
    fn no_trigger_run_applies_nothing() {
        let mut t = twin(system(COOL_CB), None);
        let mut port = ScriptedPort::new((1..=5).map(|i| sit(i, 50.0, 3)).collect());
        let summary = t.run(&mut port, &RunOptions { cycles: 5, ..Default::default() }, 0.0).unwrap();
        assert_eq!(summary.cycles, 5);
        assert_eq!(summary.episodes, 0);
        assert_eq!(summary.path_counts.no_trigger, 5);
        assert!(port.writes.is_empty());
    }

    #[test]
    fn applied_case_success_updates_stats_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = twin(system(COOL_CB), Some(dir.path().to_path_buf()));
        // cycle 1 triggers (temp 85 -> raw 0.05 < 0.2); cycle 2 shows success
        let mut port = ScriptedPort::new(vec![sit(1, 85.0, 3), sit(2, 70.0, 1), sit(3, 70.0, 1)]);
        let summary = t.run(&mut port, &RunOptions { cycles: 3, ..Default::default() }, 0.0).unwrap();
        assert_eq!(summary.episodes, 1);
        assert_eq!(summary.successes, 1);
        assert_eq!(summary.applications, 1);
        assert_eq!(summary.port_writes, 1);
        assert_eq!(port.writes[0][0].to_string(), "C.level = 1");
        let stats = t.system.casebase.case("Cool").unwrap().stats;
        assert_eq!((stats.applications, stats.successes), (1, 1));
        // exactly one explain record, outcome success, raw 0.05 adapted but
        // min distance 0.05 <= 0.3 -> nothing retained
        let records = read_explain_log(&dir.path().join("explain.jsonl")).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].outcome, EpisodeOutcome::Success);
        assert_eq!(records[0].learned_case, None);
        assert_eq!(summary.path_counts.case_applied, 1);
        assert_eq!(summary.path_counts.no_trigger, 2);
    }

    #[test]
    fn failure_steps_to_next_candidate_then_succeeds() {
        let cb = r#"casebase B { import M;
          case Aaa { when C.temp > 80.0; solution { C.level = 5; } yields C.temp <= 80.0; }
          case Bbb { when C.temp > 78.0; solution { C.level = 1; } yields C.temp <= 78.0; } }"#;
        let dir = tempfile::tempdir().unwrap();
        let mut t = twin(system(cb), Some(dir.path().to_path_buf()));
        // both cases pin temp close to 80/78; raw scores ~0.05 and ~0.07
        // cycle1: trigger, apply Aaa; cycle2: still hot -> Aaa failed, try Bbb;
        // cycle3: cooled -> Bbb succeeded
        let mut port = ScriptedPort::new(vec![
            sit(1, 85.0, 3),
            sit(2, 85.0, 5),
            sit(3, 60.0, 1),
            sit(4, 60.0, 1),
        ]);
        let summary = t.run(&mut port, &RunOptions { cycles: 4, ..Default::default() }, 0.0).unwrap();
        assert_eq!(summary.episodes, 1);
        assert_eq!(summary.applications, 2);
        assert_eq!(summary.successes, 1);
        let a = t.system.casebase.case("Aaa").unwrap().stats;
        let b = t.system.casebase.case("Bbb").unwrap().stats;
        assert_eq!((a.applications, a.successes), (1, 0));
        assert_eq!((b.applications, b.successes), (1, 1));
        let records = read_explain_log(&dir.path().join("explain.jsonl")).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].attempts.len(), 2);
        assert_eq!(records[0].attempts[0].success, Some(false));
        assert_eq!(records[0].attempts[1].success, Some(true));
    }

    #[test]
    fn exhausted_candidates_fall_back_to_notify() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = twin(system(COOL_CB), Some(dir.path().to_path_buf()));
        // the solution never works; no second candidate, no declared
        // fallback -> default notification
        let mut port = ScriptedPort::new(vec![sit(1, 85.0, 3), sit(2, 85.0, 1), sit(3, 85.0, 1)]);
        let summary = t.run(&mut port, &RunOptions { cycles: 3, ..Default::default() }, 0.0).unwrap();
        // cycle 3 starts a new episode for the still-holding condition
        assert_eq!(summary.notifications, 1);
        let records = read_explain_log(&dir.path().join("explain.jsonl")).unwrap();
        assert_eq!(records[0].outcome, EpisodeOutcome::Notified);
        assert!(records[0].notes.iter().any(|n| n.contains("operator attention")));
        assert_eq!(summary.path_counts.notify, 1);
    }

    #[test]
    fn recommendation_mode_never_writes() {
        let mut t = Twin::new(
            system(COOL_CB),
            EngineConfig::default(),
            SearchLimits::default(),
            false, // write disabled
            None,
            None,
            PluginRegistry::new(),
            SolutionHandlers::new(),
        )
        .unwrap();
        let mut port = ScriptedPort::new((1..=6).map(|i| sit(i, 85.0, 3)).collect());
        let summary = t.run(&mut port, &RunOptions { cycles: 6, ..Default::default() }, 0.0).unwrap();
        assert_eq!(summary.port_writes, 0);
        assert!(port.writes.is_empty());
        assert_eq!(summary.recommendations, summary.episodes);
        assert!(summary.recommendations >= 1);
        // stats untouched in recommendation mode
        let stats = t.system.casebase.case("Cool").unwrap().stats;
        assert_eq!((stats.applications, stats.successes), (0, 0));
    }

    #[test]
    fn pddl_fallback_plans_writes_and_retains() {
        let pddl = r#"(define (domain ops)
          (:requirements :strips :typing)
          (:types machine plevel)
          (:predicates (level ?m - machine ?l - plevel) (next ?a - plevel ?b - plevel) (eased ?m - machine))
          (:action ease :parameters (?m - machine ?from - plevel ?to - plevel)
            :precondition (and (level ?m ?from) (next ?to ?from))
            :effect (and (level ?m ?to) (not (level ?m ?from)) (eased ?m))))"#;
        let map_toml = r#"
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
path = "C.temp"
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
        let cb = r#"casebase B { import M;
          case Hot { when C.temp > 80.0; fallback pddl goal (eased m) domain ops; } }"#;
        let mut sys = system(cb);
        let domain = parse_pddl_domain(pddl).unwrap();
        let mapping = MachineMapping::parse(map_toml).unwrap();
        sys.kbs.insert("ops".into(), (domain, mapping));
        sys.cross_validate().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut t = twin(sys, Some(dir.path().to_path_buf()));
        // cycle1 triggers the unknown case; plan moves temp level hi -> lo,
        // write C.temp = 25; cycle2 cooled -> fallback success -> retained
        let mut port = ScriptedPort::new(vec![sit(1, 85.0, 3), sit(2, 25.0, 3), sit(3, 25.0, 3)]);
        let summary = t.run(&mut port, &RunOptions { cycles: 3, ..Default::default() }, 0.0).unwrap();
        assert_eq!(summary.path_counts.fallback, 1);
        assert_eq!(summary.successes, 1);
        assert_eq!(port.writes.len(), 1);
        assert_eq!(port.writes[0][0].to_string(), "C.temp = 25.0");
        assert_eq!(summary.learned_cases.len(), 1);
        let records = read_explain_log(&dir.path().join("explain.jsonl")).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].outcome, EpisodeOutcome::Success);
        assert!(records[0].learned_case.is_some());
        // the learned case matches a recurrence of the same situation
        let learned = t.system.casebase.case(summary.learned_cases[0].as_str()).unwrap();
        assert!(eval_condition(&learned.condition, &sit(9, 85.0, 3)).unwrap());
    }

    #[test]
    fn hot_reload_keeps_old_casebase_on_bad_file() {
        let dir = tempfile::tempdir().unwrap();
        let cb_path = dir.path().join("b.cb");
        std::fs::write(&cb_path, COOL_CB).unwrap();
        let mut t = Twin::new(
            system(COOL_CB),
            EngineConfig::default(),
            SearchLimits::default(),
            true,
            Some(cb_path.clone()),
            None,
            PluginRegistry::new(),
            SolutionHandlers::new(),
        )
        .unwrap();
        std::fs::write(&cb_path, "casebase Broken {").unwrap();
        let reload = Arc::new(AtomicBool::new(true));
        let mut port = ScriptedPort::new(vec![sit(1, 50.0, 3)]);
        let summary = t
            .run(
                &mut port,
                &RunOptions {
                    cycles: 1,
                    reload: Some(reload),
                    ..Default::default()
                },
                0.0,
            )
            .unwrap();
        assert!(summary.warnings.iter().any(|w| w.contains("hot-reload rejected")));
        assert_eq!(t.system.casebase.cases.len(), 1);
    }

    #[test]
    fn run_ends_cleanly_on_end_of_data() {
        let mut t = twin(system(COOL_CB), None);
        let mut port = ScriptedPort::new(vec![sit(1, 50.0, 3), sit(2, 50.0, 3)]);
        let summary = t.run(&mut port, &RunOptions::default(), 0.0).unwrap();
        assert_eq!(summary.cycles, 2);
        assert!(summary.aborted.is_none());
    }

    #[test]
    fn open_episode_at_run_end_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = twin(system(COOL_CB), Some(dir.path().to_path_buf()));
        // budget ends right after the application, before the check cycle
        let mut port = ScriptedPort::new(vec![sit(1, 85.0, 3)]);
        let summary = t.run(&mut port, &RunOptions { cycles: 1, ..Default::default() }, 0.0).unwrap();
        assert_eq!(summary.episodes, 1);
        let records = read_explain_log(&dir.path().join("explain.jsonl")).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].outcome, EpisodeOutcome::Error);
        assert!(records[0].notes.iter().any(|n| n.contains("run ended")));
    }

    #[test]
    fn timing_table_classification() {
        let trace = |index: u64, detected: bool, total: f64| CycleTrace {
            cycle: index + 1,
            index,
            path: CyclePath::NoTrigger,
            case_detected: detected,
            evaluate_ms: 0.0,
            retrieve_ms: 0.0,
            reuse_ms: 0.0,
            execute_ms: 0.0,
            revise_ms: 0.0,
            retain_ms: 0.0,
            total_ms: total,
        };
        let table = report_timings(&[
            trace(0, false, 40.0),
            trace(1, false, 10.0),
            trace(2, true, 20.0),
            trace(3, false, 14.0),
        ]);
        assert_eq!(table.first_cycle.unwrap().count, 1);
        assert_eq!(table.first_cycle.unwrap().avg_ms, 40.0);
        assert_eq!(table.no_case.unwrap().count, 2);
        assert_eq!(table.no_case.unwrap().avg_ms, 12.0);
        assert_eq!(table.case_detected.unwrap().count, 1);

        // single-cycle run: only the first row is present
        let table = report_timings(&[trace(0, false, 40.0)]);
        assert!(table.first_cycle.is_some());
        assert!(table.no_case.is_none());
        assert!(table.case_detected.is_none());
        let rendered = table.to_string();
        assert!(rendered.contains("First Cycle"));
        assert!(rendered.contains("No Case"));
    }
}
