//! The case base language (`.cb` files).
//!
//! A case base reifies operator expertise as cases: a boolean condition
//! describing an undesired situation, optionally a solution (ordered
//! assignments and handler calls) with a `yields` postcondition, and an
//! optional fallback directive for when no solution applies. A case with a
//! solution is *known*; one without is *unknown* and relies on its fallback
//! (or the runtime default of notifying the operator).
//!
//! Keywords: `casebase`, `import`, `case`, `when`, `solution`, `yields`,
//! `fallback`, `notify`, `pddl goal`, `call`. Application statistics are
//! persisted inline per case as `@stats applications=N successes=M`, so the
//! file stays the single source of truth across restarts.

use std::fmt::Write as _;

use crate::diag::ParseError;
use crate::domain::{parse_path, peek_path, AttributePath, ModelSet};
use crate::expr::{
    parse_bool_expr, parse_literal, parse_num_expr, BoolExpr, ImportedVocab, NumExpr, Vocab,
};
use crate::lex::{Cursor, Tok};
use crate::value::Value;

pub use crate::expr::eval_condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Known,
    Unknown,
}

/// Success statistics of one case, updated by the revise phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CaseStats {
    pub applications: u64,
    pub successes: u64,
}

impl CaseStats {
    /// Laplace-smoothed success rate in (0, 1): a fresh case starts at 0.5
    /// instead of an undefined 0/0.
    pub fn smoothed_success_rate(&self) -> f64 {
        (self.successes as f64 + 1.0) / (self.applications as f64 + 2.0)
    }
}

/// One step of a solution.
#[derive(Debug, Clone, PartialEq)]
pub enum SolutionPart {
    Assign {
        target: AttributePath,
        value: NumExpr,
    },
    /// Dispatch to a handler registered with the runtime by name.
    Call {
        handler: String,
        args: Vec<CallArg>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CallArg {
    Lit(Value),
    Path(AttributePath),
}

/// A known case's solution: ordered parts plus the postcondition expected to
/// hold after applying them.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub parts: Vec<SolutionPart>,
    pub yields: BoolExpr,
}

/// What to do when a case has no applicable solution.
#[derive(Debug, Clone, PartialEq)]
pub enum FallbackDirective {
    Notify { message: String },
    PddlGoal { goal: Vec<GroundLiteral>, domain_ref: String },
}

/// A ground literal in a `pddl goal` directive.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroundLiteral {
    pub negated: bool,
    pub predicate: String,
    pub args: Vec<String>,
}

impl std::fmt::Display for GroundLiteral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.negated {
            write!(f, "(not ({}", self.predicate)?;
            for a in &self.args {
                write!(f, " {a}")?;
            }
            f.write_str("))")
        } else {
            write!(f, "({}", self.predicate)?;
            for a in &self.args {
                write!(f, " {a}")?;
            }
            f.write_str(")")
        }
    }
}

/// One case: head (name), body (condition, optional solution), optional
/// fallback, and its statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub condition: BoolExpr,
    pub solution: Option<Solution>,
    pub fallback: Option<FallbackDirective>,
    pub stats: CaseStats,
}

impl Case {
    /// Known iff a solution is present.
    pub fn kind(&self) -> CaseKind {
        if self.solution.is_some() {
            CaseKind::Known
        } else {
            CaseKind::Unknown
        }
    }
}

/// A parsed, type-checked case base.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseBase {
    pub name: String,
    pub imports: Vec<String>,
    pub cases: Vec<Case>,
}

impl CaseBase {
    pub fn case(&self, name: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.name == name)
    }

    pub fn case_mut(&mut self, name: &str) -> Option<&mut Case> {
        self.cases.iter_mut().find(|c| c.name == name)
    }

    /// Appends a case, rejecting duplicate names and re-checking that every
    /// path resolves (used by the retain phase for learned cases).
    pub fn add_case(&mut self, case: Case, models: &ModelSet) -> Result<(), String> {
        if self.case(&case.name).is_some() {
            return Err(format!("duplicate case name `{}`", case.name));
        }
        let vocab = ImportedVocab {
            set: models,
            imports: &self.imports,
        };
        case.condition.validate(&vocab)?;
        if let Some(sol) = &case.solution {
            sol.yields.validate(&vocab)?;
            for part in &sol.parts {
                if let SolutionPart::Assign { target, value } = part {
                    check_assignment(target, value, &vocab).map_err(|e| e.message)?;
                }
            }
        }
        self.cases.push(case);
        Ok(())
    }

    /// All `pddl goal` directives, for cross-validation against a knowledge
    /// base: (case name, goal literals, referenced planning domain).
    pub fn pddl_goals(&self) -> impl Iterator<Item = (&str, &[GroundLiteral], &str)> {
        self.cases.iter().filter_map(|c| match &c.fallback {
            Some(FallbackDirective::PddlGoal { goal, domain_ref }) => {
                Some((c.name.as_str(), goal.as_slice(), domain_ref.as_str()))
            }
            _ => None,
        })
    }

    /// Renders the case base back to `.cb` source, stats included. The
    /// output re-parses to a structurally identical case base.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "casebase {} {{", self.name);
        for import in &self.imports {
            let _ = writeln!(out, "  import {import};");
        }
        for case in &self.cases {
            out.push('\n');
            let _ = writeln!(out, "  case {} {{", case.name);
            let _ = writeln!(out, "    when {};", case.condition);
            if let Some(sol) = &case.solution {
                out.push_str("    solution {\n");
                for part in &sol.parts {
                    match part {
                        SolutionPart::Assign { target, value } => {
                            let _ = writeln!(out, "      {target} = {value};");
                        }
                        SolutionPart::Call { handler, args } => {
                            let rendered: Vec<String> = args
                                .iter()
                                .map(|a| match a {
                                    CallArg::Lit(v) => v.to_string(),
                                    CallArg::Path(p) => p.to_string(),
                                })
                                .collect();
                            let _ = writeln!(out, "      call {handler}({});", rendered.join(", "));
                        }
                    }
                }
                let _ = writeln!(out, "    }} yields {};", sol.yields);
            }
            if let Some(fb) = &case.fallback {
                match fb {
                    FallbackDirective::Notify { message } => {
                        let _ = writeln!(out, "    fallback notify {};", Value::Str(message.clone()));
                    }
                    FallbackDirective::PddlGoal { goal, domain_ref } => {
                        let rendered: Vec<String> = goal.iter().map(|g| g.to_string()).collect();
                        let _ = writeln!(
                            out,
                            "    fallback pddl goal {} domain {domain_ref};",
                            rendered.join(" ")
                        );
                    }
                }
            }
            let _ = writeln!(
                out,
                "    @stats applications={} successes={}",
                case.stats.applications, case.stats.successes
            );
            out.push_str("  }\n");
        }
        out.push_str("}\n");
        out
    }
}

/// Parses `.cb` source against already-loaded domain models.
///
/// The result is fully resolved and type-checked: every path exists, every
/// comparison and assignment is type-correct, and a case base that loads
/// never raises a type mismatch at runtime on conforming situations.
pub fn parse_case_base(source: &str, models: &ModelSet) -> Result<CaseBase, ParseError> {
    let mut cur = Cursor::new(source)?;
    cur.expect_kw("casebase")
        .map_err(|_| cur.error("expected `casebase <name> { ... }`"))?;
    let (name, _) = cur.expect_ident("case base name")?;
    cur.expect_punct("{")?;

    let mut imports = Vec::new();
    while cur.peek_kw("import") {
        cur.next();
        let (import, pos) = cur.expect_ident("domain model name")?;
        if models.get(&import).is_none() {
            return Err(ParseError::new(
                pos,
                format!("import of unknown domain model `{import}`"),
            ));
        }
        cur.expect_punct(";")?;
        imports.push(import);
    }

    let vocab = ImportedVocab {
        set: models,
        imports: &imports,
    };

    let mut cases: Vec<Case> = Vec::new();
    while !cur.accept_punct("}") {
        if cur.at_end() {
            return Err(cur.expected("`case` or `}`"));
        }
        let case = parse_case(&mut cur, &vocab)?;
        if cases.iter().any(|c| c.name == case.name) {
            return Err(cur.error(format!("duplicate case name `{}`", case.name)));
        }
        cases.push(case);
    }
    if !cur.at_end() {
        return Err(cur.expected("end of file"));
    }
    Ok(CaseBase {
        name,
        imports,
        cases,
    })
}

fn parse_case(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<Case, ParseError> {
    cur.expect_kw("case")?;
    let (name, _) = cur.expect_ident("case name")?;
    cur.expect_punct("{")?;
    cur.expect_kw("when")?;
    let condition = parse_bool_expr(cur, vocab)?;
    cur.expect_punct(";")?;

    let mut solution = None;
    if cur.peek_kw("solution") {
        let sol_pos = cur.pos();
        cur.next();
        cur.expect_punct("{")?;
        let mut parts = Vec::new();
        while !cur.accept_punct("}") {
            if cur.at_end() {
                return Err(cur.expected("solution part or `}`"));
            }
            parts.push(parse_solution_part(cur, vocab)?);
        }
        if parts.is_empty() {
            return Err(ParseError::new(
                sol_pos,
                format!("case `{name}`: solution must contain at least one part"),
            ));
        }
        if !cur.peek_kw("yields") {
            return Err(ParseError::new(
                cur.pos(),
                format!("case `{name}`: known case requires a `yields` consequence after its solution"),
            ));
        }
        cur.next();
        let yields = parse_bool_expr(cur, vocab)?;
        cur.expect_punct(";")?;
        solution = Some(Solution { parts, yields });
    }

    let mut fallback = None;
    if cur.peek_kw("fallback") {
        cur.next();
        fallback = Some(parse_fallback(cur)?);
    }

    let mut stats = CaseStats::default();
    if cur.accept_punct("@") {
        let stats_pos = cur.pos();
        cur.expect_kw("stats")?;
        cur.expect_kw("applications")?;
        cur.expect_punct("=")?;
        let applications = expect_count(cur)?;
        cur.expect_kw("successes")?;
        cur.expect_punct("=")?;
        let successes = expect_count(cur)?;
        if successes > applications {
            return Err(ParseError::new(
                stats_pos,
                format!("case `{name}`: successes ({successes}) exceed applications ({applications})"),
            ));
        }
        stats = CaseStats {
            applications,
            successes,
        };
    }
    cur.expect_punct("}")?;
    Ok(Case {
        name,
        condition,
        solution,
        fallback,
        stats,
    })
}

fn expect_count(cur: &mut Cursor) -> Result<u64, ParseError> {
    match cur.peek().map(|t| t.tok.clone()) {
        Some(Tok::Int(n)) if n >= 0 => {
            cur.next();
            Ok(n as u64)
        }
        _ => Err(cur.expected("non-negative integer")),
    }
}

fn parse_solution_part(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<SolutionPart, ParseError> {
    if cur.peek_kw("call") {
        cur.next();
        let (handler, _) = cur.expect_ident("handler name")?;
        cur.expect_punct("(")?;
        let mut args = Vec::new();
        if !cur.accept_punct(")") {
            loop {
                if peek_path(cur) {
                    let pos = cur.pos();
                    let path = parse_path(cur)?;
                    vocab
                        .meta(&path)
                        .map_err(|e| ParseError::new(pos, e.to_string()))?;
                    args.push(CallArg::Path(path));
                } else {
                    args.push(CallArg::Lit(parse_literal(cur)?));
                }
                if cur.accept_punct(")") {
                    break;
                }
                cur.expect_punct(",")?;
            }
        }
        cur.expect_punct(";")?;
        return Ok(SolutionPart::Call { handler, args });
    }
    let target_pos = cur.pos();
    let target = parse_path(cur)?;
    cur.expect_punct("=")?;
    let value = parse_num_expr(cur, vocab)?;
    cur.expect_punct(";")?;
    check_assignment(&target, &value, vocab)
        .map_err(|e| ParseError::new(target_pos, e.message))?;
    Ok(SolutionPart::Assign { target, value })
}

fn check_assignment(
    target: &AttributePath,
    value: &NumExpr,
    vocab: &dyn Vocab,
) -> Result<(), ParseError> {
    use crate::diag::Pos;
    let err = |msg: String| ParseError::new(Pos::new(0, 0), msg);
    let meta = vocab.meta(target).map_err(|e| err(e.to_string()))?;
    let rhs_ty = value.infer_type(vocab).map_err(err)?;
    let assignable = rhs_ty == meta.ty
        || (rhs_ty == crate::value::PrimitiveType::Int && meta.ty == crate::value::PrimitiveType::Float);
    if !assignable {
        return Err(err(format!(
            "cannot assign a {rhs_ty} expression to {target} of type {}",
            meta.ty
        )));
    }
    Ok(())
}

fn parse_fallback(cur: &mut Cursor) -> Result<FallbackDirective, ParseError> {
    if cur.peek_kw("notify") {
        cur.next();
        let (message, _) = cur.expect_string("notification message")?;
        cur.expect_punct(";")?;
        return Ok(FallbackDirective::Notify { message });
    }
    if cur.peek_kw("pddl") {
        cur.next();
        cur.expect_kw("goal")?;
        let mut goal = Vec::new();
        while cur.accept_punct("(") {
            goal.push(parse_goal_literal(cur)?);
        }
        if goal.is_empty() {
            return Err(cur.expected("goal literal `(predicate args...)`"));
        }
        cur.expect_kw("domain")?;
        let domain_ref = parse_pddl_name(cur)?;
        cur.expect_punct(";")?;
        return Ok(FallbackDirective::PddlGoal { goal, domain_ref });
    }
    Err(cur.expected("`notify` or `pddl goal`"))
}

/// Parses the inside of one goal literal; the opening `(` is consumed.
/// Handles `(not (p a b))` and hyphenated PDDL names like `low-pressure`.
fn parse_goal_literal(cur: &mut Cursor) -> Result<GroundLiteral, ParseError> {
    if cur.peek_kw("not") {
        cur.next();
        cur.expect_punct("(")?;
        let mut lit = parse_goal_atom(cur)?;
        cur.expect_punct(")")?;
        lit.negated = true;
        return Ok(lit);
    }
    parse_goal_atom(cur)
}

fn parse_goal_atom(cur: &mut Cursor) -> Result<GroundLiteral, ParseError> {
    let predicate = parse_pddl_name(cur)?;
    let mut args = Vec::new();
    while !cur.accept_punct(")") {
        if cur.at_end() {
            return Err(cur.expected("`)`"));
        }
        args.push(parse_pddl_name(cur)?);
    }
    Ok(GroundLiteral {
        negated: false,
        predicate,
        args,
    })
}

/// A PDDL name: an identifier optionally continued by `-ident` or `-digits`
/// segments with no intervening whitespace (checked via byte adjacency).
fn parse_pddl_name(cur: &mut Cursor) -> Result<String, ParseError> {
    let (mut name, mut last_end) = match cur.peek() {
        Some(t) => match &t.tok {
            Tok::Ident(s) => (s.clone(), t.end),
            _ => return Err(cur.expected("PDDL name")),
        },
        None => return Err(cur.expected("PDDL name")),
    };
    cur.next();
    loop {
        let Some(minus) = cur.peek() else { break };
        if minus.tok != Tok::Punct("-") || minus.start != last_end {
            break;
        }
        let minus_end = minus.end;
        let Some(seg) = cur.peek2() else { break };
        if seg.start != minus_end {
            break;
        }
        let (seg_text, seg_end) = match &seg.tok {
            Tok::Ident(s) => (s.clone(), seg.end),
            Tok::Int(n) if *n >= 0 => (n.to_string(), seg.end),
            _ => break,
        };
        cur.next();
        cur.next();
        name.push('-');
        name.push_str(&seg_text);
        last_end = seg_end;
    }
    Ok(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_domain_model;
    use crate::expr::CmpOp;
    use crate::situation::Situation;

    fn models() -> ModelSet {
        let mut set = ModelSet::new();
        set.insert(
            parse_domain_model(
                "model InjectionMolding {
                   class ProcessData {
                     nozzleTemperature: float range [0.0, 600.0];
                     pressure: float range [0.0, 2500.0];
                     heating: int range [1.0, 5.0];
                   }
                 }",
            )
            .unwrap(),
        );
        set
    }

    const EXAMPLE: &str = r#"
casebase Molding {
  import InjectionMolding;

  case HighNozzleTemperature {
    when ProcessData.nozzleTemperature > 500.0;
    solution {
      ProcessData.heating = 1;
    } yields ProcessData.nozzleTemperature <= 500.0;
  }

  case DangerousPressure {
    when ProcessData.pressure > 2000.0;
    fallback pddl goal (low-pressure machine) domain pressure_ops;
  }
}
"#;

    #[test]
    fn parses_known_and_unknown_cases() {
        let cb = parse_case_base(EXAMPLE, &models()).unwrap();
        assert_eq!(cb.cases.len(), 2);
        let known = cb.case("HighNozzleTemperature").unwrap();
        assert_eq!(known.kind(), CaseKind::Known);
        assert_eq!(known.stats, CaseStats::default());
        let unknown = cb.case("DangerousPressure").unwrap();
        assert_eq!(unknown.kind(), CaseKind::Unknown);
        match unknown.fallback.as_ref().unwrap() {
            FallbackDirective::PddlGoal { goal, domain_ref } => {
                assert_eq!(domain_ref, "pressure_ops");
                assert_eq!(goal[0].predicate, "low-pressure");
                assert_eq!(goal[0].args, vec!["machine".to_string()]);
            }
            _ => panic!("expected pddl goal"),
        }
    }

    #[test]
    fn solution_without_yields_is_rejected() {
        let src = r#"casebase B { import InjectionMolding;
          case X { when ProcessData.pressure > 1.0;
            solution { ProcessData.heating = 1; }
          } }"#;
        let err = parse_case_base(src, &models()).unwrap_err();
        assert!(err.message.contains("yields"), "{}", err.message);
    }

    #[test]
    fn unresolved_path_is_rejected() {
        let src = r#"casebase B { import InjectionMolding;
          case X { when ProcessData.noSuch > 1.0; } }"#;
        let err = parse_case_base(src, &models()).unwrap_err();
        assert!(err.message.contains("noSuch"), "{}", err.message);
    }

    #[test]
    fn assignment_type_mismatch_is_rejected() {
        let src = r#"casebase B { import InjectionMolding;
          case X { when ProcessData.pressure > 1.0;
            solution { ProcessData.heating = 1.5; } yields ProcessData.pressure <= 1.0;
          } }"#;
        let err = parse_case_base(src, &models()).unwrap_err();
        assert!(err.message.contains("cannot assign"), "{}", err.message);
    }

    #[test]
    fn duplicate_case_name_is_rejected() {
        let src = r#"casebase B { import InjectionMolding;
          case X { when ProcessData.pressure > 1.0; }
          case X { when ProcessData.pressure > 2.0; } }"#;
        let err = parse_case_base(src, &models()).unwrap_err();
        assert!(err.message.contains("duplicate case name `X`"));
    }

    #[test]
    fn stats_annotation_roundtrip() {
        let src = r#"casebase B { import InjectionMolding;
          case X { when ProcessData.pressure > 1.0;
            @stats applications=5 successes=3
          } }"#;
        let cb = parse_case_base(src, &models()).unwrap();
        assert_eq!(
            cb.case("X").unwrap().stats,
            CaseStats { applications: 5, successes: 3 }
        );
        let printed = cb.to_source();
        let reparsed = parse_case_base(&printed, &models()).unwrap();
        assert_eq!(cb, reparsed);
    }

    #[test]
    fn invalid_stats_rejected() {
        let src = r#"casebase B { import InjectionMolding;
          case X { when ProcessData.pressure > 1.0;
            @stats applications=2 successes=3
          } }"#;
        let err = parse_case_base(src, &models()).unwrap_err();
        assert!(err.message.contains("exceed"));
    }

    #[test]
    fn print_parse_identity_on_example() {
        let cb = parse_case_base(EXAMPLE, &models()).unwrap();
        let printed = cb.to_source();
        let reparsed = parse_case_base(&printed, &models()).unwrap();
        assert_eq!(cb, reparsed);
        assert_eq!(printed, reparsed.to_source());
    }

    #[test]
    fn empty_case_base_prints_and_reparses() {
        let cb = parse_case_base("casebase Empty { import InjectionMolding; }", &models()).unwrap();
        assert!(cb.cases.is_empty());
        let printed = cb.to_source();
        let reparsed = parse_case_base(&printed, &models()).unwrap();
        assert_eq!(cb, reparsed);
    }

    #[test]
    fn learned_equality_case_roundtrip() {
        let mut cb = parse_case_base("casebase B { import InjectionMolding; }", &models()).unwrap();
        let cond = BoolExpr::cmp(
            AttributePath::new("ProcessData", "pressure"),
            CmpOp::Eq,
            Value::Float(2100.0),
        )
        .and(BoolExpr::cmp(
            AttributePath::new("ProcessData", "heating"),
            CmpOp::Eq,
            Value::Int(5),
        ));
        let case = Case {
            name: "learned_c7".into(),
            condition: cond.clone(),
            solution: Some(Solution {
                parts: vec![SolutionPart::Assign {
                    target: AttributePath::new("ProcessData", "heating"),
                    value: NumExpr::Lit(Value::Int(1)),
                }],
                yields: cond.negate(),
            }),
            fallback: None,
            stats: CaseStats::default(),
        };
        cb.add_case(case, &models()).unwrap();
        let printed = cb.to_source();
        assert!(printed.contains("== 2100.0"));
        assert!(printed.contains("== 5"));
        let reparsed = parse_case_base(&printed, &models()).unwrap();
        assert_eq!(cb, reparsed);
    }

    #[test]
    fn eval_example_condition() {
        let cb = parse_case_base(EXAMPLE, &models()).unwrap();
        let case = cb.case("HighNozzleTemperature").unwrap();
        let hot = Situation::new(1).with(
            AttributePath::new("ProcessData", "nozzleTemperature"),
            Value::Float(510.0),
        );
        let at_limit = Situation::new(2).with(
            AttributePath::new("ProcessData", "nozzleTemperature"),
            Value::Float(500.0),
        );
        assert_eq!(eval_condition(&case.condition, &hot), Ok(true));
        assert_eq!(eval_condition(&case.condition, &at_limit), Ok(false));
    }

    #[test]
    fn call_parts_parse_and_print() {
        let src = r#"casebase B { import InjectionMolding;
          case X { when ProcessData.pressure > 1.0;
            solution {
              call easeOff(ProcessData.pressure, 0.5, "slow");
            } yields ProcessData.pressure <= 1.0;
          } }"#;
        let cb = parse_case_base(src, &models()).unwrap();
        let printed = cb.to_source();
        assert!(printed.contains("call easeOff(ProcessData.pressure, 0.5, \"slow\");"));
        assert_eq!(parse_case_base(&printed, &models()).unwrap(), cb);
    }

    #[test]
    fn negated_goal_literals() {
        let src = r#"casebase B { import InjectionMolding;
          case X { when ProcessData.pressure > 1.0;
            fallback pddl goal (not (high-pressure machine)) (stable machine) domain ops;
          } }"#;
        let cb = parse_case_base(src, &models()).unwrap();
        match cb.cases[0].fallback.as_ref().unwrap() {
            FallbackDirective::PddlGoal { goal, .. } => {
                assert!(goal[0].negated);
                assert_eq!(goal[0].predicate, "high-pressure");
                assert!(!goal[1].negated);
            }
            _ => panic!(),
        }
        let reparsed = parse_case_base(&cb.to_source(), &models()).unwrap();
        assert_eq!(cb, reparsed);
    }
}
