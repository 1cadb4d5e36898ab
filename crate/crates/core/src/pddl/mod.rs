//! STRIPS planning: the fallback used when case-based reasoning yields no
//! candidate.
//!
//! The subset covers typed objects, constants, predicates, and actions with
//! literal-conjunction preconditions and add/delete effects. Numeric
//! fluents, durative actions, quantifiers, and conditional effects are
//! rejected with an error naming the construct.
//!
//! [`plan`] runs greedy best-first search with the goal-count heuristic
//! (number of unsatisfied goal literals), FIFO tie-breaking, and duplicate
//! state elimination on the full propositional state. Returned plans always
//! pass [`validate_plan`], which simulates the plan with its own
//! straightforward interpretation of the schemas, independent of the search
//! machinery.

mod mapping;
mod parser;

pub use mapping::{plan_to_assignments, situation_to_problem, AttributeBin, AttributeMapping, MachineMapping};
pub use parser::{parse_pddl_domain, parse_pddl_problem};

use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use thiserror::Error;

use crate::diag::{ParseError, Pos};

#[derive(Debug, Clone, Error)]
pub enum PddlError {
    #[error("{0}")]
    Syntax(ParseError),
    #[error("unsupported feature: {feature} (`{construct}` at {pos})")]
    Unsupported {
        feature: String,
        construct: String,
        pos: Pos,
    },
    #[error("{0}")]
    Unresolved(String),
    #[error("{0}")]
    TypeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDef {
    pub name: String,
    /// `None` means the implicit root type `object`.
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedName {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDef {
    pub name: String,
    pub params: Vec<TypedName>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Var(String),
    Const(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

/// An action schema: typed parameters, a literal-conjunction precondition,
/// and add/delete effect lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<TypedName>,
    pub pre_pos: Vec<Atom>,
    pub pre_neg: Vec<Atom>,
    pub add: Vec<Atom>,
    pub del: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PddlDomain {
    pub name: String,
    pub types: Vec<TypeDef>,
    pub constants: Vec<TypedName>,
    pub predicates: Vec<PredicateDef>,
    pub actions: Vec<ActionSchema>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl std::fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundGoalLiteral {
    pub negated: bool,
    pub atom: GroundAtom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PddlProblem {
    pub name: String,
    pub domain_ref: String,
    pub objects: Vec<TypedName>,
    pub init: Vec<GroundAtom>,
    pub goal: Vec<GroundGoalLiteral>,
}

/// One step of a plan, printable as `(name arg1 arg2)`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GroundStep {
    pub action: String,
    pub args: Vec<String>,
}

impl std::fmt::Display for GroundStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}", self.action)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

/// An ordered sequence of ground actions from init to goal.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Plan {
    pub steps: Vec<GroundStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchLimits {
    pub max_expansions: usize,
    pub max_plan_length: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        Self {
            max_expansions: 100_000,
            max_plan_length: 1_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchStats {
    pub expansions: usize,
    pub generated: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanOutcome {
    Solved(Plan, SearchStats),
    Unsolvable(SearchStats),
    LimitExceeded(SearchStats),
}

impl PlanOutcome {
    pub fn plan(&self) -> Option<&Plan> {
        match self {
            PlanOutcome::Solved(p, _) => Some(p),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Domain/problem semantic validation
// ---------------------------------------------------------------------------

impl PddlDomain {
    pub fn type_declared(&self, name: &str) -> bool {
        name == "object" || self.types.iter().any(|t| t.name == name)
    }

    /// True when an object of type `ty` fits a parameter of type `param_ty`.
    pub fn is_subtype(&self, ty: &str, param_ty: &str) -> bool {
        if param_ty == "object" || ty == param_ty {
            return true;
        }
        let mut current = ty.to_string();
        // hierarchy is shallow; guard against accidental cycles anyway
        for _ in 0..self.types.len() + 1 {
            let Some(def) = self.types.iter().find(|t| t.name == current) else {
                return false;
            };
            match &def.parent {
                Some(p) if p == param_ty => return true,
                Some(p) => current = p.clone(),
                None => return false,
            }
        }
        false
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateDef> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }
}

pub(crate) fn validate_domain(domain: &PddlDomain) -> Result<(), PddlError> {
    for t in &domain.types {
        if let Some(p) = &t.parent {
            if !domain.type_declared(p) {
                return Err(PddlError::Unresolved(format!(
                    "type `{}` extends undeclared type `{p}`",
                    t.name
                )));
            }
        }
    }
    for c in &domain.constants {
        if !domain.type_declared(&c.ty) {
            return Err(PddlError::Unresolved(format!(
                "constant `{}` has undeclared type `{}`",
                c.name, c.ty
            )));
        }
    }
    for p in &domain.predicates {
        for param in &p.params {
            if !domain.type_declared(&param.ty) {
                return Err(PddlError::Unresolved(format!(
                    "predicate `{}` parameter `{}` has undeclared type `{}`",
                    p.name, param.name, param.ty
                )));
            }
        }
    }
    for action in &domain.actions {
        for param in &action.params {
            if !domain.type_declared(&param.ty) {
                return Err(PddlError::Unresolved(format!(
                    "action `{}` parameter `?{}` has undeclared type `{}`",
                    action.name, param.name, param.ty
                )));
            }
        }
        let atom_sets = [
            (&action.pre_pos, "precondition"),
            (&action.pre_neg, "precondition"),
            (&action.add, "effect"),
            (&action.del, "effect"),
        ];
        for (atoms, where_) in atom_sets {
            for atom in atoms.iter() {
                let pred = domain.predicate(&atom.predicate).ok_or_else(|| {
                    PddlError::Unresolved(format!(
                        "action `{}` {where_} uses undeclared predicate `{}`",
                        action.name, atom.predicate
                    ))
                })?;
                if pred.params.len() != atom.args.len() {
                    return Err(PddlError::TypeMismatch(format!(
                        "action `{}`: predicate `{}` takes {} arguments, got {}",
                        action.name,
                        atom.predicate,
                        pred.params.len(),
                        atom.args.len()
                    )));
                }
                for (term, pparam) in atom.args.iter().zip(&pred.params) {
                    let term_ty = match term {
                        Term::Var(v) => action
                            .params
                            .iter()
                            .find(|p| &p.name == v)
                            .map(|p| p.ty.clone())
                            .ok_or_else(|| {
                                PddlError::Unresolved(format!(
                                    "action `{}` uses unbound variable `?{v}`",
                                    action.name
                                ))
                            })?,
                        Term::Const(c) => domain
                            .constants
                            .iter()
                            .find(|k| &k.name == c)
                            .map(|k| k.ty.clone())
                            .ok_or_else(|| {
                                PddlError::Unresolved(format!(
                                    "action `{}` uses undeclared constant `{c}`",
                                    action.name
                                ))
                            })?,
                    };
                    if !domain.is_subtype(&term_ty, &pparam.ty) {
                        return Err(PddlError::TypeMismatch(format!(
                            "action `{}`: argument of `{}` has type `{term_ty}`, expected `{}`",
                            action.name, atom.predicate, pparam.ty
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Validates a problem against its domain: object types declared, init and
/// goal atoms well-typed.
pub fn validate_problem(domain: &PddlDomain, problem: &PddlProblem) -> Result<(), PddlError> {
    if problem.domain_ref != domain.name {
        return Err(PddlError::Unresolved(format!(
            "problem `{}` references domain `{}`, loaded domain is `{}`",
            problem.name, problem.domain_ref, domain.name
        )));
    }
    for obj in &problem.objects {
        if !domain.type_declared(&obj.ty) {
            return Err(PddlError::Unresolved(format!(
                "object `{}` has undeclared type `{}`",
                obj.name, obj.ty
            )));
        }
    }
    let object_type = |name: &str| -> Option<String> {
        problem
            .objects
            .iter()
            .chain(domain.constants.iter())
            .find(|o| o.name == name)
            .map(|o| o.ty.clone())
    };
    let check_ground = |atom: &GroundAtom, where_: &str| -> Result<(), PddlError> {
        let pred = domain.predicate(&atom.predicate).ok_or_else(|| {
            PddlError::Unresolved(format!(
                "{where_} uses undeclared predicate `{}`",
                atom.predicate
            ))
        })?;
        if pred.params.len() != atom.args.len() {
            return Err(PddlError::TypeMismatch(format!(
                "{where_}: predicate `{}` takes {} arguments, got {}",
                atom.predicate,
                pred.params.len(),
                atom.args.len()
            )));
        }
        for (arg, pparam) in atom.args.iter().zip(&pred.params) {
            let ty = object_type(arg).ok_or_else(|| {
                PddlError::Unresolved(format!("{where_} uses undeclared object `{arg}`"))
            })?;
            if !domain.is_subtype(&ty, &pparam.ty) {
                return Err(PddlError::TypeMismatch(format!(
                    "{where_}: object `{arg}` has type `{ty}`, predicate `{}` expects `{}`",
                    atom.predicate, pparam.ty
                )));
            }
        }
        Ok(())
    };
    for atom in &problem.init {
        check_ground(atom, "init")?;
    }
    for lit in &problem.goal {
        check_ground(&lit.atom, "goal")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Grounding
// ---------------------------------------------------------------------------

/// A fully instantiated action over interned atom ids.
#[derive(Debug, Clone)]
pub struct GroundAction {
    pub step: GroundStep,
    pub pre_pos: Vec<u32>,
    pub pre_neg: Vec<u32>,
    pub add: Vec<u32>,
    pub del: Vec<u32>,
}

/// Interning table from ground atoms to dense ids, shared by grounding and
/// search.
#[derive(Debug, Default)]
pub struct AtomTable {
    ids: HashMap<GroundAtom, u32>,
    atoms: Vec<GroundAtom>,
}

impl AtomTable {
    pub fn intern(&mut self, atom: GroundAtom) -> u32 {
        if let Some(id) = self.ids.get(&atom) {
            return *id;
        }
        let id = self.atoms.len() as u32;
        self.atoms.push(atom.clone());
        self.ids.insert(atom, id);
        id
    }

    pub fn resolve(&self, id: u32) -> &GroundAtom {
        &self.atoms[id as usize]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Instantiates every action schema with all type-compatible object tuples.
///
/// Objects are the problem's objects plus the domain's constants; the
/// enumeration order is deterministic (schemas in declaration order, object
/// tuples in declaration-order lexicographic product).
pub fn ground(
    domain: &PddlDomain,
    problem: &PddlProblem,
) -> Result<(Vec<GroundAction>, AtomTable), PddlError> {
    validate_problem(domain, problem)?;
    let mut table = AtomTable::default();
    let universe: Vec<&TypedName> = problem
        .objects
        .iter()
        .chain(domain.constants.iter())
        .collect();

    let mut actions = Vec::new();
    for schema in &domain.actions {
        let candidates: Vec<Vec<&TypedName>> = schema
            .params
            .iter()
            .map(|p| {
                universe
                    .iter()
                    .copied()
                    .filter(|o| domain.is_subtype(&o.ty, &p.ty))
                    .collect()
            })
            .collect();
        let mut binding: Vec<usize> = vec![0; schema.params.len()];
        if candidates.iter().any(|c| c.is_empty()) && !schema.params.is_empty() {
            continue; // a parameter type with no objects grounds to nothing
        }
        loop {
            let args: Vec<String> = binding
                .iter()
                .zip(&candidates)
                .map(|(i, c)| c[*i].name.clone())
                .collect();
            actions.push(instantiate(schema, &args, &mut table)?);
            // advance the mixed-radix counter
            let mut k = binding.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                binding[k] += 1;
                if binding[k] < candidates[k].len() {
                    break;
                }
                binding[k] = 0;
                if k == 0 {
                    break;
                }
            }
            if binding.iter().all(|b| *b == 0) {
                break;
            }
        }
    }
    // intern init and goal so the table covers everything reachable by name
    for atom in &problem.init {
        table.intern(atom.clone());
    }
    for lit in &problem.goal {
        table.intern(lit.atom.clone());
    }
    Ok((actions, table))
}

fn instantiate(
    schema: &ActionSchema,
    args: &[String],
    table: &mut AtomTable,
) -> Result<GroundAction, PddlError> {
    let subst = |atom: &Atom| -> Result<GroundAtom, PddlError> {
        let mut out = Vec::with_capacity(atom.args.len());
        for term in &atom.args {
            match term {
                Term::Const(c) => out.push(c.clone()),
                Term::Var(v) => {
                    let idx = schema
                        .params
                        .iter()
                        .position(|p| &p.name == v)
                        .ok_or_else(|| {
                            PddlError::Unresolved(format!(
                                "action `{}` uses unbound variable `?{v}`",
                                schema.name
                            ))
                        })?;
                    out.push(args[idx].clone());
                }
            }
        }
        Ok(GroundAtom {
            predicate: atom.predicate.clone(),
            args: out,
        })
    };
    let mut intern_all = |atoms: &[Atom]| -> Result<Vec<u32>, PddlError> {
        atoms
            .iter()
            .map(|a| subst(a).map(|g| table.intern(g)))
            .collect()
    };
    Ok(GroundAction {
        step: GroundStep {
            action: schema.name.clone(),
            args: args.to_vec(),
        },
        pre_pos: intern_all(&schema.pre_pos)?,
        pre_neg: intern_all(&schema.pre_neg)?,
        add: intern_all(&schema.add)?,
        del: intern_all(&schema.del)?,
    })
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

type State = Box<[u32]>;

fn goal_ids(problem: &PddlProblem, table: &mut AtomTable) -> (Vec<u32>, Vec<u32>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for lit in &problem.goal {
        let id = table.intern(lit.atom.clone());
        if lit.negated {
            neg.push(id);
        } else {
            pos.push(id);
        }
    }
    (pos, neg)
}

fn contains(state: &State, id: u32) -> bool {
    state.binary_search(&id).is_ok()
}

fn unsatisfied_goals(state: &State, goal_pos: &[u32], goal_neg: &[u32]) -> usize {
    goal_pos.iter().filter(|g| !contains(state, **g)).count()
        + goal_neg.iter().filter(|g| contains(state, **g)).count()
}

fn applicable(state: &State, action: &GroundAction) -> bool {
    action.pre_pos.iter().all(|p| contains(state, *p))
        && action.pre_neg.iter().all(|p| !contains(state, *p))
}

fn apply(state: &State, action: &GroundAction) -> State {
    let mut set: BTreeSet<u32> = state.iter().copied().collect();
    for d in &action.del {
        set.remove(d);
    }
    for a in &action.add {
        set.insert(*a);
    }
    set.into_iter().collect::<Vec<_>>().into_boxed_slice()
}

/// Greedy best-first search with the goal-count heuristic.
///
/// Deterministic for fixed inputs and limits: ties on the heuristic are
/// broken FIFO, and grounding order is deterministic. Exhausting the search
/// space without hitting a limit is a proof of unsolvability.
pub fn plan(domain: &PddlDomain, problem: &PddlProblem, limits: SearchLimits) -> Result<PlanOutcome, PddlError> {
    let (actions, mut table) = ground(domain, problem)?;
    let (goal_pos, goal_neg) = goal_ids(problem, &mut table);

    let init: State = {
        let mut ids: BTreeSet<u32> = BTreeSet::new();
        for atom in &problem.init {
            ids.insert(table.intern(atom.clone()));
        }
        ids.into_iter().collect::<Vec<_>>().into_boxed_slice()
    };

    let mut stats = SearchStats::default();
    if unsatisfied_goals(&init, &goal_pos, &goal_neg) == 0 {
        return Ok(PlanOutcome::Solved(Plan::default(), stats));
    }

    // node arena: (state, parent node, action index into `actions`, depth)
    let mut nodes: Vec<(State, usize, usize, usize)> = Vec::new();
    let mut closed: HashSet<State> = HashSet::new();
    // min-heap via Reverse ordering on (h, fifo sequence)
    let mut open: BinaryHeap<std::cmp::Reverse<(usize, u64, usize)>> = BinaryHeap::new();
    let mut seq: u64 = 0;

    closed.insert(init.clone());
    nodes.push((init, usize::MAX, usize::MAX, 0));
    open.push(std::cmp::Reverse((
        unsatisfied_goals(&nodes[0].0, &goal_pos, &goal_neg),
        seq,
        0,
    )));
    let mut truncated = false;

    while let Some(std::cmp::Reverse((_, _, node_idx))) = open.pop() {
        if stats.expansions >= limits.max_expansions {
            return Ok(PlanOutcome::LimitExceeded(stats));
        }
        stats.expansions += 1;
        let depth = nodes[node_idx].3;
        for (action_idx, action) in actions.iter().enumerate() {
            if !applicable(&nodes[node_idx].0, action) {
                continue;
            }
            let successor = apply(&nodes[node_idx].0, action);
            if closed.contains(&successor) {
                stats.duplicates += 1;
                continue;
            }
            if depth + 1 > limits.max_plan_length {
                truncated = true;
                continue;
            }
            stats.generated += 1;
            closed.insert(successor.clone());
            let h = unsatisfied_goals(&successor, &goal_pos, &goal_neg);
            nodes.push((successor, node_idx, action_idx, depth + 1));
            let new_idx = nodes.len() - 1;
            if h == 0 {
                let mut steps = Vec::new();
                let mut at = new_idx;
                while at != 0 {
                    let (_, parent, act, _) = &nodes[at];
                    steps.push(actions[*act].step.clone());
                    at = *parent;
                }
                steps.reverse();
                return Ok(PlanOutcome::Solved(Plan { steps }, stats));
            }
            seq += 1;
            open.push(std::cmp::Reverse((h, seq, new_idx)));
        }
    }

    if truncated {
        Ok(PlanOutcome::LimitExceeded(stats))
    } else {
        Ok(PlanOutcome::Unsolvable(stats))
    }
}

// ---------------------------------------------------------------------------
// Plan validation (independent oracle)
// ---------------------------------------------------------------------------

/// Why and where a plan fails validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanViolation {
    /// Index of the violating step; equal to the plan length when the goal
    /// fails after the final step.
    pub step: usize,
    pub reason: String,
}

/// Simulates a plan from the problem's init using a direct interpretation
/// of the action schemas (no shared state with the planner). Returns `Ok`
/// when every step's precondition holds and the goal holds at the end.
pub fn validate_plan(
    domain: &PddlDomain,
    problem: &PddlProblem,
    plan: &Plan,
) -> Result<(), PlanViolation> {
    let mut state: BTreeSet<GroundAtom> = problem.init.iter().cloned().collect();

    for (i, step) in plan.steps.iter().enumerate() {
        let schema = domain.action(&step.action).ok_or_else(|| PlanViolation {
            step: i,
            reason: format!("unknown action `{}`", step.action),
        })?;
        if schema.params.len() != step.args.len() {
            return Err(PlanViolation {
                step: i,
                reason: format!(
                    "action `{}` takes {} arguments, got {}",
                    step.action,
                    schema.params.len(),
                    step.args.len()
                ),
            });
        }
        let subst = |atom: &Atom| -> GroundAtom {
            GroundAtom {
                predicate: atom.predicate.clone(),
                args: atom
                    .args
                    .iter()
                    .map(|t| match t {
                        Term::Const(c) => c.clone(),
                        Term::Var(v) => {
                            let idx = schema.params.iter().position(|p| &p.name == v).unwrap();
                            step.args[idx].clone()
                        }
                    })
                    .collect(),
            }
        };
        for pre in &schema.pre_pos {
            let g = subst(pre);
            if !state.contains(&g) {
                return Err(PlanViolation {
                    step: i,
                    reason: format!("precondition {g} does not hold"),
                });
            }
        }
        for pre in &schema.pre_neg {
            let g = subst(pre);
            if state.contains(&g) {
                return Err(PlanViolation {
                    step: i,
                    reason: format!("negative precondition (not {g}) does not hold"),
                });
            }
        }
        for d in &schema.del {
            state.remove(&subst(d));
        }
        for a in &schema.add {
            state.insert(subst(a));
        }
    }

    for lit in &problem.goal {
        let holds = state.contains(&lit.atom);
        if holds == lit.negated {
            return Err(PlanViolation {
                step: plan.steps.len(),
                reason: format!(
                    "goal literal {}{} does not hold in the final state",
                    if lit.negated { "(not " } else { "" },
                    if lit.negated {
                        format!("{})", lit.atom)
                    } else {
                        lit.atom.to_string()
                    }
                ),
            });
        }
    }
    Ok(())
}

/// Final state after simulating a plan; used to translate plan effects back
/// to machine configuration writes.
pub fn final_state(
    domain: &PddlDomain,
    problem: &PddlProblem,
    plan: &Plan,
) -> Result<BTreeSet<GroundAtom>, PlanViolation> {
    validate_plan(domain, problem, plan)?;
    let mut state: BTreeSet<GroundAtom> = problem.init.iter().cloned().collect();
    for step in &plan.steps {
        let schema = domain.action(&step.action).unwrap();
        let subst = |atom: &Atom| -> GroundAtom {
            GroundAtom {
                predicate: atom.predicate.clone(),
                args: atom
                    .args
                    .iter()
                    .map(|t| match t {
                        Term::Const(c) => c.clone(),
                        Term::Var(v) => {
                            let idx = schema.params.iter().position(|p| &p.name == v).unwrap();
                            step.args[idx].clone()
                        }
                    })
                    .collect(),
            }
        };
        for d in &schema.del {
            state.remove(&subst(d));
        }
        for a in &schema.add {
            state.insert(subst(a));
        }
    }
    Ok(state)
}
