//! Discretization mapping between numeric machine attributes and PDDL
//! objects (`.map` files, TOML syntax).
//!
//! A mapping belongs to one planning domain. It declares the problem
//! objects, static init atoms (such as level adjacency), and per-attribute
//! bins that translate a numeric reading into a level object and back into
//! a representative numeric value:
//!
//! ```toml
//! domain = "pressure-ops"
//!
//! [[objects]]
//! name = "machine"
//! type = "machine"
//!
//! [[statics]]
//! predicate = "adjacent"
//! args = ["lo", "mid"]
//!
//! [[attributes]]
//! path = "PhaseData.backPressure"
//! predicate = "pressure-level"
//! prefix_args = ["machine"]
//!
//! [[attributes.bins]]
//! level = "lo"
//! min = 0.0
//! max = 100.0
//! value = 50.0
//! ```
//!
//! Readings outside every bin clamp to the nearest bin and produce a
//! warning instead of failing the episode.

use serde::Deserialize;

use crate::casebase::GroundLiteral;
use crate::domain::AttributePath;
use crate::situation::Situation;
use crate::value::Value;

use super::{
    final_state, GroundAtom, GroundGoalLiteral, PddlDomain, PddlError, PddlProblem, Plan,
    TypedName,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeBin {
    pub level: String,
    pub min: f64,
    pub max: f64,
    /// Representative value written back to the machine when a plan moves
    /// the attribute into this bin.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMapping {
    pub path: AttributePath,
    pub predicate: String,
    pub prefix_args: Vec<String>,
    pub bins: Vec<AttributeBin>,
}

impl AttributeMapping {
    /// Bin index for a reading; clamps to the first/last bin outside the
    /// covered range. The second component is a clamp warning, if any.
    fn bin_for(&self, x: f64) -> (usize, Option<String>) {
        if x < self.bins[0].min {
            return (
                0,
                Some(format!(
                    "{} = {x} below first bin [{}, {}), clamped to `{}`",
                    self.path, self.bins[0].min, self.bins[0].max, self.bins[0].level
                )),
            );
        }
        for (i, bin) in self.bins.iter().enumerate() {
            let last = i == self.bins.len() - 1;
            if x >= bin.min && (x < bin.max || (last && x <= bin.max)) {
                return (i, None);
            }
        }
        let last = self.bins.len() - 1;
        (
            last,
            Some(format!(
                "{} = {x} above last bin [{}, {}], clamped to `{}`",
                self.path, self.bins[last].min, self.bins[last].max, self.bins[last].level
            )),
        )
    }

    fn bin_by_level(&self, level: &str) -> Option<&AttributeBin> {
        self.bins.iter().find(|b| b.level == level)
    }
}

/// A loaded `.map` file: the bridge between continuous machine readings and
/// the typed objects of one planning domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineMapping {
    pub domain: String,
    pub objects: Vec<TypedName>,
    pub statics: Vec<GroundAtom>,
    pub attributes: Vec<AttributeMapping>,
}

#[derive(Deserialize)]
struct RawMapping {
    domain: String,
    #[serde(default)]
    objects: Vec<RawObject>,
    #[serde(default)]
    statics: Vec<RawStatic>,
    #[serde(default)]
    attributes: Vec<RawAttribute>,
}

#[derive(Deserialize)]
struct RawObject {
    name: String,
    #[serde(rename = "type")]
    ty: String,
}

#[derive(Deserialize)]
struct RawStatic {
    predicate: String,
    #[serde(default)]
    args: Vec<String>,
}

#[derive(Deserialize)]
struct RawAttribute {
    path: String,
    predicate: String,
    #[serde(default)]
    prefix_args: Vec<String>,
    bins: Vec<RawBin>,
}

#[derive(Deserialize)]
struct RawBin {
    level: String,
    min: f64,
    max: f64,
    value: f64,
}

impl MachineMapping {
    pub fn parse(toml_source: &str) -> Result<Self, PddlError> {
        let raw: RawMapping = toml::from_str(toml_source)
            .map_err(|e| PddlError::Unresolved(format!("malformed mapping file: {e}")))?;
        let objects: Vec<TypedName> = raw
            .objects
            .into_iter()
            .map(|o| TypedName {
                name: o.name,
                ty: o.ty,
            })
            .collect();
        let statics = raw
            .statics
            .into_iter()
            .map(|s| GroundAtom {
                predicate: s.predicate,
                args: s.args,
            })
            .collect();
        let mut attributes = Vec::new();
        for attr in raw.attributes {
            let path = AttributePath::parse_dotted(&attr.path).ok_or_else(|| {
                PddlError::Unresolved(format!(
                    "mapping attribute `{}` is not a Class.attribute path",
                    attr.path
                ))
            })?;
            if attr.bins.is_empty() {
                return Err(PddlError::Unresolved(format!(
                    "mapping for {path} declares no bins"
                )));
            }
            let mut bins: Vec<AttributeBin> = attr
                .bins
                .into_iter()
                .map(|b| AttributeBin {
                    level: b.level,
                    min: b.min,
                    max: b.max,
                    value: b.value,
                })
                .collect();
            bins.sort_by(|a, b| a.min.total_cmp(&b.min));
            for bin in &bins {
                if !(bin.min < bin.max) {
                    return Err(PddlError::Unresolved(format!(
                        "mapping for {path}: bin `{}` has empty range [{}, {}]",
                        bin.level, bin.min, bin.max
                    )));
                }
            }
            for pair in bins.windows(2) {
                if pair[1].min < pair[0].max {
                    return Err(PddlError::Unresolved(format!(
                        "mapping for {path}: bins `{}` and `{}` overlap",
                        pair[0].level, pair[1].level
                    )));
                }
            }
            for bin in &bins {
                if !objects.iter().any(|o| o.name == bin.level) {
                    return Err(PddlError::Unresolved(format!(
                        "mapping for {path}: bin level `{}` is not a declared object",
                        bin.level
                    )));
                }
            }
            attributes.push(AttributeMapping {
                path,
                predicate: attr.predicate,
                prefix_args: attr.prefix_args,
                bins,
            });
        }
        Ok(Self {
            domain: raw.domain,
            objects,
            statics,
            attributes,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PddlError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PddlError::Unresolved(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn object_declared(&self, domain: &PddlDomain, name: &str) -> bool {
        self.objects.iter().any(|o| o.name == name)
            || domain.constants.iter().any(|c| c.name == name)
    }

    /// Checks the mapping against its planning domain: objects typed,
    /// statics and attribute predicates declared with matching arity.
    pub fn validate_against(&self, domain: &PddlDomain) -> Result<(), PddlError> {
        if self.domain != domain.name {
            return Err(PddlError::Unresolved(format!(
                "mapping is for domain `{}`, loaded domain is `{}`",
                self.domain, domain.name
            )));
        }
        for obj in &self.objects {
            if !domain.type_declared(&obj.ty) {
                return Err(PddlError::Unresolved(format!(
                    "mapping object `{}` has undeclared type `{}`",
                    obj.name, obj.ty
                )));
            }
        }
        for atom in &self.statics {
            let pred = domain.predicate(&atom.predicate).ok_or_else(|| {
                PddlError::Unresolved(format!(
                    "mapping static uses undeclared predicate `{}`",
                    atom.predicate
                ))
            })?;
            if pred.params.len() != atom.args.len() {
                return Err(PddlError::TypeMismatch(format!(
                    "mapping static `{}` takes {} arguments, got {}",
                    atom.predicate,
                    pred.params.len(),
                    atom.args.len()
                )));
            }
            for arg in &atom.args {
                if !self.object_declared(domain, arg) {
                    return Err(PddlError::Unresolved(format!(
                        "mapping static references undeclared object `{arg}`"
                    )));
                }
            }
        }
        for attr in &self.attributes {
            let pred = domain.predicate(&attr.predicate).ok_or_else(|| {
                PddlError::Unresolved(format!(
                    "mapping for {} uses undeclared predicate `{}`",
                    attr.path, attr.predicate
                ))
            })?;
            if pred.params.len() != attr.prefix_args.len() + 1 {
                return Err(PddlError::TypeMismatch(format!(
                    "mapping for {}: predicate `{}` takes {} arguments, prefix has {} (+1 level)",
                    attr.path,
                    attr.predicate,
                    pred.params.len(),
                    attr.prefix_args.len()
                )));
            }
            for arg in &attr.prefix_args {
                if !self.object_declared(domain, arg) {
                    return Err(PddlError::Unresolved(format!(
                        "mapping for {} references undeclared object `{arg}`",
                        attr.path
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks a `pddl goal` directive from a case base against the domain
    /// and this mapping's objects.
    pub fn validate_goal(
        &self,
        domain: &PddlDomain,
        goal: &[GroundLiteral],
    ) -> Result<(), PddlError> {
        for lit in goal {
            let pred = domain.predicate(&lit.predicate).ok_or_else(|| {
                PddlError::Unresolved(format!(
                    "goal uses undeclared predicate `{}`",
                    lit.predicate
                ))
            })?;
            if pred.params.len() != lit.args.len() {
                return Err(PddlError::TypeMismatch(format!(
                    "goal predicate `{}` takes {} arguments, got {}",
                    lit.predicate,
                    pred.params.len(),
                    lit.args.len()
                )));
            }
            for arg in &lit.args {
                if !self.object_declared(domain, arg) {
                    return Err(PddlError::Unresolved(format!(
                        "goal references undeclared object `{arg}`"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Builds a planning problem for a fallback directive: init is the mapping's
/// statics plus the discretized situation, the goal is the directive's
/// literal conjunction. Returns clamp warnings alongside the problem.
pub fn situation_to_problem(
    mapping: &MachineMapping,
    domain: &PddlDomain,
    goal: &[GroundLiteral],
    situation: &Situation,
    problem_name: &str,
) -> Result<(PddlProblem, Vec<String>), PddlError> {
    mapping.validate_against(domain)?;
    mapping.validate_goal(domain, goal)?;

    let mut warnings = Vec::new();
    let mut init = mapping.statics.clone();
    for attr in &mapping.attributes {
        let value = situation.get(&attr.path).ok_or_else(|| {
            PddlError::Unresolved(format!(
                "situation has no value for mapped attribute {}",
                attr.path
            ))
        })?;
        let x = value.as_f64().ok_or_else(|| {
            PddlError::TypeMismatch(format!(
                "mapped attribute {} is not numeric in the situation",
                attr.path
            ))
        })?;
        let (idx, warning) = attr.bin_for(x);
        if let Some(w) = warning {
            warnings.push(w);
        }
        let mut args = attr.prefix_args.clone();
        args.push(attr.bins[idx].level.clone());
        init.push(GroundAtom {
            predicate: attr.predicate.clone(),
            args,
        });
    }

    let problem = PddlProblem {
        name: problem_name.to_string(),
        domain_ref: domain.name.clone(),
        objects: mapping.objects.clone(),
        init,
        goal: goal
            .iter()
            .map(|l| GroundGoalLiteral {
                negated: l.negated,
                atom: GroundAtom {
                    predicate: l.predicate.clone(),
                    args: l.args.clone(),
                },
            })
            .collect(),
    };
    super::validate_problem(domain, &problem)?;
    Ok((problem, warnings))
}

/// Translates a validated plan back into machine configuration writes: for
/// every mapped attribute whose level changed between init and the final
/// state, emit the new level's representative value.
pub fn plan_to_assignments(
    mapping: &MachineMapping,
    domain: &PddlDomain,
    problem: &PddlProblem,
    plan: &Plan,
) -> Result<Vec<(AttributePath, Value)>, PddlError> {
    let end = final_state(domain, problem, plan)
        .map_err(|v| PddlError::Unresolved(format!("plan invalid at step {}: {}", v.step, v.reason)))?;
    let init: std::collections::BTreeSet<GroundAtom> = problem.init.iter().cloned().collect();

    let level_of = |state: &std::collections::BTreeSet<GroundAtom>,
                    attr: &AttributeMapping|
     -> Result<String, PddlError> {
        let mut found = Vec::new();
        for atom in state {
            if atom.predicate == attr.predicate
                && atom.args.len() == attr.prefix_args.len() + 1
                && atom.args[..attr.prefix_args.len()] == attr.prefix_args[..]
            {
                found.push(atom.args.last().unwrap().clone());
            }
        }
        match found.len() {
            1 => Ok(found.pop().unwrap()),
            0 => Err(PddlError::Unresolved(format!(
                "no level atom for {} in state",
                attr.path
            ))),
            _ => Err(PddlError::Unresolved(format!(
                "ambiguous level atoms for {} in state: {}",
                attr.path,
                found.join(", ")
            ))),
        }
    };

    let mut writes = Vec::new();
    for attr in &mapping.attributes {
        let before = level_of(&init, attr)?;
        let after = level_of(&end, attr)?;
        if before == after {
            continue;
        }
        let bin = attr.bin_by_level(&after).ok_or_else(|| {
            PddlError::Unresolved(format!(
                "plan moved {} to level `{after}` which has no bin",
                attr.path
            ))
        })?;
        let value = if bin.value.fract() == 0.0 {
            Value::Int(bin.value as i64)
        } else {
            Value::Float(bin.value)
        };
        writes.push((attr.path.clone(), value));
    }
    Ok(writes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{parse_pddl_domain, plan, validate_plan, PlanOutcome, SearchLimits};

    const PRESSURE_DOMAIN: &str = r#"
(define (domain pressure-ops)
  (:requirements :strips :typing)
  (:types machine plevel)
  (:predicates
    (pressure-level ?m - machine ?l - plevel)
    (adjacent ?lower - plevel ?upper - plevel)
    (lowest ?l - plevel)
    (low-pressure ?m - machine))
  (:action reduce-pressure
    :parameters (?m - machine ?from - plevel ?to - plevel)
    :precondition (and (pressure-level ?m ?from) (adjacent ?to ?from))
    :effect (and (pressure-level ?m ?to) (not (pressure-level ?m ?from))))
  (:action confirm-low
    :parameters (?m - machine ?l - plevel)
    :precondition (and (pressure-level ?m ?l) (lowest ?l))
    :effect (and (low-pressure ?m))))
"#;

    const MAPPING: &str = r#"
domain = "pressure-ops"

[[objects]]
name = "machine"
type = "machine"

[[objects]]
name = "lo"
type = "plevel"

[[objects]]
name = "mid"
type = "plevel"

[[objects]]
name = "hi"
type = "plevel"

[[statics]]
predicate = "adjacent"
args = ["lo", "mid"]

[[statics]]
predicate = "adjacent"
args = ["mid", "hi"]

[[statics]]
predicate = "lowest"
args = ["lo"]

[[attributes]]
path = "PhaseData.backPressure"
predicate = "pressure-level"
prefix_args = ["machine"]

[[attributes.bins]]
level = "lo"
min = 0.0
max = 100.0
value = 50.0

[[attributes.bins]]
level = "mid"
min = 100.0
max = 200.0
value = 150.0

[[attributes.bins]]
level = "hi"
min = 200.0
max = 300.0
value = 250.0
"#;

    fn back_pressure() -> AttributePath {
        AttributePath::new("PhaseData", "backPressure")
    }

    fn goal_low_pressure() -> Vec<GroundLiteral> {
        vec![GroundLiteral {
            negated: false,
            predicate: "low-pressure".into(),
            args: vec!["machine".into()],
        }]
    }

    #[test]
    fn mapping_parses_and_validates() {
        let mapping = MachineMapping::parse(MAPPING).unwrap();
        let domain = parse_pddl_domain(PRESSURE_DOMAIN).unwrap();
        mapping.validate_against(&domain).unwrap();
        assert_eq!(mapping.attributes[0].bins.len(), 3);
    }

    #[test]
    fn undeclared_goal_predicate_fails_at_load() {
        let mapping = MachineMapping::parse(MAPPING).unwrap();
        let domain = parse_pddl_domain(PRESSURE_DOMAIN).unwrap();
        let bad_goal = vec![GroundLiteral {
            negated: false,
            predicate: "no-such-pred".into(),
            args: vec!["machine".into()],
        }];
        assert!(matches!(
            mapping.validate_goal(&domain, &bad_goal),
            Err(PddlError::Unresolved(_))
        ));
    }

    #[test]
    fn situation_discretizes_into_init() {
        let mapping = MachineMapping::parse(MAPPING).unwrap();
        let domain = parse_pddl_domain(PRESSURE_DOMAIN).unwrap();
        let s = Situation::new(7).with(back_pressure(), Value::Float(250.0));
        let (problem, warnings) =
            situation_to_problem(&mapping, &domain, &goal_low_pressure(), &s, "fallback-c7").unwrap();
        assert!(warnings.is_empty());
        assert!(problem.init.iter().any(|a| a.to_string() == "(pressure-level machine hi)"));
    }

    #[test]
    fn out_of_range_reading_clamps_with_warning() {
        let mapping = MachineMapping::parse(MAPPING).unwrap();
        let domain = parse_pddl_domain(PRESSURE_DOMAIN).unwrap();
        let s = Situation::new(7).with(back_pressure(), Value::Float(350.0));
        let (problem, warnings) =
            situation_to_problem(&mapping, &domain, &goal_low_pressure(), &s, "p").unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("clamped"));
        assert!(problem.init.iter().any(|a| a.to_string() == "(pressure-level machine hi)"));

        // bin edges are exact: 100.0 belongs to `mid`, 300.0 to `hi`
        let s = Situation::new(8).with(back_pressure(), Value::Float(100.0));
        let (problem, warnings) =
            situation_to_problem(&mapping, &domain, &goal_low_pressure(), &s, "p").unwrap();
        assert!(warnings.is_empty());
        assert!(problem.init.iter().any(|a| a.to_string() == "(pressure-level machine mid)"));
        let s = Situation::new(9).with(back_pressure(), Value::Float(300.0));
        let (_, warnings) =
            situation_to_problem(&mapping, &domain, &goal_low_pressure(), &s, "p").unwrap();
        assert!(warnings.is_empty());
    }

    #[test]
    fn plan_translates_back_to_config_writes() {
        let mapping = MachineMapping::parse(MAPPING).unwrap();
        let domain = parse_pddl_domain(PRESSURE_DOMAIN).unwrap();
        let s = Situation::new(7).with(back_pressure(), Value::Float(250.0));
        let (problem, _) =
            situation_to_problem(&mapping, &domain, &goal_low_pressure(), &s, "p").unwrap();
        let outcome = plan(&domain, &problem, SearchLimits::default()).unwrap();
        let PlanOutcome::Solved(p, _) = outcome else {
            panic!("{outcome:?}")
        };
        assert!(validate_plan(&domain, &problem, &p).is_ok());
        let writes = plan_to_assignments(&mapping, &domain, &problem, &p).unwrap();
        assert_eq!(writes, vec![(back_pressure(), Value::Int(50))]);
    }

    #[test]
    fn missing_mapped_attribute_is_an_error() {
        let mapping = MachineMapping::parse(MAPPING).unwrap();
        let domain = parse_pddl_domain(PRESSURE_DOMAIN).unwrap();
        let s = Situation::new(7);
        assert!(matches!(
            situation_to_problem(&mapping, &domain, &goal_low_pressure(), &s, "p"),
            Err(PddlError::Unresolved(_))
        ));
    }

    #[test]
    fn overlapping_bins_are_rejected() {
        let bad = MAPPING.replace("min = 100.0", "min = 90.0");
        assert!(matches!(
            MachineMapping::parse(&bad),
            Err(PddlError::Unresolved(_))
        ));
    }
}
