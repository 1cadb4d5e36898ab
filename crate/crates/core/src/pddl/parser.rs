//! S-expression front end for the STRIPS subset of PDDL.
//!
//! Supported: `:strips`, `:typing`, `:negative-preconditions`. Anything
//! beyond the subset (numeric fluents, durative actions, quantifiers,
//! conditional effects, disjunctive preconditions) is rejected with an
//! error naming the construct.

use crate::diag::{ParseError, Pos};

use super::{
    ActionSchema, Atom, GroundAtom, GroundGoalLiteral, PddlDomain, PddlError, PddlProblem,
    PredicateDef, Term, TypeDef, TypedName,
};

#[derive(Debug, Clone)]
enum Sexp {
    Sym(String, Pos),
    List(Vec<Sexp>, Pos),
}

impl Sexp {
    fn pos(&self) -> Pos {
        match self {
            Sexp::Sym(_, p) | Sexp::List(_, p) => *p,
        }
    }

    fn as_sym(&self) -> Option<&str> {
        match self {
            Sexp::Sym(s, _) => Some(s.as_str()),
            Sexp::List(..) => None,
        }
    }

    fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(items, _) => Some(items),
            Sexp::Sym(..) => None,
        }
    }
}

fn syntax(pos: Pos, msg: impl Into<String>) -> PddlError {
    PddlError::Syntax(ParseError::new(pos, msg))
}

fn lex_sexprs(source: &str) -> Result<Vec<Sexp>, PddlError> {
    let mut stack: Vec<(Vec<Sexp>, Pos)> = Vec::new();
    let mut top: Vec<Sexp> = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut chars = source.chars().peekable();

    while let Some(&c) = chars.peek() {
        let pos = Pos::new(line, col);
        let bump = |c: char, line: &mut u32, col: &mut u32| {
            if c == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
        };
        match c {
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    bump(c, &mut line, &mut col);
                }
            }
            c if c.is_whitespace() => {
                chars.next();
                bump(c, &mut line, &mut col);
            }
            '(' => {
                chars.next();
                bump(c, &mut line, &mut col);
                stack.push((std::mem::take(&mut top), pos));
            }
            ')' => {
                chars.next();
                bump(c, &mut line, &mut col);
                let (mut parent, open_pos) = stack
                    .pop()
                    .ok_or_else(|| syntax(pos, "unmatched `)`"))?;
                let list = Sexp::List(std::mem::take(&mut top), open_pos);
                parent.push(list);
                top = parent;
            }
            _ => {
                let mut sym = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    sym.push(c);
                    chars.next();
                    bump(c, &mut line, &mut col);
                }
                top.push(Sexp::Sym(sym, pos));
            }
        }
    }
    if let Some((_, open_pos)) = stack.last() {
        return Err(syntax(*open_pos, "unclosed `(`"));
    }
    Ok(top)
}

/// Reads a typed list: `n1 n2 - t n3 - u n4` (trailing names default to
/// `object`).
fn parse_typed_list(items: &[Sexp], what: &str) -> Result<Vec<TypedName>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, Pos)> = Vec::new();
    let mut iter = items.iter().peekable();
    while let Some(item) = iter.next() {
        let sym = item
            .as_sym()
            .ok_or_else(|| syntax(item.pos(), format!("expected {what} name")))?;
        if sym == "-" {
            let ty_item = iter
                .next()
                .ok_or_else(|| syntax(item.pos(), "expected type after `-`"))?;
            let ty = ty_item
                .as_sym()
                .ok_or_else(|| syntax(ty_item.pos(), "expected type name"))?;
            if pending.is_empty() {
                return Err(syntax(item.pos(), "dangling `-` in typed list"));
            }
            for (name, _) in pending.drain(..) {
                out.push(TypedName {
                    name,
                    ty: ty.to_string(),
                });
            }
        } else {
            pending.push((sym.to_string(), item.pos()));
        }
    }
    for (name, _) in pending {
        out.push(TypedName {
            name,
            ty: "object".to_string(),
        });
    }
    Ok(out)
}

fn parse_atom(items: &[Sexp], pos: Pos) -> Result<Atom, PddlError> {
    let mut iter = items.iter();
    let head = iter
        .next()
        .ok_or_else(|| syntax(pos, "empty atom"))?;
    let predicate = head
        .as_sym()
        .ok_or_else(|| syntax(head.pos(), "expected predicate name"))?;
    check_supported_head(predicate, head.pos())?;
    let mut args = Vec::new();
    for item in iter {
        let sym = item
            .as_sym()
            .ok_or_else(|| syntax(item.pos(), "expected atom argument"))?;
        if let Some(var) = sym.strip_prefix('?') {
            args.push(Term::Var(var.to_string()));
        } else {
            args.push(Term::Const(sym.to_string()));
        }
    }
    Ok(Atom {
        predicate: predicate.to_string(),
        args,
    })
}

fn check_supported_head(head: &str, pos: Pos) -> Result<(), PddlError> {
    let unsupported = match head {
        "or" | "imply" => Some("disjunctive preconditions"),
        "exists" | "forall" => Some("quantified formulas"),
        "when" => Some("conditional effects"),
        "=" | "increase" | "decrease" | "assign" | "scale-up" | "scale-down" => {
            Some("numeric fluents")
        }
        _ => None,
    };
    match unsupported {
        Some(feature) => Err(PddlError::Unsupported {
            feature: feature.to_string(),
            construct: head.to_string(),
            pos,
        }),
        None => Ok(()),
    }
}

/// Parses `(and lit*)`, a single literal, or `()` into positive/negative
/// literal lists.
fn parse_literal_set(sexp: &Sexp) -> Result<(Vec<Atom>, Vec<Atom>), PddlError> {
    let items = sexp
        .as_list()
        .ok_or_else(|| syntax(sexp.pos(), "expected a formula"))?;
    if items.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut pos_atoms = Vec::new();
    let mut neg_atoms = Vec::new();
    if items[0].as_sym() == Some("and") {
        for item in &items[1..] {
            parse_literal_into(item, &mut pos_atoms, &mut neg_atoms)?;
        }
    } else {
        parse_literal_into(sexp, &mut pos_atoms, &mut neg_atoms)?;
    }
    Ok((pos_atoms, neg_atoms))
}

fn parse_literal_into(
    sexp: &Sexp,
    pos_atoms: &mut Vec<Atom>,
    neg_atoms: &mut Vec<Atom>,
) -> Result<(), PddlError> {
    let items = sexp
        .as_list()
        .ok_or_else(|| syntax(sexp.pos(), "expected a literal"))?;
    if items.first().and_then(|i| i.as_sym()) == Some("not") {
        if items.len() != 2 {
            return Err(syntax(sexp.pos(), "`not` takes exactly one atom"));
        }
        let inner = items[1]
            .as_list()
            .ok_or_else(|| syntax(items[1].pos(), "expected atom inside `not`"))?;
        neg_atoms.push(parse_atom(inner, items[1].pos())?);
    } else {
        pos_atoms.push(parse_atom(items, sexp.pos())?);
    }
    Ok(())
}

const SUPPORTED_REQUIREMENTS: &[&str] = &[":strips", ":typing", ":negative-preconditions"];

/// Parses a PDDL domain restricted to the STRIPS subset.
pub fn parse_pddl_domain(source: &str) -> Result<PddlDomain, PddlError> {
    let top = lex_sexprs(source)?;
    let items = expect_define(&top, "domain")?;

    let mut domain = PddlDomain {
        name: String::new(),
        types: Vec::new(),
        constants: Vec::new(),
        predicates: Vec::new(),
        actions: Vec::new(),
    };

    for section in items {
        let list = section
            .as_list()
            .ok_or_else(|| syntax(section.pos(), "expected a (section ...)"))?;
        let head = list
            .first()
            .and_then(|i| i.as_sym())
            .ok_or_else(|| syntax(section.pos(), "expected section keyword"))?;
        match head {
            "domain" => {
                domain.name = list
                    .get(1)
                    .and_then(|i| i.as_sym())
                    .ok_or_else(|| syntax(section.pos(), "expected domain name"))?
                    .to_string();
            }
            ":requirements" => {
                for req in &list[1..] {
                    let r = req
                        .as_sym()
                        .ok_or_else(|| syntax(req.pos(), "expected requirement flag"))?;
                    if !SUPPORTED_REQUIREMENTS.contains(&r) {
                        let feature = match r {
                            ":fluents" | ":numeric-fluents" | ":action-costs" => "numeric fluents",
                            ":durative-actions" => "durative actions",
                            other => other,
                        };
                        return Err(PddlError::Unsupported {
                            feature: feature.to_string(),
                            construct: r.to_string(),
                            pos: req.pos(),
                        });
                    }
                }
            }
            ":types" => {
                for tn in parse_typed_list(&list[1..], "type")? {
                    domain.types.push(TypeDef {
                        name: tn.name,
                        parent: if tn.ty == "object" { None } else { Some(tn.ty) },
                    });
                }
            }
            ":constants" => {
                domain.constants = parse_typed_list(&list[1..], "constant")?;
            }
            ":predicates" => {
                for pred in &list[1..] {
                    let items = pred
                        .as_list()
                        .ok_or_else(|| syntax(pred.pos(), "expected (predicate ?params...)"))?;
                    let name = items
                        .first()
                        .and_then(|i| i.as_sym())
                        .ok_or_else(|| syntax(pred.pos(), "expected predicate name"))?;
                    let params = parse_typed_list(&items[1..], "parameter")?
                        .into_iter()
                        .map(|tn| TypedName {
                            name: tn.name.trim_start_matches('?').to_string(),
                            ty: tn.ty,
                        })
                        .collect();
                    domain.predicates.push(PredicateDef {
                        name: name.to_string(),
                        params,
                    });
                }
            }
            ":action" => {
                domain.actions.push(parse_action(list, section.pos())?);
            }
            ":functions" => {
                return Err(PddlError::Unsupported {
                    feature: "numeric fluents".to_string(),
                    construct: ":functions".to_string(),
                    pos: section.pos(),
                });
            }
            ":durative-action" => {
                return Err(PddlError::Unsupported {
                    feature: "durative actions".to_string(),
                    construct: ":durative-action".to_string(),
                    pos: section.pos(),
                });
            }
            other => {
                return Err(PddlError::Unsupported {
                    feature: "unknown section".to_string(),
                    construct: other.to_string(),
                    pos: section.pos(),
                });
            }
        }
    }

    super::validate_domain(&domain)?;
    Ok(domain)
}

fn parse_action(list: &[Sexp], pos: Pos) -> Result<ActionSchema, PddlError> {
    let name = list
        .get(1)
        .and_then(|i| i.as_sym())
        .ok_or_else(|| syntax(pos, "expected action name"))?
        .to_string();
    let mut params = Vec::new();
    let mut precondition = None;
    let mut effect = None;
    let mut i = 2;
    while i < list.len() {
        let key = list[i]
            .as_sym()
            .ok_or_else(|| syntax(list[i].pos(), "expected :parameters/:precondition/:effect"))?;
        let value = list
            .get(i + 1)
            .ok_or_else(|| syntax(list[i].pos(), format!("missing value after {key}")))?;
        match key {
            ":parameters" => {
                let items = value
                    .as_list()
                    .ok_or_else(|| syntax(value.pos(), "expected (?params...)"))?;
                params = parse_typed_list(items, "parameter")?
                    .into_iter()
                    .map(|tn| {
                        if let Some(var) = tn.name.strip_prefix('?') {
                            Ok(TypedName {
                                name: var.to_string(),
                                ty: tn.ty,
                            })
                        } else {
                            Err(syntax(
                                value.pos(),
                                format!("action parameter `{}` must start with `?`", tn.name),
                            ))
                        }
                    })
                    .collect::<Result<_, _>>()?;
            }
            ":precondition" => precondition = Some(parse_literal_set(value)?),
            ":effect" => effect = Some(parse_literal_set(value)?),
            ":duration" => {
                return Err(PddlError::Unsupported {
                    feature: "durative actions".to_string(),
                    construct: ":duration".to_string(),
                    pos: list[i].pos(),
                });
            }
            other => {
                return Err(syntax(list[i].pos(), format!("unknown action key `{other}`")));
            }
        }
        i += 2;
    }
    let (pre_pos, pre_neg) = precondition.unwrap_or_default();
    let (add, del) = effect.unwrap_or_default();
    Ok(ActionSchema {
        name,
        params,
        pre_pos,
        pre_neg,
        add,
        del,
    })
}

/// Parses a PDDL problem restricted to the STRIPS subset.
pub fn parse_pddl_problem(source: &str) -> Result<PddlProblem, PddlError> {
    let top = lex_sexprs(source)?;
    let items = expect_define(&top, "problem")?;

    let mut problem = PddlProblem {
        name: String::new(),
        domain_ref: String::new(),
        objects: Vec::new(),
        init: Vec::new(),
        goal: Vec::new(),
    };

    for section in items {
        let list = section
            .as_list()
            .ok_or_else(|| syntax(section.pos(), "expected a (section ...)"))?;
        let head = list
            .first()
            .and_then(|i| i.as_sym())
            .ok_or_else(|| syntax(section.pos(), "expected section keyword"))?;
        match head {
            "problem" => {
                problem.name = list
                    .get(1)
                    .and_then(|i| i.as_sym())
                    .ok_or_else(|| syntax(section.pos(), "expected problem name"))?
                    .to_string();
            }
            ":domain" => {
                problem.domain_ref = list
                    .get(1)
                    .and_then(|i| i.as_sym())
                    .ok_or_else(|| syntax(section.pos(), "expected domain name"))?
                    .to_string();
            }
            ":objects" => {
                problem.objects = parse_typed_list(&list[1..], "object")?;
            }
            ":init" => {
                for atom in &list[1..] {
                    let items = atom
                        .as_list()
                        .ok_or_else(|| syntax(atom.pos(), "expected ground atom"))?;
                    let parsed = parse_atom(items, atom.pos())?;
                    problem.init.push(ground_atom(parsed, atom.pos())?);
                }
            }
            ":goal" => {
                let value = list
                    .get(1)
                    .ok_or_else(|| syntax(section.pos(), "expected goal formula"))?;
                let (pos_atoms, neg_atoms) = parse_literal_set(value)?;
                for a in pos_atoms {
                    problem.goal.push(GroundGoalLiteral {
                        negated: false,
                        atom: ground_atom(a, value.pos())?,
                    });
                }
                for a in neg_atoms {
                    problem.goal.push(GroundGoalLiteral {
                        negated: true,
                        atom: ground_atom(a, value.pos())?,
                    });
                }
            }
            ":metric" => {
                return Err(PddlError::Unsupported {
                    feature: "numeric fluents".to_string(),
                    construct: ":metric".to_string(),
                    pos: section.pos(),
                });
            }
            other => {
                return Err(PddlError::Unsupported {
                    feature: "unknown section".to_string(),
                    construct: other.to_string(),
                    pos: section.pos(),
                });
            }
        }
    }
    Ok(problem)
}

fn ground_atom(atom: Atom, pos: Pos) -> Result<GroundAtom, PddlError> {
    let mut args = Vec::new();
    for term in atom.args {
        match term {
            Term::Const(c) => args.push(c),
            Term::Var(v) => {
                return Err(syntax(
                    pos,
                    format!("variable `?{v}` not allowed in ground atom"),
                ));
            }
        }
    }
    Ok(GroundAtom {
        predicate: atom.predicate,
        args,
    })
}

fn expect_define<'a>(top: &'a [Sexp], kind: &str) -> Result<&'a [Sexp], PddlError> {
    let first = top
        .first()
        .ok_or_else(|| syntax(Pos::new(1, 1), "empty PDDL file"))?;
    let items = first
        .as_list()
        .ok_or_else(|| syntax(first.pos(), "expected (define ...)"))?;
    if items.first().and_then(|i| i.as_sym()) != Some("define") {
        return Err(syntax(first.pos(), "expected (define ...)"));
    }
    if top.len() > 1 {
        return Err(syntax(top[1].pos(), "trailing content after (define ...)"));
    }
    let head = items
        .get(1)
        .and_then(|i| i.as_list())
        .and_then(|l| l.first())
        .and_then(|i| i.as_sym());
    if head != Some(kind) {
        return Err(syntax(
            first.pos(),
            format!("expected (define ({kind} <name>) ...)"),
        ));
    }
    Ok(&items[1..])
}
