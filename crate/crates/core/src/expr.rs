//! Boolean conditions and arithmetic expressions over attribute paths.
//!
//! Conditions compare attribute paths against literals and combine the
//! comparisons with `&&`, `||`, `!`, and parentheses. Assignments in case
//! solutions use arithmetic (`+ - * /`) over numeric literals and paths.
//! Both are type-checked when a model loads, so evaluation against a
//! conforming situation cannot hit a type error; the evaluator still reports
//! one defensively instead of panicking.

use thiserror::Error;

use crate::diag::ParseError;
use crate::domain::{AttributePath, DomainModel, ModelSet, ResolveError};
use crate::lex::{Cursor, Tok};
use crate::situation::Situation;
use crate::value::{PrimitiveType, Value};

/// Type and normalization range of an attribute, as seen by the checkers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttrMeta {
    pub ty: PrimitiveType,
    pub range: Option<(f64, f64)>,
}

/// Anything that can answer "what is the type of this attribute path".
pub trait Vocab {
    fn meta(&self, path: &AttributePath) -> Result<AttrMeta, ResolveError>;
}

impl Vocab for DomainModel {
    fn meta(&self, path: &AttributePath) -> Result<AttrMeta, ResolveError> {
        self.resolve(path).map(|info| AttrMeta {
            ty: info.ty,
            range: info.range,
        })
    }
}

/// A model set restricted to an import list, the view a `.cb` or `.cs` file
/// has of the vocabulary.
pub struct ImportedVocab<'a> {
    pub set: &'a ModelSet,
    pub imports: &'a [String],
}

impl Vocab for ImportedVocab<'_> {
    fn meta(&self, path: &AttributePath) -> Result<AttrMeta, ResolveError> {
        self.set.resolve_in(self.imports, path).map(|info| AttrMeta {
            ty: info.ty,
            range: info.range,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

/// A boolean condition over attribute paths.
#[derive(Debug, Clone, PartialEq)]
pub enum BoolExpr {
    Cmp {
        path: AttributePath,
        op: CmpOp,
        value: Value,
    },
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
    Not(Box<BoolExpr>),
}

impl BoolExpr {
    pub fn cmp(path: AttributePath, op: CmpOp, value: Value) -> Self {
        BoolExpr::Cmp { path, op, value }
    }

    pub fn and(self, rhs: BoolExpr) -> Self {
        BoolExpr::And(Box::new(self), Box::new(rhs))
    }

    pub fn negate(self) -> Self {
        BoolExpr::Not(Box::new(self))
    }

    /// All attribute paths referenced anywhere in the condition.
    pub fn paths(&self) -> Vec<AttributePath> {
        let mut out = Vec::new();
        self.collect_paths(&mut out);
        out
    }

    fn collect_paths(&self, out: &mut Vec<AttributePath>) {
        match self {
            BoolExpr::Cmp { path, .. } => {
                if !out.contains(path) {
                    out.push(path.clone());
                }
            }
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) => {
                a.collect_paths(out);
                b.collect_paths(out);
            }
            BoolExpr::Not(e) => e.collect_paths(out),
        }
    }

    /// Re-checks types for a programmatically built condition (parsed
    /// conditions are checked during parsing).
    pub fn validate(&self, vocab: &dyn Vocab) -> Result<(), String> {
        match self {
            BoolExpr::Cmp { path, op, value } => {
                let meta = vocab.meta(path).map_err(|e| e.to_string())?;
                check_cmp(path, *op, value, meta.ty).map(|_| ())
            }
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) => {
                a.validate(vocab)?;
                b.validate(vocab)
            }
            BoolExpr::Not(e) => e.validate(vocab),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            BoolExpr::Or(..) => 0,
            BoolExpr::And(..) => 1,
            BoolExpr::Not(..) => 2,
            BoolExpr::Cmp { .. } => 3,
        }
    }

    fn fmt_prec(&self, f: &mut std::fmt::Formatter<'_>, min: u8) -> std::fmt::Result {
        let prec = self.precedence();
        let parens = prec < min;
        if parens {
            f.write_str("(")?;
        }
        match self {
            BoolExpr::Cmp { path, op, value } => write!(f, "{path} {} {value}", op.symbol())?,
            BoolExpr::And(a, b) => {
                a.fmt_prec(f, 1)?;
                f.write_str(" && ")?;
                b.fmt_prec(f, 2)?;
            }
            BoolExpr::Or(a, b) => {
                a.fmt_prec(f, 0)?;
                f.write_str(" || ")?;
                b.fmt_prec(f, 1)?;
            }
            BoolExpr::Not(e) => {
                f.write_str("!")?;
                e.fmt_prec(f, 3)?;
            }
        }
        if parens {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl std::fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

/// Right-hand side of an assignment: a literal, or arithmetic over numeric
/// literals and paths.
#[derive(Debug, Clone, PartialEq)]
pub enum NumExpr {
    Lit(Value),
    Path(AttributePath),
    Neg(Box<NumExpr>),
    Bin(Box<NumExpr>, ArithOp, Box<NumExpr>),
}

impl NumExpr {
    pub fn paths(&self) -> Vec<AttributePath> {
        let mut out = Vec::new();
        self.collect_paths(&mut out);
        out
    }

    fn collect_paths(&self, out: &mut Vec<AttributePath>) {
        match self {
            NumExpr::Lit(_) => {}
            NumExpr::Path(p) => {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
            NumExpr::Neg(e) => e.collect_paths(out),
            NumExpr::Bin(a, _, b) => {
                a.collect_paths(out);
                b.collect_paths(out);
            }
        }
    }

    /// Infers the expression's type. Bare literals may be any type;
    /// anything composite must be numeric.
    pub fn infer_type(&self, vocab: &dyn Vocab) -> Result<PrimitiveType, String> {
        match self {
            NumExpr::Lit(v) => Ok(v.primitive_type()),
            NumExpr::Path(p) => {
                let meta = vocab.meta(p).map_err(|e| e.to_string())?;
                Ok(meta.ty)
            }
            NumExpr::Neg(e) => {
                let t = e.infer_type(vocab)?;
                if !t.is_numeric() {
                    return Err(format!("cannot negate a {t} expression"));
                }
                Ok(t)
            }
            NumExpr::Bin(a, op, b) => {
                let ta = a.infer_type(vocab)?;
                let tb = b.infer_type(vocab)?;
                if !ta.is_numeric() || !tb.is_numeric() {
                    return Err(format!(
                        "arithmetic `{}` requires numeric operands, found {ta} and {tb}",
                        op.symbol()
                    ));
                }
                if ta == PrimitiveType::Float || tb == PrimitiveType::Float {
                    Ok(PrimitiveType::Float)
                } else {
                    Ok(PrimitiveType::Int)
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            NumExpr::Bin(_, ArithOp::Add | ArithOp::Sub, _) => 0,
            NumExpr::Bin(_, ArithOp::Mul | ArithOp::Div, _) => 1,
            NumExpr::Neg(..) => 2,
            NumExpr::Lit(_) | NumExpr::Path(_) => 3,
        }
    }

    fn fmt_prec(&self, f: &mut std::fmt::Formatter<'_>, min: u8) -> std::fmt::Result {
        let prec = self.precedence();
        let parens = prec < min;
        if parens {
            f.write_str("(")?;
        }
        match self {
            NumExpr::Lit(v) => write!(f, "{v}")?,
            NumExpr::Path(p) => write!(f, "{p}")?,
            NumExpr::Neg(e) => {
                f.write_str("-")?;
                e.fmt_prec(f, 3)?;
            }
            NumExpr::Bin(a, op, b) => {
                let (la, lb) = match op {
                    ArithOp::Add | ArithOp::Sub => (0, 1),
                    ArithOp::Mul | ArithOp::Div => (1, 2),
                };
                a.fmt_prec(f, la)?;
                write!(f, " {} ", op.symbol())?;
                b.fmt_prec(f, lb)?;
            }
        }
        if parens {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl std::fmt::Display for NumExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("attribute {0} missing from situation")]
    MissingAttribute(AttributePath),
    #[error("type mismatch evaluating {0}")]
    TypeMismatch(String),
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
}

/// Evaluates a condition against a situation. Pure: same inputs, same result.
///
/// Numeric comparison is exact on ints and IEEE ordering on floats (a NaN
/// reading makes every ordering comparison false).
pub fn eval_condition(expr: &BoolExpr, s: &Situation) -> Result<bool, EvalError> {
    match expr {
        BoolExpr::Cmp { path, op, value } => {
            let actual = s
                .get(path)
                .ok_or_else(|| EvalError::MissingAttribute(path.clone()))?;
            compare(actual, *op, value)
                .ok_or_else(|| EvalError::TypeMismatch(format!("{path} {} {value}", op.symbol())))
        }
        BoolExpr::And(a, b) => Ok(eval_condition(a, s)? && eval_condition(b, s)?),
        BoolExpr::Or(a, b) => Ok(eval_condition(a, s)? || eval_condition(b, s)?),
        BoolExpr::Not(e) => Ok(!eval_condition(e, s)?),
    }
}

fn apply_ord(ord: std::cmp::Ordering, op: CmpOp) -> bool {
    use std::cmp::Ordering;
    match op {
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
    }
}

fn compare(actual: &Value, op: CmpOp, literal: &Value) -> Option<bool> {
    match (actual, literal) {
        (Value::Int(a), Value::Int(b)) => Some(apply_ord(a.cmp(b), op)),
        (a, b) if a.is_numeric() && b.is_numeric() => {
            let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            match x.partial_cmp(&y) {
                Some(ord) => Some(apply_ord(ord, op)),
                // NaN: every ordering is false, equality is false, inequality true
                None => Some(matches!(op, CmpOp::Ne)),
            }
        }
        (Value::Bool(a), Value::Bool(b)) => match op {
            CmpOp::Eq => Some(a == b),
            CmpOp::Ne => Some(a != b),
            _ => None,
        },
        (Value::Str(a), Value::Str(b)) => match op {
            CmpOp::Eq => Some(a == b),
            CmpOp::Ne => Some(a != b),
            _ => None,
        },
        _ => None,
    }
}

/// Evaluates an assignment right-hand side against a situation.
pub fn eval_num(expr: &NumExpr, s: &Situation) -> Result<Value, EvalError> {
    match expr {
        NumExpr::Lit(v) => Ok(v.clone()),
        NumExpr::Path(p) => s
            .get(p)
            .cloned()
            .ok_or_else(|| EvalError::MissingAttribute(p.clone())),
        NumExpr::Neg(e) => match eval_num(e, s)? {
            Value::Int(n) => Ok(Value::Int(
                n.checked_neg()
                    .ok_or_else(|| EvalError::Arithmetic("integer overflow".into()))?,
            )),
            Value::Float(x) => Ok(Value::Float(-x)),
            other => Err(EvalError::TypeMismatch(format!(
                "cannot negate {}",
                other.primitive_type()
            ))),
        },
        NumExpr::Bin(a, op, b) => {
            let va = eval_num(a, s)?;
            let vb = eval_num(b, s)?;
            match (&va, &vb) {
                (Value::Int(x), Value::Int(y)) => {
                    let r = match op {
                        ArithOp::Add => x.checked_add(*y),
                        ArithOp::Sub => x.checked_sub(*y),
                        ArithOp::Mul => x.checked_mul(*y),
                        ArithOp::Div => {
                            if *y == 0 {
                                return Err(EvalError::Arithmetic("integer division by zero".into()));
                            }
                            x.checked_div(*y)
                        }
                    };
                    r.map(Value::Int)
                        .ok_or_else(|| EvalError::Arithmetic("integer overflow".into()))
                }
                _ if va.is_numeric() && vb.is_numeric() => {
                    let (x, y) = (va.as_f64().unwrap(), vb.as_f64().unwrap());
                    let r = match op {
                        ArithOp::Add => x + y,
                        ArithOp::Sub => x - y,
                        ArithOp::Mul => x * y,
                        ArithOp::Div => x / y,
                    };
                    Ok(Value::Float(r))
                }
                _ => Err(EvalError::TypeMismatch(format!(
                    "arithmetic `{}` over non-numeric values",
                    op.symbol()
                ))),
            }
        }
    }
}

/// Checks one comparison for type correctness and normalizes the literal to
/// the attribute's type (int literals widen on float attributes). Returns
/// the normalized literal.
pub(crate) fn check_cmp(
    path: &AttributePath,
    op: CmpOp,
    value: &Value,
    attr_ty: PrimitiveType,
) -> Result<Value, String> {
    if op.is_ordering() {
        if !attr_ty.is_numeric() {
            return Err(format!(
                "ordering comparison `{}` on non-numeric attribute {path} ({attr_ty})",
                op.symbol()
            ));
        }
        if !value.is_numeric() {
            return Err(format!(
                "ordering comparison of {path} against a {} literal",
                value.primitive_type()
            ));
        }
    }
    value.coerce_to(attr_ty).ok_or_else(|| {
        format!(
            "comparison literal {value} has type {}, attribute {path} has type {attr_ty}",
            value.primitive_type()
        )
    })
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parses and type-checks a boolean expression at the cursor.
pub(crate) fn parse_bool_expr(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<BoolExpr, ParseError> {
    parse_or(cur, vocab)
}

fn parse_or(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<BoolExpr, ParseError> {
    let mut lhs = parse_and(cur, vocab)?;
    while cur.accept_punct("||") {
        let rhs = parse_and(cur, vocab)?;
        lhs = BoolExpr::Or(Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_and(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<BoolExpr, ParseError> {
    let mut lhs = parse_unary(cur, vocab)?;
    while cur.accept_punct("&&") {
        let rhs = parse_unary(cur, vocab)?;
        lhs = BoolExpr::And(Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_unary(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<BoolExpr, ParseError> {
    if cur.accept_punct("!") {
        let inner = parse_unary(cur, vocab)?;
        return Ok(BoolExpr::Not(Box::new(inner)));
    }
    if cur.accept_punct("(") {
        let inner = parse_or(cur, vocab)?;
        cur.expect_punct(")")?;
        return Ok(inner);
    }
    parse_cmp(cur, vocab)
}

fn parse_cmp(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<BoolExpr, ParseError> {
    let pos = cur.pos();
    let path = crate::domain::parse_path(cur)?;
    let meta = vocab
        .meta(&path)
        .map_err(|e| ParseError::new(pos, e.to_string()))?;
    let op = if cur.accept_punct("<=") {
        CmpOp::Le
    } else if cur.accept_punct(">=") {
        CmpOp::Ge
    } else if cur.accept_punct("==") {
        CmpOp::Eq
    } else if cur.accept_punct("!=") {
        CmpOp::Ne
    } else if cur.accept_punct("<") {
        CmpOp::Lt
    } else if cur.accept_punct(">") {
        CmpOp::Gt
    } else {
        return Err(cur.expected("comparison operator"));
    };
    let lit_pos = cur.pos();
    let value = parse_literal(cur)?;
    let value = check_cmp(&path, op, &value, meta.ty)
        .map_err(|msg| ParseError::new(lit_pos, msg))?;
    Ok(BoolExpr::Cmp { path, op, value })
}

/// Parses a literal: number (possibly signed), `true`/`false`, or string.
pub(crate) fn parse_literal(cur: &mut Cursor) -> Result<Value, ParseError> {
    match cur.peek().map(|t| t.tok.clone()) {
        Some(Tok::Ident(s)) if s == "true" => {
            cur.next();
            Ok(Value::Bool(true))
        }
        Some(Tok::Ident(s)) if s == "false" => {
            cur.next();
            Ok(Value::Bool(false))
        }
        Some(Tok::Str(s)) => {
            cur.next();
            Ok(Value::Str(s))
        }
        Some(Tok::Int(_)) | Some(Tok::Float(_)) | Some(Tok::Punct("-")) => {
            let (is_float, x, _) = cur.expect_number("literal")?;
            if is_float {
                Ok(Value::Float(x))
            } else {
                Ok(Value::Int(x as i64))
            }
        }
        _ => Err(cur.expected("literal")),
    }
}

/// Parses an arithmetic expression (no type check; the assignment site
/// checks against its target).
pub(crate) fn parse_num_expr(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<NumExpr, ParseError> {
    parse_add(cur, vocab)
}

fn parse_add(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<NumExpr, ParseError> {
    let mut lhs = parse_mul(cur, vocab)?;
    loop {
        let op = if cur.accept_punct("+") {
            ArithOp::Add
        } else if cur.accept_punct("-") {
            ArithOp::Sub
        } else {
            break;
        };
        let rhs = parse_mul(cur, vocab)?;
        lhs = NumExpr::Bin(Box::new(lhs), op, Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_mul(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<NumExpr, ParseError> {
    let mut lhs = parse_atom(cur, vocab)?;
    loop {
        let op = if cur.accept_punct("*") {
            ArithOp::Mul
        } else if cur.accept_punct("/") {
            ArithOp::Div
        } else {
            break;
        };
        let rhs = parse_atom(cur, vocab)?;
        lhs = NumExpr::Bin(Box::new(lhs), op, Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_atom(cur: &mut Cursor, vocab: &dyn Vocab) -> Result<NumExpr, ParseError> {
    if cur.accept_punct("(") {
        let inner = parse_add(cur, vocab)?;
        cur.expect_punct(")")?;
        return Ok(inner);
    }
    if cur.accept_punct("-") {
        let inner = parse_atom(cur, vocab)?;
        return Ok(NumExpr::Neg(Box::new(inner)));
    }
    if crate::domain::peek_path(cur) {
        let pos = cur.pos();
        let path = crate::domain::parse_path(cur)?;
        vocab
            .meta(&path)
            .map_err(|e| ParseError::new(pos, e.to_string()))?;
        return Ok(NumExpr::Path(path));
    }
    let lit = parse_literal(cur)?;
    Ok(NumExpr::Lit(lit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_domain_model;

    fn model() -> DomainModel {
        parse_domain_model(
            "model M { class C { a: float range [0.0, 10.0]; n: int; b: boolean; s: string; } }",
        )
        .unwrap()
    }

    fn parse_cond(src: &str) -> BoolExpr {
        let m = model();
        let mut cur = Cursor::new(src).unwrap();
        parse_bool_expr(&mut cur, &m).unwrap()
    }

    fn sit(pairs: &[(&str, Value)]) -> Situation {
        let mut s = Situation::new(1);
        for (name, v) in pairs {
            s.set(AttributePath::new("C", *name), v.clone());
        }
        s
    }

    #[test]
    fn strict_inequality_boundary() {
        let e = parse_cond("C.a > 5.0");
        assert_eq!(eval_condition(&e, &sit(&[("a", Value::Float(5.1))])), Ok(true));
        assert_eq!(eval_condition(&e, &sit(&[("a", Value::Float(5.0))])), Ok(false));
    }

    #[test]
    fn conjunction_and_negation() {
        let e = parse_cond("C.n > 1 && C.b == true");
        let s = sit(&[("n", Value::Int(2)), ("b", Value::Bool(false))]);
        assert_eq!(eval_condition(&e, &s), Ok(false));
        let e = parse_cond("!(C.n > 1 || C.b == true)");
        let s = sit(&[("n", Value::Int(0)), ("b", Value::Bool(false))]);
        assert_eq!(eval_condition(&e, &s), Ok(true));
    }

    #[test]
    fn missing_attribute_reported() {
        let e = parse_cond("C.a > 5.0");
        assert_eq!(
            eval_condition(&e, &sit(&[])),
            Err(EvalError::MissingAttribute(AttributePath::new("C", "a")))
        );
    }

    #[test]
    fn int_literal_widens_on_float_attribute() {
        let e = parse_cond("C.a > 5");
        match &e {
            BoolExpr::Cmp { value, .. } => assert_eq!(value, &Value::Float(5.0)),
            _ => panic!(),
        }
    }

    #[test]
    fn type_errors_at_load() {
        let m = model();
        for bad in ["C.s > 1", "C.b >= true", "C.a == true", "C.n == 1.5"] {
            let mut cur = Cursor::new(bad).unwrap();
            assert!(parse_bool_expr(&mut cur, &m).is_err(), "{bad} should fail");
        }
    }

    #[test]
    fn string_equality() {
        let e = parse_cond("C.s == \"run\"");
        assert_eq!(
            eval_condition(&e, &sit(&[("s", Value::Str("run".into()))])),
            Ok(true)
        );
    }

    #[test]
    fn arithmetic_instantiation() {
        let m = model();
        let mut cur = Cursor::new("C.a - 2").unwrap();
        let e = parse_num_expr(&mut cur, &m).unwrap();
        let s = sit(&[("a", Value::Float(30.0))]);
        assert_eq!(eval_num(&e, &s), Ok(Value::Float(28.0)));
        assert_eq!(e.infer_type(&m).unwrap(), PrimitiveType::Float);
    }

    #[test]
    fn integer_arithmetic_stays_integer() {
        let m = model();
        let mut cur = Cursor::new("C.n * 2 + 1").unwrap();
        let e = parse_num_expr(&mut cur, &m).unwrap();
        assert_eq!(e.infer_type(&m).unwrap(), PrimitiveType::Int);
        assert_eq!(eval_num(&e, &sit(&[("n", Value::Int(3))])), Ok(Value::Int(7)));
    }

    #[test]
    fn division_by_zero_is_reported_for_ints() {
        let m = model();
        let mut cur = Cursor::new("C.n / 0").unwrap();
        let e = parse_num_expr(&mut cur, &m).unwrap();
        assert!(matches!(
            eval_num(&e, &sit(&[("n", Value::Int(3))])),
            Err(EvalError::Arithmetic(_))
        ));
    }

    #[test]
    fn display_parses_back() {
        for src in [
            "C.a > 5.0 && (C.n < 3 || C.b == false)",
            "!(C.a <= 1.0) || C.s != \"x\"",
            "C.a >= -2.5",
        ] {
            let e = parse_cond(src);
            let printed = e.to_string();
            let reparsed = parse_cond(&printed);
            assert_eq!(e, reparsed, "{src} -> {printed}");
        }
    }

    #[test]
    fn precedence_printing_keeps_structure() {
        // (a || b) && c must keep its parens
        let a = BoolExpr::cmp(AttributePath::new("C", "n"), CmpOp::Eq, Value::Int(1));
        let b = BoolExpr::cmp(AttributePath::new("C", "n"), CmpOp::Eq, Value::Int(2));
        let c = BoolExpr::cmp(AttributePath::new("C", "n"), CmpOp::Eq, Value::Int(3));
        let e = BoolExpr::And(Box::new(BoolExpr::Or(Box::new(a), Box::new(b))), Box::new(c));
        let printed = e.to_string();
        assert_eq!(printed, "(C.n == 1 || C.n == 2) && C.n == 3");
        assert_eq!(parse_cond(&printed), e);
    }
}
