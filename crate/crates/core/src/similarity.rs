//! The case similarity language (`.cs` files) and the scoring machinery.
//!
//! Similarity follows the local-global principle: each attribute referenced
//! by cases gets a local metric, and one global metric combines the local
//! results. Scores are distance-like rationals in `[0, 1]`: `0` means
//! identical, larger means less similar.
//!
//! Built-in local metrics (`range` is the attribute's normalization range,
//! from the domain model or overridden per attribute in the `.cs` file):
//!
//! - `absolute`: `min(1, |current - reference| / (max - min))`
//! - `squared`:  `min(1, ((current - reference) / (max - min))^2)`
//! - `manual <name>`: dispatch to a plugin registered with the runtime,
//!   result clamped to `[0, 1]`
//!
//! The global metric is either `weighted` (weights normalized to sum to 1
//! at load time) or `manual <name>`.
//!
//! To compare a situation against a case, the case's condition is first
//! reduced to a *reference point*: `attr == v` pins `v`, a two-sided bound
//! pins the interval midpoint, a one-sided bound pins the bound value
//! itself. Disjunctive or negated conditions have no reference point; such
//! cases participate in retrieval only via exact condition evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::casebase::Case;
use crate::diag::ParseError;
use crate::domain::{parse_path, AttributePath, ModelSet};
use crate::expr::{BoolExpr, CmpOp, ImportedVocab, Vocab};
use crate::lex::Cursor;
use crate::situation::Situation;
use crate::value::{PrimitiveType, Value};

/// A distance-like similarity score in `[0, 1]`; `0` means identical.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Score(f64);

impl Score {
    pub const ZERO: Score = Score(0.0);

    /// Clamps into `[0, 1]`; NaN collapses to 1 (maximally dissimilar).
    pub fn clamped(x: f64) -> Self {
        if x.is_nan() {
            Score(1.0)
        } else {
            Score(x.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl std::fmt::Display for Score {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalMetricKind {
    Absolute,
    Squared,
    Manual,
}

/// A local similarity metric bound to one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMetric {
    pub kind: LocalMetricKind,
    /// Plugin name for `manual` metrics.
    pub plugin: Option<String>,
    /// Effective normalization range; always present for absolute/squared.
    pub range: Option<(f64, f64)>,
    /// True when the range was overridden in the `.cs` file rather than
    /// taken from the domain model (kept for printing).
    pub range_overridden: bool,
}

/// The global combination of local results.
#[derive(Debug, Clone, PartialEq)]
pub enum GlobalMetric {
    /// Weights normalized to sum to 1 at load time.
    Weighted(BTreeMap<AttributePath, f64>),
    Manual(String),
}

/// A parsed, resolved similarity specification.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySpec {
    pub name: String,
    pub imports: Vec<String>,
    pub locals: BTreeMap<AttributePath, LocalMetric>,
    pub global: GlobalMetric,
}

/// Reference values extracted from a case's condition, one per constrained
/// attribute.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReferencePoint {
    pub values: BTreeMap<AttributePath, Value>,
}

impl ReferencePoint {
    pub fn get(&self, path: &AttributePath) -> Option<&Value> {
        self.values.get(path)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExtractError {
    #[error("condition not reference-extractable: {0}")]
    NotExtractable(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricError {
    #[error("attribute {0} has no normalization range")]
    MissingRange(AttributePath),
    #[error("manual metric plugin `{0}` is not registered with the runtime")]
    PluginUnbound(String),
    #[error("plugin `{0}` failed: {1}")]
    PluginFailed(String, String),
    #[error("attribute {0} missing from situation")]
    MissingAttribute(AttributePath),
    #[error("cannot score {0}: {1}")]
    TypeMismatch(AttributePath, String),
    #[error("attribute {0} is weighted but has no local metric")]
    NoLocalMetric(AttributePath),
}

// ---------------------------------------------------------------------------
// Plugins
// ---------------------------------------------------------------------------

/// A handcrafted local similarity analysis, bound to `manual` metrics by
/// name at runtime.
pub trait LocalSimilarityPlugin: Send + Sync {
    fn score(&self, current: &Value, reference: &Value) -> Result<f64, String>;

    /// Plugins that are not reentrant force retrieval to stay sequential.
    fn reentrant(&self) -> bool {
        true
    }
}

/// A handcrafted global combination over the computed local scores.
pub trait GlobalSimilarityPlugin: Send + Sync {
    fn combine(&self, locals: &BTreeMap<AttributePath, f64>) -> Result<f64, String>;
}

struct LocalFn<F>(F);

impl<F> LocalSimilarityPlugin for LocalFn<F>
where
    F: Fn(&Value, &Value) -> Result<f64, String> + Send + Sync,
{
    fn score(&self, current: &Value, reference: &Value) -> Result<f64, String> {
        (self.0)(current, reference)
    }
}

/// Named similarity plugins. Loading a spec with a `manual` metric succeeds
/// without the plugin; binding fails at scoring time if it is missing.
#[derive(Default, Clone)]
pub struct PluginRegistry {
    locals: BTreeMap<String, Arc<dyn LocalSimilarityPlugin>>,
    globals: BTreeMap<String, Arc<dyn GlobalSimilarityPlugin>>,
}

impl PluginRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_local(&mut self, name: impl Into<String>, plugin: Arc<dyn LocalSimilarityPlugin>) {
        self.locals.insert(name.into(), plugin);
    }

    pub fn register_local_fn<F>(&mut self, name: impl Into<String>, f: F)
    where
        F: Fn(&Value, &Value) -> Result<f64, String> + Send + Sync + 'static,
    {
        self.locals.insert(name.into(), Arc::new(LocalFn(f)));
    }

    pub fn register_global(&mut self, name: impl Into<String>, plugin: Arc<dyn GlobalSimilarityPlugin>) {
        self.globals.insert(name.into(), plugin);
    }

    pub fn local(&self, name: &str) -> Option<&Arc<dyn LocalSimilarityPlugin>> {
        self.locals.get(name)
    }

    pub fn global(&self, name: &str) -> Option<&Arc<dyn GlobalSimilarityPlugin>> {
        self.globals.get(name)
    }
}

impl std::fmt::Debug for PluginRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginRegistry")
            .field("locals", &self.locals.keys().collect::<Vec<_>>())
            .field("globals", &self.globals.keys().collect::<Vec<_>>())
            .finish()
    }
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Local similarity between the current and reference value of one
/// attribute. Symmetric in `(current, reference)` for the built-in metrics.
///
/// Non-numeric values fall back to equality: 0 when equal, 1 otherwise.
pub fn local_similarity(
    metric: &LocalMetric,
    path: &AttributePath,
    current: &Value,
    reference: &Value,
    plugins: &PluginRegistry,
) -> Result<Score, MetricError> {
    match metric.kind {
        LocalMetricKind::Manual => {
            let name = metric.plugin.as_deref().unwrap_or("");
            let plugin = plugins
                .local(name)
                .ok_or_else(|| MetricError::PluginUnbound(name.to_string()))?;
            let raw = plugin
                .score(current, reference)
                .map_err(|e| MetricError::PluginFailed(name.to_string(), e))?;
            Ok(Score::clamped(raw))
        }
        LocalMetricKind::Absolute | LocalMetricKind::Squared => {
            match (current.as_f64(), reference.as_f64()) {
                (Some(x), Some(y)) => {
                    let (lo, hi) = metric
                        .range
                        .ok_or_else(|| MetricError::MissingRange(path.clone()))?;
                    let normalized = (x - y).abs() / (hi - lo);
                    let score = match metric.kind {
                        LocalMetricKind::Absolute => normalized,
                        LocalMetricKind::Squared => normalized * normalized,
                        LocalMetricKind::Manual => unreachable!(),
                    };
                    Ok(Score::clamped(score.min(1.0)))
                }
                _ => {
                    if current.primitive_type() != reference.primitive_type() {
                        return Err(MetricError::TypeMismatch(
                            path.clone(),
                            format!(
                                "current is {}, reference is {}",
                                current.primitive_type(),
                                reference.primitive_type()
                            ),
                        ));
                    }
                    // equality contributes 0 or 1 for boolean/string values
                    Ok(if current == reference { Score::ZERO } else { Score::clamped(1.0) })
                }
            }
        }
    }
}

/// Weighted (or manual) combination of the local similarities between a
/// situation and a reference point.
///
/// Weighted attributes the reference point does not constrain contribute a
/// local score of 0 (the case is indifferent to them); attributes in the
/// reference point that carry no weight contribute nothing. Every weighted
/// attribute constrained by the reference must be present in the situation.
pub fn global_similarity(
    spec: &SimilaritySpec,
    s: &Situation,
    reference: &ReferencePoint,
    plugins: &PluginRegistry,
) -> Result<Score, MetricError> {
    match &spec.global {
        GlobalMetric::Weighted(weights) => {
            let mut total = 0.0;
            for (path, weight) in weights {
                let Some(ref_val) = reference.get(path) else {
                    continue; // unconstrained attribute: local distance 0
                };
                let metric = spec
                    .locals
                    .get(path)
                    .ok_or_else(|| MetricError::NoLocalMetric(path.clone()))?;
                let current = s
                    .get(path)
                    .ok_or_else(|| MetricError::MissingAttribute(path.clone()))?;
                let local = local_similarity(metric, path, current, ref_val, plugins)?;
                total += weight * local.value();
            }
            Ok(Score::clamped(total))
        }
        GlobalMetric::Manual(name) => {
            let plugin = plugins
                .global(name)
                .ok_or_else(|| MetricError::PluginUnbound(name.clone()))?;
            let mut locals = BTreeMap::new();
            for (path, metric) in &spec.locals {
                let Some(ref_val) = reference.get(path) else {
                    continue;
                };
                let current = s
                    .get(path)
                    .ok_or_else(|| MetricError::MissingAttribute(path.clone()))?;
                let local = local_similarity(metric, path, current, ref_val, plugins)?;
                locals.insert(path.clone(), local.value());
            }
            let raw = plugin
                .combine(&locals)
                .map_err(|e| MetricError::PluginFailed(name.clone(), e))?;
            Ok(Score::clamped(raw))
        }
    }
}

// ---------------------------------------------------------------------------
// Reference extraction
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct Interval {
    eq: Option<Value>,
    lower: Option<f64>,
    upper: Option<f64>,
    ty: PrimitiveType,
}

/// Extracts the reference point of a case condition.
///
/// The condition must be a conjunction of comparisons. Per attribute:
/// `== v` pins `v`; a lower bound `> u` (or `>=`) together with an upper
/// bound `< v` (or `<=`) pins the midpoint `(u + v) / 2`; a single
/// one-sided bound pins the bound value itself. `!=`, disjunctions, and
/// negations make the condition non-extractable.
pub fn extract_reference(case: &Case) -> Result<ReferencePoint, ExtractError> {
    let mut comparisons = Vec::new();
    flatten_conjunction(&case.condition, &mut comparisons)?;

    let mut intervals: BTreeMap<AttributePath, Interval> = BTreeMap::new();
    for (path, op, value) in comparisons {
        let entry = intervals.entry(path.clone()).or_insert_with(|| Interval {
            eq: None,
            lower: None,
            upper: None,
            ty: value.primitive_type(),
        });
        match op {
            CmpOp::Eq => {
                if let Some(prev) = &entry.eq {
                    if prev != &value {
                        return Err(ExtractError::NotExtractable(format!(
                            "contradictory equalities on {path}"
                        )));
                    }
                }
                entry.eq = Some(value);
            }
            CmpOp::Ne => {
                return Err(ExtractError::NotExtractable(format!(
                    "`!=` comparison on {path} pins no reference value"
                )));
            }
            CmpOp::Lt | CmpOp::Le => {
                let v = value.as_f64().ok_or_else(|| {
                    ExtractError::NotExtractable(format!("ordering on non-numeric {path}"))
                })?;
                entry.upper = Some(entry.upper.map_or(v, |u| u.min(v)));
            }
            CmpOp::Gt | CmpOp::Ge => {
                let v = value.as_f64().ok_or_else(|| {
                    ExtractError::NotExtractable(format!("ordering on non-numeric {path}"))
                })?;
                entry.lower = Some(entry.lower.map_or(v, |l| l.max(v)));
            }
        }
    }

    let mut point = ReferencePoint::default();
    for (path, interval) in intervals {
        let value = if let Some(eq) = interval.eq {
            eq
        } else {
            let x = match (interval.lower, interval.upper) {
                (Some(lo), Some(hi)) => (lo + hi) / 2.0,
                (Some(lo), None) => lo,
                (None, Some(hi)) => hi,
                (None, None) => unreachable!("interval entries always carry a constraint"),
            };
            numeric_value(x, interval.ty)
        };
        point.values.insert(path, value);
    }
    Ok(point)
}

fn numeric_value(x: f64, ty: PrimitiveType) -> Value {
    if ty == PrimitiveType::Int && x.fract() == 0.0 {
        Value::Int(x as i64)
    } else {
        Value::Float(x)
    }
}

fn flatten_conjunction(
    expr: &BoolExpr,
    out: &mut Vec<(AttributePath, CmpOp, Value)>,
) -> Result<(), ExtractError> {
    match expr {
        BoolExpr::Cmp { path, op, value } => {
            out.push((path.clone(), *op, value.clone()));
            Ok(())
        }
        BoolExpr::And(a, b) => {
            flatten_conjunction(a, out)?;
            flatten_conjunction(b, out)
        }
        BoolExpr::Or(..) => Err(ExtractError::NotExtractable(
            "condition contains a disjunction".into(),
        )),
        BoolExpr::Not(..) => Err(ExtractError::NotExtractable(
            "condition contains a negation".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Parsing and printing
// ---------------------------------------------------------------------------

/// Parses `.cs` source against already-loaded domain models. Weights are
/// normalized to sum to 1 here, at load time.
pub fn parse_similarity_spec(source: &str, models: &ModelSet) -> Result<SimilaritySpec, ParseError> {
    let mut cur = Cursor::new(source)?;
    cur.expect_kw("similarity")
        .map_err(|_| cur.error("expected `similarity <name> { ... }`"))?;
    let (name, _) = cur.expect_ident("similarity model name")?;
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

    let mut locals: BTreeMap<AttributePath, LocalMetric> = BTreeMap::new();
    while cur.peek_kw("local") {
        cur.next();
        let path_pos = cur.pos();
        let path = parse_path(&mut cur)?;
        let meta = vocab
            .meta(&path)
            .map_err(|e| ParseError::new(path_pos, e.to_string()))?;
        if locals.contains_key(&path) {
            return Err(ParseError::new(
                path_pos,
                format!("duplicate local metric for {path}"),
            ));
        }
        let kind_pos = cur.pos();
        let (kind, plugin) = if cur.accept_kw("absolute") {
            (LocalMetricKind::Absolute, None)
        } else if cur.accept_kw("squared") {
            (LocalMetricKind::Squared, None)
        } else if cur.accept_kw("manual") {
            let (plugin, _) = cur.expect_ident("plugin name")?;
            (LocalMetricKind::Manual, Some(plugin))
        } else {
            return Err(cur.expected("`absolute`, `squared`, or `manual <plugin>`"));
        };
        let mut range = meta.range;
        let mut range_overridden = false;
        if cur.peek_kw("range") {
            let range_pos = cur.pos();
            cur.next();
            cur.expect_punct("[")?;
            let (_, lo, _) = cur.expect_number("range lower bound")?;
            cur.expect_punct(",")?;
            let (_, hi, _) = cur.expect_number("range upper bound")?;
            cur.expect_punct("]")?;
            if !(lo < hi) {
                return Err(ParseError::new(
                    range_pos,
                    format!("malformed range [{lo}, {hi}]: min must be less than max"),
                ));
            }
            range = Some((lo, hi));
            range_overridden = true;
        }
        cur.expect_punct(";")?;
        if kind != LocalMetricKind::Manual {
            if !meta.ty.is_numeric() {
                return Err(ParseError::new(
                    kind_pos,
                    format!(
                        "{} metric on non-numeric attribute {path} ({})",
                        if kind == LocalMetricKind::Absolute { "absolute" } else { "squared" },
                        meta.ty
                    ),
                ));
            }
            if range.is_none() {
                return Err(ParseError::new(
                    kind_pos,
                    format!(
                        "{path} has no range in the domain model; declare one here with `range [min, max]`"
                    ),
                ));
            }
        }
        locals.insert(
            path,
            LocalMetric {
                kind,
                plugin,
                range,
                range_overridden,
            },
        );
    }

    cur.expect_kw("global")?;
    let global = if cur.accept_kw("weighted") {
        cur.expect_punct("{")?;
        let mut weights: BTreeMap<AttributePath, f64> = BTreeMap::new();
        while !cur.accept_punct("}") {
            if cur.at_end() {
                return Err(cur.expected("weight entry or `}`"));
            }
            let path_pos = cur.pos();
            let path = parse_path(&mut cur)?;
            vocab
                .meta(&path)
                .map_err(|e| ParseError::new(path_pos, e.to_string()))?;
            if !locals.contains_key(&path) {
                return Err(ParseError::new(
                    path_pos,
                    format!("weighted attribute {path} has no local metric"),
                ));
            }
            if weights.contains_key(&path) {
                return Err(ParseError::new(
                    path_pos,
                    format!("duplicate weight for {path}"),
                ));
            }
            cur.expect_kw("weight")?;
            let (_, w, w_pos) = cur.expect_number("weight")?;
            if !(w > 0.0) {
                return Err(ParseError::new(
                    w_pos,
                    format!("weight for {path} must be positive, got {w}"),
                ));
            }
            cur.expect_punct(";")?;
            weights.insert(path, w);
        }
        if weights.is_empty() {
            return Err(cur.error("global weighted metric must list at least one attribute"));
        }
        normalize_weights(&mut weights);
        GlobalMetric::Weighted(weights)
    } else if cur.accept_kw("manual") {
        let (plugin, _) = cur.expect_ident("plugin name")?;
        GlobalMetric::Manual(plugin)
    } else {
        return Err(cur.expected("`weighted` or `manual <plugin>`"));
    };
    cur.expect_punct(";").or_else(|_| {
        // `global weighted { ... }` needs no trailing semicolon
        if matches!(global, GlobalMetric::Weighted(_)) {
            Ok(())
        } else {
            Err(cur.expected("`;`"))
        }
    })?;

    cur.expect_punct("}")?;
    if !cur.at_end() {
        return Err(cur.expected("end of file"));
    }
    Ok(SimilaritySpec {
        name,
        imports,
        locals,
        global,
    })
}

/// Divides by the sum unless it is already 1 within fp tolerance, so that
/// normalization is idempotent and printed specs are byte-stable.
fn normalize_weights(weights: &mut BTreeMap<AttributePath, f64>) {
    let sum: f64 = weights.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        for w in weights.values_mut() {
            *w /= sum;
        }
    }
}

impl SimilaritySpec {
    /// Renders the spec back to `.cs` source (locals and weights in path
    /// order, weights normalized). Re-parsing yields an identical spec.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "similarity {} {{", self.name);
        for import in &self.imports {
            let _ = writeln!(out, "  import {import};");
        }
        out.push('\n');
        for (path, metric) in &self.locals {
            let _ = write!(out, "  local {path} ");
            match metric.kind {
                LocalMetricKind::Absolute => out.push_str("absolute"),
                LocalMetricKind::Squared => out.push_str("squared"),
                LocalMetricKind::Manual => {
                    let _ = write!(out, "manual {}", metric.plugin.as_deref().unwrap_or("?"));
                }
            }
            if metric.range_overridden {
                if let Some((lo, hi)) = metric.range {
                    let _ = write!(out, " range [{lo:?}, {hi:?}]");
                }
            }
            out.push_str(";\n");
        }
        out.push('\n');
        match &self.global {
            GlobalMetric::Weighted(weights) => {
                out.push_str("  global weighted {\n");
                for (path, w) in weights {
                    let _ = writeln!(out, "    {path} weight {w:?};");
                }
                out.push_str("  }\n");
            }
            GlobalMetric::Manual(name) => {
                let _ = writeln!(out, "  global manual {name};");
            }
        }
        out.push_str("}\n");
        out
    }
}
