//! The domain model language (`.dm` files).
//!
//! A domain model declares the typed vocabulary every case base and
//! similarity specification references: named classes with typed, optionally
//! ranged attributes. Numeric ranges double as the normalization basis for
//! similarity scoring.
//!
//! Grammar sketch:
//!
//! ```text
//! model <id> {
//!   class <id> {
//!     <id> : (int|float|boolean|string) [range "[" num "," num "]"] [unit <string>] ;
//!     ...
//!   }
//!   ...
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diag::ParseError;
use crate::lex::{Cursor, Tok};
use crate::value::PrimitiveType;

/// A `Class.attribute` reference into a domain model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct AttributePath {
    pub class: String,
    pub attribute: String,
}

impl AttributePath {
    pub fn new(class: impl Into<String>, attribute: impl Into<String>) -> Self {
        Self {
            class: class.into(),
            attribute: attribute.into(),
        }
    }

    /// Parses the dotted form used in CSV headers and log records.
    pub fn parse_dotted(s: &str) -> Option<Self> {
        let (class, attribute) = s.split_once('.')?;
        if class.is_empty() || attribute.is_empty() || attribute.contains('.') {
            return None;
        }
        Some(Self::new(class, attribute))
    }
}

impl std::fmt::Display for AttributePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.class, self.attribute)
    }
}

impl From<AttributePath> for String {
    fn from(p: AttributePath) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for AttributePath {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        AttributePath::parse_dotted(&s).ok_or_else(|| format!("not a Class.attribute path: `{s}`"))
    }
}

/// One attribute of a class.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDef {
    pub name: String,
    pub ty: PrimitiveType,
    pub range: Option<(f64, f64)>,
    pub unit: Option<String>,
}

/// A flat class: a name plus its attributes, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    pub name: String,
    pub attributes: Vec<AttributeDef>,
}

impl ClassDef {
    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

/// A parsed, validated domain model. Immutable after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainModel {
    pub name: String,
    pub classes: Vec<ClassDef>,
}

/// Resolved information about one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeInfo<'a> {
    pub path: AttributePath,
    pub ty: PrimitiveType,
    pub range: Option<(f64, f64)>,
    pub unit: Option<&'a str>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ResolveError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("class `{0}` has no attribute `{1}`")]
    UnknownAttribute(String, String),
}

impl DomainModel {
    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Resolves a path to its attribute's type, range, and unit.
    pub fn resolve(&self, path: &AttributePath) -> Result<AttributeInfo<'_>, ResolveError> {
        let class = self
            .class(&path.class)
            .ok_or_else(|| ResolveError::UnknownClass(path.class.clone()))?;
        let attr = class.attribute(&path.attribute).ok_or_else(|| {
            ResolveError::UnknownAttribute(path.class.clone(), path.attribute.clone())
        })?;
        Ok(AttributeInfo {
            path: path.clone(),
            ty: attr.ty,
            range: attr.range,
            unit: attr.unit.as_deref(),
        })
    }

    /// All attribute paths in declaration order.
    pub fn paths(&self) -> Vec<AttributePath> {
        self.classes
            .iter()
            .flat_map(|c| {
                c.attributes
                    .iter()
                    .map(|a| AttributePath::new(&c.name, &a.name))
            })
            .collect()
    }

    /// Renders the model back to `.dm` source. Parsing the output yields a
    /// structurally identical model.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model {} {{", self.name);
        for class in &self.classes {
            let _ = writeln!(out, "  class {} {{", class.name);
            for attr in &class.attributes {
                let _ = write!(out, "    {}: {}", attr.name, attr.ty);
                if let Some((lo, hi)) = attr.range {
                    let _ = write!(out, " range [{lo:?}, {hi:?}]");
                }
                if let Some(unit) = &attr.unit {
                    let _ = write!(out, " unit \"{unit}\"");
                }
                out.push_str(";\n");
            }
            out.push_str("  }\n");
        }
        out.push_str("}\n");
        out
    }
}

/// A set of loaded domain models, keyed by model name. Case bases and
/// similarity specs resolve their imports against this.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    models: BTreeMap<String, DomainModel>,
}

impl ModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: DomainModel) {
        self.models.insert(model.name.clone(), model);
    }

    pub fn get(&self, name: &str) -> Option<&DomainModel> {
        self.models.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(|s| s.as_str())
    }

    /// Resolves a path against the imported subset of models.
    pub fn resolve_in(
        &self,
        imports: &[String],
        path: &AttributePath,
    ) -> Result<AttributeInfo<'_>, ResolveError> {
        for name in imports {
            if let Some(model) = self.models.get(name) {
                match model.resolve(path) {
                    Ok(info) => return Ok(info),
                    Err(ResolveError::UnknownClass(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        Err(ResolveError::UnknownClass(path.class.clone()))
    }
}

/// Parses `.dm` source into a validated domain model.
pub fn parse_domain_model(source: &str) -> Result<DomainModel, ParseError> {
    let mut cur = Cursor::new(source)?;
    cur.expect_kw("model")
        .map_err(|_| cur.error("expected `model <name> { ... }`"))?;
    let (name, _) = cur.expect_ident("model name")?;
    cur.expect_punct("{")?;

    let mut classes: Vec<ClassDef> = Vec::new();
    while !cur.accept_punct("}") {
        if cur.at_end() {
            return Err(cur.expected("`class` or `}`"));
        }
        let class = parse_class(&mut cur)?;
        if classes.iter().any(|c| c.name == class.name) {
            return Err(cur.error(format!("duplicate class name `{}`", class.name)));
        }
        classes.push(class);
    }
    if !cur.at_end() {
        return Err(cur.expected("end of file"));
    }
    if classes.is_empty() {
        return Err(ParseError::at(1, 1, "no class definitions"));
    }
    Ok(DomainModel { name, classes })
}

fn parse_class(cur: &mut Cursor) -> Result<ClassDef, ParseError> {
    cur.expect_kw("class")?;
    let (name, _) = cur.expect_ident("class name")?;
    cur.expect_punct("{")?;
    let mut attributes: Vec<AttributeDef> = Vec::new();
    while !cur.accept_punct("}") {
        if cur.at_end() {
            return Err(cur.expected("attribute or `}`"));
        }
        let (attr_name, attr_pos) = cur.expect_ident("attribute name")?;
        if attributes.iter().any(|a| a.name == attr_name) {
            return Err(ParseError::new(
                attr_pos,
                format!("duplicate attribute `{attr_name}` in class `{name}`"),
            ));
        }
        cur.expect_punct(":")?;
        let (ty_name, ty_pos) = cur.expect_ident("type (int, float, boolean, string)")?;
        let ty = PrimitiveType::from_keyword(&ty_name).ok_or_else(|| {
            ParseError::new(ty_pos, format!("unknown type keyword `{ty_name}`"))
        })?;
        let mut range = None;
        if cur.peek_kw("range") {
            let range_pos = cur.pos();
            cur.next();
            cur.expect_punct("[")?;
            let (_, lo, _) = cur.expect_number("range lower bound")?;
            cur.expect_punct(",")?;
            let (_, hi, _) = cur.expect_number("range upper bound")?;
            cur.expect_punct("]")?;
            if !ty.is_numeric() {
                return Err(ParseError::new(
                    range_pos,
                    format!("range on non-numeric attribute `{attr_name}`"),
                ));
            }
            if !(lo < hi) {
                return Err(ParseError::new(
                    range_pos,
                    format!("malformed range [{lo}, {hi}]: min must be less than max"),
                ));
            }
            range = Some((lo, hi));
        }
        let mut unit = None;
        if cur.peek_kw("unit") {
            cur.next();
            let (u, _) = cur.expect_string("unit string")?;
            unit = Some(u);
        }
        cur.expect_punct(";")?;
        attributes.push(AttributeDef {
            name: attr_name,
            ty,
            range,
            unit,
        });
    }
    Ok(ClassDef { name, attributes })
}

/// Convenience used by parsers of the other languages: reads an
/// `Ident . Ident` path at the cursor.
pub(crate) fn parse_path(cur: &mut Cursor) -> Result<AttributePath, ParseError> {
    let (class, _) = cur.expect_ident("attribute path (Class.attribute)")?;
    cur.expect_punct(".")?;
    let (attribute, _) = cur.expect_ident("attribute name after `.`")?;
    Ok(AttributePath::new(class, attribute))
}

pub(crate) fn peek_path(cur: &Cursor) -> bool {
    matches!(cur.peek().map(|t| &t.tok), Some(Tok::Ident(_)))
        && matches!(cur.peek2().map(|t| &t.tok), Some(Tok::Punct(".")))
}
