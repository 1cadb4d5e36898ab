//! Attribute values and their primitive types.

use serde::{Deserialize, Serialize};

/// The primitive types an attribute can have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimitiveType {
    Int,
    Float,
    Boolean,
    String,
}

impl PrimitiveType {
    pub fn is_numeric(self) -> bool {
        matches!(self, PrimitiveType::Int | PrimitiveType::Float)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            PrimitiveType::Int => "int",
            PrimitiveType::Float => "float",
            PrimitiveType::Boolean => "boolean",
            PrimitiveType::String => "string",
        }
    }

    pub fn from_keyword(kw: &str) -> Option<Self> {
        match kw {
            "int" => Some(PrimitiveType::Int),
            "float" => Some(PrimitiveType::Float),
            "boolean" => Some(PrimitiveType::Boolean),
            "string" => Some(PrimitiveType::String),
            _ => None,
        }
    }
}

impl std::fmt::Display for PrimitiveType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.keyword())
    }
}

/// A runtime value: a literal in a model file or a sensor reading in a
/// situation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl Value {
    pub fn primitive_type(&self) -> PrimitiveType {
        match self {
            Value::Int(_) => PrimitiveType::Int,
            Value::Float(_) => PrimitiveType::Float,
            Value::Bool(_) => PrimitiveType::Boolean,
            Value::Str(_) => PrimitiveType::String,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.primitive_type().is_numeric()
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(n) => Some(*n as f64),
            Value::Float(x) => Some(*x),
            _ => None,
        }
    }

    /// Widens an int to a float when `ty` asks for it; leaves everything
    /// else alone. Returns `None` when the value cannot conform to `ty`.
    pub fn coerce_to(&self, ty: PrimitiveType) -> Option<Value> {
        match (self, ty) {
            (Value::Int(n), PrimitiveType::Float) => Some(Value::Float(*n as f64)),
            (v, t) if v.primitive_type() == t => Some(v.clone()),
            _ => None,
        }
    }
}

/// Source-syntax rendering: strings quoted and escaped, floats printed with
/// the shortest representation that round-trips (always containing a `.` or
/// exponent so they re-lex as floats).
impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\t' => f.write_str("\\t")?,
                        other => write!(f, "{other}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_display_relexes_as_float() {
        assert_eq!(Value::Float(500.0).to_string(), "500.0");
        assert_eq!(Value::Float(0.05).to_string(), "0.05");
    }

    #[test]
    fn int_widens_to_float() {
        assert_eq!(
            Value::Int(500).coerce_to(PrimitiveType::Float),
            Some(Value::Float(500.0))
        );
        assert_eq!(Value::Float(1.5).coerce_to(PrimitiveType::Int), None);
    }

    #[test]
    fn string_display_escapes() {
        assert_eq!(Value::Str("a\"b".into()).to_string(), "\"a\\\"b\"");
    }

    #[test]
    fn json_roundtrip_distinguishes_int_and_float() {
        let i = serde_json::to_string(&Value::Int(1)).unwrap();
        let f = serde_json::to_string(&Value::Float(1.0)).unwrap();
        assert_eq!(i, "1");
        assert_eq!(f, "1.0");
        assert_eq!(serde_json::from_str::<Value>(&i).unwrap(), Value::Int(1));
        assert_eq!(serde_json::from_str::<Value>(&f).unwrap(), Value::Float(1.0));
    }
}
