//! One production cycle's snapshot of the machine state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{AttributePath, DomainModel, ResolveError};
use crate::value::Value;

/// The "current state" the reasoner compares against cases: attribute path
/// to value, plus the machine cycle counter that produced it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Situation {
    pub cycle_id: u64,
    pub values: BTreeMap<AttributePath, Value>,
}

impl Situation {
    pub fn new(cycle_id: u64) -> Self {
        Self {
            cycle_id,
            values: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, path: AttributePath, value: Value) -> &mut Self {
        self.values.insert(path, value);
        self
    }

    pub fn with(mut self, path: AttributePath, value: Value) -> Self {
        self.values.insert(path, value);
        self
    }

    pub fn get(&self, path: &AttributePath) -> Option<&Value> {
        self.values.get(path)
    }

    /// Checks that every value's type matches its attribute declaration.
    /// Attributes not declared in the model fail with a resolution error.
    pub fn conforms_to(&self, model: &DomainModel) -> Result<(), ConformanceError> {
        for (path, value) in &self.values {
            let info = model
                .resolve(path)
                .map_err(ConformanceError::Unresolved)?;
            if value.coerce_to(info.ty).is_none() {
                return Err(ConformanceError::TypeMismatch {
                    path: path.clone(),
                    expected: info.ty.keyword(),
                    found: value.primitive_type().keyword(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConformanceError {
    #[error("{0}")]
    Unresolved(ResolveError),
    #[error("situation value for {path} has type {found}, expected {expected}")]
    TypeMismatch {
        path: AttributePath,
        expected: &'static str,
        found: &'static str,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::parse_domain_model;

    #[test]
    fn conformance_checks_types() {
        let m = parse_domain_model("model M { class C { a: float; b: boolean; } }").unwrap();
        let ok = Situation::new(1)
            .with(AttributePath::new("C", "a"), Value::Float(1.0))
            .with(AttributePath::new("C", "b"), Value::Bool(true));
        assert!(ok.conforms_to(&m).is_ok());

        let widened = Situation::new(1).with(AttributePath::new("C", "a"), Value::Int(3));
        assert!(widened.conforms_to(&m).is_ok());

        let bad = Situation::new(1).with(AttributePath::new("C", "b"), Value::Int(1));
        assert!(matches!(
            bad.conforms_to(&m),
            Err(ConformanceError::TypeMismatch { .. })
        ));

        let unknown = Situation::new(1).with(AttributePath::new("C", "zz"), Value::Int(1));
        assert!(matches!(
            unknown.conforms_to(&m),
            Err(ConformanceError::Unresolved(_))
        ));
    }
}
