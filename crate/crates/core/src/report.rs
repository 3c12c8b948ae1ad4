//! Check results shared by part validation, plan validation and assembly verification.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Failure class used by the rollback router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ErrorClass {
    /// Malformed or unexecutable agent output.
    Exec,
    /// A part program failing a valid specification.
    Code,
    /// A flawed plan.
    Design,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::Exec => "EXEC",
            ErrorClass::Code => "CODE",
            ErrorClass::Design => "DESIGN",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub class: ErrorClass,
    pub evidence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Part the check is about, when it concerns a single part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
}

impl Check {
    pub fn pass(name: impl Into<String>, class: ErrorClass, evidence: impl Into<String>) -> Self {
        Self { name: name.into(), pass: true, class, evidence: evidence.into(), value: None, part: None }
    }

    pub fn fail(name: impl Into<String>, class: ErrorClass, evidence: impl Into<String>) -> Self {
        Self { name: name.into(), pass: false, class, evidence: evidence.into(), value: None, part: None }
    }

    pub fn with_value(mut self, v: f64) -> Self {
        self.value = Some(v);
        self
    }

    pub fn for_part(mut self, part: impl Into<String>) -> Self {
        self.part = Some(part.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// DESIGN dominates CODE; `None` when everything passed.
    pub fn worst_class(&self) -> Option<ErrorClass> {
        self.failures().map(|c| c.class).max()
    }
}
