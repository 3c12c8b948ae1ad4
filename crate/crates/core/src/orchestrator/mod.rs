//! The generation pipeline as an explicit state machine: design, plan
//! validation, per-part generation and validation, assembly, verification,
//! review and storage, with retry budgets and rollback routing.

mod agents;
mod pipeline;
mod remote;

pub use agents::*;
pub use pipeline::*;
pub use remote::*;

use crate::plan::{AssemblyPlan, PartSpec};
use crate::report::ErrorClass;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Design,
    Generation,
    PartValidator,
    AssemblyVerifier,
    Review,
    Classifier,
}

impl Role {
    pub const ALL: [Role; 6] =
        [Role::Design, Role::Generation, Role::PartValidator, Role::AssemblyVerifier, Role::Review, Role::Classifier];

    pub fn name(self) -> &'static str {
        match self {
            Role::Design => "design",
            Role::Generation => "generation",
            Role::PartValidator => "part_validator",
            Role::AssemblyVerifier => "assembly_verifier",
            Role::Review => "review",
            Role::Classifier => "classifier",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pipeline stage an error is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Design,
    Generate,
    ValidatePart,
    Assemble,
    Verify,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum State {
    #[default]
    Design,
    ValidatePlan,
    Generate,
    ValidatePart,
    Assemble,
    Verify,
    Review,
    Store,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
    pub class: ErrorClass,
    pub message: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub evidence: serde_json::Value,
    /// Justification given by a classifier agent that overrode the rule-based class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_note: Option<String>,
}

/// What went wrong, for the rule-based classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorSource {
    PlanViolation,
    ProgramParse,
    ProgramStructure,
    Realization,
    Coincidence,
    Interference,
    Sweep,
    /// Assembly could not place parts because of the joint topology.
    AssemblyTopology,
    /// Assembly could not read a part's connector frame.
    AssemblyConnector,
    /// A verdict from a validator agent, carrying its own class.
    AgentVerdict(ErrorClass),
}

/// Rule table: plan structure → DESIGN; unparsable or malformed programs → EXEC;
/// realization and coincidence defects → CODE; interference → DESIGN.
pub fn classify_error(source: ErrorSource) -> ErrorClass {
    match source {
        ErrorSource::PlanViolation | ErrorSource::Interference | ErrorSource::Sweep | ErrorSource::AssemblyTopology => {
            ErrorClass::Design
        }
        ErrorSource::ProgramParse | ErrorSource::ProgramStructure => ErrorClass::Exec,
        ErrorSource::Realization | ErrorSource::Coincidence | ErrorSource::AssemblyConnector => ErrorClass::Code,
        ErrorSource::AgentVerdict(c) => c,
    }
}

/// Source of a failed verifier check, from its name prefix.
pub fn check_source(name: &str) -> ErrorSource {
    match name.split(':').next().unwrap_or("") {
        "coincidence" => ErrorSource::Coincidence,
        "interference" => ErrorSource::Interference,
        "sweep" => ErrorSource::Sweep,
        _ => ErrorSource::Realization,
    }
}

/// The router's partition of parts after a failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub class: ErrorClass,
    pub keep: BTreeSet<String>,
    pub regenerate: BTreeSet<String>,
    pub new: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub removed: BTreeSet<String>,
    pub next_state: State,
}

/// Hash of the part contract: description, parameters and connector set.
pub fn part_contract_hash(p: &PartSpec) -> String {
    let mut connectors: Vec<_> = p.connectors.iter().collect();
    connectors.sort_by(|a, b| a.name.cmp(&b.name));
    let doc = serde_json::json!({
        "description": p.description,
        "parameters": p.parameters,
        "connectors": connectors,
    });
    crate::store::digest(doc.to_string().as_bytes())
}

/// CODE failure: only the failing part is regenerated.
pub fn route_code(plan: &AssemblyPlan, failing_part: &str) -> Route {
    let keep = plan.parts.iter().map(|p| p.id.clone()).filter(|id| id != failing_part).collect();
    Route {
        class: ErrorClass::Code,
        keep,
        regenerate: BTreeSet::from([failing_part.to_string()]),
        new: BTreeSet::new(),
        removed: BTreeSet::new(),
        next_state: State::Generate,
    }
}

/// DESIGN revision: parts with an unchanged contract keep their geometry,
/// changed parts are regenerated, unseen ids are new.
pub fn route_design(old: &AssemblyPlan, new: &AssemblyPlan) -> Route {
    let mut r = Route {
        class: ErrorClass::Design,
        keep: BTreeSet::new(),
        regenerate: BTreeSet::new(),
        new: BTreeSet::new(),
        removed: BTreeSet::new(),
        next_state: State::Assemble,
    };
    for p in &new.parts {
        match old.part(&p.id) {
            None => r.new.insert(p.id.clone()),
            Some(o) if part_contract_hash(o) == part_contract_hash(p) => r.keep.insert(p.id.clone()),
            Some(_) => r.regenerate.insert(p.id.clone()),
        };
    }
    for p in &old.parts {
        if new.part(&p.id).is_none() {
            r.removed.insert(p.id.clone());
        }
    }
    let needs_generation = r.regenerate.iter().chain(&r.new).any(|id| new.part(id).is_some_and(|p| p.derive.is_none()));
    if needs_generation {
        r.next_state = State::Generate;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_plan;

    fn plan(extra_part: bool, base_origin: f64) -> AssemblyPlan {
        let mut parts = vec![
            format!(r#"{{"id":"base","connectors":[{{"name":"a","origin":[{base_origin},0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}},{{"name":"b","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}},{{"name":"c","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}}]}}"#),
            r#"{"id":"door","parameters":{"lx":10},"connectors":[{"name":"a","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}]}"#.to_string(),
            r#"{"id":"drawer","connectors":[{"name":"a","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}]}"#.to_string(),
            r#"{"id":"shelf","connectors":[{"name":"a","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}]}"#.to_string(),
        ];
        let mut joints = vec![
            r#"{"id":"j1","type":"Revolute","parent":{"part":"base","connector":"a"},"child":{"part":"door","connector":"a"}}"#.to_string(),
            r#"{"id":"j2","type":"Slider","parent":{"part":"base","connector":"b"},"child":{"part":"drawer","connector":"a"}}"#.to_string(),
            r#"{"id":"j3","type":"Fixed","parent":{"part":"base","connector":"c"},"child":{"part":"shelf","connector":"a"}}"#.to_string(),
        ];
        if extra_part {
            parts.push(r#"{"id":"handle","connectors":[{"name":"a","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}]}"#.into());
            parts[1] = r#"{"id":"door","parameters":{"lx":10},"connectors":[{"name":"a","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}]}"#.into();
            joints.push(r#"{"id":"j4","type":"Fixed","parent":{"part":"shelf","connector":"a"},"child":{"part":"handle","connector":"a"}}"#.into());
        }
        let dof = 2;
        parse_plan(&format!(
            r#"{{"name":"c","ground":"base","declared_dof":{dof},"parts":[{}],"joints":[{}]}}"#,
            parts.join(","),
            joints.join(",")
        ))
        .unwrap()
    }

    #[test]
    fn classification_table() {
        assert_eq!(classify_error(ErrorSource::Realization), ErrorClass::Code);
        assert_eq!(classify_error(check_source("sweep:base|door")), ErrorClass::Design);
        assert_eq!(classify_error(check_source("interference:base|door")), ErrorClass::Design);
        assert_eq!(classify_error(check_source("coincidence:j1")), ErrorClass::Code);
        assert_eq!(classify_error(ErrorSource::ProgramParse), ErrorClass::Exec);
        assert_eq!(classify_error(ErrorSource::PlanViolation), ErrorClass::Design);
    }

    #[test]
    fn code_route_isolates_part() {
        let p = plan(false, 0.0);
        let r = route_code(&p, "drawer");
        assert_eq!(r.keep.len(), 3);
        assert_eq!(r.regenerate, BTreeSet::from(["drawer".to_string()]));
        assert_eq!(r.next_state, State::Generate);
    }

    #[test]
    fn design_route_diffs_contracts() {
        let old = plan(false, 0.0);
        let moved = plan(false, 5.0);
        let r = route_design(&old, &moved);
        assert_eq!(r.regenerate, BTreeSet::from(["base".to_string()]));
        assert_eq!(r.keep.len(), 3);
        let added = route_design(&old, &plan(true, 0.0));
        assert_eq!(added.new, BTreeSet::from(["handle".to_string()]));
        assert_eq!(added.keep.len(), 4);
        assert!(added.regenerate.is_empty());
        let same = route_design(&old, &old);
        assert_eq!(same.next_state, State::Assemble);
    }
}
