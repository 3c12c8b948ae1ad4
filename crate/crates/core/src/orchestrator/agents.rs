//! Agent interface, wire schemas for each role, and offline agents driven by
//! fixture files or closures.

use super::Role;
use crate::plan::{parse_plan, AssemblyPlan};
use crate::program::parse_program;
use crate::report::ErrorClass;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentRequest {
    pub role: Role,
    /// Calls already made for this role (and part, for per-part roles).
    pub attempt: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
    pub context: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentReply {
    /// JSON document text.
    pub text: String,
    pub http_retries: usize,
    pub reasks: usize,
}

impl AgentReply {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("no fixture for {0}")]
    MissingFixture(String),
    #[error("agent i/o: {0}")]
    Io(String),
    #[error("http error{}: {message}", status.map(|s| format!(" {s}")).unwrap_or_default())]
    Http { status: Option<u16>, message: String, retries: usize },
    #[error("agent protocol error: {0}")]
    Protocol(String),
    #[error("agent configuration: {0}")]
    Config(String),
}

/// An agent answers requests for one or more roles with a JSON document.
/// Implementations must be safe to call from several part workers at once.
pub trait Agent: Send + Sync {
    fn call(&self, req: &AgentRequest) -> Result<AgentReply, AgentError>;
}

/// Agents bound to each role. The classifier is optional.
#[derive(Clone)]
pub struct AgentBinding {
    pub design: Arc<dyn Agent>,
    pub generation: Arc<dyn Agent>,
    pub part_validator: Arc<dyn Agent>,
    pub assembly_verifier: Arc<dyn Agent>,
    pub review: Arc<dyn Agent>,
    pub classifier: Option<Arc<dyn Agent>>,
}

impl AgentBinding {
    /// One agent for all five required roles, no classifier.
    pub fn uniform(agent: Arc<dyn Agent>) -> Self {
        Self {
            design: agent.clone(),
            generation: agent.clone(),
            part_validator: agent.clone(),
            assembly_verifier: agent.clone(),
            review: agent,
            classifier: None,
        }
    }

    pub fn get(&self, role: Role) -> Option<&Arc<dyn Agent>> {
        Some(match role {
            Role::Design => &self.design,
            Role::Generation => &self.generation,
            Role::PartValidator => &self.part_validator,
            Role::AssemblyVerifier => &self.assembly_verifier,
            Role::Review => &self.review,
            Role::Classifier => return self.classifier.as_ref(),
        })
    }
}

/// Design agent output: one plan or several alternatives to choose from.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignReply {
    Plan(AssemblyPlan),
    Alternatives(Vec<Alternative>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Alternative {
    pub summary: String,
    pub plan: AssemblyPlan,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AlternativesDoc {
    alternatives: Vec<Alternative>,
}

pub fn parse_design_reply(text: &str) -> Result<DesignReply, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("design reply is not JSON: {e}"))?;
    if v.get("alternatives").is_some() {
        let doc: AlternativesDoc = serde_json::from_value(v).map_err(|e| format!("bad alternatives: {e}"))?;
        if doc.alternatives.is_empty() {
            return Err("alternatives list is empty".into());
        }
        return Ok(DesignReply::Alternatives(doc.alternatives));
    }
    parse_plan(text).map(DesignReply::Plan).map_err(|e| e.to_string())
}

/// Part validator and assembly verifier output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub pass: bool,
    #[serde(default)]
    pub issues: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ErrorClass>,
    /// For assembly verdicts, the part the issue is attributed to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewReply {
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub issues: Vec<String>,
    #[serde(default)]
    pub heuristics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierReply {
    pub class: Option<ErrorClass>,
    #[serde(default)]
    pub justification: String,
}

/// Checks that `text` is a well-formed reply for `role`.
pub fn validate_role_output(role: Role, text: &str) -> Result<(), String> {
    match role {
        Role::Design => parse_design_reply(text).map(|_| ()),
        Role::Generation => parse_program(text).map(|_| ()).map_err(|e| e.to_string()),
        Role::PartValidator | Role::AssemblyVerifier => {
            serde_json::from_str::<Verdict>(text).map(|_| ()).map_err(|e| e.to_string())
        }
        Role::Review => serde_json::from_str::<ReviewReply>(text).map(|_| ()).map_err(|e| e.to_string()),
        Role::Classifier => serde_json::from_str::<ClassifierReply>(text).map(|_| ()).map_err(|e| e.to_string()),
    }
}

/// Replays JSON files from a directory:
///
/// ```text
/// design/<n>.json
/// generation/<part>/<n>.json
/// validate_part/<part>/<n>.json   (optional, default pass)
/// verify/<n>.json                 (optional, default pass)
/// review/<n>.json                 (optional, default empty review)
/// classify/<n>.json               (optional)
/// ```
///
/// `<n>` is the request's attempt index; when that file is absent the highest
/// lower index is used. Stateless, so safe for concurrent use.
#[derive(Debug, Clone)]
pub struct FixtureAgent {
    dir: PathBuf,
}

impl FixtureAgent {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Binding with this agent on every role; the classifier only if `classify/` exists.
    pub fn binding(dir: impl Into<PathBuf>) -> AgentBinding {
        let agent = Arc::new(Self::new(dir));
        let classify = agent.dir.join("classify").is_dir();
        let mut b = AgentBinding::uniform(agent.clone());
        if classify {
            b.classifier = Some(agent);
        }
        b
    }

    fn role_dir(&self, req: &AgentRequest) -> PathBuf {
        let base = self.dir.join(match req.role {
            Role::Design => "design",
            Role::Generation => "generation",
            Role::PartValidator => "validate_part",
            Role::AssemblyVerifier => "verify",
            Role::Review => "review",
            Role::Classifier => "classify",
        });
        match (&req.part, req.role) {
            (Some(p), Role::Generation | Role::PartValidator) => base.join(p),
            _ => base,
        }
    }

    fn pick(dir: &Path, attempt: usize) -> Option<PathBuf> {
        (0..=attempt).rev().map(|n| dir.join(format!("{n}.json"))).find(|p| p.is_file())
    }
}

impl Agent for FixtureAgent {
    fn call(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
        let dir = self.role_dir(req);
        match Self::pick(&dir, req.attempt) {
            Some(path) => std::fs::read_to_string(&path)
                .map(AgentReply::new)
                .map_err(|e| AgentError::Io(format!("{}: {e}", path.display()))),
            None => match req.role {
                Role::Design | Role::Generation => Err(AgentError::MissingFixture(dir.display().to_string())),
                Role::PartValidator | Role::AssemblyVerifier => Ok(AgentReply::new(r#"{"pass":true}"#)),
                Role::Review => Ok(AgentReply::new("{}")),
                Role::Classifier => Ok(AgentReply::new(r#"{"class":null}"#)),
            },
        }
    }
}

/// An agent backed by a closure, for tests and embedding.
pub struct ScriptedAgent<F>(pub F);

impl<F> Agent for ScriptedAgent<F>
where
    F: Fn(&AgentRequest) -> Result<String, AgentError> + Send + Sync,
{
    fn call(&self, req: &AgentRequest) -> Result<AgentReply, AgentError> {
        (self.0)(req).map(AgentReply::new)
    }
}
