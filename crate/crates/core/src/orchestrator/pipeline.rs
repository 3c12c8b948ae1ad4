//! The run loop: one logical sequence of states with a parallelizable
//! per-part generation fan-out.

use super::agents::{
    parse_design_reply, Agent, AgentBinding, AgentError, AgentRequest, ClassifierReply, DesignReply, ReviewReply,
    Verdict,
};
use super::{
    check_source, classify_error, route_code, route_design, ErrorRecord, ErrorSource, Role, Route, Stage, State,
};
use crate::assembler::{assemble_at_rest, AssembledModel, AssemblyError, DEFAULT_FRAMES_PER_DOF};
use crate::plan::{expand_derived, parse_json_with_path, validate_plan, AssemblyPlan, ConnectorFrame, PartSpec};
use crate::program::{check_realization_against, parse_program, PartProgram, ProgramError};
use crate::report::{ErrorClass, Report};
use crate::store::{digest, ExperienceCase, ExperienceStore, Partition, QueryContext, DEFAULT_K_GOOD, DEFAULT_K_ISSUE};
use crate::verifier::{verify_model, InterferenceConfig, VerifyError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};

/// Pipeline input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub requirement: String,
    /// Skips the first design call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<AssemblyPlan>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

pub fn parse_task(document: &str) -> Result<Task, TaskError> {
    parse_json_with_path::<Task>(document).map_err(|(syntax, path, message)| {
        if syntax {
            TaskError::Parse { path, message }
        } else {
            TaskError::Schema { path, message }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    /// Malformed-output retries per part.
    pub exec_retries: usize,
    /// CODE regenerations per part.
    pub code_regens: usize,
    pub design_rollbacks: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { exec_retries: 5, code_regens: 2, design_rollbacks: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub budgets: Budgets,
    pub frames_per_dof: usize,
    /// The seed field is replaced by the task seed.
    pub interference: InterferenceConfig,
    /// Run part workers concurrently.
    pub parallel: bool,
    pub k_good: usize,
    pub k_issue: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            budgets: Budgets::default(),
            frames_per_dof: DEFAULT_FRAMES_PER_DOF,
            interference: InterferenceConfig::default(),
            parallel: true,
            k_good: DEFAULT_K_GOOD,
            k_issue: DEFAULT_K_ISSUE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: State,
    pub to: State,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    BudgetExhausted,
    AgentProtocol,
    AgentUnavailable,
    InvalidChoice,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub stage: Stage,
    pub class: ErrorClass,
    pub message: String,
}

/// Agent calls and budgets consumed for one part.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartCounters {
    pub generation: usize,
    pub validation: usize,
    pub classification: usize,
    pub exec_retries: usize,
    pub code_regens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub status: State,
    pub seed: u64,
    pub transitions: Vec<Transition>,
    pub calls: BTreeMap<Role, usize>,
    pub errors: Vec<ErrorRecord>,
    pub routes: Vec<Route>,
    pub parts: BTreeMap<String, PartCounters>,
    /// Malformed design replies retried.
    pub design_exec_retries: usize,
    pub design_rollbacks: usize,
    pub http_retries: usize,
    pub reasks: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
}

impl RunTrace {
    pub fn calls_for(&self, role: Role) -> usize {
        self.calls.get(&role).copied().unwrap_or(0)
    }

    /// Top-level state sequence (part-level transitions omitted).
    pub fn states(&self) -> Vec<State> {
        let mut out = Vec::new();
        for t in self.transitions.iter().filter(|t| t.part.is_none()) {
            if out.is_empty() {
                out.push(t.from);
            }
            out.push(t.to);
        }
        out
    }

    fn step(&mut self, from: State, to: State, part: Option<&str>) {
        self.transitions.push(Transition { from, to, part: part.map(String::from) });
    }

    fn absorb(&mut self, other: RunTrace) {
        self.transitions.extend(other.transitions);
        for (role, n) in other.calls {
            *self.calls.entry(role).or_default() += n;
        }
        self.errors.extend(other.errors);
        self.routes.extend(other.routes);
        self.http_retries += other.http_retries;
        self.reasks += other.reasks;
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: RunTrace,
    /// Last accepted plan.
    pub plan: Option<AssemblyPlan>,
    /// Generated and derived geometry of the last plan.
    pub programs: BTreeMap<String, PartProgram>,
    pub model: Option<AssembledModel>,
    pub report: Option<Report>,
}

/// Default alternative chooser.
pub fn first_alternative(_: &[String]) -> usize {
    0
}

/// Read-only context shared by part workers.
struct Shared<'a> {
    task: &'a Task,
    agents: &'a AgentBinding,
    opts: &'a PipelineOptions,
    plan: &'a AssemblyPlan,
    store: Option<&'a ExperienceStore>,
}

fn call_agent(
    agent: &dyn Agent,
    role: Role,
    attempt: usize,
    part: Option<&str>,
    context: Value,
    trace: &mut RunTrace,
) -> Result<String, AgentError> {
    *trace.calls.entry(role).or_default() += 1;
    let req = AgentRequest { role, attempt, part: part.map(String::from), context };
    match agent.call(&req) {
        Ok(r) => {
            trace.http_retries += r.http_retries;
            trace.reasks += r.reasks;
            Ok(r.text)
        }
        Err(e) => {
            if let AgentError::Http { retries, .. } = &e {
                trace.http_retries += retries;
            }
            Err(e)
        }
    }
}

fn agent_failure(stage: Stage, part: Option<&str>, role: Role, e: AgentError, trace: &mut RunTrace) -> Failure {
    let kind = match e {
        AgentError::Protocol(_) => FailureKind::AgentProtocol,
        _ => FailureKind::AgentUnavailable,
    };
    let message = format!("{role} agent: {e}");
    trace.errors.push(ErrorRecord {
        stage,
        part: part.map(String::from),
        class: ErrorClass::Exec,
        message: message.clone(),
        evidence: Value::Null,
        override_note: None,
    });
    Failure { kind, stage, class: ErrorClass::Exec, message }
}

/// Rule-based class, possibly overridden by the classifier agent.
fn classify(
    agents: &AgentBinding,
    source: ErrorSource,
    stage: Stage,
    part: Option<&str>,
    message: &str,
    attempt: &mut usize,
    trace: &mut RunTrace,
) -> (ErrorClass, Option<String>) {
    let rule = classify_error(source);
    let Some(agent) = agents.classifier.as_deref() else { return (rule, None) };
    let ctx = json!({ "stage": stage, "part": part, "message": message, "rule_class": rule });
    let text = call_agent(agent, Role::Classifier, *attempt, part, ctx, trace);
    *attempt += 1;
    match text.map_err(|e| e.to_string()).and_then(|t| serde_json::from_str::<ClassifierReply>(&t).map_err(|e| e.to_string())) {
        Ok(ClassifierReply { class: Some(c), justification }) if c != rule => (c, Some(justification)),
        Ok(_) => (rule, None),
        Err(e) => {
            log::warn!("classifier unavailable, keeping rule class {rule}: {e}");
            (rule, None)
        }
    }
}

fn hits_json(store: Option<&ExperienceStore>, text: &str, ctx: QueryContext, k_good: usize, k_issue: usize) -> Value {
    let Some(s) = store else { return json!([]) };
    let hits: Vec<Value> = s
        .query(text, ctx, k_good, k_issue)
        .into_iter()
        .map(|h| {
            json!({
                "partition": h.case.partition,
                "score": h.score,
                "issues": h.case.issues,
                "heuristics": h.case.heuristics,
            })
        })
        .collect();
    Value::Array(hits)
}

enum PartOutcome {
    Ready(PartProgram),
    /// A DESIGN-class record was logged; the plan must be revised.
    Escalate,
    Failed(Failure),
}

struct PartJob {
    id: String,
    counters: PartCounters,
    feedback: Vec<String>,
}

/// Generate, parse and validate one part until it passes or a budget runs out.
fn generate_part(sh: &Shared, job: PartJob) -> (PartJob, RunTrace, PartOutcome) {
    let PartJob { id, mut counters, mut feedback } = job;
    let mut trace = RunTrace::default();
    let spec: &PartSpec = sh.plan.part(&id).expect("pending parts come from the plan");
    let reference: &[ConnectorFrame] = sh.plan.reference_connectors(&id).unwrap_or(&[]);
    let budgets = sh.opts.budgets;
    let examples = hits_json(
        sh.store,
        &format!("{} {}", sh.task.requirement, spec.description),
        QueryContext::Generation,
        sh.opts.k_good,
        0,
    );
    let outcome = loop {
        let ctx = json!({
            "requirement": sh.task.requirement,
            "assembly": sh.plan.name,
            "part": spec,
            "reference_connectors": reference,
            "feedback": feedback,
            "examples": examples,
        });
        let text =
            match call_agent(sh.agents.generation.as_ref(), Role::Generation, counters.generation, Some(&id), ctx, &mut trace) {
                Ok(t) => t,
                Err(e) => break PartOutcome::Failed(agent_failure(Stage::Generate, Some(&id), Role::Generation, e, &mut trace)),
            };
        counters.generation += 1;
        let parsed = parse_program(&text).and_then(|p| {
            if p.part_id == id {
                Ok(p)
            } else {
                Err(ProgramError::Schema { path: "part_id".into(), message: format!("expected '{id}', got '{}'", p.part_id) })
            }
        });
        // (stage, source, message, evidence) of this attempt's failure
        let failure = match parsed {
            Err(e) => {
                let source = match e {
                    ProgramError::Parse { .. } | ProgramError::Schema { .. } => ErrorSource::ProgramParse,
                    _ => ErrorSource::ProgramStructure,
                };
                (Stage::Generate, source, e.to_string(), Value::Null)
            }
            Ok(program) => {
                trace.step(State::Generate, State::ValidatePart, Some(&id));
                let realization = check_realization_against(&program, spec, reference);
                if !realization.passed() {
                    let message = realization.failures().map(|c| c.evidence.as_str()).collect::<Vec<_>>().join("; ");
                    let evidence = serde_json::to_value(&realization).unwrap_or(Value::Null);
                    (Stage::ValidatePart, ErrorSource::Realization, message, evidence)
                } else {
                    let ctx = json!({ "part": spec, "program": program, "realization": realization });
                    let verdict = call_agent(
                        sh.agents.part_validator.as_ref(),
                        Role::PartValidator,
                        counters.validation,
                        Some(&id),
                        ctx,
                        &mut trace,
                    );
                    counters.validation += 1;
                    let verdict = match verdict {
                        Ok(t) => serde_json::from_str::<Verdict>(&t)
                            .map_err(|e| AgentError::Protocol(format!("part validator reply: {e}"))),
                        Err(e) => Err(e),
                    };
                    match verdict {
                        Err(e) => {
                            break PartOutcome::Failed(agent_failure(
                                Stage::ValidatePart,
                                Some(&id),
                                Role::PartValidator,
                                e,
                                &mut trace,
                            ))
                        }
                        Ok(v) if v.pass => break PartOutcome::Ready(program),
                        Ok(v) => {
                            let source = ErrorSource::AgentVerdict(v.class.unwrap_or(ErrorClass::Code));
                            (Stage::ValidatePart, source, v.issues.join("; "), json!({ "issues": v.issues }))
                        }
                    }
                }
            }
        };
        let (stage, source, message, evidence) = failure;
        let (class, override_note) =
            classify(sh.agents, source, stage, Some(&id), &message, &mut counters.classification, &mut trace);
        trace.errors.push(ErrorRecord { stage, part: Some(id.clone()), class, message: message.clone(), evidence, override_note });
        let from = if stage == Stage::Generate { State::Generate } else { State::ValidatePart };
        let (used, budget, name) = match class {
            ErrorClass::Design => break PartOutcome::Escalate,
            ErrorClass::Exec => (&mut counters.exec_retries, budgets.exec_retries, "exec retry"),
            ErrorClass::Code => (&mut counters.code_regens, budgets.code_regens, "code regeneration"),
        };
        if *used >= budget {
            break PartOutcome::Failed(Failure {
                kind: FailureKind::BudgetExhausted,
                stage,
                class,
                message: format!("part '{id}': {name} budget ({budget}) exhausted: {message}"),
            });
        }
        *used += 1;
        if class == ErrorClass::Code {
            trace.routes.push(route_code(sh.plan, &id));
        }
        feedback.push(format!("[{class}] {message}"));
        trace.step(from, State::Generate, Some(&id));
    };
    (PartJob { id, counters, feedback }, trace, outcome)
}

struct Run<'a> {
    task: &'a Task,
    agents: &'a AgentBinding,
    opts: &'a PipelineOptions,
    chooser: &'a dyn Fn(&[String]) -> usize,
    trace: RunTrace,
    attempts: BTreeMap<Role, usize>,
    classifier_attempt: usize,
    plan: Option<AssemblyPlan>,
    /// Plan the current geometry was generated against.
    geometry_plan: Option<AssemblyPlan>,
    geometry: BTreeMap<String, PartProgram>,
    pending: BTreeSet<String>,
    feedback: BTreeMap<String, Vec<String>>,
    /// Errors before this index were already shown to the design agent.
    diagnostics_from: usize,
    model: Option<AssembledModel>,
    programs: BTreeMap<String, PartProgram>,
    report: Option<Report>,
    review: ReviewReply,
}

impl<'a> Run<'a> {
    fn attempt(&mut self, role: Role) -> usize {
        let n = self.attempts.entry(role).or_default();
        *n += 1;
        *n - 1
    }

    fn fail(&mut self, f: Failure) -> State {
        self.trace.failure = Some(f);
        State::Failed
    }

    fn record(&mut self, source: ErrorSource, stage: Stage, part: Option<&str>, message: String, evidence: Value) -> ErrorClass {
        let (class, override_note) =
            classify(self.agents, source, stage, part, &message, &mut self.classifier_attempt, &mut self.trace);
        self.trace.errors.push(ErrorRecord { stage, part: part.map(String::from), class, message, evidence, override_note });
        class
    }

    fn rollback_to_design(&mut self, stage: Stage) -> State {
        let budget = self.opts.budgets.design_rollbacks;
        if self.trace.design_rollbacks >= budget {
            let last = self.trace.errors.last().map(|e| e.message.clone()).unwrap_or_default();
            return self.fail(Failure {
                kind: FailureKind::BudgetExhausted,
                stage,
                class: ErrorClass::Design,
                message: format!("design rollback budget ({budget}) exhausted: {last}"),
            });
        }
        self.trace.design_rollbacks += 1;
        State::Design
    }

    fn design(&mut self, store: Option<&ExperienceStore>) -> State {
        if self.trace.calls_for(Role::Design) == 0 && self.plan.is_none() {
            if let Some(p) = &self.task.plan {
                self.plan = Some(p.clone());
                return State::ValidatePlan;
            }
        }
        let mut exec_feedback: Vec<String> = Vec::new();
        loop {
            let ctx = json!({
                "requirement": self.task.requirement,
                "previous_plan": self.plan,
                "diagnostics": self.trace.errors[self.diagnostics_from..],
                "feedback": exec_feedback,
                "experience": hits_json(store, &self.task.requirement, QueryContext::Design, self.opts.k_good, self.opts.k_issue),
            });
            let attempt = self.attempt(Role::Design);
            let text = match call_agent(self.agents.design.as_ref(), Role::Design, attempt, None, ctx, &mut self.trace) {
                Ok(t) => t,
                Err(e) => {
                    let f = agent_failure(Stage::Design, None, Role::Design, e, &mut self.trace);
                    return self.fail(f);
                }
            };
            match parse_design_reply(&text) {
                Ok(DesignReply::Plan(p)) => {
                    self.plan = Some(p);
                    break;
                }
                Ok(DesignReply::Alternatives(alts)) => {
                    let summaries: Vec<String> = alts.iter().map(|a| a.summary.clone()).collect();
                    let i = (self.chooser)(&summaries);
                    self.trace.alternatives = summaries;
                    if i >= alts.len() {
                        let message = format!("alternative {i} chosen, but only {} offered", alts.len());
                        return self.fail(Failure { kind: FailureKind::InvalidChoice, stage: Stage::Design, class: ErrorClass::Exec, message });
                    }
                    self.trace.chosen = Some(i);
                    self.plan = alts.into_iter().nth(i).map(|a| a.plan);
                    break;
                }
                Err(message) => {
                    self.record(ErrorSource::ProgramParse, Stage::Design, None, message.clone(), Value::Null);
                    let budget = self.opts.budgets.exec_retries;
                    if self.trace.design_exec_retries >= budget {
                        return self.fail(Failure {
                            kind: FailureKind::BudgetExhausted,
                            stage: Stage::Design,
                            class: ErrorClass::Exec,
                            message: format!("design exec retry budget ({budget}) exhausted: {message}"),
                        });
                    }
                    self.trace.design_exec_retries += 1;
                    exec_feedback.push(message);
                    self.trace.step(State::Design, State::Design, None);
                }
            }
        }
        self.diagnostics_from = self.trace.errors.len();
        State::ValidatePlan
    }

    fn validate_plan(&mut self) -> State {
        let plan = self.plan.clone().expect("design produced a plan");
        let v = validate_plan(&plan);
        if !v.is_valid() {
            let evidence = serde_json::to_value(&v).unwrap_or(Value::Null);
            let class = self.record(ErrorSource::PlanViolation, Stage::Design, None, v.summary(), evidence);
            if class != ErrorClass::Design {
                log::warn!("plan violation reclassified as {class}; plans can only be revised by the design agent");
            }
            return self.rollback_to_design(Stage::Design);
        }
        self.trace.plan_digest = Some(digest(serde_json::to_string(&plan).expect("plan serializes").as_bytes()));
        let generated = |id: &str| plan.part(id).is_some_and(|p| p.derive.is_none());
        match &self.geometry_plan {
            None => self.pending = plan.generated_parts().map(|p| p.id.clone()).collect(),
            Some(old) => {
                let route = route_design(old, &plan);
                for id in route.regenerate.iter().chain(&route.removed) {
                    self.geometry.remove(id);
                }
                self.pending.retain(|id| generated(id));
                self.pending.extend(route.regenerate.iter().chain(&route.new).filter(|id| generated(id)).cloned());
                self.trace.routes.push(route);
            }
        }
        // Parts that became derived or were dropped no longer need generation.
        self.geometry.retain(|id, _| generated(id));
        self.geometry_plan = Some(plan);
        if self.pending.is_empty() {
            State::Assemble
        } else {
            State::Generate
        }
    }

    fn generate(&mut self, store: Option<&ExperienceStore>) -> State {
        let plan = self.plan.clone().expect("validated plan");
        let jobs: Vec<PartJob> = std::mem::take(&mut self.pending)
            .into_iter()
            .map(|id| PartJob {
                counters: self.trace.parts.get(&id).copied().unwrap_or_default(),
                feedback: self.feedback.remove(&id).unwrap_or_default(),
                id,
            })
            .collect();
        let sh = Shared { task: self.task, agents: self.agents, opts: self.opts, plan: &plan, store };
        let results: Vec<_> = if self.opts.parallel {
            jobs.into_par_iter().map(|j| generate_part(&sh, j)).collect()
        } else {
            jobs.into_iter().map(|j| generate_part(&sh, j)).collect()
        };
        let mut failure = None;
        let mut escalate = false;
        for (job, trace, outcome) in results {
            self.trace.absorb(trace);
            self.trace.parts.insert(job.id.clone(), job.counters);
            match outcome {
                PartOutcome::Ready(p) => {
                    self.geometry.insert(job.id, p);
                }
                PartOutcome::Escalate => {
                    escalate = true;
                    self.pending.insert(job.id.clone());
                    self.feedback.insert(job.id, job.feedback);
                }
                PartOutcome::Failed(f) => {
                    failure.get_or_insert(f);
                }
            }
        }
        if let Some(f) = failure {
            return self.fail(f);
        }
        if escalate {
            return self.rollback_to_design(Stage::ValidatePart);
        }
        State::Assemble
    }

    /// Routes CODE failures on parts to regeneration and anything else to design.
    fn route_part_failures(&mut self, stage: Stage, failures: Vec<(ErrorClass, Option<String>)>) -> State {
        let plan = self.plan.clone().expect("validated plan");
        let needs_design = failures.iter().any(|(c, p)| *c == ErrorClass::Design || p.is_none());
        if needs_design {
            return self.rollback_to_design(stage);
        }
        let mut targets: BTreeMap<String, ErrorClass> = BTreeMap::new();
        for (class, part) in failures {
            let part = part.expect("checked above");
            // Derived parts are fixed by regenerating their source.
            let id = match plan.part(&part).and_then(|p| p.derive.as_ref()) {
                Some(d) => d.source.clone(),
                None => part,
            };
            let e = targets.entry(id).or_insert(class);
            *e = (*e).max(class);
        }
        let budgets = self.opts.budgets;
        for (id, class) in targets {
            let counters = self.trace.parts.entry(id.clone()).or_default();
            let (used, budget, name) = if class == ErrorClass::Exec {
                (&mut counters.exec_retries, budgets.exec_retries, "exec retry")
            } else {
                (&mut counters.code_regens, budgets.code_regens, "code regeneration")
            };
            if *used >= budget {
                return self.fail(Failure {
                    kind: FailureKind::BudgetExhausted,
                    stage,
                    class,
                    message: format!("part '{id}': {name} budget ({budget}) exhausted"),
                });
            }
            *used += 1;
            let notes: Vec<String> = self
                .trace
                .errors
                .iter()
                .rev()
                .take_while(|e| e.stage == stage)
                .filter(|e| e.part.as_deref() == Some(id.as_str()))
                .map(|e| format!("[{}] {}", e.class, e.message))
                .collect();
            self.feedback.entry(id.clone()).or_default().extend(notes);
            self.trace.routes.push(route_code(&plan, &id));
            self.pending.insert(id);
        }
        State::Generate
    }

    fn assembly_failure(&mut self, e: AssemblyError, stage: Stage) -> State {
        let (source, part) = match &e {
            AssemblyError::MissingConnector { part, .. } | AssemblyError::Frame { part, .. } => {
                (ErrorSource::AssemblyConnector, Some(part.clone()))
            }
            AssemblyError::MissingGeometry(part) => (ErrorSource::AssemblyConnector, Some(part.clone())),
            _ => (ErrorSource::AssemblyTopology, None),
        };
        let class = self.record(source, stage, part.as_deref(), e.to_string(), Value::Null);
        self.route_part_failures(stage, vec![(class, part)])
    }

    fn assemble(&mut self) -> State {
        let plan = self.plan.clone().expect("validated plan");
        let all = match expand_derived(&plan, &self.geometry) {
            Ok(g) => g,
            Err(e) => {
                self.record(ErrorSource::AssemblyTopology, Stage::Assemble, None, e.to_string(), Value::Null);
                return self.rollback_to_design(Stage::Assemble);
            }
        };
        self.programs = all.clone();
        match assemble_at_rest(&plan, &all) {
            Ok(m) => {
                self.model = Some(m);
                State::Verify
            }
            Err(e) => self.assembly_failure(e, Stage::Assemble),
        }
    }

    fn verify(&mut self) -> State {
        let model = self.model.clone().expect("assembled model");
        let cfg = InterferenceConfig { seed: self.task.seed, ..self.opts.interference };
        let report = match verify_model(&model, self.opts.frames_per_dof, cfg) {
            Ok(r) => r,
            Err(VerifyError::Geometry { part, source }) => {
                let class = self.record(ErrorSource::Realization, Stage::Verify, Some(&part), source.to_string(), Value::Null);
                return self.route_part_failures(Stage::Verify, vec![(class, Some(part))]);
            }
            Err(VerifyError::Assembly(e)) => return self.assembly_failure(e, Stage::Verify),
            Err(e @ VerifyError::TooFewSamples(_)) => {
                return self.fail(Failure {
                    kind: FailureKind::Internal,
                    stage: Stage::Verify,
                    class: ErrorClass::Exec,
                    message: e.to_string(),
                })
            }
        };
        let mut failures = Vec::new();
        for c in report.failures().cloned().collect::<Vec<_>>() {
            let evidence = json!({ "check": c.name, "value": c.value });
            let message = format!("{}: {}", c.name, c.evidence);
            let class = self.record(check_source(&c.name), Stage::Verify, c.part.as_deref(), message, evidence);
            failures.push((class, c.part.clone()));
        }
        let passed = failures.is_empty();
        self.report = Some(report.clone());
        if passed {
            let ctx = json!({ "assembly": model.plan.name, "report": report, "poses": model.frame() });
            let attempt = self.attempt(Role::AssemblyVerifier);
            let verdict = call_agent(self.agents.assembly_verifier.as_ref(), Role::AssemblyVerifier, attempt, None, ctx, &mut self.trace)
                .and_then(|t| {
                    serde_json::from_str::<Verdict>(&t).map_err(|e| AgentError::Protocol(format!("assembly verifier reply: {e}")))
                });
            match verdict {
                Err(e) => {
                    let f = agent_failure(Stage::Verify, None, Role::AssemblyVerifier, e, &mut self.trace);
                    return self.fail(f);
                }
                Ok(v) if v.pass => return State::Review,
                Ok(v) => {
                    let source = ErrorSource::AgentVerdict(v.class.unwrap_or(ErrorClass::Design));
                    let part = v.part.clone();
                    let class = self.record(source, Stage::Verify, part.as_deref(), v.issues.join("; "), json!({ "issues": v.issues }));
                    failures.push((class, part));
                }
            }
        }
        self.route_part_failures(Stage::Verify, failures)
    }

    fn review(&mut self) -> State {
        let ctx = json!({
            "requirement": self.task.requirement,
            "plan": self.plan,
            "errors": self.trace.errors,
            "report": self.report,
        });
        let attempt = self.attempt(Role::Review);
        let reply = call_agent(self.agents.review.as_ref(), Role::Review, attempt, None, ctx, &mut self.trace).and_then(|t| {
            serde_json::from_str::<ReviewReply>(&t).map_err(|e| AgentError::Protocol(format!("review reply: {e}")))
        });
        match reply {
            Ok(r) => {
                self.review = r;
                State::Store
            }
            Err(e) => {
                let f = agent_failure(Stage::Verify, None, Role::Review, e, &mut self.trace);
                self.fail(f)
            }
        }
    }

    fn store(&mut self, store: Option<&mut ExperienceStore>) -> State {
        let Some(store) = store else { return State::Done };
        let partition = if self.trace.errors.is_empty() { Partition::Good } else { Partition::Issue };
        let mut issues = self.review.issues.clone();
        issues.extend(self.trace.errors.iter().map(|e| format!("[{}] {}", e.class, e.message)));
        let plan_digest = self.trace.plan_digest.clone().unwrap_or_default();
        let case = ExperienceCase::new(partition, &self.task.requirement, &plan_digest, issues, self.review.heuristics.clone());
        match case.and_then(|c| store.add(c)) {
            Ok(id) => self.trace.case_id = Some(id),
            Err(e) => log::warn!("run not stored: {e}"),
        }
        State::Done
    }
}

/// Runs the pipeline to DONE or FAILED. `chooser` picks among design
/// alternatives by their summaries.
pub fn run_pipeline(
    task: &Task,
    agents: &AgentBinding,
    opts: &PipelineOptions,
    mut store: Option<&mut ExperienceStore>,
    chooser: &dyn Fn(&[String]) -> usize,
) -> RunOutcome {
    let mut run = Run {
        task,
        agents,
        opts,
        chooser,
        trace: RunTrace { seed: task.seed, ..RunTrace::default() },
        attempts: BTreeMap::new(),
        classifier_attempt: 0,
        plan: None,
        geometry_plan: None,
        geometry: BTreeMap::new(),
        pending: BTreeSet::new(),
        feedback: BTreeMap::new(),
        diagnostics_from: 0,
        model: None,
        programs: BTreeMap::new(),
        report: None,
        review: ReviewReply::default(),
    };
    let mut state = State::Design;
    while !matches!(state, State::Done | State::Failed) {
        let next = match state {
            State::Design => run.design(store.as_deref()),
            State::ValidatePlan => run.validate_plan(),
            State::Generate | State::ValidatePart => run.generate(store.as_deref()),
            State::Assemble => run.assemble(),
            State::Verify => run.verify(),
            State::Review => run.review(),
            State::Store => run.store(store.as_deref_mut()),
            State::Done | State::Failed => unreachable!(),
        };
        run.trace.step(state, next, None);
        state = next;
    }
    run.trace.status = state;
    RunOutcome {
        trace: run.trace,
        plan: run.plan,
        programs: run.programs,
        model: if state == State::Done { run.model } else { None },
        report: run.report,
    }
}
