use crate::args::{AgentKind, Context, ExportCommand, JointValues, MetricsCommand, Normalize, PipelineCommand, ShapePair, StoreCommand};
use crate::config::CliConfig;
use artikit::assembler::assemble_at_rest;
use artikit::export::{export_scene, export_urdf, lint, write_keyframes, ExportError};
use artikit::mesh::{meshify, parse_obj, TriangleMesh};
use artikit::metrics::{
    evaluate_clouds, joint_records, joint_set_metrics, model_bounds, unit_cube_normalization, EvalConfig, NormalizeMode,
    SampleMetrics,
};
use artikit::orchestrator::{
    parse_task, run_pipeline, AgentBinding, FailureKind, FixtureAgent, PipelineOptions, RemoteChatAgent, RemoteConfig,
    RunOutcome, State, UreqTransport, API_KEY_ENV,
};
use artikit::plan::{expand_derived, CoordKind};
use artikit::program::check_realization_against;
use artikit::store::{ExperienceCase, ExperienceStore, Partition, QueryContext};
use artikit::verifier::{verify_model, InterferenceConfig};
use artikit::{parse_plan, parse_program, validate_plan, AssembledModel, JointCoordinates, Vec3};
use serde::Deserialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, IsTerminal, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io(_) => EXIT_IO,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Invalid(_) => "invalid",
            CliError::Io(_) => "io",
        }
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

/// Command result: JSON for `--json`, text otherwise, and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub value: Value,
    pub text: String,
    pub code: i32,
}

impl Outcome {
    fn ok(value: Value, text: impl Into<String>) -> Self {
        Self { value, text: text.into(), code: EXIT_OK }
    }

    fn status(value: Value, text: impl Into<String>, pass: bool) -> Self {
        Self { value, text: text.into(), code: if pass { EXIT_OK } else { EXIT_INVALID } }
    }
}

type CmdResult = Result<Outcome, CliError>;

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("output serializes")
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

pub fn load_model(path: &Path) -> Result<AssembledModel, CliError> {
    let model: AssembledModel =
        serde_json::from_str(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let report = validate_plan(&model.plan);
    if !report.is_valid() {
        return Err(CliError::Invalid(format!("{}: {}", path.display(), report.summary())));
    }
    Ok(model)
}

/// Parses `joint=v1,v2` assignments in plan units into internal coordinates.
pub fn parse_joint_values(model: &AssembledModel, values: &JointValues) -> Result<JointCoordinates, CliError> {
    let mut q = JointCoordinates::new();
    for item in &values.set {
        let (id, rhs) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set '{item}': expected JOINT=V[,V..]")))?;
        let nums = rhs
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(format!("--set '{item}': {e}")))?;
        let joint = model.plan.joint(id).ok_or_else(|| CliError::Invalid(format!("unknown joint '{id}'")))?;
        let kinds = joint.joint_type.coordinates();
        if nums.len() != kinds.len() {
            return Err(CliError::Invalid(format!(
                "joint '{id}' ({}) takes {} values, got {}",
                joint.joint_type,
                kinds.len(),
                nums.len()
            )));
        }
        let internal = nums
            .iter()
            .zip(kinds)
            .map(|(v, k)| match k {
                CoordKind::Angle => v.to_radians(),
                CoordKind::Length => *v,
            })
            .collect();
        q.insert(id.to_string(), internal);
    }
    Ok(q)
}

pub fn plan_validate(path: &Path) -> CmdResult {
    let plan = parse_plan(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let report = validate_plan(&plan);
    let text = if report.is_valid() {
        format!(
            "valid: {} parts, {} joints, {} dof",
            plan.parts.len(),
            plan.joints.len(),
            plan.computed_dof()
        )
    } else {
        report.violations.iter().map(|v| format!("{:?}: {}", v.kind, v.message)).collect::<Vec<_>>().join("\n")
    };
    let value = json!({ "valid": report.is_valid(), "dof": plan.computed_dof(), "report": report });
    Ok(Outcome::status(value, text, report.is_valid()))
}

pub fn assemble(plan_path: &Path, programs: &Path, output: Option<&Path>) -> CmdResult {
    let plan = parse_plan(&read(plan_path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", plan_path.display())))?;
    let report = validate_plan(&plan);
    if !report.is_valid() {
        return Err(CliError::Invalid(report.summary()));
    }
    let mut geoms = BTreeMap::new();
    for part in plan.generated_parts() {
        let path = programs.join(format!("{}.json", part.id));
        let prog = parse_program(&read(&path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let reference = plan.reference_connectors(&part.id).unwrap_or_default();
        let r = check_realization_against(&prog, part, reference);
        if !r.passed() {
            let msgs: Vec<_> = r.failures().map(|c| format!("{}: {}", c.name, c.evidence)).collect();
            return Err(CliError::Invalid(format!("part '{}': {}", part.id, msgs.join("; "))));
        }
        geoms.insert(part.id.clone(), prog);
    }
    let geoms = expand_derived(&plan, &geoms).map_err(|e| CliError::Invalid(e.to_string()))?;
    let model = assemble_at_rest(&plan, &geoms).map_err(|e| CliError::Invalid(e.to_string()))?;
    match output {
        Some(path) => {
            write(path, &pretty(&model))?;
            let value = json!({ "output": path, "frame": model.frame() });
            Ok(Outcome::ok(value, format!("wrote {} ({} parts)", path.display(), model.poses.len())))
        }
        None => {
            let value = to_json(&model);
            let text = pretty(&model);
            Ok(Outcome::ok(value, text))
        }
    }
}

fn frame_text(frame: &artikit::assembler::PoseFrame) -> String {
    let mut s = String::new();
    for (part, p) in &frame.poses {
        let [w, x, y, z] = p.rotation.wxyz();
        let t = p.translation;
        let _ = writeln!(s, "{part}: t=[{:.6}, {:.6}, {:.6}] q=[{w:.9}, {x:.9}, {y:.9}, {z:.9}]", t.x, t.y, t.z);
    }
    s.trim_end().to_string()
}

pub fn fk(path: &Path, values: &JointValues) -> CmdResult {
    let model = load_model(path)?;
    let q = parse_joint_values(&model, values)?;
    let fk = model.forward_kinematics(&q).map_err(|e| CliError::Invalid(e.to_string()))?;
    let mut value = to_json(&fk.frame);
    value["clamped"] = json!(fk.clamped);
    Ok(Outcome::ok(value, frame_text(&fk.frame)))
}

pub fn animate(path: &Path, frames: usize, out: Option<&Path>) -> CmdResult {
    let model = load_model(path)?;
    let keyframes = model.keyframes(frames).map_err(|e| CliError::Invalid(e.to_string()))?;
    match out {
        Some(dir) => {
            let files = write_keyframes(&keyframes, dir)?;
            let value = json!({ "frames": keyframes.len(), "files": files });
            Ok(Outcome::ok(value, format!("wrote {} keyframes to {}", files.len(), dir.display())))
        }
        None => Ok(Outcome::ok(to_json(&keyframes), pretty(&keyframes))),
    }
}

pub fn verify(path: &Path, cfg: &CliConfig) -> CmdResult {
    let model = load_model(path)?;
    let icfg = InterferenceConfig { samples: cfg.samples, seed: cfg.seed, ..Default::default() };
    let report = verify_model(&model, cfg.frames_per_dof, icfg).map_err(|e| CliError::Invalid(e.to_string()))?;
    let mut text = String::new();
    for c in &report.checks {
        let _ = writeln!(text, "{} {} [{}] {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.class, c.evidence);
    }
    let _ = write!(text, "{}", if report.passed() { "verify: pass" } else { "verify: FAIL" });
    let value = json!({ "passed": report.passed(), "report": report });
    Ok(Outcome::status(value, text, report.passed()))
}

pub fn export(cmd: &ExportCommand, cfg: &CliConfig) -> CmdResult {
    match cmd {
        ExportCommand::Urdf { model, out, resolution } => {
            let model = load_model(model)?;
            let res = resolution.unwrap_or(cfg.resolution);
            let ex = export_urdf(&model, out, res)?;
            let problems = lint(&ex.document, Some(out));
            let mut text = format!(
                "wrote {} ({} links, {} joints, {} meshes)",
                ex.urdf_path.display(),
                ex.document.links.len(),
                ex.document.joints.len(),
                ex.mesh_files.len()
            );
            for p in &problems {
                let _ = write!(text, "\nlint: {p}");
            }
            let value = json!({
                "urdf": ex.urdf_path,
                "meshes": ex.mesh_files,
                "links": ex.document.links.len(),
                "joints": ex.document.joints.len(),
                "lint": problems,
            });
            Ok(Outcome::status(value, text, problems.is_empty()))
        }
        ExportCommand::Scene { model, out, resolution, q } => {
            let model = load_model(model)?;
            let qv = parse_joint_values(&model, q)?;
            let res = resolution.unwrap_or(cfg.resolution);
            let (scene, files) = export_scene(&model, (!qv.is_empty()).then_some(&qv), out, res)?;
            let value = json!({ "scene": scene, "files": files });
            Ok(Outcome::ok(value, format!("wrote {} files to {}", files.len(), out.display())))
        }
    }
}

#[derive(Deserialize)]
struct Probe {
    part_id: Option<Value>,
    plan: Option<Value>,
}

/// Surface samples of an OBJ mesh, a part program or an assembled model (world frame).
pub fn load_samples(path: &Path, count: usize, seed: u64, resolution: usize) -> Result<Vec<Vec3>, CliError> {
    let text = read(path)?;
    let bad = |e: &dyn std::fmt::Display| CliError::Invalid(format!("{}: {e}", path.display()));
    let mesh = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")) {
        parse_obj(&text).map_err(|e| bad(&e))?
    } else {
        let probe: Probe = serde_json::from_str(&text).map_err(|e| bad(&e))?;
        if probe.part_id.is_some() {
            let prog = parse_program(&text).map_err(|e| bad(&e))?;
            return prog.sample_surface(count, seed).map_err(|e| bad(&e));
        }
        if probe.plan.is_none() {
            return Err(bad(&"expected an OBJ mesh, a part program or an assembled model"));
        }
        let model = load_model(path)?;
        let mut all = TriangleMesh::default();
        for (id, g) in &model.geometries {
            let m = meshify(g, resolution).map_err(|e| bad(&e))?;
            all.append(&m.transformed(&model.poses[id]));
        }
        all
    };
    mesh.sample_surface(count, seed).map_err(|e| bad(&e))
}

fn shape_metrics(pair: &ShapePair, cfg: &CliConfig) -> Result<SampleMetrics, CliError> {
    let res = pair.resolution.unwrap_or(cfg.resolution);
    let ecfg = EvalConfig {
        points: pair.points,
        icp: !pair.no_icp,
        normalize: match pair.normalize {
            Normalize::UnitCube => NormalizeMode::UnitCube,
            Normalize::Diagonal => NormalizeMode::Diagonal,
        },
        seed: cfg.seed,
    };
    let load = |p: &Path, seed| match load_samples(p, pair.points, seed, res) {
        Ok(s) => Ok(Some(s)),
        Err(CliError::Invalid(msg)) => {
            log::warn!("{msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    };
    let pred = load(&pair.pred, cfg.seed)?;
    let gt = load(&pair.gt, cfg.seed.wrapping_add(1))?;
    Ok(match (pred, gt) {
        (Some(p), Some(g)) => evaluate_clouds(&p, &g, &ecfg),
        _ => SampleMetrics::failure("input could not be sampled"),
    })
}

pub fn metrics(cmd: &MetricsCommand, cfg: &CliConfig) -> CmdResult {
    let (name, pair) = match cmd {
        MetricsCommand::Cd(p) => ("pcd", p),
        MetricsCommand::Hd(p) => ("hd", p),
        MetricsCommand::Iogt(p) => ("iogt", p),
        MetricsCommand::Joints { pred, gt, threshold } => return joints(pred, gt, *threshold),
    };
    let m = shape_metrics(pair, cfg)?;
    let v = match name {
        "pcd" => m.pcd,
        "hd" => m.hd,
        _ => m.iogt,
    };
    let mut text = format!("{name} {v:.9}");
    if let Some(e) = &m.error {
        let _ = write!(text, " (failed: {e})");
    }
    let value = json!({ "metric": name, "value": v, "sample": m });
    Ok(Outcome::ok(value, text))
}

fn joints(pred: &Path, gt: &Path, threshold: f64) -> CmdResult {
    let p = load_model(pred)?;
    let g = load_model(gt)?;
    let bounds = model_bounds(&g).ok_or_else(|| CliError::Invalid("ground-truth model has no bounds".into()))?;
    let n = unit_cube_normalization(&bounds).map_err(|e| CliError::Invalid(e.to_string()))?;
    let records = |m: &AssembledModel| -> Result<Vec<_>, CliError> {
        Ok(joint_records(m).map_err(|e| CliError::Invalid(e.to_string()))?.iter().map(|r| r.normalized(&n)).collect())
    };
    let m = joint_set_metrics(&records(&p)?, &records(&g)?, threshold);
    let text = format!("type_accuracy {:.6} f1 {:.6} matched {}", m.type_accuracy, m.f1, m.pairs.len());
    Ok(Outcome::ok(to_json(&m), text))
}

fn prompt_choice(summaries: &[String]) -> usize {
    let mut err = std::io::stderr();
    for (i, s) in summaries.iter().enumerate() {
        let _ = writeln!(err, "  [{i}] {s}");
    }
    let _ = write!(err, "choose an alternative [0-{}]: ", summaries.len().saturating_sub(1));
    let _ = err.flush();
    let mut line = String::new();
    if std::io::stdin().lock().read_line(&mut line).is_err() {
        return 0;
    }
    line.trim().parse().unwrap_or(0)
}

fn bind_agents(kind: AgentKind, cfg: &CliConfig) -> Result<AgentBinding, CliError> {
    match kind {
        AgentKind::Stub => {
            let dir = cfg.fixtures.clone().ok_or_else(|| CliError::Usage("--agents stub needs --fixtures DIR".into()))?;
            if !dir.is_dir() {
                return Err(CliError::Io(format!("{}: not a directory", dir.display())));
            }
            Ok(FixtureAgent::binding(dir))
        }
        AgentKind::Remote => {
            let endpoint = cfg.endpoint.clone().ok_or_else(|| CliError::Usage("--agents remote needs an endpoint".into()))?;
            let model = cfg.model.clone().ok_or_else(|| CliError::Usage("--agents remote needs a model name".into()))?;
            let api_key = std::env::var(API_KEY_ENV).ok();
            if api_key.is_none() {
                log::warn!("{API_KEY_ENV} is not set; sending requests without a bearer token");
            }
            let mut rc = RemoteConfig { endpoint, model, api_key, templates: BTreeMap::new() };
            if let Some(dir) = &cfg.templates {
                rc.load_templates(dir).map_err(|e| CliError::Io(e.to_string()))?;
            }
            let agent = RemoteChatAgent::new(rc, Box::new(UreqTransport::new(cfg.timeout)));
            Ok(AgentBinding::uniform(Arc::new(agent)))
        }
    }
}

fn write_run(out: &Path, run: &RunOutcome, cfg: &CliConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let mut put = |path: PathBuf, text: String| -> Result<(), CliError> {
        write(&path, &text)?;
        files.push(path);
        Ok(())
    };
    put(out.join("trace.json"), pretty(&run.trace))?;
    if let Some(plan) = &run.plan {
        put(out.join("plan.json"), pretty(plan))?;
    }
    for (id, prog) in &run.programs {
        put(out.join("programs").join(format!("{id}.json")), pretty(prog))?;
    }
    if let Some(report) = &run.report {
        put(out.join("report.json"), pretty(report))?;
    }
    if let Some(model) = &run.model {
        put(out.join("model.json"), pretty(model))?;
        let ex = export_urdf(model, &out.join("urdf"), cfg.resolution)?;
        files.push(ex.urdf_path);
        files.extend(ex.mesh_files);
        let (_, scene_files) = export_scene(model, None, &out.join("scene"), cfg.resolution)?;
        files.extend(scene_files);
    }
    Ok(files)
}

pub fn pipeline(cmd: &PipelineCommand, cfg: &CliConfig, seed_flag: Option<u64>) -> CmdResult {
    let PipelineCommand::Run { task, agents, choose, .. } = cmd;
    let mut task_doc = parse_task(&read(task)?).map_err(|e| CliError::Invalid(format!("{}: {e}", task.display())))?;
    if let Some(s) = seed_flag {
        task_doc.seed = s;
    }
    let binding = bind_agents(*agents, cfg)?;
    let mut store = match &cfg.store_dir {
        Some(dir) => Some(ExperienceStore::open(dir).map_err(|e| CliError::Io(e.to_string()))?),
        None => None,
    };
    let opts = PipelineOptions {
        budgets: cfg.budgets,
        frames_per_dof: cfg.frames_per_dof,
        interference: InterferenceConfig { samples: cfg.samples, ..Default::default() },
        parallel: cfg.parallel,
        k_good: cfg.k_good,
        k_issue: cfg.k_issue,
    };
    let interactive = choose.is_none() && std::io::stdin().is_terminal() && std::io::stderr().is_terminal();
    let chooser = |summaries: &[String]| -> usize {
        match choose {
            Some(i) => *i,
            None if interactive => prompt_choice(summaries),
            None => 0,
        }
    };
    let run = run_pipeline(&task_doc, &binding, &opts, store.as_mut(), &chooser);
    let files = match &cfg.out_dir {
        Some(out) => write_run(out, &run, cfg)?,
        None => Vec::new(),
    };
    let t = &run.trace;
    let states: Vec<String> = t.states().iter().map(|s| to_json(s).as_str().unwrap_or_default().to_string()).collect();
    let mut text = format!("status {}\nstates {}\n", to_json(&t.status).as_str().unwrap_or_default(), states.join(" -> "));
    let calls: Vec<String> = t.calls.iter().map(|(r, n)| format!("{}={n}", r.name())).collect();
    let _ = write!(text, "calls {}\nrollbacks {}", calls.join(" "), t.design_rollbacks);
    if !t.alternatives.is_empty() {
        let _ = write!(text, "\nalternatives {} (chose {})", t.alternatives.len(), t.chosen.unwrap_or(0));
    }
    if let Some(f) = &t.failure {
        let _ = write!(text, "\nfailure {:?} at {:?} [{}]: {}", f.kind, f.stage, f.class, f.message);
    }
    let value = json!({ "trace": t, "model": run.model.as_ref().map(|m| m.frame()), "files": files });
    let code = match (&t.status, &t.failure) {
        (State::Done, _) => EXIT_OK,
        (_, Some(f)) if f.kind == FailureKind::AgentUnavailable => EXIT_IO,
        _ => EXIT_INVALID,
    };
    Ok(Outcome { value, text, code })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseInput {
    partition: Partition,
    requirement: String,
    #[serde(default)]
    plan_digest: String,
    #[serde(default)]
    issues: Vec<String>,
    #[serde(default)]
    heuristics: Vec<String>,
}

fn open_store(flag: &Option<PathBuf>, cfg: &CliConfig) -> Result<ExperienceStore, CliError> {
    let dir = flag.clone().or_else(|| cfg.store_dir.clone()).ok_or_else(|| CliError::Usage("--store DIR is required".into()))?;
    ExperienceStore::open(&dir).map_err(|e| CliError::Io(e.to_string()))
}

pub fn store(cmd: &StoreCommand, cfg: &CliConfig) -> CmdResult {
    match cmd {
        StoreCommand::Add { case, store } => {
            let input: CaseInput =
                serde_json::from_str(&read(case)?).map_err(|e| CliError::Invalid(format!("{}: {e}", case.display())))?;
            let c = ExperienceCase::new(input.partition, &input.requirement, &input.plan_digest, input.issues, input.heuristics)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            let mut s = open_store(store, cfg)?;
            let id = s.add(c).map_err(|e| CliError::Io(e.to_string()))?;
            Ok(Outcome::ok(json!({ "id": id }), id))
        }
        StoreCommand::Query { text, context, k_good, k_issue, store } => {
            let s = open_store(store, cfg)?;
            let ctx = match context {
                Context::Design => QueryContext::Design,
                Context::Generation => QueryContext::Generation,
            };
            let hits = s.query(text, ctx, k_good.unwrap_or(cfg.k_good), k_issue.unwrap_or(cfg.k_issue));
            let lines: Vec<String> = hits
                .iter()
                .map(|h| format!("{:.6} {:?} {} {}", h.score, h.case.partition, h.case.id, h.case.requirement))
                .collect();
            Ok(Outcome::ok(to_json(&hits), lines.join("\n")))
        }
        StoreCommand::Stats { store } => {
            let s = open_store(store, cfg)?;
            let st = s.stats();
            let text = format!("good {} issue {} skipped {}", st.good, st.issue, st.skipped_lines);
            Ok(Outcome::ok(to_json(&st), text))
        }
    }
}
