use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn artikit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artikit")).args(args).output().expect("binary runs")
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn door_model(dir: &Path) -> String {
    let path = dir.join("door_model.json").display().to_string();
    let out = artikit(&["assemble", &fx("door.json"), "--programs", &fx("programs/door"), "-o", &path]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn plan_validate_exit_codes() {
    let ok = artikit(&["plan", "validate", &fx("door.json")]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = artikit(&["--json", "plan", "validate", &fx("cycle.json")]);
    assert_eq!(bad.status.code(), Some(1));
    let v = json_of(&bad);
    assert_eq!(v["valid"], false);
    let kinds: Vec<&str> = v["report"]["violations"].as_array().unwrap().iter().map(|x| x["kind"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"not_a_tree"), "{kinds:?}");
    let missing = artikit(&["plan", "validate", "/nonexistent/plan.json"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nonexistent"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(artikit(&[]).status.code(), Some(2));
    assert_eq!(artikit(&["plan", "frobnicate"]).status.code(), Some(2));
    assert_eq!(artikit(&["pipeline", "run", &fx("task.json"), "--agents", "stub"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let model = door_model(dir.path());
    assert_eq!(artikit(&["fk", &model, "--set", "hinge"]).status.code(), Some(2));
    assert_eq!(artikit(&["fk", &model, "--set", "hinge=abc"]).status.code(), Some(2));
    assert_eq!(artikit(&["fk", &model, "--set", "nope=1"]).status.code(), Some(1));
}

#[test]
fn fk_takes_plan_units_and_clamps() {
    let dir = tempfile::tempdir().unwrap();
    let model = door_model(dir.path());
    let v = json_of(&artikit(&["--json", "fk", &model, "--set", "hinge=90"]));
    assert!((v["q"]["hinge"][0].as_f64().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    assert_eq!(v["clamped"].as_array().unwrap().len(), 0);
    // leaf rotates a quarter turn about the post
    let q = v["poses"]["leaf"][0].as_array().unwrap();
    assert!((q[0].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    let over = json_of(&artikit(&["--json", "fk", &model, "--set", "hinge=170"]));
    assert_eq!(over["clamped"][0], "hinge");
    assert!((over["q"]["hinge"][0].as_f64().unwrap() - 120f64.to_radians()).abs() < 1e-12);
}

#[test]
fn animate_verify_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let model = door_model(dir.path());
    let frames = dir.path().join("frames");
    let a = json_of(&artikit(&["--json", "animate", &model, "--frames", "4", "--out", frames.to_str().unwrap()]));
    assert_eq!(a["frames"], 4);
    assert!(frames.join("frame_003.json").is_file());

    let v = artikit(&["--json", "verify", &model, "--samples", "512"]);
    assert_eq!(v.status.code(), Some(0));
    assert_eq!(json_of(&v)["passed"], true);

    let urdf = dir.path().join("urdf");
    let e = artikit(&["--json", "export", "urdf", &model, "--out", urdf.to_str().unwrap(), "--resolution", "16"]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    let ev = json_of(&e);
    assert_eq!(ev["lint"].as_array().unwrap().len(), 0);
    assert!(urdf.join("door.urdf").is_file() && urdf.join("meshes/leaf.obj").is_file());

    let scene = dir.path().join("scene");
    let s = json_of(&artikit(&["--json", "export", "scene", &model, "--out", scene.to_str().unwrap(), "--resolution", "16", "--set", "hinge=45"]));
    assert!((s["scene"]["frame"]["q"]["hinge"][0].as_f64().unwrap() - 45f64.to_radians()).abs() < 1e-15);
    assert!(scene.join("scene.json").is_file());
}

#[test]
fn metrics_commands() {
    let dir = tempfile::tempdir().unwrap();
    let model = door_model(dir.path());
    let leaf = fx("programs/door/leaf.json");
    // the two inputs are sampled independently, so only near zero
    let same = json_of(&artikit(&["--json", "metrics", "cd", &leaf, &leaf, "--no-icp"]));
    let other = json_of(&artikit(&["--json", "metrics", "cd", &leaf, &fx("programs/door/frame.json"), "--no-icp"]));
    assert!(same["value"].as_f64().unwrap() < 0.05, "{same}");
    assert!(other["value"].as_f64().unwrap() > 3.0 * same["value"].as_f64().unwrap(), "{other}");
    let io = json_of(&artikit(&["--json", "metrics", "iogt", &model, &model, "--resolution", "16"]));
    assert!(io["value"].as_f64().unwrap() > 0.95, "{io}");
    let obj = dir.path().join("bad.obj");
    std::fs::write(&obj, "v 0 0 0\nf 1 2 3\n").unwrap();
    let failed = json_of(&artikit(&["--json", "metrics", "hd", obj.to_str().unwrap(), &leaf]));
    assert_eq!(failed["sample"]["failed"], true);
    assert_eq!(failed["value"], 3f64.sqrt());
    let j = json_of(&artikit(&["--json", "metrics", "joints", &model, &model]));
    assert_eq!((j["type_accuracy"].as_f64(), j["f1"].as_f64()), (Some(1.0), Some(1.0)));
}

#[test]
fn metrics_are_deterministic_per_seed() {
    let a = fx("programs/door/leaf.json");
    let b = fx("programs/door/frame.json");
    let run = |seed: &str| artikit(&["--json", "--seed", seed, "metrics", "cd", &a, &b]).stdout;
    assert_eq!(run("3"), run("3"));
    assert_ne!(run("3"), run("4"));
}

#[test]
fn pipeline_run_writes_artifacts_and_store() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let store = dir.path().join("store");
    let args = [
        "--json", "pipeline", "run", &fx("task.json"), "--agents", "stub", "--fixtures", &fx("agents/door"),
        "--out", out.to_str().unwrap(), "--store", store.to_str().unwrap(), "--sequential",
    ];
    let r = artikit(&args);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let v = json_of(&r);
    assert_eq!(v["trace"]["status"], "DONE");
    assert_eq!(v["trace"]["seed"], 7);
    for f in ["trace.json", "model.json", "plan.json", "urdf/door.urdf", "scene/scene.json", "programs/leaf.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let stats = json_of(&artikit(&["--json", "store", "stats", "--store", store.to_str().unwrap()]));
    assert_eq!((stats["good"].as_u64(), stats["issue"].as_u64()), (Some(1), Some(0)));
    let seeded = json_of(&artikit(&["--json", "--seed", "11", "pipeline", "run", &fx("task.json"), "--agents", "stub", "--fixtures", &fx("agents/door")]));
    assert_eq!(seeded["trace"]["seed"], 11);
}

#[test]
fn pipeline_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let agents = dir.path().join("agents");
    std::fs::create_dir_all(agents.join("design")).unwrap();
    std::fs::write(agents.join("design/0.json"), std::fs::read_to_string(fixtures().join("cycle.json")).unwrap()).unwrap();
    let r = artikit(&["--json", "pipeline", "run", &fx("task.json"), "--agents", "stub", "--fixtures", agents.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let v = json_of(&r);
    assert_eq!(v["trace"]["status"], "FAILED");
    assert_eq!(v["trace"]["failure"]["kind"], "budget_exhausted");
}

#[test]
fn remote_agent_unreachable_exits_three() {
    let r = artikit(&[
        "pipeline", "run", &fx("task.json"), "--agents", "remote", "--endpoint", "http://127.0.0.1:9/v1/chat/completions",
        "--model", "m",
    ]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    let missing = artikit(&["pipeline", "run", &fx("task.json"), "--agents", "remote"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn store_add_query_stats() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s");
    let s = store.to_str().unwrap();
    let cases = [
        (r#"{"partition":"good","requirement":"cabinet with hinged door","heuristics":["hinge on the carcass edge"]}"#, "a.json"),
        (r#"{"partition":"issue","requirement":"cabinet drawer collides","issues":["drawer too deep"]}"#, "b.json"),
    ];
    for (doc, name) in cases {
        let p = dir.path().join(name);
        std::fs::write(&p, doc).unwrap();
        let r = artikit(&["--json", "store", "add", p.to_str().unwrap(), "--store", s]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
        assert_eq!(json_of(&r)["id"].as_str().unwrap().len(), 16);
    }
    let gen = json_of(&artikit(&["--json", "store", "query", "cabinet", "--context", "generation", "--store", s]));
    assert!(gen.as_array().unwrap().iter().all(|h| h["case"]["partition"] == "good"));
    let design = json_of(&artikit(&["--json", "store", "query", "cabinet", "--store", s]));
    assert_eq!(design.as_array().unwrap().len(), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"partition":"meh","requirement":"x"}"#).unwrap();
    assert_eq!(artikit(&["store", "add", bad.to_str().unwrap(), "--store", s]).status.code(), Some(1));
    assert_eq!(artikit(&["store", "stats"]).status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let model = door_model(dir.path());
    let cfg = dir.path().join("artikit.toml");
    std::fs::write(&cfg, "seed = 5\n[verify]\nsamples = 100\n").unwrap();
    // 100 samples is below the interference minimum, so the file value is visible as a failure
    let from_file = artikit(&["--config", cfg.to_str().unwrap(), "verify", &model]);
    assert_eq!(from_file.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&from_file.stderr).contains("256"));
    let flag = artikit(&["--config", cfg.to_str().unwrap(), "verify", &model, "--samples", "300"]);
    assert_eq!(flag.status.code(), Some(0), "{}", String::from_utf8_lossy(&flag.stderr));
    std::fs::write(&cfg, "unknown = 1\n").unwrap();
    assert_eq!(artikit(&["--config", cfg.to_str().unwrap(), "verify", &model]).status.code(), Some(2));
}

#[test]
fn json_errors_are_machine_readable() {
    let r = artikit(&["--json", "fk", "/nonexistent.json"]);
    assert_eq!(r.status.code(), Some(3));
    assert_eq!(json_of(&r)["kind"], "io");
}
