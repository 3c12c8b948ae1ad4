use artikit::export::import_urdf;
use artikit::mesh::parse_obj;
use artikit::orchestrator::{extract_fenced_json, parse_design_reply, parse_task, validate_role_output, Role};
use artikit::store::parse_case_line;
use artikit::{parse_plan, parse_program};
use proptest::prelude::*;
use std::path::Path;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)).unwrap()
}

fn run_all(text: &str) {
    let _ = parse_plan(text);
    let _ = parse_program(text);
    let _ = parse_task(text);
    let _ = parse_case_line(text);
    let _ = parse_obj(text);
    let _ = import_urdf(text);
    let _ = extract_fenced_json(text);
    let _ = parse_design_reply(text);
    for role in Role::ALL {
        let _ = validate_role_output(role, text);
    }
}

/// Valid documents with one byte range replaced.
fn mutated() -> impl Strategy<Value = String> {
    let seeds = vec![
        fixture("door.json"),
        fixture("cabinet.json"),
        fixture("arm.json"),
        fixture("programs/door/leaf.json"),
        fixture("task.json"),
        fixture("hollow_shell.json"),
    ];
    (prop::sample::select(seeds), any::<prop::sample::Index>(), 0usize..8, "[\\[\\]{}\",:0-9a-z.e+-]{0,6}").prop_map(
        |(doc, at, len, insert)| {
            let bytes = doc.as_bytes();
            let start = at.index(bytes.len());
            let end = (start + len).min(bytes.len());
            let mut out = bytes[..start].to_vec();
            out.extend_from_slice(insert.as_bytes());
            out.extend_from_slice(&bytes[end..]);
            String::from_utf8_lossy(&out).into_owned()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn parsers_never_panic_on_arbitrary_text(text in any::<String>()) {
        run_all(&text);
    }

    #[test]
    fn parsers_never_panic_on_mutated_documents(text in mutated()) {
        run_all(&text);
    }

    #[test]
    fn obj_parser_never_panics(lines in prop::collection::vec("(v|f|vn|#)( -?[0-9]{1,4}(\\.[0-9]{1,3})?(/[0-9]{0,2})?){0,4}", 0..20)) {
        let _ = parse_obj(&lines.join("\n"));
    }

    #[test]
    fn urdf_importer_never_panics(body in "(<link name=\"[a-z]{1,3}\"/>|<joint name=\"j\" type=\"(fixed|revolute|prismatic)\"><parent link=\"[a-z]\"/><child link=\"[a-z]\"/></joint>){0,5}") {
        let _ = import_urdf(&format!("<robot name=\"r\">{body}</robot>"));
    }
}

#[test]
fn fuzz_corpus_seeds_replay() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let mut seen = 0;
    for target in std::fs::read_dir(&root).unwrap() {
        for seed in std::fs::read_dir(target.unwrap().path()).unwrap() {
            let bytes = std::fs::read(seed.unwrap().path()).unwrap();
            run_all(&String::from_utf8_lossy(&bytes));
            seen += 1;
        }
    }
    assert!(seen >= 7, "{seen} corpus seeds");
}
