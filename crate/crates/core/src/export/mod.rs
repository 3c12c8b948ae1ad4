//! Asset emission: URDF with OBJ meshes, scene files of world poses, and
//! per-keyframe pose files.

mod urdf;

pub use urdf::*;

use crate::assembler::{AssembledModel, AssemblyError, JointCoordinates, PoseFrame};
use crate::mesh::{meshify_all, MeshError};
use crate::program::ProgramError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("part '{0}' has no geometry to export")]
    EmptyProgram(String),
    #[error("part '{part}': {source}")]
    Program { part: String, source: ProgramError },
    #[error("joint '{joint}': {message}")]
    Limits { joint: String, message: String },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Mesh(MeshError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn write(path: &Path, contents: &str) -> Result<(), ExportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ExportError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })
}

/// Writes `meshes/<part>.obj` under `dir` for every part, in part-local millimeters.
pub fn write_meshes(model: &AssembledModel, dir: &Path, resolution: usize) -> Result<Vec<PathBuf>, ExportError> {
    let meshes = meshify_all(&model.geometries, resolution).map_err(|e| match e {
        MeshError::Program(ProgramError::EmptyProgram) => {
            let part = model.geometries.iter().find(|(_, p)| p.bounding_box().is_err()).map(|(k, _)| k.clone());
            ExportError::EmptyProgram(part.unwrap_or_default())
        }
        other => ExportError::Mesh(other),
    })?;
    let mut files = Vec::with_capacity(meshes.len());
    for (part, mesh) in meshes {
        let path = dir.join(mesh_path(&part));
        let comment = format!("part {part}\nunits: millimeters (URDF applies scale 0.001 to meters)");
        write(&path, &mesh.to_obj(&comment))?;
        files.push(path);
    }
    Ok(files)
}

fn file_stem(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    if s.is_empty() {
        "model".into()
    } else {
        s
    }
}

#[derive(Debug)]
pub struct UrdfExport {
    pub document: UrdfDocument,
    pub urdf_path: PathBuf,
    pub mesh_files: Vec<PathBuf>,
}

/// Writes `<name>.urdf` and its meshes into `out_dir`.
pub fn export_urdf(model: &AssembledModel, out_dir: &Path, resolution: usize) -> Result<UrdfExport, ExportError> {
    let document = build_urdf(model)?;
    let mesh_files = write_meshes(model, out_dir, resolution)?;
    let urdf_path = out_dir.join(format!("{}.urdf", file_stem(&model.plan.name)));
    write(&urdf_path, &document.to_xml())?;
    Ok(UrdfExport { document, urdf_path, mesh_files })
}

/// Scene file: mesh paths and world poses (mm) for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub name: String,
    pub units: String,
    pub meshes: BTreeMap<String, String>,
    pub frame: PoseFrame,
}

pub const SCENE_FILE: &str = "scene.json";

/// Writes part meshes and `scene.json` at coordinates `q` (rest when `None`).
pub fn export_scene(
    model: &AssembledModel,
    q: Option<&JointCoordinates>,
    out_dir: &Path,
    resolution: usize,
) -> Result<(Scene, Vec<PathBuf>), ExportError> {
    let frame = match q {
        Some(q) => model.forward_kinematics(q)?.frame,
        None => model.frame(),
    };
    let mut files = write_meshes(model, out_dir, resolution)?;
    let scene = Scene {
        name: model.plan.name.clone(),
        units: "mm".into(),
        meshes: model.geometries.keys().map(|k| (k.clone(), mesh_path(k))).collect(),
        frame,
    };
    let path = out_dir.join(SCENE_FILE);
    write(&path, &serde_json::to_string_pretty(&scene).expect("scene serializes"))?;
    files.push(path);
    Ok((scene, files))
}

/// Writes `frame_000.json`, `frame_001.json`, ... one per keyframe.
pub fn write_keyframes(frames: &[PoseFrame], out_dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let path = out_dir.join(format!("frame_{k:03}.json"));
            write(&path, &serde_json::to_string_pretty(f).expect("frame serializes"))?;
            Ok(path)
        })
        .collect()
}

pub fn read_pose_frame(path: &Path) -> Result<PoseFrame, ExportError> {
    let text = fs::read_to_string(path).map_err(|source| ExportError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| ExportError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler::assemble_at_rest;
    use crate::plan::{expand_derived, parse_plan};
    use crate::program::parse_program;
    use crate::se3::Pose;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    const DOOR: &str = r#"{"name":"door","ground":"frame","declared_dof":1,
      "parts":[
        {"id":"frame","connectors":[{"name":"hinge","origin":[-250,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"hinge"}]},
        {"id":"leaf","connectors":[{"name":"hinge","origin":[-200,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"hinge"}]}],
      "joints":[{"id":"hinge","type":"Revolute","parent":{"part":"frame","connector":"hinge"},
        "child":{"part":"leaf","connector":"hinge"},"limits":[{"min":0,"max":120,"unit":"deg"}]}]}"#;

    fn boxed(id: &str, size: [f64; 3], conns: &str) -> String {
        format!(
            r#"{{"part_id":"{id}","steps":[{{"op":"add","kind":"box","params":{{"lx":{},"ly":{},"lz":{}}}}}],"connectors":[{conns}]}}"#,
            size[0], size[1], size[2]
        )
    }

    fn model_for(plan: &str, progs: &[String]) -> AssembledModel {
        let plan = parse_plan(plan).unwrap();
        let geoms = progs.iter().map(|p| parse_program(p).unwrap()).map(|p| (p.part_id.clone(), p)).collect();
        let geoms = expand_derived(&plan, &geoms).unwrap();
        assemble_at_rest(&plan, &geoms).unwrap()
    }

    fn door() -> AssembledModel {
        model_for(
            DOOR,
            &[
                boxed("frame", [500.0, 20.0, 600.0], r#"{"name":"hinge","origin":[-250,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"hinge"}"#),
                boxed("leaf", [400.0, 20.0, 600.0], r#"{"name":"hinge","origin":[-200,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"hinge"}"#),
            ],
        )
    }

    fn ball_and_cylinder() -> AssembledModel {
        let c = |n: &str, o: [f64; 3], z: [f64; 3]| {
            format!(r#"{{"name":"{n}","origin":{o:?},"z_axis":{z:?},"x_axis":[1,0,0],"label":"l"}}"#)
        };
        let plan = format!(
            r#"{{"name":"arm","ground":"base","declared_dof":5,"parts":[
              {{"id":"base","connectors":[{}]}},{{"id":"rod","connectors":[{},{}]}},{{"id":"tip","connectors":[{}]}}],
              "joints":[
               {{"id":"shoulder","type":"Ball","parent":{{"part":"base","connector":"top"}},"child":{{"part":"rod","connector":"bottom"}},"limits":[{{"max":40,"unit":"deg"}}]}},
               {{"id":"sleeve","type":"Cylindrical","parent":{{"part":"rod","connector":"top"}},"child":{{"part":"tip","connector":"bottom"}},"flip":true,
                 "limits":[{{"min":-90,"max":90,"unit":"deg"}},{{"min":0,"max":30,"unit":"mm"}}]}}]}}"#,
            c("top", [0.0, 0.0, 10.0], [0.0, 0.0, 1.0]),
            c("bottom", [0.0, 0.0, -50.0], [0.0, 0.0, 1.0]),
            c("top", [0.0, 0.0, 50.0], [0.0, 0.6, 0.8]),
            c("bottom", [0.0, 0.0, 15.0], [0.0, 0.0, 1.0]),
        );
        model_for(
            &plan,
            &[
                boxed("base", [60.0, 60.0, 20.0], &c("top", [0.0, 0.0, 10.0], [0.0, 0.0, 1.0])),
                boxed(
                    "rod",
                    [10.0, 10.0, 100.0],
                    &format!("{},{}", c("bottom", [0.0, 0.0, -50.0], [0.0, 0.0, 1.0]), c("top", [0.0, 0.0, 50.0], [0.0, 0.6, 0.8])),
                ),
                boxed("tip", [20.0, 20.0, 30.0], &c("bottom", [0.0, 0.0, 15.0], [0.0, 0.0, 1.0])),
            ],
        )
    }

    fn assert_fk_agrees(model: &AssembledModel, doc: &UrdfDocument, samples: usize, seed: u64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ranges = model.sweep_ranges().unwrap();
        for _ in 0..samples {
            let mut q = model.q.clone();
            for (id, i, lo, hi) in &ranges {
                q.get_mut(id).unwrap()[*i] = rng.gen_range(*lo..=*hi);
            }
            let kernel = model.forward_kinematics(&q).unwrap().frame;
            let urdf = doc.geometry_poses(&urdf_joint_values(model, &kernel.q)).unwrap();
            assert_eq!(urdf.len(), model.plan.parts.len());
            for (part, pose) in &kernel.poses {
                let (gap, angle) = pose.scaled(MM_TO_M).distance_to(&urdf[part]);
                assert!(gap < 1e-6 && angle < 1e-6, "{part}: gap {gap} angle {angle} at {q:?}");
            }
        }
    }

    #[test]
    fn door_exports_two_links_one_revolute() {
        let doc = build_urdf(&door()).unwrap();
        assert_eq!(doc.links.len(), 2);
        assert_eq!(doc.joints.len(), 1);
        let j = &doc.joints[0];
        assert_eq!(j.joint_type, UrdfJointType::Revolute);
        let (lo, hi) = j.limit.unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 2.0944).abs() < 1e-4);
        assert!((hi - 120.0 * PI / 180.0).abs() < 1e-15);
        // 500×20×600 mm box of water
        let mass = doc.link("frame").unwrap().inertial.as_ref().unwrap().mass;
        assert!((mass - 6.0).abs() < 1e-9, "{mass}");
    }

    #[test]
    fn ball_and_cylindrical_decompose() {
        let model = ball_and_cylinder();
        let doc = build_urdf(&model).unwrap();
        let massless = doc.links.iter().filter(|l| l.inertial.is_none()).count();
        assert_eq!((doc.links.len(), massless), (6, 3));
        assert_eq!(doc.joints.len(), 5);
        assert!(doc.joints.iter().all(|j| j.joint_type != UrdfJointType::Fixed));
        assert_eq!(doc.joint("shoulder__y").unwrap().limit, Some((-40f64.to_radians(), 40f64.to_radians())));
        assert_fk_agrees(&model, &doc, 20, 1);
    }

    #[test]
    fn xml_round_trip_preserves_document() {
        for model in [door(), ball_and_cylinder()] {
            let doc = build_urdf(&model).unwrap();
            let back = import_urdf(&doc.to_xml()).unwrap();
            assert_eq!(back.links.len(), doc.links.len());
            for (a, b) in doc.joints.iter().zip(&back.joints) {
                assert_eq!((&a.name, a.joint_type, &a.parent, &a.child), (&b.name, b.joint_type, &b.parent, &b.child));
                assert_eq!(a.axis, b.axis);
                assert_eq!(a.limit, b.limit);
                assert!((a.origin.translation - b.origin.translation).norm() < 1e-9);
                assert!(a.origin.rotation.angle_to(&b.origin.rotation) < 1e-9);
            }
            assert_fk_agrees(&model, &back, 20, 2);
        }
    }

    #[test]
    fn fixed_only_has_no_limits() {
        let plan = r#"{"name":"pair","ground":"a","declared_dof":0,"parts":[
            {"id":"a","connectors":[{"name":"c","origin":[0,0,5],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}]},
            {"id":"b","connectors":[{"name":"c","origin":[0,0,-5],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}]}],
            "joints":[{"id":"weld","type":"Fixed","parent":{"part":"a","connector":"c"},"child":{"part":"b","connector":"c"}}]}"#;
        let c = |o: i32| format!(r#"{{"name":"c","origin":[0,0,{o}],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"l"}}"#);
        let model = model_for(plan, &[boxed("a", [10.0; 3], &c(5)), boxed("b", [10.0; 3], &c(-5))]);
        let doc = build_urdf(&model).unwrap();
        assert!(doc.joints.iter().all(|j| j.joint_type == UrdfJointType::Fixed && j.limit.is_none()));
        assert!(!doc.to_xml().contains("<limit"));
    }

    #[test]
    fn importer_rejects_outside_dialect() {
        assert!(matches!(import_urdf(""), Err(UrdfError::Xml(_))));
        let mut xml = build_urdf(&door()).unwrap().to_xml();
        xml = xml.replace("</joint>", r#"<mimic joint="x"/></joint>"#);
        assert!(matches!(import_urdf(&xml), Err(UrdfError::UnsupportedElement(_))));
        let cont = r#"<robot name="r"><link name="a"/><link name="b"/><joint name="j" type="continuous"><parent link="a"/><child link="b"/></joint></robot>"#;
        assert!(matches!(import_urdf(cont), Err(UrdfError::UnsupportedElement(_))));
        assert!(matches!(import_urdf("<sdf/>"), Err(UrdfError::UnsupportedElement(_))));
    }

    #[test]
    fn lint_finds_structural_problems() {
        let dir = tempfile::tempdir().unwrap();
        let model = door();
        let out = export_urdf(&model, dir.path(), 16).unwrap();
        assert!(lint(&out.document, Some(dir.path())).is_empty());
        assert_eq!(out.mesh_files.len(), 2);
        let mut bad = out.document.clone();
        bad.links.push(bad.links[0].clone());
        bad.joints[0].limit = Some((1.0, 0.0));
        let problems = lint(&bad, Some(Path::new("/nonexistent")));
        assert!(problems.iter().any(|p| p.contains("duplicate link")));
        assert!(problems.iter().any(|p| p.contains("lower")));
        assert!(problems.iter().any(|p| p.contains("not found")));
    }

    #[test]
    fn scene_and_keyframe_files() {
        let dir = tempfile::tempdir().unwrap();
        let model = door();
        let (scene, files) = export_scene(&model, None, dir.path(), 16).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(scene.frame.poses[&"frame".to_string()], Pose::identity());
        let frames = model.keyframes(5).unwrap();
        let paths = write_keyframes(&frames, &dir.path().join("anim")).unwrap();
        assert_eq!(paths.len(), 5);
        for (p, f) in paths.iter().zip(&frames) {
            let back = read_pose_frame(p).unwrap();
            assert_eq!(&back, f);
            assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(f).unwrap());
        }
    }
}
