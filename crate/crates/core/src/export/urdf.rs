//! URDF documents: building from an assembled model, XML emission, a
//! restricted importer, forward kinematics and a structural lint.
//!
//! Multi-DOF joints become chains through massless links: Cylindrical is a
//! revolute followed by a prismatic joint, Ball is revolutes about Z, Y, X.

use crate::assembler::{joint_flip, joint_frames, AssembledModel, JointCoordinates};
use crate::plan::{JointLimits, JointSpec, JointType};
use crate::program::ProgramError;
use crate::se3::{Pose, Rotation, Vec3};
use nalgebra::UnitQuaternion;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use super::ExportError;

pub const MM_TO_M: f64 = 1e-3;
/// kg/m³
pub const DENSITY: f64 = 1000.0;
pub const VOLUME_SAMPLES: usize = 20_000;
/// Prismatic range used when a Slider or Cylindrical joint has no limits (m).
pub const UNLIMITED_PRISMATIC: (f64, f64) = (-1.0, 1.0);
pub const UNLIMITED_REVOLUTE: (f64, f64) = (-PI, PI);
const EFFORT: f64 = 100.0;
const VELOCITY: f64 = 1.0;
const MIN_MASS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UrdfJointType {
    Fixed,
    Revolute,
    Prismatic,
}

impl UrdfJointType {
    pub fn name(self) -> &'static str {
        match self {
            UrdfJointType::Fixed => "fixed",
            UrdfJointType::Revolute => "revolute",
            UrdfJointType::Prismatic => "prismatic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inertial {
    /// Center of mass frame in link coordinates (m).
    pub origin: Pose,
    pub mass: f64,
    /// ixx, ixy, ixz, iyy, iyz, izz (kg·m²).
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshRef {
    /// Geometry frame in link coordinates (m).
    pub origin: Pose,
    pub filename: String,
    pub scale: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrdfLink {
    pub name: String,
    pub inertial: Option<Inertial>,
    /// Shared by `<visual>` and `<collision>`.
    pub mesh: Option<MeshRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrdfJoint {
    pub name: String,
    pub joint_type: UrdfJointType,
    pub parent: String,
    pub child: String,
    /// Joint frame in parent link coordinates (m).
    pub origin: Pose,
    pub axis: Vec3,
    /// (lower, upper) in rad or m.
    pub limit: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrdfDocument {
    pub name: String,
    pub links: Vec<UrdfLink>,
    pub joints: Vec<UrdfJoint>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UrdfError {
    #[error("xml: {0}")]
    Xml(String),
    #[error("unsupported element or attribute: {0}")]
    UnsupportedElement(String),
    #[error("invalid urdf: {0}")]
    Invalid(String),
}

/// Names of the URDF joints a plan joint becomes, in chain order.
pub fn urdf_joint_names(j: &JointSpec) -> Vec<String> {
    let suffixes: &[&str] = match j.joint_type {
        JointType::Fixed | JointType::Revolute | JointType::Slider => return vec![j.id.clone()],
        JointType::Cylindrical => &["rot", "slide"],
        JointType::Ball => &["z", "y", "x"],
    };
    suffixes.iter().map(|s| format!("{}__{s}", j.id)).collect()
}

fn chain_link_name(j: &JointSpec, k: usize) -> String {
    format!("{}__link{}", j.id, k + 1)
}

/// Ball rotation vector as Z, Y, X angles with exp(ω) = Rz·Ry·Rx.
pub fn ball_to_zyx(omega: &Vec3) -> [f64; 3] {
    let (roll, pitch, yaw) = Rotation::from_rotation_vector(*omega).quaternion().euler_angles();
    [yaw, pitch, roll]
}

/// URDF joint values (rad, m) for kernel coordinates; joints absent from `q` take their model value.
pub fn urdf_joint_values(model: &AssembledModel, q: &JointCoordinates) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for j in &model.plan.joints {
        let v = q.get(&j.id).or_else(|| model.q.get(&j.id)).cloned().unwrap_or_default();
        let names = urdf_joint_names(j);
        let values: Vec<f64> = match j.joint_type {
            JointType::Fixed => vec![],
            JointType::Revolute => vec![v[0]],
            JointType::Slider => vec![v[0] * MM_TO_M],
            JointType::Cylindrical => vec![v[0], v[1] * MM_TO_M],
            JointType::Ball => ball_to_zyx(&Vec3::new(v[0], v[1], v[2])).to_vec(),
        };
        out.extend(names.into_iter().zip(values));
    }
    out
}

fn urdf_limits(j: &JointSpec) -> Result<Vec<(f64, f64)>, ExportError> {
    let limits = j.limits_internal().map_err(|message| ExportError::Limits { joint: j.id.clone(), message })?;
    let mm = |(lo, hi): (f64, f64)| (lo * MM_TO_M, hi * MM_TO_M);
    Ok(match (j.joint_type, limits) {
        (JointType::Fixed, _) => vec![],
        (JointType::Revolute, JointLimits::Ranges(r)) => vec![r[0]],
        (JointType::Slider, JointLimits::Ranges(r)) => vec![mm(r[0])],
        (JointType::Cylindrical, JointLimits::Ranges(r)) => vec![r[0], mm(r[1])],
        (JointType::Revolute, _) => vec![UNLIMITED_REVOLUTE],
        (JointType::Slider, _) => vec![UNLIMITED_PRISMATIC],
        (JointType::Cylindrical, _) => vec![UNLIMITED_REVOLUTE, UNLIMITED_PRISMATIC],
        // cos(tilt) = cos(y)·cos(x), so a cone of half-angle c bounds both tilt angles by c.
        (JointType::Ball, JointLimits::Cone(c)) => vec![UNLIMITED_REVOLUTE, (-c, c), (-c, c)],
        (JointType::Ball, _) => vec![UNLIMITED_REVOLUTE; 3],
    })
}

fn box_inertia(mass: f64, extents_m: Vec3) -> [f64; 6] {
    let (x2, y2, z2) = (extents_m.x.powi(2), extents_m.y.powi(2), extents_m.z.powi(2));
    let k = mass / 12.0;
    [k * (y2 + z2), 0.0, 0.0, k * (x2 + z2), 0.0, k * (x2 + y2)]
}

/// Mesh file path used for a part, relative to the URDF file.
pub fn mesh_path(part: &str) -> String {
    format!("meshes/{part}.obj")
}

/// Builds the URDF for `model`. Part meshes are referenced at [`mesh_path`] in millimeters with scale 0.001.
pub fn build_urdf(model: &AssembledModel) -> Result<UrdfDocument, ExportError> {
    let plan = &model.plan;
    let order = plan.bfs_joints().ok_or(ExportError::Assembly(crate::assembler::AssemblyError::NotATree))?;
    // Part frame in its link frame.
    let mut offset: BTreeMap<&str, Pose> = BTreeMap::from([(plan.ground.as_str(), Pose::identity())]);
    let mut joints = Vec::new();
    let mut chain_links = Vec::new();
    for j in order {
        let (fp, fc) = joint_frames(&model.geometries, j)?;
        let parent_offset = offset[j.parent.part.as_str()];
        offset.insert(j.child.part.as_str(), joint_flip(j).compose(&fc.inverse()));
        let origin = parent_offset.compose(&fp).scaled(MM_TO_M);
        let names = urdf_joint_names(j);
        let limits = urdf_limits(j)?;
        let (kinds, axes): (Vec<UrdfJointType>, Vec<Vec3>) = match j.joint_type {
            JointType::Fixed => (vec![UrdfJointType::Fixed], vec![Vec3::z()]),
            JointType::Revolute => (vec![UrdfJointType::Revolute], vec![Vec3::z()]),
            JointType::Slider => (vec![UrdfJointType::Prismatic], vec![Vec3::z()]),
            JointType::Cylindrical => (vec![UrdfJointType::Revolute, UrdfJointType::Prismatic], vec![Vec3::z(); 2]),
            JointType::Ball => (vec![UrdfJointType::Revolute; 3], vec![Vec3::z(), Vec3::y(), Vec3::x()]),
        };
        let n = names.len();
        for (k, name) in names.into_iter().enumerate() {
            let parent = if k == 0 { j.parent.part.clone() } else { chain_link_name(j, k - 1) };
            let child = if k + 1 == n { j.child.part.clone() } else { chain_link_name(j, k) };
            if k + 1 < n {
                chain_links.push(UrdfLink { name: chain_link_name(j, k), inertial: None, mesh: None });
            }
            joints.push(UrdfJoint {
                name,
                joint_type: kinds[k],
                parent,
                child,
                origin: if k == 0 { origin } else { Pose::identity() },
                axis: axes[k],
                limit: limits.get(k).copied(),
            });
        }
    }
    let mut links = Vec::new();
    for part in &plan.parts {
        let prog = model
            .geometries
            .get(&part.id)
            .ok_or_else(|| ExportError::Assembly(crate::assembler::AssemblyError::MissingGeometry(part.id.clone())))?;
        let bbox = prog.bounding_box().map_err(|e| program_error(&part.id, e))?;
        let volume = prog.estimate_volume(VOLUME_SAMPLES, 0).map_err(|e| program_error(&part.id, e))?;
        let mass = (volume * 1e-9 * DENSITY).max(MIN_MASS);
        let geom = offset.get(part.id.as_str()).copied().unwrap_or_default().scaled(MM_TO_M);
        let com = geom.compose(&Pose::from_translation(bbox.center() * MM_TO_M));
        links.push(UrdfLink {
            name: part.id.clone(),
            inertial: Some(Inertial { origin: com, mass, inertia: box_inertia(mass, bbox.extents() * MM_TO_M) }),
            mesh: Some(MeshRef { origin: geom, filename: mesh_path(&part.id), scale: Vec3::repeat(MM_TO_M) }),
        });
    }
    links.extend(chain_links);
    Ok(UrdfDocument { name: plan.name.clone(), links, joints })
}

fn program_error(part: &str, e: ProgramError) -> ExportError {
    match e {
        ProgramError::EmptyProgram => ExportError::EmptyProgram(part.to_string()),
        other => ExportError::Program { part: part.to_string(), source: other },
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn rpy(r: &Rotation) -> [f64; 3] {
    let (roll, pitch, yaw) = r.quaternion().euler_angles();
    [roll, pitch, yaw]
}

fn triple(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn origin_xml(p: &Pose) -> String {
    let t = p.translation;
    format!(r#"<origin xyz="{}" rpy="{}"/>"#, triple([t.x, t.y, t.z]), triple(rpy(&p.rotation)))
}

impl UrdfDocument {
    pub fn link(&self, name: &str) -> Option<&UrdfLink> {
        self.links.iter().find(|l| l.name == name)
    }

    pub fn joint(&self, name: &str) -> Option<&UrdfJoint> {
        self.joints.iter().find(|j| j.name == name)
    }

    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0"?>"#);
        let _ = writeln!(s, r#"<robot name="{}">"#, escape(&self.name));
        for l in &self.links {
            if l.inertial.is_none() && l.mesh.is_none() {
                let _ = writeln!(s, r#"  <link name="{}"/>"#, escape(&l.name));
                continue;
            }
            let _ = writeln!(s, r#"  <link name="{}">"#, escape(&l.name));
            if let Some(i) = &l.inertial {
                let [ixx, ixy, ixz, iyy, iyz, izz] = i.inertia;
                let _ = writeln!(s, "    <inertial>");
                let _ = writeln!(s, "      {}", origin_xml(&i.origin));
                let _ = writeln!(s, r#"      <mass value="{}"/>"#, i.mass);
                let _ = writeln!(
                    s,
                    r#"      <inertia ixx="{ixx}" ixy="{ixy}" ixz="{ixz}" iyy="{iyy}" iyz="{iyz}" izz="{izz}"/>"#
                );
                let _ = writeln!(s, "    </inertial>");
            }
            if let Some(m) = &l.mesh {
                for tag in ["visual", "collision"] {
                    let _ = writeln!(s, "    <{tag}>");
                    let _ = writeln!(s, "      {}", origin_xml(&m.origin));
                    let _ = writeln!(
                        s,
                        r#"      <geometry><mesh filename="{}" scale="{}"/></geometry>"#,
                        escape(&m.filename),
                        triple([m.scale.x, m.scale.y, m.scale.z])
                    );
                    let _ = writeln!(s, "    </{tag}>");
                }
            }
            let _ = writeln!(s, "  </link>");
        }
        for j in &self.joints {
            let _ = writeln!(s, r#"  <joint name="{}" type="{}">"#, escape(&j.name), j.joint_type.name());
            let _ = writeln!(s, r#"    <parent link="{}"/>"#, escape(&j.parent));
            let _ = writeln!(s, r#"    <child link="{}"/>"#, escape(&j.child));
            let _ = writeln!(s, "    {}", origin_xml(&j.origin));
            if j.joint_type != UrdfJointType::Fixed {
                let _ = writeln!(s, r#"    <axis xyz="{}"/>"#, triple([j.axis.x, j.axis.y, j.axis.z]));
                if let Some((lo, hi)) = j.limit {
                    let _ = writeln!(s, r#"    <limit lower="{lo}" upper="{hi}" effort="{EFFORT}" velocity="{VELOCITY}"/>"#);
                }
            }
            let _ = writeln!(s, "  </joint>");
        }
        let _ = writeln!(s, "</robot>");
        s
    }

    /// Link poses (m) for joint values (rad, m); missing values are zero.
    pub fn forward_kinematics(&self, values: &BTreeMap<String, f64>) -> Result<BTreeMap<String, Pose>, UrdfError> {
        let children: BTreeSet<&str> = self.joints.iter().map(|j| j.child.as_str()).collect();
        let roots: Vec<&UrdfLink> = self.links.iter().filter(|l| !children.contains(l.name.as_str())).collect();
        let [root] = roots.as_slice() else {
            return Err(UrdfError::Invalid(format!("expected one root link, found {}", roots.len())));
        };
        let mut poses = BTreeMap::from([(root.name.clone(), Pose::identity())]);
        let mut frontier = vec![root.name.clone()];
        while let Some(link) = frontier.pop() {
            for j in self.joints.iter().filter(|j| j.parent == link) {
                let v = values.get(&j.name).copied().unwrap_or(0.0);
                let motion = match j.joint_type {
                    UrdfJointType::Fixed => Pose::identity(),
                    UrdfJointType::Revolute => Pose::from_rotation(Rotation::from_axis_angle(j.axis, v)),
                    UrdfJointType::Prismatic => Pose::from_translation(j.axis.normalize() * v),
                };
                let pose = poses[&link].compose(&j.origin).compose(&motion);
                if poses.insert(j.child.clone(), pose).is_some() {
                    return Err(UrdfError::Invalid(format!("link '{}' has two parents", j.child)));
                }
                frontier.push(j.child.clone());
            }
        }
        if poses.len() != self.links.len() {
            return Err(UrdfError::Invalid("not every link is reachable from the root".into()));
        }
        Ok(poses)
    }

    /// World pose (m) of each mesh-bearing link's geometry frame.
    pub fn geometry_poses(&self, values: &BTreeMap<String, f64>) -> Result<BTreeMap<String, Pose>, UrdfError> {
        let links = self.forward_kinematics(values)?;
        Ok(self
            .links
            .iter()
            .filter_map(|l| l.mesh.as_ref().map(|m| (l.name.clone(), links[&l.name].compose(&m.origin))))
            .collect())
    }
}

/// Structural problems: duplicate names, dangling references, non-tree
/// topology, bad limits or axes, and (given `base_dir`) missing mesh files.
pub fn lint(doc: &UrdfDocument, base_dir: Option<&Path>) -> Vec<String> {
    let mut out = Vec::new();
    let mut names = BTreeSet::new();
    for l in &doc.links {
        if !names.insert(l.name.as_str()) {
            out.push(format!("duplicate link '{}'", l.name));
        }
        if let Some(m) = &l.mesh {
            if let Some(dir) = base_dir {
                if !dir.join(&m.filename).is_file() {
                    out.push(format!("link '{}': mesh '{}' not found", l.name, m.filename));
                }
            }
        }
        if let Some(i) = &l.inertial {
            let [ixx, _, _, iyy, _, izz] = i.inertia;
            if !(i.mass > 0.0) || !(ixx > 0.0 && iyy > 0.0 && izz > 0.0) {
                out.push(format!("link '{}': non-positive mass or inertia", l.name));
            }
        }
    }
    let mut joint_names = BTreeSet::new();
    let mut parents: BTreeMap<&str, usize> = BTreeMap::new();
    for j in &doc.joints {
        if !joint_names.insert(j.name.as_str()) {
            out.push(format!("duplicate joint '{}'", j.name));
        }
        for end in [&j.parent, &j.child] {
            if !names.contains(end.as_str()) {
                out.push(format!("joint '{}' references unknown link '{end}'", j.name));
            }
        }
        *parents.entry(j.child.as_str()).or_default() += 1;
        if j.joint_type != UrdfJointType::Fixed {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                out.push(format!("joint '{}': axis is not unit length", j.name));
            }
            match j.limit {
                None => out.push(format!("joint '{}': {} joint without limit", j.name, j.joint_type.name())),
                Some((lo, hi)) if !(lo <= hi) => out.push(format!("joint '{}': lower {lo} > upper {hi}", j.name)),
                _ => {}
            }
        }
    }
    for (child, n) in parents {
        if n > 1 {
            out.push(format!("link '{child}' has {n} parent joints"));
        }
    }
    if out.is_empty() {
        if let Err(e) = doc.forward_kinematics(&BTreeMap::new()) {
            out.push(e.to_string());
        }
    }
    out
}

fn unsupported(node: roxmltree::Node) -> UrdfError {
    UrdfError::UnsupportedElement(format!("<{}> at byte {}", node.tag_name().name(), node.range().start))
}

fn elements<'a, 'i>(node: roxmltree::Node<'a, 'i>) -> impl Iterator<Item = roxmltree::Node<'a, 'i>> {
    node.children().filter(|n| n.is_element())
}

fn check_attrs(node: roxmltree::Node, allowed: &[&str]) -> Result<(), UrdfError> {
    for a in node.attributes() {
        if !allowed.contains(&a.name()) {
            return Err(UrdfError::UnsupportedElement(format!("attribute '{}' on <{}>", a.name(), node.tag_name().name())));
        }
    }
    Ok(())
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str, UrdfError> {
    node.attribute(name)
        .ok_or_else(|| UrdfError::Invalid(format!("<{}> is missing '{name}'", node.tag_name().name())))
}

fn number(s: &str) -> Result<f64, UrdfError> {
    let v: f64 = s.trim().parse().map_err(|_| UrdfError::Invalid(format!("bad number '{s}'")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(UrdfError::Invalid(format!("non-finite number '{s}'")))
    }
}

fn numbers3(s: &str) -> Result<[f64; 3], UrdfError> {
    let v: Vec<f64> = s.split_whitespace().map(number).collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| UrdfError::Invalid(format!("expected three numbers, got '{s}'")))
}

fn parse_origin(node: roxmltree::Node) -> Result<Pose, UrdfError> {
    check_attrs(node, &["xyz", "rpy"])?;
    let xyz = node.attribute("xyz").map(numbers3).transpose()?.unwrap_or([0.0; 3]);
    let [r, p, y] = node.attribute("rpy").map(numbers3).transpose()?.unwrap_or([0.0; 3]);
    Ok(Pose::new(Rotation::from_quaternion(UnitQuaternion::from_euler_angles(r, p, y)), Vec3::from(xyz)))
}

fn only_child<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &str) -> Result<Option<roxmltree::Node<'a, 'i>>, UrdfError> {
    let mut found = elements(node).filter(|n| n.tag_name().name() == tag);
    let first = found.next();
    if found.next().is_some() {
        return Err(UrdfError::Invalid(format!("<{}> has more than one <{tag}>", node.tag_name().name())));
    }
    Ok(first)
}

fn origin_of(node: roxmltree::Node) -> Result<Pose, UrdfError> {
    only_child(node, "origin")?.map(parse_origin).transpose().map(Option::unwrap_or_default)
}

fn parse_mesh_block(node: roxmltree::Node) -> Result<MeshRef, UrdfError> {
    check_attrs(node, &[])?;
    let mut geometry = None;
    for c in elements(node) {
        match c.tag_name().name() {
            "origin" => {}
            "geometry" => geometry = Some(c),
            _ => return Err(unsupported(c)),
        }
    }
    let geometry = geometry.ok_or_else(|| UrdfError::Invalid(format!("<{}> has no geometry", node.tag_name().name())))?;
    check_attrs(geometry, &[])?;
    let shapes: Vec<_> = elements(geometry).collect();
    let [mesh] = shapes.as_slice() else {
        return Err(UrdfError::Invalid("<geometry> must hold exactly one shape".into()));
    };
    if mesh.tag_name().name() != "mesh" {
        return Err(unsupported(*mesh));
    }
    check_attrs(*mesh, &["filename", "scale"])?;
    if let Some(c) = elements(*mesh).next() {
        return Err(unsupported(c));
    }
    let scale = mesh.attribute("scale").map(numbers3).transpose()?.unwrap_or([1.0; 3]);
    Ok(MeshRef { origin: origin_of(node)?, filename: attr(*mesh, "filename")?.to_string(), scale: Vec3::from(scale) })
}

fn parse_link(node: roxmltree::Node) -> Result<UrdfLink, UrdfError> {
    check_attrs(node, &["name"])?;
    let mut link = UrdfLink { name: attr(node, "name")?.to_string(), inertial: None, mesh: None };
    for c in elements(node) {
        match c.tag_name().name() {
            "inertial" => {
                check_attrs(c, &[])?;
                let mut mass = None;
                let mut inertia = None;
                for e in elements(c) {
                    match e.tag_name().name() {
                        "origin" => {}
                        "mass" => {
                            check_attrs(e, &["value"])?;
                            mass = Some(number(attr(e, "value")?)?);
                        }
                        "inertia" => {
                            const KEYS: [&str; 6] = ["ixx", "ixy", "ixz", "iyy", "iyz", "izz"];
                            check_attrs(e, &KEYS)?;
                            let mut v = [0.0; 6];
                            for (k, key) in KEYS.iter().enumerate() {
                                v[k] = number(attr(e, key)?)?;
                            }
                            inertia = Some(v);
                        }
                        _ => return Err(unsupported(e)),
                    }
                }
                link.inertial = Some(Inertial {
                    origin: origin_of(c)?,
                    mass: mass.ok_or_else(|| UrdfError::Invalid("<inertial> without <mass>".into()))?,
                    inertia: inertia.ok_or_else(|| UrdfError::Invalid("<inertial> without <inertia>".into()))?,
                });
            }
            "visual" => link.mesh = Some(parse_mesh_block(c)?),
            "collision" => {
                parse_mesh_block(c)?;
            }
            _ => return Err(unsupported(c)),
        }
    }
    Ok(link)
}

fn parse_joint(node: roxmltree::Node) -> Result<UrdfJoint, UrdfError> {
    check_attrs(node, &["name", "type"])?;
    let joint_type = match attr(node, "type")? {
        "fixed" => UrdfJointType::Fixed,
        "revolute" => UrdfJointType::Revolute,
        "prismatic" => UrdfJointType::Prismatic,
        other => return Err(UrdfError::UnsupportedElement(format!("joint type '{other}'"))),
    };
    let mut parent = None;
    let mut child = None;
    let mut axis = Vec3::x();
    let mut limit = None;
    for c in elements(node) {
        match c.tag_name().name() {
            "origin" => {}
            "parent" | "child" => {
                check_attrs(c, &["link"])?;
                let slot = if c.tag_name().name() == "parent" { &mut parent } else { &mut child };
                *slot = Some(attr(c, "link")?.to_string());
            }
            "axis" => {
                check_attrs(c, &["xyz"])?;
                axis = Vec3::from(numbers3(attr(c, "xyz")?)?);
            }
            "limit" => {
                check_attrs(c, &["lower", "upper", "effort", "velocity"])?;
                let lower = c.attribute("lower").map(number).transpose()?.unwrap_or(0.0);
                let upper = c.attribute("upper").map(number).transpose()?.unwrap_or(0.0);
                limit = Some((lower, upper));
            }
            _ => return Err(unsupported(c)),
        }
    }
    if joint_type != UrdfJointType::Fixed && axis.norm() < 1e-12 {
        return Err(UrdfError::Invalid(format!("joint '{}' has a zero axis", attr(node, "name")?)));
    }
    Ok(UrdfJoint {
        name: attr(node, "name")?.to_string(),
        joint_type,
        parent: parent.ok_or_else(|| UrdfError::Invalid("joint without <parent>".into()))?,
        child: child.ok_or_else(|| UrdfError::Invalid("joint without <child>".into()))?,
        origin: origin_of(node)?,
        axis,
        limit,
    })
}

/// Reads the URDF dialect written by [`UrdfDocument::to_xml`]; anything else
/// is reported as unsupported.
pub fn import_urdf(text: &str) -> Result<UrdfDocument, UrdfError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| UrdfError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "robot" {
        return Err(unsupported(root));
    }
    check_attrs(root, &["name"])?;
    let mut out = UrdfDocument { name: attr(root, "name")?.to_string(), links: Vec::new(), joints: Vec::new() };
    for node in elements(root) {
        match node.tag_name().name() {
            "link" => out.links.push(parse_link(node)?),
            "joint" => out.joints.push(parse_joint(node)?),
            _ => return Err(unsupported(node)),
        }
    }
    Ok(out)
}
