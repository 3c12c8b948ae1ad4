//! Declarative assembly plans: parts with connector frames, typed joints,
//! a ground part and the declared degree-of-freedom count.

use crate::program::{PartProgram, ProgramError};
use crate::report::ErrorClass;
use crate::se3::{frame_from_zx, FrameError, Plane, Pose, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

/// A named attachment frame on a part: origin, primary axis ẑ, reference x̂ and a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectorFrame {
    pub name: String,
    pub origin: Vec3,
    pub z_axis: Vec3,
    pub x_axis: Vec3,
    pub label: String,
}

impl ConnectorFrame {
    pub fn frame(&self) -> Result<Pose, FrameError> {
        frame_from_zx(self.origin, self.z_axis, self.x_axis)
    }

    /// Rebuilds a connector from a pose (x̂ and ẑ are the pose's first and third columns).
    pub fn from_pose(name: &str, label: &str, pose: &Pose) -> Self {
        let (x, _, z) = pose.axes();
        Self { name: name.to_string(), origin: pose.translation, z_axis: z, x_axis: x, label: label.to_string() }
    }

    pub fn mapped(&self, transform: &Pose, mirror: Option<&Plane>) -> Result<Self, FrameError> {
        let mut f = self.frame()?;
        if let Some(m) = mirror {
            f = crate::se3::reflect_frame(&f, m);
        }
        Ok(Self::from_pose(&self.name, &self.label, &transform.compose(&f)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JointType {
    Fixed,
    Revolute,
    Slider,
    Cylindrical,
    Ball,
}

/// What a joint coordinate measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordKind {
    /// Radians internally, degrees in plan files.
    Angle,
    /// Millimeters.
    Length,
}

impl JointType {
    pub const ALL: [JointType; 5] =
        [JointType::Fixed, JointType::Revolute, JointType::Slider, JointType::Cylindrical, JointType::Ball];

    /// Degrees of freedom contributed by one joint of this type.
    pub fn dof(self) -> usize {
        match self {
            JointType::Fixed => 0,
            JointType::Revolute | JointType::Slider => 1,
            JointType::Cylindrical => 2,
            JointType::Ball => 3,
        }
    }

    pub fn coordinates(self) -> &'static [CoordKind] {
        use CoordKind::*;
        match self {
            JointType::Fixed => &[],
            JointType::Revolute => &[Angle],
            JointType::Slider => &[Length],
            JointType::Cylindrical => &[Angle, Length],
            JointType::Ball => &[Angle, Angle, Angle],
        }
    }
}

impl fmt::Display for JointType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitUnit {
    Deg,
    Mm,
}

/// One limit entry as written in a plan. A Ball joint takes a single entry
/// without `min`, read as the maximum tilt of the child ẑ from the parent ẑ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    pub max: f64,
    pub unit: LimitUnit,
}

/// Limits in internal units (rad / mm).
#[derive(Debug, Clone, PartialEq)]
pub enum JointLimits {
    Unlimited,
    Ranges(Vec<(f64, f64)>),
    Cone(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartRef {
    pub part: String,
    pub connector: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub id: String,
    #[serde(rename = "type")]
    pub joint_type: JointType,
    pub parent: PartRef,
    pub child: PartRef,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub limits: Vec<LimitEntry>,
    /// Rest coordinates in plan units (deg / mm); empty means zeros.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rest: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flip: bool,
}

fn to_internal(kind: CoordKind, v: f64) -> f64 {
    match kind {
        CoordKind::Angle => v.to_radians(),
        CoordKind::Length => v,
    }
}

impl JointSpec {
    /// Limits converted to rad/mm, with unit and arity checks.
    pub fn limits_internal(&self) -> Result<JointLimits, String> {
        let coords = self.joint_type.coordinates();
        if self.limits.is_empty() {
            return Ok(JointLimits::Unlimited);
        }
        if self.joint_type == JointType::Ball && self.limits.len() == 1 && self.limits[0].min.is_none() {
            let l = &self.limits[0];
            if l.unit != LimitUnit::Deg {
                return Err("ball cone limit must be in deg".into());
            }
            if !(l.max >= 0.0 && l.max <= 180.0) {
                return Err(format!("ball cone angle {} outside [0, 180] deg", l.max));
            }
            return Ok(JointLimits::Cone(l.max.to_radians()));
        }
        if self.limits.len() != coords.len() {
            return Err(format!(
                "{} joint takes {} limit entries, got {}",
                self.joint_type,
                coords.len(),
                self.limits.len()
            ));
        }
        let mut out = Vec::with_capacity(coords.len());
        for (i, (l, kind)) in self.limits.iter().zip(coords).enumerate() {
            let expected = match kind {
                CoordKind::Angle => LimitUnit::Deg,
                CoordKind::Length => LimitUnit::Mm,
            };
            if l.unit != expected {
                return Err(format!("limit {i} has unit {:?}, expected {:?}", l.unit, expected));
            }
            let min = l.min.ok_or_else(|| format!("limit {i} is missing min"))?;
            if !(min.is_finite() && l.max.is_finite()) || min > l.max {
                return Err(format!("limit {i}: min {min} > max {}", l.max));
            }
            out.push((to_internal(*kind, min), to_internal(*kind, l.max)));
        }
        Ok(JointLimits::Ranges(out))
    }

    /// Rest coordinates in rad/mm, defaulting to zero and clamped into the limits.
    pub fn rest_internal(&self) -> Vec<f64> {
        let coords = self.joint_type.coordinates();
        let raw: Vec<f64> = if self.rest.len() == coords.len() {
            self.rest.iter().zip(coords).map(|(v, k)| to_internal(*k, *v)).collect()
        } else {
            vec![0.0; coords.len()]
        };
        match self.limits_internal() {
            Ok(l) => clamp_coordinates(self.joint_type, &l, &raw).0,
            Err(_) => raw,
        }
    }
}

/// Clamps coordinates into limits; the flag reports whether anything moved.
pub fn clamp_coordinates(t: JointType, limits: &JointLimits, q: &[f64]) -> (Vec<f64>, bool) {
    match limits {
        JointLimits::Unlimited => (q.to_vec(), false),
        JointLimits::Ranges(r) => {
            let mut changed = false;
            let out = q
                .iter()
                .zip(r)
                .map(|(v, (lo, hi))| {
                    let c = v.clamp(*lo, *hi);
                    changed |= c != *v;
                    c
                })
                .collect();
            (out, changed)
        }
        JointLimits::Cone(max_tilt) if t == JointType::Ball && q.len() == 3 => {
            let omega = Vec3::new(q[0], q[1], q[2]);
            match crate::assembler::clamp_ball_tilt(omega, *max_tilt) {
                Some(w) => (vec![w.x, w.y, w.z], true),
                None => (q.to_vec(), false),
            }
        }
        JointLimits::Cone(_) => (q.to_vec(), false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveSpec {
    pub source: String,
    #[serde(default)]
    pub transform: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror: Option<Plane>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    /// Free text handed to agents; not interpreted here.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub orientation_hint: String,
    #[serde(default)]
    pub connectors: Vec<ConnectorFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derive: Option<DeriveSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssemblyPlan {
    pub name: String,
    pub ground: String,
    pub declared_dof: u32,
    pub parts: Vec<PartSpec>,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

/// Deserializes JSON, separating syntax errors from schema errors and keeping the JSON path.
pub(crate) fn parse_json_with_path<T: serde::de::DeserializeOwned>(
    document: &str,
) -> Result<T, (bool, String, String)> {
    if let Err(e) = serde_json::from_str::<serde::de::IgnoredAny>(document) {
        return Err((true, format!("line {} column {}", e.line(), e.column()), e.to_string()));
    }
    let de = &mut serde_json::Deserializer::from_str(document);
    serde_path_to_error::deserialize::<_, T>(de).map_err(|e| {
        let path = e.path().to_string();
        (false, path, e.into_inner().to_string())
    })
}

pub fn parse_plan(document: &str) -> Result<AssemblyPlan, PlanError> {
    parse_json_with_path::<AssemblyPlan>(document).map_err(|(syntax, path, message)| {
        if syntax {
            PlanError::Parse { path, message }
        } else {
            PlanError::Schema { path, message }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateId,
    UnknownGround,
    JointCount,
    SelfJoint,
    NotATree,
    Unreachable,
    UnresolvedConnector,
    DofMismatch,
    BadFrame,
    BadLimits,
    BadDerive,
    BadConnector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
    pub class: ErrorClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub computed_dof: u32,
    pub declared_dof: u32,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        self.violations.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; ")
    }
}

impl AssemblyPlan {
    pub fn part(&self, id: &str) -> Option<&PartSpec> {
        self.parts.iter().find(|p| p.id == id)
    }

    pub fn joint(&self, id: &str) -> Option<&JointSpec> {
        self.joints.iter().find(|j| j.id == id)
    }

    /// Σ δ(τ) over all joints.
    pub fn computed_dof(&self) -> u32 {
        self.joints.iter().map(|j| j.joint_type.dof() as u32).sum()
    }

    /// Reference connectors of a part; derived parts report their source's names.
    pub fn reference_connectors(&self, part_id: &str) -> Option<&[ConnectorFrame]> {
        let p = self.part(part_id)?;
        match &p.derive {
            Some(d) => self.part(&d.source).map(|s| s.connectors.as_slice()),
            None => Some(p.connectors.as_slice()),
        }
    }

    /// Joints in breadth-first order from the ground. `None` if the graph is not a tree rooted at ground.
    pub fn bfs_joints(&self) -> Option<Vec<&JointSpec>> {
        let mut by_parent: BTreeMap<&str, Vec<&JointSpec>> = BTreeMap::new();
        for j in &self.joints {
            by_parent.entry(j.parent.part.as_str()).or_default().push(j);
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        let mut order = Vec::with_capacity(self.joints.len());
        let mut queue = VecDeque::from([self.ground.as_str()]);
        seen.insert(self.ground.as_str());
        while let Some(p) = queue.pop_front() {
            for j in by_parent.get(p).into_iter().flatten() {
                if !seen.insert(j.child.part.as_str()) {
                    return None;
                }
                order.push(*j);
                queue.push_back(j.child.part.as_str());
            }
        }
        if order.len() != self.joints.len() || seen.len() != self.parts.len() {
            return None;
        }
        Some(order)
    }

    /// Parts that generation agents must produce (derived parts excluded).
    pub fn generated_parts(&self) -> impl Iterator<Item = &PartSpec> {
        self.parts.iter().filter(|p| p.derive.is_none())
    }

    /// Joint ids whose parent or child is `part`.
    pub fn joints_touching<'a>(&'a self, part: &'a str) -> impl Iterator<Item = &'a JointSpec> + 'a {
        self.joints.iter().filter(move |j| j.parent.part == part || j.child.part == part)
    }
}

fn violation(kind: ViolationKind, message: String) -> Violation {
    Violation { kind, message, class: ErrorClass::Design }
}

/// Structural validation. Every violation is DESIGN-class.
pub fn validate_plan(p: &AssemblyPlan) -> ValidationReport {
    let mut v = Vec::new();
    let mut ids = BTreeSet::new();
    for part in &p.parts {
        if part.id.is_empty() {
            v.push(violation(ViolationKind::DuplicateId, "part with empty id".into()));
        }
        if !ids.insert(part.id.as_str()) {
            v.push(violation(ViolationKind::DuplicateId, format!("duplicate part id '{}'", part.id)));
        }
        let mut names = BTreeSet::new();
        for c in &part.connectors {
            if !names.insert(c.name.as_str()) {
                v.push(violation(
                    ViolationKind::BadConnector,
                    format!("part '{}': duplicate connector '{}'", part.id, c.name),
                ));
            }
            if c.label.trim().is_empty() {
                v.push(violation(
                    ViolationKind::BadConnector,
                    format!("part '{}': connector '{}' has an empty label", part.id, c.name),
                ));
            }
            if let Err(e) = c.frame() {
                v.push(violation(
                    ViolationKind::BadFrame,
                    format!("part '{}': connector '{}': {e}", part.id, c.name),
                ));
            }
        }
        if let Some(d) = &part.derive {
            match p.part(&d.source) {
                None => v.push(violation(
                    ViolationKind::BadDerive,
                    format!("part '{}' derives from unknown part '{}'", part.id, d.source),
                )),
                Some(src) if src.derive.is_some() => v.push(violation(
                    ViolationKind::BadDerive,
                    format!("part '{}' derives from derived part '{}' (depth > 1)", part.id, d.source),
                )),
                Some(src) if src.id == part.id => v.push(violation(
                    ViolationKind::BadDerive,
                    format!("part '{}' derives from itself", part.id),
                )),
                Some(_) => {}
            }
            if !part.connectors.is_empty() {
                v.push(violation(
                    ViolationKind::BadDerive,
                    format!("derived part '{}' must not declare its own connectors", part.id),
                ));
            }
        }
    }
    if p.part(&p.ground).is_none() {
        v.push(violation(ViolationKind::UnknownGround, format!("ground '{}' is not a part", p.ground)));
    }
    let expected = p.parts.len().saturating_sub(1);
    if p.joints.len() != expected {
        v.push(violation(
            ViolationKind::JointCount,
            format!("{} joints for {} parts (a tree needs {expected})", p.joints.len(), p.parts.len()),
        ));
    }
    let mut joint_ids = BTreeSet::new();
    let mut child_count: BTreeMap<&str, usize> = BTreeMap::new();
    for j in &p.joints {
        if !joint_ids.insert(j.id.as_str()) {
            v.push(violation(ViolationKind::DuplicateId, format!("duplicate joint id '{}'", j.id)));
        }
        if j.parent.part == j.child.part {
            v.push(violation(ViolationKind::SelfJoint, format!("joint '{}' connects '{}' to itself", j.id, j.parent.part)));
        }
        for r in [&j.parent, &j.child] {
            match p.reference_connectors(&r.part) {
                None => v.push(violation(
                    ViolationKind::UnresolvedConnector,
                    format!("joint '{}' references unknown part '{}'", j.id, r.part),
                )),
                Some(cs) if !cs.iter().any(|c| c.name == r.connector) => v.push(violation(
                    ViolationKind::UnresolvedConnector,
                    format!("joint '{}' references unknown connector '{}.{}'", j.id, r.part, r.connector),
                )),
                Some(_) => {}
            }
        }
        if let Err(e) = j.limits_internal() {
            v.push(violation(ViolationKind::BadLimits, format!("joint '{}': {e}", j.id)));
        }
        if !j.rest.is_empty() && j.rest.len() != j.joint_type.dof() {
            v.push(violation(
                ViolationKind::BadLimits,
                format!("joint '{}': rest has {} coordinates, {} expected", j.id, j.rest.len(), j.joint_type.dof()),
            ));
        }
        *child_count.entry(j.child.part.as_str()).or_default() += 1;
    }
    if child_count.contains_key(p.ground.as_str()) {
        v.push(violation(ViolationKind::NotATree, format!("ground '{}' has a parent joint", p.ground)));
    }
    for (c, n) in &child_count {
        if *n > 1 {
            v.push(violation(ViolationKind::NotATree, format!("part '{c}' has {n} parent joints (cycle or multi-parent)")));
        }
    }
    if p.part(&p.ground).is_some() && p.bfs_joints().is_none() {
        let mut reach = BTreeSet::from([p.ground.as_str()]);
        let mut changed = true;
        while changed {
            changed = false;
            for j in &p.joints {
                if reach.contains(j.parent.part.as_str()) && reach.insert(j.child.part.as_str()) {
                    changed = true;
                }
            }
        }
        let missing: Vec<&str> = p.parts.iter().map(|x| x.id.as_str()).filter(|id| !reach.contains(id)).collect();
        if !missing.is_empty() {
            v.push(violation(
                ViolationKind::Unreachable,
                format!("parts not reachable from ground: {}", missing.join(", ")),
            ));
        }
        if !v.iter().any(|x| x.kind == ViolationKind::NotATree) {
            v.push(violation(ViolationKind::NotATree, "joint graph is not a tree rooted at ground (cycle)".into()));
        }
    }
    let computed = p.computed_dof();
    if computed != p.declared_dof {
        v.push(violation(
            ViolationKind::DofMismatch,
            format!("declared DOF {} but joints sum to {computed}", p.declared_dof),
        ));
    }
    ValidationReport { violations: v, computed_dof: computed, declared_dof: p.declared_dof }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeriveError {
    #[error("derived part '{part}' has no source geometry '{source_id}'")]
    MissingSource { part: String, source_id: String },
    #[error("derived part '{0}' points at a derived source")]
    DepthViolation(String),
    #[error("mirror of part '{0}' needs a primitive that is symmetric under one local-axis negation")]
    MirrorUnsupportedPrimitive(String),
    #[error("derived part '{part}': {source}")]
    Program { part: String, source: ProgramError },
    #[error("derived part '{part}': {source}")]
    Frame { part: String, source: FrameError },
}

/// Adds geometry for every derived part by mapping its source program
/// through the mirror (if any) and then the transform. Inputs are untouched.
pub fn expand_derived(
    p: &AssemblyPlan,
    geometries: &BTreeMap<String, PartProgram>,
) -> Result<BTreeMap<String, PartProgram>, DeriveError> {
    let mut out = geometries.clone();
    for part in &p.parts {
        let Some(d) = &part.derive else { continue };
        if p.part(&d.source).is_some_and(|s| s.derive.is_some()) {
            return Err(DeriveError::DepthViolation(part.id.clone()));
        }
        let src = geometries.get(&d.source).ok_or_else(|| DeriveError::MissingSource {
            part: part.id.clone(),
            source_id: d.source.clone(),
        })?;
        let mapped = src.mapped(&part.id, &d.transform, d.mirror.as_ref()).map_err(|e| match e {
            ProgramError::Frame(f) => DeriveError::Frame { part: part.id.clone(), source: f },
            other => DeriveError::Program { part: part.id.clone(), source: other },
        })?;
        out.insert(part.id.clone(), mapped);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{Primitive, PrimitiveKind, Step, StepOp};

    fn conn(name: &str, origin: [f64; 3], z: [f64; 3], x: [f64; 3]) -> ConnectorFrame {
        ConnectorFrame { name: name.into(), origin: origin.into(), z_axis: z.into(), x_axis: x.into(), label: "mount".into() }
    }

    fn part(id: &str, connectors: Vec<ConnectorFrame>) -> PartSpec {
        PartSpec {
            id: id.into(),
            description: format!("{id} part"),
            parameters: BTreeMap::new(),
            orientation_hint: String::new(),
            connectors,
            derive: None,
        }
    }

    fn joint(id: &str, t: JointType, parent: (&str, &str), child: (&str, &str)) -> JointSpec {
        JointSpec {
            id: id.into(),
            joint_type: t,
            parent: PartRef { part: parent.0.into(), connector: parent.1.into() },
            child: PartRef { part: child.0.into(), connector: child.1.into() },
            limits: vec![],
            rest: vec![],
            flip: false,
        }
    }

    fn chain(types: &[JointType]) -> AssemblyPlan {
        let c = || conn("c", [0.0; 3], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]);
        let mut parts = vec![part("p0", vec![c()])];
        let mut joints = vec![];
        for (i, t) in types.iter().enumerate() {
            parts.push(part(&format!("p{}", i + 1), vec![c()]));
            joints.push(joint(&format!("j{i}"), *t, (&format!("p{i}"), "c"), (&format!("p{}", i + 1), "c")));
        }
        let declared = types.iter().map(|t| t.dof() as u32).sum();
        AssemblyPlan { name: "chain".into(), ground: "p0".into(), declared_dof: declared, parts, joints }
    }

    #[test]
    fn minimal_plan_parses_and_validates() {
        let doc = r#"{"name":"block","ground":"base","declared_dof":0,
            "parts":[{"id":"base","description":"a block","parameters":{"lx":10}}],"joints":[]}"#;
        let p = parse_plan(doc).unwrap();
        assert!(validate_plan(&p).is_valid());
    }

    #[test]
    fn closed_joint_type_enum() {
        let doc = r#"{"name":"x","ground":"a","declared_dof":1,
            "parts":[{"id":"a","connectors":[]},{"id":"b"}],
            "joints":[{"id":"j","type":"hinge","parent":{"part":"a","connector":"c"},"child":{"part":"b","connector":"c"}}]}"#;
        match parse_plan(doc) {
            Err(PlanError::Schema { path, .. }) => assert_eq!(path, "joints[0].type"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_syntax_errors() {
        let doc = r#"{"name":"x","ground":"a","declared_dof":0,"parts":[{"id":"a","colour":"red"}]}"#;
        assert!(matches!(parse_plan(doc), Err(PlanError::Schema { .. })));
        assert!(matches!(parse_plan("{\"name\": "), Err(PlanError::Parse { .. })));
        assert!(matches!(parse_plan("{} {}"), Err(PlanError::Parse { .. })));
    }

    #[test]
    fn dof_table() {
        let expected = [0, 1, 1, 2, 3];
        for (t, d) in JointType::ALL.iter().zip(expected) {
            assert_eq!(t.dof(), d);
        }
        let mut p = chain(&[JointType::Revolute, JointType::Fixed, JointType::Ball]);
        assert_eq!(p.declared_dof, 4);
        assert!(validate_plan(&p).is_valid());
        p.declared_dof = 5;
        let r = validate_plan(&p);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].kind, ViolationKind::DofMismatch);
        assert_eq!(r.violations[0].class, ErrorClass::Design);
    }

    #[test]
    fn cycle_is_reported() {
        let c = || conn("c", [0.0; 3], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]);
        let p = AssemblyPlan {
            name: "cycle".into(),
            ground: "A".into(),
            declared_dof: 0,
            parts: vec![part("A", vec![c()]), part("B", vec![c()]), part("C", vec![c()])],
            joints: vec![
                joint("ab", JointType::Fixed, ("A", "c"), ("B", "c")),
                joint("bc", JointType::Fixed, ("B", "c"), ("C", "c")),
                joint("ca", JointType::Fixed, ("C", "c"), ("A", "c")),
            ],
        };
        let r = validate_plan(&p);
        let kinds: Vec<_> = r.violations.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::JointCount));
        assert!(kinds.contains(&ViolationKind::NotATree));
    }

    #[test]
    fn unresolved_connector_and_bad_frame() {
        let mut p = chain(&[JointType::Revolute]);
        p.joints[0].child.connector = "nope".into();
        p.parts[0].connectors[0].x_axis = Vec3::new(0.0, 0.0, 1.0);
        let kinds: Vec<_> = validate_plan(&p).violations.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::UnresolvedConnector));
        assert!(kinds.contains(&ViolationKind::BadFrame));
    }

    #[test]
    fn limits_and_rest() {
        let mut j = joint("j", JointType::Revolute, ("a", "c"), ("b", "c"));
        j.limits = vec![LimitEntry { min: Some(10.0), max: 120.0, unit: LimitUnit::Deg }];
        assert_eq!(j.limits_internal().unwrap(), JointLimits::Ranges(vec![(10f64.to_radians(), 120f64.to_radians())]));
        // rest 0 lies outside [10, 120] and is clamped
        assert_eq!(j.rest_internal(), vec![10f64.to_radians()]);
        j.limits[0].unit = LimitUnit::Mm;
        assert!(j.limits_internal().is_err());
        j.limits = vec![LimitEntry { min: Some(5.0), max: 1.0, unit: LimitUnit::Deg }];
        assert!(j.limits_internal().is_err());
        let mut b = joint("b", JointType::Ball, ("a", "c"), ("b", "c"));
        b.limits = vec![LimitEntry { min: None, max: 30.0, unit: LimitUnit::Deg }];
        assert_eq!(b.limits_internal().unwrap(), JointLimits::Cone(30f64.to_radians()));
        let mut cyl = joint("c", JointType::Cylindrical, ("a", "c"), ("b", "c"));
        cyl.limits = vec![
            LimitEntry { min: Some(0.0), max: 90.0, unit: LimitUnit::Deg },
            LimitEntry { min: Some(-10.0), max: 25.0, unit: LimitUnit::Mm },
        ];
        cyl.rest = vec![45.0, 40.0];
        assert_eq!(cyl.rest_internal(), vec![45f64.to_radians(), 25.0]);
    }

    fn box_program(id: &str, connectors: Vec<ConnectorFrame>) -> PartProgram {
        PartProgram {
            part_id: id.into(),
            steps: vec![Step {
                op: StepOp::Add,
                primitive: Primitive {
                    kind: PrimitiveKind::Box { lx: 40.0, ly: 40.0, lz: 600.0 },
                    placement: Pose::from_translation(Vec3::new(10.0, 5.0, 300.0)),
                },
            }],
            connectors,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn derive_translation_and_depth() {
        let leg_conn = vec![
            conn("top", [10.0, 5.0, 600.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]),
            conn("foot", [10.0, 5.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]),
        ];
        let mut plan = chain(&[]);
        plan.parts.push(part("leg", leg_conn.clone()));
        let mut copy = part("leg2", vec![]);
        copy.derive = Some(DeriveSpec {
            source: "leg".into(),
            transform: Pose::from_translation(Vec3::new(400.0, 0.0, 0.0)),
            mirror: None,
        });
        plan.parts.push(copy);
        let geoms = BTreeMap::from([("leg".to_string(), box_program("leg", leg_conn.clone()))]);
        let out = expand_derived(&plan, &geoms).unwrap();
        let d = &out["leg2"];
        assert_eq!(d.part_id, "leg2");
        assert_eq!(d.steps[0].primitive.placement.translation, Vec3::new(410.0, 5.0, 300.0));
        for (a, b) in d.connectors.iter().zip(&leg_conn) {
            assert!((a.origin - (b.origin + Vec3::new(400.0, 0.0, 0.0))).norm() < 1e-12);
        }
        assert_eq!(out["leg"], geoms["leg"]);

        let mut deeper = part("leg3", vec![]);
        deeper.derive = Some(DeriveSpec { source: "leg2".into(), transform: Pose::identity(), mirror: None });
        plan.parts.push(deeper);
        assert!(validate_plan(&plan).violations.iter().any(|v| v.kind == ViolationKind::BadDerive));
        assert!(matches!(expand_derived(&plan, &geoms), Err(DeriveError::DepthViolation(_))));
        plan.parts.pop();
        assert!(matches!(expand_derived(&plan, &BTreeMap::new()), Err(DeriveError::MissingSource { .. })));
    }

    #[test]
    fn derive_mirror_keeps_handedness() {
        let door_conn = vec![conn("hinge", [2.0, 3.0, 4.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])];
        let mut plan = chain(&[]);
        plan.parts.push(part("door_l", door_conn.clone()));
        let mut mirror = part("door_r", vec![]);
        let plane = Plane::new(Vec3::zeros(), Vec3::x()).unwrap();
        mirror.derive = Some(DeriveSpec { source: "door_l".into(), transform: Pose::identity(), mirror: Some(plane) });
        plan.parts.push(mirror);
        let geoms = BTreeMap::from([("door_l".to_string(), box_program("door_l", door_conn))]);
        let out = expand_derived(&plan, &geoms).unwrap();
        let c = &out["door_r"].connectors[0];
        // reflectFrame oracle: origin (-2,3,4), ẑ reflected = (0,0,1), x̂ reflected then negated = (1,0,0)
        assert!((c.origin - Vec3::new(-2.0, 3.0, 4.0)).norm() < 1e-12);
        assert!((c.z_axis - Vec3::z()).norm() < 1e-12);
        assert!((c.x_axis - Vec3::x()).norm() < 1e-12);
        let f = c.frame().unwrap();
        assert!((f.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
        let placed = out["door_r"].steps[0].primitive.placement;
        assert!((placed.translation - Vec3::new(-10.0, 5.0, 300.0)).norm() < 1e-12);
    }
}
