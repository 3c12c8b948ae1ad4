//! Deterministic assembly of the kinematic tree: connector-pair alignment,
//! forward kinematics and motion keyframes.

use crate::plan::{clamp_coordinates, AssemblyPlan, CoordKind, JointLimits, JointSpec, JointType};
use crate::program::PartProgram;
use crate::se3::{pose_pair_map, FrameError, Pose, Rotation, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

/// Joint coordinates keyed by joint id (rad for angles, mm for lengths;
/// Ball joints hold a rotation vector).
pub type JointCoordinates = BTreeMap<String, Vec<f64>>;

/// Sweep range for coordinates without declared limits.
pub const UNLIMITED_ANGLE_SWEEP: (f64, f64) = (0.0, FRAC_PI_2);
pub const UNLIMITED_LENGTH_SWEEP: (f64, f64) = (0.0, 50.0);
pub const DEFAULT_FRAMES_PER_DOF: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssemblyError {
    #[error("joint '{joint}' ({joint_type}) takes {expected} coordinates, got {got}")]
    ArityMismatch { joint: String, joint_type: JointType, expected: usize, got: usize },
    #[error("no geometry for part '{0}'")]
    MissingGeometry(String),
    #[error("part '{part}' has no connector '{connector}'")]
    MissingConnector { part: String, connector: String },
    #[error("connector '{connector}' on part '{part}': {source}")]
    Frame { part: String, connector: String, source: FrameError },
    #[error("joint graph is not a tree rooted at the ground part")]
    NotATree,
    #[error("unknown joint id '{0}'")]
    UnknownJointId(String),
    #[error("joint '{joint}': {message}")]
    Limits { joint: String, message: String },
}

/// Relative motion M(τ, q) of the child connector frame in the parent connector frame.
pub fn joint_motion(t: JointType, q: &[f64]) -> Result<Pose, AssemblyError> {
    if q.len() != t.dof() {
        return Err(AssemblyError::ArityMismatch { joint: String::new(), joint_type: t, expected: t.dof(), got: q.len() });
    }
    Ok(match t {
        JointType::Fixed => Pose::identity(),
        JointType::Revolute => Pose::from_rotation(Rotation::rot_z(q[0])),
        JointType::Slider => Pose::from_translation(Vec3::new(0.0, 0.0, q[0])),
        JointType::Cylindrical => Pose::new(Rotation::rot_z(q[0]), Vec3::new(0.0, 0.0, q[1])),
        JointType::Ball => Pose::from_rotation(Rotation::from_rotation_vector(Vec3::new(q[0], q[1], q[2]))),
    })
}

/// Clamps the tilt of a ball rotation (angle between R·ẑ and ẑ) to `max_tilt`
/// using a swing-twist split; twist is kept. `None` when already within the cone.
pub fn clamp_ball_tilt(omega: Vec3, max_tilt: f64) -> Option<Vec3> {
    let r = Rotation::from_rotation_vector(omega);
    let z = Vec3::z();
    let tilt = r.apply(&z).dot(&z).clamp(-1.0, 1.0).acos();
    if tilt <= max_tilt {
        return None;
    }
    let [w, _, _, qz] = r.wxyz();
    let twist = Rotation::from_wxyz(w, 0.0, 0.0, qz).unwrap_or_else(Rotation::identity);
    let swing = r.compose(&twist.inverse());
    let sv = swing.to_rotation_vector();
    let axis = Vec3::new(sv.x, sv.y, 0.0);
    let swing = if axis.norm() > 1e-12 {
        Rotation::from_axis_angle(axis, max_tilt)
    } else {
        // tilt of π: any horizontal axis
        Rotation::from_axis_angle(Vec3::x(), max_tilt)
    };
    Some(swing.compose(&twist).to_rotation_vector())
}

/// Cone test for ball joints.
pub fn ball_tilt(omega: &Vec3) -> f64 {
    let z = Vec3::z();
    Rotation::from_rotation_vector(*omega).apply(&z).dot(&z).clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledModel {
    pub plan: AssemblyPlan,
    pub geometries: BTreeMap<String, PartProgram>,
    #[serde(with = "pose_pair_map")]
    pub poses: BTreeMap<String, Pose>,
    pub q: JointCoordinates,
}

/// Poses and coordinates for one configuration (the `fk`/`animate` frame schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    #[serde(with = "pose_pair_map")]
    pub poses: BTreeMap<String, Pose>,
    pub q: JointCoordinates,
}

fn connector_frame(geoms: &BTreeMap<String, PartProgram>, part: &str, connector: &str) -> Result<Pose, AssemblyError> {
    let g = geoms.get(part).ok_or_else(|| AssemblyError::MissingGeometry(part.to_string()))?;
    let c = g.connector(connector).ok_or_else(|| AssemblyError::MissingConnector {
        part: part.to_string(),
        connector: connector.to_string(),
    })?;
    c.frame().map_err(|source| AssemblyError::Frame { part: part.to_string(), connector: connector.to_string(), source })
}

fn flip_pose(j: &JointSpec) -> Pose {
    if j.flip {
        Pose::from_rotation(Rotation::rot_x(std::f64::consts::PI))
    } else {
        Pose::identity()
    }
}

/// Parent-side (F_parent) and child-side (F_child) connector frames of a joint.
pub fn joint_frames(geoms: &BTreeMap<String, PartProgram>, j: &JointSpec) -> Result<(Pose, Pose), AssemblyError> {
    Ok((
        connector_frame(geoms, &j.parent.part, &j.parent.connector)?,
        connector_frame(geoms, &j.child.part, &j.child.connector)?,
    ))
}

/// The fixed offset applied between the joint motion and the child connector (rotX(π) when flipped).
pub fn joint_flip(j: &JointSpec) -> Pose {
    flip_pose(j)
}

fn motion_for(j: &JointSpec, q: &[f64]) -> Result<Pose, AssemblyError> {
    joint_motion(j.joint_type, q).map_err(|e| match e {
        AssemblyError::ArityMismatch { joint_type, expected, got, .. } => {
            AssemblyError::ArityMismatch { joint: j.id.clone(), joint_type, expected, got }
        }
        other => other,
    })
}

/// World poses for coordinates `q` (which must cover every joint).
fn solve(plan: &AssemblyPlan, geoms: &BTreeMap<String, PartProgram>, q: &JointCoordinates) -> Result<BTreeMap<String, Pose>, AssemblyError> {
    let order = plan.bfs_joints().ok_or(AssemblyError::NotATree)?;
    for p in &plan.parts {
        if !geoms.contains_key(&p.id) {
            return Err(AssemblyError::MissingGeometry(p.id.clone()));
        }
    }
    let mut poses = BTreeMap::new();
    poses.insert(plan.ground.clone(), Pose::identity());
    for j in order {
        let parent = poses[&j.parent.part];
        let (fp, fc) = joint_frames(geoms, j)?;
        let m = motion_for(j, q.get(&j.id).map(Vec::as_slice).unwrap_or(&[]))?;
        let child = parent.compose(&fp).compose(&m).compose(&flip_pose(j)).compose(&fc.inverse());
        poses.insert(j.child.part.clone(), child);
    }
    Ok(poses)
}

/// Rest coordinates of every joint (defaults and clamping applied).
pub fn rest_coordinates(plan: &AssemblyPlan) -> JointCoordinates {
    plan.joints.iter().map(|j| (j.id.clone(), j.rest_internal())).collect()
}

/// Places every part by aligning connector pairs in breadth-first order from the ground.
/// `geometries` must already include derived parts.
pub fn assemble_at_rest(plan: &AssemblyPlan, geometries: &BTreeMap<String, PartProgram>) -> Result<AssembledModel, AssemblyError> {
    let q = rest_coordinates(plan);
    let poses = solve(plan, geometries, &q)?;
    Ok(AssembledModel { plan: plan.clone(), geometries: geometries.clone(), poses, q })
}

fn limits_of(j: &JointSpec) -> Result<JointLimits, AssemblyError> {
    j.limits_internal().map_err(|message| AssemblyError::Limits { joint: j.id.clone(), message })
}

/// Result of forward kinematics: the frame plus the joints whose coordinates were clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct FkResult {
    pub frame: PoseFrame,
    pub clamped: Vec<String>,
}

impl AssembledModel {
    /// Forward kinematics. Joints absent from `q` stay at rest; out-of-limit values are clamped with a warning.
    pub fn forward_kinematics(&self, q: &JointCoordinates) -> Result<FkResult, AssemblyError> {
        let mut full = rest_coordinates(&self.plan);
        let mut clamped = Vec::new();
        for (id, v) in q {
            let j = self.plan.joint(id).ok_or_else(|| AssemblyError::UnknownJointId(id.clone()))?;
            if v.len() != j.joint_type.dof() {
                return Err(AssemblyError::ArityMismatch {
                    joint: id.clone(),
                    joint_type: j.joint_type,
                    expected: j.joint_type.dof(),
                    got: v.len(),
                });
            }
            let (c, changed) = clamp_coordinates(j.joint_type, &limits_of(j)?, v);
            if changed {
                log::warn!("joint '{id}' coordinates {v:?} clamped to {c:?}");
                clamped.push(id.clone());
            }
            full.insert(id.clone(), c);
        }
        let poses = solve(&self.plan, &self.geometries, &full)?;
        Ok(FkResult { frame: PoseFrame { poses, q: full }, clamped })
    }

    /// Same model at another configuration.
    pub fn at(&self, q: &JointCoordinates) -> Result<AssembledModel, AssemblyError> {
        let fk = self.forward_kinematics(q)?;
        Ok(AssembledModel { plan: self.plan.clone(), geometries: self.geometries.clone(), poses: fk.frame.poses, q: fk.frame.q })
    }

    pub fn frame(&self) -> PoseFrame {
        PoseFrame { poses: self.poses.clone(), q: self.q.clone() }
    }

    /// Total number of joint coordinates.
    pub fn coordinate_count(&self) -> usize {
        self.q.values().map(Vec::len).sum()
    }

    /// Per-joint (gap mm, angle rad) between P_par∘F_parent∘M∘Flip and P_child∘F_child.
    pub fn coincidence_residuals(&self) -> Result<Vec<(String, f64, f64)>, AssemblyError> {
        let mut out = Vec::with_capacity(self.plan.joints.len());
        for j in &self.plan.joints {
            let (fp, fc) = joint_frames(&self.geometries, j)?;
            let pose_of = |p: &str| self.poses.get(p).copied().ok_or_else(|| AssemblyError::MissingGeometry(p.to_string()));
            let m = motion_for(j, self.q.get(&j.id).map(Vec::as_slice).unwrap_or(&[]))?;
            let lhs = pose_of(&j.parent.part)?.compose(&fp).compose(&m).compose(&flip_pose(j));
            let rhs = pose_of(&j.child.part)?.compose(&fc);
            let (gap, angle) = lhs.distance_to(&rhs);
            out.push((j.id.clone(), gap, angle));
        }
        Ok(out)
    }

    /// Sweep ranges per (joint, coordinate index), sorted by joint id.
    pub fn sweep_ranges(&self) -> Result<Vec<(String, usize, f64, f64)>, AssemblyError> {
        let mut joints: Vec<&JointSpec> = self.plan.joints.iter().collect();
        joints.sort_by(|a, b| a.id.cmp(&b.id));
        let mut out = Vec::new();
        for j in joints {
            let limits = limits_of(j)?;
            for (i, kind) in j.joint_type.coordinates().iter().enumerate() {
                let default = match kind {
                    CoordKind::Angle => UNLIMITED_ANGLE_SWEEP,
                    CoordKind::Length => UNLIMITED_LENGTH_SWEEP,
                };
                let (lo, hi) = match &limits {
                    JointLimits::Unlimited => default,
                    JointLimits::Ranges(r) => r[i],
                    JointLimits::Cone(c) if i < 2 => (-c, *c),
                    JointLimits::Cone(_) => default,
                };
                out.push((j.id.clone(), i, lo, hi));
            }
        }
        Ok(out)
    }

    /// Motion keyframes: for each movable coordinate a linear grid over its
    /// range with everything else at rest. A static model yields one rest frame.
    pub fn keyframes(&self, frames_per_dof: usize) -> Result<Vec<PoseFrame>, AssemblyError> {
        let n = frames_per_dof.max(2);
        let ranges = self.sweep_ranges()?;
        if ranges.is_empty() {
            return Ok(vec![self.forward_kinematics(&JointCoordinates::new())?.frame]);
        }
        let rest = rest_coordinates(&self.plan);
        let mut out = Vec::with_capacity(ranges.len() * n);
        for (id, i, lo, hi) in ranges {
            for k in 0..n {
                let mut v = rest[&id].clone();
                v[i] = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                let q = JointCoordinates::from([(id.clone(), v)]);
                out.push(self.forward_kinematics(&q)?.frame);
            }
        }
        Ok(out)
    }
}
