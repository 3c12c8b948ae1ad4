//! Rigid transforms and coordinate frames.
//!
//! Rotations are stored as unit quaternions; 3×3 matrices are only
//! materialized at the API edges (frame construction, reflection, export).
//! Lengths are millimeters unless a call site says otherwise.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Vec3 = Vector3<f64>;

/// Axes shorter than this are rejected as zero.
pub const AXIS_EPS: f64 = 1e-9;
/// Above this |ẑ·x̂| a frame is rejected instead of re-orthogonalized.
pub const ORTHOGONALITY_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    #[error("axis is (near) zero")]
    ZeroAxis,
    #[error("z and x axes are not orthogonal (|z·x| = {0:.3e})")]
    NonOrthogonal(f64),
}

/// A unit quaternion. `q` and `-q` describe the same rotation.
#[derive(Debug, Clone, Copy)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Builds from raw (w, x, y, z); normalizes. Returns `None` for a zero quaternion.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return None;
        }
        if (n - 1.0).abs() < 1e-15 {
            return Some(Self(UnitQuaternion::new_unchecked(q)));
        }
        Some(Self(UnitQuaternion::new_normalize(q)))
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        match Unit::try_new(axis, AXIS_EPS) {
            Some(a) => Self(UnitQuaternion::from_axis_angle(&a, angle)),
            None => Self::identity(),
        }
    }

    pub fn rot_x(angle: f64) -> Self {
        Self(UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self(UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle))
    }

    /// Exponential map of a rotation vector (axis × angle, radians).
    pub fn from_rotation_vector(omega: Vec3) -> Self {
        Self(UnitQuaternion::from_scaled_axis(omega))
    }

    /// Logarithm map; the returned vector has norm in [0, π].
    pub fn to_rotation_vector(&self) -> Vec3 {
        self.0.scaled_axis()
    }

    /// Builds from a rotation matrix assumed orthonormal with det +1.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = Rotation3::from_matrix_unchecked(*m);
        Self(UnitQuaternion::from_rotation_matrix(&r))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.0.to_rotation_matrix().matrix()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(q)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Self(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Self(self.0.inverse())
    }

    /// Angle of the relative rotation, in [0, π].
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        geodesic_distance(self, other)
    }
}

impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        let a = self.wxyz();
        let b = other.wxyz();
        a == b || a.iter().zip(b.iter()).all(|(x, y)| *x == -*y)
    }
}

/// Angle between two rotations, robust near zero (atan2 form of 2·acos|⟨q₁,q₂⟩|).
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    let rel = a.0.inverse() * b.0;
    let q = rel.quaternion();
    let v = (q.i * q.i + q.j * q.j + q.k * q.k).sqrt();
    2.0 * v.atan2(q.w.abs())
}

/// A rigid transform. `compose(a, b)` applies `b` first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { rotation: Rotation::identity(), translation: t }
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self { rotation: r, translation: Vec3::zeros() }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose { rotation: inv, translation: -inv.apply(&self.translation) }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.apply(v)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Uniformly scales the translation (unit conversion).
    pub fn scaled(&self, factor: f64) -> Pose {
        Pose { rotation: self.rotation, translation: self.translation * factor }
    }

    /// Frame axes as columns: (x̂, ŷ, ẑ).
    pub fn axes(&self) -> (Vec3, Vec3, Vec3) {
        let m = self.rotation.matrix();
        (m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned())
    }

    /// Translation gap and rotation angle between two poses.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            (self.translation - other.translation).norm(),
            geodesic_distance(&self.rotation, &other.rotation),
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr { rotation: self.rotation.wxyz(), translation: self.translation.into() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        pose_from_parts(r.rotation, r.translation).map_err(serde::de::Error::custom)
    }
}

fn pose_from_parts(q: [f64; 4], t: [f64; 3]) -> Result<Pose, &'static str> {
    if t.iter().any(|v| !v.is_finite()) {
        return Err("non-finite translation");
    }
    let rotation = Rotation::from_wxyz(q[0], q[1], q[2], q[3]).ok_or("zero or non-finite quaternion")?;
    Ok(Pose { rotation, translation: Vec3::from(t) })
}

/// Compact `[[w,x,y,z],[x,y,z]]` encoding used in model and scene files.
pub mod pose_pair {
    use super::*;

    pub fn serialize<S: Serializer>(p: &Pose, s: S) -> Result<S::Ok, S::Error> {
        let t: [f64; 3] = p.translation.into();
        (p.rotation.wxyz(), t).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        let (q, t): ([f64; 4], [f64; 3]) = Deserialize::deserialize(d)?;
        pose_from_parts(q, t).map_err(serde::de::Error::custom)
    }
}

/// Map of poses in the compact pair encoding.
pub mod pose_pair_map {
    use super::*;
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Wrapped(#[serde(with = "super::pose_pair")] Pose);

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, Pose>, s: S) -> Result<S::Ok, S::Error> {
        let w: BTreeMap<&String, Wrapped> = m.iter().map(|(k, v)| (k, Wrapped(*v))).collect();
        w.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Pose>, D::Error> {
        let w: BTreeMap<String, Wrapped> = Deserialize::deserialize(d)?;
        Ok(w.into_iter().map(|(k, v)| (k, v.0)).collect())
    }
}

/// A mirror plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Vec3,
    normal: Vec3,
}

impl Plane {
    pub fn new(point: Vec3, normal: Vec3) -> Result<Self, FrameError> {
        let n = normal.norm();
        if !(n > AXIS_EPS) {
            return Err(FrameError::ZeroAxis);
        }
        Ok(Self { point, normal: normal / n })
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn householder(&self) -> Matrix3<f64> {
        Matrix3::identity() - 2.0 * self.normal * self.normal.transpose()
    }

    pub fn reflect_point(&self, p: &Vec3) -> Vec3 {
        p - 2.0 * (p - self.point).dot(&self.normal) * self.normal
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaneRepr {
    point: [f64; 3],
    normal: [f64; 3],
}

impl Serialize for Plane {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PlaneRepr { point: self.point.into(), normal: self.normal.into() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Plane {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PlaneRepr::deserialize(d)?;
        Plane::new(Vec3::from(r.point), Vec3::from(r.normal)).map_err(serde::de::Error::custom)
    }
}

/// Builds the frame (o, ẑ, x̂): rotation columns are (x̂, ẑ×x̂, ẑ).
///
/// Small skew (|ẑ·x̂| ≤ 1e-3) is removed by projecting x̂ off ẑ.
pub fn frame_from_zx(origin: Vec3, z_axis: Vec3, x_axis: Vec3) -> Result<Pose, FrameError> {
    let zn = z_axis.norm();
    let xn = x_axis.norm();
    if !(zn > AXIS_EPS) || !(xn > AXIS_EPS) || !origin.iter().all(|v| v.is_finite()) {
        return Err(FrameError::ZeroAxis);
    }
    let z = z_axis / zn;
    let x = x_axis / xn;
    let d = z.dot(&x);
    if d.abs() > ORTHOGONALITY_TOL {
        return Err(FrameError::NonOrthogonal(d.abs()));
    }
    let x = (x - d * z).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    Ok(Pose { rotation: Rotation::from_matrix(&m), translation: origin })
}

/// Mirrors a frame across a plane and negates x̂ so the result stays right-handed.
pub fn reflect_frame(f: &Pose, m: &Plane) -> Pose {
    let h = m.householder();
    let (x, y, z) = f.axes();
    let cols = [-(h * x), h * y, h * z];
    Pose {
        rotation: Rotation::from_matrix(&Matrix3::from_columns(&cols)),
        translation: m.reflect_point(&f.translation),
    }
}
