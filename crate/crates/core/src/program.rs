//! Part programs: an ordered add/subtract fold over box, cylinder, sphere and
//! cone primitives, plus the connector frames the generator realized on it.

use crate::aabb::Aabb;
use crate::plan::{parse_json_with_path, ConnectorFrame, PartSpec};
use crate::report::{Check, ErrorClass, Report};
use crate::se3::{reflect_frame, FrameError, Plane, Pose, Vec3};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveKind {
    /// Centered on the placement origin.
    Box { lx: f64, ly: f64, lz: f64 },
    /// Axis along local z, base at the origin.
    Cylinder { r: f64, h: f64 },
    Sphere { r: f64 },
    /// Base radius `r1` at z = 0, top radius `r2` at z = h.
    Cone { r1: f64, r2: f64, h: f64 },
}

impl PrimitiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveKind::Box { .. } => "box",
            PrimitiveKind::Cylinder { .. } => "cylinder",
            PrimitiveKind::Sphere { .. } => "sphere",
            PrimitiveKind::Cone { .. } => "cone",
        }
    }

    fn params(&self) -> BTreeMap<String, f64> {
        let kv: Vec<(&str, f64)> = match *self {
            PrimitiveKind::Box { lx, ly, lz } => vec![("lx", lx), ("ly", ly), ("lz", lz)],
            PrimitiveKind::Cylinder { r, h } => vec![("r", r), ("h", h)],
            PrimitiveKind::Sphere { r } => vec![("r", r)],
            PrimitiveKind::Cone { r1, r2, h } => vec![("r1", r1), ("r2", r2), ("h", h)],
        };
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn from_params(kind: &str, params: &BTreeMap<String, f64>) -> Result<Self, ProgramError> {
        let keys: &[&str] = match kind {
            "box" => &["lx", "ly", "lz"],
            "cylinder" => &["r", "h"],
            "sphere" => &["r"],
            "cone" => &["r1", "r2", "h"],
            other => return Err(ProgramError::UnknownPrimitive(other.to_string())),
        };
        if let Some(extra) = params.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(ProgramError::BadParams(format!("{kind} has no parameter '{extra}'")));
        }
        let get = |k: &str| params.get(k).copied().ok_or_else(|| ProgramError::BadParams(format!("{kind} needs '{k}'")));
        let kind = match kind {
            "box" => PrimitiveKind::Box { lx: get("lx")?, ly: get("ly")?, lz: get("lz")? },
            "cylinder" => PrimitiveKind::Cylinder { r: get("r")?, h: get("h")? },
            "sphere" => PrimitiveKind::Sphere { r: get("r")? },
            _ => PrimitiveKind::Cone { r1: get("r1")?, r2: get("r2")?, h: get("h")? },
        };
        kind.check()?;
        Ok(kind)
    }

    fn check(&self) -> Result<(), ProgramError> {
        let ok = match *self {
            PrimitiveKind::Box { lx, ly, lz } => [lx, ly, lz].iter().all(|v| *v > 0.0 && v.is_finite()),
            PrimitiveKind::Cylinder { r, h } => r > 0.0 && h > 0.0 && r.is_finite() && h.is_finite(),
            PrimitiveKind::Sphere { r } => r > 0.0 && r.is_finite(),
            PrimitiveKind::Cone { r1, r2, h } => {
                r1 >= 0.0 && r2 >= 0.0 && (r1 > 0.0 || r2 > 0.0) && h > 0.0 && [r1, r2, h].iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ProgramError::BadParams(format!("{} dimensions must be positive and finite", self.name())))
        }
    }

    /// Local-frame membership (closed set).
    pub fn contains_local(&self, q: &Vec3) -> bool {
        match *self {
            PrimitiveKind::Box { lx, ly, lz } => q.x.abs() <= lx * 0.5 && q.y.abs() <= ly * 0.5 && q.z.abs() <= lz * 0.5,
            PrimitiveKind::Cylinder { r, h } => q.z >= 0.0 && q.z <= h && q.x * q.x + q.y * q.y <= r * r,
            PrimitiveKind::Sphere { r } => q.norm_squared() <= r * r,
            PrimitiveKind::Cone { r1, r2, h } => {
                if q.z < 0.0 || q.z > h {
                    return false;
                }
                let rz = r1 + (r2 - r1) * q.z / h;
                q.x * q.x + q.y * q.y <= rz * rz
            }
        }
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            PrimitiveKind::Box { lx, ly, lz } => 2.0 * (lx * ly + ly * lz + lx * lz),
            PrimitiveKind::Cylinder { r, h } => 2.0 * PI * r * h + 2.0 * PI * r * r,
            PrimitiveKind::Sphere { r } => 4.0 * PI * r * r,
            PrimitiveKind::Cone { r1, r2, h } => {
                let s = ((r1 - r2).powi(2) + h * h).sqrt();
                PI * (r1 + r2) * s + PI * (r1 * r1 + r2 * r2)
            }
        }
    }

    pub fn volume(&self) -> f64 {
        match *self {
            PrimitiveKind::Box { lx, ly, lz } => lx * ly * lz,
            PrimitiveKind::Cylinder { r, h } => PI * r * r * h,
            PrimitiveKind::Sphere { r } => 4.0 / 3.0 * PI * r.powi(3),
            PrimitiveKind::Cone { r1, r2, h } => PI * h / 3.0 * (r1 * r1 + r1 * r2 + r2 * r2),
        }
    }

    /// Uniform point on the boundary with its outward normal, local frame.
    fn sample_surface<R: Rng>(&self, rng: &mut R) -> (Vec3, Vec3) {
        match *self {
            PrimitiveKind::Box { lx, ly, lz } => {
                let (hx, hy, hz) = (lx * 0.5, ly * 0.5, lz * 0.5);
                let areas = [ly * lz, lx * lz, lx * ly];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut p = Vec3::new(rng.gen_range(-hx..=hx), rng.gen_range(-hy..=hy), rng.gen_range(-hz..=hz));
                let half = [hx, hy, hz];
                p[axis] = sign * half[axis];
                let mut n = Vec3::zeros();
                n[axis] = sign;
                (p, n)
            }
            PrimitiveKind::Sphere { r } => {
                let n = unit_vector(rng);
                (n * r, n)
            }
            PrimitiveKind::Cylinder { r, h } => Self::Cone { r1: r, r2: r, h }.sample_surface(rng),
            PrimitiveKind::Cone { r1, r2, h } => {
                let s = ((r1 - r2).powi(2) + h * h).sqrt();
                let lateral = PI * (r1 + r2) * s;
                let (base, top) = (PI * r1 * r1, PI * r2 * r2);
                let pick = rng.gen::<f64>() * (lateral + base + top);
                let phi = rng.gen::<f64>() * 2.0 * PI;
                let (c, sn) = (phi.cos(), phi.sin());
                if pick < lateral {
                    // density along the axis is proportional to the local radius
                    let u: f64 = rng.gen();
                    let t = if (r2 - r1).abs() < 1e-12 {
                        u
                    } else {
                        ((r1 * r1 + u * (r2 * r2 - r1 * r1)).sqrt() - r1) / (r2 - r1)
                    };
                    let rz = r1 + (r2 - r1) * t;
                    let n = Vec3::new(h * c, h * sn, r1 - r2).normalize();
                    (Vec3::new(rz * c, rz * sn, t * h), n)
                } else {
                    let (rad, z, nz) = if pick < lateral + base { (r1, 0.0, -1.0) } else { (r2, h, 1.0) };
                    let rr = rad * rng.gen::<f64>().sqrt();
                    (Vec3::new(rr * c, rr * sn, z), Vec3::new(0.0, 0.0, nz))
                }
            }
        }
    }

    /// Exact AABB of the primitive placed by `pose`.
    pub fn aabb(&self, pose: &Pose) -> Aabb {
        match *self {
            PrimitiveKind::Box { lx, ly, lz } => {
                let h = Vec3::new(lx * 0.5, ly * 0.5, lz * 0.5);
                Aabb::new(-h, h).transformed(pose)
            }
            PrimitiveKind::Sphere { r } => {
                let c = pose.translation;
                Aabb::new(c - Vec3::repeat(r), c + Vec3::repeat(r))
            }
            PrimitiveKind::Cylinder { r, h } => Self::Cone { r1: r, r2: r, h }.aabb(pose),
            PrimitiveKind::Cone { r1, r2, h } => {
                let a = pose.transform_vector(&Vec3::z());
                let disk = Vec3::new(
                    (1.0 - a.x * a.x).max(0.0).sqrt(),
                    (1.0 - a.y * a.y).max(0.0).sqrt(),
                    (1.0 - a.z * a.z).max(0.0).sqrt(),
                );
                let c0 = pose.translation;
                let c1 = pose.translation + a * h;
                let b0 = Aabb::new(c0 - disk * r1, c0 + disk * r1);
                let b1 = Aabb::new(c1 - disk * r2, c1 + disk * r2);
                b0.union(&b1)
            }
        }
    }

    /// Negating local x maps the primitive onto itself.
    pub fn symmetric_under_x_negation(&self) -> bool {
        true
    }
}

fn unit_vector<R: Rng>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen::<f64>() * 2.0 * PI;
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub placement: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepOp {
    Add,
    Subtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub struct Step {
    pub op: StepOp,
    pub primitive: Primitive,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRepr {
    op: StepOp,
    kind: String,
    params: BTreeMap<String, f64>,
    #[serde(default)]
    placement: Pose,
}

impl TryFrom<StepRepr> for Step {
    type Error = ProgramError;
    fn try_from(r: StepRepr) -> Result<Self, ProgramError> {
        let kind = PrimitiveKind::from_params(&r.kind, &r.params)?;
        Ok(Step { op: r.op, primitive: Primitive { kind, placement: r.placement } })
    }
}

impl From<Step> for StepRepr {
    fn from(s: Step) -> Self {
        StepRepr {
            op: s.op,
            kind: s.primitive.kind.name().into(),
            params: s.primitive.kind.params(),
            placement: s.primitive.placement,
        }
    }
}

/// A generated part: CSG steps plus realized connector frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartProgram {
    pub part_id: String,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub connectors: Vec<ConnectorFrame>,
    /// Generator provenance.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProgramError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("unknown primitive kind '{0}'")]
    UnknownPrimitive(String),
    #[error("bad primitive parameters: {0}")]
    BadParams(String),
    #[error("first step must be 'add'")]
    FirstStepNotAdd,
    #[error("program has no add steps")]
    EmptyProgram,
    #[error("solid is degenerate (surface retention {ratio:.5})")]
    DegenerateSolid { ratio: f64 },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl std::fmt::Display for StepOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StepOp::Add => "add",
            StepOp::Subtract => "subtract",
        })
    }
}

pub fn parse_program(document: &str) -> Result<PartProgram, ProgramError> {
    let prog = parse_json_with_path::<PartProgram>(document).map_err(|(syntax, path, message)| {
        if syntax {
            ProgramError::Parse { path, message }
        } else {
            ProgramError::Schema { path, message }
        }
    })?;
    prog.check_structure()?;
    Ok(prog)
}

#[derive(Debug, Clone)]
struct CompiledPrimitive {
    op: StepOp,
    kind: PrimitiveKind,
    inv_rot: Matrix3<f64>,
    inv_t: Vec3,
}

/// Program compiled for fast membership queries.
#[derive(Debug, Clone)]
pub struct Solid {
    steps: Vec<CompiledPrimitive>,
}

impl Solid {
    pub fn contains(&self, p: &Vec3) -> bool {
        let mut inside = false;
        for s in &self.steps {
            if s.kind.contains_local(&(s.inv_rot * p + s.inv_t)) {
                inside = s.op == StepOp::Add;
            }
        }
        inside
    }
}

impl PartProgram {
    pub fn check_structure(&self) -> Result<(), ProgramError> {
        if let Some(first) = self.steps.first() {
            if first.op != StepOp::Add {
                return Err(ProgramError::FirstStepNotAdd);
            }
        }
        for c in &self.connectors {
            c.frame()?;
        }
        Ok(())
    }

    pub fn solid(&self) -> Solid {
        Solid {
            steps: self
                .steps
                .iter()
                .map(|s| {
                    let inv = s.primitive.placement.inverse();
                    CompiledPrimitive {
                        op: s.op,
                        kind: s.primitive.kind,
                        inv_rot: inv.rotation.matrix(),
                        inv_t: inv.translation,
                    }
                })
                .collect(),
        }
    }

    /// Sequential fold: add sets inside, subtract clears it, later steps win.
    pub fn membership(&self, point: &Vec3) -> bool {
        let mut inside = false;
        for s in &self.steps {
            let q = s.primitive.placement.inverse().transform_point(point);
            if s.primitive.kind.contains_local(&q) {
                inside = s.op == StepOp::Add;
            }
        }
        inside
    }

    /// Union of add-primitive boxes; subtracts are ignored.
    pub fn bounding_box(&self) -> Result<Aabb, ProgramError> {
        self.steps
            .iter()
            .filter(|s| s.op == StepOp::Add)
            .map(|s| s.primitive.kind.aabb(&s.primitive.placement))
            .reduce(|a, b| a.union(&b))
            .ok_or(ProgramError::EmptyProgram)
    }

    pub fn connector(&self, name: &str) -> Option<&ConnectorFrame> {
        self.connectors.iter().find(|c| c.name == name)
    }

    /// Area-weighted boundary samples that lie on the final solid's surface.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Result<Vec<Vec3>, ProgramError> {
        let bbox = self.bounding_box()?;
        let eps = 1e-6 * bbox.diagonal();
        let solid = self.solid();
        let areas: Vec<f64> = self.steps.iter().map(|s| s.primitive.kind.surface_area()).collect();
        let total: f64 = areas.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = count.saturating_mul(100);
        let mut out = Vec::with_capacity(count);
        let mut tried = 0usize;
        while out.len() < count && tried < budget {
            tried += 1;
            let mut pick = rng.gen::<f64>() * total;
            let mut idx = areas.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    idx = i;
                    break;
                }
                pick -= a;
            }
            let prim = &self.steps[idx].primitive;
            let (lp, ln) = prim.kind.sample_surface(&mut rng);
            let p = prim.placement.transform_point(&lp);
            let n = prim.placement.transform_vector(&ln);
            if solid.contains(&(p + n * eps)) != solid.contains(&(p - n * eps)) {
                out.push(p);
            }
        }
        let ratio = out.len() as f64 / tried.max(1) as f64;
        if out.is_empty() || (out.len() < count && ratio < 1e-3) {
            return Err(ProgramError::DegenerateSolid { ratio });
        }
        Ok(out)
    }

    /// `count` uniformly distributed interior points, by rejection from the AABB.
    pub fn sample_interior(&self, count: usize, seed: u64) -> Result<Vec<Vec3>, ProgramError> {
        let bbox = self.bounding_box()?;
        let solid = self.solid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = count.saturating_mul(1000).max(10_000);
        let mut out = Vec::with_capacity(count);
        let mut tried = 0usize;
        while out.len() < count && tried < budget {
            tried += 1;
            let p = random_in(&bbox, &mut rng);
            if solid.contains(&p) {
                out.push(p);
            }
        }
        if out.len() < count {
            return Err(ProgramError::DegenerateSolid { ratio: out.len() as f64 / tried.max(1) as f64 });
        }
        Ok(out)
    }

    /// Monte-Carlo volume estimate (mm³).
    pub fn estimate_volume(&self, samples: usize, seed: u64) -> Result<f64, ProgramError> {
        let bbox = self.bounding_box()?;
        let solid = self.solid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hits = (0..samples).filter(|_| solid.contains(&random_in(&bbox, &mut rng))).count();
        Ok(bbox.volume() * hits as f64 / samples.max(1) as f64)
    }

    /// The program (and connectors) mirrored across `mirror` if given, then moved by `transform`.
    pub fn mapped(&self, part_id: &str, transform: &Pose, mirror: Option<&Plane>) -> Result<PartProgram, ProgramError> {
        let mut steps = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            let mut placement = s.primitive.placement;
            if let Some(m) = mirror {
                // x̂ negation in reflect_frame is absorbed by the primitive's symmetry
                debug_assert!(s.primitive.kind.symmetric_under_x_negation());
                placement = reflect_frame(&placement, m);
            }
            steps.push(Step {
                op: s.op,
                primitive: Primitive { kind: s.primitive.kind, placement: transform.compose(&placement) },
            });
        }
        let connectors =
            self.connectors.iter().map(|c| c.mapped(transform, mirror)).collect::<Result<Vec<_>, _>>()?;
        let mut meta = self.meta.clone();
        meta.insert("derived_from".into(), self.part_id.clone());
        Ok(PartProgram { part_id: part_id.to_string(), steps, connectors, meta })
    }
}

fn random_in<R: Rng>(b: &Aabb, rng: &mut R) -> Vec3 {
    let e = b.extents();
    b.min + Vec3::new(rng.gen::<f64>() * e.x, rng.gen::<f64>() * e.y, rng.gen::<f64>() * e.z)
}

/// Relative tolerance for declared dimensions and connector placement.
pub const REALIZATION_TOL: f64 = 0.10;

/// Rule-based check of a generated part against its plan entry. Failures are CODE-class.
pub fn check_realization(prog: &PartProgram, spec: &PartSpec) -> Report {
    check_realization_against(prog, spec, &spec.connectors)
}

/// Same as [`check_realization`] with an explicit reference connector list
/// (derived parts inherit their source's).
pub fn check_realization_against(prog: &PartProgram, spec: &PartSpec, reference: &[ConnectorFrame]) -> Report {
    let mut r = Report::default();
    let code = ErrorClass::Code;
    let part = spec.id.as_str();
    for c in reference {
        if prog.connector(&c.name).is_none() {
            r.push(Check::fail("connector_present", code, format!("connector missing: '{}'", c.name)).for_part(part));
        }
    }
    for c in &prog.connectors {
        if !reference.iter().any(|x| x.name == c.name) {
            r.push(Check::fail("connector_present", code, format!("unexpected connector '{}'", c.name)).for_part(part));
        }
    }
    let bbox = match prog.bounding_box() {
        Ok(b) => b,
        Err(_) => {
            r.push(Check::fail("solid_nonempty", code, "solid is empty: no add steps").for_part(part));
            return r;
        }
    };
    match prog.sample_surface(64, 0) {
        Ok(_) => r.push(Check::pass("solid_nonempty", code, "solid has a surface").for_part(part)),
        Err(e) => r.push(Check::fail("solid_nonempty", code, format!("solid is empty: {e}")).for_part(part)),
    }
    let diag = bbox.diagonal();
    for c in &prog.connectors {
        let d = bbox.distance_to(&c.origin);
        if d > REALIZATION_TOL * diag {
            r.push(
                Check::fail(
                    "connector_on_part",
                    code,
                    format!("connector '{}' lies {d:.3} mm outside the part (limit {:.3})", c.name, REALIZATION_TOL * diag),
                )
                .with_value(d)
                .for_part(part),
            );
        }
    }
    let ext = bbox.extents();
    let within = |actual: f64, declared: f64| (actual - declared).abs() <= REALIZATION_TOL * declared;
    for (key, declared) in &spec.parameters {
        let (ok, what) = match key.as_str() {
            "lx" => (within(ext.x, *declared), format!("x extent {:.3}", ext.x)),
            "ly" => (within(ext.y, *declared), format!("y extent {:.3}", ext.y)),
            "lz" => (within(ext.z, *declared), format!("z extent {:.3}", ext.z)),
            "h" => (ext.iter().any(|e| within(*e, *declared)), format!("extents {:.3?}", ext.as_slice())),
            "r" => (ext.iter().any(|e| within(*e, 2.0 * declared)), format!("extents {:.3?}", ext.as_slice())),
            _ => continue,
        };
        if *declared <= 0.0 {
            continue;
        }
        let check = if ok {
            Check::pass("dimension", code, format!("{key}={declared} matches {what}"))
        } else {
            Check::fail("dimension", code, format!("dimension mismatch: {key}={declared} vs {what}"))
        };
        r.push(check.for_part(part));
    }
    if r.checks.iter().all(|c| c.name != "connector_present") {
        r.push(Check::pass("connector_present", code, "all plan connectors realized").for_part(part));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Rotation;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn cube(id: &str, side: f64) -> PartProgram {
        PartProgram {
            part_id: id.into(),
            steps: vec![Step {
                op: StepOp::Add,
                primitive: Primitive { kind: PrimitiveKind::Box { lx: side, ly: side, lz: side }, placement: Pose::identity() },
            }],
            connectors: vec![],
            meta: BTreeMap::new(),
        }
    }

    fn push(p: &mut PartProgram, op: StepOp, kind: PrimitiveKind, placement: Pose) {
        p.steps.push(Step { op, primitive: Primitive { kind, placement } });
    }

    fn shell() -> PartProgram {
        let mut p = cube("shell", 100.0);
        push(&mut p, StepOp::Subtract, PrimitiveKind::Box { lx: 80.0, ly: 80.0, lz: 80.0 }, Pose::identity());
        p
    }

    #[test]
    fn membership_fold_order() {
        assert!(cube("c", 100.0).membership(&Vec3::zeros()));
        assert!(!shell().membership(&Vec3::zeros()));
        assert!(shell().membership(&Vec3::new(45.0, 0.0, 0.0)));
        // subtract first, add second: the add wins at the center
        let mut rev = PartProgram { steps: vec![], ..cube("r", 1.0) };
        push(&mut rev, StepOp::Subtract, PrimitiveKind::Box { lx: 80.0, ly: 80.0, lz: 80.0 }, Pose::identity());
        push(&mut rev, StepOp::Add, PrimitiveKind::Box { lx: 100.0, ly: 100.0, lz: 100.0 }, Pose::identity());
        assert!(rev.membership(&Vec3::zeros()));
        assert!(rev.solid().contains(&Vec3::zeros()));
        assert_eq!(rev.check_structure(), Err(ProgramError::FirstStepNotAdd));
    }

    #[test]
    fn bounding_boxes() {
        let b = cube("c", 100.0).bounding_box().unwrap();
        assert_eq!(b, Aabb::new(Vec3::repeat(-50.0), Vec3::repeat(50.0)));
        let mut cyl = PartProgram { steps: vec![], ..cube("c", 1.0) };
        push(&mut cyl, StepOp::Add, PrimitiveKind::Cylinder { r: 10.0, h: 40.0 }, Pose::from_rotation(Rotation::rot_x(FRAC_PI_2)));
        let e = cyl.bounding_box().unwrap().extents();
        // extreme points: axis endpoints (0,0,0), (0,-40,0) ± rim radius along x and z
        assert!((e.x - 20.0).abs() < 1e-9 && (e.y - 40.0).abs() < 1e-9 && (e.z - 20.0).abs() < 1e-9, "{e:?}");
        let mut two = cube("c", 100.0);
        push(&mut two, StepOp::Add, PrimitiveKind::Sphere { r: 10.0 }, Pose::from_translation(Vec3::new(200.0, 0.0, 0.0)));
        let b = two.bounding_box().unwrap();
        assert_eq!(b.min, Vec3::repeat(-50.0));
        assert_eq!(b.max, Vec3::new(210.0, 50.0, 50.0));
        assert_eq!(PartProgram { steps: vec![], ..cube("e", 1.0) }.bounding_box(), Err(ProgramError::EmptyProgram));
    }

    #[test]
    fn surface_samples_of_solid_box_are_on_faces() {
        let pts = cube("c", 100.0).sample_surface(500, 3).unwrap();
        assert_eq!(pts.len(), 500);
        for p in pts {
            assert!(p.iter().any(|c| (c.abs() - 50.0).abs() < 1e-9), "{p:?}");
        }
    }

    #[test]
    fn shell_samples_include_cavity_wall() {
        let s = shell();
        let solid = s.solid();
        let pts = s.sample_surface(1000, 11).unwrap();
        let inner = pts.iter().filter(|p| p.iter().map(|c| c.abs()).fold(0.0, f64::max) < 40.0 + 1e-9).count();
        assert!(inner > 100, "only {inner} cavity points");
        // membership-flip oracle along the cavity-wall normal
        for p in pts.iter().filter(|p| (p.x.abs() - 40.0).abs() < 1e-9 && p.y.abs() < 39.0 && p.z.abs() < 39.0) {
            let n = Vec3::new(p.x.signum(), 0.0, 0.0);
            assert!(solid.contains(&(p + n * 0.01)) && !solid.contains(&(p - n * 0.01)));
        }
    }

    #[test]
    fn fully_subtracted_is_degenerate() {
        let mut p = cube("c", 10.0);
        push(&mut p, StepOp::Subtract, PrimitiveKind::Box { lx: 20.0, ly: 20.0, lz: 20.0 }, Pose::identity());
        assert!(matches!(p.sample_surface(50, 0), Err(ProgramError::DegenerateSolid { .. })));
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = shell();
        assert_eq!(s.sample_surface(200, 5).unwrap(), s.sample_surface(200, 5).unwrap());
        assert_ne!(s.sample_surface(200, 5).unwrap(), s.sample_surface(200, 6).unwrap());
    }

    #[test]
    fn cone_surface_samples_lie_on_cone() {
        let mut p = PartProgram { steps: vec![], ..cube("c", 1.0) };
        push(&mut p, StepOp::Add, PrimitiveKind::Cone { r1: 20.0, r2: 5.0, h: 30.0 }, Pose::identity());
        for q in p.sample_surface(300, 1).unwrap() {
            let rz = 20.0 - 15.0 * q.z / 30.0;
            let on_side = ((q.x * q.x + q.y * q.y).sqrt() - rz).abs() < 1e-9;
            let on_cap = q.z.abs() < 1e-9 || (q.z - 30.0).abs() < 1e-9;
            assert!(on_side || on_cap, "{q:?}");
        }
    }

    #[test]
    fn json_round_trip_and_errors() {
        let doc = r#"{"part_id":"door","steps":[
            {"op":"add","kind":"box","params":{"lx":600,"ly":20,"lz":380}},
            {"op":"subtract","kind":"cylinder","params":{"r":5,"h":30},"placement":{"rotation":[1,0,0,0],"translation":[0,0,0]}}],
            "connectors":[{"name":"hinge","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"hinge"}]}"#;
        let p = parse_program(doc).unwrap();
        assert_eq!(p.steps.len(), 2);
        let back = parse_program(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let bad = doc.replace("\"cylinder\"", "\"torus\"");
        assert!(matches!(parse_program(&bad), Err(ProgramError::Schema { .. })));
        assert!(parse_program(&bad).unwrap_err().to_string().contains("unknown primitive kind"));
        let neg = doc.replace("\"lx\":600", "\"lx\":-1");
        assert!(parse_program(&neg).is_err());
        assert!(matches!(parse_program("{"), Err(ProgramError::Parse { .. })));
    }

    fn spec_for(p: &PartProgram, params: &[(&str, f64)]) -> PartSpec {
        PartSpec {
            id: p.part_id.clone(),
            description: String::new(),
            parameters: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            orientation_hint: String::new(),
            connectors: p.connectors.clone(),
            derive: None,
        }
    }

    fn hinge() -> ConnectorFrame {
        ConnectorFrame {
            name: "hinge_m".into(),
            origin: Vec3::new(0.0, 0.0, 50.0),
            z_axis: Vec3::z(),
            x_axis: Vec3::x(),
            label: "hinge".into(),
        }
    }

    #[test]
    fn realization_checks() {
        let mut p = cube("door", 100.0);
        p.connectors.push(hinge());
        let spec = spec_for(&p, &[("lx", 100.0), ("ly", 100.0)]);
        assert!(check_realization(&p, &spec).passed());

        let mut missing = p.clone();
        missing.connectors.clear();
        let r = check_realization(&missing, &spec);
        let f: Vec<_> = r.failures().collect();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].class, ErrorClass::Code);
        assert!(f[0].evidence.contains("connector missing"));

        let mut far = p.clone();
        far.connectors[0].origin = Vec3::new(0.0, 0.0, 50.0 + 0.11 * 100.0 * 3f64.sqrt());
        assert!(!check_realization(&far, &spec).passed());
        far.connectors[0].origin = Vec3::new(0.0, 0.0, 50.0 + 0.09 * 100.0 * 3f64.sqrt());
        assert!(check_realization(&far, &spec).passed());
    }

    #[test]
    fn realization_dimension_threshold() {
        let mut p = PartProgram { steps: vec![], ..cube("rod", 1.0) };
        push(&mut p, StepOp::Add, PrimitiveKind::Cylinder { r: 10.0, h: 90.0 }, Pose::identity());
        // |90 - 200| / 200 = 0.55 > 0.10
        let r = check_realization(&p, &spec_for(&p, &[("h", 200.0)]));
        assert!(r.failures().any(|c| c.evidence.contains("dimension mismatch")));
        // |90 - 99| / 99 = 0.0909 <= 0.10
        assert!(check_realization(&p, &spec_for(&p, &[("h", 99.0), ("r", 10.5)])).passed());
        // |90 - 101| / 101 = 0.1089 > 0.10
        assert!(!check_realization(&p, &spec_for(&p, &[("h", 101.0)])).passed());
    }
}
