//! Rule-based verification of an assembled model: connector coincidence,
//! pairwise interference at rest, and interference across motion keyframes.

use crate::aabb::Aabb;
use crate::assembler::{AssembledModel, AssemblyError, PoseFrame};
use crate::program::{PartProgram, ProgramError, Solid};
use crate::report::{Check, ErrorClass, Report};
use crate::se3::{Pose, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const COINCIDENCE_TOL: f64 = 1e-9;
pub const MIN_SAMPLES: usize = 256;
pub const DEFAULT_SAMPLES: usize = 2048;
pub const DEFAULT_THRESHOLD: f64 = 0.005;
pub const ADJACENT_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("part '{part}': {source}")]
    Geometry { part: String, source: ProgramError },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("interference needs at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceConfig {
    pub samples: usize,
    pub threshold: f64,
    pub adjacent_threshold: f64,
    pub seed: u64,
}

impl Default for InterferenceConfig {
    fn default() -> Self {
        Self { samples: DEFAULT_SAMPLES, threshold: DEFAULT_THRESHOLD, adjacent_threshold: ADJACENT_THRESHOLD, seed: 0 }
    }
}

/// Coincidence of every joint's connector pair, with tolerance `tol` on both gap (mm) and angle (rad).
pub fn check_coincidence_tol(model: &AssembledModel, tol: f64) -> Result<Report, VerifyError> {
    let mut r = Report::default();
    for (joint, gap, angle) in model.coincidence_residuals()? {
        let name = format!("coincidence:{joint}");
        let evidence = format!("gap {gap:.3e} mm, angle {angle:.3e} rad");
        let child = model.plan.joint(&joint).map(|j| j.child.part.clone()).unwrap_or_default();
        let c = if gap <= tol && angle <= tol {
            Check::pass(name, ErrorClass::Code, evidence)
        } else {
            Check::fail(name, ErrorClass::Code, evidence)
        };
        r.push(c.with_value(gap.max(angle)).for_part(child));
    }
    Ok(r)
}

pub fn check_coincidence(model: &AssembledModel) -> Result<Report, VerifyError> {
    check_coincidence_tol(model, COINCIDENCE_TOL)
}

/// Fraction of `samples` interior points of `a` (placed at `pose_a`) that fall inside `b` (at `pose_b`).
pub fn interference_fraction(
    a: &PartProgram,
    pose_a: &Pose,
    b: &PartProgram,
    pose_b: &Pose,
    samples: usize,
    seed: u64,
) -> Result<f64, ProgramError> {
    let pts = a.sample_interior(samples, seed)?;
    Ok(fraction_inside(&pts, pose_a, &b.solid(), pose_b))
}

fn fraction_inside(local_pts: &[Vec3], pose_a: &Pose, b: &Solid, pose_b: &Pose) -> f64 {
    let to_b = pose_b.inverse().compose(pose_a);
    let hits = local_pts.iter().filter(|p| b.contains(&to_b.transform_point(p))).count();
    hits as f64 / local_pts.len().max(1) as f64
}

/// Overlap estimate for one part pair in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    /// Larger of the two directed fractions (A's volume inside B, B's inside A).
    pub fraction: f64,
    pub adjacent: bool,
    pub threshold: f64,
}

impl PairResult {
    pub fn pass(&self) -> bool {
        self.fraction <= self.threshold
    }
}

/// Interior samples per part, drawn once and reused for every configuration.
pub struct InterferenceProbe {
    cfg: InterferenceConfig,
    parts: BTreeMap<String, (Vec<Vec3>, Solid, Aabb)>,
    adjacent: BTreeSet<(String, String)>,
}

impl InterferenceProbe {
    pub fn new(model: &AssembledModel, cfg: InterferenceConfig) -> Result<Self, VerifyError> {
        if cfg.samples < MIN_SAMPLES {
            return Err(VerifyError::TooFewSamples(cfg.samples));
        }
        let parts = model
            .geometries
            .iter()
            .enumerate()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(i, (id, g))| {
                let err = |source| VerifyError::Geometry { part: id.clone(), source };
                let seed = cfg.seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let pts = g.sample_interior(cfg.samples, seed).map_err(err)?;
                let bbox = g.bounding_box().map_err(err)?;
                Ok((id.clone(), (pts, g.solid(), bbox)))
            })
            .collect::<Result<BTreeMap<_, _>, VerifyError>>()?;
        let adjacent = model
            .plan
            .joints
            .iter()
            .map(|j| ordered(&j.parent.part, &j.child.part))
            .collect();
        Ok(Self { cfg, parts, adjacent })
    }

    /// All pairs whose world AABBs overlap, evaluated at `poses`.
    pub fn evaluate(&self, poses: &BTreeMap<String, Pose>) -> Vec<PairResult> {
        let ids: Vec<&String> = self.parts.keys().filter(|k| poses.contains_key(*k)).collect();
        let mut pairs = Vec::new();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                pairs.push((*a, *b));
            }
        }
        pairs
            .par_iter()
            .filter_map(|(a, b)| {
                let (pa, pb) = (&poses[*a], &poses[*b]);
                let (pts_a, solid_a, box_a) = &self.parts[*a];
                let (pts_b, solid_b, box_b) = &self.parts[*b];
                if !box_a.transformed(pa).overlaps(&box_b.transformed(pb)) {
                    return None;
                }
                let fraction = fraction_inside(pts_a, pa, solid_b, pb).max(fraction_inside(pts_b, pb, solid_a, pa));
                let adjacent = self.adjacent.contains(&ordered(a, b));
                let threshold = if adjacent { self.cfg.adjacent_threshold } else { self.cfg.threshold };
                Some(PairResult { a: (*a).clone(), b: (*b).clone(), fraction, adjacent, threshold })
            })
            .collect()
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

fn pair_check(prefix: &str, p: &PairResult, evidence: String) -> Check {
    let name = format!("{prefix}:{}|{}", p.a, p.b);
    let c = if p.pass() {
        Check::pass(name, ErrorClass::Design, evidence)
    } else {
        Check::fail(name, ErrorClass::Design, evidence)
    };
    c.with_value(p.fraction)
}

/// Pairwise interference at the model's current poses.
pub fn check_interference(model: &AssembledModel, cfg: InterferenceConfig) -> Result<Report, VerifyError> {
    let probe = InterferenceProbe::new(model, cfg)?;
    let mut r = Report::default();
    for p in probe.evaluate(&model.poses) {
        let ev = format!("{:.2}% overlap (limit {:.2}%)", p.fraction * 100.0, p.threshold * 100.0);
        r.push(pair_check("interference", &p, ev));
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub frames: Vec<PoseFrame>,
    /// Pair results for each keyframe, parallel to `frames`.
    pub per_frame: Vec<Vec<PairResult>>,
    pub report: Report,
}

/// Interference at every motion keyframe; reports the worst frame per pair.
pub fn sweep_check(model: &AssembledModel, frames_per_dof: usize, cfg: InterferenceConfig) -> Result<SweepResult, VerifyError> {
    let probe = InterferenceProbe::new(model, cfg)?;
    let frames = model.keyframes(frames_per_dof)?;
    let per_frame: Vec<Vec<PairResult>> = frames.iter().map(|f| probe.evaluate(&f.poses)).collect();
    let mut worst: BTreeMap<(String, String), (usize, PairResult)> = BTreeMap::new();
    for (k, results) in per_frame.iter().enumerate() {
        for p in results {
            let key = (p.a.clone(), p.b.clone());
            match worst.get(&key) {
                Some((_, w)) if w.fraction >= p.fraction => {}
                _ => {
                    worst.insert(key, (k, p.clone()));
                }
            }
        }
    }
    let mut report = Report::default();
    for (k, p) in worst.values() {
        let ev = format!(
            "worst {:.2}% overlap at keyframe {k} (q = {}) (limit {:.2}%)",
            p.fraction * 100.0,
            serde_json::to_string(&frames[*k].q).unwrap_or_default(),
            p.threshold * 100.0
        );
        report.push(pair_check("sweep", p, ev));
    }
    Ok(SweepResult { frames, per_frame, report })
}

/// Coincidence, rest interference and the keyframe sweep in one report.
pub fn verify_model(model: &AssembledModel, frames_per_dof: usize, cfg: InterferenceConfig) -> Result<Report, VerifyError> {
    let mut r = check_coincidence(model)?;
    r.extend(check_interference(model, cfg)?);
    r.extend(sweep_check(model, frames_per_dof, cfg)?.report);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembler::assemble_at_rest;
    use crate::plan::{parse_plan, AssemblyPlan, ConnectorFrame};
    use crate::program::{Primitive, PrimitiveKind, Step, StepOp};

    fn cube(id: &str, size: f64, connectors: Vec<ConnectorFrame>) -> PartProgram {
        PartProgram {
            part_id: id.into(),
            steps: vec![Step {
                op: StepOp::Add,
                primitive: Primitive { kind: PrimitiveKind::Box { lx: size, ly: size, lz: size }, placement: Pose::identity() },
            }],
            connectors,
            meta: Default::default(),
        }
    }

    fn conn(origin: [f64; 3]) -> ConnectorFrame {
        ConnectorFrame { name: "c".into(), origin: origin.into(), z_axis: Vec3::z(), x_axis: Vec3::x(), label: "c".into() }
    }

    /// Two 100 mm cubes joined by a fixed joint at `offset` along x.
    fn pair(offset: f64, joint: &str) -> AssembledModel {
        let dof = if joint == "Fixed" { 0 } else { 1 };
        let plan: AssemblyPlan = parse_plan(&format!(
            r#"{{"name":"p","ground":"a","declared_dof":{dof},
            "parts":[{{"id":"a","connectors":[{{"name":"c","origin":[{offset},0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"c"}}]}},
                     {{"id":"b","connectors":[{{"name":"c","origin":[0,0,0],"z_axis":[0,0,1],"x_axis":[1,0,0],"label":"c"}}]}}],
            "joints":[{{"id":"j","type":"{joint}","parent":{{"part":"a","connector":"c"}},"child":{{"part":"b","connector":"c"}}}}]}}"#
        ))
        .unwrap();
        let g = BTreeMap::from([
            ("a".to_string(), cube("a", 100.0, vec![conn([offset, 0.0, 0.0])])),
            ("b".to_string(), cube("b", 100.0, vec![conn([0.0, 0.0, 0.0])])),
        ]);
        assemble_at_rest(&plan, &g).unwrap()
    }

    fn nonadjacent(cfg: InterferenceConfig) -> InterferenceConfig {
        InterferenceConfig { adjacent_threshold: cfg.threshold, ..cfg }
    }

    #[test]
    fn coincidence_fresh_and_corrupted() {
        let m = pair(200.0, "Fixed");
        assert!(check_coincidence(&m).unwrap().passed());
        let mut bad = m.clone();
        bad.poses.get_mut("b").unwrap().translation.x += 1.0;
        let r = check_coincidence(&bad).unwrap();
        let f: Vec<_> = r.failures().collect();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].class, ErrorClass::Code);
        assert!((f[0].value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coincidence_tolerance_boundary() {
        let m = pair(0.0, "Fixed");
        for (gap, ok) in [(0.9e-9, true), (1.1e-9, false)] {
            let mut c = m.clone();
            c.poses.get_mut("b").unwrap().translation.y += gap;
            assert_eq!(check_coincidence(&c).unwrap().passed(), ok, "gap {gap}");
        }
    }

    #[test]
    fn disjoint_and_coincident_cubes() {
        let cfg = nonadjacent(InterferenceConfig::default());
        let far = pair(200.0, "Fixed");
        assert!(check_interference(&far, cfg).unwrap().checks.is_empty());
        let same = pair(0.0, "Fixed");
        let r = check_interference(&same, cfg).unwrap();
        assert_eq!(r.checks.len(), 1);
        assert!(!r.checks[0].pass);
        assert_eq!(r.checks[0].class, ErrorClass::Design);
        assert!(r.checks[0].value.unwrap() > 0.99);
    }

    #[test]
    fn partial_overlap_matches_volume_ratio() {
        let cfg = nonadjacent(InterferenceConfig { samples: 4096, ..Default::default() });
        let m = pair(90.0, "Fixed");
        let r = check_interference(&m, cfg).unwrap();
        let v = r.checks[0].value.unwrap();
        // 10 mm of 100 mm overlap; max of two binomial estimates of p = 0.1
        let sigma = (0.1f64 * 0.9 / 4096.0).sqrt();
        assert!((v - 0.1).abs() < 3.0 * sigma + sigma, "{v}");
        assert!(!r.passed());
    }

    #[test]
    fn adjacent_pairs_use_relaxed_threshold() {
        // 1.5% overlap: fails the strict limit, passes the relaxed one
        let m = pair(98.5, "Fixed");
        let strict = check_interference(&m, nonadjacent(InterferenceConfig::default())).unwrap();
        let relaxed = check_interference(&m, InterferenceConfig::default()).unwrap();
        assert!(!strict.passed());
        assert!(relaxed.passed());
    }

    #[test]
    fn ci_width_shrinks_when_samples_double() {
        let m = pair(90.0, "Fixed");
        let (a, b) = (&m.geometries["a"], &m.geometries["b"]);
        let std = |n: usize| {
            let xs: Vec<f64> = (0..200)
                .map(|s| interference_fraction(a, &m.poses["a"], b, &m.poses["b"], n, s).unwrap())
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        };
        let ratio = std(256) / std(512);
        assert!((1.2..=2.8).contains(&ratio), "{ratio}");
    }

    #[test]
    fn too_few_samples() {
        let m = pair(200.0, "Fixed");
        let cfg = InterferenceConfig { samples: 100, ..Default::default() };
        assert_eq!(check_interference(&m, cfg).err(), Some(VerifyError::TooFewSamples(100)));
    }

    #[test]
    fn sweep_of_static_model_equals_rest() {
        let m = pair(90.0, "Fixed");
        let cfg = nonadjacent(InterferenceConfig::default());
        let rest = check_interference(&m, cfg).unwrap();
        let sweep = sweep_check(&m, 5, cfg).unwrap();
        assert_eq!(sweep.frames.len(), 1);
        assert_eq!(sweep.report.checks.len(), rest.checks.len());
        assert_eq!(sweep.report.checks[0].value, rest.checks[0].value);
    }

    #[test]
    fn sweep_reports_worst_frame() {
        // slider pushes b into a for larger d
        let mut m = pair(120.0, "Slider");
        for c in &mut m.geometries.get_mut("a").unwrap().connectors {
            c.z_axis = -Vec3::x();
            c.x_axis = Vec3::y();
        }
        for c in &mut m.geometries.get_mut("b").unwrap().connectors {
            c.z_axis = -Vec3::x();
            c.x_axis = Vec3::y();
        }
        let m = m.at(&Default::default()).unwrap();
        let cfg = nonadjacent(InterferenceConfig::default());
        let s = sweep_check(&m, 5, cfg).unwrap();
        assert_eq!(s.frames.len(), 5);
        // d sweeps 0..50 mm: overlap = max(0, d - 20) / 100
        let fractions: Vec<f64> = s.per_frame.iter().map(|f| f.iter().map(|p| p.fraction).sum()).collect();
        assert!(fractions[0] == 0.0 && fractions[1] == 0.0);
        assert!((fractions[4] - 0.3).abs() < 0.05, "{fractions:?}");
        let c = &s.report.checks[0];
        assert!(!c.pass && c.evidence.contains("keyframe 4"));
    }
}
