//! Geometric and kinematic evaluation: point-cloud normalization, ICP
//! registration, Chamfer and Hausdorff distances, bounding-box overlap and
//! movable-joint matching.

use crate::aabb::Aabb;
use crate::assembler::{joint_frames, AssembledModel, AssemblyError};
use crate::plan::JointType;
use crate::program::PartProgram;
use crate::se3::{Pose, Rotation, Vec3};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Worst-case scores for failed samples: the unit-cube diagonal for the distances, zero overlap.
pub const FAILURE_PCD: f64 = 1.732_050_807_568_877_2;
pub const FAILURE_HD: f64 = FAILURE_PCD;
pub const FAILURE_IOGT: f64 = 0.0;
pub const DEFAULT_POINTS: usize = 1000;
pub const ICP_MAX_ITER: usize = 50;
pub const ICP_TOL: f64 = 1e-7;
pub const JOINT_MATCH_THRESHOLD: f64 = 0.25;
/// Matching cost per radian of axis misalignment.
pub const AXIS_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud needs at least two distinct points")]
    DegenerateCloud,
    #[error("ground-truth box has zero volume")]
    ZeroGtVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizeMode {
    UnitCube,
    Diagonal,
}

impl FromStr for NormalizeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unit-cube" => Ok(Self::UnitCube),
            "diagonal" => Ok(Self::Diagonal),
            _ => Err(format!("unknown normalization '{s}' (expected unit-cube or diagonal)")),
        }
    }
}

/// `p ↦ (p − offset)·scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.offset) * self.scale
    }
}

/// UnitCube: AABB min to the origin, longest side scaled to 1.
/// Diagonal: centroid to the origin, AABB diagonal scaled to 1.
pub fn normalize(cloud: &[Vec3], mode: NormalizeMode) -> Result<(Vec<Vec3>, Normalization), MetricsError> {
    let bbox = Aabb::from_points(cloud.iter()).ok_or(MetricsError::EmptyCloud)?;
    let ext = bbox.extents();
    if !(bbox.diagonal() > 0.0) {
        return Err(MetricsError::DegenerateCloud);
    }
    let n = match mode {
        NormalizeMode::UnitCube => Normalization { offset: bbox.min, scale: 1.0 / ext.max() },
        NormalizeMode::Diagonal => {
            let centroid = cloud.iter().sum::<Vec3>() / cloud.len() as f64;
            Normalization { offset: centroid, scale: 1.0 / bbox.diagonal() }
        }
    };
    Ok((cloud.iter().map(|p| n.apply(p)).collect(), n))
}

/// Index and squared distance of the nearest point in `target`.
fn nearest(p: &Vec3, target: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in target.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn directed(a: &[Vec3], b: &[Vec3]) -> Vec<f64> {
    a.par_iter().map(|p| nearest(p, b).1.sqrt()).collect()
}

/// Symmetric Chamfer distance: the mean of the two directed mean nearest-neighbor distances.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let ab = directed(a, b).iter().sum::<f64>() / a.len() as f64;
    let ba = directed(b, a).iter().sum::<f64>() / b.len() as f64;
    Ok(0.5 * (ab + ba))
}

pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let max = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    Ok(max(directed(a, b)).max(max(directed(b, a))))
}

/// Intersection volume over ground-truth volume.
pub fn iogt(pred: &Aabb, gt: &Aabb) -> Result<f64, MetricsError> {
    let v = gt.volume();
    if !(v > 0.0) {
        return Err(MetricsError::ZeroGtVolume);
    }
    Ok(pred.intersection_volume(gt) / v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    /// Maps source points onto the target.
    pub pose: Pose,
    pub rms: f64,
    /// RMS nearest-neighbor residual at each evaluated iterate.
    pub history: Vec<f64>,
    /// The correspondence covariance lost rank; `pose` is the best iterate so far.
    pub rank_deficient: bool,
}

/// Least-squares rigid fit of `src[i]` onto `dst[i]`. `None` if the covariance has rank < 2.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Option<Pose> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[1] > 1e-12 * sorted[0]) {
        return None;
    }
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rot = Rotation::from_matrix(&r);
    Some(Pose::new(rot, cd - rot.apply(&cs)))
}

/// Point-to-point ICP with brute-force correspondences and a closed-form
/// rigid fit per iteration. Stops when the RMS improves by less than `tol`.
pub fn icp_align(source: &[Vec3], target: &[Vec3], max_iter: usize, tol: f64) -> Result<IcpResult, MetricsError> {
    for c in [source, target] {
        let b = Aabb::from_points(c.iter()).ok_or(MetricsError::EmptyCloud)?;
        if !(b.diagonal() > 0.0) {
            return Err(MetricsError::DegenerateCloud);
        }
    }
    let evaluate = |pose: &Pose| -> (f64, Vec<Vec3>) {
        let pairs: Vec<(f64, Vec3)> = source
            .par_iter()
            .map(|p| {
                let (i, d) = nearest(&pose.transform_point(p), target);
                (d, target[i])
            })
            .collect();
        let rms = (pairs.iter().map(|(d, _)| d).sum::<f64>() / pairs.len() as f64).sqrt();
        (rms, pairs.into_iter().map(|(_, q)| q).collect())
    };
    let mut pose = Pose::identity();
    let (mut rms, mut matched) = evaluate(&pose);
    let mut history = vec![rms];
    let mut rank_deficient = false;
    for _ in 0..max_iter {
        let Some(next) = kabsch(source, &matched) else {
            log::warn!("ICP correspondence covariance is rank deficient; keeping best iterate");
            rank_deficient = true;
            break;
        };
        let (next_rms, next_matched) = evaluate(&next);
        history.push(next_rms);
        let improvement = rms - next_rms;
        if next_rms <= rms {
            pose = next;
            rms = next_rms;
            matched = next_matched;
        }
        if improvement < tol {
            break;
        }
    }
    Ok(IcpResult { pose, rms, history, rank_deficient })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub points: usize,
    pub icp: bool,
    pub normalize: NormalizeMode,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { points: DEFAULT_POINTS, icp: true, normalize: NormalizeMode::UnitCube, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub pcd: f64,
    pub hd: f64,
    pub iogt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icp_rms: Option<f64>,
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleMetrics {
    pub fn failure(reason: impl Into<String>) -> Self {
        Self { pcd: FAILURE_PCD, hd: FAILURE_HD, iogt: FAILURE_IOGT, icp_rms: None, failed: true, error: Some(reason.into()) }
    }
}

/// Normalizes both clouds, optionally aligns prediction to ground truth with
/// ICP, then scores. Any failure yields the worst-case scores.
pub fn evaluate_clouds(pred: &[Vec3], gt: &[Vec3], cfg: &EvalConfig) -> SampleMetrics {
    let run = || -> Result<SampleMetrics, MetricsError> {
        let (mut p, _) = normalize(pred, cfg.normalize)?;
        let (g, _) = normalize(gt, cfg.normalize)?;
        let mut icp_rms = None;
        if cfg.icp {
            let r = icp_align(&p, &g, ICP_MAX_ITER, ICP_TOL)?;
            p = p.iter().map(|x| r.pose.transform_point(x)).collect();
            icp_rms = Some(r.rms);
        }
        let pb = Aabb::from_points(p.iter()).ok_or(MetricsError::EmptyCloud)?;
        let gb = Aabb::from_points(g.iter()).ok_or(MetricsError::EmptyCloud)?;
        Ok(SampleMetrics {
            pcd: chamfer(&p, &g)?,
            hd: hausdorff(&p, &g)?,
            iogt: iogt(&pb, &gb)?,
            icp_rms,
            failed: false,
            error: None,
        })
    };
    run().unwrap_or_else(|e| SampleMetrics::failure(e.to_string()))
}

/// Samples both programs' surfaces and scores them; sampling failures score worst-case.
pub fn evaluate_programs(pred: &PartProgram, gt: &PartProgram, cfg: &EvalConfig) -> SampleMetrics {
    let p = pred.sample_surface(cfg.points, cfg.seed);
    let g = gt.sample_surface(cfg.points, cfg.seed.wrapping_add(1));
    match (p, g) {
        (Ok(p), Ok(g)) => evaluate_clouds(&p, &g, cfg),
        (Err(e), _) | (_, Err(e)) => SampleMetrics::failure(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    #[serde(rename = "type")]
    pub joint_type: JointType,
    pub origin: Vec3,
    pub axis: Vec3,
}

impl JointRecord {
    pub fn movable(&self) -> bool {
        self.joint_type != JointType::Fixed
    }
}

/// World-frame joint records (origin and ẑ of the parent connector) for a model.
pub fn joint_records(model: &AssembledModel) -> Result<Vec<JointRecord>, AssemblyError> {
    model
        .plan
        .joints
        .iter()
        .map(|j| {
            let (fp, _) = joint_frames(&model.geometries, j)?;
            let parent = model.poses.get(&j.parent.part).copied().unwrap_or_default();
            let w = parent.compose(&fp);
            Ok(JointRecord { joint_type: j.joint_type, origin: w.translation, axis: w.axes().2 })
        })
        .collect()
}

/// World AABB of every part of an assembled model.
pub fn model_bounds(model: &AssembledModel) -> Option<Aabb> {
    model
        .geometries
        .iter()
        .filter_map(|(id, g)| Some(g.bounding_box().ok()?.transformed(model.poses.get(id)?)))
        .reduce(|a, b| a.union(&b))
}

impl JointRecord {
    /// Same joint with its origin mapped through `n`.
    pub fn normalized(&self, n: &Normalization) -> JointRecord {
        JointRecord { origin: n.apply(&self.origin), ..*self }
    }
}

/// Unit-cube normalization of a box: min corner to the origin, longest side 1.
pub fn unit_cube_normalization(b: &Aabb) -> Result<Normalization, MetricsError> {
    let m = b.extents().max();
    if !(m > 0.0) {
        return Err(MetricsError::DegenerateCloud);
    }
    Ok(Normalization { offset: b.min, scale: 1.0 / m })
}

/// ‖Δorigin‖ + 0.5·(unsigned axis angle in [0, π/2]).
pub fn joint_cost(a: &JointRecord, b: &JointRecord) -> f64 {
    let c = a.axis.normalize().dot(&b.axis.normalize()).abs().min(1.0);
    (a.origin - b.origin).norm() + AXIS_WEIGHT * c.acos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSetMetrics {
    pub type_accuracy: f64,
    pub f1: f64,
    /// Matched (predicted index, ground-truth index) pairs over the input lists.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    pub predicted_movable: usize,
    pub ground_truth_movable: usize,
}

/// Movable-joint matching: maximum number of pairs with cost ≤ `threshold`,
/// then minimum total cost among those.
pub fn joint_set_metrics(pred: &[JointRecord], gt: &[JointRecord], threshold: f64) -> JointSetMetrics {
    let p: Vec<usize> = (0..pred.len()).filter(|i| pred[*i].movable()).collect();
    let g: Vec<usize> = (0..gt.len()).filter(|i| gt[*i].movable()).collect();
    let n = p.len().max(g.len());
    let big = n as f64 * threshold + 1.0;
    let mut cost = vec![vec![0.0; n]; n];
    let mut raw = vec![vec![f64::INFINITY; n]; n];
    for (i, pi) in p.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            let c = joint_cost(&pred[*pi], &gt[*gj]);
            raw[i][j] = c;
            if c <= threshold {
                cost[i][j] = c - big;
            }
        }
    }
    let assignment = if n == 0 { Vec::new() } else { min_cost_assignment(&cost) };
    let mut pairs = Vec::new();
    let mut total_cost = 0.0;
    for (i, j) in assignment.into_iter().enumerate() {
        if i < p.len() && j < g.len() && raw[i][j] <= threshold {
            pairs.push((p[i], g[j]));
            total_cost += raw[i][j];
        }
    }
    let same = pairs.iter().filter(|(a, b)| pred[*a].joint_type == gt[*b].joint_type).count();
    let m = pairs.len() as f64;
    let (type_accuracy, f1) = if p.is_empty() && g.is_empty() {
        (1.0, 1.0)
    } else if pairs.is_empty() {
        (0.0, 0.0)
    } else {
        (same as f64 / m, 2.0 * m / (p.len() + g.len()) as f64)
    };
    JointSetMetrics { type_accuracy, f1, pairs, total_cost, predicted_movable: p.len(), ground_truth_movable: g.len() }
}

/// Hungarian algorithm on a square cost matrix; returns the column for each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials and matching, column 0 is a sentinel
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let (mut delta, mut j1) = (f64::INFINITY, 0);
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            out[row_of[j] - 1] = j - 1;
        }
    }
    out
}
