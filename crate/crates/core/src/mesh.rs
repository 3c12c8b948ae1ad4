//! Triangle meshes: extraction from part programs, OBJ reading/writing and
//! area-weighted surface sampling.

use crate::aabb::Aabb;
use crate::program::{PartProgram, ProgramError};
use crate::se3::{Pose, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    /// Zero-based, counter-clockwise seen from outside.
    pub triangles: Vec<[u32; 3]>,
}

pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 512;
pub const DEFAULT_RESOLUTION: usize = 64;

/// The six tetrahedra of the Freudenthal split of a unit cube. Corner `c`
/// sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1). Neighbouring cubes
/// split shared faces along the same diagonal, so the surface is closed.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("resolution {0} outside [{MIN_RESOLUTION}, {MAX_RESOLUTION}]")]
    Resolution(usize),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("obj line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error("mesh has no surface area")]
    EmptyMesh,
}

impl TriangleMesh {
    pub fn bounding_box(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    /// Signed volume by the divergence theorem (positive for outward winding).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn area(&self) -> f64 {
        self.triangle_areas().iter().sum()
    }

    fn triangle_areas(&self) -> Vec<f64> {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .collect()
    }

    /// Every directed edge appears once and its reverse once: closed and consistently oriented.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn transformed(&self, pose: &Pose) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn append(&mut self, other: &TriangleMesh) {
        let off = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + off)));
    }

    /// Area-weighted uniform samples on the triangles.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Result<Vec<Vec3>, MeshError> {
        let areas = self.triangle_areas();
        let mut cumulative = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a;
            cumulative.push(acc);
        }
        if !(acc > 0.0) {
            return Err(MeshError::EmptyMesh);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let x = rng.gen::<f64>() * acc;
                let i = cumulative.partition_point(|c| *c <= x).min(areas.len() - 1);
                let [a, b, c] = self.triangles[i].map(|k| self.vertices[k as usize]);
                let (r1, r2): (f64, f64) = (rng.gen::<f64>().sqrt(), rng.gen());
                a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
            })
            .collect())
    }

    /// OBJ text: `v` and `f` records, 1-based indices, millimeters.
    pub fn to_obj(&self, comment: &str) -> String {
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 24);
        for line in comment.lines() {
            let _ = writeln!(s, "# {line}");
        }
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }
}

/// Reads `v` and `f` records; polygons are fan-triangulated, other records ignored.
pub fn parse_obj(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut mesh = TriangleMesh::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |message: String| MeshError::Obj { line, message };
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut it = body.split_whitespace();
        match it.next() {
            Some("v") => {
                let coords: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad coordinate '{t}': {e}"))))
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(err("vertex needs three finite coordinates".into()));
                }
                mesh.vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let count = mesh.vertices.len() as i64;
                let idx: Vec<u32> = it
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| err(format!("bad face index '{t}'")))?;
                        let resolved = if i < 0 { count + i } else { i - 1 };
                        if i == 0 || resolved < 0 || resolved >= count {
                            return Err(err(format!("face index {i} out of range")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least three vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Extracts a closed surface from the binary membership field of `prog`.
///
/// The padded AABB is divided into cubes of side `longest extent / resolution`;
/// each cube is split into six tetrahedra and surface vertices are placed at
/// the midpoints of edges whose endpoints disagree.
pub fn meshify(prog: &PartProgram, resolution: usize) -> Result<TriangleMesh, MeshError> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(MeshError::Resolution(resolution));
    }
    let bbox = prog.bounding_box()?;
    let ext = bbox.extents();
    let h = ext.max() / resolution as f64;
    let origin = bbox.min - Vec3::repeat(h);
    let cells = ext.map(|e| (e / h).ceil() as usize + 2);
    let (nx, ny, nz) = (cells.x + 1, cells.y + 1, cells.z + 1);
    let solid = prog.solid();
    let at = |i: usize, j: usize, k: usize| origin + Vec3::new(i as f64, j as f64, k as f64) * h;
    let field: Vec<bool> = (0..nz)
        .into_par_iter()
        .flat_map_iter(|k| {
            let solid = &solid;
            (0..ny).flat_map(move |j| (0..nx).map(move |i| solid.contains(&at(i, j, k))))
        })
        .collect();
    let id = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);

    let mut mesh = TriangleMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut vertex_for = |a: usize, b: usize, pa: Vec3, pb: Vec3, mesh: &mut TriangleMesh| -> u32 {
        let key = if a < b { (a, b) } else { (b, a) };
        *edge_vertex.entry(key).or_insert_with(|| {
            mesh.vertices.push((pa + pb) * 0.5);
            (mesh.vertices.len() - 1) as u32
        })
    };
    for k in 0..cells.z {
        for j in 0..cells.y {
            for i in 0..cells.x {
                let corner = |c: usize| (i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                let ids: [usize; 8] = std::array::from_fn(|c| {
                    let (a, b, d) = corner(c);
                    id(a, b, d)
                });
                let first = field[ids[0]];
                if ids.iter().all(|g| field[*g] == first) {
                    continue;
                }
                for tet in TETS {
                    let g = tet.map(|c| ids[c]);
                    let p = tet.map(|c| {
                        let (a, b, d) = corner(c);
                        at(a, b, d)
                    });
                    let inside: Vec<usize> = (0..4).filter(|t| field[g[*t]]).collect();
                    let outside: Vec<usize> = (0..4).filter(|t| !field[g[*t]]).collect();
                    if inside.is_empty() || outside.is_empty() {
                        continue;
                    }
                    let dir = outside.iter().map(|t| p[*t]).sum::<Vec3>() / outside.len() as f64
                        - inside.iter().map(|t| p[*t]).sum::<Vec3>() / inside.len() as f64;
                    let mut v = |a: usize, b: usize| vertex_for(g[a], g[b], p[a], p[b], &mut mesh);
                    let tris: Vec<[u32; 3]> = match (inside.len(), outside.len()) {
                        (1, 3) => {
                            let s = inside[0];
                            vec![[v(s, outside[0]), v(s, outside[1]), v(s, outside[2])]]
                        }
                        (3, 1) => {
                            let s = outside[0];
                            vec![[v(inside[0], s), v(inside[1], s), v(inside[2], s)]]
                        }
                        _ => {
                            let (a, b, c, d) = (inside[0], inside[1], outside[0], outside[1]);
                            let (ac, ad, bd, bc) = (v(a, c), v(a, d), v(b, d), v(b, c));
                            vec![[ac, ad, bd], [ac, bd, bc]]
                        }
                    };
                    for mut t in tris {
                        let [a, b, c] = t.map(|x| mesh.vertices[x as usize]);
                        if (b - a).cross(&(c - a)).dot(&dir) < 0.0 {
                            t.swap(1, 2);
                        }
                        mesh.triangles.push(t);
                    }
                }
            }
        }
    }
    Ok(mesh)
}

/// Meshes several parts concurrently.
pub fn meshify_all(
    programs: &BTreeMap<String, PartProgram>,
    resolution: usize,
) -> Result<BTreeMap<String, TriangleMesh>, MeshError> {
    programs
        .par_iter()
        .map(|(k, p)| meshify(p, resolution).map(|m| (k.clone(), m)))
        .collect()
}
