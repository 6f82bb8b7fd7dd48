//! Indexed triangle meshes and the OBJ subset they are exchanged in.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::bvh::{Aabb, Bvh, TriangleHit};

/// Allowed deviation of a vertex normal from unit length.
pub const NORMAL_TOLERANCE: f64 = 1e-4;
const UV_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[u32; 3]>,
    bvh: Bvh,
}

impl TriangleMesh {
    /// Validates the geometry, fills in missing normals with area-weighted face
    /// normals, and builds the BVH.
    pub fn new(
        positions: Vec<Vec3>,
        normals: Option<Vec<Vec3>>,
        uvs: Vec<[f64; 2]>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        let n = positions.len();
        if uvs.len() != n {
            return Err(if uvs.is_empty() {
                Error::MissingUvs
            } else {
                Error::InvalidMesh(format!("{} UVs for {n} vertices", uvs.len()))
            });
        }
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&k| k as usize >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} references a vertex index >= {n}"
                )));
            }
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        for (i, uv) in uvs.iter().enumerate() {
            if uv
                .iter()
                .any(|c| !(c.is_finite() && *c >= -UV_TOLERANCE && *c <= 1.0 + UV_TOLERANCE))
            {
                return Err(Error::InvalidMesh(format!(
                    "UV of vertex {i} outside [0,1]: {uv:?}"
                )));
            }
        }
        let uvs = uvs
            .into_iter()
            .map(|[u, v]| [u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)])
            .collect();
        for (i, t) in triangles.iter().enumerate() {
            if is_degenerate(positions[t[0] as usize], positions[t[1] as usize], positions[t[2] as usize]) {
                return Err(Error::DegenerateTriangle { index: i });
            }
        }
        let normals = match normals {
            Some(ns) => {
                if ns.len() != n {
                    return Err(Error::InvalidMesh(format!(
                        "{} normals for {n} vertices",
                        ns.len()
                    )));
                }
                ns.into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let len = v.length();
                        if !(len > 1e-12) || !len.is_finite() {
                            Err(Error::InvalidMesh(format!("vertex {i} has a zero normal")))
                        } else {
                            Ok(v / len)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => area_weighted_normals(&positions, &triangles)?,
        };
        let bvh = Bvh::build(&positions, &triangles);
        Ok(TriangleMesh {
            positions,
            normals,
            uvs,
            triangles,
            bvh,
        })
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    /// Length of the bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.bounds().diagonal()
    }

    pub fn vertices(&self, tri: usize) -> [Vec3; 3] {
        let t = self.triangles[tri];
        [
            self.positions[t[0] as usize],
            self.positions[t[1] as usize],
            self.positions[t[2] as usize],
        ]
    }

    /// Unit geometric normal following the winding order.
    pub fn face_normal(&self, tri: usize) -> Vec3 {
        let [a, b, c] = self.vertices(tri);
        (b - a).cross(c - a).normalize()
    }

    pub fn interpolate_position(&self, tri: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.vertices(tri);
        a * bary[0] + b * bary[1] + c * bary[2]
    }

    /// Normalized barycentric blend of the vertex normals.
    pub fn interpolate_normal(&self, tri: usize, bary: [f64; 3]) -> Vec3 {
        let t = self.triangles[tri];
        let n = self.normals[t[0] as usize] * bary[0]
            + self.normals[t[1] as usize] * bary[1]
            + self.normals[t[2] as usize] * bary[2];
        let len = n.length();
        if len > 1e-12 {
            n / len
        } else {
            self.face_normal(tri)
        }
    }

    pub fn interpolate_uv(&self, tri: usize, bary: [f64; 3]) -> [f64; 2] {
        let t = self.triangles[tri];
        let mut uv = [0.0; 2];
        for k in 0..3 {
            let w = self.uvs[t[k] as usize];
            uv[0] += bary[k] * w[0];
            uv[1] += bary[k] * w[1];
        }
        uv
    }

    pub fn uv_triangle(&self, tri: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[tri];
        [
            self.uvs[t[0] as usize],
            self.uvs[t[1] as usize],
            self.uvs[t[2] as usize],
        ]
    }

    /// Nearest intersection along a ray, if any.
    pub fn intersect(&self, origin: Vec3, dir: Vec3, t_max: f64) -> Option<TriangleHit> {
        self.bvh.closest_hit(origin, dir, t_max)
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        for p in &self.positions {
            let _ = writeln!(s, "v {:?} {:?} {:?}", p.x, p.y, p.z);
        }
        for uv in &self.uvs {
            let _ = writeln!(s, "vt {:?} {:?}", uv[0], uv[1]);
        }
        for n in &self.normals {
            let _ = writeln!(s, "vn {:?} {:?} {:?}", n.x, n.y, n.z);
        }
        for t in &self.triangles {
            let [a, b, c] = t.map(|k| k + 1);
            let _ = writeln!(s, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}");
        }
        s
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }
}

fn is_degenerate(a: Vec3, b: Vec3, c: Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let cross = e1.cross(e2).length();
    let scale = e1.length_squared().max(e2.length_squared());
    !(cross > 1e-12 * scale) || scale == 0.0
}

/// Per-vertex normals as the normalized sum of adjacent face cross products
/// (whose length is twice the face area).
pub fn area_weighted_normals(positions: &[Vec3], triangles: &[[u32; 3]]) -> Result<Vec<Vec3>> {
    let mut acc = vec![Vec3::ZERO; positions.len()];
    for t in triangles {
        let [a, b, c] = t.map(|k| positions[k as usize]);
        let n = (b - a).cross(c - a);
        for &k in t {
            acc[k as usize] += n;
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.length();
            if len > 0.0 {
                Ok(n / len)
            } else {
                Err(Error::InvalidMesh(format!(
                    "vertex {i} has no well-defined normal (unreferenced or cancelling faces)"
                )))
            }
        })
        .collect()
}

/// Parses the OBJ subset `v / vt / vn / f`. Polygons are fan-triangulated and
/// each distinct (position, uv, normal) index triple becomes one mesh vertex.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut v: Vec<Vec3> = Vec::new();
    let mut vt: Vec<[f64; 2]> = Vec::new();
    let mut vn: Vec<Vec3> = Vec::new();
    let mut faces: Vec<Vec<(usize, Option<usize>, Option<usize>)>> = Vec::new();

    let perr = |line: usize, msg: &str| Error::parse(path, format!("line {line}: {msg}"));
    let floats = |parts: &[&str], count: usize, line: usize| -> Result<Vec<f64>> {
        if parts.len() < count {
            return Err(perr(line, "too few components"));
        }
        parts[..count]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| perr(line, &format!("bad number {s:?}"))))
            .collect()
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let tag = parts.next().unwrap_or("");
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => {
                let c = floats(&rest, 3, line)?;
                v.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = floats(&rest, 2, line)?;
                vt.push([c[0], c[1]]);
            }
            "vn" => {
                let c = floats(&rest, 3, line)?;
                vn.push(Vec3::new(c[0], c[1], c[2]));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(perr(line, "face with fewer than 3 vertices"));
                }
                let mut face = Vec::with_capacity(rest.len());
                for corner in &rest {
                    let mut it = corner.split('/');
                    let resolve = |s: Option<&str>, len: usize| -> Result<Option<usize>> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => {
                                let i: i64 = s
                                    .parse()
                                    .map_err(|_| perr(line, &format!("bad index {s:?}")))?;
                                let idx = if i > 0 {
                                    i - 1
                                } else if i < 0 {
                                    len as i64 + i
                                } else {
                                    return Err(perr(line, "index 0 is invalid"));
                                };
                                if idx < 0 || idx as usize >= len {
                                    return Err(perr(line, &format!("index {i} out of range")));
                                }
                                Ok(Some(idx as usize))
                            }
                        }
                    };
                    let pi = resolve(it.next(), v.len())?
                        .ok_or_else(|| perr(line, "face corner without position"))?;
                    let ti = resolve(it.next(), vt.len())?;
                    let ni = resolve(it.next(), vn.len())?;
                    face.push((pi, ti, ni));
                }
                faces.push(face);
            }
            // Groups, objects, materials and smoothing are irrelevant here.
            _ => {}
        }
    }

    if faces.is_empty() {
        return Err(Error::parse(path, "no faces"));
    }
    let all_uv = faces.iter().flatten().all(|c| c.1.is_some());
    if !all_uv {
        return Err(Error::MissingUvs);
    }
    let any_normal = faces.iter().flatten().any(|c| c.2.is_some());
    let all_normal = faces.iter().flatten().all(|c| c.2.is_some());
    if any_normal && !all_normal {
        return Err(Error::parse(path, "normals given for some face corners but not all"));
    }

    let mut remap: HashMap<(usize, usize, Option<usize>), u32> = HashMap::new();
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    let mut triangles = Vec::new();
    for face in &faces {
        let ids: Vec<u32> = face
            .iter()
            .map(|&(p, t, n)| {
                let t = t.expect("checked above");
                *remap.entry((p, t, n)).or_insert_with(|| {
                    positions.push(v[p]);
                    uvs.push(vt[t]);
                    if let Some(n) = n {
                        normals.push(vn[n]);
                    }
                    (positions.len() - 1) as u32
                })
            })
            .collect();
        for k in 1..ids.len() - 1 {
            triangles.push([ids[0], ids[k], ids[k + 1]]);
        }
    }
    TriangleMesh::new(
        positions,
        if all_normal { Some(normals) } else { None },
        uvs,
        triangles,
    )
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}
