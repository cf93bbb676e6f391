//! Triangle meshes: closest-point queries, marching cubes, OBJ I/O.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::mesh_tables::{EDGE_TABLE, TRIANGLE_TABLE};
use crate::volume::Volume;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    // bounding sphere per triangle, used to prune closest-point scans
    bounds: Vec<(Vec3, f64)>,
}

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub distance: f64,
    pub triangle: usize,
}

impl TriMesh {
    /// Build a mesh, dropping triangles that repeat a vertex index.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("mesh vertex".into()));
        }
        let triangles: Vec<[usize; 3]> = triangles.into_iter().filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]).collect();
        let bounds = triangles
            .iter()
            .map(|t| {
                let c = (vertices[t[0]] + vertices[t[1]] + vertices[t[2]]) / 3.0;
                let r = t.iter().map(|&i| (vertices[i] - c).norm()).fold(0.0, f64::max);
                (c, r)
            })
            .collect();
        Ok(Self { vertices, triangles, bounds })
    }

    pub fn empty() -> Self {
        Self { vertices: Vec::new(), triangles: Vec::new(), bounds: Vec::new() }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// V − E + F over the referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_count() as i64 + self.triangles.len() as i64
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        let vertices = self.vertices.iter().map(f).collect();
        Self::new(vertices, self.triangles.clone()).expect("rigid image of a valid mesh is valid")
    }

    /// Exact closest point over all triangles.
    pub fn closest_point(&self, p: &Vec3) -> Result<ClosestPoint> {
        if self.triangles.is_empty() {
            return Err(Error::InvalidArgument("closest point query on an empty mesh".into()));
        }
        let mut best = ClosestPoint { point: *p, distance: f64::INFINITY, triangle: 0 };
        let mut best_sq = f64::INFINITY;
        for (ti, t) in self.triangles.iter().enumerate() {
            let (c, r) = self.bounds[ti];
            let lower = (p - c).norm() - r;
            if lower > 0.0 && lower * lower > best_sq {
                continue;
            }
            let q = closest_point_on_triangle(p, &self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]);
            let d2 = (p - q).norm_squared();
            if d2 < best_sq {
                best_sq = d2;
                best = ClosestPoint { point: q, distance: 0.0, triangle: ti };
            }
        }
        best.distance = best_sq.sqrt();
        Ok(best)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
        s
    }

    /// Parse the `v x y z` / `f i j k` subset of Wavefront OBJ. Other lines
    /// are ignored.
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::format("OBJ", format!("line {}: {e}", lineno + 1)))?;
                    if c.len() != 3 {
                        return Err(Error::format("OBJ", format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::format("OBJ", format!("line {}: {e}", lineno + 1)))?;
                    if idx.len() != 3 || idx.contains(&0) {
                        return Err(Error::format("OBJ", format!("line {}: need three 1-based indices", lineno + 1)));
                    }
                    triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    pub fn read_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj(&text)
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

const CORNERS: [[usize; 3]; 8] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

const EDGES: [[usize; 2]; 12] = [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Extract the `iso` level set. A corner counts as inside when its value is
/// below `iso`; vertices shared between cells are welded.
pub fn marching_cubes(v: &Volume, iso: f32) -> Result<TriMesh> {
    let g = *v.geometry();
    let [nx, ny, nz] = g.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(Error::InvalidArgument(format!("marching cubes needs dims >= 2, got {:?}", g.dims)));
    }
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut welded: HashMap<(usize, usize), usize> = HashMap::new();
    let mut triangles = Vec::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut vals = [0.0f32; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = v.get(i + off[0], j + off[1], k + off[2]);
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut edge_vertex = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let ca = [i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]];
                    let cb = [i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]];
                    let axis = (0..3).find(|&ax| ca[ax] != cb[ax]).unwrap();
                    let lo = if ca[axis] < cb[axis] { ca } else { cb };
                    let key = (g.index(lo[0], lo[1], lo[2]), axis);
                    let idx = *welded.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[a] as f64, vals[b] as f64);
                        let t = (iso as f64 - va) / (vb - va);
                        let pa = g.world(ca[0], ca[1], ca[2]);
                        let pb = g.world(cb[0], cb[1], cb[2]);
                        vertices.push(pa + (pb - pa) * t);
                        vertices.len() - 1
                    });
                    edge_vertex[e] = idx;
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    triangles.push([edge_vertex[tri[0] as usize], edge_vertex[tri[1] as usize], edge_vertex[tri[2] as usize]]);
                }
            }
        }
    }
    TriMesh::new(vertices, triangles)
}
