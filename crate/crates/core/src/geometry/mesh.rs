//! Triangle meshes: OBJ loading, watertightness, BVH closest-point and ray parity.

use std::collections::HashMap;
use std::path::Path;

use crate::math::{Aabb, Vec3};

use super::GeometryError;

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Indexed triangle mesh with a bounding-volume hierarchy, immutable after build.
#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    nodes: Vec<Node>,
    watertight: bool,
}

fn tri_bounds(v: &[Vec3], t: &[u32; 3]) -> Aabb {
    let (a, b, c) = (v[t[0] as usize], v[t[1] as usize], v[t[2] as usize]);
    Aabb::new(a.min(b).min(c), a.max(b).max(c))
}

/// Squared distance from `p` to the box (0 inside).
fn box_dist2(b: &Aabb, p: Vec3) -> f64 {
    let d = (b.min - p).max(p - b.max).max(Vec3::ZERO);
    d.dot(d)
}

/// Closest point on triangle `abc` to `p`.
fn closest_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Möller–Trumbore; returns the hit distance for `t > 0`.
fn ray_triangle(o: Vec3, d: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = d.cross(e2);
    let det = e1.dot(pv);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = o - a;
    let u = tv.dot(pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qv = tv.cross(e1);
    let v = d.dot(qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(qv) * inv;
    (t > 1e-12).then_some(t)
}

fn ray_hits_box(b: &Aabb, o: Vec3, d: Vec3) -> bool {
    b.intersect_ray(o, d).is_some() || b.contains(o)
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        if triangles.is_empty() {
            return Err(GeometryError::Mesh("mesh has no triangles".into()));
        }
        if let Some(bad) = triangles.iter().flatten().find(|&&i| i as usize >= vertices.len()) {
            return Err(GeometryError::Mesh(format!("vertex index {bad} out of range")));
        }
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::Mesh("non-finite vertex".into()));
        }
        let watertight = is_closed_manifold(vertices.len(), &triangles);
        let mut mesh = Self { vertices, triangles, nodes: Vec::new(), watertight };
        mesh.build();
        Ok(mesh)
    }

    /// Axis-aligned box mesh with outward-facing triangles.
    pub fn cuboid(half_extents: Vec3) -> Self {
        let h = half_extents;
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        let quads = [[0, 4, 6, 2], [1, 3, 7, 5], [0, 1, 5, 4], [2, 6, 7, 3], [0, 2, 3, 1], [4, 5, 7, 6]];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Self::new(vertices, triangles).expect("cuboid is a valid mesh")
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn bounds(&self) -> Aabb {
        *self.nodes[0].bounds()
    }

    fn corners(&self, t: usize) -> (Vec3, Vec3, Vec3) {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize])
    }

    fn build(&mut self) {
        let mut order: Vec<usize> = (0..self.triangles.len()).collect();
        let centroids: Vec<Vec3> = (0..self.triangles.len())
            .map(|t| {
                let (a, b, c) = self.corners(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::new();
        self.build_node(&mut order, 0, &centroids, &mut nodes);
        self.triangles = order.iter().map(|&i| self.triangles[i]).collect();
        self.nodes = nodes;
    }

    fn build_node(&self, order: &mut [usize], start: usize, centroids: &[Vec3], nodes: &mut Vec<Node>) -> usize {
        let bounds = order
            .iter()
            .map(|&t| tri_bounds(&self.vertices, &self.triangles[t]))
            .reduce(|a, b| a.union(&b))
            .expect("non-empty node");
        let idx = nodes.len();
        if order.len() <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, start, end: start + order.len() });
            return idx;
        }
        let ext = bounds.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        order.sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
        let mid = order.len() / 2;
        nodes.push(Node::Leaf { bounds, start: 0, end: 0 });
        let (lo, hi) = order.split_at_mut(mid);
        let left = self.build_node(lo, start, centroids, nodes);
        let right = self.build_node(hi, start + mid, centroids, nodes);
        nodes[idx] = Node::Inner { bounds, left, right };
        idx
    }

    /// Unsigned distance to the closest triangle.
    pub fn distance(&self, p: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if box_dist2(self.nodes[i].bounds(), p) >= best {
                continue;
            }
            match &self.nodes[i] {
                Node::Leaf { start, end, .. } => {
                    for t in *start..*end {
                        let (a, b, c) = self.corners(t);
                        let q = closest_on_triangle(p, a, b, c) - p;
                        best = best.min(q.dot(q));
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = box_dist2(self.nodes[*left].bounds(), p);
                    let dr = box_dist2(self.nodes[*right].bounds(), p);
                    // Visit the nearer child first.
                    if dl < dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best.sqrt()
    }

    fn crossings(&self, o: Vec3, d: Vec3) -> usize {
        let mut count = 0;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if !ray_hits_box(self.nodes[i].bounds(), o, d) {
                continue;
            }
            match &self.nodes[i] {
                Node::Leaf { start, end, .. } => {
                    for t in *start..*end {
                        let (a, b, c) = self.corners(t);
                        if ray_triangle(o, d, a, b, c).is_some() {
                            count += 1;
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        count
    }

    /// Inside test by ray parity, majority of three skewed rays.
    pub fn contains(&self, p: Vec3) -> Result<bool, GeometryError> {
        if !self.watertight {
            return Err(GeometryError::NotWatertight);
        }
        if !self.bounds().contains(p) {
            return Ok(false);
        }
        const DIRS: [Vec3; 3] = [
            Vec3::new(0.577_215_66, 0.618_033_99, 0.531_128_87),
            Vec3::new(-0.683_147_18, 0.311_029_99, 0.654_987_3),
            Vec3::new(0.267_949_19, -0.717_106_78, -0.654_321_1),
        ];
        let votes = DIRS.iter().filter(|d| self.crossings(p, d.normalized()) % 2 == 1).count();
        Ok(votes >= 2)
    }

    /// Distance with sign from ray parity; negative inside.
    pub fn signed_distance(&self, p: Vec3) -> Result<f64, GeometryError> {
        let d = self.distance(p);
        Ok(if self.contains(p)? { -d } else { d })
    }
}

/// Every undirected edge used by exactly two faces, with even Euler characteristic at most 2.
fn is_closed_manifold(n_vertices: usize, triangles: &[[u32; 3]]) -> bool {
    let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
    let mut used = vec![false; n_vertices];
    for t in triangles {
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return false;
        }
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            used[a as usize] = true;
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    if edges.values().any(|&c| c != 2) {
        return false;
    }
    let v = used.iter().filter(|&&u| u).count() as i64;
    let chi = v - edges.len() as i64 + triangles.len() as i64;
    chi <= 2 && chi % 2 == 0
}

/// Parse an OBJ file: `v x y z` vertices and triangular `f` faces. Other
/// statements are ignored; polygons with more than three corners are rejected.
pub fn parse_obj(text: &str) -> Result<TriMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let err = |m: &str| GeometryError::Mesh(format!("line {}: {m}", lineno + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.take(3).map(str::parse).collect::<Result<_, _>>().map_err(|_| err("bad vertex"))?;
                if c.len() != 3 {
                    return Err(err("vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| err("bad face index"))?;
                        let n = vertices.len() as i64;
                        let i = if i < 0 { n + i } else { i - 1 };
                        if i < 0 || i >= n {
                            return Err(err("face index out of range"));
                        }
                        Ok(i as u32)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(err("only triangular faces are supported"));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn load_obj(path: &Path) -> Result<TriMesh, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io { path: path.to_owned(), source: e })?;
    parse_obj(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_is_watertight() {
        let m = TriMesh::cuboid(Vec3::splat(1.0));
        assert!(m.is_watertight());
        assert_eq!(m.triangles().len(), 12);
    }

    #[test]
    fn open_mesh_refuses_sign() {
        let mut tris = TriMesh::cuboid(Vec3::ONE).triangles().to_vec();
        tris.pop();
        let m = TriMesh::new(TriMesh::cuboid(Vec3::ONE).vertices().to_vec(), tris).unwrap();
        assert!(!m.is_watertight());
        assert!(matches!(m.signed_distance(Vec3::ZERO), Err(GeometryError::NotWatertight)));
        assert!((m.distance(Vec3::new(0.0, 0.0, 3.0)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cuboid_distances() {
        let m = TriMesh::cuboid(Vec3::splat(1.0));
        assert!((m.signed_distance(Vec3::new(0.0, 0.0, 1.5)).unwrap() - 0.5).abs() < 1e-12);
        assert!((m.signed_distance(Vec3::ZERO).unwrap() + 1.0).abs() < 1e-12);
        let corner = m.signed_distance(Vec3::new(2.0, 2.0, 2.0)).unwrap();
        assert!((corner - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn obj_parsing() {
        let text = "# tetra\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2/1 3/1 4/1\n";
        let m = parse_obj(text).unwrap();
        assert!(m.is_watertight());
        assert!(m.contains(Vec3::new(0.1, 0.1, 0.1)).unwrap());
        assert!(!m.contains(Vec3::new(0.9, 0.9, 0.9)).unwrap());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 4 3\n").is_err());
    }
}
