//! Proxy shapes with signed distance and occupancy queries, and the shape-prior loss.

mod loss;
mod mesh;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use loss::{
    alpha_nerf, leniency_weight, occupancy_iou, shape_loss, shape_loss_at_points, shape_loss_term, ShapeLossConfig,
    BCE_EPSILON,
};
pub use mesh::{load_obj, parse_obj, TriMesh};

use crate::math::Vec3;

/// Points with `|d|` below this count as inside.
pub const BOUNDARY_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("mesh is not watertight; sign and occupancy are unavailable")]
    NotWatertight,
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Shape entry of the scene file, in canonical object units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeSpec {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    /// Capped cylinder along the y axis.
    Cylinder { radius: f64, half_height: f64 },
    /// OBJ file, relative to the scene file.
    Mesh { path: PathBuf },
}

impl ShapeSpec {
    /// Dimension check; returns the violated rule.
    pub fn check(&self) -> Result<(), String> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let good = match self {
            ShapeSpec::Sphere { radius } => ok(*radius),
            ShapeSpec::Box { half_extents: h } => ok(h.x) && ok(h.y) && ok(h.z),
            ShapeSpec::Cylinder { radius, half_height } => ok(*radius) && ok(*half_height),
            ShapeSpec::Mesh { path } => !path.as_os_str().is_empty(),
        };
        if good {
            Ok(())
        } else {
            Err("shape has nonpositive dimensions".into())
        }
    }

    /// Load the concrete shape, reading meshes relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Shape, GeometryError> {
        Ok(match self {
            ShapeSpec::Sphere { radius } => Shape::Sphere { radius: *radius },
            ShapeSpec::Box { half_extents } => Shape::Box { half_extents: *half_extents },
            ShapeSpec::Cylinder { radius, half_height } => Shape::Cylinder { radius: *radius, half_height: *half_height },
            ShapeSpec::Mesh { path } => Shape::Mesh(Arc::new(load_obj(&crate::field::resolve(base_dir, path))?)),
        })
    }
}

/// A resolved proxy shape.
#[derive(Clone, Debug)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    Cylinder { radius: f64, half_height: f64 },
    Mesh(Arc<TriMesh>),
}

impl Shape {
    pub fn unit_sphere() -> Shape {
        Shape::Sphere { radius: 1.0 }
    }

    /// Negative inside. Exact for primitives.
    pub fn signed_distance(&self, p: Vec3) -> Result<f64, GeometryError> {
        Ok(match self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half_extents } => {
                let q = p.abs() - *half_extents;
                q.max(Vec3::ZERO).norm() + q.max_elem().min(0.0)
            }
            Shape::Cylinder { radius, half_height } => {
                let dr = (p.x * p.x + p.z * p.z).sqrt() - radius;
                let dy = p.y.abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt();
                outside + dr.max(dy).min(0.0)
            }
            Shape::Mesh(m) => m.signed_distance(p)?,
        })
    }

    pub fn occupancy(&self, p: Vec3) -> Result<bool, GeometryError> {
        let d = self.signed_distance(p)?;
        Ok(d < 0.0 || d.abs() < BOUNDARY_EPSILON)
    }
}

pub fn signed_distance(shape: &Shape, p: Vec3) -> Result<f64, GeometryError> {
    shape.signed_distance(p)
}

pub fn occupancy(shape: &Shape, p: Vec3) -> Result<bool, GeometryError> {
    shape.occupancy(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_distances() {
        let s = Shape::unit_sphere();
        assert_eq!(s.signed_distance(Vec3::ZERO).unwrap(), -1.0);
        assert_eq!(s.signed_distance(Vec3::new(2.0, 0.0, 0.0)).unwrap(), 1.0);
        assert!(s.occupancy(Vec3::ZERO).unwrap());
        assert!(!s.occupancy(Vec3::new(5.0, 5.0, 5.0)).unwrap());
        assert!(s.occupancy(Vec3::new(1.0, 0.0, 0.0)).unwrap());
    }

    /// Brute-force box distance: nearest of densely sampled surface points.
    fn dense_box_distance(h: Vec3, p: Vec3) -> f64 {
        let n = 200;
        let mut best = f64::INFINITY;
        for face in 0..6 {
            let axis = face / 2;
            let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
            for i in 0..=n {
                for j in 0..=n {
                    let u = -1.0 + 2.0 * i as f64 / n as f64;
                    let v = -1.0 + 2.0 * j as f64 / n as f64;
                    let q = match axis {
                        0 => Vec3::new(sign * h.x, u * h.y, v * h.z),
                        1 => Vec3::new(u * h.x, sign * h.y, v * h.z),
                        _ => Vec3::new(u * h.x, v * h.y, sign * h.z),
                    };
                    best = best.min((q - p).norm());
                }
            }
        }
        best
    }

    #[test]
    fn box_distance_matches_dense_sampling() {
        let h = Vec3::ONE;
        let s = Shape::Box { half_extents: h };
        assert!((s.signed_distance(Vec3::new(0.0, 0.0, 1.5)).unwrap() - 0.5).abs() < 1e-15);
        for p in [Vec3::new(0.0, 0.0, 1.5), Vec3::new(1.3, -1.2, 0.4), Vec3::new(0.2, 0.5, -0.1)] {
            let exact = s.signed_distance(p).unwrap();
            let brute = dense_box_distance(h, p);
            assert!((exact.abs() - brute).abs() < 2e-2, "{p:?}: {exact} vs {brute}");
        }
    }

    #[test]
    fn cylinder_distances() {
        let s = Shape::Cylinder { radius: 0.5, half_height: 1.0 };
        assert!((s.signed_distance(Vec3::new(1.0, 0.0, 0.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((s.signed_distance(Vec3::new(0.0, 1.5, 0.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((s.signed_distance(Vec3::ZERO).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn mesh_cube_agrees_with_analytic_box() {
        let h = Vec3::new(0.7, 0.4, 0.55);
        let mesh = Shape::Mesh(Arc::new(TriMesh::cuboid(h)));
        let boxed = Shape::Box { half_extents: h };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut agree = 0;
        for _ in 0..n {
            let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if mesh.occupancy(p).unwrap() == boxed.occupancy(p).unwrap() {
                agree += 1;
            }
        }
        assert!(agree as f64 / n as f64 >= 0.9999, "agreement {agree}/{n}");
    }

    #[test]
    fn shape_json_forms() {
        let s: ShapeSpec = serde_json::from_str(r#"{"type":"box","half_extents":[0.5,0.5,0.5]}"#).unwrap();
        assert_eq!(s, ShapeSpec::Box { half_extents: Vec3::splat(0.5) });
        let m: ShapeSpec = serde_json::from_str(r#"{"type":"mesh","path":"chair.obj"}"#).unwrap();
        assert!(matches!(m, ShapeSpec::Mesh { .. }));
        assert!(serde_json::from_str::<ShapeSpec>(r#"{"type":"sphere","radius":1,"color":2}"#).is_err());
        assert!(ShapeSpec::Sphere { radius: 0.0 }.check().is_err());
    }
}
