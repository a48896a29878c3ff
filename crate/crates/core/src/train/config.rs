use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::ShapeLossConfig;
use crate::math::{Aabb, Vec3};
use crate::render::Camera;

/// Random viewpoints on a shell around the look-at point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraDistribution {
    /// Distance from the look-at point, in canonical object units. Scene
    /// cameras scale it by the scene's half-diagonal over √3.
    pub radius_range: (f64, f64),
    /// Elevation above the xz-plane, radians.
    pub elevation_range: (f64, f64),
    /// Vertical field of view, radians.
    pub fov: f64,
}

impl Default for CameraDistribution {
    fn default() -> Self {
        Self { radius_range: (2.6, 3.4), elevation_range: (-0.2, 0.7), fov: 0.8 }
    }
}

impl CameraDistribution {
    pub fn check(&self) -> Result<(), String> {
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return Err(format!("radius_range {:?} must satisfy 0 < min ≤ max", self.radius_range));
        }
        let (e0, e1) = self.elevation_range;
        if !(e0 <= e1 && e0 >= -PI / 2.0 && e1 <= PI / 2.0) {
            return Err(format!("elevation_range {:?} must be ordered within [−π/2, π/2]", self.elevation_range));
        }
        if !(self.fov > 0.0 && self.fov < PI) {
            return Err(format!("fov {} outside (0, π)", self.fov));
        }
        Ok(())
    }
}

/// Which frame a training camera looks at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CameraMode {
    /// The canonical object frame, looking at the origin.
    Object,
    /// The scene, looking at the centre of its bounds.
    Scene(Aabb),
}

/// Uniform azimuth, elevation and radius; always looks at the mode's centre.
pub fn sample_camera<R: Rng + ?Sized>(
    dist: &CameraDistribution,
    mode: CameraMode,
    resolution: (usize, usize),
    rng: &mut R,
) -> Camera {
    let (center, scale) = match mode {
        CameraMode::Object => (Vec3::ZERO, 1.0),
        CameraMode::Scene(b) => (b.center(), (b.extent() * 0.5).norm() / 3f64.sqrt()),
    };
    let azimuth = rng.random_range(0.0..2.0 * PI);
    let (e0, e1) = dist.elevation_range;
    let elevation = if e0 < e1 { rng.random_range(e0..=e1) } else { e0 };
    let (r0, r1) = dist.radius_range;
    let radius = if r0 < r1 { rng.random_range(r0..=r1) } else { r0 } * scale;
    let dir = Vec3::new(elevation.cos() * azimuth.sin(), elevation.sin(), elevation.cos() * azimuth.cos());
    Camera::look_at(center + dir * radius, center, Vec3::new(0.0, 1.0, 0.0), dist.fov, resolution.0, resolution.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iters: u64,
    /// Target share of global steps; must agree with the block sizes.
    pub global_fraction: f64,
    /// Local steps per object group per pass.
    pub local_block: u32,
    /// Global steps after each object block.
    pub global_block: u32,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub render_resolution: (usize, usize),
    pub n_samples_per_ray: usize,
    pub stratified: bool,
    pub shape_loss: ShapeLossConfig,
    /// Also add each shaped proxy's shape loss in global steps.
    pub global_shape_loss: bool,
    pub camera: CameraDistribution,
    pub seed: u64,
    /// Checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Composed preview every this many iterations; 0 disables previews.
    pub preview_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 15_000,
            global_fraction: 1.0 / 3.0,
            local_block: 10,
            global_block: 5,
            lr: 1e-3,
            adam_betas: (0.9, 0.99),
            render_resolution: (64, 64),
            n_samples_per_ray: 64,
            stratified: true,
            shape_loss: ShapeLossConfig::default(),
            global_shape_loss: true,
            camera: CameraDistribution::default(),
            seed: 0,
            checkpoint_interval: 0,
            preview_interval: 100,
        }
    }
}

impl TrainConfig {
    /// Every broken rule, empty when the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.local_block < 1 {
            out.push("local_block must be at least 1".to_owned());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push("lr must be positive".to_owned());
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            out.push("adam_betas must lie in [0, 1)".to_owned());
        }
        if !(0.0..=1.0).contains(&self.global_fraction) {
            out.push("global_fraction must lie in [0, 1]".to_owned());
        } else {
            // The block sizes fix the realized share; allow one step of slack per block unit.
            let unit = (self.local_block + self.global_block).max(1) as f64;
            let realized = self.global_block as f64 / unit;
            if (realized - self.global_fraction).abs() > 1.0 / unit + 1e-12 {
                out.push(format!(
                    "global_block {} / (local_block {} + global_block) = {realized:.4} does not match global_fraction {}",
                    self.global_block, self.local_block, self.global_fraction
                ));
            }
        }
        if self.render_resolution.0 == 0 || self.render_resolution.1 == 0 {
            out.push("render_resolution must be at least 1×1".to_owned());
        }
        if self.n_samples_per_ray == 0 {
            out.push("n_samples_per_ray must be at least 1".to_owned());
        }
        if !self.shape_loss.is_valid() {
            out.push("shape_loss needs sigma_s > 0, delta_ref > 0, weight ≥ 0 and n_points ≥ 1".to_owned());
        }
        if let Err(e) = self.camera.check() {
            out.push(e);
        }
        out
    }
}
