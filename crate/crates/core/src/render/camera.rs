use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::math::{Aabb, Mat3, Quat, Vec3};
use crate::scene::RigidPlacement;

/// Pinhole camera looking down its local −z axis with +y up. The pose maps
/// camera space to scene space; its scale is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub pose: RigidPlacement,
    /// Vertical field of view, radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(pose: RigidPlacement, fov_y: f64, width: usize, height: usize) -> Result<Self, RenderError> {
        let cam = Self { pose, fov_y, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`. Falls back to another up vector
    /// when `up` is parallel to the view direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Self {
        let forward = (target - eye).normalized();
        let mut right = forward.cross(up);
        if right.norm() < 1e-9 {
            let alt = if forward.y.abs() < 0.9 { Vec3::new(0.0, 1.0, 0.0) } else { Vec3::new(0.0, 0.0, 1.0) };
            right = forward.cross(alt);
        }
        let right = right.normalized();
        let true_up = right.cross(forward);
        let rot = Mat3::from_cols(right, true_up, -forward);
        let pose = RigidPlacement::new(eye, Quat::from_mat3(&rot), Vec3::ONE);
        Self { pose, fov_y, width, height }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(RenderError::InvalidCamera(format!("fov_y {} outside (0, π)", self.fov_y)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("resolution must be at least 1×1".into()));
        }
        if !self.pose.location.is_finite() || !self.pose.rotation.is_finite() {
            return Err(RenderError::InvalidCamera("non-finite pose".into()));
        }
        if (self.pose.rotation.norm() - 1.0).abs() > crate::scene::QUAT_NORM_TOLERANCE {
            return Err(RenderError::InvalidCamera("rotation quaternion is not unit norm".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn rotation(&self) -> Mat3 {
        self.pose.rotation.to_mat3()
    }

    /// Unit direction through the centre of pixel `(px, py)` in camera space.
    /// Row 0 is the top of the image.
    pub fn local_direction(&self, px: usize, py: usize) -> Vec3 {
        let tan = (0.5 * self.fov_y).tan();
        let aspect = self.width as f64 / self.height as f64;
        let x = (2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0) * tan * aspect;
        let y = (1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64) * tan;
        Vec3::new(x, y, -1.0).normalized()
    }
}

fn default_up() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.0)
}

fn default_fov() -> f64 {
    0.8
}

/// A camera as written in request bodies: a full pose, or eye and target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraSpec {
    Pose(Camera),
    LookAt {
        eye: Vec3,
        target: Vec3,
        #[serde(default = "default_up")]
        up: Vec3,
        #[serde(default = "default_fov")]
        fov_y: f64,
    },
}

impl CameraSpec {
    /// `resolution` overrides a full pose's size and is required for the
    /// look-at form, which otherwise defaults to `fallback`.
    pub fn build(&self, resolution: Option<(usize, usize)>, fallback: (usize, usize)) -> Result<Camera, RenderError> {
        let cam = match self {
            CameraSpec::Pose(c) => match resolution {
                Some((w, h)) => c.clone().with_resolution(w, h),
                None => c.clone(),
            },
            CameraSpec::LookAt { eye, target, up, fov_y } => {
                if !(eye.is_finite() && target.is_finite() && up.is_finite()) || (*target - *eye).norm() == 0.0 {
                    return Err(RenderError::InvalidCamera("eye and target must be finite and distinct".into()));
                }
                let (w, h) = resolution.unwrap_or(fallback);
                Camera::look_at(*eye, *target, *up, *fov_y, w, h)
            }
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// A ray segment in scene space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// One ray per pixel in row-major order, clipped to `bounds`. Pixels whose
/// ray misses the box get `None`.
pub fn generate_rays(camera: &Camera, bounds: &Aabb) -> Vec<Option<Ray>> {
    let rot = camera.rotation();
    let origin = camera.pose.location;
    let mut out = Vec::with_capacity(camera.pixel_count());
    for py in 0..camera.height {
        for px in 0..camera.width {
            let direction = rot.mul_vec(camera.local_direction(px, py));
            out.push(
                bounds
                    .intersect_ray(origin, direction)
                    .filter(|(t0, t1)| t0 < t1)
                    .map(|(t_near, t_far)| Ray { origin, direction, t_near, t_far }),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_pixel_looks_at_target() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.8, 5, 5);
        let rays = generate_rays(&cam, &Aabb::unit());
        let r = rays[12].unwrap();
        assert!((r.direction - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((r.t_near - 1.0).abs() < 1e-12 && (r.t_far - 3.0).abs() < 1e-12);
    }

    #[test]
    fn directions_are_unit() {
        let cam = Camera::look_at(Vec3::new(1.5, 2.0, -3.0), Vec3::new(0.1, 0.0, 0.2), Vec3::new(0.0, 1.0, 0.0), 1.1, 17, 9);
        let rot = cam.rotation();
        for py in 0..cam.height {
            for px in 0..cam.width {
                assert!((rot.mul_vec(cam.local_direction(px, py)).norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn parallel_ray_outside_misses() {
        let cam = Camera::look_at(Vec3::new(0.0, 3.0, 5.0), Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 0.01, 1, 1);
        assert!(generate_rays(&cam, &Aabb::unit())[0].is_none());
    }

    #[test]
    fn look_at_straight_down_is_well_defined() {
        let cam = Camera::look_at(Vec3::new(0.0, 4.0, 0.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.5, 3, 3);
        let d = cam.rotation().mul_vec(cam.local_direction(1, 1));
        assert!((d - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_fov() {
        let mut cam = Camera::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.8, 4, 4);
        cam.fov_y = 3.2;
        assert!(cam.validate().is_err());
    }
}
