//! Occupancy cross-entropy against a proxy shape, relaxed near the surface.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Shape};
use crate::field::{Field, FieldParams, ParamGradient, Real};
use crate::math::{Aabb, Vec3};

/// Clamp applied to the field occupancy before taking logs.
pub const BCE_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeLossConfig {
    /// Leniency bandwidth σ_S, canonical units².
    pub sigma_s: f64,
    /// Points sampled per evaluation.
    pub n_points: usize,
    /// Step length that turns density into pointwise occupancy.
    pub delta_ref: f64,
    /// Global multiplier on top of each proxy's own shape weight.
    pub weight: f64,
}

impl Default for ShapeLossConfig {
    fn default() -> Self {
        Self { sigma_s: 0.01, n_points: 4096, delta_ref: 0.05, weight: 1.0 }
    }
}

impl ShapeLossConfig {
    pub fn is_valid(&self) -> bool {
        self.sigma_s > 0.0 && self.delta_ref > 0.0 && self.weight >= 0.0 && self.n_points > 0
    }
}

/// `1 − exp(−d² / (2σ_S))`.
pub fn leniency_weight(d: f64, sigma_s: f64) -> f64 {
    -(-(d * d) / (2.0 * sigma_s)).exp_m1()
}

/// Pointwise field occupancy `1 − exp(−σ(p)·δ_ref)`.
pub fn alpha_nerf<T: Real>(field: &Field<T>, p: Vec3, delta_ref: f64) -> f64 {
    let tape = field.forward(&[[T::of(p.x), T::of(p.y), T::of(p.z)]], false);
    -(-tape.sigma[0].as_f64() * delta_ref).exp_m1()
}

/// Contribution of a single point: `BCE(α_NeRF, α_GT) · w(d)`.
pub fn shape_loss_term(alpha: f64, occupied: bool, d: f64, sigma_s: f64) -> f64 {
    let a = alpha.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    let bce = if occupied { -a.ln() } else { -(1.0 - a).ln() };
    bce * leniency_weight(d, sigma_s)
}

/// Mean shape loss over `points` and its gradient with respect to `params`.
pub fn shape_loss_at_points<T: Real>(
    params: &FieldParams<T>,
    shape: &Shape,
    config: &ShapeLossConfig,
    points: &[Vec3],
) -> Result<(f64, ParamGradient<T>), GeometryError> {
    let mut grad = params.zero_gradient();
    if points.is_empty() {
        return Ok((0.0, grad));
    }
    let mut dist = Vec::with_capacity(points.len());
    for p in points {
        dist.push(shape.signed_distance(*p)?);
    }
    let pts: Vec<[T; 3]> = points.iter().map(|p| [T::of(p.x), T::of(p.y), T::of(p.z)]).collect();
    let tape = params.forward(&pts, false);

    let inv_n = 1.0 / points.len() as f64;
    let delta = config.delta_ref;
    let mut loss = 0.0;
    let mut d_sigma = Vec::with_capacity(points.len());
    for (&d, &sigma) in dist.iter().zip(&tape.sigma) {
        let occupied = d < 0.0 || d.abs() < super::BOUNDARY_EPSILON;
        let w = leniency_weight(d, config.sigma_s);
        let alpha = -(-sigma.as_f64() * delta).exp_m1();
        loss += shape_loss_term(alpha, occupied, d, config.sigma_s) * inv_n;
        let clamped = !(BCE_EPSILON..=1.0 - BCE_EPSILON).contains(&alpha);
        let d_alpha = if clamped || w == 0.0 {
            0.0
        } else if occupied {
            -w / alpha
        } else {
            w / (1.0 - alpha)
        };
        // dα/dσ = δ·(1 − α)
        d_sigma.push(T::of(d_alpha * inv_n * delta * (1.0 - alpha)));
    }
    params.backward(&tape, &d_sigma, None, &mut grad);
    Ok((loss, grad))
}

/// Shape loss over `config.n_points` points drawn uniformly in `bounds`.
pub fn shape_loss<T: Real, R: Rng + ?Sized>(
    params: &FieldParams<T>,
    shape: &Shape,
    config: &ShapeLossConfig,
    bounds: &Aabb,
    rng: &mut R,
) -> Result<(f64, ParamGradient<T>), GeometryError> {
    let points: Vec<Vec3> = (0..config.n_points)
        .map(|_| {
            Vec3::new(
                rng.random_range(bounds.min.x..bounds.max.x),
                rng.random_range(bounds.min.y..bounds.max.y),
                rng.random_range(bounds.min.z..bounds.max.z),
            )
        })
        .collect();
    shape_loss_at_points(params, shape, config, &points)
}

/// Intersection-over-union between `{α_NeRF ≥ threshold}` and the shape's
/// occupancy on the voxel centres of a `res³` grid over `bounds`.
pub fn occupancy_iou<T: Real>(
    field: &Field<T>,
    shape: &Shape,
    bounds: &Aabb,
    res: usize,
    delta_ref: f64,
    threshold: f64,
) -> Result<f64, GeometryError> {
    let ext = bounds.extent();
    let mut points = Vec::with_capacity(res * res * res);
    for i in 0..res {
        for j in 0..res {
            for k in 0..res {
                let f = |n: usize| (n as f64 + 0.5) / res as f64;
                points.push(bounds.min + Vec3::new(f(i) * ext.x, f(j) * ext.y, f(k) * ext.z));
            }
        }
    }
    let pts: Vec<[T; 3]> = points.iter().map(|p| [T::of(p.x), T::of(p.y), T::of(p.z)]).collect();
    let sigma = field.forward(&pts, false).sigma;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, s) in points.iter().zip(sigma) {
        let pred = -(-s.as_f64() * delta_ref).exp_m1() >= threshold;
        let gt = shape.occupancy(*p)?;
        inter += (pred && gt) as usize;
        union += (pred || gt) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_field, unit_sphere};
    use std::f64::consts::LN_2;

    #[test]
    fn leniency_weight_shape() {
        assert_eq!(leniency_weight(0.0, 0.01), 0.0);
        let mut prev = 0.0;
        for i in 1..50 {
            let w = leniency_weight(i as f64 * 0.01, 0.01);
            assert!(w > prev && w < 1.0);
            prev = w;
        }
    }

    #[test]
    fn alpha_nerf_closed_forms() {
        let zero: Field<f64> = Field::Analytic(unit_sphere(0.0, &[0.0; 3]));
        assert_eq!(alpha_nerf(&zero, Vec3::ZERO, 0.05), 0.0);
        let f: Field<f64> = Field::Analytic(unit_sphere(LN_2 / 0.05, &[0.0; 3]));
        assert!((alpha_nerf(&f, Vec3::ZERO, 0.05) - 0.5).abs() < 1e-15);
        assert!(alpha_nerf(&f, Vec3::ZERO, 1e-12) < 1e-9);
    }

    #[test]
    fn per_point_terms() {
        assert_eq!(shape_loss_term(0.3, true, 0.0, 0.01), 0.0);
        assert!(shape_loss_term(1.0, true, 0.7, 0.01) < 1e-5);
        // α=0.5, occupied, d² = 2σ_S  →  ln 2 · (1 − e⁻¹)
        let sigma_s: f64 = 0.01;
        let d = (2.0 * sigma_s).sqrt();
        let v = shape_loss_term(0.5, true, d, sigma_s);
        assert!((v - LN_2 * (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((v - 0.4382).abs() < 1e-4);
    }

    #[test]
    fn loss_is_nonnegative() {
        let f: FieldParams<f64> = init_field(1, 8, 2, 3);
        let pts: Vec<Vec3> = (0..64).map(|i| Vec3::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), 0.1)).collect();
        let (loss, _) = shape_loss_at_points(&f, &Shape::unit_sphere(), &ShapeLossConfig::default(), &pts).unwrap();
        assert!(loss >= 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut f: FieldParams<f64> = init_field(21, 6, 2, 3);
        // Push density up so α sits away from the clamp.
        let d = f.group_range(crate::field::ParamGroup::Density);
        f.data[d.end - 1] = 2.5;
        let cfg = ShapeLossConfig { sigma_s: 0.05, ..Default::default() };
        let pts: Vec<Vec3> = (0..40)
            .map(|i| Vec3::new((i as f64 * 0.37).sin(), (i as f64 * 0.91).cos(), (i as f64 * 0.13).sin()))
            .collect();
        let shape = Shape::unit_sphere();
        let (_, g) = shape_loss_at_points(&f, &shape, &cfg, &pts).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for idx in (0..f.data.len()).step_by(7) {
            let mut fp = f.clone();
            fp.data[idx] += h;
            let mut fm = f.clone();
            fm.data[idx] -= h;
            let lp = shape_loss_at_points(&fp, &shape, &cfg, &pts).unwrap().0;
            let lm = shape_loss_at_points(&fm, &shape, &cfg, &pts).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let scale = g.data[idx].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((fd - g.data[idx]).abs() / scale);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}
