use serde::{Deserialize, Serialize};

use crate::math::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnalyticKind {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
}

/// One solid of constant density with a hard boundary.
// No deny_unknown_fields: serde does not support it alongside `flatten`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPart {
    #[serde(flatten)]
    pub kind: AnalyticKind,
    #[serde(default)]
    pub center: Vec3,
    pub sigma: f64,
    pub albedo: Vec<f64>,
}

impl AnalyticPart {
    pub fn contains(&self, p: Vec3) -> bool {
        let q = p - self.center;
        match self.kind {
            AnalyticKind::Sphere { radius } => q.dot(q) <= radius * radius,
            AnalyticKind::Box { half_extents } => {
                let a = q.abs();
                a.x <= half_extents.x && a.y <= half_extents.y && a.z <= half_extents.z
            }
        }
    }
}

/// Parameter-free field: density `sigma` inside any part, zero elsewhere.
/// Where parts overlap the first listed wins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticField {
    pub parts: Vec<AnalyticPart>,
}

/// Scene-file form of an analytic field.
pub type AnalyticSpec = AnalyticField;

impl AnalyticField {
    pub fn channels(&self) -> usize {
        self.parts.first().map_or(0, |p| p.albedo.len())
    }

    /// Concatenate parts; `self` keeps priority where they overlap.
    pub fn union(mut self, other: AnalyticField) -> AnalyticField {
        self.parts.extend(other.parts);
        self
    }

    pub fn translated(mut self, offset: Vec3) -> AnalyticField {
        for p in &mut self.parts {
            p.center = p.center + offset;
        }
        self
    }

    /// `(sigma, albedo)` at `p`; albedo is zero outside.
    pub fn eval(&self, p: Vec3) -> (f64, &[f64]) {
        match self.parts.iter().find(|part| part.contains(p)) {
            Some(part) => (part.sigma, &part.albedo),
            None => (0.0, &[]),
        }
    }
}

/// Unit sphere or box centred at the origin.
pub fn make_analytic_field(kind: AnalyticKind, sigma_inside: f64, albedo: &[f64]) -> AnalyticField {
    AnalyticField {
        parts: vec![AnalyticPart { kind, center: Vec3::ZERO, sigma: sigma_inside, albedo: albedo.to_vec() }],
    }
}

pub fn unit_sphere(sigma_inside: f64, albedo: &[f64]) -> AnalyticField {
    make_analytic_field(AnalyticKind::Sphere { radius: 1.0 }, sigma_inside, albedo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_inside_and_outside() {
        let f = unit_sphere(5.0, &[1.0, 0.0, 0.0]);
        assert_eq!(f.eval(Vec3::ZERO).0, 5.0);
        assert_eq!(f.eval(Vec3::new(2.0, 0.0, 0.0)).0, 0.0);
    }

    #[test]
    fn box_boundary() {
        let f = make_analytic_field(AnalyticKind::Box { half_extents: Vec3::splat(0.5) }, 3.0, &[0.2, 0.2, 0.2]);
        assert_eq!(f.eval(Vec3::new(0.49, 0.0, 0.0)).0, 3.0);
        assert_eq!(f.eval(Vec3::new(0.51, 0.0, 0.0)).0, 0.0);
    }

    #[test]
    fn spec_json_round_trip() {
        let f = unit_sphere(2.0, &[0.1, 0.2, 0.3]).translated(Vec3::new(1.0, 0.0, 0.0));
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"kind\":\"sphere\""));
        let back: AnalyticField = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
    }
}
