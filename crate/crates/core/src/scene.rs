//! Object proxies, placements and the scene description file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::field::AnalyticSpec;
use crate::geometry::ShapeSpec;
use crate::math::{Aabb, Mat3, Quat, Vec3};

/// Quaternions further than this from unit norm are rejected instead of normalized.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scene is invalid: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One broken invariant found by [`validate_scene`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending proxy, or `None` for scene-level rules.
    pub proxy_id: Option<String>,
    pub rule: String,
}

impl Violation {
    fn scene(rule: impl Into<String>) -> Self {
        Self { proxy_id: None, rule: rule.into() }
    }

    fn proxy(id: &str, rule: impl Into<String>) -> Self {
        Self { proxy_id: Some(id.to_owned()), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.proxy_id {
            Some(id) => write!(f, "proxy '{id}': {}", self.rule),
            None => write!(f, "scene: {}", self.rule),
        }
    }
}

/// Location, rotation and per-axis scale of a proxy in scene space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidPlacement {
    pub location: Vec3,
    #[serde(rename = "rotation_quat")]
    pub rotation: Quat,
    pub scale: Vec3,
}

impl Default for RigidPlacement {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPlacement {
    pub const fn identity() -> Self {
        Self { location: Vec3::ZERO, rotation: Quat::IDENTITY, scale: Vec3::ONE }
    }

    pub fn new(location: Vec3, rotation: Quat, scale: Vec3) -> Self {
        Self { location, rotation, scale }
    }

    pub fn translation(location: Vec3) -> Self {
        Self { location, ..Self::identity() }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_mat3()
    }

    /// `diag(1/scale) · Rᵀ · (p − location)`.
    pub fn scene_to_object(&self, p: Vec3) -> Vec3 {
        self.rotation_matrix()
            .transpose_mul_vec(p - self.location)
            .div_elem(self.scale)
    }

    /// `R · diag(scale) · p + location`.
    pub fn object_to_scene(&self, p: Vec3) -> Vec3 {
        self.rotation_matrix().mul_vec(p.mul_elem(self.scale)) + self.location
    }

    /// Whether all three scale components are equal, in which case rotation
    /// preserves the length-scale factor exactly.
    pub fn is_uniform_scale(&self) -> bool {
        self.scale.x == self.scale.y && self.scale.y == self.scale.z
    }

    fn violations(&self, id: &str, out: &mut Vec<Violation>) {
        if !self.location.is_finite() {
            out.push(Violation::proxy(id, "non-finite location"));
        }
        if !self.rotation.is_finite() || (self.rotation.norm() - 1.0).abs() > QUAT_NORM_TOLERANCE {
            out.push(Violation::proxy(id, "rotation quaternion is not unit norm"));
        }
        if !self.scale.is_finite() || self.scale.min_elem() <= 0.0 {
            out.push(Violation::proxy(id, "nonpositive scale"));
        }
    }
}

pub fn scene_to_object(placement: &RigidPlacement, p: Vec3) -> Vec3 {
    placement.scene_to_object(p)
}

pub fn object_to_scene(placement: &RigidPlacement, p: Vec3) -> Vec3 {
    placement.object_to_scene(p)
}

/// Registry entry for one neural field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    /// Checkpoint path, relative to the scene file. `None` means freshly initialized.
    pub checkpoint: Option<PathBuf>,
    pub channels: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
    /// Parameter-free reference field, used for targets and tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSpec>,
}

impl FieldSpec {
    pub fn fresh(channels: u32) -> Self {
        Self { checkpoint: None, channels, hidden: None, levels: None, analytic: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ProxyRecord", into = "ProxyRecord")]
pub struct ObjectProxy {
    pub id: String,
    pub field: String,
    pub placement: RigidPlacement,
    pub prompt: String,
    pub shape: Option<ShapeSpec>,
    pub shape_weight: f64,
}

/// On-disk layout of a proxy: the placement is spelled out inline.
#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProxyRecord {
    id: String,
    field: String,
    location: Vec3,
    rotation_quat: Quat,
    scale: Vec3,
    prompt: String,
    shape: Option<ShapeSpec>,
    shape_weight: f64,
}

impl From<ProxyRecord> for ObjectProxy {
    fn from(r: ProxyRecord) -> Self {
        Self {
            id: r.id,
            field: r.field,
            placement: RigidPlacement::new(r.location, r.rotation_quat, r.scale),
            prompt: r.prompt,
            shape: r.shape,
            shape_weight: r.shape_weight,
        }
    }
}

impl From<ObjectProxy> for ProxyRecord {
    fn from(p: ObjectProxy) -> Self {
        Self {
            id: p.id,
            field: p.field,
            location: p.placement.location,
            rotation_quat: p.placement.rotation,
            scale: p.placement.scale,
            prompt: p.prompt,
            shape: p.shape,
            shape_weight: p.shape_weight,
        }
    }
}

impl ObjectProxy {
    pub fn new(id: impl Into<String>, field: impl Into<String>, placement: RigidPlacement) -> Self {
        Self {
            id: id.into(),
            field: field.into(),
            placement,
            prompt: String::new(),
            shape: None,
            shape_weight: 0.0,
        }
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.prompt = prompt.into();
        self
    }

    pub fn with_shape(mut self, shape: ShapeSpec, weight: f64) -> Self {
        self.shape = Some(shape);
        self.shape_weight = weight;
        self
    }
}

fn default_object_bounds() -> Aabb {
    Aabb::unit()
}

fn is_unit_box(b: &Aabb) -> bool {
    *b == Aabb::unit()
}

/// A full scene: fields, proxies and bounds. Immutable once validated; edits
/// produce a new value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    pub scene_prompt: String,
    pub bounds: Aabb,
    #[serde(default = "default_object_bounds", skip_serializing_if = "is_unit_box")]
    pub object_bounds: Aabb,
    pub seed: u64,
    pub fields: BTreeMap<String, FieldSpec>,
    pub proxies: Vec<ObjectProxy>,
}

impl SceneDescription {
    pub fn new(scene_prompt: impl Into<String>, bounds: Aabb) -> Self {
        Self {
            scene_prompt: scene_prompt.into(),
            bounds,
            object_bounds: Aabb::unit(),
            seed: 0,
            fields: BTreeMap::new(),
            proxies: Vec::new(),
        }
    }

    pub fn proxy(&self, id: &str) -> Option<&ObjectProxy> {
        self.proxies.iter().find(|p| p.id == id)
    }

    pub fn proxy_index(&self, id: &str) -> Option<usize> {
        self.proxies.iter().position(|p| p.id == id)
    }

    /// Groups of proxies sharing a field, in order of first appearance.
    pub fn object_groups(&self) -> Vec<ObjectGroup> {
        let mut groups: Vec<ObjectGroup> = Vec::new();
        for (i, p) in self.proxies.iter().enumerate() {
            match groups.iter_mut().find(|g| g.field_id == p.field) {
                Some(g) => g.proxies.push(i),
                None => groups.push(ObjectGroup { field_id: p.field.clone(), proxies: vec![i] }),
            }
        }
        groups
    }

    /// Canonical form: quaternions normalized.
    pub fn canonicalize(&mut self) {
        for p in &mut self.proxies {
            p.placement.rotation = p.placement.rotation.normalized();
        }
    }
}

/// Proxies bound to one field; the unit of a local training step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectGroup {
    pub field_id: String,
    /// Indices into [`SceneDescription::proxies`], in scene order.
    pub proxies: Vec<usize>,
}

impl ObjectGroup {
    /// The proxy whose prompt and shape drive local steps.
    pub fn representative<'s>(&self, scene: &'s SceneDescription) -> &'s ObjectProxy {
        let first = &scene.proxies[self.proxies[0]];
        self.proxies
            .iter()
            .map(|&i| &scene.proxies[i])
            .find(|p| p.shape.is_some())
            .unwrap_or(first)
    }
}

fn check_box(b: &Aabb, name: &str, out: &mut Vec<Violation>) {
    if !b.min.is_finite() || !b.max.is_finite() {
        out.push(Violation::scene(format!("{name} are not finite")));
    } else if b.extent().min_elem() <= 0.0 {
        out.push(Violation::scene(format!("{name} have nonpositive extent")));
    }
}

/// Every broken invariant of `scene`; empty when the scene is valid.
pub fn validate_scene(scene: &SceneDescription) -> Vec<Violation> {
    let mut out = Vec::new();
    check_box(&scene.bounds, "bounds", &mut out);
    check_box(&scene.object_bounds, "object bounds", &mut out);

    for (id, f) in &scene.fields {
        if f.channels == 0 {
            out.push(Violation::scene(format!("field '{id}' has zero channels")));
        }
        if let Some(a) = &f.analytic {
            for part in &a.parts {
                if part.albedo.len() != f.channels as usize {
                    out.push(Violation::scene(format!(
                        "field '{id}' analytic albedo has {} channels, expected {}",
                        part.albedo.len(),
                        f.channels
                    )));
                    break;
                }
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut channels = BTreeSet::new();
    for p in &scene.proxies {
        if !seen.insert(p.id.as_str()) {
            out.push(Violation::proxy(&p.id, "duplicate proxy id"));
        }
        match scene.fields.get(&p.field) {
            Some(f) => {
                channels.insert(f.channels);
            }
            None => out.push(Violation::proxy(&p.id, format!("unknown field '{}'", p.field))),
        }
        p.placement.violations(&p.id, &mut out);
        if !(p.shape_weight >= 0.0 && p.shape_weight.is_finite()) {
            out.push(Violation::proxy(&p.id, "negative or non-finite shape weight"));
        }
        if let Some(shape) = &p.shape {
            if let Err(rule) = shape.check() {
                out.push(Violation::proxy(&p.id, rule));
            }
        }
    }
    if channels.len() > 1 {
        out.push(Violation::scene("proxies bind fields with differing channel counts"));
    }
    out
}

/// Parse a scene from JSON text. Quaternions are normalized after validation.
pub fn parse_scene(text: &str, origin: &Path) -> Result<SceneDescription, SceneError> {
    let mut scene: SceneDescription = serde_json::from_str(text).map_err(|e| SceneError::Parse {
        path: origin.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let violations = validate_scene(&scene);
    if !violations.is_empty() {
        return Err(SceneError::Invalid(violations));
    }
    scene.canonicalize();
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneDescription, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io { path: path.to_owned(), source })?;
    parse_scene(&text, path)
}

pub fn save_scene(scene: &SceneDescription, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(scene).expect("scene serializes");
    std::fs::write(path, text + "\n").map_err(|source| SceneError::Io { path: path.to_owned(), source })
}

/// A small two-object scene used by `scenekit init`.
pub fn template_scene() -> SceneDescription {
    let mut scene = SceneDescription::new(
        "a cozy living room with a table and a lamp",
        Aabb::new(Vec3::new(-3.0, -1.5, -3.0), Vec3::new(3.0, 1.5, 3.0)),
    );
    scene.fields.insert("table".into(), FieldSpec::fresh(3));
    scene.fields.insert("lamp".into(), FieldSpec::fresh(3));
    scene.proxies.push(
        ObjectProxy::new(
            "table",
            "table",
            RigidPlacement::new(Vec3::new(-0.8, -0.5, 0.0), Quat::IDENTITY, Vec3::new(1.0, 0.5, 0.7)),
        )
        .with_prompt("a wooden dining table")
        .with_shape(ShapeSpec::Box { half_extents: Vec3::new(0.9, 0.6, 0.9) }, 1.0),
    );
    scene.proxies.push(
        ObjectProxy::new(
            "lamp",
            "lamp",
            RigidPlacement::new(Vec3::new(1.2, 0.0, 0.3), Quat::IDENTITY, Vec3::splat(0.6)),
        )
        .with_prompt("a brass floor lamp")
        .with_shape(ShapeSpec::Cylinder { radius: 0.4, half_height: 0.9 }, 1.0),
    );
    scene
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn identity_placement_is_identity() {
        let p = Vec3::new(0.3, -0.1, 0.5);
        assert_eq!(scene_to_object(&RigidPlacement::identity(), p), p);
    }

    #[test]
    fn pure_translation() {
        let pl = RigidPlacement::translation(Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(pl.scene_to_object(Vec3::new(1.0, 0.0, 0.0)), Vec3::ZERO);
        assert_eq!(pl.object_to_scene(Vec3::ZERO), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let pl = RigidPlacement::new(Vec3::ZERO, Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), FRAC_PI_2), Vec3::ONE);
        let q = pl.scene_to_object(Vec3::new(1.0, 0.0, 0.0));
        assert!(close(q, Vec3::new(0.0, -1.0, 0.0), 1e-12), "{q:?}");
    }

    #[test]
    fn validator_flags_duplicates_and_scale() {
        let mut s = template_scene();
        assert!(validate_scene(&s).is_empty());
        s.proxies[1].id = "table".into();
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].proxy_id.as_deref(), Some("table"));

        let mut s = template_scene();
        s.proxies[0].placement.scale.y = 0.0;
        let v = validate_scene(&s);
        assert_eq!(v, vec![Violation::proxy("table", "nonpositive scale")]);
        assert_eq!(validate_scene(&s), v);
    }

    #[test]
    fn validator_flags_unknown_field() {
        let mut s = template_scene();
        s.proxies[0].field = "ghost".into();
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("ghost"));
    }

    #[test]
    fn empty_scene_is_valid() {
        let mut s = template_scene();
        s.proxies.clear();
        assert!(validate_scene(&s).is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = serde_json::to_string_pretty(&template_scene()).unwrap();
        let text = text.replacen("\"seed\"", "\"colour\": 1,\n  \"seed\"", 1);
        match parse_scene(&text, Path::new("x.json")) {
            Err(SceneError::Parse { line, message, .. }) => {
                assert!(line > 1);
                assert!(message.contains("colour"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_quaternion_is_rejected() {
        let mut s = template_scene();
        s.proxies[0].placement.rotation = Quat::new(0.5, 0.0, 0.0, 0.0);
        let text = serde_json::to_string(&s).unwrap();
        assert!(matches!(parse_scene(&text, Path::new("x")), Err(SceneError::Invalid(_))));
    }

    #[test]
    fn nearly_unit_quaternion_is_normalized() {
        let mut s = template_scene();
        s.proxies[0].placement.rotation = Quat::new(1.00005, 0.0, 0.0, 0.0);
        let text = serde_json::to_string(&s).unwrap();
        let loaded = parse_scene(&text, Path::new("x")).unwrap();
        assert_eq!(loaded.proxies[0].placement.rotation, Quat::IDENTITY);
    }

    #[test]
    fn object_groups_follow_first_appearance() {
        let mut s = template_scene();
        let mut dup = s.proxies[0].clone();
        dup.id = "table2".into();
        s.proxies.push(dup);
        let g = s.object_groups();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].proxies, vec![0, 2]);
        assert_eq!(g[1].proxies, vec![1]);
    }
}
