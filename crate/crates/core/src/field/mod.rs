//! Neural fields mapping canonical object-space points to density and albedo.

mod analytic;
mod checkpoint;
mod network;
mod real;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use analytic::{make_analytic_field, unit_sphere, AnalyticField, AnalyticKind, AnalyticPart, AnalyticSpec};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use network::{
    eval_field, eval_field_backward, init_field, positional_encoding, FieldConfig, FieldCotangent, FieldOutput,
    FieldParams, FieldTape, Layout, ParamGradient, ParamGroup, TensorSpec, MAX_ENCODING_LEVELS,
};
pub use real::Real;

use crate::math::Vec3;
use crate::scene::SceneDescription;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("checkpoint I/O: {0}")]
    Io(#[source] std::io::Error),
    #[error("not a field checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is truncated or has trailing bytes")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: FieldConfig, found: FieldConfig },
    #[error("field '{id}': {source}")]
    InField {
        id: String,
        #[source]
        source: Box<FieldError>,
    },
    #[error("unknown field '{0}'")]
    Unknown(String),
}

/// A field bound by proxies: trainable network or parameter-free solid.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Field<T> {
    Neural(FieldParams<T>),
    Analytic(AnalyticField),
}

impl<T: Real> Field<T> {
    pub fn channels(&self) -> usize {
        match self {
            Field::Neural(p) => p.config().channels,
            Field::Analytic(a) => a.channels(),
        }
    }

    pub fn params(&self) -> Option<&FieldParams<T>> {
        match self {
            Field::Neural(p) => Some(p),
            Field::Analytic(_) => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut FieldParams<T>> {
        match self {
            Field::Neural(p) => Some(p),
            Field::Analytic(_) => None,
        }
    }

    pub fn forward_into(&self, points: &[[T; 3]], with_albedo: bool, tape: &mut FieldTape<T>) {
        match self {
            Field::Neural(p) => p.forward_into(points, with_albedo, tape),
            Field::Analytic(a) => {
                let c = a.channels();
                let mut sigma = Vec::with_capacity(points.len());
                let mut albedo = Vec::with_capacity(if with_albedo { points.len() * c } else { 0 });
                for p in points {
                    let (s, alb) = a.eval(Vec3::new(p[0].as_f64(), p[1].as_f64(), p[2].as_f64()));
                    sigma.push(T::of(s));
                    if with_albedo {
                        if alb.is_empty() {
                            albedo.extend(std::iter::repeat_n(T::zero(), c));
                        } else {
                            albedo.extend(alb.iter().map(|&v| T::of(v)));
                        }
                    }
                }
                *tape = FieldTape::from_outputs(sigma, albedo);
            }
        }
    }

    pub fn forward(&self, points: &[[T; 3]], with_albedo: bool) -> FieldTape<T> {
        let mut tape = FieldTape::default();
        self.forward_into(points, with_albedo, &mut tape);
        tape
    }

    pub fn cast<U: Real>(&self) -> Field<U> {
        match self {
            Field::Neural(p) => Field::Neural(p.cast()),
            Field::Analytic(a) => Field::Analytic(a.clone()),
        }
    }
}

/// All fields of a scene, keyed by field id. Iteration order is the key order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldRegistry<T> {
    fields: BTreeMap<String, Field<T>>,
}

impl<T: Real> FieldRegistry<T> {
    pub fn new() -> Self {
        Self { fields: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, field: Field<T>) -> Option<Field<T>> {
        self.fields.insert(id.into(), field)
    }

    pub fn get(&self, id: &str) -> Option<&Field<T>> {
        self.fields.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Field<T>> {
        self.fields.get_mut(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Field<T>)> {
        self.fields.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn cast<U: Real>(&self) -> FieldRegistry<U> {
        FieldRegistry { fields: self.fields.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// SHA-256 over every neural field's id and parameter bits, in key order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (id, f) in &self.fields {
            h.update(id.as_bytes());
            if let Field::Neural(p) = f {
                for v in &p.data {
                    h.update(v.as_f64().to_bits().to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Stable 64-bit FNV-1a, used to derive per-field seeds from ids.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl FieldRegistry<f32> {
    /// Build the registry a scene file describes: analytic entries as given,
    /// checkpoints loaded relative to `base_dir`, the rest freshly initialized
    /// from the scene seed.
    pub fn load_for_scene(scene: &SceneDescription, base_dir: &Path) -> Result<Self, FieldError> {
        let mut reg = FieldRegistry::new();
        let defaults = FieldConfig::default();
        for (id, spec) in &scene.fields {
            let wrap = |e: FieldError| FieldError::InField { id: id.clone(), source: Box::new(e) };
            let field = if let Some(a) = &spec.analytic {
                Field::Analytic(a.clone())
            } else {
                let want = FieldConfig::new(
                    spec.hidden.map_or(defaults.hidden, |v| v as usize),
                    spec.levels.map_or(defaults.levels, |v| v as usize),
                    spec.channels as usize,
                );
                match &spec.checkpoint {
                    Some(path) => {
                        let path = resolve(base_dir, path);
                        let check = (spec.hidden.is_some() && spec.levels.is_some()).then_some(want);
                        let params = load_checkpoint(&path, check).map_err(wrap)?;
                        if params.config().channels != want.channels {
                            return Err(wrap(FieldError::ShapeMismatch { expected: want, found: params.config() }));
                        }
                        Field::Neural(params)
                    }
                    None => Field::Neural(FieldParams::init(scene.seed ^ stable_hash(id), want)),
                }
            };
            reg.insert(id.clone(), field);
        }
        Ok(reg)
    }

    /// Write every neural field to `dir/<id>.stsf`; returns the written paths.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<BTreeMap<String, PathBuf>, FieldError> {
        std::fs::create_dir_all(dir).map_err(FieldError::Io)?;
        let mut out = BTreeMap::new();
        for (id, f) in &self.fields {
            if let Field::Neural(p) = f {
                let path = dir.join(format!("{id}.stsf"));
                save_checkpoint(p, &path)?;
                out.insert(id.clone(), path);
            }
        }
        Ok(out)
    }
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}
