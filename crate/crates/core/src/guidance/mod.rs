//! Image-space gradient oracles that steer training.
//!
//! A guidance handle turns a rendered image and a prompt into a per-pixel
//! gradient. The photometric oracle compares against known targets; the
//! remote oracle forwards the image to a score-distillation server.

mod config;
pub mod mock;
mod remote;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{Map, Value};

pub use config::{select_guidance, GuidanceConfig, GuidanceHandle, GuidanceMode, PromptRouting};
pub use remote::{decode_raster, encode_raster, remote_sds_gradient, RemoteGuidance, WireRequest, WireResponse};

use crate::field::{Field, FieldRegistry};
use crate::math::Aabb;
use crate::render::{render_composed, render_object, Camera, Image, RenderError, RenderOptions};
use crate::scene::SceneDescription;

#[derive(Debug, thiserror::Error)]
pub enum GuidanceError {
    #[error("guidance request timed out")]
    Timeout,
    #[error("guidance server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed guidance response: {0}")]
    Malformed(String),
    #[error("guidance gradient has shape {found:?}, expected {expected:?}")]
    ResolutionMismatch { expected: (usize, usize, usize), found: (usize, usize, usize) },
    #[error("guidance transport: {0}")]
    Transport(String),
    #[error("guidance configuration: {0}")]
    Config(String),
    #[error("no photometric target for prompt {0:?}")]
    NoTarget(String),
    #[error("rendering the guidance target: {0}")]
    Render(#[from] RenderError),
}

/// Per-pixel gradient of the guidance objective with respect to the image.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceGradient {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub scale: f32,
}

impl GuidanceGradient {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels], scale: 1.0 }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    /// `scale · data`, the cotangent handed to the renderer.
    pub fn scaled(&self) -> Vec<f32> {
        self.data.iter().map(|v| v * self.scale).collect()
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.data.iter().map(|v| (*v as f64).powi(2)).sum();
        s.sqrt() * self.scale.abs() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.scale.is_finite() && self.data.iter().all(|v| v.is_finite())
    }
}

/// Everything a guidance oracle may look at for one training step.
#[derive(Clone, Debug)]
pub struct GuidanceRequest<'a> {
    pub image: &'a Image<f32>,
    pub prompt: &'a str,
    pub step: u64,
    pub params: &'a Map<String, Value>,
    /// Viewpoint the image was rendered from; needed by reference targets.
    pub camera: Option<&'a Camera>,
    pub render: Option<RenderOptions>,
}

pub trait Guidance: Send + Sync {
    fn gradient(&self, request: &GuidanceRequest<'_>) -> Result<GuidanceGradient, GuidanceError>;
}

/// Gradient of `½‖image − target‖²`, which is `image − target`.
pub fn photometric_guidance(image: &Image<f32>, target: &Image<f32>) -> Result<GuidanceGradient, GuidanceError> {
    if !image.same_shape(target) {
        return Err(GuidanceError::ResolutionMismatch {
            expected: (image.width, image.height, image.channels),
            found: (target.width, target.height, target.channels),
        });
    }
    Ok(GuidanceGradient {
        width: image.width,
        height: image.height,
        channels: image.channels,
        data: image.data.iter().zip(&target.data).map(|(a, b)| a - b).collect(),
        scale: 1.0,
    })
}

/// Where a photometric target comes from.
#[derive(Clone, Debug)]
pub enum PhotometricTarget {
    /// A fixed image; requests must match its resolution.
    Image(Arc<Image<f32>>),
    /// Render of a reference scene from the request's viewpoint.
    Scene(Arc<(SceneDescription, FieldRegistry<f32>)>),
    /// Canonical-frame render of one reference field.
    Object { field: Arc<Field<f32>>, bounds: Aabb },
}

impl PhotometricTarget {
    pub fn resolve(&self, request: &GuidanceRequest<'_>) -> Result<Image<f32>, GuidanceError> {
        let view = || -> Result<(&Camera, RenderOptions), GuidanceError> {
            let cam = request
                .camera
                .ok_or_else(|| GuidanceError::Config("reference targets need the request camera".into()))?;
            Ok((cam, request.render.unwrap_or_default()))
        };
        Ok(match self {
            PhotometricTarget::Image(img) => (**img).clone(),
            PhotometricTarget::Scene(reference) => {
                let (cam, opts) = view()?;
                render_composed(&reference.0, &reference.1, cam, &opts)?
            }
            PhotometricTarget::Object { field, bounds } => {
                let (cam, opts) = view()?;
                render_object(field, cam, bounds, &opts)?
            }
        })
    }
}

/// Photometric oracle with per-prompt targets and an optional fallback.
#[derive(Clone, Debug, Default)]
pub struct PhotometricGuidance {
    pub targets: BTreeMap<String, PhotometricTarget>,
    pub fallback: Option<PhotometricTarget>,
}

impl PhotometricGuidance {
    /// Every prompt is compared against `target`.
    pub fn from_image(target: Image<f32>) -> Self {
        Self { targets: BTreeMap::new(), fallback: Some(PhotometricTarget::Image(Arc::new(target))) }
    }

    /// The scene prompt maps to the composed reference; each object prompt
    /// maps to the reference field of its object group.
    pub fn from_reference(scene: SceneDescription, fields: FieldRegistry<f32>) -> Self {
        let mut targets = BTreeMap::new();
        for group in scene.object_groups() {
            if let Some(f) = fields.get(&group.field_id) {
                let target = PhotometricTarget::Object { field: Arc::new(f.clone()), bounds: scene.object_bounds };
                targets.entry(group.representative(&scene).prompt.clone()).or_insert(target);
            }
        }
        targets.insert(scene.scene_prompt.clone(), PhotometricTarget::Scene(Arc::new((scene, fields))));
        Self { targets, fallback: None }
    }

    pub fn with_target(mut self, prompt: impl Into<String>, target: PhotometricTarget) -> Self {
        self.targets.insert(prompt.into(), target);
        self
    }

    pub fn target_for(&self, prompt: &str) -> Option<&PhotometricTarget> {
        self.targets.get(prompt).or(self.fallback.as_ref())
    }
}

impl Guidance for PhotometricGuidance {
    fn gradient(&self, request: &GuidanceRequest<'_>) -> Result<GuidanceGradient, GuidanceError> {
        let target = self.target_for(request.prompt).ok_or_else(|| GuidanceError::NoTarget(request.prompt.to_owned()))?;
        photometric_guidance(request.image, &target.resolve(request)?)
    }
}

/// Always returns a zero gradient; useful for shape-only training.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullGuidance;

impl Guidance for NullGuidance {
    fn gradient(&self, request: &GuidanceRequest<'_>) -> Result<GuidanceGradient, GuidanceError> {
        let img = request.image;
        Ok(GuidanceGradient::zeros(img.width, img.height, img.channels))
    }
}
