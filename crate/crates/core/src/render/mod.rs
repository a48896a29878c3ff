//! Volume rendering of single fields and of proxy-composed scenes.

mod camera;
mod composite;
mod engine;
mod image;

use serde::{Deserialize, Serialize};

pub use camera::{generate_rays, Camera, CameraSpec, Ray};
pub use composite::{alpha_from_sigma, composite, sample_ray, RaySampleBatch};
pub use engine::{
    render_backward, render_composed, render_object, render_object_backward, render_single, render_with_gradient,
    Gradients,
};
pub use image::{read_pfm, srgb_byte, write_pfm, Image, ImageError};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("field '{field}' has {found} channels, expected {expected}")]
    ChannelMismatch { field: String, expected: usize, found: usize },
    #[error("cotangent has {found} values, expected {expected}")]
    ResolutionMismatch { expected: usize, found: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid render options: {0}")]
    InvalidOptions(String),
}

/// Where samples fall inside each ray's interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Sampling {
    /// Centre of each of the `n` equal strata.
    Midpoint,
    /// One uniform draw per stratum, from a per-pixel stream derived from `seed`.
    Stratified { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub n_samples: usize,
    pub sampling: Sampling,
}

impl RenderOptions {
    pub fn midpoint(n_samples: usize) -> Self {
        Self { n_samples, sampling: Sampling::Midpoint }
    }

    pub fn stratified(n_samples: usize, seed: u64) -> Self {
        Self { n_samples, sampling: Sampling::Stratified { seed } }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.n_samples == 0 {
            return Err(RenderError::InvalidOptions("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self::midpoint(64)
    }
}

#[cfg(test)]
mod tests;
