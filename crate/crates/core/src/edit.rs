//! Post-training edits: placement, geometry and color.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::field::{Field, FieldRegistry, ParamGroup};
use crate::geometry::ShapeSpec;
use crate::guidance::{GuidanceError, GuidanceHandle, PhotometricGuidance};
use crate::render::Image;
use crate::scene::{validate_scene, ObjectProxy, RigidPlacement, SceneDescription, Violation};
use crate::train::{Schedule, TrainConfig, TrainError, TrainObserver, TrainSummary, Trainer, UpdateMask};

fn default_finetune() -> TrainConfig {
    TrainConfig { total_iters: 1000, ..TrainConfig::default() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum EditRequest {
    Move {
        proxy_id: String,
        placement: RigidPlacement,
    },
    Remove {
        proxy_id: String,
    },
    /// Adds a proxy bound to the same field.
    Duplicate {
        proxy_id: String,
        new_id: String,
        placement: RigidPlacement,
    },
    /// Swap the proxy shape and fine-tune its field for `finetune.total_iters` steps.
    Geometry {
        proxy_id: String,
        shape: ShapeSpec,
        #[serde(default = "default_finetune")]
        finetune: TrainConfig,
    },
    /// Retrain the albedo head only, toward a new prompt, a target PFM or a
    /// solid color.
    Color {
        field_id: String,
        #[serde(default)]
        prompt: Option<String>,
        #[serde(default)]
        target: Option<PathBuf>,
        #[serde(default)]
        color: Option<Vec<f32>>,
        steps: u64,
        #[serde(default)]
        finetune: TrainConfig,
    },
}

impl EditRequest {
    pub fn is_placement(&self) -> bool {
        matches!(self, EditRequest::Move { .. } | EditRequest::Remove { .. } | EditRequest::Duplicate { .. })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EditError {
    #[error("unknown proxy '{0}'")]
    UnknownProxy(String),
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("proxy id '{0}' is already taken")]
    DuplicateId(String),
    #[error("edit produces an invalid scene: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("field '{0}' has no trainable parameters")]
    NotTrainable(String),
    #[error("field '{0}' is not bound by any proxy")]
    Unbound(String),
    #[error("{0}")]
    Request(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

fn checked(scene: SceneDescription) -> Result<SceneDescription, EditError> {
    let bad = validate_scene(&scene);
    if bad.is_empty() {
        Ok(scene)
    } else {
        Err(EditError::Invalid(bad))
    }
}

/// Move, remove or duplicate a proxy. Never looks at field parameters.
pub fn apply_placement_edit(scene: &SceneDescription, edit: &EditRequest) -> Result<SceneDescription, EditError> {
    let mut out = scene.clone();
    let index = |id: &str| scene.proxy_index(id).ok_or_else(|| EditError::UnknownProxy(id.to_owned()));
    match edit {
        EditRequest::Move { proxy_id, placement } => {
            out.proxies[index(proxy_id)?].placement = *placement;
        }
        EditRequest::Remove { proxy_id } => {
            out.proxies.remove(index(proxy_id)?);
        }
        EditRequest::Duplicate { proxy_id, new_id, placement } => {
            let src = &scene.proxies[index(proxy_id)?];
            if scene.proxy(new_id).is_some() {
                return Err(EditError::DuplicateId(new_id.clone()));
            }
            out.proxies.push(ObjectProxy { id: new_id.clone(), placement: *placement, ..src.clone() });
        }
        _ => return Err(EditError::Request("not a placement edit".into())),
    }
    checked(out)
}

/// Result of a fine-tuning edit.
#[derive(Debug)]
pub struct Finetuned {
    pub scene: SceneDescription,
    pub fields: FieldRegistry<f32>,
    pub summary: TrainSummary,
}

/// Give `proxy_id` a new shape prior and fine-tune its field, alternating
/// local steps and masked global steps. Every other field is left untouched.
#[allow(clippy::too_many_arguments)]
pub fn finetune_geometry<O: TrainObserver + ?Sized>(
    scene: &SceneDescription,
    fields: &FieldRegistry<f32>,
    proxy_id: &str,
    shape: &ShapeSpec,
    config: &TrainConfig,
    guidance: GuidanceHandle,
    base_dir: &Path,
    observer: &mut O,
) -> Result<Finetuned, EditError> {
    let idx = scene.proxy_index(proxy_id).ok_or_else(|| EditError::UnknownProxy(proxy_id.to_owned()))?;
    let mut edited = scene.clone();
    let proxy = &mut edited.proxies[idx];
    proxy.shape = Some(shape.clone());
    if proxy.shape_weight <= 0.0 {
        proxy.shape_weight = 1.0;
    }
    let field_id = proxy.field.clone();
    let edited = checked(edited)?;
    require_trainable(fields, &field_id)?;
    if config.total_iters == 0 {
        let summary = TrainSummary::default();
        return Ok(Finetuned { scene: edited, fields: fields.clone(), summary });
    }
    let group = group_of(&edited, &field_id)?;
    let mut trainer = Trainer::new(edited, fields.clone(), config.clone(), guidance, base_dir)?;
    // The edited proxy drives the group's shape term even if another
    // duplicate carries a shape of its own.
    let resolved = shape.resolve(base_dir).map_err(TrainError::from)?;
    for &i in &trainer.groups()[group].proxies.clone() {
        trainer.set_shape(i, (i == idx).then(|| resolved.clone()));
    }
    trainer.set_mask(UpdateMask { field: Some(field_id), group: None });
    let steps = Schedule::for_group(group, config.local_block, config.global_block, config.total_iters);
    let summary = trainer.run(steps, observer)?;
    let scene = trainer.scene().clone();
    Ok(Finetuned { scene, fields: trainer.into_fields(), summary })
}

/// Local steps on `field_id` that update only its albedo head, so density
/// is bit-identical afterwards.
pub fn finetune_color<O: TrainObserver + ?Sized>(
    scene: &SceneDescription,
    fields: &FieldRegistry<f32>,
    field_id: &str,
    steps: u64,
    config: &TrainConfig,
    guidance: GuidanceHandle,
    observer: &mut O,
) -> Result<Finetuned, EditError> {
    require_trainable(fields, field_id)?;
    let group = group_of(scene, field_id)?;
    if steps == 0 {
        return Ok(Finetuned { scene: scene.clone(), fields: fields.clone(), summary: TrainSummary::default() });
    }
    let mut cfg = config.clone();
    cfg.total_iters = steps;
    // Shape loss cannot reach the albedo head; drop the priors entirely.
    cfg.shape_loss.weight = 0.0;
    let mut bare = scene.clone();
    for p in &mut bare.proxies {
        p.shape = None;
        p.shape_weight = 0.0;
    }
    let mut trainer = Trainer::new(bare, fields.clone(), cfg, guidance, Path::new("."))?;
    trainer.set_mask(UpdateMask { field: Some(field_id.to_owned()), group: Some(ParamGroup::Albedo) });
    let summary = trainer.run(Schedule::for_group(group, 1, 0, steps), observer)?;
    Ok(Finetuned { scene: scene.clone(), fields: trainer.into_fields(), summary })
}

fn require_trainable(fields: &FieldRegistry<f32>, id: &str) -> Result<(), EditError> {
    match fields.get(id) {
        None => Err(EditError::UnknownField(id.to_owned())),
        Some(Field::Analytic(_)) => Err(EditError::NotTrainable(id.to_owned())),
        Some(Field::Neural(_)) => Ok(()),
    }
}

fn group_of(scene: &SceneDescription, field_id: &str) -> Result<usize, EditError> {
    scene
        .object_groups()
        .iter()
        .position(|g| g.field_id == field_id)
        .ok_or_else(|| EditError::Unbound(field_id.to_owned()))
}

/// Guidance for a color edit: a solid color or target image becomes a
/// photometric target; a prompt reroutes `base`'s object prompt for the field.
pub fn color_guidance(
    edit: &EditRequest,
    resolution: (usize, usize),
    base: Option<GuidanceHandle>,
    base_dir: &Path,
) -> Result<GuidanceHandle, EditError> {
    let EditRequest::Color { field_id, prompt, target, color, .. } = edit else {
        return Err(EditError::Request("not a color edit".into()));
    };
    let given = [prompt.is_some(), target.is_some(), color.is_some()].iter().filter(|b| **b).count();
    if given != 1 {
        return Err(EditError::Request("a color edit needs exactly one of prompt, target or color".into()));
    }
    if let Some(c) = color {
        if c.is_empty() || !c.iter().all(|v| v.is_finite()) {
            return Err(EditError::Request("color must be a non-empty list of finite values".into()));
        }
        let img = Image::filled(resolution.0, resolution.1, c);
        return Ok(GuidanceHandle::new(Arc::new(PhotometricGuidance::from_image(img)), "photometric"));
    }
    if let Some(path) = target {
        let img = Image::read_pfm(crate::field::resolve(base_dir, path))
            .map_err(|e| GuidanceError::Config(format!("target image: {e}")))?;
        return Ok(GuidanceHandle::new(Arc::new(PhotometricGuidance::from_image(img)), "photometric"));
    }
    let mut handle = base.ok_or_else(|| EditError::Request("a prompt color edit needs a guidance oracle".into()))?;
    handle.prompts.overrides.insert(field_id.clone(), prompt.clone().unwrap_or_default());
    Ok(handle)
}
