use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_update, AdamState};
use super::config::{sample_camera, CameraMode, TrainConfig};
use super::schedule::{EventKind, EventLosses, Schedule, StepKind, TrainEvent};
use super::{TrainError, TrainObserver};
use crate::field::{Field, FieldRegistry, ParamGroup};
use crate::geometry::{shape_loss, Shape};
use crate::guidance::{GuidanceGradient, GuidanceHandle, GuidanceRequest};
use crate::math::Aabb;
use crate::render::{
    render_backward, render_composed, render_object, render_object_backward, Camera, Gradients, Image,
    RenderOptions,
};
use crate::scene::{validate_scene, ObjectGroup, SceneDescription};

/// Which parameters an update may touch. The default touches everything.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateMask {
    /// Only this field is updated.
    pub field: Option<String>,
    /// Only this parameter group of each updated field.
    pub group: Option<ParamGroup>,
}

/// Gradients of one step before they are applied.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub event: TrainEvent,
    pub gradients: Gradients<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSummary {
    pub iters: u64,
    pub skipped: u64,
    pub cancelled: bool,
}

/// Owns the fields and optimizer state for one training run.
pub struct Trainer {
    scene: SceneDescription,
    fields: FieldRegistry<f32>,
    config: TrainConfig,
    guidance: GuidanceHandle,
    groups: Vec<ObjectGroup>,
    shapes: Vec<Option<Shape>>,
    optim: BTreeMap<String, AdamState>,
    rng: ChaCha8Rng,
    iter: u64,
    mask: UpdateMask,
}

impl Trainer {
    /// Proxy shapes are resolved against `base_dir`.
    pub fn new(
        scene: SceneDescription,
        fields: FieldRegistry<f32>,
        config: TrainConfig,
        guidance: GuidanceHandle,
        base_dir: &Path,
    ) -> Result<Self, TrainError> {
        let bad = config.violations();
        if !bad.is_empty() {
            return Err(TrainError::InvalidConfig(bad));
        }
        let bad = validate_scene(&scene);
        if !bad.is_empty() {
            return Err(TrainError::InvalidScene(bad));
        }
        for p in &scene.proxies {
            let f = fields.get(&p.field).ok_or_else(|| TrainError::UnknownField(p.field.clone()))?;
            let want = scene.fields.get(&p.field).map_or(f.channels(), |s| s.channels as usize);
            if f.channels() != want {
                return Err(TrainError::UnknownField(format!("{} (channel count differs from scene)", p.field)));
            }
        }
        let shapes = scene
            .proxies
            .iter()
            .map(|p| p.shape.as_ref().map(|s| s.resolve(base_dir)).transpose())
            .collect::<Result<Vec<_>, _>>()?;
        let optim = fields
            .iter()
            .filter_map(|(id, f)| f.params().map(|p| (id.to_owned(), AdamState::new(p.data.len()))))
            .collect();
        let groups = scene.object_groups();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { scene, fields, config, guidance, groups, shapes, optim, rng, iter: 0, mask: UpdateMask::default() })
    }

    pub fn scene(&self) -> &SceneDescription {
        &self.scene
    }

    pub fn fields(&self) -> &FieldRegistry<f32> {
        &self.fields
    }

    pub fn into_fields(self) -> FieldRegistry<f32> {
        self.fields
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn groups(&self) -> &[ObjectGroup] {
        &self.groups
    }

    /// Steps taken so far, skipped ones included.
    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub fn optimizer_state(&self, field_id: &str) -> Option<&AdamState> {
        self.optim.get(field_id)
    }

    pub fn mask(&self) -> &UpdateMask {
        &self.mask
    }

    pub fn set_mask(&mut self, mask: UpdateMask) {
        self.mask = mask;
    }

    /// Replace a proxy's resolved shape prior, e.g. after a geometry edit.
    pub fn set_shape(&mut self, proxy_index: usize, shape: Option<Shape>) {
        self.shapes[proxy_index] = shape;
    }

    fn render_options(&mut self) -> RenderOptions {
        let seed: u64 = self.rng.random();
        if self.config.stratified {
            RenderOptions::stratified(self.config.n_samples_per_ray, seed)
        } else {
            RenderOptions::midpoint(self.config.n_samples_per_ray)
        }
    }

    fn request_guidance(
        &self,
        image: &Image<f32>,
        prompt: &str,
        camera: &Camera,
        opts: &RenderOptions,
    ) -> Result<GuidanceGradient, String> {
        let req = GuidanceRequest {
            image,
            prompt,
            step: self.iter,
            params: &self.guidance.params,
            camera: Some(camera),
            render: Some(*opts),
        };
        let g = self.guidance.guidance.gradient(&req).map_err(|e| e.to_string())?;
        let want = (image.width, image.height, image.channels);
        if g.shape() != want || g.data.len() != image.data.len() {
            return Err(format!("guidance gradient has shape {:?}, expected {want:?}", g.shape()));
        }
        if !g.is_finite() {
            return Err("guidance gradient is not finite".to_owned());
        }
        Ok(g)
    }

    fn event(&self, kind: EventKind, losses: EventLosses, start: Instant, error: Option<String>) -> TrainEvent {
        if let Some(e) = &error {
            log::warn!("step {} skipped: {e}", self.iter);
        }
        TrainEvent {
            iter: self.iter,
            kind,
            losses,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            skipped: error.is_some(),
            error,
        }
    }

    /// Shape loss for proxy `idx` on `field_id`, accumulated into `grads`.
    fn add_shape_loss(&mut self, idx: usize, grads: &mut Gradients<f32>) -> Result<f64, TrainError> {
        let proxy = &self.scene.proxies[idx];
        let weight = proxy.shape_weight * self.config.shape_loss.weight;
        let (Some(shape), Some(Field::Neural(params))) = (&self.shapes[idx], self.fields.get(&proxy.field)) else {
            return Ok(0.0);
        };
        if weight == 0.0 {
            return Ok(0.0);
        }
        let (loss, g) = shape_loss(params, shape, &self.config.shape_loss, &self.scene.object_bounds, &mut self.rng)?;
        grads
            .entry(proxy.field.clone())
            .or_insert_with(|| params.zero_gradient())
            .add_scaled(&g, weight as f32);
        Ok(loss * weight)
    }

    /// Gradients of a local step on `group` without applying them.
    pub fn local_gradient(&mut self, group: usize) -> Result<StepOutcome, TrainError> {
        let start = Instant::now();
        self.iter += 1;
        let g = self.groups.get(group).cloned().ok_or(TrainError::UnknownGroup(group))?;
        let kind = EventKind::Local { object: g.field_id.clone() };
        let trainable = self.fields.get(&g.field_id).ok_or_else(|| TrainError::UnknownField(g.field_id.clone()))?.params().is_some();
        if !trainable {
            let e = format!("field '{}' has no trainable parameters", g.field_id);
            return Ok(StepOutcome { event: self.event(kind, EventLosses::default(), start, Some(e)), gradients: Gradients::new() });
        }
        let cam = sample_camera(&self.config.camera, CameraMode::Object, self.config.render_resolution, &mut self.rng);
        let opts = self.render_options();
        let bounds = self.scene.object_bounds;
        let field = self.fields.get(&g.field_id).expect("checked above");
        let image = render_object(field, &cam, &bounds, &opts)?;
        let prompt = self.guidance.prompts.object_prompt(&self.scene, &g);
        let guidance = match self.request_guidance(&image, &prompt, &cam, &opts) {
            Ok(v) => v,
            Err(e) => {
                return Ok(StepOutcome {
                    event: self.event(kind, EventLosses::default(), start, Some(e)),
                    gradients: Gradients::new(),
                })
            }
        };
        let mut gradients = Gradients::new();
        if let Some(grad) = render_object_backward(field, &cam, &bounds, &opts, &guidance.scaled())? {
            gradients.insert(g.field_id.clone(), grad);
        }
        let rep = self.scene.proxy_index(&g.representative(&self.scene).id).unwrap_or(g.proxies[0]);
        let shape = self.add_shape_loss(rep, &mut gradients)?;
        let losses = EventLosses { guidance_norm: guidance.l2_norm(), shape };
        Ok(StepOutcome { event: self.event(kind, losses, start, None), gradients })
    }

    /// Gradients of a global step without applying them.
    pub fn global_gradient(&mut self) -> Result<StepOutcome, TrainError> {
        let start = Instant::now();
        self.iter += 1;
        let cam = sample_camera(
            &self.config.camera,
            CameraMode::Scene(self.scene.bounds),
            self.config.render_resolution,
            &mut self.rng,
        );
        let opts = self.render_options();
        let image = render_composed(&self.scene, &self.fields, &cam, &opts)?;
        let prompt = self.guidance.prompts.scene_prompt(&self.scene);
        let guidance = match self.request_guidance(&image, &prompt, &cam, &opts) {
            Ok(v) => v,
            Err(e) => {
                return Ok(StepOutcome {
                    event: self.event(EventKind::Global, EventLosses::default(), start, Some(e)),
                    gradients: Gradients::new(),
                })
            }
        };
        let mut gradients = render_backward(&self.scene, &self.fields, &cam, &opts, &guidance.scaled())?;
        let mut shape = 0.0;
        if self.config.global_shape_loss {
            for i in 0..self.scene.proxies.len() {
                shape += self.add_shape_loss(i, &mut gradients)?;
            }
        }
        let losses = EventLosses { guidance_norm: guidance.l2_norm(), shape };
        Ok(StepOutcome { event: self.event(EventKind::Global, losses, start, None), gradients })
    }

    /// One Adam update per field in `gradients`, restricted by the mask.
    pub fn apply_gradients(&mut self, gradients: &Gradients<f32>) {
        let (lr, betas) = (self.config.lr, self.config.adam_betas);
        for (id, grad) in gradients {
            if self.mask.field.as_ref().is_some_and(|f| f != id) {
                continue;
            }
            let (Some(params), Some(state)) = (self.fields.get_mut(id).and_then(Field::params_mut), self.optim.get_mut(id))
            else {
                continue;
            };
            let active = self.mask.group.map(|g| params.group_range(g));
            adam_update(&mut params.data, &grad.data, state, lr, betas, active);
        }
    }

    pub fn local_step(&mut self, group: usize) -> Result<TrainEvent, TrainError> {
        let out = self.local_gradient(group)?;
        if !out.event.skipped {
            self.apply_gradients(&out.gradients);
        }
        Ok(out.event)
    }

    pub fn global_step(&mut self) -> Result<TrainEvent, TrainError> {
        let out = self.global_gradient()?;
        if !out.event.skipped {
            self.apply_gradients(&out.gradients);
        }
        Ok(out.event)
    }

    pub fn step(&mut self, kind: StepKind) -> Result<TrainEvent, TrainError> {
        match kind {
            StepKind::Local(g) => self.local_step(g),
            StepKind::Global => self.global_step(),
        }
    }

    /// The schedule `train` follows.
    pub fn schedule(&self) -> Schedule {
        let c = &self.config;
        Schedule::new(self.groups.len(), c.local_block, c.global_block, c.total_iters)
    }

    /// Runs `steps`, reporting each event; stops early when cancelled.
    pub fn run<I, O>(&mut self, steps: I, observer: &mut O) -> Result<TrainSummary, TrainError>
    where
        I: IntoIterator<Item = StepKind>,
        O: TrainObserver + ?Sized,
    {
        let mut summary = TrainSummary::default();
        for kind in steps {
            if observer.cancelled() {
                summary.cancelled = true;
                break;
            }
            let event = self.step(kind)?;
            summary.iters += 1;
            summary.skipped += event.skipped as u64;
            observer.on_event(&event, self)?;
        }
        Ok(summary)
    }

    /// The full interleaved schedule from the config.
    pub fn train<O: TrainObserver + ?Sized>(&mut self, observer: &mut O) -> Result<TrainSummary, TrainError> {
        let schedule = self.schedule();
        self.run(schedule, observer)
    }

    /// Fixed viewpoint for progress renders.
    pub fn preview_camera(&self, resolution: (usize, usize)) -> Camera {
        preview_camera(&self.scene.bounds, self.config.camera.radius_range, self.config.camera.fov, resolution)
    }

    /// Midpoint-sampled composed render from [`Trainer::preview_camera`].
    pub fn preview(&self, resolution: (usize, usize)) -> Result<Image<f32>, TrainError> {
        let cam = self.preview_camera(resolution);
        let opts = RenderOptions::midpoint(self.config.n_samples_per_ray);
        Ok(render_composed(&self.scene, &self.fields, &cam, &opts)?)
    }
}

/// Camera at mid radius, slightly above the scene, facing its centre.
pub fn preview_camera(bounds: &Aabb, radius_range: (f64, f64), fov: f64, resolution: (usize, usize)) -> Camera {
    use crate::math::Vec3;
    let center = bounds.center();
    let scale = (bounds.extent() * 0.5).norm() / 3f64.sqrt();
    let r = 0.5 * (radius_range.0 + radius_range.1) * scale;
    let (az, el) = (0.6f64, 0.35f64);
    let dir = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
    Camera::look_at(center + dir * r, center, Vec3::new(0.0, 1.0, 0.0), fov, resolution.0, resolution.1)
}
