use std::path::Path;
use std::sync::Arc;

use super::*;
use crate::field::{init_field, make_analytic_field, AnalyticKind, Field, FieldRegistry};
use crate::guidance::{
    Guidance, GuidanceError, GuidanceGradient, GuidanceHandle, GuidanceRequest, NullGuidance, PhotometricGuidance,
    PhotometricTarget,
};
use crate::math::{Aabb, Vec3};
use crate::render::{render_object, Camera, RenderOptions};
use crate::scene::{FieldSpec, ObjectProxy, RigidPlacement, SceneDescription};

fn tiny_config(total: u64) -> TrainConfig {
    TrainConfig {
        total_iters: total,
        render_resolution: (4, 4),
        n_samples_per_ray: 8,
        shape_loss: crate::geometry::ShapeLossConfig { n_points: 64, ..Default::default() },
        preview_interval: 0,
        ..Default::default()
    }
}

fn scene_of(bounds: Aabb, proxies: Vec<ObjectProxy>) -> SceneDescription {
    let mut s = SceneDescription::new("a quiet room", bounds);
    for p in &proxies {
        s.fields.entry(p.field.clone()).or_insert_with(|| FieldSpec::fresh(3));
    }
    s.proxies = proxies;
    s
}

fn registry(ids: &[&str], hidden: usize) -> FieldRegistry<f32> {
    let mut reg = FieldRegistry::new();
    for (i, id) in ids.iter().enumerate() {
        reg.insert(*id, Field::Neural(init_field(10 + i as u64, hidden, 2, 3)));
    }
    reg
}

fn handle(g: impl Guidance + 'static) -> GuidanceHandle {
    GuidanceHandle::new(Arc::new(g), "test")
}

fn at(x: f64) -> RigidPlacement {
    RigidPlacement::new(Vec3::new(x, 0.0, 0.0), crate::math::Quat::IDENTITY, Vec3::splat(0.5))
}

struct Outage;

impl Guidance for Outage {
    fn gradient(&self, _: &GuidanceRequest<'_>) -> Result<GuidanceGradient, GuidanceError> {
        Err(GuidanceError::Timeout)
    }
}

fn room() -> Aabb {
    Aabb::new(Vec3::new(-2.0, -1.0, -1.0), Vec3::new(2.0, 1.0, 1.0))
}

#[test]
fn trainer_follows_schedule() {
    let scene = scene_of(room(), vec![
        ObjectProxy::new("a", "a", at(-1.0)),
        ObjectProxy::new("b", "b", at(0.0)),
        ObjectProxy::new("c", "c", at(1.0)),
    ]);
    let cfg = TrainConfig { n_samples_per_ray: 2, render_resolution: (2, 2), ..tiny_config(90) };
    let mut t = Trainer::new(scene, registry(&["a", "b", "c"], 4), cfg, handle(NullGuidance), Path::new(".")).unwrap();
    let mut events: Vec<TrainEvent> = Vec::new();
    let summary = t.train(&mut events).unwrap();
    assert_eq!(summary.iters, 90);
    let kinds: Vec<EventKind> = events.iter().map(|e| e.kind.clone()).collect();
    let mut want = Vec::new();
    for _ in 0..2 {
        for id in ["a", "b", "c"] {
            want.extend(std::iter::repeat_n(EventKind::Local { object: id.into() }, 10));
            want.extend(std::iter::repeat_n(EventKind::Global, 5));
        }
    }
    assert_eq!(kinds, want);
    assert!(events.windows(2).all(|w| w[0].iter < w[1].iter));
    assert_eq!(events[0].iter, 1);
}

#[test]
fn zero_guidance_and_no_shape_leaves_params() {
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(0.0))]);
    let reg = registry(&["a"], 8);
    let mut t = Trainer::new(scene, reg.clone(), tiny_config(4), handle(NullGuidance), Path::new(".")).unwrap();
    t.local_step(0).unwrap();
    t.global_step().unwrap();
    assert_eq!(t.fields(), &reg);
    assert_eq!(t.optimizer_state("a").unwrap().step, 2);
}

#[test]
fn local_step_touches_only_its_field() {
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(-1.0)), ObjectProxy::new("b", "b", at(1.0))]);
    let reg = registry(&["a", "b"], 8);
    let target = crate::render::Image::filled(4, 4, &[0.9f32, 0.1, 0.1]);
    let mut t =
        Trainer::new(scene, reg.clone(), tiny_config(4), handle(PhotometricGuidance::from_image(target)), Path::new("."))
            .unwrap();
    let e = t.local_step(1).unwrap();
    assert!(!e.skipped);
    assert_eq!(t.fields().get("a"), reg.get("a"));
    assert_ne!(t.fields().get("b"), reg.get("b"));
    assert_eq!(t.optimizer_state("a").unwrap().step, 0);
}

#[test]
fn global_step_with_identity_proxy_equals_local_step() {
    let mut scene = scene_of(Aabb::unit(), vec![ObjectProxy::new("a", "a", RigidPlacement::identity())]);
    scene.proxies[0] = scene.proxies[0].clone().with_shape(crate::geometry::ShapeSpec::Sphere { radius: 0.5 }, 1.0);
    let reg = registry(&["a"], 8);
    let target = crate::render::Image::filled(4, 4, &[0.2f32, 0.7, 0.1]);
    let make = || {
        let g = handle(PhotometricGuidance::from_image(target.clone()));
        Trainer::new(scene.clone(), reg.clone(), tiny_config(4), g, Path::new(".")).unwrap()
    };
    let (mut local, mut global) = (make(), make());
    let a = local.local_step(0).unwrap();
    let b = global.global_step().unwrap();
    assert_eq!(local.fields(), global.fields());
    assert_ne!(local.fields(), &reg);
    assert_eq!(a.losses, b.losses);
}

#[test]
fn shared_field_receives_summed_gradient() {
    let two = |f1: &str, f2: &str| {
        scene_of(room(), vec![ObjectProxy::new("p", f1, at(-0.75)), ObjectProxy::new("q", f2, at(0.5))])
    };
    let field = Field::Neural(init_field(3, 8, 2, 3));
    let mut shared = FieldRegistry::new();
    shared.insert("f", field.clone());
    let mut split = FieldRegistry::new();
    split.insert("f1", field.clone());
    split.insert("f2", field);
    let target = crate::render::Image::filled(4, 4, &[0.5f32, 0.5, 0.5]);
    let g = || handle(PhotometricGuidance::from_image(target.clone()));
    let cfg = TrainConfig { n_samples_per_ray: 16, ..tiny_config(1) };
    let mut a = Trainer::new(two("f", "f"), shared, cfg.clone(), g(), Path::new(".")).unwrap();
    let mut b = Trainer::new(two("f1", "f2"), split, cfg, g(), Path::new(".")).unwrap();
    let ga = a.global_gradient().unwrap().gradients;
    let gb = b.global_gradient().unwrap().gradients;
    let mut sum = gb["f1"].clone();
    sum.add_assign(&gb["f2"]);
    let scale = sum.l2_norm().max(1e-12);
    assert!(scale > 1e-6);
    for (x, y) in ga["f"].data.iter().zip(&sum.data) {
        assert!(((x - y) as f64).abs() <= 1e-5 * scale, "{x} vs {y}");
    }
}

#[test]
fn guidance_outage_skips_the_step() {
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(0.0))]);
    let reg = registry(&["a"], 8);
    let mut t = Trainer::new(scene, reg.clone(), tiny_config(4), handle(Outage), Path::new(".")).unwrap();
    let e = t.global_step().unwrap();
    assert!(e.skipped && e.kind == EventKind::Global);
    assert!(e.error.as_deref().unwrap().contains("timed out"));
    let e = t.local_step(0).unwrap();
    assert!(e.skipped);
    assert_eq!(t.fields(), &reg);
    assert_eq!(t.optimizer_state("a").unwrap().step, 0);
    assert_eq!(t.iter(), 2);
}

#[test]
fn wrong_gradient_shape_is_skipped() {
    struct Wrong;
    impl Guidance for Wrong {
        fn gradient(&self, r: &GuidanceRequest<'_>) -> Result<GuidanceGradient, GuidanceError> {
            Ok(GuidanceGradient::zeros(r.image.width + 1, r.image.height, r.image.channels))
        }
    }
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(0.0))]);
    let mut t = Trainer::new(scene, registry(&["a"], 8), tiny_config(1), handle(Wrong), Path::new(".")).unwrap();
    assert!(t.global_step().unwrap().skipped);
}

#[test]
fn fixed_seed_is_deterministic() {
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(-1.0)), ObjectProxy::new("b", "b", at(1.0))]);
    let target = crate::render::Image::filled(4, 4, &[0.3f32, 0.6, 0.2]);
    let run = || {
        let g = handle(PhotometricGuidance::from_image(target.clone()));
        let mut t = Trainer::new(scene.clone(), registry(&["a", "b"], 8), tiny_config(40), g, Path::new(".")).unwrap();
        t.train(&mut ()).unwrap();
        t.into_fields().checksum()
    };
    assert_eq!(run(), run());
}

#[test]
fn update_mask_limits_fields_and_groups() {
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(-1.0)), ObjectProxy::new("b", "b", at(1.0))]);
    let reg = registry(&["a", "b"], 8);
    let target = crate::render::Image::filled(4, 4, &[0.9f32, 0.9, 0.1]);
    let mut t =
        Trainer::new(scene, reg.clone(), tiny_config(4), handle(PhotometricGuidance::from_image(target)), Path::new("."))
            .unwrap();
    t.set_mask(UpdateMask { field: Some("b".into()), group: Some(crate::field::ParamGroup::Albedo) });
    for _ in 0..3 {
        t.global_step().unwrap();
    }
    assert_eq!(t.fields().get("a"), reg.get("a"));
    let (Some(Field::Neural(before)), Some(Field::Neural(after))) = (reg.get("b"), t.fields().get("b")) else {
        panic!()
    };
    let albedo = before.group_range(crate::field::ParamGroup::Albedo);
    assert_eq!(before.data[..albedo.start], after.data[..albedo.start]);
    assert_ne!(before.data[albedo.clone()], after.data[albedo]);
}

#[test]
fn cancellation_stops_between_steps() {
    struct StopAfter(usize, Vec<TrainEvent>);
    impl TrainObserver for StopAfter {
        fn on_event(&mut self, e: &TrainEvent, _: &Trainer) -> Result<(), TrainError> {
            self.1.push(e.clone());
            Ok(())
        }
        fn cancelled(&self) -> bool {
            self.1.len() >= self.0
        }
    }
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(0.0))]);
    let mut t = Trainer::new(scene, registry(&["a"], 4), tiny_config(50), handle(NullGuidance), Path::new(".")).unwrap();
    let mut obs = StopAfter(7, Vec::new());
    let s = t.train(&mut obs).unwrap();
    assert!(s.cancelled);
    assert_eq!(s.iters, 7);
}

#[test]
fn recorder_writes_events_previews_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(0.0))]);
    let cfg = TrainConfig { preview_interval: 5, checkpoint_interval: 10, ..tiny_config(12) };
    let mut rec = RunRecorder::create(dir.path(), &cfg).unwrap();
    let mut t = Trainer::new(scene, registry(&["a"], 4), cfg, handle(NullGuidance), Path::new(".")).unwrap();
    t.train(&mut rec).unwrap();
    drop(rec);
    let log = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 12);
    for line in log.lines() {
        serde_json::from_str::<TrainEvent>(line).unwrap();
    }
    assert!(dir.path().join("previews/iter_000010.png").is_file());
    assert!(dir.path().join("checkpoints/iter_000010/a.stsf").is_file());
}

#[test]
fn invalid_inputs_are_rejected() {
    let scene = scene_of(room(), vec![ObjectProxy::new("a", "a", at(0.0))]);
    let g = || handle(NullGuidance);
    let bad = TrainConfig { lr: 0.0, ..tiny_config(1) };
    assert!(matches!(Trainer::new(scene.clone(), registry(&["a"], 4), bad, g(), Path::new(".")), Err(TrainError::InvalidConfig(_))));
    assert!(matches!(
        Trainer::new(scene, registry(&["zzz"], 4), tiny_config(1), g(), Path::new(".")),
        Err(TrainError::UnknownField(_))
    ));
}

fn photometric_loss(field: &Field<f32>, target: &Field<f32>, cams: &[Camera], bounds: &Aabb) -> f64 {
    let opts = RenderOptions::midpoint(32);
    cams.iter()
        .map(|c| {
            let a = render_object(field, c, bounds, &opts).unwrap();
            let b = render_object(target, c, bounds, &opts).unwrap();
            a.half_sq_dist(&b)
        })
        .sum()
}

#[test]
fn local_steps_fit_a_red_sphere() {
    let target: Field<f32> =
        Field::Analytic(make_analytic_field(AnalyticKind::Sphere { radius: 0.6 }, 30.0, &[0.9, 0.1, 0.1]));
    let scene = scene_of(Aabb::unit(), vec![ObjectProxy::new("ball", "ball", RigidPlacement::identity())]);
    let guidance = PhotometricGuidance::default().with_target(
        "",
        PhotometricTarget::Object { field: Arc::new(target.clone()), bounds: Aabb::unit() },
    );
    let cfg = TrainConfig { render_resolution: (16, 16), n_samples_per_ray: 32, lr: 5e-3, ..tiny_config(200) };
    let mut reg = FieldRegistry::new();
    reg.insert("ball", Field::Neural(init_field(5, 32, 4, 3)));
    let mut t = Trainer::new(scene, reg, cfg.clone(), handle(guidance), Path::new(".")).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(99);
    let cams: Vec<Camera> = (0..4).map(|_| sample_camera(&cfg.camera, CameraMode::Object, (16, 16), &mut rng)).collect();
    let before = photometric_loss(t.fields().get("ball").unwrap(), &target, &cams, &Aabb::unit());
    for _ in 0..200 {
        assert!(!t.local_step(0).unwrap().skipped);
    }
    let after = photometric_loss(t.fields().get("ball").unwrap(), &target, &cams, &Aabb::unit());
    assert!(after <= 0.2 * before, "loss {before} -> {after}");
}
