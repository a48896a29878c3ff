use proptest::prelude::*;

use super::*;
use crate::field::{init_field, make_analytic_field, unit_sphere, AnalyticKind, Field, FieldRegistry, ParamGroup};
use crate::math::{Aabb, Quat, Vec3};
use crate::scene::{FieldSpec, ObjectProxy, RigidPlacement, SceneDescription};

fn up() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.0)
}

fn front_camera(res: usize) -> Camera {
    Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, up(), 0.9, res, res)
}

fn scene_with(bounds: Aabb, proxies: Vec<ObjectProxy>) -> SceneDescription {
    let mut s = SceneDescription::new("test", bounds);
    for p in &proxies {
        s.fields.entry(p.field.clone()).or_insert_with(|| FieldSpec::fresh(3));
    }
    s.proxies = proxies;
    s
}

#[test]
fn empty_field_renders_black() {
    let f: Field<f32> = Field::Analytic(unit_sphere(0.0, &[1.0, 1.0, 1.0]));
    let img = render_single(&f, &front_camera(8), &RenderOptions::midpoint(32)).unwrap();
    assert!(img.data.iter().all(|v| *v == 0.0));
    assert!(img.opacity.iter().all(|v| *v == 0.0));
}

#[test]
fn sphere_centre_is_opaque() {
    let f: Field<f64> = Field::Analytic(unit_sphere(50.0, &[1.0, 0.0, 0.0]));
    let img = render_single(&f, &front_camera(9), &RenderOptions::midpoint(128)).unwrap();
    // chord 2 through the centre: 1 − e^{−100}
    assert!(img.opacity[4 * 9 + 4] >= 0.99);
    assert!(img.opacity[0] < 1e-12);
}

#[test]
fn quadrature_converges() {
    let f: Field<f64> = Field::Analytic(unit_sphere(1.5, &[0.2, 0.6, 0.9]));
    let cam = front_camera(16);
    let a = render_single(&f, &cam, &RenderOptions::midpoint(256)).unwrap();
    let b = render_single(&f, &cam, &RenderOptions::midpoint(512)).unwrap();
    let mean: f64 = a.data.iter().map(|v| v.abs()).sum::<f64>() / a.data.len() as f64;
    assert!(a.mean_abs_diff(&b) < 0.01 * mean.max(1e-3));
}

#[test]
fn single_identity_proxy_reduces_to_single_render() {
    let field: Field<f32> = Field::Neural(init_field(9, 16, 3, 3));
    let mut reg = FieldRegistry::new();
    reg.insert("f", field.clone());
    let scene = scene_with(Aabb::unit(), vec![ObjectProxy::new("a", "f", RigidPlacement::identity())]);
    let cam = Camera::look_at(Vec3::new(0.4, 0.7, 2.6), Vec3::new(0.1, 0.0, 0.0), up(), 0.8, 12, 10);
    for opts in [RenderOptions::midpoint(40), RenderOptions::stratified(40, 77)] {
        let composed = render_composed(&scene, &reg, &cam, &opts).unwrap();
        let single = render_single(&field, &cam, &opts).unwrap();
        assert_eq!(composed, single);
    }
}

/// Half-turns about coordinate axes and dyadic offsets are exact in floating
/// point, so the relative geometry seen by every ray is reproduced bit for bit.
#[test]
fn joint_rigid_motion_is_exact() {
    let mut reg = FieldRegistry::new();
    reg.insert("a", Field::<f32>::Neural(init_field(1, 16, 3, 3)));
    reg.insert("b", Field::<f32>::Neural(init_field(2, 16, 3, 3)));
    let bounds = Aabb::new(Vec3::new(-2.0, -1.5, -2.0), Vec3::new(2.0, 1.5, 2.0));
    let proxies = vec![
        ObjectProxy::new("a", "a", RigidPlacement::new(Vec3::new(-0.5, 0.25, 0.0), Quat::from_axis_angle(up(), 0.3), Vec3::new(0.75, 0.5, 0.75))),
        ObjectProxy::new("b", "b", RigidPlacement::new(Vec3::new(0.75, -0.25, 0.5), Quat::IDENTITY, Vec3::splat(0.5))),
    ];
    let scene = scene_with(bounds, proxies);
    let cam = Camera::look_at(Vec3::new(1.0, 1.5, 4.0), Vec3::ZERO, up(), 0.8, 10, 8);
    let opts = RenderOptions::stratified(48, 5);
    let base = render_composed(&scene, &reg, &cam, &opts).unwrap();

    for (axis, shift) in [(0, Vec3::new(4.0, -2.0, 0.5)), (1, Vec3::new(-1.25, 8.0, 3.0)), (2, Vec3::new(0.0, 0.0, -16.0))] {
        let q = Quat::half_turn(axis);
        let r = q.to_mat3();
        let mv = |pl: &RigidPlacement| RigidPlacement::new(r.mul_vec(pl.location) + shift, q * pl.rotation, pl.scale);
        let mut moved = scene.clone();
        for p in &mut moved.proxies {
            p.placement = mv(&p.placement);
        }
        let (a, b) = (r.mul_vec(bounds.min) + shift, r.mul_vec(bounds.max) + shift);
        moved.bounds = Aabb::new(a.min(b), a.max(b));
        let mut cam2 = cam.clone();
        cam2.pose = mv(&cam.pose);
        assert_eq!(render_composed(&moved, &reg, &cam2, &opts).unwrap(), base, "axis {axis}");
    }
}

#[test]
fn union_of_disjoint_spheres_matches_union_field() {
    let sigma = 200.0;
    let red = [0.9, 0.1, 0.1];
    let blue = [0.1, 0.2, 0.9];
    let mut reg: FieldRegistry<f64> = FieldRegistry::new();
    reg.insert("red", Field::Analytic(unit_sphere(sigma, &red)));
    reg.insert("blue", Field::Analytic(unit_sphere(sigma, &blue)));
    let bounds = Aabb::new(Vec3::new(-2.0, -1.0, -1.0), Vec3::new(2.0, 1.0, 1.0));
    let half = Vec3::splat(0.5);
    let scene = scene_with(
        bounds,
        vec![
            ObjectProxy::new("r", "red", RigidPlacement::new(Vec3::new(-0.8, 0.0, 0.0), Quat::IDENTITY, half)),
            ObjectProxy::new("b", "blue", RigidPlacement::new(Vec3::new(0.8, 0.0, 0.0), Quat::IDENTITY, half)),
        ],
    );
    let union = make_analytic_field(AnalyticKind::Sphere { radius: 0.5 }, 2.0 * sigma, &red)
        .translated(Vec3::new(-0.8, 0.0, 0.0))
        .union(make_analytic_field(AnalyticKind::Sphere { radius: 0.5 }, 2.0 * sigma, &blue).translated(Vec3::new(0.8, 0.0, 0.0)));
    let mut ureg = FieldRegistry::new();
    ureg.insert("u", Field::Analytic(union));
    let mut uscene = scene_with(bounds, vec![ObjectProxy::new("u", "u", RigidPlacement::identity())]);
    uscene.object_bounds = bounds;

    let cam = Camera::look_at(Vec3::new(0.3, 0.8, 3.5), Vec3::ZERO, up(), 0.9, 24, 24);
    let opts = RenderOptions::midpoint(512);
    let a = render_composed(&scene, &reg, &cam, &opts).unwrap();
    let b = render_composed(&uscene, &ureg, &cam, &opts).unwrap();
    assert!(a.mean_abs_diff(&b) < 0.02, "{}", a.mean_abs_diff(&b));
}

#[test]
fn opaque_box_occludes_sphere() {
    let mut reg: FieldRegistry<f64> = FieldRegistry::new();
    reg.insert("box", Field::Analytic(make_analytic_field(AnalyticKind::Box { half_extents: Vec3::ONE }, 500.0, &[0.0, 0.0, 0.0])));
    reg.insert("ball", Field::Analytic(unit_sphere(50.0, &[1.0, 1.0, 1.0])));
    let bounds = Aabb::new(Vec3::splat(-3.0), Vec3::splat(3.0));
    let scene = scene_with(
        bounds,
        vec![
            ObjectProxy::new("ball", "ball", RigidPlacement::new(Vec3::new(0.0, 0.0, -1.5), Quat::IDENTITY, Vec3::splat(0.5))),
            ObjectProxy::new("wall", "box", RigidPlacement::new(Vec3::new(0.0, 0.0, 0.5), Quat::IDENTITY, Vec3::new(2.5, 2.5, 0.25))),
        ],
    );
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, 2.9), Vec3::ZERO, up(), 0.5, 12, 12);
    let img = render_composed(&scene, &reg, &cam, &RenderOptions::midpoint(256)).unwrap();
    // The wall is black, so any light reaching the camera comes from the ball.
    assert!(img.data.iter().all(|v| *v < 1e-3));
    assert!(img.opacity.iter().all(|v| *v > 0.99));
}

#[test]
fn proxy_order_barely_matters_at_high_sample_counts() {
    let mut reg: FieldRegistry<f64> = FieldRegistry::new();
    reg.insert("a", Field::Analytic(unit_sphere(8.0, &[0.8, 0.3, 0.1])));
    reg.insert("b", Field::Analytic(make_analytic_field(AnalyticKind::Box { half_extents: Vec3::splat(0.8) }, 6.0, &[0.1, 0.5, 0.9])));
    let bounds = Aabb::new(Vec3::splat(-2.0), Vec3::splat(2.0));
    let pa = ObjectProxy::new("a", "a", RigidPlacement::new(Vec3::new(-0.3, 0.0, 0.2), Quat::IDENTITY, Vec3::splat(0.7)));
    let pb = ObjectProxy::new("b", "b", RigidPlacement::new(Vec3::new(0.4, 0.1, -0.3), Quat::from_axis_angle(up(), 0.5), Vec3::splat(0.6)));
    let s1 = scene_with(bounds, vec![pa.clone(), pb.clone()]);
    let s2 = scene_with(bounds, vec![pb, pa]);
    let cam = Camera::look_at(Vec3::new(0.5, 0.6, 3.5), Vec3::ZERO, up(), 0.8, 16, 16);
    let opts = RenderOptions::midpoint(1024);
    let a = render_composed(&s1, &reg, &cam, &opts).unwrap();
    let b = render_composed(&s2, &reg, &cam, &opts).unwrap();
    let mean: f64 = a.data.iter().sum::<f64>() / a.data.len() as f64;
    assert!(a.mean_abs_diff(&b) < 0.01 * mean, "{} vs mean {mean}", a.mean_abs_diff(&b));
}

fn tiny_scene() -> (SceneDescription, FieldRegistry<f64>) {
    let mut reg = FieldRegistry::new();
    reg.insert("a", Field::Neural(init_field(3, 6, 2, 3)));
    reg.insert("b", Field::Neural(init_field(4, 6, 2, 3)));
    let bounds = Aabb::new(Vec3::splat(-1.5), Vec3::splat(1.5));
    let scene = scene_with(
        bounds,
        vec![
            ObjectProxy::new("a", "a", RigidPlacement::new(Vec3::new(-0.3, 0.1, 0.0), Quat::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 0.4), Vec3::new(0.9, 0.6, 0.8))),
            ObjectProxy::new("b", "b", RigidPlacement::new(Vec3::new(0.4, -0.2, 0.1), Quat::IDENTITY, Vec3::splat(0.7))),
        ],
    );
    (scene, reg)
}

fn cotangent(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect()
}

fn objective(scene: &SceneDescription, reg: &FieldRegistry<f64>, cam: &Camera, opts: &RenderOptions, cot: &[f64]) -> f64 {
    let img = render_composed(scene, reg, cam, opts).unwrap();
    img.data.iter().zip(cot).map(|(a, b)| a * b).sum()
}

#[test]
fn composed_gradient_matches_central_differences() {
    let (scene, reg) = tiny_scene();
    let cam = Camera::look_at(Vec3::new(0.5, 0.4, 2.5), Vec3::ZERO, up(), 0.9, 4, 4);
    let opts = RenderOptions::stratified(24, 11);
    let cot = cotangent(4 * 4 * 3);
    let grads = render_backward(&scene, &reg, &cam, &opts, &cot).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for id in ["a", "b"] {
        let g = &grads[id];
        let n = reg.get(id).unwrap().params().unwrap().data.len();
        for idx in (0..n).step_by(3) {
            let bump = |d: f64| {
                let mut r = reg.clone();
                r.get_mut(id).unwrap().params_mut().unwrap().data[idx] += d;
                objective(&scene, &r, &cam, &opts, &cot)
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let scale = fd.abs().max(g.data[idx].abs()).max(1e-6);
            worst = worst.max((fd - g.data[idx]).abs() / scale);
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn float32_gradient_matches_float64_differences() {
    let (scene, reg) = tiny_scene();
    let reg32: FieldRegistry<f32> = reg.cast();
    let cam = Camera::look_at(Vec3::new(0.5, 0.4, 2.5), Vec3::ZERO, up(), 0.9, 4, 4);
    let opts = RenderOptions::midpoint(24);
    let cot = cotangent(48);
    let cot32: Vec<f32> = cot.iter().map(|v| *v as f32).collect();
    let g32 = render_backward(&scene, &reg32, &cam, &opts, &cot32).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let g = &g32["b"];
    let n = g.data.len();
    let norm = g.l2_norm() / (n as f64).sqrt();
    for idx in (0..n).step_by(2) {
        let bump = |d: f64| {
            let mut r = reg.clone();
            r.get_mut("b").unwrap().params_mut().unwrap().data[idx] += d;
            objective(&scene, &r, &cam, &opts, &cot)
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        let a = g.data[idx] as f64;
        let scale = fd.abs().max(a.abs()).max(1e-2 * norm);
        worst = worst.max((fd - a).abs() / scale);
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn object_gradient_matches_central_differences() {
    let field: Field<f64> = Field::Neural(init_field(8, 5, 2, 3));
    let cam = Camera::look_at(Vec3::new(1.2, 0.5, 2.0), Vec3::ZERO, up(), 0.9, 4, 4);
    let opts = RenderOptions::midpoint(20);
    let cot = cotangent(48);
    let g = render_object_backward(&field, &cam, &Aabb::unit(), &opts, &cot).unwrap().unwrap();
    let h = 1e-5;
    for idx in (0..g.data.len()).step_by(5) {
        let bump = |d: f64| {
            let mut f = field.clone();
            f.params_mut().unwrap().data[idx] += d;
            let img = render_single(&f, &cam, &opts).unwrap();
            img.data.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>()
        };
        let fd = (bump(h) - bump(-h)) / (2.0 * h);
        let scale = fd.abs().max(g.data[idx].abs()).max(1e-6);
        assert!((fd - g.data[idx]).abs() / scale < 1e-5, "param {idx}: {fd} vs {}", g.data[idx]);
    }
}

#[test]
fn zero_cotangent_gives_zero_gradient() {
    let (scene, reg) = tiny_scene();
    let cam = front_camera(4);
    let grads = render_backward(&scene, &reg, &cam, &RenderOptions::midpoint(16), &[0.0; 48]).unwrap();
    assert_eq!(grads.len(), 2);
    assert!(grads.values().all(|g| g.is_zero()));
}

/// A field bound to two proxies must receive the sum of what two independent
/// copies of it would receive in the same positions.
#[test]
fn shared_field_gradient_is_sum_over_proxies() {
    let (mut scene, mut reg) = tiny_scene();
    let shared = reg.get("a").unwrap().clone();
    reg.insert("b", shared.clone());
    let cam = Camera::look_at(Vec3::new(0.5, 0.4, 2.5), Vec3::ZERO, up(), 0.9, 5, 5);
    let opts = RenderOptions::stratified(24, 3);
    let cot = cotangent(75);
    let split = render_backward(&scene, &reg, &cam, &opts, &cot).unwrap();

    scene.proxies[1].field = "a".into();
    let img_shared = render_composed(&scene, &reg, &cam, &opts).unwrap();
    let joint = render_backward(&scene, &reg, &cam, &opts, &cot).unwrap();
    assert_eq!(joint.len(), 1);
    let mut sum = split["a"].clone();
    sum.add_assign(&split["b"]);
    for (j, s) in joint["a"].data.iter().zip(&sum.data) {
        assert!((j - s).abs() <= 1e-12 * (1.0 + s.abs()));
    }
    scene.proxies[1].field = "b".into();
    assert_eq!(render_composed(&scene, &reg, &cam, &opts).unwrap(), img_shared);
}

#[test]
fn object_gradient_reaches_albedo_head() {
    let field: Field<f64> = Field::Neural(init_field(8, 5, 2, 3));
    let cam = front_camera(3);
    let cot = cotangent(27);
    let g = render_object_backward(&field, &cam, &Aabb::unit(), &RenderOptions::midpoint(8), &cot).unwrap().unwrap();
    let p = field.params().unwrap();
    assert!(g.data[p.group_range(ParamGroup::Albedo)].iter().any(|v| *v != 0.0));
}

#[test]
fn unknown_field_is_reported() {
    let (mut scene, reg) = tiny_scene();
    scene.proxies[0].field = "ghost".into();
    let err = render_composed(&scene, &reg, &front_camera(2), &RenderOptions::midpoint(4)).unwrap_err();
    assert!(matches!(err, RenderError::UnknownField(id) if id == "ghost"));
}

#[test]
fn wrong_cotangent_size_is_rejected() {
    let (scene, reg) = tiny_scene();
    let err = render_backward(&scene, &reg, &front_camera(2), &RenderOptions::midpoint(4), &[0.0; 5]).unwrap_err();
    assert!(matches!(err, RenderError::ResolutionMismatch { .. }));
}

#[test]
fn empty_scene_is_black() {
    let scene = scene_with(Aabb::unit(), vec![]);
    let img = render_composed(&scene, &FieldRegistry::<f32>::new(), &front_camera(3), &RenderOptions::midpoint(4)).unwrap();
    assert!(img.data.iter().all(|v| *v == 0.0));
}

proptest! {
    #[test]
    fn transmittance_is_conserved(alphas in prop::collection::vec(0.0f64..=1.0, 1..64)) {
        let colors = vec![1.0; alphas.len()];
        // With unit color the composite is exactly Σ Tᵢαᵢ.
        let (c, t_final) = composite(&alphas, &colors, 1);
        prop_assert!((c[0] + t_final - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stratified_samples_stay_in_strata(seed in any::<u64>(), n in 1usize..64, t0 in 0.0f64..2.0, len in 0.01f64..5.0) {
        use rand::SeedableRng;
        let ray = Ray { origin: Vec3::ZERO, direction: Vec3::new(1.0, 0.0, 0.0), t_near: t0, t_far: t0 + len };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = sample_ray(&ray, n, Some(&mut rng));
        let step = len / n as f64;
        for (i, t) in b.t.iter().enumerate() {
            prop_assert!(*t >= t0 + i as f64 * step - 1e-12 && *t <= t0 + (i + 1) as f64 * step + 1e-12);
        }
        prop_assert!(b.t.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(b.delta.iter().all(|d| *d >= 0.0));
    }
}
