use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::composite::{composite_backward, composite_into, fill_samples};
use super::{Camera, Image, RenderError, RenderOptions, Sampling};
use crate::field::{Field, FieldRegistry, FieldTape, ParamGradient, Real};
use crate::math::{Aabb, Mat3, Vec3};
use crate::scene::{RigidPlacement, SceneDescription};

/// Gradient per neural field id.
pub type Gradients<T> = BTreeMap<String, ParamGradient<T>>;

/// Indexed like the plan's field list; `None` for parameter-free fields.
type PerFieldGradients<T> = Vec<Option<ParamGradient<T>>>;

/// One proxy seen from the camera: rays are built in camera space and mapped
/// straight into the proxy's canonical frame, so the absolute poses of camera
/// and proxy never enter the sample positions.
struct ProxyView {
    /// `R_pᵀ·R_c`.
    rot: Mat3,
    /// Camera centre in the proxy's canonical frame.
    origin: Vec3,
    scale: Vec3,
    slot: usize,
}

struct Plan<'a, T> {
    camera: &'a Camera,
    cam_rot: Mat3,
    bounds: Aabb,
    object_bounds: Aabb,
    proxies: Vec<ProxyView>,
    fields: Vec<(&'a str, &'a Field<T>)>,
    channels: usize,
    opts: RenderOptions,
}

impl<'a, T: Real> Plan<'a, T> {
    fn new(
        camera: &'a Camera,
        bounds: Aabb,
        object_bounds: Aabb,
        placements: &[(&RigidPlacement, &'a str, &'a Field<T>)],
        opts: &RenderOptions,
    ) -> Result<Self, RenderError> {
        camera.validate()?;
        opts.validate()?;
        let cam_rot = camera.rotation();
        let mut fields: Vec<(&str, &Field<T>)> = Vec::new();
        let mut proxies = Vec::with_capacity(placements.len());
        for &(pl, id, field) in placements {
            let slot = match fields.iter().position(|(f, _)| *f == id) {
                Some(s) => s,
                None => {
                    fields.push((id, field));
                    fields.len() - 1
                }
            };
            let r = pl.rotation_matrix();
            proxies.push(ProxyView {
                rot: r.transpose_mul(&cam_rot),
                origin: r.transpose_mul_vec(camera.pose.location - pl.location).div_elem(pl.scale),
                scale: pl.scale,
                slot,
            });
        }
        let channels = fields.first().map_or(3, |(_, f)| f.channels());
        for (id, f) in &fields {
            if f.channels() != channels {
                return Err(RenderError::ChannelMismatch { field: id.to_string(), expected: channels, found: f.channels() });
            }
        }
        Ok(Self { camera, cam_rot, bounds, object_bounds, proxies, fields, channels, opts: *opts })
    }

    fn for_scene(
        scene: &'a SceneDescription,
        registry: &'a FieldRegistry<T>,
        camera: &'a Camera,
        opts: &RenderOptions,
    ) -> Result<Self, RenderError> {
        let mut placements = Vec::with_capacity(scene.proxies.len());
        for p in &scene.proxies {
            let f = registry.get(&p.field).ok_or_else(|| RenderError::UnknownField(p.field.clone()))?;
            placements.push((&p.placement, p.field.as_str(), f));
        }
        Self::new(camera, scene.bounds, scene.object_bounds, &placements, opts)
    }

    /// Renders every row; with a cotangent also returns per-slot gradients.
    fn run(&self, cotangent: Option<&[T]>) -> Result<(Image<T>, PerFieldGradients<T>), RenderError> {
        let (w, h, c) = (self.camera.width, self.camera.height, self.channels);
        if let Some(cot) = cotangent {
            if cot.len() != w * h * c {
                return Err(RenderError::ResolutionMismatch { expected: w * h * c, found: cot.len() });
            }
        }
        let mut image = Image::new(w, h, c);
        let rows: Vec<Vec<Option<ParamGradient<T>>>> = image
            .data
            .par_chunks_mut(w * c)
            .zip(image.opacity.par_chunks_mut(w))
            .enumerate()
            .map(|(y, (color, opacity))| {
                let cot_row = cotangent.map(|g| &g[y * w * c..(y + 1) * w * c]);
                self.row(y, color, opacity, cot_row)
            })
            .collect();

        let mut grads: Vec<Option<ParamGradient<T>>> = Vec::new();
        if cotangent.is_some() {
            grads = self.fields.iter().map(|(_, f)| f.params().map(|p| p.zero_gradient())).collect();
            for row in &rows {
                for (acc, g) in grads.iter_mut().zip(row) {
                    if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
                        acc.add_assign(g);
                    }
                }
            }
        }
        Ok((image, grads))
    }

    fn row(&self, y: usize, color: &mut [T], opacity: &mut [T], cot: Option<&[T]>) -> Vec<Option<ParamGradient<T>>> {
        let cam = self.camera;
        let (w, n, c) = (cam.width, self.opts.n_samples, self.channels);
        let np = self.proxies.len();
        if np == 0 {
            return Vec::new();
        }

        // Sample positions for every pixel of the row, grouped per field.
        let mut hit = vec![false; w];
        let mut ts = vec![0.0f64; w * n];
        let mut deltas = vec![0.0f64; w * n];
        let mut lens = vec![0.0f64; w * np];
        let mut src = vec![u32::MAX; w * n];
        let mut points: Vec<Vec<[T; 3]>> = vec![Vec::new(); self.fields.len()];
        let mut t_buf = Vec::with_capacity(n);
        let mut d_buf = Vec::with_capacity(n);
        let mut dirs = vec![Vec3::ZERO; np];
        for x in 0..w {
            let d_cam = cam.local_direction(x, y);
            let Some((t0, t1)) = self.bounds.intersect_ray(cam.pose.location, self.cam_rot.mul_vec(d_cam)) else {
                continue;
            };
            // Also rejects NaN bounds.
            if t0.partial_cmp(&t1) != Some(std::cmp::Ordering::Less) {
                continue;
            }
            hit[x] = true;
            match self.opts.sampling {
                Sampling::Midpoint => fill_samples::<ChaCha8Rng>(t0, t1, n, None, &mut t_buf, &mut d_buf),
                Sampling::Stratified { seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(pixel_seed(seed, y * w + x));
                    fill_samples(t0, t1, n, Some(&mut rng), &mut t_buf, &mut d_buf)
                }
            }
            ts[x * n..(x + 1) * n].copy_from_slice(&t_buf);
            deltas[x * n..(x + 1) * n].copy_from_slice(&d_buf);
            for (k, pv) in self.proxies.iter().enumerate() {
                dirs[k] = pv.rot.mul_vec(d_cam).div_elem(pv.scale);
                lens[x * np + k] = dirs[k].norm();
            }
            for (i, &t) in t_buf.iter().enumerate() {
                let k = i % np;
                let pv = &self.proxies[k];
                let p = pv.origin + dirs[k] * t;
                if self.object_bounds.contains(p) {
                    let batch = &mut points[pv.slot];
                    src[x * n + i] = batch.len() as u32;
                    batch.push([T::of(p.x), T::of(p.y), T::of(p.z)]);
                }
            }
        }

        let tapes: Vec<FieldTape<T>> = self.fields.iter().zip(&points).map(|((_, f), pts)| f.forward(pts, true)).collect();

        let backward = cot.is_some();
        let mut d_sigma: Vec<Vec<T>> = Vec::new();
        let mut d_albedo: Vec<Vec<T>> = Vec::new();
        if backward {
            d_sigma = points.iter().map(|p| vec![T::zero(); p.len()]).collect();
            d_albedo = points.iter().map(|p| vec![T::zero(); p.len() * c]).collect();
        }

        let mut alphas = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n * c);
        let mut dsteps = Vec::with_capacity(n);
        let mut trans = Vec::with_capacity(n);
        let mut da = vec![T::zero(); n];
        let mut dc = vec![T::zero(); n * c];
        for x in 0..w {
            if !hit[x] {
                continue;
            }
            alphas.clear();
            colors.clear();
            dsteps.clear();
            for i in 0..n {
                let k = i % np;
                let j = src[x * n + i];
                let step = T::of(deltas[x * n + i] * lens[x * np + k]);
                dsteps.push(step);
                if j == u32::MAX {
                    alphas.push(T::zero());
                    colors.extend(std::iter::repeat_n(T::zero(), c));
                } else {
                    let tape = &tapes[self.proxies[k].slot];
                    let j = j as usize;
                    alphas.push(super::alpha_from_sigma(tape.sigma[j], step));
                    colors.extend_from_slice(&tape.albedo[j * c..(j + 1) * c]);
                }
            }
            trans.clear();
            let out = &mut color[x * c..(x + 1) * c];
            let t_final = composite_into(&alphas, &colors, c, out, backward.then_some(&mut trans));
            opacity[x] = T::one() - t_final;

            if let Some(cot) = cot {
                let g = &cot[x * c..(x + 1) * c];
                if g.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                composite_backward(&alphas, &colors, &trans, c, g, &mut da, &mut dc);
                for i in 0..n {
                    let j = src[x * n + i];
                    if j == u32::MAX {
                        continue;
                    }
                    let (j, slot) = (j as usize, self.proxies[i % np].slot);
                    let sigma = tapes[slot].sigma[j];
                    // dα/dσ = δ·exp(−σδ)
                    d_sigma[slot][j] += da[i] * dsteps[i] * (-(sigma * dsteps[i])).exp();
                    for (dst, v) in d_albedo[slot][j * c..(j + 1) * c].iter_mut().zip(&dc[i * c..(i + 1) * c]) {
                        *dst += *v;
                    }
                }
            }
        }

        if !backward {
            return Vec::new();
        }
        self.fields
            .iter()
            .enumerate()
            .map(|(s, (_, f))| {
                f.params().map(|p| {
                    let mut g = p.zero_gradient();
                    p.backward(&tapes[s], &d_sigma[s], Some(&d_albedo[s]), &mut g);
                    g
                })
            })
            .collect()
    }

    fn gradients_by_id(&self, grads: Vec<Option<ParamGradient<T>>>) -> Gradients<T> {
        self.fields
            .iter()
            .zip(grads)
            .filter_map(|((id, _), g)| g.map(|g| (id.to_string(), g)))
            .collect()
    }
}

fn pixel_seed(seed: u64, pixel: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ (pixel as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const IDENTITY: RigidPlacement = RigidPlacement::identity();

/// Renders one field in its canonical frame, with the ray range clipped to
/// `object_bounds`.
pub fn render_object<T: Real>(
    field: &Field<T>,
    camera: &Camera,
    object_bounds: &Aabb,
    opts: &RenderOptions,
) -> Result<Image<T>, RenderError> {
    let plan = Plan::new(camera, *object_bounds, *object_bounds, &[(&IDENTITY, "", field)], opts)?;
    Ok(plan.run(None)?.0)
}

/// [`render_object`] over the default canonical box `[-1, 1]³`.
pub fn render_single<T: Real>(field: &Field<T>, camera: &Camera, opts: &RenderOptions) -> Result<Image<T>, RenderError> {
    render_object(field, camera, &Aabb::unit(), opts)
}

/// Gradient of `Σ ⟨cotangent, Ĉ⟩` for a canonical-frame render. `None` for
/// analytic fields.
pub fn render_object_backward<T: Real>(
    field: &Field<T>,
    camera: &Camera,
    object_bounds: &Aabb,
    opts: &RenderOptions,
    cotangent: &[T],
) -> Result<Option<ParamGradient<T>>, RenderError> {
    let plan = Plan::new(camera, *object_bounds, *object_bounds, &[(&IDENTITY, "", field)], opts)?;
    let (_, mut grads) = plan.run(Some(cotangent))?;
    Ok(grads.pop().flatten())
}

/// Composed render: sample `i` of each ray is evaluated by proxy `i mod N`.
pub fn render_composed<T: Real>(
    scene: &SceneDescription,
    fields: &FieldRegistry<T>,
    camera: &Camera,
    opts: &RenderOptions,
) -> Result<Image<T>, RenderError> {
    Ok(Plan::for_scene(scene, fields, camera, opts)?.run(None)?.0)
}

/// Gradient of `Σ ⟨cotangent, Ĉ⟩` for every neural field bound in `scene`.
/// A field shared by several proxies gets the sum over all their samples.
pub fn render_backward<T: Real>(
    scene: &SceneDescription,
    fields: &FieldRegistry<T>,
    camera: &Camera,
    opts: &RenderOptions,
    cotangent: &[T],
) -> Result<Gradients<T>, RenderError> {
    let plan = Plan::for_scene(scene, fields, camera, opts)?;
    let (_, grads) = plan.run(Some(cotangent))?;
    Ok(plan.gradients_by_id(grads))
}

/// Forward render and gradient in one call; the image is the forward pass
/// the gradient was taken at.
pub fn render_with_gradient<T: Real>(
    scene: &SceneDescription,
    fields: &FieldRegistry<T>,
    camera: &Camera,
    opts: &RenderOptions,
    cotangent: &[T],
) -> Result<(Image<T>, Gradients<T>), RenderError> {
    let plan = Plan::for_scene(scene, fields, camera, opts)?;
    let (img, grads) = plan.run(Some(cotangent))?;
    Ok((img, plan.gradients_by_id(grads)))
}
