//! Sample placement along a ray and front-to-back alpha compositing.

use rand::Rng;

use super::Ray;
use crate::field::Real;

/// Sorted sample depths along one ray with their step lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleBatch {
    pub t: Vec<f64>,
    /// `δᵢ = t_{i+1} − tᵢ`; the last one reaches `t_far`.
    pub delta: Vec<f64>,
    /// Proxy index per sample.
    pub assignment: Vec<usize>,
}

impl RaySampleBatch {
    /// Assign sample `i` to proxy `i mod n_obj`.
    pub fn assign_round_robin(&mut self, n_obj: usize) {
        self.assignment = (0..self.t.len()).map(|i| i % n_obj.max(1)).collect();
    }
}

pub(crate) fn fill_samples<R: Rng + ?Sized>(t_near: f64, t_far: f64, n: usize, rng: Option<&mut R>, t: &mut Vec<f64>, delta: &mut Vec<f64>) {
    t.clear();
    delta.clear();
    let step = (t_far - t_near) / n as f64;
    match rng {
        None => t.extend((0..n).map(|i| t_near + (i as f64 + 0.5) * step)),
        Some(rng) => {
            for i in 0..n {
                let u: f64 = rng.random();
                t.push(t_near + (i as f64 + u) * step);
            }
        }
    }
    for i in 0..n {
        let next = if i + 1 < n { t[i + 1] } else { t_far };
        delta.push(next - t[i]);
    }
}

/// Midpoint samples when `rng` is `None`, otherwise one uniform draw per
/// equal sub-interval of `[t_near, t_far]`. All samples go to proxy 0.
pub fn sample_ray<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: Option<&mut R>) -> RaySampleBatch {
    assert!(n >= 1, "need at least one sample");
    assert!(ray.t_near < ray.t_far, "empty ray interval");
    let mut t = Vec::with_capacity(n);
    let mut delta = Vec::with_capacity(n);
    fill_samples(ray.t_near, ray.t_far, n, rng, &mut t, &mut delta);
    RaySampleBatch { t, delta, assignment: vec![0; n] }
}

/// `1 − exp(−σ·δ)`.
pub fn alpha_from_sigma<T: Real>(sigma: T, delta: T) -> T {
    -(-(sigma * delta)).exp_m1()
}

/// `Ĉ = Σ Tᵢ αᵢ cᵢ` with `Tᵢ = Π_{j<i} (1 − αⱼ)`. `colors` is `n × C`
/// row-major. Returns the color and the transmittance after the last sample.
pub fn composite<T: Real>(alphas: &[T], colors: &[T], channels: usize) -> (Vec<T>, T) {
    let mut out = vec![T::zero(); channels];
    let trans = composite_into(alphas, colors, channels, &mut out, None);
    (out, trans)
}

/// Compositing kernel; optionally records `Tᵢ` per sample.
pub(crate) fn composite_into<T: Real>(
    alphas: &[T],
    colors: &[T],
    channels: usize,
    out: &mut [T],
    mut trans_log: Option<&mut Vec<T>>,
) -> T {
    assert_eq!(colors.len(), alphas.len() * channels, "colors must be n × C");
    let mut trans = T::one();
    for (i, &a) in alphas.iter().enumerate() {
        if let Some(log) = trans_log.as_deref_mut() {
            log.push(trans);
        }
        let w = trans * a;
        if w != T::zero() {
            for (o, &c) in out.iter_mut().zip(&colors[i * channels..(i + 1) * channels]) {
                *o += w * c;
            }
        }
        trans *= T::one() - a;
    }
    trans
}

/// Reverse pass of [`composite`] for a color cotangent `g`. Writes `∂/∂αᵢ`
/// into `d_alpha` and `∂/∂cᵢ` into `d_colors`. `trans` holds `Tᵢ`.
pub(crate) fn composite_backward<T: Real>(
    alphas: &[T],
    colors: &[T],
    trans: &[T],
    channels: usize,
    g: &[T],
    d_alpha: &mut [T],
    d_colors: &mut [T],
) {
    // Radiance seen from sample i onward with transmittance reset to one.
    let mut behind = T::zero();
    for i in (0..alphas.len()).rev() {
        let c = &colors[i * channels..(i + 1) * channels];
        let gc: T = c.iter().zip(g).map(|(&a, &b)| a * b).sum();
        d_alpha[i] = trans[i] * (gc - behind);
        let w = trans[i] * alphas[i];
        for (d, &gk) in d_colors[i * channels..(i + 1) * channels].iter_mut().zip(g) {
            *d = w * gk;
        }
        behind = alphas[i] * gc + (T::one() - alphas[i]) * behind;
    }
}
