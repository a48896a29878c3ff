//! The trainable field: positional encoding, a two-layer trunk, a density head
//! and a separate two-layer albedo head, with batched forward and reverse passes.

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::real::{matmul, MatRef, Real};

pub const MAX_ENCODING_LEVELS: usize = 12;

/// Network shape. `hidden` = H, `levels` = L, `channels` = C.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub hidden: usize,
    pub levels: usize,
    pub channels: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { hidden: 64, levels: 6, channels: 3 }
    }
}

impl FieldConfig {
    pub fn new(hidden: usize, levels: usize, channels: usize) -> Self {
        assert!(levels <= MAX_ENCODING_LEVELS, "at most {MAX_ENCODING_LEVELS} encoding levels");
        assert!(hidden > 0 && channels > 0, "hidden width and channels must be positive");
        Self { hidden, levels, channels }
    }

    pub fn encoding_dim(&self) -> usize {
        3 + 6 * self.levels
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Which disjoint parameter subset a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Trunk,
    Density,
    Albedo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every tensor in the flat parameter vector, in checkpoint order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub tensors: [TensorSpec; 10],
    pub total: usize,
}

// Tensor indices into Layout::tensors.
const T0_W: usize = 0;
const T0_B: usize = 1;
const T1_W: usize = 2;
const T1_B: usize = 3;
const D_W: usize = 4;
const D_B: usize = 5;
const A0_W: usize = 6;
const A0_B: usize = 7;
const A1_W: usize = 8;
const A1_B: usize = 9;

impl Layout {
    fn new(cfg: &FieldConfig) -> Self {
        let (e, h, c) = (cfg.encoding_dim(), cfg.hidden, cfg.channels);
        let shapes: [(&'static str, ParamGroup, usize, usize); 10] = [
            ("trunk.0.weight", ParamGroup::Trunk, e, h),
            ("trunk.0.bias", ParamGroup::Trunk, 1, h),
            ("trunk.1.weight", ParamGroup::Trunk, h, h),
            ("trunk.1.bias", ParamGroup::Trunk, 1, h),
            ("density.weight", ParamGroup::Density, h, 1),
            ("density.bias", ParamGroup::Density, 1, 1),
            ("albedo.0.weight", ParamGroup::Albedo, h, h),
            ("albedo.0.bias", ParamGroup::Albedo, 1, h),
            ("albedo.1.weight", ParamGroup::Albedo, h, c),
            ("albedo.1.bias", ParamGroup::Albedo, 1, c),
        ];
        let mut offset = 0;
        let tensors = shapes.map(|(name, group, rows, cols)| {
            let t = TensorSpec { name, group, rows, cols, offset };
            offset += rows * cols;
            t
        });
        Self { tensors, total: offset }
    }

    /// Contiguous range of a parameter group. Groups are laid out in order.
    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        let mut it = self.tensors.iter().filter(|t| t.group == group);
        let first = it.next().expect("every group has tensors");
        let last = it.next_back().unwrap_or(first);
        first.offset..last.offset + last.len()
    }
}

/// Weights of one field, stored flat in checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<T> {
    config: FieldConfig,
    layout: Layout,
    pub data: Vec<T>,
}

/// Gradient with the same shape as [`FieldParams`]; accumulates by addition.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient<T> {
    config: FieldConfig,
    pub data: Vec<T>,
}

impl<T: Real> ParamGradient<T> {
    pub fn zeros(config: FieldConfig) -> Self {
        Self { config, data: vec![T::zero(); config.layout().total] }
    }

    pub fn config(&self) -> FieldConfig {
        self.config
    }

    pub fn add_assign(&mut self, other: &ParamGradient<T>) {
        assert_eq!(self.config, other.config, "gradient shapes differ");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += *b);
    }

    pub fn add_scaled(&mut self, other: &ParamGradient<T>, s: T) {
        assert_eq!(self.config, other.config, "gradient shapes differ");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += *b * s);
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|a| *a *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == T::zero())
    }

    /// Zero every entry outside `keep`.
    pub fn retain_range(&mut self, keep: Range<usize>) {
        for (i, v) in self.data.iter_mut().enumerate() {
            if !keep.contains(&i) {
                *v = T::zero();
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }
}

/// Single-point output: density per canonical unit length and per-channel albedo.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput<T> {
    pub sigma: T,
    pub albedo: Vec<T>,
}

/// Per-point reverse-mode seed.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldCotangent<T> {
    pub d_sigma: T,
    pub d_albedo: Vec<T>,
}

fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn silu<T: Real>(x: T) -> T {
    x * logistic(x)
}

fn silu_grad<T: Real>(x: T) -> T {
    let s = logistic(x);
    s * (T::one() + x * (T::one() - s))
}

/// `[p, sin(2⁰πp), cos(2⁰πp), …, sin(2^{L−1}πp), cos(2^{L−1}πp)]`.
pub fn positional_encoding<T: Real>(p: [T; 3], levels: usize) -> Vec<T> {
    assert!(levels <= MAX_ENCODING_LEVELS, "at most {MAX_ENCODING_LEVELS} encoding levels");
    let mut out = vec![T::zero(); 3 + 6 * levels];
    encode_into(p, levels, &mut out);
    out
}

fn encode_into<T: Real>(p: [T; 3], levels: usize, out: &mut [T]) {
    out[..3].copy_from_slice(&p);
    let mut freq = T::of(PI);
    for l in 0..levels {
        let base = 3 + 6 * l;
        for a in 0..3 {
            let (s, c) = (p[a] * freq).sin_cos();
            out[base + a] = s;
            out[base + 3 + a] = c;
        }
        freq = freq + freq;
    }
}

/// Intermediate activations of a batched forward pass, kept for the reverse pass.
#[derive(Clone, Debug, Default)]
pub struct FieldTape<T> {
    n: usize,
    enc: Vec<T>,
    z1: Vec<T>,
    h1: Vec<T>,
    z2: Vec<T>,
    h2: Vec<T>,
    zs: Vec<T>,
    za1: Vec<T>,
    ha1: Vec<T>,
    /// Density per point.
    pub sigma: Vec<T>,
    /// Albedo, `n × C` row-major; empty when evaluated density-only.
    pub albedo: Vec<T>,
}

impl<T: Real> FieldTape<T> {
    /// Tape carrying outputs only; reverse passes through it are a no-op.
    pub fn from_outputs(sigma: Vec<T>, albedo: Vec<T>) -> Self {
        Self { n: sigma.len(), sigma, albedo, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn has_albedo(&self) -> bool {
        !self.albedo.is_empty() || self.n == 0
    }
}

fn dense_forward<T: Real>(x: &[T], n: usize, w: &[T], b: &[T], rows: usize, cols: usize, out: &mut Vec<T>) {
    out.clear();
    out.reserve(n * cols);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    matmul(MatRef::new(x, n, rows), MatRef::new(w, rows, cols), out, T::one());
}

/// Accumulates `dW += xᵀ·dy`, `db += colsum(dy)` and optionally writes `dx = dy·Wᵀ`.
#[allow(clippy::too_many_arguments)]
fn dense_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    w: &[T],
    rows: usize,
    cols: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut Vec<T>>,
) {
    matmul(MatRef::t(x, rows, n), MatRef::new(dy, n, cols), dw, T::one());
    for row in dy.chunks_exact(cols) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
    }
    if let Some(dx) = dx {
        dx.clear();
        dx.resize(n * rows, T::zero());
        matmul(MatRef::new(dy, n, cols), MatRef::t(w, cols, rows), dx, T::zero());
    }
}

impl<T: Real> FieldParams<T> {
    /// Uniform(−1/√fan_in, 1/√fan_in) initialization from a seeded generator.
    pub fn init(seed: u64, config: FieldConfig) -> Self {
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![T::zero(); layout.total];
        for (i, t) in layout.tensors.iter().enumerate() {
            // Biases follow their weight, which always precedes them.
            let fan_in = if t.rows == 1 { layout.tensors[i - 1].rows } else { t.rows };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut data[t.range()] {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        Self { config, layout, data }
    }

    pub fn from_data(config: FieldConfig, data: Vec<T>) -> Self {
        let layout = config.layout();
        assert_eq!(data.len(), layout.total, "parameter vector length does not match config");
        Self { config, layout, data }
    }

    pub fn config(&self) -> FieldConfig {
        self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensor(&self, idx: usize) -> &[T] {
        &self.data[self.layout.tensors[idx].range()]
    }

    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        self.layout.group_range(group)
    }

    /// Zero a whole group (e.g. the density head, to get σ = ln 2 everywhere).
    pub fn zero_group(&mut self, group: ParamGroup) {
        let r = self.group_range(group);
        self.data[r].iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn zero_gradient(&self) -> ParamGradient<T> {
        ParamGradient::zeros(self.config)
    }

    pub fn cast<U: Real>(&self) -> FieldParams<U> {
        FieldParams {
            config: self.config,
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batched forward pass over canonical-space points. Coordinates are
    /// clamped to `[-1, 1]` before encoding.
    pub fn forward(&self, points: &[[T; 3]], with_albedo: bool) -> FieldTape<T> {
        let mut tape = FieldTape::default();
        self.forward_into(points, with_albedo, &mut tape);
        tape
    }

    pub fn forward_into(&self, points: &[[T; 3]], with_albedo: bool, tape: &mut FieldTape<T>) {
        let cfg = self.config;
        let (e, h, c) = (cfg.encoding_dim(), cfg.hidden, cfg.channels);
        let n = points.len();
        tape.n = n;
        tape.enc.clear();
        tape.enc.resize(n * e, T::zero());
        let (lo, hi) = (-T::one(), T::one());
        for (row, p) in tape.enc.chunks_exact_mut(e).zip(points) {
            let q = [p[0].max(lo).min(hi), p[1].max(lo).min(hi), p[2].max(lo).min(hi)];
            encode_into(q, cfg.levels, row);
        }

        dense_forward(&tape.enc, n, self.tensor(T0_W), self.tensor(T0_B), e, h, &mut tape.z1);
        tape.h1.clear();
        tape.h1.extend(tape.z1.iter().map(|&z| silu(z)));
        dense_forward(&tape.h1, n, self.tensor(T1_W), self.tensor(T1_B), h, h, &mut tape.z2);
        tape.h2.clear();
        tape.h2.extend(tape.z2.iter().map(|&z| silu(z)));

        dense_forward(&tape.h2, n, self.tensor(D_W), self.tensor(D_B), h, 1, &mut tape.zs);
        tape.sigma.clear();
        tape.sigma.extend(tape.zs.iter().map(|&z| softplus(z)));

        tape.albedo.clear();
        tape.za1.clear();
        tape.ha1.clear();
        if with_albedo && n > 0 {
            dense_forward(&tape.h2, n, self.tensor(A0_W), self.tensor(A0_B), h, h, &mut tape.za1);
            tape.ha1.extend(tape.za1.iter().map(|&z| silu(z)));
            dense_forward(&tape.ha1, n, self.tensor(A1_W), self.tensor(A1_B), h, c, &mut tape.albedo);
            tape.albedo.iter_mut().for_each(|v| *v = logistic(*v));
        }
    }

    /// Accumulates the gradient of `Σ d_sigma·σ + ⟨d_albedo, albedo⟩` into `grad`.
    /// `d_albedo` requires a tape evaluated with albedo.
    pub fn backward(&self, tape: &FieldTape<T>, d_sigma: &[T], d_albedo: Option<&[T]>, grad: &mut ParamGradient<T>) {
        let cfg = self.config;
        assert_eq!(grad.config, cfg, "gradient shape differs from params");
        let (e, h, c) = (cfg.encoding_dim(), cfg.hidden, cfg.channels);
        let n = tape.n;
        assert_eq!(d_sigma.len(), n);
        if n == 0 {
            return;
        }
        let lay = &self.layout.tensors;
        let g = &mut grad.data;

        // Density head.
        let dzs: Vec<T> = tape.zs.iter().zip(d_sigma).map(|(&z, &d)| d * logistic(z)).collect();
        let mut dh2 = vec![T::zero(); n * h];
        {
            let (dw, db) = split_two(g, lay[D_W].range(), lay[D_B].range());
            dense_backward(&tape.h2, &dzs, n, self.tensor(D_W), h, 1, dw, db, Some(&mut dh2));
        }

        // Albedo head.
        if let Some(d_alb) = d_albedo {
            assert!(!tape.albedo.is_empty(), "tape was evaluated without albedo");
            assert_eq!(d_alb.len(), n * c);
            let dza2: Vec<T> = tape.albedo.iter().zip(d_alb).map(|(&a, &d)| d * a * (T::one() - a)).collect();
            let mut dha1 = Vec::new();
            {
                let (dw, db) = split_two(g, lay[A1_W].range(), lay[A1_B].range());
                dense_backward(&tape.ha1, &dza2, n, self.tensor(A1_W), h, c, dw, db, Some(&mut dha1));
            }
            let dza1: Vec<T> = dha1.iter().zip(&tape.za1).map(|(&d, &z)| d * silu_grad(z)).collect();
            let mut dh2_a = Vec::new();
            {
                let (dw, db) = split_two(g, lay[A0_W].range(), lay[A0_B].range());
                dense_backward(&tape.h2, &dza1, n, self.tensor(A0_W), h, h, dw, db, Some(&mut dh2_a));
            }
            dh2.iter_mut().zip(&dh2_a).for_each(|(a, b)| *a += *b);
        }

        // Trunk.
        let dz2: Vec<T> = dh2.iter().zip(&tape.z2).map(|(&d, &z)| d * silu_grad(z)).collect();
        let mut dh1 = Vec::new();
        {
            let (dw, db) = split_two(g, lay[T1_W].range(), lay[T1_B].range());
            dense_backward(&tape.h1, &dz2, n, self.tensor(T1_W), h, h, dw, db, Some(&mut dh1));
        }
        let dz1: Vec<T> = dh1.iter().zip(&tape.z1).map(|(&d, &z)| d * silu_grad(z)).collect();
        let (dw, db) = split_two(g, lay[T0_W].range(), lay[T0_B].range());
        dense_backward(&tape.enc, &dz1, n, self.tensor(T0_W), e, h, dw, db, None);
    }

    pub fn eval(&self, p: [T; 3]) -> FieldOutput<T> {
        let tape = self.forward(&[p], true);
        FieldOutput { sigma: tape.sigma[0], albedo: tape.albedo }
    }
}

/// Two disjoint mutable subslices; `a` must precede `b`.
fn split_two<T>(data: &mut [T], a: Range<usize>, b: Range<usize>) -> (&mut [T], &mut [T]) {
    assert!(a.end <= b.start);
    let (left, right) = data.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}

pub fn eval_field<T: Real>(params: &FieldParams<T>, p: [T; 3]) -> FieldOutput<T> {
    params.eval(p)
}

pub fn eval_field_backward<T: Real>(params: &FieldParams<T>, p: [T; 3], cot: &FieldCotangent<T>) -> ParamGradient<T> {
    let tape = params.forward(&[p], true);
    let mut g = params.zero_gradient();
    params.backward(&tape, &[cot.d_sigma], Some(&cot.d_albedo), &mut g);
    g
}

pub fn init_field<T: Real>(seed: u64, hidden: usize, levels: usize, channels: usize) -> FieldParams<T> {
    FieldParams::init(seed, FieldConfig::new(hidden, levels, channels))
}
