use std::ops::Range;

use crate::field::Real;

pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam step. Only indices in `active` (all when `None`)
/// are read or written, moments included.
pub fn adam_update<T: Real>(
    params: &mut [T],
    grad: &[T],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    active: Option<Range<usize>>,
) {
    assert_eq!(params.len(), grad.len(), "gradient length differs from params");
    assert_eq!(params.len(), state.m.len(), "optimizer state length differs from params");
    state.step += 1;
    let (b1, b2) = betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let range = active.unwrap_or(0..params.len());
    for i in range {
        let g = grad[i].as_f64();
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        if m == 0.0 {
            continue;
        }
        let step = lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPSILON);
        params[i] = T::of(params[i].as_f64() - step);
    }
}
