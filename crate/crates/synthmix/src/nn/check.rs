//! Central finite-difference helpers. These only ever call forward code,
//! so they stay independent of the hand-written backward passes they are
//! used to verify.

use super::{Feat, ParamStore};

/// Central-difference gradient of `loss` with respect to every scalar in
/// `store`, in flat declaration order. `loss` must treat the store as its
/// only varying input.
pub fn finite_diff_param_grad(
    store: &mut ParamStore<f64>,
    eps: f64,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> Vec<f64> {
    let n = store.num_scalars();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = store.get_flat(i);
        store.set_flat(i, orig + eps);
        let lp = loss(store);
        store.set_flat(i, orig - eps);
        let lm = loss(store);
        store.set_flat(i, orig);
        grad.push((lp - lm) / (2.0 * eps));
    }
    grad
}

/// Central-difference gradient with respect to an input tensor.
pub fn finite_diff_input_grad(
    x: &Feat<f64>,
    eps: f64,
    mut loss: impl FnMut(&Feat<f64>) -> f64,
) -> Vec<f64> {
    let mut xp = x.clone();
    let n = xp.len();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = xp.as_slice().unwrap()[i];
        xp.as_slice_mut().unwrap()[i] = orig + eps;
        let lp = loss(&xp);
        xp.as_slice_mut().unwrap()[i] = orig - eps;
        let lm = loss(&xp);
        xp.as_slice_mut().unwrap()[i] = orig;
        grad.push((lp - lm) / (2.0 * eps));
    }
    grad
}

/// Norm-based relative error between two gradient vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = norm(a).max(norm(b)).max(1e-30);
    norm(&diff) / denom
}
