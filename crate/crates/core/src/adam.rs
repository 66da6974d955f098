//! Adam optimizer over named parameters.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::unet::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates per trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    /// Zero moments for every trainable tensor of `params`.
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = |(n, t): (&String, &crate::Tensor<T>)| (n.clone(), vec![T::zero(); t.len()]);
        Self {
            m: params.trainable().map(zeros).collect(),
            v: params.trainable().map(zeros).collect(),
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter:
///
/// ```text
/// m ← β1·m + (1 − β1)·g        v ← β2·v + (1 − β2)·g²
/// p ← p − lr · m̂ / (√v̂ + ε)    m̂ = m / (1 − β1ᵗ), v̂ = v / (1 − β2ᵗ)
/// ```
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    let names: Vec<String> = params.trainable().map(|(n, _)| n.clone()).collect();
    for n in &names {
        if !grads.contains_key(n) {
            return Err(Error::MissingGradient(n.clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64(state.beta1), T::from_f64(state.beta2));
    let (c1, c2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::from_f64(1.0 - num_traits::Float::powi(state.beta1, t));
    let bc2 = T::from_f64(1.0 - num_traits::Float::powi(state.beta2, t));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(state.eps));
    for n in &names {
        let g = &grads[n];
        let p = params.get_mut(n)?;
        let m = state.m.get_mut(n).ok_or_else(|| Error::UnknownParameter(n.clone()))?;
        let v = state.v.get_mut(n).ok_or_else(|| Error::UnknownParameter(n.clone()))?;
        for (((p, m), v), &g) in p.values_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
