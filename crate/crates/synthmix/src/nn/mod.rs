//! Minimal convolutional network stack with hand-written backward passes.
//!
//! Everything is generic over [`Float`] so the training path runs in f32
//! while gradient checks run the identical code in f64. All math is
//! single-threaded and deterministic: given the same parameters and input,
//! a forward pass is bit-identical across calls.

pub mod check;
pub mod conv;
pub mod layers;

use ndarray::{Array3, ArrayD};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Scalar type the network stack runs on.
pub trait Float:
    num_traits::Float
    + std::ops::AddAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Raw bit pattern, for value hashing.
    fn bits(self) -> u64;
}

impl Float for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Float for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn bits(self) -> u64 {
        self.to_bits()
    }
}

/// Activations are single-sample (channels, height, width) tensors.
pub type Feat<F> = Array3<F>;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// One named parameter tensor with its gradient and optimizer moments.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    m: ArrayD<F>,
    v: ArrayD<F>,
}

/// Parameters of one network. Each store is stepped by exactly one
/// optimizer call site per iteration, which is what keeps the adversarial
/// updates separated.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    pub name: String,
    params: Vec<Param<F>>,
    adam_t: u64,
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamCfg {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamCfg {
    pub fn new(lr: f64) -> Self {
        AdamCfg {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<F: Float> ParamStore<F> {
    pub fn new(name: impl Into<String>) -> Self {
        ParamStore {
            name: name.into(),
            params: Vec::new(),
            adam_t: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<F>) -> ParamId {
        let grad = ArrayD::zeros(value.raw_dim());
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            m,
            v,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<F> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &ArrayD<F> {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.params[id.0].grad
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// One Adam step over every parameter in the store.
    pub fn adam_step(&mut self, cfg: &AdamCfg) {
        self.adam_t += 1;
        let t = self.adam_t as f64;
        let b1 = F::from_f64(cfg.beta1);
        let b2 = F::from_f64(cfg.beta2);
        let one = F::one();
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let step = F::from_f64(cfg.lr / bc1);
        let inv_bc2 = F::from_f64(1.0 / bc2);
        let eps = F::from_f64(cfg.eps);
        for p in &mut self.params {
            for ((w, &g), (m, v)) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(p.m.iter_mut().zip(p.v.iter_mut()))
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let denom = (*v * inv_bc2).sqrt() + eps;
                *w = *w - step * (*m / denom);
            }
        }
    }

    /// FNV-1a over the bit patterns of all parameter values, in order.
    pub fn hash_values(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for &x in p.value.iter() {
                h ^= x.bits();
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }

    /// All scalars concatenated in declaration order, as f64.
    pub fn flatten_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.iter().map(|v| v.as_f64()))
            .collect()
    }

    /// All gradients concatenated in declaration order, as f64.
    pub fn flatten_grads(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter().map(|v| v.as_f64()))
            .collect()
    }

    /// Read/write a single scalar by flat index; used by gradient checks.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for p in &self.params {
            if idx < p.value.len() {
                return p.value.as_slice().unwrap()[idx].as_f64();
            }
            idx -= p.value.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, v: f64) {
        for p in &mut self.params {
            if idx < p.value.len() {
                p.value.as_slice_mut().unwrap()[idx] = F::from_f64(v);
                return;
            }
            idx -= p.value.len();
        }
        panic!("flat index out of range");
    }

    /// Mutable access by parameter name; panics on unknown names.
    pub fn value_mut_by_name(&mut self, name: &str) -> &mut ArrayD<F> {
        let i = self
            .params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("unknown parameter {}/{name}", self.name));
        &mut self.params[i].value
    }

    /// Replace a parameter's value; shape must match.
    pub fn load_value(&mut self, name: &str, value: ArrayD<F>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::data(format!("unknown parameter {}/{name}", self.name)))?;
        if p.value.shape() != value.shape() {
            return Err(Error::dimension(format!(
                "parameter {}/{name} has shape {:?}, checkpoint holds {:?}",
                self.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

/// Convolution weight init: normal with He-style scaling by fan-in.
pub fn conv_init<F: Float>(
    out_ch: usize,
    in_ch: usize,
    k: usize,
    gain: f64,
    rng: &mut StreamRng,
) -> ArrayD<F> {
    let fan_in = (in_ch * k * k) as f64;
    let std = gain * (2.0 / fan_in).sqrt();
    ArrayD::from_shape_simple_fn(ndarray::IxDyn(&[out_ch, in_ch, k, k]), || {
        F::from_f64(rng.normal() * std)
    })
}

/// Mean of all entries.
pub fn mean_all<F: Float>(x: &Feat<F>) -> F {
    let n = F::from_f64(x.len() as f64);
    x.iter().copied().sum::<F>() / n
}
