//! Minimal neural-network stack with hand-written backward passes.
//!
//! All learnable tensors live in a flat [`Params`] store; layers keep only
//! [`ParamId`] handles plus shape metadata. Backward passes accumulate into a
//! separate [`GradStore`], which keeps the model immutable during the
//! backward sweep and makes batch-parallel gradient accumulation (fixed chunk
//! order, bit-exact results) straightforward. The scalar type is generic so
//! gradient checks run in f64 while training runs in f32.

mod check;
#[cfg(test)]
mod tests;
mod conv;
mod layers;
mod opt;

pub use check::{central_difference_grads, max_relative_error};
pub use conv::{
    Conv1d, Conv1dCache, Conv2d, Conv2dCache, ConvTranspose1d, ConvTranspose1dCache, MaxPool2d,
    MaxPool2dCache,
};
pub use layers::{
    mish, mish_backward, relu, relu_backward, sinusoidal_embedding, GroupNorm, GroupNormCache,
    Linear, SpatialSoftmax, SpatialSoftmaxCache,
};
pub use opt::{AdamW, Ema};

use ndarray::{ArrayD, NdFloat};

/// Floating scalar usable across the stack (f32 for training/inference,
/// f64 for finite-difference verification).
pub trait Scalar: NdFloat {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Casts an f64 constant into the active scalar type.
#[inline]
pub fn sc<T: Scalar>(x: f64) -> T {
    T::from(x).expect("constant converts to scalar")
}

/// Handle to one learnable tensor inside a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Flat store of named learnable tensors.
#[derive(Debug, Clone)]
pub struct Params<T> {
    values: Vec<ArrayD<T>>,
    names: Vec<String>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self { values: Vec::new(), names: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.values.push(value);
        self.names.push(name.into());
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn element_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn values(&self) -> &[ArrayD<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<T>] {
        &mut self.values
    }

    /// Casts every tensor into another scalar type.
    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            values: self.values.iter().map(|v| v.mapv(|x| U::from(x).unwrap())).collect(),
            names: self.names.clone(),
        }
    }
}

impl<T: Scalar> Default for Params<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient accumulator aligned with a [`Params`] store.
#[derive(Debug, Clone)]
pub struct GradStore<T> {
    grads: Vec<ArrayD<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn zeros_like(params: &Params<T>) -> Self {
        Self { grads: params.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.grads[id.0]
    }

    pub fn values(&self) -> &[ArrayD<T>] {
        &self.grads
    }

    /// Adds `other` into `self`, tensor by tensor in index order.
    pub fn merge(&mut self, other: &GradStore<T>) {
        for (dst, src) in self.grads.iter_mut().zip(other.grads.iter()) {
            *dst += src;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

/// Uniform init in [-bound, bound] with bound = 1/sqrt(fan_in), the
/// convention of the reference convolutional baselines.
pub fn fan_in_uniform<T: Scalar, R: rand::Rng>(
    rng: &mut R,
    fan_in: usize,
    shape: &[usize],
) -> ArrayD<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    ArrayD::from_shape_simple_fn(shape.to_vec(), || sc(rng.random_range(-bound..bound)))
}
