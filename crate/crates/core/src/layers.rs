//! Parameterized building blocks shared by the encoders and task heads.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Parameter, Tensor, TensorError};
use crate::scalar::Real;

/// Standard deviation of the normal initializer for weight matrices and embeddings.
pub const INIT_STD: f64 = 0.02;

pub(crate) fn normal_init<T: Real, R: Rng + ?Sized>(
    name: String,
    shape: &[usize],
    rng: &mut R,
) -> Result<Parameter<T>, TensorError> {
    let dist = Normal::new(0.0, INIT_STD).expect("valid normal");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Parameter::new(name, shape, data)
}

pub(crate) fn filled<T: Real>(name: String, shape: &[usize], value: T) -> Result<Parameter<T>, TensorError> {
    let n = shape.iter().product();
    Parameter::new(name, shape, vec![value; n])
}

/// Affine map over the last axis: `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Real> Linear<T> {
    pub fn init<R: Rng + ?Sized>(prefix: &str, inputs: usize, outputs: usize, rng: &mut R) -> Result<Self, TensorError> {
        Ok(Linear {
            weight: normal_init(format!("{prefix}.weight"), &[inputs, outputs], rng)?,
            bias: filled(format!("{prefix}.bias"), &[outputs], T::zero())?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.tensor.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.tensor.shape()[1]
    }

    /// Applies the map to `[.., in]`, returning `[.., out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let shape = x.shape();
        let inner = *shape.last().unwrap();
        if inner != self.in_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                left: shape.to_vec(),
                right: self.weight.tensor.shape().to_vec(),
            });
        }
        let rows = x.len() / inner;
        let y = x
            .reshape(&[rows, inner])?
            .matmul(&self.weight.tensor)?
            .add(&self.bias.tensor)?;
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = self.out_dim();
        y.reshape(&out_shape)
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }
}

/// Gain and bias of a layer normalization.
#[derive(Debug, Clone)]
pub struct LayerNorm<T: Real> {
    pub gain: Parameter<T>,
    pub bias: Parameter<T>,
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Real> LayerNorm<T> {
    pub fn init(prefix: &str, dim: usize) -> Result<Self, TensorError> {
        Ok(LayerNorm {
            gain: filled(format!("{prefix}.gain"), &[dim], T::one())?,
            bias: filled(format!("{prefix}.bias"), &[dim], T::zero())?,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.layer_norm(&self.gain.tensor, &self.bias.tensor, T::lit(self.eps))
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.gain, &self.bias]
    }
}
