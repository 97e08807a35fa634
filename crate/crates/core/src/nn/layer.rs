use rand::Rng;

use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Elementwise nonlinearity applied after the affine map of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub(crate) fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Identity => v,
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Derivative evaluated at the pre-activation value. ReLU uses the
    /// subgradient 0 at exactly zero.
    pub(crate) fn deriv<T: Real>(self, pre: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self, CoreError> {
        match code {
            0 => Ok(Activation::Identity),
            1 => Ok(Activation::Relu),
            other => Err(CoreError::Checkpoint(format!(
                "unknown activation code {other}"
            ))),
        }
    }
}

/// Fully connected layer. Inputs are batched row-wise: `x` has shape
/// `[batch, in_dim]`, the output `[batch, out_dim]`.
#[derive(Debug, Clone)]
pub struct DenseLayerBase<T: Real> {
    pub weight: TensorBase<T>,
    pub bias: TensorBase<T>,
    pub activation: Activation,
}

/// Values saved by a forward pass that the backward pass needs.
#[derive(Debug, Clone)]
pub struct DenseCache<T: Real> {
    pub(crate) input: TensorBase<T>,
    pub(crate) pre_activation: TensorBase<T>,
}

/// Parameter gradients for one layer.
#[derive(Debug, Clone)]
pub struct DenseGrads<T: Real> {
    pub d_weight: TensorBase<T>,
    pub d_bias: TensorBase<T>,
}

impl<T: Real> DenseLayerBase<T> {
    /// Initializes weight and bias uniformly in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`.
    pub fn init<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, CoreError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(CoreError::Argument(
                "layer dimensions must be positive".into(),
            ));
        }
        let bound = (1.0 / in_dim as f64).sqrt();
        let mut draw = || real::<T>(rng.gen_range(-bound..bound));
        let weight = (0..out_dim * in_dim).map(|_| draw()).collect::<Vec<_>>();
        let bias = (0..out_dim).map(|_| draw()).collect::<Vec<_>>();
        Ok(Self {
            weight: TensorBase::from_parts(vec![out_dim, in_dim], weight),
            bias: TensorBase::from_parts(vec![out_dim], bias),
            activation,
        })
    }

    pub fn from_parts(
        weight: TensorBase<T>,
        bias: TensorBase<T>,
        activation: Activation,
    ) -> Result<Self, CoreError> {
        if weight.rank() != 2 || bias.rank() != 1 {
            return Err(CoreError::Dimension(format!(
                "dense layer expects rank-2 weight and rank-1 bias, got {:?} and {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        if weight.shape()[0] != bias.shape()[0] {
            return Err(CoreError::Dimension(format!(
                "weight rows {} do not match bias length {}",
                weight.shape()[0],
                bias.shape()[0]
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward_cached(
        &self,
        x: &TensorBase<T>,
    ) -> Result<(TensorBase<T>, DenseCache<T>), CoreError> {
        let (_, cols) = x.rows_cols();
        if cols != self.in_dim() {
            return Err(CoreError::Dimension(format!(
                "layer expects {} input features, got {}",
                self.in_dim(),
                cols
            )));
        }
        let mut pre = x.matmul_bt(&self.weight);
        let out_dim = self.out_dim();
        for row in pre.as_mut_slice().chunks_exact_mut(out_dim) {
            for (v, b) in row.iter_mut().zip(self.bias.as_slice()) {
                *v += *b;
            }
        }
        let out = pre.map(|v| self.activation.apply(v));
        Ok((
            out,
            DenseCache {
                input: x.clone(),
                pre_activation: pre,
            },
        ))
    }

    pub fn forward(&self, x: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    /// `d_out` must match the forward output shape of the cached pass.
    pub fn backward(
        &self,
        cache: &DenseCache<T>,
        d_out: &TensorBase<T>,
    ) -> Result<(DenseGrads<T>, TensorBase<T>), CoreError> {
        if d_out.shape() != cache.pre_activation.shape() {
            return Err(CoreError::Dimension(format!(
                "upstream gradient shape {:?} does not match forward output {:?}",
                d_out.shape(),
                cache.pre_activation.shape()
            )));
        }
        let mut d_pre = d_out.clone();
        for (g, p) in d_pre
            .as_mut_slice()
            .iter_mut()
            .zip(cache.pre_activation.as_slice())
        {
            *g *= self.activation.deriv(*p);
        }
        let d_weight = d_pre.matmul_at(&cache.input);
        let out_dim = self.out_dim();
        let mut d_bias = vec![T::zero(); out_dim];
        for row in d_pre.as_slice().chunks_exact(out_dim) {
            for (acc, g) in d_bias.iter_mut().zip(row) {
                *acc += *g;
            }
        }
        let d_input = d_pre.matmul(&self.weight);
        Ok((
            DenseGrads {
                d_weight,
                d_bias: TensorBase::from_parts(vec![out_dim], d_bias),
            },
            d_input,
        ))
    }
}
