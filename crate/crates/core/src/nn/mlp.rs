use rand::Rng;

use crate::nn::adam::AdamStateBase;
use crate::nn::layer::{Activation, DenseCache, DenseGrads, DenseLayerBase};
use crate::scalar::Real;
use crate::tensor::TensorBase;
use crate::CoreError;

/// A stack of dense layers applied in order.
#[derive(Debug, Clone)]
pub struct MlpBase<T: Real> {
    layers: Vec<DenseLayerBase<T>>,
}

/// Per-layer caches from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T: Real> {
    caches: Vec<DenseCache<T>>,
}

/// Gradients for every layer plus the gradient flowing into the input.
#[derive(Debug, Clone)]
pub struct MlpGrads<T: Real> {
    pub layers: Vec<DenseGrads<T>>,
    pub d_input: TensorBase<T>,
}

impl<T: Real> MlpBase<T> {
    /// Builds a network from explicit per-layer sizes and activations.
    /// `dims` lists `in, hidden..., out`, so it must be one longer than
    /// `activations`.
    pub fn init<R: Rng>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self, CoreError> {
        if dims.len() < 2 || dims.len() != activations.len() + 1 {
            return Err(CoreError::Argument(format!(
                "need one activation per layer: {} dims, {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(pair, act)| DenseLayerBase::init(pair[0], pair[1], *act, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { layers })
    }

    /// ReLU hidden layers with an identity output layer.
    pub fn relu_net<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self, CoreError> {
        if dims.len() < 2 {
            return Err(CoreError::Argument("network needs at least one layer".into()));
        }
        let mut acts = vec![Activation::Relu; dims.len() - 2];
        acts.push(Activation::Identity);
        Self::init(dims, &acts, rng)
    }

    pub fn from_layers(layers: Vec<DenseLayerBase<T>>) -> Result<Self, CoreError> {
        if layers.is_empty() {
            return Err(CoreError::Argument("network needs at least one layer".into()));
        }
        for (a, b) in layers.iter().zip(layers.iter().skip(1)) {
            if a.out_dim() != b.in_dim() {
                return Err(CoreError::Dimension(format!(
                    "layer output {} feeds layer expecting {}",
                    a.out_dim(),
                    b.in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayerBase<T>] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward_cached(
        &self,
        x: &TensorBase<T>,
    ) -> Result<(TensorBase<T>, MlpCache<T>), CoreError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward_cached(&cur)?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, MlpCache { caches }))
    }

    pub fn forward(&self, x: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Backpropagates `d_out` through the cached pass, producing parameter
    /// gradients in layer order and the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        d_out: &TensorBase<T>,
    ) -> Result<MlpGrads<T>, CoreError> {
        if cache.caches.len() != self.layers.len() {
            return Err(CoreError::Dimension(
                "cache does not belong to this network".into(),
            ));
        }
        let mut upstream = d_out.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, layer_cache) in self.layers.iter().zip(&cache.caches).rev() {
            let (g, d_in) = layer.backward(layer_cache, &upstream)?;
            grads.push(g);
            upstream = d_in;
        }
        grads.reverse();
        Ok(MlpGrads {
            layers: grads,
            d_input: upstream,
        })
    }

    /// Applies one optimizer update per parameter, naming each tensor
    /// `{prefix}.{layer}.weight` / `{prefix}.{layer}.bias`. The caller is
    /// responsible for `opt.begin_step()`.
    pub fn apply_grads(
        &mut self,
        prefix: &str,
        grads: &MlpGrads<T>,
        opt: &mut AdamStateBase<T>,
    ) -> Result<(), CoreError> {
        if grads.layers.len() != self.layers.len() {
            return Err(CoreError::Dimension(
                "gradient set does not belong to this network".into(),
            ));
        }
        for (i, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            opt.update(&format!("{prefix}.{i}.weight"), &mut layer.weight, &g.d_weight)?;
            opt.update(&format!("{prefix}.{i}.bias"), &mut layer.bias, &g.d_bias)?;
        }
        Ok(())
    }
}
