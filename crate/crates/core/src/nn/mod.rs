//! Minimal dense neural network stack: layers, MLPs, Adam, and the loss
//! functions used by the training pipelines.
//!
//! Forward passes return a cache object that the corresponding backward pass
//! consumes, so gradients can only be requested for a pass that actually ran.

mod adam;
mod layer;
mod loss;
mod mlp;

pub use adam::AdamStateBase;
pub use layer::{Activation, DenseCache, DenseGrads, DenseLayerBase};
pub use loss::{
    batch_accuracy, cross_entropy, kd_loss, kl_divergence, softmax, softmax_tau,
};
pub use mlp::{MlpBase, MlpCache, MlpGrads};
