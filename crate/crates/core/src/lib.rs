//! Numeric core of the split-computing pipeline: dense tensors, MLP
//! forward/backward, Adam, distillation losses, compressed-sensing solvers
//! (Gaussian measurement + ISTA, VAE latent search, the learned HECSA
//! autoencoder), the quantizer/prior pair behind the transmitted latent,
//! and the two-stage bottleneck distillation that assembles a split model.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `f32`
//! aliases at this root are the artifact-facing types — checkpoints and wire
//! payloads are always 32-bit. The `f64` instantiation exists so tests can
//! run the same code against high-precision finite-difference oracles.

pub mod checkpoint;
pub mod cs;
pub mod distill;
pub mod hecsa;
pub mod nn;
pub mod prior;
pub mod quantize;
mod scalar;
pub mod tensor;

pub use quantize::QuantizedLatent;
pub use scalar::Real;
pub use tensor::TensorBase;

/// Artifact-facing tensor: 32-bit reals.
pub type Tensor = TensorBase<f32>;
pub type DenseLayer = nn::DenseLayerBase<f32>;
pub type Mlp = nn::MlpBase<f32>;
pub type AdamState = nn::AdamStateBase<f32>;
pub type MeasurementOperator = cs::MeasurementOperatorBase<f32>;
pub type HecsaModel = hecsa::HecsaModelBase<f32>;
pub type VaeModel = cs::VaeModelBase<f32>;
pub type FactorizedPrior = prior::FactorizedPriorBase<f32>;
pub type TeacherModel = distill::TeacherModelBase<f32>;
pub type BottleneckModel = distill::BottleneckModelBase<f32>;
pub type SplitModel = distill::SplitModelBase<f32>;


use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Codec(#[from] hecsb_codec::CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
