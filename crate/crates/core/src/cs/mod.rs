//! Compressed-sensing recovery: the Gaussian measurement operator, a batched
//! ISTA solver for the l1-regularized least-squares baseline, and a VAE
//! generative-prior baseline recovered by latent gradient search.

mod ista;
mod operator;
mod report;
mod vae;

pub use ista::{ista_lasso, power_iteration, select_lambda, IstaTrace};
pub use operator::MeasurementOperatorBase;
pub use report::{recon_error, ReconReport, ReconRow, ReconSummary};
pub use vae::{train_vae, vae_reconstruct, LatentSearchConfig, VaeModelBase};
