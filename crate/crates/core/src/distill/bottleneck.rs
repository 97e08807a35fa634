use std::fmt::Write as _;

use rand::Rng;

use crate::distill::teacher::TeacherModelBase;
use crate::nn::{AdamStateBase, MlpBase, MlpGrads};
use crate::prior::FactorizedPriorBase;
use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Stage-1 bottleneck: an encoder from the input to a low-dimensional
/// latent, a decoder reproducing the teacher's hidden representation, and a
/// factorized prior pricing the latent's rate.
#[derive(Debug, Clone)]
pub struct BottleneckModelBase<T: Real> {
    pub encoder: MlpBase<T>,
    pub decoder: MlpBase<T>,
    pub prior: FactorizedPriorBase<T>,
}

impl<T: Real> BottleneckModelBase<T> {
    /// Encoder `input -> hidden -> latent`, decoder `latent -> hidden ->
    /// teacher_hidden`, standard-logistic prior.
    pub fn init<R: Rng>(
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        teacher_hidden: usize,
        rng: &mut R,
    ) -> Result<Self, CoreError> {
        let encoder = MlpBase::relu_net(&[input_dim, hidden_dim, latent_dim], rng)?;
        let decoder = MlpBase::relu_net(&[latent_dim, hidden_dim, teacher_hidden], rng)?;
        let prior = FactorizedPriorBase::standard(latent_dim)?;
        Ok(Self {
            encoder,
            decoder,
            prior,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }
}

/// Scalar pieces of one rate-distortion evaluation. Rate is in nats per
/// sample; `loss = distortion + beta * rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdParts {
    pub loss: f64,
    pub distortion: f64,
    pub rate_nats: f64,
}

pub struct RdGrads<T: Real> {
    pub(crate) encoder: MlpGrads<T>,
    pub(crate) decoder: MlpGrads<T>,
    pub(crate) d_mu: TensorBase<T>,
    pub(crate) d_log_s: TensorBase<T>,
}

/// Rate-distortion objective on a batch:
/// `mean(0.5 ||h - dec(z)||^2) + beta * mean(-sum log f(z))` with
/// `z = enc(x) + noise`. The additive noise (uniform in `[-1/2, 1/2]` during
/// training) stands in for quantization and is passed explicitly so the
/// evaluation is reproducible.
pub fn rd_loss_and_grads<T: Real>(
    model: &BottleneckModelBase<T>,
    x: &TensorBase<T>,
    h_target: &TensorBase<T>,
    noise: &TensorBase<T>,
    beta: f64,
) -> Result<(RdParts, RdGrads<T>), CoreError> {
    let (batch, _) = x.rows_cols();
    let latent = model.latent_dim();
    if noise.shape() != [batch, latent] {
        return Err(CoreError::Dimension(format!(
            "noise shape {:?} does not match [batch, latent] = [{batch}, {latent}]",
            noise.shape()
        )));
    }
    if h_target.shape() != [batch, model.decoder.out_dim()] {
        return Err(CoreError::Dimension(format!(
            "target shape {:?} does not match [batch, hidden] = [{batch}, {}]",
            h_target.shape(),
            model.decoder.out_dim()
        )));
    }
    if beta < 0.0 {
        return Err(CoreError::Argument(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    let (z_clean, enc_cache) = model.encoder.forward_cached(x)?;
    let z = z_clean.add(noise);
    let (h_hat, dec_cache) = model.decoder.forward_cached(&z)?;

    let mut dist = 0.0f64;
    for (a, b) in h_hat.as_slice().iter().zip(h_target.as_slice()) {
        let d = a.to_f64_lossy() - b.to_f64_lossy();
        dist += d * d;
    }
    let distortion = 0.5 * dist / batch as f64;
    let (log_density, prior_grads) = model.prior.log_density_grads(&z)?;
    let rate_nats = -log_density / batch as f64;
    let loss = distortion + beta * rate_nats;

    let inv_batch = real::<T>(1.0 / batch as f64);
    let mut d_h_hat = h_hat;
    for (dv, hv) in d_h_hat.as_mut_slice().iter_mut().zip(h_target.as_slice()) {
        *dv = (*dv - *hv) * inv_batch;
    }
    let dec_grads = model.decoder.backward(&dec_cache, &d_h_hat)?;

    // Rate gradient: d(beta * rate)/dz = -beta/batch * dlogf/dz.
    let neg_beta_scaled = real::<T>(-beta / batch as f64);
    let mut d_z = dec_grads.d_input.clone();
    for (dv, pg) in d_z.as_mut_slice().iter_mut().zip(prior_grads.d_z.as_slice()) {
        *dv += neg_beta_scaled * *pg;
    }
    let enc_grads = model.encoder.backward(&enc_cache, &d_z)?;
    let d_mu = prior_grads.d_mu.map(|v| neg_beta_scaled * v);
    let d_log_s = prior_grads.d_log_s.map(|v| neg_beta_scaled * v);

    Ok((
        RdParts {
            loss,
            distortion,
            rate_nats,
        },
        RdGrads {
            encoder: enc_grads,
            decoder: dec_grads,
            d_mu,
            d_log_s,
        },
    ))
}

/// Stage-1 hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct BottleneckConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Rate weight in the objective.
    pub beta: f64,
}

impl Default for BottleneckConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            beta: 0.01,
        }
    }
}

/// One epoch of stage-1 training state.
#[derive(Debug, Clone, PartialEq)]
pub struct RdLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub distortion: f64,
    pub rate_nats: f64,
}

/// Renders stage-1 epochs as `epoch,loss,distortion,rate_nats`.
pub fn rd_log_csv(rows: &[RdLogRow]) -> String {
    let mut out = String::from("epoch,loss,distortion,rate_nats\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            r.epoch, r.loss, r.distortion, r.rate_nats
        );
    }
    out
}

/// Trains encoder, decoder, and prior against the frozen teacher's hidden
/// representation, with uniform `[-1/2, 1/2]` noise on the latent.
pub fn train_bottleneck_stage1<T: Real, R: Rng>(
    model: &mut BottleneckModelBase<T>,
    teacher: &TeacherModelBase<T>,
    images: &TensorBase<T>,
    cfg: &BottleneckConfig,
    rng: &mut R,
) -> Result<Vec<RdLogRow>, CoreError> {
    let (count, dim) = images.rows_cols();
    if dim != model.encoder.in_dim() {
        return Err(CoreError::Dimension(format!(
            "images have {dim} features, encoder expects {}",
            model.encoder.in_dim()
        )));
    }
    if teacher.hidden_dim() != model.decoder.out_dim() {
        return Err(CoreError::Dimension(format!(
            "teacher hidden dim {} does not match decoder output {}",
            teacher.hidden_dim(),
            model.decoder.out_dim()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || count == 0 {
        return Err(CoreError::Argument(
            "epochs, batch size, and data must be non-empty".into(),
        ));
    }
    let latent = model.latent_dim();
    let mut opt = AdamStateBase::new(real::<T>(cfg.lr));
    let mut order: Vec<usize> = (0..count).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        for i in (1..count).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let (mut total, mut total_dist, mut total_rate) = (0.0f64, 0.0f64, 0.0f64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk.len();
            let mut xb = vec![T::zero(); batch * dim];
            for (row, &idx) in chunk.iter().enumerate() {
                xb[row * dim..(row + 1) * dim].copy_from_slice(images.row(idx));
            }
            let xb = TensorBase::from_parts(vec![batch, dim], xb);
            let h_target = teacher.hidden(&xb)?;
            let noise: Vec<T> = (0..batch * latent)
                .map(|_| real::<T>(rng.gen_range(-0.5..0.5)))
                .collect();
            let noise = TensorBase::from_parts(vec![batch, latent], noise);
            let (parts, grads) = rd_loss_and_grads(model, &xb, &h_target, &noise, cfg.beta)?;
            total += parts.loss * batch as f64;
            total_dist += parts.distortion * batch as f64;
            total_rate += parts.rate_nats * batch as f64;
            opt.begin_step();
            model.encoder.apply_grads("encoder", &grads.encoder, &mut opt)?;
            model.decoder.apply_grads("decoder", &grads.decoder, &mut opt)?;
            opt.update("prior.mu", &mut model.prior.mu, &grads.d_mu)?;
            opt.update("prior.log_s", &mut model.prior.log_s, &grads.d_log_s)?;
        }
        log.push(RdLogRow {
            epoch,
            loss: total / count as f64,
            distortion: total_dist / count as f64,
            rate_nats: total_rate / count as f64,
        });
    }
    Ok(log)
}
