use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use hecsb_codec::{read_cdf, write_cdf, CdfTable};
use rand::Rng;

use crate::checkpoint;
use crate::distill::bottleneck::BottleneckModelBase;
use crate::distill::teacher::TeacherModelBase;
use crate::nn::{batch_accuracy, kd_loss, AdamStateBase, MlpBase};
use crate::prior::FactorizedPriorBase;
use crate::quantize::{dequantize, quantize, QuantizedLatent};
use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// The deployable split network: the head (encoder) runs on the sending
/// device, the decoder plus classifier tail on the receiving side, and the
/// frozen prior defines the entropy-coding tables both sides share.
#[derive(Debug, Clone)]
pub struct SplitModelBase<T: Real> {
    pub encoder: MlpBase<T>,
    pub decoder: MlpBase<T>,
    pub tail: MlpBase<T>,
    pub prior: FactorizedPriorBase<T>,
}

/// Stage-2 hyperparameters. `alpha` balances hard labels against the
/// teacher's softened logits at temperature `tau`; `beta` keeps pricing the
/// latent rate so fine-tuning cannot trade compressibility away.
#[derive(Debug, Clone, Copy)]
pub struct Stage2Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub tau: f64,
    pub beta: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 128,
            lr: 1e-3,
            alpha: 0.5,
            tau: 4.0,
            beta: 0.01,
        }
    }
}

/// One epoch of stage-2 training state.
#[derive(Debug, Clone, PartialEq)]
pub struct KdLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub kd: f64,
    pub rate_nats: f64,
    pub accuracy: f64,
}

/// Renders stage-2 epochs as `epoch,loss,kd,rate_nats,accuracy`.
pub fn kd_log_csv(rows: &[KdLogRow]) -> String {
    let mut out = String::from("epoch,loss,kd,rate_nats,accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.4}",
            r.epoch, r.loss, r.kd, r.rate_nats, r.accuracy
        );
    }
    out
}

/// Fine-tunes the bottleneck inside the full network against the frozen
/// teacher: the student is encoder -> noisy latent -> decoder -> a trainable
/// copy of the teacher's tail, trained on the distillation loss plus the
/// rate term. Afterwards the prior is refit by moment matching on the noisy
/// latents of the whole training set and frozen into the returned model.
pub fn finetune_stage2<T: Real, R: Rng>(
    bottleneck: BottleneckModelBase<T>,
    teacher: &TeacherModelBase<T>,
    images: &TensorBase<T>,
    labels: &[usize],
    cfg: &Stage2Config,
    rng: &mut R,
) -> Result<(SplitModelBase<T>, Vec<KdLogRow>), CoreError> {
    let (count, dim) = images.rows_cols();
    if labels.len() != count {
        return Err(CoreError::Dimension(format!(
            "{} label(s) for {count} image(s)",
            labels.len()
        )));
    }
    if dim != bottleneck.encoder.in_dim() {
        return Err(CoreError::Dimension(format!(
            "images have {dim} features, encoder expects {}",
            bottleneck.encoder.in_dim()
        )));
    }
    if bottleneck.decoder.out_dim() != teacher.hidden_dim() {
        return Err(CoreError::Dimension(format!(
            "decoder output {} does not match teacher hidden dim {}",
            bottleneck.decoder.out_dim(),
            teacher.hidden_dim()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || count == 0 {
        return Err(CoreError::Argument(
            "epochs, batch size, and data must be non-empty".into(),
        ));
    }
    if cfg.beta < 0.0 {
        return Err(CoreError::Argument(format!(
            "beta must be non-negative, got {}",
            cfg.beta
        )));
    }
    let BottleneckModelBase {
        mut encoder,
        mut decoder,
        mut prior,
    } = bottleneck;
    let mut tail = teacher.tail.clone();
    let latent = encoder.out_dim();

    let mut opt = AdamStateBase::new(real::<T>(cfg.lr));
    let mut order: Vec<usize> = (0..count).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        for i in (1..count).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let (mut total, mut total_kd, mut total_rate, mut total_acc) =
            (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk.len();
            let mut xb = vec![T::zero(); batch * dim];
            let mut yb = Vec::with_capacity(batch);
            for (row, &idx) in chunk.iter().enumerate() {
                xb[row * dim..(row + 1) * dim].copy_from_slice(images.row(idx));
                yb.push(labels[idx]);
            }
            let xb = TensorBase::from_parts(vec![batch, dim], xb);
            let teacher_logits = teacher.logits(&xb)?;

            let (z_clean, enc_cache) = encoder.forward_cached(&xb)?;
            let noise: Vec<T> = (0..batch * latent)
                .map(|_| real::<T>(rng.gen_range(-0.5..0.5)))
                .collect();
            let z = z_clean.add(&TensorBase::from_parts(vec![batch, latent], noise));
            let (h_hat, dec_cache) = decoder.forward_cached(&z)?;
            let (s_logits, tail_cache) = tail.forward_cached(&h_hat)?;

            let (kd, d_logits) = kd_loss(&s_logits, &teacher_logits, &yb, cfg.alpha, cfg.tau)?;
            let (log_density, prior_grads) = prior.log_density_grads(&z)?;
            let rate_nats = -log_density / batch as f64;
            let loss = kd + cfg.beta * rate_nats;
            total += loss * batch as f64;
            total_kd += kd * batch as f64;
            total_rate += rate_nats * batch as f64;
            total_acc += batch_accuracy(&s_logits, &yb)? * batch as f64;

            let tail_grads = tail.backward(&tail_cache, &d_logits)?;
            let dec_grads = decoder.backward(&dec_cache, &tail_grads.d_input)?;
            let neg_beta_scaled = real::<T>(-cfg.beta / batch as f64);
            let mut d_z = dec_grads.d_input.clone();
            for (dv, pg) in d_z
                .as_mut_slice()
                .iter_mut()
                .zip(prior_grads.d_z.as_slice())
            {
                *dv += neg_beta_scaled * *pg;
            }
            let enc_grads = encoder.backward(&enc_cache, &d_z)?;
            let d_mu = prior_grads.d_mu.map(|v| neg_beta_scaled * v);
            let d_log_s = prior_grads.d_log_s.map(|v| neg_beta_scaled * v);

            opt.begin_step();
            encoder.apply_grads("encoder", &enc_grads, &mut opt)?;
            decoder.apply_grads("decoder", &dec_grads, &mut opt)?;
            tail.apply_grads("tail", &tail_grads, &mut opt)?;
            opt.update("prior.mu", &mut prior.mu, &d_mu)?;
            opt.update("prior.log_s", &mut prior.log_s, &d_log_s)?;
        }
        log.push(KdLogRow {
            epoch,
            loss: total / count as f64,
            kd: total_kd / count as f64,
            rate_nats: total_rate / count as f64,
            accuracy: total_acc / count as f64,
        });
    }

    // Refit the prior on the noisy latents of the final encoder over the
    // whole training set, then freeze it into the model: this is the
    // distribution the coder will actually see.
    let mut latents = vec![T::zero(); count * latent];
    for start in (0..count).step_by(cfg.batch_size) {
        let end = (start + cfg.batch_size).min(count);
        let rows = end - start;
        let mut xb = vec![T::zero(); rows * dim];
        for (row, idx) in (start..end).enumerate() {
            xb[row * dim..(row + 1) * dim].copy_from_slice(images.row(idx));
        }
        let xb = TensorBase::from_parts(vec![rows, dim], xb);
        let z = encoder.forward(&xb)?;
        for (i, v) in z.as_slice().iter().enumerate() {
            latents[start * latent + i] = *v + real::<T>(rng.gen_range(-0.5..0.5));
        }
    }
    prior.fit_moments(&TensorBase::from_parts(vec![count, latent], latents))?;

    Ok((
        SplitModelBase {
            encoder,
            decoder,
            tail,
            prior,
        },
        log,
    ))
}

impl<T: Real> SplitModelBase<T> {
    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn classes(&self) -> usize {
        self.tail.out_dim()
    }

    /// Head computation on one input: the pre-quantization latent vector.
    pub fn head_infer(&self, x: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        let dim = self.encoder.in_dim();
        if x.len() != dim || x.rank() > 2 {
            return Err(CoreError::Dimension(format!(
                "expected a single input of {dim} features, got shape {:?}",
                x.shape()
            )));
        }
        let row = TensorBase::from_parts(vec![1, dim], x.as_slice().to_vec());
        let z = self.encoder.forward(&row)?;
        Ok(TensorBase::from_parts(
            vec![self.latent_dim()],
            z.as_slice().to_vec(),
        ))
    }

    /// Tail computation on one dequantized latent: class logits.
    pub fn logits_from_latent(&self, z: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        let d = self.latent_dim();
        if z.len() != d || z.rank() > 2 {
            return Err(CoreError::Dimension(format!(
                "expected a latent of {d} values, got shape {:?}",
                z.shape()
            )));
        }
        let row = TensorBase::from_parts(vec![1, d], z.as_slice().to_vec());
        let logits = self.tail.forward(&self.decoder.forward(&row)?)?;
        Ok(TensorBase::from_parts(
            vec![self.classes()],
            logits.as_slice().to_vec(),
        ))
    }

    /// The whole pipeline in one process, quantization included: exactly the
    /// computation the split deployment performs, so results are
    /// bit-identical with a head/tail pair exchanging coded symbols.
    pub fn predict_local(
        &self,
        x: &TensorBase<T>,
    ) -> Result<(TensorBase<T>, QuantizedLatent), CoreError> {
        let z = self.head_infer(x)?;
        let q = quantize(&z)?;
        let logits = self.logits_from_latent(&dequantize::<T>(&q))?;
        Ok((logits, q))
    }

    /// Coding table from the frozen prior.
    pub fn build_cdf(&self) -> Result<CdfTable, CoreError> {
        self.prior.build_cdf()
    }
}

const HEAD_FILE: &str = "head.ckpt";
const TAIL_FILE: &str = "tail.ckpt";
const TABLE_FILE: &str = "prior.cdf";

/// Writes the three deployment artifacts into `dir`: the head checkpoint
/// (encoder), the tail checkpoint (decoder, classifier tail, prior
/// parameters), and the frozen coding table both sides must share.
pub fn save_split(model: &SplitModelBase<f32>, dir: &Path) -> Result<(), CoreError> {
    std::fs::create_dir_all(dir)?;
    let head = checkpoint::mlp_tensors("encoder", &model.encoder);
    let refs: Vec<(&str, &TensorBase<f32>)> =
        head.iter().map(|(n, t)| (n.as_str(), t)).collect();
    checkpoint::save(&dir.join(HEAD_FILE), &refs)?;

    let mut tail = checkpoint::mlp_tensors("decoder", &model.decoder);
    tail.extend(checkpoint::mlp_tensors("tail", &model.tail));
    tail.push(("prior.mu".to_string(), model.prior.mu.clone()));
    tail.push(("prior.log_s".to_string(), model.prior.log_s.clone()));
    let refs: Vec<(&str, &TensorBase<f32>)> =
        tail.iter().map(|(n, t)| (n.as_str(), t)).collect();
    checkpoint::save(&dir.join(TAIL_FILE), &refs)?;

    let table = model.build_cdf()?;
    let mut w = BufWriter::new(File::create(dir.join(TABLE_FILE))?);
    write_cdf(&table, &mut w)?;
    Ok(())
}

/// Loads the three artifacts written by [`save_split`]. The coding table is
/// returned as stored in the file (the frozen tables are the contract
/// between head and tail, not a rebuild from the float prior).
pub fn load_split(dir: &Path) -> Result<(SplitModelBase<f32>, CdfTable), CoreError> {
    let head = checkpoint::load_map(&dir.join(HEAD_FILE))?;
    let encoder = checkpoint::mlp_from_map("encoder", &head)?;
    let tail_map = checkpoint::load_map(&dir.join(TAIL_FILE))?;
    let decoder = checkpoint::mlp_from_map("decoder", &tail_map)?;
    let tail = checkpoint::mlp_from_map("tail", &tail_map)?;
    let mu = tail_map
        .get("prior.mu")
        .ok_or_else(|| CoreError::Checkpoint("missing `prior.mu`".into()))?;
    let log_s = tail_map
        .get("prior.log_s")
        .ok_or_else(|| CoreError::Checkpoint("missing `prior.log_s`".into()))?;
    let prior = FactorizedPriorBase::from_parts(mu.clone(), log_s.clone())?;
    let table = read_cdf(BufReader::new(File::open(dir.join(TABLE_FILE))?))?;
    let model = SplitModelBase {
        encoder,
        decoder,
        tail,
        prior,
    };
    if table.dim_count() != model.latent_dim() {
        return Err(CoreError::Checkpoint(format!(
            "coding table has {} dimensions, model latent is {}",
            table.dim_count(),
            model.latent_dim()
        )));
    }
    Ok((model, table))
}
