use rand::Rng;
use rand_distr::StandardNormal;

use crate::cs::operator::MeasurementOperatorBase;
use crate::nn::{
    Activation, AdamStateBase, DenseGrads, DenseLayerBase, MlpBase, MlpGrads,
};
use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Variational autoencoder used as a generative prior for recovery: an
/// encoder body with two affine heads (mean and log-variance) and a decoder
/// mapping latents back to signals.
#[derive(Debug, Clone)]
pub struct VaeModelBase<T: Real> {
    pub body: MlpBase<T>,
    pub mu_head: DenseLayerBase<T>,
    pub logvar_head: DenseLayerBase<T>,
    pub decoder: MlpBase<T>,
}

impl<T: Real> VaeModelBase<T> {
    /// Two ReLU hidden layers of `hidden_dim` on both sides of the latent.
    pub fn init<R: Rng>(
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self, CoreError> {
        let body = MlpBase::init(
            &[input_dim, hidden_dim, hidden_dim],
            &[Activation::Relu, Activation::Relu],
            rng,
        )?;
        let mu_head = DenseLayerBase::init(hidden_dim, latent_dim, Activation::Identity, rng)?;
        let logvar_head =
            DenseLayerBase::init(hidden_dim, latent_dim, Activation::Identity, rng)?;
        let decoder = MlpBase::relu_net(&[latent_dim, hidden_dim, hidden_dim, input_dim], rng)?;
        Ok(Self {
            body,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.body.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.out_dim()
    }
}

pub(crate) struct VaeGrads<T: Real> {
    body: MlpGrads<T>,
    mu: DenseGrads<T>,
    logvar: DenseGrads<T>,
    decoder: MlpGrads<T>,
}

/// One deterministic evaluation of the negative ELBO
/// `mean(0.5 ||x_hat - x||^2 - 0.5 sum(1 + lv - mu^2 - exp(lv)))`
/// with the reparameterization `z = mu + exp(lv / 2) * noise`, plus all
/// parameter gradients. `noise` is passed in so the computation is exactly
/// reproducible.
pub(crate) fn vae_loss_and_grads<T: Real>(
    model: &VaeModelBase<T>,
    x: &TensorBase<T>,
    noise: &TensorBase<T>,
) -> Result<(f64, VaeGrads<T>), CoreError> {
    let (batch, _) = x.rows_cols();
    let latent = model.latent_dim();
    if noise.shape() != [batch, latent] {
        return Err(CoreError::Dimension(format!(
            "noise shape {:?} does not match [batch, latent] = [{batch}, {latent}]",
            noise.shape()
        )));
    }
    let (h, body_cache) = model.body.forward_cached(x)?;
    let (mu, mu_cache) = model.mu_head.forward_cached(&h)?;
    let (lv, lv_cache) = model.logvar_head.forward_cached(&h)?;

    let half = real::<T>(0.5);
    let mut z = mu.clone();
    for ((zv, lvv), nv) in z
        .as_mut_slice()
        .iter_mut()
        .zip(lv.as_slice())
        .zip(noise.as_slice())
    {
        *zv += (half * *lvv).exp() * *nv;
    }
    let (x_hat, dec_cache) = model.decoder.forward_cached(&z)?;

    // Reconstruction and KL terms, accumulated in f64.
    let mut recon = 0.0f64;
    for (a, b) in x_hat.as_slice().iter().zip(x.as_slice()) {
        let d = a.to_f64_lossy() - b.to_f64_lossy();
        recon += d * d;
    }
    let mut kl = 0.0f64;
    for (m, l) in mu.as_slice().iter().zip(lv.as_slice()) {
        let mf = m.to_f64_lossy();
        let lf = l.to_f64_lossy();
        kl += 1.0 + lf - mf * mf - lf.exp();
    }
    let loss = (0.5 * recon - 0.5 * kl) / batch as f64;

    let inv_batch = real::<T>(1.0 / batch as f64);
    let d_x_hat = {
        let mut d = x_hat.clone();
        for (dv, xv) in d.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *dv = (*dv - *xv) * inv_batch;
        }
        d
    };
    let dec_grads = model.decoder.backward(&dec_cache, &d_x_hat)?;
    let d_z = &dec_grads.d_input;

    // d mu = d z + mu / batch; d lv = d z * noise * exp(lv/2) / 2 + (exp(lv) - 1) / (2 batch).
    let mut d_mu = d_z.clone();
    for (dv, mv) in d_mu.as_mut_slice().iter_mut().zip(mu.as_slice()) {
        *dv += *mv * inv_batch;
    }
    let mut d_lv = d_z.clone();
    for ((dv, lvv), nv) in d_lv
        .as_mut_slice()
        .iter_mut()
        .zip(lv.as_slice())
        .zip(noise.as_slice())
    {
        *dv = *dv * *nv * half * (half * *lvv).exp()
            + half * ((*lvv).exp() - T::one()) * inv_batch;
    }

    let (mu_grads, d_h_mu) = model.mu_head.backward(&mu_cache, &d_mu)?;
    let (lv_grads, d_h_lv) = model.logvar_head.backward(&lv_cache, &d_lv)?;
    let d_h = d_h_mu.add(&d_h_lv);
    let body_grads = model.body.backward(&body_cache, &d_h)?;

    Ok((
        loss,
        VaeGrads {
            body: body_grads,
            mu: mu_grads,
            logvar: lv_grads,
            decoder: dec_grads,
        },
    ))
}

/// Trains with Adam on shuffled minibatches; returns the per-epoch mean loss.
pub fn train_vae<T: Real, R: Rng>(
    model: &mut VaeModelBase<T>,
    data: &TensorBase<T>,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
) -> Result<Vec<f64>, CoreError> {
    let (count, dim) = data.rows_cols();
    if dim != model.input_dim() {
        return Err(CoreError::Dimension(format!(
            "data dim {dim} does not match model input {}",
            model.input_dim()
        )));
    }
    if epochs == 0 || batch_size == 0 || count == 0 {
        return Err(CoreError::Argument(
            "epochs, batch size, and data must be non-empty".into(),
        ));
    }
    let latent = model.latent_dim();
    let mut opt = AdamStateBase::new(real::<T>(lr));
    let mut order: Vec<usize> = (0..count).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        // Fisher-Yates shuffle driven by the caller's generator.
        for i in (1..count).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut total = 0.0f64;
        for chunk in order.chunks(batch_size) {
            let batch = chunk.len();
            let mut xb = vec![T::zero(); batch * dim];
            for (row, &idx) in chunk.iter().enumerate() {
                xb[row * dim..(row + 1) * dim].copy_from_slice(data.row(idx));
            }
            let xb = TensorBase::from_parts(vec![batch, dim], xb);
            let noise: Vec<T> = (0..batch * latent)
                .map(|_| real::<T>(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let noise = TensorBase::from_parts(vec![batch, latent], noise);
            let (loss, grads) = vae_loss_and_grads(model, &xb, &noise)?;
            total += loss * batch as f64;
            opt.begin_step();
            model.body.apply_grads("body", &grads.body, &mut opt)?;
            opt.update("mu.weight", &mut model.mu_head.weight, &grads.mu.d_weight)?;
            opt.update("mu.bias", &mut model.mu_head.bias, &grads.mu.d_bias)?;
            opt.update(
                "logvar.weight",
                &mut model.logvar_head.weight,
                &grads.logvar.d_weight,
            )?;
            opt.update(
                "logvar.bias",
                &mut model.logvar_head.bias,
                &grads.logvar.d_bias,
            )?;
            model.decoder.apply_grads("decoder", &grads.decoder, &mut opt)?;
        }
        epoch_losses.push(total / count as f64);
    }
    Ok(epoch_losses)
}

/// Settings for the latent gradient search used at reconstruction time.
#[derive(Debug, Clone, Copy)]
pub struct LatentSearchConfig {
    /// Parallel starting points: one at the origin, the rest standard normal.
    pub restarts: usize,
    /// Outer gradient steps per restart.
    pub max_steps: usize,
    pub init_step: f64,
    /// Step halvings tried per outer iteration before giving up on a restart.
    pub max_halvings: usize,
    /// Step growth factor applied after an accepted move.
    pub grow: f64,
    /// Search stops once every restart's step falls below this.
    pub min_step: f64,
}

impl Default for LatentSearchConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_steps: 200,
            init_step: 1e-2,
            max_halvings: 12,
            grow: 1.2,
            min_step: 1e-10,
        }
    }
}

/// Recovers one signal from its measurements by minimizing
/// `||y - W g(z)||^2` over the latent with multi-restart backtracking
/// gradient descent, then decoding the best latent and clamping to `[0, 1]`.
/// Returns the reconstruction and the best residual objective.
pub fn vae_reconstruct<T: Real, R: Rng>(
    decoder: &MlpBase<T>,
    op: &MeasurementOperatorBase<T>,
    y: &TensorBase<T>,
    cfg: &LatentSearchConfig,
    rng: &mut R,
) -> Result<(TensorBase<T>, f64), CoreError> {
    if cfg.restarts == 0 || cfg.max_steps == 0 {
        return Err(CoreError::Argument(
            "latent search needs at least one restart and one step".into(),
        ));
    }
    let m = op.measurements();
    if y.len() != m || y.rank() > 2 {
        return Err(CoreError::Dimension(format!(
            "expected a single measurement vector of length {m}, got shape {:?}",
            y.shape()
        )));
    }
    if decoder.out_dim() != op.signal_dim() {
        return Err(CoreError::Dimension(format!(
            "decoder emits {} features, operator measures {}",
            decoder.out_dim(),
            op.signal_dim()
        )));
    }
    let k = decoder.in_dim();
    let r = cfg.restarts;

    let mut z = vec![T::zero(); r * k];
    for v in z.iter_mut().skip(k) {
        *v = real::<T>(rng.sample::<f64, _>(StandardNormal));
    }
    let mut z = TensorBase::from_parts(vec![r, k], z);

    let objective = |z: &TensorBase<T>| -> Result<Vec<f64>, CoreError> {
        let decoded = decoder.forward(z)?;
        let measured = op.measure_clean(&decoded)?;
        let mut out = vec![0.0f64; r];
        for (row, o) in measured.as_slice().chunks_exact(m).zip(out.iter_mut()) {
            *o = row
                .iter()
                .zip(y.as_slice())
                .map(|(a, b)| {
                    let d = a.to_f64_lossy() - b.to_f64_lossy();
                    d * d
                })
                .sum();
        }
        Ok(out)
    };

    let mut obj = objective(&z)?;
    let mut step = vec![cfg.init_step; r];
    for _ in 0..cfg.max_steps {
        // Gradient of the residual objective through the decoder.
        let (decoded, cache) = decoder.forward_cached(&z)?;
        let measured = op.measure_clean(&decoded)?;
        let mut d_measured = measured;
        for (dm, yv) in d_measured
            .as_mut_slice()
            .chunks_exact_mut(m)
            .flat_map(|row| row.iter_mut())
            .zip(y.as_slice().iter().cycle())
        {
            *dm = (*dm - *yv) * real::<T>(2.0);
        }
        let d_decoded = d_measured.matmul(op.matrix());
        let grads = decoder.backward(&cache, &d_decoded)?;
        let d_z = grads.d_input;

        let mut accepted = vec![false; r];
        for _ in 0..cfg.max_halvings {
            let mut cand = z.clone();
            for row in 0..r {
                if accepted[row] {
                    continue;
                }
                let s = real::<T>(step[row]);
                for (c, g) in cand.as_mut_slice()[row * k..(row + 1) * k]
                    .iter_mut()
                    .zip(&d_z.as_slice()[row * k..(row + 1) * k])
                {
                    *c -= s * *g;
                }
            }
            let cand_obj = objective(&cand)?;
            let mut all = true;
            for row in 0..r {
                if accepted[row] {
                    continue;
                }
                if cand_obj[row] < obj[row] {
                    accepted[row] = true;
                    obj[row] = cand_obj[row];
                    z.as_mut_slice()[row * k..(row + 1) * k]
                        .copy_from_slice(&cand.as_slice()[row * k..(row + 1) * k]);
                } else {
                    step[row] *= 0.5;
                    all = false;
                }
            }
            if all {
                break;
            }
        }
        for row in 0..r {
            if accepted[row] {
                step[row] *= cfg.grow;
            }
        }
        if step.iter().all(|s| *s < cfg.min_step) {
            break;
        }
    }

    let best = obj
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let z_best = TensorBase::from_parts(vec![1, k], z.row(best).to_vec());
    let mut x_hat = decoder.forward(&z_best)?;
    let (zero, one) = (T::zero(), T::one());
    for v in x_hat.as_mut_slice() {
        *v = v.min(one).max(zero);
    }
    Ok((
        TensorBase::from_parts(vec![decoder.out_dim()], x_hat.as_slice().to_vec()),
        obj[best],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::numeric_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = VaeModelBase::<f64>::init(5, 6, 2, &mut rng).unwrap();
        let x = TensorBase::new(
            vec![3, 5],
            (0..15).map(|v| (v as f64 * 0.13).sin().abs()).collect(),
        )
        .unwrap();
        let noise = TensorBase::new(
            vec![3, 2],
            vec![0.4, -1.1, 0.9, 0.2, -0.6, 1.3],
        )
        .unwrap();
        let (_, grads) = vae_loss_and_grads(&model, &x, &noise).unwrap();

        // Check one representative tensor from every component.
        let check = |analytic: &[f64], mutate: &dyn Fn(&mut VaeModelBase<f64>, usize, f64)| {
            let numeric = numeric_grad(analytic.len(), 1e-5, |idx, eps| {
                let mut probe = model.clone();
                mutate(&mut probe, idx, eps);
                vae_loss_and_grads(&probe, &x, &noise).unwrap().0
            });
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() <= 1e-4 * (1.0 + n.abs()), "{a} vs {n}");
            }
        };
        check(grads.mu.d_weight.as_slice(), &|m, i, e| {
            m.mu_head.weight.as_mut_slice()[i] += e;
        });
        check(grads.logvar.d_weight.as_slice(), &|m, i, e| {
            m.logvar_head.weight.as_mut_slice()[i] += e;
        });
        check(grads.body.layers[0].d_weight.as_slice(), &|m, i, e| {
            m.body = {
                let mut layers = m.body.layers().to_vec();
                layers[0].weight.as_mut_slice()[i] += e;
                MlpBase::from_layers(layers).unwrap()
            };
        });
        check(grads.decoder.layers[2].d_weight.as_slice(), &|m, i, e| {
            m.decoder = {
                let mut layers = m.decoder.layers().to_vec();
                layers[2].weight.as_mut_slice()[i] += e;
                MlpBase::from_layers(layers).unwrap()
            };
        });
    }

    #[test]
    fn training_reduces_the_loss_deterministically() {
        let mut data = vec![0.0f32; 40 * 6];
        for (i, v) in data.iter_mut().enumerate() {
            *v = if (i / 6) % 2 == 0 { 0.9 } else { 0.1 };
        }
        let data = TensorBase::new(vec![40, 6], data).unwrap();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = VaeModelBase::<f32>::init(6, 8, 2, &mut rng).unwrap();
            let losses = train_vae(&mut model, &data, 12, 8, 1e-2, &mut rng).unwrap();
            (losses, model)
        };
        let (losses, model) = run(3);
        assert!(losses.last().unwrap() < losses.first().unwrap());
        let (losses2, model2) = run(3);
        assert_eq!(losses, losses2);
        assert_eq!(
            model.decoder.layers()[0].weight.as_slice(),
            model2.decoder.layers()[0].weight.as_slice()
        );
    }

    #[test]
    fn latent_search_solves_a_linear_decoder_exactly() {
        // Identity-activation decoder makes the objective convex; the search
        // must reach the least-squares optimum.
        let dec_w = TensorBase::new(vec![3, 2], vec![1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let dec = MlpBase::from_layers(vec![DenseLayerBase::from_parts(
            dec_w,
            TensorBase::new(vec![3], vec![0.0; 3]).unwrap(),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let op = MeasurementOperatorBase::from_matrix(
            TensorBase::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
                .unwrap(),
        )
        .unwrap();
        // Target z* = (0.3, 0.5): y = A z* = (0.3, 0.5, 0.8).
        let y = TensorBase::new(vec![3], vec![0.3, 0.5, 0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = LatentSearchConfig::default();
        let (x_hat, best_obj) = vae_reconstruct(&dec, &op, &y, &cfg, &mut rng).unwrap();
        assert!(best_obj < 1e-10, "objective {best_obj}");
        for (a, b) in x_hat.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn reconstruction_is_clamped_and_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dec = MlpBase::<f32>::relu_net(&[2, 8, 4], &mut rng).unwrap();
        let op = MeasurementOperatorBase::<f32>::gaussian(3, 4, &mut rng).unwrap();
        let y = TensorBase::new(vec![3], vec![2.0f32, -1.0, 0.5]).unwrap();
        let cfg = LatentSearchConfig {
            restarts: 4,
            max_steps: 30,
            ..Default::default()
        };
        let (a, _) = vae_reconstruct(&dec, &op, &y, &cfg, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let (b, _) = vae_reconstruct(&dec, &op, &y, &cfg, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.shape(), &[4]);
    }

    #[test]
    fn rejects_mismatched_shapes_and_empty_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = MlpBase::<f32>::relu_net(&[2, 4, 4], &mut rng).unwrap();
        let op = MeasurementOperatorBase::<f32>::gaussian(3, 4, &mut rng).unwrap();
        let y_bad = TensorBase::new(vec![2], vec![0.0f32; 2]).unwrap();
        let cfg = LatentSearchConfig::default();
        assert!(vae_reconstruct(&dec, &op, &y_bad, &cfg, &mut rng).is_err());
        let y = TensorBase::new(vec![3], vec![0.0f32; 3]).unwrap();
        let zero = LatentSearchConfig {
            restarts: 0,
            ..Default::default()
        };
        assert!(vae_reconstruct(&dec, &op, &y, &zero, &mut rng).is_err());
    }
}
