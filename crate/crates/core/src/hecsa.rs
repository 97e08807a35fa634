//! Learned compressed sensing: a trainable measurement matrix and decoder
//! optimized end-to-end under a Frobenius-norm budget on the matrix.
//!
//! The norm budget `k = sqrt(signal_dim)` matches the energy of the random
//! Gaussian operator it replaces (`E||W||_F^2 = n` when entries are
//! `N(0, 1/m)`), so learned and random measurements compete at equal gain.
//! The budget is enforced by a Lagrange coefficient that doubles whenever an
//! epoch ends outside the ball and halves when comfortably inside, plus an
//! end-of-epoch projection back onto the ball.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{AdamStateBase, MlpBase, MlpGrads};
use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Measurement matrix `[m, n]` plus decoder `m -> hidden -> hidden -> n`.
#[derive(Debug, Clone)]
pub struct HecsaModelBase<T: Real> {
    pub w: TensorBase<T>,
    pub decoder: MlpBase<T>,
    /// Frobenius budget for `w`.
    pub norm_bound: f64,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct HecsaConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Measurement noise level added during training and evaluation.
    pub sigma: f64,
    pub lagrange_init: f64,
}

impl Default for HecsaConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            lr: 1e-3,
            sigma: 0.1,
            lagrange_init: 1e-3,
        }
    }
}

/// One epoch of training state: mean data loss, matrix norm, and the
/// Lagrange coefficient, both recorded after the end-of-epoch adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub frobenius: f64,
    pub lagrange: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    /// `epoch,loss,frobenius,lagrange`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,frobenius,lagrange\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6e}",
                r.epoch, r.loss, r.frobenius, r.lagrange
            );
        }
        out
    }
}

impl<T: Real> HecsaModelBase<T> {
    /// `w` entries start `N(0, 1/m)`; the decoder is a two-hidden-layer ReLU
    /// net. The norm budget is `sqrt(n)`.
    pub fn init<R: Rng>(
        measurements: usize,
        signal_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self, CoreError> {
        if measurements == 0 || signal_dim == 0 || hidden_dim == 0 {
            return Err(CoreError::Argument(
                "model dimensions must be positive".into(),
            ));
        }
        let scale = (1.0 / measurements as f64).sqrt();
        let w = (0..measurements * signal_dim)
            .map(|_| real::<T>(rng.sample::<f64, _>(StandardNormal) * scale))
            .collect();
        let w = TensorBase::from_parts(vec![measurements, signal_dim], w);
        let decoder =
            MlpBase::relu_net(&[measurements, hidden_dim, hidden_dim, signal_dim], rng)?;
        Ok(Self {
            w,
            decoder,
            norm_bound: (signal_dim as f64).sqrt(),
        })
    }

    pub fn measurements(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn signal_dim(&self) -> usize {
        self.w.shape()[1]
    }

    /// `X W^T + sigma * xi` for row-wise signals.
    pub fn measure<R: Rng>(
        &self,
        x: &TensorBase<T>,
        sigma: f64,
        rng: &mut R,
    ) -> Result<TensorBase<T>, CoreError> {
        let (_, cols) = x.rows_cols();
        if cols != self.signal_dim() {
            return Err(CoreError::Dimension(format!(
                "signals have {cols} features, matrix expects {}",
                self.signal_dim()
            )));
        }
        let mut y = x.matmul_bt(&self.w);
        if sigma > 0.0 {
            for v in y.as_mut_slice() {
                *v += real::<T>(rng.sample::<f64, _>(StandardNormal) * sigma);
            }
        }
        Ok(y)
    }

    /// Decodes measurements and clamps into pixel range `[0, 1]`.
    pub fn reconstruct(&self, y: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        let mut x_hat = self.decoder.forward(y)?;
        let (zero, one) = (T::zero(), T::one());
        for v in x_hat.as_mut_slice() {
            *v = v.min(one).max(zero);
        }
        Ok(x_hat)
    }
}

pub(crate) struct HecsaGrads<T: Real> {
    d_w: TensorBase<T>,
    decoder: MlpGrads<T>,
}

/// Data loss `mean(0.5 ||dec(x W^T + sigma * noise) - x||^2)` plus the
/// penalty `lagrange * ||W||_F^2`, with gradients for both pieces. Noise is
/// explicit so the evaluation is reproducible. The returned loss is the data
/// term only; the penalty acts through the gradient.
pub(crate) fn hecsa_loss_and_grads<T: Real>(
    model: &HecsaModelBase<T>,
    x: &TensorBase<T>,
    noise: &TensorBase<T>,
    sigma: f64,
    lagrange: f64,
) -> Result<(f64, HecsaGrads<T>), CoreError> {
    let (batch, dim) = x.rows_cols();
    let m = model.measurements();
    if dim != model.signal_dim() {
        return Err(CoreError::Dimension(format!(
            "signals have {dim} features, matrix expects {}",
            model.signal_dim()
        )));
    }
    if noise.shape() != [batch, m] {
        return Err(CoreError::Dimension(format!(
            "noise shape {:?} does not match [batch, m] = [{batch}, {m}]",
            noise.shape()
        )));
    }
    let sig = real::<T>(sigma);
    let mut y = x.matmul_bt(&model.w);
    for (v, nz) in y.as_mut_slice().iter_mut().zip(noise.as_slice()) {
        *v += sig * *nz;
    }
    let (x_hat, cache) = model.decoder.forward_cached(&y)?;

    let mut data = 0.0f64;
    for (a, b) in x_hat.as_slice().iter().zip(x.as_slice()) {
        let d = a.to_f64_lossy() - b.to_f64_lossy();
        data += d * d;
    }
    let loss = 0.5 * data / batch as f64;

    let inv_batch = real::<T>(1.0 / batch as f64);
    let mut d_x_hat = x_hat;
    for (dv, xv) in d_x_hat.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *dv = (*dv - *xv) * inv_batch;
    }
    let dec_grads = model.decoder.backward(&cache, &d_x_hat)?;
    // y = x W^T, so dW = dY^T X; the norm penalty adds 2 * lagrange * W.
    let mut d_w = dec_grads.d_input.matmul_at(x);
    let two_lag = real::<T>(2.0 * lagrange);
    for (g, w) in d_w.as_mut_slice().iter_mut().zip(model.w.as_slice()) {
        *g += two_lag * *w;
    }
    Ok((
        loss,
        HecsaGrads {
            d_w,
            decoder: dec_grads,
        },
    ))
}

/// End-of-epoch budget control: returns the new coefficient and whether the
/// matrix must be projected back onto the ball.
pub(crate) fn adjust_lagrange(frobenius: f64, bound: f64, lagrange: f64) -> (f64, bool) {
    if frobenius > bound {
        (lagrange * 2.0, true)
    } else if frobenius < 0.95 * bound {
        ((lagrange * 0.5).max(1e-8), false)
    } else {
        (lagrange, false)
    }
}

/// Trains matrix and decoder jointly with Adam on shuffled minibatches.
/// After every epoch the Lagrange coefficient adapts and the matrix is
/// projected onto the Frobenius ball if it drifted outside, so the final
/// matrix always satisfies the budget.
pub fn train_hecsa<T: Real, R: Rng>(
    model: &mut HecsaModelBase<T>,
    data: &TensorBase<T>,
    cfg: &HecsaConfig,
    rng: &mut R,
) -> Result<TrainLog, CoreError> {
    let (count, dim) = data.rows_cols();
    if dim != model.signal_dim() {
        return Err(CoreError::Dimension(format!(
            "data dim {dim} does not match model signal dim {}",
            model.signal_dim()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || count == 0 {
        return Err(CoreError::Argument(
            "epochs, batch size, and data must be non-empty".into(),
        ));
    }
    if cfg.sigma < 0.0 || cfg.lr <= 0.0 || cfg.lagrange_init <= 0.0 {
        return Err(CoreError::Argument(
            "sigma must be non-negative; learning rate and lagrange positive".into(),
        ));
    }
    let m = model.measurements();
    let mut opt = AdamStateBase::new(real::<T>(cfg.lr));
    let mut lagrange = cfg.lagrange_init;
    let mut order: Vec<usize> = (0..count).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        for i in (1..count).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk.len();
            let mut xb = vec![T::zero(); batch * dim];
            for (row, &idx) in chunk.iter().enumerate() {
                xb[row * dim..(row + 1) * dim].copy_from_slice(data.row(idx));
            }
            let xb = TensorBase::from_parts(vec![batch, dim], xb);
            let noise: Vec<T> = (0..batch * m)
                .map(|_| real::<T>(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let noise = TensorBase::from_parts(vec![batch, m], noise);
            let (loss, grads) =
                hecsa_loss_and_grads(model, &xb, &noise, cfg.sigma, lagrange)?;
            total += loss * batch as f64;
            opt.begin_step();
            opt.update("w", &mut model.w, &grads.d_w)?;
            model.decoder.apply_grads("decoder", &grads.decoder, &mut opt)?;
        }
        let frobenius = model.w.frobenius_norm();
        let (new_lag, project) = adjust_lagrange(frobenius, model.norm_bound, lagrange);
        lagrange = new_lag;
        if project {
            let scale = real::<T>(model.norm_bound / frobenius);
            for v in model.w.as_mut_slice() {
                *v *= scale;
            }
        }
        log.rows.push(TrainLogRow {
            epoch,
            loss: total / count as f64,
            frobenius: model.w.frobenius_norm(),
            lagrange,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::numeric_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences_including_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = HecsaModelBase::<f64>::init(3, 6, 5, &mut rng).unwrap();
        let x = TensorBase::new(
            vec![2, 6],
            (0..12).map(|v| (v as f64 * 0.21).cos().abs()).collect(),
        )
        .unwrap();
        let noise = TensorBase::new(
            vec![2, 3],
            vec![0.7, -0.2, 1.4, -0.9, 0.05, 0.6],
        )
        .unwrap();
        let lagrange = 0.01;
        let (_, grads) = hecsa_loss_and_grads(&model, &x, &noise, 0.1, lagrange).unwrap();

        // FD of the full objective: data term plus lagrange * ||W||_F^2.
        let full = |m: &HecsaModelBase<f64>| {
            let (data, _) = hecsa_loss_and_grads(m, &x, &noise, 0.1, lagrange).unwrap();
            let fro2: f64 = m.w.as_slice().iter().map(|v| v * v).sum();
            data + lagrange * fro2
        };
        let numeric = numeric_grad(grads.d_w.len(), 1e-6, |idx, eps| {
            let mut probe = model.clone();
            probe.w.as_mut_slice()[idx] += eps;
            full(&probe)
        });
        for (a, n) in grads.d_w.as_slice().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-4 * (1.0 + n.abs()), "{a} vs {n}");
        }
        let numeric = numeric_grad(grads.decoder.layers[1].d_weight.len(), 1e-6, |idx, eps| {
            let mut probe = model.clone();
            let mut layers = probe.decoder.layers().to_vec();
            layers[1].weight.as_mut_slice()[idx] += eps;
            probe.decoder = MlpBase::from_layers(layers).unwrap();
            full(&probe)
        });
        for (a, n) in grads.decoder.layers[1].d_weight.as_slice().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-4 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn lagrange_schedule_doubles_halves_and_floors() {
        assert_eq!(adjust_lagrange(10.5, 10.0, 1e-3), (2e-3, true));
        assert_eq!(adjust_lagrange(9.0, 10.0, 1e-3), (5e-4, false));
        assert_eq!(adjust_lagrange(9.7, 10.0, 1e-3), (1e-3, false));
        // Halving floors at 1e-8.
        assert_eq!(adjust_lagrange(1.0, 10.0, 1.5e-8), (1e-8, false));
    }

    #[test]
    fn training_reduces_loss_and_respects_the_norm_budget() {
        let mut data = vec![0.0f32; 60 * 8];
        for (i, v) in data.iter_mut().enumerate() {
            *v = if (i + i / 8) % 3 == 0 { 0.8 } else { 0.05 };
        }
        let data = TensorBase::new(vec![60, 8], data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = HecsaModelBase::<f32>::init(4, 8, 16, &mut rng).unwrap();
        let cfg = HecsaConfig {
            epochs: 15,
            batch_size: 16,
            sigma: 0.05,
            ..Default::default()
        };
        let log = train_hecsa(&mut model, &data, &cfg, &mut rng).unwrap();
        assert_eq!(log.rows.len(), 15);
        assert!(log.rows.last().unwrap().loss < log.rows.first().unwrap().loss);
        assert!(model.w.frobenius_norm() <= model.norm_bound + 1e-4);
        for row in &log.rows {
            assert!(row.frobenius <= model.norm_bound + 1e-4);
            assert!(row.lagrange >= 1e-8);
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = TensorBase::new(vec![20, 5], vec![0.4f32; 100]).unwrap();
        let cfg = HecsaConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut model = HecsaModelBase::<f32>::init(2, 5, 6, &mut rng).unwrap();
            train_hecsa(&mut model, &data, &cfg, &mut rng).unwrap();
            model
        };
        let a = run();
        let b = run();
        assert_eq!(a.w.as_slice(), b.w.as_slice());
        assert_eq!(
            a.decoder.layers()[2].bias.as_slice(),
            b.decoder.layers()[2].bias.as_slice()
        );
    }

    #[test]
    fn reconstruct_clamps_to_pixel_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = HecsaModelBase::<f32>::init(2, 4, 8, &mut rng).unwrap();
        let y = TensorBase::new(vec![1, 2], vec![50.0f32, -50.0]).unwrap();
        let xh = model.reconstruct(&y).unwrap();
        assert!(xh.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn train_log_csv_header_is_stable() {
        let log = TrainLog {
            rows: vec![TrainLogRow {
                epoch: 0,
                loss: 12.25,
                frobenius: 27.9,
                lagrange: 1e-3,
            }],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("epoch,loss,frobenius,lagrange\n"));
        assert!(csv.contains("0,12.250000,27.900000,1.000000e-3"));
    }
}
