//! Factorized logistic prior over bottleneck latents.
//!
//! Each latent dimension gets an independent logistic distribution with
//! location `mu` and scale `exp(log_s)`. During training the continuous
//! density prices the rate term; at coding time the density is discretized
//! into a pmf over the integer symbols, with both tails folded into the edge
//! symbols so the alphabet stays finite.

use hecsb_codec::CdfTable;

use crate::quantize::Z_MAX;
use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Scales are floored here when refitting, so a collapsed latent dimension
/// cannot produce a degenerate table.
const MIN_SCALE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct FactorizedPriorBase<T: Real> {
    pub mu: TensorBase<T>,
    pub log_s: TensorBase<T>,
}

/// Gradients of the summed log density.
#[derive(Debug, Clone)]
pub struct PriorGrads<T: Real> {
    pub d_z: TensorBase<T>,
    pub d_mu: TensorBase<T>,
    pub d_log_s: TensorBase<T>,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        t.exp().ln_1p()
    }
}

impl<T: Real> FactorizedPriorBase<T> {
    /// Standard logistic on every dimension.
    pub fn standard(dims: usize) -> Result<Self, CoreError> {
        if dims == 0 {
            return Err(CoreError::Argument("prior needs at least one dimension".into()));
        }
        Ok(Self {
            mu: TensorBase::from_parts(vec![dims], vec![T::zero(); dims]),
            log_s: TensorBase::from_parts(vec![dims], vec![T::zero(); dims]),
        })
    }

    pub fn from_parts(mu: TensorBase<T>, log_s: TensorBase<T>) -> Result<Self, CoreError> {
        if mu.rank() != 1 || mu.shape() != log_s.shape() {
            return Err(CoreError::Dimension(format!(
                "prior parameters must be equal-length vectors, got {:?} and {:?}",
                mu.shape(),
                log_s.shape()
            )));
        }
        Ok(Self { mu, log_s })
    }

    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    /// Sum over all entries of `log f(z)` for row-wise latents `[batch, dims]`,
    /// where `f` is the logistic density of each column's distribution:
    /// `log f = -t - log s - 2 softplus(-t)` with `t = (z - mu) / s`.
    pub fn log_density_sum(&self, z: &TensorBase<T>) -> Result<f64, CoreError> {
        self.check_cols(z)?;
        let d = self.dims();
        let mut total = 0.0f64;
        for row in z.as_slice().chunks_exact(d) {
            for (i, v) in row.iter().enumerate() {
                let s = self.log_s.as_slice()[i].to_f64_lossy().exp();
                let log_s = self.log_s.as_slice()[i].to_f64_lossy();
                let t = (v.to_f64_lossy() - self.mu.as_slice()[i].to_f64_lossy()) / s;
                total += -t - log_s - 2.0 * softplus(-t);
            }
        }
        Ok(total)
    }

    /// Summed log density plus its gradients:
    /// `d/dz = (1 - 2 sigma(t)) / s`, `d/dmu = -(1 - 2 sigma(t)) / s`,
    /// `d/dlog_s = (1 - 2 sigma(t)) * (-t) - 1`, accumulated over the batch
    /// for the parameter gradients.
    pub fn log_density_grads(
        &self,
        z: &TensorBase<T>,
    ) -> Result<(f64, PriorGrads<T>), CoreError> {
        self.check_cols(z)?;
        let d = self.dims();
        let mut total = 0.0f64;
        let mut d_z = vec![T::zero(); z.len()];
        let mut d_mu = vec![0.0f64; d];
        let mut d_log_s = vec![0.0f64; d];
        for (r, row) in z.as_slice().chunks_exact(d).enumerate() {
            for (i, v) in row.iter().enumerate() {
                let log_s = self.log_s.as_slice()[i].to_f64_lossy();
                let s = log_s.exp();
                let t = (v.to_f64_lossy() - self.mu.as_slice()[i].to_f64_lossy()) / s;
                total += -t - log_s - 2.0 * softplus(-t);
                let core = 1.0 - 2.0 * sigmoid(t);
                d_z[r * d + i] = real::<T>(core / s);
                d_mu[i] += -core / s;
                d_log_s[i] += core * (-t) - 1.0;
            }
        }
        Ok((
            total,
            PriorGrads {
                d_z: TensorBase::from_parts(z.shape().to_vec(), d_z),
                d_mu: TensorBase::from_parts(
                    vec![d],
                    d_mu.into_iter().map(real::<T>).collect(),
                ),
                d_log_s: TensorBase::from_parts(
                    vec![d],
                    d_log_s.into_iter().map(real::<T>).collect(),
                ),
            },
        ))
    }

    /// Probability mass of each integer symbol in `[-Z_MAX, Z_MAX]` for one
    /// dimension: the logistic CDF over the symbol's unit bin, with the open
    /// tails folded into the edge symbols. Sums to 1 by construction.
    pub fn pmf_for_dim(&self, dim: usize) -> Result<Vec<f64>, CoreError> {
        if dim >= self.dims() {
            return Err(CoreError::Argument(format!(
                "dimension {dim} out of range for {} prior dims",
                self.dims()
            )));
        }
        let mu = self.mu.as_slice()[dim].to_f64_lossy();
        let s = self.log_s.as_slice()[dim].to_f64_lossy().exp();
        let cdf = |x: f64| sigmoid((x - mu) / s);
        let lo = -Z_MAX;
        let hi = Z_MAX;
        let mut pmf = Vec::with_capacity((hi - lo + 1) as usize);
        for v in lo..=hi {
            let upper = if v == hi { 1.0 } else { cdf(v as f64 + 0.5) };
            let lower = if v == lo { 0.0 } else { cdf(v as f64 - 0.5) };
            pmf.push(upper - lower);
        }
        Ok(pmf)
    }

    /// `(min_symbol, pmf)` per dimension, the input format of the coder's
    /// table builder.
    pub fn pmfs(&self) -> Result<Vec<(i32, Vec<f64>)>, CoreError> {
        (0..self.dims())
            .map(|d| Ok((-Z_MAX, self.pmf_for_dim(d)?)))
            .collect()
    }

    /// Quantized coding table for the current parameters.
    pub fn build_cdf(&self) -> Result<CdfTable, CoreError> {
        Ok(CdfTable::from_pmfs(&self.pmfs()?)?)
    }

    /// Refits by moment matching on observed latents: `mu` is the column
    /// mean and the scale is `std * sqrt(3) / pi` (the logistic distribution
    /// has variance `s^2 pi^2 / 3`), floored to keep the table well-formed.
    pub fn fit_moments(&mut self, latents: &TensorBase<T>) -> Result<(), CoreError> {
        self.check_cols(latents)?;
        let d = self.dims();
        let (rows, _) = latents.rows_cols();
        if rows == 0 {
            return Err(CoreError::Argument("cannot fit a prior to no data".into()));
        }
        let mut mean = vec![0.0f64; d];
        for row in latents.as_slice().chunks_exact(d) {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v.to_f64_lossy();
            }
        }
        for m in mean.iter_mut() {
            *m /= rows as f64;
        }
        let mut var = vec![0.0f64; d];
        for row in latents.as_slice().chunks_exact(d) {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let diff = v.to_f64_lossy() - m;
                *acc += diff * diff;
            }
        }
        for (i, v) in var.iter().enumerate() {
            let std = (v / rows as f64).sqrt();
            let s = (std * 3.0f64.sqrt() / std::f64::consts::PI).max(MIN_SCALE);
            self.mu.as_mut_slice()[i] = real::<T>(mean[i]);
            self.log_s.as_mut_slice()[i] = real::<T>(s.ln());
        }
        Ok(())
    }

    fn check_cols(&self, z: &TensorBase<T>) -> Result<(), CoreError> {
        let (_, cols) = z.rows_cols();
        if cols != self.dims() {
            return Err(CoreError::Dimension(format!(
                "latents have {cols} columns, prior has {} dimensions",
                self.dims()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::numeric_grad;

    #[test]
    fn log_density_matches_the_closed_form_logistic() {
        let prior = FactorizedPriorBase::<f64>::standard(1).unwrap();
        let z = TensorBase::new(vec![1, 1], vec![0.0]).unwrap();
        // Standard logistic density at 0 is 1/4.
        let got = prior.log_density_sum(&z).unwrap();
        assert!((got - 0.25f64.ln()).abs() < 1e-12);
        // Shifted and scaled: f(v) = sigma'(t)/s evaluated via direct formula.
        let prior = FactorizedPriorBase::from_parts(
            TensorBase::new(vec![1], vec![1.5]).unwrap(),
            TensorBase::new(vec![1], vec![0.7f64.ln()]).unwrap(),
        )
        .unwrap();
        let v = 2.3f64;
        let t = (v - 1.5) / 0.7;
        let direct = (-t).exp() / (0.7 * (1.0 + (-t).exp()).powi(2));
        let z = TensorBase::new(vec![1, 1], vec![v]).unwrap();
        assert!((prior.log_density_sum(&z).unwrap() - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let prior = FactorizedPriorBase::from_parts(
            TensorBase::new(vec![3], vec![0.4, -1.0, 2.0]).unwrap(),
            TensorBase::new(vec![3], vec![0.1, -0.5, 0.3]).unwrap(),
        )
        .unwrap();
        let z = TensorBase::new(vec![2, 3], vec![0.0, 1.0, -2.0, 3.0, -0.7, 2.2]).unwrap();
        let (_, grads) = prior.log_density_grads(&z).unwrap();

        let numeric = numeric_grad(6, 1e-6, |idx, eps| {
            let mut probe = z.clone();
            probe.as_mut_slice()[idx] += eps;
            prior.log_density_sum(&probe).unwrap()
        });
        for (a, n) in grads.d_z.as_slice().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
        let numeric = numeric_grad(3, 1e-6, |idx, eps| {
            let mut probe = prior.clone();
            probe.mu.as_mut_slice()[idx] += eps;
            probe.log_density_sum(&z).unwrap()
        });
        for (a, n) in grads.d_mu.as_slice().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
        let numeric = numeric_grad(3, 1e-6, |idx, eps| {
            let mut probe = prior.clone();
            probe.log_s.as_mut_slice()[idx] += eps;
            probe.log_density_sum(&z).unwrap()
        });
        for (a, n) in grads.d_log_s.as_slice().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn pmf_sums_to_one_with_folded_tails() {
        let prior = FactorizedPriorBase::from_parts(
            TensorBase::new(vec![2], vec![0.0f64, 28.0]).unwrap(),
            TensorBase::new(vec![2], vec![0.0, 2.0]).unwrap(),
        )
        .unwrap();
        for d in 0..2 {
            let pmf = prior.pmf_for_dim(d).unwrap();
            assert_eq!(pmf.len(), (2 * Z_MAX + 1) as usize);
            let sum: f64 = pmf.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "dim {d} sums to {sum}");
            assert!(pmf.iter().all(|p| *p >= 0.0));
        }
        // The wide, shifted dimension owes real mass to the folded upper tail.
        let wide = prior.pmf_for_dim(1).unwrap();
        assert!(wide[(2 * Z_MAX) as usize] > 0.2);
    }

    #[test]
    fn pmf_center_approximates_the_density() {
        let prior = FactorizedPriorBase::<f64>::standard(1).unwrap();
        let pmf = prior.pmf_for_dim(0).unwrap();
        let center = pmf[Z_MAX as usize];
        // Unit-width bin around 0: mass close to f(0) = 0.25.
        assert!((center - 0.25).abs() < 0.01);
    }

    #[test]
    fn moment_matching_recovers_logistic_parameters() {
        // Inverse-CDF sample of a logistic(mu = 1.2, s = 0.6) on a uniform grid.
        let (mu, s) = (1.2f64, 0.6f64);
        let n = 4000;
        let data: Vec<f64> = (1..=n)
            .map(|i| {
                let u = i as f64 / (n + 1) as f64;
                mu + s * (u / (1.0 - u)).ln()
            })
            .collect();
        let z = TensorBase::new(vec![n, 1], data).unwrap();
        let mut prior = FactorizedPriorBase::<f64>::standard(1).unwrap();
        prior.fit_moments(&z).unwrap();
        assert!((prior.mu.as_slice()[0] - mu).abs() < 0.01);
        assert!((prior.log_s.as_slice()[0].exp() - s).abs() < 0.02);
    }

    #[test]
    fn collapsed_dimension_gets_a_floored_scale_and_a_valid_table() {
        let z = TensorBase::new(vec![50, 2], {
            let mut v = Vec::with_capacity(100);
            for i in 0..50 {
                v.push(5.0f32);
                v.push((i % 7) as f32 - 3.0);
            }
            v
        })
        .unwrap();
        let mut prior = FactorizedPriorBase::<f32>::standard(2).unwrap();
        prior.fit_moments(&z).unwrap();
        assert!(prior.log_s.as_slice()[0] >= (MIN_SCALE as f32).ln() - 1e-6);
        let table = prior.build_cdf().unwrap();
        assert_eq!(table.dim_count(), 2);
    }

    #[test]
    fn coding_round_trip_through_the_fitted_prior() {
        let mut prior = FactorizedPriorBase::<f32>::standard(3).unwrap();
        let latents = TensorBase::new(vec![40, 3], {
            let mut v = Vec::with_capacity(120);
            for i in 0..40 {
                v.push((i % 5) as f32 - 2.0);
                v.push(((i * 3) % 11) as f32 * 0.5 - 2.5);
                v.push(0.25 * (i as f32 % 9.0));
            }
            v
        })
        .unwrap();
        prior.fit_moments(&latents).unwrap();
        let table = prior.build_cdf().unwrap();
        let symbols: Vec<i32> = latents
            .as_slice()
            .iter()
            .map(|v| v.round() as i32)
            .collect();
        let stream = hecsb_codec::encode(&symbols, &table).unwrap();
        let decoded = hecsb_codec::decode(&stream, &table, symbols.len()).unwrap();
        assert_eq!(decoded, symbols);
    }
}
