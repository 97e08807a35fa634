use rand::Rng;
use rand_distr::StandardNormal;

use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Random linear measurement `y = W x + noise` with `W` of shape
/// `[measurements, signal_dim]`. Signals are batched row-wise, so the
/// measured batch is `X W^T`.
#[derive(Debug, Clone)]
pub struct MeasurementOperatorBase<T: Real> {
    w: TensorBase<T>,
}

impl<T: Real> MeasurementOperatorBase<T> {
    /// Gaussian operator with entries `N(0, 1/m)`, the scaling that keeps
    /// `E||Wx||^2 = ||x||^2` independent of the measurement count.
    pub fn gaussian<R: Rng>(
        measurements: usize,
        signal_dim: usize,
        rng: &mut R,
    ) -> Result<Self, CoreError> {
        if measurements == 0 || signal_dim == 0 {
            return Err(CoreError::Argument(
                "operator dimensions must be positive".into(),
            ));
        }
        let scale = (1.0 / measurements as f64).sqrt();
        let data = (0..measurements * signal_dim)
            .map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                real::<T>(g * scale)
            })
            .collect();
        Ok(Self {
            w: TensorBase::from_parts(vec![measurements, signal_dim], data),
        })
    }

    pub fn from_matrix(w: TensorBase<T>) -> Result<Self, CoreError> {
        if w.rank() != 2 {
            return Err(CoreError::Dimension(format!(
                "measurement matrix must be rank 2, got {:?}",
                w.shape()
            )));
        }
        Ok(Self { w })
    }

    pub fn matrix(&self) -> &TensorBase<T> {
        &self.w
    }

    pub fn measurements(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn signal_dim(&self) -> usize {
        self.w.shape()[1]
    }

    /// `X W^T` for row-wise signals.
    pub fn measure_clean(&self, x: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        let (_, cols) = x.rows_cols();
        if cols != self.signal_dim() {
            return Err(CoreError::Dimension(format!(
                "operator expects signals of dim {}, got {}",
                self.signal_dim(),
                cols
            )));
        }
        Ok(x.matmul_bt(&self.w))
    }

    /// `X W^T + sigma * xi` with `xi` standard normal.
    pub fn measure<R: Rng>(
        &self,
        x: &TensorBase<T>,
        sigma: f64,
        rng: &mut R,
    ) -> Result<TensorBase<T>, CoreError> {
        if sigma < 0.0 {
            return Err(CoreError::Argument(format!(
                "noise level must be non-negative, got {sigma}"
            )));
        }
        let mut y = self.measure_clean(x)?;
        if sigma > 0.0 {
            for v in y.as_mut_slice() {
                let g: f64 = rng.sample(StandardNormal);
                *v += real::<T>(g * sigma);
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_operator_preserves_expected_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let op = MeasurementOperatorBase::<f64>::gaussian(50, 200, &mut rng).unwrap();
        // One deterministic signal; E||Wx||^2 should be near ||x||^2.
        let x = TensorBase::new(vec![1, 200], vec![0.5; 200]).unwrap();
        let y = op.measure_clean(&x).unwrap();
        let energy_in: f64 = x.as_slice().iter().map(|v| v * v).sum();
        let energy_out: f64 = y.as_slice().iter().map(|v| v * v).sum();
        assert!((energy_out / energy_in - 1.0).abs() < 0.5);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let op = {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            MeasurementOperatorBase::<f32>::gaussian(4, 10, &mut rng).unwrap()
        };
        let x = TensorBase::new(vec![3, 10], vec![0.25; 30]).unwrap();
        let a = op
            .measure(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = op
            .measure(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = op
            .measure(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(10))
            .unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn dimension_and_argument_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(MeasurementOperatorBase::<f32>::gaussian(0, 5, &mut rng).is_err());
        let op = MeasurementOperatorBase::<f32>::gaussian(3, 5, &mut rng).unwrap();
        let bad = TensorBase::new(vec![2, 4], vec![0.0; 8]).unwrap();
        assert!(op.measure_clean(&bad).is_err());
        let x = TensorBase::new(vec![2, 5], vec![0.0; 10]).unwrap();
        assert!(op.measure(&x, -0.1, &mut rng).is_err());
    }
}
