use std::collections::HashMap;

use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Adam optimizer with first/second moment slots keyed by parameter name.
///
/// One `begin_step()` advances the shared time step; every parameter updated
/// afterwards (until the next `begin_step`) uses the same bias correction, so
/// a model spanning several tensors behaves like a single optimizer step.
#[derive(Debug, Clone)]
pub struct AdamStateBase<T: Real> {
    lr: T,
    beta1: f64,
    beta2: f64,
    eps: T,
    t: u64,
    slots: HashMap<String, Slot<T>>,
}

#[derive(Debug, Clone)]
struct Slot<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> AdamStateBase<T> {
    /// Standard moment decay rates 0.9 / 0.999 and epsilon 1e-8.
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: real(1e-8),
            t: 0,
            slots: HashMap::new(),
        }
    }

    pub fn learning_rate(&self) -> T {
        self.lr
    }

    /// Advances the shared time step. Call once per optimizer step, before
    /// any `update`.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies one Adam update to `value` in place.
    pub fn update(
        &mut self,
        name: &str,
        value: &mut TensorBase<T>,
        grad: &TensorBase<T>,
    ) -> Result<(), CoreError> {
        if self.t == 0 {
            return Err(CoreError::Training(format!(
                "optimizer step not started before updating `{name}`"
            )));
        }
        if value.shape() != grad.shape() {
            return Err(CoreError::Dimension(format!(
                "`{name}`: parameter shape {:?} does not match gradient shape {:?}",
                value.shape(),
                grad.shape()
            )));
        }
        if !grad.is_all_finite() {
            return Err(CoreError::Training(format!(
                "non-finite gradient for `{name}`"
            )));
        }
        let len = value.len();
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        });
        if slot.m.len() != len {
            return Err(CoreError::Dimension(format!(
                "`{name}`: parameter length changed from {} to {}",
                slot.m.len(),
                len
            )));
        }
        let b1 = real::<T>(self.beta1);
        let b2 = real::<T>(self.beta2);
        let c1 = real::<T>(1.0 - self.beta1.powi(self.t as i32));
        let c2 = real::<T>(1.0 - self.beta2.powi(self.t as i32));
        let one = T::one();
        for ((p, g), (m, v)) in value
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
