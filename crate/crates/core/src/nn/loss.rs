use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Probabilities below this floor are clamped inside logarithms.
const PROB_FLOOR: f64 = 1e-9;

/// Row-wise softmax with max subtraction for overflow safety.
pub fn softmax<T: Real>(logits: &TensorBase<T>) -> TensorBase<T> {
    softmax_tau(logits, T::one())
}

/// Row-wise tempered softmax: `softmax(logits / tau)`, computed as
/// `exp((l - max) / tau)` per row.
pub fn softmax_tau<T: Real>(logits: &TensorBase<T>, tau: T) -> TensorBase<T> {
    let (_, cols) = logits.rows_cols();
    let mut out = logits.clone();
    for row in out.as_mut_slice().chunks_exact_mut(cols) {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = ((*v - max) / tau).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log likelihood of the labeled class. `probs` rows must
/// already be probabilities.
pub fn cross_entropy<T: Real>(
    probs: &TensorBase<T>,
    labels: &[usize],
) -> Result<f64, CoreError> {
    let (rows, cols) = probs.rows_cols();
    if labels.len() != rows {
        return Err(CoreError::Dimension(format!(
            "{} label(s) for {} row(s)",
            labels.len(),
            rows
        )));
    }
    let mut total = 0.0;
    for (row, &label) in probs.as_slice().chunks_exact(cols).zip(labels) {
        if label >= cols {
            return Err(CoreError::Argument(format!(
                "label {label} out of range for {cols} classes"
            )));
        }
        total -= row[label].to_f64_lossy().max(PROB_FLOOR).ln();
    }
    Ok(total / rows as f64)
}

/// Mean row-wise `KL(p || q)` with both arguments floored inside the logs.
pub fn kl_divergence<T: Real>(
    p: &TensorBase<T>,
    q: &TensorBase<T>,
) -> Result<f64, CoreError> {
    if p.shape() != q.shape() {
        return Err(CoreError::Dimension(format!(
            "distribution shapes differ: {:?} vs {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let (rows, _) = p.rows_cols();
    let mut total = 0.0;
    for (pv, qv) in p.as_slice().iter().zip(q.as_slice()) {
        let pf = pv.to_f64_lossy().max(PROB_FLOOR);
        let qf = qv.to_f64_lossy().max(PROB_FLOOR);
        total += pf * (pf / qf).ln();
    }
    Ok(total / rows as f64)
}

/// Distillation objective and its gradient with respect to the student
/// logits:
///
/// `(1 - alpha) * CE(softmax(s), labels) + alpha * tau^2 * KL(p_T^tau || p_S^tau)`
///
/// where `p^tau` is the tempered softmax. The gradient per logit is
/// `((1 - alpha) * (softmax(s) - onehot) + alpha * tau * (p_S^tau - p_T^tau)) / batch`.
pub fn kd_loss<T: Real>(
    student_logits: &TensorBase<T>,
    teacher_logits: &TensorBase<T>,
    labels: &[usize],
    alpha: f64,
    tau: f64,
) -> Result<(f64, TensorBase<T>), CoreError> {
    if student_logits.shape() != teacher_logits.shape() {
        return Err(CoreError::Dimension(format!(
            "student logits {:?} vs teacher logits {:?}",
            student_logits.shape(),
            teacher_logits.shape()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::Argument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if tau <= 0.0 {
        return Err(CoreError::Argument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let (rows, cols) = student_logits.rows_cols();
    if labels.len() != rows {
        return Err(CoreError::Dimension(format!(
            "{} label(s) for {} row(s)",
            labels.len(),
            rows
        )));
    }
    let tau_t = real::<T>(tau);
    let p_s = softmax(student_logits);
    let p_s_tau = softmax_tau(student_logits, tau_t);
    let p_t_tau = softmax_tau(teacher_logits, tau_t);

    let ce = cross_entropy(&p_s, labels)?;
    let kl = kl_divergence(&p_t_tau, &p_s_tau)?;
    let loss = (1.0 - alpha) * ce + alpha * tau * tau * kl;

    let inv_batch = real::<T>(1.0 / rows as f64);
    let hard_w = real::<T>(1.0 - alpha);
    let soft_w = real::<T>(alpha * tau);
    let mut grad = vec![T::zero(); rows * cols];
    for r in 0..rows {
        let base = r * cols;
        for c in 0..cols {
            let onehot = if labels[r] == c { T::one() } else { T::zero() };
            let hard = hard_w * (p_s.as_slice()[base + c] - onehot);
            let soft = soft_w * (p_s_tau.as_slice()[base + c] - p_t_tau.as_slice()[base + c]);
            grad[base + c] = (hard + soft) * inv_batch;
        }
    }
    Ok((
        loss,
        TensorBase::from_parts(vec![rows, cols], grad),
    ))
}

/// Fraction of rows whose argmax matches the label. Ties resolve to the
/// lowest index.
pub fn batch_accuracy<T: Real>(
    logits: &TensorBase<T>,
    labels: &[usize],
) -> Result<f64, CoreError> {
    let (rows, cols) = logits.rows_cols();
    if labels.len() != rows {
        return Err(CoreError::Dimension(format!(
            "{} label(s) for {} row(s)",
            labels.len(),
            rows
        )));
    }
    let mut hits = 0usize;
    for (row, &label) in logits.as_slice().chunks_exact(cols).zip(labels) {
        let mut best = 0usize;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::numeric_grad;

    fn t(shape: &[usize], data: &[f64]) -> TensorBase<f64> {
        TensorBase::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_rows_sum_to_one_and_survive_huge_logits() {
        let logits = t(&[2, 3], &[1000.0, 999.0, 998.0, -1000.0, -1000.0, -1000.0]);
        let p = softmax(&logits);
        for row in p.as_slice().chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| v.is_finite()));
        }
        // Second row is uniform.
        assert!((p.as_slice()[3] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn temperature_flattens_the_distribution() {
        let logits = t(&[1, 3], &[4.0, 2.0, 0.0]);
        let sharp = softmax_tau(&logits, 1.0);
        let flat = softmax_tau(&logits, 100.0);
        assert!(sharp.as_slice()[0] > flat.as_slice()[0]);
        assert!((flat.as_slice()[0] - 1.0 / 3.0).abs() < 0.01);
        // Unit temperature is plain softmax.
        let plain = softmax(&logits);
        for (a, b) in sharp.as_slice().iter().zip(plain.as_slice()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn cross_entropy_perfect_and_uniform() {
        let perfect = t(&[1, 4], &[1.0, 0.0, 0.0, 0.0]);
        assert!(cross_entropy(&perfect, &[0]).unwrap() < 1e-8);
        let uniform = t(&[1, 4], &[0.25; 4]);
        assert!((cross_entropy(&uniform, &[2]).unwrap() - 4.0f64.ln()).abs() < 1e-12);
        // Zero probability is floored, not infinite.
        assert!(cross_entropy(&perfect, &[1]).unwrap().is_finite());
    }

    #[test]
    fn kl_is_zero_on_self_and_positive_otherwise() {
        let p = t(&[1, 3], &[0.5, 0.3, 0.2]);
        let q = t(&[1, 3], &[0.2, 0.5, 0.3]);
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        assert!(kl_divergence(&p, &q).unwrap() > 0.0);
    }

    #[test]
    fn kd_loss_reduces_to_cross_entropy_at_alpha_zero() {
        let s = t(&[2, 3], &[1.0, -0.5, 0.2, 0.0, 2.0, -1.0]);
        let teach = t(&[2, 3], &[0.5, 0.5, 0.5, 3.0, 0.0, 0.0]);
        let labels = [2usize, 1];
        let (loss, _) = kd_loss(&s, &teach, &labels, 0.0, 4.0).unwrap();
        let ce = cross_entropy(&softmax(&s), &labels).unwrap();
        assert!((loss - ce).abs() < 1e-12);
    }

    #[test]
    fn kd_loss_is_pure_scaled_kl_at_alpha_one() {
        let s = t(&[1, 3], &[1.0, 0.0, -1.0]);
        let teach = t(&[1, 3], &[0.2, 0.1, 0.7]);
        let (loss, _) = kd_loss(&s, &teach, &[0], 1.0, 2.0).unwrap();
        let kl = kl_divergence(&softmax_tau(&teach, 2.0), &softmax_tau(&s, 2.0)).unwrap();
        assert!((loss - 4.0 * kl).abs() < 1e-12);
    }

    #[test]
    fn kd_gradient_matches_finite_differences() {
        let s = t(&[2, 4], &[0.3, -1.2, 0.8, 0.1, -0.4, 0.9, 2.0, -0.7]);
        let teach = t(&[2, 4], &[1.1, 0.2, -0.3, 0.5, 0.0, 1.5, -0.2, 0.4]);
        let labels = [1usize, 3];
        let (_, grad) = kd_loss(&s, &teach, &labels, 0.5, 4.0).unwrap();
        let numeric = numeric_grad(8, 1e-6, |idx, eps| {
            let mut probe = s.clone();
            probe.as_mut_slice()[idx] += eps;
            kd_loss(&probe, &teach, &labels, 0.5, 4.0).unwrap().0
        });
        for (a, n) in grad.as_slice().iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-4 * (1.0 + n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn kd_loss_validates_arguments() {
        let s = t(&[1, 3], &[0.0, 0.0, 0.0]);
        assert!(kd_loss(&s, &s, &[0], -0.1, 4.0).is_err());
        assert!(kd_loss(&s, &s, &[0], 0.5, 0.0).is_err());
        assert!(kd_loss(&s, &s, &[3], 0.5, 4.0).is_err());
        let wide = t(&[1, 4], &[0.0; 4]);
        assert!(kd_loss(&s, &wide, &[0], 0.5, 4.0).is_err());
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let logits = t(&[3, 2], &[2.0, 1.0, 0.0, 5.0, 1.0, 1.0]);
        // Third row ties; argmax resolves to index 0.
        let acc = batch_accuracy(&logits, &[0, 1, 0]).unwrap();
        assert!((acc - 1.0).abs() < 1e-12);
        let acc = batch_accuracy(&logits, &[1, 1, 1]).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }
}
