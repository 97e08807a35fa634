use rand::Rng;

use crate::nn::{batch_accuracy, cross_entropy, softmax, Activation, AdamStateBase, MlpBase};
use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Classifier split into a front producing the hidden representation the
/// bottleneck will learn to reproduce, and a tail mapping that
/// representation to class logits.
#[derive(Debug, Clone)]
pub struct TeacherModelBase<T: Real> {
    pub front: MlpBase<T>,
    pub tail: MlpBase<T>,
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEpoch {
    pub loss: f64,
    pub accuracy: f64,
}

impl<T: Real> TeacherModelBase<T> {
    /// Front `input -> hidden` (ReLU), tail `hidden -> hidden -> classes`.
    pub fn init<R: Rng>(
        input_dim: usize,
        hidden_dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self, CoreError> {
        let front = MlpBase::init(&[input_dim, hidden_dim], &[Activation::Relu], rng)?;
        let tail = MlpBase::relu_net(&[hidden_dim, hidden_dim, classes], rng)?;
        Ok(Self { front, tail })
    }

    pub fn hidden_dim(&self) -> usize {
        self.front.out_dim()
    }

    /// The representation at the split point.
    pub fn hidden(&self, x: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        self.front.forward(x)
    }

    pub fn logits(&self, x: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        self.tail.forward(&self.front.forward(x)?)
    }

    pub fn logits_from_hidden(&self, h: &TensorBase<T>) -> Result<TensorBase<T>, CoreError> {
        self.tail.forward(h)
    }
}

/// Cross-entropy training with Adam on shuffled minibatches.
pub fn train_teacher<T: Real, R: Rng>(
    model: &mut TeacherModelBase<T>,
    images: &TensorBase<T>,
    labels: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
) -> Result<Vec<TeacherEpoch>, CoreError> {
    let (count, dim) = images.rows_cols();
    if labels.len() != count {
        return Err(CoreError::Dimension(format!(
            "{} label(s) for {count} image(s)",
            labels.len()
        )));
    }
    if dim != model.front.in_dim() {
        return Err(CoreError::Dimension(format!(
            "images have {dim} features, model expects {}",
            model.front.in_dim()
        )));
    }
    if epochs == 0 || batch_size == 0 || count == 0 {
        return Err(CoreError::Argument(
            "epochs, batch size, and data must be non-empty".into(),
        ));
    }
    let classes = model.tail.out_dim();
    let mut opt = AdamStateBase::new(real::<T>(lr));
    let mut order: Vec<usize> = (0..count).collect();
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        for i in (1..count).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut total_loss = 0.0f64;
        let mut total_hits = 0.0f64;
        for chunk in order.chunks(batch_size) {
            let batch = chunk.len();
            let mut xb = vec![T::zero(); batch * dim];
            let mut yb = Vec::with_capacity(batch);
            for (row, &idx) in chunk.iter().enumerate() {
                xb[row * dim..(row + 1) * dim].copy_from_slice(images.row(idx));
                yb.push(labels[idx]);
            }
            let xb = TensorBase::from_parts(vec![batch, dim], xb);
            let (h, front_cache) = model.front.forward_cached(&xb)?;
            let (logits, tail_cache) = model.tail.forward_cached(&h)?;
            let probs = softmax(&logits);
            let loss = cross_entropy(&probs, &yb)?;
            total_loss += loss * batch as f64;
            total_hits += batch_accuracy(&logits, &yb)? * batch as f64;

            // d logits = (softmax - onehot) / batch.
            let inv_batch = real::<T>(1.0 / batch as f64);
            let mut d_logits = probs;
            for (r, &label) in yb.iter().enumerate() {
                let row = &mut d_logits.as_mut_slice()[r * classes..(r + 1) * classes];
                row[label] -= T::one();
                for v in row.iter_mut() {
                    *v *= inv_batch;
                }
            }
            let tail_grads = model.tail.backward(&tail_cache, &d_logits)?;
            let front_grads = model.front.backward(&front_cache, &tail_grads.d_input)?;
            opt.begin_step();
            model.front.apply_grads("front", &front_grads, &mut opt)?;
            model.tail.apply_grads("tail", &tail_grads, &mut opt)?;
        }
        log.push(TeacherEpoch {
            loss: total_loss / count as f64,
            accuracy: total_hits / count as f64,
        });
    }
    Ok(log)
}

/// Top-1 accuracy on a held-out set, as an explicit gate: below `min_top1`
/// the teacher is not fit to distill from and this is a training error.
pub fn verify_teacher<T: Real>(
    model: &TeacherModelBase<T>,
    images: &TensorBase<T>,
    labels: &[usize],
    min_top1: f64,
) -> Result<f64, CoreError> {
    let logits = model.logits(images)?;
    let acc = batch_accuracy(&logits, labels)?;
    if acc < min_top1 {
        return Err(CoreError::Training(format!(
            "teacher top-1 accuracy {acc:.4} is below the required {min_top1:.4}"
        )));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two well-separated Gaussian-ish blobs, trivially separable.
    fn blobs() -> (TensorBase<f32>, Vec<usize>) {
        let mut data = Vec::with_capacity(80 * 4);
        let mut labels = Vec::with_capacity(80);
        for i in 0..80 {
            let class = i % 2;
            let center = if class == 0 { 0.2f32 } else { 0.8 };
            let jitter = ((i * 37) % 13) as f32 * 0.004;
            for d in 0..4 {
                data.push(center + jitter * if d % 2 == 0 { 1.0 } else { -1.0 });
            }
            labels.push(class);
        }
        (TensorBase::new(vec![80, 4], data).unwrap(), labels)
    }

    #[test]
    fn teacher_learns_separable_blobs() {
        let (images, labels) = blobs();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = TeacherModelBase::<f32>::init(4, 12, 2, &mut rng).unwrap();
        let log = train_teacher(&mut model, &images, &labels, 40, 16, 1e-2, &mut rng).unwrap();
        assert_eq!(log.len(), 40);
        assert!(log.last().unwrap().loss < log.first().unwrap().loss);
        let acc = verify_teacher(&model, &images, &labels, 0.95).unwrap();
        assert!(acc >= 0.95);
    }

    #[test]
    fn gate_rejects_an_inaccurate_teacher() {
        let (images, labels) = blobs();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = TeacherModelBase::<f32>::init(4, 12, 2, &mut rng).unwrap();
        train_teacher(&mut model, &images, &labels, 40, 16, 1e-2, &mut rng).unwrap();
        // Against flipped labels the same model is near zero accuracy, so
        // the gate must fire deterministically.
        let flipped: Vec<usize> = labels.iter().map(|&c| 1 - c).collect();
        let err = verify_teacher(&model, &images, &flipped, 0.95);
        assert!(matches!(err, Err(CoreError::Training(_))));
    }

    #[test]
    fn hidden_then_tail_equals_full_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = TeacherModelBase::<f32>::init(6, 10, 3, &mut rng).unwrap();
        let x = TensorBase::new(vec![2, 6], vec![0.3; 12]).unwrap();
        let h = model.hidden(&x).unwrap();
        let via_hidden = model.logits_from_hidden(&h).unwrap();
        let direct = model.logits(&x).unwrap();
        assert_eq!(via_hidden.as_slice(), direct.as_slice());
        assert_eq!(model.hidden_dim(), 10);
    }

    #[test]
    fn training_validates_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = TeacherModelBase::<f32>::init(4, 6, 2, &mut rng).unwrap();
        let images = TensorBase::new(vec![4, 4], vec![0.0; 16]).unwrap();
        assert!(train_teacher(&mut model, &images, &[0, 1], 1, 2, 1e-3, &mut rng).is_err());
        assert!(
            train_teacher(&mut model, &images, &[0, 1, 0, 1], 0, 2, 1e-3, &mut rng).is_err()
        );
    }
}
