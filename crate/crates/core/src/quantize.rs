//! Scalar quantization of bottleneck latents to integer symbols.
//!
//! Latents are rounded half-to-even onto the integer grid, bounded by
//! [`Z_MAX`] so the entropy-coder tables have fixed support. Values beyond
//! the representable band are a range error, not a silent clamp: a latent
//! that far outside means the model and prior have diverged.

use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Symbols live in `[-Z_MAX, Z_MAX]`.
pub const Z_MAX: i32 = 32;

/// Integer symbols plus the latent's original shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLatent {
    pub symbols: Vec<i32>,
    pub shape: Vec<usize>,
}

fn round_half_even(v: f64) -> f64 {
    let fract = v - v.trunc();
    if fract.abs() == 0.5 {
        let f = v.floor();
        if (f as i64) % 2 == 0 {
            f
        } else {
            v.ceil()
        }
    } else {
        v.round()
    }
}

/// Rounds each value half-to-even. Values with `|v| > Z_MAX + 0.5` do not
/// fit the symbol alphabet and produce a range error naming the offending
/// index.
pub fn quantize<T: Real>(latent: &TensorBase<T>) -> Result<QuantizedLatent, CoreError> {
    let mut symbols = Vec::with_capacity(latent.len());
    for (i, v) in latent.as_slice().iter().enumerate() {
        let f = v.to_f64_lossy();
        if f.abs() > Z_MAX as f64 + 0.5 {
            return Err(CoreError::Range(format!(
                "latent[{i}] = {f} exceeds the quantizer band [-{b}, {b}]",
                b = Z_MAX as f64 + 0.5
            )));
        }
        symbols.push(round_half_even(f) as i32);
    }
    Ok(QuantizedLatent {
        symbols,
        shape: latent.shape().to_vec(),
    })
}

/// Maps symbols back to reals (integers are exact in both f32 and f64).
pub fn dequantize<T: Real>(q: &QuantizedLatent) -> TensorBase<T> {
    let data = q.symbols.iter().map(|&s| real::<T>(s as f64)).collect();
    TensorBase::from_parts(q.shape.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_round_to_even() {
        let z = TensorBase::new(
            vec![8],
            vec![0.5f64, 1.5, 2.5, -0.5, -1.5, -2.5, 3.5, -3.5],
        )
        .unwrap();
        let q = quantize(&z).unwrap();
        assert_eq!(q.symbols, vec![0, 2, 2, 0, -2, -2, 4, -4]);
    }

    #[test]
    fn non_ties_round_to_nearest() {
        let z = TensorBase::new(vec![5], vec![0.49f32, 0.51, -1.2, 1.8, 0.0]).unwrap();
        assert_eq!(quantize(&z).unwrap().symbols, vec![0, 1, -1, 2, 0]);
    }

    #[test]
    fn quantization_is_idempotent() {
        let z = TensorBase::new(vec![6], vec![-4.3f32, 2.5, 0.49, 31.6, -32.5, 7.0]).unwrap();
        let q1 = quantize(&z).unwrap();
        let q2 = quantize(&dequantize::<f32>(&q1)).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn band_edges_are_inclusive_and_beyond_is_an_error() {
        let edge = TensorBase::new(vec![2], vec![32.5f64, -32.5]).unwrap();
        let q = quantize(&edge).unwrap();
        assert_eq!(q.symbols, vec![32, -32]);
        let over = TensorBase::new(vec![1], vec![32.6f64]).unwrap();
        let err = quantize(&over).unwrap_err();
        assert!(matches!(err, CoreError::Range(_)));
        assert!(err.to_string().contains("latent[0]"));
    }

    #[test]
    fn dequantize_preserves_shape() {
        let z = TensorBase::new(vec![2, 3], vec![1.2f32; 6]).unwrap();
        let q = quantize(&z).unwrap();
        let back = dequantize::<f32>(&q);
        assert_eq!(back.shape(), &[2, 3]);
        assert!(back.as_slice().iter().all(|v| *v == 1.0));
    }
}
