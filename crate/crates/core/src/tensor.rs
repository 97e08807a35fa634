use crate::{CoreError, Real};

/// Dense row-major array of reals with an explicit shape.
///
/// Rank 1 holds a single signal/latent/logit vector; rank 2 holds a batch,
/// one sample per row. The three matrix products below are the only hot
/// loops in the crate; each uses a fixed summation order so repeated runs
/// are bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> TensorBase<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, CoreError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(CoreError::Dimension(format!(
                "shape {shape:?} wants {expect} entries, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Argument("non-finite tensor entry".into()));
        }
        Ok(TensorBase { shape, data })
    }

    /// Constructor for internally computed values whose shape is known
    /// correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorBase { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        TensorBase {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        TensorBase {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, CoreError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Rows and columns of a rank-2 tensor; a rank-1 tensor is read as a
    /// single row.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => panic!("rows_cols on rank-{} tensor {s:?}", s.len()),
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let (_, cols) = self.rows_cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        TensorBase {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        TensorBase {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Frobenius norm, accumulated in f64.
    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64_lossy();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `self · other` for matching shapes, accumulated in f64.
    pub fn dot_f64(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.to_f64_lossy() * b.to_f64_lossy())
            .sum()
    }

    /// C = A·B for A `[M,K]`, B `[K,N]`.
    ///
    /// i-k-j loop order: the inner update is a contiguous scaled row add,
    /// which vectorizes without reordering any sum.
    pub fn matmul(&self, b: &Self) -> Self {
        let (m, k) = self.rows_cols();
        let (k2, n) = b.rows_cols();
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let c_row = &mut out[i * n..(i + 1) * n];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &b.data[kk * n..(kk + 1) * n];
                for (c, &bv) in c_row.iter_mut().zip(b_row) {
                    *c += a * bv;
                }
            }
        }
        TensorBase::from_parts(vec![m, n], out)
    }

    /// C = Aᵀ·B for A `[K,M]`, B `[K,N]` (no materialized transpose).
    pub fn matmul_at(&self, b: &Self) -> Self {
        let (k, m) = self.rows_cols();
        let (k2, n) = b.rows_cols();
        assert_eq!(k, k2, "matmul_at inner dims {k} vs {k2}");
        let mut out = vec![T::zero(); m * n];
        for kk in 0..k {
            let a_row = &self.data[kk * m..(kk + 1) * m];
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                let c_row = &mut out[i * n..(i + 1) * n];
                for (c, &bv) in c_row.iter_mut().zip(b_row) {
                    *c += a * bv;
                }
            }
        }
        TensorBase::from_parts(vec![m, n], out)
    }

    /// C = A·Bᵀ for A `[M,K]`, B `[N,K]`.
    pub fn matmul_bt(&self, b: &Self) -> Self {
        let (m, k) = self.rows_cols();
        let (n, k2) = b.rows_cols();
        assert_eq!(k, k2, "matmul_bt inner dims {k} vs {k2}");
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &b.data[j * k..(j + 1) * k];
                out.push(dot(a_row, b_row));
            }
        }
        TensorBase::from_parts(vec![m, n], out)
    }
}

/// 32-lane unrolled dot product: four independent 8-wide accumulator blocks
/// keep several vector registers in flight instead of stalling on one
/// chain's add latency. The lane split changes the summation order relative
/// to a naive loop, but the order is fixed by this code, so results stay
/// deterministic.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 32];
    let mut chunks_a = a.chunks_exact(32);
    let mut chunks_b = b.chunks_exact(32);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for l in 0..32 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut lanes = [T::zero(); 8];
    for l in 0..8 {
        lanes[l] = (acc[l] + acc[l + 16]) + (acc[l + 8] + acc[l + 24]);
    }
    let mut s = ((lanes[0] + lanes[4]) + (lanes[2] + lanes[6]))
        + ((lanes[1] + lanes[5]) + (lanes[3] + lanes[7]));
    for (&ra, &rb) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        s = s + ra * rb;
    }
    s
}
