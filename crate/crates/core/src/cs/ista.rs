use crate::cs::operator::MeasurementOperatorBase;
use crate::cs::report::recon_error;
use crate::scalar::{real, Real};
use crate::tensor::TensorBase;
use crate::CoreError;

/// Objective history of one ISTA run. `objectives[i]` is the full objective
/// `0.5||Y - X W^T||^2 + lambda ||X||_1` (summed over the batch) of the
/// iterate before update `i`; the last entry belongs to the returned iterate.
#[derive(Debug, Clone)]
pub struct IstaTrace {
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest eigenvalue of `W^T W` (the squared spectral norm), via power
/// iteration on the smaller Gram matrix, accumulated in f64.
pub fn power_iteration<T: Real>(w: &TensorBase<T>) -> Result<f64, CoreError> {
    if w.rank() != 2 {
        return Err(CoreError::Dimension(format!(
            "spectral norm needs a rank-2 matrix, got {:?}",
            w.shape()
        )));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let wf: Vec<f64> = w.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
    // Gram on the smaller side; the nonzero spectrum is shared.
    let d = m.min(n);
    let mut gram = vec![0.0f64; d * d];
    if m <= n {
        for i in 0..m {
            for j in i..m {
                let s: f64 = (0..n).map(|k| wf[i * n + k] * wf[j * n + k]).sum();
                gram[i * m + j] = s;
                gram[j * m + i] = s;
            }
        }
    } else {
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..m).map(|k| wf[k * n + i] * wf[k * n + j]).sum();
                gram[i * n + j] = s;
                gram[j * n + i] = s;
            }
        }
    }
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0f64;
    for _ in 0..300 {
        let mut gv = vec![0.0f64; d];
        for i in 0..d {
            gv[i] = (0..d).map(|j| gram[i * d + j] * v[j]).sum();
        }
        let norm = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(CoreError::Argument(
                "operator has zero spectral norm".into(),
            ));
        }
        let next = v.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>();
        for x in gv.iter_mut() {
            *x /= norm;
        }
        v = gv;
        if (next - lambda).abs() <= 1e-12 * next.abs().max(1.0) {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

/// Batched ISTA for `min_X 0.5||Y - X W^T||^2 + lambda ||X||_1`, one signal
/// per row of `Y`, starting from zero with step `1/L`.
///
/// Stops early when the objective decrease over a ten-iteration window falls
/// below `tol` per batch row. The objective is checked against the previous
/// iterate every iteration and must not increase beyond accumulated rounding
/// slack; a real increase reports a training error instead of silently
/// continuing.
pub fn ista_lasso<T: Real>(
    op: &MeasurementOperatorBase<T>,
    y: &TensorBase<T>,
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(TensorBase<T>, IstaTrace), CoreError> {
    let (batch, m_cols) = y.rows_cols();
    let (m, n) = (op.measurements(), op.signal_dim());
    if m_cols != m {
        return Err(CoreError::Dimension(format!(
            "measurements have {m_cols} columns, operator produces {m}"
        )));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(CoreError::Argument(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let big_l = power_iteration(op.matrix())?;
    if big_l <= 0.0 {
        return Err(CoreError::Argument(
            "operator has zero spectral norm".into(),
        ));
    }
    let step = real::<T>(1.0 / big_l);
    let thresh = real::<T>(lambda / big_l);
    let slack_scale = 256.0 * T::epsilon().to_f64_lossy();

    let mut x = TensorBase::from_parts(vec![batch, n], vec![T::zero(); batch * n]);
    let mut objectives: Vec<f64> = Vec::with_capacity(max_iters.min(4096) + 1);
    let mut converged = false;
    let mut iterations = 0usize;

    for it in 0..=max_iters {
        // Residual of the current iterate; doubles as the gradient input.
        let mut residual = x.matmul_bt(op.matrix());
        for (r, yv) in residual.as_mut_slice().iter_mut().zip(y.as_slice()) {
            *r -= *yv;
        }
        let smooth: f64 = residual
            .as_slice()
            .iter()
            .map(|v| {
                let f = v.to_f64_lossy();
                f * f
            })
            .sum();
        let l1: f64 = x.as_slice().iter().map(|v| v.to_f64_lossy().abs()).sum();
        let obj = 0.5 * smooth + lambda * l1;
        if let Some(&prev) = objectives.last() {
            let slack = (slack_scale * (1.0 + prev.abs())).max(1e-12 * (1.0 + prev.abs()));
            if obj > prev + slack {
                return Err(CoreError::Training(format!(
                    "objective increased at iteration {it}: {prev} -> {obj}"
                )));
            }
        }
        objectives.push(obj);
        if it >= 10 && it % 10 == 0 {
            let window_start = objectives[objectives.len() - 11];
            if window_start - obj < tol * batch as f64 {
                converged = true;
                break;
            }
        }
        if it == max_iters {
            break;
        }

        let grad = residual.matmul(op.matrix());
        for (xv, g) in x.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            let z = *xv - step * *g;
            *xv = if z > thresh {
                z - thresh
            } else if z < -thresh {
                z + thresh
            } else {
                T::zero()
            };
        }
        iterations = it + 1;
    }

    Ok((
        x,
        IstaTrace {
            objectives,
            iterations,
            converged,
        },
    ))
}

/// Runs the solver once per grid point against a held-out batch with known
/// signals and returns the grid value minimizing mean reconstruction error,
/// together with that error and the full per-lambda curve. Ties keep the
/// first (smallest) lambda.
pub fn select_lambda<T: Real>(
    op: &MeasurementOperatorBase<T>,
    y_val: &TensorBase<T>,
    x_val: &TensorBase<T>,
    grid: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<(f64, f64, Vec<(f64, f64)>), CoreError> {
    if grid.is_empty() {
        return Err(CoreError::Argument("lambda grid is empty".into()));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let (x_hat, _) = ista_lasso(op, y_val, lambda, max_iters, tol)?;
        let errs = recon_error(x_val, &x_hat)?;
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        curve.push((lambda, mean));
        if best.map_or(true, |(_, e)| mean < e) {
            best = Some((lambda, mean));
        }
    }
    let (lambda, err) = best.unwrap();
    Ok((lambda, err, curve))
}
