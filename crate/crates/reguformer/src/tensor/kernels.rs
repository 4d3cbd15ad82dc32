//! Pure value kernels on flat row-major `f64` buffers.
//!
//! The tape's forward pass and the inference/benchmark paths both call these
//! functions, so the two paths produce bit-identical values by construction.

/// `C[m,n] = A[m,k] * B[k,n]`, row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `B[n,m] = A[m,n]^T`.
pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            let e = (v - max).exp();
            *d = e;
            sum += e;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

/// Log-sum-exp of a slice with max shift.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row layer normalization over the last axis, followed by the affine
/// map `gain * x_hat + bias`. Returns `(output, x_hat, inv_std)`; the latter
/// two are the quantities the backward rule needs.
pub fn layer_norm(
    x: &[f64],
    rows: usize,
    cols: usize,
    gain: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; x.len()];
    let mut x_hat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = istd;
        for j in 0..cols {
            let h = (row[j] - mean) * istd;
            x_hat[r * cols + j] = h;
            out[r * cols + j] = gain[j] * h + bias[j];
        }
    }
    (out, x_hat, inv_std)
}

/// Column means of a `[rows, cols]` matrix, as a length-`cols` vector.
pub fn col_mean(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for j in 0..cols {
            out[j] += x[r * cols + j];
        }
    }
    for v in out.iter_mut() {
        *v /= rows as f64;
    }
    out
}

/// Rows of `x` at `indices`, concatenated.
pub fn gather_rows(x: &[f64], cols: usize, indices: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        out.extend_from_slice(&x[i * cols..(i + 1) * cols]);
    }
    out
}
