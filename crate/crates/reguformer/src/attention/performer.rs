//! FAVOR+ linear attention: positive orthogonal random features estimating
//! the softmax kernel, combined in the `(K'^T V)`-first association order so
//! complexity stays linear in sequence length.

use super::{AttentionParams, AttentionSpec, AttentionWeights, AttnCtx};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Rng, Tape, Tensor, Var};

/// Normalizer entries below this are treated as degenerate.
pub const NORMALIZER_FLOOR: f64 = 1e-30;

/// Draw an `[r, d]` feature matrix: rows are standard normal, then each
/// block of up to `d` rows is Gram-Schmidt orthogonalized and rescaled back
/// to the norm of its original Gaussian row.
pub fn draw_omega(r: usize, d: usize, rng: &mut Rng) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::Config("num_rand_features must be positive".into()));
    }
    let mut rows: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..d).map(|_| rng.normal()).collect())
        .collect();
    for block in rows.chunks_mut(d) {
        let norms: Vec<f64> = block
            .iter()
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        // Gram-Schmidt within the block.
        for i in 0..block.len() {
            for j in 0..i {
                let dot: f64 = block[i].iter().zip(&block[j]).map(|(a, b)| a * b).sum();
                let nj: f64 = block[j].iter().map(|v| v * v).sum();
                if nj > 0.0 {
                    let c = dot / nj;
                    for t in 0..d {
                        block[i][t] -= c * block[j][t];
                    }
                }
            }
        }
        for (row, &orig_norm) in block.iter_mut().zip(&norms) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-12 {
                let c = orig_norm / n;
                row.iter_mut().for_each(|v| *v *= c);
            }
        }
    }
    Tensor::new(vec![r, d], rows.concat())
}

/// Positive softmax-kernel features of pre-scaled inputs:
/// `phi(x)_i = r^{-1/2} exp(omega_i . x - |x|^2 / 2)`, so that
/// `E[phi(q) . phi(k)] = exp(q . k)`.
pub fn favor_features(tape: &mut Tape, x: Var, omega: Var) -> Result<Var> {
    let (_, d) = {
        let s = tape.shape(x);
        (s[0], s[1])
    };
    let r = tape.shape(omega)[0];
    if tape.shape(omega)[1] != d {
        return Err(Error::Shape {
            op: "favor_features",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(omega).to_vec(),
        });
    }
    let l = tape.shape(x)[0];
    let omega_t = tape.transpose(omega)?;
    let proj = tape.matmul(x, omega_t)?;
    let exp_proj = tape.exp(proj);

    // row square norms via a ones-column matmul
    let ones = tape.constant(Tensor::new(vec![d, 1], vec![1.0; d]).unwrap());
    let sq = tape.mul(x, x)?;
    let row_sq = tape.matmul(sq, ones)?;
    let row_sq = tape.reshape(row_sq, vec![l])?;
    let damp = tape.scale(row_sq, -0.5);
    let damp = tape.exp(damp);

    let scaled = tape.scale_rows(exp_proj, damp)?;
    Ok(tape.scale(scaled, 1.0 / (r as f64).sqrt()))
}

/// FAVOR+ attention: `D^{-1} (Q' ((K')^T V))` with
/// `D = diag(Q' ((K')^T 1_L))`, per head, heads mixed by `W^O`.
pub fn performer_attention(
    tape: &mut Tape,
    x: Var,
    spec: &AttentionSpec,
    params: &AttentionParams,
    ctx: &mut AttnCtx<'_>,
) -> Result<Var> {
    spec.validate()?;
    let l = tape.shape(x)[0];
    let d = spec.head_dim();
    let r = spec.num_rand_features;

    let q_full = tape.matmul(x, params.wq)?;
    let k_full = tape.matmul(x, params.wk)?;
    let v_full = tape.matmul(x, params.wv)?;

    let mut heads = Vec::with_capacity(spec.num_heads);
    for h in 0..spec.num_heads {
        let q = tape.slice_cols(q_full, h * d, d)?;
        let k = tape.slice_cols(k_full, h * d, d)?;
        let v = tape.slice_cols(v_full, h * d, d)?;

        let omega = {
            let mut site = ctx.draw_site(h, 2);
            draw_omega(r, d, site.rng())?
        };
        let omega = tape.constant(omega);

        // pre-scale by d^{-1/4} so the feature dot estimates exp(q.k/sqrt(d))
        let scale_in = 1.0 / (d as f64).powf(0.25);
        let qs = tape.scale(q, scale_in);
        let ks = tape.scale(k, scale_in);
        let qp = favor_features(tape, qs, omega)?;
        let kp = favor_features(tape, ks, omega)?;

        let kp_t = tape.transpose(kp)?;
        let z = tape.matmul(kp_t, v)?;
        let num = tape.matmul(qp, z)?;

        let ones_l = tape.constant(Tensor::new(vec![l, 1], vec![1.0; l]).unwrap());
        let k_sum = tape.matmul(kp_t, ones_l)?;
        let d_col = tape.matmul(qp, k_sum)?;
        if let Some(&bad) = tape.data(d_col).iter().find(|v| v.abs() < NORMALIZER_FLOOR) {
            return Err(Error::Numerical(format!(
                "attention normalizer degenerated to {bad}"
            )));
        }
        let d_vec = tape.reshape(d_col, vec![l])?;
        let d_inv = tape.recip(d_vec);
        heads.push(tape.scale_rows(num, d_inv)?);
    }
    let concat = tape.concat_cols(&heads)?;
    tape.matmul(concat, params.wo)
}

/// Tape-free FAVOR+ forward with the inference draw scheme.
pub fn performer_forward_values(
    spec: &AttentionSpec,
    weights: &AttentionWeights,
    x: &[f64],
    l: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let dm = spec.dim_model;
    let d = spec.head_dim();
    let r = spec.num_rand_features;

    let q_full = kernels::matmul(x, &weights.wq, l, dm, dm);
    let k_full = kernels::matmul(x, &weights.wk, l, dm, dm);
    let v_full = kernels::matmul(x, &weights.wv, l, dm, dm);

    let slice_head = |m: &[f64], h: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(l * d);
        for row in 0..l {
            out.extend_from_slice(&m[row * dm + h * d..row * dm + h * d + d]);
        }
        out
    };

    let features = |m: &[f64], omega: &Tensor| -> Vec<f64> {
        let scale_in = 1.0 / (d as f64).powf(0.25);
        let scaled: Vec<f64> = m.iter().map(|&v| v * scale_in).collect();
        let omega_t = kernels::transpose(&omega.data, r, d);
        let proj = kernels::matmul(&scaled, &omega_t, l, d, r);
        let inv_sqrt_r = 1.0 / (r as f64).sqrt();
        let mut out = vec![0.0; l * r];
        for i in 0..l {
            let row = &scaled[i * d..(i + 1) * d];
            let half_sq: f64 = row.iter().map(|v| v * v).sum::<f64>() * 0.5;
            for j in 0..r {
                out[i * r + j] = inv_sqrt_r * (proj[i * r + j].exp() * (-half_sq).exp());
            }
        }
        out
    };

    let mut concat = vec![0.0; l * dm];
    for h in 0..spec.num_heads {
        let q = slice_head(&q_full, h);
        let k = slice_head(&k_full, h);
        let v = slice_head(&v_full, h);
        let omega = draw_omega(r, d, &mut Rng::from_seed_and_stream(seed, ((h as u64) << 2) | 2))?;

        let qp = features(&q, &omega);
        let kp = features(&k, &omega);
        let kp_t = kernels::transpose(&kp, l, r);
        let z = kernels::matmul(&kp_t, &v, r, l, d);
        let num = kernels::matmul(&qp, &z, l, r, d);
        let ones = vec![1.0; l];
        let k_sum = kernels::matmul(&kp_t, &ones, r, l, 1);
        let d_col = kernels::matmul(&qp, &k_sum, l, r, 1);
        if let Some(&bad) = d_col.iter().find(|v| v.abs() < NORMALIZER_FLOOR) {
            return Err(Error::Numerical(format!(
                "attention normalizer degenerated to {bad}"
            )));
        }
        for i in 0..l {
            let inv = 1.0 / d_col[i];
            for j in 0..d {
                concat[i * dm + h * d + j] = num[i * d + j] * inv;
            }
        }
    }
    Ok(kernels::matmul(&concat, &weights.wo, l, dm, dm))
}
