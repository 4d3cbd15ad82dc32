//! Query/key sparsity measurement and row selection.
//!
//! The measurement ranks rows by how far their attention distribution is
//! from uniform: `M(q_i, K) = lse_j(s_ij) - mean_j(s_ij)` over the scaled
//! logits `s_ij = q_i . k_j / sqrt(d)`. Selection itself is not
//! differentiated; gradients flow through the gathered rows only.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Rng, Tensor};

/// Which term the measurement's mean is taken over.
///
/// `ScaledLogits` subtracts the mean of the scaled logits (the max-mean
/// style measurement used for top-query selection). `LiteralKernel`
/// subtracts the mean of the exponentiated kernel values instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMeasure {
    ScaledLogits,
    LiteralKernel,
}

/// Whether a selection keeps query rows or key rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionSource {
    Query,
    Key,
}

/// How the kept rows were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    Top,
    Random,
}

/// A set of kept row indices, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub source: SelectionSource,
    pub method: SelectionMethod,
}

/// Sparsity score of every row of `a` against all rows of `b`.
///
/// `a` is `[la, d]`, `b` is `[lb, d]`, both row-major. Scoring keys swaps
/// the arguments. The log-sum-exp term is max-shifted, so the score is
/// finite for any finite logits.
pub fn sparsity_scores(
    a: &[f64],
    b: &[f64],
    la: usize,
    lb: usize,
    d: usize,
    measure: SparsityMeasure,
) -> Vec<f64> {
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut scores = Vec::with_capacity(la);
    let mut logits = vec![0.0; lb];
    for i in 0..la {
        let ai = &a[i * d..(i + 1) * d];
        for (j, lj) in logits.iter_mut().enumerate() {
            let bj = &b[j * d..(j + 1) * d];
            *lj = ai.iter().zip(bj).map(|(&x, &y)| x * y).sum::<f64>() * inv_sqrt_d;
        }
        let lse = kernels::log_sum_exp(&logits);
        let mean = match measure {
            SparsityMeasure::ScaledLogits => logits.iter().sum::<f64>() / lb as f64,
            SparsityMeasure::LiteralKernel => {
                logits.iter().map(|&v| v.exp()).sum::<f64>() / lb as f64
            }
        };
        scores.push(lse - mean);
    }
    scores
}

/// Tensor wrapper over [`sparsity_scores`] for `Q: [L,d]`, `K: [L,d]`.
pub fn sparsity_score(q: &Tensor, k: &Tensor, measure: SparsityMeasure) -> Result<Tensor> {
    let (lq, d) = q.as_2d();
    let (lk, dk) = k.as_2d();
    if d != dk {
        return Err(Error::Shape {
            op: "sparsity_score",
            lhs: q.shape.clone(),
            rhs: k.shape.clone(),
        });
    }
    let scores = sparsity_scores(&q.data, &k.data, lq, lk, d, measure);
    Tensor::new(vec![lq], scores)
}

/// Indices of the `u` largest scores, ties broken toward the smaller index,
/// returned in ascending order.
pub fn select_top(scores: &[f64], u: usize, source: SelectionSource) -> Result<Selection> {
    let l = scores.len();
    if u == 0 || u > l {
        return Err(Error::Contract(format!(
            "select_top: u={u} outside 1..={l}"
        )));
    }
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut indices = order[..u].to_vec();
    indices.sort_unstable();
    Ok(Selection {
        indices,
        source,
        method: SelectionMethod::Top,
    })
}

/// `u` distinct indices from `[0, len)`, uniform without replacement.
pub fn select_random(
    len: usize,
    u: usize,
    rng: &mut Rng,
    source: SelectionSource,
) -> Result<Selection> {
    if u == 0 || u > len {
        return Err(Error::Contract(format!(
            "select_random: u={u} outside 1..={len}"
        )));
    }
    Ok(Selection {
        indices: rng.sample_indices(len, u),
        source,
        method: SelectionMethod::Random,
    })
}
