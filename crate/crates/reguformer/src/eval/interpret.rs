//! Attention-based interpretability: per-position diagonal attention
//! scores from a dense forward pass, input-gradient saliency, their
//! correlation, and masking sweeps that knock out positions by either
//! criterion and watch PR AUC.

use super::metrics;
use super::robustness::pearson;
use crate::attention::{scaled_dot_attention, AttentionVariant};
use crate::data::{PairBatch, WellInterval};
use crate::encoder::{check_interval, forward_on_tape, positional_table, EncodeMode, EncoderModel};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Tensor};
use crate::training::{pair_score, PairHead};

/// Per-position `q_i . k_i / sqrt(d)` summed over all layers and heads of
/// a dense forward pass (selection disabled). The Performer variant has no
/// explicit attention matrix and is rejected.
pub fn attention_diag(model: &EncoderModel, values: &Tensor) -> Result<Vec<f64>> {
    if model.config.attention.variant == AttentionVariant::Performer {
        return Err(Error::Config(
            "attention diagnostics unsupported for the performer variant".into(),
        ));
    }
    check_interval(values, &model.config)?;
    let config = &model.config;
    let l = config.seq_len;
    let dm = config.dim_model();
    let heads = config.num_heads();
    let d = config.attention.head_dim();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let mut tape = Tape::new();
    let vars = model.register(&mut tape, false);
    let x = tape.constant(values.clone());
    let mut h = tape.matmul(x, vars.proj)?;
    if config.positional_encoding {
        let pe = tape.constant(positional_table(l, dm));
        h = tape.add(h, pe)?;
    }

    let mut diag = vec![0.0; l];
    for layer in &vars.layers {
        let q_full = tape.matmul(h, layer.attn.wq)?;
        let k_full = tape.matmul(h, layer.attn.wk)?;
        let v_full = tape.matmul(h, layer.attn.wv)?;
        let mut head_outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let q = tape.slice_cols(q_full, hd * d, d)?;
            let k = tape.slice_cols(k_full, hd * d, d)?;
            let v = tape.slice_cols(v_full, hd * d, d)?;
            {
                let (qd, kd) = (tape.data(q), tape.data(k));
                for i in 0..l {
                    let dot: f64 = (0..d).map(|t| qd[i * d + t] * kd[i * d + t]).sum();
                    diag[i] += dot * inv_sqrt_d;
                }
            }
            head_outs.push(scaled_dot_attention(&mut tape, q, k, v)?);
        }
        let concat = tape.concat_cols(&head_outs)?;
        let attn = tape.matmul(concat, layer.attn.wo)?;
        let res = tape.add(h, attn)?;
        h = tape.layer_norm(res, layer.ln1_gain, layer.ln1_bias)?;
        let f = crate::attention::ffn(&mut tape, h, layer.w1, layer.b1, layer.w2, layer.b2)?;
        let res = tape.add(h, f)?;
        h = tape.layer_norm(res, layer.ln2_gain, layer.ln2_bias)?;
    }
    Ok(diag)
}

/// Per-position Euclidean norm over feature channels of the pair score's
/// gradient with respect to the first interval.
pub fn gradient_saliency(
    model: &EncoderModel,
    head: &PairHead,
    a_values: &Tensor,
    b_values: &Tensor,
    seed: u64,
) -> Result<Vec<f64>> {
    check_interval(a_values, &model.config)?;
    check_interval(b_values, &model.config)?;
    let mut tape = Tape::new();
    let enc_vars = model.register(&mut tape, false);
    let head_vars = crate::training::register_head(&mut tape, head, false);
    let xa = tape.leaf(a_values.clone().with_grad());
    let xb = tape.constant(b_values.clone());
    let mut mode = EncodeMode::Infer {
        selection_seed: seed,
    };
    let ea = forward_on_tape(&mut tape, &enc_vars, &model.config, xa, &mut mode)?;
    let eb = forward_on_tape(&mut tape, &enc_vars, &model.config, xb, &mut mode)?;
    let score = crate::training::score_on_tape(&mut tape, ea, eb, head, &head_vars, &mut None)?;
    tape.backward(score)?;
    let grad = tape
        .grad(xa)
        .ok_or_else(|| Error::Numerical("input gradient missing".into()))?;
    let f = model.config.input_features;
    let l = model.config.seq_len;
    Ok((0..l)
        .map(|r| (0..f).map(|c| grad[r * f + c] * grad[r * f + c]).sum::<f64>().sqrt())
        .collect())
}

/// Pearson correlation between attention diagonal and gradient saliency,
/// per pair's first interval, aggregated as (mean, std, pairs kept).
pub fn attention_gradient_correlation(
    model: &EncoderModel,
    head: &PairHead,
    intervals: &[WellInterval],
    pairs: &PairBatch,
    seed: u64,
) -> Result<(f64, f64, usize)> {
    pairs.validate(intervals.len())?;
    let mut values = Vec::new();
    for i in 0..pairs.len() {
        let a = &intervals[pairs.a[i]];
        let b = &intervals[pairs.b[i]];
        let diag = attention_diag(model, &a.values)?;
        let sal = gradient_saliency(model, head, &a.values, &b.values, seed)?;
        match pearson(&diag, &sal) {
            Ok(r) => values.push(r),
            Err(_) => log::warn!("pair {i}: zero-variance vector, skipped in correlation"),
        }
    }
    if values.is_empty() {
        return Err(Error::Metric("no pair produced a usable correlation".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt(), values.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskCriterion {
    LowAttention,
    HighGradient,
    Random,
}

impl MaskCriterion {
    pub fn token(&self) -> &'static str {
        match self {
            MaskCriterion::LowAttention => "low_attention",
            MaskCriterion::HighGradient => "high_gradient",
            MaskCriterion::Random => "random",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "low_attention" => Ok(MaskCriterion::LowAttention),
            "high_gradient" => Ok(MaskCriterion::HighGradient),
            "random" => Ok(MaskCriterion::Random),
            other => Err(Error::Config(format!("unknown mask criterion \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFill {
    Zeros,
    Gaussian,
}

impl MaskFill {
    pub fn token(&self) -> &'static str {
        match self {
            MaskFill::Zeros => "zeros",
            MaskFill::Gaussian => "gaussian",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "zeros" => Ok(MaskFill::Zeros),
            "gaussian" => Ok(MaskFill::Gaussian),
            other => Err(Error::Config(format!("unknown mask fill \"{other}\""))),
        }
    }
}

/// The `k` positions a score-based criterion masks: smallest scores for
/// low-attention, largest for high-gradient, ties toward the smaller index.
pub fn mask_positions(scores: &[f64], k: usize, criterion: MaskCriterion) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    match criterion {
        MaskCriterion::LowAttention => order.sort_by(|&i, &j| {
            scores[i]
                .partial_cmp(&scores[j])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        }),
        MaskCriterion::HighGradient => order.sort_by(|&i, &j| {
            scores[j]
                .partial_cmp(&scores[i])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(i.cmp(&j))
        }),
        MaskCriterion::Random => unreachable!("random masking draws positions directly"),
    }
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    picked
}

fn masked_copy(
    interval: &WellInterval,
    positions: &[usize],
    fill: MaskFill,
    rng: &mut Rng,
) -> WellInterval {
    let f = interval.num_features();
    let mut out = interval.clone();
    for &r in positions {
        for c in 0..f {
            out.values.data[r * f + c] = match fill {
                MaskFill::Zeros => 0.0,
                MaskFill::Gaussian => rng.normal(),
            };
        }
    }
    out
}

/// One point of a masking curve.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskPoint {
    pub criterion: String,
    pub fill: String,
    pub fraction: f64,
    pub pr_auc: f64,
}

/// For each fraction, mask `floor(fraction * L)` positions of both pair
/// sides by the criterion, fill them, and record PR AUC over the pairs.
#[allow(clippy::too_many_arguments)]
pub fn masking_sweep(
    model: &EncoderModel,
    head: &PairHead,
    intervals: &[WellInterval],
    pairs: &PairBatch,
    criterion: MaskCriterion,
    fill: MaskFill,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<MaskPoint>> {
    pairs.validate(intervals.len())?;
    let l = model.config.seq_len;

    // attention diagonals are per interval; saliency depends on the partner
    let mut diag_cache: Vec<Option<Vec<f64>>> = vec![None; intervals.len()];
    let mut diag_of = |idx: usize, model: &EncoderModel| -> Result<Vec<f64>> {
        if diag_cache[idx].is_none() {
            diag_cache[idx] = Some(attention_diag(model, &intervals[idx].values)?);
        }
        Ok(diag_cache[idx].clone().unwrap())
    };

    let mut points = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "mask fraction {fraction} outside [0, 1]"
            )));
        }
        let k = (fraction * l as f64).floor() as usize;
        let mut scores = Vec::with_capacity(pairs.len());
        for i in 0..pairs.len() {
            let a = &intervals[pairs.a[i]];
            let b = &intervals[pairs.b[i]];
            let (ma, mb) = if k == 0 {
                (a.clone(), b.clone())
            } else {
                let mut fill_rng =
                    Rng::from_seed_and_stream(seed, 0xF1 << 56 | (fi as u64) << 32 | i as u64);
                let positions_a;
                let positions_b;
                match criterion {
                    MaskCriterion::Random => {
                        positions_a = fill_rng.sample_indices(l, k);
                        positions_b = fill_rng.sample_indices(l, k);
                    }
                    MaskCriterion::LowAttention => {
                        positions_a = mask_positions(&diag_of(pairs.a[i], model)?, k, criterion);
                        positions_b = mask_positions(&diag_of(pairs.b[i], model)?, k, criterion);
                    }
                    MaskCriterion::HighGradient => {
                        let sal_a = gradient_saliency(model, head, &a.values, &b.values, seed)?;
                        let sal_b = gradient_saliency(model, head, &b.values, &a.values, seed)?;
                        positions_a = mask_positions(&sal_a, k, criterion);
                        positions_b = mask_positions(&sal_b, k, criterion);
                    }
                }
                (
                    masked_copy(a, &positions_a, fill, &mut fill_rng),
                    masked_copy(b, &positions_b, fill, &mut fill_rng),
                )
            };
            let mut mode_a = EncodeMode::Infer {
                selection_seed: seed,
            };
            let ea = crate::encoder::encode(model, &ma.values, &mut mode_a)?;
            let mut mode_b = EncodeMode::Infer {
                selection_seed: seed,
            };
            let eb = crate::encoder::encode(model, &mb.values, &mut mode_b)?;
            scores.push(pair_score(&ea, &eb, head)?);
        }
        points.push(MaskPoint {
            criterion: criterion.token().to_string(),
            fill: fill.token().to_string(),
            fraction,
            pr_auc: metrics::pr_auc(&scores, &pairs.labels)?,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_positions_match_sort_oracle() {
        let mut rng = Rng::new(9);
        for _ in 0..200 {
            let n = 5 + rng.next_below(20);
            let k = 1 + rng.next_below(n);
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();

            let low = mask_positions(&scores, k, MaskCriterion::LowAttention);
            let mut expected: Vec<usize> = (0..n).collect();
            expected.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap().then(i.cmp(&j)));
            let mut expected_low = expected[..k].to_vec();
            expected_low.sort_unstable();
            assert_eq!(low, expected_low);

            let high = mask_positions(&scores, k, MaskCriterion::HighGradient);
            let mut expected: Vec<usize> = (0..n).collect();
            expected.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
            let mut expected_high = expected[..k].to_vec();
            expected_high.sort_unstable();
            assert_eq!(high, expected_high);
        }
    }

    #[test]
    fn pearson_hand_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &b).unwrap() + 1.0).abs() < 1e-12);
        // closed form for a small fixed pair of vectors
        let x = [1.0, 2.0, 4.0];
        let y = [0.5, 1.0, 3.5];
        let got = pearson(&x, &y).unwrap();
        let expected = {
            let mx = 7.0 / 3.0;
            let my = 5.0 / 3.0;
            let cov: f64 = x.iter().zip(&y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
            let vx: f64 = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
            let vy: f64 = y.iter().map(|&b| (b - my) * (b - my)).sum();
            cov / (vx * vy).sqrt()
        };
        assert!((got - expected).abs() < 1e-12);
    }
}
