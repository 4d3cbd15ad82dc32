//! Wall-clock latency of the attention variants on the tape-free value
//! path: median and interquartile range of per-batch forward time, after
//! two discarded warmup runs.

use std::time::Instant;

use crate::attention::{attention_forward_values, AttentionSpec, AttentionWeights};
use crate::error::{Error, Result};
use crate::tensor::Rng;

/// One `(variant, sequence length)` timing measurement.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkRow {
    pub variant: String,
    pub seq_len: usize,
    pub batch: usize,
    pub median_ms: f64,
    pub iqr_ms: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Time every `(variant, L)` cell: `reps` timed runs of `batch` forwards
/// each, after 2 warmups. Rows come back in input order, one per cell.
pub fn inference_benchmark(
    variants: &[AttentionSpec],
    l_values: &[usize],
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchmarkRow>> {
    if reps < 5 {
        return Err(Error::Config(format!("reps {reps} < 5")));
    }
    if batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let mut rows = Vec::with_capacity(variants.len() * l_values.len());
    for (vi, spec) in variants.iter().enumerate() {
        spec.validate()?;
        for (li, &l) in l_values.iter().enumerate() {
            let mut rng = Rng::from_seed_and_stream(seed, (vi as u64) << 32 | li as u64);
            let weights = AttentionWeights::random(spec.dim_model, &mut rng);
            let x: Vec<f64> = (0..l * spec.dim_model)
                .map(|_| rng.uniform(-1.0, 1.0))
                .collect();

            for _ in 0..2 {
                std::hint::black_box(attention_forward_values(spec, &weights, &x, l, seed)?);
            }
            let mut times = Vec::with_capacity(reps);
            for _ in 0..reps {
                let start = Instant::now();
                for _ in 0..batch {
                    std::hint::black_box(attention_forward_values(spec, &weights, &x, l, seed)?);
                }
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = if times.len() % 2 == 1 {
                times[times.len() / 2]
            } else {
                (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2.0
            };
            rows.push(BenchmarkRow {
                variant: spec.regularization_token(),
                seq_len: l,
                batch,
                median_ms: median,
                iqr_ms: quantile(&times, 0.75) - quantile(&times, 0.25),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_complete_and_reps_validated() {
        let variants = vec![AttentionSpec::dense(2, 8)];
        let rows = inference_benchmark(&variants, &[16, 32], 2, 5, 3).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.median_ms > 0.0));
        assert!(inference_benchmark(&variants, &[16], 2, 4, 3).is_err());
    }

    #[test]
    fn identical_variants_time_identically_within_noise() {
        let spec = AttentionSpec::dense(2, 8);
        let rows = inference_benchmark(&[spec.clone(), spec], &[64], 4, 9, 5).unwrap();
        // same computation twice: medians within each other's IQR-ish band
        let (a, b) = (&rows[0], &rows[1]);
        let tolerance = (a.iqr_ms + b.iqr_ms).max(0.2 * a.median_ms.max(b.median_ms)) + 0.05;
        assert!(
            (a.median_ms - b.median_ms).abs() <= tolerance,
            "{a:?} vs {b:?}"
        );
    }
}
