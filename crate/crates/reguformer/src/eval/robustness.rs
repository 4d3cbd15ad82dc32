//! Input-corruption robustness: replace whole measurement rows with zeros
//! or standard-normal draws (features are standardized, so unit noise is
//! white) and trace PR AUC against the corrupted fraction.

use super::metrics;
use crate::data::{PairBatch, WellInterval};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::tensor::Rng;
use crate::training::{score_dataset, PairHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Zeros,
    GaussianNoise,
}

impl CorruptionMode {
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "zeros" => Ok(CorruptionMode::Zeros),
            "gaussian_noise" => Ok(CorruptionMode::GaussianNoise),
            other => Err(Error::Config(format!(
                "unknown corruption mode \"{other}\""
            ))),
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            CorruptionMode::Zeros => "zeros",
            CorruptionMode::GaussianNoise => "gaussian_noise",
        }
    }
}

/// One corruption setting: which rows fraction to replace and with what.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorruptionSpec {
    pub fraction: f64,
    pub mode: CorruptionMode,
}

/// Replace `floor(fraction * L)` distinct rows of the interval.
pub fn corrupt(interval: &WellInterval, spec: &CorruptionSpec, rng: &mut Rng) -> Result<WellInterval> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(Error::Config(format!(
            "corruption fraction {} outside [0, 1]",
            spec.fraction
        )));
    }
    let l = interval.seq_len();
    let f = interval.num_features();
    let rows = (spec.fraction * l as f64).floor() as usize;
    let mut out = interval.clone();
    if rows == 0 {
        return Ok(out);
    }
    let picked = rng.sample_indices(l, rows);
    for &r in &picked {
        for c in 0..f {
            out.values.data[r * f + c] = match spec.mode {
                CorruptionMode::Zeros => 0.0,
                CorruptionMode::GaussianNoise => rng.normal(),
            };
        }
    }
    Ok(out)
}

/// One point of a robustness curve.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RobustnessPoint {
    pub mode: String,
    pub fraction: f64,
    pub pr_auc: f64,
}

/// PR AUC at every (fraction, mode). The fraction-0 point scores the
/// uncorrupted pool, so it equals the baseline exactly.
pub fn robustness_sweep(
    model: &EncoderModel,
    head: &PairHead,
    intervals: &[WellInterval],
    pairs: &PairBatch,
    fractions: &[f64],
    modes: &[CorruptionMode],
    seed: u64,
) -> Result<Vec<RobustnessPoint>> {
    pairs.validate(intervals.len())?;
    let mut curves = Vec::with_capacity(fractions.len() * modes.len());
    for (mi, &mode) in modes.iter().enumerate() {
        for (fi, &fraction) in fractions.iter().enumerate() {
            let scores = if fraction == 0.0 {
                score_dataset(model, head, intervals, pairs, seed)?
            } else {
                let spec = CorruptionSpec { fraction, mode };
                let mut rng = Rng::from_seed_and_stream(seed, (mi as u64) << 32 | fi as u64);
                let corrupted: Vec<WellInterval> = intervals
                    .iter()
                    .map(|iv| corrupt(iv, &spec, &mut rng))
                    .collect::<Result<_>>()?;
                score_dataset(model, head, &corrupted, pairs, seed)?
            };
            curves.push(RobustnessPoint {
                mode: mode.token().to_string(),
                fraction,
                pr_auc: metrics::pr_auc(&scores, &pairs.labels)?,
            });
        }
    }
    Ok(curves)
}

/// Spearman rank correlation, used to check that robustness curves fall.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract("spearman_rho needs matched series".into()));
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap_or(std::cmp::Ordering::Equal));
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j + 2) as f64 / 2.0;
            for &idx in &order[i..=j] {
                ranks[idx] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(x);
    let ry = rank(y);
    pearson(&rx, &ry)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract("pearson needs matched series".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Metric("zero-variance series in correlation".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn interval() -> WellInterval {
        let l = 100;
        let f = 4;
        WellInterval {
            well_id: "w".into(),
            start_index: 0,
            values: Tensor::new(
                vec![l, f],
                (0..l * f).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect(),
            )
            .unwrap(),
        }
    }

    #[test]
    fn zero_fraction_is_identity() {
        let iv = interval();
        let spec = CorruptionSpec {
            fraction: 0.0,
            mode: CorruptionMode::Zeros,
        };
        let out = corrupt(&iv, &spec, &mut Rng::new(1)).unwrap();
        assert_eq!(out, iv);
    }

    #[test]
    fn full_zero_corruption_blanks_everything() {
        let iv = interval();
        let spec = CorruptionSpec {
            fraction: 1.0,
            mode: CorruptionMode::Zeros,
        };
        let out = corrupt(&iv, &spec, &mut Rng::new(1)).unwrap();
        assert!(out.values.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corruption_touches_exactly_the_requested_rows() {
        let iv = interval();
        for mode in [CorruptionMode::Zeros, CorruptionMode::GaussianNoise] {
            let spec = CorruptionSpec {
                fraction: 0.3,
                mode,
            };
            let out = corrupt(&iv, &spec, &mut Rng::new(5)).unwrap();
            let f = iv.num_features();
            let changed_rows = (0..iv.seq_len())
                .filter(|&r| {
                    (0..f).any(|c| out.values.data[r * f + c] != iv.values.data[r * f + c])
                })
                .count();
            assert_eq!(changed_rows, 30, "{mode:?}");
        }
    }

    #[test]
    fn fraction_out_of_range_rejected() {
        let iv = interval();
        let spec = CorruptionSpec {
            fraction: 1.5,
            mode: CorruptionMode::Zeros,
        };
        assert!(corrupt(&iv, &spec, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn spearman_detects_monotone_trends() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [0.9, 0.7, 0.6, 0.2, 0.1];
        assert_eq!(spearman_rho(&x, &y).unwrap(), -1.0);
        let up = [0.1, 0.2, 0.5, 0.7, 0.9];
        assert_eq!(spearman_rho(&x, &up).unwrap(), 1.0);
    }
}
