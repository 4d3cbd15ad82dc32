//! The preprocessing chain, in order: row filters (non-positive
//! resistivity, cavernous calliper/bit-size gap), forward/backward fill,
//! log-scale resistivity, then per-(well, formation) standardization of
//! gamma-ray and neutron followed by the remaining model features.

use super::{WellLog, BIT_SIZE, CALLIPER, MODEL_FEATURES, NEUTRON, RESISTIVITY};
use crate::error::{Error, Result};

/// Rows whose calliper exceeds bit size by more than this are cavernous.
pub const CAVERN_THRESHOLD: f64 = 0.35;

/// Run the full chain on every log. Filters apply only when the relevant
/// optional channels are present, so minimal four-feature files pass
/// through them unchanged.
pub fn preprocess(logs: &[WellLog]) -> Result<Vec<WellLog>> {
    logs.iter().map(preprocess_one).collect()
}

fn preprocess_one(log: &WellLog) -> Result<WellLog> {
    let mut log = log.clone();

    // 1. row filters
    let keep: Vec<bool> = (0..log.len())
        .map(|row| {
            let mut keep = true;
            if let Ok(res) = log.channel(RESISTIVITY) {
                if res[row] <= 0.0 {
                    keep = false;
                }
            }
            if let (Ok(call), Ok(bit)) = (log.channel(CALLIPER), log.channel(BIT_SIZE)) {
                if call[row] - bit[row] > CAVERN_THRESHOLD {
                    keep = false;
                }
            }
            keep
        })
        .collect();
    if keep.iter().any(|k| !k) {
        log.depths = filtered(&log.depths, &keep);
        for values in log.channels.values_mut() {
            *values = filtered(values, &keep);
        }
    }

    // 2. forward then backward fill
    for (name, values) in log.channels.iter_mut() {
        fill_forward_backward(values);
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Data(format!(
                "well {}: channel {name} has no observed values",
                log.well_id
            )));
        }
    }

    // 3. resistivity to natural-log scale
    if let Some(res) = log.channels.get_mut(RESISTIVITY) {
        for v in res.iter_mut() {
            *v = v.ln();
        }
    }

    // 4. gamma-ray and neutron standardized within the (well, formation)
    for name in [MODEL_FEATURES[2], NEUTRON] {
        if let Some(values) = log.channels.get_mut(name) {
            standardize(values);
        }
    }

    // 5. remaining model features standardized the same way
    for name in [MODEL_FEATURES[0], MODEL_FEATURES[1], MODEL_FEATURES[3]] {
        if let Some(values) = log.channels.get_mut(name) {
            standardize(values);
        }
    }

    Ok(log)
}

fn filtered(values: &[f64], keep: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(keep)
        .filter_map(|(&v, &k)| if k { Some(v) } else { None })
        .collect()
}

fn fill_forward_backward(values: &mut [f64]) {
    let mut last = f64::NAN;
    for v in values.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
    let mut next = f64::NAN;
    for v in values.iter_mut().rev() {
        if v.is_nan() {
            *v = next;
        } else {
            next = *v;
        }
    }
}

/// Subtract the mean, divide by the population standard deviation.
/// Constant channels become zeros.
fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-15 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - mean) / std);
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn log_with(channels: &[(&str, Vec<f64>)]) -> WellLog {
        let n = channels[0].1.len();
        WellLog {
            well_id: "W".into(),
            formation: "F".into(),
            depths: (0..n).map(|i| i as f64).collect(),
            channels: channels
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect::<BTreeMap<_, _>>(),
        }
    }

    #[test]
    fn fill_semantics() {
        let mut v = vec![f64::NAN, 3.0, f64::NAN];
        fill_forward_backward(&mut v);
        assert_eq!(v, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn clean_log_changes_only_by_standardization() {
        let log = log_with(&[
            ("DRHO", vec![1.0, 2.0, 3.0, 4.0]),
            ("DENS", vec![2.0, 2.5, 3.0, 3.5]),
            ("GR", vec![10.0, 20.0, 30.0, 40.0]),
            ("DTC", vec![70.0, 72.0, 74.0, 76.0]),
        ]);
        let out = preprocess(&[log.clone()]).unwrap();
        assert_eq!(out[0].len(), log.len(), "no rows dropped");
        // ordering is preserved under the monotone standardization
        for name in MODEL_FEATURES {
            let before = log.channel(name).unwrap();
            let after = out[0].channel(name).unwrap();
            for w in after.windows(2).zip(before.windows(2)) {
                assert_eq!(w.0[0] < w.0[1], w.1[0] < w.1[1]);
            }
        }
    }

    #[test]
    fn standardization_statistics() {
        let log = log_with(&[
            ("DRHO", (0..50).map(|i| (i as f64).sin() * 3.0 + 1.0).collect()),
            ("DENS", (0..50).map(|i| i as f64 * 0.25 - 2.0).collect()),
            ("GR", (0..50).map(|i| (i as f64 * 0.7).cos() * 10.0).collect()),
            ("DTC", (0..50).map(|i| (i % 7) as f64).collect()),
        ]);
        let out = preprocess(&[log]).unwrap();
        for name in MODEL_FEATURES {
            let ch = out[0].channel(name).unwrap();
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10, "{name} mean {mean}");
            assert!((var - 1.0).abs() < 1e-8, "{name} var {var}");
        }
    }

    #[test]
    fn standardization_is_idempotent() {
        let log = log_with(&[
            ("DRHO", (0..40).map(|i| (i as f64 * 0.3).sin()).collect()),
            ("DENS", (0..40).map(|i| i as f64).collect()),
            ("GR", (0..40).map(|i| (i * i % 13) as f64).collect()),
            ("DTC", (0..40).map(|i| 100.0 - i as f64).collect()),
        ]);
        let once = preprocess(&[log]).unwrap();
        let twice = preprocess(&once).unwrap();
        for name in MODEL_FEATURES {
            for (a, b) in once[0]
                .channel(name)
                .unwrap()
                .iter()
                .zip(twice[0].channel(name).unwrap())
            {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn resistivity_filter_and_log_scale() {
        let log = log_with(&[
            ("DRHO", vec![1.0, 2.0, 3.0, 4.0]),
            ("DENS", vec![1.0, 2.0, 3.0, 4.0]),
            ("GR", vec![1.0, 2.0, 3.0, 4.0]),
            ("DTC", vec![1.0, 2.0, 3.0, 4.0]),
            ("resistivity", vec![10.0, -5.0, 0.0, 100.0]),
        ]);
        let out = preprocess(&[log]).unwrap();
        // rows 1 and 2 dropped
        assert_eq!(out[0].len(), 2);
        let res = out[0].channel("resistivity").unwrap();
        assert!((res[0] - 10.0f64.ln()).abs() < 1e-12);
        assert!((res[1] - 100.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cavernous_rows_dropped_when_both_columns_present() {
        let log = log_with(&[
            ("DRHO", vec![1.0, 2.0, 3.0]),
            ("DENS", vec![1.0, 2.0, 3.0]),
            ("GR", vec![1.0, 2.0, 3.0]),
            ("DTC", vec![1.0, 2.0, 3.0]),
            ("calliper", vec![8.0, 9.0, 8.2]),
            ("bit_size", vec![8.0, 8.0, 8.0]),
        ]);
        let out = preprocess(&[log]).unwrap();
        assert_eq!(out[0].len(), 2, "middle row exceeds the cavern threshold");
    }

    #[test]
    fn entirely_missing_channel_is_an_error() {
        let log = log_with(&[
            ("DRHO", vec![f64::NAN, f64::NAN]),
            ("DENS", vec![1.0, 2.0]),
            ("GR", vec![1.0, 2.0]),
            ("DTC", vec![1.0, 2.0]),
        ]);
        let err = preprocess(&[log]).unwrap_err().to_string();
        assert!(err.contains('W') && err.contains("DRHO"), "{err}");
    }
}
