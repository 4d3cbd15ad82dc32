//! The evaluation report container and its serialized forms: canonical
//! JSON (sorted keys, deterministic floats) plus fixed-header CSVs for
//! curves and timing tables.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::benchmark::BenchmarkRow;
use super::interpret::MaskPoint;
use super::robustness::RobustnessPoint;
use crate::error::{Error, Result};

/// A metric aggregated over folds; the std is the population deviation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub folds: usize,
}

impl MetricSummary {
    pub fn from_folds(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
            folds: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CorrelationSummary {
    pub mean: f64,
    pub std: f64,
    pub pairs: usize,
}

/// Everything an evaluation run reports, with the provenance (config hash
/// and seeds) needed to re-run it bit-identically.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub model_tag: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub robustness: Vec<RobustnessPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masking: Vec<MaskPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_gradient_correlation: Option<CorrelationSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("bad report: {e}")))
    }
}

/// SHA-256 hex digest of the resolved configuration text.
pub fn config_hash(config_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    format!("{:x}", hasher.finalize())
}

pub fn robustness_csv(points: &[RobustnessPoint]) -> String {
    let mut out = String::from("mode,fraction,pr_auc\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.mode, p.fraction, p.pr_auc));
    }
    out
}

pub fn masking_csv(points: &[MaskPoint]) -> String {
    let mut out = String::from("criterion,fill,fraction,pr_auc\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.criterion, p.fill, p.fraction, p.pr_auc
        ));
    }
    out
}

pub fn timing_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from("variant,seq_len,batch,median_ms,iqr_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant, r.seq_len, r.batch, r.median_ms, r.iqr_ms
        ));
    }
    out
}
