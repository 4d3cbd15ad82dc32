//! Well-log data model and pipeline: CSV ingestion, the preprocessing
//! chain (row filters, fill, log scale, per-well/formation standardization),
//! sliding-window interval sampling, pair/triplet generation, grouped
//! splits, and a synthetic-well generator for desk-scale experiments.

pub mod ingest;
pub mod intervals;
pub mod preprocess;
pub mod synthetic;

pub use ingest::{ingest_csv, write_csv};
pub use intervals::{
    load_intervals, save_intervals,
    group_split, make_pairs, make_pairs_from, make_triplets, make_triplets_from,
    sample_intervals, PairBatch, TripletBatch,
};
pub use preprocess::preprocess;
pub use synthetic::{synthesize, SyntheticSpec};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four channels every model consumes, in feature order.
pub const MODEL_FEATURES: [&str; 4] = ["DRHO", "DENS", "GR", "DTC"];

/// Optional channels recognized by the preprocessing filters.
pub const RESISTIVITY: &str = "resistivity";
pub const CALLIPER: &str = "calliper";
pub const BIT_SIZE: &str = "bit_size";
pub const NEUTRON: &str = "neutron";

/// Interval length in measurements (about 33 ft of depth).
pub const INTERVAL_LEN: usize = 100;

/// One well's log: depth-ordered rows of named channels. Missing values are
/// stored as NaN. Depths are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct WellLog {
    pub well_id: String,
    pub formation: String,
    pub depths: Vec<f64>,
    pub channels: BTreeMap<String, Vec<f64>>,
}

impl WellLog {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| {
                Error::Data(format!(
                    "well {}: channel {name} not present",
                    self.well_id
                ))
            })
    }

    /// Internal consistency: equal channel lengths, strictly increasing depth.
    pub fn validate(&self) -> Result<()> {
        for (name, values) in &self.channels {
            if values.len() != self.depths.len() {
                return Err(Error::Data(format!(
                    "well {}: channel {name} has {} rows, depth has {}",
                    self.well_id,
                    values.len(),
                    self.depths.len()
                )));
            }
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "well {}: depth not strictly increasing",
                self.well_id
            )));
        }
        Ok(())
    }
}

/// A standardized `[INTERVAL_LEN, 4]` slice of one well's model features.
#[derive(Debug, Clone, PartialEq)]
pub struct WellInterval {
    pub well_id: String,
    pub start_index: usize,
    pub values: Tensor,
}

impl WellInterval {
    pub fn seq_len(&self) -> usize {
        self.values.shape[0]
    }

    pub fn num_features(&self) -> usize {
        self.values.shape[1]
    }
}
