//! Interval sampling, pair/triplet generation, and grouped well splits.

use std::collections::BTreeMap;

use super::{WellInterval, WellLog, INTERVAL_LEN, MODEL_FEATURES};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Standardized values this far from zero are suspicious and get logged.
const STANDARDIZED_BOUND: f64 = 20.0;

/// Index pairs into an interval pool with well-linking labels
/// (1 = same well).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairBatch {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub labels: Vec<f64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.a.len() != self.labels.len() || self.b.len() != self.labels.len() {
            return Err(Error::Contract("pair batch: ragged fields".into()));
        }
        if self.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Contract("pair batch: labels must be 0 or 1".into()));
        }
        if self.a.iter().chain(&self.b).any(|&i| i >= pool_size) {
            return Err(Error::Contract("pair batch: index out of pool".into()));
        }
        Ok(())
    }
}

/// (anchor, positive, negative) index triples into an interval pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletBatch {
    pub anchor: Vec<usize>,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.positive.len() != self.anchor.len() || self.negative.len() != self.anchor.len() {
            return Err(Error::Contract("triplet batch: ragged fields".into()));
        }
        if self
            .anchor
            .iter()
            .chain(&self.positive)
            .chain(&self.negative)
            .any(|&i| i >= pool_size)
        {
            return Err(Error::Contract("triplet batch: index out of pool".into()));
        }
        Ok(())
    }
}

/// Sliding windows of exactly [`INTERVAL_LEN`] rows over the four model
/// features. Wells shorter than one window are skipped with a warning.
pub fn sample_intervals(logs: &[WellLog], stride: usize) -> Result<Vec<WellInterval>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let mut out = Vec::new();
    for log in logs {
        if log.len() < INTERVAL_LEN {
            log::warn!(
                "well {}: {} rows < interval length {INTERVAL_LEN}, skipped",
                log.well_id,
                log.len()
            );
            continue;
        }
        let channels: Vec<&[f64]> = MODEL_FEATURES
            .iter()
            .map(|name| log.channel(name))
            .collect::<Result<_>>()?;
        let mut start = 0;
        while start + INTERVAL_LEN <= log.len() {
            let mut values = Vec::with_capacity(INTERVAL_LEN * MODEL_FEATURES.len());
            for row in start..start + INTERVAL_LEN {
                for ch in &channels {
                    let v = ch[row];
                    if v.is_nan() {
                        return Err(Error::Data(format!(
                            "well {}: missing value survived preprocessing at row {row}",
                            log.well_id
                        )));
                    }
                    if v.abs() >= STANDARDIZED_BOUND {
                        log::warn!(
                            "well {}: standardized value {v} at row {row} exceeds {STANDARDIZED_BOUND}",
                            log.well_id
                        );
                    }
                    values.push(v);
                }
            }
            out.push(WellInterval {
                well_id: log.well_id.clone(),
                start_index: start,
                values: Tensor::new(vec![INTERVAL_LEN, MODEL_FEATURES.len()], values)?,
            });
            start += stride;
        }
    }
    Ok(out)
}

fn group_by_well(intervals: &[WellInterval], candidates: &[usize]) -> BTreeMap<String, Vec<usize>> {
    let mut by_well: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in candidates {
        by_well
            .entry(intervals[i].well_id.clone())
            .or_default()
            .push(i);
    }
    by_well
}

/// Balanced pair stream drawn from a subset of the pool: positives at even
/// emission slots, so `n/2` labels of each kind for even `n`. A pair never
/// repeats one interval twice.
pub fn make_pairs_from(
    intervals: &[WellInterval],
    candidates: &[usize],
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<PairBatch> {
    let by_well = group_by_well(intervals, candidates);
    if by_well.len() < 2 {
        return Err(Error::Data(format!(
            "pair generation needs at least 2 wells, found {}",
            by_well.len()
        )));
    }
    let wells: Vec<&Vec<usize>> = by_well.values().collect();
    let positive_wells: Vec<&Vec<usize>> = by_well
        .iter()
        .filter_map(|(id, members)| {
            if members.len() >= 2 {
                Some(members)
            } else {
                log::warn!("well {id}: fewer than 2 intervals, cannot donate positive pairs");
                None
            }
        })
        .collect();
    if positive_wells.is_empty() {
        return Err(Error::Data(
            "no well has 2 or more intervals; positives impossible".into(),
        ));
    }

    let mut batch = PairBatch::default();
    for slot in 0..n_pairs {
        if slot % 2 == 0 {
            let members = positive_wells[rng.next_below(positive_wells.len())];
            let i = rng.next_below(members.len());
            let mut j = rng.next_below(members.len() - 1);
            if j >= i {
                j += 1;
            }
            batch.a.push(members[i]);
            batch.b.push(members[j]);
            batch.labels.push(1.0);
        } else {
            let wi = rng.next_below(wells.len());
            let mut wj = rng.next_below(wells.len() - 1);
            if wj >= wi {
                wj += 1;
            }
            batch.a.push(wells[wi][rng.next_below(wells[wi].len())]);
            batch.b.push(wells[wj][rng.next_below(wells[wj].len())]);
            batch.labels.push(0.0);
        }
    }
    Ok(batch)
}

/// [`make_pairs_from`] over the whole pool.
pub fn make_pairs(
    intervals: &[WellInterval],
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<PairBatch> {
    let all: Vec<usize> = (0..intervals.len()).collect();
    make_pairs_from(intervals, &all, n_pairs, rng)
}

/// Triplets drawn from a subset: anchor and positive share a well and are
/// distinct intervals, the negative comes from another well.
pub fn make_triplets_from(
    intervals: &[WellInterval],
    candidates: &[usize],
    n_triplets: usize,
    rng: &mut Rng,
) -> Result<TripletBatch> {
    let by_well = group_by_well(intervals, candidates);
    if by_well.len() < 2 {
        return Err(Error::Data(format!(
            "triplet generation needs at least 2 wells, found {}",
            by_well.len()
        )));
    }
    let anchor_wells: Vec<(&String, &Vec<usize>)> = by_well
        .iter()
        .filter(|(id, members)| {
            if members.len() >= 2 {
                true
            } else {
                log::warn!("well {id}: fewer than 2 intervals, cannot anchor triplets");
                false
            }
        })
        .collect();
    if anchor_wells.is_empty() {
        return Err(Error::Data(
            "no well has 2 or more intervals; triplets impossible".into(),
        ));
    }
    let all_wells: Vec<(&String, &Vec<usize>)> = by_well.iter().collect();

    let mut batch = TripletBatch::default();
    for _ in 0..n_triplets {
        let (anchor_id, members) = anchor_wells[rng.next_below(anchor_wells.len())];
        let i = rng.next_below(members.len());
        let mut j = rng.next_below(members.len() - 1);
        if j >= i {
            j += 1;
        }
        let negative = loop {
            let (id, others) = all_wells[rng.next_below(all_wells.len())];
            if id != anchor_id {
                break others[rng.next_below(others.len())];
            }
        };
        batch.anchor.push(members[i]);
        batch.positive.push(members[j]);
        batch.negative.push(negative);
    }
    Ok(batch)
}

/// [`make_triplets_from`] over the whole pool.
pub fn make_triplets(
    intervals: &[WellInterval],
    n_triplets: usize,
    rng: &mut Rng,
) -> Result<TripletBatch> {
    let all: Vec<usize> = (0..intervals.len()).collect();
    make_triplets_from(intervals, &all, n_triplets, rng)
}

/// Partition wells (not intervals) into `k` folds; every interval inherits
/// its well's fold. Fold sizes differ by at most one well.
pub fn group_split(intervals: &[WellInterval], k_folds: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k_folds == 0 {
        return Err(Error::Config("k_folds must be at least 1".into()));
    }
    let mut wells: Vec<String> = intervals.iter().map(|iv| iv.well_id.clone()).collect();
    wells.sort();
    wells.dedup();
    if k_folds > wells.len() {
        return Err(Error::Config(format!(
            "k_folds {} exceeds number of wells {}",
            k_folds,
            wells.len()
        )));
    }
    rng.shuffle(&mut wells);
    let fold_of: BTreeMap<&String, usize> = wells
        .iter()
        .enumerate()
        .map(|(i, w)| (w, i % k_folds))
        .collect();
    Ok(intervals
        .iter()
        .map(|iv| fold_of[&iv.well_id])
        .collect())
}

// ── Interval container ──────────────────────────────────────────────────

const INTERVALS_MAGIC: &[u8; 4] = b"RGIV";
const INTERVALS_VERSION: u32 = 1;

/// Write intervals as a binary container: header (magic, version, count,
/// L, f), a well-id table, then per interval its well index, start index,
/// and row-major values as little-endian 64-bit floats.
pub fn save_intervals(intervals: &[WellInterval], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut wells: Vec<&str> = intervals.iter().map(|iv| iv.well_id.as_str()).collect();
    wells.sort_unstable();
    wells.dedup();
    let well_index: BTreeMap<&str, u64> = wells
        .iter()
        .enumerate()
        .map(|(i, &w)| (w, i as u64))
        .collect();
    let (l, f) = match intervals.first() {
        Some(iv) => (iv.seq_len() as u64, iv.num_features() as u64),
        None => (INTERVAL_LEN as u64, MODEL_FEATURES.len() as u64),
    };

    let mut file = std::fs::File::create(path)?;
    file.write_all(INTERVALS_MAGIC)?;
    file.write_all(&INTERVALS_VERSION.to_le_bytes())?;
    file.write_all(&(intervals.len() as u64).to_le_bytes())?;
    file.write_all(&l.to_le_bytes())?;
    file.write_all(&f.to_le_bytes())?;
    file.write_all(&(wells.len() as u64).to_le_bytes())?;
    for w in &wells {
        file.write_all(&(w.len() as u64).to_le_bytes())?;
        file.write_all(w.as_bytes())?;
    }
    for iv in intervals {
        if iv.seq_len() as u64 != l || iv.num_features() as u64 != f {
            return Err(Error::Contract("intervals of unequal shape".into()));
        }
        file.write_all(&well_index[iv.well_id.as_str()].to_le_bytes())?;
        file.write_all(&(iv.start_index as u64).to_le_bytes())?;
        for v in &iv.values.data {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_intervals(path: &std::path::Path) -> Result<Vec<WellInterval>> {
    use std::io::Read;
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Format("interval file too short".into()))?;
    if &magic != INTERVALS_MAGIC {
        return Err(Error::Format("not an interval container (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != INTERVALS_VERSION {
        return Err(Error::Format("unsupported interval container version".into()));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |file: &mut std::fs::File| -> Result<u64> {
        file.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let count = read_u64(&mut file)? as usize;
    let l = read_u64(&mut file)? as usize;
    let f = read_u64(&mut file)? as usize;
    let n_wells = read_u64(&mut file)? as usize;
    let mut wells = Vec::with_capacity(n_wells);
    for _ in 0..n_wells {
        let len = read_u64(&mut file)? as usize;
        let mut name = vec![0u8; len];
        file.read_exact(&mut name)?;
        wells.push(
            String::from_utf8(name)
                .map_err(|_| Error::Format("well id is not UTF-8".into()))?,
        );
    }
    let mut intervals = Vec::with_capacity(count);
    for _ in 0..count {
        let w = read_u64(&mut file)? as usize;
        if w >= wells.len() {
            return Err(Error::Format("well index out of table".into()));
        }
        let start_index = read_u64(&mut file)? as usize;
        let mut values = vec![0.0; l * f];
        let mut bytes = vec![0u8; l * f * 8];
        file.read_exact(&mut bytes)
            .map_err(|_| Error::Format("interval values truncated".into()))?;
        for (v, chunk) in values.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        intervals.push(WellInterval {
            well_id: wells[w].clone(),
            start_index,
            values: Tensor::new(vec![l, f], values)?,
        });
    }
    Ok(intervals)
}
