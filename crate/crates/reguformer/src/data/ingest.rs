//! CSV ingestion: header columns `well_id, formation, depth`, then feature
//! columns. Empty cells are missing values. Rows are grouped by
//! (well, formation) and sorted by depth; a repeated depth inside a group
//! is a data error.

use std::collections::BTreeMap;
use std::path::Path;

use super::WellLog;
use crate::error::{Error, Result};

const REQUIRED: [&str; 3] = ["well_id", "formation", "depth"];

/// Parse a log CSV into one [`WellLog`] per (well, formation) group.
pub fn ingest_csv(path: &Path) -> Result<Vec<WellLog>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("bad header: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    for required in REQUIRED {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Format(format!("missing required column {required}")));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (well_col, formation_col, depth_col) =
        (col("well_id"), col("formation"), col("depth"));
    let feature_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![well_col, formation_col, depth_col].contains(i))
        .map(|(i, name)| (i, name.clone()))
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Format("no feature columns after well_id/formation/depth".into()));
    }

    // (well, formation) -> rows of (depth, values)
    type Row = (f64, Vec<f64>);
    let mut groups: BTreeMap<(String, String), Vec<Row>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))?;
        let well = record.get(well_col).unwrap_or("").to_string();
        let formation = record.get(formation_col).unwrap_or("").to_string();
        let depth_txt = record.get(depth_col).unwrap_or("");
        let depth: f64 = depth_txt.parse().map_err(|_| {
            Error::Format(format!(
                "row {}: depth \"{depth_txt}\" is not a number",
                line + 2
            ))
        })?;
        let mut values = Vec::with_capacity(feature_cols.len());
        for (idx, name) in &feature_cols {
            let cell = record.get(*idx).unwrap_or("");
            if cell.is_empty() {
                values.push(f64::NAN);
            } else {
                values.push(cell.parse().map_err(|_| {
                    Error::Format(format!(
                        "row {}: column {name} value \"{cell}\" is not a number",
                        line + 2
                    ))
                })?);
            }
        }
        groups.entry((well, formation)).or_default().push((depth, values));
    }

    let mut logs = Vec::with_capacity(groups.len());
    for ((well_id, formation), mut rows) in groups {
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!(
                "well {well_id}: repeated depth value, ordering ambiguous"
            )));
        }
        let depths: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut channels: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (c, (_, name)) in feature_cols.iter().enumerate() {
            channels.insert(name.clone(), rows.iter().map(|r| r.1[c]).collect());
        }
        let log = WellLog {
            well_id,
            formation,
            depths,
            channels,
        };
        log.validate()?;
        logs.push(log);
    }
    Ok(logs)
}

/// Write logs back out in the ingestion schema. Feature columns are the
/// union of channel names in sorted order; floats print in shortest
/// round-trip form, so an ingest of the output reproduces the values
/// bit-exactly.
pub fn write_csv(logs: &[WellLog], path: &Path) -> Result<()> {
    use std::io::Write;
    let mut columns: Vec<String> = logs
        .iter()
        .flat_map(|log| log.channels.keys().cloned())
        .collect();
    columns.sort();
    columns.dedup();

    let mut out = String::from("well_id,formation,depth");
    for c in &columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for log in logs {
        for row in 0..log.len() {
            out.push_str(&format!(
                "{},{},{}",
                log.well_id, log.formation, log.depths[row]
            ));
            for c in &columns {
                out.push(',');
                if let Some(values) = log.channels.get(c) {
                    let v = values[row];
                    if !v.is_nan() {
                        out.push_str(&v.to_string());
                    }
                }
            }
            out.push('\n');
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
