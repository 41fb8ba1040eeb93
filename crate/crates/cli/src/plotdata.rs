//! Conversion of a wide convergence table into tidy long-format rows
//! (`epsilon, metric, value`) for external plotting tools.

use std::path::Path;

use gradhom_core::{Error, Result};

/// Metrics exported when the caller does not name any.
pub const DEFAULT_METRICS: [&str; 2] = ["l2_error", "h1_error"];

/// One tidy output row.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TidyRow {
    pub epsilon: f64,
    pub metric: String,
    pub value: f64,
}

/// Reads a wide CSV table with an `epsilon` column and writes one tidy row
/// per (source row, metric). An empty table produces a header-only file.
pub fn export(table: &Path, out: &Path, metrics: &[String]) -> Result<usize> {
    let mut reader = csv::Reader::from_path(table)
        .map_err(|e| Error::Format(format!("cannot read table {}: {e}", table.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("bad CSV header: {e}")))?
        .clone();

    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Format(format!(
                "table {} has no column '{name}' (found: {})",
                table.display(),
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let eps_col = column("epsilon")?;
    let metric_cols: Vec<(String, usize)> = metrics
        .iter()
        .map(|m| column(m).map(|c| (m.clone(), c)))
        .collect::<Result<_>>()?;

    let mut writer = csv::Writer::from_path(out)
        .map_err(|e| Error::Format(format!("cannot write {}: {e}", out.display())))?;
    let mut rows = 0usize;
    for (source_row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("bad CSV row: {e}")))?;
        let parse = |col: usize, name: &str| -> Result<f64> {
            record.get(col).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| {
                Error::Format(format!(
                    "row {source_row}: column '{name}' is not a number"
                ))
            })
        };
        let epsilon = parse(eps_col, "epsilon")?;
        for (name, col) in &metric_cols {
            let value = parse(*col, name)?;
            writer
                .serialize(TidyRow { epsilon, metric: name.clone(), value })
                .map_err(|e| Error::Format(format!("cannot write tidy row: {e}")))?;
            rows += 1;
        }
    }
    // An empty input still gets the header line.
    if rows == 0 {
        writer
            .write_record(["epsilon", "metric", "value"])
            .map_err(|e| Error::Format(format!("cannot write header: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Format(format!("cannot flush {}: {e}", out.display())))?;
    Ok(rows)
}
