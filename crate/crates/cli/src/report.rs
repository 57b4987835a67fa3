//! Grouped mean/std aggregation of any CSV the commands write.

use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::exec::mean_std;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupStats {
    /// Values of the grouping columns, in the order requested.
    pub key: Vec<String>,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Groups rows by the `by` columns (first-seen order) and aggregates the
/// numeric column `value`. Empty cells are skipped.
pub fn aggregate<R: std::io::Read>(input: R, by: &[String], value: &str) -> Result<Vec<GroupStats>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Invalid(format!("no column `{name}`")))
    };
    let key_cols = by.iter().map(|b| col(b)).collect::<Result<Vec<_>>>()?;
    let value_col = col(value)?;
    let mut groups: Vec<(Vec<String>, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let key: Vec<String> = key_cols.iter().map(|&c| rec[c].to_string()).collect();
        let cell = &rec[value_col];
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| CliError::Invalid(format!("row {}: `{cell}` is not a number", line + 2)))?;
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vals)) => vals.push(v),
            None => groups.push((key, vec![v])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(key, vals)| {
            let (mean, std) = mean_std(&vals);
            GroupStats {
                key,
                count: vals.len(),
                mean,
                std,
            }
        })
        .collect())
}

pub fn aggregate_file(path: &Path, by: &[String], value: &str) -> Result<Vec<GroupStats>> {
    let file = std::fs::File::open(path).map_err(CliError::io(path))?;
    aggregate(file, by, value)
}

/// CSV text with the grouping columns, then `count,mean,std`.
pub fn to_csv(by: &[String], value: &str, stats: &[GroupStats]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = by.to_vec();
    header.extend([format!("{value}_count"), format!("{value}_mean"), format!("{value}_std")]);
    w.write_record(&header)?;
    for s in stats {
        let mut row = s.key.clone();
        row.extend([s.count.to_string(), s.mean.to_string(), s.std.to_string()]);
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Invalid(format!("CSV buffer: {}", e.error())))?;
    String::from_utf8(bytes).map_err(|e| CliError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_in_first_seen_order() {
        let text = "lambda,seed,oa,ma\n1,0,0.5,0.4\n0.01,0,0.9,\n1,1,0.7,0.6\n";
        let by = vec!["lambda".to_string()];
        let s = aggregate(text.as_bytes(), &by, "oa").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].key, vec!["1"]);
        assert_eq!(s[0].count, 2);
        assert!((s[0].mean - 0.6).abs() < 1e-15);
        assert_eq!(s[1].std, 0.0);
        let ma = aggregate(text.as_bytes(), &by, "ma").unwrap();
        assert_eq!(ma.len(), 1);
        assert!(aggregate(text.as_bytes(), &by, "nope").is_err());
        let out = to_csv(&by, "oa", &s).unwrap();
        assert!(out.starts_with("lambda,oa_count,oa_mean,oa_std\n1,2,0.6"));
    }
}
