//! Tab-separated manifests tying dataset files together.
//!
//! A degradation manifest has one row per case:
//! `clean_path<TAB>degraded_path<TAB>haze<TAB>rain<TAB>noise<TAB>seed`.
//! Evaluation reads pairs from the first two columns of any manifest, so
//! degradation and restoration manifests both feed it directly.

use std::path::PathBuf;

use crate::degrade::DegradationSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub spec: DegradationSpec,
}

pub fn format_row(row: &ManifestRow) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        row.clean.display(),
        row.degraded.display(),
        row.spec.haze,
        row.spec.rain,
        row.spec.noise,
        row.spec.seed
    )
}

/// Parse a degradation manifest. Blank lines are ignored.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                lineno,
                format!("line {}: expected 6 tab-separated fields, got {}", lineno + 1, fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(
                lineno,
                format!("line {}: empty path field", lineno + 1),
            ));
        }
        let num = |idx: usize, what: &str| -> Result<f64> {
            fields[idx].parse::<f64>().map_err(|_| {
                Error::parse(
                    lineno,
                    format!("line {}: {what} `{}` is not a number", lineno + 1, fields[idx]),
                )
            })
        };
        let seed = fields[5].parse::<u64>().map_err(|_| {
            Error::parse(
                lineno,
                format!("line {}: seed `{}` is not a u64", lineno + 1, fields[5]),
            )
        })?;
        let spec = DegradationSpec::new(
            num(2, "haze level")?,
            num(3, "rain level")?,
            num(4, "noise level")?,
            seed,
        )?;
        rows.push(ManifestRow {
            clean: PathBuf::from(fields[0]),
            degraded: PathBuf::from(fields[1]),
            spec,
        });
    }
    Ok(rows)
}

/// Parse `(first, second)` path pairs from the leading two columns.
pub fn parse_pairs(text: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let a = fields.next().unwrap_or("");
        let b = fields.next().unwrap_or("");
        if a.is_empty() || b.is_empty() {
            return Err(Error::parse(
                lineno,
                format!("line {}: expected at least two tab-separated paths", lineno + 1),
            ));
        }
        pairs.push((PathBuf::from(a), PathBuf::from(b)));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_row() {
        let row = ManifestRow {
            clean: PathBuf::from("clean/a.ppm"),
            degraded: PathBuf::from("out/a.ppm"),
            spec: DegradationSpec::new(150.0, 300.0, 50.0, 42).unwrap(),
        };
        let text = format_row(&row);
        let parsed = parse_manifest(&text).unwrap();
        assert_eq!(parsed, vec![row]);
    }

    #[test]
    fn empty_manifest_is_ok() {
        assert_eq!(parse_manifest("").unwrap(), vec![]);
        assert_eq!(parse_manifest("\n\n").unwrap(), vec![]);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_manifest("a\tb\t1\t2\t3").is_err()); // five fields
        assert!(parse_manifest("a\tb\tx\t2\t3\t4").is_err()); // bad number
        assert!(parse_manifest("a\tb\t1\t2\t3\t-1").is_err()); // bad seed
        assert!(parse_manifest("a\tb\t999\t0\t0\t1").is_err()); // out of range
        assert!(parse_manifest("\tb\t1\t2\t3\t4").is_err()); // empty path
    }

    #[test]
    fn pairs_take_first_two_columns() {
        let text = "c.ppm\td.ppm\t150\t0\t0\t1\nx.ppm\ty.ppm";
        let pairs = parse_pairs(text).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, PathBuf::from("c.ppm"));
        assert_eq!(pairs[1].1, PathBuf::from("y.ppm"));
        assert!(parse_pairs("lonely").is_err());
    }
}
