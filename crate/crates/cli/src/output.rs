//! CSV and verdict files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::experiments::Row;
use crate::CliError;

pub const CSV_HEADER: [&str; 5] = ["experiment", "parameter", "x", "estimate", "std_error"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub experiment: String,
    pub timestamp: String,
    pub config_hash: String,
    pub pass: bool,
    pub metrics: BTreeMap<String, Value>,
    pub artifacts: Vec<PathBuf>,
}

/// Hex SHA-256 of the compact JSON rendering of `value`. Object keys are
/// sorted, so the digest ignores key order in the source files.
pub fn config_hash(value: &Value) -> String {
    hex::encode(Sha256::digest(canonical(value).as_bytes()))
}

pub fn canonical(value: &Value) -> String {
    // serde_json's map is ordered by key unless `preserve_order` is enabled.
    serde_json::to_string(value).expect("JSON values always serialize")
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes the rows followed by `# config_hash=...`. Floats use the shortest
/// round-trip form, with an exponent for very large or small magnitudes.
pub fn write_csv(path: &Path, experiment: &str, rows: &[Row], hash: &str) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(|e| io(path, e))?;
    for r in rows {
        w.write_record([
            experiment.to_string(),
            r.parameter.clone(),
            format!("{:?}", r.x),
            format!("{:?}", r.estimate),
            format!("{:?}", r.std_error),
        ])
        .map_err(|e| io(path, e))?;
    }
    let mut bytes = w.into_inner().map_err(|e| io(path, e))?;
    writeln!(bytes, "# config_hash={hash}").map_err(|e| io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| io(path, e))
}

pub fn write_verdict(path: &Path, verdict: &VerdictRecord) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(verdict).map_err(|e| io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": {"y": [1, 2], "x": 0.5}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": {"x": 0.5, "y": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(canonical(&a), r#"{"a":{"x":0.5,"y":[1,2]},"b":1}"#);
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&json!({"b": 2, "a": {"x": 0.5, "y": [1, 2]}})));
        assert_eq!(config_hash(&json!({})).len(), 64);
    }

    #[test]
    fn csv_has_header_rows_and_trailer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            Row { parameter: "r=0;p=2".into(), x: 5.0, estimate: 0.1, std_error: 0.01 },
            Row { parameter: "a,b".into(), x: 1.0, estimate: 1e-300, std_error: 0.0 },
        ];
        write_csv(&path, "delta", &rows, "abc").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "experiment,parameter,x,estimate,std_error\ndelta,r=0;p=2,5.0,0.1,0.01\ndelta,\"a,b\",1.0,1e-300,0.0\n# config_hash=abc\n"
        );
    }
}
