//! Evaluation records and their CSV / JSON-lines store.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{strength_class, Strength};
use crate::error::{Error, Result};

/// Bumped whenever the flat record layout changes.
pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub patch_id: String,
    pub config_id: String,
    pub method: String,
    pub target: String,
    pub seed: u64,
    /// Meshes the patch was trained on (empty for the 2D baseline).
    pub mesh_pool: Vec<String>,
    pub position: usize,
    pub distance: f64,
    /// `screen` for plain evaluation, else the support mesh.
    pub support: String,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub scores: [f64; 3],
    pub valid: [bool; 3],
    pub in_frame: [bool; 3],
    pub strength: Strength,
    pub robustness: f64,
}

impl EvalRecord {
    /// Strength agrees with the flags and S lies in `[0, 9]`.
    pub fn is_consistent(&self) -> bool {
        strength_class(self.valid) == self.strength && (0.0..=9.0).contains(&self.robustness)
    }

    pub fn key(&self) -> (String, String, usize, String, u64, u64) {
        (
            self.patch_id.clone(),
            self.support.clone(),
            self.position,
            self.method.clone(),
            self.azimuth_deg.to_bits(),
            self.elevation_deg.to_bits(),
        )
    }
}

/// Flat CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    schema_version: u32,
    patch_id: String,
    config_id: String,
    method: String,
    target: String,
    seed: u64,
    mesh_pool: String,
    position: usize,
    distance: f64,
    support: String,
    azimuth_deg: f64,
    elevation_deg: f64,
    s_left: f64,
    s_center: f64,
    s_right: f64,
    valid_left: bool,
    valid_center: bool,
    valid_right: bool,
    in_frame_left: bool,
    in_frame_center: bool,
    in_frame_right: bool,
    strength: String,
    robustness: f64,
}

impl From<&EvalRecord> for CsvRow {
    fn from(r: &EvalRecord) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            patch_id: r.patch_id.clone(),
            config_id: r.config_id.clone(),
            method: r.method.clone(),
            target: r.target.clone(),
            seed: r.seed,
            mesh_pool: r.mesh_pool.join("|"),
            position: r.position,
            distance: r.distance,
            support: r.support.clone(),
            azimuth_deg: r.azimuth_deg,
            elevation_deg: r.elevation_deg,
            s_left: r.scores[0],
            s_center: r.scores[1],
            s_right: r.scores[2],
            valid_left: r.valid[0],
            valid_center: r.valid[1],
            valid_right: r.valid[2],
            in_frame_left: r.in_frame[0],
            in_frame_center: r.in_frame[1],
            in_frame_right: r.in_frame[2],
            strength: r.strength.name().into(),
            robustness: r.robustness,
        }
    }
}

impl CsvRow {
    fn into_record(self, path: &Path) -> Result<EvalRecord> {
        if self.schema_version != RECORD_SCHEMA_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "record schema version {} but this build reads {}",
                    self.schema_version, RECORD_SCHEMA_VERSION
                ),
            ));
        }
        let strength = Strength::parse(&self.strength)
            .ok_or_else(|| Error::format(path, format!("unknown strength {}", self.strength)))?;
        Ok(EvalRecord {
            patch_id: self.patch_id,
            config_id: self.config_id,
            method: self.method,
            target: self.target,
            seed: self.seed,
            mesh_pool: if self.mesh_pool.is_empty() {
                Vec::new()
            } else {
                self.mesh_pool.split('|').map(String::from).collect()
            },
            position: self.position,
            distance: self.distance,
            support: self.support,
            azimuth_deg: self.azimuth_deg,
            elevation_deg: self.elevation_deg,
            scores: [self.s_left, self.s_center, self.s_right],
            valid: [self.valid_left, self.valid_center, self.valid_right],
            in_frame: [self.in_frame_left, self.in_frame_center, self.in_frame_right],
            strength,
            robustness: self.robustness,
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

/// Serializes records to CSV text (header included).
pub fn records_to_csv(records: &[EvalRecord], path_hint: &Path) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(CsvRow::from(r)).map_err(|e| csv_err(path_hint, e))?;
    }
    w.into_inner().map_err(|e| Error::format(path_hint, e.to_string()))
}

pub fn write_records_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    let bytes = records_to_csv(records, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Appends to a CSV store, writing the header only for a new file.
pub fn append_records_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in records {
        w.serialize(CsvRow::from(r)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV store, refusing rows of another schema version.
pub fn read_records_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rdr.deserialize::<CsvRow>()
        .map(|row| row.map_err(|e| csv_err(path, e))?.into_record(path))
        .collect()
}

pub fn append_records_jsonl(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_record(id: &str, s: [f64; 3]) -> EvalRecord {
        let valid = s.map(|v| v > 0.5);
        EvalRecord {
            patch_id: id.into(),
            config_id: "abc123".into(),
            method: "transcender_mc".into(),
            target: "stop sign".into(),
            seed: 3,
            mesh_pool: vec!["barrel".into(), "sign".into()],
            position: 1,
            distance: 1.5,
            support: "screen".into(),
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
            scores: s,
            valid,
            in_frame: [true; 3],
            strength: strength_class(valid),
            robustness: super::super::metrics::robustness_score(s, valid, false),
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs = vec![sample_record("a", [0.9, 0.1, 0.7]), sample_record("b", [0.0; 3])];
        append_records_csv(&recs[..1], &path).unwrap();
        append_records_csv(&recs[1..], &path).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), recs);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let recs = vec![sample_record("a", [0.9, 0.6, 0.7])];
        append_records_jsonl(&recs, &path).unwrap();
        assert_eq!(read_records_jsonl(&path).unwrap(), recs);
    }

    #[test]
    fn other_schema_version_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_records_csv(&[sample_record("a", [0.9, 0.6, 0.7])], &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1] = lines[1].replacen('1', "2", 1);
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(read_records_csv(&path), Err(Error::Format { .. })));
    }
}
