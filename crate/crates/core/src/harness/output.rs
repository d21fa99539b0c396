//! CSV rows, atomic file writes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub avg_travel_time_s: f64,
    pub throughput: usize,
    pub mean_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub intersection: String,
    pub phase: usize,
    pub waiting_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCsvRow {
    pub episode: u32,
    pub agent: String,
    pub t: u64,
    pub r: f64,
    #[serde(rename = "R")]
    pub amended: f64,
    pub neighbor: Option<String>,
    pub ratio: Option<f64>,
    pub weight: Option<f64>,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub episode: usize,
    pub i: String,
    pub j: String,
    pub alpha_ij: f64,
    pub alpha_hat_ij: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub episode: usize,
    pub avg_travel_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub scenario: String,
    pub avg_travel_time_s: f64,
    pub throughput: usize,
    pub mean_queue: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmendTotals {
    pub rounds: usize,
    pub amended: usize,
    pub skipped_missing: usize,
    pub skipped_boundary: usize,
    pub stale_terms: usize,
    pub target_syncs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub method: String,
    pub scenario: String,
    pub coordination_enabled: bool,
    pub config: ExperimentConfig,
    /// SHA-256 over the resolved config and the scenario documents.
    pub input_hash: String,
    pub wall_clock_s: f64,
    pub episodes: Vec<MetricsRow>,
    /// Greedy episode run after training.
    pub final_evaluation: Option<MetricsRow>,
    pub amendment: AmendTotals,
    pub files: Vec<String>,
    pub error: Option<String>,
}

impl RunManifest {
    /// Final metric of the run: the greedy evaluation when present,
    /// otherwise the last training episode.
    pub fn final_metrics(&self) -> Option<MetricsRow> {
        self.final_evaluation.or_else(|| self.episodes.last().copied())
    }
}

/// Hash of each part framed as `blob <len>\0<bytes>`.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(format!("blob {}\0", p.len()).as_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = temp_path(path);
    let mut f = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    f.sync_all().map_err(|e| HarnessError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    w.into_inner().map_err(|e| HarnessError::Csv(e.to_string()))
}

/// Writes rows with a header even when `rows` is empty.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let bytes = if rows.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| HarnessError::Csv(e.to_string()))?;
        w.into_inner().map_err(|e| HarnessError::Csv(e.to_string()))?
    } else {
        csv_bytes(rows)?
    };
    write_atomic(path, &bytes)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Csv(e.to_string()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::Csv(e.to_string()))
}

/// Incremental CSV writer that appears at its final path only on `finish`.
pub struct CsvSink {
    path: PathBuf,
    tmp: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, HarnessError> {
        let tmp = temp_path(path);
        let file = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(header).map_err(|e| HarnessError::Csv(e.to_string()))?;
        Ok(CsvSink {
            path: path.to_path_buf(),
            tmp,
            writer,
        })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<(), HarnessError> {
        self.writer.serialize(row).map_err(|e| HarnessError::Csv(e.to_string()))
    }

    pub fn finish(mut self) -> Result<(), HarnessError> {
        self.writer.flush().map_err(|e| HarnessError::io(&self.tmp, e))?;
        drop(self.writer);
        fs::rename(&self.tmp, &self.path).map_err(|e| HarnessError::io(&self.path, e))
    }
}

pub const METRICS_HEADER: [&str; 4] = ["episode", "avg_travel_time_s", "throughput", "mean_queue"];
pub const TRACE_HEADER: [&str; 4] = ["t", "intersection", "phase", "waiting_total"];
pub const AUDIT_HEADER: [&str; 9] = ["episode", "agent", "t", "r", "R", "neighbor", "ratio", "weight", "stale"];
pub const SCORE_HEADER: [&str; 5] = ["episode", "i", "j", "alpha_ij", "alpha_hat_ij"];
pub const SWEEP_HEADER: [&str; 3] = ["gamma", "episode", "avg_travel_time_s"];
pub const COMPARE_HEADER: [&str; 5] = ["method", "scenario", "avg_travel_time_s", "throughput", "mean_queue"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_has_expected_header() {
        let rows = [MetricsRow {
            episode: 1,
            avg_travel_time_s: 120.5,
            throughput: 300,
            mean_queue: 0.25,
        }];
        let text = String::from_utf8(csv_bytes(&rows).unwrap()).unwrap();
        assert_eq!(text, "episode,avg_travel_time_s,throughput,mean_queue\n1,120.5,300,0.25\n");
    }

    #[test]
    fn quoting_follows_rfc4180() {
        let rows = [TraceRow {
            t: 10.0,
            intersection: "a,\"b\"".into(),
            phase: 0,
            waiting_total: 2,
        }];
        let text = String::from_utf8(csv_bytes(&rows).unwrap()).unwrap();
        assert!(text.contains("\"a,\"\"b\"\"\""));
    }

    #[test]
    fn header_is_written_for_empty_tables() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_csv::<MetricsRow>(&p, &METRICS_HEADER, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "episode,avg_travel_time_s,throughput,mean_queue\n");
    }

    #[test]
    fn content_hash_is_framed() {
        assert_ne!(content_hash(&[b"ab", b"c"]), content_hash(&[b"a", b"bc"]));
        assert_eq!(content_hash(&[b"x"]).len(), 64);
    }
}
