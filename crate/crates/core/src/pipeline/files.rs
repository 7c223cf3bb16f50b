//! On-disk artifact formats: JSON-lines streams with typed headers for
//! observations and posterior samples, JSON documents for checkpoints and
//! cluster models, and plain CSV tables for reports. Every artifact
//! carries the config hash and the run manifest so stages can refuse
//! mismatched inputs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{ChainConfig, ChainState, PosteriorSample};
use crate::signal::WindowObservation;

pub const OBSERVATIONS_SCHEMA: &str = "spindle.observations/1";
pub const SAMPLES_SCHEMA: &str = "spindle.samples/1";
pub const CHECKPOINT_SCHEMA: &str = "spindle.checkpoint/1";
pub const CLUSTERS_SCHEMA: &str = "spindle.clusters/1";
pub const SUMMARY_SCHEMA: &str = "spindle.summary/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationsHeader {
    pub schema: String,
    pub config_hash: String,
    pub manifest: String,
    pub subject: String,
    pub fs: f64,
    pub window_seconds: f64,
    pub window_len: usize,
    pub taper_count: usize,
    pub time_bandwidth: f64,
    pub bands: Vec<(f64, f64)>,
    pub n_windows: usize,
    pub rejected: usize,
    pub input_sha256: String,
    /// Per band: (bin, windows that selected it), ascending by bin.
    pub selected_bin_histogram: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplesHeader {
    pub schema: String,
    pub config_hash: String,
    pub manifest: String,
    pub subject: String,
    pub n_windows: usize,
    pub band_count: usize,
    pub taper_count: usize,
    pub chain: ChainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub config_hash: String,
    pub manifest: String,
    pub subject: String,
    pub sweeps_done: u64,
    pub chain: ChainConfig,
    pub state: ChainState,
}

/// A JSON-lines writer whose first record is the typed header.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create<H: Serialize>(path: &Path, header: &H) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = JsonlWriter { path: path.to_path_buf(), out: BufWriter::new(file) };
        writer.write(header)?;
        Ok(writer)
    }

    /// Reopen for appending after a checkpointed interruption.
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(JsonlWriter { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::format(&self.path, format!("serialize: {e}")))?;
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Read a JSON-lines file: header first, then every record.
pub fn read_jsonl<H: DeserializeOwned, T: DeserializeOwned>(path: &Path) -> Result<(H, Vec<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header_line = match lines.next() {
        Some((_, Ok(line))) => line,
        Some((_, Err(e))) => return Err(Error::io(path, e)),
        None => return Err(Error::format(path, "empty file")),
    };
    let header: H = serde_json::from_str(&header_line)
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", idx + 1)))?;
        records.push(record);
    }
    Ok((header, records))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, format!("bad JSON: {e}")))
}

/// Plain CSV table with a leading `# key=value ...` provenance comment.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, provenance: &[(&str, &str)], columns: &[&str]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = CsvWriter { path: path.to_path_buf(), out: BufWriter::new(file) };
        let meta: Vec<String> = provenance.iter().map(|(k, v)| format!("{k}={v}")).collect();
        w.raw_line(&format!("# {}", meta.join(" ")))?;
        w.raw_line(&columns.join(","))?;
        Ok(w)
    }

    /// Provenance comment only, no column header; the sample-file input
    /// format is one value per line.
    pub fn create_headerless(path: &Path, provenance: &[(&str, &str)]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = CsvWriter { path: path.to_path_buf(), out: BufWriter::new(file) };
        let meta: Vec<String> = provenance.iter().map(|(k, v)| format!("{k}={v}")).collect();
        w.raw_line(&format!("# {}", meta.join(" ")))?;
        Ok(w)
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(CsvWriter { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn raw_line(&mut self, line: &str) -> Result<()> {
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.raw_line(&fields.join(","))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Read one recording: CSV (one sample per line) or raw little-endian f32.
pub fn read_samples(path: &Path, format: super::config::InputFormat) -> Result<Vec<f64>> {
    match format {
        super::config::InputFormat::Csv => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut samples = Vec::new();
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                let trimmed = line.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                let value: f64 = trimmed.parse().map_err(|e| {
                    Error::format(path, format!("line {}: bad sample '{trimmed}': {e}", idx + 1))
                })?;
                samples.push(value);
            }
            Ok(samples)
        }
        super::config::InputFormat::F32le => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            if bytes.len() % 4 != 0 {
                return Err(Error::format(path, "length is not a multiple of 4 bytes"));
            }
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        }
    }
}

/// Read a hypnogram file: one stage label per line.
pub fn read_hypnogram(path: &Path, epoch_seconds: f64) -> Result<crate::evaluation::Hypnogram> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let label: u8 = trimmed.parse().map_err(|e| {
            Error::format(path, format!("line {}: bad stage label '{trimmed}': {e}", idx + 1))
        })?;
        labels.push(label);
    }
    crate::evaluation::Hypnogram::new(labels, epoch_seconds)
}

/// Tagged record stream for observation files.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationRecord {
    Header(ObservationsHeader),
    Window(WindowObservation),
}

/// Tagged record stream for sample files.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleRecord {
    Header(SamplesHeader),
    Sample(PosteriorSample),
}

pub fn read_observations(path: &Path) -> Result<(ObservationsHeader, Vec<WindowObservation>)> {
    let (header, records): (ObservationRecord, Vec<ObservationRecord>) = {
        let (h, r): (serde_json::Value, Vec<serde_json::Value>) = read_jsonl(path)?;
        (
            serde_json::from_value(h).map_err(|e| Error::format(path, format!("bad header: {e}")))?,
            r.into_iter()
                .map(|v| serde_json::from_value(v).map_err(|e| Error::format(path, format!("{e}"))))
                .collect::<Result<_>>()?,
        )
    };
    let header = match header {
        ObservationRecord::Header(h) => h,
        _ => return Err(Error::format(path, "first record is not a header")),
    };
    if header.schema != OBSERVATIONS_SCHEMA {
        return Err(Error::format(path, format!("unexpected schema '{}'", header.schema)));
    }
    let mut windows = Vec::with_capacity(records.len());
    for r in records {
        match r {
            ObservationRecord::Window(w) => windows.push(w),
            ObservationRecord::Header(_) => {
                return Err(Error::format(path, "duplicate header record"))
            }
        }
    }
    Ok((header, windows))
}

pub fn read_samples_file(path: &Path) -> Result<(SamplesHeader, Vec<PosteriorSample>)> {
    let (header, records): (SampleRecord, Vec<SampleRecord>) = {
        let (h, r): (serde_json::Value, Vec<serde_json::Value>) = read_jsonl(path)?;
        (
            serde_json::from_value(h).map_err(|e| Error::format(path, format!("bad header: {e}")))?,
            r.into_iter()
                .map(|v| serde_json::from_value(v).map_err(|e| Error::format(path, format!("{e}"))))
                .collect::<Result<_>>()?,
        )
    };
    let header = match header {
        SampleRecord::Header(h) => h,
        _ => return Err(Error::format(path, "first record is not a header")),
    };
    if header.schema != SAMPLES_SCHEMA {
        return Err(Error::format(path, format!("unexpected schema '{}'", header.schema)));
    }
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        match r {
            SampleRecord::Sample(s) => samples.push(s),
            SampleRecord::Header(_) => return Err(Error::format(path, "duplicate header record")),
        }
    }
    Ok((header, samples))
}

/// Cluster model manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterManifest {
    pub schema: String,
    pub config_hash: String,
    pub manifest: String,
    pub n_clusters: usize,
    pub band_count: usize,
    pub distortion: f64,
    /// Cluster ids ordered by ascending alpha-band centroid power.
    pub alpha_order: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub states: Vec<ClusterStateEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterStateEntry {
    pub subject: String,
    pub state: usize,
    pub occurrences: u64,
    pub cluster: usize,
    pub spectrum: Vec<f64>,
}

/// Per-subject report summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub schema: String,
    pub config_hash: String,
    pub manifest: String,
    pub subject: String,
    pub n_windows: usize,
    pub occupied_states_modal: usize,
    pub median_rho: Option<f64>,
    pub rho_count: usize,
    /// Stage label -> cluster transition rate per minute.
    pub transition_rates: std::collections::BTreeMap<u8, f64>,
    pub empty_stages: Vec<u8>,
    pub cap_warnings: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct H {
            name: String,
        }
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct R {
            v: f64,
        }
        let mut w = JsonlWriter::create(&path, &H { name: "hdr".into() }).unwrap();
        w.write(&R { v: 0.1 }).unwrap();
        w.write(&R { v: -3.25 }).unwrap();
        w.finish().unwrap();
        let (h, rs): (H, Vec<R>) = read_jsonl(&path).unwrap();
        assert_eq!(h, H { name: "hdr".into() });
        assert_eq!(rs, vec![R { v: 0.1 }, R { v: -3.25 }]);
    }

    #[test]
    fn sample_input_formats() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("a.csv");
        std::fs::write(&csv, "1.5\n\n-2.25\n# comment\n3\n").unwrap();
        assert_eq!(
            read_samples(&csv, super::super::config::InputFormat::Csv).unwrap(),
            vec![1.5, -2.25, 3.0]
        );
        let raw = dir.path().join("a.f32");
        let mut bytes = Vec::new();
        for v in [0.5f32, -1.25, 7.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&raw, &bytes).unwrap();
        assert_eq!(
            read_samples(&raw, super::super::config::InputFormat::F32le).unwrap(),
            vec![0.5, -1.25, 7.0]
        );
        std::fs::write(&raw, [0u8; 5]).unwrap();
        assert!(read_samples(&raw, super::super::config::InputFormat::F32le).is_err());
    }

    #[test]
    fn bad_sample_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("bad.csv");
        std::fs::write(&csv, "1.0\nnot-a-number\n").unwrap();
        let err = read_samples(&csv, super::super::config::InputFormat::Csv).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
