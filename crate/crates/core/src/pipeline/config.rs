//! Run configuration: one JSON file drives every stage. Paths inside the
//! config resolve relative to the config file's directory; the output
//! root can be overridden with the `SPINDLE_OUT` environment variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::HyperPriors;
use crate::simulator::SimStage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// One sample per line.
    Csv,
    /// Raw little-endian 32-bit floats.
    F32le,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectConfig {
    pub id: String,
    pub input: PathBuf,
    #[serde(default = "default_format")]
    pub format: InputFormat,
    /// Reference stage annotations, one label (1..=5) per epoch line.
    #[serde(default)]
    pub hypnogram: Option<PathBuf>,
}

fn default_format() -> InputFormat {
    InputFormat::Csv
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TaperConfig {
    pub time_bandwidth: f64,
    pub taper_count: usize,
}

impl Default for TaperConfig {
    fn default() -> Self {
        TaperConfig { time_bandwidth: 4.0, taper_count: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceSection {
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_thin")]
    pub thin: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hyperpriors: HyperPriors,
    #[serde(default = "default_ig_shape")]
    pub ig_shape: f64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

fn default_k_max() -> usize {
    30
}
fn default_burn_in() -> u64 {
    2000
}
fn default_n_samples() -> usize {
    100
}
fn default_thin() -> u64 {
    50
}
fn default_ig_shape() -> f64 {
    1.0
}
fn default_checkpoint_every() -> u64 {
    500
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            k_max: default_k_max(),
            burn_in: default_burn_in(),
            n_samples: default_n_samples(),
            thin: default_thin(),
            seed: 0,
            hyperpriors: HyperPriors::default(),
            ig_shape: default_ig_shape(),
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringSection {
    #[serde(default = "default_n_clusters")]
    pub n_clusters: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_clusters() -> usize {
    9
}
fn default_restarts() -> usize {
    20
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection {
            n_clusters: default_n_clusters(),
            restarts: default_restarts(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationSection {
    #[serde(default = "default_alpha_band")]
    pub alpha_band: (f64, f64),
    #[serde(default = "default_epoch_seconds")]
    pub hypnogram_epoch_seconds: f64,
}

fn default_alpha_band() -> (f64, f64) {
    (10.5, 12.5)
}
fn default_epoch_seconds() -> f64 {
    30.0
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            alpha_band: default_alpha_band(),
            hypnogram_epoch_seconds: default_epoch_seconds(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateSection {
    /// Name of a built-in fixture (`five-stage` or `three-stage`); explicit
    /// stages and transition override it when present.
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub stages: Vec<SimStage>,
    #[serde(default)]
    pub transition: Vec<Vec<f64>>,
    pub n_windows: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub fs: f64,
    #[serde(default = "default_window_seconds")]
    pub window_seconds: f64,
    #[serde(default = "default_bands")]
    pub bands: Vec<(f64, f64)>,
    #[serde(default)]
    pub taper: TaperConfig,
    #[serde(default = "default_percentile")]
    pub artifact_percentile: f64,
    #[serde(default)]
    pub subjects: Vec<SubjectConfig>,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub clustering: ClusteringSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
}

fn default_window_seconds() -> f64 {
    15.0
}
fn default_percentile() -> f64 {
    95.0
}

/// Study-default band list.
fn default_bands() -> Vec<(f64, f64)> {
    vec![(0.5, 2.5), (2.5, 4.5), (4.5, 6.5), (6.5, 8.5), (10.5, 12.5), (12.5, 35.0)]
}

/// A loaded configuration plus everything derived from its location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory of the config file; relative paths resolve against it.
    pub base_dir: PathBuf,
    /// Hash of the normalized config (output root excluded).
    pub config_hash: String,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad config: {e}")))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_config(config, base_dir)
    }

    pub fn from_config(mut config: RunConfig, base_dir: PathBuf) -> Result<Self> {
        if let Ok(out) = std::env::var("SPINDLE_OUT") {
            if !out.is_empty() {
                config.output_dir = PathBuf::from(out);
            }
        }
        validate(&config)?;
        let config_hash = hash_config(&config)?;
        Ok(LoadedConfig { config, base_dir, config_hash })
    }

    /// Resolve a config-relative path.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn subject(&self, id: &str) -> Result<(usize, &SubjectConfig)> {
        self.config
            .subjects
            .iter()
            .enumerate()
            .find(|(_, s)| s.id == id)
            .ok_or_else(|| Error::validation(format!("unknown subject '{id}'")))
    }
}

fn validate(config: &RunConfig) -> Result<()> {
    if !(config.fs > 0.0) {
        return Err(Error::validation("sampling rate must be positive"));
    }
    if !(config.window_seconds > 0.0) {
        return Err(Error::validation("window length must be positive"));
    }
    if !(config.artifact_percentile > 0.0 && config.artifact_percentile <= 100.0) {
        return Err(Error::validation("artifact percentile must be in (0, 100]"));
    }
    crate::signal::BandSpec::new(config.bands.clone())?;
    let mut seen = std::collections::HashSet::new();
    for s in &config.subjects {
        if !seen.insert(&s.id) {
            return Err(Error::validation(format!("duplicate subject id '{}'", s.id)));
        }
        if s.id.is_empty() || s.id.contains(['/', '\\']) {
            return Err(Error::validation(format!("subject id '{}' is not a valid name", s.id)));
        }
    }
    Ok(())
}

/// Hash of the config with the output root blanked, so the same analysis
/// rooted in two places produces identical artifacts.
pub fn hash_config(config: &RunConfig) -> Result<String> {
    let mut normalized = config.clone();
    normalized.output_dir = PathBuf::new();
    let text = serde_json::to_string(&normalized)
        .map_err(|e| Error::validation(format!("config not serializable: {e}")))?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
