//! Pipeline configuration: built-in defaults, overlaid by a TOML file, then
//! by `--set section.key=value` overrides and command-line flags.
//!
//! ```toml
//! seed = 7
//!
//! [inputs]
//! events = "events"          # directory of event logs named after their video
//! frames = "frames"          # frame metadata file or directory
//! ocr = "ocr"                # per-video OCR readings for untimestamped frames
//! embeddings = "."           # root that embedding paths are relative to
//! calves = "calves.csv"      # calf records, needed by fit-lmm
//!
//! [filter]
//! min_confidence = 0.55
//!
//! [train]
//! max_epochs = 50
//! ```
//!
//! Relative input paths are resolved against the directory of the config
//! file.

use std::path::{Path, PathBuf};

use calfplay::classifier::TrainConfig;
use calfplay::filtering::FilterConfig;
use calfplay::lmm::Method;
use calfplay::metrics::DEFAULT_OBSERVATION_S;
use calfplay::timing::SeriesConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub inputs: Inputs,
    pub output: Output,
    pub timing: TimingSection,
    pub alignment: AlignmentSection,
    pub filter: FilterConfig,
    pub metrics: MetricsSection,
    pub lmm: LmmSection,
    pub split: SplitSection,
    pub train: TrainSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            inputs: Inputs::default(),
            output: Output::default(),
            timing: TimingSection::default(),
            alignment: AlignmentSection::default(),
            filter: FilterConfig::default(),
            metrics: MetricsSection::default(),
            lmm: LmmSection::default(),
            split: SplitSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub events: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub ocr: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub calves: Option<PathBuf>,
    /// `subject,tracking_id` rows overriding the trailing-digits rule.
    pub subject_map: Option<PathBuf>,
    /// Replacement ethogram table.
    pub ethogram: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: PathBuf::from("calfplay-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    pub nominal_fps: f64,
    pub outlier_factor: f64,
    pub window_frames: u64,
    pub resolution_s: f64,
}

impl Default for TimingSection {
    fn default() -> Self {
        let s = SeriesConfig::default();
        TimingSection {
            nominal_fps: 25.0,
            outlier_factor: s.outlier_factor,
            window_frames: s.window_frames,
            resolution_s: s.resolution_s,
        }
    }
}

impl TimingSection {
    pub fn series(&self) -> SeriesConfig {
        SeriesConfig {
            outlier_factor: self.outlier_factor,
            window_frames: self.window_frames,
            resolution_s: self.resolution_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentSection {
    pub tolerance_s: f64,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        AlignmentSection { tolerance_s: calfplay::alignment::DEFAULT_TOLERANCE_S }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Observation period per calf and recording day.
    pub observation_s: f64,
    /// Label classes whose time is removed from the observation period,
    /// e.g. `["management", "out_of_view"]`.
    pub deduct: Vec<String>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { observation_s: DEFAULT_OBSERVATION_S, deduct: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmmSection {
    pub method: Method,
    /// Calf-record columns entered as continuous covariates.
    pub covariates: Vec<String>,
    /// Mark pairwise differences with per-reference symbols instead of `*`.
    pub reference_markers: bool,
}

impl Default for LmmSection {
    fn default() -> Self {
        LmmSection { method: Method::Ml, covariates: vec!["age_days".into()], reference_markers: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub fractions: [f64; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { fractions: [0.70, 0.15, 0.15] }
    }
}

/// Training hyperparameters; the seed is the pipeline seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            dropout: t.dropout,
            max_epochs: t.max_epochs,
            patience: t.patience,
            hidden: t.hidden,
        }
    }
}

impl PipelineConfig {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            dropout: t.dropout,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: self.seed,
            hidden: t.hidden.clone(),
        }
    }

    /// SHA-256 of everything that can change an artifact. The output
    /// location is excluded so identical runs into different directories
    /// hash alike.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = Output::default();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.filter.validate()?;
        self.train_config().validate()?;
        if !(self.timing.nominal_fps > 0.0) {
            return Err(CliError::user(format!("timing.nominal_fps must be positive, got {}", self.timing.nominal_fps)));
        }
        if !(self.alignment.tolerance_s >= 0.0) {
            return Err(CliError::user("alignment.tolerance_s must be non-negative"));
        }
        if !(self.metrics.observation_s > 0.0) {
            return Err(CliError::user("metrics.observation_s must be positive"));
        }
        let f = self.split.fractions;
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::user(format!("split.fractions must be non-negative and sum to 1, got {f:?}")));
        }
        Ok(())
    }
}

/// Applies one `section.key=value` override to a TOML document. The value
/// is read as a TOML literal, falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::user(format!("--set expects section.key=value, got `{assignment}`")))?;
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::user(format!("bad override key `{key}`")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::user(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Builds the effective configuration.
///
/// `output` is the flag or environment value for the output root and wins
/// over the file.
pub fn load(file: Option<&Path>, overrides: &[String], seed: Option<u64>, output: Option<PathBuf>) -> CliResult<PipelineConfig> {
    let mut doc = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::user(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::user(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut cfg: PipelineConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::user(format!("invalid configuration: {}", e.message())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = output {
        cfg.output.dir = o;
    }
    if let Some(base) = file.and_then(Path::parent) {
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let i = &mut cfg.inputs;
        for p in [&mut i.events, &mut i.frames, &mut i.ocr, &mut i.embeddings, &mut i.calves, &mut i.subject_map, &mut i.ethogram] {
            resolve(p);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.train_config(), TrainConfig::default());
        assert_eq!(c.filter, FilterConfig::default());
        assert_eq!(c.split.fractions, [0.7, 0.15, 0.15]);
    }

    #[test]
    fn overrides_parse_literals_and_strings() {
        let mut doc = toml::Table::new();
        apply_override(&mut doc, "train.max_epochs=3").unwrap();
        apply_override(&mut doc, "inputs.events=some dir").unwrap();
        apply_override(&mut doc, "split.fractions=[0.8, 0.1, 0.1]").unwrap();
        let c: PipelineConfig = toml::Value::Table(doc).try_into().unwrap();
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.inputs.events, Some(PathBuf::from("some dir")));
        assert_eq!(c.split.fractions, [0.8, 0.1, 0.1]);
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn file_then_overrides_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\n[train]\nmax_epochs = 7\nbatch_size = 16\n[inputs]\nevents = \"ev\"\n").unwrap();
        let c = load(Some(&p), &["train.max_epochs=9".into()], None, None).unwrap();
        assert_eq!((c.seed, c.train.max_epochs, c.train.batch_size), (3, 9, 16));
        assert_eq!(c.inputs.events, Some(dir.path().join("ev")));
        let c = load(Some(&p), &[], Some(11), Some(PathBuf::from("/tmp/x"))).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.output.dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_user_errors() {
        assert!(matches!(load(None, &["train.epochs=3".into()], None, None), Err(CliError::User(_))));
        assert!(matches!(load(None, &["filter.min_confidence=-1".into()], None, None), Err(CliError::User(_))));
        assert!(matches!(load(None, &["split.fractions=[0.5, 0.1, 0.1]".into()], None, None), Err(CliError::User(_))));
    }

    #[test]
    fn hash_ignores_output_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
