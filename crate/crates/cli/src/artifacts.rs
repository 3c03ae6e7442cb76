//! Output layout, provenance stamps and file writing.
//!
//! ```text
//! <out>/ingest/    intervals.csv frames.csv report.json
//! <out>/align/     metadata.csv samples.csv report.json
//! <out>/filter/    samples.csv exclusions.jsonl report.json
//! <out>/metrics/   play_summary.csv behaviour_rates.csv report.json
//! <out>/lmm/       report.txt report.json residuals.csv
//! <out>/prepare/   manifest.csv report.json
//! <out>/train/     checkpoint.bin run_log.jsonl
//! <out>/evaluate/  report.txt report.json
//! <out>/report/    summary.txt summary.json
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "calfplay";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Provenance { tool: TOOL.into(), version: VERSION.into(), config_sha256: cfg.hash(), seed: cfg.seed }
    }

    /// Comment line prefixed to delimited tables.
    pub fn comment_line(&self) -> String {
        format!("# {} {} config_sha256={} seed={}\n", self.tool, self.version, self.config_sha256, self.seed)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("tool".to_string(), self.tool.clone()),
            ("version".to_string(), self.version.clone()),
            ("config_sha256".to_string(), self.config_sha256.clone()),
            ("seed".to_string(), self.seed.to_string()),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Align,
    Filter,
    Metrics,
    Lmm,
    Prepare,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Align => "align",
            Stage::Filter => "filter",
            Stage::Metrics => "metrics",
            Stage::Lmm => "lmm",
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn command(self) -> &'static str {
        match self {
            Stage::Lmm => "fit-lmm",
            s => s.dir_name(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.root.join(stage.dir_name()).join(file)
    }

    /// Path of an upstream artifact, or a user error naming the command that
    /// produces it.
    pub fn require(&self, stage: Stage, file: &str) -> CliResult<PathBuf> {
        let p = self.path(stage, file);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::user(format!(
                "missing upstream artifact {}; run `calfplay {}` first",
                p.display(),
                stage.command()
            )))
        }
    }

    pub fn create(&self, stage: Stage) -> CliResult<PathBuf> {
        let d = self.root.join(stage.dir_name());
        std::fs::create_dir_all(&d).map_err(|e| CliError::write_failed(&d, e))?;
        Ok(d)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    let mut f = std::fs::File::create(&tmp).map_err(|e| CliError::write_failed(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::write_failed(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::write_failed(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::write_failed(path, e))
}

/// A delimited table with a provenance comment line in front.
pub fn write_table<F>(path: &Path, prov: &Provenance, body: F) -> CliResult<()>
where
    F: FnOnce(&mut Vec<u8>) -> calfplay::Result<()>,
{
    let mut buf = prov.comment_line().into_bytes();
    body(&mut buf).map_err(|e| CliError::write_failed(path, e))?;
    write_atomic(path, &buf)
}

/// Pretty JSON object with a `provenance` member.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, value: &T) -> CliResult<()> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::write_failed(path, e))?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("provenance".into(), serde_json::to_value(prov).expect("provenance serializes"));
        }
        None => v = serde_json::json!({ "provenance": prov, "value": v }),
    }
    let mut bytes = serde_json::to_vec_pretty(&v).map_err(|e| CliError::write_failed(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_text(path: &Path, prov: &Provenance, text: &str) -> CliResult<()> {
    let head = prov.comment_line();
    write_atomic(path, format!("{head}\n{text}").as_bytes())
}

pub fn open(path: &Path) -> CliResult<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| CliError::user(format!("cannot open {}: {e}", path.display())))
}

pub fn read_json(path: &Path) -> CliResult<serde_json::Value> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

/// `*.csv` files of a directory in name order, or the file itself.
pub fn csv_inputs(path: &Path, what: &str) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::user(format!("{what} input {} does not exist", path.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CliError::user(format!("cannot list {}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::user(format!("no inputs: {} contains no {what} files (*.csv)", path.display())));
    }
    Ok(files)
}
