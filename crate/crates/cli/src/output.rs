//! Failure classes with their exit codes, and staged output files.
//!
//! Every output is first written under a `.partial` name. Only a run that
//! finishes renames them into place; a failed run leaves the `.partial`
//! files behind for inspection.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use vnas_core::config::RunConfig;
use vnas_core::Error;

#[derive(Debug)]
pub enum Failure {
    Internal(String),
    Config(String),
    Io(String),
    NonFinite(String),
    Artifact(String),
    GradCheck(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Internal(_) => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::NonFinite(_) => 4,
            Failure::Artifact(_) => 5,
            Failure::GradCheck(_) => 6,
        }
    }

    /// Classifies an error raised while reading an input artifact: anything
    /// other than plain I/O means the artifact itself is bad.
    pub fn artifact(e: Error) -> Self {
        match e {
            Error::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Artifact(other.to_string()),
        }
    }

    pub fn csv(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            Error::Io(_) => Failure::Io(e.to_string()),
            Error::NonFiniteLoss { .. } => Failure::NonFinite(e.to_string()),
            Error::Format { .. } | Error::MissingParam(_) | Error::ParamMismatch(_) => Failure::Artifact(e.to_string()),
            Error::Tensor(_) | Error::Invalid(_) => Failure::Internal(e.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Internal(m) => write!(f, "internal error: {m}"),
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Io(m) => write!(f, "I/O: {m}"),
            Failure::NonFinite(m) => write!(f, "{m}"),
            Failure::Artifact(m) => write!(f, "bad input artifact: {m}"),
            Failure::GradCheck(m) => write!(f, "gradient check failed: {m}"),
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn partial_name(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// The set of files one command produces.
pub struct Outputs {
    root: Option<PathBuf>,
    config_path: PathBuf,
    metadata_path: PathBuf,
    staged: Vec<PathBuf>,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Outputs {
    /// Outputs inside directory `dir`, created if needed.
    pub fn in_dir(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            root: Some(dir.to_path_buf()),
            config_path: dir.join("run_config.toml"),
            metadata_path: dir.join("metadata.json"),
            staged: Vec::new(),
            started: unix_now(),
        })
    }

    /// A single output file plus its config and metadata siblings.
    pub fn beside(file: &Path) -> Result<Self, Failure> {
        if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        Ok(Self {
            root: None,
            config_path: sibling(file, ".run_config.toml"),
            metadata_path: sibling(file, ".meta.json"),
            staged: Vec::new(),
            started: unix_now(),
        })
    }

    /// Registers `path` as an output and returns the name to write it under
    /// until [`Self::commit`].
    pub fn claim_file(&mut self, path: &Path) -> PathBuf {
        if !self.staged.iter().any(|p| p == path) {
            self.staged.push(path.to_path_buf());
        }
        partial_name(path)
    }

    /// [`Self::claim_file`] relative to the output directory.
    pub fn claim(&mut self, relative: &str) -> PathBuf {
        let root = self.root.clone().unwrap_or_default();
        self.claim_file(&root.join(relative))
    }

    pub fn write_config(&mut self, cfg: &RunConfig) -> Result<(), Failure> {
        let text = cfg.to_toml_string()?;
        let path = self.config_path.clone();
        let staged = self.claim_file(&path);
        std::fs::write(&staged, text).map_err(|e| io_err(&staged, e))
    }

    /// Renames every staged file into place.
    pub fn commit(&self) -> Result<(), Failure> {
        for path in &self.staged {
            let staged = partial_name(path);
            std::fs::rename(&staged, path).map_err(|e| io_err(&staged, e))?;
        }
        Ok(())
    }

    /// Writes the sidecar holding everything that is not reproducible:
    /// timestamps, and the outcome. Hashes of committed files are included.
    pub fn write_metadata(&self, command: &str, status: Value) -> Result<(), Failure> {
        let mut files = serde_json::Map::new();
        for path in &self.staged {
            if let Ok(bytes) = std::fs::read(path) {
                files.insert(path.display().to_string(), json!(hex(&Sha256::digest(&bytes))));
            }
        }
        let doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": self.started,
            "finished_unix": unix_now(),
            "status": status,
            "sha256": files,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Internal(e.to_string()))?;
        std::fs::write(&self.metadata_path, text).map_err(|e| io_err(&self.metadata_path, e))
    }
}
