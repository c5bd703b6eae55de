//! Run directories, `run.json` and the CLI error type.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub category: String,
    pub detail: String,
}

impl CliError {
    pub fn config(detail: impl Into<String>) -> Self {
        Self { category: "config".into(), detail: detail.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { category: "io".into(), detail: format!("{}: {e}", path.display()) }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category.as_str() {
            "usage" => EXIT_USAGE,
            "config" => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }

    /// `error=<category> detail=<text>` on one line.
    pub fn line(&self) -> String {
        format!("error={} detail={}", self.category, self.detail.replace('\n', " "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.detail)
    }
}

impl From<uatr_core::Error> for CliError {
    fn from(e: uatr_core::Error) -> Self {
        // a JSON file that does not parse is a configuration problem
        let category = match &e {
            uatr_core::Error::Json(_) => "config",
            other => other.category(),
        };
        Self { category: category.into(), detail: e.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Read and parse a JSON config file; failures are config errors.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Output directory of one command. Files are written into a hidden
/// staging directory next to the target, which is renamed into place by
/// [`RunDir::finish`].
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    digests: BTreeMap<String, String>,
}

impl RunDir {
    pub fn create(target: &Path) -> CliResult<Self> {
        if target.exists() {
            let empty = fs::read_dir(target).map_err(|e| CliError::io(target, e))?.next().is_none();
            if !empty {
                return Err(CliError::config(format!("output directory {} already exists", target.display())));
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let name = target
            .file_name()
            .ok_or_else(|| CliError::config(format!("bad output directory {}", target.display())))?;
        let staging = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            digests: BTreeMap::new(),
        })
    }

    /// Where a file should be written now.
    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    /// Final absolute location of the run directory.
    pub fn final_path(&self) -> CliResult<PathBuf> {
        let parent = self.staging.parent().unwrap_or(Path::new("."));
        let parent = parent.canonicalize().map_err(|e| CliError::io(parent, e))?;
        Ok(parent.join(self.target.file_name().unwrap()))
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Record a precomputed digest, e.g. over a directory of cache files.
    pub fn digest(&mut self, name: &str, hash: String) {
        self.digests.insert(name.to_string(), hash);
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.output(name);
        Ok(())
    }

    /// Write `run.json` and move the directory into place.
    pub fn finish(self, command: &str, config: Value) -> CliResult<PathBuf> {
        let mut outputs = self.digests.clone();
        for name in &self.outputs {
            outputs.insert(name.clone(), sha256_file(&self.staging.join(name))?);
        }
        let run = json!({
            "command": command,
            "version": uatr_core::VERSION,
            "config": config,
            "inputs": self.inputs,
            "outputs": outputs,
        });
        let path = self.staging.join("run.json");
        let text = serde_json::to_string_pretty(&run).map_err(|e| CliError::config(e.to_string()))? + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(|e| CliError::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        // after a successful finish the staging directory no longer exists
        let _ = fs::remove_dir_all(&self.staging);
    }
}
