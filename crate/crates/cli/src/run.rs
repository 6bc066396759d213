//! Shared plumbing: error classification, run directories and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl From<bubsim::Error> for Failure {
    fn from(e: bubsim::Error) -> Self {
        let code = if e.is_input_error() { EXIT_INPUT } else { EXIT_RUNTIME };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Record of one command invocation, written as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    /// Files written by the command, relative to the run directory.
    pub outputs: Vec<String>,
    pub version: String,
}

/// Output directory of one command plus the files written into it.
pub struct RunDir {
    pub path: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    pub fn create(out: Option<&Path>, command: &str, config: Option<&Path>, seed: u64) -> CliResult<Self> {
        let started_at = Utc::now();
        let path = match out {
            Some(p) => p.to_owned(),
            None => PathBuf::from("runs").join(format!("{}-seed{seed}", started_at.format("%Y%m%dT%H%M%S"))),
        };
        fs::create_dir_all(&path)
            .map_err(|e| Failure::runtime(format!("cannot create output directory {}: {e}", path.display())))?;
        Ok(RunDir {
            path,
            manifest: RunManifest {
                command: command.to_owned(),
                arguments: std::env::args().collect(),
                config: config.map(Path::to_owned),
                seed,
                started_at,
                finished_at: None,
                outputs: Vec::new(),
                version: env!("CARGO_PKG_VERSION").to_owned(),
            },
        })
    }

    /// Path of an output file; the file is listed in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_owned());
        }
        self.path.join(name)
    }

    /// Creates (truncating) an output file.
    pub fn create_file(&mut self, name: &str) -> CliResult<fs::File> {
        let p = self.output(name);
        fs::File::create(&p).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", p.display())))
    }

    pub fn write_string(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let p = self.output(name);
        fs::write(&p, contents).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", p.display())))
    }

    /// Writes `manifest.json` after checking that every listed output exists.
    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.manifest.finished_at = Some(Utc::now());
        if let Some(missing) = self.manifest.outputs.iter().find(|o| !self.path.join(o).exists()) {
            return Err(Failure::runtime(format!("output {missing} was not written")));
        }
        self.manifest.outputs.push("manifest.json".into());
        let p = self.path.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(self.path)
    }
}

/// Writes via a temporary file and rename, so a crash never leaves a torn file.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
