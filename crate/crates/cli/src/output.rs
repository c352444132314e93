use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Output directory that remembers every file written, in order.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).expect("serializable output");
        self.write(name, &(text + "\n"))
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

/// Contents of `run.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub problem: crate::args::ProblemKind,
    pub config: serde_json::Value,
    pub seed: u64,
    pub n_samples: usize,
    pub n_alpha: usize,
    pub sub_quad: usize,
    pub forward_evals_ensemble: u64,
    pub forward_evals_grid: u64,
    pub wall_ms: u128,
    pub outputs: Vec<String>,
    pub version: String,
}
