//! Pipeline configuration: a TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_THRESHOLDS: [f64; 8] = [-5.0, -4.0, -3.0, -2.0, 2.0, 3.0, 4.0, 5.0];
pub const DEFAULT_N_BOOTSTRAP: usize = 1000;
pub const DEFAULT_DELTA_T: u64 = 10;
pub const DEFAULT_BINS_PER_DECADE: usize = recurrence_core::dist::DEFAULT_BINS_PER_DECADE;
pub const MIN_N_BOOTSTRAP: usize = 100;

/// Config file contents; every field may also come from a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    pub thresholds: Option<Vec<f64>>,
    pub n_bootstrap: Option<usize>,
    pub seed: Option<u64>,
    pub keep_overnight: Option<bool>,
    pub reset_at_sessions: Option<bool>,
    pub output_dir: Option<PathBuf>,
    pub delta_t: Option<u64>,
    pub bins_per_decade: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `other` replace ours.
    pub fn overridden_by(mut self, other: ConfigFile) -> Self {
        if !other.inputs.is_empty() {
            self.inputs = other.inputs;
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(thresholds, n_bootstrap, seed, keep_overnight, reset_at_sessions, output_dir, delta_t, bins_per_decade);
        self
    }

    pub fn resolve(self) -> CliResult<PipelineConfig> {
        let seed = self
            .seed
            .ok_or_else(|| CliError::Config("seed is required for reproducible runs".into()))?;
        let output_dir = self
            .output_dir
            .ok_or_else(|| CliError::Config("output_dir is required".into()))?;
        if self.inputs.is_empty() {
            return Err(CliError::Config("no input files".into()));
        }
        let thresholds = self.thresholds.unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
        if thresholds.is_empty() {
            return Err(CliError::Config("threshold list is empty".into()));
        }
        if let Some(q) = thresholds.iter().find(|q| !(q.abs() >= 1.0)) {
            return Err(CliError::Config(format!("threshold {q}: |q| must be >= 1")));
        }
        let n_bootstrap = self.n_bootstrap.unwrap_or(DEFAULT_N_BOOTSTRAP);
        if n_bootstrap < MIN_N_BOOTSTRAP {
            return Err(CliError::Config(format!(
                "n_bootstrap = {n_bootstrap}; need at least {MIN_N_BOOTSTRAP}"
            )));
        }
        let bins_per_decade = self.bins_per_decade.unwrap_or(DEFAULT_BINS_PER_DECADE);
        if bins_per_decade == 0 {
            return Err(CliError::Config("bins_per_decade must be >= 1".into()));
        }
        let mut names: Vec<String> = self.inputs.iter().map(|p| instrument_name(p)).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("two inputs share a file stem".into()));
        }
        Ok(PipelineConfig {
            inputs: self.inputs,
            thresholds,
            n_bootstrap,
            seed,
            keep_overnight: self.keep_overnight.unwrap_or(false),
            reset_at_sessions: self.reset_at_sessions.unwrap_or(false),
            delta_t: self.delta_t.unwrap_or(DEFAULT_DELTA_T),
            bins_per_decade,
            output_dir,
        })
    }
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub thresholds: Vec<f64>,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub keep_overnight: bool,
    pub reset_at_sessions: bool,
    pub delta_t: u64,
    pub bins_per_decade: usize,
    /// Not part of the recorded config, so moving a run does not change it.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

/// Output subdirectory for an input file: its stem.
pub fn instrument_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}
