//! Experiment configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lae_pacbayes::data::LoadOptions;
use lae_pacbayes::experiment::{ExperimentSettings, PopulationSource};
use lae_pacbayes::lae_bound::default_lambda_grid;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// Delimited `user,item` records.
    Csv,
    /// Coordinate file with an `n m` header.
    Coo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    /// Inferred from the extension when absent: `.coo` is coordinate, anything else delimited.
    pub format: Option<DatasetFormat>,
    pub delimiter: char,
    pub skip_header: bool,
    pub min_user_interactions: usize,
    pub min_item_interactions: usize,
    pub test_fraction: f64,
    pub p: f64,
    pub gammas: Vec<f64>,
    pub sigma: f64,
    pub delta: f64,
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub jitter: Option<f64>,
    pub ks: Vec<usize>,
    pub population_source: PopulationSource,
    /// Matrix file holding `Σ_hh`, required when `population_source = "file"`.
    pub population_file: Option<PathBuf>,
    /// Defaults to `results` in the working directory.
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = ExperimentSettings::default();
        Self {
            dataset: None,
            format: None,
            delimiter: ',',
            skip_header: false,
            min_user_interactions: 0,
            min_item_interactions: 0,
            test_fraction: s.test_fraction,
            p: s.p,
            gammas: s.gammas,
            sigma: s.sigma,
            delta: s.delta,
            lambdas: default_lambda_grid(),
            seed: s.seed,
            jitter: s.jitter,
            ks: s.ks,
            population_source: s.population_source,
            population_file: None,
            output_dir: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML file; relative paths inside it are taken relative to the file.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| CliError::User(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = config.dataset.as_mut() {
            rebase(p);
        }
        if let Some(p) = config.population_file.as_mut() {
            rebase(p);
        }
        if let Some(p) = config.output_dir.as_mut() {
            rebase(p);
        }
        Ok(config)
    }

    pub fn settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            test_fraction: self.test_fraction,
            p: self.p,
            gammas: self.gammas.clone(),
            sigma: self.sigma,
            delta: self.delta,
            lambdas: self.lambdas.clone(),
            seed: self.seed,
            jitter: self.jitter,
            ks: self.ks.clone(),
            population_source: self.population_source,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn dataset_format(&self) -> Option<DatasetFormat> {
        let path = self.dataset.as_ref()?;
        Some(self.format.unwrap_or_else(|| infer_format(path)))
    }

    pub fn load_options(&self) -> Result<LoadOptions, CliError> {
        Ok(LoadOptions {
            delimiter: delimiter_byte(self.delimiter)?,
            skip_header: self.skip_header,
            min_user_interactions: self.min_user_interactions,
            min_item_interactions: self.min_item_interactions,
        })
    }
}

pub fn infer_format(path: &Path) -> DatasetFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("coo") => DatasetFormat::Coo,
        _ => DatasetFormat::Csv,
    }
}

pub fn delimiter_byte(c: char) -> Result<u8, CliError> {
    if c.is_ascii() {
        Ok(c as u8)
    } else {
        Err(CliError::User(format!("delimiter must be a single ASCII character, got {c:?}")))
    }
}
