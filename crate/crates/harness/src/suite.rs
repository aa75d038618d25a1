//! Experiment suites: a base configuration, per-variant overrides and a list
//! of seeds, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use splitfed::data::{generate_synthetic, load_csv, Dataset};
use splitfed::protocols::ExperimentConfig;

use crate::error::{HarnessError, Result};

/// Where a suite's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs, see [`splitfed::data::generate_synthetic`].
    Synthetic {
        labels: usize,
        dim: usize,
        per_label: usize,
        separation: f64,
        seed: u64,
    },
    /// `feature,...,label` rows without a header; relative paths are taken
    /// from the suite file's directory.
    Csv { path: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    data: DataSource,
    base: toml::Table,
    #[serde(default)]
    variants: Vec<toml::Table>,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedConfig {
    pub name: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub seeds: Vec<u64>,
    pub data: DataSource,
    pub configs: Vec<NamedConfig>,
    base_dir: PathBuf,
}

impl Suite {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, dir)
    }

    /// Parses suite text; `base_dir` anchors relative data paths.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let file: SuiteFile = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        if file.seeds.is_empty() {
            return Err(HarnessError::Config("seeds: at least one seed is required".into()));
        }
        let mut sorted = file.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Config("seeds: seeds must be distinct".into()));
        }
        let has_variants = !file.variants.is_empty();
        let deltas = if !has_variants {
            vec![toml::Table::new()]
        } else {
            file.variants
        };
        let mut configs = Vec::with_capacity(deltas.len());
        for (i, mut delta) in deltas.into_iter().enumerate() {
            let name = match delta.remove("name") {
                Some(toml::Value::String(s)) => s,
                Some(other) => {
                    return Err(HarnessError::Config(format!(
                        "variants[{i}].name: expected a string, got {other}"
                    )))
                }
                None if has_variants => format!("variant-{i}"),
                None => "base".to_string(),
            };
            let mut merged = file.base.clone();
            merge(&mut merged, delta);
            let config: ExperimentConfig = toml::Value::Table(merged)
                .try_into()
                .map_err(|e| HarnessError::Config(format!("{name}: {e}")))?;
            if configs.iter().any(|c: &NamedConfig| c.name == name) {
                return Err(HarnessError::Config(format!("duplicate variant name {name:?}")));
            }
            configs.push(NamedConfig { name, config });
        }
        Ok(Self {
            seeds: file.seeds,
            data: file.data,
            configs,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load_data(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Synthetic {
                labels,
                dim,
                per_label,
                separation,
                seed,
            } => generate_synthetic(*labels, *dim, *per_label, *separation, *seed)
                .map_err(|e| HarnessError::Config(format!("data: {e}"))),
            DataSource::Csv { .. } => {
                let path = self.data_path().expect("csv source");
                load_csv(&path).map_err(|e| HarnessError::Config(format!("data: {e}")))
            }
        }
    }

    fn data_path(&self) -> Option<PathBuf> {
        match &self.data {
            DataSource::Csv { path } => Some(self.base_dir.join(path)),
            DataSource::Synthetic { .. } => None,
        }
    }

    /// Checks every configuration against the data before anything runs.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        for c in &self.configs {
            c.config
                .validate(dataset.num_labels())
                .map_err(|e| HarnessError::Config(format!("{}: {e}", c.name)))?;
        }
        Ok(())
    }

    /// Digest identifying the data: the generator parameters, or the bytes of
    /// the CSV file.
    pub fn data_digest(&self) -> Result<String> {
        let bytes = match self.data_path() {
            Some(path) => std::fs::read(&path).map_err(HarnessError::io(path))?,
            None => serde_json::to_vec(&self.data).expect("data source serialises"),
        };
        Ok(hex16(&Sha256::digest(&bytes)))
    }
}

/// Hash naming a configuration's output files; covers every experiment field
/// and the data.
pub fn config_hash(config: &ExperimentConfig, data_digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serialises"));
    h.update(b"\n");
    h.update(data_digest.as_bytes());
    hex16(&h.finalize())
}

fn hex16(digest: &[u8]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Recursively overlays `delta` on `base`; tables merge, anything else is
/// replaced.
fn merge(base: &mut toml::Table, delta: toml::Table) {
    for (k, v) in delta {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(d)) => merge(b, d),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
