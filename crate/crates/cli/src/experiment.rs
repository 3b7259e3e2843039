use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ascn::cloudio::{generate_dataset, load_dataset, Dataset, DatasetSpec};
use ascn::network::{ModelConfig, TrainConfig};
use ascn::rng::derive_seed;

use crate::error::{CliError, CliResult};

/// Where a dataset comes from: a directory on disk or the generator.
/// Either may be thinned with `decimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Path {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decimate: Option<usize>,
    },
    Generated {
        generate: DatasetSpec,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decimate: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    /// Column name in the report, e.g. `dense` or `decimated_x4`.
    pub tag: String,
    #[serde(flatten)]
    pub source: DataSource,
}

/// Train once per seed on `train`, evaluate on every test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub train: DataSource,
    pub tests: Vec<TestSet>,
    /// Inline model configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    /// Model configuration file, relative to the spec file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_config: Option<PathBuf>,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut spec: ExperimentSpec = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.resolve_paths(base);
        spec.validate()?;
        Ok(spec)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Path { path, .. } = &mut self.train {
            fix(path);
        }
        for t in &mut self.tests {
            if let DataSource::Path { path, .. } = &mut t.source {
                fix(path);
            }
        }
        if let Some(p) = &mut self.model_config {
            fix(p);
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.tests.is_empty() {
            return Err(CliError::Usage("the experiment needs at least one test set".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("the experiment needs at least one seed".into()));
        }
        if self.model.is_some() && self.model_config.is_some() {
            return Err(CliError::Usage("give either `model` or `model_config`, not both".into()));
        }
        let mut tags: Vec<&str> = self.tests.iter().map(|t| t.tag.as_str()).collect();
        tags.sort_unstable();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Usage("test-set tags must be unique".into()));
        }
        let mut paths: Vec<&Path> = self.tests.iter().filter_map(|t| t.source.path()).collect();
        paths.extend(self.train.path());
        paths.extend(self.model_config.as_deref());
        for p in paths {
            if !p.exists() {
                return Err(CliError::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "path does not exist"),
                ));
            }
        }
        Ok(())
    }
}

impl DataSource {
    pub fn path(&self) -> Option<&Path> {
        match self {
            DataSource::Path { path, .. } => Some(path),
            DataSource::Generated { .. } => None,
        }
    }

    pub fn load(&self) -> CliResult<Dataset> {
        let (data, decimate, seed) = match self {
            DataSource::Path { path, decimate } => (load_dataset(path)?, *decimate, 0),
            DataSource::Generated { generate, seed, decimate } => {
                (generate_dataset(generate, *seed)?, *decimate, *seed)
            }
        };
        Ok(match decimate {
            Some(k) => data.decimated(k, derive_seed(seed, &[k as u64]))?,
            None => data,
        })
    }
}
