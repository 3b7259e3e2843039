use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{decimate_density, load_cloud, save_cloud, CloudFormat, PointCloud};
use crate::rng::derive_seed;
use crate::{AscnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub label: usize,
}

/// Labelled clouds plus class names and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<LabeledCloud>,
    pub class_names: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(
        items: Vec<LabeledCloud>,
        class_names: Vec<String>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(AscnError::InvalidParam(format!(
                "a dataset needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if let Some((i, item)) = items.iter().enumerate().find(|(_, it)| it.label >= class_names.len()) {
            return Err(AscnError::InvalidParam(format!(
                "item {i} has label {} but only {} classes exist",
                item.label,
                class_names.len()
            )));
        }
        Ok(Dataset {
            items,
            class_names,
            metadata,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// A companion dataset with every cloud passed through
    /// [`decimate_density`]. Item count and labels are unchanged.
    pub fn decimated(&self, keep_every: usize, seed: u64) -> Result<Dataset> {
        let items = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| {
                Ok(LabeledCloud {
                    cloud: decimate_density(&it.cloud, keep_every, derive_seed(seed, &[i as u64]))?,
                    label: it.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut metadata = self.metadata.clone();
        metadata.insert("density".into(), format!("decimated_x{keep_every}"));
        metadata.insert("decimation_seed".into(), seed.to_string());
        Dataset::new(items, self.class_names.clone(), metadata)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    class_names: Vec<String>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    items: Vec<ManifestItem>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestItem {
    path: String,
    label: usize,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes `manifest.json` plus one CSV per cloud under `dir/clouds/`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let clouds = dir.join("clouds");
    fs::create_dir_all(&clouds).map_err(|e| AscnError::io(&clouds, e))?;
    let mut items = Vec::with_capacity(dataset.items.len());
    for (i, item) in dataset.items.iter().enumerate() {
        let rel = format!("clouds/{i:05}.csv");
        save_cloud(&item.cloud, &dir.join(&rel), CloudFormat::Csv)?;
        let mut metadata = BTreeMap::new();
        metadata.insert("points".to_string(), item.cloud.len().to_string());
        items.push(ManifestItem {
            path: rel,
            label: item.label,
            metadata,
        });
    }
    let manifest = Manifest {
        class_names: dataset.class_names.clone(),
        metadata: dataset.metadata.clone(),
        items,
    };
    let path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| AscnError::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| AscnError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| AscnError::parse(e.line(), format!("{}: {e}", path.display())))?;
    let items = manifest
        .items
        .iter()
        .map(|it| {
            let p = dir.join(&it.path);
            Ok(LabeledCloud {
                cloud: load_cloud(&p, CloudFormat::from_path(&p))?,
                label: it.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(items, manifest.class_names, manifest.metadata)
}
