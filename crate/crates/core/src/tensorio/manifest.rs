use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::matrix::read_matrix_header;
use crate::error::{Error, Result};
use crate::synthworld::{LatentMapping, WorldConfig};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Linear,
    Shapes,
    External,
}

/// One (class, w, r, image, mask) record; paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub class: usize,
    pub latent: String,
    pub representation: String,
    pub image: String,
    pub mask: String,
    /// Optional per-pixel feature maps (RMAT, `pixels × channels`), needed
    /// for segmenter fitting on external data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
}

/// Classifier head stored alongside a dataset: RMAT weights (`C × d_r`)
/// and an RMAT bias row (`1 × C`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadFiles {
    pub weights: String,
    pub bias: String,
    #[serde(default)]
    pub train_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub mode: DatasetMode,
    pub d_w: usize,
    pub d_r: usize,
    pub classes: Vec<String>,
    #[serde(default = "default_label_count")]
    pub label_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latent_mapping: Vec<LatentMapping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadFiles>,
    pub samples: Vec<SampleEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_label_count() -> usize {
    9
}

impl DatasetManifest {
    pub fn new(mode: DatasetMode, d_w: usize, d_r: usize, classes: Vec<String>) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            mode,
            d_w,
            d_r,
            classes,
            label_count: default_label_count(),
            world: None,
            latent_mapping: Vec::new(),
            head: None,
            samples: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::format(
                self.base_dir.join("manifest.json"),
                format!("manifest version {} (expected {MANIFEST_VERSION})", self.version),
            ));
        }
        fn files(s: &SampleEntry) -> Vec<&String> {
            let mut v = vec![&s.latent, &s.representation, &s.image, &s.mask];
            v.extend(s.features.as_ref());
            v
        }
        let mut head_files = Vec::new();
        if let Some(h) = &self.head {
            head_files.push(&h.weights);
            head_files.push(&h.bias);
        }
        for rel in self.samples.iter().flat_map(files).chain(head_files) {
            let p = self.resolve(rel);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
        }
        for s in &self.samples {
            if s.class >= self.classes.len() {
                return Err(Error::Invalid(format!(
                    "sample class {} but only {} classes",
                    s.class,
                    self.classes.len()
                )));
            }
            let (_, dw) = read_matrix_header(&self.resolve(&s.latent))?;
            if dw != self.d_w {
                return Err(Error::dim("manifest latent dimension", self.d_w, dw));
            }
            let (_, dr) = read_matrix_header(&self.resolve(&s.representation))?;
            if dr != self.d_r {
                return Err(Error::dim("manifest representation dimension", self.d_r, dr));
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, man: &DatasetManifest) -> Result<()> {
    super::write_json(path, man)
}

/// Parse and validate: every referenced file must exist and every RMAT
/// header must agree with the declared `d_w`/`d_r`.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut man: DatasetManifest = super::read_json(path)?;
    man.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    man.validate()?;
    Ok(man)
}
