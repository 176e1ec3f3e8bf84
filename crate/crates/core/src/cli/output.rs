use std::path::{Component, Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::tensorio::{self, ImageBuffer, LabelMaskBuffer, MatrixFile};

#[derive(Clone, Debug, Serialize)]
pub struct Substitution {
    pub replaced: &'static str,
    pub by: &'static str,
}

pub const SUBSTITUTIONS: [Substitution; 5] = [
    Substitution {
        replaced: "StyleGAN-XL generator and ResNet-50 classifier",
        by: "procedural synthetic world with a linear feature trunk and softmax head",
    },
    Substitution {
        replaced: "t-SNE embedding of unit label vectors",
        by: "PCA, top two components",
    },
    Substitution {
        replaced: "PUMP dense correspondences",
        by: "grid block matching with normalized cross-correlation",
    },
    Substitution {
        replaced: "MoCo v2 perceptual similarity",
        by: "cosine distance in the representation space",
    },
    Substitution {
        replaced: "LPIPS",
        by: "pixel MSE plus segment-metric deltas",
    },
];

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    inputs: &'a [String],
    outputs: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a str>,
    substitutions: &'a [Substitution],
}

/// Output directory of one run; every file written through it is listed
/// in the run's `run.json`.
pub struct Outputs {
    pub dir: PathBuf,
    files: Vec<String>,
    inputs: Vec<String>,
    summary: Option<String>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Outputs {
            dir,
            files: Vec::new(),
            inputs: Vec::new(),
            summary: None,
        })
    }

    fn claim(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.dir.join(rel)
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(relative_to(path, &self.dir));
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let p = self.claim(rel);
        tensorio::write_json(&p, value)
    }

    /// The run's headline JSON, picked up by `report`.
    pub fn summary<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.summary = Some(rel.to_string());
        self.json(rel, value)
    }

    pub fn csv<S: AsRef<str>>(&mut self, rel: &str, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
        let p = self.claim(rel);
        tensorio::write_csv(&p, header, rows)
    }

    pub fn matrix(&mut self, rel: &str, m: &MatrixFile) -> Result<()> {
        let p = self.claim(rel);
        tensorio::write_matrix(&p, m)
    }

    pub fn image(&mut self, rel: &str, img: &ImageBuffer) -> Result<()> {
        let p = self.claim(rel);
        tensorio::write_image(&p, img)
    }

    pub fn mask(&mut self, rel: &str, m: &LabelMaskBuffer) -> Result<()> {
        let p = self.claim(rel);
        tensorio::write_mask(&p, m)
    }

    /// Register files written by a helper that takes a directory.
    pub fn external(&mut self, rels: &[String]) {
        self.files.extend(rels.iter().cloned());
    }

    pub fn finish(mut self, command: &str, config: &RunConfig) -> Result<PathBuf> {
        self.files.sort();
        self.files.dedup();
        let man = RunManifest {
            tool: "reprlink",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: &self.inputs,
            outputs: &self.files,
            summary: self.summary.as_deref(),
            substitutions: &SUBSTITUTIONS,
        };
        let p = self.dir.join("run.json");
        tensorio::write_json(&p, &man)?;
        Ok(self.dir)
    }
}

fn absolute(p: &Path) -> PathBuf {
    let p = std::fs::canonicalize(p).unwrap_or_else(|_| {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    });
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

/// `path` relative to `base`, with `/` separators.
pub fn relative_to(path: &Path, base: &Path) -> String {
    let (p, b) = (absolute(path), absolute(base));
    let pc: Vec<_> = p.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut parts: Vec<String> = vec!["..".to_string(); bc.len() - common];
    parts.extend(pc[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    if parts.is_empty() {
        ".".into()
    } else {
        parts.join("/")
    }
}
