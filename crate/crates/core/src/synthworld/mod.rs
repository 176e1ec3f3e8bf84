//! Deterministic synthetic stand-in for a generator and a classifier trunk.
//!
//! A [`World`] turns a latent vector `w` into an image, a ground-truth part
//! mask and per-pixel feature maps, and turns images into representation
//! vectors through a fixed linear extractor. Two rendering modes exist:
//! `linear`, whose image is exactly affine in `w` (as long as nothing
//! clips), and `shapes`, a nonlinear cartoon quadruped with nine labelled
//! parts.

mod features;
mod head;
mod render;

use std::ops::{Deref, DerefMut};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::seed;
use crate::tensorio::{ImageBuffer, LabelMaskBuffer};

pub use features::{FeatureExtractor, FeatureMaps};
pub use head::{argmax, predict, softmax, train_head, ClassifierHead, HeadTraining};
pub use render::{latent_mapping, LatentMapping, Part, LABEL_COUNT, PART_NAMES, SIGNATURE_CHANNELS};

macro_rules! vector_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name(v)
            }
        }

        impl $name {
            pub fn zeros(n: usize) -> Self {
                $name(vec![0.0; n])
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }
    };
}

vector_newtype!(
    /// Generator latent `w`.
    LatentVector
);
vector_newtype!(
    /// Classifier penultimate-layer activation `r`.
    RepVector
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Linear,
    Shapes,
}

impl RenderMode {
    pub fn channels(self) -> usize {
        match self {
            RenderMode::Linear => 1,
            RenderMode::Shapes => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub mode: RenderMode,
    pub seed: u64,
    pub n_classes: usize,
    pub d_w: usize,
    pub d_r: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub feature_channels: usize,
    /// Per-dimension std of the latent noise `z`.
    pub noise_std: f64,
    /// Std of the frozen class embeddings.
    pub embedding_std: f64,
    /// Std of the extractor projection entries.
    pub projection_std: f64,
    /// Peak amplitude of each linear-mode basis image.
    pub linear_amplitude: f64,
    /// Std of the fixed per-pixel noise added to feature maps.
    pub feature_noise: f64,
}

impl WorldConfig {
    pub fn new(mode: RenderMode, seed: u64) -> Self {
        WorldConfig {
            mode,
            seed,
            n_classes: 5,
            d_w: 16,
            d_r: 64,
            height: 128,
            width: 128,
            patch: 8,
            feature_channels: 8,
            noise_std: 0.3,
            embedding_std: 1.0,
            projection_std: match mode {
                RenderMode::Linear => 1.0,
                RenderMode::Shapes => 0.1,
            },
            linear_amplitude: 0.015,
            feature_noise: 0.15,
        }
    }

    pub fn linear(seed: u64) -> Self {
        Self::new(RenderMode::Linear, seed)
    }

    pub fn shapes(seed: u64) -> Self {
        Self::new(RenderMode::Shapes, seed)
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Invalid("a world needs at least 2 classes".into()));
        }
        if self.mode == RenderMode::Shapes && self.d_w < render::SHAPES_LATENT_DIMS {
            return Err(Error::Invalid(format!(
                "shapes mode needs d_w >= {}, got {}",
                render::SHAPES_LATENT_DIMS,
                self.d_w
            )));
        }
        if self.d_w == 0 || self.d_r == 0 {
            return Err(Error::Invalid("d_w and d_r must be positive".into()));
        }
        if self.feature_channels < SIGNATURE_CHANNELS + 2 {
            return Err(Error::Invalid(format!(
                "need at least {} feature channels",
                SIGNATURE_CHANNELS + 2
            )));
        }
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::Invalid(format!(
                "image {}x{} not divisible by patch size {}",
                self.height, self.width, self.patch
            )));
        }
        if !(self.noise_std >= 0.0 && self.embedding_std >= 0.0) {
            return Err(Error::Invalid("standard deviations must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Output of one render.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub image: ImageBuffer,
    pub mask: LabelMaskBuffer,
    pub features: FeatureMaps,
    /// Number of image values clipped into [0, 1].
    pub clipped: usize,
}

/// A seeded synthetic world: class embeddings, renderer and extractor.
#[derive(Clone, Debug)]
pub struct World {
    cfg: WorldConfig,
    embeddings: Vec<LatentVector>,
    extractor: FeatureExtractor,
    basis: Vec<Vec<f64>>,
    feature_noise: Vec<f32>,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        cfg.validate()?;
        let normal = Normal::new(0.0, cfg.embedding_std).map_err(|e| Error::Invalid(e.to_string()))?;
        let embeddings = (0..cfg.n_classes)
            .map(|c| {
                let mut rng = seed::derive_rng(cfg.seed, "class-embedding", c as u64);
                LatentVector((0..cfg.d_w).map(|_| normal.sample(&mut rng)).collect())
            })
            .collect();
        let extractor = FeatureExtractor::new(
            cfg.height,
            cfg.width,
            cfg.patch,
            cfg.mode.channels(),
            cfg.d_r,
            cfg.projection_std,
            seed::derive(cfg.seed, "extractor", 0),
        )?;
        let basis = match cfg.mode {
            RenderMode::Linear => render::linear_basis(&cfg),
            RenderMode::Shapes => Vec::new(),
        };
        let feature_noise = render::feature_noise_table(&cfg);
        Ok(World {
            cfg,
            embeddings,
            extractor,
            basis,
            feature_noise,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn mode(&self) -> RenderMode {
        self.cfg.mode
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn class_embedding(&self, class_id: usize) -> Result<&LatentVector> {
        self.embeddings.get(class_id).ok_or_else(|| {
            Error::Invalid(format!(
                "class {class_id} out of range (world has {} classes)",
                self.cfg.n_classes
            ))
        })
    }

    /// `w = c_class + z`, `z ~ N(0, noise_std²)` drawn from `seed`.
    pub fn sample_latent(&self, class_id: usize, seed: u64) -> Result<LatentVector> {
        let c = self.class_embedding(class_id)?;
        let mut rng = seed::rng(seed);
        let std = self.cfg.noise_std;
        if std == 0.0 {
            return Ok(c.clone());
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(LatentVector(
            c.iter().map(|ci| ci + normal.sample(&mut rng)).collect(),
        ))
    }

    /// Seed of the `index`-th latent of `class_id` in stream `tag`.
    pub fn latent_seed(&self, tag: &str, class_id: usize, index: usize) -> u64 {
        seed::derive(
            seed::derive(self.cfg.seed, tag, class_id as u64),
            "sample",
            index as u64,
        )
    }

    pub fn render(&self, w: &LatentVector) -> Result<Rendered> {
        if w.len() != self.cfg.d_w {
            return Err(Error::dim("latent", self.cfg.d_w, w.len()));
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("latent vector contains NaN/Inf".into()));
        }
        match self.cfg.mode {
            RenderMode::Linear => Ok(render::render_linear(&self.cfg, &self.basis, &self.feature_noise, w)),
            RenderMode::Shapes => Ok(render::render_shapes(&self.cfg, &self.feature_noise, w)),
        }
    }

    pub fn extract(&self, img: &ImageBuffer) -> Result<RepVector> {
        self.extractor.extract(img)
    }

    /// `render` followed by `extract`.
    pub fn represent(&self, w: &LatentVector) -> Result<RepVector> {
        self.extract(&self.render(w)?.image)
    }

    /// `per_class` latents per class from stream `tag`, with their
    /// representations; class-major order.
    pub fn sample_pairs(&self, per_class: usize, tag: &str, exec: Execution) -> Result<PairedSamples> {
        let n = self.cfg.n_classes * per_class;
        let pairs = par::try_map_range(exec, n, |i| -> Result<(LatentVector, RepVector)> {
            let (c, k) = (i / per_class, i % per_class);
            let w = self.sample_latent(c, self.latent_seed(tag, c, k))?;
            let r = self.represent(&w)?;
            Ok((w, r))
        })?;
        let (latents, reps) = pairs.into_iter().unzip();
        Ok(PairedSamples {
            latents,
            reps,
            labels: (0..n).map(|i| i / per_class).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSamples {
    pub latents: Vec<LatentVector>,
    pub reps: Vec<RepVector>,
    pub labels: Vec<usize>,
}

impl PairedSamples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("class-{c}")).collect()
}
