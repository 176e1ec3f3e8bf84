use rand_distr::{Distribution, Normal};

use super::RepVector;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed;
use crate::tensorio::ImageBuffer;

/// Per-pixel feature channels, pixel-major (`data[p * channels + c]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMaps {
    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Feature maps where every pixel carries the same vector.
    pub fn uniform(height: usize, width: usize, values: &[f32]) -> Self {
        FeatureMaps {
            height,
            width,
            channels: values.len(),
            data: values.repeat(height * width),
        }
    }
}

/// Linear trunk stand-in: mean-pool square patches, then a fixed seeded
/// random projection to `d_r` units.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub channels: usize,
    pub projection: Matrix,
    pub seed: u64,
}

impl FeatureExtractor {
    pub fn new(
        height: usize,
        width: usize,
        patch: usize,
        channels: usize,
        d_r: usize,
        std: f64,
        seed: u64,
    ) -> Result<Self> {
        if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
            return Err(Error::Invalid(format!(
                "image {height}x{width} not divisible by patch {patch}"
            )));
        }
        let inputs = (height / patch) * (width / patch) * channels;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut rng = seed::rng(seed);
        let data = (0..d_r * inputs).map(|_| normal.sample(&mut rng)).collect();
        Ok(FeatureExtractor {
            height,
            width,
            patch,
            channels,
            projection: Matrix::from_vec(d_r, inputs, data)?,
            seed,
        })
    }

    pub fn d_r(&self) -> usize {
        self.projection.rows()
    }

    /// Patch means, laid out `[patch][channel]`.
    pub fn pool(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        if img.height != self.height || img.width != self.width {
            return Err(Error::dim("extractor image size", self.height * self.width, img.pixels()));
        }
        if img.channels != self.channels {
            return Err(Error::dim("extractor channels", self.channels, img.channels));
        }
        let (p, c) = (self.patch, self.channels);
        let (gh, gw) = (self.height / p, self.width / p);
        let mut pooled = vec![0.0; gh * gw * c];
        for y in 0..self.height {
            let row = &img.data[y * self.width * c..(y + 1) * self.width * c];
            let base = (y / p) * gw;
            for x in 0..self.width {
                let dst = &mut pooled[(base + x / p) * c..(base + x / p + 1) * c];
                for (d, s) in dst.iter_mut().zip(&row[x * c..(x + 1) * c]) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / (p * p) as f64;
        pooled.iter_mut().for_each(|v| *v *= inv);
        Ok(pooled)
    }

    pub fn extract(&self, img: &ImageBuffer) -> Result<RepVector> {
        let pooled = self.pool(img)?;
        Ok(RepVector(self.projection.matvec(&pooled)?))
    }
}
