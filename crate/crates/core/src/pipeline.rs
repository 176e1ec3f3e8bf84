//! `r → f(r) → image → mask → metrics`, plus the classifier's view of the
//! generated image.

use crate::error::{Error, Result};
use crate::linklearn::{apply_linking, LinkingModel};
use crate::segquant::{segment, segment_metrics, FewShotSegmenter, SegmentMetrics};
use crate::synthworld::{predict, ClassifierHead, LatentVector, RepVector, World};
use crate::tensorio::{ImageBuffer, LabelMaskBuffer};

#[derive(Clone, Debug)]
pub enum MaskSource {
    /// Masks straight from the renderer.
    GroundTruth,
    Segmenter(FewShotSegmenter),
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub world: World,
    pub link: LinkingModel,
    pub head: ClassifierHead,
    pub masks: MaskSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub w: LatentVector,
    pub image: ImageBuffer,
    pub mask: LabelMaskBuffer,
    pub metrics: SegmentMetrics,
    /// Representation re-extracted from the generated image.
    pub r_image: RepVector,
    /// Softmax of the head on `r_image`.
    pub probs: Vec<f64>,
}

impl Pipeline {
    pub fn new(world: World, link: LinkingModel, head: ClassifierHead, masks: MaskSource) -> Result<Self> {
        let cfg = world.config();
        if link.d_w() != cfg.d_w {
            return Err(Error::dim("linking output", cfg.d_w, link.d_w()));
        }
        if link.d_r() != cfg.d_r {
            return Err(Error::dim("linking input", cfg.d_r, link.d_r()));
        }
        if head.d_r() != cfg.d_r {
            return Err(Error::dim("head input", cfg.d_r, head.d_r()));
        }
        Ok(Pipeline { world, link, head, masks })
    }

    pub fn d_r(&self) -> usize {
        self.link.d_r()
    }

    pub fn evaluate_latent(&self, w: LatentVector) -> Result<Evaluation> {
        let rendered = self.world.render(&w)?;
        let mask = match &self.masks {
            MaskSource::GroundTruth => rendered.mask,
            MaskSource::Segmenter(seg) => segment(seg, &rendered.features)?,
        };
        let metrics = segment_metrics(&rendered.image, &mask)?;
        let r_image = self.world.extract(&rendered.image)?;
        let probs = predict(&self.head, &r_image)?;
        Ok(Evaluation {
            w,
            image: rendered.image,
            mask,
            metrics,
            r_image,
            probs,
        })
    }

    pub fn evaluate(&self, r: &[f64]) -> Result<Evaluation> {
        self.evaluate_latent(apply_linking(&self.link, r)?)
    }
}
