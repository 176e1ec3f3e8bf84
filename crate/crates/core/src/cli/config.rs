use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counterfact::CounterfactualConfig;
use crate::error::{Error, Result};
use crate::synthworld::RenderMode;
use crate::tensorio;
use crate::tracker::TrackerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSection {
    pub mode: RenderMode,
    pub classes: usize,
    pub per_class: usize,
    pub d_w: usize,
    pub d_r: usize,
    pub noise_std: f64,
    /// Samples per class stored with feature maps.
    pub features_per_class: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection {
            mode: RenderMode::Linear,
            classes: 5,
            per_class: 200,
            d_w: 16,
            d_r: 64,
            noise_std: 0.3,
            features_per_class: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkSection {
    pub ridge: f64,
    pub test_per_class: usize,
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection {
            ridge: crate::linklearn::DEFAULT_RIDGE,
            test_per_class: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareSection {
    pub k: usize,
    pub n_init: usize,
    pub per_class: usize,
    pub repetitions: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            k: 5,
            n_init: 20,
            per_class: 100,
            repetitions: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentSection {
    pub per_class: usize,
    pub held_out: usize,
}

impl Default for SegmentSection {
    fn default() -> Self {
        SegmentSection {
            per_class: 5,
            held_out: 20,
        }
    }
}

/// Rewire one unit so it drives a single latent coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedicateSpec {
    pub unit: usize,
    pub latent_dim: usize,
    /// Latent travel across the unit's full range.
    #[serde(default = "default_span")]
    pub span: f64,
}

fn default_span() -> f64 {
    6.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub seeds_per_class: usize,
    pub steps: usize,
    pub relevance_threshold: f64,
    pub clusters: usize,
    /// Empty means every unit.
    pub units: Vec<usize>,
    pub dedicate: Option<DedicateSpec>,
    pub montage_unit: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            seeds_per_class: 20,
            steps: crate::unitprobe::DEFAULT_STEPS,
            relevance_threshold: crate::unitprobe::RELEVANCE_THRESHOLD,
            clusters: 8,
            units: Vec::new(),
            dedicate: None,
            montage_unit: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub step: f64,
    pub max_steps: usize,
    pub record_stride: usize,
    pub seeds_per_class: usize,
    pub resample: usize,
    pub montage_frames: usize,
}

impl Default for CounterfactualSection {
    fn default() -> Self {
        let c = CounterfactualConfig::default();
        CounterfactualSection {
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            step: c.step,
            max_steps: c.max_steps,
            record_stride: c.record_stride,
            seeds_per_class: 2,
            resample: 20,
            montage_frames: 6,
        }
    }
}

impl CounterfactualSection {
    pub fn optimizer(&self, target: usize) -> CounterfactualConfig {
        CounterfactualConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            step: self.step,
            max_steps: self.max_steps,
            target,
            record_stride: self.record_stride,
            ..CounterfactualConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackSection {
    #[serde(flatten)]
    pub tracker: TrackerConfig,
    pub sample: usize,
    pub latent_dim: usize,
    pub delta: f64,
}

impl Default for TrackSection {
    fn default() -> Self {
        TrackSection {
            tracker: TrackerConfig::default(),
            sample: 0,
            latent_dim: 3,
            delta: 2.0,
        }
    }
}

/// Everything a run depends on. Loaded from `--config`, then overridden by
/// flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker count (0 = all cores). Not recorded: it never changes results.
    #[serde(skip_serializing)]
    pub threads: usize,
    pub world: WorldSection,
    pub link: LinkSection,
    pub compare: CompareSection,
    pub segment: SegmentSection,
    pub sweep: SweepSection,
    pub counterfactual: CounterfactualSection,
    pub track: TrackSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        tensorio::read_json(path)
    }
}

/// `"0-3,7"` → `[0, 1, 2, 3, 7]`.
pub fn parse_units(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Usage(format!("cannot parse unit list {spec:?} (expected e.g. 0-7,12)"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// `"unit:dim"` or `"unit:dim:span"`.
pub fn parse_dedicate(spec: &str) -> Result<DedicateSpec> {
    let bad = || Error::Usage(format!("cannot parse {spec:?} (expected unit:latent_dim[:span])"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(bad());
    }
    Ok(DedicateSpec {
        unit: parts[0].parse().map_err(|_| bad())?,
        latent_dim: parts[1].parse().map_err(|_| bad())?,
        span: match parts.get(2) {
            Some(s) => s.parse().map_err(|_| bad())?,
            None => default_span(),
        },
    })
}
