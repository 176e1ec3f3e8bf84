//! Supervised concept quantification: few-shot segmentation from feature
//! maps, per-label segment metrics, metric deltas and label sparsity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::par::{self, Execution};
use crate::synthworld::FeatureMaps;
use crate::tensorio::{self, ImageBuffer, LabelMaskBuffer, MatrixFile};

pub const ENTROPY_BINS: usize = 64;

/// Nearest class mean over standardized feature channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotSegmenter {
    pub label_count: usize,
    pub channels: usize,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    /// `label_count × channels`, standardized coordinates.
    #[serde(skip)]
    pub means: Matrix,
}

pub fn fit_fewshot_segmenter(examples: &[(&FeatureMaps, &LabelMaskBuffer)], label_count: usize) -> Result<FewShotSegmenter> {
    let (first, _) = examples
        .first()
        .ok_or_else(|| Error::Invalid("few-shot segmenter needs at least one labeled example".into()))?;
    let f = first.channels;
    let mut n = 0usize;
    let mut sum = vec![0.0; f];
    let mut sum_sq = vec![0.0; f];
    for (i, (fm, mask)) in examples.iter().enumerate() {
        if fm.channels != f {
            return Err(Error::dim("feature channels", f, fm.channels));
        }
        if fm.pixels() != mask.labels.len() {
            return Err(Error::dim("feature/mask pixels", fm.pixels(), mask.labels.len()));
        }
        if mask.label_count != label_count {
            return Err(Error::Invalid(format!(
                "example {i} has {} labels, expected {label_count}",
                mask.label_count
            )));
        }
        for p in 0..fm.pixels() {
            for (c, &v) in fm.pixel(p).iter().enumerate() {
                sum[c] += v as f64;
                sum_sq[c] += (v as f64) * (v as f64);
            }
        }
        n += fm.pixels();
    }
    let channel_mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let channel_std: Vec<f64> = sum_sq
        .iter()
        .zip(&channel_mean)
        .map(|(s, m)| {
            let var = (s / n as f64 - m * m).max(0.0);
            if var > 1e-18 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let mut means = Matrix::zeros(label_count, f);
    let mut counts = vec![0usize; label_count];
    for (fm, mask) in examples {
        for (p, &l) in mask.labels.iter().enumerate() {
            let row = means.row_mut(l as usize);
            for (c, &v) in fm.pixel(p).iter().enumerate() {
                row[c] += (v as f64 - channel_mean[c]) / channel_std[c];
            }
            counts[l as usize] += 1;
        }
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Invalid(format!("label {missing} absent from all training pixels")));
    }
    for (l, &cnt) in counts.iter().enumerate() {
        means.row_mut(l).iter_mut().for_each(|v| *v /= cnt as f64);
    }
    Ok(FewShotSegmenter {
        label_count,
        channels: f,
        channel_mean,
        channel_std,
        means,
    })
}

impl FewShotSegmenter {
    pub fn classify(&self, x: &[f32]) -> u8 {
        let z: Vec<f64> = x
            .iter()
            .zip(self.channel_mean.iter().zip(&self.channel_std))
            .map(|(&v, (m, s))| (v as f64 - m) / s)
            .collect();
        let mut best = (0u8, f64::INFINITY);
        for l in 0..self.label_count {
            let d = crate::linalg::sq_dist(&z, self.means.row(l));
            if d < best.1 {
                best = (l as u8, d);
            }
        }
        best.0
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        tensorio::write_matrix(&dir.join(format!("{stem}.rmat")), &MatrixFile::from_matrix(&self.means)?)?;
        tensorio::write_json(&dir.join(format!("{stem}.json")), self)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let mut seg: FewShotSegmenter = tensorio::read_json(&dir.join(format!("{stem}.json")))?;
        let means = tensorio::read_matrix(&dir.join(format!("{stem}.rmat")))?.to_matrix();
        if means.rows() != seg.label_count || means.cols() != seg.channels {
            return Err(Error::dim("segmenter means", seg.label_count * seg.channels, means.rows() * means.cols()));
        }
        seg.means = means;
        Ok(seg)
    }
}

/// Per-pixel nearest mean; ties go to the lowest label.
pub fn segment(seg: &FewShotSegmenter, fm: &FeatureMaps) -> Result<LabelMaskBuffer> {
    if fm.channels != seg.channels {
        return Err(Error::dim("feature channels", seg.channels, fm.channels));
    }
    let labels = (0..fm.pixels()).map(|p| seg.classify(fm.pixel(p))).collect();
    LabelMaskBuffer::new(fm.height, fm.width, seg.label_count, labels)
}

/// Per-label intersection over union accumulated over a set of masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// `None` for labels absent from both prediction and truth.
    pub per_label: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn mean_iou(pred: &[LabelMaskBuffer], truth: &[LabelMaskBuffer]) -> Result<IouReport> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::dim("IoU mask pairs", truth.len(), pred.len()));
    }
    let l = truth[0].label_count;
    let mut inter = vec![0usize; l];
    let mut union = vec![0usize; l];
    for (p, t) in pred.iter().zip(truth) {
        if p.labels.len() != t.labels.len() || p.label_count != l || t.label_count != l {
            return Err(Error::dim("IoU mask", t.labels.len(), p.labels.len()));
        }
        for (&a, &b) in p.labels.iter().zip(&t.labels) {
            if a == b {
                inter[a as usize] += 1;
                union[a as usize] += 1;
            } else {
                union[a as usize] += 1;
                union[b as usize] += 1;
            }
        }
    }
    let per_label: Vec<Option<f64>> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    let present: Vec<f64> = per_label.iter().flatten().copied().collect();
    Ok(IouReport {
        mean: present.iter().sum::<f64>() / present.len() as f64,
        per_label,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Area,
    Luminance,
    Entropy,
    Eccentricity,
    Angle,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Area,
        Metric::Luminance,
        Metric::Entropy,
        Metric::Eccentricity,
        Metric::Angle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Area => "area",
            Metric::Luminance => "luminance",
            Metric::Entropy => "entropy",
            Metric::Eccentricity => "eccentricity",
            Metric::Angle => "angle",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub area: Vec<f64>,
    pub luminance: Vec<f64>,
    pub entropy: Vec<f64>,
    pub eccentricity: Vec<f64>,
    /// Degrees in [-90, 90), from the image x-axis, counterclockwise.
    pub angle: Vec<f64>,
    pub present: Vec<bool>,
}

impl SegmentMetrics {
    pub fn label_count(&self) -> usize {
        self.present.len()
    }

    pub fn get(&self, m: Metric) -> &[f64] {
        match m {
            Metric::Area => &self.area,
            Metric::Luminance => &self.luminance,
            Metric::Entropy => &self.entropy,
            Metric::Eccentricity => &self.eccentricity,
            Metric::Angle => &self.angle,
        }
    }

    /// `(metric, label, value)` in (metric, label) order.
    pub fn rows(&self) -> Vec<(Metric, usize, f64)> {
        Metric::ALL
            .iter()
            .flat_map(|&m| self.get(m).iter().enumerate().map(move |(l, &v)| (m, l, v)))
            .collect()
    }
}

fn wrap_angle(deg: f64) -> f64 {
    let a = (deg + 90.0).rem_euclid(180.0) - 90.0;
    if a >= 90.0 { a - 180.0 } else { a }
}

/// Eccentricity and orientation of a point set from second central moments,
/// with `y` pointing up.
pub fn ellipse_moments(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (0.0, 0.0);
    }
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        m20 += dx * dx;
        m02 += dy * dy;
        m11 += dx * dy;
    }
    m20 /= n;
    m02 /= n;
    m11 /= n;
    let half_tr = 0.5 * (m20 + m02);
    let disc = (0.25 * (m20 - m02).powi(2) + m11 * m11).sqrt();
    let (l1, l2) = (half_tr + disc, (half_tr - disc).max(0.0));
    let ecc = if l1 > 0.0 { (1.0 - l2 / l1).clamp(0.0, 1.0).sqrt() } else { 0.0 };
    let angle = wrap_angle(0.5 * (2.0 * m11).atan2(m20 - m02).to_degrees());
    (ecc, angle)
}

fn shannon_bits(hist: &[usize], total: usize) -> f64 {
    let t = total as f64;
    let h: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

pub fn segment_metrics(img: &ImageBuffer, mask: &LabelMaskBuffer) -> Result<SegmentMetrics> {
    if img.height != mask.height || img.width != mask.width {
        return Err(Error::dim("image/mask pixels", img.pixels(), mask.labels.len()));
    }
    let l = mask.label_count;
    let total = img.pixels();
    let mut count = vec![0usize; l];
    let mut luma_sum = vec![0.0; l];
    let mut hist = vec![vec![0usize; ENTROPY_BINS]; l];
    let mut points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); l];
    for (p, &lab) in mask.labels.iter().enumerate() {
        let k = lab as usize;
        let y = img.luma(p);
        count[k] += 1;
        luma_sum[k] += y;
        hist[k][((y * ENTROPY_BINS as f64) as usize).min(ENTROPY_BINS - 1)] += 1;
        points[k].push(((p % img.width) as f64, -((p / img.width) as f64)));
    }
    let mut m = SegmentMetrics {
        area: vec![0.0; l],
        luminance: vec![0.0; l],
        entropy: vec![0.0; l],
        eccentricity: vec![0.0; l],
        angle: vec![0.0; l],
        present: vec![false; l],
    };
    for k in 0..l {
        if count[k] == 0 {
            continue;
        }
        m.present[k] = true;
        m.area[k] = count[k] as f64 / total as f64;
        m.luminance[k] = luma_sum[k] / count[k] as f64;
        m.entropy[k] = shannon_bits(&hist[k], count[k]);
        let (e, a) = ellipse_moments(&points[k]);
        m.eccentricity[k] = e;
        m.angle[k] = a;
    }
    Ok(m)
}

pub fn batch_metrics(exec: Execution, pairs: &[(ImageBuffer, LabelMaskBuffer)]) -> Result<Vec<SegmentMetrics>> {
    par::try_map_range(exec, pairs.len(), |i| segment_metrics(&pairs[i].0, &pairs[i].1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaScope {
    One(Metric),
    All,
}

impl DeltaScope {
    pub fn metrics(self) -> Vec<Metric> {
        match self {
            DeltaScope::One(m) => vec![m],
            DeltaScope::All => Metric::ALL.to_vec(),
        }
    }
}

/// Perturbed minus original, ordered by (metric, label).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub scope: DeltaScope,
    pub values: Vec<f64>,
    /// Entries where the label is absent on either side.
    pub absent: Vec<bool>,
    pub reference_id: Option<String>,
    pub perturbed_id: Option<String>,
}

impl MetricDelta {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn with_ids(mut self, reference: impl Into<String>, perturbed: impl Into<String>) -> Self {
        self.reference_id = Some(reference.into());
        self.perturbed_id = Some(perturbed.into());
        self
    }

    pub fn sparsity(&self) -> Result<Sparsity> {
        hoyer_sparsity(&self.values)
    }
}

pub fn metric_delta(orig: &SegmentMetrics, pert: &SegmentMetrics, scope: DeltaScope) -> Result<MetricDelta> {
    if orig.label_count() != pert.label_count() {
        return Err(Error::Invalid(format!(
            "label sets differ: {} vs {} labels",
            orig.label_count(),
            pert.label_count()
        )));
    }
    let mut values = Vec::new();
    let mut absent = Vec::new();
    for m in scope.metrics() {
        for (l, (a, b)) in orig.get(m).iter().zip(pert.get(m)).enumerate() {
            let d = if m == Metric::Angle { wrap_angle(b - a) } else { b - a };
            values.push(d);
            absent.push(!(orig.present[l] && pert.present[l]));
        }
    }
    Ok(MetricDelta {
        scope,
        values,
        absent,
        reference_id: None,
        perturbed_id: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sparsity {
    pub value: f64,
    /// Zero input vector; `value` is 0 by convention.
    pub degenerate: bool,
}

/// `s = (√k − ‖x‖₁/‖x‖₂) / (√k − 1)` on `|x|`.
pub fn hoyer_sparsity(x: &[f64]) -> Result<Sparsity> {
    let k = x.len();
    if k < 2 {
        return Err(Error::Invalid(format!("sparsity needs k >= 2, got {k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sparsity input contains NaN/Inf".into()));
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok(Sparsity { value: 0.0, degenerate: true });
    }
    // rescaling by the peak keeps one-hot and uniform inputs exact
    let l1: f64 = x.iter().map(|v| v.abs() / peak).sum();
    let l2: f64 = x.iter().map(|v| (v / peak).powi(2)).sum::<f64>().sqrt();
    let rk = (k as f64).sqrt();
    Ok(Sparsity {
        value: ((rk - l1 / l2) / (rk - 1.0)).clamp(0.0, 1.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn mask_from(h: usize, w: usize, f: impl Fn(f64, f64) -> bool) -> LabelMaskBuffer {
        // f receives (x, y) with y up, origin at the frame center
        let labels = (0..h * w)
            .map(|p| {
                let x = (p % w) as f64 - (w as f64 - 1.0) / 2.0;
                let y = (h as f64 - 1.0) / 2.0 - (p / w) as f64;
                f(x, y) as u8
            })
            .collect();
        LabelMaskBuffer::new(h, w, 2, labels).unwrap()
    }

    fn ellipse(a: f64, b: f64, theta_deg: f64) -> LabelMaskBuffer {
        let (s, c) = theta_deg.to_radians().sin_cos();
        mask_from(128, 128, |x, y| {
            let u = x * c + y * s;
            let v = -x * s + y * c;
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        })
    }

    fn gray(h: usize, w: usize, v: f64) -> ImageBuffer {
        ImageBuffer::filled(h, w, 1, v).unwrap()
    }

    #[test]
    fn constant_full_frame() {
        let mask = LabelMaskBuffer::new(16, 16, 9, vec![0; 256]).unwrap();
        let m = segment_metrics(&gray(16, 16, 0.5), &mask).unwrap();
        assert_eq!(m.area[0], 1.0);
        assert_eq!(m.luminance[0], 0.5);
        assert_eq!(m.entropy[0], 0.0);
        assert!(m.present[0] && !m.present[1]);
        assert_eq!(m.area[4], 0.0);
    }

    #[test]
    fn disk_is_round() {
        let m = segment_metrics(&gray(128, 128, 0.3), &mask_from(128, 128, |x, y| x * x + y * y <= 900.0)).unwrap();
        assert!(m.eccentricity[1] < 0.05, "{}", m.eccentricity[1]);
    }

    #[test]
    fn two_to_one_ellipse() {
        let m = segment_metrics(&gray(128, 128, 0.3), &ellipse(40.0, 20.0, 0.0)).unwrap();
        assert!((m.eccentricity[1] - 3f64.sqrt() / 2.0).abs() < 0.02, "{}", m.eccentricity[1]);
        assert!(m.angle[1].abs() < 2.0, "{}", m.angle[1]);
    }

    #[test]
    fn angle_follows_rotation() {
        for theta in [-80.0, -45.0, -10.0, 15.0, 30.0, 60.0, 89.0] {
            let m = segment_metrics(&gray(128, 128, 0.3), &ellipse(40.0, 20.0, theta)).unwrap();
            let err = wrap_angle(m.angle[1] - theta).abs();
            assert!(err < 2.0, "theta {theta}: {}", m.angle[1]);
            assert!((m.eccentricity[1] - 3f64.sqrt() / 2.0).abs() < 0.02);
            assert!((-90.0..90.0).contains(&m.angle[1]));
        }
    }

    #[test]
    fn entropy_of_two_level_segment_is_one_bit() {
        let data = (0..256).map(|i| if i % 2 == 0 { 0.1 } else { 0.9 }).collect();
        let img = ImageBuffer::new(16, 16, 1, data).unwrap();
        let m = segment_metrics(&img, &LabelMaskBuffer::new(16, 16, 9, vec![3; 256]).unwrap()).unwrap();
        assert!((m.entropy[3] - 1.0).abs() < 1e-12);
        assert!((m.luminance[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let mask = LabelMaskBuffer::new(8, 8, 9, vec![0; 64]).unwrap();
        assert!(segment_metrics(&gray(16, 16, 0.5), &mask).is_err());
    }

    #[test]
    fn delta_identity_and_single_change() {
        let mask = ellipse(30.0, 10.0, 20.0);
        let a = segment_metrics(&gray(128, 128, 0.4), &mask).unwrap();
        let d = metric_delta(&a, &a, DeltaScope::All).unwrap();
        assert_eq!(d.k(), 10);
        assert!(d.values.iter().all(|&v| v == 0.0));
        let mut b = a.clone();
        b.area[1] += 0.01;
        let d = metric_delta(&a, &b, DeltaScope::One(Metric::Area)).unwrap();
        assert_eq!(d.values.iter().filter(|v| **v != 0.0).count(), 1);
    }

    fn nine_label_metrics(seed: u64) -> SegmentMetrics {
        let mut rng = seed::rng(seed);
        let mut v = || (0..9).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
        SegmentMetrics {
            area: v(),
            luminance: v(),
            entropy: v(),
            eccentricity: v(),
            angle: v().iter().map(|a| a * 180.0 - 90.0).collect(),
            present: vec![true; 9],
        }
    }

    #[test]
    fn all_metrics_has_45_entries() {
        let a = nine_label_metrics(1);
        assert_eq!(metric_delta(&a, &a, DeltaScope::All).unwrap().k(), 45);
        assert_eq!(metric_delta(&a, &a, DeltaScope::One(Metric::Entropy)).unwrap().k(), 9);
    }

    #[test]
    fn delta_label_mismatch() {
        let a = nine_label_metrics(1);
        let mut b = a.clone();
        b.present.pop();
        assert!(metric_delta(&a, &b, DeltaScope::All).is_err());
    }

    #[test]
    fn angle_deltas_wrap() {
        let mut a = nine_label_metrics(2);
        let mut b = a.clone();
        a.angle[0] = 85.0;
        b.angle[0] = -85.0;
        let d = metric_delta(&a, &b, DeltaScope::One(Metric::Angle)).unwrap();
        assert!((d.values[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn hoyer_fixed_points() {
        let mut one_hot = vec![0.0; 9];
        one_hot[4] = 2.5;
        assert_eq!(hoyer_sparsity(&one_hot).unwrap().value, 1.0);
        assert_eq!(hoyer_sparsity(&[0.37; 9]).unwrap().value, 0.0);
        let mut x = vec![0.0; 9];
        x[0] = 3.0;
        x[1] = 4.0;
        assert!((hoyer_sparsity(&x).unwrap().value - 0.8).abs() < 1e-12);
        let z = hoyer_sparsity(&[0.0; 9]).unwrap();
        assert!(z.degenerate && z.value == 0.0);
        assert!(hoyer_sparsity(&[1.0]).is_err());
    }

    fn one_hot_features(mask: &LabelMaskBuffer, noise: f32, seed: u64) -> FeatureMaps {
        let mut rng = seed::rng(seed);
        let l = mask.label_count;
        let mut data = Vec::with_capacity(mask.labels.len() * l);
        for &lab in &mask.labels {
            for c in 0..l {
                let v = if c == lab as usize { 1.0 } else { 0.0 };
                data.push(v + noise * (rng.random::<f32>() - 0.5));
            }
        }
        FeatureMaps {
            height: mask.height,
            width: mask.width,
            channels: l,
            data,
        }
    }

    fn striped_mask(seed: u64) -> LabelMaskBuffer {
        let off = (seed % 5) as usize;
        let labels = (0..32 * 32).map(|p| (((p % 32) + off) / 4 % 3) as u8).collect();
        LabelMaskBuffer::new(32, 32, 3, labels).unwrap()
    }

    #[test]
    fn one_hot_training_accuracy_is_perfect() {
        let masks: Vec<_> = (0..5).map(striped_mask).collect();
        let fms: Vec<_> = masks.iter().map(|m| one_hot_features(m, 0.0, 0)).collect();
        let ex: Vec<_> = fms.iter().zip(&masks).collect();
        let seg = fit_fewshot_segmenter(&ex, 3).unwrap();
        for (fm, m) in ex {
            assert_eq!(segment(&seg, fm).unwrap(), *m);
        }
    }

    #[test]
    fn aligned_noisy_features_recover_truth() {
        let masks: Vec<_> = (0..5).map(striped_mask).collect();
        let fms: Vec<_> = masks.iter().enumerate().map(|(i, m)| one_hot_features(m, 0.6, i as u64)).collect();
        let seg = fit_fewshot_segmenter(&fms.iter().zip(&masks).collect::<Vec<_>>(), 3).unwrap();
        let probe = striped_mask(7);
        let pred = segment(&seg, &one_hot_features(&probe, 0.6, 99)).unwrap();
        assert!(pred.agreement(&probe) >= 0.99);
        let iou = mean_iou(&[pred.clone()], &[probe]).unwrap();
        assert!(iou.mean > 0.97);
        // determinism
        assert_eq!(pred, segment(&seg, &one_hot_features(&striped_mask(7), 0.6, 99)).unwrap());
    }

    #[test]
    fn uniform_map_at_label_mean() {
        let masks: Vec<_> = (0..3).map(striped_mask).collect();
        let fms: Vec<_> = masks.iter().enumerate().map(|(i, m)| one_hot_features(m, 0.3, i as u64)).collect();
        let seg = fit_fewshot_segmenter(&fms.iter().zip(&masks).collect::<Vec<_>>(), 3).unwrap();
        let raw: Vec<f32> = (0..3)
            .map(|c| (seg.means[(2, c)] * seg.channel_std[c] + seg.channel_mean[c]) as f32)
            .collect();
        let out = segment(&seg, &FeatureMaps::uniform(8, 8, &raw)).unwrap();
        assert!(out.labels.iter().all(|&l| l == 2));
    }

    #[test]
    fn missing_label_is_error() {
        let m = LabelMaskBuffer::new(8, 8, 3, vec![0; 64]).unwrap();
        let f = one_hot_features(&m, 0.0, 0);
        assert!(fit_fewshot_segmenter(&[(&f, &m)], 3).is_err());
    }

    #[test]
    fn channel_mismatch() {
        let m = striped_mask(0);
        let f = one_hot_features(&m, 0.0, 0);
        let seg = fit_fewshot_segmenter(&[(&f, &m)], 3).unwrap();
        assert!(segment(&seg, &FeatureMaps::uniform(32, 32, &[0.0; 4])).is_err());
    }

    #[test]
    fn save_and_load() {
        let m = striped_mask(0);
        let f = one_hot_features(&m, 0.2, 0);
        let seg = fit_fewshot_segmenter(&[(&f, &m)], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        seg.save(dir.path(), "seg").unwrap();
        let back = FewShotSegmenter::load(dir.path(), "seg").unwrap();
        assert_eq!(segment(&back, &f).unwrap(), segment(&seg, &f).unwrap());
    }

    proptest! {
        #[test]
        fn hoyer_scale_invariant(x in proptest::collection::vec(-10.0f64..10.0, 9), c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3]) {
            prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
            let a = hoyer_sparsity(&x).unwrap().value;
            let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
            let b = hoyer_sparsity(&scaled).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn delta_antisymmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
            let a = nine_label_metrics(s1);
            let b = nine_label_metrics(s2);
            let d1 = metric_delta(&a, &b, DeltaScope::All).unwrap();
            let d2 = metric_delta(&b, &a, DeltaScope::All).unwrap();
            for (x, y) in d1.values.iter().zip(&d2.values) {
                // the wrap boundary at ±90 maps both directions to -90
                prop_assert!((x + y).abs() < 1e-9 || (x.abs() - 90.0).abs() < 1e-9);
            }
        }

        #[test]
        fn areas_sum_to_one(seed in any::<u64>()) {
            let mut rng = seed::rng(seed);
            let labels = (0..24 * 20).map(|_| rng.random_range(0..9u8)).collect();
            let mask = LabelMaskBuffer::new(20, 24, 9, labels).unwrap();
            let m = segment_metrics(&gray(20, 24, 0.2), &mask).unwrap();
            prop_assert!((m.area.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(m.eccentricity.iter().all(|e| (0.0..=1.0).contains(e)));
            prop_assert!(m.entropy.iter().all(|&e| e >= 0.0));
        }
    }
}
