//! Counterfactual search in `R`: descend on
//! `−o_target + λ₁·o_orig − λ₂·cos(f(r), f(r + Δr))`, stop at the first step
//! whose prediction is the target, then quantify the trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::linklearn::{apply_linking, LinkingModel};
use crate::pipeline::Pipeline;
use crate::segquant::{metric_delta, DeltaScope, Metric};
use crate::synthworld::{argmax, softmax, ClassifierHead};

pub const NORM_FLOOR: f64 = 1e-12;
pub const IMAGE_METRIC: &str = "pixel MSE plus segment-metric deltas (stand-in for a learned perceptual distance)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub step: f64,
    pub max_steps: usize,
    pub target: usize,
    pub record_stride: usize,
    pub max_halvings: usize,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            lambda1: 0.6,
            lambda2: 10.0,
            step: 0.05,
            max_steps: 2000,
            target: 0,
            record_stride: 1,
            max_halvings: 10,
        }
    }
}

impl CounterfactualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Invalid("λ₁ and λ₂ must be nonnegative".into()));
        }
        if self.max_steps == 0 || self.record_stride == 0 {
            return Err(Error::Invalid("max_steps and record_stride must be at least 1".into()));
        }
        if !(self.step >= 0.0 && self.step.is_finite()) {
            return Err(Error::Invalid(format!("step size {} invalid", self.step)));
        }
        Ok(())
    }
}

fn cosine_terms(link: &LinkingModel, r: &[f64], dr: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let u = apply_linking(link, r)?.0;
    let v = apply_linking(link, &linalg::add(r, dr))?.0;
    let (nu, nv) = (linalg::norm(&u), linalg::norm(&v));
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        return Err(Error::Degenerate("f(r) or f(r + Δr) has zero norm; cosine undefined".into()));
    }
    Ok((linalg::dot(&u, &v) / (nu * nv), u, v))
}

/// Loss and closed-form gradient with respect to `Δr`.
pub fn counterfactual_loss(
    r: &[f64],
    dr: &[f64],
    head: &ClassifierHead,
    link: &LinkingModel,
    cfg: &CounterfactualConfig,
) -> Result<(f64, Vec<f64>)> {
    if r.len() != dr.len() {
        return Err(Error::dim("Δr", r.len(), dr.len()));
    }
    if cfg.target >= head.n_classes() {
        return Err(Error::Invalid(format!("target class {} out of range", cfg.target)));
    }
    let orig = head.predict_class(r)?;
    loss_with_orig(r, dr, head, link, cfg, orig)
}

fn loss_with_orig(
    r: &[f64],
    dr: &[f64],
    head: &ClassifierHead,
    link: &LinkingModel,
    cfg: &CounterfactualConfig,
    orig: usize,
) -> Result<(f64, Vec<f64>)> {
    let o = head.logits(&linalg::add(r, dr))?;
    let (cos, u, v) = cosine_terms(link, r, dr)?;
    let loss = -o[cfg.target] + cfg.lambda1 * o[orig] - cfg.lambda2 * cos;
    let mut grad = vec![0.0; r.len()];
    linalg::axpy(-1.0, head.weights.row(cfg.target), &mut grad);
    linalg::axpy(cfg.lambda1, head.weights.row(orig), &mut grad);
    if cfg.lambda2 != 0.0 {
        let (nu, nv) = (linalg::norm(&u), linalg::norm(&v));
        // ∂cos/∂v = u/(|u||v|) − cos·v/|v|²
        let dv: Vec<f64> = u
            .iter()
            .zip(&v)
            .map(|(a, b)| a / (nu * nv) - cos * b / (nv * nv))
            .collect();
        let back = link.weights.tmatvec(&dv)?;
        linalg::axpy(-cfg.lambda2, &back, &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    /// `r + Δr`.
    pub r: Vec<f64>,
    /// `f(r + Δr)`.
    pub w: Vec<f64>,
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub loss: f64,
    pub identity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub original_class: usize,
    pub target: usize,
    pub records: Vec<TrajectoryRecord>,
    /// First record predicted as the target.
    pub boundary: Option<usize>,
    pub converged: bool,
    /// Stopped early: no halving of the step decreased the loss.
    pub stalled: bool,
    pub steps_taken: usize,
}

impl Trajectory {
    pub fn final_delta_norm(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => linalg::sq_dist(&a.r, &b.r).sqrt(),
            _ => 0.0,
        }
    }
}

/// Gradient descent from `Δr = 0` with step halving on non-decrease.
pub fn optimize_counterfactual(
    r: &[f64],
    cfg: &CounterfactualConfig,
    head: &ClassifierHead,
    link: &LinkingModel,
) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.target >= head.n_classes() {
        return Err(Error::Invalid(format!("target class {} out of range", cfg.target)));
    }
    let orig = head.predict_class(r)?;
    if orig == cfg.target {
        return Err(Error::Invalid(format!("target {} equals the current prediction", cfg.target)));
    }
    let mut dr = vec![0.0; r.len()];
    let (mut loss, mut grad) = loss_with_orig(r, &dr, head, link, cfg, orig)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("counterfactual loss at Δr = 0".into()));
    }
    let mut step = cfg.step;
    let mut records = Vec::new();
    let mut boundary = None;
    let mut stalled = false;
    let mut taken = 0;
    for s in 0..cfg.max_steps {
        let rp = linalg::add(r, &dr);
        let probs = softmax(&head.logits(&rp)?);
        let predicted = argmax(&probs);
        let hit = predicted == cfg.target;
        let last = s + 1 == cfg.max_steps;
        if s == 0 || s % cfg.record_stride == 0 || hit || last {
            let (identity, _, v) = cosine_terms(link, r, &dr)?;
            records.push(TrajectoryRecord {
                step: s,
                r: rp,
                w: v,
                probs,
                predicted,
                loss,
                identity,
            });
        }
        if hit {
            boundary = Some(records.len() - 1);
            break;
        }
        if last {
            break;
        }
        let mut h = step;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let mut cand = dr.clone();
            linalg::axpy(-h, &grad, &mut cand);
            if let Ok((l, g)) = loss_with_orig(r, &cand, head, link, cfg, orig) {
                if l.is_finite() && l <= loss {
                    accepted = Some((cand, l, g));
                    break;
                }
            }
            h *= 0.5;
        }
        match accepted {
            Some((cand, l, g)) => {
                dr = cand;
                loss = l;
                grad = g;
                step = h;
                taken += 1;
            }
            None => {
                stalled = true;
                if let Some(last) = records.last() {
                    if last.step != s {
                        let (identity, _, v) = cosine_terms(link, r, &dr)?;
                        let rp = linalg::add(r, &dr);
                        let probs = softmax(&head.logits(&rp)?);
                        records.push(TrajectoryRecord {
                            step: s,
                            predicted: argmax(&probs),
                            r: rp,
                            w: v,
                            probs,
                            loss,
                            identity,
                        });
                    }
                }
                break;
            }
        }
    }
    Ok(Trajectory {
        original_class: orig,
        target: cfg.target,
        converged: boundary.is_some(),
        records,
        boundary,
        stalled,
        steps_taken: taken,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl Series {
    /// Min-max normalization over the series; a constant series maps to 0.
    pub fn new(name: impl Into<String>, raw: Vec<f64>) -> Self {
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let normalized = raw
            .iter()
            .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect();
        Series {
            name: name.into(),
            raw,
            normalized,
        }
    }

    /// Largest |normalized[i+1] − normalized[i]| for steps touching `lo..=hi`.
    pub fn max_jump(&self, lo: usize, hi: usize) -> f64 {
        let n = self.normalized.len();
        (lo.min(n)..hi.min(n.saturating_sub(1)))
            .map(|i| (self.normalized[i + 1] - self.normalized[i]).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub original_class: usize,
    pub target: usize,
    /// Record index behind each resampled position.
    pub record_index: Vec<usize>,
    /// Resampled position of the boundary record.
    pub boundary: Option<usize>,
    pub target_prob: Series,
    /// Target probability from the rendered image.
    pub target_prob_rendered: Series,
    pub image_mse: Series,
    /// Per (metric, label) delta versus the reference image.
    pub metric_deltas: Vec<Series>,
    /// Argmax on the final rendered image equals the target.
    pub render_confirms: bool,
    /// Argmax on `r + Δr` and on the rendered image disagree somewhere.
    pub disagreements: usize,
}

pub const SHARPNESS_WINDOW: usize = 2;

impl TrajectoryReport {
    /// (max target-probability jump, max normalized-MSE jump) within
    /// `window` resample steps of the boundary.
    pub fn boundary_jumps(&self, window: usize) -> Option<(f64, f64)> {
        let b = self.boundary?;
        let lo = b.saturating_sub(window);
        let hi = b + window;
        Some((self.target_prob.max_jump(lo, hi), self.image_mse.max_jump(lo, hi)))
    }
}

fn resample_indices(n: usize, count: usize) -> Vec<usize> {
    if count <= 1 || n == 1 {
        return vec![n - 1; count.max(1)];
    }
    (0..count)
        .map(|i| ((i * (n - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

/// Re-render `count` evenly spaced records and compare each to the render of
/// the first record.
pub fn trajectory_report(traj: &Trajectory, pipeline: &Pipeline, count: usize) -> Result<TrajectoryReport> {
    if traj.records.is_empty() {
        return Err(Error::Invalid("empty trajectory".into()));
    }
    if count == 0 {
        return Err(Error::Invalid("resample count must be at least 1".into()));
    }
    let idx = resample_indices(traj.records.len(), count);
    let reference = pipeline.evaluate_latent(traj.records[0].w.clone().into())?;
    let evals = idx
        .iter()
        .map(|&i| pipeline.evaluate_latent(traj.records[i].w.clone().into()))
        .collect::<Result<Vec<_>>>()?;
    let t = traj.target;
    let target_prob = Series::new("target_prob", idx.iter().map(|&i| traj.records[i].probs[t]).collect());
    let target_prob_rendered = Series::new("target_prob_rendered", evals.iter().map(|e| e.probs[t]).collect());
    let image_mse = Series::new(
        "image_mse",
        evals.iter().map(|e| e.image.mse(&reference.image)).collect::<Result<_>>()?,
    );
    let deltas = evals
        .iter()
        .map(|e| metric_delta(&reference.metrics, &e.metrics, DeltaScope::All))
        .collect::<Result<Vec<_>>>()?;
    let labels = reference.metrics.label_count();
    let mut metric_deltas = Vec::new();
    for m in Metric::ALL {
        for l in 0..labels {
            let j = m.index() * labels + l;
            metric_deltas.push(Series::new(
                format!("{}:{}", m.name(), l),
                deltas.iter().map(|d| d.values[j]).collect(),
            ));
        }
    }
    let disagreements = idx
        .iter()
        .zip(&evals)
        .filter(|(&i, e)| argmax(&e.probs) != traj.records[i].predicted)
        .count();
    Ok(TrajectoryReport {
        original_class: traj.original_class,
        target: t,
        boundary: traj.boundary.and_then(|b| idx.iter().position(|&i| i >= b)),
        render_confirms: evals.last().is_some_and(|e| argmax(&e.probs) == t),
        record_index: idx,
        target_prob,
        target_prob_rendered,
        image_mse,
        metric_deltas,
        disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_setup(seed: u64, c: usize, d_r: usize, d_w: usize) -> (ClassifierHead, LinkingModel, Vec<f64>) {
        let mut rng = seed::rng(seed);
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let h = Matrix::from_vec(c, d_r, (0..c * d_r).map(|_| g()).collect()).unwrap();
        let b: Vec<f64> = (0..c).map(|_| g()).collect();
        let names = (0..c).map(|i| format!("c{i}")).collect();
        let head = ClassifierHead::new(h, b, names).unwrap();
        let m = Matrix::from_vec(d_w, d_r, (0..d_w * d_r).map(|_| g() * 0.3).collect()).unwrap();
        let bias: Vec<f64> = (0..d_w).map(|_| g()).collect();
        let link = LinkingModel {
            weights: m,
            bias,
            ridge: 0.0,
            ridge_effective: 0.0,
            n_pairs: 0,
        };
        let r = (0..d_r).map(|_| g()).collect();
        (head, link, r)
    }

    fn other_class(head: &ClassifierHead, r: &[f64]) -> usize {
        (head.predict_class(r).unwrap() + 1) % head.n_classes()
    }

    #[test]
    fn zero_delta_loss() {
        let (head, link, r) = random_setup(1, 4, 12, 6);
        let cfg = CounterfactualConfig { target: other_class(&head, &r), ..Default::default() };
        let o = head.logits(&r).unwrap();
        let orig = head.predict_class(&r).unwrap();
        let (l, _) = counterfactual_loss(&r, &vec![0.0; 12], &head, &link, &cfg).unwrap();
        let expect = -o[cfg.target] + 0.6 * o[orig] - 10.0;
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn gradient_without_identity_is_head_rows() {
        let (head, link, r) = random_setup(2, 4, 12, 6);
        let cfg = CounterfactualConfig { target: other_class(&head, &r), lambda2: 0.0, ..Default::default() };
        let orig = head.predict_class(&r).unwrap();
        let mut rng = seed::rng(3);
        for _ in 0..3 {
            let dr: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
            let (_, g) = counterfactual_loss(&r, &dr, &head, &link, &cfg).unwrap();
            for j in 0..12 {
                let e = -head.weights[(cfg.target, j)] + 0.6 * head.weights[(orig, j)];
                assert!((g[j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for s in 0..50 {
            let (head, link, r) = random_setup(100 + s, 5, 16, 8);
            let cfg = CounterfactualConfig { target: other_class(&head, &r), ..Default::default() };
            let mut rng = seed::rng(500 + s);
            let dr: Vec<f64> = (0..16).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
            let (_, g) = counterfactual_loss(&r, &dr, &head, &link, &cfg).unwrap();
            let h = 1e-4;
            let fd: Vec<f64> = (0..16)
                .map(|j| {
                    let mut p = dr.clone();
                    let mut m = dr.clone();
                    p[j] += h;
                    m[j] -= h;
                    let lp = counterfactual_loss(&r, &p, &head, &link, &cfg).unwrap().0;
                    let lm = counterfactual_loss(&r, &m, &head, &link, &cfg).unwrap().0;
                    (lp - lm) / (2.0 * h)
                })
                .collect();
            let err = linalg::norm(&linalg::sub(&g, &fd)) / linalg::norm(&g);
            assert!(err < 1e-5, "instance {s}: {err}");
        }
    }

    #[test]
    fn zero_norm_latent_is_error() {
        let (head, mut link, r) = random_setup(4, 3, 8, 4);
        link.weights = Matrix::zeros(4, 8);
        link.bias = vec![0.0; 4];
        let cfg = CounterfactualConfig { target: other_class(&head, &r), ..Default::default() };
        assert!(counterfactual_loss(&r, &vec![0.0; 8], &head, &link, &cfg).is_err());
    }

    #[test]
    fn converges_and_stops_at_boundary() {
        let (head, link, r) = random_setup(5, 3, 10, 5);
        let cfg = CounterfactualConfig { target: other_class(&head, &r), ..Default::default() };
        let t = optimize_counterfactual(&r, &cfg, &head, &link).unwrap();
        assert!(t.converged);
        let b = t.boundary.unwrap();
        assert_eq!(b, t.records.len() - 1);
        assert_eq!(t.records[b].predicted, cfg.target);
        assert!(t.records[..b].iter().all(|rec| rec.predicted != cfg.target));
        for w in t.records.windows(2) {
            assert!(w[1].loss <= w[0].loss);
            assert!(w[1].step > w[0].step);
        }
    }

    #[test]
    fn no_op_optimizer() {
        let (head, link, r) = random_setup(6, 3, 10, 5);
        let cfg = CounterfactualConfig { target: other_class(&head, &r), max_steps: 1, step: 0.0, ..Default::default() };
        let t = optimize_counterfactual(&r, &cfg, &head, &link).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].r, r);
        assert!(!t.converged);
    }

    #[test]
    fn target_equal_to_prediction_rejected() {
        let (head, link, r) = random_setup(7, 3, 10, 5);
        let cfg = CounterfactualConfig { target: head.predict_class(&r).unwrap(), ..Default::default() };
        assert!(optimize_counterfactual(&r, &cfg, &head, &link).is_err());
    }

    #[test]
    fn identity_term_restrains_movement() {
        for s in 0..5 {
            let (head, link, r) = random_setup(20 + s, 3, 10, 5);
            let target = other_class(&head, &r);
            let base = CounterfactualConfig { target, max_steps: 300, ..Default::default() };
            let strong = CounterfactualConfig { lambda1: 0.0, lambda2: 1e6, ..base.clone() };
            let free = CounterfactualConfig { lambda2: 0.0, ..base.clone() };
            let t10 = optimize_counterfactual(&r, &base, &head, &link).unwrap();
            let t_strong = optimize_counterfactual(&r, &strong, &head, &link).unwrap();
            let t_free = optimize_counterfactual(&r, &free, &head, &link).unwrap();
            assert!(t_strong.final_delta_norm() < t10.final_delta_norm());
            let last_id = |t: &Trajectory| t.records.last().unwrap().identity;
            assert!(last_id(&t10) >= last_id(&t_free) - 1e-12, "seed {s}");
        }
    }

    #[test]
    fn record_stride_keeps_first_and_last() {
        let (head, link, r) = random_setup(8, 3, 10, 5);
        let cfg = CounterfactualConfig { target: other_class(&head, &r), record_stride: 7, ..Default::default() };
        let t = optimize_counterfactual(&r, &cfg, &head, &link).unwrap();
        assert_eq!(t.records[0].step, 0);
        for rec in &t.records[..t.records.len() - 1] {
            assert_eq!(rec.step % 7, 0);
        }
    }

    #[test]
    fn series_normalization() {
        let s = Series::new("x", vec![2.0, 4.0, 3.0]);
        assert_eq!(s.normalized, vec![0.0, 1.0, 0.5]);
        let c = Series::new("c", vec![1.5; 4]);
        assert!(c.normalized.iter().all(|&v| v == 0.0));
        assert_eq!(s.max_jump(0, 5), 1.0);
    }

    #[test]
    fn resampling_covers_endpoints() {
        assert_eq!(resample_indices(11, 6), vec![0, 2, 4, 6, 8, 10]);
        assert_eq!(resample_indices(1, 3), vec![0, 0, 0]);
        assert_eq!(resample_indices(3, 5), vec![0, 1, 1, 2, 2]);
    }
}
