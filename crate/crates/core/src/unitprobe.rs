//! Single-unit analysis: activation sweeps, label vectors and sparsity,
//! class relevance, class similarity, and clustering / embedding of units.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::linklearn::LinkingModel;
use crate::par::{self, Execution};
use crate::pipeline::{Evaluation, Pipeline};
use crate::segquant::{hoyer_sparsity, metric_delta, DeltaScope, Metric, MetricDelta, SegmentMetrics};
use crate::synthworld::{argmax, RepVector};
use crate::tensorio::ImageBuffer;

pub const DEFAULT_STEPS: usize = 11;
pub const RELEVANCE_THRESHOLD: f64 = 0.15;
pub const EMBEDDING_METHOD: &str = "PCA, top two components (stand-in for t-SNE)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn unit_ranges(reps: &[RepVector]) -> Result<UnitRange> {
    let first = reps
        .first()
        .ok_or_else(|| Error::Invalid("unit ranges of an empty set".into()))?;
    let mut min = first.0.clone();
    let mut max = first.0.clone();
    for r in &reps[1..] {
        if r.len() != min.len() {
            return Err(Error::dim("unit range input", min.len(), r.len()));
        }
        for (j, &v) in r.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(UnitRange { min, max })
}

/// Copy of `link` in which unit `unit` moves only latent `dim`, with
/// `gain` latent units per unit of activation. Biases are shifted so both
/// models agree wherever the unit sits at `center`.
pub fn dedicate_unit(link: &LinkingModel, unit: usize, dim: usize, gain: f64, center: f64) -> Result<LinkingModel> {
    if unit >= link.d_r() || dim >= link.d_w() {
        return Err(Error::Invalid(format!("unit {unit} / latent {dim} out of range")));
    }
    let mut out = link.clone();
    for i in 0..link.d_w() {
        let new = if i == dim { gain } else { 0.0 };
        out.bias[i] += (link.weights[(i, unit)] - new) * center;
        out.weights[(i, unit)] = new;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepStep {
    pub activation: f64,
    pub metrics: SegmentMetrics,
    pub probs: Vec<f64>,
    #[serde(skip)]
    pub image: Option<ImageBuffer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub unit: usize,
    pub seed_id: usize,
    pub steps: Vec<SweepStep>,
    /// Per step, all-metric delta against step 0.
    pub deltas: Vec<MetricDelta>,
}

fn sweep_values(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| {
            if i + 1 == steps {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (steps - 1) as f64
            }
        })
        .collect()
}

/// Evaluate the pipeline at `steps` activations of `unit`, evenly spaced over
/// its empirical range; other units stay at their values in `r`.
pub fn sweep_unit(
    pipeline: &Pipeline,
    r: &[f64],
    seed_id: usize,
    unit: usize,
    steps: usize,
    ranges: &UnitRange,
    keep_images: bool,
) -> Result<SweepResult> {
    let d = pipeline.d_r();
    if r.len() != d {
        return Err(Error::dim("sweep representation", d, r.len()));
    }
    if ranges.min.len() != d {
        return Err(Error::dim("unit ranges", d, ranges.min.len()));
    }
    if unit >= d {
        return Err(Error::Invalid(format!("unit {unit} out of range (d_r = {d})")));
    }
    if steps < 2 {
        return Err(Error::Invalid(format!("a sweep needs at least 2 steps, got {steps}")));
    }
    let mut rp = r.to_vec();
    let mut out = Vec::with_capacity(steps);
    for v in sweep_values(ranges.min[unit], ranges.max[unit], steps) {
        rp[unit] = v;
        let e = pipeline.evaluate(&rp)?;
        out.push(SweepStep {
            activation: v,
            metrics: e.metrics,
            probs: e.probs,
            image: keep_images.then_some(e.image),
        });
    }
    let deltas = out
        .iter()
        .map(|s| metric_delta(&out[0].metrics, &s.metrics, DeltaScope::All))
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        unit,
        seed_id,
        steps: out,
        deltas,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub steps: usize,
    pub relevance_threshold: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            steps: DEFAULT_STEPS,
            relevance_threshold: RELEVANCE_THRESHOLD,
        }
    }
}

/// A seed for the sweep: its representation and its generating class.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSeed {
    pub r: RepVector,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitStats {
    pub unit: usize,
    /// Median |endpoint delta| over seeds, ordered (metric, label); k = 45.
    pub label_vector: Vec<f64>,
    /// Hoyer sparsity of each metric's 9-entry slice, in `Metric::ALL` order.
    pub sparsity: Vec<f64>,
    pub sparsity_all: f64,
    /// Metric slices that were all zero.
    pub sparsity_degenerate: Vec<bool>,
    /// Mean over seeds of the original-class probability change.
    pub relevance: f64,
    /// The same mean restricted to seeds of each generating class.
    pub class_relevance: Vec<f64>,
    pub relevant: bool,
    pub relevant_for_class: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub n_seeds: usize,
    pub steps: usize,
    pub relevance_threshold: f64,
    pub label_count: usize,
    pub units: Vec<UnitStats>,
}

struct Cell {
    endpoint_delta: Vec<f64>,
    prob_change: f64,
}

fn larger_deviation_endpoint(own: f64, lo: f64, hi: f64) -> usize {
    // index into the sweep: 0 for min, last for max; ties go to max
    if (own - lo).abs() > (hi - own).abs() { 0 } else { 1 }
}

/// Sweep every unit over every seed and aggregate per unit.
///
/// Grid cells are independent; aggregation is keyed by (unit, seed), so the
/// result does not depend on the execution schedule.
pub fn sweep_summary(
    pipeline: &Pipeline,
    seeds: &[SweepSeed],
    units: &[usize],
    ranges: &UnitRange,
    cfg: &SweepConfig,
    exec: Execution,
) -> Result<UnitSummary> {
    if seeds.is_empty() {
        return Err(Error::Invalid("sweep summary needs at least one seed".into()));
    }
    let n_classes = pipeline.head.n_classes();
    let base: Vec<Evaluation> = par::try_map_range(exec, seeds.len(), |s| pipeline.evaluate(&seeds[s].r))?;
    let orig_class: Vec<usize> = base.iter().map(|e| argmax(&e.probs)).collect();
    let n = seeds.len();
    let cells = par::try_map_range(exec, units.len() * n, |g| -> Result<Cell> {
        let (u, s) = (units[g / n], g % n);
        let sw = sweep_unit(pipeline, &seeds[s].r, s, u, cfg.steps, ranges, false)?;
        let last = sw.steps.len() - 1;
        let endpoint_delta = sw.deltas[last].values.iter().map(|v| v.abs()).collect();
        let end = [0, last][larger_deviation_endpoint(seeds[s].r[u], ranges.min[u], ranges.max[u])];
        let c = orig_class[s];
        Ok(Cell {
            endpoint_delta,
            prob_change: (base[s].probs[c] - sw.steps[end].probs[c]).abs(),
        })
    })?;
    let label_count = base[0].metrics.label_count();
    let mut out = Vec::with_capacity(units.len());
    for (ui, &unit) in units.iter().enumerate() {
        let row = &cells[ui * n..(ui + 1) * n];
        let k = row[0].endpoint_delta.len();
        let label_vector: Vec<f64> = (0..k)
            .map(|j| linalg::median(&row.iter().map(|c| c.endpoint_delta[j]).collect::<Vec<_>>()))
            .collect();
        let mut sparsity = Vec::new();
        let mut degenerate = Vec::new();
        for m in Metric::ALL {
            let sl = &label_vector[m.index() * label_count..(m.index() + 1) * label_count];
            let s = hoyer_sparsity(sl)?;
            sparsity.push(s.value);
            degenerate.push(s.degenerate);
        }
        let relevance = row.iter().map(|c| c.prob_change).sum::<f64>() / n as f64;
        let mut per_class = vec![(0.0, 0usize); n_classes];
        for (c, seed) in row.iter().zip(seeds) {
            if seed.class < n_classes {
                per_class[seed.class].0 += c.prob_change;
                per_class[seed.class].1 += 1;
            }
        }
        let class_relevance: Vec<f64> = per_class
            .iter()
            .map(|&(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        out.push(UnitStats {
            unit,
            sparsity_all: hoyer_sparsity(&label_vector)?.value,
            label_vector,
            sparsity,
            sparsity_degenerate: degenerate,
            relevance,
            relevant: relevance > cfg.relevance_threshold,
            relevant_for_class: class_relevance.iter().map(|&v| v > cfg.relevance_threshold).collect(),
            class_relevance,
        });
    }
    Ok(UnitSummary {
        n_seeds: n,
        steps: cfg.steps,
        relevance_threshold: cfg.relevance_threshold,
        label_count,
        units: out,
    })
}

impl UnitSummary {
    /// `C × units` matrix of per-class relevance.
    pub fn class_relevance_matrix(&self) -> Result<Matrix> {
        let c = self.units.first().map_or(0, |u| u.class_relevance.len());
        let mut m = Matrix::zeros(c, self.units.len());
        for (j, u) in self.units.iter().enumerate() {
            for i in 0..c {
                m[(i, j)] = u.class_relevance[i];
            }
        }
        Ok(m)
    }

    /// Index of the largest label-vector entry for `unit`, as (metric, label).
    pub fn dominant_entry(&self, pos: usize) -> (Metric, usize) {
        let lv = &self.units[pos].label_vector;
        let j = argmax(lv);
        (Metric::ALL[j / self.label_count], j % self.label_count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

impl Percentiles {
    pub fn of(xs: &[f64]) -> Self {
        Percentiles {
            p5: linalg::percentile(xs, 5.0),
            p25: linalg::percentile(xs, 25.0),
            p50: linalg::percentile(xs, 50.0),
            p75: linalg::percentile(xs, 75.0),
            p95: linalg::percentile(xs, 95.0),
        }
    }

    /// Upper tail longer than the lower one.
    pub fn long_upper_tail(&self) -> bool {
        self.p95 - self.p50 > self.p50 - self.p5
    }
}

pub fn class_similarity(rel: &Matrix) -> Result<Matrix> {
    let c = rel.rows();
    let mut out = Matrix::identity(c);
    for i in 0..c {
        for j in i + 1..c {
            let v = linalg::pearson(rel.row(i), rel.row(j))
                .ok_or_else(|| Error::Degenerate(format!("class row {} or {} is constant", i, j)))?;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    if c == 1 && linalg::pearson(rel.row(0), rel.row(0)).is_none() {
        return Err(Error::Degenerate("class row 0 is constant".into()));
    }
    Ok(out)
}

/// Average-linkage agglomerative clustering (Euclidean), cut at
/// `n_clusters`; labels numbered by first appearance.
pub fn agglomerative(points: &[Vec<f64>], n_clusters: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n_clusters == 0 || n_clusters > n {
        return Err(Error::Invalid(format!("cannot cut {n} points into {n_clusters} clusters")));
    }
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = linalg::sq_dist(&points[i], &points[j]).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    // cluster id (its smallest member) -> members
    let mut clusters: BTreeMap<usize, Vec<usize>> = (0..n).map(|i| (i, vec![i])).collect();
    // pairwise summed distances between live clusters
    let mut link = dist.clone();
    while clusters.len() > n_clusters {
        let ids: Vec<usize> = clusters.keys().copied().collect();
        let mut best = (f64::INFINITY, 0, 0);
        for (x, &a) in ids.iter().enumerate() {
            for &b in &ids[x + 1..] {
                let avg = link[a][b] / (clusters[&a].len() * clusters[&b].len()) as f64;
                if avg < best.0 {
                    best = (avg, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let moved = clusters.remove(&b).expect("live cluster");
        clusters.get_mut(&a).expect("live cluster").extend(moved);
        for &c in clusters.keys() {
            if c != a {
                let s = link[a][c] + link[b][c];
                link[a][c] = s;
                link[c][a] = s;
            }
        }
    }
    let mut raw = vec![0usize; n];
    for (&id, members) in &clusters {
        for &m in members {
            raw[m] = id;
        }
    }
    let mut renum: BTreeMap<usize, usize> = BTreeMap::new();
    Ok(raw
        .iter()
        .map(|id| {
            let next = renum.len();
            *renum.entry(*id).or_insert(next)
        })
        .collect())
}

/// Projection onto the top two principal components. Each axis is signed
/// so its largest-magnitude loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Invalid("PCA needs at least 2 points".into()));
    }
    let d = points[0].len();
    if d < 2 {
        return Err(Error::Invalid("PCA to 2-D needs at least 2 dimensions".into()));
    }
    let refs: Vec<&[f64]> = points.iter().map(|p| &p[..]).collect();
    let mu = linalg::column_means(&refs);
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - mu[j]);
    let cov = x.transpose() * &x / (n as f64);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::new();
    for &k in &order[..2] {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        axes.push(v);
    }
    Ok((0..n)
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            [linalg::dot(&row, &axes[0]), linalg::dot(&row, &axes[1])]
        })
        .collect())
}

pub fn cluster_and_embed(label_vectors: &[Vec<f64>], n_clusters: usize) -> Result<(Vec<usize>, Vec<[f64; 2]>)> {
    Ok((agglomerative(label_vectors, n_clusters)?, pca_2d(label_vectors)?))
}
