//! Comparing `W` and `R`: (dis)similarity matrices, RSA, k-means and the
//! Adjusted Rand Index.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::par::{self, Execution};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RdmKind {
    /// Pearson correlation between samples, across coordinates.
    CorrelationSimilarity,
    /// Euclidean distance between samples.
    EuclideanDissimilarity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rdm {
    pub kind: RdmKind,
    pub matrix: Matrix,
}

impl Rdm {
    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    /// Strict upper triangle, row-major.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.matrix[(i, j)]);
            }
        }
        out
    }
}

pub fn rdm<V: AsRef<[f64]>>(xs: &[V], kind: RdmKind) -> Result<Rdm> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::Invalid(format!("an RDM needs at least 2 samples, got {n}")));
    }
    let d = xs[0].as_ref().len();
    if let Some(bad) = xs.iter().find(|x| x.as_ref().len() != d) {
        return Err(Error::dim("RDM sample", d, bad.as_ref().len()));
    }
    let mut m = Matrix::zeros(n, n);
    match kind {
        RdmKind::EuclideanDissimilarity => {
            for i in 0..n {
                for j in i + 1..n {
                    let v = linalg::sq_dist(xs[i].as_ref(), xs[j].as_ref()).sqrt();
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
        }
        RdmKind::CorrelationSimilarity => {
            let centered: Vec<Vec<f64>> = xs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let x = x.as_ref();
                    let mu = linalg::mean(x);
                    let c: Vec<f64> = x.iter().map(|v| v - mu).collect();
                    let nrm = linalg::norm(&c);
                    if nrm <= 1e-12 * mu.abs().max(1.0) {
                        return Err(Error::Degenerate(format!(
                            "sample {i} is constant; correlation undefined"
                        )));
                    }
                    Ok(c.into_iter().map(|v| v / nrm).collect())
                })
                .collect::<Result<_>>()?;
            for i in 0..n {
                m[(i, i)] = 1.0;
                for j in i + 1..n {
                    let v = linalg::dot(&centered[i], &centered[j]).clamp(-1.0, 1.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
        }
    }
    Ok(Rdm { kind, matrix: m })
}

/// Pearson correlation of the strict upper triangles.
pub fn rsa_score(a: &Rdm, b: &Rdm) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::dim("RSA matrix size", a.n(), b.n()));
    }
    if a.kind != b.kind {
        return Err(Error::Invalid("RSA between RDMs of different kinds".into()));
    }
    linalg::pearson(&a.upper_triangle(), &b.upper_triangle())
        .ok_or_else(|| Error::Degenerate("constant RDM upper triangle".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub k: usize,
    /// Index of the initialization that won.
    pub best_run: usize,
    pub iterations: usize,
    /// Fewer than `k` distinct points: one effective cluster.
    pub degenerate: bool,
}

pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Clone, Debug)]
pub(crate) struct LloydRun {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub history: Vec<f64>,
    pub degenerate: bool,
}

fn plus_plus_init<R: Rng>(xs: &[&[f64]], k: usize, rng: &mut R) -> (Vec<Vec<f64>>, bool) {
    let n = xs.len();
    let mut centers = vec![xs[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = xs.iter().map(|x| linalg::sq_dist(x, &centers[0])).collect();
    let mut degenerate = false;
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && t < d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            while d2[idx] == 0.0 {
                idx -= 1;
            }
            idx
        } else {
            degenerate = true;
            0
        };
        let c = xs[pick].to_vec();
        for (di, x) in d2.iter_mut().zip(xs) {
            *di = di.min(linalg::sq_dist(x, &c));
        }
        centers.push(c);
    }
    (centers, degenerate)
}

fn assign(xs: &[&[f64]], centers: &[Vec<f64>], labels: &mut [usize]) -> (f64, bool) {
    let mut inertia = 0.0;
    let mut changed = false;
    for (x, l) in xs.iter().zip(labels.iter_mut()) {
        let (mut best, mut bd) = (0, f64::INFINITY);
        for (c, center) in centers.iter().enumerate() {
            let d = linalg::sq_dist(x, center);
            if d < bd {
                bd = d;
                best = c;
            }
        }
        if *l != best {
            *l = best;
            changed = true;
        }
        inertia += bd;
    }
    (inertia, changed)
}

pub(crate) fn lloyd_run(xs: &[&[f64]], k: usize, run_seed: u64) -> LloydRun {
    let mut rng = seed::rng(run_seed);
    let (mut centers, degenerate) = plus_plus_init(xs, k, &mut rng);
    let d = xs[0].len();
    let mut labels = vec![usize::MAX; xs.len()];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let (inertia, changed) = assign(xs, &centers, &mut labels);
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev * (1.0 + 1e-12) + 1e-12, "inertia rose {prev} -> {inertia}");
        }
        history.push(inertia);
        if !changed && history.len() > 1 {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in xs.iter().zip(&labels) {
            linalg::axpy(1.0, x, &mut sums[l]);
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|v| v / counts[c] as f64).collect();
            } else {
                // empty cluster: reseed at the point farthest from its center
                let far = (0..xs.len())
                    .max_by(|&i, &j| {
                        let di = linalg::sq_dist(xs[i], &centers[labels[i]]);
                        let dj = linalg::sq_dist(xs[j], &centers[labels[j]]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .unwrap_or(0);
                centers[c] = xs[far].to_vec();
            }
        }
    }
    LloydRun {
        inertia: *history.last().unwrap_or(&0.0),
        labels,
        history,
        degenerate,
    }
}

/// Lloyd's algorithm with k-means++ seeding; best inertia over `n_init`
/// initializations, ties to the lowest run index.
pub fn kmeans<V: AsRef<[f64]> + Sync>(
    xs: &[V],
    k: usize,
    n_init: usize,
    seed: u64,
    exec: Execution,
) -> Result<ClusterAssignment> {
    let n = xs.len();
    if k == 0 || n < k {
        return Err(Error::Invalid(format!("k-means needs 1 <= k <= n (k = {k}, n = {n})")));
    }
    if n_init == 0 {
        return Err(Error::Invalid("n_init must be at least 1".into()));
    }
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_ref()).collect();
    let d = refs[0].len();
    if let Some(bad) = refs.iter().find(|x| x.len() != d) {
        return Err(Error::dim("k-means sample", d, bad.len()));
    }
    let runs = par::map_range(exec, n_init, |i| lloyd_run(&refs, k, seed::derive(seed, "kmeans", i as u64)));
    let (best, run) = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.inertia.total_cmp(&b.inertia).then(i.cmp(j)))
        .expect("n_init >= 1");
    let degenerate = run.degenerate && {
        let first = refs[0];
        refs.iter().all(|x| *x == first)
    };
    let labels = if degenerate { vec![0; n] } else { run.labels.clone() };
    Ok(ClusterAssignment {
        labels,
        inertia: run.inertia,
        seed,
        k,
        best_run: best,
        iterations: run.history.len(),
        degenerate,
    })
}

fn choose2(n: u64) -> i128 {
    (n as i128) * (n as i128 - 1) / 2
}

/// Adjusted Rand Index via the pair-counting contingency table.
///
/// Evaluated in exact integer arithmetic up to the final division.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("ARI labelings", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::Invalid("ARI needs at least 2 samples".into()));
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: i128 = table.values().map(|&c| choose2(c)).sum();
    let sa: i128 = rows.values().map(|&c| choose2(c)).sum();
    let sb: i128 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as u64);
    let num = 2 * (index * total - sa * sb);
    let den = (sa + sb) * total - 2 * sa * sb;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub k: usize,
    pub n_init: usize,
    pub per_class: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            k: 5,
            n_init: 20,
            per_class: 100,
            repetitions: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub ari_w: f64,
    pub ari_r: f64,
    pub rsa_euclidean: f64,
    pub rsa_correlation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub config: ProtocolConfig,
    pub mean_ari_w: f64,
    pub mean_ari_r: f64,
    pub mean_rsa_euclidean: f64,
    pub mean_rsa_correlation: f64,
    pub repetitions: Vec<RepetitionResult>,
}

/// Paired `(w, r)` pool; `labels[i]` is the class of sample `i`.
pub struct PairedPool<'a> {
    pub latents: &'a [Vec<f64>],
    pub reps: &'a [Vec<f64>],
    pub labels: &'a [usize],
}

/// Repeatedly subsample `per_class` items per class, cluster both spaces and
/// correlate their RDMs.
pub fn compare_spaces(pool: &PairedPool<'_>, cfg: &ProtocolConfig, exec: Execution) -> Result<ProtocolReport> {
    let n = pool.labels.len();
    if pool.latents.len() != n || pool.reps.len() != n {
        return Err(Error::dim("paired pool", n, pool.latents.len().min(pool.reps.len())));
    }
    if cfg.repetitions == 0 {
        return Err(Error::Invalid("at least one repetition required".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in pool.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let reps = par::try_map_range(exec, cfg.repetitions, |rep| -> Result<RepetitionResult> {
        let mut rng = seed::derive_rng(cfg.seed, "protocol-sample", rep as u64);
        let mut idx = Vec::new();
        for members in by_class.values() {
            let take = cfg.per_class.min(members.len());
            idx.extend(rand::seq::index::sample(&mut rng, members.len(), take).into_iter().map(|j| members[j]));
        }
        let truth: Vec<usize> = idx.iter().map(|&i| pool.labels[i]).collect();
        let ws: Vec<&[f64]> = idx.iter().map(|&i| &pool.latents[i][..]).collect();
        let rs: Vec<&[f64]> = idx.iter().map(|&i| &pool.reps[i][..]).collect();
        let kseed = seed::derive(cfg.seed, "protocol-kmeans", rep as u64);
        let cw = kmeans(&ws, cfg.k, cfg.n_init, kseed, Execution::Sequential)?;
        let cr = kmeans(&rs, cfg.k, cfg.n_init, kseed, Execution::Sequential)?;
        let rsa_e = rsa_score(
            &rdm(&ws, RdmKind::EuclideanDissimilarity)?,
            &rdm(&rs, RdmKind::EuclideanDissimilarity)?,
        )?;
        let rsa_c = rsa_score(
            &rdm(&ws, RdmKind::CorrelationSimilarity)?,
            &rdm(&rs, RdmKind::CorrelationSimilarity)?,
        )?;
        Ok(RepetitionResult {
            ari_w: adjusted_rand_index(&cw.labels, &truth)?,
            ari_r: adjusted_rand_index(&cr.labels, &truth)?,
            rsa_euclidean: rsa_e,
            rsa_correlation: rsa_c,
        })
    })?;
    let m = |f: fn(&RepetitionResult) -> f64| reps.iter().map(f).sum::<f64>() / reps.len() as f64;
    Ok(ProtocolReport {
        config: cfg.clone(),
        mean_ari_w: m(|r| r.ari_w),
        mean_ari_r: m(|r| r.ari_r),
        mean_rsa_euclidean: m(|r| r.rsa_euclidean),
        mean_rsa_correlation: m(|r| r.rsa_correlation),
        repetitions: reps,
    })
}
