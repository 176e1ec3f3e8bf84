//! The linking map `f: R → W`, an affine least-squares fit, and the full
//! cycle `w → I → r → w̃ → Ĩ → r̃` used to judge it.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::par::{self, Execution};
use crate::seed;
use crate::synthworld::{LatentVector, RepVector, World};
use crate::tensorio::{self, MatrixFile};

/// Ridge coefficient used when the caller does not choose one; it is scaled
/// by the mean per-unit variance of the representations.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// `w̃ = M·r + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkingModel {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    /// Ridge coefficient as requested (relative).
    pub ridge: f64,
    /// Absolute penalty actually added to the Gram diagonal.
    pub ridge_effective: f64,
    pub n_pairs: usize,
}

#[derive(Serialize, Deserialize)]
struct LinkSidecar {
    d_w: usize,
    d_r: usize,
    bias: Vec<f64>,
    ridge: f64,
    ridge_effective: f64,
    n_pairs: usize,
    #[serde(default)]
    mode: Option<String>,
}

impl LinkingModel {
    pub fn d_w(&self) -> usize {
        self.weights.rows()
    }

    pub fn d_r(&self) -> usize {
        self.weights.cols()
    }

    /// Constant map `w̃ = b₀`.
    pub fn constant(d_w: usize, d_r: usize, bias: Vec<f64>) -> Self {
        LinkingModel {
            weights: Matrix::zeros(d_w, d_r),
            bias,
            ridge: 0.0,
            ridge_effective: 0.0,
            n_pairs: 0,
        }
    }

    /// Writes `<stem>.rmat` (weights) and `<stem>.json` (everything else).
    pub fn save(&self, dir: &Path, stem: &str, mode: Option<&str>) -> Result<()> {
        tensorio::write_matrix(
            &dir.join(format!("{stem}.rmat")),
            &MatrixFile::from_matrix(&self.weights)?,
        )?;
        let side = LinkSidecar {
            d_w: self.d_w(),
            d_r: self.d_r(),
            bias: self.bias.clone(),
            ridge: self.ridge,
            ridge_effective: self.ridge_effective,
            n_pairs: self.n_pairs,
            mode: mode.map(str::to_string),
        };
        tensorio::write_json(&dir.join(format!("{stem}.json")), &side)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let weights = tensorio::read_matrix(&dir.join(format!("{stem}.rmat")))?.to_matrix();
        let side: LinkSidecar = tensorio::read_json(&dir.join(format!("{stem}.json")))?;
        if weights.rows() != side.d_w || weights.cols() != side.d_r {
            return Err(Error::dim("linking weights", side.d_w * side.d_r, weights.as_slice().len()));
        }
        if side.bias.len() != side.d_w {
            return Err(Error::dim("linking bias", side.d_w, side.bias.len()));
        }
        Ok(LinkingModel {
            weights,
            bias: side.bias,
            ridge: side.ridge,
            ridge_effective: side.ridge_effective,
            n_pairs: side.n_pairs,
        })
    }
}

fn check_pairs(reps: &[RepVector], lats: &[LatentVector]) -> Result<(usize, usize)> {
    if reps.len() != lats.len() {
        return Err(Error::dim("linking pairs", reps.len(), lats.len()));
    }
    if reps.is_empty() {
        return Err(Error::Invalid("no training pairs".into()));
    }
    let (d_r, d_w) = (reps[0].len(), lats[0].len());
    for (r, w) in reps.iter().zip(lats) {
        if r.len() != d_r {
            return Err(Error::dim("representation", d_r, r.len()));
        }
        if w.len() != d_w {
            return Err(Error::dim("latent", d_w, w.len()));
        }
    }
    Ok((d_r, d_w))
}

/// Minimize `Σ‖w − (M·r + b)‖² + λ‖M‖²_F` through the normal equations on
/// centered data, with `λ = ridge · tr(Gram) / (d_r · n)`, i.e. the ridge is
/// relative to the mean per-unit variance of `r`.
///
/// With `ridge = 0` a rank-deficient Gram matrix is reported as
/// [`Error::Singular`].
pub fn fit_linking(reps: &[RepVector], lats: &[LatentVector], ridge: f64) -> Result<LinkingModel> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::Invalid(format!("ridge must be a nonnegative number, got {ridge}")));
    }
    let (d_r, d_w) = check_pairs(reps, lats)?;
    let r_refs: Vec<&[f64]> = reps.iter().map(|r| &r[..]).collect();
    let w_refs: Vec<&[f64]> = lats.iter().map(|w| &w[..]).collect();
    let r_mean = linalg::column_means(&r_refs);
    let w_mean = linalg::column_means(&w_refs);

    let mut gram = Matrix::zeros(d_r, d_r);
    let mut cross = Matrix::zeros(d_r, d_w);
    let mut rc = vec![0.0; d_r];
    let mut wc = vec![0.0; d_w];
    for (r, w) in reps.iter().zip(lats) {
        for j in 0..d_r {
            rc[j] = r[j] - r_mean[j];
        }
        for j in 0..d_w {
            wc[j] = w[j] - w_mean[j];
        }
        for i in 0..d_r {
            let a = rc[i];
            if a == 0.0 {
                continue;
            }
            linalg::axpy(a, &rc[i..], &mut gram.row_mut(i)[i..]);
            linalg::axpy(a, &wc, cross.row_mut(i));
        }
    }
    for i in 0..d_r {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let trace: f64 = (0..d_r).map(|i| gram[(i, i)]).sum();
    let lambda = ridge * trace / (d_r * reps.len()) as f64;
    for i in 0..d_r {
        gram[(i, i)] += lambda;
    }
    let l = linalg::cholesky(&gram, 1e-12).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!(
            "linking normal equations with {} pairs in d_r = {d_r}: {msg}",
            reps.len()
        )),
        other => other,
    })?;
    let weights = linalg::cholesky_solve(&l, &cross).transpose();
    let mr = weights.matvec(&r_mean)?;
    let bias = linalg::sub(&w_mean, &mr);
    if !weights.is_finite() || bias.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linking solution".into()));
    }
    Ok(LinkingModel {
        weights,
        bias,
        ridge,
        ridge_effective: lambda,
        n_pairs: reps.len(),
    })
}

/// `w̃ = M·r + b`.
pub fn apply_linking(model: &LinkingModel, r: &[f64]) -> Result<LatentVector> {
    let mut w = model.weights.matvec(r)?;
    linalg::axpy(1.0, &model.bias, &mut w);
    Ok(LatentVector(w))
}

/// Data residual `Σ‖w − f(r)‖²`.
pub fn training_residual(model: &LinkingModel, reps: &[RepVector], lats: &[LatentVector]) -> Result<f64> {
    let mut s = 0.0;
    for (r, w) in reps.iter().zip(lats) {
        s += linalg::sq_dist(&apply_linking(model, r)?, w);
    }
    Ok(s)
}

/// The full objective minimized by [`fit_linking`].
pub fn training_objective(model: &LinkingModel, reps: &[RepVector], lats: &[LatentVector]) -> Result<f64> {
    Ok(training_residual(model, reps, lats)? + model.ridge_effective * model.weights.frobenius_sq())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleSample {
    pub mse_w: f64,
    pub shuffled_mse_w: f64,
    pub cosine_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub n: usize,
    pub mse_w: f64,
    pub shuffled_mse_w: f64,
    /// Mean cosine distance between `r(I)` and `r(Ĩ)`.
    pub perceptual_proxy: f64,
    pub proxy_metric: String,
    pub samples: Vec<CycleSample>,
}

pub const PROXY_METRIC: &str = "cosine distance in representation space (stand-in for a perceptual embedding distance)";

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (linalg::norm(a), linalg::norm(b));
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 0.0 } else { 1.0 };
    }
    (1.0 - linalg::dot(a, b) / (na * nb)).clamp(0.0, 2.0)
}

fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    linalg::sq_dist(a, b) / a.len() as f64
}

/// One cycle: returns `(w̃, r, r̃)`.
pub fn cycle_once(model: &LinkingModel, world: &World, w: &LatentVector) -> Result<(LatentVector, RepVector, RepVector)> {
    let r = world.represent(w)?;
    let w_tilde = apply_linking(model, &r)?;
    let r_tilde = world.represent(&w_tilde)?;
    Ok((w_tilde, r, r_tilde))
}

/// Evaluate the cycle on `test_latents`; the shuffled baseline compares each
/// `w̃` against a randomly permuted original.
pub fn cycle_eval(
    model: &LinkingModel,
    world: &World,
    test_latents: &[LatentVector],
    shuffle_seed: u64,
    exec: Execution,
) -> Result<CycleReport> {
    if test_latents.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    if model.d_w() != world.config().d_w || model.d_r() != world.config().d_r {
        return Err(Error::dim("linking model vs world", world.config().d_r, model.d_r()));
    }
    let cycled = par::try_map_range(exec, test_latents.len(), |i| cycle_once(model, world, &test_latents[i]))?;
    let mut perm: Vec<usize> = (0..test_latents.len()).collect();
    perm.shuffle(&mut seed::rng(shuffle_seed));
    let samples: Vec<CycleSample> = cycled
        .iter()
        .enumerate()
        .map(|(i, (wt, r, rt))| CycleSample {
            mse_w: mean_sq(&test_latents[i], wt),
            shuffled_mse_w: mean_sq(&test_latents[perm[i]], wt),
            cosine_distance: cosine_distance(r, rt),
        })
        .collect();
    let n = samples.len() as f64;
    Ok(CycleReport {
        n: samples.len(),
        mse_w: samples.iter().map(|s| s.mse_w).sum::<f64>() / n,
        shuffled_mse_w: samples.iter().map(|s| s.shuffled_mse_w).sum::<f64>() / n,
        perceptual_proxy: samples.iter().map(|s| s.cosine_distance).sum::<f64>() / n,
        proxy_metric: PROXY_METRIC.to_string(),
        samples,
    })
}
