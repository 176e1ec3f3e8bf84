use serde::{Deserialize, Serialize};

use super::RepVector;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Softmax classifier on top of `R`: logits `o = H·r + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub class_names: Vec<String>,
    pub train_accuracy: Option<f64>,
}

impl ClassifierHead {
    pub fn new(weights: Matrix, bias: Vec<f64>, class_names: Vec<String>) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::Invalid("a head needs at least 2 classes".into()));
        }
        if bias.len() != weights.rows() {
            return Err(Error::dim("head bias", weights.rows(), bias.len()));
        }
        if class_names.len() != weights.rows() {
            return Err(Error::dim("head class names", weights.rows(), class_names.len()));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("head parameters".into()));
        }
        Ok(ClassifierHead {
            weights,
            bias,
            class_names,
            train_accuracy: None,
        })
    }

    pub fn zeros(n_classes: usize, d_r: usize) -> Self {
        ClassifierHead {
            weights: Matrix::zeros(n_classes, d_r),
            bias: vec![0.0; n_classes],
            class_names: (0..n_classes).map(|c| format!("class{c}")).collect(),
            train_accuracy: None,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn d_r(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.d_r() {
            return Err(Error::dim("head input", self.d_r(), r.len()));
        }
        Ok((0..self.n_classes())
            .map(|c| dot(self.weights.row(c), r) + self.bias[c])
            .collect())
    }

    pub fn predict_class(&self, r: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(r)?))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// `softmax(H·r + bias)`.
pub fn predict(head: &ClassifierHead, r: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&head.logits(r)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTraining {
    pub epochs: usize,
    pub step: f64,
}

impl Default for HeadTraining {
    fn default() -> Self {
        HeadTraining {
            epochs: 400,
            step: 1.0,
        }
    }
}

/// Multinomial logistic regression by full-batch gradient descent.
///
/// Training runs on per-unit standardized inputs; the scaling is folded back
/// into `H` and `bias` so the returned head consumes raw `r`.
pub fn train_head(
    reps: &[RepVector],
    labels: &[usize],
    class_names: &[String],
    cfg: &HeadTraining,
) -> Result<ClassifierHead> {
    let n_classes = class_names.len();
    if n_classes < 2 {
        return Err(Error::Invalid("need at least 2 classes".into()));
    }
    if reps.len() != labels.len() {
        return Err(Error::dim("head training labels", reps.len(), labels.len()));
    }
    if reps.is_empty() {
        return Err(Error::Degenerate("no training samples".into()));
    }
    let d = reps[0].len();
    let mut counts = vec![0usize; n_classes];
    for (r, &l) in reps.iter().zip(labels) {
        if r.len() != d {
            return Err(Error::dim("head training input", d, r.len()));
        }
        if l >= n_classes {
            return Err(Error::Invalid(format!("label {l} >= {n_classes} classes")));
        }
        counts[l] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Degenerate("all training labels are equal".into()));
    }
    if let Some(c) = counts.iter().position(|&c| c > 0 && c < 10) {
        return Err(Error::Invalid(format!(
            "class {c} has {} samples; at least 10 per class required",
            counts[c]
        )));
    }

    let n = reps.len() as f64;
    let mut mu = vec![0.0; d];
    for r in reps {
        crate::linalg::axpy(1.0 / n, r, &mut mu);
    }
    let mut sd = vec![0.0; d];
    for r in reps {
        for j in 0..d {
            sd[j] += (r[j] - mu[j]).powi(2) / n;
        }
    }
    let sd: Vec<f64> = sd
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    let z: Vec<Vec<f64>> = reps
        .iter()
        .map(|r| (0..d).map(|j| (r[j] - mu[j]) / sd[j]).collect())
        .collect();

    let mut wz = Matrix::zeros(n_classes, d);
    let mut bz = vec![0.0; n_classes];
    let mut grad_w = Matrix::zeros(n_classes, d);
    let mut grad_b = vec![0.0; n_classes];
    for epoch in 0..cfg.epochs {
        grad_w.as_mut_slice().fill(0.0);
        grad_b.fill(0.0);
        let mut loss = 0.0;
        for (zi, &l) in z.iter().zip(labels) {
            let logits: Vec<f64> = (0..n_classes).map(|c| dot(wz.row(c), zi) + bz[c]).collect();
            let p = softmax(&logits);
            loss -= p[l].max(1e-300).ln();
            for c in 0..n_classes {
                let g = p[c] - if c == l { 1.0 } else { 0.0 };
                grad_b[c] += g;
                crate::linalg::axpy(g, zi, grad_w.row_mut(c));
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("cross-entropy at epoch {epoch}")));
        }
        let s = cfg.step / n;
        crate::linalg::axpy(-s, grad_w.as_slice(), wz.as_mut_slice());
        crate::linalg::axpy(-s, &grad_b, &mut bz);
    }

    let mut weights = Matrix::zeros(n_classes, d);
    let mut bias = bz;
    for c in 0..n_classes {
        for j in 0..d {
            let v = wz[(c, j)] / sd[j];
            weights[(c, j)] = v;
            bias[c] -= v * mu[j];
        }
    }
    let mut head = ClassifierHead::new(weights, bias, class_names.to_vec())?;
    let correct = reps
        .iter()
        .zip(labels)
        .filter(|(r, &l)| head.predict_class(r).map(|p| p == l).unwrap_or(false))
        .count();
    head.train_accuracy = Some(correct as f64 / n);
    Ok(head)
}
