//! Ridge-regression classifier on sparse codes and the SDI metric.

use crate::error::{invalid, mismatch, Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

/// C×N one-hot label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(DMatrix<f64>);

impl LabelMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.nrows()
    }
}

/// One-hot encodes 0-based `labels` over `num_classes` classes.
pub fn build_label_matrix(labels: &[usize], num_classes: usize) -> Result<LabelMatrix> {
    if num_classes == 0 {
        return Err(invalid("need at least one class"));
    }
    let mut l = DMatrix::zeros(num_classes, labels.len());
    for (i, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(invalid(format!(
                "label {c} out of range for {num_classes} classes"
            )));
        }
        l[(c, i)] = 1.0;
    }
    Ok(LabelMatrix(l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// C×K weights.
    pub w: DMatrix<f64>,
    pub eta: f64,
}

/// Ridge parameter relative to the average code energy per atom:
/// `1e-2 · tr(AAᵀ)/K`, floored to stay positive.
pub fn default_eta(a: &DMatrix<f64>) -> f64 {
    let k = a.nrows().max(1) as f64;
    let rel = 1e-2 * a.norm_squared() / k;
    if rel > 0.0 {
        rel
    } else {
        1e-2
    }
}

/// Solves `(AAᵀ + ηI) Wᵀ = ALᵀ`.
pub fn fit(a: &DMatrix<f64>, labels: &LabelMatrix, eta: f64) -> Result<LinearClassifier> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    let l = labels.matrix();
    if a.ncols() != l.ncols() {
        return Err(mismatch(format!(
            "{} codes for {} labels",
            a.ncols(),
            l.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("codes contain non-finite values"));
    }
    let k = a.nrows();
    let mut system = a * a.transpose();
    for i in 0..k {
        system[(i, i)] += eta;
    }
    let chol = Cholesky::new(system).ok_or_else(|| Error::Numerical {
        iteration: 0,
        reason: "ridge system is not positive definite".into(),
    })?;
    let wt = chol.solve(&(a * l.transpose()));
    Ok(LinearClassifier {
        w: wt.transpose(),
        eta,
    })
}

impl LinearClassifier {
    pub fn num_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_atoms(&self) -> usize {
        self.w.ncols()
    }

    /// Argmax of `W a`; the lowest class index wins ties.
    pub fn classify(&self, a: &DVector<f64>) -> Result<usize> {
        if a.len() != self.w.ncols() {
            return Err(mismatch(format!(
                "code length {} but classifier expects {}",
                a.len(),
                self.w.ncols()
            )));
        }
        Ok(argmax(&(&self.w * a)))
    }

    /// Labels for every column of `a`.
    pub fn classify_all(&self, a: &DMatrix<f64>) -> Result<Vec<usize>> {
        if a.nrows() != self.w.ncols() {
            return Err(mismatch(format!(
                "codes have {} rows but classifier expects {}",
                a.nrows(),
                self.w.ncols()
            )));
        }
        let scores = &self.w * a;
        Ok(scores
            .column_iter()
            .map(|c| argmax(&c.into_owned()))
            .collect())
    }
}

fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of equal entries.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(mismatch("prediction and truth lengths differ"));
    }
    if truth.is_empty() {
        return Err(invalid("accuracy of an empty set"));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Sparse code discrimination index `(tr S_w − tr S_b)/N`; lower is better.
pub fn sdi(a: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if a.ncols() != labels.len() {
        return Err(mismatch(format!(
            "{} codes for {} labels",
            a.ncols(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(invalid("sdi of an empty code set"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let k = a.nrows();
    let mut sums = DMatrix::<f64>::zeros(k, classes);
    let mut counts = vec![0usize; classes];
    for (i, &c) in labels.iter().enumerate() {
        let mut col = sums.column_mut(c);
        col += a.column(i);
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(invalid(format!("class {} has no codes", c + 1)));
    }
    let n = labels.len() as f64;
    let mean = sums.column_sum() / n;
    let mut means = sums;
    for (c, mut col) in means.column_iter_mut().enumerate() {
        col /= counts[c] as f64;
    }
    let within: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| (a.column(i) - means.column(c)).norm_squared())
        .sum();
    let between: f64 = means
        .column_iter()
        .zip(&counts)
        .map(|(m, &nc)| nc as f64 * (m - &mean).norm_squared())
        .sum();
    Ok((within - between) / n)
}
