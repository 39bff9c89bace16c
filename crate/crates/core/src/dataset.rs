use nalgebra::DMatrix;

use crate::error::{invalid, mismatch, Result};

/// Column-sample data matrix with one class label per column.
///
/// Labels are 0-based class indices; file formats store them 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    data: DMatrix<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(data: DMatrix<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != data.ncols() {
            return Err(mismatch(format!(
                "{} labels for {} data columns",
                labels.len(),
                data.ncols()
            )));
        }
        if num_classes == 0 {
            return Err(invalid("dataset needs at least one class"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(invalid(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("data contains non-finite values"));
        }
        Ok(Self {
            data,
            labels,
            num_classes,
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// Column indices of class `c`, in data order.
    pub fn class_indices(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The M×N_c block of class `c` samples.
    pub fn class_data(&self, c: usize) -> DMatrix<f64> {
        self.data.select_columns(&self.class_indices(c))
    }

    /// Sub-dataset holding the given columns.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select_columns(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}
