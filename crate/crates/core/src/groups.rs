//! Class-aligned group structure over dictionary atoms.
//!
//! Atoms are partitioned into contiguous, non-overlapping index ranges, one per
//! class, in class order. Group `c` therefore holds the sub-dictionary of class
//! `c`, and every atom belongs to exactly one group.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct GroupStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl GroupStructure {
    /// Builds contiguous groups in the listed order.
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(invalid("group structure needs at least one group"));
        }
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(invalid(format!("group {c} has size 0")));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for &s in sizes {
            offsets.push(total);
            total += s;
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            offsets,
            total,
        })
    }

    /// `classes` groups of `size` atoms each.
    pub fn uniform(classes: usize, size: usize) -> Result<Self> {
        Self::new(&vec![size; classes])
    }

    /// Total number of atoms K.
    pub fn num_atoms(&self) -> usize {
        self.total
    }

    /// Number of groups (classes) C.
    pub fn num_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Size K_c of group `c`.
    pub fn size(&self, c: usize) -> usize {
        self.sizes[c]
    }

    /// Number of atoms outside group `c`.
    pub fn complement_size(&self, c: usize) -> usize {
        self.total - self.sizes[c]
    }

    /// Atom index range of group `c`.
    pub fn range(&self, c: usize) -> Range<usize> {
        self.offsets[c]..self.offsets[c] + self.sizes[c]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_groups()).map(move |c| self.range(c))
    }

    /// Group (class) owning atom `atom`.
    pub fn group_of(&self, atom: usize) -> Result<usize> {
        if atom >= self.total {
            return Err(invalid(format!(
                "atom index {atom} out of range for {} atoms",
                self.total
            )));
        }
        // offsets are sorted; the owning group is the last offset <= atom
        Ok(self.offsets.partition_point(|&o| o <= atom) - 1)
    }

    fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.num_groups() {
            return Err(invalid(format!(
                "class {c} out of range for {} groups",
                self.num_groups()
            )));
        }
        Ok(())
    }

    /// Entries of `v` whose indices fall in group `c`.
    pub fn extract(&self, v: &DVector<f64>, c: usize) -> Result<DVector<f64>> {
        self.check_class(c)?;
        if v.len() != self.total {
            return Err(mismatch(format!(
                "vector has {} entries, group structure has {} atoms",
                v.len(),
                self.total
            )));
        }
        Ok(v.rows(self.offsets[c], self.sizes[c]).into_owned())
    }

    /// Rows of `m` whose indices fall in group `c`.
    pub fn extract_rows(&self, m: &DMatrix<f64>, c: usize) -> Result<DMatrix<f64>> {
        self.check_class(c)?;
        if m.nrows() != self.total {
            return Err(mismatch(format!(
                "matrix has {} rows, group structure has {} atoms",
                m.nrows(),
                self.total
            )));
        }
        Ok(m.rows(self.offsets[c], self.sizes[c]).into_owned())
    }

    /// Columns of `m` (e.g. dictionary atoms) belonging to group `c`.
    pub fn extract_columns(&self, m: &DMatrix<f64>, c: usize) -> Result<DMatrix<f64>> {
        self.check_class(c)?;
        if m.ncols() != self.total {
            return Err(mismatch(format!(
                "matrix has {} columns, group structure has {} atoms",
                m.ncols(),
                self.total
            )));
        }
        Ok(m.columns(self.offsets[c], self.sizes[c]).into_owned())
    }

    /// Columns of `m` outside group `c`, in atom order.
    pub fn complement_columns(&self, m: &DMatrix<f64>, c: usize) -> Result<DMatrix<f64>> {
        self.check_class(c)?;
        if m.ncols() != self.total {
            return Err(mismatch("column count does not match group structure"));
        }
        let keep: Vec<usize> = (0..self.total)
            .filter(|j| !self.range(c).contains(j))
            .collect();
        Ok(m.select_columns(&keep))
    }

    /// Group structure with group `c` removed.
    pub fn without(&self, c: usize) -> Result<Self> {
        self.check_class(c)?;
        let sizes: Vec<usize> = self
            .sizes
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != c)
            .map(|(_, &s)| s)
            .collect();
        Self::new(&sizes)
    }
}

impl TryFrom<Vec<usize>> for GroupStructure {
    type Error = crate::Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(&sizes)
    }
}

impl From<GroupStructure> for Vec<usize> {
    fn from(gs: GroupStructure) -> Self {
        gs.sizes
    }
}
