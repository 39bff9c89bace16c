//! Closed-form proximal operators for the structured penalties.
//!
//! All operators act on K×N coefficient matrices whose rows are indexed by
//! dictionary atoms. The composite operators apply the finer structure first
//! (rows or entries) and the class groups second; for nested supports this
//! composition is the exact proximal map of the summed penalty.

use nalgebra::DMatrix;

use crate::error::{invalid, mismatch, Result};
use crate::groups::GroupStructure;

/// Thresholds used inside one ADMM sweep.
///
/// `group_shared` and `row` act on the shared part, `group_unique` and
/// `entry` on the unique part. All are the penalty weight divided by the
/// current penalty parameter μ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxThresholds {
    /// κ1: group-Frobenius threshold on the shared part.
    pub group_shared: f64,
    /// κ2: row-ℓ2 threshold on the shared part.
    pub row: f64,
    /// κ3: group-Frobenius threshold on the unique part.
    pub group_unique: f64,
    /// κ4: elementwise threshold on the unique part.
    pub entry: f64,
}

impl ProxThresholds {
    /// Maps the four penalty weights (row, entry, shared group, unique group)
    /// and μ to thresholds.
    pub fn new(lambda: [f64; 4], mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(invalid(format!(
                "penalty parameter must be positive, got {mu}"
            )));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid(format!(
                "penalty weights must be finite and >= 0, got {lambda:?}"
            )));
        }
        let [row, entry, group_shared, group_unique] = lambda;
        Ok(Self {
            group_shared: group_shared / mu,
            row: row / mu,
            group_unique: group_unique / mu,
            entry: entry / mu,
        })
    }
}

#[inline]
fn shrink_factor(norm: f64, kappa: f64) -> f64 {
    // 0/0 is defined as a zero output
    if norm > kappa {
        1.0 - kappa / norm
    } else {
        0.0
    }
}

fn check_kappa(kappa: f64) {
    debug_assert!(
        kappa >= 0.0 && kappa.is_finite(),
        "threshold must be finite and >= 0"
    );
}

/// Row-wise group soft-thresholding in place.
pub fn prox_row_l2_mut(v: &mut DMatrix<f64>, kappa: f64) {
    check_kappa(kappa);
    if kappa == 0.0 {
        return;
    }
    for j in 0..v.nrows() {
        let norm = v.row(j).norm();
        let s = shrink_factor(norm, kappa);
        v.row_mut(j).scale_mut(s);
    }
}

/// `(1 - κ/‖v_j‖₂)₊ v_j` applied to every row.
pub fn prox_row_l2(v: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    let mut out = v.clone();
    prox_row_l2_mut(&mut out, kappa);
    out
}

/// Entrywise soft-thresholding in place.
pub fn prox_elementwise_l1_mut(v: &mut DMatrix<f64>, kappa: f64) {
    check_kappa(kappa);
    if kappa == 0.0 {
        return;
    }
    for x in v.iter_mut() {
        let a = x.abs();
        *x = if a > kappa {
            x.signum() * (a - kappa)
        } else {
            0.0
        };
    }
}

/// Soft-thresholding `(1 - κ/|v|)₊ v` of every entry.
pub fn prox_elementwise_l1(v: &DMatrix<f64>, kappa: f64) -> DMatrix<f64> {
    let mut out = v.clone();
    prox_elementwise_l1_mut(&mut out, kappa);
    out
}

/// Group soft-thresholding of row blocks in place. Panics on a row-count
/// mismatch; use [`prox_group_frobenius`] for a checked call.
pub fn prox_group_frobenius_mut(v: &mut DMatrix<f64>, gs: &GroupStructure, kappa: f64) {
    check_kappa(kappa);
    assert_eq!(
        v.nrows(),
        gs.num_atoms(),
        "row count must equal group structure size"
    );
    if kappa == 0.0 {
        return;
    }
    for r in gs.ranges() {
        let mut block = v.rows_mut(r.start, r.len());
        let s = shrink_factor(block.norm(), kappa);
        block.scale_mut(s);
    }
}

/// `(1 - κ/‖V_[g]‖_F)₊ V_[g]` for every class block of rows.
pub fn prox_group_frobenius(
    v: &DMatrix<f64>,
    gs: &GroupStructure,
    kappa: f64,
) -> Result<DMatrix<f64>> {
    check_rows(v, gs)?;
    let mut out = v.clone();
    prox_group_frobenius_mut(&mut out, gs, kappa);
    Ok(out)
}

/// Row sparsity then group sparsity (shared-part operator).
pub fn prox_composite_row(
    v: &DMatrix<f64>,
    gs: &GroupStructure,
    kappa_group: f64,
    kappa_row: f64,
) -> Result<DMatrix<f64>> {
    check_rows(v, gs)?;
    let mut out = v.clone();
    prox_row_l2_mut(&mut out, kappa_row);
    prox_group_frobenius_mut(&mut out, gs, kappa_group);
    Ok(out)
}

/// Entry sparsity then group sparsity (unique-part operator).
pub fn prox_composite_elem(
    v: &DMatrix<f64>,
    gs: &GroupStructure,
    kappa_group: f64,
    kappa_entry: f64,
) -> Result<DMatrix<f64>> {
    check_rows(v, gs)?;
    let mut out = v.clone();
    prox_elementwise_l1_mut(&mut out, kappa_entry);
    prox_group_frobenius_mut(&mut out, gs, kappa_group);
    Ok(out)
}

fn check_rows(v: &DMatrix<f64>, gs: &GroupStructure) -> Result<()> {
    if v.nrows() != gs.num_atoms() {
        return Err(mismatch(format!(
            "matrix has {} rows, group structure has {} atoms",
            v.nrows(),
            gs.num_atoms()
        )));
    }
    Ok(())
}

/// ‖V‖_{1,2}: sum of row ℓ2 norms.
pub fn row_l2_norm(v: &DMatrix<f64>) -> f64 {
    (0..v.nrows()).map(|j| v.row(j).norm()).sum()
}

/// ‖V‖_{1,1}: sum of absolute entries.
pub fn l1_norm(v: &DMatrix<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Σ_g ‖V_[g]‖_F over the class blocks of rows.
pub fn group_frobenius_norm(v: &DMatrix<f64>, gs: &GroupStructure) -> f64 {
    gs.ranges().map(|r| v.rows(r.start, r.len()).norm()).sum()
}
