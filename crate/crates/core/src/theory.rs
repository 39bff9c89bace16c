//! Numerical checks of the subspace recovery conditions: independence and
//! disjointness of subspace families, principal angles, the sufficient
//! coherence condition for block recovery, the exact disjoint-case
//! condition, and the block-support and subspace-consistency properties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{invalid, mismatch, Error, Result};
use crate::groups::GroupStructure;
use crate::sparse_coding::{Encoder, Fidelity, SolverConfig};

/// Singular values below `RANK_TOL · σ_max` count as zero.
pub const RANK_TOL: f64 = 1e-8;

const ORTHONORMAL_TOL: f64 = 1e-10;

/// One orthonormal basis per class subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceFamily {
    bases: Vec<DMatrix<f64>>,
}

impl SubspaceFamily {
    pub fn new(bases: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = bases.first() else {
            return Err(invalid("subspace family is empty"));
        };
        let m = first.nrows();
        for (c, b) in bases.iter().enumerate() {
            if b.nrows() != m {
                return Err(mismatch(format!(
                    "basis {c} has ambient dimension {}, expected {m}",
                    b.nrows()
                )));
            }
            if b.ncols() == 0 {
                return Err(invalid(format!("basis {c} is empty")));
            }
            check_orthonormal(b)?;
        }
        Ok(Self { bases })
    }

    /// Orthonormal bases for the spans of each sub-dictionary.
    pub fn from_dictionary(dict: &Dictionary) -> Result<Self> {
        let bases = (0..dict.groups().num_groups())
            .map(|c| dict.sub_dictionary(c).map(|d| orthonormal_basis(&d)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(c) = bases.iter().position(|b| b.ncols() == 0) {
            return Err(invalid(format!(
                "sub-dictionary {} spans only the origin",
                c + 1
            )));
        }
        Self::new(bases)
    }

    pub fn bases(&self) -> &[DMatrix<f64>] {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.bases[0].nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.ncols()).collect()
    }

    /// ‖(I − B_c B_cᵀ) v‖₂ for a vector given as a column of `m`.
    pub fn residual(&self, c: usize, v: nalgebra::DVectorView<'_, f64>) -> f64 {
        let b = &self.bases[c];
        (v - b * (b.tr_mul(&v))).norm()
    }
}

fn check_orthonormal(b: &DMatrix<f64>) -> Result<()> {
    let gram = b.tr_mul(b);
    let err = (gram - DMatrix::identity(b.ncols(), b.ncols())).amax();
    if err > ORTHONORMAL_TOL {
        return Err(invalid(format!(
            "basis is not orthonormal (max |BᵀB − I| = {err:e})"
        )));
    }
    Ok(())
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Count of singular values above `RANK_TOL · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values(m);
    let max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// Orthonormal basis of the column span, truncated at the numerical rank.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = &svd.singular_values;
    let max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    let keep: Vec<usize> = (0..sv.len())
        .filter(|&i| max > 0.0 && sv[i] > RANK_TOL * max)
        .collect();
    u.select_columns(&keep)
}

/// Cosine of the smallest principal angle, σ_max(B1ᵀB2), clamped to [0, 1].
pub fn principal_angle_cos(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> Result<f64> {
    if b1.nrows() != b2.nrows() {
        return Err(mismatch("bases live in different ambient dimensions"));
    }
    check_orthonormal(b1)?;
    check_orthonormal(b2)?;
    Ok(max_cos(b1, b2))
}

fn max_cos(b1: &DMatrix<f64>, b2: &DMatrix<f64>) -> f64 {
    singular_values(&b1.tr_mul(b2))
        .into_iter()
        .fold(0.0f64, f64::max)
        .clamp(0.0, 1.0)
}

/// dim(⊕S_c) = Σ dim(S_c).
pub fn check_independent(fam: &SubspaceFamily) -> bool {
    let total: usize = fam.dims().iter().sum();
    if total > fam.ambient_dim() {
        return false;
    }
    let refs: Vec<&DMatrix<f64>> = fam.bases.iter().collect();
    numerical_rank(&hstack(&refs)) == total
}

/// Every pair of subspaces meets only at the origin.
pub fn check_disjoint(fam: &SubspaceFamily) -> bool {
    let n = fam.len();
    (0..n).all(|i| {
        (i + 1..n).all(|j| {
            let (bi, bj) = (&fam.bases[i], &fam.bases[j]);
            numerical_rank(&hstack(&[bi, bj])) == bi.ncols() + bj.ncols()
        })
    })
}

fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        out.columns_mut(at, p.ncols()).copy_from(p);
        at += p.ncols();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCondition {
    /// 1-based class label.
    pub class: usize,
    pub sigma_min: f64,
    pub max_cos: f64,
    pub rhs: f64,
    pub margin: f64,
    pub satisfied: bool,
    /// False when the sub-dictionary is not full column rank.
    pub full_rank: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub lambda: f64,
    pub classes: Vec<ClassCondition>,
}

impl ConditionReport {
    pub fn all_satisfied(&self) -> bool {
        self.classes.iter().all(|c| c.satisfied)
    }

    pub fn min_margin(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates, per class c,
/// `σ_min(D_c) > (λ + (1−λ)√K_c)·max cos θ / (λ/√K_{−c} + (1−λ))`.
///
/// Principal angles come from `family` when given, otherwise from
/// orthonormal bases of the sub-dictionaries.
pub fn coherence_report(
    dict: &Dictionary,
    family: Option<&SubspaceFamily>,
    lambda: f64,
) -> Result<ConditionReport> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let gs = dict.groups();
    let owned;
    let fam = match family {
        Some(f) => {
            if f.len() != gs.num_groups() || f.ambient_dim() != dict.dim() {
                return Err(mismatch("subspace family does not match dictionary"));
            }
            f
        }
        None => {
            owned = SubspaceFamily::from_dictionary(dict)?;
            &owned
        }
    };
    let k = gs.num_atoms();
    let mut classes = Vec::with_capacity(gs.num_groups());
    for c in 0..gs.num_groups() {
        let dc = dict.sub_dictionary(c)?;
        let sv = singular_values(&dc);
        let kc = gs.size(c);
        let sigma_max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
        let sigma_min = if kc > dict.dim() {
            0.0
        } else {
            sv.iter().fold(f64::INFINITY, |a, &b| a.min(b))
        };
        let full_rank = kc <= dict.dim() && sigma_min > RANK_TOL * sigma_max;
        let cos = (0..gs.num_groups())
            .filter(|&o| o != c)
            .map(|o| max_cos(&fam.bases[c], &fam.bases[o]))
            .fold(0.0f64, f64::max);
        let rhs = if cos == 0.0 {
            0.0
        } else {
            let numer = lambda + (1.0 - lambda) * (kc as f64).sqrt();
            let denom = lambda / ((k - kc) as f64).sqrt() + (1.0 - lambda);
            numer * cos / denom
        };
        let margin = sigma_min - rhs;
        classes.push(ClassCondition {
            class: c + 1,
            sigma_min,
            max_cos: cos,
            rhs,
            margin,
            satisfied: margin > 0.0,
            full_rank,
        });
    }
    Ok(ConditionReport { lambda, classes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyComparison {
    /// Penalty of the minimal representation using only D_c.
    pub lhs: f64,
    /// Penalty of the minimal representation avoiding D_c.
    pub rhs: f64,
    pub holds: bool,
}

/// Relative least-squares residual above which `x` counts as outside a span.
const FEASIBILITY_TOL: f64 = 1e-8;

/// Compares the minimal `λ·Σ_g‖z_[g]‖₂ + (1−λ)‖z‖₁` over exact
/// representations of `x` by `D_c` against the same over `D_{−c}`.
///
/// `x` should lie in `S_c ∩ ⊕_{c'≠c} S_{c'}`; a system that cannot represent
/// `x` is reported as [`Error::Infeasible`].
pub fn compare_penalties(
    x: &DMatrix<f64>,
    dict: &Dictionary,
    class: usize,
    lambda: f64,
) -> Result<PenaltyComparison> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if x.ncols() != 1 || x.nrows() != dict.dim() {
        return Err(mismatch(
            "x must be a single column of the dictionary's dimension",
        ));
    }
    if x.norm() == 0.0 {
        return Err(invalid("x must be nonzero"));
    }
    let gs = dict.groups();
    if class >= gs.num_groups() || gs.num_groups() < 2 {
        return Err(invalid("class out of range or no complement groups"));
    }
    let own = Dictionary::new(
        dict.sub_dictionary(class)?,
        GroupStructure::new(&[gs.size(class)])?,
    )?;
    let rest = Dictionary::new(dict.complement(class)?, gs.without(class)?)?;
    let lhs = min_penalty(x, &own, lambda)?;
    let rhs = min_penalty(x, &rest, lambda)?;
    Ok(PenaltyComparison {
        lhs,
        rhs,
        holds: lhs < rhs,
    })
}

fn min_penalty(x: &DMatrix<f64>, dict: &Dictionary, lambda: f64) -> Result<f64> {
    let d = dict.atoms();
    let ls = d
        .clone()
        .svd(true, true)
        .solve(x, RANK_TOL)
        .map_err(|e| Error::Numerical {
            iteration: 0,
            reason: e.to_string(),
        })?;
    let rel = (x - d * &ls).norm() / x.norm();
    if rel > FEASIBILITY_TOL {
        return Err(Error::Infeasible(format!(
            "x is not in the span of the sub-dictionary (relative residual {rel:e})"
        )));
    }
    let cfg = SolverConfig {
        tol: 1e-11,
        max_iters: 20_000,
        fidelity: Fidelity::Exact,
        shared_part: false,
        ..SolverConfig::default()
    };
    let code = Encoder::new(dict)?.hilasso_column(x, lambda, 1.0 - lambda, &cfg)?;
    let z = code.unique;
    let group: f64 = dict
        .groups()
        .ranges()
        .map(|r| z.rows(r.start, r.len()).norm())
        .sum();
    let l1: f64 = z.iter().map(|v| v.abs()).sum();
    Ok(lambda * group + (1.0 - lambda) * l1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSupport {
    pub passed: bool,
    /// Largest ‖a_{−c}‖₂ / ‖a‖₂ over columns with a nonzero code.
    pub max_off_group: f64,
    /// Columns violating the block condition.
    pub failures: usize,
}

/// Checks that each column's code lives in its label's group:
/// `‖a_{−c}‖₂ ≤ tol·‖a‖₂` and `a_c ≠ 0`.
pub fn verify_block_support(
    a: &DMatrix<f64>,
    labels: &[usize],
    gs: &GroupStructure,
    tol: f64,
) -> Result<BlockSupport> {
    if a.nrows() != gs.num_atoms() || a.ncols() != labels.len() {
        return Err(mismatch(
            "codes, labels and group structure disagree in size",
        ));
    }
    let mut out = BlockSupport {
        passed: true,
        max_off_group: 0.0,
        failures: 0,
    };
    for (i, &c) in labels.iter().enumerate() {
        if c >= gs.num_groups() {
            return Err(invalid(format!("label {c} out of range")));
        }
        let col = a.column(i);
        let r = gs.range(c);
        let inside = col.rows(r.start, r.len()).norm();
        let total = col.norm();
        let off = col
            .iter()
            .enumerate()
            .filter(|(j, _)| !r.contains(j))
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt();
        if total > 0.0 {
            out.max_off_group = out.max_off_group.max(off / total);
        }
        if inside == 0.0 || off > tol * total {
            out.failures += 1;
            out.passed = false;
        }
    }
    Ok(out)
}

/// Out-of-subspace residual ‖(I − B_c B_cᵀ) d_j‖₂ of every atom, where c is
/// the atom's group.
pub fn subspace_residuals(dict: &Dictionary, fam: &SubspaceFamily) -> Result<Vec<f64>> {
    let gs = dict.groups();
    if fam.len() != gs.num_groups() || fam.ambient_dim() != dict.dim() {
        return Err(mismatch("subspace family does not match dictionary"));
    }
    (0..dict.num_atoms())
        .map(|j| Ok(fam.residual(gs.group_of(j)?, dict.atoms().column(j))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub passed: bool,
    pub max_residual_before: f64,
    pub max_residual_after: f64,
}

/// Every atom that was within `tol` of its class subspace before the
/// update is still within `tol` after it.
pub fn verify_subspace_consistency(
    before: &Dictionary,
    after: &Dictionary,
    fam: &SubspaceFamily,
    tol: f64,
) -> Result<Consistency> {
    if before.groups() != after.groups() || before.dim() != after.dim() {
        return Err(mismatch("dictionaries differ in shape"));
    }
    let rb = subspace_residuals(before, fam)?;
    let ra = subspace_residuals(after, fam)?;
    let passed = rb.iter().zip(&ra).all(|(&b, &a)| b > tol || a <= tol);
    Ok(Consistency {
        passed,
        max_residual_before: rb.iter().copied().fold(0.0, f64::max),
        max_residual_after: ra.iter().copied().fold(0.0, f64::max),
    })
}
