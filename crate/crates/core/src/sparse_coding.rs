//! Structured sparse coding.
//!
//! [`Encoder`] runs the alternating-direction iteration for the group
//! structured dirty model: a shared part `A` with row and group sparsity and a
//! unique part `B` with entry and group sparsity, coupled through the
//! reconstruction `X ≈ D(A + B)`. HiLasso is the same iteration with the
//! shared part switched off, solved column by column.
//!
//! Two fidelity modes are supported:
//!
//! * [`Fidelity::Exact`] enforces `X = D(A + B)` as a constraint with its own
//!   multiplier, and grows the penalty `μ ← min(μ_max, ρμ)` every sweep.
//! * [`Fidelity::Penalized`] keeps `½‖X − D(A + B)‖²_F` in the objective: the
//!   reconstruction multiplier stays at zero and μ stays at 1, which makes
//!   the same linear system `(DᵀD + I)` the exact ADMM update for the
//!   penalized problem.
//!
//! Returned codes are the proximal-side iterates (`U`, `V`), which carry
//! exact zeros; they differ from the linear-system iterates by at most the
//! reported residuals.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{invalid, mismatch, Error, Result};
use crate::groups::GroupStructure;
use crate::prox::{
    group_frobenius_norm, l1_norm, prox_elementwise_l1_mut, prox_group_frobenius_mut,
    prox_row_l2_mut, row_l2_norm, ProxThresholds,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Exact,
    Penalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Row-sparsity weight on the shared part (‖A‖_{1,2}).
    pub lambda1: f64,
    /// Entry-sparsity weight on the unique part (‖B‖_{1,1}).
    pub lambda2: f64,
    /// Group weight on the shared part.
    pub lambda3: f64,
    /// Group weight on the unique part.
    pub lambda4: f64,
    pub mu0: f64,
    pub rho: f64,
    pub mu_max: f64,
    pub max_iters: usize,
    /// Relative tolerance: residuals are compared against `tol · ‖X‖_F`.
    pub tol: f64,
    pub fidelity: Fidelity,
    /// When false the shared part is pinned to zero.
    pub shared_part: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.1,
            lambda4: 0.1,
            mu0: 1.0,
            rho: 1.1,
            mu_max: 1e6,
            max_iters: 500,
            tol: 1e-5,
            fidelity: Fidelity::Exact,
            shared_part: true,
        }
    }
}

impl SolverConfig {
    /// Sets all four penalty weights to `lambda`.
    pub fn with_shared_lambda(mut self, lambda: f64) -> Self {
        self.lambda1 = lambda;
        self.lambda2 = lambda;
        self.lambda3 = lambda;
        self.lambda4 = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid(format!(
                "penalty weights must be finite and >= 0: {lambdas:?}"
            )));
        }
        if !(self.mu0.is_finite() && self.mu0 > 0.0) {
            return Err(invalid("mu0 must be positive"));
        }
        if !(self.rho.is_finite() && self.rho > 1.0) {
            return Err(invalid("rho must be greater than 1"));
        }
        if !(self.mu_max.is_finite() && self.mu_max >= self.mu0) {
            return Err(invalid("mu_max must be at least mu0"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be positive"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        Ok(())
    }

    fn weights(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }
}

/// Result of one dirty-model solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DirtyCode {
    /// Shared part A (K×N).
    pub shared: DMatrix<f64>,
    /// Unique part B (K×N).
    pub unique: DMatrix<f64>,
    pub iterations: usize,
    /// ‖A − U‖_F, ‖B − V‖_F, ‖X − D(A + B)‖_F at exit.
    pub residuals: [f64; 3],
    /// False when the solve stopped at `max_iters`.
    pub converged: bool,
}

impl DirtyCode {
    pub fn combined(&self) -> DMatrix<f64> {
        &self.shared + &self.unique
    }
}

/// Breakdown of a coding objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// ½‖X − D·code‖²_F
    pub fidelity: f64,
    /// Penalties on the shared part.
    pub shared_reg: f64,
    /// Penalties on the unique part (all penalties for single-part codes).
    pub unique_reg: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.fidelity + self.shared_reg + self.unique_reg
    }
}

impl std::ops::Add for ObjectiveTerms {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            fidelity: self.fidelity + rhs.fidelity,
            shared_reg: self.shared_reg + rhs.shared_reg,
            unique_reg: self.unique_reg + rhs.unique_reg,
        }
    }
}

/// Solver state bound to one dictionary: caches DᵀD and the Cholesky factor
/// of DᵀD + I, shared by every solve against that dictionary.
pub struct Encoder<'a> {
    dict: &'a Dictionary,
    gram: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

struct Problem<'x> {
    x: &'x DMatrix<f64>,
    /// row, entry, shared-group, unique-group
    weights: [f64; 4],
    shared: bool,
}

impl<'a> Encoder<'a> {
    pub fn new(dict: &'a Dictionary) -> Result<Self> {
        let d = dict.atoms();
        let gram = d.tr_mul(d);
        let k = gram.nrows();
        let factor =
            Cholesky::new(&gram + DMatrix::identity(k, k)).ok_or_else(|| Error::Numerical {
                iteration: 0,
                reason: "DᵀD + I is not positive definite".into(),
            })?;
        Ok(Self { dict, gram, factor })
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.dict
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.dict.dim() {
            return Err(mismatch(format!(
                "data has dimension {}, dictionary atoms have dimension {}",
                x.nrows(),
                self.dict.dim()
            )));
        }
        Ok(())
    }

    /// Dirty-model solve on one class block, without group reconciliation.
    pub fn dirty(&self, x: &DMatrix<f64>, cfg: &SolverConfig) -> Result<DirtyCode> {
        cfg.validate()?;
        self.check_input(x)?;
        self.admm(
            &Problem {
                x,
                weights: cfg.weights(),
                shared: cfg.shared_part,
            },
            cfg,
        )
    }

    /// HiLasso solve of a single column (M×1) with the shared part disabled.
    pub fn hilasso_column(
        &self,
        x: &DMatrix<f64>,
        lambda_group: f64,
        lambda_entry: f64,
        cfg: &SolverConfig,
    ) -> Result<DirtyCode> {
        self.check_input(x)?;
        self.admm(
            &Problem {
                x,
                weights: [0.0, lambda_entry, 0.0, lambda_group],
                shared: false,
            },
            cfg,
        )
    }

    fn admm(&self, p: &Problem<'_>, cfg: &SolverConfig) -> Result<DirtyCode> {
        let d = self.dict.atoms();
        let gs = self.dict.groups();
        let x = p.x;
        let (k, n) = (self.gram.nrows(), x.ncols());
        let exact = cfg.fidelity == Fidelity::Exact;

        let dtx = d.tr_mul(x);
        let x_norm = x.norm();
        let threshold = cfg.tol * x_norm;

        let mut a = DMatrix::<f64>::zeros(k, n);
        let mut b = DMatrix::<f64>::zeros(k, n);
        let mut u = DMatrix::<f64>::zeros(k, n);
        let mut v = DMatrix::<f64>::zeros(k, n);
        let mut y1 = DMatrix::<f64>::zeros(k, n);
        let mut y2 = DMatrix::<f64>::zeros(k, n);
        let mut y3 = DMatrix::<f64>::zeros(x.nrows(), n);
        let mut base = dtx.clone();
        let mut rhs = DMatrix::<f64>::zeros(k, n);
        let mut recon = DMatrix::<f64>::zeros(x.nrows(), n);
        let mut prev = DMatrix::<f64>::zeros(k, n);
        let mut mu = if exact { cfg.mu0 } else { 1.0 };

        let mut residuals = [0.0; 3];
        for iter in 1..=cfg.max_iters {
            let th = ProxThresholds::new(p.weights, mu)?;
            // base = Dᵀ(X + Y3)
            if exact {
                base.copy_from(&dtx);
                base.gemm_tr(1.0, d, &y3, 1.0);
            }
            let mut dual_change = 0.0f64;

            if p.shared {
                if !exact {
                    prev.copy_from(&u);
                }
                u.copy_from(&a);
                u += &y1;
                prox_row_l2_mut(&mut u, th.row);
                prox_group_frobenius_mut(&mut u, gs, th.group_shared);
                if !exact {
                    dual_change = dual_change.max(difference_norm(&u, &prev));
                }

                rhs.copy_from(&base);
                rhs.gemm(-1.0, &self.gram, &b, 1.0);
                rhs += &u;
                rhs -= &y1;
                self.factor.solve_mut(&mut rhs);
                a.copy_from(&rhs);
            }

            if !exact {
                prev.copy_from(&v);
            }
            v.copy_from(&b);
            v += &y2;
            prox_elementwise_l1_mut(&mut v, th.entry);
            prox_group_frobenius_mut(&mut v, gs, th.group_unique);
            if !exact {
                dual_change = dual_change.max(difference_norm(&v, &prev));
            }

            rhs.copy_from(&base);
            if p.shared {
                rhs.gemm(-1.0, &self.gram, &a, 1.0);
            }
            rhs += &v;
            rhs -= &y2;
            self.factor.solve_mut(&mut rhs);
            b.copy_from(&rhs);

            // multiplier updates
            recon.copy_from(x);
            rhs.copy_from(&a);
            rhs += &b;
            recon.gemm(-1.0, d, &rhs, 1.0);
            let r1 = if p.shared {
                accumulate_difference(&mut y1, &a, &u)
            } else {
                0.0
            };
            let r2 = accumulate_difference(&mut y2, &b, &v);
            if exact {
                y3 += &recon;
            }
            residuals = [r1, r2, recon.norm()];
            if residuals.iter().any(|r| !r.is_finite()) {
                return Err(Error::Numerical {
                    iteration: iter,
                    reason: "non-finite iterate".into(),
                });
            }

            let converged = if exact {
                residuals.iter().all(|&r| r <= threshold)
            } else {
                residuals[0].max(residuals[1]).max(dual_change) <= threshold
            };
            if converged {
                return Ok(DirtyCode {
                    shared: u,
                    unique: v,
                    iterations: iter,
                    residuals,
                    converged: true,
                });
            }

            if exact {
                let next = (cfg.rho * mu).min(cfg.mu_max);
                // keep Y = Ŷ/μ for the multiplier Ŷ under the new μ
                let scale = mu / next;
                if scale != 1.0 {
                    y1.scale_mut(scale);
                    y2.scale_mut(scale);
                    y3.scale_mut(scale);
                }
                mu = next;
            }
        }
        Ok(DirtyCode {
            shared: u,
            unique: v,
            iterations: cfg.max_iters,
            residuals,
            converged: false,
        })
    }
}

/// `y += a − b`, returning ‖a − b‖_F.
fn accumulate_difference(y: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut sq = 0.0;
    for ((y, a), b) in y.iter_mut().zip(a.iter()).zip(b.iter()) {
        let r = a - b;
        *y += r;
        sq += r * r;
    }
    sq.sqrt()
}

fn difference_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Group-structured dirty model coding of one class block `X_c`.
///
/// The group selections of the two parts are reconciled afterwards (see
/// [`reconcile_group_selection`]) whenever the shared part is enabled.
pub fn gddl_encode(x: &DMatrix<f64>, dict: &Dictionary, cfg: &SolverConfig) -> Result<DirtyCode> {
    let enc = Encoder::new(dict)?;
    let code = enc.dirty(x, cfg)?;
    Ok(if cfg.shared_part {
        reconcile_group_selection(code, dict.groups())
    } else {
        code
    })
}

/// Codes every column as its own single-task dirty-model problem and
/// reconciles each one. Used for test-time coding where labels are unknown.
pub fn gddl_encode_columns(
    x: &DMatrix<f64>,
    dict: &Dictionary,
    cfg: &SolverConfig,
) -> Result<DirtyCode> {
    let enc = Encoder::new(dict)?;
    cfg.validate()?;
    enc.check_input(x)?;
    let cols: Vec<DirtyCode> = (0..x.ncols())
        .into_par_iter()
        .map(|i| {
            let col = x.columns(i, 1).into_owned();
            let code = enc.dirty(&col, cfg)?;
            Ok(if cfg.shared_part {
                reconcile_group_selection(code, dict.groups())
            } else {
                code
            })
        })
        .collect::<Result<_>>()?;
    Ok(stack_columns(dict.num_atoms(), &cols))
}

fn stack_columns(k: usize, cols: &[DirtyCode]) -> DirtyCode {
    let n = cols.len();
    let mut shared = DMatrix::zeros(k, n);
    let mut unique = DMatrix::zeros(k, n);
    let mut sq = [0.0; 3];
    for (i, c) in cols.iter().enumerate() {
        shared.set_column(i, &c.shared.column(0));
        unique.set_column(i, &c.unique.column(0));
        for (s, r) in sq.iter_mut().zip(c.residuals) {
            *s += r * r;
        }
    }
    DirtyCode {
        shared,
        unique,
        iterations: cols.iter().map(|c| c.iterations).max().unwrap_or(0),
        residuals: sq.map(f64::sqrt),
        converged: cols.iter().all(|c| c.converged),
    }
}

/// Forces the unique part into the group chosen by the shared part.
///
/// The winning group maximizes ‖A_[g]‖_F, lowest index on exact ties. When
/// the shared part is identically zero the unique part's own dominant group
/// is kept instead.
pub fn reconcile_group_selection(mut code: DirtyCode, gs: &GroupStructure) -> DirtyCode {
    let winner = dominant_group(&code.shared, gs).or_else(|| dominant_group(&code.unique, gs));
    if let Some(w) = winner {
        for (g, r) in gs.ranges().enumerate() {
            if g != w {
                code.unique.rows_mut(r.start, r.len()).fill(0.0);
            }
        }
    }
    code
}

/// Group with the largest Frobenius block norm; `None` if all blocks are zero.
pub(crate) fn dominant_group(m: &DMatrix<f64>, gs: &GroupStructure) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (g, r) in gs.ranges().enumerate() {
        let norm = m.rows(r.start, r.len()).norm();
        if norm > 0.0 && best.is_none_or(|(_, b)| norm > b) {
            best = Some((g, norm));
        }
    }
    best.map(|(g, _)| g)
}

/// HiLasso coding, each column solved independently (in parallel).
///
/// `lambda_group` weights Σ_g ‖a_[g]‖₂ and `lambda_entry` weights ‖a‖₁.
pub fn hilasso_encode(
    x: &DMatrix<f64>,
    dict: &Dictionary,
    lambda_group: f64,
    lambda_entry: f64,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    let enc = Encoder::new(dict)?;
    hilasso_encode_with(&enc, x, lambda_group, lambda_entry, cfg).map(|c| c.unique)
}

/// [`hilasso_encode`] against a prepared encoder, keeping solver diagnostics.
pub fn hilasso_encode_with(
    enc: &Encoder<'_>,
    x: &DMatrix<f64>,
    lambda_group: f64,
    lambda_entry: f64,
    cfg: &SolverConfig,
) -> Result<DirtyCode> {
    cfg.validate()?;
    enc.check_input(x)?;
    for l in [lambda_group, lambda_entry] {
        if !(l.is_finite() && l >= 0.0) {
            return Err(invalid(format!(
                "penalty weights must be finite and >= 0, got {l}"
            )));
        }
    }
    let cols: Vec<DirtyCode> = (0..x.ncols())
        .into_par_iter()
        .map(|i| {
            let col = x.columns(i, 1).into_owned();
            enc.hilasso_column(&col, lambda_group, lambda_entry, cfg)
        })
        .collect::<Result<_>>()?;
    Ok(stack_columns(enc.dict.num_atoms(), &cols))
}

/// ℓ1 coding by iterative soft-thresholding with step 1/‖D‖₂².
///
/// Stops when the relative change of the code matrix drops below `cfg.tol`
/// or after `cfg.max_iters` sweeps.
pub fn lasso_encode(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    lambda: f64,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    if x.nrows() != d.nrows() {
        return Err(mismatch("data and dictionary dimensions differ"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(invalid(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    cfg.validate()?;
    let lipschitz = d
        .singular_values()
        .iter()
        .fold(0.0f64, |m, &s| m.max(s))
        .powi(2);
    let mut a = DMatrix::<f64>::zeros(d.ncols(), x.ncols());
    if lipschitz == 0.0 {
        return Ok(a);
    }
    let step = 1.0 / lipschitz;
    let gram = d.tr_mul(d);
    let dtx = d.tr_mul(x);
    let mut grad = DMatrix::<f64>::zeros(d.ncols(), x.ncols());
    for iter in 1..=cfg.max_iters {
        grad.copy_from(&dtx);
        grad.gemm(1.0, &gram, &a, -1.0);
        let mut next = &a - &grad * step;
        prox_elementwise_l1_mut(&mut next, lambda * step);
        let change = (&next - &a).norm();
        if !change.is_finite() {
            return Err(Error::Numerical {
                iteration: iter,
                reason: "non-finite iterate".into(),
            });
        }
        let scale = next.norm();
        a = next;
        if change <= cfg.tol * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(a)
}

fn check_code_shape(x: &DMatrix<f64>, d: &DMatrix<f64>, code: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != d.nrows() || code.nrows() != d.ncols() || code.ncols() != x.ncols() {
        return Err(mismatch(format!(
            "inconsistent shapes: X {}x{}, D {}x{}, code {}x{}",
            x.nrows(),
            x.ncols(),
            d.nrows(),
            d.ncols(),
            code.nrows(),
            code.ncols()
        )));
    }
    Ok(())
}

/// Group-structured dirty model objective for one class block.
pub fn gddl_objective(
    x: &DMatrix<f64>,
    dict: &Dictionary,
    shared: &DMatrix<f64>,
    unique: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<ObjectiveTerms> {
    let d = dict.atoms();
    check_code_shape(x, d, shared)?;
    check_code_shape(x, d, unique)?;
    let gs = dict.groups();
    let resid = x - d * (shared + unique);
    Ok(ObjectiveTerms {
        fidelity: 0.5 * resid.norm_squared(),
        shared_reg: cfg.lambda1 * row_l2_norm(shared)
            + cfg.lambda3 * group_frobenius_norm(shared, gs),
        unique_reg: cfg.lambda2 * l1_norm(unique) + cfg.lambda4 * group_frobenius_norm(unique, gs),
    })
}

/// HiLasso objective summed over columns.
pub fn hilasso_objective(
    x: &DMatrix<f64>,
    dict: &Dictionary,
    code: &DMatrix<f64>,
    lambda_group: f64,
    lambda_entry: f64,
) -> Result<ObjectiveTerms> {
    let d = dict.atoms();
    check_code_shape(x, d, code)?;
    let gs = dict.groups();
    let resid = x - d * code;
    let group: f64 = (0..code.ncols())
        .map(|i| {
            gs.ranges()
                .map(|r| code.view((r.start, i), (r.len(), 1)).norm())
                .sum::<f64>()
        })
        .sum();
    Ok(ObjectiveTerms {
        fidelity: 0.5 * resid.norm_squared(),
        shared_reg: 0.0,
        unique_reg: lambda_group * group + lambda_entry * l1_norm(code),
    })
}

/// ½‖X − DA‖²_F + λ‖A‖₁.
pub fn lasso_objective(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    code: &DMatrix<f64>,
    lambda: f64,
) -> Result<ObjectiveTerms> {
    check_code_shape(x, d, code)?;
    let resid = x - d * code;
    Ok(ObjectiveTerms {
        fidelity: 0.5 * resid.norm_squared(),
        shared_reg: 0.0,
        unique_reg: lambda * l1_norm(code),
    })
}
