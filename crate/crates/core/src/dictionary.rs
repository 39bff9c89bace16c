//! Structured dictionary learning: initialization, the block-coordinate atom
//! update and the alternating training loop for HiDL and GDDL.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{invalid, mismatch, Result};
use crate::groups::GroupStructure;
use crate::sparse_coding::{
    gddl_encode_columns, gddl_objective, hilasso_encode_with, hilasso_objective,
    reconcile_group_selection, DirtyCode, Encoder, Fidelity, ObjectiveTerms, SolverConfig,
};

/// Ψ_jj at or below this marks atom `j` as unused for the sweep.
pub const UNUSED_ATOM_THRESHOLD: f64 = 1e-10;

const NORM_SLACK: f64 = 1e-9;

/// M×K dictionary whose columns are grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    groups: GroupStructure,
}

impl Dictionary {
    /// Wraps `atoms` as-is. Columns must be finite with norm at most 1.
    pub fn new(atoms: DMatrix<f64>, groups: GroupStructure) -> Result<Self> {
        if atoms.ncols() != groups.num_atoms() {
            return Err(mismatch(format!(
                "{} atoms but group structure covers {}",
                atoms.ncols(),
                groups.num_atoms()
            )));
        }
        if atoms.nrows() == 0 {
            return Err(invalid("atoms must have positive dimension"));
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(invalid("dictionary contains non-finite values"));
        }
        if let Some((j, n)) = atoms
            .column_iter()
            .map(|c| c.norm())
            .enumerate()
            .find(|&(_, n)| n > 1.0 + NORM_SLACK)
        {
            return Err(invalid(format!("atom {j} has norm {n} > 1")));
        }
        Ok(Self { atoms, groups })
    }

    /// Scales every column to unit norm; zero columns are rejected.
    pub fn normalized(mut atoms: DMatrix<f64>, groups: GroupStructure) -> Result<Self> {
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let n = col.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(invalid(format!("atom {j} cannot be normalized (norm {n})")));
            }
            col /= n;
        }
        Self::new(atoms, groups)
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    /// D_c, the atoms of group `c`.
    pub fn sub_dictionary(&self, c: usize) -> Result<DMatrix<f64>> {
        self.groups.extract_columns(&self.atoms, c)
    }

    /// D_{−c}, every atom outside group `c`.
    pub fn complement(&self, c: usize) -> Result<DMatrix<f64>> {
        self.groups.complement_columns(&self.atoms, c)
    }

    pub fn into_parts(self) -> (DMatrix<f64>, GroupStructure) {
        (self.atoms, self.groups)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hidl,
    Gddl,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Hidl => "hidl",
            Mode::Gddl => "gddl",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hidl" => Ok(Mode::Hidl),
            "gddl" => Ok(Mode::Gddl),
            other => Err(invalid(format!(
                "unknown mode {other:?}, expected hidl or gddl"
            ))),
        }
    }
}

/// Training configuration.
///
/// In HiDL mode `solver.lambda1` is the group weight and `solver.lambda2`
/// the entry weight of HiLasso; the other two weights are unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlConfig {
    pub mode: Mode,
    pub solver: SolverConfig,
    pub max_outer_iters: usize,
    pub obj_rel_tol: f64,
    pub seed: u64,
}

impl DlConfig {
    pub fn hidl(lambda_group: f64, lambda_entry: f64) -> Self {
        Self {
            mode: Mode::Hidl,
            solver: SolverConfig {
                lambda1: lambda_group,
                lambda2: lambda_entry,
                lambda3: 0.0,
                lambda4: 0.0,
                tol: 1e-6,
                fidelity: Fidelity::Penalized,
                ..SolverConfig::default()
            },
            max_outer_iters: 200,
            obj_rel_tol: 1e-4,
            seed: 0,
        }
    }

    pub fn gddl(solver: SolverConfig) -> Self {
        Self {
            mode: Mode::Gddl,
            solver,
            max_outer_iters: 200,
            obj_rel_tol: 1e-4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.max_outer_iters == 0 {
            return Err(invalid("max_outer_iters must be at least 1"));
        }
        if !(self.obj_rel_tol.is_finite() && self.obj_rel_tol > 0.0) {
            return Err(invalid("obj_rel_tol must be positive"));
        }
        Ok(())
    }
}

/// Per-iteration training curves. Every vector has one entry per outer
/// iteration; values are measured after the dictionary update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub objective: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub shared_reg: Vec<f64>,
    pub unique_reg: Vec<f64>,
    pub unused_atoms: Vec<usize>,
    /// 1 when some coding solve of the iteration stopped at `max_iters`.
    pub unconverged_codes: Vec<usize>,
    /// True if training stopped on the relative objective change.
    pub converged: bool,
}

impl TrainStats {
    pub fn iterations(&self) -> usize {
        self.objective.len()
    }

    fn push(&mut self, terms: ObjectiveTerms, unused: usize, unconverged: usize) {
        self.objective.push(terms.total());
        self.fidelity.push(terms.fidelity);
        self.shared_reg.push(terms.shared_reg);
        self.unique_reg.push(terms.unique_reg);
        self.unused_atoms.push(unused);
        self.unconverged_codes.push(unconverged);
    }

    /// Writes the curves as CSV with a header row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "iteration",
            "objective",
            "fidelity",
            "shared_reg",
            "unique_reg",
            "unused_atoms",
            "unconverged_codes",
        ])?;
        for i in 0..self.iterations() {
            out.write_record([
                (i + 1).to_string(),
                format!("{:e}", self.objective[i]),
                format!("{:e}", self.fidelity[i]),
                format!("{:e}", self.shared_reg[i]),
                format!("{:e}", self.unique_reg[i]),
                self.unused_atoms[i].to_string(),
                self.unconverged_codes[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Snapshot handed to a training observer after each outer iteration.
pub struct IterationReport<'a> {
    /// 1-based outer iteration.
    pub iteration: usize,
    pub dictionary_before: &'a Dictionary,
    pub dictionary: &'a Dictionary,
    pub codes: &'a DirtyCode,
    pub objective: ObjectiveTerms,
    pub unused: &'a [usize],
}

pub struct TrainOutput {
    pub dictionary: Dictionary,
    /// Codes from the last coding step, columns in data order. In HiDL mode
    /// the shared part is zero.
    pub codes: DirtyCode,
    pub stats: TrainStats,
}

/// Samples `K_c` distinct class-`c` columns per group and normalizes them.
pub fn init_dictionary(
    data: &LabeledDataset,
    gs: &GroupStructure,
    seed: u64,
) -> Result<Dictionary> {
    if data.num_classes() != gs.num_groups() {
        return Err(mismatch(format!(
            "dataset has {} classes, group structure has {} groups",
            data.num_classes(),
            gs.num_groups()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(gs.num_atoms());
    for c in 0..gs.num_groups() {
        let idx = data.class_indices(c);
        let k = gs.size(c);
        if idx.len() < k {
            return Err(invalid(format!(
                "class {} has {} samples, needs at least {k}",
                c + 1,
                idx.len()
            )));
        }
        picked.extend(
            rand::seq::index::sample(&mut rng, idx.len(), k)
                .into_iter()
                .map(|i| idx[i]),
        );
    }
    Dictionary::normalized(data.data().select_columns(&picked), gs.clone())
}

/// Ψ = AAᵀ and Φ = XAᵀ.
pub fn accumulate_stats(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if a.ncols() != x.ncols() {
        return Err(mismatch(format!(
            "{} codes for {} samples",
            a.ncols(),
            x.ncols()
        )));
    }
    Ok((a * a.transpose(), x * a.transpose()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomUpdate {
    Updated,
    /// Ψ_jj ≤ [`UNUSED_ATOM_THRESHOLD`]; the atom is left as it was.
    Unused,
    /// The unnormalized update vanished; the atom is left as it was.
    Degenerate,
}

/// One block-coordinate step on atom `j`:
/// `d̂ = (φ_j − Dψ_j)/Ψ_jj + d_j`, then `d_j = d̂/‖d̂‖₂`.
pub fn update_atom(
    dict: &mut Dictionary,
    psi: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    j: usize,
) -> Result<AtomUpdate> {
    let k = dict.num_atoms();
    if psi.shape() != (k, k) || phi.shape() != (dict.dim(), k) {
        return Err(mismatch("statistics do not match dictionary shape"));
    }
    if j >= k {
        return Err(invalid(format!(
            "atom index {j} out of range for {k} atoms"
        )));
    }
    let pjj = psi[(j, j)];
    if pjj <= UNUSED_ATOM_THRESHOLD {
        return Ok(AtomUpdate::Unused);
    }
    let mut d_hat = phi.column(j) - &dict.atoms * psi.column(j);
    d_hat /= pjj;
    d_hat += dict.atoms.column(j);
    let n = d_hat.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Ok(AtomUpdate::Degenerate);
    }
    dict.atoms.set_column(j, &(d_hat / n));
    Ok(AtomUpdate::Updated)
}

/// Sequential sweep over all atoms. Returns the indices left unchanged.
pub fn update_dictionary(
    dict: &mut Dictionary,
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<Vec<usize>> {
    let (psi, phi) = accumulate_stats(a, x)?;
    let mut skipped = Vec::new();
    for j in 0..dict.num_atoms() {
        if update_atom(dict, &psi, &phi, j)? != AtomUpdate::Updated {
            skipped.push(j);
        }
    }
    Ok(skipped)
}

/// Codes `data` against `dict` in the configured mode.
pub fn encode_dataset(
    data: &LabeledDataset,
    dict: &Dictionary,
    cfg: &DlConfig,
) -> Result<DirtyCode> {
    let enc = Encoder::new(dict)?;
    let s = &cfg.solver;
    match cfg.mode {
        Mode::Hidl => hilasso_encode_with(&enc, data.data(), s.lambda1, s.lambda2, s),
        Mode::Gddl => {
            let k = dict.num_atoms();
            let per_class: Vec<(Vec<usize>, DirtyCode)> = (0..data.num_classes())
                .into_par_iter()
                .map(|c| {
                    let idx = data.class_indices(c);
                    let code = enc.dirty(&data.data().select_columns(&idx), s)?;
                    let code = if s.shared_part {
                        reconcile_group_selection(code, dict.groups())
                    } else {
                        code
                    };
                    Ok((idx, code))
                })
                .collect::<Result<_>>()?;
            let mut out = DirtyCode {
                shared: DMatrix::zeros(k, data.len()),
                unique: DMatrix::zeros(k, data.len()),
                iterations: 0,
                residuals: [0.0; 3],
                converged: true,
            };
            let mut sq = [0.0; 3];
            for (idx, code) in per_class {
                for (col, &i) in idx.iter().enumerate() {
                    out.shared.set_column(i, &code.shared.column(col));
                    out.unique.set_column(i, &code.unique.column(col));
                }
                out.iterations = out.iterations.max(code.iterations);
                out.converged &= code.converged;
                for (s, r) in sq.iter_mut().zip(code.residuals) {
                    *s += r * r;
                }
            }
            out.residuals = sq.map(f64::sqrt);
            Ok(out)
        }
    }
}

/// Codes each column as its own task, as done for unlabeled samples.
pub fn encode_columns(x: &DMatrix<f64>, dict: &Dictionary, cfg: &DlConfig) -> Result<DirtyCode> {
    let s = &cfg.solver;
    match cfg.mode {
        Mode::Hidl => hilasso_encode_with(&Encoder::new(dict)?, x, s.lambda1, s.lambda2, s),
        Mode::Gddl => gddl_encode_columns(x, dict, s),
    }
}

/// The part of a code used for classification: the shared part for GDDL,
/// the (only) unique part for HiDL.
pub fn classifier_features(code: &DirtyCode, mode: Mode) -> &DMatrix<f64> {
    match mode {
        Mode::Hidl => &code.unique,
        Mode::Gddl => &code.shared,
    }
}

/// Training objective of `codes` under `dict`, broken into terms.
pub fn objective_value(
    data: &LabeledDataset,
    dict: &Dictionary,
    codes: &DirtyCode,
    cfg: &DlConfig,
) -> Result<ObjectiveTerms> {
    let s = &cfg.solver;
    match cfg.mode {
        Mode::Hidl => hilasso_objective(data.data(), dict, &codes.combined(), s.lambda1, s.lambda2),
        Mode::Gddl => {
            let mut total = ObjectiveTerms::default();
            for c in 0..data.num_classes() {
                let idx = data.class_indices(c);
                let terms = gddl_objective(
                    &data.data().select_columns(&idx),
                    dict,
                    &codes.shared.select_columns(&idx),
                    &codes.unique.select_columns(&idx),
                    s,
                )?;
                total = total + terms;
            }
            Ok(total)
        }
    }
}

/// Alternates coding and dictionary updates until the relative objective
/// change drops below `cfg.obj_rel_tol` or `cfg.max_outer_iters` is reached.
pub fn train(data: &LabeledDataset, gs: &GroupStructure, cfg: &DlConfig) -> Result<TrainOutput> {
    train_observed(data, gs, cfg, |_| {})
}

/// [`train`] with a callback invoked after every outer iteration.
pub fn train_observed<F>(
    data: &LabeledDataset,
    gs: &GroupStructure,
    cfg: &DlConfig,
    mut observe: F,
) -> Result<TrainOutput>
where
    F: FnMut(&IterationReport<'_>),
{
    cfg.validate()?;
    let dict = init_dictionary(data, gs, cfg.seed)?;
    train_from(data, dict, cfg, &mut observe)
}

/// Training loop starting from a given dictionary.
pub fn train_from<F>(
    data: &LabeledDataset,
    mut dict: Dictionary,
    cfg: &DlConfig,
    observe: &mut F,
) -> Result<TrainOutput>
where
    F: FnMut(&IterationReport<'_>),
{
    cfg.validate()?;
    if data.dim() != dict.dim() {
        return Err(mismatch("data and dictionary dimensions differ"));
    }
    if data.num_classes() != dict.groups().num_groups() {
        return Err(mismatch("dataset classes and dictionary groups differ"));
    }
    let mut stats = TrainStats::default();
    let mut codes = None;
    for iteration in 1..=cfg.max_outer_iters {
        let code = encode_dataset(data, &dict, cfg)?;
        let before = dict.clone();
        let unused = update_dictionary(&mut dict, &code.combined(), data.data())?;
        let terms = objective_value(data, &dict, &code, cfg)?;
        stats.push(terms, unused.len(), usize::from(!code.converged));
        observe(&IterationReport {
            iteration,
            dictionary_before: &before,
            dictionary: &dict,
            codes: &code,
            objective: terms,
            unused: &unused,
        });
        codes = Some(code);
        let n = stats.objective.len();
        if n >= 2 {
            let (prev, cur) = (stats.objective[n - 2], stats.objective[n - 1]);
            if (prev - cur).abs() <= cfg.obj_rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
                stats.converged = true;
                break;
            }
        }
    }
    Ok(TrainOutput {
        dictionary: dict,
        codes: codes.expect("at least one outer iteration"),
        stats,
    })
}
