//! Synthetic union-of-subspaces data and the SDI comparison harness.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{accuracy, build_label_matrix, default_eta, fit, sdi};
use crate::dataset::LabeledDataset;
use crate::dictionary::{
    encode_columns, init_dictionary, train, update_dictionary, Dictionary, DlConfig,
};
use crate::error::{invalid, Result};
use crate::groups::GroupStructure;
use crate::sparse_coding::{lasso_encode, Fidelity, SolverConfig};
use crate::theory::verify_block_support;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub atoms_per_class: usize,
    pub samples_per_class: usize,
    /// Nonzeros per code, all inside the sample's class group.
    pub sparsity: usize,
    /// `None` for noiseless data.
    pub snr_db: Option<f64>,
    pub seed: u64,
    /// Draw code magnitudes as |N(0,1)| instead of N(0,1).
    #[serde(default)]
    pub nonnegative: bool,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0
            || self.dim == 0
            || self.atoms_per_class == 0
            || self.samples_per_class == 0
        {
            return Err(invalid("classes, dim, atoms and samples must be positive"));
        }
        if self.sparsity == 0 || self.sparsity > self.atoms_per_class {
            return Err(invalid(format!(
                "sparsity {} must lie in 1..={}",
                self.sparsity, self.atoms_per_class
            )));
        }
        if let Some(s) = self.snr_db {
            if s.is_nan() {
                return Err(invalid("snr_db is NaN"));
            }
        }
        Ok(())
    }

    pub fn groups(&self) -> Result<GroupStructure> {
        GroupStructure::uniform(self.classes, self.atoms_per_class)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub dictionary: Dictionary,
    /// K×N ground-truth codes.
    pub codes: DMatrix<f64>,
    pub clean: DMatrix<f64>,
    pub noisy: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Realized SNR in dB; infinite for noiseless data.
    pub realized_snr_db: f64,
}

impl SynthTruth {
    pub fn num_classes(&self) -> usize {
        self.dictionary.groups().num_groups()
    }

    pub fn dataset(&self) -> LabeledDataset {
        LabeledDataset::new(self.noisy.clone(), self.labels.clone(), self.num_classes())
            .expect("generator output is consistent")
    }

    pub fn clean_dataset(&self) -> LabeledDataset {
        LabeledDataset::new(self.clean.clone(), self.labels.clone(), self.num_classes())
            .expect("generator output is consistent")
    }
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Gaussian sub-dictionaries with unit-norm atoms and class-confined
/// Gaussian codes; samples are ordered by class.
pub fn generate(spec: &SynthSpec) -> Result<SynthTruth> {
    spec.validate()?;
    let gs = spec.groups()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dictionary = Dictionary::normalized(
        gaussian_matrix(&mut rng, spec.dim, gs.num_atoms()),
        gs.clone(),
    )?;
    let n = spec.classes * spec.samples_per_class;
    let mut codes = DMatrix::zeros(gs.num_atoms(), n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.classes {
        let offset = gs.offsets()[c];
        for _ in 0..spec.samples_per_class {
            let i = labels.len();
            for j in rand::seq::index::sample(&mut rng, spec.atoms_per_class, spec.sparsity) {
                let v: f64 = rng.sample(StandardNormal);
                codes[(offset + j, i)] = if spec.nonnegative { v.abs() } else { v };
            }
            labels.push(c);
        }
    }
    let clean = dictionary.atoms() * &codes;
    let noise_seed: u64 = rng.random();
    let (noisy, realized_snr_db) = match spec.snr_db {
        Some(snr) => add_noise(&clean, snr, noise_seed)?,
        None => (clean.clone(), f64::INFINITY),
    };
    Ok(SynthTruth {
        dictionary,
        codes,
        clean,
        noisy,
        labels,
        realized_snr_db,
    })
}

/// Adds i.i.d. Gaussian noise whose expected energy is `‖X‖²_F / 10^(snr/10)`.
/// Returns the noisy matrix and the realized SNR in dB. `snr_db = +∞`
/// returns `x` unchanged.
pub fn add_noise(x: &DMatrix<f64>, snr_db: f64, seed: u64) -> Result<(DMatrix<f64>, f64)> {
    if snr_db.is_nan() {
        return Err(invalid("snr_db is NaN"));
    }
    if snr_db == f64::INFINITY || x.is_empty() {
        return Ok((x.clone(), f64::INFINITY));
    }
    let signal = x.norm_squared();
    let sigma = (signal / (x.len() as f64 * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = gaussian_matrix(&mut rng, x.nrows(), x.ncols()) * sigma;
    let realized = 10.0 * (signal / noise.norm_squared()).log10();
    Ok((x + noise, realized))
}

/// Stratified random split; returns sorted (train, test) column indices.
/// Each class contributes `round(fraction · N_c)` columns to the training set.
pub fn split_indices(
    labels: &[usize],
    num_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!(
            "train fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(invalid(format!(
            "split with fraction {fraction} leaves {} training and {} test samples",
            train.len(),
            test.len()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (tr, te) = split_indices(data.labels(), data.num_classes(), fraction, seed)?;
    Ok((data.subset(&tr), data.subset(&te)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hidl,
    Gddl,
    /// One ℓ1-coded dictionary per class, concatenated.
    LassoSeparate,
    /// One ℓ1-coded dictionary over all classes, atoms labeled afterwards.
    LassoAll,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Hidl,
        Method::Gddl,
        Method::LassoSeparate,
        Method::LassoAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hidl => "hidl",
            Method::Gddl => "gddl",
            Method::LassoSeparate => "l1-separate",
            Method::LassoAll => "l1-all",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method {s:?}")))
    }
}

/// A sparsity level of the grid and the penalty weight used with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityLevel {
    pub sparsity: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub classes: usize,
    pub dim: usize,
    pub atoms_per_class: usize,
    pub samples_per_class: usize,
    pub levels: Vec<SparsityLevel>,
    pub snrs_db: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub outer_iters: usize,
    /// Coding iterations per solve.
    pub coder_iters: usize,
    pub coder_tol: f64,
    /// Penalty growth factor of the ADMM coders.
    pub coder_rho: f64,
    pub hidl_fidelity: Fidelity,
    pub gddl_fidelity: Fidelity,
    /// Relative tolerance for the block-support rate.
    pub block_tol: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 20,
            atoms_per_class: 10,
            samples_per_class: 200,
            levels: vec![
                SparsityLevel {
                    sparsity: 2,
                    lambda: 0.1,
                },
                SparsityLevel {
                    sparsity: 5,
                    lambda: 0.05,
                },
                SparsityLevel {
                    sparsity: 8,
                    lambda: 0.01,
                },
            ],
            snrs_db: vec![10.0, 30.0, 50.0],
            trials: 5,
            methods: Method::ALL.to_vec(),
            outer_iters: 10,
            coder_iters: 500,
            coder_tol: 1e-6,
            coder_rho: 1.1,
            hidl_fidelity: Fidelity::Penalized,
            gddl_fidelity: Fidelity::Exact,
            block_tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdiRow {
    pub method: String,
    pub snr_db: f64,
    pub sparsity: usize,
    pub trial: usize,
    pub sdi_train: f64,
    pub sdi_test: f64,
    pub block_rate: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

/// Writes rows as CSV with a header.
pub fn write_report<W: std::io::Write>(rows: &[SdiRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

fn cell_seed(base: u64, level: usize, snr: usize, trial: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add((level as u64) << 32)
        .wrapping_add((snr as u64) << 16)
        .wrapping_add(trial as u64)
}

/// Runs every (level, snr, trial, method) cell. Rows are ordered by level,
/// SNR, trial and then method as listed in the config.
pub fn run_sdi_experiment(cfg: &ExperimentConfig) -> Result<Vec<SdiRow>> {
    if cfg.trials == 0 || cfg.levels.is_empty() || cfg.snrs_db.is_empty() || cfg.methods.is_empty()
    {
        return Err(invalid("experiment grid is empty"));
    }
    let mut cells = Vec::new();
    for (li, level) in cfg.levels.iter().enumerate() {
        for (si, &snr) in cfg.snrs_db.iter().enumerate() {
            for trial in 0..cfg.trials {
                cells.push((li, *level, si, snr, trial));
            }
        }
    }
    let rows: Vec<Vec<SdiRow>> = cells
        .into_par_iter()
        .map(|(li, level, si, snr, trial)| {
            let seed = cell_seed(cfg.seed, li, si, trial);
            let spec = SynthSpec {
                classes: cfg.classes,
                dim: cfg.dim,
                atoms_per_class: cfg.atoms_per_class,
                samples_per_class: cfg.samples_per_class,
                sparsity: level.sparsity,
                snr_db: snr.is_finite().then_some(snr),
                seed,
                nonnegative: false,
            };
            let truth = generate(&spec)?;
            let (tr, te) = split(&truth.dataset(), 0.5, seed ^ 0x5eed)?;
            cfg.methods
                .iter()
                .map(|&m| {
                    let start = Instant::now();
                    let cell = run_method(cfg, m, level.lambda, &tr, &te, seed)?;
                    Ok(SdiRow {
                        method: m.name().to_string(),
                        snr_db: snr,
                        sparsity: level.sparsity,
                        trial,
                        sdi_train: cell.sdi_train,
                        sdi_test: cell.sdi_test,
                        block_rate: cell.block_rate,
                        accuracy: cell.accuracy,
                        seconds: start.elapsed().as_secs_f64(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

struct CellResult {
    sdi_train: f64,
    sdi_test: f64,
    block_rate: f64,
    accuracy: f64,
}

fn coder(cfg: &ExperimentConfig, lambda: f64, fidelity: Fidelity) -> SolverConfig {
    SolverConfig {
        max_iters: cfg.coder_iters,
        tol: cfg.coder_tol,
        rho: cfg.coder_rho,
        fidelity,
        ..SolverConfig::default()
    }
    .with_shared_lambda(lambda)
}

fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    lambda: f64,
    tr: &LabeledDataset,
    te: &LabeledDataset,
    seed: u64,
) -> Result<CellResult> {
    let gs = GroupStructure::uniform(cfg.classes, cfg.atoms_per_class)?;
    let (a_train, a_test, groups) = match method {
        Method::Hidl => {
            let mut dl = DlConfig::hidl(lambda, lambda);
            dl.solver.fidelity = cfg.hidl_fidelity;
            dl.solver.max_iters = cfg.coder_iters;
            dl.solver.tol = cfg.coder_tol;
            dl.solver.rho = cfg.coder_rho;
            dl.max_outer_iters = cfg.outer_iters;
            dl.obj_rel_tol = 1e-12;
            dl.seed = seed;
            let out = train(tr, &gs, &dl)?;
            let a_tr = encode_columns(tr.data(), &out.dictionary, &dl)?.unique;
            let a_te = encode_columns(te.data(), &out.dictionary, &dl)?.unique;
            (a_tr, a_te, gs)
        }
        Method::Gddl => {
            let mut dl = DlConfig::gddl(coder(cfg, lambda, cfg.gddl_fidelity));
            dl.max_outer_iters = cfg.outer_iters;
            dl.obj_rel_tol = 1e-12;
            dl.seed = seed;
            let out = train(tr, &gs, &dl)?;
            let a_tr = encode_columns(tr.data(), &out.dictionary, &dl)?.shared;
            let a_te = encode_columns(te.data(), &out.dictionary, &dl)?.shared;
            (a_tr, a_te, gs)
        }
        Method::LassoSeparate => {
            let solver = coder(cfg, lambda, Fidelity::Penalized);
            let mut atoms = DMatrix::zeros(tr.dim(), gs.num_atoms());
            for c in 0..cfg.classes {
                let xc = tr.class_data(c);
                let single = LabeledDataset::new(xc.clone(), vec![0; xc.ncols()], 1)?;
                let one = GroupStructure::new(&[gs.size(c)])?;
                let dc = lasso_dl(
                    &single,
                    &one,
                    lambda,
                    &solver,
                    cfg.outer_iters,
                    seed.wrapping_add(c as u64),
                )?;
                atoms
                    .columns_mut(gs.offsets()[c], gs.size(c))
                    .copy_from(dc.atoms());
            }
            let d = Dictionary::new(atoms, gs.clone())?;
            let a_tr = lasso_encode(tr.data(), d.atoms(), lambda, &solver)?;
            let a_te = lasso_encode(te.data(), d.atoms(), lambda, &solver)?;
            (a_tr, a_te, gs)
        }
        Method::LassoAll => {
            let solver = coder(cfg, lambda, Fidelity::Penalized);
            let d = lasso_dl(tr, &gs, lambda, &solver, cfg.outer_iters, seed)?;
            let a = lasso_encode(tr.data(), d.atoms(), lambda, &solver)?;
            let order = label_atoms_by_energy(&a, tr.labels(), &gs);
            let d = Dictionary::new(d.atoms().select_columns(&order), gs.clone())?;
            let a_tr = lasso_encode(tr.data(), d.atoms(), lambda, &solver)?;
            let a_te = lasso_encode(te.data(), d.atoms(), lambda, &solver)?;
            (a_tr, a_te, gs)
        }
    };
    let block = verify_block_support(&a_test, te.labels(), &groups, cfg.block_tol)?;
    let labels = build_label_matrix(tr.labels(), cfg.classes)?;
    let clf = fit(&a_train, &labels, default_eta(&a_train))?;
    let predicted = clf.classify_all(&a_test)?;
    Ok(CellResult {
        sdi_train: sdi(&a_train, tr.labels())?,
        sdi_test: sdi(&a_test, te.labels())?,
        block_rate: 1.0 - block.failures as f64 / te.len() as f64,
        accuracy: accuracy(&predicted, te.labels())?,
    })
}

/// Dictionary learning with plain ℓ1 coding and the same atom update.
pub fn lasso_dl(
    data: &LabeledDataset,
    gs: &GroupStructure,
    lambda: f64,
    solver: &SolverConfig,
    outer_iters: usize,
    seed: u64,
) -> Result<Dictionary> {
    let mut d = init_dictionary(data, gs, seed)?;
    for _ in 0..outer_iters {
        let a = lasso_encode(data.data(), d.atoms(), lambda, solver)?;
        update_dictionary(&mut d, &a, data.data())?;
    }
    Ok(d)
}

/// Assigns atoms to classes after the fact: class by class, the `K_c`
/// still-unassigned atoms with the largest Σ|a_ji| over that class's samples
/// (ties to the lower atom index). Returns the column order that places
/// class c's atoms in group c.
pub fn label_atoms_by_energy(
    a: &DMatrix<f64>,
    labels: &[usize],
    gs: &GroupStructure,
) -> Vec<usize> {
    let k = a.nrows();
    let mut taken = vec![false; k];
    let mut order = Vec::with_capacity(k);
    for c in 0..gs.num_groups() {
        let mut energy = vec![0.0f64; k];
        for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == c) {
            for (j, e) in energy.iter_mut().enumerate() {
                *e += a[(j, i)].abs();
            }
        }
        let mut idx: Vec<usize> = (0..k).filter(|&j| !taken[j]).collect();
        idx.sort_by(|&x, &y| energy[y].total_cmp(&energy[x]).then(x.cmp(&y)));
        for &j in idx.iter().take(gs.size(c)) {
            taken[j] = true;
            order.push(j);
        }
    }
    order
}
