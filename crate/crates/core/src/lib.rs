//! Structured dictionary learning.
//!
//! Dictionaries are partitioned into class groups; codes are encouraged to
//! select a single group (HiLasso / HiDL) or are split into a row-sparse
//! shared part and an entry-sparse unique part confined to one group (GDDL).
//! Codes feed a ridge-regression classifier.
//!
//! Indices and class labels are 0-based throughout the library; the file
//! formats and command line use 1-based labels.

pub mod classifier;
pub mod dataset;
pub mod dictionary;
pub mod error;
pub mod groups;
pub mod io;
pub mod model;
pub mod prox;
pub mod sparse_coding;
pub mod synthetic;
pub mod theory;

pub use nalgebra::{DMatrix, DVector};

pub use classifier::{build_label_matrix, default_eta, fit, sdi, LabelMatrix, LinearClassifier};
pub use dataset::LabeledDataset;
pub use dictionary::{
    accumulate_stats, init_dictionary, train, train_observed, update_atom, AtomUpdate, Dictionary,
    DlConfig, Mode, TrainOutput, TrainStats,
};
pub use error::{Error, Result};
pub use groups::GroupStructure;
pub use model::{TrainedModel, TrainingMetadata};
pub use prox::ProxThresholds;
pub use sparse_coding::{
    gddl_encode, hilasso_encode, lasso_encode, reconcile_group_selection, DirtyCode, Encoder,
    Fidelity, ObjectiveTerms, SolverConfig,
};
pub use synthetic::{generate, SynthSpec, SynthTruth};
pub use theory::{ConditionReport, SubspaceFamily};
