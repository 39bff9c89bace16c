//! Fixtures shared by the solver benchmarks.

use structdl::synthetic::SynthTruth;
use structdl::{generate, DMatrix, SynthSpec};

/// Noisy synthetic problem at the default desk scale.
pub fn fixture(samples_per_class: usize, seed: u64) -> SynthTruth {
    generate(&SynthSpec {
        classes: 4,
        dim: 20,
        atoms_per_class: 10,
        samples_per_class,
        sparsity: 5,
        snr_db: Some(30.0),
        seed,
        nonnegative: false,
    })
    .expect("valid fixture spec")
}

/// Deterministic dense matrix with entries in [-1, 1].
pub fn pattern(rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |i, j| {
        ((i * 31 + j * 17) % 23) as f64 / 11.0 - 1.0
    })
}
