mod common;

use approx::assert_abs_diff_eq;
use common::{randn, rng};
use nalgebra::{dmatrix, DMatrix};
use proptest::prelude::*;
use structdl::sparse_coding::{gddl_objective, hilasso_objective, lasso_objective};
use structdl::{
    gddl_encode, hilasso_encode, lasso_encode, reconcile_group_selection, Dictionary, DirtyCode,
    Fidelity, GroupStructure, SolverConfig,
};

fn random_dictionary(seed: u64, m: usize, sizes: &[usize]) -> Dictionary {
    let gs = GroupStructure::new(sizes).unwrap();
    Dictionary::normalized(randn(&mut rng(seed), m, gs.num_atoms()), gs).unwrap()
}

fn code(shared: DMatrix<f64>, unique: DMatrix<f64>) -> DirtyCode {
    DirtyCode {
        shared,
        unique,
        iterations: 0,
        residuals: [0.0; 3],
        converged: true,
    }
}

#[test]
fn zero_data_is_a_fixed_point() {
    let dict = random_dictionary(1, 10, &[3, 3]);
    let x = DMatrix::zeros(10, 4);
    let out = gddl_encode(&x, &dict, &SolverConfig::default()).unwrap();
    assert_eq!(out.iterations, 1);
    assert_eq!(out.shared, DMatrix::zeros(6, 4));
    assert_eq!(out.unique, DMatrix::zeros(6, 4));
}

#[test]
fn large_penalties_give_zero_codes() {
    let dict = random_dictionary(2, 12, &[4, 4]);
    let x = randn(&mut rng(3), 12, 3);
    let cfg = SolverConfig {
        lambda1: 1e3,
        lambda2: 1e3,
        lambda3: 1e3,
        lambda4: 1e3,
        fidelity: Fidelity::Penalized,
        ..SolverConfig::default()
    };
    let out = gddl_encode(&x, &dict, &cfg).unwrap();
    assert_eq!(out.shared.norm(), 0.0);
    assert_eq!(out.unique.norm(), 0.0);
    let h = hilasso_encode(&x, &dict, 1e3, 1e3, &cfg).unwrap();
    assert_eq!(h.norm(), 0.0);
    assert_eq!(
        lasso_encode(&x, dict.atoms(), 1e3, &cfg).unwrap().norm(),
        0.0
    );
}

#[test]
fn single_atom_signal_selects_its_group() {
    let dict = random_dictionary(4, 8, &[2, 1]);
    for j in 0..3 {
        let x = dict.atoms().columns(j, 1).into_owned();
        let cfg = SolverConfig {
            fidelity: Fidelity::Penalized,
            shared_part: false,
            tol: 1e-10,
            max_iters: 5000,
            ..SolverConfig::default()
        };
        let a = hilasso_encode(&x, &dict, 0.01, 0.01, &cfg).unwrap();
        let g = dict.groups().group_of(j).unwrap();
        let range = dict.groups().range(g);
        for i in 0..3 {
            if !range.contains(&i) {
                assert_abs_diff_eq!(a[i], 0.0, epsilon = 1e-8);
            }
        }
        let dominant = (0..3)
            .max_by(|&p, &q| a[p].abs().total_cmp(&a[q].abs()))
            .unwrap();
        assert_eq!(dominant, j);
    }
}

#[test]
fn reconcile_zeroes_unique_outside_winner() {
    let gs = GroupStructure::new(&[2, 2, 2]).unwrap();
    let shared = DMatrix::from_fn(6, 2, |i, _| if (2..4).contains(&i) { 1.0 } else { 0.0 });
    let unique = DMatrix::from_fn(6, 2, |i, _| if i >= 2 { 0.5 } else { 0.0 });
    let out = reconcile_group_selection(code(shared, unique), &gs);
    assert_eq!(out.unique.rows(4, 2).norm(), 0.0);
    assert_eq!(out.unique.rows(2, 2).norm(), 1.0);
}

#[test]
fn reconcile_without_shared_keeps_unique_group() {
    let gs = GroupStructure::new(&[2, 3]).unwrap();
    let unique = DMatrix::from_fn(5, 2, |i, j| if i < 2 { (i + j + 1) as f64 } else { 0.0 });
    let out = reconcile_group_selection(code(DMatrix::zeros(5, 2), unique.clone()), &gs);
    assert_eq!(out.unique, unique);
}

#[test]
fn reconcile_tie_prefers_lower_group() {
    let gs = GroupStructure::new(&[1, 1]).unwrap();
    let shared = dmatrix![1.0; 1.0];
    let unique = dmatrix![0.3; 0.7];
    let out = reconcile_group_selection(code(shared, unique), &gs);
    assert_eq!(out.unique, dmatrix![0.3; 0.0]);
}

#[test]
fn lasso_orthonormal_design_is_soft_threshold() {
    let q = randn(&mut rng(5), 6, 6).qr().q();
    let x = randn(&mut rng(6), 6, 2);
    let cfg = SolverConfig {
        tol: 1e-14,
        max_iters: 1000,
        ..SolverConfig::default()
    };
    let a = lasso_encode(&x, &q, 0.3, &cfg).unwrap();
    let expect = (q.transpose() * &x).map(|v| v.signum() * (v.abs() - 0.3).max(0.0));
    assert!((a - expect).norm() < 1e-10);
}

#[test]
fn lasso_matches_long_reference() {
    let d = randn(&mut rng(7), 8, 12);
    let x = randn(&mut rng(8), 8, 1);
    let short = SolverConfig {
        tol: 1e-12,
        max_iters: 20_000,
        ..SolverConfig::default()
    };
    let long = SolverConfig {
        tol: 1e-300,
        max_iters: 200_000,
        ..short
    };
    let f = |cfg: &SolverConfig| {
        let a = lasso_encode(&x, &d, 0.1, cfg).unwrap();
        lasso_objective(&x, &d, &a, 0.1).unwrap().total()
    };
    assert_abs_diff_eq!(f(&short), f(&long), epsilon = 1e-6);
}

#[test]
fn objective_terms_match_definitions() {
    let dict = random_dictionary(9, 5, &[2, 3]);
    let x = randn(&mut rng(10), 5, 3);
    let a = randn(&mut rng(11), 5, 3);
    let b = randn(&mut rng(12), 5, 3);
    let cfg = SolverConfig {
        lambda1: 0.7,
        lambda2: 0.2,
        lambda3: 0.3,
        lambda4: 0.4,
        ..SolverConfig::default()
    };
    let t = gddl_objective(&x, &dict, &a, &b, &cfg).unwrap();
    let d = dict.atoms();
    let fid = 0.5 * (&x - d * (&a + &b)).iter().map(|v| v * v).sum::<f64>();
    let rows: f64 = (0..5)
        .map(|j| (0..3).map(|i| a[(j, i)].powi(2)).sum::<f64>().sqrt())
        .sum();
    let blocks = |m: &DMatrix<f64>| {
        let f = |lo: usize, hi: usize| {
            (lo..hi)
                .flat_map(|j| (0..3).map(move |i| (j, i)))
                .map(|p| m[p].powi(2))
                .sum::<f64>()
                .sqrt()
        };
        f(0, 2) + f(2, 5)
    };
    let l1: f64 = b.iter().map(|v| v.abs()).sum();
    assert_abs_diff_eq!(t.fidelity, fid, epsilon = 1e-10);
    assert_abs_diff_eq!(t.shared_reg, 0.7 * rows + 0.3 * blocks(&a), epsilon = 1e-10);
    assert_abs_diff_eq!(t.unique_reg, 0.2 * l1 + 0.4 * blocks(&b), epsilon = 1e-10);

    let zero = DMatrix::zeros(5, 3);
    let z = gddl_objective(&x, &dict, &zero, &zero, &cfg).unwrap();
    assert_abs_diff_eq!(z.total(), 0.5 * x.norm_squared(), epsilon = 1e-12);
    let exact = hilasso_objective(&(d * &a), &dict, &a, 0.0, 0.0).unwrap();
    assert_abs_diff_eq!(exact.total(), 0.0, epsilon = 1e-20);
}

#[test]
fn invalid_configuration_is_rejected() {
    let dict = random_dictionary(13, 4, &[2]);
    let x = randn(&mut rng(14), 4, 1);
    for cfg in [
        SolverConfig {
            rho: 1.0,
            ..SolverConfig::default()
        },
        SolverConfig {
            mu0: 0.0,
            ..SolverConfig::default()
        },
        SolverConfig {
            lambda2: -1.0,
            ..SolverConfig::default()
        },
        SolverConfig {
            mu_max: 0.5,
            ..SolverConfig::default()
        },
    ] {
        assert!(gddl_encode(&x, &dict, &cfg).is_err());
    }
    assert!(gddl_encode(&DMatrix::zeros(3, 1), &dict, &SolverConfig::default()).is_err());
}

#[test]
fn columns_are_coded_independently() {
    let dict = random_dictionary(15, 10, &[3, 3]);
    let x = randn(&mut rng(16), 10, 4);
    let cfg = SolverConfig {
        fidelity: Fidelity::Penalized,
        shared_part: false,
        ..SolverConfig::default()
    };
    let all = hilasso_encode(&x, &dict, 0.1, 0.1, &cfg).unwrap();
    for i in 0..4 {
        let one = hilasso_encode(&x.columns(i, 1).into_owned(), &dict, 0.1, 0.1, &cfg).unwrap();
        assert_eq!(one.column(0), all.column(i));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn penalized_gddl_does_not_exceed_zero_objective(seed in 0u64..1000, lambda in 0.01f64..0.5) {
        let dict = random_dictionary(seed, 8, &[2, 3]);
        let x = randn(&mut rng(seed + 1), 8, 3);
        let cfg = SolverConfig {
            fidelity: Fidelity::Penalized,
            ..SolverConfig::default().with_shared_lambda(lambda)
        };
        let out = gddl_encode(&x, &dict, &cfg).unwrap();
        let zero = DMatrix::zeros(5, 3);
        let at_zero = gddl_objective(&x, &dict, &zero, &zero, &cfg).unwrap().total();
        prop_assert!(out.shared.iter().chain(out.unique.iter()).all(|v| v.is_finite()));
        let shared_only = gddl_objective(&x, &dict, &out.shared, &out.unique, &cfg).unwrap().total();
        prop_assert!(shared_only <= at_zero * (1.0 + 1e-9));
    }

    #[test]
    fn codes_scale_with_penalties(seed in 0u64..1000, s in 0.5f64..4.0) {
        // scaling X and every λ by s scales the penalized solution by s
        let dict = random_dictionary(seed, 6, &[2, 2]);
        let x = randn(&mut rng(seed + 7), 6, 1);
        let base = SolverConfig {
            fidelity: Fidelity::Penalized,
            shared_part: false,
            tol: 1e-12,
            max_iters: 20_000,
            ..SolverConfig::default()
        };
        let a1 = hilasso_encode(&x, &dict, 0.1, 0.05, &base).unwrap();
        let a2 = hilasso_encode(&(&x * s), &dict, 0.1 * s, 0.05 * s, &base).unwrap();
        prop_assert!((a2 - a1 * s).norm() <= 1e-6 * (1.0 + s * x.norm()));
    }
}
