use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::collections::HashSet;
use structdl::synthetic::{
    add_noise, run_sdi_experiment, split_indices, write_report, ExperimentConfig, Method,
    SparsityLevel,
};
use structdl::{generate, Fidelity, SynthSpec};

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        classes: 3,
        dim: 12,
        atoms_per_class: 5,
        samples_per_class: 8,
        sparsity: 2,
        snr_db: Some(20.0),
        seed,
        nonnegative: false,
    }
}

#[test]
fn large_scale_shape() {
    let s = SynthSpec {
        classes: 10,
        dim: 20,
        atoms_per_class: 50,
        samples_per_class: 1500,
        sparsity: 5,
        snr_db: None,
        seed: 0,
        nonnegative: false,
    };
    let t = generate(&s).unwrap();
    assert_eq!(t.noisy.shape(), (20, 15000));
    assert_eq!(t.noisy, t.clean);
}

#[test]
fn generated_data_is_consistent() {
    let t = generate(&spec(1)).unwrap();
    assert!((t.dictionary.atoms() * &t.codes - &t.clean).norm() < 1e-12);
    let gs = t.dictionary.groups();
    for (i, &c) in t.labels.iter().enumerate() {
        let col = t.codes.column(i);
        let support: Vec<usize> = (0..col.len()).filter(|&j| col[j] != 0.0).collect();
        assert_eq!(support.len(), 2);
        assert!(support.iter().all(|&j| gs.group_of(j).unwrap() == c));
    }
    assert_eq!(generate(&spec(1)).unwrap().noisy, t.noisy);
    assert_ne!(generate(&spec(2)).unwrap().noisy, t.noisy);
}

#[test]
fn full_sparsity_gives_dense_group_codes() {
    let mut s = spec(3);
    s.sparsity = s.atoms_per_class;
    s.nonnegative = true;
    let t = generate(&s).unwrap();
    for (i, &c) in t.labels.iter().enumerate() {
        let r = t.dictionary.groups().range(c);
        assert!(r.clone().all(|j| t.codes[(j, i)] > 0.0));
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = spec(0);
    s.sparsity = 6;
    assert!(generate(&s).is_err());
    let mut s = spec(0);
    s.classes = 0;
    assert!(generate(&s).is_err());
}

#[test]
fn noise_examples() {
    let x = DMatrix::from_fn(4, 4, |i, j| (i + 2 * j) as f64);
    let (same, snr) = add_noise(&x, f64::INFINITY, 0).unwrap();
    assert_eq!(same, x);
    assert_eq!(snr, f64::INFINITY);

    let unit = DMatrix::from_element(100, 100, 0.01);
    let (noisy, _) = add_noise(&unit, 0.0, 1).unwrap();
    assert_abs_diff_eq!((noisy - &unit).norm(), 1.0, epsilon = 0.02);
}

#[test]
fn realized_snr_tracks_target() {
    let mut s = spec(0);
    s.dim = 20;
    s.samples_per_class = 500;
    for trial in 0..10 {
        for target in [10.0, 30.0, 50.0] {
            s.seed = trial;
            s.snr_db = Some(target);
            let t = generate(&s).unwrap();
            let e = (&t.noisy - &t.clean).norm_squared();
            let measured = 10.0 * (t.clean.norm_squared() / e).log10();
            assert_abs_diff_eq!(measured, t.realized_snr_db, epsilon = 1e-9);
            assert!((measured - target).abs() < 0.5, "{measured} vs {target}");
        }
    }
}

#[test]
fn split_examples() {
    let labels: Vec<usize> = (0..12).map(|i| i / 4).collect();
    let (train, test) = split_indices(&labels, 3, 0.5, 0).unwrap();
    for c in 0..3 {
        assert_eq!(train.iter().filter(|&&i| labels[i] == c).count(), 2);
        assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 2);
    }
    assert!(split_indices(&labels, 3, 1.0, 0).is_err());
    assert!(split_indices(&labels, 3, 0.0, 0).is_err());

    let partitions: HashSet<Vec<usize>> = (0..10)
        .map(|s| split_indices(&labels, 3, 0.5, s).unwrap().0)
        .collect();
    assert_eq!(partitions.len(), 10);
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("k-svd".parse::<Method>().is_err());
}

#[test]
fn noiseless_independent_experiment_recovers_blocks() {
    // 4 classes x 4 atoms in R^20 are independent. The seed gives sampled
    // sub-dictionaries conditioned well enough for the exact solver to
    // converge; near-collinear samples leave it far from the solution.
    let cfg = ExperimentConfig {
        classes: 4,
        dim: 20,
        atoms_per_class: 4,
        samples_per_class: 40,
        levels: vec![SparsityLevel {
            sparsity: 3,
            lambda: 0.02,
        }],
        snrs_db: vec![f64::INFINITY],
        trials: 1,
        methods: vec![Method::Hidl],
        outer_iters: 3,
        hidl_fidelity: Fidelity::Exact,
        coder_iters: 20_000,
        coder_tol: 1e-12,
        coder_rho: 1.01,
        seed: 3,
        ..ExperimentConfig::default()
    };
    let rows = run_sdi_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].block_rate, 1.0, "{:?}", rows[0]);
    let mut buf = Vec::new();
    write_report(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with(
        "method,snr_db,sparsity,trial,sdi_train,sdi_test,block_rate,accuracy,seconds"
    ));
    assert_eq!(text.lines().count(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_is_a_partition(n_per in 2usize..10, classes in 1usize..4, f in 0.2f64..0.8, seed in 0u64..1000) {
        let labels: Vec<usize> = (0..n_per * classes).map(|i| i % classes).collect();
        if let Ok((train, test)) = split_indices(&labels, classes, f, seed) {
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn generated_atoms_have_unit_norm(seed in 0u64..1000) {
        let t = generate(&spec(seed)).unwrap();
        for c in t.dictionary.atoms().column_iter() {
            prop_assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }
}
