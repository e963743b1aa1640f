//! Property tests over generated molecules, schedules, and kernels.

use proptest::prelude::*;

use leop::chemdata::{
    gen_toy_complex, parse_sdf_molecule, partition_retain_mask, write_sdf, AtomVocab, BondKind,
    ToyDatasetSpec,
};
use leop::diffusion::{q_marginal_categorical, q_posterior_categorical, q_step_categorical};
use leop::egnn::{diffused_pair_rows, onehot_bond_rows};
use leop::schedule::{build_schedule, snr, step_params, ScheduleKind};

fn toy_spec(seed: u64) -> ToyDatasetSpec {
    ToyDatasetSpec {
        n_complexes: 1,
        random_seed: seed,
        ..ToyDatasetSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// parse(write(m)) == m for generated valid molecules: types and
    /// bonds exact, coordinates within 1e-4.
    #[test]
    fn sdf_round_trip(seed in 0u64..500, gen_seed in 0u64..50) {
        let vocab = AtomVocab::default_ligand();
        let complx = gen_toy_complex(seed, &toy_spec(gen_seed)).unwrap();
        let text = write_sdf(&complx.ligand, &vocab, "prop").unwrap();
        let back = parse_sdf_molecule(&text, &vocab).unwrap();
        prop_assert_eq!(&back.types, &complx.ligand.types);
        prop_assert_eq!(&back.bonds, &complx.ligand.bonds);
        for (a, b) in back.coords.iter().zip(&complx.ligand.coords) {
            for d in 0..3 {
                prop_assert!((a[d] - b[d]).abs() <= 1e-4);
            }
        }
    }

    /// Bond symmetry and the fake-bond coupling hold after partition +
    /// padding.
    #[test]
    fn bond_symmetry_and_fake_coupling(seed in 0u64..300, extra in 0usize..5) {
        let vocab = AtomVocab::default_ligand();
        let complx = gen_toy_complex(seed, &toy_spec(9)).unwrap();
        let part = partition_retain_mask(&complx.ligand, &complx.mask_indices).unwrap();
        let padded =
            leop::chemdata::pad_with_fake_atoms(&part, part.n_mask() + extra, &vocab).unwrap();
        let mol = &padded.mol;
        let n = mol.n_atoms();
        for i in 0..n {
            prop_assert_eq!(mol.bonds.get(i, i), BondKind::None);
            for j in 0..n {
                prop_assert_eq!(mol.bonds.get(i, j), mol.bonds.get(j, i));
            }
        }
        // an atom is FAKE iff all its incident bonds are NONE is required
        // only in the fake direction for ground-truth data
        for i in 0..n {
            if mol.types[i] == vocab.fake_index() {
                for j in 0..n {
                    prop_assert_eq!(mol.bonds.get(i, j), BondKind::None);
                }
            }
        }
    }

    /// Schedule invariants across sizes and powers.
    #[test]
    fn schedule_invariants(t_max in 2usize..600, power in 0.5f64..4.0) {
        let s = build_schedule(ScheduleKind::Polynomial, t_max, power).unwrap();
        prop_assert!(s.alpha(0) >= 1.0 - 1e-4);
        prop_assert!(s.alpha(t_max) <= 1e-4);
        for t in 0..=t_max {
            prop_assert!((s.alpha(t) + s.sigma(t) - 1.0).abs() < 1e-12);
        }
        for t in 1..=t_max {
            prop_assert!(s.alpha(t) < s.alpha(t - 1));
            prop_assert!(s.sigma_step(t) >= 0.0);
            prop_assert!((s.alpha_step(t) * s.alpha(t - 1) - s.alpha(t)).abs() < 1e-12);
            let p = step_params(&s, t).unwrap();
            prop_assert!(p.beta_tilde >= 0.0);
        }
        for t in 1..=t_max {
            prop_assert!(snr(&s, t).unwrap() < snr(&s, t - 1).unwrap());
        }
    }

    /// Every categorical operation preserves the simplex.
    #[test]
    fn categorical_simplex_preserved(
        t_max in 2usize..50,
        t in 1usize..50,
        raw in prop::collection::vec(0.01f64..1.0, 5),
    ) {
        let t = t.min(t_max);
        let s = build_schedule(ScheduleKind::Polynomial, t_max, 2.0).unwrap();
        let sum: f64 = raw.iter().sum();
        let row: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let rows = vec![row.clone()];
        for out in [
            q_step_categorical(&rows, 5, &s, t).unwrap(),
            q_marginal_categorical(&rows, 5, &s, t).unwrap(),
        ] {
            let total: f64 = out[0].iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(out[0].iter().all(|&p| p >= 0.0));
        }
        let onehot = vec![1.0, 0.0, 0.0, 0.0, 0.0];
        let post = q_posterior_categorical(&onehot, &row, 5, &s, t).unwrap();
        let total: f64 = post.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(post.iter().all(|&p| p >= 0.0));
    }

    /// Diffused pairs are exactly those touching the mask.
    #[test]
    fn diffused_pairs_definition(seed in 0u64..200) {
        let complx = gen_toy_complex(seed, &toy_spec(4)).unwrap();
        let part = partition_retain_mask(&complx.ligand, &complx.mask_indices).unwrap();
        let rows = diffused_pair_rows(&part.mask);
        let n = part.mol.n_atoms();
        let mut row = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let touched = part.mask[i] || part.mask[j];
                prop_assert_eq!(rows.contains(&row), touched);
                row += 1;
            }
        }
        // bond row layout matches the upper-triangle convention
        let all = onehot_bond_rows(&part.mol.bonds, BondKind::COUNT);
        prop_assert_eq!(all.len(), n * (n - 1) / 2);
    }
}
