use leop::affinity::{train_affinity, AffinityTrainConfig};
use leop::chemdata::{
    gen_toy_complex, partition_retain_mask, AtomVocab, MaskedComplex, ToyDatasetSpec,
};
use leop::egnn::{ModelConfig, ModelParams};
use leop::schedule::{ScheduleKind, ScheduleSpec};
use leop::training::{reconstruction_accuracy, train, TrainConfig};
use leop::weights::{default_header, Checkpoint};

fn sensitivity_check() {
    use leop::egnn::{egnn_forward, ComplexState, ModelConfig, ModelParams};
    let vocab = AtomVocab::default_ligand();
    let spec = ToyDatasetSpec { n_complexes: 1, random_seed: 5, ..ToyDatasetSpec::default() };
    let c = leop::chemdata::gen_toy_complex(0, &spec).unwrap();
    let ligand = leop::chemdata::partition_retain_mask(&c.ligand, &c.mask_indices).unwrap();
    let k_b = leop::chemdata::BondKind::COUNT;
    let state = ComplexState {
        pocket_coords: c.pocket.coords.clone(),
        pocket_elems: c.pocket.elements.clone(),
        lig_coords: ligand.mol.coords.clone(),
        lig_types: (0..ligand.mol.n_atoms()).map(|i| ligand.mol.type_onehot(i, vocab.k())).collect(),
        bond_rows: leop::egnn::onehot_bond_rows(&ligand.mol.bonds, k_b),
        mask: ligand.mask.clone(),
        t: 2,
        t_max: 20,
    };
    let params = ModelParams::init(&ModelConfig::small(), 7);
    let slot = ligand.mask_indices()[0];
    let fwd = egnn_forward(&params, &state).unwrap();
    let base = fwd.v_hat_rows();
    for new_type in 0..7 {
        let mut alt = state.clone();
        alt.lig_types[slot] = vec![0.0; 7];
        alt.lig_types[slot][new_type] = 1.0;
        let fwd2 = egnn_forward(&params, &alt).unwrap();
        let rows = fwd2.v_hat_rows();
        let d_same: f64 = rows[slot].iter().zip(&base[slot]).map(|(a, b)| (a - b).abs()).sum();
        let d_other: f64 = rows.iter().enumerate().filter(|(i, _)| *i != slot)
            .map(|(i, r)| r.iter().zip(&base[i]).map(|(a, b)| (a - b).abs()).sum::<f64>()).sum();
        println!("set slot{slot} type={new_type}: |dv_hat[slot]|={d_same:.4} |dv_hat[others]|={d_other:.4}");
    }
}

fn guidance_check() {
    use leop::affinity::GuidanceConfig;
    use leop::sampler::{generate, SampleRunConfig};
    use leop::metrics::valence_validity;
    let args: Vec<String> = std::env::args().collect();
    let n_targets: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4);
    let per_target: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(30);
    let s_scale: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let vocab = AtomVocab::default_ligand();
    let chk = leop::weights::load(std::path::Path::new("/tmp/leop_probe.leop")).unwrap();
    let sched = chk.header.schedule.build().unwrap();
    let spec = ToyDatasetSpec { n_complexes: 300, random_seed: 424242, ..ToyDatasetSpec::default() };
    let mut diffs = Vec::new();
    let mut guided_valid = 0usize;
    let mut unguided_valid = 0usize;
    let mut emitted = 0usize;
    let t0 = std::time::Instant::now();
    for ti in 0..n_targets {
        let c = gen_toy_complex(200 + ti as u64, &spec).unwrap();
        let ligand = partition_retain_mask(&c.ligand, &c.mask_indices).unwrap();
        let base = SampleRunConfig {
            n_samples: per_target,
            seed: 9000 + ti as u64,
            pad_extra_cap: 4,
            guidance: GuidanceConfig { enabled: true, s: s_scale, r1: 0.5, r2: 0.5, delta: 0.01 },
        };
        let unguided_cfg = SampleRunConfig {
            guidance: GuidanceConfig { enabled: false, ..base.guidance },
            ..base.clone()
        };
        let guided = generate(&chk.params, &c.pocket, &ligand, &base, &sched, &vocab, 3.5).unwrap();
        let unguided = generate(&chk.params, &c.pocket, &ligand, &unguided_cfg, &sched, &vocab, 3.5).unwrap();
        for (g, u) in guided.iter().zip(&unguided) {
            if let (Some(ga), Some(ua)) = (g.oracle_affinity, u.oracle_affinity) {
                diffs.push(ga - ua);
                emitted += 1;
            }
            if let Some(m) = &g.molecule {
                if valence_validity(m, &vocab).unwrap_or(false) { guided_valid += 1; }
            }
            if let Some(m) = &u.molecule {
                if valence_validity(m, &vocab).unwrap_or(false) { unguided_valid += 1; }
            }
        }
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let t_stat = mean / (var.sqrt() / n.sqrt());
    println!(
        "pairs {} | mean gap {:.5} ({:.3} pk) | t = {:.2} | guided valid {}/{} unguided valid {}/{} | {:.0}s",
        emitted, mean, mean * 14.0, t_stat,
        guided_valid, n_targets * per_target, unguided_valid, n_targets * per_target,
        t0.elapsed().as_secs_f64()
    );
}

fn validity_check() {
    use leop::affinity::GuidanceConfig;
    use leop::sampler::{generate, SampleRunConfig};
    use leop::chemdata::BondKind;
    let args: Vec<String> = std::env::args().collect();
    let n_targets: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4);
    let per_target: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(30);
    let vocab = AtomVocab::default_ligand();
    let chk = leop::weights::load(std::path::Path::new("/tmp/leop_probe.leop")).unwrap();
    let sched = chk.header.schedule.build().unwrap();
    let spec = ToyDatasetSpec { n_complexes: 300, random_seed: 424242, ..ToyDatasetSpec::default() };
    let (mut ok, mut overval, mut disconn, mut both, mut empty, mut total) = (0, 0, 0, 0, 0, 0);
    let mut isolated_atoms = 0usize;
    let mut real_atoms = 0usize;
    for ti in 0..n_targets {
        let c = gen_toy_complex(200 + ti as u64, &spec).unwrap();
        let ligand = partition_retain_mask(&c.ligand, &c.mask_indices).unwrap();
        let cfg = SampleRunConfig {
            n_samples: per_target,
            seed: 4200 + ti as u64,
            pad_extra_cap: 4,
            guidance: GuidanceConfig { enabled: false, ..GuidanceConfig::default() },
        };
        let out = generate(&chk.params, &c.pocket, &ligand, &cfg, &sched, &vocab, 3.5).unwrap();
        for s in out {
            total += 1;
            let Some(mol) = s.molecule else { empty += 1; continue };
            let n = mol.n_atoms();
            let mut over = false;
            for i in 0..n {
                let sym = vocab.symbol(mol.types[i]);
                let cap = leop::chemdata::max_valence(sym).unwrap_or(0.0);
                let used: f64 = (0..n).map(|j| mol.bonds.get(i, j).order()).sum();
                if used > cap + 1e-9 { over = true; }
                let deg = (0..n).filter(|&j| mol.bonds.get(i, j) != BondKind::None).count();
                real_atoms += 1;
                if deg == 0 && n > 1 { isolated_atoms += 1; }
            }
            let conn = {
                let mut seen = vec![false; n];
                let mut stack = vec![0usize];
                seen[0] = true;
                let mut cnt = 1;
                while let Some(i) = stack.pop() {
                    for j in 0..n {
                        if !seen[j] && mol.bonds.get(i, j) != BondKind::None {
                            seen[j] = true; cnt += 1; stack.push(j);
                        }
                    }
                }
                cnt == n
            };
            match (over, conn) {
                (false, true) => ok += 1,
                (true, true) => overval += 1,
                (false, false) => disconn += 1,
                (true, false) => both += 1,
            }
        }
    }
    println!("total {total}: valid {ok}, over-valence {overval}, disconnected {disconn}, both {both}, empty {empty}");
    println!("isolated atoms: {isolated_atoms}/{real_atoms}");
}

fn main() {
    if std::env::args().nth(1).as_deref() == Some("validity") {
        validity_check();
        return;
    }
    if std::env::args().nth(1).as_deref() == Some("sens") {
        sensitivity_check();
        return;
    }
    if std::env::args().nth(1).as_deref() == Some("guide") {
        guidance_check();
        return;
    }
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(20);
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2e-3);

    let vocab = AtomVocab::default_ligand();
    let spec = ToyDatasetSpec {
        n_complexes: n + 20,
        random_seed: 424242,
        ..ToyDatasetSpec::default()
    };
    let data: Vec<MaskedComplex> = (0..n as u64)
        .map(|i| {
            let c = gen_toy_complex(i, &spec).unwrap();
            MaskedComplex {
                pocket: c.pocket,
                ligand: partition_retain_mask(&c.ligand, &c.mask_indices).unwrap(),
            }
        })
        .collect();
    let holdout: Vec<MaskedComplex> = (n as u64..(n + 20) as u64)
        .map(|i| {
            let c = gen_toy_complex(i, &spec).unwrap();
            MaskedComplex {
                pocket: c.pocket,
                ligand: partition_retain_mask(&c.ligand, &c.mask_indices).unwrap(),
            }
        })
        .collect();

    let t_max: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(100);
    let lambda_atom: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(100.0);
    let lambda_bond: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(100.0);
    let power: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(2.0);
    let batch: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(16);
    let sched_spec = ScheduleSpec {
        kind: ScheduleKind::Polynomial,
        t: t_max,
        power,
    };
    let model_cfg = ModelConfig {
        layers: args.get(9).map(|s| s.parse().unwrap()).unwrap_or(2),
        hidden: args.get(10).map(|s| s.parse().unwrap()).unwrap_or(32),
        edge_hidden: args.get(11).map(|s| s.parse().unwrap()).unwrap_or(16),
        knn: args.get(12).map(|s| s.parse().unwrap()).unwrap_or(8),
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&model_cfg, 7);
    let chk = Checkpoint {
        header: default_header(&params, sched_spec, &vocab),
        params,
        optimizer: None,
    };
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        seed: 99,
        lambda_atom,
        lambda_bond,
        ..TrainConfig::default()
    };

    let t0 = std::time::Instant::now();
    match train(chk, &data, &cfg, &vocab, None) {
        Ok(out) => {
            for s in out.trace.iter().step_by((epochs / 20).max(1)) {
                println!(
                    "epoch {:3}  pos {:.4}  atom {:.5}  bond {:.5}  total {:.4}",
                    s.epoch, s.l_pos, s.l_atom, s.l_bond, s.total
                );
            }
            let last = out.trace.last().unwrap();
            let first = out.trace.first().unwrap();
            println!(
                "ratio final/initial = {:.4}  ({:.1}s)",
                last.total / first.total,
                t0.elapsed().as_secs_f64()
            );
            let sched = sched_spec.build().unwrap();
            for probe_t in [t_max / 20, t_max / 10, t_max / 4, t_max / 2] {
                let (aa, ba) = reconstruction_accuracy(
                    &out.checkpoint.params, &holdout, &sched, probe_t, 777, &vocab).unwrap();
                let (ta, tb) = reconstruction_accuracy(
                    &out.checkpoint.params, &data[..data.len().min(20)], &sched, probe_t, 778, &vocab).unwrap();
                println!("reconstruction t={probe_t:3}: holdout atoms {aa:.3} bonds {ba:.3} | train atoms {ta:.3} bonds {tb:.3}");
            }
            // inspect predicted rows on one training complex at t=10
            {
                use leop::training::{draw_noised, noised_complex_state, argmax};
                use leop::egnn::egnn_forward;
                use leop::rng::stream_rng;
                let complex = &data[0];
                let mut rng = stream_rng(555, 0);
                let noised = draw_noised(&complex.ligand, &vocab, &sched, t_max / 10, &mut rng).unwrap();
                let state = noised_complex_state(complex, &noised, &vocab, sched.t_max());
                let fwd = egnn_forward(&out.checkpoint.params, &state).unwrap();
                let v_hat = fwd.v_hat_rows();
                for (slot, &atom) in complex.ligand.mask_indices().iter().enumerate() {
                    let row: Vec<String> = v_hat[atom].iter().map(|p| format!("{p:.3}")).collect();
                    println!(
                        "slot {slot} atom {atom}: true {} observed {} pred {} row [{}]",
                        argmax(&noised.v0[slot]),
                        argmax(&noised.v_t[slot]),
                        argmax(&v_hat[atom]),
                        row.join(" ")
                    );
                }
            }
            // per-t atom KL: trained vs irreducible (v-hat = v0 gives 0)
            {
                use leop::training::{draw_noised, loss_on_noised};
                use leop::rng::stream_rng;
                println!("t | atom_kl (trained) | pos | bond");
                for t in 1..=sched.t_max() {
                    let mut atom = 0.0;
                    let mut pos = 0.0;
                    let mut bond = 0.0;
                    let mut cnt = 0.0;
                    for i in 0..24u64 {
                        let complex = &data[(i as usize) % data.len()];
                        let mut rng = stream_rng(999, (t as u64) * 1000 + i);
                        let noised = draw_noised(&complex.ligand, &vocab, &sched, t, &mut rng).unwrap();
                        let (b, _, _) = loss_on_noised(&out.checkpoint.params, complex, &sched, &noised, 100.0, 100.0, &vocab).unwrap();
                        atom += b.l_atom; pos += b.l_pos; bond += b.l_bond; cnt += 1.0;
                    }
                    println!("{t:3} | {:.5} | {:.4} | {:.5}", atom / cnt, pos / cnt, bond / cnt);
                }
            }
            let acfg = AffinityTrainConfig {
                epochs: 60,
                batch_size: 16,
                learning_rate: 5e-3,
                seed: 17,
                ..AffinityTrainConfig::default()
            };
            let (chk2, tr) = train_affinity(out.checkpoint, &data, &acfg, &vocab, 3.5).unwrap();
            println!(
                "affinity val rmse: first {:.4} last {:.4}",
                tr.first().unwrap().validation_rmse,
                tr.last().unwrap().validation_rmse
            );
            leop::weights::save(std::path::Path::new("/tmp/leop_probe.leop"), &chk2).unwrap();
            println!("checkpoint saved to /tmp/leop_probe.leop");
        }
        Err(e) => println!("TRAIN ERROR: {e}  ({:.1}s)", t0.elapsed().as_secs_f64()),
    }
}
