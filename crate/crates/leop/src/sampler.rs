//! Reverse-process generation under fixed pocket and retained fragments,
//! with optional affinity guidance, fake-atom stripping, and
//! scaffold-hopping partial noising.
//!
//! Step ordering inside one reverse step: (1) denoiser forward, (2)
//! affinity gradients at the current state when guided, (3) categorical
//! guidance and posterior sampling for atom types then bonds, (4)
//! coordinate posterior sampling with the guided mean shift. Pocket,
//! retained atoms, and R-R bonds are copied verbatim from the input, so
//! context immutability holds bit-exactly.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{
    affinity_node, guide_categorical, guide_coords, AffinityError, GuidanceConfig,
};
use crate::chemdata::{
    oracle_affinity, pad_with_fake_atoms, write_sdf, AtomVocab, BondKind, BondMatrix, ChemError,
    MaskedComplex, MaskedLigand, Molecule3D, PocketContext,
};
use crate::diffusion::{
    q_marginal_coords, q_posterior_categorical, q_posterior_coords, DiffusionError, NoisedState,
};
use crate::egnn::{
    diffused_pair_rows, egnn_forward, onehot_bond_rows, ComplexState, EgnnError, ModelParams,
};
use crate::rng::{poisson, standard_normal, stream_rng};
use crate::schedule::NoiseSchedule;
use crate::training::{argmax, sample_categorical};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Egnn(#[from] EgnnError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Run-level sampling settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleRunConfig {
    pub n_samples: usize,
    pub guidance: GuidanceConfig,
    pub seed: u64,
    /// Cap on extra fake slots beyond the true mask size; 0 disables
    /// padding (the draw is min(1 + Poisson(1), cap)).
    pub pad_extra_cap: u64,
}

impl Default for SampleRunConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            guidance: GuidanceConfig::default(),
            seed: 0,
            pad_extra_cap: 8,
        }
    }
}

impl SampleRunConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if self.n_samples == 0 {
            return Err(SampleError::Config("n_samples must be >= 1".into()));
        }
        if !(self.guidance.delta > 0.0) {
            return Err(SampleError::Config("guidance delta must be > 0".into()));
        }
        Ok(())
    }
}

/// Counters surfaced in the run manifest.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct RunStats {
    pub degenerate_resamples: usize,
    pub clamped_exponents: usize,
}

/// Mutable reverse-chain state over the mask components.
#[derive(Debug, Clone)]
pub struct ReverseState {
    /// Padded complex; retained entries are ground truth, mask entries
    /// placeholders superseded by the fields below.
    pub complex: MaskedComplex,
    /// Absolute mask-slot coordinates.
    pub x_mask: Vec<[f64; 3]>,
    /// One-hot type rows per mask slot.
    pub v_mask: Vec<Vec<f64>>,
    /// One-hot bond rows per diffused pair.
    pub b_diff: Vec<Vec<f64>>,
    /// Upper-triangle rows the diffusion touches.
    pub diffused: Vec<usize>,
    /// Conditioning frame origin.
    pub center: [f64; 3],
    pub t: usize,
}

impl ReverseState {
    /// The full-complex view the denoiser sees.
    pub fn as_complex_state(&self, vocab: &AtomVocab, t_max: usize) -> ComplexState {
        let ligand = &self.complex.ligand;
        let k_v = vocab.k();
        let k_b = BondKind::COUNT;
        let mask_idx = ligand.mask_indices();
        let mut lig_coords = ligand.mol.coords.clone();
        let mut lig_types: Vec<Vec<f64>> = (0..ligand.mol.n_atoms())
            .map(|i| ligand.mol.type_onehot(i, k_v))
            .collect();
        for (slot, &i) in mask_idx.iter().enumerate() {
            lig_coords[i] = self.x_mask[slot];
            lig_types[i] = self.v_mask[slot].clone();
        }
        let mut bond_rows = onehot_bond_rows(&ligand.mol.bonds, k_b);
        for (slot, &row) in self.diffused.iter().enumerate() {
            bond_rows[row] = self.b_diff[slot].clone();
        }
        ComplexState {
            pocket_coords: self.complex.pocket.coords.clone(),
            pocket_elems: self.complex.pocket.elements.clone(),
            lig_coords,
            lig_types,
            bond_rows,
            mask: ligand.mask.clone(),
            t: self.t,
            t_max,
        }
    }
}

/// Prior state at t = T: coordinates N(center, I), categories uniform
/// one-hot, bond rows sampled once per unordered pair (symmetric by
/// construction).
pub fn sample_prior(
    n_mask: usize,
    n_diffused: usize,
    center: [f64; 3],
    k_v: usize,
    k_b: usize,
    t_max: usize,
    rng: &mut ChaCha20Rng,
) -> NoisedState {
    let x: Vec<[f64; 3]> = (0..n_mask)
        .map(|_| {
            [
                center[0] + standard_normal(rng),
                center[1] + standard_normal(rng),
                center[2] + standard_normal(rng),
            ]
        })
        .collect();
    let v: Vec<Vec<f64>> = (0..n_mask)
        .map(|_| {
            let mut row = vec![0.0; k_v];
            row[rng.gen_range(0..k_v)] = 1.0;
            row
        })
        .collect();
    let b: Vec<Vec<f64>> = (0..n_diffused)
        .map(|_| {
            let mut row = vec![0.0; k_b];
            row[rng.gen_range(0..k_b)] = 1.0;
            row
        })
        .collect();
    NoisedState { x, v, b, t: t_max }
}

/// One reverse step t -> t-1.
pub fn denoise_step(
    params: &ModelParams,
    state: &ReverseState,
    sched: &NoiseSchedule,
    guidance: &GuidanceConfig,
    vocab: &AtomVocab,
    rng: &mut ChaCha20Rng,
    stats: &mut RunStats,
) -> Result<ReverseState, SampleError> {
    let t = state.t;
    debug_assert!(t >= 1);
    let k_v = vocab.k();
    let k_b = BondKind::COUNT;
    let cs = state.as_complex_state(vocab, sched.t_max());
    let mask_idx = state.complex.ligand.mask_indices();

    // denoiser predictions
    let fwd = egnn_forward(params, &cs)?;
    let x0_hat = fwd.x0_hat_mask(&cs.mask);
    let v_hat = fwd.v_hat_rows();
    let b_hat = fwd.b_hat_rows();

    // affinity gradients at the current noised state
    let grads = if guidance.enabled {
        let live: Vec<bool> = cs
            .lig_types
            .iter()
            .map(|row| argmax(row) != vocab.fake_index())
            .collect();
        let mut fwd = fwd;
        let node = affinity_node(&mut fwd, &live, t, params.config.time_width)?;
        let g = fwd.tape.backward(node);
        Some(fwd.input_grads(&g, &cs))
    } else {
        None
    };

    // atom types: guide, posterior, sample (argmax at the final step)
    let mut v_next = Vec::with_capacity(mask_idx.len());
    for (slot, &atom) in mask_idx.iter().enumerate() {
        let mut p_t = state.v_mask[slot].clone();
        if let Some(g) = &grads {
            if guidance.r1 != 0.0 {
                let (tilted, clamps) =
                    guide_categorical(&p_t, &g.d_v[atom], guidance.r1, guidance.delta);
                stats.clamped_exponents += clamps;
                p_t = tilted;
            }
        }
        let post = match q_posterior_categorical(&p_t, &v_hat[atom], k_v, sched, t) {
            Ok(p) => p,
            Err(DiffusionError::DegeneratePosterior(_)) => {
                stats.degenerate_resamples += 1;
                vec![1.0 / k_v as f64; k_v]
            }
            Err(e) => return Err(e.into()),
        };
        let idx = if t == 1 {
            argmax(&post)
        } else {
            sample_categorical(rng, &post)
        };
        let mut row = vec![0.0; k_v];
        row[idx] = 1.0;
        v_next.push(row);
    }

    // bonds: same mechanism over diffused pairs
    let mut b_next = Vec::with_capacity(state.diffused.len());
    for (slot, &row_idx) in state.diffused.iter().enumerate() {
        let mut p_t = state.b_diff[slot].clone();
        if let Some(g) = &grads {
            if guidance.r2 != 0.0 {
                let (tilted, clamps) =
                    guide_categorical(&p_t, &g.d_b[row_idx], guidance.r2, guidance.delta);
                stats.clamped_exponents += clamps;
                p_t = tilted;
            }
        }
        let post = match q_posterior_categorical(&p_t, &b_hat[row_idx], k_b, sched, t) {
            Ok(p) => p,
            Err(DiffusionError::DegeneratePosterior(_)) => {
                stats.degenerate_resamples += 1;
                vec![1.0 / k_b as f64; k_b]
            }
            Err(e) => return Err(e.into()),
        };
        let idx = if t == 1 {
            argmax(&post)
        } else {
            sample_categorical(rng, &post)
        };
        let mut row = vec![0.0; k_b];
        row[idx] = 1.0;
        b_next.push(row);
    }

    // coordinates: posterior in the centered frame, guided mean shift
    let c = state.center;
    let x_t_c: Vec<[f64; 3]> = state
        .x_mask
        .iter()
        .map(|x| [x[0] - c[0], x[1] - c[1], x[2] - c[2]])
        .collect();
    let x0_hat_c: Vec<[f64; 3]> = x0_hat
        .iter()
        .map(|x| [x[0] - c[0], x[1] - c[1], x[2] - c[2]])
        .collect();
    let (mu, beta) = q_posterior_coords(&x_t_c, &x0_hat_c, sched, t)?;
    let grad_x: Vec<[f64; 3]> = match &grads {
        Some(g) => mask_idx.iter().map(|&i| g.d_x[i]).collect(),
        None => vec![[0.0; 3]; mask_idx.len()],
    };
    let s = if guidance.enabled { guidance.s } else { 0.0 };
    let x_next_c = guide_coords(&mu, beta, &grad_x, s, rng);
    let x_next: Vec<[f64; 3]> = x_next_c
        .iter()
        .map(|x| [x[0] + c[0], x[1] + c[1], x[2] + c[2]])
        .collect();

    Ok(ReverseState {
        complex: state.complex.clone(),
        x_mask: x_next,
        v_mask: v_next,
        b_diff: b_next,
        diffused: state.diffused.clone(),
        center: state.center,
        t: t - 1,
    })
}

/// Remove atoms whose argmax type is FAKE, dropping their bond rows and
/// reindexing densely.
pub fn strip_fake(mol: &Molecule3D, vocab: &AtomVocab) -> Molecule3D {
    let keep: Vec<usize> = (0..mol.n_atoms())
        .filter(|&i| mol.types[i] != vocab.fake_index())
        .collect();
    let coords: Vec<[f64; 3]> = keep.iter().map(|&i| mol.coords[i]).collect();
    let types: Vec<usize> = keep.iter().map(|&i| mol.types[i]).collect();
    let mut bonds = BondMatrix::empty(keep.len());
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate().skip(a + 1) {
            bonds.set(a, b, mol.bonds.get(i, j));
        }
    }
    Molecule3D {
        coords,
        types,
        bonds,
    }
}

/// One generated sample: the final assembled molecule (with fake slots
/// still present), plus bookkeeping.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub sample_index: usize,
    pub stream: u64,
    pub n_mask: usize,
    /// Final molecule after stripping fakes; None when every mask slot
    /// collapsed to FAKE.
    pub molecule: Option<Molecule3D>,
    /// Final positions of every mask slot before fake stripping, in mask
    /// order (used for fragment RMSD against the original).
    pub mask_slot_coords: Vec<[f64; 3]>,
    pub predicted_affinity: Option<f64>,
    pub oracle_affinity: Option<f64>,
    pub stats: RunStats,
}

/// Manifest row persisted per sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleRecord {
    pub sample_index: usize,
    pub target_index: usize,
    pub stream: u64,
    pub n_mask: usize,
    pub guided: bool,
    pub predicted_affinity: Option<f64>,
    pub oracle_affinity: Option<f64>,
    pub file: Option<String>,
    pub degenerate_resamples: usize,
    pub clamped_exponents: usize,
}

/// Run manifest: self-describing record of one sampling run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub weights_hash: String,
    pub guided: bool,
    pub samples: Vec<SampleRecord>,
}

/// Generate `cfg.n_samples` molecules for one pocket + retained fragment.
///
/// Per sample: choose the padded mask size, sample the prior, run the
/// reverse chain from T down to 1, take argmax categories, strip fakes.
/// Samples are independent; each runs on its own seed stream.
pub fn generate(
    params: &ModelParams,
    pocket: &PocketContext,
    retained: &MaskedLigand,
    cfg: &SampleRunConfig,
    sched: &NoiseSchedule,
    vocab: &AtomVocab,
    contact_radius: f64,
) -> Result<Vec<GeneratedSample>, SampleError> {
    cfg.validate()?;
    if retained.retained_indices().is_empty() {
        return Err(SampleError::Config("retained fragment is empty".into()));
    }
    (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let stream = i as u64;
            let mut rng = stream_rng(cfg.seed, stream);
            generate_one(
                params,
                pocket,
                retained,
                cfg,
                sched,
                vocab,
                contact_radius,
                i,
                stream,
                &mut rng,
                None,
            )
        })
        .collect()
}

/// Scaffold hopping: renoise the selected fragment for `t_hop` steps via
/// the forward marginals, then denoise it back.
#[allow(clippy::too_many_arguments)]
pub fn scaffold_hop(
    params: &ModelParams,
    pocket: &PocketContext,
    ligand: &Molecule3D,
    fragment_indices: &[usize],
    t_hop: usize,
    cfg: &SampleRunConfig,
    sched: &NoiseSchedule,
    vocab: &AtomVocab,
    contact_radius: f64,
) -> Result<Vec<GeneratedSample>, SampleError> {
    cfg.validate()?;
    if t_hop == 0 || t_hop > sched.t_max() {
        return Err(SampleError::Config(format!(
            "t_hop must be in 1..=T, got {t_hop}"
        )));
    }
    let retained = crate::chemdata::partition_retain_mask(ligand, fragment_indices)?;
    (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let stream = i as u64;
            let mut rng = stream_rng(cfg.seed, stream);
            generate_one(
                params,
                pocket,
                &retained,
                cfg,
                sched,
                vocab,
                contact_radius,
                i,
                stream,
                &mut rng,
                Some(t_hop),
            )
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn generate_one(
    params: &ModelParams,
    pocket: &PocketContext,
    retained: &MaskedLigand,
    cfg: &SampleRunConfig,
    sched: &NoiseSchedule,
    vocab: &AtomVocab,
    contact_radius: f64,
    sample_index: usize,
    stream: u64,
    rng: &mut ChaCha20Rng,
    hop_from: Option<usize>,
) -> Result<GeneratedSample, SampleError> {
    let k_v = vocab.k();
    let k_b = BondKind::COUNT;

    // padded mask size per policy
    let extra = if cfg.pad_extra_cap == 0 {
        0
    } else {
        (1 + poisson(rng, 1.0)).min(cfg.pad_extra_cap) as usize
    };
    let padded = pad_with_fake_atoms(retained, retained.n_mask() + extra, vocab)?;
    let complex = MaskedComplex {
        pocket: pocket.clone(),
        ligand: padded,
    };
    let center = complex.ligand.prior_center();
    let mask_idx = complex.ligand.mask_indices();
    let diffused = diffused_pair_rows(&complex.ligand.mask);

    let (t_start, x0, v0, b0) = match hop_from {
        None => {
            let prior = sample_prior(
                mask_idx.len(),
                diffused.len(),
                center,
                k_v,
                k_b,
                sched.t_max(),
                rng,
            );
            (prior.t, prior.x, prior.v, prior.b)
        }
        Some(t_hop) => {
            // forward-noise the true fragment content to step t_hop
            let lig = &complex.ligand;
            let x0_c: Vec<[f64; 3]> = mask_idx
                .iter()
                .map(|&i| {
                    let p = lig.mol.coords[i];
                    [p[0] - center[0], p[1] - center[1], p[2] - center[2]]
                })
                .collect();
            let x_c = q_marginal_coords(&x0_c, sched, t_hop, rng)?;
            let x = x_c
                .iter()
                .map(|p| [p[0] + center[0], p[1] + center[1], p[2] + center[2]])
                .collect();
            let v = mask_idx
                .iter()
                .map(|&i| {
                    let row = lig.mol.type_onehot(i, k_v);
                    let marg = crate::diffusion::marginal_categorical_row(&row, k_v, sched, t_hop);
                    let mut out = vec![0.0; k_v];
                    out[sample_categorical(rng, &marg)] = 1.0;
                    out
                })
                .collect();
            let all_rows = onehot_bond_rows(&lig.mol.bonds, k_b);
            let b = diffused
                .iter()
                .map(|&r| {
                    let marg =
                        crate::diffusion::marginal_categorical_row(&all_rows[r], k_b, sched, t_hop);
                    let mut out = vec![0.0; k_b];
                    out[sample_categorical(rng, &marg)] = 1.0;
                    out
                })
                .collect();
            (t_hop, x, v, b)
        }
    };

    let mut state = ReverseState {
        complex,
        x_mask: x0,
        v_mask: v0,
        b_diff: b0,
        diffused,
        center,
        t: t_start,
    };
    let mut stats = RunStats::default();
    while state.t >= 1 {
        state = denoise_step(params, &state, sched, &cfg.guidance, vocab, rng, &mut stats)?;
    }

    // assemble the final molecule: retained entries verbatim, mask slots
    // from the chain's final state
    let lig = &state.complex.ligand;
    let n = lig.mol.n_atoms();
    let mut coords = lig.mol.coords.clone();
    let mut types = lig.mol.types.clone();
    for (slot, &i) in mask_idx.iter().enumerate() {
        coords[i] = state.x_mask[slot];
        types[i] = argmax(&state.v_mask[slot]);
    }
    let mut bonds = BondMatrix::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            bonds.set(i, j, lig.mol.bonds.get(i, j));
        }
    }
    for (slot, &row) in state.diffused.iter().enumerate() {
        let (i, j) = upper_pair_of(n, row);
        bonds.set(
            i,
            j,
            BondKind::from_index(argmax(&state.b_diff[slot])).unwrap_or(BondKind::None),
        );
    }
    // fake atoms carry no bonds
    for (slot, &i) in mask_idx.iter().enumerate() {
        if types[i] == vocab.fake_index() {
            let _ = slot;
            for j in 0..n {
                if i != j {
                    bonds.set(i, j, BondKind::None);
                }
            }
        }
    }
    let full = Molecule3D {
        coords,
        types,
        bonds,
    };

    let mask_slot_coords: Vec<[f64; 3]> = state.x_mask.clone();
    let all_mask_fake = mask_idx.iter().all(|&i| full.types[i] == vocab.fake_index());
    if all_mask_fake {
        return Ok(GeneratedSample {
            sample_index,
            stream,
            n_mask: mask_idx.len(),
            molecule: None,
            mask_slot_coords,
            predicted_affinity: None,
            oracle_affinity: None,
            stats,
        });
    }

    let clean = strip_fake(&full, vocab);
    let oracle = oracle_affinity(pocket, &clean, vocab, contact_radius)?;
    // predicted affinity of the final configuration, evaluated at t = 1
    let predicted = {
        let mut final_state = state.clone();
        final_state.t = 1;
        let cs = final_state.as_complex_state(vocab, sched.t_max());
        let live: Vec<bool> = cs
            .lig_types
            .iter()
            .map(|row| argmax(row) != vocab.fake_index())
            .collect();
        crate::affinity::predict_affinity(params, &cs, &live).ok()
    };

    Ok(GeneratedSample {
        sample_index,
        stream,
        n_mask: mask_idx.len(),
        molecule: Some(clean),
        mask_slot_coords,
        predicted_affinity: predicted,
        oracle_affinity: Some(oracle),
        stats,
    })
}

/// Inverse of the upper-triangle row index: the pair (i, j), i < j.
pub fn upper_pair_of(n: usize, row: usize) -> (usize, usize) {
    let mut r = row;
    for i in 0..n {
        let in_row = n - i - 1;
        if r < in_row {
            return (i, i + 1 + r);
        }
        r -= in_row;
    }
    panic!("row {row} out of range for n = {n}");
}

/// Write one run to disk: SDF per emitted molecule plus manifest.json.
pub fn write_run(
    run_dir: &Path,
    samples_by_target: &[(usize, Vec<GeneratedSample>)],
    vocab: &AtomVocab,
    guided: bool,
    weights_hash: &str,
) -> Result<RunManifest, SampleError> {
    std::fs::create_dir_all(run_dir)?;
    let mut records = Vec::new();
    for (target_index, samples) in samples_by_target {
        for s in samples {
            let file = match &s.molecule {
                Some(mol) => {
                    let name = format!("target{target_index}_sample{:04}.sdf", s.sample_index);
                    let text = write_sdf(mol, vocab, &name)?;
                    std::fs::write(run_dir.join(&name), text)?;
                    Some(name)
                }
                None => None,
            };
            records.push(SampleRecord {
                sample_index: s.sample_index,
                target_index: *target_index,
                stream: s.stream,
                n_mask: s.n_mask,
                guided,
                predicted_affinity: s.predicted_affinity,
                oracle_affinity: s.oracle_affinity,
                file,
                degenerate_resamples: s.stats.degenerate_resamples,
                clamped_exponents: s.stats.clamped_exponents,
            });
        }
    }
    let manifest = RunManifest {
        schema_version: 1,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        weights_hash: weights_hash.to_string(),
        guided,
        samples: records,
    };
    std::fs::write(
        run_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// RMSD between the original mask-slot positions and their regenerated
/// counterparts (same slot count; padding must be disabled for this).
pub fn fragment_rmsd(original: &[[f64; 3]], regenerated: &[[f64; 3]]) -> f64 {
    assert_eq!(original.len(), regenerated.len());
    let n = original.len().max(1);
    let ss: f64 = original
        .iter()
        .zip(regenerated)
        .map(|(a, b)| {
            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
        })
        .sum();
    (ss / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemdata::{gen_toy_complex, partition_retain_mask, ToyDatasetSpec};
    use crate::egnn::ModelConfig;
    use crate::schedule::{ScheduleKind, ScheduleSpec};

    fn setup() -> (ModelParams, NoiseSchedule, AtomVocab) {
        let cfg = ModelConfig {
            layers: 1,
            hidden: 16,
            edge_hidden: 8,
            knn: 4,
            time_width: 8,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 5);
        let sched = ScheduleSpec {
            kind: ScheduleKind::Polynomial,
            t: 8,
            power: 2.0,
        }
        .build()
        .unwrap();
        (params, sched, AtomVocab::default_ligand())
    }

    fn toy_masked(seed: u64) -> (PocketContext, MaskedLigand) {
        let spec = ToyDatasetSpec {
            n_complexes: 1,
            random_seed: 77,
            ligand_size_range: (5, 7),
            pocket_size_range: (5, 8),
            ..ToyDatasetSpec::default()
        };
        let c = gen_toy_complex(seed, &spec).unwrap();
        let ligand = partition_retain_mask(&c.ligand, &c.mask_indices).unwrap();
        (c.pocket, ligand)
    }

    #[test]
    fn prior_frequencies_uniform() {
        let mut rng = stream_rng(1, 0);
        let n = 100_000;
        let k_v = 7;
        let mut counts = vec![0usize; k_v];
        let mut coord_sum = 0.0;
        let mut coord_sq = 0.0;
        for _ in 0..n / 100 {
            let prior = sample_prior(100, 0, [2.0, 0.0, 0.0], k_v, 5, 50, &mut rng);
            assert_eq!(prior.t, 50);
            for row in &prior.v {
                counts[argmax(row)] += 1;
            }
            for p in &prior.x {
                coord_sum += p[0] - 2.0;
                coord_sq += (p[0] - 2.0) * (p[0] - 2.0);
            }
            assert!(prior.b.is_empty());
        }
        let expect = n as f64 / k_v as f64;
        let se = (n as f64 * (1.0 / k_v as f64) * (1.0 - 1.0 / k_v as f64)).sqrt();
        for (k, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 3.0 * se,
                "category {k}: {c} vs {expect}"
            );
        }
        let mean = coord_sum / n as f64;
        let var = coord_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0f64 / n as f64).sqrt());
    }

    #[test]
    fn prior_bonds_symmetric_by_construction() {
        // bond rows are stored per unordered pair: symmetry is structural
        let mut rng = stream_rng(2, 0);
        let prior = sample_prior(4, 6, [0.0; 3], 7, 5, 50, &mut rng);
        assert_eq!(prior.b.len(), 6);
        for row in prior.b {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let (params, sched, vocab) = setup();
        let (pocket, ligand) = toy_masked(0);
        let cfg = SampleRunConfig {
            n_samples: 3,
            seed: 9,
            guidance: GuidanceConfig {
                enabled: false,
                ..GuidanceConfig::default()
            },
            pad_extra_cap: 4,
        };
        let a = generate(&params, &pocket, &ligand, &cfg, &sched, &vocab, 3.5).unwrap();
        let b = generate(&params, &pocket, &ligand, &cfg, &sched, &vocab, 3.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.molecule, y.molecule);
            assert_eq!(x.oracle_affinity, y.oracle_affinity);
        }
    }

    #[test]
    fn retained_context_bit_identical() {
        let (params, sched, vocab) = setup();
        let (pocket, ligand) = toy_masked(1);
        let cfg = SampleRunConfig {
            n_samples: 4,
            seed: 11,
            guidance: GuidanceConfig::default(),
            pad_extra_cap: 3,
        };
        let out = generate(&params, &pocket, &ligand, &cfg, &sched, &vocab, 3.5).unwrap();
        let retained = ligand.retained_indices();
        for s in out {
            let Some(mol) = s.molecule else { continue };
            // retained atoms appear verbatim as a prefix-preserving subset:
            // indices shift only by removed fake slots, which never sit
            // before a retained atom unless masked atoms were stripped
            for (orig_pos, &idx) in retained.iter().enumerate() {
                let _ = orig_pos;
                // find the retained atom by exact coordinate match
                let found = mol
                    .coords
                    .iter()
                    .position(|c| *c == ligand.mol.coords[idx])
                    .expect("retained atom missing from output");
                assert_eq!(mol.types[found], ligand.mol.types[idx]);
            }
            // R-R bonds preserved exactly
            for (a_i, &i) in retained.iter().enumerate() {
                for &j in retained.iter().skip(a_i + 1) {
                    let pi = mol
                        .coords
                        .iter()
                        .position(|c| *c == ligand.mol.coords[i])
                        .unwrap();
                    let pj = mol
                        .coords
                        .iter()
                        .position(|c| *c == ligand.mol.coords[j])
                        .unwrap();
                    assert_eq!(mol.bonds.get(pi, pj), ligand.mol.bonds.get(i, j));
                }
            }
        }
    }

    #[test]
    fn guidance_disabled_matches_zero_scales_bitwise() {
        let (mut params, sched, vocab) = setup();
        // give the affinity head nonzero weights so the guided path would
        // differ if scales were active
        for v in &mut params.affinity_w.data {
            *v = 0.3;
        }
        let (pocket, ligand) = toy_masked(2);
        let disabled = SampleRunConfig {
            n_samples: 3,
            seed: 21,
            guidance: GuidanceConfig {
                enabled: false,
                ..GuidanceConfig::default()
            },
            pad_extra_cap: 2,
        };
        let zeroed = SampleRunConfig {
            guidance: GuidanceConfig {
                enabled: true,
                s: 0.0,
                r1: 0.0,
                r2: 0.0,
                delta: 0.01,
            },
            ..disabled.clone()
        };
        let a = generate(&params, &pocket, &ligand, &disabled, &sched, &vocab, 3.5).unwrap();
        let b = generate(&params, &pocket, &ligand, &zeroed, &sched, &vocab, 3.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.molecule, y.molecule);
        }
    }

    #[test]
    fn strip_fake_cases() {
        let vocab = AtomVocab::default_ligand();
        let fake = vocab.fake_index();
        // no fakes: identity
        let mol = Molecule3D {
            coords: vec![[0.0; 3], [1.5, 0.0, 0.0]],
            types: vec![0, 1],
            bonds: {
                let mut b = BondMatrix::empty(2);
                b.set(0, 1, BondKind::Single);
                b
            },
        };
        assert_eq!(strip_fake(&mol, &vocab), mol);

        // 2 real + 3 fake: bond submatrix preserved
        let mol5 = Molecule3D {
            coords: vec![[0.0; 3]; 5],
            types: vec![0, fake, 1, fake, fake],
            bonds: {
                let mut b = BondMatrix::empty(5);
                b.set(0, 2, BondKind::Double);
                b
            },
        };
        let stripped = strip_fake(&mol5, &vocab);
        assert_eq!(stripped.n_atoms(), 2);
        assert_eq!(stripped.types, vec![0, 1]);
        assert_eq!(stripped.bonds.get(0, 1), BondKind::Double);

        // all fake: empty
        let molf = Molecule3D {
            coords: vec![[0.0; 3]],
            types: vec![fake],
            bonds: BondMatrix::empty(1),
        };
        assert_eq!(strip_fake(&molf, &vocab).n_atoms(), 0);
    }

    #[test]
    fn n_samples_zero_rejected() {
        let cfg = SampleRunConfig {
            n_samples: 0,
            ..SampleRunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hop_bounds_checked() {
        let (params, sched, vocab) = setup();
        let (pocket, ligand) = toy_masked(3);
        let cfg = SampleRunConfig {
            n_samples: 1,
            seed: 5,
            guidance: GuidanceConfig {
                enabled: false,
                ..GuidanceConfig::default()
            },
            pad_extra_cap: 0,
        };
        let frag = ligand.mask_indices();
        assert!(scaffold_hop(
            &params, &pocket, &ligand.mol, &frag, 0, &cfg, &sched, &vocab, 3.5
        )
        .is_err());
        assert!(scaffold_hop(
            &params, &pocket, &ligand.mol, &frag, 9, &cfg, &sched, &vocab, 3.5
        )
        .is_err());
    }

    #[test]
    fn hop_preserves_non_fragment_atoms() {
        let (params, sched, vocab) = setup();
        let (pocket, ligand) = toy_masked(4);
        let frag = ligand.mask_indices();
        let cfg = SampleRunConfig {
            n_samples: 2,
            seed: 31,
            guidance: GuidanceConfig {
                enabled: false,
                ..GuidanceConfig::default()
            },
            pad_extra_cap: 0,
        };
        let out = scaffold_hop(
            &params, &pocket, &ligand.mol, &frag, 4, &cfg, &sched, &vocab, 3.5,
        )
        .unwrap();
        let retained = ligand.retained_indices();
        for s in out {
            let Some(mol) = s.molecule else { continue };
            for &i in &retained {
                assert!(
                    mol.coords.iter().any(|c| *c == ligand.mol.coords[i]),
                    "retained atom {i} missing"
                );
            }
        }
    }

    #[test]
    fn upper_pair_inverse() {
        let n = 6;
        let mut row = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                assert_eq!(upper_pair_of(n, row), (i, j));
                row += 1;
            }
        }
    }

    #[test]
    fn output_structurally_well_formed() {
        let (params, sched, vocab) = setup();
        let (pocket, ligand) = toy_masked(6);
        let cfg = SampleRunConfig {
            n_samples: 5,
            seed: 13,
            guidance: GuidanceConfig::default(),
            pad_extra_cap: 3,
        };
        let out = generate(&params, &pocket, &ligand, &cfg, &sched, &vocab, 3.5).unwrap();
        for s in out {
            let Some(mol) = s.molecule else { continue };
            assert!(!mol.has_fake(&vocab));
            for i in 0..mol.n_atoms() {
                assert_eq!(mol.bonds.get(i, i), BondKind::None);
                for j in 0..mol.n_atoms() {
                    assert_eq!(mol.bonds.get(i, j), mol.bonds.get(j, i));
                }
            }
        }
    }
}
