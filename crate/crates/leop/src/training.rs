//! Composite loss assembly, stochastic optimization, and checkpointing.
//!
//! Per sample: draw a step t, pad the mask with fake atoms, noise the
//! mask components forward, and penalize
//!
//! - position: mean squared error between the sampled x^{t-1} and the
//!   posterior mean computed from the predicted clean coordinates,
//! - atom types: mean KL of the true categorical posterior against the
//!   posterior evaluated at the predicted clean rows,
//! - bonds: the same KL over diffused pairs,
//!
//! combined as l_pos + lambda_atom * l_atom + lambda_bond * l_bond.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Mat, NodeId};
use crate::chemdata::{pad_with_fake_atoms, AtomVocab, ChemError, MaskedComplex, MaskedLigand};
use crate::diffusion::{q_marginal_coords, q_posterior_categorical, q_step_coords, DiffusionError};
use crate::egnn::{
    diffused_pair_rows, egnn_forward, onehot_bond_rows, ComplexState, EgnnError, EgnnForward,
    ModelParams,
};
use crate::rng::{poisson, stream_rng};
use crate::schedule::{step_params, NoiseSchedule};
use crate::weights::{save, Checkpoint, OptimizerState, WeightsError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Egnn(#[from] EgnnError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("non-finite loss at epoch {epoch}; last good checkpoint retained")]
    NonFiniteLoss { epoch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Loss weights, optimizer settings, and schedule bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_atom: f64,
    pub lambda_bond: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_atom: 100.0,
            lambda_bond: 100.0,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

const ADAM_EPS: f64 = 1e-8;

/// Additive floor inside the categorical-posterior normalizer; bounds
/// the per-entry cross-entropy near 14 nats.
const KL_FLOOR: f64 = 1e-6;

/// Global-norm cap applied to the mean batch gradient before Adam.
const GRAD_CLIP_NORM: f64 = 25.0;

/// Weight of the auxiliary clean-sample cross-entropy inside each
/// categorical term. The posterior KL alone is nearly indifferent to the
/// predicted clean rows at low noise (the one-step likelihood factor
/// carries the posterior), which leaves argmax reconstruction untrained;
/// a hybrid objective restores O(1) gradients on the clean-sample heads
/// at every step. Both components vanish when the prediction equals the
/// clean row, so l_atom = l_bond = 0 still characterizes a perfect fit.
const AUX_CE_WEIGHT: f64 = 0.2;

/// Cap on extra fake-atom slots beyond the true mask size.
pub const PAD_EXTRA_CAP: u64 = 8;

/// Padding draw: at least one extra slot, mean two, capped.
pub fn sample_pad_extra<R: Rng>(rng: &mut R) -> usize {
    (1 + poisson(rng, 1.0)).min(PAD_EXTRA_CAP) as usize
}

/// The three loss terms at one sampled step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_pos: f64,
    pub l_atom: f64,
    pub l_bond: f64,
    pub total: f64,
    pub t: usize,
}

/// A frozen forward-noised sample: everything `loss_on_noised` needs,
/// with no residual randomness.
#[derive(Debug, Clone)]
pub struct NoisedSample {
    pub t: usize,
    /// Centering origin (retained-fragment centroid).
    pub center: [f64; 3],
    /// Mask coordinates at t-1 and t, centered frame.
    pub x_prev: Vec<[f64; 3]>,
    pub x_t: Vec<[f64; 3]>,
    /// One-hot rows at t for mask atoms / diffused pairs.
    pub v_t: Vec<Vec<f64>>,
    pub b_t: Vec<Vec<f64>>,
    /// Clean one-hot rows.
    pub v0: Vec<Vec<f64>>,
    pub b0: Vec<Vec<f64>>,
    /// Diffused upper-triangle row indices.
    pub diffused: Vec<usize>,
}

pub fn sample_categorical<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

fn onehot(k: usize, idx: usize) -> Vec<f64> {
    let mut row = vec![0.0; k];
    row[idx] = 1.0;
    row
}

/// Draw the correlated pair (M^{t-1}, M^t) from the forward process.
pub fn draw_noised(
    ligand: &MaskedLigand,
    vocab: &AtomVocab,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut ChaCha20Rng,
) -> Result<NoisedSample, TrainError> {
    let k_v = vocab.k();
    let k_b = crate::chemdata::BondKind::COUNT;
    let center = ligand.retain_centroid();
    let mask_idx = ligand.mask_indices();

    let x0: Vec<[f64; 3]> = mask_idx
        .iter()
        .map(|&i| {
            let c = ligand.mol.coords[i];
            [c[0] - center[0], c[1] - center[1], c[2] - center[2]]
        })
        .collect();
    let x_prev = q_marginal_coords(&x0, sched, t - 1, rng)?;
    let x_t = q_step_coords(&x_prev, sched, t, rng)?;

    let v0: Vec<Vec<f64>> = mask_idx
        .iter()
        .map(|&i| ligand.mol.type_onehot(i, k_v))
        .collect();
    let v_t: Vec<Vec<f64>> = v0
        .iter()
        .map(|row| {
            let marg = crate::diffusion::marginal_categorical_row(row, k_v, sched, t);
            onehot(k_v, sample_categorical(rng, &marg))
        })
        .collect();

    let all_rows = onehot_bond_rows(&ligand.mol.bonds, k_b);
    let diffused = diffused_pair_rows(&ligand.mask);
    let b0: Vec<Vec<f64>> = diffused.iter().map(|&r| all_rows[r].clone()).collect();
    let b_t: Vec<Vec<f64>> = b0
        .iter()
        .map(|row| {
            let marg = crate::diffusion::marginal_categorical_row(row, k_b, sched, t);
            onehot(k_b, sample_categorical(rng, &marg))
        })
        .collect();

    Ok(NoisedSample {
        t,
        center,
        x_prev,
        x_t,
        v_t,
        b_t,
        v0,
        b0,
        diffused,
    })
}

/// Build the full-complex state the denoiser sees at step t.
pub fn noised_complex_state(
    complex: &MaskedComplex,
    noised: &NoisedSample,
    vocab: &AtomVocab,
    t_max: usize,
) -> ComplexState {
    let ligand = &complex.ligand;
    let k_v = vocab.k();
    let k_b = crate::chemdata::BondKind::COUNT;
    let mask_idx = ligand.mask_indices();

    let mut lig_coords = ligand.mol.coords.clone();
    let mut lig_types: Vec<Vec<f64>> = (0..ligand.mol.n_atoms())
        .map(|i| ligand.mol.type_onehot(i, k_v))
        .collect();
    for (slot, &i) in mask_idx.iter().enumerate() {
        lig_coords[i] = [
            noised.x_t[slot][0] + noised.center[0],
            noised.x_t[slot][1] + noised.center[1],
            noised.x_t[slot][2] + noised.center[2],
        ];
        lig_types[i] = noised.v_t[slot].clone();
    }
    let mut bond_rows = onehot_bond_rows(&ligand.mol.bonds, k_b);
    for (slot, &row) in noised.diffused.iter().enumerate() {
        bond_rows[row] = noised.b_t[slot].clone();
    }

    ComplexState {
        pocket_coords: complex.pocket.coords.clone(),
        pocket_elems: complex.pocket.elements.clone(),
        lig_coords,
        lig_types,
        bond_rows,
        mask: ligand.mask.clone(),
        t: noised.t,
        t_max,
    }
}

/// Record the forward pass and extend the tape with the composite loss.
/// Returns the breakdown, the forward record, and the loss node.
pub fn loss_on_noised(
    params: &ModelParams,
    complex: &MaskedComplex,
    sched: &NoiseSchedule,
    noised: &NoisedSample,
    lambda_atom: f64,
    lambda_bond: f64,
    vocab: &AtomVocab,
) -> Result<(LossBreakdown, EgnnForward, NodeId), TrainError> {
    let t = noised.t;
    let k_v = vocab.k();
    let k_b = crate::chemdata::BondKind::COUNT;
    let state = noised_complex_state(complex, noised, vocab, sched.t_max());
    let mut fwd = egnn_forward(params, &state)?;
    let p = step_params(sched, t).map_err(DiffusionError::from)?;

    let mask_idx: Vec<usize> = complex.ligand.mask_indices();
    let n_mask = mask_idx.len();

    // ---- position loss on mask atoms, centered frame
    let x0_hat_mask = fwd.tape.gather_rows(fwd.x_out, &mask_idx);
    let center_rows = {
        let mut m = Mat::zeros(n_mask, 3);
        for r in 0..n_mask {
            m.data[r * 3..r * 3 + 3].copy_from_slice(&noised.center);
        }
        fwd.tape.leaf(m)
    };
    let x0_hat_c = fwd.tape.sub(x0_hat_mask, center_rows);
    let mu_pred_part = fwd.tape.scale(x0_hat_c, p.coef_x0);
    // constant part of the posterior mean from the observed x^t
    let mu_const = {
        let mut m = Mat::zeros(n_mask, 3);
        for (r, xt) in noised.x_t.iter().enumerate() {
            for d in 0..3 {
                m[(r, d)] = p.coef_xt * xt[d];
            }
        }
        fwd.tape.leaf(m)
    };
    let mu = fwd.tape.add(mu_pred_part, mu_const);
    let target = {
        let mut m = Mat::zeros(n_mask, 3);
        for (r, xp) in noised.x_prev.iter().enumerate() {
            m.data[r * 3..r * 3 + 3].copy_from_slice(xp);
        }
        fwd.tape.leaf(m)
    };
    let diff = fwd.tape.sub(mu, target);
    let sq = fwd.tape.mul(diff, diff);
    let sum_sq = fwd.tape.sum_all(sq);
    let l_pos = fwd.tape.scale(sum_sq, 1.0 / n_mask.max(1) as f64);

    // ---- categorical term shared by atoms and bonds:
    // KL(q || p_theta) with q the true posterior (constant rows) and
    // p_theta the posterior at the predicted clean rows, plus a weighted
    // clean-sample cross-entropy -ln(pred[clean]).
    let kl_term = |fwd: &mut EgnnForward,
                   pred_rows: NodeId,
                   rows_sel: &[usize],
                   cur: &[Vec<f64>],
                   clean: &[Vec<f64>],
                   k: usize|
     -> Result<(NodeId, f64), TrainError> {
        let n = rows_sel.len();
        let pred = fwd.tape.gather_rows(pred_rows, rows_sel);
        let sp = step_params(sched, t).map_err(DiffusionError::from)?;
        let step_scale = sp.alpha_step.sqrt();
        let step_fill = (1.0 - step_scale) / k as f64;
        let marg_scale = sched.alpha(t - 1).sqrt();
        let marg_fill = (1.0 - marg_scale) / k as f64;

        // likelihood factor rows from the observed state (constant)
        let mut like = Mat::zeros(n, k);
        let mut q_rows = Mat::zeros(n, k);
        let mut clean_rows = Mat::zeros(n, k);
        let mut q_entropy_sum = 0.0;
        for r in 0..n {
            for c in 0..k {
                like[(r, c)] = step_scale * cur[r][c] + step_fill;
                clean_rows[(r, c)] = clean[r][c];
            }
            let q = q_posterior_categorical(&cur[r], &clean[r], k, sched, t)?;
            for c in 0..k {
                q_rows[(r, c)] = q[c];
                if q[c] > 0.0 {
                    q_entropy_sum += q[c] * q[c].ln();
                }
            }
        }
        let like = fwd.tape.leaf(like);
        let q_rows = fwd.tape.leaf(q_rows);
        let clean_rows = fwd.tape.leaf(clean_rows);

        let prior_scaled = fwd.tape.scale(pred, marg_scale);
        let prior = fwd.tape.add_scalar(prior_scaled, marg_fill);
        let prod = fwd.tape.mul(like, prior);
        // strictly positive floor, two jobs: softmax rows can underflow
        // to exact zero once logits separate (q has exact zeros at t=1,
        // so unguarded q*ln(p) would hit 0 * -inf), and rare flip events
        // would otherwise spike -ln(p) hard enough to swamp Adam's
        // second moments on exactly the coordinates that carry type
        // information
        let prod = fwd.tape.add_scalar(prod, KL_FLOOR);
        let p_rows = fwd.tape.normalize_rows(prod);
        let ln_p = fwd.tape.ln(p_rows);
        let q_ln_p = fwd.tape.mul(q_rows, ln_p);
        let cross = fwd.tape.sum_all(q_ln_p);
        let neg_cross = fwd.tape.scale(cross, -1.0 / n.max(1) as f64);

        // auxiliary clean-sample cross-entropy
        let pred_floor = fwd.tape.add_scalar(pred, KL_FLOOR);
        let ln_pred = fwd.tape.ln(pred_floor);
        let picked = fwd.tape.mul(clean_rows, ln_pred);
        let ce_sum = fwd.tape.sum_all(picked);
        let ce = fwd.tape.scale(ce_sum, -AUX_CE_WEIGHT / n.max(1) as f64);
        let combined = fwd.tape.add(neg_cross, ce);
        Ok((combined, q_entropy_sum / n.max(1) as f64))
    };

    let v_hat = fwd.v_hat;
    let b_hat = fwd.b_hat;
    let (atom_cross, atom_entropy) =
        kl_term(&mut fwd, v_hat, &mask_idx, &noised.v_t, &noised.v0, k_v)?;
    let (bond_cross, bond_entropy) = if noised.diffused.is_empty() {
        (fwd.tape.leaf(Mat::zeros(1, 1)), 0.0)
    } else {
        kl_term(
            &mut fwd,
            b_hat,
            &noised.diffused,
            &noised.b_t,
            &noised.b0,
            k_b,
        )?
    };
    // l = entropy + cross-entropy term (entropy is a constant shift)
    let l_atom = fwd.tape.add_scalar(atom_cross, atom_entropy);
    let l_bond = fwd.tape.add_scalar(bond_cross, bond_entropy);

    let atom_w = fwd.tape.scale(l_atom, lambda_atom);
    let bond_w = fwd.tape.scale(l_bond, lambda_bond);
    let partial = fwd.tape.add(l_pos, atom_w);
    let total = fwd.tape.add(partial, bond_w);

    let breakdown = LossBreakdown {
        l_pos: fwd.tape.value(l_pos).data[0],
        l_atom: fwd.tape.value(l_atom).data[0],
        l_bond: fwd.tape.value(l_bond).data[0],
        total: fwd.tape.value(total).data[0],
        t,
    };
    Ok((breakdown, fwd, total))
}

/// Spec-facing entry: draw noise, build the loss, report the breakdown.
pub fn compute_losses(
    params: &ModelParams,
    complex: &MaskedComplex,
    sched: &NoiseSchedule,
    t: usize,
    rng: &mut ChaCha20Rng,
    lambda_atom: f64,
    lambda_bond: f64,
    vocab: &AtomVocab,
) -> Result<LossBreakdown, TrainError> {
    let noised = draw_noised(&complex.ligand, vocab, sched, t, rng)?;
    let (breakdown, _, _) =
        loss_on_noised(params, complex, sched, &noised, lambda_atom, lambda_bond, vocab)?;
    Ok(breakdown)
}

/// Loss plus parameter gradients on a frozen noised sample.
pub fn loss_and_grads(
    params: &ModelParams,
    complex: &MaskedComplex,
    sched: &NoiseSchedule,
    noised: &NoisedSample,
    lambda_atom: f64,
    lambda_bond: f64,
    vocab: &AtomVocab,
) -> Result<(LossBreakdown, Vec<Mat>), TrainError> {
    let (breakdown, fwd, total) =
        loss_on_noised(params, complex, sched, noised, lambda_atom, lambda_bond, vocab)?;
    let grads = fwd.tape.backward(total);
    Ok((breakdown, fwd.param_grads(&grads)))
}

// ---------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------

/// Adam with bias correction and constant learning rate.
pub struct Adam {
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Mat> = params
            .arrays()
            .iter()
            .map(|(_, m)| Mat::zeros(m.rows, m.cols))
            .collect();
        Self {
            state: OptimizerState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    pub fn from_state(state: OptimizerState) -> Self {
        Self { state }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Mat], cfg: &TrainConfig) {
        self.state.step += 1;
        let t = self.state.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for ((slotm, slotv), ((_, p), g)) in self
            .state
            .m
            .iter_mut()
            .zip(self.state.v.iter_mut())
            .zip(params.arrays_mut().into_iter().zip(grads))
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                slotm.data[i] = cfg.beta1 * slotm.data[i] + (1.0 - cfg.beta1) * gi;
                slotv.data[i] = cfg.beta2 * slotv.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = slotm.data[i] / bc1;
                let vhat = slotv.data[i] / bc2;
                p.data[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

// ---------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------

/// Per-epoch mean losses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_pos: f64,
    pub l_atom: f64,
    pub l_bond: f64,
    pub total: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<EpochStats>,
}

/// Train the denoiser, resuming from the checkpoint's epoch counter.
///
/// `cfg.epochs` is the total target; per-sample randomness is keyed by
/// `(cfg.seed, epoch, dataset index)` so resumed and continuous runs
/// produce identical traces. A checkpoint lands at `checkpoint_path`
/// after every epoch (atomic write).
pub fn train(
    mut chk: Checkpoint,
    dataset: &[MaskedComplex],
    cfg: &TrainConfig,
    vocab: &AtomVocab,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let sched = chk
        .header
        .schedule
        .build()
        .map_err(DiffusionError::from)?;
    let mut adam = match chk.optimizer.take() {
        Some(state) => Adam::from_state(state),
        None => Adam::new(&chk.params),
    };
    let mut trace = Vec::new();

    let start = chk.header.epochs_trained;
    for epoch in start..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        {
            // Fisher-Yates keyed off the epoch stream
            let mut erng = stream_rng(cfg.seed, epoch_stream(epoch, 0));
            for i in (1..order.len()).rev() {
                let j = erng.gen_range(0..=i);
                order.swap(i, j);
            }
        }

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut count = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let params_ref = &chk.params;
            let results: Vec<Result<(LossBreakdown, Vec<Mat>), TrainError>> = batch
                .par_iter()
                .map(|&idx| {
                    let mut rng = stream_rng(cfg.seed, epoch_stream(epoch, 1 + idx as u64));
                    let t = rng.gen_range(1..=sched.t_max());
                    let extra = sample_pad_extra(&mut rng);
                    let complex = &dataset[idx];
                    let padded = pad_with_fake_atoms(
                        &complex.ligand,
                        complex.ligand.n_mask() + extra,
                        vocab,
                    )?;
                    let padded_complex = MaskedComplex {
                        pocket: complex.pocket.clone(),
                        ligand: padded,
                    };
                    let noised = draw_noised(&padded_complex.ligand, vocab, &sched, t, &mut rng)?;
                    loss_and_grads(
                        params_ref,
                        &padded_complex,
                        &sched,
                        &noised,
                        cfg.lambda_atom,
                        cfg.lambda_bond,
                        vocab,
                    )
                })
                .collect();

            let mut batch_grads: Option<Vec<Mat>> = None;
            let mut n_in_batch = 0usize;
            for res in results {
                let (breakdown, grads) = res?;
                if !breakdown.total.is_finite() {
                    eprintln!(
                        "non-finite loss: pos {} atom {} bond {} at t={}",
                        breakdown.l_pos, breakdown.l_atom, breakdown.l_bond, breakdown.t
                    );
                    return Err(TrainError::NonFiniteLoss { epoch });
                }
                sums.0 += breakdown.l_pos;
                sums.1 += breakdown.l_atom;
                sums.2 += breakdown.l_bond;
                sums.3 += breakdown.total;
                count += 1;
                n_in_batch += 1;
                match &mut batch_grads {
                    None => batch_grads = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data.iter_mut().zip(&g.data) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            if let Some(mut grads) = batch_grads {
                let inv = 1.0 / n_in_batch as f64;
                for g in &mut grads {
                    for v in &mut g.data {
                        *v *= inv;
                    }
                }
                let norm: f64 = grads
                    .iter()
                    .flat_map(|g| g.data.iter())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > GRAD_CLIP_NORM {
                    let scale = GRAD_CLIP_NORM / norm;
                    for g in &mut grads {
                        for v in &mut g.data {
                            *v *= scale;
                        }
                    }
                }
                adam.step(&mut chk.params, &grads, cfg);
            }
        }

        let n = count.max(1) as f64;
        trace.push(EpochStats {
            epoch,
            l_pos: sums.0 / n,
            l_atom: sums.1 / n,
            l_bond: sums.2 / n,
            total: sums.3 / n,
        });

        chk.header.epochs_trained = epoch + 1;
        if !chk.params.all_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        if let Some(path) = checkpoint_path {
            let full = Checkpoint {
                header: chk.header.clone(),
                params: chk.params.clone(),
                optimizer: Some(adam.state.clone()),
            };
            save(path, &full)?;
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            header: chk.header,
            params: chk.params,
            optimizer: Some(adam.state),
        },
        trace,
    })
}

fn epoch_stream(epoch: usize, slot: u64) -> u64 {
    ((epoch as u64) << 32) | slot
}

/// CSV trace: epoch, l_pos, l_atom, l_bond, total.
pub fn trace_csv(trace: &[EpochStats]) -> String {
    let mut out = String::from("epoch,l_pos,l_atom,l_bond,total\n");
    for s in trace {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            s.epoch, s.l_pos, s.l_atom, s.l_bond, s.total
        ));
    }
    out
}

/// Argmax reconstruction accuracy of atom and bond types on held-out
/// complexes noised to step `t`.
pub fn reconstruction_accuracy(
    params: &ModelParams,
    complexes: &[MaskedComplex],
    sched: &NoiseSchedule,
    t: usize,
    seed: u64,
    vocab: &AtomVocab,
) -> Result<(f64, f64), TrainError> {
    let mut atom_hits = 0usize;
    let mut atom_total = 0usize;
    let mut bond_hits = 0usize;
    let mut bond_total = 0usize;
    for (i, complex) in complexes.iter().enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        let noised = draw_noised(&complex.ligand, vocab, sched, t, &mut rng)?;
        let state = noised_complex_state(complex, &noised, vocab, sched.t_max());
        let fwd = egnn_forward(params, &state)?;
        let v_hat = fwd.v_hat_rows();
        let mask_idx = complex.ligand.mask_indices();
        for (slot, &atom) in mask_idx.iter().enumerate() {
            let pred = argmax(&v_hat[atom]);
            let truth = argmax(&noised.v0[slot]);
            atom_total += 1;
            if pred == truth {
                atom_hits += 1;
            }
        }
        let b_hat = fwd.b_hat_rows();
        for (slot, &row) in noised.diffused.iter().enumerate() {
            let pred = argmax(&b_hat[row]);
            let truth = argmax(&noised.b0[slot]);
            bond_total += 1;
            if pred == truth {
                bond_hits += 1;
            }
        }
    }
    Ok((
        atom_hits as f64 / atom_total.max(1) as f64,
        bond_hits as f64 / bond_total.max(1) as f64,
    ))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
