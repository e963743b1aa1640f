//! Equivariant denoiser.
//!
//! Each layer passes messages over a knn graph spanning pocket and ligand
//! atoms and over the complete ligand graph, updates node and directional
//! edge states, and moves mask-atom coordinates along relative vectors
//! weighted by learned scalars. Hidden states see only distances and
//! embeddings, so they are invariant under rigid motions while the
//! coordinate channel is equivariant.
//!
//! The forward pass records onto an autodiff tape; training losses and
//! affinity guidance extend the same tape and differentiate through it.

mod graph;
mod params;

pub use graph::{
    build_complex_graph, pair_id, tri_index, ComplexGraph, EdgeLabel, GraphError, LigandTopology,
};
pub use params::{LayerParams, Mlp, ModelConfig, ModelParams, EDGE_LABEL_WIDTH};

use thiserror::Error;

use crate::autodiff::{Grads, Mat, NodeId, Tape};
use crate::chemdata::BondMatrix;

#[derive(Debug, Error)]
pub enum EgnnError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("non-finite intermediate at layer {layer}")]
    NonFinite { layer: usize },
    #[error("state shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A full complex at one diffusion step: fixed pocket, all ligand atoms
/// (retained plus mask slots), soft or one-hot type and bond rows, and
/// the mask indicator. Coordinates are absolute.
#[derive(Debug, Clone)]
pub struct ComplexState {
    pub pocket_coords: Vec<[f64; 3]>,
    pub pocket_elems: Vec<usize>,
    pub lig_coords: Vec<[f64; 3]>,
    /// One row of length k_v per ligand atom.
    pub lig_types: Vec<Vec<f64>>,
    /// One row of length k_b per unordered ligand pair, in upper-triangle
    /// order (see [`tri_index`]).
    pub bond_rows: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub t: usize,
    pub t_max: usize,
}

impl ComplexState {
    pub fn n_pocket(&self) -> usize {
        self.pocket_coords.len()
    }

    pub fn n_lig(&self) -> usize {
        self.lig_coords.len()
    }

    fn validate(&self, cfg: &ModelConfig) -> Result<(), EgnnError> {
        let nl = self.n_lig();
        if self.lig_types.len() != nl || self.mask.len() != nl {
            return Err(EgnnError::ShapeMismatch(format!(
                "{nl} ligand atoms vs {} type rows / {} mask flags",
                self.lig_types.len(),
                self.mask.len()
            )));
        }
        let n_upper = nl * nl.saturating_sub(1) / 2;
        if self.bond_rows.len() != n_upper {
            return Err(EgnnError::ShapeMismatch(format!(
                "expected {n_upper} bond rows, got {}",
                self.bond_rows.len()
            )));
        }
        if self.lig_types.iter().any(|r| r.len() != cfg.k_v)
            || self.bond_rows.iter().any(|r| r.len() != cfg.k_b)
        {
            return Err(EgnnError::ShapeMismatch("row width mismatch".into()));
        }
        if self.pocket_elems.len() != self.n_pocket() {
            return Err(EgnnError::ShapeMismatch("pocket element count".into()));
        }
        Ok(())
    }
}

/// One-hot bond rows for all unordered pairs of a clean bond matrix.
pub fn onehot_bond_rows(bonds: &BondMatrix, k_b: usize) -> Vec<Vec<f64>> {
    let n = bonds.n();
    let mut rows = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut row = vec![0.0; k_b];
            row[bonds.get(i, j).index()] = 1.0;
            rows.push(row);
        }
    }
    rows
}

/// Upper-triangle rows with at least one endpoint in the mask: the pairs
/// the diffusion touches. R-R pairs are frozen context.
pub fn diffused_pair_rows(mask: &[bool]) -> Vec<usize> {
    let n = mask.len();
    let mut out = Vec::new();
    let mut row = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if mask[i] || mask[j] {
                out.push(row);
            }
            row += 1;
        }
    }
    out
}

/// Sinusoidal features of the diffusion step.
pub fn time_features(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = Vec::with_capacity(width);
    for m in 0..half {
        let omega = 1.0 / 10_000f64.powf(m as f64 / half as f64);
        let arg = t as f64 * omega;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// A recorded forward pass: the tape plus the node ids needed to read
/// predictions, extend the graph (losses, affinity), and route gradients.
pub struct EgnnForward {
    pub tape: Tape,
    /// Input nodes carrying gradients.
    pub x_lig_in: NodeId,
    pub v_in: NodeId,
    pub b_in: NodeId,
    /// Parameter leaves aligned with `ModelParams::arrays()` order.
    pub param_nodes: Vec<NodeId>,
    pub param_names: Vec<String>,
    /// Final hidden states over pocket + ligand rows.
    pub h_final: NodeId,
    /// Final absolute ligand coordinates (retained rows unchanged).
    pub x_out: NodeId,
    /// Softmax atom-type rows per ligand atom.
    pub v_hat: NodeId,
    /// Softmax bond-type rows per unordered pair.
    pub b_hat: NodeId,
    pub n_pocket: usize,
    pub n_lig: usize,
}

impl EgnnForward {
    pub fn param_node(&self, name: &str) -> NodeId {
        let idx = self
            .param_names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown param {name}"));
        self.param_nodes[idx]
    }

    /// Predicted clean coordinates of mask atoms, absolute frame.
    pub fn x0_hat_mask(&self, mask: &[bool]) -> Vec<[f64; 3]> {
        let m = self.tape.value(self.x_out);
        mask.iter()
            .enumerate()
            .filter(|(_, &is_mask)| is_mask)
            .map(|(i, _)| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
            .collect()
    }

    pub fn v_hat_rows(&self) -> Vec<Vec<f64>> {
        let m = self.tape.value(self.v_hat);
        (0..m.rows).map(|r| m.row(r).to_vec()).collect()
    }

    pub fn b_hat_rows(&self) -> Vec<Vec<f64>> {
        let m = self.tape.value(self.b_hat);
        (0..m.rows).map(|r| m.row(r).to_vec()).collect()
    }

    /// Gradients with respect to every parameter array, in
    /// `ModelParams::arrays()` order.
    pub fn param_grads(&self, grads: &Grads) -> Vec<Mat> {
        self.param_nodes
            .iter()
            .map(|&id| grads.get(id).clone())
            .collect()
    }

    /// Input gradients restricted to mask components: retained atom and
    /// R-R bond entries are identically zero by construction.
    pub fn input_grads(&self, grads: &Grads, state: &ComplexState) -> InputGrads {
        let gx = grads.get(self.x_lig_in);
        let gv = grads.get(self.v_in);
        let gb = grads.get(self.b_in);
        let nl = state.n_lig();
        let mut d_x = vec![[0.0; 3]; nl];
        let mut d_v = vec![vec![0.0; gv.cols]; nl];
        for i in 0..nl {
            if state.mask[i] {
                d_x[i] = [gx[(i, 0)], gx[(i, 1)], gx[(i, 2)]];
                d_v[i] = gv.row(i).to_vec();
            }
        }
        let mut d_b = vec![vec![0.0; gb.cols]; gb.rows];
        for row in diffused_pair_rows(&state.mask) {
            d_b[row] = gb.row(row).to_vec();
        }
        InputGrads { d_x, d_v, d_b }
    }
}

/// Gradients with respect to the noised inputs, mask components only.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub d_x: Vec<[f64; 3]>,
    pub d_v: Vec<Vec<f64>>,
    pub d_b: Vec<Vec<f64>>,
}

fn coords_mat(coords: &[[f64; 3]]) -> Mat {
    let mut m = Mat::zeros(coords.len(), 3);
    for (r, c) in coords.iter().enumerate() {
        m.data[r * 3..r * 3 + 3].copy_from_slice(c);
    }
    m
}

fn const_rows(tape: &mut Tape, row: &[f64], n: usize) -> NodeId {
    let mut m = Mat::zeros(n, row.len());
    for r in 0..n {
        m.data[r * row.len()..(r + 1) * row.len()].copy_from_slice(row);
    }
    tape.leaf(m)
}

/// Run the denoiser, recording onto a fresh tape.
pub fn egnn_forward(params: &ModelParams, state: &ComplexState) -> Result<EgnnForward, EgnnError> {
    let cfg = &params.config;
    state.validate(cfg)?;
    let np = state.n_pocket();
    let nl = state.n_lig();
    let n = np + nl;
    let topo = LigandTopology::new(nl);

    let mut tape = Tape::new();

    // inputs
    let x_lig_in = tape.leaf(coords_mat(&state.lig_coords));
    let v_in = tape.leaf(Mat::from_rows(&state.lig_types));
    let b_in = tape.leaf(if state.bond_rows.is_empty() {
        Mat::zeros(0, cfg.k_b)
    } else {
        Mat::from_rows(&state.bond_rows)
    });

    // parameter leaves
    let arrays = params.arrays();
    let mut param_nodes = Vec::with_capacity(arrays.len());
    let mut param_names = Vec::with_capacity(arrays.len());
    for (name, mat) in &arrays {
        param_nodes.push(tape.leaf((*mat).clone()));
        param_names.push(name.clone());
    }
    let pnode = |names: &[String], name: &str| -> NodeId {
        let idx = names.iter().position(|n| n == name).unwrap();
        param_nodes[idx]
    };
    let mlp_nodes = |names: &[String], prefix: &str| -> [NodeId; 4] {
        [
            pnode(names, &format!("{prefix}.w1")),
            pnode(names, &format!("{prefix}.b1")),
            pnode(names, &format!("{prefix}.w2")),
            pnode(names, &format!("{prefix}.b2")),
        ]
    };

    // constants
    let x_pkt = tape.leaf(coords_mat(&state.pocket_coords));
    let mut pkt_onehot = Mat::zeros(np, cfg.k_p);
    for (r, &e) in state.pocket_elems.iter().enumerate() {
        pkt_onehot[(r, e)] = 1.0;
    }
    let pkt_onehot = tape.leaf(pkt_onehot);
    let mask_col = {
        let mut m = Mat::zeros(nl, 1);
        for (i, &is_mask) in state.mask.iter().enumerate() {
            if is_mask {
                m[(i, 0)] = 1.0;
            }
        }
        tape.leaf(m)
    };
    let tfeat = time_features(state.t, cfg.time_width);

    let pkt_rows: Vec<usize> = (0..np).collect();
    let lig_rows: Vec<usize> = (np..n).collect();
    let assemble = |tape: &mut Tape, pkt: NodeId, lig: NodeId| -> NodeId {
        let a = tape.scatter_add_rows(pkt, &pkt_rows, n);
        let b = tape.scatter_add_rows(lig, &lig_rows, n);
        tape.add(a, b)
    };

    // initial node states: type embeddings with the time features
    // appended, so heads and messages can condition on the step
    let emb_lig = tape.matmul(v_in, pnode(&param_names, "embed.ligand"));
    let tfeat_lig = const_rows(&mut tape, &tfeat, nl);
    let h_lig0 = tape.concat_cols(&[emb_lig, tfeat_lig]);
    let emb_pkt = tape.matmul(pkt_onehot, pnode(&param_names, "embed.pocket"));
    let tfeat_pkt = const_rows(&mut tape, &tfeat, np);
    let h_pkt0 = tape.concat_cols(&[emb_pkt, tfeat_pkt]);
    let mut h = assemble(&mut tape, h_pkt0, h_lig0);

    // initial directional edge states from bond embeddings
    let b_ordered = tape.gather_rows(b_in, &topo.ordered_from_upper);
    let mut e = tape.matmul(b_ordered, pnode(&param_names, "embed.bond"));

    let mut x_lig = x_lig_in;
    let mut x_all = assemble(&mut tape, x_pkt, x_lig);

    // global indices of ligand pair endpoints (receiver a, neighbor b)
    let pair_a: Vec<usize> = topo.pairs.iter().map(|&(a, _)| np + a).collect();
    let pair_b: Vec<usize> = topo.pairs.iter().map(|&(_, b)| np + b).collect();
    let trip_i: Vec<usize> = topo.trip_h_i.iter().map(|&a| np + a).collect();
    let trip_j: Vec<usize> = topo.trip_h_j.iter().map(|&a| np + a).collect();
    let trip_k: Vec<usize> = topo.trip_h_k.iter().map(|&a| np + a).collect();

    let tfeat_pairs = const_rows(&mut tape, &tfeat, topo.n_pairs());
    let tfeat_trips = const_rows(&mut tape, &tfeat, topo.trip_out.len());

    for layer_idx in 0..cfg.layers {
        let lp = format!("layer{layer_idx}");
        let phi_mk = mlp_nodes(&param_names, &format!("{lp}.phi_mk"));
        let phi_d = mlp_nodes(&param_names, &format!("{lp}.phi_d"));
        let phi_ml = mlp_nodes(&param_names, &format!("{lp}.phi_ml"));
        let phi_h = mlp_nodes(&param_names, &format!("{lp}.phi_h"));
        let phi_e = mlp_nodes(&param_names, &format!("{lp}.phi_e"));
        let phi_xk = mlp_nodes(&param_names, &format!("{lp}.phi_xk"));
        let phi_xl = mlp_nodes(&param_names, &format!("{lp}.phi_xl"));

        // knn graph from current coordinates
        let g = build_complex_graph(&mat_coords(tape.value(x_all)), np, cfg.knn)?;
        let n_edges = g.knn_dst.len();

        // knn messages
        let hi = tape.gather_rows(h, &g.knn_dst);
        let hj = tape.gather_rows(h, &g.knn_src);
        let xj = tape.gather_rows(x_all, &g.knn_src);
        let xi = tape.gather_rows(x_all, &g.knn_dst);
        let rel = tape.sub(xj, xi);
        let dist = tape.row_norm(rel);
        let mut lab_onehot = Mat::zeros(n_edges, 3);
        for (r, &l) in g.knn_label.iter().enumerate() {
            lab_onehot[(r, l as usize)] = 1.0;
        }
        let lab_onehot = tape.leaf(lab_onehot);
        let elab = tape.matmul(lab_onehot, pnode(&param_names, "embed.edge_label"));
        let tfeat_edges = const_rows(&mut tape, &tfeat, n_edges);
        let mk_in = tape.concat_cols(&[hi, hj, dist, elab, tfeat_edges]);
        let mk = tape.mlp2(mk_in, phi_mk[0], phi_mk[1], phi_mk[2], phi_mk[3]);
        let dh_k = tape.scatter_add_rows(mk, &g.knn_dst, n);

        // ligand pair features m_ab = phi_d(|x_a - x_b|, e_ab)
        let xa = tape.gather_rows(x_all, &pair_a);
        let xb = tape.gather_rows(x_all, &pair_b);
        let rel_l = tape.sub(xb, xa);
        let dist_l = tape.row_norm(rel_l);
        let m_in = tape.concat_cols(&[dist_l, e]);
        let m = tape.mlp2(m_in, phi_d[0], phi_d[1], phi_d[2], phi_d[3]);

        // ligand messages to receiver a use the reversed message m_ba
        let ha = tape.gather_rows(h, &pair_a);
        let hb = tape.gather_rows(h, &pair_b);
        let m_rev = tape.gather_rows(m, &topo.rev_pair);
        let ml_in = tape.concat_cols(&[ha, hb, m_rev, tfeat_pairs]);
        let ml = tape.mlp2(ml_in, phi_ml[0], phi_ml[1], phi_ml[2], phi_ml[3]);
        let dh_l = tape.scatter_add_rows(ml, &pair_a, n);

        // node update (residual)
        let dh = tape.add(dh_k, dh_l);
        let upd = tape.mlp2(dh, phi_h[0], phi_h[1], phi_h[2], phi_h[3]);
        h = tape.add(h, upd);

        // directional edge update from updated node states
        let hi_t = tape.gather_rows(h, &trip_i);
        let hj_t = tape.gather_rows(h, &trip_j);
        let hk_t = tape.gather_rows(h, &trip_k);
        let m_kj = tape.gather_rows(m, &topo.trip_m_kj);
        let m_ji = tape.gather_rows(m, &topo.trip_m_ji);
        let e_in = tape.concat_cols(&[hi_t, hj_t, hk_t, m_kj, m_ji, tfeat_trips]);
        let e_msg = tape.mlp2(e_in, phi_e[0], phi_e[1], phi_e[2], phi_e[3]);
        e = tape.scatter_add_rows(e_msg, &topo.trip_out, topo.n_pairs());

        // coordinate updates from updated node states, this layer's graph
        let hi2 = tape.gather_rows(h, &g.knn_dst);
        let hj2 = tape.gather_rows(h, &g.knn_src);
        let tfeat_edges2 = const_rows(&mut tape, &tfeat, n_edges);
        let xk_in = tape.concat_cols(&[hi2, hj2, dist, tfeat_edges2]);
        let sk = tape.mlp2(xk_in, phi_xk[0], phi_xk[1], phi_xk[2], phi_xk[3]);
        let dplus = tape.add_scalar(dist, 1.0);
        let inv = tape.recip(dplus);
        let rel_n = tape.mul_col_broadcast(rel, inv);
        let contrib_k = tape.mul_col_broadcast(rel_n, sk);
        let dx_k = tape.scatter_add_rows(contrib_k, &g.knn_dst, n);

        let ha2 = tape.gather_rows(h, &pair_a);
        let hb2 = tape.gather_rows(h, &pair_b);
        let xl_in = tape.concat_cols(&[ha2, hb2, dist_l, m_rev, tfeat_pairs]);
        let sl = tape.mlp2(xl_in, phi_xl[0], phi_xl[1], phi_xl[2], phi_xl[3]);
        let dplus_l = tape.add_scalar(dist_l, 1.0);
        let inv_l = tape.recip(dplus_l);
        let rel_ln = tape.mul_col_broadcast(rel_l, inv_l);
        let contrib_l = tape.mul_col_broadcast(rel_ln, sl);
        let dx_l = tape.scatter_add_rows(contrib_l, &pair_a, n);

        let dx = tape.add(dx_k, dx_l);
        let dx_lig = tape.gather_rows(dx, &lig_rows);
        let dx_masked = tape.mul_col_broadcast(dx_lig, mask_col);
        x_lig = tape.add(x_lig, dx_masked);
        x_all = assemble(&mut tape, x_pkt, x_lig);

        if !tape.value(h).is_finite() || !tape.value(x_all).is_finite() {
            return Err(EgnnError::NonFinite { layer: layer_idx });
        }
    }

    // prediction heads
    let h_lig = tape.gather_rows(h, &lig_rows);
    let ha = mlp_nodes(&param_names, "head.atom");
    let logits_v = tape.mlp2(h_lig, ha[0], ha[1], ha[2], ha[3]);
    let v_hat = tape.softmax_rows(logits_v);

    let e_fwd = tape.gather_rows(e, &topo.upper_fwd);
    let e_bwd = tape.gather_rows(e, &topo.upper_bwd);
    let e_sym = tape.add(e_fwd, e_bwd);
    let hb = mlp_nodes(&param_names, "head.bond");
    let logits_b = tape.mlp2(e_sym, hb[0], hb[1], hb[2], hb[3]);
    let b_hat = tape.softmax_rows(logits_b);

    Ok(EgnnForward {
        tape,
        x_lig_in,
        v_in,
        b_in,
        param_nodes,
        param_names,
        h_final: h,
        x_out: x_lig,
        v_hat,
        b_hat,
        n_pocket: np,
        n_lig: nl,
    })
}

fn mat_coords(m: &Mat) -> Vec<[f64; 3]> {
    (0..m.rows).map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn randomize_coordinate_nets(params: &mut ModelParams, seed: u64) {
        let mut rng = stream_rng(seed, 77);
        for (name, mat) in params.arrays_mut() {
            if name.contains("phi_xk.w2") || name.contains("phi_xl.w2") {
                for v in &mut mat.data {
                    *v = (rng.gen::<f64>() * 2.0 - 1.0) * 0.05;
                }
            }
        }
    }

    fn toy_state(seed: u64, t: usize) -> ComplexState {
        let mut rng = stream_rng(seed, 3);
        let np = 4;
        let nl = 5;
        let k_v = 7;
        let k_b = 5;
        let mut coord = |scale: f64| -> [f64; 3] {
            [
                (rng.gen::<f64>() - 0.5) * scale,
                (rng.gen::<f64>() - 0.5) * scale,
                (rng.gen::<f64>() - 0.5) * scale,
            ]
        };
        let pocket_coords: Vec<[f64; 3]> = (0..np).map(|_| coord(8.0)).collect();
        let lig_coords: Vec<[f64; 3]> = (0..nl).map(|_| coord(4.0)).collect();
        let mut rng2 = stream_rng(seed, 4);
        let lig_types: Vec<Vec<f64>> = (0..nl)
            .map(|_| {
                let mut row = vec![0.0; k_v];
                row[rng2.gen_range(0..k_v)] = 1.0;
                row
            })
            .collect();
        let bond_rows: Vec<Vec<f64>> = (0..nl * (nl - 1) / 2)
            .map(|_| {
                let mut row = vec![0.0; k_b];
                row[rng2.gen_range(0..k_b)] = 1.0;
                row
            })
            .collect();
        ComplexState {
            pocket_coords,
            pocket_elems: vec![0, 1, 2, 3],
            lig_coords,
            lig_types,
            bond_rows,
            mask: vec![false, false, true, true, true],
            t,
            t_max: 100,
        }
    }

    fn small_params(seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            layers: 2,
            hidden: 16,
            edge_hidden: 8,
            knn: 4,
            time_width: 8,
            ..ModelConfig::default()
        };
        ModelParams::init(&cfg, seed)
    }

    #[test]
    fn zero_initialized_coordinate_nets_leave_coords_unchanged() {
        let params = small_params(1);
        let state = toy_state(5, 10);
        let fwd = egnn_forward(&params, &state).unwrap();
        let x = fwd.tape.value(fwd.x_out);
        for (i, c) in state.lig_coords.iter().enumerate() {
            for d in 0..3 {
                assert_eq!(x[(i, d)], c[d], "coordinates must be untouched at init");
            }
        }
        // heads still produce distributions
        for row in fwd.v_hat_rows() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        for row in fwd.b_hat_rows() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn retained_rows_exact_through_forward() {
        let mut params = small_params(2);
        randomize_coordinate_nets(&mut params, 2);
        let state = toy_state(6, 25);
        let fwd = egnn_forward(&params, &state).unwrap();
        let x = fwd.tape.value(fwd.x_out);
        let mut moved = 0;
        for (i, c) in state.lig_coords.iter().enumerate() {
            if state.mask[i] {
                if (0..3).any(|d| x[(i, d)] != c[d]) {
                    moved += 1;
                }
            } else {
                for d in 0..3 {
                    assert_eq!(x[(i, d)], c[d], "retained atom {i} moved");
                }
            }
        }
        assert!(moved > 0, "mask atoms should move with random nets");
    }

    fn rotate(p: [f64; 3], q: &[[f64; 3]; 3], t: [f64; 3]) -> [f64; 3] {
        [
            q[0][0] * p[0] + q[0][1] * p[1] + q[0][2] * p[2] + t[0],
            q[1][0] * p[0] + q[1][1] * p[1] + q[1][2] * p[2] + t[1],
            q[2][0] * p[0] + q[2][1] * p[1] + q[2][2] * p[2] + t[2],
        ]
    }

    fn random_rotation(seed: u64) -> [[f64; 3]; 3] {
        // Rodrigues rotation from a random axis and angle
        let mut rng = stream_rng(seed, 12);
        let axis = {
            let v = [
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let (s, c) = angle.sin_cos();
        let (x, y, z) = (axis[0], axis[1], axis[2]);
        [
            [
                c + x * x * (1.0 - c),
                x * y * (1.0 - c) - z * s,
                x * z * (1.0 - c) + y * s,
            ],
            [
                y * x * (1.0 - c) + z * s,
                c + y * y * (1.0 - c),
                y * z * (1.0 - c) - x * s,
            ],
            [
                z * x * (1.0 - c) - y * s,
                z * y * (1.0 - c) + x * s,
                c + z * z * (1.0 - c),
            ],
        ]
    }

    #[test]
    fn se3_equivariance() {
        let mut params = small_params(3);
        randomize_coordinate_nets(&mut params, 3);
        for trial in 0..5 {
            let state = toy_state(trial + 10, 40);
            let fwd = egnn_forward(&params, &state).unwrap();

            let q = random_rotation(trial + 100);
            let shift = [1.5, -2.0, 0.5];
            let mut moved = state.clone();
            moved.pocket_coords = moved
                .pocket_coords
                .iter()
                .map(|&p| rotate(p, &q, shift))
                .collect();
            moved.lig_coords = moved
                .lig_coords
                .iter()
                .map(|&p| rotate(p, &q, shift))
                .collect();
            let fwd2 = egnn_forward(&params, &moved).unwrap();

            // coordinates transform with the motion
            let x1 = fwd.tape.value(fwd.x_out);
            let x2 = fwd2.tape.value(fwd2.x_out);
            for i in 0..state.n_lig() {
                let want = rotate([x1[(i, 0)], x1[(i, 1)], x1[(i, 2)]], &q, shift);
                for d in 0..3 {
                    assert!(
                        (x2[(i, d)] - want[d]).abs() < 1e-8,
                        "trial {trial} atom {i} dim {d}: {} vs {}",
                        x2[(i, d)],
                        want[d],
                    );
                }
            }
            // categorical heads are invariant
            for (a, b) in fwd.v_hat_rows().iter().zip(fwd2.v_hat_rows()) {
                for (p, q2) in a.iter().zip(&b) {
                    assert!((p - q2).abs() < 1e-8);
                }
            }
            for (a, b) in fwd.b_hat_rows().iter().zip(fwd2.b_hat_rows()) {
                for (p, q2) in a.iter().zip(&b) {
                    assert!((p - q2).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut params = small_params(4);
        randomize_coordinate_nets(&mut params, 4);
        let state = toy_state(30, 15);
        let nl = state.n_lig();
        let fwd = egnn_forward(&params, &state).unwrap();

        // relabel ligand atoms by a fixed permutation
        let perm: Vec<usize> = vec![2, 0, 4, 1, 3]; // perm[new] = old
        let mut permuted = state.clone();
        permuted.lig_coords = perm.iter().map(|&o| state.lig_coords[o]).collect();
        permuted.lig_types = perm.iter().map(|&o| state.lig_types[o].clone()).collect();
        permuted.mask = perm.iter().map(|&o| state.mask[o]).collect();
        let mut rows = vec![vec![0.0; 5]; nl * (nl - 1) / 2];
        for new_i in 0..nl {
            for new_j in (new_i + 1)..nl {
                let (oi, oj) = (perm[new_i], perm[new_j]);
                let (a, b) = if oi < oj { (oi, oj) } else { (oj, oi) };
                rows[tri_index(nl, new_i, new_j)] =
                    state.bond_rows[tri_index(nl, a, b)].clone();
            }
        }
        permuted.bond_rows = rows;

        let fwd2 = egnn_forward(&params, &permuted).unwrap();
        let x1 = fwd.tape.value(fwd.x_out);
        let x2 = fwd2.tape.value(fwd2.x_out);
        let v1 = fwd.v_hat_rows();
        let v2 = fwd2.v_hat_rows();
        for new_i in 0..nl {
            let old = perm[new_i];
            for d in 0..3 {
                assert!((x2[(new_i, d)] - x1[(old, d)]).abs() < 1e-9);
            }
            for (a, b) in v2[new_i].iter().zip(&v1[old]) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn input_gradients_restricted_to_mask() {
        let mut params = small_params(5);
        randomize_coordinate_nets(&mut params, 5);
        let state = toy_state(50, 33);
        let mut fwd = egnn_forward(&params, &state).unwrap();
        // scalar: sum of squared mask coordinates of the output
        let sq = fwd.tape.mul(fwd.x_out, fwd.x_out);
        let loss = fwd.tape.sum_all(sq);
        let grads = fwd.tape.backward(loss);
        let ig = fwd.input_grads(&grads, &state);
        for i in 0..state.n_lig() {
            if !state.mask[i] {
                assert_eq!(ig.d_x[i], [0.0; 3]);
                assert!(ig.d_v[i].iter().all(|&g| g == 0.0));
            }
        }
        // some mask gradient must be nonzero
        assert!(ig
            .d_x
            .iter()
            .enumerate()
            .filter(|(i, _)| state.mask[*i])
            .any(|(_, g)| g.iter().any(|&v| v != 0.0)));
        // non-diffused pair rows are zero
        let diffused = diffused_pair_rows(&state.mask);
        for (row, g) in ig.d_b.iter().enumerate() {
            if !diffused.contains(&row) {
                assert!(g.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn forward_input_gradient_matches_finite_differences() {
        let mut params = small_params(6);
        randomize_coordinate_nets(&mut params, 6);
        let state = toy_state(60, 20);

        let loss_of = |s: &ComplexState| -> f64 {
            let mut fwd = egnn_forward(&params, s).unwrap();
            let sq = fwd.tape.mul(fwd.x_out, fwd.x_out);
            let vsq = fwd.tape.mul(fwd.v_hat, fwd.v_hat);
            let bsq = fwd.tape.mul(fwd.b_hat, fwd.b_hat);
            let s1 = fwd.tape.sum_all(sq);
            let s2 = fwd.tape.sum_all(vsq);
            let s3 = fwd.tape.sum_all(bsq);
            let s12 = fwd.tape.add(s1, s2);
            let total = fwd.tape.add(s12, s3);
            fwd.tape.value(total).data[0]
        };

        let mut fwd = egnn_forward(&params, &state).unwrap();
        let sq = fwd.tape.mul(fwd.x_out, fwd.x_out);
        let vsq = fwd.tape.mul(fwd.v_hat, fwd.v_hat);
        let bsq = fwd.tape.mul(fwd.b_hat, fwd.b_hat);
        let s1 = fwd.tape.sum_all(sq);
        let s2 = fwd.tape.sum_all(vsq);
        let s3 = fwd.tape.sum_all(bsq);
        let s12 = fwd.tape.add(s1, s2);
        let total = fwd.tape.add(s12, s3);
        let grads = fwd.tape.backward(total);
        let ig = fwd.input_grads(&grads, &state);

        let h = 1e-5;
        for i in 0..state.n_lig() {
            if !state.mask[i] {
                continue;
            }
            for d in 0..3 {
                let mut plus = state.clone();
                plus.lig_coords[i][d] += h;
                let mut minus = state.clone();
                minus.lig_coords[i][d] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let ad = ig.d_x[i][d];
                let denom = fd.abs().max(ad.abs()).max(1e-6);
                assert!(
                    (fd - ad).abs() / denom < 1e-4,
                    "coord ({i},{d}): fd {fd} vs ad {ad}"
                );
            }
            for c in 0..state.lig_types[i].len() {
                let mut plus = state.clone();
                plus.lig_types[i][c] += h;
                let mut minus = state.clone();
                minus.lig_types[i][c] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let ad = ig.d_v[i][c];
                let denom = fd.abs().max(ad.abs()).max(1e-6);
                assert!(
                    (fd - ad).abs() / denom < 1e-4,
                    "type ({i},{c}): fd {fd} vs ad {ad}"
                );
            }
        }
    }

    #[test]
    fn time_features_width_and_range() {
        let f = time_features(17, 16);
        assert_eq!(f.len(), 16);
        assert!(f.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(time_features(1, 16), time_features(2, 16));
    }

    #[test]
    fn diffused_rows_cover_mask_incident_pairs() {
        let mask = vec![false, true, false];
        // pairs in upper order: (0,1), (0,2), (1,2) -> rows 0 and 2
        assert_eq!(diffused_pair_rows(&mask), vec![0, 2]);
    }
}
