//! Model parameters: embedding tables, per-layer message/update networks,
//! prediction heads, and the affinity head, with deterministic seeded
//! initialization and a stable array ordering for optimizers and the
//! weights file.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::rng::stream_rng;

/// Width of the knn edge-label embedding (protein-protein /
/// ligand-ligand / protein-ligand).
pub const EDGE_LABEL_WIDTH: usize = 8;

/// Architecture hyperparameters, persisted in the weights header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Ligand atom categories including FAKE.
    pub k_v: usize,
    /// Bond categories.
    pub k_b: usize,
    /// Pocket element categories.
    pub k_p: usize,
    pub layers: usize,
    /// Node hidden width H.
    pub hidden: usize,
    /// Edge hidden width H_e.
    pub edge_hidden: usize,
    /// knn neighbor count.
    pub knn: usize,
    /// Sinusoidal time-feature width.
    pub time_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k_v: 7,
            k_b: 5,
            k_p: 4,
            layers: 4,
            hidden: 64,
            edge_hidden: 32,
            knn: 16,
            time_width: 16,
        }
    }
}

impl ModelConfig {
    /// Small profile for fast tests and desk-scale acceptance runs.
    pub fn small() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            edge_hidden: 16,
            knn: 8,
            ..Self::default()
        }
    }
}

/// Two-layer perceptron weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

impl Mlp {
    fn new<R: Rng>(rng: &mut R, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            w1: xavier(rng, d_in, d_hidden),
            b1: Mat::zeros(1, d_hidden),
            w2: xavier(rng, d_hidden, d_out),
            b2: Mat::zeros(1, d_out),
        }
    }

    /// Final layer zeroed so the network starts as a no-op.
    fn new_zero_out<R: Rng>(rng: &mut R, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self {
            w1: xavier(rng, d_in, d_hidden),
            b1: Mat::zeros(1, d_hidden),
            w2: Mat::zeros(d_hidden, d_out),
            b2: Mat::zeros(1, d_out),
        }
    }
}

/// One message-passing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// knn messages over the protein-ligand graph.
    pub phi_mk: Mlp,
    /// Ligand pair features from distance and bond state.
    pub phi_d: Mlp,
    /// Ligand messages over the complete ligand graph.
    pub phi_ml: Mlp,
    /// Node update.
    pub phi_h: Mlp,
    /// Directional edge update.
    pub phi_e: Mlp,
    /// knn coordinate-update scalar (zero-initialized output).
    pub phi_xk: Mlp,
    /// Ligand coordinate-update scalar (zero-initialized output).
    pub phi_xl: Mlp,
}

/// All learnable weights of the denoiser and the affinity head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub embed_ligand: Mat,
    pub embed_pocket: Mat,
    pub embed_edge_label: Mat,
    pub embed_bond: Mat,
    pub layers: Vec<LayerParams>,
    pub head_atom: Mlp,
    pub head_bond: Mlp,
    /// Affinity head: affine map over (h_i, time features).
    pub affinity_w: Mat,
    pub affinity_b: Mat,
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * limit)
            .collect(),
    )
}

impl ModelParams {
    /// Deterministic initialization from a seed.
    ///
    /// Node states carry the sinusoidal time features in their last
    /// `time_width` lanes, so the type embeddings span `hidden -
    /// time_width` columns.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, u64::MAX);
        let c = config;
        let (h, he, tw) = (c.hidden, c.edge_hidden, c.time_width);
        assert!(h > tw, "hidden width must exceed time_width");

        // residual-branch and coordinate outputs start at zero: the
        // untrained network is the identity on both h and x, so the type
        // embeddings reach the heads undiluted and message content is
        // learned in as training demands it
        let layers = (0..c.layers)
            .map(|_| LayerParams {
                phi_mk: Mlp::new(&mut rng, 2 * h + 1 + EDGE_LABEL_WIDTH + tw, h, h),
                phi_d: Mlp::new(&mut rng, 1 + he, he, he),
                phi_ml: Mlp::new(&mut rng, 2 * h + he + tw, h, h),
                phi_h: Mlp::new_zero_out(&mut rng, h, h, h),
                phi_e: Mlp::new(&mut rng, 3 * h + 2 * he + tw, he, he),
                phi_xk: Mlp::new_zero_out(&mut rng, 2 * h + 1 + tw, h, 1),
                phi_xl: Mlp::new_zero_out(&mut rng, 2 * h + 1 + he + tw, h, 1),
            })
            .collect();

        Self {
            config: config.clone(),
            seed,
            embed_ligand: xavier(&mut rng, c.k_v, h - tw),
            embed_pocket: xavier(&mut rng, c.k_p, h - tw),
            embed_edge_label: xavier(&mut rng, 3, EDGE_LABEL_WIDTH),
            embed_bond: xavier(&mut rng, c.k_b, he),
            layers,
            head_atom: Mlp::new(&mut rng, h, h, c.k_v),
            head_bond: Mlp::new(&mut rng, he, he, c.k_b),
            affinity_w: Mat::zeros(h + tw, 1),
            affinity_b: Mat::zeros(1, 1),
        }
    }

    /// Named arrays in the canonical order used by the optimizer and the
    /// weights file.
    pub fn arrays(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = vec![
            ("embed.ligand".into(), &self.embed_ligand),
            ("embed.pocket".into(), &self.embed_pocket),
            ("embed.edge_label".into(), &self.embed_edge_label),
            ("embed.bond".into(), &self.embed_bond),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (net_name, net) in [
                ("phi_mk", &layer.phi_mk),
                ("phi_d", &layer.phi_d),
                ("phi_ml", &layer.phi_ml),
                ("phi_h", &layer.phi_h),
                ("phi_e", &layer.phi_e),
                ("phi_xk", &layer.phi_xk),
                ("phi_xl", &layer.phi_xl),
            ] {
                out.push((format!("layer{i}.{net_name}.w1"), &net.w1));
                out.push((format!("layer{i}.{net_name}.b1"), &net.b1));
                out.push((format!("layer{i}.{net_name}.w2"), &net.w2));
                out.push((format!("layer{i}.{net_name}.b2"), &net.b2));
            }
        }
        out.push(("head.atom.w1".into(), &self.head_atom.w1));
        out.push(("head.atom.b1".into(), &self.head_atom.b1));
        out.push(("head.atom.w2".into(), &self.head_atom.w2));
        out.push(("head.atom.b2".into(), &self.head_atom.b2));
        out.push(("head.bond.w1".into(), &self.head_bond.w1));
        out.push(("head.bond.b1".into(), &self.head_bond.b1));
        out.push(("head.bond.w2".into(), &self.head_bond.w2));
        out.push(("head.bond.b2".into(), &self.head_bond.b2));
        out.push(("affinity.w".into(), &self.affinity_w));
        out.push(("affinity.b".into(), &self.affinity_b));
        out
    }

    /// Mutable view in the same canonical order.
    pub fn arrays_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out: Vec<(String, &mut Mat)> = vec![
            ("embed.ligand".into(), &mut self.embed_ligand),
            ("embed.pocket".into(), &mut self.embed_pocket),
            ("embed.edge_label".into(), &mut self.embed_edge_label),
            ("embed.bond".into(), &mut self.embed_bond),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (net_name, net) in [
                ("phi_mk", &mut layer.phi_mk),
                ("phi_d", &mut layer.phi_d),
                ("phi_ml", &mut layer.phi_ml),
                ("phi_h", &mut layer.phi_h),
                ("phi_e", &mut layer.phi_e),
                ("phi_xk", &mut layer.phi_xk),
                ("phi_xl", &mut layer.phi_xl),
            ] {
                out.push((format!("layer{i}.{net_name}.w1"), &mut net.w1));
                out.push((format!("layer{i}.{net_name}.b1"), &mut net.b1));
                out.push((format!("layer{i}.{net_name}.w2"), &mut net.w2));
                out.push((format!("layer{i}.{net_name}.b2"), &mut net.b2));
            }
        }
        out.push(("head.atom.w1".into(), &mut self.head_atom.w1));
        out.push(("head.atom.b1".into(), &mut self.head_atom.b1));
        out.push(("head.atom.w2".into(), &mut self.head_atom.w2));
        out.push(("head.atom.b2".into(), &mut self.head_atom.b2));
        out.push(("head.bond.w1".into(), &mut self.head_bond.w1));
        out.push(("head.bond.b1".into(), &mut self.head_bond.b1));
        out.push(("head.bond.w2".into(), &mut self.head_bond.w2));
        out.push(("head.bond.b2".into(), &mut self.head_bond.b2));
        out.push(("affinity.w".into(), &mut self.affinity_w));
        out.push(("affinity.b".into(), &mut self.affinity_b));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.arrays().iter().all(|(_, m)| m.is_finite())
    }
}
