//! Dual-graph construction: a knn graph over pocket plus ligand atoms and
//! the complete ordered-pair graph over ligand atoms.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("need at least 2 atoms to build a graph, got {0}")]
    TooFewAtoms(usize),
    #[error("knn neighbor count must be >= 1")]
    ZeroK,
}

/// Label of a knn edge by its endpoint identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum EdgeLabel {
    ProteinProtein = 0,
    LigandLigand = 1,
    ProteinLigand = 2,
}

/// knn edges over the full complex plus the complete ordered ligand
/// graph. Atom indices are global: pocket rows first, ligand rows after.
#[derive(Debug, Clone)]
pub struct ComplexGraph {
    /// Message receivers (one entry per directed knn edge).
    pub knn_dst: Vec<usize>,
    /// Neighbors feeding each receiver.
    pub knn_src: Vec<usize>,
    pub knn_label: Vec<EdgeLabel>,
}

/// Build the knn graph by Euclidean distance over all atoms, ties broken
/// by lower atom index. Every node receives from its min(k, n-1)
/// nearest neighbors.
pub fn build_complex_graph(
    coords: &[[f64; 3]],
    n_pocket: usize,
    k: usize,
) -> Result<ComplexGraph, GraphError> {
    let n = coords.len();
    if n < 2 {
        return Err(GraphError::TooFewAtoms(n));
    }
    if k == 0 {
        return Err(GraphError::ZeroK);
    }
    let take = k.min(n - 1);
    let mut knn_dst = Vec::with_capacity(n * take);
    let mut knn_src = Vec::with_capacity(n * take);
    let mut knn_label = Vec::with_capacity(n * take);

    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let dz = coords[i][2] - coords[j][2];
            order.push((dx * dx + dy * dy + dz * dz, j));
        }
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(take) {
            knn_dst.push(i);
            knn_src.push(j);
            knn_label.push(label_of(i, j, n_pocket));
        }
    }
    Ok(ComplexGraph {
        knn_dst,
        knn_src,
        knn_label,
    })
}

fn label_of(i: usize, j: usize, n_pocket: usize) -> EdgeLabel {
    match (i < n_pocket, j < n_pocket) {
        (true, true) => EdgeLabel::ProteinProtein,
        (false, false) => EdgeLabel::LigandLigand,
        _ => EdgeLabel::ProteinLigand,
    }
}

/// Static topology of the complete ordered ligand graph, with the index
/// plans used to gather/scatter pair and triple features.
#[derive(Debug, Clone)]
pub struct LigandTopology {
    pub n_lig: usize,
    /// Ordered pairs (a, b), a != b, in pair-id order.
    pub pairs: Vec<(usize, usize)>,
    /// Pair id of the reversed pair, aligned with `pairs`.
    pub rev_pair: Vec<usize>,
    /// For each unordered pair i < j in upper-triangle order: the pair id
    /// of (i, j) and of (j, i).
    pub upper_fwd: Vec<usize>,
    pub upper_bwd: Vec<usize>,
    /// Ordered-pair id each unordered row maps from (gather plan used to
    /// expand unordered bond rows to ordered pairs).
    pub ordered_from_upper: Vec<usize>,
    /// Triple plan for the directional edge update: one row per
    /// (receiver pair (a,b), third atom k).
    pub trip_h_i: Vec<usize>,
    pub trip_h_j: Vec<usize>,
    pub trip_h_k: Vec<usize>,
    pub trip_m_kj: Vec<usize>,
    pub trip_m_ji: Vec<usize>,
    pub trip_out: Vec<usize>,
}

/// Ordered-pair id of (a, b) among all ordered pairs of n atoms.
pub fn pair_id(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a != b && a < n && b < n);
    a * (n - 1) + if b > a { b - 1 } else { b }
}

/// Upper-triangle index of the unordered pair {i, j}, i < j.
pub fn tri_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl LigandTopology {
    pub fn new(n_lig: usize) -> Self {
        let mut pairs = Vec::with_capacity(n_lig.saturating_sub(1) * n_lig);
        for a in 0..n_lig {
            for b in 0..n_lig {
                if a != b {
                    pairs.push((a, b));
                }
            }
        }
        let rev_pair = pairs
            .iter()
            .map(|&(a, b)| pair_id(n_lig, b, a))
            .collect();

        let mut upper_fwd = Vec::new();
        let mut upper_bwd = Vec::new();
        for i in 0..n_lig {
            for j in (i + 1)..n_lig {
                upper_fwd.push(pair_id(n_lig, i, j));
                upper_bwd.push(pair_id(n_lig, j, i));
            }
        }
        let ordered_from_upper = pairs
            .iter()
            .map(|&(a, b)| {
                let (i, j) = if a < b { (a, b) } else { (b, a) };
                tri_index(n_lig, i, j)
            })
            .collect();

        // directional edge update: output pair (a,b) renames the paper's
        // (j,i), so h_i is atom b, h_j is atom a, m_kj is m_(k,a), and
        // m_ji is m_(a,b); k runs over ligand atoms excluding a and b
        let mut trip_h_i = Vec::new();
        let mut trip_h_j = Vec::new();
        let mut trip_h_k = Vec::new();
        let mut trip_m_kj = Vec::new();
        let mut trip_m_ji = Vec::new();
        let mut trip_out = Vec::new();
        for (pid, &(a, b)) in pairs.iter().enumerate() {
            for k in 0..n_lig {
                if k == a || k == b {
                    continue;
                }
                trip_h_i.push(b);
                trip_h_j.push(a);
                trip_h_k.push(k);
                trip_m_kj.push(pair_id(n_lig, k, a));
                trip_m_ji.push(pid);
                trip_out.push(pid);
            }
        }

        Self {
            n_lig,
            pairs,
            rev_pair,
            upper_fwd,
            upper_bwd,
            ordered_from_upper,
            trip_h_i,
            trip_h_j,
            trip_h_k,
            trip_m_kj,
            trip_m_ji,
            trip_out,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_upper(&self) -> usize {
        self.upper_fwd.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_knn_hand_check() {
        // atoms at x = 0, 1, 3 with k = 1:
        // 0 -> 1 (dist 1 < 3), 1 -> 0 (1 < 2), 2 -> 1 (2 < 3)
        let coords = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let g = build_complex_graph(&coords, 0, 1).unwrap();
        assert_eq!(g.knn_dst, vec![0, 1, 2]);
        assert_eq!(g.knn_src, vec![1, 0, 1]);
    }

    #[test]
    fn saturated_k_gives_complete_graph() {
        let coords = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, 0.0, 3.0],
        ];
        let g = build_complex_graph(&coords, 0, 10).unwrap();
        assert_eq!(g.knn_dst.len(), 4 * 3);
    }

    #[test]
    fn edge_labels_from_endpoints() {
        // 1 pocket atom + 2 ligand atoms
        let coords = vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let g = build_complex_graph(&coords, 1, 2).unwrap();
        for (e, (&i, &j)) in g.knn_dst.iter().zip(&g.knn_src).enumerate() {
            let expect = match (i < 1, j < 1) {
                (true, true) => EdgeLabel::ProteinProtein,
                (false, false) => EdgeLabel::LigandLigand,
                _ => EdgeLabel::ProteinLigand,
            };
            assert_eq!(g.knn_label[e], expect);
        }
        assert!(g
            .knn_label
            .iter()
            .any(|&l| l == EdgeLabel::ProteinLigand));
    }

    #[test]
    fn ties_break_by_lower_index() {
        // atoms 1 and 2 are equidistant from 0; neighbor list of 0 with
        // k = 1 must pick index 1
        let coords = vec![[0.0; 3], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let g = build_complex_graph(&coords, 0, 1).unwrap();
        assert_eq!(g.knn_src[0], 1);
    }

    #[test]
    fn too_few_atoms_error() {
        assert!(build_complex_graph(&[[0.0; 3]], 0, 1).is_err());
    }

    #[test]
    fn topology_pair_ids_consistent() {
        let topo = LigandTopology::new(4);
        assert_eq!(topo.n_pairs(), 12);
        assert_eq!(topo.n_upper(), 6);
        for (pid, &(a, b)) in topo.pairs.iter().enumerate() {
            assert_eq!(pair_id(4, a, b), pid);
            assert_eq!(topo.pairs[topo.rev_pair[pid]], (b, a));
        }
        // upper rows align with tri_index order
        let mut row = 0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert_eq!(tri_index(4, i, j), row);
                assert_eq!(topo.pairs[topo.upper_fwd[row]], (i, j));
                assert_eq!(topo.pairs[topo.upper_bwd[row]], (j, i));
                row += 1;
            }
        }
        // every ordered pair maps back to its unordered storage row
        for (pid, &(a, b)) in topo.pairs.iter().enumerate() {
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            assert_eq!(topo.ordered_from_upper[pid], tri_index(4, i, j));
        }
    }

    #[test]
    fn triples_exclude_endpoints() {
        let topo = LigandTopology::new(4);
        // each of the 12 ordered pairs gets n-2 = 2 triples
        assert_eq!(topo.trip_out.len(), 24);
        for r in 0..topo.trip_out.len() {
            let (a, b) = topo.pairs[topo.trip_out[r]];
            let k = topo.trip_h_k[r];
            assert!(k != a && k != b);
            assert_eq!(topo.trip_h_i[r], b);
            assert_eq!(topo.trip_h_j[r], a);
            assert_eq!(topo.pairs[topo.trip_m_kj[r]], (k, a));
            assert_eq!(topo.trip_m_ji[r], topo.trip_out[r]);
        }
    }
}
