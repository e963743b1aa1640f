//! Synthetic toy protein-ligand complexes.
//!
//! Deterministic desk-scale substitute for a real training corpus: a
//! connected, valence-valid ligand grown inside a loose shell of pocket
//! atoms, plus a mask set describing either a scaffold-decoration task
//! (R stays connected) or a linker task (R splits into two terminal
//! fragments).

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{
    centroid, dist, AtomVocab, BondKind, BondMatrix, ChemError, Molecule3D, PocketContext,
    ToyDatasetSpec, POCKET_ELEMENTS,
};
use crate::rng::{standard_normal, stream_rng, uniform_range};

/// One generated complex: pocket, ligand, and the mask index set.
#[derive(Debug, Clone)]
pub struct ToyComplex {
    pub pocket: PocketContext,
    pub ligand: Molecule3D,
    pub mask_indices: Vec<usize>,
}

/// Maximum valence per ligand element, aromatic bonds counting 1.5.
pub fn max_valence(symbol: &str) -> Option<f64> {
    match symbol {
        "C" => Some(4.0),
        "N" => Some(3.0),
        "O" => Some(2.0),
        "F" => Some(1.0),
        "S" => Some(6.0),
        "Cl" => Some(1.0),
        _ => None,
    }
}

/// Generate one deterministic toy complex for `(spec.random_seed, seed)`.
///
/// Even streams build scaffold-decoration tasks (branched tree ligand,
/// mask peeled from the leaves so R stays connected); odd streams build
/// linker tasks (chain ligand with a masked interior run, leaving two
/// terminal fragments).
pub fn gen_toy_complex(seed: u64, spec: &ToyDatasetSpec) -> Result<ToyComplex, ChemError> {
    spec.validate()?;
    let vocab = AtomVocab::default_ligand();
    let mut rng = stream_rng(spec.random_seed, seed);
    let linker_task = seed % 2 == 1;

    let n_lig = uniform_range(&mut rng, spec.ligand_size_range.0, spec.ligand_size_range.1);
    let ligand = if linker_task {
        grow_chain(&mut rng, n_lig, &vocab)
    } else {
        grow_tree(&mut rng, n_lig, &vocab)
    };

    let mask_indices = if linker_task {
        chain_interior_mask(&mut rng, n_lig, spec.mask_fraction_range)
    } else {
        peel_leaf_mask(&mut rng, &ligand, spec.mask_fraction_range)
    };

    let pocket = grow_pocket(&mut rng, &ligand, spec, seed);
    Ok(ToyComplex {
        pocket,
        ligand,
        mask_indices,
    })
}

/// Element draw weighted toward carbon. F/Cl are rare so that valence-1
/// atoms do not starve tree growth.
fn draw_element(rng: &mut ChaCha20Rng, must_extend: bool) -> usize {
    loop {
        let u: f64 = rng.gen();
        let idx = if u < 0.55 {
            0 // C
        } else if u < 0.70 {
            1 // N
        } else if u < 0.85 {
            2 // O
        } else if u < 0.90 {
            3 // F
        } else if u < 0.97 {
            4 // S
        } else {
            5 // Cl
        };
        // atoms that must accept further growth need valence >= 2
        if must_extend && matches!(idx, 3 | 5) {
            continue;
        }
        return idx;
    }
}

fn free_valence(mol: &Molecule3D, vocab: &AtomVocab, i: usize) -> f64 {
    let cap = max_valence(vocab.symbol(mol.types[i])).unwrap_or(0.0);
    let used: f64 = (0..mol.n_atoms())
        .map(|j| mol.bonds.get(i, j).order())
        .sum();
    cap - used
}

/// Place a new atom bonded to `parent` at roughly bond length, avoiding
/// close contacts with existing atoms.
fn place_bonded(rng: &mut ChaCha20Rng, coords: &[[f64; 3]], parent: usize) -> [f64; 3] {
    let base = coords[parent];
    for _ in 0..64 {
        let dir = random_unit(rng);
        let len = 1.4 + 0.2 * rng.gen::<f64>();
        let cand = [
            base[0] + len * dir[0],
            base[1] + len * dir[1],
            base[2] + len * dir[2],
        ];
        let ok = coords
            .iter()
            .enumerate()
            .all(|(j, &c)| j == parent || dist(cand, c) > 1.2);
        if ok {
            return cand;
        }
    }
    // fall back to the last candidate even if crowded
    let dir = random_unit(rng);
    [base[0] + 1.5 * dir[0], base[1] + 1.5 * dir[1], base[2] + 1.5 * dir[2]]
}

fn random_unit(rng: &mut ChaCha20Rng) -> [f64; 3] {
    loop {
        let v = [
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Branched tree ligand with occasional bond-order upgrades and ring
/// closures, always within valence limits.
fn grow_tree(rng: &mut ChaCha20Rng, n: usize, vocab: &AtomVocab) -> Molecule3D {
    let mut mol = Molecule3D {
        coords: vec![[0.0; 3]; n],
        types: vec![0; n],
        bonds: BondMatrix::empty(n),
    };
    mol.types[0] = draw_element(rng, n > 1);
    let mut coords: Vec<[f64; 3]> = vec![mol.coords[0]];

    for i in 1..n {
        let candidates: Vec<usize> = (0..i)
            .filter(|&p| free_valence(&mol, vocab, p) >= 1.0)
            .collect();
        let parent = candidates[rng.gen_range(0..candidates.len())];
        // keep at least one open slot while the tree is unfinished: a
        // valence-1 element may only join when another slot stays free
        let total_free: f64 = (0..i).map(|p| free_valence(&mol, vocab, p)).sum();
        let require_extendable = i + 1 < n && total_free <= 1.0 + 1e-9;
        let elem = draw_element(rng, require_extendable);
        let pos = place_bonded(rng, &coords, parent);
        coords.push(pos);
        mol.coords[i] = pos;
        mol.types[i] = elem;
        mol.bonds.set(parent, i, BondKind::Single);
    }

    // upgrade a few bonds to double/triple where valence allows
    let pairs = mol.bonds.bonded_pairs();
    for (i, j, _) in pairs {
        let u: f64 = rng.gen();
        if u < 0.10 && free_valence(&mol, vocab, i) >= 1.0 && free_valence(&mol, vocab, j) >= 1.0 {
            mol.bonds.set(i, j, BondKind::Double);
        } else if u < 0.12
            && free_valence(&mol, vocab, i) >= 2.0
            && free_valence(&mol, vocab, j) >= 2.0
        {
            mol.bonds.set(i, j, BondKind::Triple);
        }
    }

    // occasionally close one ring between non-adjacent atoms
    if n >= 5 && rng.gen::<f64>() < 0.15 {
        for _ in 0..8 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j
                && mol.bonds.get(i, j) == BondKind::None
                && free_valence(&mol, vocab, i) >= 1.0
                && free_valence(&mol, vocab, j) >= 1.0
                && dist(mol.coords[i], mol.coords[j]) < 3.5
            {
                mol.bonds.set(i, j, BondKind::Single);
                break;
            }
        }
    }

    mol
}

/// Unbranched chain ligand used for linker tasks.
fn grow_chain(rng: &mut ChaCha20Rng, n: usize, vocab: &AtomVocab) -> Molecule3D {
    let mut mol = Molecule3D {
        coords: vec![[0.0; 3]; n],
        types: vec![0; n],
        bonds: BondMatrix::empty(n),
    };
    let mut coords: Vec<[f64; 3]> = vec![[0.0; 3]];
    mol.types[0] = draw_element(rng, true);
    for i in 1..n {
        let must_extend = i + 1 < n;
        mol.types[i] = draw_element(rng, must_extend);
        let pos = place_bonded(rng, &coords, i - 1);
        coords.push(pos);
        mol.coords[i] = pos;
        mol.bonds.set(i - 1, i, BondKind::Single);
    }
    // chain interiors can take double bonds if both ends have capacity
    for i in 0..n - 1 {
        if rng.gen::<f64>() < 0.08
            && free_valence(&mol, vocab, i) >= 1.0
            && free_valence(&mol, vocab, i + 1) >= 1.0
        {
            mol.bonds.set(i, i + 1, BondKind::Double);
        }
    }
    mol
}

fn mask_size(rng: &mut ChaCha20Rng, n: usize, frac: (f64, f64), max_allowed: usize) -> usize {
    let f = frac.0 + (frac.1 - frac.0) * rng.gen::<f64>();
    ((n as f64 * f).floor() as usize).clamp(1, max_allowed)
}

/// Peel random leaves off the bond graph so the remaining R is connected.
fn peel_leaf_mask(rng: &mut ChaCha20Rng, mol: &Molecule3D, frac: (f64, f64)) -> Vec<usize> {
    let n = mol.n_atoms();
    let target = mask_size(rng, n, frac, n - 1);
    let mut removed = vec![false; n];
    let mut mask = Vec::new();
    while mask.len() < target {
        // leaves of the remaining subgraph
        let leaves: Vec<usize> = (0..n)
            .filter(|&i| !removed[i])
            .filter(|&i| {
                let deg = (0..n)
                    .filter(|&j| !removed[j] && mol.bonds.get(i, j) != BondKind::None)
                    .count();
                deg <= 1
            })
            .collect();
        let alive = removed.iter().filter(|&&r| !r).count();
        if leaves.is_empty() || alive <= 2 {
            break;
        }
        let pick = leaves[rng.gen_range(0..leaves.len())];
        removed[pick] = true;
        mask.push(pick);
    }
    mask.sort_unstable();
    mask
}

/// Mask an interior run of a chain, leaving two terminal fragments.
fn chain_interior_mask(rng: &mut ChaCha20Rng, n: usize, frac: (f64, f64)) -> Vec<usize> {
    let target = mask_size(rng, n, frac, n - 2);
    // run of `target` atoms starting in [1, n-1-target]
    let hi = n - 1 - target;
    let start = uniform_range(rng, 1, hi);
    (start..start + target).collect()
}

/// Shell of pocket atoms around the ligand.
fn grow_pocket(
    rng: &mut ChaCha20Rng,
    ligand: &Molecule3D,
    spec: &ToyDatasetSpec,
    seed: u64,
) -> PocketContext {
    let n = uniform_range(&mut *rng, spec.pocket_size_range.0, spec.pocket_size_range.1);
    let center = centroid(&ligand.coords);
    let extent = ligand
        .coords
        .iter()
        .map(|&c| dist(c, center))
        .fold(0.0f64, f64::max);
    let r_min = extent + 1.8;
    let r_max = r_min + 2.5;

    let mut coords: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut elements = Vec::with_capacity(n);
    while coords.len() < n {
        let mut placed = false;
        for _ in 0..64 {
            let dir = random_unit(rng);
            let r = r_min + (r_max - r_min) * rng.gen::<f64>();
            let cand = [
                center[0] + r * dir[0],
                center[1] + r * dir[1],
                center[2] + r * dir[2],
            ];
            let clear_lig = ligand.coords.iter().all(|&c| dist(cand, c) > 2.2);
            let clear_pkt = coords.iter().all(|&c| dist(cand, c) > 1.8);
            if clear_lig && clear_pkt {
                coords.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            // widen the shell rather than loop forever on crowded draws
            let dir = random_unit(rng);
            let r = r_max + 1.0;
            coords.push([
                center[0] + r * dir[0],
                center[1] + r * dir[1],
                center[2] + r * dir[2],
            ]);
        }
        let u: f64 = rng.gen();
        elements.push(if u < 0.5 {
            0 // C
        } else if u < 0.7 {
            1 // N
        } else if u < 0.9 {
            2 // O
        } else {
            3 // S
        });
    }
    debug_assert_eq!(POCKET_ELEMENTS.len(), 4);
    PocketContext::new(coords, elements, format!("toy-{seed}")).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemdata::{partition_retain_mask, retained_components};
    use crate::metrics::valence_validity;

    fn spec() -> ToyDatasetSpec {
        ToyDatasetSpec {
            n_complexes: 10,
            random_seed: 42,
            ..ToyDatasetSpec::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let s = spec();
        let a = gen_toy_complex(3, &s).unwrap();
        let b = gen_toy_complex(3, &s).unwrap();
        assert_eq!(a.ligand, b.ligand);
        assert_eq!(a.pocket, b.pocket);
        assert_eq!(a.mask_indices, b.mask_indices);
        let c = gen_toy_complex(4, &s).unwrap();
        assert!(c.ligand != a.ligand || c.mask_indices != a.mask_indices);
    }

    #[test]
    fn thousand_ligands_all_valence_valid() {
        let s = spec();
        let vocab = AtomVocab::default_ligand();
        for seed in 0..1000 {
            let complx = gen_toy_complex(seed, &s).unwrap();
            assert!(
                valence_validity(&complx.ligand, &vocab).unwrap(),
                "seed {seed} produced an invalid ligand"
            );
        }
    }

    #[test]
    fn mask_fraction_respected() {
        let s = ToyDatasetSpec {
            ligand_size_range: (10, 10),
            mask_fraction_range: (0.2, 0.4),
            random_seed: 7,
            ..ToyDatasetSpec::default()
        };
        for seed in 0..50 {
            let complx = gen_toy_complex(seed, &s).unwrap();
            let m = complx.mask_indices.len();
            assert!(
                (2..=4).contains(&m),
                "seed {seed}: mask size {m} outside {{2,3,4}}"
            );
        }
    }

    #[test]
    fn task_structure_matches_parity() {
        let s = spec();
        for seed in 0..40 {
            let complx = gen_toy_complex(seed, &s).unwrap();
            let part = partition_retain_mask(&complx.ligand, &complx.mask_indices).unwrap();
            let comps = retained_components(&part);
            if seed % 2 == 1 {
                assert_eq!(comps.len(), 2, "linker seed {seed} should leave 2 fragments");
            } else {
                assert_eq!(comps.len(), 1, "scaffold seed {seed} should stay connected");
            }
        }
    }

    #[test]
    fn pocket_clear_of_ligand() {
        let s = spec();
        for seed in 0..20 {
            let complx = gen_toy_complex(seed, &s).unwrap();
            for p in &complx.pocket.coords {
                for l in &complx.ligand.coords {
                    assert!(dist(*p, *l) > 1.5, "seed {seed}: pocket clashes ligand");
                }
            }
        }
    }
}
