//! Domain types for pockets, ligands, and retain/mask partitions, plus
//! file parsing, fake-atom padding, toy-complex generation, and the
//! geometric affinity oracle.

mod oracle;
mod pdb;
mod sdf;
mod toygen;

pub use oracle::{oracle_affinity, CONTACT_RADIUS_DEFAULT, PK_SCALE, STERIC_ONSET};
pub use pdb::{parse_pdb_pocket, write_pdb_pocket, PdbPocket};
pub use sdf::{parse_sdf_molecule, write_sdf};
pub use toygen::{gen_toy_complex, max_valence, ToyComplex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from parsing, construction, and partitioning.
#[derive(Debug, Error)]
pub enum ChemError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no pocket atoms accepted from input")]
    EmptyPocket,
    #[error("molecule contains FAKE atoms; strip them first")]
    FakeAtomPresent,
    #[error("unknown element symbol '{0}'")]
    UnknownElement(String),
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("padding target {n_max} below current mask count {current}")]
    PaddingTooSmall { n_max: usize, current: usize },
    #[error("invalid molecule: {0}")]
    InvalidMolecule(String),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Ligand element symbols in vocabulary order; FAKE is always last.
pub const LIGAND_ELEMENTS: &[&str] = &["C", "N", "O", "F", "S", "Cl"];

/// Pocket element symbols accepted by the PDB reader.
pub const POCKET_ELEMENTS: &[&str] = &["C", "N", "O", "S"];

/// Ordered atom-type categories for the ligand, ending with the reserved
/// FAKE padding category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomVocab {
    elements: Vec<String>,
}

impl AtomVocab {
    /// The default ligand vocabulary {C, N, O, F, S, Cl, FAKE}, K_v = 7.
    pub fn default_ligand() -> Self {
        let mut elements: Vec<String> = LIGAND_ELEMENTS.iter().map(|s| s.to_string()).collect();
        elements.push("FAKE".to_string());
        Self { elements }
    }

    /// Number of categories including FAKE.
    pub fn k(&self) -> usize {
        self.elements.len()
    }

    /// Index of the FAKE category (always the last).
    pub fn fake_index(&self) -> usize {
        self.elements.len() - 1
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.elements.iter().position(|e| e == symbol)
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.elements[index]
    }

    pub fn symbols(&self) -> &[String] {
        &self.elements
    }
}

/// Bond-type categories. NONE is index 0; K_b = 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum BondKind {
    None = 0,
    Single = 1,
    Double = 2,
    Triple = 3,
    Aromatic = 4,
}

impl BondKind {
    pub const COUNT: usize = 5;

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(BondKind::None),
            1 => Some(BondKind::Single),
            2 => Some(BondKind::Double),
            3 => Some(BondKind::Triple),
            4 => Some(BondKind::Aromatic),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Bond order used for valence accounting; aromatic counts 1.5.
    pub fn order(self) -> f64 {
        match self {
            BondKind::None => 0.0,
            BondKind::Single => 1.0,
            BondKind::Double => 2.0,
            BondKind::Triple => 3.0,
            BondKind::Aromatic => 1.5,
        }
    }
}

/// Symmetric bond matrix with a NONE diagonal, stored as the strict
/// upper triangle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BondMatrix {
    n: usize,
    upper: Vec<BondKind>,
}

impl BondMatrix {
    pub fn empty(n: usize) -> Self {
        let m = n.saturating_sub(1) * n / 2;
        Self {
            n,
            upper: vec![BondKind::None; m],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn tri_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        // row i of the strict upper triangle starts after sum of previous rows
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> BondKind {
        if i == j {
            return BondKind::None;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.upper[self.tri_index(a, b)]
    }

    pub fn set(&mut self, i: usize, j: usize, kind: BondKind) {
        assert!(i != j, "diagonal bonds are always NONE");
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let idx = self.tri_index(a, b);
        self.upper[idx] = kind;
    }

    /// All unordered bonded pairs (i < j, kind != NONE).
    pub fn bonded_pairs(&self) -> Vec<(usize, usize, BondKind)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let k = self.get(i, j);
                if k != BondKind::None {
                    out.push((i, j, k));
                }
            }
        }
        out
    }
}

/// A ligand: per-atom coordinates in angstroms, atom-type indices into an
/// [`AtomVocab`], and a symmetric bond matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule3D {
    pub coords: Vec<[f64; 3]>,
    pub types: Vec<usize>,
    pub bonds: BondMatrix,
}

impl Molecule3D {
    pub fn new(
        coords: Vec<[f64; 3]>,
        types: Vec<usize>,
        bonds: BondMatrix,
    ) -> Result<Self, ChemError> {
        if coords.len() != types.len() || bonds.n() != coords.len() {
            return Err(ChemError::InvalidMolecule(format!(
                "inconsistent sizes: {} coords, {} types, {} bond rows",
                coords.len(),
                types.len(),
                bonds.n()
            )));
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(ChemError::InvalidMolecule(
                "non-finite coordinate".to_string(),
            ));
        }
        Ok(Self {
            coords,
            types,
            bonds,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }

    pub fn has_fake(&self, vocab: &AtomVocab) -> bool {
        self.types.iter().any(|&t| t == vocab.fake_index())
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid(&self.coords)
    }

    /// One-hot row for atom `i` over `k` categories.
    pub fn type_onehot(&self, i: usize, k: usize) -> Vec<f64> {
        let mut row = vec![0.0; k];
        row[self.types[i]] = 1.0;
        row
    }
}

/// Fixed protein pocket atoms; never diffused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PocketContext {
    pub coords: Vec<[f64; 3]>,
    pub elements: Vec<usize>,
    pub pocket_id: String,
}

impl PocketContext {
    pub fn new(
        coords: Vec<[f64; 3]>,
        elements: Vec<usize>,
        pocket_id: String,
    ) -> Result<Self, ChemError> {
        if coords.is_empty() {
            return Err(ChemError::EmptyPocket);
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(ChemError::InvalidMolecule(
                "non-finite pocket coordinate".to_string(),
            ));
        }
        Ok(Self {
            coords,
            elements,
            pocket_id,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }
}

/// A ligand partitioned into retained atoms R and mask slots M.
///
/// Fake padding atoms, when present, always live among the mask slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedLigand {
    pub mol: Molecule3D,
    pub mask: Vec<bool>,
}

impl MaskedLigand {
    pub fn n_mask(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn mask_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn retained_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }

    /// Centroid of the retained atoms, the conditioning frame origin.
    pub fn retain_centroid(&self) -> [f64; 3] {
        let retained: Vec<[f64; 3]> = self
            .retained_indices()
            .iter()
            .map(|&i| self.mol.coords[i])
            .collect();
        centroid(&retained)
    }

    /// Prior center: mean of the centroids of the connected components of
    /// R (a single centroid for scaffold tasks, the fragment-centroid
    /// midpoint for two-fragment linker tasks).
    pub fn prior_center(&self) -> [f64; 3] {
        let comps = retained_components(self);
        let mut acc = [0.0; 3];
        for comp in &comps {
            let pts: Vec<[f64; 3]> = comp.iter().map(|&i| self.mol.coords[i]).collect();
            let c = centroid(&pts);
            for d in 0..3 {
                acc[d] += c[d];
            }
        }
        let n = comps.len().max(1) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    }
}

/// The full conditioning context: pocket plus partitioned ligand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedComplex {
    pub pocket: PocketContext,
    pub ligand: MaskedLigand,
}

/// Parameters for the synthetic toy-complex generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDatasetSpec {
    pub n_complexes: usize,
    pub pocket_size_range: (usize, usize),
    pub ligand_size_range: (usize, usize),
    pub mask_fraction_range: (f64, f64),
    pub random_seed: u64,
    pub contact_radius: f64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            n_complexes: 200,
            pocket_size_range: (10, 16),
            ligand_size_range: (5, 9),
            mask_fraction_range: (0.25, 0.45),
            random_seed: 0,
            contact_radius: CONTACT_RADIUS_DEFAULT,
        }
    }
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<(), ChemError> {
        if self.n_complexes == 0 {
            return Err(ChemError::InvalidSpec("n_complexes must be >= 1".into()));
        }
        if self.pocket_size_range.0 > self.pocket_size_range.1 || self.pocket_size_range.0 == 0 {
            return Err(ChemError::InvalidSpec("empty pocket_size_range".into()));
        }
        if self.ligand_size_range.0 > self.ligand_size_range.1 || self.ligand_size_range.0 < 3 {
            return Err(ChemError::InvalidSpec(
                "ligand_size_range must start at >= 3".into(),
            ));
        }
        let (lo, hi) = self.mask_fraction_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(ChemError::InvalidSpec(
                "mask_fraction_range must satisfy 0 < lo <= hi < 1".into(),
            ));
        }
        if !(self.contact_radius > 0.0) {
            return Err(ChemError::InvalidSpec("contact_radius must be > 0".into()));
        }
        Ok(())
    }
}

/// Split a ligand into retained context and mask slots.
///
/// The retained part is bit-identical to the input; the mask may leave R
/// disconnected (linker setting).
pub fn partition_retain_mask(
    mol: &Molecule3D,
    mask_indices: &[usize],
) -> Result<MaskedLigand, ChemError> {
    let n = mol.n_atoms();
    if mask_indices.is_empty() {
        return Err(ChemError::Partition("mask_indices is empty".into()));
    }
    let mut mask = vec![false; n];
    for &i in mask_indices {
        if i >= n {
            return Err(ChemError::Partition(format!(
                "mask index {i} out of range for {n} atoms"
            )));
        }
        mask[i] = true;
    }
    if mask.iter().all(|&m| m) {
        return Err(ChemError::Partition(
            "mask covers all atoms; nothing retained".into(),
        ));
    }
    Ok(MaskedLigand {
        mol: mol.clone(),
        mask,
    })
}

/// Extend the mask to `n_max` slots by appending FAKE atoms.
///
/// Fake atoms sit at the retained-fragment centroid with all incident
/// bonds NONE; real atoms are untouched.
pub fn pad_with_fake_atoms(
    ligand: &MaskedLigand,
    n_max: usize,
    vocab: &AtomVocab,
) -> Result<MaskedLigand, ChemError> {
    let current = ligand.n_mask();
    if n_max < current {
        return Err(ChemError::PaddingTooSmall { n_max, current });
    }
    if n_max == current {
        return Ok(ligand.clone());
    }
    let extra = n_max - current;
    let center = ligand.retain_centroid();
    let old_n = ligand.mol.n_atoms();
    let new_n = old_n + extra;

    let mut coords = ligand.mol.coords.clone();
    let mut types = ligand.mol.types.clone();
    let mut mask = ligand.mask.clone();
    let mut bonds = BondMatrix::empty(new_n);
    for i in 0..old_n {
        for j in (i + 1)..old_n {
            bonds.set(i, j, ligand.mol.bonds.get(i, j));
        }
    }
    for _ in 0..extra {
        coords.push(center);
        types.push(vocab.fake_index());
        mask.push(true);
    }
    Ok(MaskedLigand {
        mol: Molecule3D::new(coords, types, bonds)?,
        mask,
    })
}

/// Connected components of the retained subgraph (indices into the full
/// ligand).
pub fn retained_components(ligand: &MaskedLigand) -> Vec<Vec<usize>> {
    let retained = ligand.retained_indices();
    let mut seen = vec![false; ligand.mol.n_atoms()];
    let mut comps = Vec::new();
    for &start in &retained {
        if seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            for &j in &retained {
                if !seen[j] && ligand.mol.bonds.get(i, j) != BondKind::None {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

pub(crate) fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    if points.is_empty() {
        return [0.0; 3];
    }
    let mut c = [0.0; 3];
    for p in points {
        for d in 0..3 {
            c[d] += p[d];
        }
    }
    let n = points.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> Molecule3D {
        let coords = (0..n).map(|i| [1.5 * i as f64, 0.0, 0.0]).collect();
        let types = vec![0; n];
        let mut bonds = BondMatrix::empty(n);
        for i in 0..n.saturating_sub(1) {
            bonds.set(i, i + 1, BondKind::Single);
        }
        Molecule3D::new(coords, types, bonds).unwrap()
    }

    #[test]
    fn vocab_defaults() {
        let v = AtomVocab::default_ligand();
        assert_eq!(v.k(), 7);
        assert_eq!(v.symbol(v.fake_index()), "FAKE");
        assert_eq!(v.index_of("Cl"), Some(5));
        assert_eq!(BondKind::COUNT, 5);
        assert_eq!(BondKind::None.index(), 0);
    }

    #[test]
    fn bond_matrix_symmetry_and_diagonal() {
        let mut b = BondMatrix::empty(4);
        b.set(2, 0, BondKind::Double);
        assert_eq!(b.get(0, 2), BondKind::Double);
        assert_eq!(b.get(2, 0), BondKind::Double);
        assert_eq!(b.get(1, 1), BondKind::None);
    }

    #[test]
    fn partition_basic() {
        let mol = chain(5);
        let part = partition_retain_mask(&mol, &[3, 4]).unwrap();
        assert_eq!(part.n_mask(), 2);
        assert_eq!(part.retained_indices(), vec![0, 1, 2]);
        assert_eq!(part.mol, mol);
    }

    #[test]
    fn partition_rejects_full_and_empty_mask() {
        let mol = chain(3);
        assert!(partition_retain_mask(&mol, &[]).is_err());
        assert!(partition_retain_mask(&mol, &[0, 1, 2]).is_err());
    }

    #[test]
    fn partition_linker_leaves_two_fragments() {
        // mask the middle atom of a 3-atom chain: R splits in two
        let mol = chain(3);
        let part = partition_retain_mask(&mol, &[1]).unwrap();
        let comps = retained_components(&part);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps, vec![vec![0], vec![2]]);
    }

    #[test]
    fn padding_appends_fakes_at_retain_centroid() {
        let vocab = AtomVocab::default_ligand();
        let mol = chain(5);
        let part = partition_retain_mask(&mol, &[3, 4]).unwrap();
        let padded = pad_with_fake_atoms(&part, 5, &vocab).unwrap();
        assert_eq!(padded.n_mask(), 5);
        assert_eq!(padded.mol.n_atoms(), 8);
        let center = part.retain_centroid();
        for i in 5..8 {
            assert_eq!(padded.mol.types[i], vocab.fake_index());
            assert_eq!(padded.mol.coords[i], center);
            assert!(padded.mask[i]);
            for j in 0..8 {
                assert_eq!(padded.mol.bonds.get(i, j), BondKind::None);
            }
        }
        // real atoms untouched
        for i in 0..5 {
            assert_eq!(padded.mol.coords[i], mol.coords[i]);
            assert_eq!(padded.mol.types[i], mol.types[i]);
        }
    }

    #[test]
    fn padding_identity_when_equal() {
        let vocab = AtomVocab::default_ligand();
        let mol = chain(4);
        let part = partition_retain_mask(&mol, &[2, 3]).unwrap();
        let same = pad_with_fake_atoms(&part, 2, &vocab).unwrap();
        assert_eq!(same, part);
        assert!(pad_with_fake_atoms(&part, 1, &vocab).is_err());
    }

    #[test]
    fn non_finite_coordinates_rejected() {
        let coords = vec![[f64::NAN, 0.0, 0.0]];
        let res = Molecule3D::new(coords, vec![0], BondMatrix::empty(1));
        assert!(res.is_err());
    }
}
