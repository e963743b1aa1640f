//! Geometric affinity oracle.
//!
//! A deterministic, rotation-invariant contact score standing in for an
//! external affinity predictor at desk scale. All constants live here.
//!
//! Per ligand atom i with pocket distances d_ij:
//!
//! ```text
//! c_i     = sum_j exp(-d_ij^2 / (2 r^2))          soft contact count
//! steric_i = sum_j max(0, STERIC_ONSET - d_ij)^2   clash penalty
//! score_i = clamp(c_i / (1 + c_i) - steric_i, 0, 1)
//! A       = mean_i score_i                         in [0, 1]
//! ```
//!
//! `r` is the contact radius; `c/(1+c)` is the saturating map to [0, 1).
//! Scores depend only on pairwise distances, so the oracle is invariant
//! under simultaneous rigid motion of pocket and ligand.

use super::{AtomVocab, ChemError, Molecule3D, PocketContext};

/// Default Gaussian contact radius in angstroms.
pub const CONTACT_RADIUS_DEFAULT: f64 = 3.5;

/// Distance below which the steric penalty turns on, in angstroms.
pub const STERIC_ONSET: f64 = 1.2;

/// Display scale mapping the normalized score onto pK-like units.
pub const PK_SCALE: f64 = 14.0;

/// Normalized affinity of a clean ligand against a pocket, in [0, 1].
///
/// Errors if the molecule still contains FAKE padding atoms.
pub fn oracle_affinity(
    pocket: &PocketContext,
    mol: &Molecule3D,
    vocab: &AtomVocab,
    contact_radius: f64,
) -> Result<f64, ChemError> {
    if mol.has_fake(vocab) {
        return Err(ChemError::FakeAtomPresent);
    }
    if mol.n_atoms() == 0 {
        return Err(ChemError::InvalidMolecule("empty molecule".to_string()));
    }
    let two_r2 = 2.0 * contact_radius * contact_radius;
    let mut total = 0.0;
    for lig in &mol.coords {
        let mut contact = 0.0;
        let mut steric = 0.0;
        for pkt in &pocket.coords {
            let d = super::dist(*lig, *pkt);
            contact += (-d * d / two_r2).exp();
            if d < STERIC_ONSET {
                let pen = STERIC_ONSET - d;
                steric += pen * pen;
            }
        }
        total += (contact / (1.0 + contact) - steric).clamp(0.0, 1.0);
    }
    Ok(total / mol.n_atoms() as f64)
}
