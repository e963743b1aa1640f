//! Desk-scale evaluation: structural validity, simplified LogP, Lipinski
//! rule counting, high-affinity fraction, and aggregate run reports.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemdata::{
    oracle_affinity, parse_pdb_pocket, parse_sdf_molecule, AtomVocab, BondKind, ChemError,
    Molecule3D, CONTACT_RADIUS_DEFAULT,
};
use crate::sampler::RunManifest;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("unknown element '{0}' for valence/metric tables")]
    UnknownElement(String),
    #[error("molecule contains FAKE atoms")]
    FakeAtomPresent,
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("run manifest missing at {0}")]
    MissingManifest(String),
}

/// Maximum valence per element, aromatic bonds counting 1.5.
fn element_valence(symbol: &str) -> Option<f64> {
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

fn element_mass(symbol: &str) -> Option<f64> {
    match symbol {
        "C" => Some(12.011),
        "N" => Some(14.007),
        "O" => Some(15.999),
        "F" => Some(18.998),
        "S" => Some(32.06),
        "Cl" => Some(35.45),
        _ => None,
    }
}

const H_MASS: f64 = 1.008;

/// True iff no atom exceeds its maximum valence and the bond graph is
/// connected.
pub fn valence_validity(mol: &Molecule3D, vocab: &AtomVocab) -> Result<bool, MetricsError> {
    if mol.has_fake(vocab) {
        return Err(MetricsError::FakeAtomPresent);
    }
    let n = mol.n_atoms();
    for i in 0..n {
        let sym = vocab.symbol(mol.types[i]);
        let cap =
            element_valence(sym).ok_or_else(|| MetricsError::UnknownElement(sym.to_string()))?;
        let used: f64 = (0..n).map(|j| mol.bonds.get(i, j).order()).sum();
        if used > cap + 1e-9 {
            return Ok(false);
        }
    }
    Ok(is_connected(mol))
}

fn is_connected(mol: &Molecule3D) -> bool {
    let n = mol.n_atoms();
    if n <= 1 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && mol.bonds.get(i, j) != BondKind::None {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

/// Implicit hydrogen count of atom `i`: valence deficit, floored at 0.
pub fn implicit_hydrogens(mol: &Molecule3D, vocab: &AtomVocab, i: usize) -> usize {
    let sym = vocab.symbol(mol.types[i]);
    let cap = element_valence(sym).unwrap_or(0.0);
    let used: f64 = (0..mol.n_atoms())
        .map(|j| mol.bonds.get(i, j).order())
        .sum();
    ((cap - used).max(0.0) + 1e-9).floor() as usize
}

/// Molecular weight including implicit hydrogens, in daltons.
pub fn molecular_weight(mol: &Molecule3D, vocab: &AtomVocab) -> Result<f64, MetricsError> {
    let mut mw = 0.0;
    for i in 0..mol.n_atoms() {
        let sym = vocab.symbol(mol.types[i]);
        let m = element_mass(sym).ok_or_else(|| MetricsError::UnknownElement(sym.to_string()))?;
        mw += m + H_MASS * implicit_hydrogens(mol, vocab, i) as f64;
    }
    Ok(mw)
}

// ---------------------------------------------------------------------
// LogP from the shipped contribution table
// ---------------------------------------------------------------------

/// The contribution table shipped with the crate; see the file header of
/// `data/logp_contrib.txt` for provenance.
const LOGP_TABLE_TEXT: &str = include_str!("../data/logp_contrib.txt");

struct LogPTable {
    cells: HashMap<(String, bool, u8), f64>,
    defaults: HashMap<String, f64>,
}

fn logp_table() -> &'static LogPTable {
    static TABLE: OnceLock<LogPTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut cells = HashMap::new();
        let mut defaults = HashMap::new();
        for line in LOGP_TABLE_TEXT.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "default" {
                defaults.insert(fields[1].to_string(), fields[2].parse().unwrap());
            } else {
                let elem = fields[0].to_string();
                let aromatic = fields[1] == "1";
                let het: u8 = fields[2].parse().unwrap();
                let value: f64 = fields[3].parse().unwrap();
                cells.insert((elem, aromatic, het), value);
            }
        }
        LogPTable { cells, defaults }
    })
}

/// Raw table lookup for one (element, aromatic, het-bucket) cell,
/// exposed so tests can hand-compute expected sums.
pub fn logp_cell(element: &str, aromatic: bool, het_bucket: u8) -> Option<f64> {
    logp_table()
        .cells
        .get(&(element.to_string(), aromatic, het_bucket))
        .copied()
}

/// Simplified additive LogP plus the number of fallback lookups.
pub fn crippen_logp_detailed(
    mol: &Molecule3D,
    vocab: &AtomVocab,
) -> Result<(f64, usize), MetricsError> {
    let table = logp_table();
    let n = mol.n_atoms();
    let mut total = 0.0;
    let mut fallbacks = 0usize;
    for i in 0..n {
        let sym = vocab.symbol(mol.types[i]);
        if element_valence(sym).is_none() {
            return Err(MetricsError::UnknownElement(sym.to_string()));
        }
        let aromatic = (0..n).any(|j| mol.bonds.get(i, j) == BondKind::Aromatic);
        let het = (0..n)
            .filter(|&j| mol.bonds.get(i, j) != BondKind::None)
            .filter(|&j| vocab.symbol(mol.types[j]) != "C")
            .count()
            .min(2) as u8;
        match table.cells.get(&(sym.to_string(), aromatic, het)) {
            Some(v) => total += v,
            None => {
                total += table
                    .defaults
                    .get(sym)
                    .copied()
                    .ok_or_else(|| MetricsError::UnknownElement(sym.to_string()))?;
                fallbacks += 1;
            }
        }
    }
    Ok((total, fallbacks))
}

/// Simplified additive LogP over the shipped atom-typing table.
pub fn crippen_logp(mol: &Molecule3D, vocab: &AtomVocab) -> Result<f64, MetricsError> {
    crippen_logp_detailed(mol, vocab).map(|(v, _)| v)
}

// ---------------------------------------------------------------------
// Lipinski
// ---------------------------------------------------------------------

/// Count of satisfied rules among the five checks:
/// MW <= 500, HBD <= 5, HBA <= 10, LogP <= 5, rotatable bonds <= 10.
pub fn lipinski_count(mol: &Molecule3D, vocab: &AtomVocab) -> Result<u8, MetricsError> {
    let mw = molecular_weight(mol, vocab)?;
    let logp = crippen_logp(mol, vocab)?;
    let n = mol.n_atoms();

    let mut hbd = 0usize;
    let mut hba = 0usize;
    for i in 0..n {
        let sym = vocab.symbol(mol.types[i]);
        if sym == "N" || sym == "O" {
            hba += 1;
            if implicit_hydrogens(mol, vocab, i) >= 1 {
                hbd += 1;
            }
        }
    }

    let rotatable = rotatable_bonds(mol);

    let mut count = 0u8;
    if mw <= 500.0 {
        count += 1;
    }
    if hbd <= 5 {
        count += 1;
    }
    if hba <= 10 {
        count += 1;
    }
    if logp <= 5.0 {
        count += 1;
    }
    if rotatable <= 10 {
        count += 1;
    }
    Ok(count)
}

/// Non-ring single bonds between heavy atoms of degree >= 2.
pub fn rotatable_bonds(mol: &Molecule3D) -> usize {
    let n = mol.n_atoms();
    let degree: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| mol.bonds.get(i, j) != BondKind::None)
                .count()
        })
        .collect();
    let mut count = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if mol.bonds.get(i, j) != BondKind::Single {
                continue;
            }
            if degree[i] < 2 || degree[j] < 2 {
                continue;
            }
            if !bond_in_ring(mol, i, j) {
                count += 1;
            }
        }
    }
    count
}

/// A bond is in a ring iff its endpoints stay connected without it.
fn bond_in_ring(mol: &Molecule3D, i: usize, j: usize) -> bool {
    let n = mol.n_atoms();
    let mut seen = vec![false; n];
    let mut stack = vec![i];
    seen[i] = true;
    while let Some(a) = stack.pop() {
        for b in 0..n {
            if seen[b] || mol.bonds.get(a, b) == BondKind::None {
                continue;
            }
            if a == i && b == j || a == j && b == i {
                continue; // skip the bond itself
            }
            if b == j {
                return true;
            }
            seen[b] = true;
            stack.push(b);
        }
    }
    false
}

// ---------------------------------------------------------------------
// High affinity
// ---------------------------------------------------------------------

/// Per-target generated scores with the reference ligand's score.
#[derive(Debug, Clone)]
pub struct TargetScores {
    pub generated: Vec<f64>,
    pub reference: Option<f64>,
}

/// Percentage of top-5 generated molecules per target scoring at least
/// the reference; targets without a reference are skipped and counted.
pub fn high_affinity_pct(targets: &[TargetScores]) -> (f64, usize) {
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut skipped = 0usize;
    for t in targets {
        let Some(reference) = t.reference else {
            skipped += 1;
            continue;
        };
        let mut scores = t.generated.clone();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        for s in scores.iter().take(5) {
            total += 1;
            if *s >= reference {
                hits += 1;
            }
        }
    }
    let pct = if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    };
    (pct, skipped)
}

// ---------------------------------------------------------------------
// Run reports
// ---------------------------------------------------------------------

/// Aggregate report over one sampling run. QED and SA are out of scope;
/// their fields stay null so the schema is stable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub schema_version: u32,
    pub n_emitted: usize,
    pub n_empty: usize,
    pub mean_affinity_pk: Option<f64>,
    pub median_affinity_pk: Option<f64>,
    pub high_affinity_pct: Option<f64>,
    pub validity_pct: Option<f64>,
    pub mean_lipinski: Option<f64>,
    pub mean_logp: Option<f64>,
    pub qed: Option<f64>,
    pub sa: Option<f64>,
    pub missing_files: Vec<String>,
    pub skipped_targets: usize,
}

/// Scale factor mapping normalized oracle scores onto pK-like units for
/// reporting.
pub use crate::chemdata::PK_SCALE;

/// Evaluate a finished run directory against reference complexes.
///
/// Reads the run manifest, scores every emitted molecule, and writes
/// `report.json` plus `report.csv` beside the manifest. Deterministic:
/// identical inputs produce identical bytes.
pub fn evaluate_run(
    run_dir: &Path,
    dataset_dir: Option<&Path>,
    vocab: &AtomVocab,
) -> Result<EvalReport, MetricsError> {
    let manifest_path = run_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(MetricsError::MissingManifest(
            manifest_path.display().to_string(),
        ));
    }
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;

    // reference scores per target from the dataset, when provided
    let mut references: HashMap<usize, f64> = HashMap::new();
    if let Some(data_dir) = dataset_dir {
        let items = crate::cli::load_dataset_manifest(data_dir).map_err(|e| {
            MetricsError::MissingManifest(format!("{}: {e}", data_dir.display()))
        })?;
        for (idx, item) in items.iter().enumerate() {
            let pocket_text = std::fs::read_to_string(data_dir.join(&item.pocket_file))?;
            let ligand_text = std::fs::read_to_string(data_dir.join(&item.ligand_file))?;
            let pocket = parse_pdb_pocket(&pocket_text, &format!("target-{idx}"))?.pocket;
            let ligand = parse_sdf_molecule(&ligand_text, vocab)?;
            let score = oracle_affinity(&pocket, &ligand, vocab, CONTACT_RADIUS_DEFAULT)?;
            references.insert(idx, score);
        }
    }

    let mut rows = Vec::new();
    let mut missing_files = Vec::new();
    let mut n_empty = 0usize;
    let mut per_target: HashMap<usize, Vec<f64>> = HashMap::new();

    for entry in &manifest.samples {
        let (Some(file), Some(oracle)) = (&entry.file, entry.oracle_affinity) else {
            n_empty += 1;
            continue;
        };
        let path = run_dir.join(file);
        if !path.exists() {
            missing_files.push(file.clone());
            continue;
        }
        let mol = parse_sdf_molecule(&std::fs::read_to_string(&path)?, vocab)?;
        let valid = valence_validity(&mol, vocab)?;
        let (logp, lipinski) = if valid {
            (
                Some(crippen_logp(&mol, vocab)?),
                Some(lipinski_count(&mol, vocab)?),
            )
        } else {
            (None, None)
        };
        per_target
            .entry(entry.target_index)
            .or_default()
            .push(oracle);
        rows.push(ReportRow {
            sample_index: entry.sample_index,
            target_index: entry.target_index,
            file: file.clone(),
            oracle_affinity: oracle,
            predicted_affinity: entry.predicted_affinity,
            valid,
            logp,
            lipinski,
        });
    }

    let n_emitted = rows.len();
    let affs: Vec<f64> = rows.iter().map(|r| r.oracle_affinity * PK_SCALE).collect();
    let valid_rows: Vec<&ReportRow> = rows.iter().filter(|r| r.valid).collect();

    let targets: Vec<TargetScores> = {
        let mut keys: Vec<usize> = per_target.keys().copied().collect();
        keys.sort_unstable();
        keys.iter()
            .map(|k| TargetScores {
                generated: per_target[k].clone(),
                reference: references.get(k).copied(),
            })
            .collect()
    };
    let (high_pct, skipped_targets) = high_affinity_pct(&targets);

    let report = EvalReport {
        schema_version: 1,
        n_emitted,
        n_empty,
        mean_affinity_pk: mean(&affs),
        median_affinity_pk: median(&affs),
        high_affinity_pct: if references.is_empty() {
            None
        } else {
            Some(high_pct)
        },
        validity_pct: if n_emitted == 0 {
            None
        } else {
            Some(100.0 * valid_rows.len() as f64 / n_emitted as f64)
        },
        mean_lipinski: mean(
            &valid_rows
                .iter()
                .filter_map(|r| r.lipinski.map(|l| l as f64))
                .collect::<Vec<_>>(),
        ),
        mean_logp: mean(
            &valid_rows
                .iter()
                .filter_map(|r| r.logp)
                .collect::<Vec<_>>(),
        ),
        qed: None,
        sa: None,
        missing_files,
        skipped_targets,
    };

    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(run_dir.join("report.json"), json)?;
    let mut csv = String::from(
        "sample_index,target_index,file,oracle_affinity,predicted_affinity,valid,logp,lipinski\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.6},{},{},{},{}\n",
            r.sample_index,
            r.target_index,
            r.file,
            r.oracle_affinity,
            r.predicted_affinity
                .map_or(String::new(), |p| format!("{p:.6}")),
            r.valid,
            r.logp.map_or(String::new(), |v| format!("{v:.4}")),
            r.lipinski.map_or(String::new(), |v| v.to_string()),
        ));
    }
    std::fs::write(run_dir.join("report.csv"), csv)?;
    Ok(report)
}

struct ReportRow {
    sample_index: usize,
    target_index: usize,
    file: String,
    oracle_affinity: f64,
    predicted_affinity: Option<f64>,
    valid: bool,
    logp: Option<f64>,
    lipinski: Option<u8>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
