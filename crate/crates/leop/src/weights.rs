//! Versioned weights file.
//!
//! Layout:
//! - magic `LEOP` (4 bytes)
//! - format version, u32 little-endian
//! - header length, u64 little-endian
//! - JSON header: vocabularies, model config, schedule spec, seed,
//!   epoch counter, and the declared array list
//! - named arrays of little-endian f64 in header-declared order
//!
//! Optimizer moment arrays ride along under `opt.m.*` / `opt.v.*` names
//! so an interrupted training run resumes exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Mat;
use crate::chemdata::{AtomVocab, LIGAND_ELEMENTS, POCKET_ELEMENTS};
use crate::egnn::{ModelConfig, ModelParams};
use crate::schedule::ScheduleSpec;

pub const MAGIC: &[u8; 4] = b"LEOP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic: not a LEOP weights file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("header: {0}")]
    Header(String),
    #[error("array {name}: expected {expected} values, file holds {actual}")]
    ArrayMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("array list does not match this build's parameter layout: {0}")]
    LayoutMismatch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// JSON header of the weights file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WeightsHeader {
    pub vocab_atoms: Vec<String>,
    pub vocab_bonds: Vec<String>,
    pub vocab_pocket: Vec<String>,
    pub model: ModelConfig,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    pub epochs_trained: usize,
    pub affinity_epochs_trained: usize,
    pub arrays: Vec<ArrayDecl>,
}

/// Everything stored in one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: WeightsHeader,
    pub params: ModelParams,
    /// Adam first/second moments plus step counter, when present.
    pub optimizer: Option<OptimizerState>,
}

/// Adam state saved for exact resume.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

pub fn default_header(
    params: &ModelParams,
    schedule: ScheduleSpec,
    vocab: &AtomVocab,
) -> WeightsHeader {
    WeightsHeader {
        vocab_atoms: vocab.symbols().to_vec(),
        vocab_bonds: ["NONE", "SINGLE", "DOUBLE", "TRIPLE", "AROMATIC"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        vocab_pocket: POCKET_ELEMENTS.iter().map(|s| s.to_string()).collect(),
        model: params.config.clone(),
        schedule,
        seed: params.seed,
        epochs_trained: 0,
        affinity_epochs_trained: 0,
        arrays: Vec::new(),
    }
}

/// Serialize a checkpoint to bytes.
pub fn to_bytes(chk: &Checkpoint) -> Result<Vec<u8>, WeightsError> {
    let arrays = chk.params.arrays();
    let mut decls: Vec<ArrayDecl> = arrays
        .iter()
        .map(|(name, m)| ArrayDecl {
            name: name.clone(),
            rows: m.rows,
            cols: m.cols,
        })
        .collect();
    let mut payload: Vec<&Mat> = arrays.iter().map(|(_, m)| *m).collect();

    if let Some(opt) = &chk.optimizer {
        decls.push(ArrayDecl {
            name: "opt.step".into(),
            rows: 1,
            cols: 1,
        });
        for (prefix, mats) in [("opt.m", &opt.m), ("opt.v", &opt.v)] {
            for ((name, _), m) in arrays.iter().zip(mats) {
                decls.push(ArrayDecl {
                    name: format!("{prefix}.{name}"),
                    rows: m.rows,
                    cols: m.cols,
                });
            }
            let _ = prefix;
        }
        payload.clear(); // rebuilt below including the step scalar
    }

    let mut header = chk.header.clone();
    header.arrays = decls;
    let header_json = serde_json::to_vec(&header)?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);

    let write_mat = |out: &mut Vec<u8>, m: &Mat| {
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    if let Some(opt) = &chk.optimizer {
        for (_, m) in &arrays {
            write_mat(&mut out, m);
        }
        out.extend_from_slice(&(opt.step as f64).to_le_bytes());
        for m in &opt.m {
            write_mat(&mut out, m);
        }
        for m in &opt.v {
            write_mat(&mut out, m);
        }
    } else {
        for m in payload {
            write_mat(&mut out, m);
        }
    }
    Ok(out)
}

/// Parse a checkpoint from bytes, verifying magic, version, and the full
/// array layout against this build's parameter order.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, WeightsError> {
    let mut cur = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let mut v4 = [0u8; 4];
    cur.read_exact(&mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != FORMAT_VERSION {
        return Err(WeightsError::BadVersion(version));
    }
    let mut l8 = [0u8; 8];
    cur.read_exact(&mut l8)?;
    let header_len = u64::from_le_bytes(l8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    cur.read_exact(&mut header_bytes)?;
    let header: WeightsHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| WeightsError::Header(e.to_string()))?;

    let mut read_mat = |rows: usize, cols: usize, name: &str| -> Result<Mat, WeightsError> {
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            cur.read_exact(&mut buf).map_err(|_| WeightsError::ArrayMismatch {
                name: name.to_string(),
                expected: rows * cols,
                actual: 0,
            })?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Mat::from_vec(rows, cols, data))
    };

    // materialize params at the declared shape, then overwrite arrays
    let mut params = ModelParams::init(&header.model, header.seed);
    let expected: Vec<(String, (usize, usize))> = params
        .arrays()
        .iter()
        .map(|(n, m)| (n.clone(), (m.rows, m.cols)))
        .collect();

    let mut mats: Vec<Mat> = Vec::new();
    let mut opt_step: Option<u64> = None;
    let mut opt_m: Vec<Mat> = Vec::new();
    let mut opt_v: Vec<Mat> = Vec::new();
    for decl in &header.arrays {
        let m = read_mat(decl.rows, decl.cols, &decl.name)?;
        if decl.name == "opt.step" {
            opt_step = Some(m.data[0] as u64);
        } else if decl.name.starts_with("opt.m.") {
            opt_m.push(m);
        } else if decl.name.starts_with("opt.v.") {
            opt_v.push(m);
        } else {
            mats.push(m);
        }
    }

    let param_decls: Vec<&ArrayDecl> = header
        .arrays
        .iter()
        .filter(|d| !d.name.starts_with("opt."))
        .collect();
    if param_decls.len() != expected.len() {
        return Err(WeightsError::LayoutMismatch(format!(
            "file declares {} parameter arrays, build expects {}",
            param_decls.len(),
            expected.len()
        )));
    }
    for (decl, (name, (rows, cols))) in param_decls.iter().zip(&expected) {
        if &decl.name != name || decl.rows != *rows || decl.cols != *cols {
            return Err(WeightsError::LayoutMismatch(format!(
                "array '{}' [{}x{}] vs expected '{}' [{}x{}]",
                decl.name, decl.rows, decl.cols, name, rows, cols
            )));
        }
    }
    for ((_, slot), m) in params.arrays_mut().into_iter().zip(mats) {
        *slot = m;
    }

    let optimizer = match opt_step {
        Some(step) => Some(OptimizerState {
            step,
            m: opt_m,
            v: opt_v,
        }),
        None => None,
    };

    Ok(Checkpoint {
        header,
        params,
        optimizer,
    })
}

/// Atomic save: write to a temp file in the same directory, then rename.
pub fn save(path: &Path, chk: &Checkpoint) -> Result<(), WeightsError> {
    let bytes = to_bytes(chk)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, WeightsError> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes)
}

/// FNV-1a hash of the serialized checkpoint, recorded in run manifests.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Ensure the ligand vocabulary this build compiles against matches the
/// file's. Returns both lists on mismatch so the caller can print them.
pub fn check_vocab(header: &WeightsHeader) -> Result<(), (Vec<String>, Vec<String>)> {
    let mut expected: Vec<String> = LIGAND_ELEMENTS.iter().map(|s| s.to_string()).collect();
    expected.push("FAKE".to_string());
    if header.vocab_atoms != expected {
        return Err((header.vocab_atoms.clone(), expected));
    }
    Ok(())
}
