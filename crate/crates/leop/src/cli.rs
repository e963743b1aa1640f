//! Command-line entry points wiring configs, data generation, training,
//! sampling, hopping, and evaluation into reproducible runs.
//!
//! One strict-schema JSON config drives every subcommand; unknown keys
//! are rejected. Each run writes its resolved config (after seed and
//! output overrides) beside its outputs, together with the tool version
//! and the weights hash, so a run directory is self-describing and
//! re-executable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::{AffinityError, AffinityTrainConfig, GuidanceConfig};
use crate::chemdata::{
    oracle_affinity, parse_pdb_pocket, parse_sdf_molecule, partition_retain_mask, write_pdb_pocket,
    write_sdf, AtomVocab, ChemError, MaskedComplex, ToyDatasetSpec, CONTACT_RADIUS_DEFAULT,
};
use crate::egnn::ModelConfig;
use crate::metrics::{EvalReport, MetricsError, PK_SCALE};
use crate::sampler::{
    generate, scaffold_hop, write_run, GeneratedSample, SampleError, SampleRunConfig,
};
use crate::schedule::ScheduleSpec;
use crate::training::{train, trace_csv, TrainConfig, TrainError};
use crate::weights::{
    check_vocab, content_hash, default_header, load, save, to_bytes, Checkpoint, WeightsError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("vocabulary mismatch:\n  weights: {weights:?}\n  build:   {build:?}")]
    VocabMismatch {
        weights: Vec<String>,
        build: Vec<String>,
    },
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for usage/config errors, 1 for numeric/runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::VocabMismatch { .. }
            | CliError::Json(_)
            | CliError::Io(_) => 2,
            CliError::Chem(_) => 2,
            _ => 1,
        }
    }
}

/// Supported optimization tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ScaffoldDecoration,
    LinkerDesign,
    ScaffoldHopping,
}

/// Sampling block of the run config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleBlock {
    pub n_samples: usize,
    pub pad_extra_cap: u64,
    /// Dataset item indices to sample; None means all.
    #[serde(default)]
    pub targets: Option<Vec<usize>>,
}

impl Default for SampleBlock {
    fn default() -> Self {
        Self {
            n_samples: 100,
            pad_extra_cap: 8,
            targets: None,
        }
    }
}

/// Scaffold-hopping block.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HopBlock {
    pub t_hop: usize,
}

impl Default for HopBlock {
    fn default() -> Self {
        Self { t_hop: 50 }
    }
}

/// The one config file driving all subcommands.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub dataset_dir: String,
    pub output_dir: String,
    pub weights_file: String,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub affinity_train: AffinityTrainConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub sample: SampleBlock,
    #[serde(default)]
    pub hop: HopBlock,
    #[serde(default)]
    pub gen_data: Option<ToyDatasetSpec>,
    #[serde(default = "default_contact_radius")]
    pub contact_radius: f64,
}

fn default_contact_radius() -> f64 {
    CONTACT_RADIUS_DEFAULT
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.sample.n_samples == 0 {
            return Err(CliError::Config("sample.n_samples must be >= 1".into()));
        }
        if self.schedule.t < 2 {
            return Err(CliError::Config("schedule.t must be >= 2".into()));
        }
        if !(self.guidance.delta > 0.0) {
            return Err(CliError::Config("guidance.delta must be > 0".into()));
        }
        if self.hop.t_hop == 0 {
            return Err(CliError::Config("hop.t_hop must be >= 1".into()));
        }
        if let Some(spec) = &self.gen_data {
            spec.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Apply command-line and environment overrides. LEOP_SEED beats the
    /// --seed flag, which beats the config value.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        output: Option<&str>,
        no_guidance: bool,
    ) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Ok(env_seed) = std::env::var("LEOP_SEED") {
            if let Ok(s) = env_seed.parse::<u64>() {
                self.seed = s;
            }
        }
        if let Some(o) = output {
            self.output_dir = o.to_string();
        }
        if no_guidance {
            self.guidance.enabled = false;
        }
        self
    }
}

/// One dataset entry in the toy manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetItem {
    pub pocket_file: String,
    pub ligand_file: String,
    pub mask_indices: Vec<usize>,
}

pub fn load_dataset_manifest(dir: &Path) -> Result<Vec<DatasetItem>, CliError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_dataset(dir: &Path, vocab: &AtomVocab) -> Result<Vec<MaskedComplex>, CliError> {
    let items = load_dataset_manifest(dir)?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let pocket_text = std::fs::read_to_string(dir.join(&item.pocket_file))?;
        let ligand_text = std::fs::read_to_string(dir.join(&item.ligand_file))?;
        let pocket = parse_pdb_pocket(&pocket_text, &format!("target-{i}"))?.pocket;
        let ligand = parse_sdf_molecule(&ligand_text, vocab)?;
        let masked = partition_retain_mask(&ligand, &item.mask_indices)?;
        out.push(MaskedComplex {
            pocket,
            ligand: masked,
        });
    }
    Ok(out)
}

fn write_resolved_config(cfg: &RunConfig, dir: &Path, weights_hash: Option<&str>) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("resolved_config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;
    #[derive(Serialize)]
    struct RunInfo<'a> {
        tool_version: &'a str,
        weights_hash: Option<&'a str>,
    }
    std::fs::write(
        dir.join("run_info.json"),
        serde_json::to_string_pretty(&RunInfo {
            tool_version: env!("CARGO_PKG_VERSION"),
            weights_hash,
        })?,
    )?;
    Ok(())
}

/// Generate the toy dataset: pockets as PDB, ligands as SDF, the
/// manifest, and oracle scores.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<usize, CliError> {
    let spec = cfg
        .gen_data
        .as_ref()
        .ok_or_else(|| CliError::Config("gen_data block missing".into()))?;
    let vocab = AtomVocab::default_ligand();
    let dir = PathBuf::from(&cfg.dataset_dir);
    std::fs::create_dir_all(&dir)?;

    let mut items = Vec::new();
    let mut scores = Vec::new();
    for i in 0..spec.n_complexes {
        let complx = crate::chemdata::gen_toy_complex(i as u64, spec)?;
        let pocket_file = format!("pocket_{i:04}.pdb");
        let ligand_file = format!("ligand_{i:04}.sdf");
        std::fs::write(dir.join(&pocket_file), write_pdb_pocket(&complx.pocket))?;
        std::fs::write(
            dir.join(&ligand_file),
            write_sdf(&complx.ligand, &vocab, &format!("toy-{i}"))?,
        )?;
        let score = oracle_affinity(&complx.pocket, &complx.ligand, &vocab, spec.contact_radius)?;
        scores.push(serde_json::json!({ "index": i, "oracle_affinity": score }));
        items.push(DatasetItem {
            pocket_file,
            ligand_file,
            mask_indices: complx.mask_indices,
        });
    }
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&items)?,
    )?;
    std::fs::write(
        dir.join("oracle_scores.json"),
        serde_json::to_string_pretty(&scores)?,
    )?;
    write_resolved_config(cfg, &dir, None)?;
    Ok(items.len())
}

/// Train the denoiser, resuming when the weights file already exists.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let vocab = AtomVocab::default_ligand();
    let data_dir = PathBuf::from(&cfg.dataset_dir);
    if !data_dir.exists() {
        return Err(CliError::Config(format!(
            "dataset path does not exist: {}",
            data_dir.display()
        )));
    }
    let dataset = load_dataset(&data_dir, &vocab)?;
    let weights_path = PathBuf::from(&cfg.weights_file);

    let chk = if weights_path.exists() {
        let chk = load(&weights_path)?;
        check_vocab(&chk.header).map_err(|(w, b)| CliError::VocabMismatch {
            weights: w,
            build: b,
        })?;
        chk
    } else {
        let params = crate::egnn::ModelParams::init(&cfg.model, cfg.seed);
        Checkpoint {
            header: default_header(&params, cfg.schedule, &vocab),
            params,
            optimizer: None,
        }
    };

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let out_dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out_dir)?;
    let outcome = train(chk, &dataset, &train_cfg, &vocab, Some(&weights_path))?;
    std::fs::write(out_dir.join("loss_trace.csv"), trace_csv(&outcome.trace))?;
    save(&weights_path, &outcome.checkpoint)?;

    // load-and-verify self check
    let reloaded = load(&weights_path)?;
    if reloaded.params != outcome.checkpoint.params {
        return Err(CliError::Config(
            "weights self-check failed after save".into(),
        ));
    }
    let hash = content_hash(&to_bytes(&outcome.checkpoint)?);
    write_resolved_config(cfg, &out_dir, Some(&hash))?;
    Ok(weights_path)
}

/// Train the affinity head against the oracle with the trunk frozen.
pub fn cmd_train_affinity(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let vocab = AtomVocab::default_ligand();
    let dataset = load_dataset(Path::new(&cfg.dataset_dir), &vocab)?;
    let weights_path = PathBuf::from(&cfg.weights_file);
    let chk = load(&weights_path)?;
    check_vocab(&chk.header).map_err(|(w, b)| CliError::VocabMismatch {
        weights: w,
        build: b,
    })?;
    let mut acfg = cfg.affinity_train.clone();
    acfg.seed = cfg.seed;
    let (chk, trace) =
        crate::affinity::train_affinity(chk, &dataset, &acfg, &vocab, cfg.contact_radius)?;
    save(&weights_path, &chk)?;
    let out_dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out_dir)?;
    let mut csv = String::from("epoch,train_mse,validation_rmse\n");
    for s in &trace {
        csv.push_str(&format!(
            "{},{:.9},{:.9}\n",
            s.epoch, s.train_mse, s.validation_rmse
        ));
    }
    std::fs::write(out_dir.join("affinity_trace.csv"), csv)?;
    let hash = content_hash(&to_bytes(&chk)?);
    write_resolved_config(cfg, &out_dir, Some(&hash))?;
    Ok(weights_path)
}

/// Shared guts of sample/hop: load weights, iterate targets, write the
/// run, print the one-line summary.
fn run_sampling(cfg: &RunConfig, hop: bool) -> Result<EvalSummary, CliError> {
    let vocab = AtomVocab::default_ligand();
    let chk = load(Path::new(&cfg.weights_file))?;
    check_vocab(&chk.header).map_err(|(w, b)| CliError::VocabMismatch {
        weights: w,
        build: b,
    })?;
    let hash = content_hash(&to_bytes(&chk)?);
    // the schedule always comes from the weights header so sampling
    // matches training
    let sched = chk
        .header
        .schedule
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;

    let data_dir = PathBuf::from(&cfg.dataset_dir);
    let dataset = load_dataset(&data_dir, &vocab)?;
    let targets: Vec<usize> = match &cfg.sample.targets {
        Some(t) => t.clone(),
        None => (0..dataset.len()).collect(),
    };

    let run_cfg = SampleRunConfig {
        n_samples: cfg.sample.n_samples,
        guidance: cfg.guidance,
        seed: cfg.seed,
        pad_extra_cap: cfg.sample.pad_extra_cap,
    };

    let mut by_target: Vec<(usize, Vec<GeneratedSample>)> = Vec::new();
    for &target in &targets {
        let complex = dataset.get(target).ok_or_else(|| {
            CliError::Config(format!("target index {target} out of range"))
        })?;
        let samples = if hop {
            let frag = complex.ligand.mask_indices();
            scaffold_hop(
                &chk.params,
                &complex.pocket,
                &complex.ligand.mol,
                &frag,
                cfg.hop.t_hop,
                &run_cfg,
                &sched,
                &vocab,
                cfg.contact_radius,
            )?
        } else {
            generate(
                &chk.params,
                &complex.pocket,
                &complex.ligand,
                &run_cfg,
                &sched,
                &vocab,
                cfg.contact_radius,
            )?
        };
        by_target.push((target, samples));
    }

    let out_dir = PathBuf::from(&cfg.output_dir);
    let manifest = write_run(&out_dir, &by_target, &vocab, cfg.guidance.enabled, &hash)?;
    write_resolved_config(cfg, &out_dir, Some(&hash))?;

    // summary
    let mut n_emitted = 0usize;
    let mut n_total = 0usize;
    let mut n_valid = 0usize;
    let mut aff_sum = 0.0;
    for (_, samples) in &by_target {
        for s in samples {
            n_total += 1;
            if let (Some(mol), Some(oracle)) = (&s.molecule, s.oracle_affinity) {
                n_emitted += 1;
                aff_sum += oracle;
                if crate::metrics::valence_validity(mol, &vocab).unwrap_or(false) {
                    n_valid += 1;
                }
            }
        }
    }
    let _ = manifest;
    Ok(EvalSummary {
        n_emitted,
        n_total,
        validity_pct: if n_emitted > 0 {
            100.0 * n_valid as f64 / n_emitted as f64
        } else {
            0.0
        },
        mean_affinity_pk: if n_emitted > 0 {
            PK_SCALE * aff_sum / n_emitted as f64
        } else {
            0.0
        },
    })
}

/// One-line run summary printed by sample/hop.
#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    pub n_emitted: usize,
    pub n_total: usize,
    pub validity_pct: f64,
    pub mean_affinity_pk: f64,
}

impl std::fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "emitted {}/{} molecules, validity {:.1}%, mean affinity {:.2} (pK-scale)",
            self.n_emitted, self.n_total, self.validity_pct, self.mean_affinity_pk
        )
    }
}

pub fn cmd_sample(cfg: &RunConfig) -> Result<EvalSummary, CliError> {
    run_sampling(cfg, false)
}

pub fn cmd_hop(cfg: &RunConfig) -> Result<EvalSummary, CliError> {
    run_sampling(cfg, true)
}

/// Evaluate a finished run directory against the dataset references.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let vocab = AtomVocab::default_ligand();
    let report = crate::metrics::evaluate_run(
        Path::new(&cfg.output_dir),
        Some(Path::new(&cfg.dataset_dir)),
        &vocab,
    )?;
    Ok(report)
}
