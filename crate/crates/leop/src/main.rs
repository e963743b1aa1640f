use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use leop::cli::{
    cmd_evaluate, cmd_gen_data, cmd_hop, cmd_sample, cmd_train, cmd_train_affinity, CliError,
    RunConfig,
};

/// Pocket-conditioned 3D molecular optimization by equivariant diffusion
/// with binding-affinity guidance.
#[derive(Parser)]
#[command(name = "leop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the JSON run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed (LEOP_SEED takes precedence over both).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap the sampler/metrics work pools (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Disable affinity guidance for this run.
    #[arg(long, global = true)]
    no_guidance: bool,

    /// Override the config output directory.
    #[arg(long, global = true)]
    output: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the toy dataset described by the config's gen_data block.
    GenData,
    /// Train the denoiser (resumes if the weights file exists).
    Train,
    /// Train the affinity head with the denoiser frozen.
    TrainAffinity,
    /// Generate molecules for the configured targets.
    Sample,
    /// Scaffold hopping: renoise a fragment t_hop steps and regenerate.
    Hop,
    /// Score a finished run directory.
    Evaluate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let cfg = RunConfig::load(&config_path)?.with_overrides(
        cli.seed,
        cli.output.as_deref(),
        cli.no_guidance,
    );

    match cli.command {
        Command::GenData => {
            let n = cmd_gen_data(&cfg)?;
            println!("wrote {n} complexes to {}", cfg.dataset_dir);
        }
        Command::Train => {
            let path = cmd_train(&cfg)?;
            println!("trained weights at {}", path.display());
        }
        Command::TrainAffinity => {
            let path = cmd_train_affinity(&cfg)?;
            println!("affinity head updated in {}", path.display());
        }
        Command::Sample => {
            let summary = cmd_sample(&cfg)?;
            println!("{summary}");
        }
        Command::Hop => {
            let summary = cmd_hop(&cfg)?;
            println!("{summary}");
        }
        Command::Evaluate => {
            let report = cmd_evaluate(&cfg)?;
            println!(
                "evaluated {} molecules ({} empty): validity {}%, mean affinity {} (pK-scale)",
                report.n_emitted,
                report.n_empty,
                report
                    .validity_pct
                    .map_or("n/a".to_string(), |v| format!("{v:.1}")),
                report
                    .mean_affinity_pk
                    .map_or("n/a".to_string(), |v| format!("{v:.2}")),
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
