use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vitalclust::pipeline::{self, LoadedConfig, StageError};

/// Cluster ICU vital-sign series and summarise subgroup prognosis.
#[derive(Parser)]
#[command(name = "vitalclust", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding `paths.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort into the configured input paths.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Synthetic spec, overriding `paths.synthetic_spec`.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Parse and filter the inputs and report cohort problems.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline.
    Run {
        #[command(flatten)]
        common: Common,
        /// Re-cluster validation patients and align to the frozen labels,
        /// overriding `validation.mode`.
        #[arg(long)]
        refit_validation: bool,
    },
    /// Model-selection sweep only.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Prognosis and trajectories from a stored model.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Validate { common }
            | Command::Run { common, .. }
            | Command::Sweep { common }
            | Command::Report { common, .. } => common,
        }
    }
}

fn fail(e: StageError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_usage() { 2 } else { 1 })
}

fn execute(command: &Command, cfg: &LoadedConfig) -> Result<(), StageError> {
    match command {
        Command::Synth { spec, .. } => {
            let s = pipeline::cmd_synth(cfg, spec.as_deref())?;
            println!(
                "wrote {} patients to {} and {}",
                s.n_patients,
                s.timeseries.display(),
                s.statics.display()
            );
        }
        Command::Validate { .. } => {
            let s = pipeline::cmd_validate(cfg)?;
            println!(
                "{} patients ({} development, {} validation), {} excluded",
                s.n_patients,
                s.n_development,
                s.n_validation,
                s.exclusions.total()
            );
            for (reason, n) in s.exclusions.counts() {
                println!("  excluded {reason}: {n}");
            }
            for v in &s.violations {
                println!("  violation: {v}");
            }
            if !s.violations.is_empty() {
                return Err(StageError {
                    stage: pipeline::Stage::Ingest,
                    source: vitalclust::Error::InvalidParameter(format!(
                        "{} cohort violations",
                        s.violations.len()
                    )),
                });
            }
        }
        Command::Run { refit_validation, .. } => {
            let mut cfg = cfg.clone();
            if *refit_validation {
                cfg.config.validation.mode = pipeline::ValidationMode::Refit;
            }
            let s = pipeline::cmd_run(&cfg)?;
            println!(
                "chose {} with k = {}; manifest {}",
                s.manifest.chosen.algorithm,
                s.manifest.chosen.k,
                s.manifest_path.display()
            );
        }
        Command::Sweep { .. } => {
            let r = pipeline::cmd_sweep(cfg)?;
            print!("{}", r.to_csv());
            println!("chose {} with k = {}", r.chosen_algorithm, r.chosen_k);
        }
        Command::Report { model, .. } => {
            let r = pipeline::cmd_report(cfg, model)?;
            print!("{}", r.prognosis.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VITALCLUST_LOG", "warn")).init();
    let cli = Cli::parse();
    let common = cli.command.common();
    if let Some(n) = common.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let cfg = match pipeline::load_config(&common.config, common.out.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match execute(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
