use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reid_adapt::cli::{
    cmd_ablation, cmd_adapt, cmd_cluster, cmd_eval, cmd_run_all, cmd_synth, cmd_train_source,
    load_config, CliError,
};

/// Domain-adaptive re-identification pipeline: synthetic data, supervised
/// source training, cluster-guided target adaptation, and retrieval
/// evaluation.
#[derive(Parser)]
#[command(name = "reid-adapt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --set clustering.eps=0.5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for artifacts and the resolved config copy.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target dataset pair.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Supervised training on a labeled source manifest.
    TrainSource {
        #[command(flatten)]
        common: CommonArgs,
        /// Source manifest JSON.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Unsupervised adaptation on an unlabeled target manifest.
    Adapt {
        #[command(flatten)]
        common: CommonArgs,
        /// Target manifest JSON.
        #[arg(long)]
        manifest: PathBuf,
        /// Parameter checkpoint to start from.
        #[arg(long)]
        params: PathBuf,
    },
    /// Cluster target embeddings once and report group statistics.
    Cluster {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        params: PathBuf,
    },
    /// Retrieval evaluation (CMC/mAP) for a manifest.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Ground-truth sidecar for unlabeled target manifests.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        params: PathBuf,
    },
    /// Full pipeline: synth, train, adapt, evaluate.
    RunAll {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run every variant under a shared seed and tabulate mAP/rank1.
    Ablation {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(common.config.as_deref(), &common.set)?;
            cmd_synth(&cfg, &common.out)
        }
        Command::TrainSource { common, manifest } => {
            let cfg = load_config(common.config.as_deref(), &common.set)?;
            cmd_train_source(&cfg, &manifest, &common.out)
        }
        Command::Adapt { common, manifest, params } => {
            let cfg = load_config(common.config.as_deref(), &common.set)?;
            cmd_adapt(&cfg, &manifest, &params, &common.out)
        }
        Command::Cluster { common, manifest, params } => {
            let cfg = load_config(common.config.as_deref(), &common.set)?;
            cmd_cluster(&cfg, &manifest, &params, &common.out)
        }
        Command::Eval { common, manifest, labels, params } => {
            let cfg = load_config(common.config.as_deref(), &common.set)?;
            cmd_eval(&cfg, &manifest, labels.as_deref(), &params, &common.out)
        }
        Command::RunAll { common } => {
            let cfg = load_config(common.config.as_deref(), &common.set)?;
            cmd_run_all(&cfg, &common.out)
        }
        Command::Ablation { common } => {
            let cfg = load_config(common.config.as_deref(), &common.set)?;
            cmd_ablation(&cfg, &common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
