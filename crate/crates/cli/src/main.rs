//! `uatr`: prepare datasets, synthesize corpora, train and evaluate.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::{CliError, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "uatr", version = uatr_core::VERSION, about = "Underwater acoustic target recognition toolkit")]
struct Cli {
    /// Worker threads (0 = one per core). `--threads 1` is fully serial.
    #[arg(long, global = true, env = "UATR_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a clip manifest for a labelled audio tree.
    Prepare(PrepareArgs),
    /// Generate a synthetic source or target corpus.
    Synth(SynthArgs),
    /// Compute and cache encoder input features for every clip.
    Featurize(FeaturizeArgs),
    /// Train a model (from scratch, head only, or full fine-tuning).
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Score a checkpoint on re-segmented clips of several lengths.
    EvalVarlen(EvalVarlenArgs),
    /// Apply a checkpoint zero-shot to another dataset's categories.
    EvalCrossdomain(EvalCrossdomainArgs),
    /// Write the pooled embedding of every clip of a split to CSV.
    ExportEmbeddings(ExportArgs),
    /// Print the version.
    Version,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Dataset root: one subdirectory per raw label, or a labels.csv index.
    #[arg(long)]
    pub root: PathBuf,
    /// deepship, shipsear or custom.
    #[arg(long, default_value = "custom")]
    pub dataset: String,
    /// Category map JSON; required for custom trees with grouped labels.
    #[arg(long)]
    pub category_map: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    pub clip_seconds: f64,
    /// train,validation,test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// source or target; overrides the spec file.
    #[arg(long)]
    pub domain: Option<String>,
    /// SynthSpec JSON. Without it a built-in preset is used.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// desk-source, pretrain-source, desk-target-train or desk-target-test.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clips_per_category: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Feature config JSON (defaults when absent).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Only this split (train, validation or test).
    #[arg(long)]
    pub split: Option<String>,
    /// Run directory; the cache goes to `<out>/cache`.
    #[arg(long, alias = "cache-dir")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Feature config JSON.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Encoder config JSON.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Training config JSON, applied over the profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// desk, deepship or shipsear.
    #[arg(long, default_value = "desk")]
    pub train_profile: String,
    /// full_finetune, head_only or from_scratch.
    #[arg(long)]
    pub mode: Option<String>,
    /// Checkpoint to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalVarlenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Clip lengths in seconds.
    #[arg(long, default_value = "1,2,3,4,5,10,20")]
    pub lengths: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalCrossdomainArgs {
    /// Checkpoint trained on the source dataset.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// target=source pairs, comma separated.
    #[arg(long)]
    pub map: String,
    /// per_clip, mean_prob or majority.
    #[arg(long, default_value = "mean_prob")]
    pub aggregate: String,
    /// Restrict to one target split; all clips by default.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Prepare(a) => commands::prepare(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Featurize(a) => commands::featurize(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::EvalVarlen(a) => commands::eval_varlen(&a),
        Command::EvalCrossdomain(a) => commands::eval_crossdomain(&a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(&a),
        Command::Version => {
            println!("uatr {}", uatr_core::VERSION);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("error=usage detail={}", e.kind());
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
