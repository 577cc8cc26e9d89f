mod commands;
mod config;
mod exit;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use exit::EXIT_CODES;

#[derive(Parser, Debug)]
#[command(name = "mdenoise", version, about = "Multilingual denoising pre-training for translation, at desk scale", after_help = EXIT_CODES)]
struct Cli {
    /// Workspace root; every path in configs and flags resolves against it.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write toy corpora: monolingual ciphers of a base language plus parallel splits.
    MakeToy,
    /// Learn a shared subword vocabulary over a corpus manifest.
    TrainVocab,
    /// Denoising pre-training on monolingual corpora.
    Pretrain,
    /// Supervised fine-tuning on a parallel corpus (random init without `init`).
    Finetune,
    /// Translate sentences or documents with a checkpoint.
    Translate,
    /// Unsupervised training by on-the-fly back-translation.
    Bt,
    /// Score a fine-tuned model on another source language, optionally followed by BT.
    Transfer,
    /// BLEU of a hypothesis file against references.
    Eval,
    /// Curves and sweep tables with SVG plots.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command, &cli.root, cli.config.as_deref(), &cli.set) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.kind.code())
        }
    }
}
