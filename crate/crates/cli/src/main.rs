mod commands;
mod config;
mod failure;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::BackendKind;

#[derive(Parser)]
#[command(
    name = "disentangle",
    version,
    about = "Train and compare hate classifiers across platforms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LabelSource {
    Lexicon,
    Llm,
    Gold,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Causal,
    Target,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw dataset into the canonical corpus format.
    Prepare {
        /// gab, reddit, x, youtube or synthetic-NAME
        #[arg(long)]
        platform: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic platforms with known causal and target vocabularies.
    Synth {
        #[arg(long, default_value_t = 2)]
        platforms: usize,
        /// Posts per platform.
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Share of the first platform's posts whose target words follow the label.
        #[arg(long)]
        spurious_fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce seed target labels for a corpus.
    Weaklabel {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = LabelSource::Lexicon)]
        source: LabelSource,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Recorded labeler exchanges (JSONL); without it the labeler goes live.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus to train on; overrides data.train.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Seed labels from `weaklabel`; overrides data.labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on every source and score on every target.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        source: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        target: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump causal and target latents of sampled posts.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        corpus: Vec<PathBuf>,
        /// Posts per corpus.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a latent dump (t-SNE scatter) or a grid report (table) as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Causal)]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f32,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Prepare {
            platform,
            input,
            out,
        } => commands::prepare(&platform, &input, &out),
        Command::Synth {
            platforms,
            n,
            seed,
            spurious_fraction,
            out,
        } => commands::synth(platforms, n, seed, spurious_fraction, &out),
        Command::Weaklabel {
            corpus,
            source,
            lexicon,
            replay,
            noise,
            noise_seed,
            out,
        } => commands::weaklabel(&corpus, source, lexicon, replay, noise, noise_seed, &out),
        Command::Train {
            config,
            data,
            labels,
            seed,
            max_steps,
            backend,
            backbone,
            out,
        } => {
            let o = config::Overrides {
                seed,
                max_steps,
                backend,
                backbone,
            };
            commands::train(config.as_deref(), data, labels, &o, &out)
        }
        Command::Grid {
            config,
            source,
            target,
            seed,
            max_steps,
            out,
        } => {
            let o = config::Overrides {
                seed,
                max_steps,
                ..Default::default()
            };
            commands::grid(config.as_deref(), source, target, &o, &out)
        }
        Command::Export {
            checkpoint,
            corpus,
            n,
            seed,
            out,
        } => commands::export(&checkpoint, &corpus, n, seed, &out),
        Command::Plot {
            input,
            kind,
            seed,
            perplexity,
            epochs,
            out,
        } => commands::plot(
            &input,
            kind,
            &plot::TsneParams {
                perplexity,
                epochs,
                seed,
            },
            &out,
        ),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
