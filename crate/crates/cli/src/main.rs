use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use moodpipe::config::PipelineConfig;
use moodpipe::corpus::{load_corpus, ClassCounts, CorpusKind};
use moodpipe::eval::{render_csv, render_table, Modality};
use moodpipe::pipeline;
use moodpipe::synth::{generate, Separability, SynthKind, SynthSpec};

#[derive(Parser)]
#[command(name = "moodpipe", version, about = "Multimodal depression screening from interview audio and transcripts")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus root directory.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Corpus layout: three-response or interview.
    #[arg(long)]
    kind: Option<CorpusKind>,
    /// Output directory; nothing is written outside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed (default: MOODPIPE_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct Hyper {
    #[arg(long)]
    modality: Option<Modality>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check corpus layout, labels and audio; exit 1 on any error.
    Validate {
        root: PathBuf,
        #[arg(long, default_value = "three-response")]
        kind: CorpusKind,
    },
    /// Write Mel spectrograms and text embeddings for every participant.
    Featurize {
        #[command(flatten)]
        common: Common,
    },
    /// Train on all participants and write checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Stratified k-fold cross-validation of all models.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        k: Option<usize>,
        /// Print CSV instead of the aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Print the table of the last cross-validation run.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        csv: bool,
    },
    /// Summarize class balancing on the featurized corpus (JSON).
    ResampleReport {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic corpus.
    Synth {
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        /// TOML spec file; the other flags are ignored when given.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        depressed: usize,
        #[arg(long, default_value_t = 132)]
        control: usize,
        #[arg(long, default_value = "three-response")]
        kind: CorpusKind,
        /// Responses per interview (interview kind only).
        #[arg(long, default_value_t = 20)]
        responses: usize,
        /// Noise level σ; 0 gives a separable corpus.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, env = "MOODPIPE_SEED", default_value_t = 1)]
        seed: u64,
    },
}

fn resolve(common: &Common, hyper: Option<&Hyper>) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::from_env()?,
    };
    if let Some(v) = &common.corpus {
        config.corpus.root = v.clone();
    }
    if let Some(v) = common.kind {
        config.corpus.kind = v;
    }
    if let Some(v) = &common.out {
        config.output = v.clone();
    }
    if let Some(v) = common.seed {
        config.crossval.seed = v;
    }
    if let Some(h) = hyper {
        let cv = &mut config.crossval;
        if let Some(v) = h.modality {
            cv.modality = v;
        }
        if let Some(v) = h.epochs {
            cv.train.epochs = v;
            cv.fusion_train.epochs = v;
        }
        if let Some(v) = h.batch {
            cv.train.batch = v;
            cv.fusion_train.batch = v;
        }
        if let Some(v) = h.lr {
            cv.train.lr = v;
        }
    }
    config.validate()?;
    Ok(config)
}

fn summary_line(c: ClassCounts) -> String {
    format!("{} depressed / {} non-depressed", c.depressed, c.non_depressed)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { root, kind } => {
            let corpus = load_corpus(&root, kind)?;
            for issue in &corpus.report.issues {
                println!("{issue}");
            }
            println!("{} ({} participants valid)", summary_line(corpus.class_counts()), corpus.participants.len());
            let rejected = corpus.report.rejected_participants();
            if !rejected.is_empty() {
                println!("{} participants rejected", rejected.len());
            }
            return Ok(if corpus.is_valid() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Featurize { common } => {
            let config = resolve(&common, None)?;
            let s = pipeline::featurize(&config)?;
            for issue in &s.issues {
                println!("{issue}");
            }
            println!(
                "{} participants: {} up to date, {} rejected, {} files written",
                s.participants,
                s.up_to_date,
                s.rejected.len(),
                s.files_written
            );
        }
        Command::Train { common, hyper } => {
            let config = resolve(&common, Some(&hyper))?;
            let s = pipeline::train(&config)?;
            for (model, outcome) in &s.training {
                let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
                println!("{}: {} epochs, final loss {last:.4} ({:?})", model.features(), outcome.losses.len(), outcome.stop);
            }
        }
        Command::Crossval { common, hyper, k, csv } => {
            let mut config = resolve(&common, Some(&hyper))?;
            if let Some(k) = k {
                config.crossval.k = k;
                config.validate()?;
            }
            let report = pipeline::crossval(&config)?;
            print!("{}", if csv { render_csv(&report) } else { render_table(&report) });
        }
        Command::Report { common, csv } => {
            let config = resolve(&common, None)?;
            let report = pipeline::read_report(&config.output)?;
            print!("{}", if csv { render_csv(&report) } else { render_table(&report) });
        }
        Command::ResampleReport { common } => {
            let config = resolve(&common, None)?;
            let s = pipeline::resample_report(&config)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Synth { out, spec, depressed, control, kind, responses, noise, seed } => {
            let spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    SynthSpec::from_toml(&text)?
                }
                None => SynthSpec {
                    n_depressed: depressed,
                    n_control: control,
                    separability: if noise == 0.0 { Separability::Separable } else { Separability::Noisy(noise) },
                    kind: match kind {
                        CorpusKind::ThreeResponse => SynthKind::ThreeResponse,
                        CorpusKind::Interview => SynthKind::Interview { responses },
                    },
                    seed,
                },
            };
            if out.exists() && out.read_dir()?.next().is_some() {
                bail!("{} exists and is not empty", out.display());
            }
            let roster = generate(&spec, &out)?;
            let counts = ClassCounts::from_labels(roster.iter().map(|r| r.1));
            println!("wrote {} participants to {} ({})", roster.len(), out.display(), summary_line(counts));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
