//! `epag`: preprocess abstracts, split complex sentences, train the
//! tokenizer and the move classifier, evaluate and predict.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::{ArgGroup, Parser, Subcommand};
use epag_core::eval::ReportFormat;

use crate::config::{threads_from_env, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "epag", version, about = "Move recognition for scientific abstracts")]
struct Cli {
    /// Seed for initialization, shuffling and gradcheck data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run config; every key must be present.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for outputs.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean raw abstracts (one per line) and write one sentence per line.
    Preprocess {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Defaults to `<out-dir>/sentences.txt`.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Split complex sentences at coordinate clauses; fragments keep the label.
    Split {
        /// Labeled dataset (`text<TAB>label`).
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// CoNLL-U parses, one block per dataset record.
        #[arg(long, value_name = "FILE")]
        parses: PathBuf,
        /// Defaults to `<out-dir>/split.tsv`.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Learn a unigram subword vocabulary from a dataset or sentence file.
    TrainTokenizer {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        /// EM iterations per pruning round.
        #[arg(long)]
        rounds: Option<usize>,
        /// Defaults to `<out-dir>/vocab.txt`.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Train the classifier and write `model.epag` and `history.tsv`.
    #[command(group(ArgGroup::new("regime").args(["original", "split"])))]
    Train {
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        test: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        train_parses: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        test_parses: Option<PathBuf>,
        /// Existing vocabulary instead of training one.
        #[arg(long, value_name = "FILE")]
        vocab: Option<PathBuf>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Drop the relative position terms from attention.
        #[arg(long)]
        no_rel_pos: bool,
        /// Cached rows per layer; 0 disables the segment memory.
        #[arg(long)]
        mem_len: Option<usize>,
        /// Train on whole sentences.
        #[arg(long)]
        original: bool,
        /// Train on split fragments.
        #[arg(long)]
        split: bool,
    },
    /// Score a checkpoint on a labeled dataset.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Defaults to `vocab.txt` next to the checkpoint.
        #[arg(long, value_name = "FILE")]
        vocab: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// `tsv` or `json`.
        #[arg(long, default_value = "tsv")]
        format: String,
        /// Also write the report here.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Print class probabilities and the predicted move for one sentence.
    Predict {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Defaults to `vocab.txt` next to the checkpoint.
        #[arg(long, value_name = "FILE")]
        vocab: Option<PathBuf>,
        #[arg(long)]
        text: String,
    },
    /// Compare analytic gradients with finite differences on a small model.
    Gradcheck {
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn output_path(config: &RunConfig, explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| config.out_dir.join(default_name))
}

fn run(cli: Cli) -> Result<()> {
    let mut config = base_config(&cli)?;
    match cli.command {
        Command::Preprocess { input, output } => {
            let output = output_path(&config, output, "sentences.txt");
            print!("{}", commands::preprocess(&input, &output)?);
        }
        Command::Split { dataset, parses, output } => {
            let output = output_path(&config, output, "split.tsv");
            print!("{}", commands::split(&dataset, &parses, &output)?);
        }
        Command::TrainTokenizer {
            input,
            vocab_size,
            rounds,
            output,
        } => {
            let output = output_path(&config, output, "vocab.txt");
            let size = vocab_size.unwrap_or(config.tokenizer.vocab_size);
            let rounds = rounds.unwrap_or(config.tokenizer.rounds);
            print!("{}", commands::train_tokenizer(&input, size, rounds, &output)?);
        }
        Command::Train {
            train,
            test,
            train_parses,
            test_parses,
            vocab,
            vocab_size,
            epochs,
            learning_rate,
            batch_size,
            no_rel_pos,
            mem_len,
            original,
            split,
        } => {
            let data = &mut config.data;
            data.train = train.or(data.train.take());
            data.test = test.or(data.test.take());
            data.train_parses = train_parses.or(data.train_parses.take());
            data.test_parses = test_parses.or(data.test_parses.take());
            if original || split {
                data.use_split_data = split;
            }
            config.tokenizer.vocab = vocab.or(config.tokenizer.vocab.take());
            set(&mut config.tokenizer.vocab_size, vocab_size);
            set(&mut config.training.epochs, epochs);
            set(&mut config.training.learning_rate, learning_rate);
            set(&mut config.training.batch_size, batch_size);
            set(&mut config.encoder.mem_len, mem_len);
            if no_rel_pos {
                config.encoder.rel_pos_enabled = false;
            }
            let outcome = commands::train(&config, threads_from_env()?)?;
            if let Some(last) = outcome.history.epochs.last() {
                println!("epochs\t{}", last.epoch);
                println!("final_loss\t{}", last.mean_loss);
                println!("final_train_accuracy\t{}", last.train_accuracy);
            }
            println!("checkpoint\t{}", outcome.checkpoint.display());
            if let Some(report) = outcome.report {
                print!("{report}");
            }
        }
        Command::Eval {
            checkpoint,
            vocab,
            dataset,
            format,
            output,
        } => {
            let format: ReportFormat = format.parse()?;
            let report = commands::eval(
                &checkpoint,
                vocab.as_deref(),
                &dataset,
                format,
                threads_from_env()?,
            )?;
            if let Some(path) = output {
                write_report(&path, &report)?;
            }
            print!("{report}");
        }
        Command::Predict { checkpoint, vocab, text } => {
            print!("{}", commands::predict(&checkpoint, vocab.as_deref(), &text)?);
        }
        Command::Gradcheck { step, tolerance } => {
            set(&mut config.gradcheck.step, step);
            set(&mut config.gradcheck.tolerance, tolerance);
            print!("{}", commands::gradcheck(&config)?);
        }
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn write_report(path: &Path, report: &str) -> Result<()> {
    use anyhow::Context;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, report).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let line = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
