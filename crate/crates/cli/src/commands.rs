use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use epag_core::checkpoint::{self, Checkpoint};
use epag_core::classifier::{argmax_label, ClassifierConfig};
use epag_core::corpus::{self, LabeledRecord, MoveLabel};
use epag_core::eval::{self, ReportFormat};
use epag_core::model::{examples_from_records, Example, Model};
use epag_core::splitter::{parse_conllu, split_corpus};
use epag_core::tokenizer::{self, SubwordVocab};
use epag_core::training::{self, History};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Vec<LabeledRecord>> {
    corpus::load_dataset(path).with_context(|| format!("dataset {}", path.display()))
}

fn stats_lines(stats: &corpus::CorpusStats) -> String {
    format!(
        "sentence_count\t{}\nmax_len\t{}\nmean_len\t{:.2}\n",
        stats.sentence_count, stats.max_len, stats.mean_len
    )
}

/// One cleaned sentence per line from raw abstracts, one abstract per line.
/// Returns the stats summary for the written sentences.
pub fn preprocess(input: &Path, output: &Path) -> Result<String> {
    let raw = read(input)?;
    let sentences: Vec<String> = raw
        .lines()
        .flat_map(|abstract_text| corpus::segment_sentences(&corpus::clean_text(abstract_text)))
        .collect();
    let mut out = String::new();
    for s in &sentences {
        out.push_str(s);
        out.push('\n');
    }
    write(output, &out)?;
    Ok(stats_lines(&corpus::corpus_stats(&sentences)))
}

fn split_records(records: &[LabeledRecord], parses_path: &Path) -> Result<Vec<LabeledRecord>> {
    let parses = parse_conllu(&read(parses_path)?)
        .with_context(|| format!("parses {}", parses_path.display()))?;
    split_corpus(records, &parses).with_context(|| format!("splitting with {}", parses_path.display()))
}

pub fn split(dataset: &Path, parses: &Path, output: &Path) -> Result<String> {
    let records = load_dataset(dataset)?;
    let split = split_records(&records, parses)?;
    let mut buf = Vec::new();
    corpus::write_dataset(&mut buf, &split)?;
    write(output, &String::from_utf8(buf).expect("dataset text is UTF-8"))?;
    Ok(format!("input_records\t{}\noutput_records\t{}\n", records.len(), split.len()))
}

/// Texts from either a labeled dataset or unlabeled sentence lines.
fn training_texts(contents: &str) -> Vec<String> {
    contents
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| corpus::clean_text(l.split('\t').next().unwrap_or("")))
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn train_tokenizer(input: &Path, vocab_size: usize, rounds: usize, output: &Path) -> Result<String> {
    let texts = training_texts(&read(input)?);
    ensure!(!texts.is_empty(), "{}: no text to train on", input.display());
    let vocab = tokenizer::train_unigram(&texts, vocab_size, rounds)?;
    save_vocab(&vocab, output)?;
    Ok(format!("pieces\t{}\n", vocab.len()))
}

fn save_vocab(vocab: &SubwordVocab, path: &Path) -> Result<()> {
    write(path, &vocab.to_file_string())
}

fn load_vocab(path: &Path) -> Result<SubwordVocab> {
    tokenizer::load_vocab(path).with_context(|| format!("vocabulary {}", path.display()))
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: History,
    pub report: Option<String>,
}

fn history_tsv(history: &History) -> String {
    let mut out = String::from("epoch\tmean_loss\ttrain_accuracy\n");
    for e in &history.epochs {
        writeln!(out, "{}\t{}\t{}", e.epoch, e.mean_loss, e.train_accuracy).unwrap();
    }
    out
}

/// Runs the configured training and writes the effective config, the
/// vocabulary (if trained here), `history.tsv`, `model.epag` and, when a
/// test set is configured, `report.tsv` into the output directory.
pub fn train(config: &RunConfig, threads: usize) -> Result<TrainOutcome> {
    config.validate_train_inputs()?;
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write(&out_dir.join("config.toml"), &config.to_toml())?;

    let data = &config.data;
    let train_path = data.train.as_deref().expect("validated");
    let mut train_records = load_dataset(train_path)?;
    ensure!(!train_records.is_empty(), "{}: no records", train_path.display());

    let vocab = match &config.tokenizer.vocab {
        Some(path) => load_vocab(path)?,
        None => {
            let texts: Vec<&str> = train_records.iter().map(|r| r.text.as_str()).collect();
            let vocab = tokenizer::train_unigram(&texts, config.tokenizer.vocab_size, config.tokenizer.rounds)?;
            save_vocab(&vocab, &out_dir.join("vocab.txt"))?;
            vocab
        }
    };

    let mut test_records = match &data.test {
        Some(path) => Some(load_dataset(path)?),
        None => None,
    };
    if data.use_split_data {
        train_records = split_records(&train_records, data.train_parses.as_deref().expect("validated"))?;
        if let Some(test) = &mut test_records {
            *test = split_records(test, data.test_parses.as_deref().expect("validated"))?;
        }
    }

    let examples = examples_from_records(&vocab, &train_records);
    ensure!(!examples.is_empty(), "no trainable records after tokenization");
    info!("training on {} records, vocabulary {} pieces", examples.len(), vocab.len());

    let mut model = Model::with_configs(
        config.encoder_config(vocab.len()),
        config.classifier_config(),
        config.seed,
    )?;
    let history = training::train(&mut model, &examples, &config.train_config(threads))?;
    write(&out_dir.join("history.tsv"), &history_tsv(&history))?;

    let mut ckpt = Checkpoint::new(model);
    ckpt.vocab_hash = Some(checkpoint::vocab_hash(&vocab));
    ckpt.metadata = run_metadata(config, examples.len());
    let ckpt_path = out_dir.join("model.epag");
    checkpoint::save_checkpoint(&ckpt, &ckpt_path)?;

    let report = match &test_records {
        Some(test) => {
            // Score what a reader of the checkpoint would see.
            let stored = checkpoint::round_to_storage(&ckpt.model);
            let report = eval::evaluate_threaded(&stored, &vocab, test, threads)?;
            let text = eval::render_report(&report, ReportFormat::Tsv);
            write(&out_dir.join("report.tsv"), &text)?;
            Some(text)
        }
        None => None,
    };
    Ok(TrainOutcome {
        checkpoint: ckpt_path,
        history,
        report,
    })
}

fn run_metadata(config: &RunConfig, records: usize) -> BTreeMap<String, String> {
    let pairs = [
        ("seed", config.seed.to_string()),
        ("epochs", config.training.epochs.to_string()),
        ("rel_pos_enabled", config.encoder.rel_pos_enabled.to_string()),
        ("mem_len", config.encoder.mem_len.to_string()),
        ("use_split_data", config.data.use_split_data.to_string()),
        ("tokenizer_vocab_size", config.tokenizer.vocab_size.to_string()),
        ("train_records", records.to_string()),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Checkpoint plus the vocabulary it was trained with. Without an explicit
/// vocabulary, `vocab.txt` next to the checkpoint is used.
fn load_model(checkpoint_path: &Path, vocab_path: Option<&Path>) -> Result<(Model, SubwordVocab)> {
    let ckpt = checkpoint::load_checkpoint(checkpoint_path)?;
    let vocab_path = match vocab_path {
        Some(p) => p.to_path_buf(),
        None => checkpoint_path.with_file_name("vocab.txt"),
    };
    let vocab = load_vocab(&vocab_path)?;
    if let Some(expected) = &ckpt.vocab_hash {
        let found = checkpoint::vocab_hash(&vocab);
        if &found != expected {
            bail!(
                "vocabulary {} does not match the checkpoint (hash {found}, expected {expected})",
                vocab_path.display()
            );
        }
    }
    if vocab.len() > ckpt.model.encoder_config.vocab_size {
        bail!(
            "vocabulary has {} pieces but the model embeds {}",
            vocab.len(),
            ckpt.model.encoder_config.vocab_size
        );
    }
    Ok((ckpt.model, vocab))
}

pub fn eval(
    checkpoint_path: &Path,
    vocab_path: Option<&Path>,
    dataset: &Path,
    format: ReportFormat,
    threads: usize,
) -> Result<String> {
    let (model, vocab) = load_model(checkpoint_path, vocab_path)?;
    let records = load_dataset(dataset)?;
    let report = eval::evaluate_threaded(&model, &vocab, &records, threads)?;
    Ok(eval::render_report(&report, format))
}

/// Five `label<TAB>probability` lines, then `label<TAB>name` for the argmax.
pub fn predict(checkpoint_path: &Path, vocab_path: Option<&Path>, text: &str) -> Result<String> {
    let (model, vocab) = load_model(checkpoint_path, vocab_path)?;
    let cleaned = corpus::clean_text(text);
    ensure!(!cleaned.is_empty(), "text is empty after cleaning");
    let probs = model.predict(&vocab.encode(&cleaned).ids)?;
    let mut out = String::new();
    for label in MoveLabel::ALL {
        writeln!(out, "{}\t{:.4}", label.name(), probs[label.index()]).unwrap();
    }
    writeln!(out, "label\t{}", argmax_label(&probs).name()).unwrap();
    Ok(out)
}

/// Finite-difference check of every tensor of a small seeded model on
/// random records. Fails if any tensor exceeds the tolerance.
pub fn gradcheck(config: &RunConfig) -> Result<String> {
    let g = &config.gradcheck;
    ensure!(g.records >= 1 && g.max_len >= 1, "gradcheck.records and gradcheck.max_len must be positive");
    let first_id = tokenizer::RESERVED_PIECES.len();
    ensure!(g.vocab_size > first_id, "gradcheck.vocab_size must exceed {first_id}");
    let encoder = epag_core::encoder::EncoderConfig {
        vocab_size: g.vocab_size,
        d_model: g.d_model,
        n_heads: g.n_heads,
        n_layers: g.n_layers,
        d_ff: g.d_ff,
        k_rel: g.k_rel,
        mem_len: g.mem_len,
        max_seq_len: g.max_seq_len,
        rel_pos_enabled: true,
    };
    let classifier = ClassifierConfig::new(g.d_model, g.hidden);
    let model = Model::with_configs(encoder, classifier, config.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let data: Vec<Example> = (0..g.records)
        .map(|i| {
            let len = rng.gen_range(1..=g.max_len);
            let ids = (0..len).map(|_| rng.gen_range(first_id..g.vocab_size)).collect();
            let label = MoveLabel::from_index(rng.gen_range(0..MoveLabel::COUNT)).expect("in range");
            Example::new(format!("g{}", i + 1), ids, label)
        })
        .collect();

    let report = training::grad_check(&model, &data, g.step, g.tolerance)?;
    let mut out = String::new();
    for t in &report.tensors {
        let verdict = if t.passed { "pass" } else { "fail" };
        writeln!(out, "{}\t{}\t{:.3e}\t{verdict}", t.name, t.entries, t.max_relative_error).unwrap();
    }
    if !report.passed() {
        print!("{out}");
        bail!("gradient check failed for {}", report.failures().join(", "));
    }
    writeln!(out, "max_relative_error\t{:.3e}\nresult\tpass", report.max_relative_error()).unwrap();
    Ok(out)
}
