//! Library pipeline end to end: synthetic corpus, split, tokenize, train,
//! checkpoint, evaluate.

mod support;

use epag_core::checkpoint::{load_checkpoint, round_to_storage, save_checkpoint, vocab_hash, Checkpoint};
use epag_core::classifier::ClassifierConfig;
use epag_core::corpus::{parse_dataset, write_dataset, LabeledRecord, MoveLabel};
use epag_core::encoder::EncoderConfig;
use epag_core::eval::{evaluate, evaluate_threaded, report_tsv, EvalError};
use epag_core::model::{examples_from_records, Model};
use epag_core::splitter::{parse_conllu, split_corpus};
use epag_core::tokenizer::train_unigram;
use epag_core::training::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_encoder(vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        k_rel: 4,
        mem_len: 8,
        max_seq_len: 16,
        rel_pos_enabled: true,
    }
}

#[test]
fn zero_model_scores_all_background_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let records: Vec<LabeledRecord> = support::motif_corpus(&mut rng, 4)
        .into_iter()
        .map(|r| LabeledRecord::new(r.id, r.text, MoveLabel::Background))
        .collect();
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let vocab = train_unigram(&texts, 46, 2).unwrap();
    let enc = small_encoder(vocab.len());
    let model = Model::zeroed(enc, ClassifierConfig::new(16, 4)).unwrap();

    let report = evaluate(&model, &vocab, &records).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.total, records.len() as u64);
    assert_eq!(report, evaluate(&model, &vocab, &records).unwrap());
    assert_eq!(report, evaluate_threaded(&model, &vocab, &records, 3).unwrap());
    assert!(matches!(evaluate(&model, &vocab, &[]), Err(EvalError::Empty)));
}

#[test]
fn split_train_save_load_evaluate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let compounds = support::compound_corpus(&mut rng, 6);
    let records: Vec<LabeledRecord> = compounds.iter().map(|c| c.record.clone()).collect();

    // Dataset text survives the TSV round trip.
    let mut tsv = Vec::new();
    write_dataset(&mut tsv, &records).unwrap();
    let reread = parse_dataset(std::str::from_utf8(&tsv).unwrap()).unwrap();
    assert_eq!(reread.len(), records.len());
    assert!(reread.iter().zip(&records).all(|(a, b)| a.text == b.text && a.label == b.label));

    let conllu: String = compounds.iter().map(|c| c.conllu.clone() + "\n").collect();
    let parses = parse_conllu(&conllu).unwrap();
    let split = split_corpus(&records, &parses).unwrap();
    assert_eq!(split.len(), 2 * records.len());
    for (c, pair) in compounds.iter().zip(split.chunks(2)) {
        assert_eq!(pair[0].text, c.fragments[0].0);
        assert_eq!(pair[1].text, c.fragments[1].0);
        assert!(pair.iter().all(|r| r.label == c.record.label));
        assert_eq!(pair[0].id, format!("{}.1", c.record.id));
    }

    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let vocab = train_unigram(&texts, 60, 3).unwrap();
    let examples = examples_from_records(&vocab, &split);
    let mut model = Model::init(small_encoder(vocab.len()), 8, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 3e-3,
        seed: 2,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &examples, &cfg).unwrap();
    assert_eq!(history.epochs.len(), 3);
    assert!(history.epochs.iter().all(|e| e.mean_loss.is_finite()));
    assert!(history.epochs[2].mean_loss < history.epochs[0].mean_loss);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.epag");
    let mut ckpt = Checkpoint::new(model.clone());
    ckpt.vocab_hash = Some(vocab_hash(&vocab));
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.model, round_to_storage(&model));
    assert_eq!(loaded.vocab_hash.as_deref(), Some(vocab_hash(&vocab).as_str()));

    let first = report_tsv(&evaluate(&loaded.model, &vocab, &split).unwrap());
    let second = report_tsv(&evaluate(&loaded.model, &vocab, &split).unwrap());
    assert_eq!(first, second);
    assert!(first.starts_with("accuracy\t"));
}
