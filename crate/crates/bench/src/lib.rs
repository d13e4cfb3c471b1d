//! Benchmark fixtures: a deterministic synthetic corpus, a vocabulary
//! trained on it and a seeded model sized to match.

use epag_core::corpus::{LabeledRecord, MoveLabel};
use epag_core::encoder::EncoderConfig;
use epag_core::model::{examples_from_records, Example, Model};
use epag_core::tokenizer::{train_unigram, SubwordVocab};

const WORDS: &[&str] = &[
    "研究", "方法", "结果", "表明", "模型", "数据", "分析", "提出", "构建", "验证", "性能", "提升",
    "随着", "发展", "目的", "探讨", "采用", "综上", "未来", "启示", "的", "了", "和", "在",
];

/// `n` labeled sentences of 8 to 40 characters, the same on every call.
pub fn corpus(n: usize) -> Vec<LabeledRecord> {
    // Small LCG so the fixture needs nothing beyond the core crate.
    let mut state: u64 = 0x2545_f491_4f6c_dd1d;
    let mut next = move |bound: usize| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as usize) % bound
    };
    (0..n)
        .map(|i| {
            let words = 4 + next(17);
            let mut text: String = (0..words).map(|_| WORDS[next(WORDS.len())]).collect();
            text.push('。');
            let label = MoveLabel::from_index(i % MoveLabel::COUNT).expect("in range");
            LabeledRecord::new(format!("b{i}"), text, label)
        })
        .collect()
}

pub fn texts(records: &[LabeledRecord]) -> Vec<&str> {
    records.iter().map(|r| r.text.as_str()).collect()
}

pub fn vocab(records: &[LabeledRecord], size: usize) -> SubwordVocab {
    train_unigram(&texts(records), size, 2).expect("fixture vocabulary trains")
}

/// Model with the given width and segment length over `vocab`.
pub fn model(vocab: &SubwordVocab, d_model: usize, max_seq_len: usize) -> Model {
    let mut config = EncoderConfig::new(vocab.len());
    config.d_model = d_model;
    config.d_ff = 4 * d_model;
    config.max_seq_len = max_seq_len;
    Model::init(config, d_model, 7).expect("fixture config is valid")
}

pub fn examples(vocab: &SubwordVocab, records: &[LabeledRecord]) -> Vec<Example> {
    examples_from_records(vocab, records)
}
