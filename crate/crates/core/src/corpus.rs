//! Abstract corpus ingestion: cleaning, sentence segmentation, the labeled
//! TSV format, train/test partitioning and length statistics.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing tab separator at line {line}")]
    MissingTab { line: usize },
    #[error("non-integer label {value:?} at line {line}")]
    BadLabel { line: usize, value: String },
    #[error("label out of range at line {line}")]
    LabelOutOfRange { line: usize },
    #[error("split ratio {0} outside (0, 1)")]
    BadRatio(f64),
    #[error("cannot split an empty record list")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Rhetorical move of a sentence. The integer encoding follows declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveLabel {
    Background,
    Purpose,
    Method,
    Result,
    Conclusion,
}

impl MoveLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [MoveLabel; 5] = [
        MoveLabel::Background,
        MoveLabel::Purpose,
        MoveLabel::Method,
        MoveLabel::Result,
        MoveLabel::Conclusion,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<MoveLabel> {
        MoveLabel::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveLabel::Background => "background",
            MoveLabel::Purpose => "purpose",
            MoveLabel::Method => "method",
            MoveLabel::Result => "result",
            MoveLabel::Conclusion => "conclusion",
        }
    }
}

impl fmt::Display for MoveLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MoveLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MoveLabel::ALL
            .into_iter()
            .find(|label| label.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown move label {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRecord {
    pub id: String,
    pub text: String,
    pub label: MoveLabel,
}

impl LabeledRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: MoveLabel) -> Self {
        LabeledRecord {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub max_len: usize,
    pub mean_len: f64,
}

fn is_removable(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\r' | '\n' | '\u{3000}')
}

/// Removes ASCII space, tab, CR, LF and the ideographic space.
pub fn clean_text(raw: &str) -> String {
    raw.chars().filter(|&c| !is_removable(c)).collect()
}

const SENTENCE_DELIMITERS: [char; 6] = ['。', '！', '？', '.', '!', '?'];

/// Splits after every sentence-final delimiter, keeping the delimiter with
/// its sentence. Concatenating the output gives back the input.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        current.push(c);
        if SENTENCE_DELIMITERS.contains(&c) {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// Parses the labeled TSV format. Record ids are the 1-based line numbers.
pub fn parse_dataset(contents: &str) -> Result<Vec<LabeledRecord>, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (text, label) = line
            .split_once('\t')
            .ok_or(CorpusError::MissingTab { line: line_no })?;
        let label = label.trim_end_matches('\r');
        let value: i64 = label.parse().map_err(|_| CorpusError::BadLabel {
            line: line_no,
            value: label.to_string(),
        })?;
        let label = usize::try_from(value)
            .ok()
            .and_then(MoveLabel::from_index)
            .ok_or(CorpusError::LabelOutOfRange { line: line_no })?;
        let text = clean_text(text);
        if text.is_empty() {
            warn!("dropping record at line {line_no}: empty after cleaning");
            continue;
        }
        records.push(LabeledRecord::new(line_no.to_string(), text, label));
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledRecord>, CorpusError> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn write_dataset<W: Write>(mut out: W, records: &[LabeledRecord]) -> io::Result<()> {
    for record in records {
        writeln!(out, "{}\t{}", record.text, record.label.index())?;
    }
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[LabeledRecord]) -> io::Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, records)?;
    fs::write(path, buf)
}

/// Seeded shuffle, then the first `floor(ratio * n)` records go to train.
pub fn split_train_test(
    records: &[LabeledRecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<LabeledRecord>, Vec<LabeledRecord>), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * records.len() as f64).floor() as usize;
    let test = shuffled.split_off(n_train);
    Ok((shuffled, test))
}

/// Character-count statistics over record texts.
pub fn corpus_stats<S: AsRef<str>>(texts: &[S]) -> CorpusStats {
    if texts.is_empty() {
        return CorpusStats {
            sentence_count: 0,
            max_len: 0,
            mean_len: 0.0,
        };
    }
    let lens: Vec<usize> = texts.iter().map(|t| t.as_ref().chars().count()).collect();
    CorpusStats {
        sentence_count: lens.len(),
        max_len: lens.iter().copied().max().unwrap_or(0),
        mean_len: lens.iter().sum::<usize>() as f64 / lens.len() as f64,
    }
}

pub fn record_stats(records: &[LabeledRecord]) -> CorpusStats {
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    corpus_stats(&texts)
}
