//! Unigram language-model subword vocabulary.
//!
//! Training seeds the inventory with every character plus frequent
//! substrings, then alternates EM re-estimation of piece probabilities with
//! pruning of the least useful pieces. Characters are never pruned, so any
//! text drawn from the training alphabet encodes without `<unk>`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
/// Relative difference below which two segmentation scores tie.
const SCORE_TIE_EPS: f64 = 1e-12;

pub const RESERVED_PIECES: [&str; 4] = ["<pad>", "<unk>", "<cls>", "<sep>"];

const VOCAB_HEADER: &str = "EPAG-VOCAB v1";
const PROB_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocab_size {requested} is below the floor of {required} (distinct characters + 4 reserved)")]
    BelowCharacterFloor { requested: usize, required: usize },
    #[error("vocab_size {requested} is unreachable: only {available} candidate pieces (including reserved)")]
    TooFewCandidates { requested: usize, available: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("unsupported vocab header {0:?}")]
    BadHeader(String),
    #[error("duplicate piece {piece:?} at line {line}")]
    DuplicatePiece { piece: String, line: usize },
    #[error("malformed vocab line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("token id {0} out of range")]
    IdOutOfRange(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Piece inventory with log-probabilities. Ids 0..4 are reserved.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordVocab {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    max_piece_chars: usize,
    unk_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub source: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Viterbi cell: best segmentation of a suffix.
#[derive(Clone, Copy)]
struct Cell {
    score: f64,
    count: usize,
    id: usize,
    len: usize,
}

impl SubwordVocab {
    /// Builds a vocab from learned pieces; the reserved entries are prepended.
    pub fn from_learned(learned: Vec<(String, f64)>) -> Result<Self, VocabError> {
        let mut pieces: Vec<(String, f64)> = RESERVED_PIECES
            .iter()
            .map(|p| (p.to_string(), 0.0))
            .collect();
        pieces.extend(learned);
        Self::from_pieces(pieces)
    }

    fn from_pieces(pieces: Vec<(String, f64)>) -> Result<Self, VocabError> {
        let mut index = HashMap::with_capacity(pieces.len());
        for (id, (piece, log_prob)) in pieces.iter().enumerate() {
            let line = id + 2;
            if id < RESERVED_PIECES.len() && piece != RESERVED_PIECES[id] {
                return Err(VocabError::Malformed {
                    line,
                    reason: format!("expected reserved piece {}", RESERVED_PIECES[id]),
                });
            }
            if piece.is_empty() {
                return Err(VocabError::Malformed {
                    line,
                    reason: "empty piece".into(),
                });
            }
            if !log_prob.is_finite() || *log_prob > 0.0 {
                return Err(VocabError::Malformed {
                    line,
                    reason: format!("log_prob {log_prob} is not finite and <= 0"),
                });
            }
            if index.insert(piece.clone(), id).is_some() {
                return Err(VocabError::DuplicatePiece {
                    piece: piece.clone(),
                    line,
                });
            }
        }
        let learned = &pieces[RESERVED_PIECES.len()..];
        let max_piece_chars = learned
            .iter()
            .map(|(p, _)| p.chars().count())
            .max()
            .unwrap_or(1);
        let min_score = learned
            .iter()
            .map(|(_, lp)| *lp)
            .fold(0.0_f64, f64::min);
        Ok(SubwordVocab {
            pieces,
            index,
            max_piece_chars,
            unk_score: min_score - 10.0,
        })
    }

    /// Total entries, reserved ids included.
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn piece(&self, id: usize) -> Option<&str> {
        self.pieces.get(id).map(|(p, _)| p.as_str())
    }

    pub fn log_prob(&self, id: usize) -> Option<f64> {
        self.pieces.get(id).map(|(_, lp)| *lp)
    }

    /// Learned (non-reserved) piece id for `piece`.
    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index
            .get(piece)
            .copied()
            .filter(|&id| id >= RESERVED_PIECES.len())
    }

    pub fn learned_pieces(&self) -> &[(String, f64)] {
        &self.pieces[RESERVED_PIECES.len()..]
    }

    /// Viterbi segmentation. Ties prefer fewer pieces, then the
    /// lexicographically smallest first piece.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let offsets: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let n = offsets.len() - 1;

        // best[i]: optimal segmentation of the suffix starting at char i.
        let mut best: Vec<Option<Cell>> = vec![None; n + 1];
        best[n] = Some(Cell {
            score: 0.0,
            count: 0,
            id: PAD_ID,
            len: 0,
        });
        for start in (0..n).rev() {
            let mut chosen: Option<Cell> = None;
            let max_len = self.max_piece_chars.min(n - start);
            for len in 1..=max_len {
                let piece = &text[offsets[start]..offsets[start + len]];
                let Some(id) = self.id(piece) else { continue };
                let Some(rest) = best[start + len] else { continue };
                let candidate = Cell {
                    score: self.pieces[id].1 + rest.score,
                    count: rest.count + 1,
                    id,
                    len,
                };
                if chosen.is_none_or(|c| self.prefer(&candidate, &c)) {
                    chosen = Some(candidate);
                }
            }
            if chosen.is_none() {
                // Unknown character: it cannot be covered by any piece.
                let rest = best[start + 1].expect("suffix always segmentable");
                chosen = Some(Cell {
                    score: self.unk_score + rest.score,
                    count: rest.count + 1,
                    id: UNK_ID,
                    len: 1,
                });
            }
            best[start] = chosen;
        }

        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < n {
            let cell = best[pos].expect("filled above");
            ids.push(cell.id);
            pos += cell.len;
        }
        TokenSequence {
            positions: (0..ids.len()).collect(),
            ids,
            source: text.to_string(),
        }
    }

    fn prefer(&self, a: &Cell, b: &Cell) -> bool {
        // Equal-valued sums can differ in the last bits depending on the
        // order of addition; those count as ties.
        let slack = SCORE_TIE_EPS * (1.0 + a.score.abs().max(b.score.abs()));
        if (a.score - b.score).abs() > slack {
            return a.score > b.score;
        }
        if a.count != b.count {
            return a.count < b.count;
        }
        self.pieces[a.id].0 < self.pieces[b.id].0
    }

    /// Sum of piece log-probabilities, with the `<unk>` penalty for unknowns.
    pub fn score(&self, ids: &[usize]) -> f64 {
        ids.iter()
            .map(|&id| {
                if id == UNK_ID {
                    self.unk_score
                } else {
                    self.pieces[id].1
                }
            })
            .sum()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in ids {
            match id {
                UNK_ID => out.push('\u{FFFD}'),
                PAD_ID | CLS_ID | SEP_ID => {}
                _ => out.push_str(self.piece(id).ok_or(VocabError::IdOutOfRange(id))?),
            }
        }
        Ok(out)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::from(VOCAB_HEADER);
        out.push('\n');
        for (piece, log_prob) in &self.pieces {
            out.push_str(piece);
            out.push('\t');
            out.push_str(&log_prob.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_file_str(contents: &str) -> Result<Self, VocabError> {
        let mut lines = contents.lines();
        let header = lines.next().unwrap_or_default();
        if header != VOCAB_HEADER {
            return Err(VocabError::BadHeader(header.to_string()));
        }
        let mut pieces = Vec::new();
        let mut seen = BTreeSet::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let (piece, log_prob) = line.rsplit_once('\t').ok_or(VocabError::Malformed {
                line: line_no,
                reason: "missing tab".into(),
            })?;
            let log_prob: f64 = log_prob.parse().map_err(|_| VocabError::Malformed {
                line: line_no,
                reason: format!("bad log_prob {log_prob:?}"),
            })?;
            if !seen.insert(piece.to_string()) {
                return Err(VocabError::DuplicatePiece {
                    piece: piece.to_string(),
                    line: line_no,
                });
            }
            pieces.push((piece.to_string(), log_prob));
        }
        if pieces.len() < RESERVED_PIECES.len() {
            return Err(VocabError::Malformed {
                line: pieces.len() + 2,
                reason: "missing reserved pieces".into(),
            });
        }
        Self::from_pieces(pieces)
    }
}

pub fn save_vocab(vocab: &SubwordVocab, path: impl AsRef<Path>) -> Result<(), VocabError> {
    fs::write(path, vocab.to_file_string())?;
    Ok(())
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<SubwordVocab, VocabError> {
    SubwordVocab::from_file_str(&fs::read_to_string(path)?)
}

/// Unigram trainer settings. `em_iterations` EM steps run before every
/// pruning step.
#[derive(Debug, Clone)]
pub struct UnigramTrainer {
    pub vocab_size: usize,
    pub em_iterations: usize,
    pub max_piece_chars: usize,
    pub min_frequency: u64,
    pub prune_fraction: f64,
}

impl UnigramTrainer {
    pub fn new(vocab_size: usize, em_iterations: usize) -> Self {
        UnigramTrainer {
            vocab_size,
            em_iterations: em_iterations.max(1),
            max_piece_chars: 8,
            min_frequency: 3,
            prune_fraction: 0.2,
        }
    }

    pub fn train<S: AsRef<str>>(&self, corpus: &[S]) -> Result<SubwordVocab, VocabError> {
        self.train_with_trace(corpus).map(|(vocab, _)| vocab)
    }

    /// Also returns the corpus log-likelihood after every EM iteration,
    /// grouped by pruning round.
    pub fn train_with_trace<S: AsRef<str>>(
        &self,
        corpus: &[S],
    ) -> Result<(SubwordVocab, Vec<Vec<f64>>), VocabError> {
        let mut sentences: BTreeMap<&str, u64> = BTreeMap::new();
        for text in corpus {
            let text = text.as_ref();
            if !text.is_empty() {
                *sentences.entry(text).or_default() += 1;
            }
        }
        if sentences.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let sentences: Vec<(&str, u64)> = sentences.into_iter().collect();

        let mut char_freq: BTreeMap<String, u64> = BTreeMap::new();
        let mut substr_freq: HashMap<&str, u64> = HashMap::new();
        for &(text, count) in &sentences {
            let offsets = char_offsets(text);
            let n = offsets.len() - 1;
            for start in 0..n {
                *char_freq
                    .entry(text[offsets[start]..offsets[start + 1]].to_string())
                    .or_default() += count;
                for len in 2..=self.max_piece_chars.min(n - start) {
                    *substr_freq
                        .entry(&text[offsets[start]..offsets[start + len]])
                        .or_default() += count;
                }
            }
        }

        let required = char_freq.len() + RESERVED_PIECES.len();
        if self.vocab_size < required {
            return Err(VocabError::BelowCharacterFloor {
                requested: self.vocab_size,
                required,
            });
        }

        let mut multi: Vec<(&str, u64)> = substr_freq
            .into_iter()
            .filter(|(piece, freq)| *freq >= self.min_frequency && !RESERVED_PIECES.contains(piece))
            .collect();
        multi.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let target = self.vocab_size - RESERVED_PIECES.len();
        let available = char_freq.len() + multi.len();
        if available < target {
            return Err(VocabError::TooFewCandidates {
                requested: self.vocab_size,
                available: available + RESERVED_PIECES.len(),
            });
        }

        let n_chars = char_freq.len();
        let mut model = Lattice {
            pieces: char_freq
                .iter()
                .map(|(c, f)| (c.clone(), *f as f64))
                .chain(multi.iter().map(|(p, f)| (p.to_string(), *f as f64)))
                .collect(),
            index: HashMap::new(),
            max_chars: self.max_piece_chars,
        };
        let total: f64 = model.pieces.iter().map(|(_, f)| f).sum();
        for entry in &mut model.pieces {
            entry.1 = (entry.1 / total).ln();
        }
        model.reindex();

        let mut trace = Vec::new();
        loop {
            let mut round = Vec::with_capacity(self.em_iterations);
            let mut expected = Vec::new();
            for _ in 0..self.em_iterations {
                let (counts, log_likelihood) = model.expectation(&sentences);
                model.maximize(&counts);
                round.push(log_likelihood);
                expected = counts;
            }
            trace.push(round);

            let current = model.pieces.len();
            if current == target {
                break;
            }
            let prunable = current - n_chars;
            let quota = ((prunable as f64 * self.prune_fraction).ceil() as usize)
                .max(1)
                .min(current - target);
            model.prune(n_chars, &expected, quota);
        }

        // Floor so every char stays encodable with a finite score.
        let floored: Vec<f64> = model
            .pieces
            .iter()
            .map(|(_, lp)| lp.exp().max(PROB_FLOOR))
            .collect();
        let norm: f64 = floored.iter().sum();
        let learned = model
            .pieces
            .into_iter()
            .zip(floored)
            .map(|((piece, _), p)| (piece, (p / norm).ln().min(0.0)))
            .collect();
        Ok((SubwordVocab::from_learned(learned)?, trace))
    }
}

/// Trains with the default substring length, frequency threshold and prune
/// fraction. `rounds` is the number of EM iterations per pruning round.
pub fn train_unigram<S: AsRef<str>>(
    corpus: &[S],
    vocab_size: usize,
    rounds: usize,
) -> Result<SubwordVocab, VocabError> {
    UnigramTrainer::new(vocab_size, rounds).train(corpus)
}

fn char_offsets(text: &str) -> Vec<usize> {
    text.char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Candidate pieces with log-probabilities during training.
struct Lattice {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    max_chars: usize,
}

impl Lattice {
    fn reindex(&mut self) {
        self.index = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (p.clone(), i))
            .collect();
    }

    /// Expected piece counts and the corpus log-likelihood under the current
    /// probabilities (forward-backward in log space).
    fn expectation(&self, sentences: &[(&str, u64)]) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; self.pieces.len()];
        let mut log_likelihood = 0.0;
        for &(text, weight) in sentences {
            let offsets = char_offsets(text);
            let n = offsets.len() - 1;
            let mut edges: Vec<(usize, usize, usize)> = Vec::new();
            for start in 0..n {
                for len in 1..=self.max_chars.min(n - start) {
                    if let Some(&id) = self.index.get(&text[offsets[start]..offsets[start + len]]) {
                        if self.pieces[id].1 > f64::NEG_INFINITY {
                            edges.push((start, start + len, id));
                        }
                    }
                }
            }
            let mut alpha = vec![f64::NEG_INFINITY; n + 1];
            alpha[0] = 0.0;
            // edges are sorted by start, so every alpha[start] is final when used
            for &(s, e, id) in &edges {
                alpha[e] = log_add(alpha[e], alpha[s] + self.pieces[id].1);
            }
            let mut beta = vec![f64::NEG_INFINITY; n + 1];
            beta[n] = 0.0;
            let mut by_end = edges.clone();
            by_end.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));
            for &(s, e, id) in &by_end {
                beta[s] = log_add(beta[s], beta[e] + self.pieces[id].1);
            }
            let z = alpha[n];
            log_likelihood += weight as f64 * z;
            for &(s, e, id) in &edges {
                let posterior = (alpha[s] + self.pieces[id].1 + beta[e] - z).exp();
                counts[id] += weight as f64 * posterior;
            }
        }
        (counts, log_likelihood)
    }

    fn maximize(&mut self, counts: &[f64]) {
        let total: f64 = counts.iter().sum();
        for (entry, &count) in self.pieces.iter_mut().zip(counts) {
            entry.1 = if count > 0.0 {
                (count / total).ln()
            } else {
                f64::NEG_INFINITY
            };
        }
    }

    /// Best score of `piece` segmented without using piece `skip`.
    fn alternative_score(&self, piece: &str, skip: usize) -> f64 {
        let offsets = char_offsets(piece);
        let n = offsets.len() - 1;
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        best[0] = 0.0;
        for start in 0..n {
            if best[start] == f64::NEG_INFINITY {
                continue;
            }
            for len in 1..=self.max_chars.min(n - start) {
                if let Some(&id) = self.index.get(&piece[offsets[start]..offsets[start + len]]) {
                    if id != skip {
                        let score = best[start] + self.pieces[id].1;
                        if score > best[start + len] {
                            best[start + len] = score;
                        }
                    }
                }
            }
        }
        best[n]
    }

    /// Drops the `quota` multi-character pieces whose removal costs the
    /// least likelihood. Pieces before `n_chars` are characters.
    fn prune(&mut self, n_chars: usize, expected: &[f64], quota: usize) {
        let mut utilities: Vec<(f64, usize)> = (n_chars..self.pieces.len())
            .map(|id| {
                let freq = expected.get(id).copied().unwrap_or(0.0);
                let utility = if freq > 0.0 {
                    let alt = self.alternative_score(&self.pieces[id].0, id);
                    freq * (self.pieces[id].1 - alt)
                } else {
                    0.0
                };
                (utility, id)
            })
            .collect();
        utilities.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.pieces[b.1].0.chars().count().cmp(&self.pieces[a.1].0.chars().count()))
                .then_with(|| self.pieces[a.1].0.cmp(&self.pieces[b.1].0))
        });
        let doomed: BTreeSet<usize> = utilities.iter().take(quota).map(|&(_, id)| id).collect();
        let kept: Vec<(String, f64)> = std::mem::take(&mut self.pieces)
            .into_iter()
            .enumerate()
            .filter(|(id, _)| !doomed.contains(id))
            .map(|(_, entry)| entry)
            .collect();
        let norm = kept
            .iter()
            .map(|(_, lp)| *lp)
            .fold(f64::NEG_INFINITY, log_add);
        self.pieces = kept
            .into_iter()
            .map(|(p, lp)| (p, if norm.is_finite() { lp - norm } else { lp }))
            .collect();
        self.reindex();
    }
}
