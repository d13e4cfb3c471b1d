//! Complex-sentence splitting driven by dependency parses.
//!
//! A sentence is cut after the nearest comma preceding every coordinate
//! (`COO`) token whose parent is the sentence head (`HED`). Parses are read
//! from a ten-column CoNLL-U subset, of which ID, FORM, HEAD and DEPREL are
//! used.

use thiserror::Error;

use crate::corpus::{clean_text, LabeledRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("block {block}, line {line}: expected 10 columns, found {found}")]
    ColumnCount {
        block: usize,
        line: usize,
        found: usize,
    },
    #[error("block {block}, line {line}: non-numeric {column} {value:?}")]
    NotNumeric {
        block: usize,
        line: usize,
        column: &'static str,
        value: String,
    },
    #[error("block {block}, line {line}: expected token id {expected}, found {found}")]
    NonConsecutiveId {
        block: usize,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("block {block}, line {line}: head {head} is not a token of this sentence")]
    HeadOutOfRange { block: usize, line: usize, head: usize },
    #[error("block {block}, line {line}: token is its own head")]
    SelfHead { block: usize, line: usize },
    #[error("block {block}, line {line}: multiple HED")]
    MultipleHed { block: usize, line: usize },
    #[error("block {block}, line {line}: no HED token")]
    NoHed { block: usize, line: usize },
    #[error("block {block}, line {line}: multiple roots")]
    MultipleRoots { block: usize, line: usize },
    #[error("block {block}, line {line}: cyclic dependency")]
    Cyclic { block: usize, line: usize },
    #[error("parse tokens {tokens:?} do not match sentence {sentence:?}")]
    TokenMismatch { sentence: String, tokens: String },
    #[error("{records} records but {parses} parses")]
    Misaligned { records: usize, parses: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepToken {
    pub id: usize,
    pub form: String,
    pub head: usize,
    pub rel: String,
}

impl DepToken {
    pub fn new(id: usize, form: impl Into<String>, head: usize, rel: impl Into<String>) -> Self {
        DepToken {
            id,
            form: form.into(),
            head,
            rel: rel.into(),
        }
    }

    fn is_split_comma(&self) -> bool {
        self.rel == "WP" && (self.form == "，" || self.form == ",")
    }
}

/// A validated dependency tree for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepParse {
    tokens: Vec<DepToken>,
}

impl DepParse {
    /// Validates the tree invariants; errors report block 1.
    pub fn new(tokens: Vec<DepToken>) -> Result<Self, SplitError> {
        validate(&tokens, 1, &(1..=tokens.len()).collect::<Vec<_>>())?;
        Ok(DepParse { tokens })
    }

    pub fn tokens(&self) -> &[DepToken] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Option<&DepToken> {
        id.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    /// Concatenated token forms.
    pub fn text(&self) -> String {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    /// Copy with one token removed and ids/heads renumbered. Dependents of the
    /// removed token are reattached to its head.
    pub fn without_token(&self, id: usize) -> Result<DepParse, SplitError> {
        let removed = self.token(id).cloned();
        let Some(removed) = removed else {
            return Ok(self.clone());
        };
        let renumber = |old: usize| if old > id { old - 1 } else { old };
        let tokens = self
            .tokens
            .iter()
            .filter(|t| t.id != id)
            .map(|t| {
                let head = if t.head == id { removed.head } else { t.head };
                DepToken::new(renumber(t.id), t.form.clone(), renumber(head), t.rel.clone())
            })
            .collect();
        DepParse::new(tokens)
    }
}

fn validate(tokens: &[DepToken], block: usize, lines: &[usize]) -> Result<(), SplitError> {
    let n = tokens.len();
    let line_of = |idx: usize| lines.get(idx).copied().unwrap_or(0);
    let mut hed_seen = false;
    let mut root_seen = false;
    for (idx, tok) in tokens.iter().enumerate() {
        let line = line_of(idx);
        if tok.id != idx + 1 {
            return Err(SplitError::NonConsecutiveId {
                block,
                line,
                expected: idx + 1,
                found: tok.id,
            });
        }
        if tok.head > n {
            return Err(SplitError::HeadOutOfRange {
                block,
                line,
                head: tok.head,
            });
        }
        if tok.head == tok.id {
            return Err(SplitError::SelfHead { block, line });
        }
        if tok.rel == "HED" {
            if hed_seen {
                return Err(SplitError::MultipleHed { block, line });
            }
            hed_seen = true;
        }
        if tok.head == 0 {
            if root_seen {
                return Err(SplitError::MultipleRoots { block, line });
            }
            root_seen = true;
        }
    }
    if !hed_seen {
        return Err(SplitError::NoHed {
            block,
            line: line_of(0),
        });
    }
    // Walking up from any token must reach the root within n steps.
    for (idx, tok) in tokens.iter().enumerate() {
        let mut current = tok.head;
        let mut steps = 0;
        while current != 0 {
            steps += 1;
            if steps > n {
                return Err(SplitError::Cyclic {
                    block,
                    line: line_of(idx),
                });
            }
            current = tokens[current - 1].head;
        }
    }
    Ok(())
}

fn parse_number(
    value: &str,
    block: usize,
    line: usize,
    column: &'static str,
) -> Result<usize, SplitError> {
    value.parse().map_err(|_| SplitError::NotNumeric {
        block,
        line,
        column,
        value: value.to_string(),
    })
}

/// Reads blank-line separated sentence blocks. Block numbers in errors are
/// 1-based; line numbers refer to the input text.
pub fn parse_conllu(text: &str) -> Result<Vec<DepParse>, SplitError> {
    let mut parses = Vec::new();
    let mut tokens = Vec::new();
    let mut lines = Vec::new();
    let mut block = 1;

    let mut finish = |tokens: &mut Vec<DepToken>, lines: &mut Vec<usize>, block: &mut usize| {
        if tokens.is_empty() {
            return Ok(());
        }
        validate(tokens, *block, lines)?;
        parses.push(DepParse {
            tokens: std::mem::take(tokens),
        });
        lines.clear();
        *block += 1;
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            finish(&mut tokens, &mut lines, &mut block)?;
            continue;
        }
        if raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 10 {
            return Err(SplitError::ColumnCount {
                block,
                line,
                found: cols.len(),
            });
        }
        let id = parse_number(cols[0], block, line, "ID")?;
        let head = parse_number(cols[6], block, line, "HEAD")?;
        tokens.push(DepToken::new(id, cols[1], head, cols[7]));
        lines.push(line);
    }
    finish(&mut tokens, &mut lines, &mut block)?;
    Ok(parses)
}

/// Ids of the commas to cut after, ascending and unique.
pub fn find_split_points(parse: &DepParse) -> Vec<usize> {
    let tokens = parse.tokens();
    let mut points: Vec<usize> = tokens
        .iter()
        .filter(|t| t.rel == "COO")
        .filter(|t| parse.token(t.head).is_some_and(|h| h.rel == "HED"))
        .filter_map(|coo| {
            tokens[..coo.id - 1]
                .iter()
                .rev()
                .find(|t| t.is_split_comma())
                .map(|t| t.id)
        })
        .collect();
    points.sort_unstable();
    points.dedup();
    points
}

/// Cuts `sentence` right after each split-point comma.
pub fn split_complex(sentence: &str, parse: &DepParse) -> Result<Vec<String>, SplitError> {
    let token_text = clean_text(&parse.text());
    if clean_text(sentence) != token_text {
        return Err(SplitError::TokenMismatch {
            sentence: sentence.to_string(),
            tokens: parse.text(),
        });
    }
    let points = find_split_points(parse);
    if points.is_empty() {
        return Ok(vec![sentence.to_string()]);
    }

    // Cut offsets measured in non-whitespace characters.
    let mut cuts = Vec::with_capacity(points.len());
    let mut consumed = 0;
    let mut next = points.iter().peekable();
    for tok in parse.tokens() {
        consumed += clean_text(&tok.form).chars().count();
        if next.peek() == Some(&&tok.id) {
            next.next();
            cuts.push(consumed);
        }
    }

    let mut fragments = Vec::with_capacity(cuts.len() + 1);
    let mut current = String::new();
    let mut seen = 0;
    let mut cuts = cuts.into_iter().peekable();
    for c in sentence.chars() {
        current.push(c);
        if clean_text(c.encode_utf8(&mut [0; 4])).is_empty() {
            continue;
        }
        seen += 1;
        if cuts.peek() == Some(&seen) {
            cuts.next();
            fragments.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        if clean_text(&current).is_empty() {
            // trailing whitespace stays with the last fragment
            match fragments.last_mut() {
                Some(last) => last.push_str(&current),
                None => fragments.push(current),
            }
        } else {
            fragments.push(current);
        }
    }
    Ok(fragments)
}

/// Replaces each record by its fragments. Fragments inherit the parent label
/// and are numbered `<parent-id>.<k>` from 1.
pub fn split_corpus(
    records: &[LabeledRecord],
    parses: &[DepParse],
) -> Result<Vec<LabeledRecord>, SplitError> {
    if records.len() != parses.len() {
        return Err(SplitError::Misaligned {
            records: records.len(),
            parses: parses.len(),
        });
    }
    let mut out = Vec::with_capacity(records.len());
    for (record, parse) in records.iter().zip(parses) {
        for (k, fragment) in split_complex(&record.text, parse)?.into_iter().enumerate() {
            out.push(LabeledRecord::new(
                format!("{}.{}", record.id, k + 1),
                fragment,
                record.label,
            ));
        }
    }
    Ok(out)
}
