//! Synthetic corpora shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use epag_core::corpus::{LabeledRecord, MoveLabel};
use rand::seq::SliceRandom;
use rand::Rng;

/// Characters shared by every class.
pub const FILLER: &[char] = &[
    '的', '了', '在', '和', '对', '中', '为', '与', '及', '等', '其', '该', '从', '以', '将', '于',
];

/// Two-character motifs that identify each class.
pub const MOTIFS: [[&str; 3]; MoveLabel::COUNT] = [
    ["随着", "近年", "日益"],
    ["旨在", "目的", "探讨"],
    ["采用", "构建", "模型"],
    ["结果", "表明", "提升"],
    ["综上", "启示", "未来"],
];

fn filler<R: Rng>(rng: &mut R, len: usize) -> String {
    (0..len).map(|_| *FILLER.choose(rng).unwrap()).collect()
}

/// Filler with one motif of `label` somewhere inside.
pub fn fragment<R: Rng>(rng: &mut R, label: MoveLabel) -> (String, String, String) {
    let motif = MOTIFS[label.index()].choose(rng).unwrap().to_string();
    let before = rng.gen_range(1..=4);
    let after = rng.gen_range(1..=4);
    (filler(rng, before), motif, filler(rng, after))
}

/// `per_class` sentences for each label, each ending in `。`.
pub fn motif_corpus<R: Rng>(rng: &mut R, per_class: usize) -> Vec<LabeledRecord> {
    let mut out = Vec::new();
    for label in MoveLabel::ALL {
        for _ in 0..per_class {
            let (a, m, b) = fragment(rng, label);
            let id = format!("s{}", out.len() + 1);
            out.push(LabeledRecord::new(id, format!("{a}{m}{b}。"), label));
        }
    }
    out.shuffle(rng);
    out
}

/// A complex sentence made of two single-move fragments.
#[derive(Debug, Clone)]
pub struct Compound {
    pub record: LabeledRecord,
    /// CoNLL-U block for the sentence.
    pub conllu: String,
    /// Fragment texts and their own labels, in order.
    pub fragments: [(String, MoveLabel); 2],
}

/// Token lines for one fragment: filler characters attach to the motif.
fn fragment_tokens(
    parts: &(String, String, String),
    first_id: usize,
    motif_head: usize,
    motif_rel: &str,
) -> (Vec<String>, usize) {
    let (before, motif, after) = parts;
    let motif_id = first_id + before.chars().count();
    let mut lines = Vec::new();
    let mut id = first_id;
    for c in before.chars() {
        lines.push(conllu_line(id, &c.to_string(), motif_id, "ATT"));
        id += 1;
    }
    lines.push(conllu_line(id, motif, motif_head, motif_rel));
    id += 1;
    for c in after.chars() {
        lines.push(conllu_line(id, &c.to_string(), motif_id, "VOB"));
        id += 1;
    }
    (lines, motif_id)
}

pub fn conllu_line(id: usize, form: &str, head: usize, rel: &str) -> String {
    format!("{id}\t{form}\t{form}\t_\t_\t_\t{head}\t{rel}\t_\t_")
}

/// Two fragments of different classes joined by `，`. The sentence carries
/// the first fragment's label; the parse makes the second fragment's motif
/// a COO child of the first fragment's HED motif.
pub fn compound<R: Rng>(rng: &mut R, id: usize, first: MoveLabel) -> Compound {
    let second = loop {
        let c = *MoveLabel::ALL.choose(rng).unwrap();
        if c != first {
            break c;
        }
    };
    let a = fragment(rng, first);
    let b = fragment(rng, second);
    let first_len = a.0.chars().count() + 1 + a.2.chars().count();
    let hed = 1 + a.0.chars().count();
    let (mut lines, _) = fragment_tokens(&a, 1, 0, "HED");
    let comma = first_len + 1;
    lines.push(conllu_line(comma, "，", hed, "WP"));
    let (rest, _) = fragment_tokens(&b, comma + 1, hed, "COO");
    lines.extend(rest);
    let end = lines.len() + 1;
    lines.push(conllu_line(end, "。", hed, "WP"));

    let left = format!("{}{}{}，", a.0, a.1, a.2);
    let right = format!("{}{}{}。", b.0, b.1, b.2);
    Compound {
        record: LabeledRecord::new(format!("c{id}"), format!("{left}{right}"), first),
        conllu: lines.join("\n") + "\n",
        fragments: [(left, first), (right, second)],
    }
}

/// `per_class` compound sentences per first-fragment label, shuffled.
pub fn compound_corpus<R: Rng>(rng: &mut R, per_class: usize) -> Vec<Compound> {
    let mut out = Vec::new();
    for label in MoveLabel::ALL {
        for _ in 0..per_class {
            let c = compound(rng, out.len() + 1, label);
            out.push(c);
        }
    }
    out.shuffle(rng);
    out
}

/// Random valid parse of `n` tokens: a random tree rooted at a HED token,
/// with forms drawn from characters and several kinds of punctuation.
pub fn random_parse<R: Rng>(rng: &mut R, n: usize) -> (String, String) {
    const FORMS: &[&str] = &["提出", "方法", "，", ",", "、", "；", "验证", "性能", "模型", "数据", "a", "。"];
    const RELS: &[&str] = &["SBV", "VOB", "ATT", "COO", "COO", "WP", "POB"];
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0usize; n + 1];
    for k in 1..n {
        heads[order[k]] = order[rng.gen_range(0..k)];
    }
    let mut text = String::new();
    let mut lines = Vec::new();
    for id in 1..=n {
        let form = *FORMS.choose(rng).unwrap();
        let rel = if heads[id] == 0 {
            "HED"
        } else if matches!(form, "，" | ",") {
            "WP"
        } else {
            *RELS.choose(rng).unwrap()
        };
        text.push_str(form);
        lines.push(conllu_line(id, form, heads[id], rel));
    }
    (text, lines.join("\n") + "\n")
}
