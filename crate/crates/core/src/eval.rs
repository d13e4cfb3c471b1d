//! Confusion matrices, precision/recall/F1 and report files.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::argmax_label;
use crate::corpus::{LabeledRecord, MoveLabel};
use crate::model::{Model, ModelError};
use crate::tokenizer::SubwordVocab;
use crate::training::map_ordered;

const K: usize = MoveLabel::COUNT;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("record {id}: {source}")]
    Record { id: String, source: ModelError },
    #[error("unknown report format {0:?} (expected tsv or json)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        self.counts[gold].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        self.counts.iter().map(|row| row[pred]).sum()
    }

    pub fn get(&self, gold: MoveLabel, pred: MoveLabel) -> u64 {
        self.counts[gold.index()][pred.index()]
    }
}

pub fn confusion(preds: &[MoveLabel], golds: &[MoveLabel]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, g) in preds.iter().zip(golds) {
        cm.counts[g.index()][p.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: MoveLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences.
    pub support: u64,
    pub predicted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-class and macro metrics. Classes that never occur as gold or
/// prediction are left out of the macro averages.
pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let mut classes = Vec::with_capacity(K);
    let (mut sum_p, mut sum_r, mut sum_f, mut present) = (0.0, 0.0, 0.0, 0usize);
    for label in MoveLabel::ALL {
        let c = label.index();
        let hit = cm.counts[c][c] as f64;
        let support = cm.row_sum(c);
        let predicted = cm.col_sum(c);
        let precision = ratio(hit, predicted as f64);
        let recall = ratio(hit, support as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        if support + predicted > 0 {
            sum_p += precision;
            sum_r += recall;
            sum_f += f1;
            present += 1;
        }
        classes.push(ClassMetrics {
            label,
            precision,
            recall,
            f1,
            support,
            predicted,
        });
    }
    let n = present as f64;
    MetricsReport {
        classes,
        macro_precision: ratio(sum_p, n),
        macro_recall: ratio(sum_r, n),
        macro_f1: ratio(sum_f, n),
        accuracy: ratio(cm.trace() as f64, cm.total() as f64),
        total: cm.total(),
        confusion: *cm,
    }
}

/// Predicted labels for every record, in order.
pub fn predict_labels(
    model: &Model,
    vocab: &SubwordVocab,
    records: &[LabeledRecord],
    threads: usize,
) -> Result<Vec<MoveLabel>, EvalError> {
    map_ordered(records, threads, |r| {
        model
            .predict(&vocab.encode(&r.text).ids)
            .map(|p| argmax_label(&p))
            .map_err(|source| EvalError::Record {
                id: r.id.clone(),
                source,
            })
    })
    .into_iter()
    .collect()
}

pub fn evaluate(
    model: &Model,
    vocab: &SubwordVocab,
    records: &[LabeledRecord],
) -> Result<MetricsReport, EvalError> {
    evaluate_threaded(model, vocab, records, 1)
}

pub fn evaluate_threaded(
    model: &Model,
    vocab: &SubwordVocab,
    records: &[LabeledRecord],
    threads: usize,
) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let preds = predict_labels(model, vocab, records, threads)?;
    let golds: Vec<MoveLabel> = records.iter().map(|r| r.label).collect();
    Ok(metrics(&confusion(&preds, &golds)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "json" => Ok(ReportFormat::Json),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

fn percent(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// `metric\tvalue` lines; rates as percentages with two decimals.
pub fn report_tsv(report: &MetricsReport) -> String {
    let mut out = String::new();
    let mut line = |name: &str, value: String| {
        writeln!(out, "{name}\t{value}").expect("writing to a String");
    };
    line("accuracy", percent(report.accuracy));
    line("macro_precision", percent(report.macro_precision));
    line("macro_recall", percent(report.macro_recall));
    line("macro_f1", percent(report.macro_f1));
    for c in &report.classes {
        let name = c.label.name();
        line(&format!("{name}_precision"), percent(c.precision));
        line(&format!("{name}_recall"), percent(c.recall));
        line(&format!("{name}_f1"), percent(c.f1));
        line(&format!("{name}_support"), c.support.to_string());
    }
    line("total", report.total.to_string());
    out
}

pub fn report_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Tsv => report_tsv(report),
        ReportFormat::Json => report_json(report),
    }
}

pub fn emit_report(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    std::fs::write(path, render_report(report, format)).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use MoveLabel::*;

    fn labels(ids: &[usize]) -> Vec<MoveLabel> {
        ids.iter().map(|&i| MoveLabel::from_index(i).unwrap()).collect()
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&labels(&[0, 0, 1]), &labels(&[0, 1, 1])).unwrap();
        assert_eq!(cm.get(Background, Background), 1);
        assert_eq!(cm.get(Purpose, Background), 1);
        assert_eq!(cm.get(Purpose, Purpose), 1);
        assert_eq!(cm.total(), 3);

        let same = labels(&[0, 3, 4, 4, 2]);
        let cm = confusion(&same, &same).unwrap();
        assert_eq!(cm.trace(), cm.total());

        assert!(matches!(confusion(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(
            confusion(&[Background], &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn worked_example() {
        let cm = confusion(&labels(&[0, 0, 1]), &labels(&[0, 1, 1])).unwrap();
        let r = metrics(&cm);
        let third = 1.0 / 3.0;
        assert!((r.classes[0].precision - 0.5).abs() < 1e-15);
        assert_eq!(r.classes[0].recall, 1.0);
        assert!((r.classes[0].f1 - 2.0 * third).abs() < 1e-15);
        assert_eq!(r.classes[1].precision, 1.0);
        assert!((r.classes[1].recall - 0.5).abs() < 1e-15);
        assert!((r.classes[1].f1 - 2.0 * third).abs() < 1e-15);
        assert!((r.macro_f1 - 2.0 * third).abs() < 1e-15);
        assert!((r.accuracy - 2.0 * third).abs() < 1e-15);
        assert_eq!(r.classes[2].f1, 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let all = labels(&[0, 1, 2, 3, 4, 2]);
        let r = metrics(&confusion(&all, &all).unwrap());
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.macro_precision, 1.0);
        assert_eq!(r.macro_recall, 1.0);
    }

    #[test]
    fn absent_class_is_excluded() {
        let golds = labels(&[0, 0, 1]);
        let preds = labels(&[0, 0, 1]);
        let r = metrics(&confusion(&preds, &golds).unwrap());
        assert_eq!(r.macro_f1, 1.0);
        let preds = labels(&[0, 2, 1]);
        let r = metrics(&confusion(&preds, &golds).unwrap());
        // background 2/3, purpose 1, method 0
        assert!((r.macro_f1 - (2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tsv_formatting() {
        let mut r = metrics(&confusion(&[Background], &[Background]).unwrap());
        r.macro_f1 = 0.951;
        let tsv = report_tsv(&r);
        assert!(tsv.lines().any(|l| l == "macro_f1\t95.10"));
        assert!(tsv.lines().any(|l| l == "accuracy\t100.00"));
        assert!(tsv.lines().any(|l| l == "total\t1"));
        assert!(tsv.lines().all(|l| l.split('\t').count() == 2));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let r = metrics(&confusion(&labels(&[0, 1, 2, 2, 4, 3, 1]), &labels(&[0, 1, 1, 2, 4, 4, 0])).unwrap());
        let back: MetricsReport = serde_json::from_str(&report_json(&r)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn formats_and_files() {
        assert_eq!("tsv".parse::<ReportFormat>().unwrap(), ReportFormat::Tsv);
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert!(matches!("xml".parse::<ReportFormat>(), Err(EvalError::UnknownFormat(_))));
        let dir = tempfile::tempdir().unwrap();
        let r = metrics(&confusion(&[Method], &[Method]).unwrap());
        let path = dir.path().join("report.tsv");
        emit_report(&r, &path, ReportFormat::Tsv).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), report_tsv(&r));
        assert!(emit_report(&r, &dir.path().join("no/such/dir"), ReportFormat::Json).is_err());
    }

    /// Metrics computed straight from the label pairs.
    fn brute_force(preds: &[usize], golds: &[usize]) -> (Vec<(f64, f64, f64)>, f64, f64) {
        let mut per = Vec::new();
        let (mut f_sum, mut n) = (0.0, 0.0);
        for c in 0..K {
            let tp = preds.iter().zip(golds).filter(|(p, g)| **p == c && **g == c).count() as f64;
            let pc = preds.iter().filter(|p| **p == c).count() as f64;
            let gc = golds.iter().filter(|g| **g == c).count() as f64;
            let p = if pc > 0.0 { tp / pc } else { 0.0 };
            let r = if gc > 0.0 { tp / gc } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            if pc + gc > 0.0 {
                f_sum += f;
                n += 1.0;
            }
            per.push((p, r, f));
        }
        let acc = preds.iter().zip(golds).filter(|(p, g)| p == g).count() as f64 / preds.len() as f64;
        (per, f_sum / n, acc)
    }

    fn pairs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..=100).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..K, n),
                proptest::collection::vec(0usize..K, n),
            )
        })
    }

    proptest! {
        #[test]
        fn metrics_match_brute_force((preds, golds) in pairs()) {
            let r = metrics(&confusion(&labels(&preds), &labels(&golds)).unwrap());
            let (per, macro_f1, acc) = brute_force(&preds, &golds);
            for (c, (p, rec, f)) in r.classes.iter().zip(per) {
                prop_assert!((c.precision - p).abs() < 1e-12);
                prop_assert!((c.recall - rec).abs() < 1e-12);
                prop_assert!((c.f1 - f).abs() < 1e-12);
            }
            prop_assert!((r.macro_f1 - macro_f1).abs() < 1e-12);
            prop_assert!((r.accuracy - acc).abs() < 1e-12);
            prop_assert_eq!(r.confusion.total(), preds.len() as u64);
            let scaled = r.accuracy * r.total as f64;
            prop_assert_eq!(scaled.round() as u64, r.confusion.trace());
            prop_assert!((scaled - r.confusion.trace() as f64).abs() < 1e-9);
            for v in [r.macro_f1, r.macro_precision, r.macro_recall, r.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn relabeling_preserves_macro_scores(
            (preds, golds) in pairs(),
            perm in Just((0..K).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let r = metrics(&confusion(&labels(&preds), &labels(&golds)).unwrap());
            let map = |v: &[usize]| v.iter().map(|&c| perm[c]).collect::<Vec<_>>();
            let s = metrics(&confusion(&labels(&map(&preds)), &labels(&map(&golds))).unwrap());
            prop_assert!((r.macro_f1 - s.macro_f1).abs() < 1e-12);
            prop_assert!((r.macro_precision - s.macro_precision).abs() < 1e-12);
            prop_assert!((r.macro_recall - s.macro_recall).abs() < 1e-12);
            prop_assert_eq!(r.accuracy, s.accuracy);
            for c in 0..K {
                prop_assert_eq!(&r.classes[c].f1, &s.classes[perm[c]].f1);
            }
        }
    }
}
