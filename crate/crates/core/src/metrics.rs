//! Entity-level micro F1 for NER and token accuracy for POS.
//!
//! Zero-denominator conventions: when both gold and prediction contain no
//! entities, precision, recall and F1 are 1.0. Otherwise an empty denominator
//! makes the corresponding ratio 0.0 (no predictions: precision 0; no gold
//! entities: recall 0). F1 is 0.0 whenever precision + recall is 0.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::Task;
use crate::report::{KvError, KvReport};

/// Gold tag that excludes a position from token accuracy.
pub const IGNORE_TAG: &str = "<ignore>";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold has {gold} sentences but prediction has {pred}")]
    SentenceCount { gold: usize, pred: usize },
    #[error("sentence {index}: gold has {gold} tags but prediction has {pred}")]
    TokenCount { index: usize, gold: usize, pred: usize },
    #[error("no scorable tokens")]
    NoTokens,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntitySpan {
    pub kind: String,
    /// Inclusive.
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpanMode {
    /// `I-X` without a `B-X`/`I-X` predecessor opens a new span.
    #[default]
    Lenient,
    /// Such an `I-X` belongs to no span.
    Strict,
}

/// Maximal entity spans of a BIO sequence.
pub fn extract_spans<S: AsRef<str>>(tags: &[S], mode: SpanMode) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(&str, usize)> = None;
    let close = |open: &mut Option<(&str, usize)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((kind, start)) = open.take() {
            spans.push(EntitySpan {
                kind: kind.to_string(),
                start,
                end,
            });
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        if let Some(kind) = tag.strip_prefix("B-") {
            close(&mut open, i, &mut spans);
            open = Some((kind, i));
        } else if let Some(kind) = tag.strip_prefix("I-") {
            if open.is_some_and(|(k, _)| k == kind) {
                continue;
            }
            close(&mut open, i, &mut spans);
            if mode == SpanMode::Lenient {
                open = Some((kind, i));
            }
        } else {
            close(&mut open, i, &mut spans);
        }
    }
    close(&mut open, tags.len(), &mut spans);
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.predicted, self.gold == 0)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.gold, self.predicted == 0)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn merge(&mut self, other: &Counts) {
        self.true_positives += other.true_positives;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }
}

fn ratio(num: usize, den: usize, other_side_empty: bool) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else if other_side_empty {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    F1Score,
    AccuracyScore,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::F1Score => "F1-Score",
            Metric::AccuracyScore => "Accuracy Score",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "F1-Score" => Some(Metric::F1Score),
            "Accuracy Score" => Some(Metric::AccuracyScore),
            _ => None,
        }
    }
}

/// Metrics of one task. `value` is in [0, 1]; text tables show it ×100.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub metric: Metric,
    pub value: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub counts: Counts,
    pub per_type: BTreeMap<String, Counts>,
}

impl EvalReport {
    /// Span-F1 report recomputed from (possibly merged) counts.
    pub fn span_f1_from_counts(counts: Counts, per_type: BTreeMap<String, Counts>) -> Self {
        EvalReport {
            task: Task::Ner,
            metric: Metric::F1Score,
            value: counts.f1(),
            precision: Some(counts.precision()),
            recall: Some(counts.recall()),
            counts,
            per_type,
        }
    }

    /// Accuracy report: `true_positives` correct out of `gold` scored tokens.
    pub fn accuracy_from_counts(counts: Counts, per_type: BTreeMap<String, Counts>) -> Result<Self, MetricsError> {
        if counts.gold == 0 {
            return Err(MetricsError::NoTokens);
        }
        Ok(EvalReport {
            task: Task::Pos,
            metric: Metric::AccuracyScore,
            value: counts.true_positives as f64 / counts.gold as f64,
            precision: None,
            recall: None,
            counts,
            per_type,
        })
    }

    /// Value ×100 rounded to two decimals, as shown in tables.
    pub fn percent(&self) -> String {
        format!("{:.2}", self.value * 100.0)
    }

    /// Appends this report under `prefix` (e.g. `ner.`).
    pub fn write_kv(&self, prefix: &str, kv: &mut KvReport) {
        kv.push(format!("{prefix}task"), self.task.key());
        kv.push(format!("{prefix}metric"), self.metric.name());
        kv.push(format!("{prefix}value"), self.value);
        if let Some(p) = self.precision {
            kv.push(format!("{prefix}precision"), p);
        }
        if let Some(r) = self.recall {
            kv.push(format!("{prefix}recall"), r);
        }
        kv.push(format!("{prefix}true_positives"), self.counts.true_positives);
        kv.push(format!("{prefix}predicted"), self.counts.predicted);
        kv.push(format!("{prefix}gold"), self.counts.gold);
        for (kind, c) in &self.per_type {
            kv.push(
                format!("{prefix}type.{kind}"),
                format!("{},{},{}", c.true_positives, c.predicted, c.gold),
            );
        }
    }

    /// Inverse of [`EvalReport::write_kv`].
    pub fn read_kv(prefix: &str, kv: &KvReport) -> Result<Self, KvError> {
        let task: Task = kv.parse(&format!("{prefix}task"))?;
        let metric_key = format!("{prefix}metric");
        let metric_str = kv.require(&metric_key)?;
        let metric = Metric::parse(metric_str).ok_or_else(|| KvError::Invalid {
            key: metric_key.clone(),
            value: metric_str.to_string(),
        })?;
        let counts = Counts {
            true_positives: kv.parse(&format!("{prefix}true_positives"))?,
            predicted: kv.parse(&format!("{prefix}predicted"))?,
            gold: kv.parse(&format!("{prefix}gold"))?,
        };
        let type_prefix = format!("{prefix}type.");
        let mut per_type = BTreeMap::new();
        for (k, v) in kv.entries() {
            if let Some(kind) = k.strip_prefix(&type_prefix) {
                let parts: Vec<usize> = v.split(',').filter_map(|x| x.parse().ok()).collect();
                if parts.len() != 3 {
                    return Err(KvError::Invalid {
                        key: k.clone(),
                        value: v.clone(),
                    });
                }
                per_type.insert(
                    kind.to_string(),
                    Counts {
                        true_positives: parts[0],
                        predicted: parts[1],
                        gold: parts[2],
                    },
                );
            }
        }
        let precision = kv.get(&format!("{prefix}precision")).map(|_| kv.parse(&format!("{prefix}precision"))).transpose()?;
        let recall = kv.get(&format!("{prefix}recall")).map(|_| kv.parse(&format!("{prefix}recall"))).transpose()?;
        Ok(EvalReport {
            task,
            metric,
            value: kv.parse(&format!("{prefix}value"))?,
            precision,
            recall,
            counts,
            per_type,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<16} {:>8}", "Task", "Metric", "Value")?;
        writeln!(f, "{:<6} {:<16} {:>8}", self.task, self.metric.name(), self.percent())?;
        if let (Some(p), Some(r)) = (self.precision, self.recall) {
            writeln!(f, "       precision {:>9.2}  recall {:.2}", p * 100.0, r * 100.0)?;
        }
        writeln!(
            f,
            "       counts: correct/matched={} predicted={} gold={}",
            self.counts.true_positives, self.counts.predicted, self.counts.gold
        )?;
        for (kind, c) in &self.per_type {
            if self.metric == Metric::F1Score {
                writeln!(f, "       {kind:<10} P={:.2} R={:.2} F1={:.2} (gold {})", c.precision() * 100.0, c.recall() * 100.0, c.f1() * 100.0, c.gold)?;
            } else {
                writeln!(f, "       {kind:<10} recall={:.2} (gold {})", c.recall() * 100.0, c.gold)?;
            }
        }
        Ok(())
    }
}

fn check_shapes<A, B>(gold: &[Vec<A>], pred: &[Vec<B>]) -> Result<(), MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(MetricsError::TokenCount {
                index,
                gold: g.len(),
                pred: p.len(),
            });
        }
    }
    Ok(())
}

/// Micro-averaged exact-match span precision, recall and F1.
pub fn span_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>], mode: SpanMode) -> Result<EvalReport, MetricsError> {
    check_shapes(gold, pred)?;
    let mut total = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let gs = extract_spans(g, mode);
        let ps = extract_spans(p, mode);
        for s in &gs {
            per_type.entry(s.kind.clone()).or_default().gold += 1;
        }
        for s in &ps {
            let c = per_type.entry(s.kind.clone()).or_default();
            c.predicted += 1;
            // Spans of one sequence are disjoint, so membership is a match.
            if gs.contains(s) {
                c.true_positives += 1;
                total.true_positives += 1;
            }
        }
        total.gold += gs.len();
        total.predicted += ps.len();
    }
    Ok(EvalReport::span_f1_from_counts(total, per_type))
}

/// Fraction of positions where prediction equals gold, skipping gold
/// positions tagged [`IGNORE_TAG`]. The per-type breakdown is keyed by gold tag.
pub fn token_accuracy<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<EvalReport, MetricsError> {
    check_shapes(gold, pred)?;
    let mut total = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        for (gt, pt) in g.iter().zip(p) {
            let (gt, pt) = (gt.as_ref(), pt.as_ref());
            if gt == IGNORE_TAG {
                continue;
            }
            let hit = usize::from(gt == pt);
            total.gold += 1;
            total.predicted += 1;
            total.true_positives += hit;
            let c = per_type.entry(gt.to_string()).or_default();
            c.gold += 1;
            c.predicted += 1;
            c.true_positives += hit;
        }
    }
    EvalReport::accuracy_from_counts(total, per_type)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn span(kind: &str, start: usize, end: usize) -> EntitySpan {
        EntitySpan {
            kind: kind.into(),
            start,
            end,
        }
    }

    #[test]
    fn span_extraction_examples() {
        assert_eq!(extract_spans(&tags(&["O", "B-PER", "I-PER", "O"]), SpanMode::Lenient), vec![span("PER", 1, 3)]);
        assert_eq!(
            extract_spans(&tags(&["B-LOC", "B-LOC"]), SpanMode::Lenient),
            vec![span("LOC", 0, 1), span("LOC", 1, 2)]
        );
        assert_eq!(extract_spans(&tags(&["O", "I-PER"]), SpanMode::Lenient), vec![span("PER", 1, 2)]);
        assert!(extract_spans(&tags(&["O", "I-PER"]), SpanMode::Strict).is_empty());
        assert_eq!(
            extract_spans(&tags(&["B-LOC", "I-PER", "I-PER"]), SpanMode::Lenient),
            vec![span("LOC", 0, 1), span("PER", 1, 3)]
        );
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gold = vec![tags(&["B-PER", "I-PER", "O", "B-LOC"])];
        let r = span_f1(&gold, &gold, SpanMode::Lenient).unwrap();
        assert_eq!((r.precision, r.recall, r.value), (Some(1.0), Some(1.0), 1.0));
        let none = vec![tags(&["O"; 4])];
        let r = span_f1(&gold, &none, SpanMode::Lenient).unwrap();
        assert_eq!((r.recall, r.value, r.precision), (Some(0.0), 0.0, Some(0.0)));
    }

    #[test]
    fn empty_empty_is_perfect() {
        let none = vec![tags(&["O", "O"])];
        let r = span_f1(&none, &none, SpanMode::Lenient).unwrap();
        assert_eq!((r.precision, r.recall, r.value), (Some(1.0), Some(1.0), 1.0));
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = vec![tags(&["O"])];
        let b = vec![tags(&["O", "O"])];
        assert_eq!(
            span_f1(&a, &b, SpanMode::Lenient).unwrap_err(),
            MetricsError::TokenCount { index: 0, gold: 1, pred: 2 }
        );
        assert!(matches!(token_accuracy(&a, &[]), Err(MetricsError::SentenceCount { .. })));
    }

    #[test]
    fn accuracy_examples() {
        let g = vec![tags(&["NOUN", "VERB", "ADJ", "NOUN"])];
        assert_eq!(token_accuracy(&g, &g).unwrap().value, 1.0);
        let p = vec![tags(&["VERB", "VERB", "NOUN", "NOUN"])];
        assert_eq!(token_accuracy(&g, &p).unwrap().value, 0.5);
        let ig = vec![tags(&[IGNORE_TAG, "VERB"])];
        let pi = vec![tags(&["X", "VERB"])];
        assert_eq!(token_accuracy(&ig, &pi).unwrap().value, 1.0);
        let all_ignored = vec![tags(&[IGNORE_TAG])];
        assert_eq!(token_accuracy(&all_ignored, &all_ignored).unwrap_err(), MetricsError::NoTokens);
    }

    #[test]
    fn kv_round_trip() {
        let g = vec![tags(&["B-PER", "I-PER", "O", "B-LOC"]), tags(&["B-ORG"])];
        let p = vec![tags(&["B-PER", "I-PER", "O", "O"]), tags(&["B-LOC"])];
        let r = span_f1(&g, &p, SpanMode::Lenient).unwrap();
        let mut kv = KvReport::default();
        r.write_kv("ner.", &mut kv);
        let back = EvalReport::read_kv("ner.", &KvReport::parse_text(&kv.emit()).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    fn arb_bio(len: usize) -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]), len)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<String>>)> {
        prop::collection::vec(1usize..8, 1..6).prop_flat_map(|lens| {
            let g: Vec<_> = lens.iter().map(|&n| arb_bio(n)).collect();
            let p: Vec<_> = lens.iter().map(|&n| arb_bio(n)).collect();
            (g, p)
        })
    }

    proptest! {
        #[test]
        fn scores_bounded_and_swap_symmetric((g, p) in arb_pair()) {
            let a = span_f1(&g, &p, SpanMode::Lenient).unwrap();
            let b = span_f1(&p, &g, SpanMode::Lenient).unwrap();
            for v in [a.value, a.precision.unwrap(), a.recall.unwrap()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            if a.precision.unwrap() + a.recall.unwrap() > 0.0 {
                let (pp, rr) = (a.precision.unwrap(), a.recall.unwrap());
                prop_assert!((a.value - 2.0 * pp * rr / (pp + rr)).abs() < 1e-15);
            }
        }

        #[test]
        fn f1_invariant_to_sentence_order((g, p) in arb_pair()) {
            let a = span_f1(&g, &p, SpanMode::Lenient).unwrap();
            let gr: Vec<_> = g.iter().rev().cloned().collect();
            let pr: Vec<_> = p.iter().rev().cloned().collect();
            prop_assert_eq!(a, span_f1(&gr, &pr, SpanMode::Lenient).unwrap());
        }

        #[test]
        fn sharded_counts_merge((g, p) in arb_pair()) {
            let whole = span_f1(&g, &p, SpanMode::Lenient).unwrap();
            let k = g.len() / 2;
            let mut c = span_f1(&g[..k], &p[..k], SpanMode::Lenient).unwrap().counts;
            c.merge(&span_f1(&g[k..], &p[k..], SpanMode::Lenient).unwrap().counts);
            prop_assert_eq!(c, whole.counts);
        }
    }
}
