//! Accuracy and macro-averaged precision/recall/F1, labeled test sets, and
//! the keyword-count sweep.

use std::fmt::Write as _;

use crate::corpus::{build_vocabulary, encode_corpus, tokenize, TopicSchema};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::training::{run_pipeline, Classifier, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 are averaged without weighting over
/// all `n_classes` classes, including classes absent from both sequences.
/// Zero denominators yield 0.
pub fn compute_metrics(predicted: &[usize], gold: &[usize], n_classes: usize) -> Result<Metrics> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch(predicted.len(), gold.len()));
    }
    if let Some(&bad) = predicted.iter().chain(gold).find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {n_classes} classes")));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut gold_count = vec![0usize; n_classes];
    for (&p, &g) in predicted.iter().zip(gold) {
        pred_count[p] += 1;
        gold_count[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for c in 0..n_classes {
        let p = ratio(tp[c], pred_count[c]);
        let r = ratio(tp[c], gold_count[c]);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        sp += p;
        sr += r;
        sf += f;
    }
    let n = n_classes.max(1) as f64;
    Ok(Metrics {
        accuracy: ratio(correct, gold.len()),
        macro_precision: sp / n,
        macro_recall: sr / n,
        macro_f1: sf / n,
    })
}

impl Metrics {
    pub fn to_kv(&self, prefix: &str) -> String {
        format!(
            "{prefix}.accuracy={:.6}\n{prefix}.macro_precision={:.6}\n{prefix}.macro_recall={:.6}\n{prefix}.macro_f1={:.6}\n",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        )
    }
}

/// Aligned plain-text table with one row per named head.
pub fn metrics_table(rows: &[(&str, Metrics)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).chain([4]).max().unwrap_or(4);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>9}  {:>8}  {:>8}\n",
        "head", "accuracy", "precision", "recall", "macro_f1"
    );
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>9.4}  {:>8.4}  {:>8.4}",
            name, m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub text: String,
    pub gold_aspect: usize,
    pub gold_sentiment: usize,
}

/// Parses `text<TAB>aspect<TAB>sentiment` lines. Blank lines are skipped;
/// labels must name schema labels.
pub fn parse_test_set(input: &str, schema: &TopicSchema) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut cols = raw.rsplitn(3, '\t');
        let (Some(sent), Some(asp), Some(text)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Parse {
                line,
                message: "expected text<TAB>aspect<TAB>sentiment".into(),
            });
        };
        let lookup = |labels: &[String], name: &str, kind: &str| {
            labels.iter().position(|l| l == name.trim()).ok_or_else(|| Error::Parse {
                line,
                message: format!("unknown {kind} label `{}`", name.trim()),
            })
        };
        out.push(LabeledExample {
            text: text.to_string(),
            gold_aspect: lookup(&schema.aspects, asp, "aspect")?,
            gold_sentiment: lookup(&schema.sentiments, sent, "sentiment")?,
        });
    }
    Ok(out)
}

/// Aspect and sentiment metrics of `classifier` on `test`.
pub fn evaluate_pipeline<T: Scalar>(
    test: &[LabeledExample],
    classifier: &Classifier<'_, T>,
    threads: usize,
) -> (Metrics, Metrics) {
    let texts: Vec<&str> = test.iter().map(|e| e.text.as_str()).collect();
    let labeled = classifier.classify_all(&texts, threads);
    let pa: Vec<usize> = labeled.iter().map(|l| l.aspect).collect();
    let ps: Vec<usize> = labeled.iter().map(|l| l.sentiment).collect();
    let ga: Vec<usize> = test.iter().map(|e| e.gold_aspect).collect();
    let gs: Vec<usize> = test.iter().map(|e| e.gold_sentiment).collect();
    let na = classifier.aspect.classes();
    let ns = classifier.sentiment.classes();
    // lengths and ranges match by construction
    let aspect = compute_metrics(&pa, &ga, na).unwrap_or_default();
    let sentiment = compute_metrics(&ps, &gs, ns).unwrap_or_default();
    (aspect, sentiment)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub aspect: Metrics,
    pub sentiment: Metrics,
}

/// Reruns the full pipeline with every keyword list cut to its first `k`
/// entries, once per requested `k`.
pub fn keyword_sweep<T: Scalar, S: AsRef<str>>(
    corpus: &[S],
    test: &[LabeledExample],
    schema: &TopicSchema,
    ks: &[usize],
    min_count: usize,
    config: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    let shortest = schema.min_keywords();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > shortest) {
        return Err(Error::invalid(format!(
            "keyword count {k} must be between 1 and the shortest list length {shortest}"
        )));
    }
    let tokenized: Vec<Vec<String>> = corpus.iter().map(|l| tokenize(l.as_ref())).collect();
    let vocab = build_vocabulary(&tokenized, min_count)?;
    let docs = encode_corpus(corpus, &vocab);
    ks.iter()
        .map(|&k| {
            let truncated = schema.truncated(k);
            let out = run_pipeline::<T>(&docs, &vocab, &truncated, config)?;
            let (aspect, sentiment) = evaluate_pipeline(test, &out.classifier(&vocab), config.cnn.threads);
            log::info!("stage=sweep k={k} aspect_macro_f1={:.6}", aspect.macro_f1);
            Ok(SweepRow { k, aspect, sentiment })
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{:>4}  {:>15}  {:>18}\n", "k", "aspect_macro_f1", "sentiment_macro_f1");
    for r in rows {
        let _ = writeln!(out, "{:>4}  {:>15.4}  {:>18.4}", r.k, r.aspect.macro_f1, r.sentiment.macro_f1);
    }
    out
}
