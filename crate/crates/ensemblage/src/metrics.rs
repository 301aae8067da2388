//! Lexical diversity of response corpora: n-gram type-token ratio and HD-D.
//!
//! A corpus pools documents into a bag of n-grams (n-grams never cross
//! document boundaries). TTR is distinct n-grams over total n-grams. HD-D
//! adjusts for length: it is the expected contribution of each type to the
//! type-token ratio of a uniform without-replacement sample of fixed size
//! `s` (42 by convention). For a type with frequency `f` in `N` tokens:
//!
//! ```text
//! P[type absent from sample] = C(N - f, s) / C(N, s)
//! contribution = (1 - P[absent]) / s
//! hdd = sum of contributions over all types
//! ```
//!
//! The probability is computed through sums of log ratios so large counts
//! stay numerically stable.
//!
//! Tokenization is fixed and versioned ([`TOKENIZER_VERSION`]); metric
//! values are only comparable within one tokenizer version.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bump when `tokenize` changes behavior.
pub const TOKENIZER_VERSION: u32 = 1;

/// Default HD-D sample size, the convention in the lexical-diversity
/// literature.
pub const HDD_SAMPLE_SIZE: usize = 42;

/// The n-gram orders a [`DiversityReport`] covers.
pub const TTR_ORDERS: [usize; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("corpus {0:?} has no tokens at n-gram order {1}")]
    EmptyCorpus(String, usize),
    #[error("corpus {label:?} has {tokens} tokens, fewer than the sample size {sample_size}")]
    CorpusTooSmall {
        label: String,
        tokens: usize,
        sample_size: usize,
    },
    #[error("comparison requires at least two reports, got {0}")]
    TooFewReports(usize),
}

/// A labeled set of documents, pooled for measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub label: String,
    pub documents: Vec<String>,
}

impl Corpus {
    pub fn new(label: impl Into<String>, documents: Vec<String>) -> Self {
        Corpus {
            label: label.into(),
            documents,
        }
    }
}

/// Lowercase, strip punctuation except intra-word apostrophes and hyphens,
/// split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for raw in lower.split_whitespace() {
        let chars: Vec<char> = raw.chars().collect();
        let mut cleaned = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let intra_word = (c == '\'' || c == '-')
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if c.is_alphanumeric() || intra_word {
                cleaned.push(c);
            }
        }
        if !cleaned.is_empty() {
            tokens.push(cleaned);
        }
    }
    tokens
}

/// Frequency table of n-grams over the pooled corpus. N-grams are counted
/// per document so they never span a document boundary.
fn ngram_counts(corpus: &Corpus, n: usize) -> BTreeMap<String, usize> {
    assert!(n >= 1, "n-gram order must be >= 1");
    let mut counts = BTreeMap::new();
    for doc in &corpus.documents {
        let tokens = tokenize(doc);
        if tokens.len() < n {
            continue;
        }
        for window in tokens.windows(n) {
            *counts.entry(window.join(" ")).or_insert(0) += 1;
        }
    }
    counts
}

/// Type-token ratio at n-gram order `n`: distinct over total.
pub fn ttr(corpus: &Corpus, n: usize) -> Result<f64, MetricsError> {
    let counts = ngram_counts(corpus, n);
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(MetricsError::EmptyCorpus(corpus.label.clone(), n));
    }
    Ok(counts.len() as f64 / total as f64)
}

/// `ln( C(big - f, s) / C(big, s) )` computed as a telescoped sum of log
/// ratios; returns `None` when the numerator is zero (f > big - s).
fn ln_absent_probability(big: usize, f: usize, s: usize) -> Option<f64> {
    if f + s > big {
        return None;
    }
    let mut ln_p = 0.0;
    for i in 0..s {
        ln_p += ((big - f - i) as f64).ln() - ((big - i) as f64).ln();
    }
    Some(ln_p)
}

fn hdd_from_counts(
    counts: &BTreeMap<String, usize>,
    label: &str,
    sample_size: usize,
) -> Result<f64, MetricsError> {
    let total: usize = counts.values().sum();
    if total < sample_size {
        return Err(MetricsError::CorpusTooSmall {
            label: label.to_string(),
            tokens: total,
            sample_size,
        });
    }
    let s = sample_size as f64;
    let mut hdd = 0.0;
    for &freq in counts.values() {
        let p_absent = ln_absent_probability(total, freq, sample_size)
            .map(f64::exp)
            .unwrap_or(0.0);
        hdd += (1.0 - p_absent) / s;
    }
    Ok(hdd)
}

/// HD-D over 1-gram types (the standard definition).
pub fn hdd(corpus: &Corpus, sample_size: usize) -> Result<f64, MetricsError> {
    hdd_ngram(corpus, 1, sample_size)
}

/// HD-D with n-grams as the types, mirroring per-order diversity plots.
pub fn hdd_ngram(corpus: &Corpus, n: usize, sample_size: usize) -> Result<f64, MetricsError> {
    let counts = ngram_counts(corpus, n);
    hdd_from_counts(&counts, &corpus.label, sample_size)
}

/// Per-corpus diversity scores: TTR at orders 1..=5 plus HD-D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub label: String,
    pub tokenizer_version: u32,
    pub token_count: usize,
    /// Distinct n-grams per order, keyed "1".."5".
    pub type_counts: BTreeMap<String, usize>,
    /// TTR per order, keyed "1".."5".
    pub ttr: BTreeMap<String, f64>,
    pub hdd: f64,
    pub hdd_sample_size: usize,
}

pub fn diversity_report(
    corpus: &Corpus,
    sample_size: usize,
) -> Result<DiversityReport, MetricsError> {
    let mut ttr_map = BTreeMap::new();
    let mut type_counts = BTreeMap::new();
    for n in TTR_ORDERS {
        let counts = ngram_counts(corpus, n);
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(MetricsError::EmptyCorpus(corpus.label.clone(), n));
        }
        type_counts.insert(n.to_string(), counts.len());
        ttr_map.insert(n.to_string(), counts.len() as f64 / total as f64);
    }
    let token_count = corpus.documents.iter().map(|d| tokenize(d).len()).sum();
    Ok(DiversityReport {
        label: corpus.label.clone(),
        tokenizer_version: TOKENIZER_VERSION,
        token_count,
        type_counts,
        ttr: ttr_map,
        hdd: hdd(corpus, sample_size)?,
        hdd_sample_size: sample_size,
    })
}

/// One comparison row: which corpus scored highest on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    /// (label, score) per corpus, in input order.
    pub scores: Vec<(String, f64)>,
    /// Label of the highest-scoring corpus, or None on a tie.
    pub highest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

type ScoreFn = Box<dyn Fn(&DiversityReport) -> f64>;

/// Compare reports metric by metric (ttr_1..ttr_5, hdd).
pub fn compare(reports: &[DiversityReport]) -> Result<Comparison, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewReports(reports.len()));
    }
    let mut rows = Vec::new();
    let metrics: Vec<(String, ScoreFn)> = TTR_ORDERS
        .iter()
        .map(|&n| {
            let key = n.to_string();
            (
                format!("ttr_{n}"),
                Box::new(move |r: &DiversityReport| r.ttr[&key]) as ScoreFn,
            )
        })
        .chain(std::iter::once((
            "hdd".to_string(),
            Box::new(|r: &DiversityReport| r.hdd) as ScoreFn,
        )))
        .collect();
    for (name, score_of) in metrics {
        let scores: Vec<(String, f64)> = reports
            .iter()
            .map(|r| (r.label.clone(), score_of(r)))
            .collect();
        let best = scores
            .iter()
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<String> = scores
            .iter()
            .filter(|(_, v)| *v == best)
            .map(|(l, _)| l.clone())
            .collect();
        let highest = match winners.as_slice() {
            [single] => Some(single.clone()),
            _ => None,
        };
        rows.push(ComparisonRow {
            metric: name,
            scores,
            highest,
        });
    }
    Ok(Comparison { rows })
}

impl Comparison {
    /// Aligned plain-text table.
    pub fn to_text_table(&self) -> String {
        let labels: Vec<&str> = self.rows[0]
            .scores
            .iter()
            .map(|(l, _)| l.as_str())
            .collect();
        let mut widths: Vec<usize> = labels.iter().map(|l| l.len().max(8)).collect();
        let metric_width = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .max()
            .unwrap_or(6)
            .max("metric".len());
        for row in &self.rows {
            for (i, (_, v)) in row.scores.iter().enumerate() {
                widths[i] = widths[i].max(format!("{v:.4}").len());
            }
        }
        let mut out = String::new();
        out.push_str(&format!("{:<metric_width$}", "metric"));
        for (label, width) in labels.iter().zip(&widths) {
            out.push_str(&format!("  {label:>width$}"));
        }
        out.push_str("  highest\n");
        for row in &self.rows {
            out.push_str(&format!("{:<metric_width$}", row.metric));
            for ((_, value), width) in row.scores.iter().zip(&widths) {
                out.push_str(&format!("  {value:>width$.4}"));
            }
            out.push_str(&format!(
                "  {}\n",
                row.highest.as_deref().unwrap_or("(tie)")
            ));
        }
        out
    }
}
