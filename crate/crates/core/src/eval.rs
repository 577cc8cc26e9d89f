//! Corpus BLEU at sentence and document granularity.
//!
//! Clipped n-gram matches (n = 1..4) are summed over the whole corpus before
//! the geometric mean is taken; the brevity penalty compares total
//! hypothesis and reference lengths. Text is split into tokens by a
//! [`TokenizerHook`], whitespace by default.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Pre-tokenizer applied to hypotheses and references before matching.
type SplitFn = dyn Fn(&str) -> Vec<String> + Send + Sync;

#[derive(Clone)]
pub struct TokenizerHook {
    pub name: String,
    func: Arc<SplitFn>,
}

impl TokenizerHook {
    pub fn new(name: &str, func: impl Fn(&str) -> Vec<String> + Send + Sync + 'static) -> Self {
        TokenizerHook {
            name: name.to_string(),
            func: Arc::new(func),
        }
    }

    pub fn whitespace() -> Self {
        TokenizerHook::new("whitespace", |s| {
            s.split_whitespace().map(str::to_string).collect()
        })
    }

    /// Applies the hook, dropping any empty tokens it produces.
    pub fn tokenize(&self, s: &str) -> Vec<String> {
        (self.func)(s)
            .into_iter()
            .filter(|t| !t.is_empty())
            .collect()
    }
}

impl Default for TokenizerHook {
    fn default() -> Self {
        TokenizerHook::whitespace()
    }
}

impl fmt::Debug for TokenizerHook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenizerHook")
            .field("name", &self.name)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    Sentence,
    Corpus,
    Document,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Sentence => "sentence",
            Granularity::Corpus => "corpus",
            Granularity::Document => "document",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Add one to numerator and denominator of every order above 1.
    AddOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    /// In [0, 100].
    pub score: f64,
    pub granularity: Granularity,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
}

impl BleuReport {
    /// Line-oriented `key=value` record.
    pub fn to_kv(&self) -> String {
        let p = &self.precisions;
        format!(
            "score={:.4}\nbp={:.6}\np1={:.6}\np2={:.6}\np3={:.6}\np4={:.6}\nhyp_len={}\nref_len={}\ngranularity={}\n",
            self.score,
            self.brevity_penalty,
            p[0],
            p[1],
            p[2],
            p[3],
            self.hyp_len,
            self.ref_len,
            self.granularity.as_str()
        )
    }

    pub const TSV_HEADER: &'static str = "score\tbp\tp1\tp2\tp3\tp4\thyp_len\tref_len\tgranularity";

    pub fn to_tsv_row(&self) -> String {
        let p = &self.precisions;
        format!(
            "{:.4}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            self.score,
            self.brevity_penalty,
            p[0],
            p[1],
            p[2],
            p[3],
            self.hyp_len,
            self.ref_len,
            self.granularity.as_str()
        )
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus-level sufficient statistics of one segment.
fn segment_stats(hyp: &[String], reference: &[String]) -> ([u64; MAX_ORDER], [u64; MAX_ORDER]) {
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        matches[n - 1] = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    (matches, totals)
}

fn finish(
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
    smoothing: Smoothing,
    granularity: Granularity,
) -> BleuReport {
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = match smoothing {
            Smoothing::AddOne if n > 0 => (matches[n] + 1, totals[n] + 1),
            _ => (matches[n], totals[n]),
        };
        precisions[n] = if t == 0 { 0.0 } else { m as f64 / t as f64 };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().all(|&p| p > 0.0) {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
    } else {
        0.0
    };
    BleuReport {
        precisions,
        brevity_penalty,
        score,
        granularity,
        hyp_len,
        ref_len,
        matches,
        totals,
    }
}

pub fn corpus_bleu(hyps: &[String], refs: &[String], hook: &TokenizerHook) -> Result<BleuReport> {
    corpus_bleu_with(hyps, refs, hook, Smoothing::None, Granularity::Corpus)
}

pub fn corpus_bleu_with(
    hyps: &[String],
    refs: &[String],
    hook: &TokenizerHook,
    smoothing: Smoothing,
    granularity: Granularity,
) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            what: "hypotheses vs references",
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (hook.tokenize(h), hook.tokenize(r));
        let (m, t) = segment_stats(&h, &r);
        for n in 0..MAX_ORDER {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        hyp_len += h.len();
        ref_len += r.len();
    }
    Ok(finish(
        matches,
        totals,
        hyp_len,
        ref_len,
        smoothing,
        granularity,
    ))
}

/// BLEU of a single segment.
pub fn sentence_bleu(hyp: &str, reference: &str, hook: &TokenizerHook) -> BleuReport {
    corpus_bleu_with(
        &[hyp.to_string()],
        &[reference.to_string()],
        hook,
        Smoothing::None,
        Granularity::Sentence,
    )
    .expect("one segment each")
}

/// Document BLEU: each document's sentences are joined with a single space
/// and the joined documents are scored as one corpus.
pub fn doc_bleu(
    hyp_docs: &[Vec<String>],
    ref_docs: &[Vec<String>],
    hook: &TokenizerHook,
) -> Result<BleuReport> {
    if hyp_docs.len() != ref_docs.len() {
        return Err(Error::LengthMismatch {
            what: "hypothesis vs reference documents",
            left: hyp_docs.len(),
            right: ref_docs.len(),
        });
    }
    let join = |docs: &[Vec<String>]| docs.iter().map(|d| d.join(" ")).collect::<Vec<_>>();
    corpus_bleu_with(
        &join(hyp_docs),
        &join(ref_docs),
        hook,
        Smoothing::None,
        Granularity::Document,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignmentCheck {
    pub aligned: bool,
    pub hyp_count: usize,
    pub ref_count: usize,
}

/// Sentence-level BLEU is only meaningful when the output has one sentence
/// per reference sentence.
pub fn sentence_alignment_check(hyp: &[String], reference: &[String]) -> AlignmentCheck {
    AlignmentCheck {
        aligned: !hyp.is_empty() && hyp.len() == reference.len(),
        hyp_count: hyp.len(),
        ref_count: reference.len(),
    }
}

/// Scores of a document-level translation run.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentReport {
    pub d_bleu: BleuReport,
    /// Present only when every document aligned sentence-for-sentence.
    pub s_bleu: Option<BleuReport>,
    pub alignment: Vec<AlignmentCheck>,
}

pub fn document_report(
    hyp_docs: &[Vec<String>],
    ref_docs: &[Vec<String>],
    hook: &TokenizerHook,
) -> Result<DocumentReport> {
    let d_bleu = doc_bleu(hyp_docs, ref_docs, hook)?;
    let alignment: Vec<AlignmentCheck> = hyp_docs
        .iter()
        .zip(ref_docs)
        .map(|(h, r)| sentence_alignment_check(h, r))
        .collect();
    let s_bleu = if alignment.iter().all(|a| a.aligned) {
        let hyps: Vec<String> = hyp_docs.iter().flatten().cloned().collect();
        let refs: Vec<String> = ref_docs.iter().flatten().cloned().collect();
        Some(corpus_bleu_with(
            &hyps,
            &refs,
            hook,
            Smoothing::None,
            Granularity::Sentence,
        )?)
    } else {
        None
    };
    Ok(DocumentReport {
        d_bleu,
        s_bleu,
        alignment,
    })
}

/// Fraction of hypotheses equal to their reference after trimming.
pub fn exact_match(hyps: &[String], refs: &[String]) -> f64 {
    if refs.is_empty() {
        return 0.0;
    }
    let hits = hyps
        .iter()
        .zip(refs)
        .filter(|(h, r)| h.trim() == r.trim())
        .count();
    hits as f64 / refs.len() as f64
}
