//! Monolingual and parallel corpora, language proportions and the
//! smoothed up/down-sampling distribution used to pick pre-training
//! languages.
//!
//! Corpus files are UTF-8 text with one sentence per line; a blank line
//! closes the current document. A collection manifest lists one
//! `<lang>\t<path>` entry per line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::Vocabulary;

/// Short lowercase ASCII language identifier such as `en` or `ro`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn new(code: &str) -> Result<Self> {
        let valid = !code.is_empty()
            && code
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
            && code.as_bytes()[0].is_ascii_lowercase();
        if valid {
            Ok(LanguageCode(code.to_string()))
        } else {
            Err(Error::InvalidLanguage(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for LanguageCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LanguageCode::new(s)
    }
}

/// A document is an ordered list of sentences.
pub type Document = Vec<String>;

#[derive(Clone, Debug, PartialEq)]
pub struct MonolingualCorpus {
    pub lang: LanguageCode,
    pub documents: Vec<Document>,
    /// Sum of encoded sentence lengths; zero until [`MonolingualCorpus::count_tokens`] runs.
    pub token_count: u64,
}

impl MonolingualCorpus {
    /// Builds a corpus, trimming sentences and dropping empty ones and
    /// documents left without sentences.
    pub fn new(lang: LanguageCode, documents: Vec<Document>) -> Result<Self> {
        let documents: Vec<Document> = documents
            .into_iter()
            .map(|d| {
                d.into_iter()
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect::<Vec<_>>()
            })
            .filter(|d| !d.is_empty())
            .collect();
        if documents.is_empty() {
            return Err(Error::EmptyCorpus(lang.to_string()));
        }
        Ok(MonolingualCorpus {
            lang,
            documents,
            token_count: 0,
        })
    }

    pub fn parse(lang: LanguageCode, text: &str) -> Result<Self> {
        let mut documents = Vec::new();
        let mut current = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                if !current.is_empty() {
                    documents.push(std::mem::take(&mut current));
                }
            } else {
                current.push(line.to_string());
            }
        }
        if !current.is_empty() {
            documents.push(current);
        }
        MonolingualCorpus::new(lang, documents)
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().flatten().map(String::as_str)
    }

    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    pub fn count_tokens(&mut self, vocab: &Vocabulary) -> u64 {
        self.token_count = self.sentences().map(|s| vocab.encode(s).len() as u64).sum();
        self.token_count
    }

    /// Renders the corpus in the on-disk format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, doc) in self.documents.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for s in doc {
                out.push_str(s);
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a corpus file: one sentence per line, blank line between documents.
pub fn load_monolingual(path: &Path, lang: LanguageCode) -> Result<MonolingualCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MonolingualCorpus::parse(lang, &text)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusCollection {
    pub corpora: BTreeMap<LanguageCode, MonolingualCorpus>,
}

impl CorpusCollection {
    pub fn new(corpora: Vec<MonolingualCorpus>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in corpora {
            let lang = c.lang.clone();
            if map.insert(lang.clone(), c).is_some() {
                return Err(Error::DuplicateLanguage(lang.to_string()));
            }
        }
        if map.is_empty() {
            return Err(Error::Empty("corpus collection"));
        }
        Ok(CorpusCollection { corpora: map })
    }

    /// Loads every `<lang>\t<path>` entry of a manifest; relative paths
    /// resolve against the manifest's directory.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut corpora = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (lang, file) = line.split_once('\t').ok_or_else(|| {
                Error::format(
                    "manifest",
                    format!("line {}: expected <lang>\\t<path>", n + 1),
                )
            })?;
            let lang = LanguageCode::new(lang.trim())?;
            corpora.push(load_monolingual(&base.join(file.trim()), lang)?);
        }
        CorpusCollection::new(corpora)
    }

    pub fn num_languages(&self) -> usize {
        self.corpora.len()
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageCode> {
        self.corpora.keys()
    }

    pub fn get(&self, lang: &LanguageCode) -> Result<&MonolingualCorpus> {
        self.corpora
            .get(lang)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }

    pub fn count_tokens(&mut self, vocab: &Vocabulary) {
        for c in self.corpora.values_mut() {
            c.count_tokens(vocab);
        }
    }

    /// Language proportions `p_i` from token counts.
    pub fn proportions(&self) -> Result<BTreeMap<LanguageCode, f64>> {
        for c in self.corpora.values() {
            if c.token_count == 0 {
                return Err(Error::ZeroTokens(c.lang.to_string()));
            }
        }
        let total: u64 = self.corpora.values().map(|c| c.token_count).sum();
        Ok(self
            .corpora
            .iter()
            .map(|(l, c)| (l.clone(), c.token_count as f64 / total as f64))
            .collect())
    }
}

/// Per-language up/down-sampling ratios and the resulting sampling distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingWeights {
    pub alpha: f64,
    pub proportions: BTreeMap<LanguageCode, f64>,
    pub lambdas: BTreeMap<LanguageCode, f64>,
    pub effective_probs: BTreeMap<LanguageCode, f64>,
}

impl SamplingWeights {
    /// Weights that sample only `lang`.
    pub fn single(lang: LanguageCode) -> Self {
        let one = BTreeMap::from([(lang, 1.0)]);
        SamplingWeights {
            alpha: 1.0,
            proportions: one.clone(),
            lambdas: one.clone(),
            effective_probs: one,
        }
    }

    pub fn prob(&self, lang: &LanguageCode) -> f64 {
        self.effective_probs.get(lang).copied().unwrap_or(0.0)
    }
}

/// Smoothed re-balancing: `lambda_i = (1/p_i) * p_i^alpha / sum_j p_j^alpha`,
/// giving sampling probabilities `q_i = lambda_i * p_i / sum_j lambda_j * p_j`.
pub fn rebalance(collection: &CorpusCollection, alpha: f64) -> Result<SamplingWeights> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let proportions = collection.proportions()?;
    Ok(rebalance_proportions(proportions, alpha))
}

pub(crate) fn rebalance_proportions(
    proportions: BTreeMap<LanguageCode, f64>,
    alpha: f64,
) -> SamplingWeights {
    if alpha == 1.0 {
        // p^0 = 1 makes every ratio exactly one; skip the rounding of sum(p).
        let ones = proportions.keys().map(|l| (l.clone(), 1.0)).collect();
        let norm: f64 = proportions.values().sum();
        let q = proportions
            .iter()
            .map(|(l, p)| (l.clone(), p / norm))
            .collect();
        return SamplingWeights {
            alpha,
            proportions,
            lambdas: ones,
            effective_probs: q,
        };
    }
    let z: f64 = proportions.values().map(|p| p.powf(alpha)).sum();
    let lambdas: BTreeMap<_, _> = proportions
        .iter()
        .map(|(l, &p)| (l.clone(), p.powf(alpha) / (p * z)))
        .collect();
    let mass: f64 = proportions.iter().map(|(l, p)| lambdas[l] * p).sum();
    let effective_probs = proportions
        .iter()
        .map(|(l, p)| (l.clone(), lambdas[l] * p / mass))
        .collect();
    SamplingWeights {
        alpha,
        proportions,
        lambdas,
        effective_probs,
    }
}

/// Draws one language with probability `q_i`.
pub fn sample_language(weights: &SamplingWeights, rng: &mut Rng) -> LanguageCode {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (lang, &q) in &weights.effective_probs {
        acc += q;
        if u < acc {
            return lang.clone();
        }
        if q > 0.0 {
            last = Some(lang);
        }
    }
    // u landed in the rounding gap above the cumulative sum.
    last.or_else(|| weights.effective_probs.keys().next())
        .expect("sampling weights cover at least one language")
        .clone()
}

/// Where a sentence pair came from. Synthetic pairs must never reach an
/// evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Authentic,
    /// Produced by back-translation at the given update.
    Synthetic {
        step: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    pub source_lang: LanguageCode,
    pub target_lang: LanguageCode,
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(
        source_lang: LanguageCode,
        target_lang: LanguageCode,
        pairs: Vec<(String, String)>,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(pairs.len());
        for (i, (s, t)) in pairs.into_iter().enumerate() {
            let (s, t) = (s.trim().to_string(), t.trim().to_string());
            if s.is_empty() || t.is_empty() {
                return Err(Error::format(
                    "parallel corpus",
                    format!("pair {i} has an empty side"),
                ));
            }
            out.push(SentencePair {
                source: s,
                target: t,
                provenance: Provenance::Authentic,
            });
        }
        if out.is_empty() {
            return Err(Error::Empty("parallel corpus"));
        }
        Ok(ParallelCorpus {
            source_lang,
            target_lang,
            pairs: out,
        })
    }

    /// Parses `source\ttarget` lines.
    pub fn parse(source_lang: LanguageCode, target_lang: LanguageCode, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (s, t) = line.split_once('\t').ok_or_else(|| {
                Error::format(
                    "parallel corpus",
                    format!("line {}: expected source\\ttarget", n + 1),
                )
            })?;
            pairs.push((s.to_string(), t.to_string()));
        }
        ParallelCorpus::new(source_lang, target_lang, pairs)
    }

    pub fn load(path: &Path, source_lang: LanguageCode, target_lang: LanguageCode) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ParallelCorpus::parse(source_lang, target_lang, &text)
    }

    pub fn to_text(&self) -> String {
        self.pairs
            .iter()
            .map(|p| format!("{}\t{}\n", p.source, p.target))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The reverse direction, provenance preserved.
    pub fn reversed(&self) -> ParallelCorpus {
        ParallelCorpus {
            source_lang: self.target_lang.clone(),
            target_lang: self.source_lang.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| SentencePair {
                    source: p.target.clone(),
                    target: p.source.clone(),
                    provenance: p.provenance,
                })
                .collect(),
        }
    }

    /// First `n` pairs (all if fewer).
    pub fn take(&self, n: usize) -> ParallelCorpus {
        ParallelCorpus {
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
            pairs: self.pairs.iter().take(n).cloned().collect(),
        }
    }

    pub fn is_authentic(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| p.provenance == Provenance::Authentic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn lang(s: &str) -> LanguageCode {
        LanguageCode::new(s).unwrap()
    }

    fn with_counts(counts: &[(&str, u64)]) -> CorpusCollection {
        let corpora = counts
            .iter()
            .map(|(l, n)| {
                let mut c = MonolingualCorpus::new(lang(l), vec![vec!["x".into()]]).unwrap();
                c.token_count = *n;
                c
            })
            .collect();
        CorpusCollection::new(corpora).unwrap()
    }

    #[test]
    fn parses_documents_on_blank_lines() {
        let c = MonolingualCorpus::parse(lang("en"), "a\nb\n\nc\n").unwrap();
        assert_eq!(
            c.documents,
            vec![
                vec!["a".to_string(), "b".to_string()],
                vec!["c".to_string()]
            ]
        );
        let c = MonolingualCorpus::parse(lang("en"), "x\n").unwrap();
        assert_eq!(c.documents, vec![vec!["x".to_string()]]);
        let c = MonolingualCorpus::parse(lang("en"), "a\n\n\n\nb\n\n\n").unwrap();
        assert_eq!(c.documents.len(), 2);
    }

    #[test]
    fn blank_file_is_an_empty_corpus() {
        assert!(matches!(
            MonolingualCorpus::parse(lang("en"), "\n\n\n"),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn load_reports_missing_file() {
        let err = load_monolingual(Path::new("/nonexistent/corpus.txt"), lang("en")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn language_codes_are_validated() {
        assert!(LanguageCode::new("").is_err());
        assert!(LanguageCode::new("En").is_err());
        assert!(LanguageCode::new("en").is_ok());
        assert!(CorpusCollection::new(vec![
            MonolingualCorpus::new(lang("en"), vec![vec!["a".into()]]).unwrap(),
            MonolingualCorpus::new(lang("en"), vec![vec!["b".into()]]).unwrap(),
        ])
        .is_err());
    }

    #[test]
    fn uniform_proportions_need_no_rebalancing() {
        let c = with_counts(&[("aa", 10), ("bb", 10), ("cc", 10), ("dd", 10)]);
        let w = rebalance(&c, 0.7).unwrap();
        for l in c.languages() {
            assert!((w.lambdas[l] - 1.0).abs() < 1e-12);
            assert!((w.effective_probs[l] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_one_gives_unit_ratios_exactly() {
        let c = with_counts(&[("aa", 7), ("bb", 1234), ("cc", 3)]);
        let w = rebalance(&c, 1.0).unwrap();
        assert!(w.lambdas.values().all(|&l| l == 1.0));
    }

    #[test]
    fn zero_token_language_is_named() {
        let c = with_counts(&[("aa", 7), ("zz", 0)]);
        match rebalance(&c, 0.7) {
            Err(Error::ZeroTokens(l)) => assert_eq!(l, "zz"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(rebalance(&with_counts(&[("aa", 1)]), 0.0).is_err());
        assert!(rebalance(&with_counts(&[("aa", 1)]), 1.5).is_err());
    }

    #[test]
    fn sampling_a_single_language() {
        let w = SamplingWeights::single(lang("en"));
        let mut r = rng::seeded(3);
        for _ in 0..100 {
            assert_eq!(sample_language(&w, &mut r), lang("en"));
        }
    }

    #[test]
    fn fair_coin_counts_stay_in_band() {
        let c = with_counts(&[("aa", 5), ("bb", 5)]);
        let w = rebalance(&c, 0.7).unwrap();
        let mut r = rng::seeded(11);
        let hits = (0..10_000)
            .filter(|_| sample_language(&w, &mut r) == lang("aa"))
            .count();
        assert!((4700..=5300).contains(&hits), "{hits}");
    }

    #[test]
    fn parallel_corpus_parsing() {
        let p = ParallelCorpus::parse(lang("xx"), lang("en"), "a b\tc d\n\ne\tf\n").unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.is_authentic());
        assert!(ParallelCorpus::parse(lang("xx"), lang("en"), "no tab\n").is_err());
        assert!(ParallelCorpus::parse(lang("xx"), lang("en"), " \t y\n").is_err());
        assert!(ParallelCorpus::parse(lang("xx"), lang("en"), "").is_err());
    }
}
