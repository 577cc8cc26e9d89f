//! Instance packing and the noise function: sentence permutation followed by
//! Poisson span masking, producing `(g(X), X)` training triples.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};

use crate::corpus::{LanguageCode, MonolingualCorpus};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokenizer::{TokenId, Vocabulary};

pub const DEFAULT_MAX_LEN: usize = 512;

/// A block of consecutive sentences from one document, each sentence
/// terminated by `</S>`, closed by the language id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub lang: LanguageCode,
    pub lid: TokenId,
    pub eos: TokenId,
    /// Sentence encodings, each ending with `eos`.
    pub sentences: Vec<Vec<TokenId>>,
}

impl Instance {
    /// Number of tokens including the trailing language id.
    pub fn total_len(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum::<usize>() + 1
    }

    /// Flattened `X`: sentences in order followed by the language id.
    pub fn tokens(&self) -> Vec<TokenId> {
        let mut out: Vec<TokenId> = self.sentences.iter().flatten().copied().collect();
        out.push(self.lid);
        out
    }
}

/// Result of packing a corpus.
#[derive(Clone, Debug, Default)]
pub struct Packed {
    pub instances: Vec<Instance>,
    /// How many sentences had to be cut to fit into `max_len`.
    pub truncated: usize,
}

/// Greedily packs consecutive sentences of each document while
/// `running + next + 1 <= max_len`; instances never span documents.
/// A sentence that alone exceeds `max_len - 1` tokens (with its `</S>`) is
/// truncated and counted.
pub fn pack(corpus: &MonolingualCorpus, vocab: &Vocabulary, max_len: usize) -> Result<Packed> {
    if max_len < 3 {
        return Err(Error::Config(format!(
            "max_len {max_len} leaves no room for a sentence"
        )));
    }
    let lid = vocab.lid(&corpus.lang)?;
    let eos = vocab.specials.eos;
    let mut packed = Packed::default();
    for doc in &corpus.documents {
        let mut current: Vec<Vec<TokenId>> = Vec::new();
        let mut running = 0;
        for sentence in doc {
            let mut ids = vocab.encode(sentence);
            if ids.len() + 2 > max_len {
                ids.truncate(max_len - 2);
                packed.truncated += 1;
            }
            ids.push(eos);
            if !current.is_empty() && running + ids.len() + 1 > max_len {
                packed.instances.push(Instance {
                    lang: corpus.lang.clone(),
                    lid,
                    eos,
                    sentences: std::mem::take(&mut current),
                });
                running = 0;
            }
            running += ids.len();
            current.push(ids);
        }
        if !current.is_empty() {
            packed.instances.push(Instance {
                lang: corpus.lang.clone(),
                lid,
                eos,
                sentences: current,
            });
        }
    }
    if packed.truncated > 0 {
        log::warn!(
            "{}: truncated {} overlong sentences to fit max_len {max_len}",
            corpus.lang,
            packed.truncated
        );
    }
    Ok(packed)
}

/// Uniformly permutes the sentence order.
pub fn permute_sentences(inst: &Instance, rng: &mut Rng) -> Instance {
    let mut out = inst.clone();
    out.sentences.shuffle(rng);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Fraction of words to remove.
    pub mask_ratio: f64,
    /// Poisson mean of span lengths, in words.
    pub span_lambda: f64,
    pub permute_sentences: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            mask_ratio: 0.35,
            span_lambda: 3.5,
            permute_sentences: true,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "mask_ratio {} not in [0, 1)",
                self.mask_ratio
            )));
        }
        if self.span_lambda.is_nan() || self.span_lambda <= 0.0 {
            return Err(Error::Config(format!(
                "span_lambda {} must be positive",
                self.span_lambda
            )));
        }
        Ok(())
    }

    /// No noise at all: the denoising task degenerates to copying.
    pub fn identity() -> Self {
        NoiseConfig {
            mask_ratio: 0.0,
            span_lambda: 3.5,
            permute_sentences: false,
        }
    }
}

/// Bookkeeping from one masking pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskStats {
    pub words: usize,
    pub words_masked: usize,
    pub spans: usize,
    /// Zero-length spans: a mask inserted without removing anything.
    pub insertions: usize,
    /// Span lengths as drawn, before clipping to the remaining budget.
    pub raw_span_lengths: Vec<u64>,
}

/// A word: a run of tokens starting at a word-initial token.
struct Word {
    sentence: usize,
    start: usize,
    end: usize,
}

fn words_of(sentences: &[Vec<TokenId>], vocab: &Vocabulary) -> Vec<Word> {
    let specials = &vocab.specials;
    let mut words = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        let mut open: Option<usize> = None;
        for (ti, &t) in s.iter().enumerate() {
            if specials.is_special(t) && t != specials.unk {
                if let Some(st) = open.take() {
                    words.push(Word {
                        sentence: si,
                        start: st,
                        end: ti,
                    });
                }
                continue;
            }
            if open.is_none() || vocab.is_word_start(t) {
                if let Some(st) = open.take() {
                    words.push(Word {
                        sentence: si,
                        start: st,
                        end: ti,
                    });
                }
                open = Some(ti);
            }
        }
        if let Some(st) = open {
            words.push(Word {
                sentence: si,
                start: st,
                end: s.len(),
            });
        }
    }
    words
}

/// Removes word spans and replaces each with a single `<mask>`.
///
/// Span lengths are drawn from `Poisson(span_lambda)` and clipped to the
/// remaining word budget `ceil(mask_ratio * words)`; a span starts at a
/// uniformly chosen unmasked word and extends over following unmasked
/// words of the same sentence. A zero-length span inserts a mask before
/// the chosen word and consumes no budget. `</S>` and language ids are
/// never masked.
pub fn mask_spans(
    sentences: &[Vec<TokenId>],
    vocab: &Vocabulary,
    cfg: &NoiseConfig,
    rng: &mut Rng,
) -> (Vec<Vec<TokenId>>, MaskStats) {
    let words = words_of(sentences, vocab);
    let mut stats = MaskStats {
        words: words.len(),
        ..MaskStats::default()
    };
    if cfg.mask_ratio <= 0.0 || words.is_empty() {
        return (sentences.to_vec(), stats);
    }
    let budget = ((cfg.mask_ratio * words.len() as f64).ceil() as usize).min(words.len());
    let poisson = Poisson::new(cfg.span_lambda).expect("validated lambda");

    // span id per word, and inserted masks before each word
    let mut span_of: Vec<Option<usize>> = vec![None; words.len()];
    let mut inserted = vec![0usize; words.len()];
    let mut consumed = 0;
    let mut guard = 0;
    while consumed < budget && guard < 100 * words.len() + 100 {
        guard += 1;
        let raw = poisson.sample(rng) as u64;
        stats.raw_span_lengths.push(raw);
        let len = (raw as usize).min(budget - consumed);
        let free: Vec<usize> = (0..words.len()).filter(|&w| span_of[w].is_none()).collect();
        if free.is_empty() {
            break;
        }
        let start = free[rng.random_range(0..free.len())];
        let span = stats.spans;
        stats.spans += 1;
        if len == 0 {
            inserted[start] += 1;
            stats.insertions += 1;
            continue;
        }
        let mut w = start;
        let mut taken = 0;
        while taken < len
            && w < words.len()
            && span_of[w].is_none()
            && words[w].sentence == words[start].sentence
        {
            span_of[w] = Some(span);
            taken += 1;
            w += 1;
        }
        consumed += taken;
    }
    stats.words_masked = consumed;

    let mask = vocab.specials.mask;
    let mut out: Vec<Vec<TokenId>> = Vec::with_capacity(sentences.len());
    let mut wi = 0;
    for (si, s) in sentences.iter().enumerate() {
        let mut o = Vec::with_capacity(s.len());
        let mut ti = 0;
        let mut last_span: Option<usize> = None;
        while ti < s.len() {
            if wi < words.len() && words[wi].sentence == si && words[wi].start == ti {
                let w = &words[wi];
                o.extend(std::iter::repeat_n(mask, inserted[wi]));
                match span_of[wi] {
                    Some(sp) => {
                        if last_span != Some(sp) {
                            o.push(mask);
                        }
                        last_span = Some(sp);
                    }
                    None => {
                        o.extend_from_slice(&s[w.start..w.end]);
                        last_span = None;
                    }
                }
                ti = w.end;
                wi += 1;
            } else {
                o.push(s[ti]);
                last_span = None;
                ti += 1;
            }
        }
        out.push(o);
    }
    (out, stats)
}

/// One training triple. `decoder_input` is `target` shifted right by one
/// position, starting with the language id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoisedExample {
    pub source: Vec<TokenId>,
    pub decoder_input: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl NoisedExample {
    /// Builds the shifted decoder input for `target`, starting from `start`.
    pub fn new(source: Vec<TokenId>, start: TokenId, target: Vec<TokenId>) -> Self {
        let mut decoder_input = Vec::with_capacity(target.len());
        decoder_input.push(start);
        decoder_input.extend_from_slice(&target[..target.len().saturating_sub(1)]);
        NoisedExample {
            source,
            decoder_input,
            target,
        }
    }

    /// Debug rendering: source, decoder input and target, tab separated.
    pub fn render(&self, vocab: &Vocabulary) -> Result<String> {
        Ok(format!(
            "{}\t{}\t{}",
            vocab.decode(&self.source)?,
            vocab.decode(&self.decoder_input)?,
            vocab.decode(&self.target)?
        ))
    }
}

/// Permute (when enabled) then mask; the target is the untouched instance.
pub fn make_example(
    inst: &Instance,
    vocab: &Vocabulary,
    cfg: &NoiseConfig,
    rng: &mut Rng,
) -> (NoisedExample, MaskStats) {
    let permuted = if cfg.permute_sentences {
        permute_sentences(inst, rng)
    } else {
        inst.clone()
    };
    let (masked, stats) = mask_spans(&permuted.sentences, vocab, cfg, rng);
    let mut source: Vec<TokenId> = masked.into_iter().flatten().collect();
    source.push(inst.lid);
    (NoisedExample::new(source, inst.lid, inst.tokens()), stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusCollection;
    use crate::rng;
    use crate::tokenizer::{train_vocab, Alphabet, VocabConfig};
    use std::collections::HashMap;

    fn lang() -> LanguageCode {
        LanguageCode::new("en").unwrap()
    }

    /// Vocabulary where every word of `words` is one token.
    fn word_vocab(text: &[&str]) -> Vocabulary {
        let c = MonolingualCorpus::new(lang(), vec![text.iter().map(|s| s.to_string()).collect()])
            .unwrap();
        let coll = CorpusCollection::new(vec![c]).unwrap();
        train_vocab(
            &coll,
            &VocabConfig {
                target_size: 400,
                spare_lids: 0,
                alphabet: Alphabet::Observed,
            },
        )
        .unwrap()
    }

    fn instance(vocab: &Vocabulary, sents: &[&str]) -> Instance {
        let eos = vocab.specials.eos;
        Instance {
            lang: lang(),
            lid: vocab.lid(&lang()).unwrap(),
            eos,
            sentences: sents
                .iter()
                .map(|s| {
                    let mut v = vocab.encode(s);
                    v.push(eos);
                    v
                })
                .collect(),
        }
    }

    #[test]
    fn single_sentence_packs_with_eos_and_lid() {
        let v = word_vocab(&["hi there"]);
        let c = MonolingualCorpus::new(lang(), vec![vec!["hi there".into()]]).unwrap();
        let p = pack(&c, &v, 512).unwrap();
        assert_eq!(p.instances.len(), 1);
        let toks = p.instances[0].tokens();
        let mut expected = v.encode("hi there");
        expected.push(v.specials.eos);
        expected.push(v.lid(&lang()).unwrap());
        assert_eq!(toks, expected);
        assert_eq!(p.instances[0].total_len(), toks.len());
    }

    #[test]
    fn greedy_packing_by_length() {
        // Single-byte alphabet; 199 'a's plus the leading space encode to
        // 200 tokens with no merges.
        let s: String = "a".repeat(199);
        let c =
            MonolingualCorpus::new(lang(), vec![vec![s.clone(), s.clone(), s.clone()]]).unwrap();
        let coll = CorpusCollection::new(vec![c.clone()]).unwrap();
        let v = train_vocab(
            &coll,
            &VocabConfig {
                target_size: 8,
                spare_lids: 0,
                alphabet: Alphabet::Observed,
            },
        )
        .unwrap();
        assert_eq!(v.encode(&s).len(), 200);
        let p = pack(&c, &v, 512).unwrap();
        let counts: Vec<usize> = p.instances.iter().map(|i| i.sentences.len()).collect();
        assert_eq!(counts, vec![2, 1]);
        assert!(p.instances.iter().all(|i| i.total_len() <= 512));
    }

    #[test]
    fn documents_are_never_mixed() {
        let v = word_vocab(&["a b", "c d"]);
        let c =
            MonolingualCorpus::new(lang(), vec![vec!["a b".into()], vec!["c d".into()]]).unwrap();
        let p = pack(&c, &v, 512).unwrap();
        assert_eq!(p.instances.len(), 2);
        assert_eq!(p.instances[0].sentences.len(), 1);
    }

    #[test]
    fn overlong_sentences_are_truncated_and_counted() {
        let v = word_vocab(&["x y z w v u t s"]);
        let c = MonolingualCorpus::new(lang(), vec![vec!["x y z w v u t s".into(), "x".into()]])
            .unwrap();
        let p = pack(&c, &v, 5).unwrap();
        assert_eq!(p.truncated, 1);
        assert!(p.instances.iter().all(|i| i.total_len() <= 5));
        let n: usize = p.instances.iter().map(|i| i.sentences.len()).sum();
        assert_eq!(n, 2);
    }

    #[test]
    fn permutation_of_one_sentence_is_identity() {
        let v = word_vocab(&["a b c"]);
        let inst = instance(&v, &["a b c"]);
        let mut r = rng::seeded(1);
        assert_eq!(permute_sentences(&inst, &mut r), inst);
    }

    #[test]
    fn permutation_preserves_tokens() {
        let v = word_vocab(&["a b c", "d e", "f"]);
        let inst = instance(&v, &["a b c", "d e", "f"]);
        let mut r = rng::seeded(5);
        let p = permute_sentences(&inst, &mut r);
        let mut a = inst.tokens();
        let mut b = p.tokens();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_mask_ratio_is_identity() {
        let v = word_vocab(&["a b c d e f"]);
        let inst = instance(&v, &["a b c d e f", "a b"]);
        let cfg = NoiseConfig {
            mask_ratio: 0.0,
            ..NoiseConfig::default()
        };
        let (out, stats) = mask_spans(&inst.sentences, &v, &cfg, &mut rng::seeded(3));
        assert_eq!(out, inst.sentences);
        assert_eq!(stats.words_masked, 0);
    }

    #[test]
    fn masking_respects_sentence_boundaries_and_order() {
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let v = word_vocab(&[&text]);
        let inst = instance(&v, &[&text, &text]);
        let cfg = NoiseConfig::default();
        for seed in 0..50 {
            let (ex, stats) = make_example(&inst, &v, &cfg, &mut rng::seeded(seed));
            let eos = v.specials.eos;
            assert_eq!(ex.source.iter().filter(|&&t| t == eos).count(), 2);
            assert_eq!(*ex.source.last().unwrap(), inst.lid);
            assert!(!ex.target.contains(&v.specials.mask));
            assert_eq!(stats.words_masked, 21);
            // unmasked tokens keep their relative order within each sentence
            let unmasked: Vec<TokenId> = ex
                .source
                .iter()
                .copied()
                .filter(|&t| t != v.specials.mask && t != eos && t != inst.lid)
                .collect();
            let mut it = ex.target.iter();
            // permutation may swap the two (identical) sentences; order holds regardless
            assert!(unmasked.iter().all(|u| it.any(|t| t == u)));
            assert!(ex.source.len() <= ex.target.len() + stats.insertions);
        }
    }

    #[test]
    fn example_obeys_shift_law_and_is_deterministic() {
        let v = word_vocab(&["the cat sat on the mat", "a dog ran"]);
        let inst = instance(&v, &["the cat sat on the mat", "a dog ran"]);
        let cfg = NoiseConfig::default();
        let (a, _) = make_example(&inst, &v, &cfg, &mut rng::seeded(9));
        let (b, _) = make_example(&inst, &v, &cfg, &mut rng::seeded(9));
        assert_eq!(a, b);
        assert_eq!(a.decoder_input[0], inst.lid);
        for t in 1..a.target.len() {
            assert_eq!(a.decoder_input[t], a.target[t - 1]);
        }
        let (c, _) = make_example(&inst, &v, &NoiseConfig::identity(), &mut rng::seeded(9));
        assert_eq!(c.source, c.target);
        assert!(c.render(&v).unwrap().split('\t').count() == 3);
    }

    #[test]
    fn all_orderings_of_three_sentences_appear() {
        let v = word_vocab(&["a", "b", "c"]);
        let inst = instance(&v, &["a", "b", "c"]);
        let mut counts: HashMap<Vec<Vec<TokenId>>, usize> = HashMap::new();
        for seed in 0..6000 {
            let p = permute_sentences(&inst, &mut rng::seeded(seed));
            *counts.entry(p.sentences).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for &c in counts.values() {
            // binomial(6000, 1/6): sd ≈ 28.9
            assert!((1000.0 - c as f64).abs() < 4.0 * 28.9, "{c}");
        }
    }
}
