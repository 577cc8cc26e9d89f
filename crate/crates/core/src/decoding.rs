//! Greedy and beam-search decoding, vocabulary constraints, and document
//! decoding that stops on the language id.

use std::cmp::Ordering;

use ndarray::ArrayView1;

use crate::corpus::MonolingualCorpus;
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncodedSource, Scalar, Seq2SeqModel};
use crate::tokenizer::{TokenId, Vocabulary, EOS};

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    /// `allowed[v]` is true when token `v` may be emitted.
    pub allowed: Option<Vec<bool>>,
    /// First decoder input (the target language id).
    pub start_token: TokenId,
    pub stop_token: TokenId,
}

impl BeamConfig {
    /// Beam 5, length penalty 1, starting and stopping on `lid`.
    pub fn new(lid: TokenId, max_len: usize) -> Self {
        BeamConfig {
            beam_size: 5,
            max_len,
            length_penalty: 1.0,
            allowed: None,
            start_token: lid,
            stop_token: lid,
        }
    }

    pub fn greedy(lid: TokenId, max_len: usize) -> Self {
        BeamConfig {
            beam_size: 1,
            ..Self::new(lid, max_len)
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.beam_size == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "beam_size and max_len must be at least 1".into(),
            ));
        }
        if self.stop_token as usize >= vocab_size {
            return Err(Error::TokenOutOfRange {
                id: self.stop_token,
                size: vocab_size,
            });
        }
        if let Some(mask) = &self.allowed {
            if mask.len() != vocab_size {
                return Err(Error::LengthMismatch {
                    what: "allowed mask vs vocabulary",
                    left: mask.len(),
                    right: vocab_size,
                });
            }
            if !mask[self.stop_token as usize] {
                return Err(Error::Config(
                    "allowed mask must permit the stop token".into(),
                ));
            }
        }
        Ok(())
    }

    fn normalized(&self, h: &Hypothesis) -> f64 {
        h.score / (h.ids.len().max(1) as f64).powf(self.length_penalty)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, ending with the stop token when `stopped`.
    pub ids: Vec<TokenId>,
    /// Sum of per-token log-probabilities.
    pub score: f64,
    /// Ended by the stop token or by reaching `max_len`.
    pub finished: bool,
    /// Ended by the stop token.
    pub stopped: bool,
}

impl Hypothesis {
    /// Emitted ids without the trailing stop token.
    pub fn content(&self) -> &[TokenId] {
        if self.stopped {
            &self.ids[..self.ids.len() - 1]
        } else {
            &self.ids
        }
    }
}

#[derive(Clone, Debug)]
pub struct BeamOutput {
    pub best: Hypothesis,
    /// Finished hypotheses, best first.
    pub beam: Vec<Hypothesis>,
}

/// Log-softmax of `logits` restricted to allowed tokens, in `f64`.
pub fn log_probs<T: Scalar>(logits: ArrayView1<'_, T>, allowed: Option<&[bool]>) -> Vec<f64> {
    let ok = |v: usize| allowed.is_none_or(|m| m[v]);
    let vals: Vec<f64> = logits.iter().map(|x| x.to_f64().expect("finite")).collect();
    let m = vals
        .iter()
        .enumerate()
        .filter(|&(v, _)| ok(v))
        .fold(f64::NEG_INFINITY, |a, (_, &x)| a.max(x));
    let z: f64 = vals
        .iter()
        .enumerate()
        .filter(|&(v, _)| ok(v))
        .map(|(_, &x)| (x - m).exp())
        .sum();
    let lz = m + z.ln();
    vals.iter()
        .enumerate()
        .map(|(v, &x)| if ok(v) { x - lz } else { f64::NEG_INFINITY })
        .collect()
}

/// Highest-probability allowed token; ties go to the lower id.
fn argmax(lp: &[f64]) -> TokenId {
    let mut best = 0;
    for (v, &x) in lp.iter().enumerate() {
        if x > lp[best] {
            best = v;
        }
    }
    best as TokenId
}

/// Greedy decoding of one source.
pub fn greedy<T: Scalar>(
    model: &Seq2SeqModel<T>,
    source: &[TokenId],
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    Ok(greedy_batch(model, &[source.to_vec()], cfg)?
        .pop()
        .expect("one source"))
}

/// Greedy decoding of many sources, stepping all unfinished rows together.
pub fn greedy_batch<T: Scalar>(
    model: &Seq2SeqModel<T>,
    sources: &[Vec<TokenId>],
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate(model.config().vocab_size)?;
    let encoded = model.encode_many(sources)?;
    let n = sources.len();
    let mut hyps = vec![
        Hypothesis {
            ids: Vec::new(),
            score: 0.0,
            finished: false,
            stopped: false,
        };
        n
    ];
    let mut states: Vec<DecoderState<T>> = (0..n).map(|_| model.decoder_start()).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut last = vec![cfg.start_token; n];
    let allowed = cfg.allowed.as_deref();
    while !active.is_empty() {
        let srcs: Vec<&EncodedSource<T>> = active.iter().map(|&i| &encoded[i]).collect();
        let toks: Vec<TokenId> = active.iter().map(|&i| last[i]).collect();
        let mut st: Vec<DecoderState<T>> = active
            .iter()
            .map(|&i| std::mem::replace(&mut states[i], model.decoder_start()))
            .collect();
        let logits = model.decode_step(&srcs, &mut st, &toks)?;
        let mut still = Vec::with_capacity(active.len());
        for ((r, &i), s) in active.iter().enumerate().zip(st) {
            let lp = log_probs(logits.row(r), allowed);
            let tok = argmax(&lp);
            let h = &mut hyps[i];
            h.ids.push(tok);
            h.score += lp[tok as usize];
            if tok == cfg.stop_token {
                h.finished = true;
                h.stopped = true;
            } else if h.ids.len() >= cfg.max_len {
                h.finished = true;
            } else {
                states[i] = s;
                last[i] = tok;
                still.push(i);
            }
        }
        active = still;
    }
    Ok(hyps)
}

struct Live<T> {
    ids: Vec<TokenId>,
    score: f64,
    state: DecoderState<T>,
}

/// Beam search: each step expands every live hypothesis over the allowed
/// tokens, keeps the `2k` best candidates, moves those ending in the stop
/// token (among the top `k`) to the finished list and continues with the `k`
/// best others. Stops once `k` hypotheses have finished or nothing is live.
pub fn beam_search<T: Scalar>(
    model: &Seq2SeqModel<T>,
    source: &[TokenId],
    cfg: &BeamConfig,
) -> Result<BeamOutput> {
    cfg.validate(model.config().vocab_size)?;
    let enc = model.encode_source(source)?;
    let k = cfg.beam_size;
    let allowed = cfg.allowed.as_deref();
    let mut live = vec![Live {
        ids: Vec::new(),
        score: 0.0,
        state: model.decoder_start(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() && finished.len() < k {
        let srcs = vec![&enc; live.len()];
        let toks: Vec<TokenId> = live
            .iter()
            .map(|h| h.ids.last().copied().unwrap_or(cfg.start_token))
            .collect();
        let mut states: Vec<DecoderState<T>> = live.iter().map(|h| h.state.clone()).collect();
        let logits = model.decode_step(&srcs, &mut states, &toks)?;
        let mut cands: Vec<(f64, usize, TokenId)> = Vec::new();
        for (r, h) in live.iter().enumerate() {
            let lp = log_probs(logits.row(r), allowed);
            for (v, &x) in lp.iter().enumerate() {
                if x.is_finite() {
                    cands.push((h.score + x, r, v as TokenId));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(2 * k);
        let mut next = Vec::with_capacity(k);
        for (rank, &(score, r, tok)) in cands.iter().enumerate() {
            let mut ids = live[r].ids.clone();
            ids.push(tok);
            if tok == cfg.stop_token {
                if rank < k {
                    finished.push(Hypothesis {
                        ids,
                        score,
                        finished: true,
                        stopped: true,
                    });
                }
            } else if next.len() < k {
                next.push(Live {
                    ids,
                    score,
                    state: states[r].clone(),
                });
            }
        }
        live = Vec::with_capacity(next.len());
        for h in next {
            if h.ids.len() >= cfg.max_len {
                finished.push(Hypothesis {
                    ids: h.ids,
                    score: h.score,
                    finished: true,
                    stopped: false,
                });
            } else {
                live.push(h);
            }
        }
    }
    finished.sort_by(|a, b| {
        cfg.normalized(b)
            .partial_cmp(&cfg.normalized(a))
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.ids.cmp(&b.ids))
    });
    let best = finished.first().cloned().ok_or(Error::Empty("beam"))?;
    Ok(BeamOutput {
        best,
        beam: finished,
    })
}

/// Greedy when `beam_size` is 1, beam search otherwise.
pub fn decode<T: Scalar>(
    model: &Seq2SeqModel<T>,
    source: &[TokenId],
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    if cfg.beam_size == 1 {
        greedy(model, source, cfg)
    } else {
        Ok(beam_search(model, source, cfg)?.best)
    }
}

/// How the "rare in the target corpus" cut-off is measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FrequencyRule {
    /// Fraction of all token occurrences in the corpus.
    Relative(f64),
    /// Raw occurrence count.
    Absolute(u64),
}

impl Default for FrequencyRule {
    fn default() -> Self {
        FrequencyRule::Relative(0.01)
    }
}

/// Tokens frequent enough in `corpus` may be emitted; unobserved tokens
/// never; special tokens always.
pub fn build_allowed_mask(
    corpus: &MonolingualCorpus,
    vocab: &Vocabulary,
    rule: FrequencyRule,
) -> Vec<bool> {
    let mut counts = vec![0u64; vocab.size()];
    for sentence in corpus.sentences() {
        for id in vocab.encode(sentence) {
            counts[id as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let specials = &vocab.specials;
    counts
        .iter()
        .enumerate()
        .map(|(id, &c)| {
            specials.is_special(id as TokenId)
                || (c > 0
                    && match rule {
                        FrequencyRule::Relative(t) => c as f64 >= t * total as f64,
                        FrequencyRule::Absolute(n) => c >= n,
                    })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocumentDecode {
    /// Segments each terminated by `</S>` (terminator dropped).
    pub sentences: Vec<Vec<TokenId>>,
    /// Tokens after the last `</S>`.
    pub remainder: Vec<TokenId>,
    /// `max_len` was reached before the stop token.
    pub truncated: bool,
}

/// Splits emitted ids on `</S>`.
pub fn split_sentences(h: &Hypothesis) -> DocumentDecode {
    let mut sentences = Vec::new();
    let mut cur = Vec::new();
    for &id in h.content() {
        if id == EOS {
            sentences.push(std::mem::take(&mut cur));
        } else {
            cur.push(id);
        }
    }
    DocumentDecode {
        sentences,
        remainder: cur,
        truncated: !h.stopped,
    }
}

/// Translates one packed instance; the sentence count is whatever the model emits.
pub fn decode_document<T: Scalar>(
    model: &Seq2SeqModel<T>,
    source: &[TokenId],
    cfg: &BeamConfig,
) -> Result<DocumentDecode> {
    Ok(split_sentences(&decode(model, source, cfg)?))
}

/// Translates sentences, returning detokenized lines.
pub fn translate_sentences<T: Scalar>(
    model: &Seq2SeqModel<T>,
    vocab: &Vocabulary,
    sentences: &[String],
    src_lid: TokenId,
    cfg: &BeamConfig,
) -> Result<Vec<String>> {
    let max = model.config().max_positions;
    let sources: Vec<Vec<TokenId>> = sentences
        .iter()
        .map(|s| crate::training::translation_source(&vocab.encode(s), src_lid, max))
        .collect();
    let hyps = if cfg.beam_size == 1 {
        let mut out = Vec::with_capacity(sources.len());
        for chunk in sources.chunks(64) {
            out.extend(greedy_batch(model, chunk, cfg)?);
        }
        out
    } else {
        sources
            .iter()
            .map(|s| beam_search(model, s, cfg).map(|o| o.best))
            .collect::<Result<Vec<_>>>()?
    };
    hyps.iter()
        .map(|h| {
            let ids: Vec<TokenId> = h.content().iter().copied().filter(|&t| t != EOS).collect();
            vocab.decode_text(&ids)
        })
        .collect()
}

/// One line per sentence; documents separated by a blank line.
pub fn format_documents(docs: &[Vec<String>]) -> String {
    docs.iter()
        .map(|d| d.iter().map(|s| format!("{s}\n")).collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}
