use crate::error::{Error, Result};
use crate::noising::NoisedExample;
use crate::tokenizer::{TokenId, PAD};

/// A padded batch of examples, row-major with trailing `<pad>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub source: Vec<TokenId>,
    pub source_lengths: Vec<usize>,
    pub decoder_input: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub target_lengths: Vec<usize>,
}

impl Batch {
    pub fn new(examples: &[NoisedExample]) -> Result<Batch> {
        if examples.is_empty() {
            return Err(Error::Empty("batch"));
        }
        for ex in examples {
            if ex.source.is_empty() {
                return Err(Error::Empty("source sequence"));
            }
            if ex.target.is_empty() {
                return Err(Error::Empty("target sequence"));
            }
            if ex.decoder_input.len() != ex.target.len() {
                return Err(Error::LengthMismatch {
                    what: "decoder input vs target",
                    left: ex.decoder_input.len(),
                    right: ex.target.len(),
                });
            }
        }
        let size = examples.len();
        let src_len = examples.iter().map(|e| e.source.len()).max().unwrap_or(0);
        let tgt_len = examples.iter().map(|e| e.target.len()).max().unwrap_or(0);
        let pad = |seq: &[TokenId], len: usize, out: &mut Vec<TokenId>| {
            out.extend_from_slice(seq);
            out.extend(std::iter::repeat_n(PAD, len - seq.len()));
        };
        let mut source = Vec::with_capacity(size * src_len);
        let mut decoder_input = Vec::with_capacity(size * tgt_len);
        let mut target = Vec::with_capacity(size * tgt_len);
        for ex in examples {
            pad(&ex.source, src_len, &mut source);
            pad(&ex.decoder_input, tgt_len, &mut decoder_input);
            pad(&ex.target, tgt_len, &mut target);
        }
        Ok(Batch {
            size,
            src_len,
            tgt_len,
            source,
            source_lengths: examples.iter().map(|e| e.source.len()).collect(),
            decoder_input,
            target,
            target_lengths: examples.iter().map(|e| e.target.len()).collect(),
        })
    }

    /// True on real source tokens.
    pub fn source_mask(&self) -> Vec<bool> {
        mask(self.size, self.src_len, &self.source_lengths)
    }

    /// True on target positions that count toward the loss.
    pub fn loss_mask(&self) -> Vec<bool> {
        mask(self.size, self.tgt_len, &self.target_lengths)
    }

    pub fn target_tokens(&self) -> usize {
        self.target_lengths.iter().sum()
    }

    /// Appends `extra` pad columns to every source row.
    pub fn pad_source(&self, extra: usize) -> Batch {
        let new_len = self.src_len + extra;
        let mut source = Vec::with_capacity(self.size * new_len);
        for row in self.source.chunks(self.src_len) {
            source.extend_from_slice(row);
            source.extend(std::iter::repeat_n(PAD, extra));
        }
        Batch {
            src_len: new_len,
            source,
            ..self.clone()
        }
    }
}

fn mask(size: usize, len: usize, lengths: &[usize]) -> Vec<bool> {
    (0..size * len)
        .map(|i| i % len < lengths[i / len])
        .collect()
}
