use ndarray::{s, Array2, ArrayView2};

use super::ops;
use super::{view1, view2, Scalar, Seq2SeqModel};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, PAD};

/// Encoder output for one source plus the projected cross-attention keys
/// and values of every decoder layer.
#[derive(Clone, Debug)]
pub struct EncodedSource<T> {
    pub states: Array2<T>,
    cross_kv: Vec<Array2<T>>,
}

impl<T> EncodedSource<T> {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Self-attention key/value cache of one decoding hypothesis.
#[derive(Clone, Debug)]
pub struct DecoderState<T> {
    pos: usize,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

impl<T> DecoderState<T> {
    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

impl<T: Scalar> Seq2SeqModel<T> {
    pub fn encode_source(&self, source: &[TokenId]) -> Result<EncodedSource<T>> {
        Ok(self
            .encode_many(&[source.to_vec()])?
            .pop()
            .expect("one source"))
    }

    /// Encodes several sources in one padded pass.
    pub fn encode_many(&self, sources: &[Vec<TokenId>]) -> Result<Vec<EncodedSource<T>>> {
        let max = sources.iter().map(Vec::len).max().unwrap_or(0);
        if sources.iter().any(Vec::is_empty) {
            return Err(Error::Empty("source sequence"));
        }
        self.check_len(max)?;
        let mut ids = Vec::with_capacity(sources.len() * max);
        for s in sources {
            self.check_ids(s)?;
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD, max - s.len()));
        }
        let lengths: Vec<usize> = sources.iter().map(Vec::len).collect();
        let (out, _) = self.encode_batch(&ids, max, &lengths, 0.0, None);
        let p = &self.params;
        let kv_all: Vec<Array2<T>> = self
            .layout
            .dec
            .iter()
            .map(|l| ops::linear(&out.view(), &view2(p, l.cross.wkv), &view1(p, l.cross.bkv)))
            .collect();
        Ok(lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| {
                let rows = s![b * max..b * max + len, ..];
                EncodedSource {
                    states: out.slice(rows).to_owned(),
                    cross_kv: kv_all.iter().map(|kv| kv.slice(rows).to_owned()).collect(),
                }
            })
            .collect())
    }

    pub fn decoder_start(&self) -> DecoderState<T> {
        let n = self.config.dec_layers;
        DecoderState {
            pos: 0,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
        }
    }

    /// Feeds one token to each hypothesis and returns next-token logits,
    /// one row per hypothesis.
    pub fn decode_step(
        &self,
        sources: &[&EncodedSource<T>],
        states: &mut [DecoderState<T>],
        tokens: &[TokenId],
    ) -> Result<Array2<T>> {
        let n = tokens.len();
        if sources.len() != n || states.len() != n {
            return Err(Error::LengthMismatch {
                what: "decode step inputs",
                left: n,
                right: states.len().min(sources.len()),
            });
        }
        self.check_ids(tokens)?;
        for st in states.iter() {
            self.check_len(st.pos + 1)?;
        }
        let p = &self.params;
        let l = &self.layout;
        let d = self.config.d_model;
        let heads = self.config.heads;
        let tok = view2(p, l.tokens);
        let pos = view2(p, l.dec_pos);
        let mut x = Array2::zeros((n, d));
        for (r, mut row) in x.rows_mut().into_iter().enumerate() {
            row.assign(&tok.row(tokens[r] as usize));
            row += &pos.row(states[r].pos);
        }
        for (li, layer) in l.dec.iter().enumerate() {
            let (a, _) = ops::layer_norm(
                &x.view(),
                &view1(p, layer.ln_self.g),
                &view1(p, layer.ln_self.b),
            );
            let qkv = ops::linear(
                &a.view(),
                &view2(p, layer.attn.wqkv),
                &view1(p, layer.attn.bqkv),
            );
            let mut ctx = Array2::zeros((n, d));
            for (r, st) in states.iter_mut().enumerate() {
                st.keys[li].extend(qkv.slice(s![r, d..2 * d]).iter().copied());
                st.values[li].extend(qkv.slice(s![r, 2 * d..]).iter().copied());
                let t = st.pos + 1;
                let k = ArrayView2::from_shape((t, d), &st.keys[li]).expect("cache shape");
                let v = ArrayView2::from_shape((t, d), &st.values[li]).expect("cache shape");
                let (c, _) = ops::attention(
                    &qkv.slice(s![r..r + 1, ..d]),
                    &k,
                    &v,
                    1,
                    t,
                    &[t],
                    heads,
                    false,
                );
                ctx.row_mut(r).assign(&c.row(0));
            }
            x += &ops::linear(
                &ctx.view(),
                &view2(p, layer.attn.wo),
                &view1(p, layer.attn.bo),
            );

            let (a, _) = ops::layer_norm(
                &x.view(),
                &view1(p, layer.ln_cross.g),
                &view1(p, layer.ln_cross.b),
            );
            let q = ops::linear(
                &a.view(),
                &view2(p, layer.cross.wq),
                &view1(p, layer.cross.bq),
            );
            let mut ctx = Array2::zeros((n, d));
            for (r, src) in sources.iter().enumerate() {
                let kv = &src.cross_kv[li];
                let s_len = kv.nrows();
                let (c, _) = ops::attention(
                    &q.slice(s![r..r + 1, ..]),
                    &kv.slice(s![.., ..d]),
                    &kv.slice(s![.., d..]),
                    1,
                    s_len,
                    &[s_len],
                    heads,
                    false,
                );
                ctx.row_mut(r).assign(&c.row(0));
            }
            x += &ops::linear(
                &ctx.view(),
                &view2(p, layer.cross.wo),
                &view1(p, layer.cross.bo),
            );

            let (a, _) = ops::layer_norm(
                &x.view(),
                &view1(p, layer.ln_ffn.g),
                &view1(p, layer.ln_ffn.b),
            );
            let h = ops::gelu(&ops::linear(
                &a.view(),
                &view2(p, layer.ffn.w1),
                &view1(p, layer.ffn.b1),
            ));
            x += &ops::linear(&h.view(), &view2(p, layer.ffn.w2), &view1(p, layer.ffn.b2));
        }
        if let Some(ln) = &l.dec_ln {
            x = ops::layer_norm(&x.view(), &view1(p, ln.g), &view1(p, ln.b)).0;
        }
        for st in states.iter_mut() {
            st.pos += 1;
        }
        Ok(x.dot(&tok.t()))
    }
}
