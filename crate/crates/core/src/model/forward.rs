use ndarray::{concatenate, s, Array2, Array3, ArrayView2, Axis};

use super::layout::{CrossAttn, Ffn, Ln, SelfAttn};
use super::ops::{self, LnCache};
use super::{accumulate, view1, view2, Batch, Scalar, Seq2SeqModel};
use crate::error::Result;
use crate::rng::Rng;
use crate::tokenizer::TokenId;

pub(crate) struct SelfAttnCache<T> {
    ln: LnCache<T>,
    a: Array2<T>,
    qkv: Array2<T>,
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    drop: Option<Array2<T>>,
}

pub(crate) struct CrossCache<T> {
    ln: LnCache<T>,
    a: Array2<T>,
    q: Array2<T>,
    kv: Array2<T>,
    probs: Vec<Array2<T>>,
    ctx: Array2<T>,
    drop: Option<Array2<T>>,
}

pub(crate) struct FfnCache<T> {
    ln: LnCache<T>,
    a: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
    drop: Option<Array2<T>>,
}

struct EncCache<T> {
    attn: SelfAttnCache<T>,
    ffn: FfnCache<T>,
}

struct DecCache<T> {
    attn: SelfAttnCache<T>,
    cross: CrossCache<T>,
    ffn: FfnCache<T>,
}

pub(crate) struct EncoderTape<T> {
    drop: Option<Array2<T>>,
    layers: Vec<EncCache<T>>,
    final_ln: Option<LnCache<T>>,
}

/// Activations recorded by a training forward pass, consumed by
/// [`Seq2SeqModel::backward`].
pub struct ForwardPass<T> {
    /// Logits with one row per (item, target position): `(B * T, V)`.
    pub logits: Array2<T>,
    enc: EncoderTape<T>,
    enc_out: Array2<T>,
    dec_drop: Option<Array2<T>>,
    dec: Vec<DecCache<T>>,
    dec_final: Option<LnCache<T>>,
    dec_out: Array2<T>,
}

/// Attention shape parameters for one call.
#[derive(Clone, Copy)]
struct Shape<'a> {
    tq: usize,
    tk: usize,
    key_len: &'a [usize],
}

impl<T: Scalar> Seq2SeqModel<T> {
    /// Evaluation-mode logits of shape `(B, T_dec, V)`.
    pub fn forward(&self, batch: &Batch) -> Result<Array3<T>> {
        let pass = self.forward_train(batch, 0.0, None)?;
        let v = self.config.vocab_size;
        Ok(pass
            .logits
            .into_shape_with_order((batch.size, batch.tgt_len, v))
            .expect("logit shape"))
    }

    /// Forward pass that keeps activations for backprop. Dropout is active
    /// only when `dropout > 0` and an rng is supplied.
    pub fn forward_train(
        &self,
        batch: &Batch,
        dropout: f64,
        mut rng: Option<&mut Rng>,
    ) -> Result<ForwardPass<T>> {
        self.check_ids(&batch.source)?;
        self.check_ids(&batch.decoder_input)?;
        self.check_len(batch.src_len)?;
        self.check_len(batch.tgt_len)?;
        let (enc_out, enc) = self.encode_batch(
            &batch.source,
            batch.src_len,
            &batch.source_lengths,
            dropout,
            rng.as_deref_mut(),
        );

        let p = &self.params;
        let l = &self.layout;
        let heads = self.config.heads;
        let b = batch.size;
        let t = batch.tgt_len;
        let mut x = self.embed(&batch.decoder_input, t, l.dec_pos);
        let dec_drop = ops::dropout_mask(x.nrows(), x.ncols(), dropout, rng.as_deref_mut());
        ops::apply_mask(&mut x, &dec_drop);
        let full = vec![t; b];
        let self_shape = Shape {
            tq: t,
            tk: t,
            key_len: &full,
        };
        let cross_shape = Shape {
            tq: t,
            tk: batch.src_len,
            key_len: &batch.source_lengths,
        };
        let mut dec = Vec::with_capacity(l.dec.len());
        for layer in &l.dec {
            let (o, attn) = self_attn(
                p,
                &layer.ln_self,
                &layer.attn,
                &x,
                self_shape,
                heads,
                true,
                dropout,
                rng.as_deref_mut(),
            );
            x += &o;
            let (o, cross) = cross_attn(
                p,
                &layer.ln_cross,
                &layer.cross,
                &x,
                &enc_out,
                cross_shape,
                heads,
                dropout,
                rng.as_deref_mut(),
            );
            x += &o;
            let (o, ffn) = ffn(
                p,
                &layer.ln_ffn,
                &layer.ffn,
                &x,
                dropout,
                rng.as_deref_mut(),
            );
            x += &o;
            dec.push(DecCache { attn, cross, ffn });
        }
        let (dec_out, dec_final) = match &l.dec_ln {
            Some(ln) => {
                let (y, c) = ops::layer_norm(&x.view(), &view1(p, ln.g), &view1(p, ln.b));
                (y, Some(c))
            }
            None => (x, None),
        };
        let logits = dec_out.dot(&view2(p, l.tokens).t());
        Ok(ForwardPass {
            logits,
            enc,
            enc_out,
            dec_drop,
            dec,
            dec_final,
            dec_out,
        })
    }

    /// Token plus position embeddings for a row-major `(n, len)` id grid.
    pub(crate) fn embed(&self, ids: &[TokenId], len: usize, pos: super::Block) -> Array2<T> {
        let tok = view2(&self.params, self.layout.tokens);
        let pe = view2(&self.params, pos);
        let mut x = Array2::zeros((ids.len(), self.config.d_model));
        for (i, (mut row, &id)) in x.rows_mut().into_iter().zip(ids).enumerate() {
            row.assign(&tok.row(id as usize));
            row += &pe.row(i % len);
        }
        x
    }

    pub(crate) fn encode_batch(
        &self,
        source: &[TokenId],
        src_len: usize,
        lengths: &[usize],
        dropout: f64,
        mut rng: Option<&mut Rng>,
    ) -> (Array2<T>, EncoderTape<T>) {
        let p = &self.params;
        let l = &self.layout;
        let heads = self.config.heads;
        let mut x = self.embed(source, src_len, l.enc_pos);
        let drop = ops::dropout_mask(x.nrows(), x.ncols(), dropout, rng.as_deref_mut());
        ops::apply_mask(&mut x, &drop);
        let shape = Shape {
            tq: src_len,
            tk: src_len,
            key_len: lengths,
        };
        let mut layers = Vec::with_capacity(l.enc.len());
        for layer in &l.enc {
            let (o, attn) = self_attn(
                p,
                &layer.ln_attn,
                &layer.attn,
                &x,
                shape,
                heads,
                false,
                dropout,
                rng.as_deref_mut(),
            );
            x += &o;
            let (o, ffn) = ffn(
                p,
                &layer.ln_ffn,
                &layer.ffn,
                &x,
                dropout,
                rng.as_deref_mut(),
            );
            x += &o;
            layers.push(EncCache { attn, ffn });
        }
        let (out, final_ln) = match &l.enc_ln {
            Some(ln) => {
                let (y, c) = ops::layer_norm(&x.view(), &view1(p, ln.g), &view1(p, ln.b));
                (y, Some(c))
            }
            None => (x, None),
        };
        (
            out,
            EncoderTape {
                drop,
                layers,
                final_ln,
            },
        )
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the logits.
    pub fn backward(
        &self,
        batch: &Batch,
        pass: &ForwardPass<T>,
        dlogits: &ArrayView2<T>,
    ) -> Vec<T> {
        let p = &self.params;
        let l = &self.layout;
        let heads = self.config.heads;
        let mut g = vec![T::zero(); p.len()];
        let tok = view2(p, l.tokens);

        // Output projection shares storage with the token embedding.
        accumulate(&mut g, l.tokens, dlogits.t().dot(&pass.dec_out).iter());
        let mut dx = dlogits.dot(&tok);
        if let (Some(ln), Some(c)) = (&l.dec_ln, &pass.dec_final) {
            dx = ln_backward(p, &mut g, ln, c, &dx);
        }

        let b = batch.size;
        let t = batch.tgt_len;
        let full = vec![t; b];
        let self_shape = Shape {
            tq: t,
            tk: t,
            key_len: &full,
        };
        let cross_shape = Shape {
            tq: t,
            tk: batch.src_len,
            key_len: &batch.source_lengths,
        };
        let mut denc = Array2::zeros(pass.enc_out.raw_dim());
        for (layer, cache) in l.dec.iter().zip(&pass.dec).rev() {
            dx += &ffn_backward(p, &mut g, &layer.ln_ffn, &layer.ffn, &cache.ffn, &dx);
            let (dxc, de) = cross_backward(
                p,
                &mut g,
                &layer.ln_cross,
                &layer.cross,
                &cache.cross,
                &pass.enc_out,
                cross_shape,
                heads,
                &dx,
            );
            dx += &dxc;
            denc += &de;
            dx += &self_attn_backward(
                p,
                &mut g,
                &layer.ln_self,
                &layer.attn,
                &cache.attn,
                self_shape,
                heads,
                &dx,
            );
        }
        if let Some(m) = &pass.dec_drop {
            dx *= m;
        }
        self.embed_backward(&mut g, &batch.decoder_input, t, l.dec_pos, &dx);

        let mut dx = denc;
        let enc = &pass.enc;
        if let (Some(ln), Some(c)) = (&l.enc_ln, &enc.final_ln) {
            dx = ln_backward(p, &mut g, ln, c, &dx);
        }
        let shape = Shape {
            tq: batch.src_len,
            tk: batch.src_len,
            key_len: &batch.source_lengths,
        };
        for (layer, cache) in l.enc.iter().zip(&enc.layers).rev() {
            dx += &ffn_backward(p, &mut g, &layer.ln_ffn, &layer.ffn, &cache.ffn, &dx);
            dx += &self_attn_backward(
                p,
                &mut g,
                &layer.ln_attn,
                &layer.attn,
                &cache.attn,
                shape,
                heads,
                &dx,
            );
        }
        if let Some(m) = &enc.drop {
            dx *= m;
        }
        self.embed_backward(&mut g, &batch.source, batch.src_len, l.enc_pos, &dx);
        g
    }

    fn embed_backward(
        &self,
        g: &mut [T],
        ids: &[TokenId],
        len: usize,
        pos: super::Block,
        dx: &Array2<T>,
    ) {
        let d = self.config.d_model;
        let tok = self.layout.tokens;
        for (i, (row, &id)) in dx.rows().into_iter().zip(ids).enumerate() {
            let t0 = tok.offset + id as usize * d;
            let p0 = pos.offset + (i % len) * d;
            for (j, &v) in row.iter().enumerate() {
                g[t0 + j] += v;
                g[p0 + j] += v;
            }
        }
    }
}

fn ln_backward<T: Scalar>(
    p: &[T],
    g: &mut [T],
    ln: &Ln,
    c: &LnCache<T>,
    dy: &Array2<T>,
) -> Array2<T> {
    let (dx, dg, db) = ops::layer_norm_backward(c, &view1(p, ln.g), &dy.view());
    accumulate(g, ln.g, dg.iter());
    accumulate(g, ln.b, db.iter());
    dx
}

fn linear_backward<T: Scalar>(
    p: &[T],
    g: &mut [T],
    w: super::Block,
    b: super::Block,
    x: &ArrayView2<T>,
    dy: &ArrayView2<T>,
) -> Array2<T> {
    let (dx, dw, db) = ops::linear_backward(x, &view2(p, w), dy);
    accumulate(g, w, dw.iter());
    accumulate(g, b, db.iter());
    dx
}

#[allow(clippy::too_many_arguments)]
fn self_attn<T: Scalar>(
    p: &[T],
    ln: &Ln,
    at: &SelfAttn,
    x: &Array2<T>,
    sh: Shape<'_>,
    heads: usize,
    causal: bool,
    dropout: f64,
    rng: Option<&mut Rng>,
) -> (Array2<T>, SelfAttnCache<T>) {
    let d = x.ncols();
    let (a, ln_cache) = ops::layer_norm(&x.view(), &view1(p, ln.g), &view1(p, ln.b));
    let qkv = ops::linear(&a.view(), &view2(p, at.wqkv), &view1(p, at.bqkv));
    let (ctx, probs) = ops::attention(
        &qkv.slice(s![.., ..d]),
        &qkv.slice(s![.., d..2 * d]),
        &qkv.slice(s![.., 2 * d..]),
        sh.tq,
        sh.tk,
        sh.key_len,
        heads,
        causal,
    );
    let mut out = ops::linear(&ctx.view(), &view2(p, at.wo), &view1(p, at.bo));
    let drop = ops::dropout_mask(out.nrows(), d, dropout, rng);
    ops::apply_mask(&mut out, &drop);
    (
        out,
        SelfAttnCache {
            ln: ln_cache,
            a,
            qkv,
            probs,
            ctx,
            drop,
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn self_attn_backward<T: Scalar>(
    p: &[T],
    g: &mut [T],
    ln: &Ln,
    at: &SelfAttn,
    c: &SelfAttnCache<T>,
    sh: Shape<'_>,
    heads: usize,
    dout: &Array2<T>,
) -> Array2<T> {
    let d = dout.ncols();
    let dout = masked(dout, &c.drop);
    let dctx = linear_backward(p, g, at.wo, at.bo, &c.ctx.view(), &dout.view());
    let (dq, dk, dv) = ops::attention_backward(
        &c.qkv.slice(s![.., ..d]),
        &c.qkv.slice(s![.., d..2 * d]),
        &c.qkv.slice(s![.., 2 * d..]),
        &c.probs,
        &dctx.view(),
        sh.tq,
        sh.tk,
        sh.key_len,
        heads,
    );
    let dqkv = concatenate(Axis(1), &[dq.view(), dk.view(), dv.view()]).expect("same rows");
    let da = linear_backward(p, g, at.wqkv, at.bqkv, &c.a.view(), &dqkv.view());
    ln_backward(p, g, ln, &c.ln, &da)
}

#[allow(clippy::too_many_arguments)]
fn cross_attn<T: Scalar>(
    p: &[T],
    ln: &Ln,
    at: &CrossAttn,
    x: &Array2<T>,
    memory: &Array2<T>,
    sh: Shape<'_>,
    heads: usize,
    dropout: f64,
    rng: Option<&mut Rng>,
) -> (Array2<T>, CrossCache<T>) {
    let d = x.ncols();
    let (a, ln_cache) = ops::layer_norm(&x.view(), &view1(p, ln.g), &view1(p, ln.b));
    let q = ops::linear(&a.view(), &view2(p, at.wq), &view1(p, at.bq));
    let kv = ops::linear(&memory.view(), &view2(p, at.wkv), &view1(p, at.bkv));
    let (ctx, probs) = ops::attention(
        &q.view(),
        &kv.slice(s![.., ..d]),
        &kv.slice(s![.., d..]),
        sh.tq,
        sh.tk,
        sh.key_len,
        heads,
        false,
    );
    let mut out = ops::linear(&ctx.view(), &view2(p, at.wo), &view1(p, at.bo));
    let drop = ops::dropout_mask(out.nrows(), d, dropout, rng);
    ops::apply_mask(&mut out, &drop);
    (
        out,
        CrossCache {
            ln: ln_cache,
            a,
            q,
            kv,
            probs,
            ctx,
            drop,
        },
    )
}

/// Returns the gradient for the decoder stream and for the encoder output.
#[allow(clippy::too_many_arguments)]
fn cross_backward<T: Scalar>(
    p: &[T],
    g: &mut [T],
    ln: &Ln,
    at: &CrossAttn,
    c: &CrossCache<T>,
    memory: &Array2<T>,
    sh: Shape<'_>,
    heads: usize,
    dout: &Array2<T>,
) -> (Array2<T>, Array2<T>) {
    let d = dout.ncols();
    let dout = masked(dout, &c.drop);
    let dctx = linear_backward(p, g, at.wo, at.bo, &c.ctx.view(), &dout.view());
    let (dq, dk, dv) = ops::attention_backward(
        &c.q.view(),
        &c.kv.slice(s![.., ..d]),
        &c.kv.slice(s![.., d..]),
        &c.probs,
        &dctx.view(),
        sh.tq,
        sh.tk,
        sh.key_len,
        heads,
    );
    let dkv = concatenate(Axis(1), &[dk.view(), dv.view()]).expect("same rows");
    let dmem = linear_backward(p, g, at.wkv, at.bkv, &memory.view(), &dkv.view());
    let da = linear_backward(p, g, at.wq, at.bq, &c.a.view(), &dq.view());
    (ln_backward(p, g, ln, &c.ln, &da), dmem)
}

fn ffn<T: Scalar>(
    p: &[T],
    ln: &Ln,
    f: &Ffn,
    x: &Array2<T>,
    dropout: f64,
    rng: Option<&mut Rng>,
) -> (Array2<T>, FfnCache<T>) {
    let (a, ln_cache) = ops::layer_norm(&x.view(), &view1(p, ln.g), &view1(p, ln.b));
    let pre = ops::linear(&a.view(), &view2(p, f.w1), &view1(p, f.b1));
    let act = ops::gelu(&pre);
    let mut out = ops::linear(&act.view(), &view2(p, f.w2), &view1(p, f.b2));
    let drop = ops::dropout_mask(out.nrows(), out.ncols(), dropout, rng);
    ops::apply_mask(&mut out, &drop);
    (
        out,
        FfnCache {
            ln: ln_cache,
            a,
            pre,
            act,
            drop,
        },
    )
}

fn ffn_backward<T: Scalar>(
    p: &[T],
    g: &mut [T],
    ln: &Ln,
    f: &Ffn,
    c: &FfnCache<T>,
    dout: &Array2<T>,
) -> Array2<T> {
    let dout = masked(dout, &c.drop);
    let dact = linear_backward(p, g, f.w2, f.b2, &c.act.view(), &dout.view());
    let dpre = ops::gelu_backward(&c.pre, &dact);
    let da = linear_backward(p, g, f.w1, f.b1, &c.a.view(), &dpre.view());
    ln_backward(p, g, ln, &c.ln, &da)
}

fn masked<T: Scalar>(x: &Array2<T>, mask: &Option<Array2<T>>) -> Array2<T> {
    match mask {
        Some(m) => x * m,
        None => x.clone(),
    }
}
