use ndarray::{Array2, ArrayView2};

use super::ops::c;
use super::{Batch, Scalar, Seq2SeqModel};
use crate::error::Result;
use crate::rng::Rng;
use crate::tokenizer::TokenId;

/// Smoothed cross-entropy over the unmasked rows.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Mean smoothed loss per counted position.
    pub loss: f64,
    /// Mean plain negative log-likelihood per counted position.
    pub nll: f64,
    pub tokens: usize,
    /// Gradient of `loss` with respect to the logits.
    pub dlogits: Array2<T>,
}

/// Label-smoothed NLL: `(1 - eps) * nll + eps * mean_v(-log p_v)`, averaged
/// over rows where `mask` is true.
pub fn smoothed_nll<T: Scalar>(
    logits: &ArrayView2<T>,
    targets: &[TokenId],
    mask: &[bool],
    eps: f64,
) -> LossOutput<T> {
    let v = logits.ncols();
    let tokens = mask.iter().filter(|&&m| m).count();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let (mut loss, mut nll) = (0.0f64, 0.0f64);
    if tokens == 0 {
        return LossOutput {
            loss,
            nll,
            tokens,
            dlogits,
        };
    }
    let inv_n = 1.0 / tokens as f64;
    let smooth = eps / v as f64;
    for (i, (row, mut drow)) in logits
        .rows()
        .into_iter()
        .zip(dlogits.rows_mut())
        .enumerate()
    {
        if !mask[i] {
            continue;
        }
        let m = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
        let z = row.iter().fold(T::zero(), |a, &x| a + (x - m).exp());
        let log_z = m + z.ln();
        let y = targets[i] as usize;
        let lp_y = (row[y] - log_z).to_f64().expect("finite");
        let sum_lp = row
            .iter()
            .fold(0.0f64, |a, &x| a + (x - log_z).to_f64().expect("finite"));
        nll -= lp_y;
        loss -= (1.0 - eps) * lp_y + smooth * sum_lp;
        for (j, (d, &x)) in drow.iter_mut().zip(row.iter()).enumerate() {
            let prob = (x - log_z).exp();
            let q = if j == y { 1.0 - eps + smooth } else { smooth };
            *d = (prob - c::<T>(q)) * c::<T>(inv_n);
        }
    }
    LossOutput {
        loss: loss * inv_n,
        nll: nll * inv_n,
        tokens,
        dlogits,
    }
}

/// Lowest reachable smoothed loss: the entropy of the smoothed target.
pub fn smoothing_floor(vocab: usize, eps: f64) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    let v = vocab as f64;
    let hi = 1.0 - eps + eps / v;
    let lo = eps / v;
    -(hi * hi.ln()) - (v - 1.0) * lo * lo.ln()
}

impl<T: Scalar> Seq2SeqModel<T> {
    /// Smoothed loss on `batch` and its gradient for every parameter.
    pub fn loss_and_grad(
        &self,
        batch: &Batch,
        label_smoothing: f64,
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> Result<(LossOutput<T>, Vec<T>)> {
        let pass = self.forward_train(batch, dropout, rng)?;
        let out = smoothed_nll(
            &pass.logits.view(),
            &batch.target,
            &batch.loss_mask(),
            label_smoothing,
        );
        let grads = self.backward(batch, &pass, &out.dlogits.view());
        Ok((out, grads))
    }

    /// Summed plain NLL and counted tokens, without dropout or gradients.
    pub fn nll(&self, batch: &Batch) -> Result<(f64, usize)> {
        let pass = self.forward_train(batch, 0.0, None)?;
        let out = smoothed_nll(&pass.logits.view(), &batch.target, &batch.loss_mask(), 0.0);
        Ok((out.nll * out.tokens as f64, out.tokens))
    }
}
