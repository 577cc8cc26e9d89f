//! Encoder-decoder transformer with tied embeddings, learned positions,
//! pre-norm layers and an optional final layer norm atop each stack.
//!
//! Parameters live in one flat buffer; gradients use the same layout so the
//! optimizer can treat both as plain slices. The model is generic over the
//! scalar type: training runs in `f32`, gradient checks in `f64`.

mod batch;
pub mod checkpoint;
mod forward;
mod incremental;
mod layout;
mod loss;
pub(crate) mod ops;

use std::collections::BTreeMap;
use std::fmt::{Debug, Display};
use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng as _;

pub use batch::Batch;
pub use forward::ForwardPass;
pub use incremental::{DecoderState, EncodedSource};
pub use layout::{Init, ParamSpec};
pub use loss::{smoothed_nll, smoothing_floor, LossOutput};

use crate::error::{Error, Result};
use crate::rng;
use layout::{Block, Layout};

/// Floating point type the model can run in.
pub trait Scalar:
    Float
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub final_layernorm: bool,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl ModelConfig {
    /// Desk-scale default: 2 + 2 layers, width 64, 4 heads, FFN 128.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            final_layernorm: true,
            vocab_size,
            max_positions: 512,
        }
    }

    /// The full-size shape: 12 + 12 layers, width 1024, 16 heads.
    pub fn large(vocab_size: usize) -> Self {
        ModelConfig {
            enc_layers: 12,
            dec_layers: 12,
            d_model: 1024,
            heads: 16,
            ffn_dim: 4096,
            dropout: 0.1,
            final_layernorm: true,
            vocab_size,
            max_positions: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_layers", self.dec_layers.to_string()),
            ("d_model", self.d_model.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("dropout", self.dropout.to_string()),
            ("final_layernorm", self.final_layernorm.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_positions", self.max_positions.to_string()),
        ]
    }

    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<V> {
            let raw = map
                .get(key)
                .ok_or_else(|| Error::Config(format!("missing model key {key}")))?;
            raw.parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {raw:?}")))
        }
        let cfg = ModelConfig {
            enc_layers: get(map, "enc_layers")?,
            dec_layers: get(map, "dec_layers")?,
            d_model: get(map, "d_model")?,
            heads: get(map, "heads")?,
            ffn_dim: get(map, "ffn_dim")?,
            dropout: get(map, "dropout")?,
            final_layernorm: get(map, "final_layernorm")?,
            vocab_size: get(map, "vocab_size")?,
            max_positions: get(map, "max_positions")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The transformer: config plus a flat parameter buffer.
#[derive(Clone, Debug)]
pub struct Seq2SeqModel<T: Scalar = f32> {
    config: ModelConfig,
    layout: Arc<Layout>,
    params: Vec<T>,
}

impl<T: Scalar> Seq2SeqModel<T> {
    /// Deterministic initialization: Xavier-uniform matrices, uniform
    /// embeddings, zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(&config));
        let mut rng = rng::derive(seed, &[0x1417]);
        let mut params = Vec::with_capacity(layout.total);
        for spec in &layout.specs {
            let n = spec.len();
            match spec.init {
                Init::Zeros => params.extend(std::iter::repeat_n(T::zero(), n)),
                Init::Ones => params.extend(std::iter::repeat_n(T::one(), n)),
                Init::Uniform(a) => params.extend((0..n).map(|_| {
                    let u: f64 = rng.random();
                    ops::c::<T>((2.0 * u - 1.0) * a)
                })),
            }
        }
        Ok(Seq2SeqModel {
            config,
            layout,
            params,
        })
    }

    /// Rebuilds a model from a parameter buffer in layout order.
    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(Layout::new(&config));
        if params.len() != layout.total {
            return Err(Error::Shape {
                name: "parameters".into(),
                expected: vec![layout.total],
                found: vec![params.len()],
            });
        }
        Ok(Seq2SeqModel {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Named parameter blocks in storage order.
    pub fn specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.layout.specs.iter().find(|s| s.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.spec(name).map(|s| &self.params[s.range()])
    }

    /// The shared token embedding, also used as the output projection.
    pub fn embedding(&self) -> ArrayView2<'_, T> {
        view2(&self.params, self.layout.tokens)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    /// Same model in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Seq2SeqModel<U> {
        Seq2SeqModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::from_f64(v.to_f64().expect("finite")).expect("representable"))
                .collect(),
        }
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let size = self.config.vocab_size;
        match ids.iter().find(|&&t| t as usize >= size) {
            Some(&id) => Err(Error::TokenOutOfRange { id, size }),
            None => Ok(()),
        }
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_positions {
            Err(Error::SequenceTooLong {
                len,
                max: self.config.max_positions,
            })
        } else {
            Ok(())
        }
    }
}

pub(crate) fn view2<T>(p: &[T], b: Block) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((b.rows, b.cols), &p[b.range()]).expect("block shape")
}

pub(crate) fn view1<T>(p: &[T], b: Block) -> ArrayView1<'_, T> {
    ArrayView1::from(&p[b.range()])
}

/// Adds `values` (in row-major order) into the gradient block.
pub(crate) fn accumulate<'a, T: Scalar>(
    grads: &mut [T],
    b: Block,
    values: impl IntoIterator<Item = &'a T>,
) {
    for (g, &v) in grads[b.range()].iter_mut().zip(values) {
        *g += v;
    }
}

#[cfg(test)]
mod tests;
