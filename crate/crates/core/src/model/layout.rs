use std::ops::Range;

use super::ModelConfig;

/// How a parameter block is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-a, a]`.
    Uniform(f64),
}

/// A named dense parameter block inside the flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Largest magnitude an initial value may take.
    pub fn init_bound(&self) -> f64 {
        match self.init {
            Init::Zeros => 0.0,
            Init::Ones => 1.0,
            Init::Uniform(a) => a,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ln {
    pub g: Block,
    pub b: Block,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SelfAttn {
    pub wqkv: Block,
    pub bqkv: Block,
    pub wo: Block,
    pub bo: Block,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct CrossAttn {
    pub wq: Block,
    pub bq: Block,
    pub wkv: Block,
    pub bkv: Block,
    pub wo: Block,
    pub bo: Block,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ffn {
    pub w1: Block,
    pub b1: Block,
    pub w2: Block,
    pub b2: Block,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncLayer {
    pub ln_attn: Ln,
    pub attn: SelfAttn,
    pub ln_ffn: Ln,
    pub ffn: Ffn,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecLayer {
    pub ln_self: Ln,
    pub attn: SelfAttn,
    pub ln_cross: Ln,
    pub cross: CrossAttn,
    pub ln_ffn: Ln,
    pub ffn: Ffn,
}

#[derive(Debug)]
pub(crate) struct Layout {
    pub tokens: Block,
    pub enc_pos: Block,
    pub dec_pos: Block,
    pub enc: Vec<EncLayer>,
    pub enc_ln: Option<Ln>,
    pub dec: Vec<DecLayer>,
    pub dec_ln: Option<Ln>,
    pub specs: Vec<ParamSpec>,
    pub total: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, vector: bool, init: Init) -> Block {
        let shape = if vector { vec![cols] } else { vec![rows, cols] };
        let block = Block {
            offset: self.total,
            rows,
            cols,
        };
        self.specs.push(ParamSpec {
            name,
            shape,
            offset: self.total,
            init,
        });
        self.total += rows * cols;
        block
    }

    /// Weight matrix with Xavier-uniform bound computed per `fan_out` slice,
    /// so fused projections initialize like their separate parts.
    fn matrix(&mut self, name: String, rows: usize, cols: usize, fan_out: usize) -> Block {
        let bound = (6.0 / (rows + fan_out) as f64).sqrt();
        self.add(name, rows, cols, false, Init::Uniform(bound))
    }

    fn bias(&mut self, name: String, n: usize) -> Block {
        self.add(name, 1, n, true, Init::Zeros)
    }

    fn ln(&mut self, prefix: &str, d: usize) -> Ln {
        Ln {
            g: self.add(format!("{prefix}.gamma"), 1, d, true, Init::Ones),
            b: self.add(format!("{prefix}.beta"), 1, d, true, Init::Zeros),
        }
    }

    fn self_attn(&mut self, prefix: &str, d: usize) -> SelfAttn {
        SelfAttn {
            wqkv: self.matrix(format!("{prefix}.wqkv"), d, 3 * d, d),
            bqkv: self.bias(format!("{prefix}.bqkv"), 3 * d),
            wo: self.matrix(format!("{prefix}.wo"), d, d, d),
            bo: self.bias(format!("{prefix}.bo"), d),
        }
    }

    fn cross_attn(&mut self, prefix: &str, d: usize) -> CrossAttn {
        CrossAttn {
            wq: self.matrix(format!("{prefix}.wq"), d, d, d),
            bq: self.bias(format!("{prefix}.bq"), d),
            wkv: self.matrix(format!("{prefix}.wkv"), d, 2 * d, d),
            bkv: self.bias(format!("{prefix}.bkv"), 2 * d),
            wo: self.matrix(format!("{prefix}.wo"), d, d, d),
            bo: self.bias(format!("{prefix}.bo"), d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Ffn {
        Ffn {
            w1: self.matrix(format!("{prefix}.w1"), d, f, f),
            b1: self.bias(format!("{prefix}.b1"), f),
            w2: self.matrix(format!("{prefix}.w2"), f, d, d),
            b2: self.bias(format!("{prefix}.b2"), d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let d = cfg.d_model;
        let f = cfg.ffn_dim;
        let emb = (3.0 / d as f64).sqrt();
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let tokens = b.add(
            "embed.tokens".into(),
            cfg.vocab_size,
            d,
            false,
            Init::Uniform(emb),
        );
        let enc_pos = b.add(
            "embed.enc_positions".into(),
            cfg.max_positions,
            d,
            false,
            Init::Uniform(emb),
        );
        let dec_pos = b.add(
            "embed.dec_positions".into(),
            cfg.max_positions,
            d,
            false,
            Init::Uniform(emb),
        );
        let enc = (0..cfg.enc_layers)
            .map(|i| {
                let p = format!("enc.{i}");
                EncLayer {
                    ln_attn: b.ln(&format!("{p}.attn_ln"), d),
                    attn: b.self_attn(&format!("{p}.attn"), d),
                    ln_ffn: b.ln(&format!("{p}.ffn_ln"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, f),
                }
            })
            .collect();
        let enc_ln = cfg.final_layernorm.then(|| b.ln("enc.final_ln", d));
        let dec = (0..cfg.dec_layers)
            .map(|i| {
                let p = format!("dec.{i}");
                DecLayer {
                    ln_self: b.ln(&format!("{p}.attn_ln"), d),
                    attn: b.self_attn(&format!("{p}.attn"), d),
                    ln_cross: b.ln(&format!("{p}.cross_ln"), d),
                    cross: b.cross_attn(&format!("{p}.cross"), d),
                    ln_ffn: b.ln(&format!("{p}.ffn_ln"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, f),
                }
            })
            .collect();
        let dec_ln = cfg.final_layernorm.then(|| b.ln("dec.final_ln", d));
        Layout {
            tokens,
            enc_pos,
            dec_pos,
            enc,
            enc_ln,
            dec,
            dec_ln,
            specs: b.specs,
            total: b.total,
        }
    }
}
