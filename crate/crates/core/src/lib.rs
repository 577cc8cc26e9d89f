//! Multilingual denoising sequence-to-sequence pre-training at desk scale.
//!
//! The pipeline: [`corpus`] ingestion and smoothed language sampling, a
//! shared BPE [`tokenizer`], the [`noising`] function (span masking and
//! sentence permutation), an encoder-decoder transformer in [`model`],
//! [`training`] loops for pre-training and fine-tuning, [`decoding`] with
//! beam search and vocabulary constraints, [`unsupervised`] translation via
//! back-translation and language transfer, and BLEU [`eval`]uation.
//! [`toy`] generates cipher languages with known ground truth and
//! [`protocol`] runs the pre-trained versus random comparisons on them.

pub mod corpus;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod model;
pub mod noising;
pub mod protocol;
pub mod rng;
pub mod tokenizer;
pub mod toy;
pub mod training;
pub mod unsupervised;

pub use error::{Error, Result};
