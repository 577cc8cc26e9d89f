//! Toy-scale experiment protocols comparing a denoising pre-trained model
//! with random initialization on cipher translation.

use std::path::Path;

use rand::Rng as _;

use crate::corpus::{rebalance, LanguageCode};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Seq2SeqModel};
use crate::noising::NoiseConfig;
use crate::rng;
use crate::toy::{ToyTask, ToyTaskConfig};
use crate::training::{
    finetune, finetune_both_ways, pretrain, FinetuneSchedule, OptimizerConfig, PretrainSchedule,
};
use crate::unsupervised::{beam_for, evaluate};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub bleu: f64,
    pub exact_match: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    /// Bitext size or pre-training steps.
    pub x: usize,
    pub pretrained: Score,
    pub random: Score,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyProtocol {
    pub seed: u64,
    /// Cipher languages; the first is the fine-tuning source, English the target.
    pub languages: Vec<String>,
    /// Fraction of forms each cipher shares with English.
    pub share: f64,
    pub documents: usize,
    pub sentences_per_document: usize,
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub max_positions: usize,
    pub pretrain_steps: usize,
    pub pretrain_token_budget: usize,
    pub pretrain_lr: f64,
    pub pretrain_max_len: usize,
    pub finetune_updates: usize,
    /// Larger bitexts get `max(finetune_updates, per_pair * pairs)` updates,
    /// so big training sets are not cut off long before convergence.
    pub finetune_updates_per_pair: f64,
    pub finetune_lr: f64,
    pub finetune_token_budget: usize,
    pub finetune_dropout: f64,
    pub label_smoothing: f64,
    pub valid_pairs: usize,
    pub test_pairs: usize,
}

impl Default for ToyProtocol {
    fn default() -> Self {
        ToyProtocol {
            seed: 1,
            languages: vec!["xx".into()],
            share: 0.0,
            documents: 200,
            sentences_per_document: 8,
            vocab_size: 400,
            d_model: 64,
            layers: 2,
            max_positions: 128,
            pretrain_steps: 1000,
            pretrain_token_budget: 1024,
            pretrain_lr: 1e-3,
            pretrain_max_len: 64,
            finetune_updates: 300,
            finetune_updates_per_pair: 0.0,
            finetune_lr: 1e-3,
            finetune_token_budget: 512,
            finetune_dropout: 0.3,
            label_smoothing: 0.2,
            valid_pairs: 100,
            test_pairs: 200,
        }
    }
}

impl ToyProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.languages.is_empty() {
            return Err(Error::Config(
                "the protocol needs at least one cipher language".into(),
            ));
        }
        if self.finetune_updates < 10 || self.pretrain_steps < 10 {
            return Err(Error::Config(
                "pretrain_steps and finetune_updates must be at least 10".into(),
            ));
        }
        if !(self.finetune_updates_per_pair >= 0.0 && self.finetune_updates_per_pair.is_finite()) {
            return Err(Error::Config(
                "finetune_updates_per_pair must be a finite non-negative number".into(),
            ));
        }
        self.model_config(16).validate()
    }

    pub fn task(&self) -> Result<ToyTask> {
        ToyTask::build(&ToyTaskConfig {
            seed: self.seed,
            ciphers: self
                .languages
                .iter()
                .map(|l| (l.clone(), self.share))
                .collect(),
            related: Vec::new(),
            documents: self.documents,
            sentences_per_document: self.sentences_per_document,
            vocab_size: self.vocab_size,
        })
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            enc_layers: self.layers,
            dec_layers: self.layers,
            d_model: self.d_model,
            heads: 4,
            ffn_dim: 2 * self.d_model,
            max_positions: self.max_positions,
            ..ModelConfig::desk(vocab_size)
        }
    }

    pub fn source(&self) -> Result<LanguageCode> {
        LanguageCode::new(&self.languages[0])
    }

    pub fn random_init(&self, task: &ToyTask) -> Result<Seq2SeqModel<f32>> {
        Seq2SeqModel::init(
            self.model_config(task.vocab.size()),
            self.seed.wrapping_add(0x7a4d),
        )
    }

    /// Denoising pre-training on every language of the task for `steps`
    /// updates; intermediate checkpoints go to `out_dir` every `every` steps.
    pub fn pretrain(
        &self,
        task: &ToyTask,
        steps: usize,
        every: usize,
        out_dir: Option<&Path>,
    ) -> Result<Seq2SeqModel<f32>> {
        let model = Seq2SeqModel::init(self.model_config(task.vocab.size()), self.seed)?;
        let weights = rebalance(&task.collection, 0.7)?;
        let schedule = PretrainSchedule {
            token_budget: self.pretrain_token_budget,
            max_len: self.pretrain_max_len,
            checkpoint_every: every,
            ..PretrainSchedule::default()
        };
        let opt = OptimizerConfig::new(self.pretrain_lr, (steps / 10).max(1), steps);
        let out = pretrain(
            model,
            &task.vocab,
            &task.collection,
            &weights,
            &NoiseConfig::default(),
            &schedule,
            &opt,
            self.seed,
            out_dir,
        )?;
        Ok(out.model)
    }

    pub fn finetune_updates(&self, pairs: usize) -> usize {
        let scaled = (self.finetune_updates_per_pair * pairs as f64).round() as usize;
        self.finetune_updates.max(scaled)
    }

    pub fn finetune_schedule(&self, pairs: usize) -> FinetuneSchedule {
        let updates = self.finetune_updates(pairs);
        FinetuneSchedule {
            dropout: self.finetune_dropout,
            label_smoothing: self.label_smoothing,
            warmup: (updates / 10).max(1),
            max_lr: self.finetune_lr,
            max_updates: updates,
            token_budget: self.finetune_token_budget,
            validate_every: (updates / 5).max(1),
            keep_interval_checkpoints: false,
            clip_norm: None,
        }
    }

    /// Fine-tunes on `pairs` training pairs (source cipher to English) and
    /// returns the checkpoint with the lowest validation NLL.
    pub fn finetune(
        &self,
        task: &ToyTask,
        model: Seq2SeqModel<f32>,
        pairs: usize,
    ) -> Result<Seq2SeqModel<f32>> {
        let (src, en) = (self.source()?, task.base_code());
        let train = task.parallel(&src, &en, pairs, "train")?;
        let valid = task.parallel(&src, &en, self.valid_pairs, "valid")?;
        let seed: u64 = rng::derive(self.seed, &[0xf1, pairs as u64]).random();
        Ok(finetune(
            model,
            &task.vocab,
            &train,
            &valid,
            &self.finetune_schedule(pairs),
            seed,
            None,
        )?
        .best)
    }

    /// Like [`ToyProtocol::finetune`], but on the pairs in both directions.
    pub fn finetune_both_ways(
        &self,
        task: &ToyTask,
        model: Seq2SeqModel<f32>,
        pairs: usize,
    ) -> Result<Seq2SeqModel<f32>> {
        let (src, en) = (self.source()?, task.base_code());
        let train = task.parallel(&src, &en, pairs, "train")?;
        let valid = task.parallel(&src, &en, self.valid_pairs, "valid")?;
        let seed: u64 = rng::derive(self.seed, &[0xf2, pairs as u64]).random();
        Ok(finetune_both_ways(
            model,
            &task.vocab,
            &train,
            &valid,
            &self.finetune_schedule(pairs),
            seed,
            None,
        )?
        .best)
    }

    /// Greedy translation of the held-out test split into English.
    pub fn score(
        &self,
        task: &ToyTask,
        model: &Seq2SeqModel<f32>,
        src: &LanguageCode,
    ) -> Result<Score> {
        let en = task.base_code();
        let test = task.parallel(src, &en, self.test_pairs, "test")?;
        let e = evaluate(
            model,
            &task.vocab,
            &test,
            &beam_for(model, &task.vocab, &en, 1)?,
        )?;
        Ok(Score {
            bleu: e.bleu.score,
            exact_match: e.exact_match,
        })
    }

    /// Fine-tunes both the pre-trained and a random model on `pairs` pairs.
    pub fn compare(
        &self,
        task: &ToyTask,
        pretrained: &Seq2SeqModel<f32>,
        pairs: usize,
    ) -> Result<SweepRow> {
        let src = self.source()?;
        let p = self.finetune(task, pretrained.clone(), pairs)?;
        let r = self.finetune(task, self.random_init(task)?, pairs)?;
        Ok(SweepRow {
            x: pairs,
            pretrained: self.score(task, &p, &src)?,
            random: self.score(task, &r, &src)?,
        })
    }
}

/// Pre-trained versus random initialization over bitext sizes, one shared
/// pre-training run and an equal update budget everywhere.
pub fn bitext_sweep(p: &ToyProtocol, sizes: &[usize]) -> Result<Vec<SweepRow>> {
    p.validate()?;
    let task = p.task()?;
    let pre = p.pretrain(&task, p.pretrain_steps, 0, None)?;
    sizes.iter().map(|&n| p.compare(&task, &pre, n)).collect()
}

/// Fine-tuning score as a function of pre-training steps, using checkpoints
/// from a single pre-training run of `max(steps)` updates (written under
/// `work_dir`). Step 0 is the random initialization.
pub fn pretrain_sweep(
    p: &ToyProtocol,
    steps: &[usize],
    pairs: usize,
    work_dir: &Path,
) -> Result<Vec<SweepRow>> {
    p.validate()?;
    let task = p.task()?;
    let total = steps.iter().copied().max().unwrap_or(0);
    let every = steps.iter().copied().filter(|&s| s > 0).fold(0, gcd);
    if total > 0 {
        p.pretrain(&task, total, every, Some(work_dir))?;
    }
    let src = p.source()?;
    let random = p.score(
        &task,
        &p.finetune(&task, p.random_init(&task)?, pairs)?,
        &src,
    )?;
    steps
        .iter()
        .map(|&s| {
            let init = if s == 0 {
                Seq2SeqModel::init(p.model_config(task.vocab.size()), p.seed)?
            } else {
                Seq2SeqModel::load(work_dir.join(format!("step_{s}.ckpt")))?
            };
            let tuned = p.finetune(&task, init, pairs)?;
            Ok(SweepRow {
                x: s,
                pretrained: p.score(&task, &tuned, &src)?,
                random,
            })
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
