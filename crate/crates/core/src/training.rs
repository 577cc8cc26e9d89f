//! Optimizer, schedules, batching and the pre-training / fine-tuning loops.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::corpus::{
    rebalance, sample_language, CorpusCollection, LanguageCode, ParallelCorpus, SamplingWeights,
};
use crate::error::{Error, Result};
use crate::model::{Batch, Scalar, Seq2SeqModel};
use crate::noising::{make_example, pack, Instance, NoiseConfig, NoisedExample};
use crate::rng::{self, Rng};
use crate::tokenizer::{TokenId, Vocabulary, EOS};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn new(max_lr: f64, warmup_steps: usize, total_steps: usize) -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-6,
            max_lr,
            warmup_steps,
            total_steps,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_steps > 0 && self.warmup_steps < self.total_steps) {
            return Err(Error::Config(format!(
                "need 0 < warmup_steps ({}) < total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::Config(format!(
                "max_lr must be positive, got {}",
                self.max_lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "epsilon must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `max_lr`, then linear decay to 0 at `total_steps`.
pub fn lr_at(cfg: &OptimizerConfig, step: usize) -> f64 {
    let step = step.min(cfg.total_steps);
    if step <= cfg.warmup_steps {
        cfg.max_lr * step as f64 / cfg.warmup_steps as f64
    } else {
        cfg.max_lr * (cfg.total_steps - step) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64
    }
}

/// Adam with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: &OptimizerConfig, n: usize) -> Self {
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            weight_decay: cfg.weight_decay,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.t += 1;
        let cv = |x: f64| T::from_f64(x).expect("finite");
        let (b1, b2) = (cv(self.beta1), cv(self.beta2));
        let c1 = cv(1.0 - self.beta1.powi(self.t));
        let c2 = cv(1.0 - self.beta2.powi(self.t));
        let (lr_t, eps, decay) = (cv(lr), cv(self.epsilon), cv(lr * self.weight_decay));
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            if self.weight_decay > 0.0 {
                *p -= decay * *p;
            }
            *p -= lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// One row of a loss or validation curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub dropout: f64,
}

pub const CURVE_HEADER: &str = "step\tloss\tlr\tdropout";

pub fn curve_tsv(points: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for p in points {
        writeln!(s, "{}\t{}\t{}\t{}", p.step, p.loss, p.lr, p.dropout).expect("string write");
    }
    s
}

pub fn write_curve(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, curve_tsv(points)).map_err(|e| Error::io(path, e))
}

/// Model plus optimizer state; each call to [`Trainer::update`] is one Adam step.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Seq2SeqModel<f32>,
    pub opt: OptimizerConfig,
    adam: Adam<f32>,
    step: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub loss: f64,
    pub nll: f64,
    pub lr: f64,
    pub tokens: usize,
}

impl Trainer {
    pub fn new(model: Seq2SeqModel<f32>, opt: OptimizerConfig) -> Result<Self> {
        opt.validate()?;
        let adam = Adam::new(&opt, model.num_params());
        Ok(Trainer {
            model,
            opt,
            adam,
            step: 0,
        })
    }

    /// Updates taken so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn update(
        &mut self,
        batch: &Batch,
        dropout: f64,
        label_smoothing: f64,
        rng: &mut Rng,
    ) -> Result<StepStats> {
        let (out, mut grads) =
            self.model
                .loss_and_grad(batch, label_smoothing, dropout, Some(rng))?;
        if !out.loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step + 1,
                loss: out.loss,
            });
        }
        if let Some(max) = self.opt.clip_norm {
            let norm = grads
                .iter()
                .map(|&g| (g as f64) * (g as f64))
                .sum::<f64>()
                .sqrt();
            if norm > max {
                let s = (max / norm) as f32;
                grads.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.step += 1;
        let lr = lr_at(&self.opt, self.step);
        self.adam.step(self.model.params_mut(), &grads, lr);
        if !self.model.all_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss: f64::NAN,
            });
        }
        Ok(StepStats {
            loss: out.loss,
            nll: out.nll,
            lr,
            tokens: out.tokens,
        })
    }

    pub fn into_model(self) -> Seq2SeqModel<f32> {
        self.model
    }
}

/// Padded size of a batch for the token budget: rows times longest side.
fn batch_cost(n: usize, longest: usize) -> usize {
    n * longest
}

fn example_len(e: &NoisedExample) -> usize {
    e.source.len().max(e.target.len())
}

/// Groups examples into batches under `token_budget`, bucketing by length:
/// shuffle, sort within pools, cut greedily, then shuffle the batch order.
pub fn make_batches(
    examples: &[NoisedExample],
    token_budget: usize,
    rng: &mut Rng,
) -> Result<Vec<Batch>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let pool = 64 * (token_budget / 8).max(1);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for chunk in order.chunks(pool) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| example_len(&examples[i]));
        let mut cur: Vec<usize> = Vec::new();
        let mut longest = 0;
        for i in chunk {
            let l = example_len(&examples[i]).max(longest);
            if !cur.is_empty() && batch_cost(cur.len() + 1, l) > token_budget {
                groups.push(std::mem::take(&mut cur));
                longest = 0;
            }
            longest = longest.max(example_len(&examples[i]));
            cur.push(i);
        }
        if !cur.is_empty() {
            groups.push(cur);
        }
    }
    groups.shuffle(rng);
    groups
        .into_iter()
        .map(|g| Batch::new(&g.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>()))
        .collect()
}

/// Endless stream of shuffled, bucketed batches over a fixed example set.
pub struct BatchStream<'a> {
    examples: &'a [NoisedExample],
    token_budget: usize,
    rng: Rng,
    queue: Vec<Batch>,
}

impl<'a> BatchStream<'a> {
    pub fn new(examples: &'a [NoisedExample], token_budget: usize, seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        Ok(BatchStream {
            examples,
            token_budget,
            rng: rng::derive(seed, &[0xba7c]),
            queue: Vec::new(),
        })
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        if self.queue.is_empty() {
            self.queue = make_batches(self.examples, self.token_budget, &mut self.rng)?;
            self.queue.reverse();
        }
        Ok(self.queue.pop().expect("nonempty epoch"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSchedule {
    /// `(fraction of total steps, dropout)` stages; thresholds strictly increasing from 0.
    pub dropout_stages: Vec<(f64, f64)>,
    pub token_budget: usize,
    pub label_smoothing: f64,
    /// Maximum instance length in tokens.
    pub max_len: usize,
    /// Write `step_<N>.ckpt` every this many steps (0 = never).
    pub checkpoint_every: usize,
}

impl Default for PretrainSchedule {
    fn default() -> Self {
        PretrainSchedule {
            dropout_stages: vec![(0.0, 0.1), (0.5, 0.05), (0.8, 0.0)],
            token_budget: 4096,
            label_smoothing: 0.1,
            max_len: crate::noising::DEFAULT_MAX_LEN,
            checkpoint_every: 0,
        }
    }
}

impl PretrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let stages = &self.dropout_stages;
        if stages.is_empty() || stages[0].0 != 0.0 {
            return Err(Error::Config(
                "dropout stages must start at fraction 0".into(),
            ));
        }
        for w in stages.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config(
                    "dropout stage thresholds must increase".into(),
                ));
            }
        }
        for &(f, p) in stages {
            if !(0.0..1.0).contains(&f) || !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("bad dropout stage ({f}, {p})")));
            }
        }
        if self.token_budget == 0 {
            return Err(Error::Config("token_budget must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Dropout in force at `step` (1-based) of `total`.
    pub fn dropout_at(&self, step: usize, total: usize) -> f64 {
        let frac = step.saturating_sub(1) as f64 / total.max(1) as f64;
        self.dropout_stages
            .iter()
            .rev()
            .find(|&&(f, _)| frac >= f)
            .map_or(self.dropout_stages[0].1, |&(_, p)| p)
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: Seq2SeqModel<f32>,
    pub curve: Vec<CurvePoint>,
    pub checkpoints: Vec<PathBuf>,
}

/// Denoising pre-training: every step draws instances from languages sampled
/// by the rebalanced distribution, noises them, and takes one Adam step.
#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    model: Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    collection: &CorpusCollection,
    weights: &SamplingWeights,
    noise: &NoiseConfig,
    schedule: &PretrainSchedule,
    opt: &OptimizerConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    schedule.validate()?;
    noise.validate()?;
    let max_len = schedule.max_len.min(model.config().max_positions);
    let mut pools: Vec<Vec<Instance>> = Vec::new();
    for (lang, corpus) in &collection.corpora {
        vocab.lid(lang)?;
        pools.push(pack(corpus, vocab, max_len)?.instances);
    }
    let mut trainer = Trainer::new(model, opt.clone())?;
    let total = opt.total_steps;
    let mut curve = Vec::with_capacity(total);
    let mut checkpoints = Vec::new();
    let langs: Vec<_> = collection.corpora.keys().cloned().collect();
    for step in 1..=total {
        let mut draw = rng::derive(seed, &[1, step as u64]);
        let mut examples = Vec::new();
        let mut longest = 0;
        loop {
            let lang = sample_language(weights, &mut draw);
            let idx = langs
                .iter()
                .position(|l| *l == lang)
                .expect("sampled from collection");
            let pool = &pools[idx];
            let inst = &pool[rand::Rng::random_range(&mut draw, 0..pool.len())];
            let mut noise_rng = rng::derive(seed, &[2, step as u64, examples.len() as u64]);
            let (ex, _) = make_example(inst, vocab, noise, &mut noise_rng);
            let l = example_len(&ex).max(longest);
            if !examples.is_empty() && batch_cost(examples.len() + 1, l) > schedule.token_budget {
                break;
            }
            longest = l;
            examples.push(ex);
        }
        let batch = Batch::new(&examples)?;
        let dropout = schedule.dropout_at(step, total);
        let mut drop_rng = rng::derive(seed, &[3, step as u64]);
        let stats = trainer.update(&batch, dropout, schedule.label_smoothing, &mut drop_rng)?;
        curve.push(CurvePoint {
            step,
            loss: stats.loss,
            lr: stats.lr,
            dropout,
        });
        if let Some(dir) = out_dir {
            if schedule.checkpoint_every > 0
                && (step % schedule.checkpoint_every == 0 || step == total)
            {
                let path = dir.join(format!("step_{step}.ckpt"));
                trainer.model.save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        write_curve(dir.join("loss.tsv"), &curve)?;
    }
    Ok(PretrainOutcome {
        model: trainer.into_model(),
        curve,
        checkpoints,
    })
}

/// Convenience: pre-train a single-language collection with uniform weights.
pub fn single_language_weights(collection: &CorpusCollection) -> Result<SamplingWeights> {
    rebalance(collection, 1.0)
}

/// Which monolingual corpora a pre-trained variant sees.
#[derive(Clone, Debug, PartialEq)]
pub enum PretrainPreset {
    /// Multilingual model over the listed languages (all of them when empty).
    MbartK(Vec<LanguageCode>),
    /// A single language.
    BartMono(LanguageCode),
}

impl PretrainPreset {
    pub fn select(&self, full: &CorpusCollection) -> Result<CorpusCollection> {
        let langs: Vec<&LanguageCode> = match self {
            PretrainPreset::MbartK(l) if l.is_empty() => full.languages().collect(),
            PretrainPreset::MbartK(l) => l.iter().collect(),
            PretrainPreset::BartMono(l) => vec![l],
        };
        CorpusCollection::new(
            langs
                .into_iter()
                .map(|l| full.get(l).cloned())
                .collect::<Result<_>>()?,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSchedule {
    pub dropout: f64,
    pub label_smoothing: f64,
    pub warmup: usize,
    pub max_lr: f64,
    pub max_updates: usize,
    pub token_budget: usize,
    /// Validate (and consider for best checkpoint) every this many updates.
    pub validate_every: usize,
    /// Also write `step_<N>.ckpt` at each validation.
    pub keep_interval_checkpoints: bool,
    pub clip_norm: Option<f64>,
}

impl FinetuneSchedule {
    /// Low and medium resource recipe: 40K updates.
    pub fn low_resource() -> Self {
        FinetuneSchedule {
            dropout: 0.3,
            label_smoothing: 0.2,
            warmup: 2500,
            max_lr: 3e-5,
            max_updates: 40_000,
            token_budget: 4096,
            validate_every: 1000,
            keep_interval_checkpoints: false,
            clip_norm: None,
        }
    }

    /// High resource recipe: 100K updates.
    pub fn high_resource() -> Self {
        FinetuneSchedule {
            max_updates: 100_000,
            ..Self::low_resource()
        }
    }

    fn optimizer(&self) -> OptimizerConfig {
        let mut opt = OptimizerConfig::new(self.max_lr, self.warmup, self.max_updates);
        opt.clip_norm = self.clip_norm;
        opt
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_updates > 0 {
            self.optimizer().validate()?;
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(
                "dropout and label_smoothing must lie in [0, 1)".into(),
            ));
        }
        if self.validate_every == 0 || self.token_budget == 0 {
            return Err(Error::Config(
                "validate_every and token_budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Source tokens + `</S>` + source LID; decoder input starts with the
/// target LID; target is target tokens + `</S>` + target LID.
pub fn translation_example(
    src: &[TokenId],
    src_lid: TokenId,
    tgt: &[TokenId],
    tgt_lid: TokenId,
    max_len: usize,
) -> NoisedExample {
    let keep = max_len.saturating_sub(2);
    let mut source: Vec<TokenId> = src[..src.len().min(keep)].to_vec();
    source.extend([EOS, src_lid]);
    let mut target: Vec<TokenId> = tgt[..tgt.len().min(keep)].to_vec();
    target.extend([EOS, tgt_lid]);
    NoisedExample::new(source, tgt_lid, target)
}

/// Source side of [`translation_example`] alone, for decoding.
pub fn translation_source(src: &[TokenId], src_lid: TokenId, max_len: usize) -> Vec<TokenId> {
    let keep = max_len.saturating_sub(2);
    let mut source: Vec<TokenId> = src[..src.len().min(keep)].to_vec();
    source.extend([EOS, src_lid]);
    source
}

pub(crate) fn lids(vocab: &Vocabulary, corpus: &ParallelCorpus) -> Result<(TokenId, TokenId)> {
    Ok((
        vocab.lid(&corpus.source_lang)?,
        vocab.lid(&corpus.target_lang)?,
    ))
}

pub fn translation_examples(
    corpus: &ParallelCorpus,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<NoisedExample>> {
    let (sl, tl) = lids(vocab, corpus)?;
    Ok(corpus
        .pairs
        .iter()
        .map(|p| {
            translation_example(
                &vocab.encode(&p.source),
                sl,
                &vocab.encode(&p.target),
                tl,
                max_len,
            )
        })
        .collect())
}

/// Per-token NLL of `model` on `examples`.
pub fn validation_nll<T: Scalar>(
    model: &Seq2SeqModel<T>,
    examples: &[NoisedExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let (mut sum, mut tokens) = (0.0, 0usize);
    for chunk in examples.chunks(32) {
        let (s, n) = model.nll(&Batch::new(chunk)?)?;
        sum += s;
        tokens += n;
    }
    Ok(sum / tokens as f64)
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Checkpoint with minimum validation NLL.
    pub best: Seq2SeqModel<f32>,
    pub best_step: usize,
    pub best_valid_nll: f64,
    pub last: Seq2SeqModel<f32>,
    pub last_valid_nll: f64,
    pub train_curve: Vec<CurvePoint>,
    /// Validation NLL in the `loss` column.
    pub valid_curve: Vec<CurvePoint>,
}

/// Supervised fine-tuning with teacher forcing, selecting the checkpoint
/// with the lowest validation NLL (the starting model included).
pub fn finetune(
    model: Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    schedule: &FinetuneSchedule,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    schedule.validate()?;
    if valid.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let max_len = model.config().max_positions;
    let train_ex = translation_examples(train, vocab, max_len)?;
    let valid_ex = translation_examples(valid, vocab, max_len)?;
    finetune_examples(model, &train_ex, &valid_ex, schedule, seed, out_dir)
}

/// [`finetune`] on the union of both directions of `train` (and `valid`), so
/// one model translates either way. This is the starting point back-translation
/// needs when it continues from a fine-tuned model.
pub fn finetune_both_ways(
    model: Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    schedule: &FinetuneSchedule,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    schedule.validate()?;
    if valid.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let max_len = model.config().max_positions;
    let mut train_ex = translation_examples(train, vocab, max_len)?;
    train_ex.extend(translation_examples(&train.reversed(), vocab, max_len)?);
    let mut valid_ex = translation_examples(valid, vocab, max_len)?;
    valid_ex.extend(translation_examples(&valid.reversed(), vocab, max_len)?);
    finetune_examples(model, &train_ex, &valid_ex, schedule, seed, out_dir)
}

/// [`finetune`] on pre-built examples.
pub fn finetune_examples(
    model: Seq2SeqModel<f32>,
    train_ex: &[NoisedExample],
    valid_ex: &[NoisedExample],
    schedule: &FinetuneSchedule,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    schedule.validate()?;
    let initial_nll = validation_nll(&model, valid_ex)?;
    let mut valid_curve = vec![CurvePoint {
        step: 0,
        loss: initial_nll,
        lr: 0.0,
        dropout: schedule.dropout,
    }];
    let mut best = (model.clone(), 0, initial_nll);
    let mut train_curve = Vec::new();
    let mut last = model.clone();
    let mut last_nll = initial_nll;
    if schedule.max_updates > 0 {
        let mut stream = BatchStream::new(train_ex, schedule.token_budget, seed)?;
        let mut trainer = Trainer::new(model, schedule.optimizer())?;
        for step in 1..=schedule.max_updates {
            let batch = stream.next_batch()?;
            let mut drop_rng = rng::derive(seed, &[4, step as u64]);
            let stats = trainer.update(
                &batch,
                schedule.dropout,
                schedule.label_smoothing,
                &mut drop_rng,
            )?;
            train_curve.push(CurvePoint {
                step,
                loss: stats.loss,
                lr: stats.lr,
                dropout: schedule.dropout,
            });
            if step % schedule.validate_every == 0 || step == schedule.max_updates {
                let nll = validation_nll(&trainer.model, valid_ex)?;
                valid_curve.push(CurvePoint {
                    step,
                    loss: nll,
                    lr: stats.lr,
                    dropout: schedule.dropout,
                });
                if nll < best.2 {
                    best = (trainer.model.clone(), step, nll);
                }
                if let (Some(dir), true) = (out_dir, schedule.keep_interval_checkpoints) {
                    trainer.model.save(dir.join(format!("step_{step}.ckpt")))?;
                }
                last_nll = nll;
            }
        }
        last = trainer.into_model();
    }
    if let Some(dir) = out_dir {
        best.0.save(dir.join("best.ckpt"))?;
        write_curve(dir.join("train.tsv"), &train_curve)?;
        write_curve(dir.join("valid.tsv"), &valid_curve)?;
    }
    Ok(FinetuneOutcome {
        best: best.0,
        best_step: best.1,
        best_valid_nll: best.2,
        last,
        last_valid_nll: last_nll,
        train_curve,
        valid_curve,
    })
}
