//! Unsupervised translation: on-the-fly back-translation, language
//! transfer, and their combination.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use crate::corpus::{LanguageCode, MonolingualCorpus, ParallelCorpus, Provenance, SentencePair};
use crate::decoding::{
    build_allowed_mask, greedy_batch, translate_sentences, BeamConfig, FrequencyRule,
};
use crate::error::{Error, Result};
use crate::eval::{corpus_bleu, exact_match, BleuReport, TokenizerHook};
use crate::model::{Batch, Seq2SeqModel};
use crate::rng;
use crate::tokenizer::{TokenId, Vocabulary, EOS};
use crate::training::{translation_example, translation_source, OptimizerConfig, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct BtConfig {
    /// Steps (counted across rounds) during which generation is restricted
    /// to tokens frequent in the output language's monolingual corpus.
    pub constrained_steps: usize,
    pub rounds: usize,
    pub updates_per_round: usize,
    /// Monolingual sentences back-translated per update.
    pub batch_sentences: usize,
    pub max_lr: f64,
    pub warmup: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub frequency_rule: FrequencyRule,
    /// Window (in generated sentences) for the copy detector.
    pub copy_window: usize,
    /// Mean token identity at or above which a window counts as copying.
    pub copy_threshold: f64,
    pub clip_norm: Option<f64>,
}

impl Default for BtConfig {
    fn default() -> Self {
        BtConfig {
            constrained_steps: 1000,
            rounds: 1,
            updates_per_round: 2000,
            batch_sentences: 32,
            max_lr: 3e-4,
            warmup: 100,
            dropout: 0.1,
            label_smoothing: 0.1,
            frequency_rule: FrequencyRule::default(),
            copy_window: 64,
            copy_threshold: 0.9,
            clip_norm: None,
        }
    }
}

impl BtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.batch_sentences == 0 || self.copy_window == 0 {
            return Err(Error::Config(
                "batch_sentences and copy_window must be positive".into(),
            ));
        }
        if self.updates_per_round > 0 {
            OptimizerConfig::new(self.max_lr, self.warmup, self.updates_per_round).validate()?;
        }
        Ok(())
    }
}

/// Which way an update trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Synthetic first-language source, real second-language target.
    Forward,
    Backward,
}

impl Direction {
    /// Even steps train forward, odd steps backward.
    pub fn at(step: usize) -> Direction {
        if step.is_multiple_of(2) {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

/// One row of the BT run manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub round: usize,
    pub direction: String,
    pub updates: usize,
    pub dev_score: f64,
}

pub const MANIFEST_HEADER: &str = "round\tdirection\tupdates\tdev_score";

pub fn manifest_tsv(rows: &[ManifestRow]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{}\t{}\t{}\t{}",
            r.round, r.direction, r.updates, r.dev_score
        )
        .expect("string write");
    }
    s
}

#[derive(Clone, Debug)]
pub struct BtOutcome {
    pub model: Seq2SeqModel<f32>,
    pub manifest: Vec<ManifestRow>,
    /// Windows in which generated output was at least `copy_threshold`
    /// identical to its input.
    pub copy_warnings: usize,
    /// Tokens emitted outside the allowed mask while constrained.
    pub constrained_violations: usize,
    pub constrained_tokens: usize,
    /// Per-update training losses.
    pub losses: Vec<f64>,
    /// Sample of synthetic pairs from the last update of each direction.
    pub synthetic_sample: Vec<SentencePair>,
}

/// Translation quality on an authentic parallel set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub bleu: BleuReport,
    pub exact_match: f64,
    pub hypotheses: Vec<String>,
}

/// Translates `test` sources and scores them against its targets.
/// Synthetic pairs are refused.
pub fn evaluate(
    model: &Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    test: &ParallelCorpus,
    beam: &BeamConfig,
) -> Result<Evaluation> {
    if !test.is_authentic() {
        return Err(Error::Config(
            "evaluation set contains synthetic pairs".into(),
        ));
    }
    let src_lid = vocab.lid(&test.source_lang)?;
    let sources: Vec<String> = test.pairs.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<String> = test.pairs.iter().map(|p| p.target.clone()).collect();
    let hyps = translate_sentences(model, vocab, &sources, src_lid, beam)?;
    Ok(Evaluation {
        bleu: corpus_bleu(&hyps, &refs, &TokenizerHook::whitespace())?,
        exact_match: exact_match(&hyps, &refs),
        hypotheses: hyps,
    })
}

/// Beam settings for translating into `target` with the model's length limit.
pub fn beam_for(
    model: &Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    target: &LanguageCode,
    beam_size: usize,
) -> Result<BeamConfig> {
    let lid = vocab.lid(target)?;
    let mut cfg = BeamConfig::new(lid, model.config().max_positions.min(128));
    cfg.beam_size = beam_size;
    Ok(cfg)
}

/// Fraction of `output` tokens that also occur in `input` (multiset overlap
/// over the longer length).
fn identity(input: &[TokenId], output: &[TokenId]) -> f64 {
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for &t in input {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for &t in output {
        if let Some(c) = counts.get_mut(&t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    common as f64 / input.len().max(output.len()).max(1) as f64
}

struct Side<'a> {
    lang: &'a LanguageCode,
    lid: TokenId,
    sentences: Vec<Vec<TokenId>>,
    allowed: Vec<bool>,
}

/// On-the-fly back-translation between the languages of `mono_a` and
/// `mono_b`. Step `s` (counted across rounds) trains the forward direction
/// (a to b) when even: real `b` sentences are translated into `a` with the
/// current weights and the model learns to recover them. Odd steps mirror
/// this. Each round restarts the learning-rate schedule.
pub fn online_bt(
    model: Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    mono_a: &MonolingualCorpus,
    mono_b: &MonolingualCorpus,
    cfg: &BtConfig,
    dev: Option<&ParallelCorpus>,
    seed: u64,
) -> Result<BtOutcome> {
    cfg.validate()?;
    let max_pos = model.config().max_positions;
    let make_side = |m: &'_ MonolingualCorpus| -> Result<Vec<Vec<TokenId>>> {
        let keep = max_pos.saturating_sub(2);
        Ok(m.sentences()
            .map(|s| {
                let mut ids = vocab.encode(s);
                ids.truncate(keep);
                ids
            })
            .filter(|ids| !ids.is_empty())
            .collect())
    };
    let sides = [
        Side {
            lang: &mono_a.lang,
            lid: vocab.lid(&mono_a.lang)?,
            sentences: make_side(mono_a)?,
            allowed: build_allowed_mask(mono_a, vocab, cfg.frequency_rule),
        },
        Side {
            lang: &mono_b.lang,
            lid: vocab.lid(&mono_b.lang)?,
            sentences: make_side(mono_b)?,
            allowed: build_allowed_mask(mono_b, vocab, cfg.frequency_rule),
        },
    ];
    let dev_rev = dev.map(ParallelCorpus::reversed);
    let mut out = BtOutcome {
        model,
        manifest: Vec::new(),
        copy_warnings: 0,
        constrained_violations: 0,
        constrained_tokens: 0,
        losses: Vec::new(),
        synthetic_sample: Vec::new(),
    };
    let mut window: Vec<f64> = Vec::new();
    let mut step = 0usize;
    for round in 1..=cfg.rounds {
        if cfg.updates_per_round == 0 {
            break;
        }
        let mut opt = OptimizerConfig::new(cfg.max_lr, cfg.warmup, cfg.updates_per_round);
        opt.clip_norm = cfg.clip_norm;
        let mut trainer = Trainer::new(out.model.clone(), opt)?;
        let mut sample: [Vec<SentencePair>; 2] = [Vec::new(), Vec::new()];
        for _ in 0..cfg.updates_per_round {
            let dir = Direction::at(step);
            // Forward: generate `a` from real `b`, train a -> b.
            let (gen, real) = match dir {
                Direction::Forward => (&sides[0], &sides[1]),
                Direction::Backward => (&sides[1], &sides[0]),
            };
            let mut pick = rng::derive(seed, &[5, step as u64]);
            let targets: Vec<&Vec<TokenId>> = (0..cfg.batch_sentences)
                .map(|_| &real.sentences[pick.random_range(0..real.sentences.len())])
                .collect();
            let sources: Vec<Vec<TokenId>> = targets
                .iter()
                .map(|t| translation_source(t, real.lid, max_pos))
                .collect();
            let constrained = step < cfg.constrained_steps;
            let longest = sources.iter().map(Vec::len).max().unwrap_or(1);
            let mut beam =
                BeamConfig::greedy(gen.lid, (max_pos - 2).min(longest + longest / 2 + 4));
            if constrained {
                beam.allowed = Some(gen.allowed.clone());
            }
            let hyps = greedy_batch(&trainer.model, &sources, &beam)?;
            let mut examples = Vec::with_capacity(hyps.len());
            sample[dir as usize].clear();
            for (h, t) in hyps.iter().zip(&targets) {
                let synth: Vec<TokenId> =
                    h.content().iter().copied().filter(|&x| x != EOS).collect();
                if constrained {
                    out.constrained_tokens += h.ids.len();
                    out.constrained_violations +=
                        h.ids.iter().filter(|&&x| !gen.allowed[x as usize]).count();
                }
                window.push(identity(t, &synth));
                if window.len() >= cfg.copy_window {
                    let mean = window.iter().sum::<f64>() / window.len() as f64;
                    if mean >= cfg.copy_threshold {
                        out.copy_warnings += 1;
                        log::warn!(
                            "step {step}: back-translations copy their input ({:.0}% identity)",
                            100.0 * mean
                        );
                    }
                    window.clear();
                }
                if synth.is_empty() {
                    continue;
                }
                examples.push(translation_example(&synth, gen.lid, t, real.lid, max_pos));
                if sample[dir as usize].len() < 2 {
                    sample[dir as usize].push(SentencePair {
                        source: vocab.decode_text(&synth)?,
                        target: vocab.decode_text(t)?,
                        provenance: Provenance::Synthetic { step },
                    });
                }
            }
            if !examples.is_empty() {
                let batch = Batch::new(&examples)?;
                let mut drop_rng = rng::derive(seed, &[6, step as u64]);
                let stats =
                    trainer.update(&batch, cfg.dropout, cfg.label_smoothing, &mut drop_rng)?;
                out.losses.push(stats.loss);
            }
            step += 1;
        }
        out.model = trainer.into_model();
        out.synthetic_sample = sample.concat();
        for (name, set, target) in [
            (
                format!("{}-{}", sides[0].lang, sides[1].lang),
                dev,
                sides[1].lang,
            ),
            (
                format!("{}-{}", sides[1].lang, sides[0].lang),
                dev_rev.as_ref(),
                sides[0].lang,
            ),
        ] {
            let dev_score = match set {
                Some(d) => {
                    evaluate(
                        &out.model,
                        vocab,
                        d,
                        &beam_for(&out.model, vocab, target, 1)?,
                    )?
                    .bleu
                    .score
                }
                None => f64::NAN,
            };
            out.manifest.push(ManifestRow {
                round,
                direction: name,
                updates: cfg.updates_per_round,
                dev_score,
            });
        }
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest_tsv(rows)).map_err(|e| Error::io(path, e))
}

/// Applies a model fine-tuned on another source language to `test` without
/// further training.
pub fn language_transfer(
    model: &Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    test: &ParallelCorpus,
    beam_size: usize,
) -> Result<Evaluation> {
    vocab.lid(&test.source_lang)?;
    let beam = beam_for(model, vocab, &test.target_lang, beam_size)?;
    evaluate(model, vocab, test, &beam)
}

/// Transfer-only, BT-only and transfer-then-BT scores on the same test set.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferReport {
    pub transfer: f64,
    pub bt_only: f64,
    pub combined: f64,
}

impl TransferReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "setting\tscore\ntransfer\t{}\nbt\t{}\ntransfer+bt\t{}\n",
            self.transfer, self.bt_only, self.combined
        )
    }
}

/// Runs BT from the transferred model and, separately, from `bt_init`
/// (typically the pre-trained model), and scores all three on `test`
/// (source = the new language, target = the shared one).
#[allow(clippy::too_many_arguments)]
pub fn transfer_plus_bt(
    transferred: Seq2SeqModel<f32>,
    bt_init: Seq2SeqModel<f32>,
    vocab: &Vocabulary,
    mono_src: &MonolingualCorpus,
    mono_tgt: &MonolingualCorpus,
    test: &ParallelCorpus,
    cfg: &BtConfig,
    beam_size: usize,
    seed: u64,
) -> Result<(Seq2SeqModel<f32>, TransferReport)> {
    let transfer = language_transfer(&transferred, vocab, test, beam_size)?
        .bleu
        .score;
    let bt_only = online_bt(bt_init, vocab, mono_src, mono_tgt, cfg, None, seed)?;
    let bt_score = language_transfer(&bt_only.model, vocab, test, beam_size)?
        .bleu
        .score;
    let combined = online_bt(transferred, vocab, mono_src, mono_tgt, cfg, None, seed)?;
    let combined_score = language_transfer(&combined.model, vocab, test, beam_size)?
        .bleu
        .score;
    Ok((
        combined.model,
        TransferReport {
            transfer,
            bt_only: bt_score,
            combined: combined_score,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_alternate_strictly() {
        let dirs: Vec<Direction> = (0..6).map(Direction::at).collect();
        assert_eq!(
            dirs,
            vec![
                Direction::Forward,
                Direction::Backward,
                Direction::Forward,
                Direction::Backward,
                Direction::Forward,
                Direction::Backward
            ]
        );
    }

    #[test]
    fn identity_measures_overlap() {
        assert_eq!(identity(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(identity(&[1, 2, 3], &[4, 5, 6]), 0.0);
        assert_eq!(identity(&[1, 1, 2], &[1, 2, 2, 7]), 0.5);
    }

    #[test]
    fn manifest_format() {
        let rows = vec![ManifestRow {
            round: 1,
            direction: "en-xx".into(),
            updates: 10,
            dev_score: 12.5,
        }];
        assert_eq!(
            manifest_tsv(&rows),
            "round\tdirection\tupdates\tdev_score\n1\ten-xx\t10\t12.5\n"
        );
    }
}
