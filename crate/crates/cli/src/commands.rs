use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use log::info;

use mdenoise_core::corpus::{
    load_monolingual, rebalance, CorpusCollection, LanguageCode, MonolingualCorpus, ParallelCorpus,
};
use mdenoise_core::decoding::{
    decode_document, format_documents, translate_sentences, BeamConfig, FrequencyRule,
};
use mdenoise_core::eval::{
    corpus_bleu_with, document_report, BleuReport, Granularity, Smoothing, TokenizerHook,
};
use mdenoise_core::model::{ModelConfig, Seq2SeqModel};
use mdenoise_core::noising::{pack, NoiseConfig};
use mdenoise_core::protocol::{bitext_sweep, pretrain_sweep, SweepRow, ToyProtocol};
use mdenoise_core::tokenizer::{train_vocab, Alphabet, TokenId, VocabConfig, Vocabulary, EOS};
use mdenoise_core::toy::{ToyTask, ToyTaskConfig};
use mdenoise_core::training::{
    curve_tsv, finetune, finetune_both_ways, pretrain, CurvePoint, FinetuneSchedule,
    OptimizerConfig, PretrainPreset, PretrainSchedule,
};
use mdenoise_core::unsupervised::{
    language_transfer, manifest_tsv, online_bt, transfer_plus_bt, BtConfig,
};

use crate::config::RunConfig;
use crate::exit::{Failure, Kind};
use crate::plot::{line_chart, Series};
use crate::Command;

type Res<T = ()> = Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::new(Kind::InvalidConfig, anyhow!(msg.into()))
}

const MODEL_KEYS: &[(&str, &str)] = &[
    ("model", "desk"),
    ("enc_layers", ""),
    ("dec_layers", ""),
    ("d_model", ""),
    ("heads", ""),
    ("ffn_dim", ""),
    ("max_positions", ""),
    ("final_layernorm", ""),
];

const BT_KEYS: &[(&str, &str)] = &[
    ("constrained_steps", "1000"),
    ("rounds", "1"),
    ("updates_per_round", "2000"),
    ("batch_sentences", "32"),
    ("bt_max_lr", "3e-4"),
    ("bt_warmup", "100"),
    ("bt_dropout", "0.1"),
    ("bt_label_smoothing", "0.1"),
    ("frequency_rule", "relative:0.01"),
    ("copy_window", "64"),
    ("copy_threshold", "0.9"),
];

fn defaults(cmd: Command) -> Vec<(&'static str, &'static str)> {
    let mut d: Vec<(&str, &str)> = vec![("out", "out"), ("seed", "1")];
    match cmd {
        Command::MakeToy => d.extend([
            ("ciphers", "xx"),
            ("shares", ""),
            ("related", ""),
            ("documents", "200"),
            ("sentences_per_document", "8"),
            ("vocab_size", "400"),
            ("train_pairs", "4096"),
            ("valid_pairs", "200"),
            ("test_pairs", "200"),
        ]),
        Command::TrainVocab => d.extend([
            ("corpora", ""),
            ("vocab_size", "1000"),
            ("spare_lids", "2"),
            ("alphabet", "observed"),
        ]),
        Command::Pretrain => {
            d.extend([
                ("corpora", ""),
                ("vocab", ""),
                ("preset", "mbartK"),
                ("languages", ""),
                ("alpha", "0.7"),
                ("steps", "1000"),
                ("max_lr", "1e-3"),
                ("warmup", ""),
                ("weight_decay", "0"),
                ("token_budget", "4096"),
                ("max_len", "128"),
                ("mask_ratio", "0.35"),
                ("span_lambda", "3.5"),
                ("permute_sentences", "true"),
                ("label_smoothing", "0.1"),
                ("checkpoint_every", "0"),
            ]);
            d.extend(MODEL_KEYS);
        }
        Command::Finetune => {
            d.extend([
                ("vocab", ""),
                ("train", ""),
                ("valid", ""),
                ("src", ""),
                ("tgt", ""),
                ("init", ""),
                ("preset", "low"),
                ("dropout", ""),
                ("label_smoothing", ""),
                ("warmup", ""),
                ("max_lr", ""),
                ("max_updates", ""),
                ("token_budget", ""),
                ("validate_every", ""),
                ("clip_norm", ""),
                ("keep_interval_checkpoints", "false"),
                ("both_directions", "false"),
            ]);
            d.extend(MODEL_KEYS);
        }
        Command::Translate => d.extend([
            ("vocab", ""),
            ("model", ""),
            ("input", ""),
            ("src", ""),
            ("tgt", ""),
            ("mode", "sentence"),
            ("beam", "5"),
            ("max_len", "128"),
            ("length_penalty", "1.0"),
        ]),
        Command::Bt => {
            d.extend([
                ("vocab", ""),
                ("model", ""),
                ("mono_a", ""),
                ("lang_a", ""),
                ("mono_b", ""),
                ("lang_b", ""),
                ("dev", ""),
            ]);
            d.extend(BT_KEYS);
        }
        Command::Transfer => {
            d.extend([
                ("vocab", ""),
                ("model", ""),
                ("test", ""),
                ("src", ""),
                ("tgt", ""),
                ("beam", "5"),
                ("mono_src", ""),
                ("mono_tgt", ""),
                ("bt_init", ""),
            ]);
            d.extend(BT_KEYS);
        }
        Command::Eval => d.extend([
            ("hyp", ""),
            ("ref", ""),
            ("granularity", "sentence"),
            ("smoothing", "none"),
            ("tokenizer", "whitespace"),
        ]),
        Command::Report => d.extend([
            ("kind", "curves"),
            ("curves", ""),
            ("sizes", "64,256,1024,4096"),
            ("pretrain_steps", "1000"),
            ("steps_grid", "0,250,500,1000"),
            ("pairs", "512"),
            ("updates", "300"),
            ("updates_per_pair", "0"),
            ("toy_languages", "xx"),
        ]),
    }
    d
}

fn name(cmd: Command) -> &'static str {
    match cmd {
        Command::MakeToy => "make-toy",
        Command::TrainVocab => "train-vocab",
        Command::Pretrain => "pretrain",
        Command::Finetune => "finetune",
        Command::Translate => "translate",
        Command::Bt => "bt",
        Command::Transfer => "transfer",
        Command::Eval => "eval",
        Command::Report => "report",
    }
}

pub fn run(cmd: Command, root: &Path, config: Option<&Path>, set: &[String]) -> Res {
    let cfg = RunConfig::resolve(&defaults(cmd), root, config, set)?;
    match cmd {
        Command::MakeToy => make_toy(&cfg),
        Command::TrainVocab => train_vocab_cmd(&cfg),
        Command::Pretrain => pretrain_cmd(&cfg),
        Command::Finetune => finetune_cmd(&cfg),
        Command::Translate => translate_cmd(&cfg),
        Command::Bt => bt_cmd(&cfg),
        Command::Transfer => transfer_cmd(&cfg),
        Command::Eval => eval_cmd(&cfg),
        Command::Report => report_cmd(&cfg),
    }
}

/// Creates the output directory and records the resolved configuration.
/// Called only after every input has been loaded and validated.
fn open_out(cfg: &RunConfig, cmd: Command) -> Res<PathBuf> {
    let out = cfg.path("out")?;
    fs::create_dir_all(&out)
        .map_err(|e| Failure::new(Kind::Other, anyhow!("creating {}: {e}", out.display())))?;
    write(
        &out.join(format!("{}.resolved.cfg", name(cmd))),
        &cfg.snapshot(),
    )?;
    Ok(out)
}

fn write(path: &Path, text: &str) -> Res {
    fs::write(path, text)
        .map_err(|e| Failure::new(Kind::Other, anyhow!("writing {}: {e}", path.display())))
}

fn lang(cfg: &RunConfig, key: &str) -> Res<LanguageCode> {
    let raw = cfg.raw(key);
    if raw.is_empty() {
        return Err(Failure::new(
            Kind::ConfigParse,
            anyhow!("{key} is required"),
        ));
    }
    Ok(LanguageCode::new(raw)?)
}

fn load_vocab(cfg: &RunConfig) -> Res<Vocabulary> {
    Ok(Vocabulary::load(&cfg.input("vocab")?)?)
}

/// Loads a checkpoint and checks it against the vocabulary.
fn load_model(path: &Path, vocab: &Vocabulary) -> Res<Seq2SeqModel<f32>> {
    let model = Seq2SeqModel::load(path)?;
    if model.config().vocab_size != vocab.size() {
        return Err(Failure::new(
            Kind::Shape,
            anyhow!(
                "checkpoint {} has vocab_size {} but the vocabulary has {} entries",
                path.display(),
                model.config().vocab_size,
                vocab.size()
            ),
        ));
    }
    Ok(model)
}

fn model_config(cfg: &RunConfig, vocab_size: usize) -> Res<ModelConfig> {
    let mut m = match cfg.raw("model") {
        "desk" => ModelConfig::desk(vocab_size),
        "large" => ModelConfig::large(vocab_size),
        other => {
            return Err(invalid(format!(
                "unknown model preset {other:?} (desk or large)"
            )))
        }
    };
    if let Some(v) = cfg.opt("enc_layers")? {
        m.enc_layers = v;
    }
    if let Some(v) = cfg.opt("dec_layers")? {
        m.dec_layers = v;
    }
    if let Some(v) = cfg.opt("d_model")? {
        m.d_model = v;
    }
    if let Some(v) = cfg.opt("heads")? {
        m.heads = v;
    }
    if let Some(v) = cfg.opt("ffn_dim")? {
        m.ffn_dim = v;
    }
    if let Some(v) = cfg.opt("max_positions")? {
        m.max_positions = v;
    }
    if let Some(v) = cfg.opt("final_layernorm")? {
        m.final_layernorm = v;
    }
    m.validate()?;
    Ok(m)
}

fn frequency_rule(raw: &str) -> Res<FrequencyRule> {
    let bad = || {
        Failure::new(
            Kind::ConfigParse,
            anyhow!("frequency_rule must be relative:<f> or absolute:<n>, got {raw:?}"),
        )
    };
    let (kind, v) = raw.split_once(':').ok_or_else(bad)?;
    match kind {
        "relative" => Ok(FrequencyRule::Relative(v.parse().map_err(|_| bad())?)),
        "absolute" => Ok(FrequencyRule::Absolute(v.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn bt_config(cfg: &RunConfig) -> Res<BtConfig> {
    let bt = BtConfig {
        constrained_steps: cfg.get("constrained_steps")?,
        rounds: cfg.get("rounds")?,
        updates_per_round: cfg.get("updates_per_round")?,
        batch_sentences: cfg.get("batch_sentences")?,
        max_lr: cfg.get("bt_max_lr")?,
        warmup: cfg.get("bt_warmup")?,
        dropout: cfg.get("bt_dropout")?,
        label_smoothing: cfg.get("bt_label_smoothing")?,
        frequency_rule: frequency_rule(cfg.raw("frequency_rule"))?,
        copy_window: cfg.get("copy_window")?,
        copy_threshold: cfg.get("copy_threshold")?,
        clip_norm: None,
    };
    bt.validate()?;
    Ok(bt)
}

fn make_toy(cfg: &RunConfig) -> Res {
    let ciphers: Vec<String> = cfg.list("ciphers")?;
    let shares: Vec<f64> = cfg.list("shares")?;
    if !shares.is_empty() && shares.len() != ciphers.len() {
        return Err(invalid("shares must list one value per cipher"));
    }
    let mut related = Vec::new();
    for item in cfg.list::<String>("related")? {
        let parts: Vec<&str> = item.split(':').collect();
        let [code, of, share] = parts[..] else {
            return Err(Failure::new(
                Kind::ConfigParse,
                anyhow!("related entries look like code:of:share, got {item:?}"),
            ));
        };
        let share: f64 = share
            .parse()
            .map_err(|_| Failure::new(Kind::ConfigParse, anyhow!("bad share in {item:?}")))?;
        related.push((code.to_string(), of.to_string(), share));
    }
    let spec = ToyTaskConfig {
        seed: cfg.get("seed")?,
        ciphers: ciphers
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), shares.get(i).copied().unwrap_or(0.0)))
            .collect(),
        related,
        documents: cfg.get("documents")?,
        sentences_per_document: cfg.get("sentences_per_document")?,
        vocab_size: cfg.get("vocab_size")?,
    };
    let task = ToyTask::build(&spec)?;
    let sizes = [
        ("train", cfg.get::<usize>("train_pairs")?),
        ("valid", cfg.get("valid_pairs")?),
        ("test", cfg.get("test_pairs")?),
    ];
    let out = open_out(cfg, Command::MakeToy)?;
    let mut manifest = String::new();
    for (code, corpus) in &task.collection.corpora {
        let file = format!("mono.{code}.txt");
        corpus.save(&out.join(&file))?;
        manifest.push_str(&format!("{code}\t{file}\n"));
    }
    write(&out.join("corpora.tsv"), &manifest)?;
    task.vocab.save(&out.join("vocab.txt"))?;
    let base = task.base_code();
    for code in task.collection.corpora.keys().filter(|c| **c != base) {
        for (split, n) in sizes {
            if n == 0 {
                continue;
            }
            let par = task.parallel(code, &base, n, split)?;
            par.save(&out.join(format!("{code}-{base}.{split}.tsv")))?;
        }
    }
    info!(
        "wrote toy corpora for {} languages to {}",
        task.collection.num_languages(),
        out.display()
    );
    Ok(())
}

fn train_vocab_cmd(cfg: &RunConfig) -> Res {
    let collection = CorpusCollection::load_manifest(&cfg.input("corpora")?)?;
    let vc = VocabConfig {
        target_size: cfg.get("vocab_size")?,
        spare_lids: cfg.get("spare_lids")?,
        alphabet: match cfg.raw("alphabet") {
            "observed" => Alphabet::Observed,
            "full" => Alphabet::Full,
            other => {
                return Err(invalid(format!(
                    "alphabet must be observed or full, got {other:?}"
                )))
            }
        },
    };
    let vocab = train_vocab(&collection, &vc)?;
    let out = open_out(cfg, Command::TrainVocab)?;
    vocab.save(&out.join("vocab.txt"))?;
    info!(
        "vocabulary of {} entries written to {}",
        vocab.size(),
        out.join("vocab.txt").display()
    );
    Ok(())
}

fn pretrain_cmd(cfg: &RunConfig) -> Res {
    let vocab = load_vocab(cfg)?;
    let full = CorpusCollection::load_manifest(&cfg.input("corpora")?)?;
    let languages: Vec<String> = cfg.list("languages")?;
    let preset = match cfg.raw("preset") {
        "mbartK" => PretrainPreset::MbartK(
            languages
                .iter()
                .map(|l| LanguageCode::new(l))
                .collect::<Result<_, _>>()?,
        ),
        "bart-mono" => match &languages[..] {
            [one] => PretrainPreset::BartMono(LanguageCode::new(one)?),
            _ => return Err(invalid("bart-mono needs exactly one entry in languages")),
        },
        other => {
            return Err(invalid(format!(
                "unknown preset {other:?} (mbartK or bart-mono)"
            )))
        }
    };
    let mut collection = preset.select(&full)?;
    collection.count_tokens(&vocab);
    let weights = rebalance(&collection, cfg.get("alpha")?)?;
    let model_cfg = model_config(cfg, vocab.size())?;
    let seed: u64 = cfg.get("seed")?;
    let steps: usize = cfg.get("steps")?;
    let warmup = cfg.opt("warmup")?.unwrap_or((steps / 10).max(1));
    let mut opt = OptimizerConfig::new(cfg.get("max_lr")?, warmup, steps);
    opt.weight_decay = cfg.get("weight_decay")?;
    opt.validate()?;
    let noise = NoiseConfig {
        mask_ratio: cfg.get("mask_ratio")?,
        span_lambda: cfg.get("span_lambda")?,
        permute_sentences: cfg.get("permute_sentences")?,
    };
    noise.validate()?;
    let every: usize = cfg.get("checkpoint_every")?;
    let schedule = PretrainSchedule {
        token_budget: cfg.get("token_budget")?,
        max_len: cfg.get("max_len")?,
        label_smoothing: cfg.get("label_smoothing")?,
        checkpoint_every: if every == 0 { steps } else { every },
        ..PretrainSchedule::default()
    };
    schedule.validate()?;
    let model = Seq2SeqModel::init(model_cfg, seed)?;
    let out = open_out(cfg, Command::Pretrain)?;
    info!(
        "pre-training {} parameters for {steps} steps on {} languages",
        model.num_params(),
        collection.num_languages()
    );
    let outcome = pretrain(
        model,
        &vocab,
        &collection,
        &weights,
        &noise,
        &schedule,
        &opt,
        seed,
        Some(&out),
    )?;
    if let (Some(first), Some(last)) = (outcome.curve.first(), outcome.curve.last()) {
        info!("loss {:.4} -> {:.4}", first.loss, last.loss);
    }
    Ok(())
}

fn finetune_cmd(cfg: &RunConfig) -> Res {
    let vocab = load_vocab(cfg)?;
    let (src, tgt) = (lang(cfg, "src")?, lang(cfg, "tgt")?);
    vocab.lid(&src)?;
    vocab.lid(&tgt)?;
    let train = ParallelCorpus::load(&cfg.input("train")?, src.clone(), tgt.clone())?;
    let valid = ParallelCorpus::load(&cfg.input("valid")?, src, tgt)?;
    let mut schedule = match cfg.raw("preset") {
        "low" => FinetuneSchedule::low_resource(),
        "high" => FinetuneSchedule::high_resource(),
        other => return Err(invalid(format!("unknown preset {other:?} (low or high)"))),
    };
    if let Some(v) = cfg.opt("dropout")? {
        schedule.dropout = v;
    }
    if let Some(v) = cfg.opt("label_smoothing")? {
        schedule.label_smoothing = v;
    }
    if let Some(v) = cfg.opt("warmup")? {
        schedule.warmup = v;
    }
    if let Some(v) = cfg.opt("max_lr")? {
        schedule.max_lr = v;
    }
    if let Some(v) = cfg.opt("max_updates")? {
        schedule.max_updates = v;
    }
    if let Some(v) = cfg.opt("token_budget")? {
        schedule.token_budget = v;
    }
    if let Some(v) = cfg.opt("validate_every")? {
        schedule.validate_every = v;
    }
    schedule.clip_norm = cfg.opt("clip_norm")?;
    schedule.keep_interval_checkpoints = cfg.get("keep_interval_checkpoints")?;
    schedule.validate()?;
    let seed: u64 = cfg.get("seed")?;
    let model = match cfg.optional_input("init")? {
        Some(path) => load_model(&path, &vocab)?,
        None => {
            info!("no init checkpoint: fine-tuning from random initialization");
            Seq2SeqModel::init(model_config(cfg, vocab.size())?, seed)?
        }
    };
    let out = open_out(cfg, Command::Finetune)?;
    let outcome = if cfg.get("both_directions")? {
        finetune_both_ways(model, &vocab, &train, &valid, &schedule, seed, Some(&out))?
    } else {
        finetune(model, &vocab, &train, &valid, &schedule, seed, Some(&out))?
    };
    info!(
        "best validation NLL {:.4} at update {} (final {:.4})",
        outcome.best_valid_nll, outcome.best_step, outcome.last_valid_nll
    );
    Ok(())
}

fn beam_config(cfg: &RunConfig, tgt_lid: TokenId) -> Res<BeamConfig> {
    let mut beam = BeamConfig::new(tgt_lid, cfg.get("max_len")?);
    beam.beam_size = cfg.get("beam")?;
    beam.length_penalty = cfg.get("length_penalty")?;
    Ok(beam)
}

fn translate_cmd(cfg: &RunConfig) -> Res {
    let vocab = load_vocab(cfg)?;
    let model = load_model(&cfg.input("model")?, &vocab)?;
    let (src, tgt) = (lang(cfg, "src")?, lang(cfg, "tgt")?);
    let (src_lid, tgt_lid) = (vocab.lid(&src)?, vocab.lid(&tgt)?);
    let beam = beam_config(cfg, tgt_lid)?;
    beam.validate(vocab.size())?;
    let input = cfg.input("input")?;
    let text = match cfg.raw("mode") {
        "sentence" => {
            let raw = fs::read_to_string(&input)?;
            let lines: Vec<String> = raw
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            if lines.is_empty() {
                return Err(Failure::new(
                    Kind::MalformedInput,
                    anyhow!("{} has no sentences", input.display()),
                ));
            }
            let mut out = translate_sentences(&model, &vocab, &lines, src_lid, &beam)?.join("\n");
            out.push('\n');
            out
        }
        "document" => {
            let corpus = load_monolingual(&input, src)?;
            let max = model.config().max_positions;
            let mut docs = Vec::with_capacity(corpus.documents.len());
            let mut truncated = 0;
            for doc in &corpus.documents {
                let single = MonolingualCorpus::new(corpus.lang.clone(), vec![doc.clone()])?;
                let mut sentences = Vec::new();
                for inst in pack(&single, &vocab, max)?.instances {
                    let decoded = decode_document(&model, &inst.tokens(), &beam)?;
                    truncated += decoded.truncated as usize;
                    for s in &decoded.sentences {
                        let ids: Vec<TokenId> = s.iter().copied().filter(|&t| t != EOS).collect();
                        sentences.push(vocab.decode_text(&ids)?);
                    }
                }
                docs.push(sentences);
            }
            if truncated > 0 {
                log::warn!("{truncated} instances hit max_len before the language id");
            }
            format_documents(&docs)
        }
        other => {
            return Err(invalid(format!(
                "mode must be sentence or document, got {other:?}"
            )))
        }
    };
    let out = open_out(cfg, Command::Translate)?;
    write(&out.join("translations.txt"), &text)
}

fn bt_cmd(cfg: &RunConfig) -> Res {
    let vocab = load_vocab(cfg)?;
    let model = load_model(&cfg.input("model")?, &vocab)?;
    let (la, lb) = (lang(cfg, "lang_a")?, lang(cfg, "lang_b")?);
    let mono_a = load_monolingual(&cfg.input("mono_a")?, la.clone())?;
    let mono_b = load_monolingual(&cfg.input("mono_b")?, lb.clone())?;
    vocab.lid(&la)?;
    vocab.lid(&lb)?;
    let dev = match cfg.optional_input("dev")? {
        Some(p) => Some(ParallelCorpus::load(&p, la, lb)?),
        None => None,
    };
    let bt = bt_config(cfg)?;
    let out = open_out(cfg, Command::Bt)?;
    let outcome = online_bt(
        model,
        &vocab,
        &mono_a,
        &mono_b,
        &bt,
        dev.as_ref(),
        cfg.get("seed")?,
    )?;
    outcome.model.save(out.join("bt.ckpt"))?;
    write(&out.join("manifest.tsv"), &manifest_tsv(&outcome.manifest))?;
    let curve: Vec<CurvePoint> = outcome
        .losses
        .iter()
        .enumerate()
        .map(|(i, &loss)| CurvePoint {
            step: i + 1,
            loss,
            lr: f64::NAN,
            dropout: bt.dropout,
        })
        .collect();
    write(&out.join("loss.tsv"), &curve_tsv(&curve))?;
    info!(
        "{} copy warnings, {} disallowed tokens in the constrained phase",
        outcome.copy_warnings, outcome.constrained_violations
    );
    Ok(())
}

fn transfer_cmd(cfg: &RunConfig) -> Res {
    let vocab = load_vocab(cfg)?;
    let model = load_model(&cfg.input("model")?, &vocab)?;
    let (src, tgt) = (lang(cfg, "src")?, lang(cfg, "tgt")?);
    let test = ParallelCorpus::load(&cfg.input("test")?, src.clone(), tgt.clone())?;
    let beam: usize = cfg.get("beam")?;
    let with_bt = !cfg.raw("mono_src").is_empty();
    let bt_inputs = if with_bt {
        let mono_src = load_monolingual(&cfg.input("mono_src")?, src)?;
        let mono_tgt = load_monolingual(&cfg.input("mono_tgt")?, tgt)?;
        let init = load_model(&cfg.input("bt_init")?, &vocab)?;
        Some((mono_src, mono_tgt, init, bt_config(cfg)?))
    } else {
        None
    };
    let eval = language_transfer(&model, &vocab, &test, beam)?;
    let out = open_out(cfg, Command::Transfer)?;
    write(
        &out.join("hypotheses.txt"),
        &(eval.hypotheses.join("\n") + "\n"),
    )?;
    match bt_inputs {
        None => write(&out.join("transfer.txt"), &eval.bleu.to_kv()),
        Some((mono_src, mono_tgt, init, bt)) => {
            let (combined, report) = transfer_plus_bt(
                model,
                init,
                &vocab,
                &mono_src,
                &mono_tgt,
                &test,
                &bt,
                beam,
                cfg.get("seed")?,
            )?;
            combined.save(out.join("transfer_bt.ckpt"))?;
            write(&out.join("transfer.tsv"), &report.to_tsv())
        }
    }
}

fn read_docs(path: &Path) -> Res<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let mut docs = vec![Vec::new()];
    for line in text.lines() {
        if line.trim().is_empty() {
            if !docs.last().expect("nonempty").is_empty() {
                docs.push(Vec::new());
            }
        } else {
            docs.last_mut()
                .expect("nonempty")
                .push(line.trim().to_string());
        }
    }
    if docs.last().is_some_and(Vec::is_empty) {
        docs.pop();
    }
    Ok(docs)
}

/// One segment per line; blank lines are empty segments (an empty
/// translation is still a hypothesis).
fn read_lines(path: &Path) -> Res<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_string())
        .collect())
}

fn eval_cmd(cfg: &RunConfig) -> Res {
    let (hyp, reference) = (cfg.input("hyp")?, cfg.input("ref")?);
    let hook = match cfg.raw("tokenizer") {
        "whitespace" => TokenizerHook::whitespace(),
        "char" => TokenizerHook::new("char", |s| {
            s.chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect()
        }),
        other => {
            return Err(invalid(format!(
                "tokenizer must be whitespace or char, got {other:?}"
            )))
        }
    };
    let smoothing = match cfg.raw("smoothing") {
        "none" => Smoothing::None,
        "add-one" => Smoothing::AddOne,
        other => {
            return Err(invalid(format!(
                "smoothing must be none or add-one, got {other:?}"
            )))
        }
    };
    let (kv, tsv) = match cfg.raw("granularity") {
        "sentence" => {
            let (h, r) = (read_lines(&hyp)?, read_lines(&reference)?);
            let report = corpus_bleu_with(&h, &r, &hook, smoothing, Granularity::Sentence)?;
            (
                report.to_kv(),
                format!("{}\n{}\n", BleuReport::TSV_HEADER, report.to_tsv_row()),
            )
        }
        "document" => {
            let report = document_report(&read_docs(&hyp)?, &read_docs(&reference)?, &hook)?;
            let mut kv = report.d_bleu.to_kv();
            let mut tsv = format!(
                "{}\n{}\n",
                BleuReport::TSV_HEADER,
                report.d_bleu.to_tsv_row()
            );
            let misaligned = report.alignment.iter().filter(|a| !a.aligned).count();
            kv.push_str(&format!("misaligned_documents={misaligned}\n"));
            match &report.s_bleu {
                Some(s) => {
                    kv.push_str(&format!("s_bleu={}\n", s.score));
                    tsv.push_str(&s.to_tsv_row());
                    tsv.push('\n');
                }
                None => kv.push_str("s_bleu=suppressed\n"),
            }
            (kv, tsv)
        }
        other => {
            return Err(invalid(format!(
                "granularity must be sentence or document, got {other:?}"
            )))
        }
    };
    let out = open_out(cfg, Command::Eval)?;
    write(&out.join("bleu.txt"), &kv)?;
    write(&out.join("bleu.tsv"), &tsv)?;
    print!("{kv}");
    Ok(())
}

fn read_curve(path: &Path) -> Res<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let parse = |s: Option<&&str>| s.and_then(|v| v.parse::<f64>().ok());
        match (parse(cols.first()), parse(cols.get(1))) {
            (Some(x), Some(y)) => points.push((x, y)),
            _ => {
                return Err(Failure::new(
                    Kind::MalformedInput,
                    anyhow!("{}:{}: expected step\\tloss columns", path.display(), n + 1),
                ))
            }
        }
    }
    Ok(points)
}

fn sweep_outputs(rows: &[SweepRow], x_name: &str) -> (String, Vec<Series>) {
    let mut tsv =
        format!("{x_name}\tpretrained_bleu\trandom_bleu\tgap\tpretrained_exact\trandom_exact\n");
    for r in rows {
        tsv.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            r.x,
            r.pretrained.bleu,
            r.random.bleu,
            r.pretrained.bleu - r.random.bleu,
            r.pretrained.exact_match,
            r.random.exact_match
        ));
    }
    let series = vec![
        Series {
            name: "pre-trained".into(),
            points: rows
                .iter()
                .map(|r| (r.x as f64, r.pretrained.bleu))
                .collect(),
        },
        Series {
            name: "random init".into(),
            points: rows.iter().map(|r| (r.x as f64, r.random.bleu)).collect(),
        },
    ];
    (tsv, series)
}

fn report_cmd(cfg: &RunConfig) -> Res {
    let seed: u64 = cfg.get("seed")?;
    match cfg.raw("kind") {
        "curves" => {
            let files: Vec<String> = cfg.list("curves")?;
            if files.is_empty() {
                return Err(Failure::new(
                    Kind::ConfigParse,
                    anyhow!("curves needs at least one TSV path"),
                ));
            }
            let mut series = Vec::new();
            for f in &files {
                let path = cfg.root().join(f);
                if !path.exists() {
                    return Err(Failure::new(
                        Kind::MissingInput,
                        anyhow!("{} does not exist", path.display()),
                    ));
                }
                series.push(Series {
                    name: f.clone(),
                    points: read_curve(&path)?,
                });
            }
            let out = open_out(cfg, Command::Report)?;
            write(
                &out.join("curves.svg"),
                &line_chart("training curves", "step", "loss", &series, false),
            )
        }
        kind @ ("bitext" | "pretrain-steps") => {
            let protocol = ToyProtocol {
                seed,
                languages: cfg.list("toy_languages")?,
                pretrain_steps: cfg.get("pretrain_steps")?,
                finetune_updates: cfg.get("updates")?,
                finetune_updates_per_pair: cfg.get("updates_per_pair")?,
                ..ToyProtocol::default()
            };
            protocol.validate()?;
            let bitext = kind == "bitext";
            let grid: Vec<usize> = cfg.list(if bitext { "sizes" } else { "steps_grid" })?;
            let pairs: usize = cfg.get("pairs")?;
            if grid.is_empty() {
                return Err(invalid("sweep grid is empty"));
            }
            let out = open_out(cfg, Command::Report)?;
            let (rows, x_name, stem) = if bitext {
                (bitext_sweep(&protocol, &grid)?, "pairs", "sweep_bitext")
            } else {
                let work = out.join("pretrain_checkpoints");
                fs::create_dir_all(&work)?;
                (
                    pretrain_sweep(&protocol, &grid, pairs, &work)?,
                    "pretrain_steps",
                    "sweep_pretrain",
                )
            };
            let (tsv, series) = sweep_outputs(&rows, x_name);
            write(&out.join(format!("{stem}.tsv")), &tsv)?;
            write(
                &out.join(format!("{stem}.svg")),
                &line_chart(
                    &format!("BLEU vs {x_name}"),
                    x_name,
                    "BLEU",
                    &series,
                    bitext,
                ),
            )?;
            print!("{tsv}");
            Ok(())
        }
        other => Err(invalid(format!(
            "kind must be curves, bitext or pretrain-steps, got {other:?}"
        ))),
    }
}
