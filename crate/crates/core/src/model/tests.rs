use super::*;
use crate::noising::NoisedExample;
use crate::tokenizer::PAD;

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        enc_layers: 2,
        dec_layers: 2,
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        dropout: 0.0,
        final_layernorm: true,
        vocab_size: vocab,
        max_positions: 16,
    }
}

fn random_batch(vocab: u32, seed: u64) -> Batch {
    let mut r = rng::seeded(seed);
    let mut seq = |n: usize| -> Vec<u32> { (0..n).map(|_| r.random_range(5..vocab)).collect() };
    let examples = vec![
        NoisedExample::new(seq(5), 4, seq(4)),
        NoisedExample::new(seq(3), 4, seq(6)),
        NoisedExample::new(seq(7), 4, seq(2)),
    ];
    Batch::new(&examples).unwrap()
}

#[test]
fn same_seed_same_parameters() {
    let a = Seq2SeqModel::<f32>::init(tiny(20), 7).unwrap();
    let b = Seq2SeqModel::<f32>::init(tiny(20), 7).unwrap();
    let c = Seq2SeqModel::<f32>::init(tiny(20), 8).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn embedding_shape_follows_config() {
    let m = Seq2SeqModel::<f32>::init(tiny(100), 0).unwrap();
    assert_eq!(m.embedding().dim(), (100, 8));
    assert_eq!(m.spec("embed.tokens").unwrap().shape, vec![100, 8]);
}

#[test]
fn initial_values_respect_declared_bounds() {
    let m = Seq2SeqModel::<f64>::init(ModelConfig::desk(300), 3).unwrap();
    for spec in m.specs() {
        let bound = spec.init_bound();
        let vals = &m.params()[spec.range()];
        match spec.init {
            Init::Zeros => assert!(vals.iter().all(|&v| v == 0.0), "{}", spec.name),
            Init::Ones => assert!(vals.iter().all(|&v| v == 1.0), "{}", spec.name),
            Init::Uniform(_) => assert!(vals.iter().all(|v| v.abs() <= bound), "{}", spec.name),
        }
    }
    assert!(m.all_finite());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = tiny(10);
    c.heads = 3;
    assert!(Seq2SeqModel::<f32>::init(c, 0).is_err());
    let mut c = tiny(10);
    c.enc_layers = 0;
    assert!(Seq2SeqModel::<f32>::init(c, 0).is_err());
    let large = ModelConfig::large(1000);
    assert_eq!(
        (
            large.enc_layers,
            large.dec_layers,
            large.d_model,
            large.heads
        ),
        (12, 12, 1024, 16)
    );
    assert!(large.validate().is_ok());
}

#[test]
fn final_layernorm_flag_controls_blocks() {
    let mut c = tiny(10);
    assert!(Seq2SeqModel::<f32>::init(c.clone(), 0)
        .unwrap()
        .spec("enc.final_ln.gamma")
        .is_some());
    c.final_layernorm = false;
    let m = Seq2SeqModel::<f32>::init(c, 0).unwrap();
    assert!(m.spec("enc.final_ln.gamma").is_none());
    assert!(m.spec("dec.final_ln.gamma").is_none());
}

#[test]
fn output_shape_and_softmax_rows() {
    let m = Seq2SeqModel::<f32>::init(tiny(20), 1).unwrap();
    let batch = random_batch(20, 1);
    let logits = m.forward(&batch).unwrap();
    assert_eq!(logits.dim(), (3, 6, 20));
    for row in logits.rows() {
        let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f64 = row.iter().map(|&v| ((v - mx) as f64).exp()).sum();
        let s: f64 = row.iter().map(|&v| ((v - mx) as f64).exp() / z).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn rejects_bad_ids_and_overlong_sequences() {
    let m = Seq2SeqModel::<f32>::init(tiny(20), 1).unwrap();
    let bad = Batch::new(&[NoisedExample::new(vec![25], 4, vec![6])]).unwrap();
    assert!(matches!(
        m.forward(&bad),
        Err(Error::TokenOutOfRange { id: 25, .. })
    ));
    let long = Batch::new(&[NoisedExample::new(vec![6; 17], 4, vec![6])]).unwrap();
    assert!(matches!(
        m.forward(&long),
        Err(Error::SequenceTooLong { len: 17, max: 16 })
    ));
}

#[test]
fn decoder_is_causal() {
    let m = Seq2SeqModel::<f32>::init(tiny(20), 2).unwrap();
    let batch = random_batch(20, 2);
    let base = m.forward(&batch).unwrap();
    for t in 0..batch.tgt_len {
        let mut perturbed = batch.clone();
        for b in 0..batch.size {
            let i = b * batch.tgt_len + t;
            perturbed.decoder_input[i] = if perturbed.decoder_input[i] == 6 {
                7
            } else {
                6
            };
        }
        let out = m.forward(&perturbed).unwrap();
        for b in 0..batch.size {
            for s in 0..batch.tgt_len {
                let diff = (0..20)
                    .map(|v| (out[[b, s, v]] - base[[b, s, v]]).abs())
                    .fold(0.0f32, f32::max);
                if s < t {
                    assert!(diff <= 1e-5, "position {s} moved after perturbing {t}");
                } else if s == t {
                    assert!(diff > 1e-5, "position {t} ignored its own input");
                }
            }
        }
    }
}

#[test]
fn source_padding_is_invisible() {
    let m = Seq2SeqModel::<f32>::init(tiny(20), 3).unwrap();
    let batch = random_batch(20, 3);
    let base = m.forward(&batch).unwrap();
    let padded = m.forward(&batch.pad_source(5)).unwrap();
    let mask = batch.loss_mask();
    let v = base.dim().2;
    let a = base.into_shape_with_order((mask.len(), v)).unwrap();
    let b = padded.into_shape_with_order((mask.len(), v)).unwrap();
    for (i, (ra, rb)) in a.rows().into_iter().zip(b.rows()).enumerate() {
        if mask[i] {
            let diff = ra
                .iter()
                .zip(rb.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(diff <= 1e-5, "row {i} differs by {diff}");
        }
    }
}

/// Central-difference check of every parameter gradient in `f64`.
fn gradient_check(seed: u64) {
    let mut m = Seq2SeqModel::<f64>::init(tiny(12), seed).unwrap();
    // Nonzero biases and gains so their gradients are exercised in general position.
    let mut r = rng::seeded(seed ^ 0xabc);
    for v in m.params_mut() {
        *v += 0.1 * (r.random::<f64>() - 0.5);
    }
    let batch = random_batch(12, seed);
    let eps_ls = 0.1;
    let (_, grads) = m.loss_and_grad(&batch, eps_ls, 0.0, None).unwrap();
    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    for spec in m.specs().to_vec() {
        for i in spec.range() {
            let orig = m.params()[i];
            m.params_mut()[i] = orig + h;
            let fp = m.loss_and_grad(&batch, eps_ls, 0.0, None).unwrap().0.loss;
            m.params_mut()[i] = orig - h;
            let fm = m.loss_and_grad(&batch, eps_ls, 0.0, None).unwrap().0.loss;
            m.params_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let an = grads[i];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if err > worst.0 {
                worst = (
                    err,
                    format!("{}[{}]: fd {fd} analytic {an}", spec.name, i - spec.offset),
                );
            }
        }
    }
    assert!(worst.0 < 1e-3, "seed {seed}: {}", worst.1);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        gradient_check(seed);
    }
}

#[test]
fn gradients_with_dropout_match_fixed_mask_differences() {
    let m = Seq2SeqModel::<f64>::init(tiny(12), 9).unwrap();
    let batch = random_batch(12, 9);
    let (out, grads) = m
        .loss_and_grad(&batch, 0.0, 0.2, Some(&mut rng::seeded(5)))
        .unwrap();
    let (again, _) = m
        .loss_and_grad(&batch, 0.0, 0.2, Some(&mut rng::seeded(5)))
        .unwrap();
    assert_eq!(out.loss, again.loss);
    let mut m2 = m.clone();
    let h = 1e-5;
    for i in (0..m.num_params()).step_by(37) {
        m2.params_mut()[i] = m.params()[i] + h;
        let fp = m2
            .loss_and_grad(&batch, 0.0, 0.2, Some(&mut rng::seeded(5)))
            .unwrap()
            .0
            .loss;
        m2.params_mut()[i] = m.params()[i] - h;
        let fm = m2
            .loss_and_grad(&batch, 0.0, 0.2, Some(&mut rng::seeded(5)))
            .unwrap()
            .0
            .loss;
        m2.params_mut()[i] = m.params()[i];
        let fd = (fp - fm) / (2.0 * h);
        assert!((fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6) < 1e-3);
    }
}

#[test]
fn output_projection_shares_the_input_embedding() {
    let mut m = Seq2SeqModel::<f64>::init(tiny(12), 4).unwrap();
    let names: Vec<&str> = m.specs().iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names
            .iter()
            .filter(|n| n.starts_with("embed.tokens"))
            .count(),
        1
    );
    // Token 11 never occurs in the batch, so its embedding gradient comes
    // only from the output projection.
    let batch = Batch::new(&[NoisedExample::new(vec![5, 6, 7], 4, vec![8, 9])]).unwrap();
    let (_, grads) = m.loss_and_grad(&batch, 0.0, 0.0, None).unwrap();
    let spec = m.spec("embed.tokens").unwrap().clone();
    let row = spec.offset + 11 * 8..spec.offset + 12 * 8;
    assert!(grads[row.clone()].iter().any(|&g| g != 0.0));
    // Editing that row moves both the output logit for 11 and the encoding of 11.
    let before_logits = m.forward(&batch).unwrap();
    let before_enc = m.encode_source(&[11]).unwrap().states;
    for v in &mut m.params_mut()[row] {
        *v += 0.5;
    }
    let after_logits = m.forward(&batch).unwrap();
    assert_ne!(before_logits[[0, 0, 11]], after_logits[[0, 0, 11]]);
    assert_eq!(before_logits[[0, 0, 10]], after_logits[[0, 0, 10]]);
    assert_ne!(before_enc, m.encode_source(&[11]).unwrap().states);
}

#[test]
fn incremental_decoding_matches_full_forward() {
    let m = Seq2SeqModel::<f64>::init(tiny(20), 5).unwrap();
    let batch = random_batch(20, 5);
    let full = m.forward(&batch).unwrap();
    for b in 0..batch.size {
        let src = &batch.source[b * batch.src_len..b * batch.src_len + batch.source_lengths[b]];
        let enc = m.encode_source(src).unwrap();
        let mut state = [m.decoder_start()];
        for t in 0..batch.target_lengths[b] {
            let tok = batch.decoder_input[b * batch.tgt_len + t];
            let logits = m.decode_step(&[&enc], &mut state, &[tok]).unwrap();
            for v in 0..20 {
                assert!((logits[[0, v]] - full[[b, t, v]]).abs() < 1e-9);
            }
        }
        assert_eq!(state[0].len(), batch.target_lengths[b]);
    }
    // Batched encoding agrees with single encoding.
    let sources: Vec<Vec<u32>> = (0..batch.size)
        .map(|b| {
            batch.source[b * batch.src_len..b * batch.src_len + batch.source_lengths[b]].to_vec()
        })
        .collect();
    let many = m.encode_many(&sources).unwrap();
    for (s, e) in sources.iter().zip(&many) {
        let one = m.encode_source(s).unwrap();
        let diff = (&one.states - &e.states)
            .mapv(f64::abs)
            .fold(0.0, |a: f64, &b| a.max(b));
        assert!(diff < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let m = Seq2SeqModel::<f32>::init(tiny(20), 6).unwrap();
    let bytes = m.to_bytes();
    let back = Seq2SeqModel::from_bytes(&bytes).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.params(), m.params());
    assert_eq!(back.to_bytes(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    m.save(&path).unwrap();
    assert_eq!(Seq2SeqModel::load(&path).unwrap().params(), m.params());
}

#[test]
fn checkpoint_shape_mismatch_is_reported() {
    let m = Seq2SeqModel::<f32>::init(tiny(20), 6).unwrap();
    let mut bytes = m.to_bytes();
    // Rewrite vocab_size in the header without touching the blocks.
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let at = text.find("vocab_size=20").unwrap() + "vocab_size=".len();
    bytes[at..at + 2].copy_from_slice(b"21");
    assert!(matches!(
        Seq2SeqModel::from_bytes(&bytes),
        Err(Error::Shape { .. })
    ));
    assert!(Seq2SeqModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Seq2SeqModel::from_bytes(b"nonsense").is_err());
}

#[test]
fn pad_token_is_zero() {
    assert_eq!(PAD, 0);
}
