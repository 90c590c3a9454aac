use super::*;
use crate::encoding::TYPE_PERSONA;

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        model_dim: 8,
        ff_dim: 12,
        vocab_size: 11,
        max_position: 12,
        max_turn: 4,
        max_type: 3,
        init_std: 0.3,
        seed,
    }
}

/// Source of `src` tokens followed by a target of `tgt` tokens.
fn seq(src: &[u32], tgt: &[u32]) -> EncodedExample {
    let n = src.len() + tgt.len();
    EncodedExample {
        tokens: src.iter().chain(tgt).copied().collect(),
        positions: (0..src.len() as u32).chain(0..tgt.len() as u32).collect(),
        turns: (0..n).map(|i| if i < src.len() { 1 + (i % 2) as u32 } else { 0 }).collect(),
        types: (0..n)
            .map(|i| if i < 2 { TYPE_PERSONA } else if i < src.len() { 1 } else { 0 })
            .collect(),
        source_len: src.len(),
        target_len: tgt.len(),
    }
}

fn model(seed: u64) -> ModelParams {
    let mut m = ModelParams::init(tiny_config(seed)).unwrap();
    // Non-trivial norms and biases so every block carries gradient.
    let mut rng = derive_rng(seed, "perturb", 0);
    for v in m.values_mut() {
        *v += 0.1 * (rng.gen::<f64>() - 0.5);
    }
    m
}

#[test]
fn rows_are_distributions() {
    let m = model(1);
    let ex = seq(&[3, 5, 2, 6, 7], &[8, 9, 4]);
    let rows = m.forward(&ex).unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r.len(), 11);
        assert!(r.iter().all(|&p| p > 0.0));
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_head_gives_uniform_loss() {
    let mut m = model(2);
    m.fill_block("out_weight", 0.0).unwrap();
    m.fill_block("out_bias", 0.0).unwrap();
    let ex = seq(&[3, 5, 6], &[7, 4]);
    let loss = m.nll_loss(std::slice::from_ref(&ex)).unwrap();
    assert!((loss - (11f64).ln()).abs() < 1e-12);
    assert!((m.perplexity(&[ex]).unwrap() - 11.0).abs() < 1e-9);
}

#[test]
fn target_does_not_leak_into_source() {
    let m = model(3);
    let a = seq(&[3, 5, 6, 2], &[7, 8, 4]);
    let b = seq(&[3, 5, 6, 2], &[9, 10, 4]);
    let ra = m.forward(&a).unwrap();
    let rb = m.forward(&b).unwrap();
    // The first row only sees the source.
    assert_eq!(ra[0], rb[0]);
    assert_ne!(ra[1], rb[1]);
}

#[test]
fn later_target_tokens_do_not_affect_earlier_rows() {
    let m = model(4);
    let a = seq(&[3, 5, 6], &[7, 8, 9, 4]);
    let b = seq(&[3, 5, 6], &[7, 8, 10, 4]);
    let ra = m.forward(&a).unwrap();
    let rb = m.forward(&b).unwrap();
    assert_eq!(ra[..3], rb[..3]);
}

#[test]
fn source_is_bidirectional() {
    let m = model(5);
    let a = seq(&[3, 5, 6, 2], &[7, 4]);
    let b = seq(&[3, 5, 6, 9], &[7, 4]);
    assert_ne!(m.forward(&a).unwrap()[0], m.forward(&b).unwrap()[0]);
}

#[test]
fn gradient_matches_finite_differences_in_every_block() {
    let m = model(6);
    let batch = vec![seq(&[3, 5, 2, 6, 7], &[8, 9, 4]), seq(&[3, 10, 2], &[6, 4])];
    let (loss, grad) = m.backward(&batch).unwrap();
    assert!((loss - m.nll_loss(&batch).unwrap()).abs() < 1e-12);
    let h = 1e-5;
    for block in m.blocks() {
        let r = block.range();
        // Largest analytic entries of the block, plus its first entry.
        let mut idx: Vec<usize> = r.clone().collect();
        idx.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
        idx.truncate(4);
        assert!(grad[idx[0]] != 0.0, "block {} has no gradient", block.name);
        for i in idx {
            let mut plus = m.clone();
            plus.values_mut()[i] += h;
            let mut minus = m.clone();
            minus.values_mut()[i] -= h;
            let fd = (plus.nll_loss(&batch).unwrap() - minus.nll_loss(&batch).unwrap()) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "block {} index {i}: analytic {} numeric {fd}", block.name, grad[i]);
        }
    }
}

#[test]
fn duplicated_example_has_same_loss_and_gradient() {
    let m = model(7);
    let ex = seq(&[3, 5, 6], &[7, 4]);
    let (l1, g1) = m.backward(std::slice::from_ref(&ex)).unwrap();
    let (l2, g2) = m.backward(&[ex.clone(), ex]).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn unused_embedding_rows_get_zero_gradient() {
    let m = model(8);
    let (_, grad) = m.backward(&[seq(&[3, 5, 6], &[7, 4])]).unwrap();
    let tok = m.block("tok_emb").unwrap().start;
    let d = m.config().model_dim;
    // Token 10 never appears as an input.
    assert!(grad[tok + 10 * d..tok + 11 * d].iter().all(|&g| g == 0.0));
    assert!(grad[tok + 3 * d..tok + 4 * d].iter().any(|&g| g != 0.0));
}

#[test]
fn out_of_range_ids_are_rejected() {
    let m = model(9);
    assert!(m.forward(&seq(&[3, 50], &[4])).is_err());
    let mut bad = seq(&[3, 5], &[4]);
    bad.source_len = 0;
    bad.target_len = 3;
    assert!(m.forward(&bad).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let m = model(10);
    let mut buf = Vec::new();
    m.write_checkpoint(&mut buf).unwrap();
    let back = ModelParams::read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back.values(), m.values());
    assert_eq!(back.config(), m.config());
    assert!(ModelParams::read_checkpoint(&buf[..buf.len() - 1]).is_err());
    assert!(ModelParams::read_checkpoint(&b"garbage!"[..]).is_err());
}

#[test]
fn training_memorizes_a_pair() {
    let mut m = ModelParams::init(tiny_config(11)).unwrap();
    let data = vec![seq(&[3, 5, 6], &[7, 8, 4]), seq(&[3, 9, 6], &[10, 8, 4])];
    let sched = TrainSchedule {
        peak_lr: 2e-2,
        warmup_steps: 5,
        total_steps: 150,
        batch_size: 2,
        seed: 1,
    };
    let before = m.nll_loss(&data).unwrap();
    let report = train(&mut m, &data, &sched, &AdamConfig::default(), |_| {}).unwrap();
    assert_eq!(report.trace.len(), 150);
    let after = m.nll_loss(&data).unwrap();
    assert!(after < 0.1 * before, "{before} -> {after}");
    let mut rng = derive_rng(0, "g", 0);
    let out = m.generate(&data[1].source(), 4, Decoding::Greedy, 5, &mut rng).unwrap();
    assert_eq!(out, vec![10, 8, 4]);
}

#[test]
fn training_is_deterministic() {
    let data = vec![seq(&[3, 5, 6], &[7, 8, 4]), seq(&[3, 9, 6], &[10, 8, 4]), seq(&[3, 2], &[9, 4])];
    let sched = TrainSchedule {
        total_steps: 20,
        batch_size: 2,
        ..Default::default()
    };
    let run = || {
        let mut m = ModelParams::init(tiny_config(12)).unwrap();
        train(&mut m, &data, &sched, &AdamConfig::default(), |_| {}).unwrap();
        m.values().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn divergence_is_reported() {
    let mut m = ModelParams::init(tiny_config(13)).unwrap();
    m.values_mut()[0] = f64::NAN;
    let data = vec![seq(&[0, 5], &[7, 4])];
    let err = train(&mut m, &data, &TrainSchedule::default(), &AdamConfig::default(), |_| {}).unwrap_err();
    assert!(err.to_string().contains("step 1"), "{err}");
}

#[test]
fn loss_equals_hand_summed_log_probs() {
    let m = model(14);
    let batch = vec![seq(&[3, 5, 2, 6], &[8, 9, 4]), seq(&[3, 10], &[6, 4])];
    let mut total = 0.0;
    let mut count = 0;
    for ex in &batch {
        let rows = m.forward(ex).unwrap();
        for (t, row) in rows.iter().enumerate() {
            total -= row[ex.tokens[ex.source_len + t] as usize].ln();
            count += 1;
        }
    }
    assert_eq!(count, 5);
    assert!((m.nll_loss(&batch).unwrap() - total / 5.0).abs() < 1e-12);
}

#[test]
fn two_word_uniform_loss_is_ln2() {
    let mut cfg = tiny_config(15);
    cfg.vocab_size = 2;
    let mut m = ModelParams::init(cfg).unwrap();
    m.fill_block("out_weight", 0.0).unwrap();
    m.fill_block("out_bias", 0.0).unwrap();
    let ex = seq(&[0, 1, 1], &[0, 1]);
    assert!((m.nll_loss(&[ex]).unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn type_channel_is_live() {
    let mut m = model(16);
    let ex = seq(&[3, 5, 2, 6], &[8, 4]);
    let before = m.forward(&ex).unwrap();
    m.fill_block("type_emb", 0.0).unwrap();
    assert_ne!(before, m.forward(&ex).unwrap());
}

#[test]
fn decode_limits_and_seeded_sampling() {
    let m = model(17);
    let src = seq(&[3, 5, 2, 6], &[]);
    let mut rng = derive_rng(0, "g", 0);
    assert_eq!(m.generate(&src, 4, Decoding::Greedy, 1, &mut rng).unwrap().len(), 1);
    let topk = Decoding::TopK { k: 3, temperature: 1.0 };
    let a = m.generate(&src, 4, topk, 6, &mut derive_rng(5, "g", 0)).unwrap();
    let b = m.generate(&src, 4, topk, 6, &mut derive_rng(5, "g", 0)).unwrap();
    assert_eq!(a, b);
}
