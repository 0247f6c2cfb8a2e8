use super::*;
use ndarray::Array2;

fn toy(head: HeadKind, causal: bool) -> SequenceModel<f64> {
    let cfg = ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 12,
        max_len: 16,
        n_types: 3,
        causal,
        head,
    };
    let mut m = SequenceModel::new(cfg, 3).unwrap();
    // larger weights so every path carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for p in m.params_mut() {
        p.mapv_inplace(|v| v + rng.gen_range(-0.3..0.3));
    }
    m
}

fn lm_loss(m: &SequenceModel<f64>, toks: &[u32], types: &[u32], offset: Option<&Array2<f64>>) -> (f64, Forward<f64>) {
    let f = m.forward_with_offset(toks, types, offset).unwrap();
    let targets: Vec<TokenTarget> = (0..toks.len() - 1)
        .map(|i| TokenTarget { position: i, target: toks[i + 1] })
        .collect();
    (smoothed_cross_entropy(&f.logits, &targets, 0.1).0, f)
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let m = toy(HeadKind::LanguageModel, true);
    let toks = [1u32, 4, 7, 2, 9, 3];
    let types = [0u32, 0, 1, 1, 2, 2];
    let (_, f) = lm_loss(&m, &toks, &types, None);
    let targets: Vec<TokenTarget> = (0..toks.len() - 1)
        .map(|i| TokenTarget { position: i, target: toks[i + 1] })
        .collect();
    let (_, dlogits) = smoothed_cross_entropy(&f.logits, &targets, 0.1);
    let mut grads = m.zero_grads();
    m.backward(&f, &dlogits, &mut grads);
    let h = 1e-5;
    for (pi, g) in grads.iter().enumerate() {
        for idx in [0usize, g.len() / 2, g.len() - 1] {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let mut plus = m.clone();
            plus.params_mut()[pi][[r, c]] += h;
            let mut minus = m.clone();
            minus.params_mut()[pi][[r, c]] -= h;
            let fd = (lm_loss(&plus, &toks, &types, None).0 - lm_loss(&minus, &toks, &types, None).0) / (2.0 * h);
            let an = g[[r, c]];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                "param {pi} [{r},{c}]: fd {fd} analytic {an}"
            );
        }
    }
}

#[test]
fn input_gradients_match_finite_differences_for_tagger() {
    let m = toy(HeadKind::Tagger, false);
    let toks = [3u32, 5, 6, 8, 1];
    let types = [1u32, 1, 2, 2, 2];
    let targets = [
        TagTarget { position: 2, positive: true, weight: 3.0 },
        TagTarget { position: 3, positive: false, weight: 0.7 },
        TagTarget { position: 4, positive: true, weight: 3.0 },
    ];
    let f = m.forward(&toks, &types).unwrap();
    let (_, d) = weighted_binary_cross_entropy(&f.logits, &targets);
    let mut grads = m.zero_grads();
    let dx = m.backward(&f, &d, &mut grads);
    let loss = |off: &Array2<f64>| {
        let f = m.forward_with_offset(&toks, &types, Some(off)).unwrap();
        weighted_binary_cross_entropy(&f.logits, &targets).0
    };
    let h = 1e-5;
    for i in 0..toks.len() {
        for j in 0..8 {
            let mut p = Array2::zeros((toks.len(), 8));
            p[[i, j]] = h;
            let fd = (loss(&p) - loss(&(-&p))) / (2.0 * h);
            assert!((fd - dx[[i, j]]).abs() <= 1e-7 + 1e-4 * fd.abs(), "[{i},{j}] {fd} vs {}", dx[[i, j]]);
        }
    }
}

#[test]
fn causal_outputs_ignore_future_tokens() {
    let m = toy(HeadKind::LanguageModel, true);
    let a = m.forward(&[1, 2, 3, 4], &[0, 0, 0, 0]).unwrap();
    let b = m.forward(&[1, 2, 3, 9], &[0, 0, 0, 0]).unwrap();
    for t in 0..3 {
        assert_eq!(a.logits.row(t), b.logits.row(t));
    }
}

#[test]
fn incremental_decoding_matches_full_forward() {
    let m = toy(HeadKind::LanguageModel, true);
    let toks = [1u32, 4, 7, 2, 9, 3, 5];
    let types = [0u32, 0, 1, 1, 2, 2, 2];
    let full = m.forward(&toks, &types).unwrap();
    let (mut st, first) = m.prefill(&toks[..3], &types[..3]).unwrap();
    assert!((&first - &full.logits.row(2)).iter().all(|d| d.abs() < 1e-10));
    for t in 3..toks.len() {
        let l = m.step(&mut st, toks[t], types[t]).unwrap();
        assert!((&l - &full.logits.row(t)).iter().all(|d| d.abs() < 1e-10), "position {t}");
    }
    assert_eq!(st.len(), toks.len());
}

#[test]
fn zero_initialized_tagger_outputs_one_half() {
    let cfg = ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 8,
        max_len: 8,
        n_types: 2,
        causal: false,
        head: HeadKind::Tagger,
    };
    let m = SequenceModel::<f32>::new(cfg, 1).unwrap();
    let f = m.forward(&[1, 2, 3], &[0, 1, 1]).unwrap();
    for &z in f.logits.iter() {
        assert_eq!(loss::sigmoid(z), 0.5);
    }
}

#[test]
fn over_length_input_is_rejected() {
    let m = toy(HeadKind::LanguageModel, true);
    let toks = vec![1u32; 17];
    let types = vec![0u32; 17];
    assert!(matches!(m.forward(&toks, &types), Err(GmeError::Length { len: 17, limit: 16, .. })));
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy(HeadKind::LanguageModel, true);
    let manifest = Manifest {
        kind: "test".into(),
        model: m.config().clone(),
        vocab_hash: "abc".into(),
        seed: 3,
        step: 0,
        extra: Default::default(),
    };
    m.save(dir.path(), &manifest).unwrap();
    let (back, man) = SequenceModel::<f64>::load(dir.path()).unwrap();
    assert_eq!(man, manifest);
    assert!(man.expect("test", "abc").is_ok());
    assert!(man.expect("test", "xyz").is_err());
    let a = m.forward(&[1, 2], &[0, 0]).unwrap().logits;
    let b = back.forward(&[1, 2], &[0, 0]).unwrap().logits;
    assert_eq!(a, b);
}

fn tiny_task() -> (SequenceModel<f64>, Vec<Vec<u32>>) {
    let cfg = ModelConfig {
        vocab_size: 6,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 8,
        max_len: 8,
        n_types: 1,
        causal: true,
        head: HeadKind::LanguageModel,
    };
    let seqs = vec![vec![1, 2, 3, 4], vec![1, 3, 5, 2], vec![2, 4, 1, 5]];
    (SequenceModel::new(cfg, 5).unwrap(), seqs)
}

fn run(model: &mut SequenceModel<f64>, seqs: &[Vec<u32>], cfg: &TrainConfig, dir: Option<&std::path::Path>) -> TrainReport {
    let mut example = |m: &SequenceModel<f64>, i: usize, _e: usize, g: &mut [Array2<f64>]| {
        let s = &seqs[i];
        let f = m.forward(s, &vec![0; s.len()])?;
        let t: Vec<TokenTarget> = (0..s.len() - 1).map(|p| TokenTarget { position: p, target: s[p + 1] }).collect();
        let (l, d) = smoothed_cross_entropy(&f.logits, &t, 0.0);
        m.backward(&f, &d, g);
        Ok((l, t.len()))
    };
    let mut validate = |_: &SequenceModel<f64>| Ok(0.0);
    train(model, seqs.len(), cfg, "tiny", &mut example, &mut validate, dir).unwrap()
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let cfg = TrainConfig {
        steps: 60,
        batch_size: 2,
        learning_rate: 1e-2,
        eval_every: 0,
        seed: 4,
        ..Default::default()
    };
    let (mut a, seqs) = tiny_task();
    let (mut b, _) = tiny_task();
    let ra = run(&mut a, &seqs, &cfg, None);
    let rb = run(&mut b, &seqs, &cfg, None);
    assert_eq!(ra.state.train_trace, rb.state.train_trace);
    let first = ra.state.train_trace[0].2;
    let last = ra.state.train_trace.last().unwrap().2;
    assert!(last < first * 0.5, "{first} -> {last}");
}

#[test]
fn resumed_training_continues_the_same_trace() {
    let full_cfg = TrainConfig {
        steps: 40,
        batch_size: 2,
        learning_rate: 1e-2,
        eval_every: 0,
        seed: 8,
        checkpoint_every: 20,
        ..Default::default()
    };
    let (mut straight, seqs) = tiny_task();
    let whole = run(&mut straight, &seqs, &full_cfg, None);

    let dir = tempfile::tempdir().unwrap();
    let (mut first, _) = tiny_task();
    run(&mut first, &seqs, &TrainConfig { steps: 20, ..full_cfg.clone() }, Some(dir.path()));
    let (mut resumed, _) = tiny_task();
    let rest = run(&mut resumed, &seqs, &full_cfg, Some(dir.path()));
    for (a, b) in whole.state.train_trace.iter().zip(&rest.state.train_trace) {
        assert_eq!(a.0, b.0);
        assert!((a.2 - b.2).abs() <= 0.01 * a.2.abs());
    }
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let (mut m, seqs) = tiny_task();
    let cfg = TrainConfig { steps: 5, batch_size: 1, learning_rate: 1e-2, eval_every: 0, ..Default::default() };
    let mut example = |_: &SequenceModel<f64>, _i: usize, _e: usize, _g: &mut [Array2<f64>]| Ok((f64::NAN, 1));
    let mut validate = |_: &SequenceModel<f64>| Ok(0.0);
    let err = train(&mut m, seqs.len(), &cfg, "tiny", &mut example, &mut validate, None).unwrap_err();
    assert!(matches!(err, GmeError::NonFiniteLoss { step: 1, .. }));
}
