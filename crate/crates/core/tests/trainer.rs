use ogstyle::autograd::Tape;
use ogstyle::corpus::{make_noisy, NoiseConfig, Provenance, Style, StyledCorpus, TokenSeq, Tokenizer, Vocabulary};
use ogstyle::evalsuite::perplexity_ids;
use ogstyle::losses::LossWeights;
use ogstyle::net::{init_lm, init_model, lm_logprob, Dropout, LmParams, ModelConfig, ModelParams};
use ogstyle::synth::{gen_synthetic, GrammarSize, StyleTransform};
use ogstyle::tensor::Mat;
use ogstyle::trainer::{
    finetune_lm, joint_gradients, pretrain_dae, train_joint, train_lm, train_selfsup, two_pass_decode,
    validate_unsup, DaeConfig, GumbelNoise, JsonLog, LmTrainConfig, PairCycler, Selector, TrainConfig, TrainError,
};

fn small_grammar() -> GrammarSize {
    GrammarSize {
        nouns: 10,
        verbs: 6,
        adjectives: 5,
        adverbs: 3,
        templates: 3,
    }
}

struct Fixture {
    tok: Tokenizer,
    og: StyledCorpus,
    tr: StyledCorpus,
}

fn fixture(n: usize, transform: StyleTransform) -> Fixture {
    let (og, tr, _) = gen_synthetic(&small_grammar(), n, n, &transform).unwrap();
    let tok = Tokenizer::train(&[&og, &tr], 400).unwrap();
    Fixture { tok, og, tr }
}

fn model_cfg(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        layers: 1,
        heads: 2,
        dim: 32,
        ff_dim: 64,
        max_len: 48,
        dropout: 0.0,
        seed: 3,
    }
}

fn framed(ids: &[usize]) -> Vec<usize> {
    let mut v = ids.to_vec();
    v.push(Vocabulary::EOS_ID);
    v
}

// Teacher-forced argmax accuracy of reconstructing `clean` from `noisy`.
fn token_accuracy(params: &ModelParams, pairs: &[(TokenSeq, TokenSeq)]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (noisy, clean) in pairs {
        let src = framed(noisy);
        let tgt = framed(clean);
        let mut dec_in = vec![Vocabulary::BOS_ID];
        dec_in.extend_from_slice(&tgt[..tgt.len() - 1]);
        let mut t = Tape::new();
        let p = params.bind(&mut t, false);
        let mem = params.encode_ids(&mut t, &p, &src, &mut Dropout::none()).unwrap();
        let logits = params.decoder_logits(&mut t, &p, mem, &dec_in, &mut Dropout::none()).unwrap();
        for (j, &y) in tgt.iter().enumerate() {
            hit += usize::from(t.value(logits).argmax_row(j) == y);
            n += 1;
        }
    }
    hit as f64 / n as f64
}

fn same_params(a: &ModelParams, b: &ModelParams) -> bool {
    a.set.tensors().iter().zip(b.set.tensors()).all(|(x, y)| x.data() == y.data())
}

fn max_abs_diff(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let f = fixture(50, StyleTransform::identity(1));
    let seqs = f.og.encode_all(&f.tok);
    let mut params = init_model(&model_cfg(f.tok.vocab_size())).unwrap();
    let before = params.clone();
    let cfg = DaeConfig {
        steps: 0,
        ..Default::default()
    };
    assert!(pretrain_dae(&mut params, &seqs, &cfg).unwrap().is_empty());
    assert!(same_params(&params, &before));

    let mut lm = init_lm(&model_cfg(f.tok.vocab_size())).unwrap();
    let lm_before = lm.clone();
    let lcfg = LmTrainConfig {
        steps: 0,
        ..Default::default()
    };
    train_lm(&mut lm, &f.og, &f.tok, &lcfg).unwrap();
    assert!(lm.set.tensors().iter().zip(lm_before.set.tensors()).all(|(a, b)| a.data() == b.data()));
}

#[test]
fn dae_reconstructs_held_out_sentences() {
    let f = fixture(600, StyleTransform::identity(1));
    let all: Vec<TokenSeq> = f.og.encode_all(&f.tok).into_iter().chain(f.tr.encode_all(&f.tok)).collect();
    let (train, held) = all.split_at(all.len() - 100);
    let noise = NoiseConfig {
        mask_prob: 0.1,
        ..Default::default()
    };
    let mut params = init_model(&model_cfg(f.tok.vocab_size())).unwrap();
    let cfg = DaeConfig {
        steps: 3000,
        batch_size: 8,
        lr: 3e-3,
        warmup: 50,
        noise,
        ..Default::default()
    };
    let curve = pretrain_dae(&mut params, train, &cfg).unwrap();

    let means: Vec<f64> = curve.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    // Windows of 50 updates still carry sampling noise, so each may sit a
    // little above the best window before it, never far above.
    let mut best = f64::INFINITY;
    for &m in &means {
        assert!(m <= best * 1.15 + 0.02, "{means:?}");
        best = best.min(m);
    }
    assert!(means[means.len() - 1] < means[0] / 5.0);

    let pairs: Vec<(TokenSeq, TokenSeq)> = held
        .iter()
        .enumerate()
        .map(|(i, c)| (make_noisy(c, &noise.with_seed(10_000 + i as u64)), c.clone()))
        .collect();
    let acc = token_accuracy(&params, &pairs);
    assert!(acc >= 0.9, "held-out reconstruction accuracy {acc}");
}

fn lm_cfg(vocab: usize) -> ModelConfig {
    ModelConfig {
        dropout: 0.0,
        ..model_cfg(vocab)
    }
}

#[test]
fn lm_memorizes_a_repeated_sentence() {
    let f = fixture(50, StyleTransform::identity(1));
    let one = StyledCorpus::new([f.og.sentences[0].clone()], Style::Og, Provenance::Synthetic);
    let mut lm = init_lm(&lm_cfg(f.tok.vocab_size())).unwrap();
    let cfg = LmTrainConfig {
        steps: 150,
        batch_size: 2,
        lr: 5e-3,
        warmup: 10,
        ..Default::default()
    };
    train_lm(&mut lm, &one, &f.tok, &cfg).unwrap();
    let seq = f.tok.encode(&one.sentences[0]).with_eos(Vocabulary::EOS_ID);
    let ppl = perplexity_ids(&lm, &[seq]).unwrap();
    assert!(ppl <= 1.05, "ppl {ppl}");
}

fn mean_entropy_bits(lm: &LmParams, seqs: &[TokenSeq]) -> f64 {
    let (mut bits, mut n) = (0.0, 0usize);
    for s in seqs {
        let lp = lm_logprob(lm, &s.with_eos(Vocabulary::EOS_ID)).unwrap();
        bits -= lp.iter().sum::<f64>() / std::f64::consts::LN_2;
        n += lp.len();
    }
    bits / n as f64
}

#[test]
fn og_language_model_prefers_held_out_og() {
    let f = fixture(400, StyleTransform::marker(5));
    let split = f.og.len() - 60;
    let train = StyledCorpus::new(&f.og.sentences[..split], Style::Og, Provenance::Synthetic);
    let held_og: Vec<TokenSeq> = f.og.sentences[split..].iter().map(|s| f.tok.encode(s)).collect();
    let tr: Vec<TokenSeq> = f.tr.sentences[..60].iter().map(|s| f.tok.encode(s)).collect();
    let mut lm = init_lm(&lm_cfg(f.tok.vocab_size())).unwrap();
    let cfg = LmTrainConfig {
        steps: 400,
        batch_size: 8,
        lr: 5e-3,
        warmup: 40,
        ..Default::default()
    };
    train_lm(&mut lm, &train, &f.tok, &cfg).unwrap();
    let h_og = mean_entropy_bits(&lm, &held_og);
    let h_tr = mean_entropy_bits(&lm, &tr);
    assert!(h_og < h_tr, "og {h_og} tr {h_tr}");

    // Fine-tuning runs at a tenth of the rate, so it moves the model less.
    let mut fast = lm.clone();
    let mut slow = lm.clone();
    let more = LmTrainConfig {
        steps: 5,
        lr: 5e-2,
        warmup: 0,
        ..cfg
    };
    train_lm(&mut fast, &train, &f.tok, &more).unwrap();
    finetune_lm(&mut slow, &train, &f.tok, &more).unwrap();
    let dist = |a: &LmParams| max_abs_diff(a.set.tensors(), lm.set.tensors());
    assert!(dist(&slow) < dist(&fast));
    assert!(dist(&slow) > 0.0);
}

#[test]
fn lm_training_rejects_tr_corpus() {
    let f = fixture(20, StyleTransform::marker(5));
    let mut lm = init_lm(&lm_cfg(f.tok.vocab_size())).unwrap();
    for r in [
        train_lm(&mut lm, &f.tr, &f.tok, &LmTrainConfig::default()),
        finetune_lm(&mut lm, &f.tr, &f.tok, &LmTrainConfig::default()),
    ] {
        assert!(matches!(r, Err(TrainError::WrongStyle { .. })));
    }
}

#[test]
fn two_pass_matches_first_pass_in_the_cold_limit() {
    let f = fixture(30, StyleTransform::identity(1));
    let params = init_model(&model_cfg(f.tok.vocab_size())).unwrap();
    let w = LossWeights {
        tau: 1e-4,
        ..Default::default()
    };
    for s in f.og.encode_all(&f.tok).iter().take(5) {
        let out = two_pass_decode(&params, s, &w, &GumbelNoise::Zero).unwrap();
        assert_eq!(out.pi.argmax(), out.first_pass.0);
        assert!(out.pi.is_normalized(1e-9));
    }
}

#[test]
fn two_pass_is_deterministic_for_a_seed() {
    let f = fixture(30, StyleTransform::identity(1));
    let params = init_model(&model_cfg(f.tok.vocab_size())).unwrap();
    let s = f.tok.encode(&f.tr.sentences[0]);
    let w = LossWeights::default();
    let a = two_pass_decode(&params, &s, &w, &GumbelNoise::Seeded(7)).unwrap();
    let b = two_pass_decode(&params, &s, &w, &GumbelNoise::Seeded(7)).unwrap();
    let c = two_pass_decode(&params, &s, &w, &GumbelNoise::Seeded(8)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.first_pass, c.first_pass);
    assert_ne!(a.pi, c.pi);
}

#[test]
fn unsupervised_terms_reach_the_parameters() {
    let f = fixture(30, StyleTransform::identity(1));
    let params = init_model(&model_cfg(f.tok.vocab_size())).unwrap();
    let lm = init_lm(&lm_cfg(f.tok.vocab_size())).unwrap();
    let unsup: Vec<TokenSeq> = f.tr.encode_all(&f.tok).into_iter().take(2).collect();
    let embed = params.embed_index();
    let bias = params.set.index_of("out.bias").unwrap();
    for (beta, gamma) in [(1.0, 0.0), (0.0, 1.0)] {
        let w = LossWeights {
            alpha: 0.0,
            beta,
            gamma,
            tau: 0.5,
        };
        let g = joint_gradients(
            &params,
            Some(&lm),
            &[],
            &unsup,
            &w,
            true,
            &GumbelNoise::Seeded(1),
            &mut Dropout::none(),
            &mut Dropout::none(),
        )
        .unwrap();
        assert!(g.grads[embed].sq_norm() > 0.0);
        if beta > 0.0 {
            assert!(g.grads[bias].sq_norm() > 0.0);
            assert!(g.breakdown.l_lm > 0.0);
        }
        // Only the second pass and the LM are on the tape, and the LM is
        // frozen, so the gradient count matches the model.
        assert_eq!(g.grads.len(), params.set.len());
    }
}

#[test]
fn unsup_weights_of_zero_reduce_to_the_supervised_gradient() {
    let f = fixture(30, StyleTransform::identity(1));
    let params = init_model(&model_cfg(f.tok.vocab_size())).unwrap();
    let lm = init_lm(&lm_cfg(f.tok.vocab_size())).unwrap();
    let seqs = f.og.encode_all(&f.tok);
    let sup: Vec<(TokenSeq, TokenSeq)> = seqs[..3].iter().map(|s| (s.clone(), s.clone())).collect();
    let unsup = seqs[3..5].to_vec();
    let run = |w: LossWeights, include: bool| {
        joint_gradients(
            &params,
            Some(&lm),
            &sup,
            &unsup,
            &w,
            include,
            &GumbelNoise::Seeded(3),
            &mut Dropout::none(),
            &mut Dropout::none(),
        )
        .unwrap()
    };
    let sup_only = run(LossWeights::default(), false);
    assert_eq!(sup_only.breakdown.l_lm, 0.0);
    let zero = LossWeights {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
        tau: 0.1,
    };
    let reduced = run(zero, true);
    assert_eq!(max_abs_diff(&reduced.grads, &sup_only.grads), 0.0);
    let scaled = run(LossWeights { alpha: 0.7, ..zero }, true);
    let expect: Vec<Mat> = sup_only
        .grads
        .iter()
        .map(|g| {
            let mut g = g.clone();
            g.scale_assign(0.7);
            g
        })
        .collect();
    assert!(max_abs_diff(&scaled.grads, &expect) < 1e-12);
    assert!(reduced.breakdown.l_lm > 0.0, "unsupervised terms are still reported");
}

fn zero_lm(vocab: usize) -> LmParams {
    let mut lm = init_lm(&lm_cfg(vocab)).unwrap();
    for m in lm.set.tensors_mut() {
        m.data_mut().fill(0.0);
    }
    lm
}

#[test]
fn uniform_lm_gives_four_bits_over_sixteen_types() {
    let params = init_model(&model_cfg(16)).unwrap();
    let lm = zero_lm(16);
    let val = vec![TokenSeq(vec![5, 6, 7]), TokenSeq(vec![8, 9])];
    let w = LossWeights::default();
    let s = validate_unsup(&params, &lm, &params, &val, &w).unwrap();
    assert!((s.entropy_bits - 4.0).abs() < 1e-9, "{s:?}");
    assert!((s.combined - (1.0 + (1.0 - s.similarity))).abs() < 1e-12);
    assert!(matches!(validate_unsup(&params, &lm, &params, &[], &w), Err(TrainError::Empty(_))));
}

#[test]
fn certain_lm_gives_zero_entropy() {
    // The model only ever emits `</s>` and the LM is certain of it.
    let mut params = init_model(&model_cfg(16)).unwrap();
    let b = params.set.index_of("out.bias").unwrap();
    params.set.get_mut(b).set(0, Vocabulary::EOS_ID, 1e3);
    let mut lm = zero_lm(16);
    let lb = lm.set.index_of("out.bias").unwrap();
    lm.set.get_mut(lb).set(0, Vocabulary::EOS_ID, 1e3);
    let s = validate_unsup(&params, &lm, &params, &[TokenSeq(vec![5, 6])], &LossWeights::default()).unwrap();
    assert!(s.entropy_bits.abs() < 1e-12, "{s:?}");
}

#[test]
fn pair_cycler_wraps_in_order() {
    let mut c = PairCycler::new(vec!["p1", "p2"]);
    let draws: Vec<&str> = (0..3).flat_map(|_| c.next_batch(1)).collect();
    assert_eq!(draws, ["p1", "p2", "p1"]);
    assert_eq!(c.next_batch(3), ["p2", "p1", "p2"]);
    assert!(PairCycler::<u8>::new(vec![]).next_batch(2).is_empty());
}

#[test]
fn selector_stops_after_patience_misses() {
    let mut s = Selector::new(2);
    assert!(s.observe(1, 5.0));
    assert!(s.observe(2, 4.0));
    assert!(!s.observe(3, 4.0));
    assert!(!s.should_stop());
    assert!(!s.observe(4, 4.5));
    assert!(s.should_stop());
    assert_eq!(s.best(), Some((2, 4.0)));
    let mut never = Selector::new(0);
    for i in 0..10 {
        never.observe(i, 1.0);
    }
    assert!(!never.should_stop());
}

struct Desk {
    f: Fixture,
    og: Vec<TokenSeq>,
    tr: Vec<TokenSeq>,
    params: ModelParams,
    lm: LmParams,
}

fn desk(n: usize) -> Desk {
    let f = fixture(n, StyleTransform::marker(5));
    let og = f.og.encode_all(&f.tok);
    let tr = f.tr.encode_all(&f.tok);
    let mut params = init_model(&ModelConfig {
        dropout: 0.1,
        ..model_cfg(f.tok.vocab_size())
    })
    .unwrap();
    let all: Vec<TokenSeq> = og.iter().chain(&tr).cloned().collect();
    let dae = DaeConfig {
        steps: 150,
        batch_size: 8,
        lr: 3e-3,
        warmup: 20,
        ..Default::default()
    };
    pretrain_dae(&mut params, &all, &dae).unwrap();
    let mut lm = init_lm(&lm_cfg(f.tok.vocab_size())).unwrap();
    let lcfg = LmTrainConfig {
        steps: 60,
        batch_size: 4,
        warmup: 10,
        ..Default::default()
    };
    train_lm(&mut lm, &f.og, &f.tok, &lcfg).unwrap();
    Desk { f, og, tr, params, lm }
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        sup_batch: 2,
        unsup_batch: 2,
        val_batch: 4,
        warmup: 5,
        warm_start: 3,
        epochs: 1,
        checkpoint_every: 2,
        max_steps: 6,
        spe: ogstyle::spe::SpeConfig {
            num_clusters: 4,
            ..Default::default()
        },
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn warm_start_boundary_and_determinism() {
    let d = desk(40);
    let cfg = quick_cfg();
    let run = || {
        let mut p = d.params.clone();
        let mut log = JsonLog::in_memory();
        let out = train_joint(&mut p, &d.lm, &d.params, &d.og, &d.tr, &d.tr[..4], &cfg, &mut log).unwrap();
        (p, out, log)
    };
    let (p1, out1, log1) = run();
    let (p2, _, log2) = run();
    let b1 = log1.breakdowns();
    assert_eq!(b1.len(), 6);
    for (step, b) in &b1 {
        if *step <= 3 {
            assert_eq!((b.l_lm, b.l_ss, b.l_unsup), (0.0, 0.0, 0.0), "step {step}");
            assert_eq!(b.l_total, b.l_sup);
        } else {
            assert!(b.l_lm > 0.0 && b.l_unsup > 0.0, "step {step}");
        }
    }
    let phases: Vec<&str> = log1.records.iter().filter(|r| r.losses.is_some()).map(|r| r.phase.as_str()).collect();
    assert_eq!(phases, ["sup", "sup", "sup", "joint", "joint", "joint"]);
    for ((_, a), (_, b)) in b1.iter().zip(log2.breakdowns()) {
        assert!((a.l_total - b.l_total).abs() <= 1e-6);
        assert!((a.l_sup - b.l_sup).abs() <= 1e-6);
        assert!((a.l_lm - b.l_lm).abs() <= 1e-6);
        assert!((a.l_ss - b.l_ss).abs() <= 1e-6);
    }
    assert!(same_params(&p1, &p2));
    assert_eq!(out1.history.len(), 3);
    let min = out1.history.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
    assert_eq!(out1.best_score, min);
}

#[test]
fn zero_unsup_weights_follow_the_supervised_trajectory() {
    let d = desk(30);
    let w = LossWeights {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
        tau: 0.1,
    };
    let base = TrainConfig {
        weights: w,
        warm_start: 0,
        ..quick_cfg()
    };
    let sup_only = TrainConfig {
        warm_start: usize::MAX,
        ..base.clone()
    };
    let mut a = d.params.clone();
    let mut b = d.params.clone();
    train_joint(&mut a, &d.lm, &d.params, &d.og, &d.tr, &d.tr[..4], &base, &mut JsonLog::in_memory()).unwrap();
    train_joint(&mut b, &d.lm, &d.params, &d.og, &d.tr, &d.tr[..4], &sup_only, &mut JsonLog::in_memory()).unwrap();
    assert!(same_params(&a, &b));
    assert!(!same_params(&a, &d.params));
}

#[test]
fn patience_stops_selfsup_exactly() {
    let d = desk(40);
    let val: Vec<(TokenSeq, TokenSeq)> = d.tr.iter().zip(&d.og).take(4).map(|(a, b)| (a.clone(), b.clone())).collect();
    // A large rate makes validation loss erratic so patience can fire.
    let cfg = TrainConfig {
        lr: 0.5,
        warmup: 0,
        clip: 0.0,
        patience: 2,
        checkpoint_every: 1,
        max_steps: 40,
        epochs: 20,
        ..quick_cfg()
    };
    let mut p = d.params.clone();
    let out = train_selfsup(&mut p, &d.og, &d.tr, &val, &cfg, &mut JsonLog::in_memory()).unwrap();
    let mut replay = Selector::new(2);
    let mut fired = None;
    for (i, (step, score)) in out.history.iter().enumerate() {
        replay.observe(*step, *score);
        if replay.should_stop() && fired.is_none() {
            fired = Some(i);
        }
    }
    if out.stopped_early {
        assert_eq!(fired, Some(out.history.len() - 1));
    } else {
        assert_eq!(fired, None);
        assert_eq!(out.steps, 40);
    }
    assert!(out.stopped_early, "history {:?}", out.history);
}

#[test]
fn run_directory_holds_log_pairs_and_best_checkpoint() {
    let d = desk(40);
    let dir = tempfile::tempdir().unwrap();
    let hash = d.f.tok.vocab.hash();
    let mut log = JsonLog::to_dir(dir.path(), &hash).unwrap();
    let mut p = d.params.clone();
    let out = train_joint(&mut p, &d.lm, &d.params, &d.og, &d.tr, &d.tr[..4], &quick_cfg(), &mut log).unwrap();
    let text = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), log.records.len());
    assert!(lines.iter().any(|l| l["accepted_pairs"].is_u64()));
    let best: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("best.json")).unwrap()).unwrap();
    assert_eq!(best["step"].as_u64().unwrap() as usize, out.best_step);
    let ckpt = dir.path().join(best["checkpoint"].as_str().unwrap());
    let loaded = ModelParams::load(&ckpt, &hash).unwrap();
    assert!(same_params(&loaded, &out.best));
    let pairs = std::fs::read_to_string(dir.path().join("pairs.tsv")).unwrap();
    assert_eq!(pairs.lines().count(), out.pair_counts.iter().sum::<usize>());
}
