mod common;

use common::{mean, separable_source, source_model, task};
use fha_core::data::{sample_few_shot, Dataset};
use fha_core::losses::{adaptation_loss, LabeledBatch, PairSet};
use fha_core::nn::Matrix;
use fha_core::pairing::{build_groups, build_groups_from_pools, phi, Domain, LabeledPool};
use fha_core::rng::derive_seed;
use fha_core::trainers::{
    adapt_pairwise, eval_wa, run_two_step, train_ft, train_generator_bank, train_shot, train_source,
    train_tohan, Adapter, FeatureClassifier, FinetuneConfig, GeneratorBank, GeneratorMode, Phase,
    SourceConfig, TargetModel, TohanConfig, TwoStepMethod,
};
use fha_core::{harness::accuracy, FhaError};

/// A shortened schedule for tests that only need the mechanics.
fn short_cfg() -> TohanConfig {
    TohanConfig {
        max_epochs: 40,
        pretrain_epochs: 10,
        adapt_epochs: 10,
        ..TohanConfig::default()
    }
}

#[test]
fn source_training_is_deterministic_per_seed() {
    let t = task("rot40");
    let a = source_model(&t, 3);
    let b = source_model(&t, 3);
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(a.meta(), b.meta());
    assert_ne!(source_model(&t, 4).fingerprint(), a.fingerprint());
}

#[test]
fn source_separates_antipodal_blobs() {
    let t = task("pair-rot0");
    let h = source_model(&t, 0);
    assert!(h.meta().test_accuracy >= 0.95, "{}", h.meta().test_accuracy);
    assert!(eval_wa(&h, &t.target_test).unwrap() >= 0.95);
}

#[test]
fn untrained_source_fails_the_quality_gate() {
    let t = task("rot40");
    let cfg = SourceConfig {
        epochs: 0,
        ..SourceConfig::default()
    };
    let err = train_source(&t.source, &cfg, 0, "rot40").unwrap_err();
    assert!(matches!(err, FhaError::QualityGate { .. }), "{err}");
}

#[test]
fn wa_without_shift_matches_source_accuracy() {
    let t = task("identity");
    let h = source_model(&t, 1);
    let wa = eval_wa(&h, &t.target_test).unwrap();
    assert!((wa - h.meta().test_accuracy).abs() < 0.05, "{wa} vs {}", h.meta().test_accuracy);
    assert_eq!(wa, accuracy(&h, &t.target_test).unwrap());
}

#[test]
fn wa_after_half_turn_inverts_the_labels() {
    let t = task("pair-rot180");
    let h = source_model(&t, 0);
    let wa = eval_wa(&h, &t.target_test).unwrap();
    assert!(wa <= 1.0 - h.meta().test_accuracy + 0.05, "{wa}");
}

#[test]
fn ft_trains_only_the_classifier() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let out = train_ft(&h, &fs, &FinetuneConfig::default()).unwrap();
    assert_eq!(out.model.encoder, *h.encoder());
    assert_ne!(out.model.classifier, *h.classifier());
}

#[test]
fn shot_trains_only_the_encoder() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let out = train_shot(&h, &fs, &FinetuneConfig::default()).unwrap();
    assert_eq!(out.model.classifier, *h.classifier());
    assert_ne!(out.model.encoder, *h.encoder());
}

#[test]
fn zero_finetune_steps_reproduce_wa() {
    let t = task("rot40");
    let h = source_model(&t, 2);
    let fs = sample_few_shot(&t.target, 1, 2).unwrap();
    let cfg = FinetuneConfig {
        steps: 0,
        ..FinetuneConfig::default()
    };
    let wa = eval_wa(&h, &t.target_test).unwrap();
    for model in [train_ft(&h, &fs, &cfg).unwrap().model, train_shot(&h, &fs, &cfg).unwrap().model] {
        assert_eq!(model, TargetModel::from_source(&h));
        assert_eq!(accuracy(&model, &t.target_test).unwrap(), wa);
    }
}

#[test]
fn ft_cross_entropy_falls() {
    let t = task("rot40");
    for seed in 0..5 {
        let h = source_model(&t, seed);
        let fs = sample_few_shot(&t.target, 3, seed).unwrap();
        let trace = train_ft(&h, &fs, &FinetuneConfig::default()).unwrap().trace;
        let first = trace.first().unwrap().losses["ce"];
        let last = trace.last().unwrap().losses["ce"];
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn shot_is_at_least_wa_on_most_seeds() {
    let t = task("rot40");
    let mut wins = 0;
    for seed in 0..10 {
        let h = source_model(&t, seed);
        let fs = sample_few_shot(&t.target, 3, seed).unwrap();
        let m = train_shot(&h, &fs, &FinetuneConfig::default()).unwrap().model;
        if accuracy(&m, &t.target_test).unwrap() >= eval_wa(&h, &t.target_test).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 7, "SHOT >= WA on {wins}/10 seeds");
}

#[test]
fn source_only_generator_loss_decreases() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let cfg = TohanConfig {
        max_epochs: 200,
        ..TohanConfig::default()
    };
    let (_, trace) = train_generator_bank(&h, &fs, GeneratorMode::SourceOnly, &cfg).unwrap();
    let loss_at = |epochs: std::ops::Range<usize>| {
        let v: Vec<f64> = trace
            .iter()
            .filter(|r| epochs.contains(&r.epoch))
            .map(|r| r.losses["source"])
            .collect();
        mean(&v)
    };
    let (early, late) = (loss_at(0..10), loss_at(190..200));
    assert!(late < early, "{early} -> {late}");
    assert!(trace.iter().all(|r| !r.losses.contains_key("target")));
}

#[test]
fn combined_with_zero_lambda_equals_source_only() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let cfg = TohanConfig {
        lambda: 0.0,
        ..short_cfg()
    };
    let (a, ta) = train_generator_bank(&h, &fs, GeneratorMode::SourceOnly, &cfg).unwrap();
    let (b, tb) = train_generator_bank(&h, &fs, GeneratorMode::Combined, &cfg).unwrap();
    assert_eq!(a.generators(), b.generators());
    for (ra, rb) in ta.iter().zip(&tb) {
        assert_eq!(ra.losses["generator"].to_bits(), rb.losses["generator"].to_bits());
    }
}

#[test]
fn generated_samples_stay_in_the_unit_cube() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 1, 0).unwrap();
    for mode in [GeneratorMode::SourceOnly, GeneratorMode::TargetOnly, GeneratorMode::Combined] {
        let (bank, _) = train_generator_bank(&h, &fs, mode, &short_cfg()).unwrap();
        let pool = bank.sample_pool(64).unwrap();
        assert_eq!(pool.len(), 3 * 64);
        assert!(pool.features().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn source_and_target_generators_diverge_at_the_first_update() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let cfg = short_cfg();
    let init = GeneratorBank::new(3, 2, &cfg).unwrap();
    assert_eq!(init.fingerprint(), GeneratorBank::new(3, 2, &cfg).unwrap().fingerprint());
    let (_, s) = train_generator_bank(&h, &fs, GeneratorMode::SourceOnly, &cfg).unwrap();
    let (_, tt) = train_generator_bank(&h, &fs, GeneratorMode::TargetOnly, &cfg).unwrap();
    assert_ne!(s[0].fingerprints.generators, tt[0].fingerprints.generators);
    assert_ne!(s[0].fingerprints.generators, init.fingerprint());
}

#[test]
fn adaptation_needs_two_classes_in_the_pool() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let pool = LabeledPool::new(Domain::Intermediate, Matrix::zeros(4, 2), vec![1; 4], 3).unwrap();
    let err = adapt_pairwise(&pool, &fs, &h, &short_cfg()).unwrap_err();
    assert!(matches!(err, FhaError::Protocol(_)), "{err}");
}

#[test]
fn zero_beta_leaves_only_the_classification_gradient() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let cfg = short_cfg();
    let (bank, _) = train_generator_bank(&h, &fs, GeneratorMode::Combined, &cfg).unwrap();
    let pool = bank.sample_pool(cfg.gen_batch).unwrap();
    let batch = build_groups(&pool, &fs, cfg.per_group(), 5).unwrap();
    let adapter = Adapter::new(&h, &fs, &cfg).unwrap();
    let (g2a, g2b) = batch.group(fha_core::pairing::Group::G2);
    let (g4a, g4b) = batch.group(fha_core::pairing::Group::G4);
    let empty = Matrix::zeros(0, 2);
    let x = fs.samples().to_matrix();
    let y = fs.samples().labels_usize();
    let labeled = LabeledBatch { features: &x, labels: &y };
    let enc = &adapter.target.encoder;
    let cls = &adapter.target.classifier;
    let with_pairs = adaptation_loss(
        PairSet { first: &g2a, second: &g2b },
        PairSet { first: &g4a, second: &g4b },
        &adapter.disc,
        enc,
        cls,
        labeled,
        0.0,
    )
    .unwrap();
    let without = adaptation_loss(
        PairSet { first: &empty, second: &empty },
        PairSet { first: &empty, second: &empty },
        &adapter.disc,
        enc,
        cls,
        labeled,
        0.0,
    )
    .unwrap();
    assert!(with_pairs.confusion > 0.0);
    assert_eq!(with_pairs.value, with_pairs.classification);
    assert_eq!(with_pairs.grad_encoder, without.grad_encoder);
    assert_eq!(with_pairs.grad_classifier, without.grad_classifier);

    let trace = adapt_pairwise(&pool, &fs, &h, &cfg).unwrap().trace;
    let first = trace.iter().find(|r| r.phase == Phase::AdaptTarget).unwrap();
    assert_eq!(first.losses["beta"], 0.0);
}

#[test]
fn adaptation_updates_discriminator_and_target_exclusively() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let cfg = short_cfg();
    let (bank, _) = train_generator_bank(&h, &fs, GeneratorMode::Combined, &cfg).unwrap();
    let pool = bank.sample_pool(cfg.gen_batch).unwrap();
    let start = Adapter::new(&h, &fs, &cfg).unwrap().fingerprints(0);
    let trace = adapt_pairwise(&pool, &fs, &h, &cfg).unwrap().trace;
    assert_eq!(trace.len(), cfg.pretrain_epochs + 2 * cfg.adapt_epochs);
    let mut prev = start;
    for r in &trace {
        let now = r.fingerprints;
        match r.phase {
            Phase::PretrainD | Phase::AdaptD => {
                assert_eq!(now.target, prev.target);
                assert_ne!(now.discriminator, prev.discriminator);
            }
            Phase::AdaptTarget => {
                assert_eq!(now.discriminator, prev.discriminator);
                assert_ne!(now.target, prev.target);
            }
            p => panic!("unexpected phase {p:?}"),
        }
        prev = now;
    }
}

fn separable_target(per_class: usize) -> Dataset {
    let mut f = Vec::new();
    let mut l = Vec::new();
    for c in 0..2u32 {
        for k in 0..per_class {
            let jitter = 0.05 * (k as f32 / per_class as f32 - 0.5);
            f.extend([0.9 + jitter, if c == 0 { 0.1 } else { 0.9 } - jitter]);
            l.push(c);
        }
    }
    Dataset::new(2, 2, f, l).unwrap()
}

fn separable_pool(per_class: usize) -> LabeledPool {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for k in 0..per_class {
            let jitter = 0.05 * (k as f64 / per_class as f64 - 0.5);
            rows.push(vec![0.1 + jitter, if c == 0 { 0.1 } else { 0.9 } + jitter]);
            labels.push(c);
        }
    }
    LabeledPool::new(Domain::Intermediate, Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
}

#[test]
fn pretrained_discriminator_separates_a_separable_pool() {
    // Domain lives in x1 and class in x2, and the encoder spreads both far
    // apart, so all four groups are separable in pair space.
    let h = separable_source(8.0);
    let target = separable_target(20);
    let fs = sample_few_shot(&target, 7, 0).unwrap();
    let pool = separable_pool(32);
    let cfg = TohanConfig::default();
    let mut adapter = Adapter::new(&h, &fs, &cfg).unwrap();
    for i in 0..cfg.pretrain_epochs {
        let seed = derive_seed(cfg.seed, "pairs-pretrain", i as u64);
        adapter.discriminator_step(&build_groups(&pool, &fs, cfg.per_group(), seed).unwrap()).unwrap();
    }
    let held_out = build_groups_from_pools(&pool, &LabeledPool::from_few_shot(&fs), 250, 999).unwrap();
    let feats = phi(&adapter.target.encoder, held_out.first(), held_out.second()).unwrap();
    let pred = adapter.disc.forward(&feats).unwrap().argmax_rows();
    let hits = pred
        .iter()
        .zip(held_out.group_labels())
        .filter(|(p, g)| **p + 1 == *g)
        .count();
    let acc = hits as f64 / pred.len() as f64;
    assert!(acc >= 0.9, "held-out group accuracy {acc}");
}

#[test]
fn no_adaptation_epochs_reproduces_wa() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let cfg = TohanConfig {
        max_epochs: 20,
        adapt_epochs: 0,
        ..TohanConfig::default()
    };
    let wa = eval_wa(&h, &t.target_test).unwrap();
    let st = run_two_step(&h, &fs, TwoStepMethod::Combined, &cfg).unwrap();
    let one = train_tohan(&h, &fs, &cfg).unwrap();
    for out in [st, one] {
        assert_eq!(out.model, TargetModel::from_source(&h));
        assert_eq!(accuracy(&out.model, &t.target_test).unwrap(), wa);
        assert!(out.trace.iter().all(|r| r.phase == Phase::Generator));
    }
}

#[test]
fn two_step_adaptation_epochs_follow_generator_epochs() {
    let t = task("rot40");
    let h = source_model(&t, 0);
    let fs = sample_few_shot(&t.target, 3, 0).unwrap();
    let cfg = short_cfg();
    let trace = run_two_step(&h, &fs, TwoStepMethod::SourceOnly, &cfg).unwrap().trace;
    let gen = trace.iter().filter(|r| r.phase == Phase::Generator).count();
    assert_eq!(gen, cfg.max_epochs * 3);
    let adapt: Vec<usize> = trace
        .iter()
        .filter(|r| r.phase == Phase::AdaptTarget)
        .map(|r| r.epoch)
        .collect();
    assert_eq!(adapt, (cfg.max_epochs..cfg.max_epochs + cfg.adapt_epochs).collect::<Vec<_>>());
}

#[test]
fn combined_generators_are_not_worse_than_either_term_alone() {
    let t = task("rot40");
    let cfg = TohanConfig::default();
    let mut acc = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..10 {
        let h = source_model(&t, seed);
        let fs = sample_few_shot(&t.target, 3, seed).unwrap();
        let cfg = TohanConfig { seed, ..cfg.clone() };
        for (i, m) in [TwoStepMethod::SourceOnly, TwoStepMethod::TargetOnly, TwoStepMethod::Combined]
            .into_iter()
            .enumerate()
        {
            let model = run_two_step(&h, &fs, m, &cfg).unwrap().model;
            acc[i].push(accuracy(&model, &t.target_test).unwrap());
        }
    }
    let (s, tt, st) = (mean(&acc[0]), mean(&acc[1]), mean(&acc[2]));
    assert!(st >= s.max(tt) - 0.01, "S+F {s:.4}, T+F {tt:.4}, ST+F {st:.4}");
}
