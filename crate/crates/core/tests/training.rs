use std::collections::BTreeMap;

use proptest::prelude::*;
use ttx::corruption::CorruptionPair;
use ttx::model::{Architecture, ModelBatch, ModelConfig, StackKind, Transformer};
use ttx::numerics::{Graph, ParamStore, Rng, Tensor};
use ttx::training::*;

fn tiny(arch: Architecture, layers: usize, seed: u64) -> Transformer {
    let cfg = ModelConfig::new(16, 32, 8, 2, layers, 40).with_architecture(arch);
    Transformer::new(cfg, &mut Rng::new(seed, 0)).unwrap()
}

fn random_pairs(n: usize, seed: u64) -> Vec<CorruptionPair> {
    let mut rng = Rng::new(seed, 0);
    (0..n)
        .map(|_| {
            let a = 1 + rng.below(8);
            let b = 1 + rng.below(6);
            CorruptionPair {
                input: (0..a).map(|_| 4 + rng.below(36) as u32).collect(),
                target: (0..b).map(|_| 4 + rng.below(36) as u32).collect(),
            }
        })
        .collect()
}

fn small_cfg(steps: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        batch_tokens: 64,
        max_seq_len: 16,
        schedule: Schedule::Constant { lr: 0.01 },
        checkpoint_every: 5,
        seed,
        repeat: true,
        clip_norm: None,
        mode: FineTuneMode::Full,
    }
}

#[test]
fn schedule_values() {
    let s = Schedule::pretrain_default();
    assert_eq!(s.learning_rate(0), 0.01);
    assert_eq!(s.learning_rate(10_000), 0.01);
    assert_eq!(s.learning_rate(40_000), 0.005);
    assert_eq!(learning_rate(&Schedule::finetune_default(), 123_456), 0.001);
    assert!(Schedule::InverseSqrt { warmup: 0, scale: 1.0 }.validate().is_err());
    assert!(Schedule::Constant { lr: 0.0 }.validate().is_err());
}

#[test]
fn packing_examples() {
    let ex = |a: usize, b: usize| CorruptionPair {
        input: vec![5; a],
        target: vec![6; b],
    };
    let one = pack_batch(&[ex(16, 16)], Architecture::EncoderDecoder, 64, 16).unwrap();
    assert_eq!(one, vec![vec![vec![0]]]);
    let two = pack_batch(&[ex(5, 5), ex(5, 5)], Architecture::EncoderDecoder, 64, 16).unwrap();
    assert_eq!(two, vec![vec![vec![0, 1]]]);
    let lm = pack_batch(&[ex(5, 5), ex(5, 5)], Architecture::DecoderLm, 64, 16).unwrap();
    assert_eq!(lm, vec![vec![vec![0], vec![1]]]);
    assert!(pack_batch(&[ex(17, 1)], Architecture::EncoderDecoder, 64, 16).is_err());
    assert!(pack_batch(&[ex(1, 1)], Architecture::EncoderDecoder, 8, 16).is_err());
}

proptest! {
    #[test]
    fn packing_conserves_tokens(lengths in prop::collection::vec((0usize..=32, 1usize..=32), 1..1000), lm in any::<bool>()) {
        let arch = if lm { Architecture::PrefixLm } else { Architecture::EncoderDecoder };
        let examples: Vec<CorruptionPair> = lengths
            .iter()
            .map(|&(a, b)| {
                // single-stack rows hold input and target together
                let (a, b) = if lm { (a / 2, (b + 1) / 2) } else { (a, b) };
                CorruptionPair { input: vec![7; a], target: vec![8; b] }
            })
            .collect();
        let batches = pack_batch(&examples, arch, 256, 32).unwrap();
        let mut seen = vec![0usize; examples.len()];
        let mut packed_tokens = 0;
        for batch in &batches {
            prop_assert!(batch.len() <= 8);
            for row in batch {
                let fps: Vec<Footprint> = row.iter().map(|i| Footprint::of(&examples[*i], arch)).collect();
                prop_assert!(fps.iter().map(|f| f.encoder).sum::<usize>() <= 32);
                prop_assert!(fps.iter().map(|f| f.decoder).sum::<usize>() <= 32);
                packed_tokens += fps.iter().map(Footprint::tokens).sum::<usize>();
                for i in row {
                    seen[*i] += 1;
                }
            }
        }
        prop_assert!(seen.iter().all(|c| *c == 1));
        let total: usize = examples.iter().map(|e| Footprint::of(e, arch).tokens()).sum();
        prop_assert_eq!(packed_tokens, total);
    }
}

#[test]
fn packed_segments_do_not_interact() {
    let model = tiny(Architecture::EncoderDecoder, 2, 3);
    let pairs = random_pairs(6, 4);
    let rows = pack_batch(&pairs, Architecture::EncoderDecoder, 64, 32).unwrap().remove(0);
    let run = |pairs: &[CorruptionPair]| {
        let refs: Vec<Vec<&CorruptionPair>> = rows.iter().map(|r| r.iter().map(|i| &pairs[*i]).collect()).collect();
        let batch = ModelBatch::from_rows(model.config(), &refs);
        let mut g = Graph::inference();
        let logits = model.forward(&mut g, &batch, &mut Rng::new(0, 0), false).unwrap();
        (g.value(logits).clone(), batch)
    };
    let (base, batch) = run(&pairs);
    let mut perturbed = pairs.clone();
    let victim = rows[0][0];
    let v = &mut perturbed[victim];
    for t in v.input.iter_mut().chain(v.target.iter_mut()) {
        *t = 4 + (*t + 7) % 36;
    }
    let (after, _) = run(&perturbed);
    let len = batch.decoder.len;
    let first_segment = batch.decoder.segments[0];
    let mut changed_elsewhere = 0;
    for pos in 0..batch.decoder.rows * len {
        let seg = batch.decoder.segments[pos];
        if pos / len == 0 && seg == first_segment {
            continue;
        }
        if base.row(pos) != after.row(pos) {
            changed_elsewhere += 1;
        }
    }
    assert_eq!(changed_elsewhere, 0);
}

fn scalar_store(x: f64) -> (ParamStore, ttx::numerics::ParamId) {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::new(vec![1], vec![x]).unwrap()).unwrap();
    (store, id)
}

#[test]
fn adam_zero_grads_change_nothing() {
    let model = tiny(Architecture::EncoderDecoder, 1, 1);
    let mut store = model.store().clone();
    store.zero_grads();
    let before = store.clone();
    let mut opt = Adam::default();
    for _ in 0..5 {
        assert_eq!(opt.step(&mut store, 0.1), StepOutcome::Applied);
    }
    for (id, _, t) in before.iter() {
        assert_eq!(t, store.value(id));
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    // loss = 0.5 * x^2, gradient x, optimum 0
    let (mut store, id) = scalar_store(1.0);
    let mut opt = Adam::default();
    for step in 0..200u64 {
        let x = store.value(id).data()[0];
        store.zero_grads();
        store.accumulate_grad(id, &[x]);
        opt.step(&mut store, 0.1 / (1.0 + step as f64 / 20.0));
    }
    assert!(store.value(id).data()[0].abs() < 1e-2, "{}", store.value(id).data()[0]);
}

#[test]
fn adam_skips_non_finite_gradients() {
    let (mut store, id) = scalar_store(1.0);
    let mut opt = Adam::default();
    store.accumulate_grad(id, &[f64::NAN]);
    assert_eq!(opt.step(&mut store, 0.1), StepOutcome::SkippedNonFinite);
    assert_eq!(store.value(id).data()[0], 1.0);
    store.zero_grads();
    store.accumulate_grad(id, &[f64::INFINITY]);
    opt.step(&mut store, 0.1);
    assert_eq!(opt.skipped(), 2);
}

#[test]
fn frozen_parameters_are_never_touched() {
    let (mut store, id) = scalar_store(1.0);
    store.set_trainable(id, false);
    store.accumulate_grad(id, &[3.0]);
    Adam::default().step(&mut store, 0.1);
    assert_eq!(store.value(id).data()[0], 1.0);
}

#[test]
fn zero_steps_give_the_initial_checkpoint() {
    let model = tiny(Architecture::EncoderDecoder, 1, 2);
    let init = model.store().clone();
    let out = train(model, random_pairs(10, 1), small_cfg(0, 1)).unwrap();
    assert_eq!(out.checkpoints.len(), 1);
    assert_eq!(out.checkpoints[0].step(), 0);
    assert!(out.log.is_empty());
    for (id, _, t) in init.iter() {
        assert_eq!(t, out.model.store().value(id));
    }
}

#[test]
fn checkpoints_follow_the_period() {
    let out = train(tiny(Architecture::DecoderLm, 1, 2), random_pairs(10, 1), small_cfg(12, 1)).unwrap();
    let steps: Vec<u64> = out.checkpoints.iter().map(|c| c.step()).collect();
    assert_eq!(steps, vec![0, 5, 10, 12]);
    assert_eq!(out.log.len(), 12);
    assert!(out.log.windows(2).all(|w| w[1].tokens_seen > w[0].tokens_seen));
}

#[test]
fn repeated_batch_is_memorized() {
    // the batch budget holds every example, so each step sees the same batch
    let pairs = random_pairs(4, 9);
    let mut cfg = small_cfg(50, 3);
    cfg.batch_tokens = 256;
    let mut model = tiny(Architecture::EncoderDecoder, 2, 5);
    let mut c = model.config().clone();
    c.dropout_rate = 0.0;
    model = Transformer::new(c, &mut Rng::new(5, 0)).unwrap();
    let out = train(model, pairs, cfg).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|r| r.loss).collect();
    let rises = losses.windows(2).filter(|w| w[1] > w[0] + 0.05).count();
    assert!(rises <= 2, "{losses:?}");
    assert!(losses[49] < 0.5 * losses[0], "{losses:?}");
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    for arch in Architecture::ALL {
        let a = train(tiny(arch, 1, 7), random_pairs(30, 2), small_cfg(8, 11)).unwrap();
        let b = train(tiny(arch, 1, 7), random_pairs(30, 2), small_cfg(8, 11)).unwrap();
        assert_eq!(
            a.checkpoints.last().unwrap().to_bytes(),
            b.checkpoints.last().unwrap().to_bytes(),
            "{arch:?}"
        );
    }
}

#[test]
fn resume_is_bit_identical() {
    let cfg = small_cfg(10, 5);
    let straight = train(tiny(Architecture::EncoderDecoder, 2, 7), random_pairs(25, 3), cfg.clone()).unwrap();

    let mut first = Trainer::new(tiny(Architecture::EncoderDecoder, 2, 7), cfg.clone(), random_pairs(25, 3)).unwrap();
    first.run_until(5, |_| Ok(()), |_| {}).unwrap();
    let bytes = first.checkpoint().to_bytes();
    drop(first);
    let restored = ttx::model::Checkpoint::from_bytes(&bytes).unwrap();
    let mut second = Trainer::resume(&restored, cfg, random_pairs(25, 3)).unwrap();
    second.run_until(10, |_| Ok(()), |_| {}).unwrap();
    assert_eq!(second.checkpoint().to_bytes(), straight.checkpoints.last().unwrap().to_bytes());
}

#[test]
fn finite_data_without_repeat_runs_out() {
    let mut cfg = small_cfg(50, 1);
    cfg.repeat = false;
    let err = train(tiny(Architecture::EncoderDecoder, 1, 1), random_pairs(5, 1), cfg).err().unwrap();
    assert!(matches!(err, ttx::Error::Data(_)), "{err}");
}

#[test]
fn adapter_training_leaves_the_base_untouched() {
    let mut model = tiny(Architecture::EncoderDecoder, 2, 8);
    model.insert_adapters(4, &mut Rng::new(1, 1)).unwrap();
    let before = model.store().clone();
    let mut cfg = small_cfg(100, 2);
    cfg.mode = FineTuneMode::Adapters;
    cfg.checkpoint_every = 0;
    let out = train(model, random_pairs(40, 6), cfg).unwrap();
    let after = out.model.store();
    let trainable: Vec<_> = after.ids().filter(|id| after.is_trainable(*id)).collect();
    let expected: Vec<_> = {
        let mut v = out.model.adapter_params();
        v.extend(out.model.norm_params());
        v.sort();
        v
    };
    let mut t = trainable.clone();
    t.sort();
    assert_eq!(t, expected);
    let mut moved = 0;
    for id in after.ids() {
        if trainable.contains(&id) {
            moved += usize::from(before.value(id) != after.value(id));
        } else {
            assert_eq!(before.value(id), after.value(id), "{}", after.name(id));
        }
    }
    assert!(moved > 0);
}

#[test]
fn adapter_mode_requires_adapters() {
    let mut cfg = small_cfg(1, 1);
    cfg.mode = FineTuneMode::Adapters;
    assert!(Trainer::new(tiny(Architecture::EncoderDecoder, 1, 1), cfg, random_pairs(3, 1)).is_err());
}

#[test]
fn unfreeze_episodes() {
    let s = UnfreezeSchedule::new(12, 1 << 18).unwrap();
    assert_eq!(s.episode_len(), (1 << 18) / 12);
    assert_eq!(s.episode(0), 1);
    assert_eq!(s.trainable_layers(0), 11..12);
    assert_eq!(s.trainable_layers((1 << 18) - 1), 0..12);
    for n in 1..=12u64 {
        let first = (n - 1) * s.episode_len();
        assert_eq!(s.episode(first), n as usize);
        assert_eq!(s.trainable_layers(first).len(), n as usize);
    }

    // S=13, L=3: episodes of 4 steps, the extra step goes to the last one
    let s = UnfreezeSchedule::new(3, 13).unwrap();
    let got: Vec<usize> = (0..13).map(|t| s.episode(t)).collect();
    assert_eq!(got, vec![1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3]);
    assert!(UnfreezeSchedule::new(3, 2).is_err());
}

#[test]
fn unfreezing_sets_flags_top_down() {
    let mut model = tiny(Architecture::EncoderDecoder, 3, 1);
    let s = UnfreezeSchedule::new(3, 9).unwrap();
    for step in 0..9 {
        s.apply(&mut model, step);
        let layers = s.trainable_layers(step);
        for kind in [StackKind::Encoder, StackKind::Decoder] {
            for l in 0..3 {
                for id in model.layer_params(kind, l) {
                    assert_eq!(model.store().is_trainable(id), layers.contains(&l));
                }
            }
        }
        for id in model.non_layer_params() {
            assert!(model.store().is_trainable(id));
        }
    }
}

#[test]
fn gradual_unfreezing_trains_only_enabled_layers() {
    let mut cfg = small_cfg(4, 1);
    cfg.mode = FineTuneMode::GradualUnfreeze;
    let model = tiny(Architecture::EncoderDecoder, 2, 3);
    let bottom: Vec<_> = model.layer_params(StackKind::Encoder, 0);
    let before = model.store().clone();
    let mut t = Trainer::new(model, cfg, random_pairs(20, 1)).unwrap();
    t.run_until(2, |_| Ok(()), |_| {}).unwrap();
    for id in &bottom {
        assert_eq!(before.value(*id), t.model().store().value(*id));
    }
    t.run_until(4, |_| Ok(()), |_| {}).unwrap();
    assert!(bottom.iter().any(|id| before.value(*id) != t.model().store().value(*id)));
}

#[test]
fn best_checkpoint_per_task() {
    let ev = |step: u64, s: &[(&str, f64)]| CheckpointScores {
        step,
        scores: s.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    };
    let rising: Vec<_> = (1..=4).map(|i| ev(i * 100, &[("a", i as f64)])).collect();
    assert_eq!(select_best_checkpoint(&rising).unwrap()["a"], 400);

    let fixture = vec![
        ev(5000, &[("cola", 40.0), ("rte", 60.0), ("squad", 70.0)]),
        ev(10000, &[("cola", 45.0), ("rte", 66.0), ("squad", 70.0)]),
        ev(15000, &[("cola", 52.0), ("rte", 63.0), ("squad", 71.5)]),
        ev(20000, &[("cola", 52.0), ("rte", 61.0), ("squad", 71.4)]),
        ev(25000, &[("cola", 49.0), ("rte", 66.0), ("squad", 72.0)]),
    ];
    let want: BTreeMap<String, u64> = [("cola", 15000), ("rte", 10000), ("squad", 25000)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    // shuffled input order must not matter
    let mut shuffled = fixture.clone();
    shuffled.reverse();
    assert_eq!(select_best_checkpoint(&fixture).unwrap(), want);
    assert_eq!(select_best_checkpoint(&shuffled).unwrap(), want);
    assert!(select_best_checkpoint(&[]).is_err());
}

#[test]
fn log_records_are_json_lines() {
    let out = train(tiny(Architecture::PrefixLm, 1, 2), random_pairs(10, 1), small_cfg(3, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_log(&path, &out.log).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let back: Vec<LogRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back.len(), 3);
    assert_eq!(back[2].step, 3);
    assert!(text.lines().next().unwrap().contains("\"tokens_seen\""));
}
