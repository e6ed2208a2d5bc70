//! Acceptance criteria, one PASS/FAIL line each. Pass criterion numbers
//! after `--` to run a subset, e.g. `cargo test --test acceptance -- 3 8`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::toy::{exhaustive, random_positional, Contextual, Enumerable};
use common::{oracle_bucket, positions, render, word_vocab, words, THANK_YOU};
use serde::Deserialize;
use ttx::cleaning::{clean, BadWords, CleanConfig, DomainFilter, Page};
use ttx::corruption::*;
use ttx::decode::{beam_decode, greedy_decode, Ensemble, LogitModel};
use ttx::experiments::*;
use ttx::mixture::*;
use ttx::model::*;
use ttx::numerics::{relative_error, Graph, Rng, Tensor};
use ttx::tasks::*;
use ttx::training::*;
use ttx::vocab::TokenId;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn golden_objectives() -> Outcome {
    let v = word_vocab(&[]);
    let x = words(&v, "Thank you for inviting me to your party last week.");
    let p = replace_spans(&x, &positions(x.len(), &[2, 3, 8]), &v).map_err(|e| e.to_string())?;
    ensure!(render(&v, &p.input) == "Thank you <X> me to your party <Y> week.", "schematic input");
    ensure!(render(&v, &p.target) == "<X> for inviting <Y> last <Z>", "schematic target");

    let x = words(&v, THANK_YOU);
    let row = |name: &str, p: &CorruptionPair, input: &str, target: &str| -> Result<(), String> {
        let (i, t) = (render(&v, &p.input), render(&v, &p.target));
        ensure!(i == input && t == target, "{name}: got {i:?} -> {t:?}");
        Ok(())
    };
    row("prefix LM", &split_at(&x, 4), "Thank you for inviting", "me to your party last week .")?;
    let mut bert = vec![TokenAction::Keep; x.len()];
    bert[2] = TokenAction::Mask;
    bert[3] = TokenAction::Mask;
    bert[8] = TokenAction::Replace(v.id_of(b"apple").unwrap());
    let original = render(&v, &x);
    row(
        "BERT-style",
        &apply_mask_actions(&x, &bert, &v),
        "Thank you <M> <M> me to your party apple week .",
        &original,
    )?;
    let mut mass = vec![TokenAction::Keep; x.len()];
    for i in [2, 3, 8] {
        mass[i] = TokenAction::Mask;
    }
    row(
        "MASS-style",
        &apply_mask_actions(&x, &mass, &v),
        "Thank you <M> <M> me to your party <M> week .",
        &original,
    )?;
    let mask = positions(x.len(), &[2, 3, 8]);
    row(
        "replace spans",
        &replace_spans(&x, &mask, &v).unwrap(),
        "Thank you <X> me to your party <Y> week .",
        "<X> for inviting <Y> last <Z>",
    )?;
    row("drop tokens", &drop_tokens(&x, &mask), "Thank you me to your party week .", "for inviting last")?;
    row(
        "random spans",
        &replace_spans(&x, &positions(x.len(), &[2, 3, 4, 6, 7, 8]), &v).unwrap(),
        "Thank you <X> to <Y> week .",
        "<X> for inviting me <Y> your party last <Z>",
    )?;
    let p = deshuffle(&x, &mut Rng::new(7, 0));
    let (mut a, mut b) = (p.input.clone(), x.clone());
    a.sort();
    b.sort();
    ensure!(p.target == x && a == b, "deshuffling is not a permutation of the original");
    Ok("figure sentence and 7 table rows".into())
}

fn inverse_oracle() -> Outcome {
    let v = word_vocab(&[]);
    let n = v.num_text_ids();
    let mut rng = Rng::new(2024, 0);
    let mut failures = 0;
    let cases = 10_000;
    for _ in 0..cases {
        let len = 7 + rng.below(74);
        let x: Vec<TokenId> = (0..len).map(|_| rng.below(n) as TokenId).collect();
        let iid = iid_replace_spans(&x, 0.15, &mut rng, &v).map_err(|e| e.to_string())?;
        let spans = random_spans(&x, 0.15, 3.0, &mut rng, &v).map_err(|e| e.to_string())?;
        for p in [iid, spans] {
            if splice_spans(&p, &v).ok().as_ref() != Some(&x) {
                failures += 1;
            }
        }
    }
    ensure!(failures == 0, "{failures} reconstructions failed");
    Ok(format!("{cases} sequences x 2 objectives, 0 failures"))
}

/// Corrupted count and number of runs in a mask.
fn runs(mask: &[bool]) -> (usize, usize) {
    let corrupted = mask.iter().filter(|m| **m).count();
    let spans = (0..mask.len()).filter(|&i| mask[i] && (i == 0 || !mask[i - 1])).count();
    (corrupted, spans)
}

fn span_parameterization() -> Outcome {
    ensure!(span_counts(500, 0.15, 3.0) == (75, 25), "span_counts(500) = {:?}", span_counts(500, 0.15, 3.0));
    let v = word_vocab(&[]);
    let mut rng = Rng::new(5, 0);
    let x: Vec<TokenId> = (0..500).map(|i| (i % v.num_text_ids()) as TokenId).collect();
    for _ in 0..1000 {
        let mask = draw_span_mask(500, 75, 25, &mut rng);
        ensure!(runs(&mask) == (75, 25), "mask has {:?}", runs(&mask));
        let p = random_spans(&x, 0.15, 3.0, &mut rng, &v).unwrap();
        let sentinels = p.input.iter().filter(|t| v.is_sentinel(**t)).count();
        ensure!(sentinels == 25 && p.target.len() == 75 + 25 + 1, "pair has {sentinels} spans");
    }
    let (corrupted, spans) = span_counts(512, 0.15, 3.0);
    let (mut tokens, mut count) = (0usize, 0usize);
    for _ in 0..10_000 {
        let (c, s) = runs(&draw_span_mask(512, corrupted, spans, &mut rng));
        tokens += c;
        count += s;
    }
    let mean = tokens as f64 / count as f64;
    ensure!((2.85..=3.15).contains(&mean), "mean span length {mean}");
    Ok(format!("75 tokens in 25 spans every sample; mean span {mean:.4}"))
}

fn tiny_cfg(arch: Architecture) -> ModelConfig {
    let mut cfg = ModelConfig::new(16, 32, 8, 2, 2, 23).with_architecture(arch);
    cfg.dropout_rate = 0.0;
    cfg.num_rel_buckets = 8;
    cfg.rel_max_distance = 16;
    cfg.start_id = 1;
    cfg
}

fn scrambled(cfg: ModelConfig, seed: u64) -> Transformer {
    let mut rng = Rng::new(seed, 0);
    let mut m = Transformer::new(cfg, &mut rng).unwrap();
    let ids: Vec<_> = m.store().ids().collect();
    for id in ids {
        for v in m.store_mut().value_mut(id).data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    m
}

fn random_tokens(rng: &mut Rng, n: usize, vocab: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.below(vocab) as TokenId).collect()
}

fn eval_logits(m: &Transformer, pairs: &[CorruptionPair]) -> (ModelBatch, Tensor) {
    let rows: Vec<Vec<&CorruptionPair>> = vec![pairs.iter().collect()];
    let batch = ModelBatch::from_rows(m.config(), &rows);
    let mut g = Graph::inference();
    let out = m.forward(&mut g, &batch, &mut Rng::new(0, 0), false).unwrap();
    (batch, g.value(out).clone())
}

fn gradient_check() -> Outcome {
    let cfg = tiny_cfg(Architecture::EncoderDecoder);
    let mut model = scrambled(cfg.clone(), 3);
    let mut rng = Rng::new(9, 0);
    let pairs: Vec<CorruptionPair> = (0..2)
        .map(|_| CorruptionPair {
            input: random_tokens(&mut rng, 4, 23),
            target: random_tokens(&mut rng, 3, 23),
        })
        .collect();
    let rows: Vec<Vec<&CorruptionPair>> = vec![pairs.iter().collect()];
    let batch = ModelBatch::from_rows(&cfg, &rows);
    let mut g = Graph::new();
    let loss = model.loss(&mut g, &batch, &mut Rng::new(0, 0), false).unwrap();
    g.backward(loss).unwrap();
    model.store_mut().zero_grads();
    g.flush_param_grads(model.store_mut());
    let loss_at = |m: &Transformer| {
        let mut g = Graph::inference();
        let l = m.loss(&mut g, &batch, &mut Rng::new(0, 0), false).unwrap();
        g.value(l).item()
    };
    let ids: Vec<_> = model.store().ids().collect();
    let (mut worst, mut checked) = (0.0f64, 0);
    for id in ids {
        let analytic = model.store().grad(id).to_vec();
        for (i, a) in analytic.iter().enumerate() {
            let orig = model.store().value(id).data()[i];
            model.store_mut().value_mut(id).data_mut()[i] = orig + 1e-6;
            let up = loss_at(&model);
            model.store_mut().value_mut(id).data_mut()[i] = orig - 1e-6;
            let down = loss_at(&model);
            model.store_mut().value_mut(id).data_mut()[i] = orig;
            let err = relative_error(*a, (up - down) / 2e-6, 1e-5);
            ensure!(err < 1e-4, "{}[{i}] relative error {err}", model.store().name(id));
            worst = worst.max(err);
            checked += 1;
        }
    }
    Ok(format!("{checked} parameters, worst relative error {worst:.2e}"))
}

fn mask_semantics() -> Outcome {
    let mut rng = Rng::new(17, 0);
    for case in 0..50 {
        let arch = Architecture::ALL[case % 4];
        let model = scrambled(tiny_cfg(arch), case as u64);
        let (n_in, n_out) = (1 + rng.below(5), 2 + rng.below(5));
        let pair = CorruptionPair {
            input: random_tokens(&mut rng, n_in, 23),
            target: random_tokens(&mut rng, n_out, 23),
        };
        let j = rng.below(pair.target.len() - 1);
        let mut changed = pair.clone();
        changed.target[j] = (changed.target[j] + 1 + rng.below(21) as TokenId) % 23;
        let (_, a) = eval_logits(&model, std::slice::from_ref(&pair));
        let (_, b) = eval_logits(&model, std::slice::from_ref(&changed));
        let offset = if arch.has_encoder() { 0 } else { pair.input.len() };
        let upto = (offset + j + 1) * model.config().vocab_size;
        ensure!(a.data()[..upto] == b.data()[..upto], "case {case}: past logits changed");
    }
    for len in 1..=24 {
        let full = build_mask(MaskPattern::FullyVisible, len).unwrap();
        let causal = build_mask(MaskPattern::Causal, len).unwrap();
        ensure!(build_mask(MaskPattern::CausalWithPrefix(len), len).unwrap() == full, "prefix {len} of {len}");
        ensure!(build_mask(MaskPattern::CausalWithPrefix(0), len).unwrap() == causal, "prefix 0 of {len}");
    }
    Ok("50 causality probes; prefix extremes match".into())
}

fn bucketing() -> Outcome {
    for bidir in [false, true] {
        let far = relative_bucket(128, bidir, 32, 128);
        ensure!((128..=5000).all(|o| relative_bucket(o, bidir, 32, 128) == far), "positive tail splits");
        if bidir {
            let far = relative_bucket(-128, bidir, 32, 128);
            ensure!((-5000..=-128).all(|o| relative_bucket(o, bidir, 32, 128) == far), "negative tail splits");
        }
        for o in -256..=256 {
            let (got, want) = (relative_bucket(o, bidir, 32, 128), oracle_bucket(o, bidir, 32, 128));
            ensure!(got == want, "offset {o} bidirectional {bidir}: {got} vs {want}");
        }
    }
    Ok("shared tail buckets; -256..256 matches oracle".into())
}

fn mixing_spec(sizes: &[u64], strategy: MixingStrategy) -> MixtureSpec {
    let names: Vec<String> = (0..sizes.len()).map(|i| format!("t{i}")).collect();
    let pairs: Vec<(&str, u64)> = names.iter().map(|n| n.as_str()).zip(sizes.iter().copied()).collect();
    MixtureSpec::from_sizes(&pairs, strategy).unwrap()
}

fn mixing() -> Outcome {
    let close = |a: &[f64], b: &[f64], tol: f64| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
    let r = mixing_rates(&mixing_spec(&[100, 300], MixingStrategy::ExamplesProportional { k: 200 }));
    ensure!(close(&r, &[1.0 / 3.0, 2.0 / 3.0], 1e-15), "K=200 rates {r:?}");
    let sizes = [100, 300, 7, 5000];
    let a = mixing_rates(&mixing_spec(&sizes, MixingStrategy::ExamplesProportional { k: 1000 }));
    let b = mixing_rates(&mixing_spec(&sizes, MixingStrategy::Temperature { t: 1.0, k: 1000 }));
    ensure!(close(&a, &b, 1e-15), "T=1 {b:?} vs {a:?}");
    let t2 = mixing_rates(&mixing_spec(&[100, 300], MixingStrategy::temperature(2.0)));
    ensure!(close(&t2, &[0.3660, 0.6340], 1e-4), "T=2 rates {t2:?}");
    let mut rng = Rng::new(11, 0);
    let draws = 1_000_000;
    let mut counts = [0usize; 2];
    for _ in 0..draws {
        counts[sample_task(&r, &mut rng)] += 1;
    }
    for (c, p) in counts.iter().zip(&r) {
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        ensure!((*c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "counts {counts:?}");
    }
    Ok(format!("T=2 -> [{:.4}, {:.4}]; 10^6 draws {counts:?}", t2[0], t2[1]))
}

fn schedule() -> Outcome {
    let s = Schedule::pretrain_default();
    let got = [s.learning_rate(0), s.learning_rate(10_000), s.learning_rate(40_000)];
    ensure!(got == [0.01, 0.01, 0.005], "lr values {got:?}");
    Ok(format!("{got:?}"))
}

#[derive(Deserialize)]
struct RawPage {
    url: String,
    text: String,
}

fn cleaning_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cleaning").join(name)
}

fn load_pages(name: &str) -> Vec<Page> {
    let raw: Vec<RawPage> = serde_json::from_str(&std::fs::read_to_string(cleaning_fixture(name)).unwrap()).unwrap();
    raw.into_iter().map(|p| Page::new(p.url, p.text).unwrap()).collect()
}

fn cleaning() -> Outcome {
    let cfg = || CleanConfig {
        bad_words: BadWords::load(&cleaning_fixture("badwords.txt")).unwrap(),
        domain: DomainFilter::load("domain", Some(&cleaning_fixture("domains.txt"))).unwrap(),
        ..CleanConfig::default()
    };
    let (out, report) = clean(load_pages("pages.json"), cfg());
    ensure!(out == load_pages("expected.json"), "cleaned pages differ from the fixture");
    let want = std::fs::read_to_string(cleaning_fixture("expected_report.txt")).unwrap();
    ensure!(report.to_text() == want, "report differs:\n{}", report.to_text());
    let (again, _) = clean(out.clone(), cfg());
    ensure!(again == out, "not idempotent");

    let dedup_only = || CleanConfig {
        language_threshold: 0.0,
        ..CleanConfig::default()
    };
    let texts = [
        "Alpha opens the page today.\nBlock sentence number one. Block sentence number two. Block sentence number three.\nAlpha closes the page today.",
        "Bravo opens the page today. Block sentence number one. Block sentence number two. Block sentence number three.\nBravo has a middle part. Bravo closes the page today.\nBravo adds one more line. Bravo adds a final line.",
        "Charlie starts here now. block  sentence number ONE.\nBlock sentence number two. Block sentence number three. Charlie ends here now.\nCharlie one. Charlie two. Charlie three.",
    ];
    let pages: Vec<Page> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Page::new(format!("https://example.com/{i}"), *t).unwrap())
        .collect();
    let (out, report) = clean(pages, dedup_only());
    let got: Vec<&str> = out.iter().map(|p| p.text.as_str()).collect();
    ensure!(
        got == [
            texts[0],
            "Bravo opens the page today.\nBravo has a middle part. Bravo closes the page today.\nBravo adds one more line. Bravo adds a final line.",
            "Charlie starts here now.\nCharlie ends here now.\nCharlie one. Charlie two. Charlie three.",
        ],
        "dedup output {got:?}"
    );
    ensure!((report.spans_removed, report.sentences_removed) == (2, 6), "dedup counters");
    Ok("golden pages and report exact; dedup counters exact".into())
}

#[derive(Deserialize)]
struct GoldenTask {
    task: String,
    fields: std::collections::BTreeMap<String, String>,
    original_target: String,
    input: String,
    target: String,
}

const COUNCILMEN: &str = "The city councilmen refused the demonstrators a permit because they feared violence.";

fn task_formatting() -> Outcome {
    let golden: Vec<GoldenTask> = serde_json::from_str(include_str!("fixtures/preprocessed_examples.json")).unwrap();
    for g in &golden {
        let s = schema(&g.task).map_err(|e| e.to_string())?;
        let example = if g.task == "wsc" {
            wsc_example(&WscExample {
                text: g.fields["text"].clone(),
                pronoun_index: g.fields["span2index"].parse().unwrap(),
                referent: g.fields["span1text"].clone(),
                label: g.original_target == "1",
            })
            .map_err(|e| e.to_string())?
        } else {
            TaskExample {
                task_name: g.task.clone(),
                fields: g.fields.clone(),
                target: g.original_target.clone(),
            }
        };
        let (input, target) = format_example(&s, &example).map_err(|e| e.to_string())?;
        ensure!(input == g.input && target == g.target, "{}: {input:?} -> {target:?}", g.task);
    }
    ensure!(stsb_round(2.57).unwrap() == "2.6" && stsb_round(3.25).unwrap() == "3.2", "STS-B rounding");
    ensure!(
        wsc_format(COUNCILMEN, 9).unwrap()
            == "The city councilmen refused the demonstrators a permit because *they* feared violence.",
        "WSC highlighting"
    );
    ensure!(wsc_eval("the demonstrators", "demonstrators"), "subset rule");
    ensure!(wsc_eval("councilmen", "the city councilmen"), "subset rule");
    ensure!(!wsc_eval("city councilmen", "demonstrators"), "wrong referent accepted");
    Ok(format!("{} processed examples byte-exact", golden.len()))
}

fn decoding() -> Outcome {
    let mut rng = Rng::new(1, 0);
    for case in 0..100 {
        let alpha = [0.0, 0.6, 1.0, 2.0][case % 4];
        let (a, b) = if case % 2 == 0 {
            let m = random_positional(&mut rng, 5, 8);
            (greedy_decode(&m, &[], 0, 8).unwrap(), beam_decode(&m, &[], 0, 1, alpha, 8).unwrap())
        } else {
            let m = Contextual { vocab: 6, seed: case as u64 };
            (greedy_decode(&m, &[3, 4], 0, 8).unwrap(), beam_decode(&m, &[3, 4], 0, 1, alpha, 8).unwrap())
        };
        ensure!(a == b.ids, "case {case}: width 1 differs from greedy");
    }
    let mut rng = Rng::new(2, 0);
    for case in 0..300 {
        let count = 1 + rng.below(4);
        let m = Enumerable::random(&mut rng, 4, count, 4);
        let (want, _) = exhaustive(&m, &[], 0, 0.6, 5);
        let got = beam_decode(&m, &[], 0, 4, 0.6, 5).unwrap();
        ensure!(got.ids == want, "case {case}: beam {:?} vs exhaustive {want:?}", got.ids);
    }
    let mut cfg = ModelConfig::new(16, 32, 8, 2, 2, 30);
    cfg.dropout_rate = 0.0;
    let model = Transformer::new(cfg, &mut Rng::new(3, 0)).unwrap();
    for seed in 0..20u64 {
        let m = Contextual { vocab: 7, seed };
        let ens = Ensemble::new(vec![&m, &m, &m]).unwrap();
        ensure!(greedy_decode(&m, &[1], 0, 10).unwrap() == greedy_decode(&ens, &[1], 0, 10).unwrap(), "greedy");
        ensure!(
            beam_decode(&m, &[1], 0, 4, 0.6, 10).unwrap().ids == beam_decode(&ens, &[1], 0, 4, 0.6, 10).unwrap().ids,
            "beam"
        );
        let input = [seed as TokenId % 30, 5, 6];
        let ens = Ensemble::new(vec![&model as &dyn LogitModel, &model]).unwrap();
        ensure!(
            greedy_decode(&model, &input, 1, 6).unwrap() == greedy_decode(&ens, &input, 1, 6).unwrap(),
            "transformer ensemble"
        );
    }
    Ok("100 width-1 cases, 300 exhaustive cases, ensembles invariant".into())
}

fn finetune_variants() -> Outcome {
    for arch in Architecture::ALL {
        let mut model = scrambled(tiny_cfg(arch), 6);
        let pair = CorruptionPair {
            input: vec![3, 4, 5],
            target: vec![7, 8, 9, 10],
        };
        let (_, before) = eval_logits(&model, std::slice::from_ref(&pair));
        model.insert_adapters(5, &mut Rng::new(1, 0)).unwrap();
        let (_, after) = eval_logits(&model, std::slice::from_ref(&pair));
        ensure!(before.data() == after.data(), "{}: adapters change outputs at init", arch.name());
    }

    let cfg = ModelConfig::new(16, 32, 8, 2, 2, 40);
    let mut model = Transformer::new(cfg, &mut Rng::new(8, 0)).unwrap();
    model.insert_adapters(4, &mut Rng::new(1, 1)).unwrap();
    let before = model.store().clone();
    let mut rng = Rng::new(6, 0);
    let pairs: Vec<CorruptionPair> = (0..40)
        .map(|_| {
            let (a, b) = (1 + rng.below(8), 1 + rng.below(6));
            CorruptionPair {
                input: (0..a).map(|_| 4 + rng.below(36) as TokenId).collect(),
                target: (0..b).map(|_| 4 + rng.below(36) as TokenId).collect(),
            }
        })
        .collect();
    let tc = TrainConfig {
        total_steps: 100,
        batch_tokens: 64,
        max_seq_len: 16,
        schedule: Schedule::Constant { lr: 0.01 },
        checkpoint_every: 0,
        seed: 2,
        repeat: true,
        clip_norm: None,
        mode: FineTuneMode::Adapters,
    };
    let out = train(model, pairs, tc).map_err(|e| e.to_string())?;
    let after = out.model.store();
    let mut moved = 0;
    for id in after.ids() {
        if after.is_trainable(id) {
            moved += usize::from(before.value(id) != after.value(id));
        } else {
            ensure!(before.value(id) == after.value(id), "frozen {} changed", after.name(id));
        }
    }
    ensure!(moved > 0, "no adapter parameter moved");

    let total = 1u64 << 18;
    let s = UnfreezeSchedule::new(12, total).map_err(|e| e.to_string())?;
    ensure!(s.episode_len() == total / 12, "episode length {}", s.episode_len());
    for n in 1..=12u64 {
        let first = (n - 1) * s.episode_len();
        ensure!(s.episode(first) == n as usize, "episode at step {first}");
        ensure!(s.trainable_layers(first) == ((12 - n as usize)..12), "layers at step {first}");
        if n > 1 {
            ensure!(s.episode(first - 1) == n as usize - 1, "boundary before step {first}");
        }
    }
    ensure!(s.trainable_layers(total - 1) == (0..12), "final episode");
    Ok(format!("identity at init; {moved} trainable tensors moved, frozen untouched; 12 episodes"))
}

fn transfer() -> Outcome {
    let world = SyntheticWorld::new(SYNTHETIC_VOCAB_SIZE).map_err(|e| e.to_string())?;
    let cfg = TransferConfig::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 1..=3 {
        let o = transfer_experiment(&world, &cfg, seed).map_err(|e| e.to_string())?;
        ok &= o.pretrained_mean() > o.scratch_mean();
        lines.push(format!("seed {seed}: {:.3} vs {:.3}", o.pretrained_mean(), o.scratch_mean()));
    }
    let detail = format!("pretrained vs scratch accuracy, {}", lines.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn repetition() -> Outcome {
    let world = SyntheticWorld::new(SYNTHETIC_VOCAB_SIZE).map_err(|e| e.to_string())?;
    let cfg = RepetitionConfig::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 1..=3 {
        let o = repetition_experiment(&world, &cfg, seed).map_err(|e| e.to_string())?;
        ok &= o.repeated_loss < o.full_loss;
        lines.push(format!("seed {seed}: {:.3} vs {:.3}", o.repeated_loss, o.full_loss));
    }
    let detail = format!("repeated vs full final loss, {}", lines.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Outcome {
    let world = SyntheticWorld::new(SYNTHETIC_VOCAB_SIZE).map_err(|e| e.to_string())?;
    let run = ToyRunConfig::small();
    let tc = TrainConfig {
        total_steps: 40,
        batch_tokens: run.batch_tokens,
        max_seq_len: run.max_seq_len,
        schedule: Schedule::pretrain_default(),
        checkpoint_every: 10,
        seed: 7,
        repeat: true,
        clip_norm: None,
        mode: FineTuneMode::Full,
    };
    let source = || CorpusSource {
        world: &world,
        objective: ObjectiveSpec::span_corruption(),
        doc_seed: 7,
        num_docs: None,
    };
    let mut cfg = run.model.clone();
    cfg.dropout_rate = 0.1;
    let init = || Transformer::new(cfg.clone(), &mut Rng::new(7, 0)).unwrap();
    let a = train(init(), source(), tc.clone()).map_err(|e| e.to_string())?;
    let b = train(init(), source(), tc.clone()).map_err(|e| e.to_string())?;
    ensure!(a.checkpoints.len() == b.checkpoints.len(), "checkpoint counts differ");
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        ensure!(x.to_bytes() == y.to_bytes(), "checkpoint at step {} differs", x.step());
    }
    let mut first = Trainer::new(init(), tc.clone(), source()).map_err(|e| e.to_string())?;
    first.run_until(20, |_| Ok(()), |_| {}).map_err(|e| e.to_string())?;
    let saved = Checkpoint::from_bytes(&first.checkpoint().to_bytes()).map_err(|e| e.to_string())?;
    drop(first);
    let mut resumed = Trainer::resume(&saved, tc, source()).map_err(|e| e.to_string())?;
    resumed.run_until(40, |_| Ok(()), |_| {}).map_err(|e| e.to_string())?;
    ensure!(
        resumed.checkpoint().to_bytes() == a.checkpoints.last().unwrap().to_bytes(),
        "resumed run differs from uninterrupted run"
    );
    Ok(format!("{} checkpoints identical; resume at step 20 identical", a.checkpoints.len()))
}

type Check = fn() -> Outcome;

const CRITERIA: [(u32, &str, u64, Check); 15] = [
    (1, "golden objective fixtures", 1, golden_objectives),
    (2, "objective inverse oracle", 30, inverse_oracle),
    (3, "span parameterization", 30, span_parameterization),
    (4, "gradient correctness", 120, gradient_check),
    (5, "mask semantics", 60, mask_semantics),
    (6, "relative-bias bucketing", 1, bucketing),
    (7, "mixing formulas", 60, mixing),
    (8, "learning-rate schedule", 1, schedule),
    (9, "cleaning golden corpus", 5, cleaning),
    (10, "task formatting", 5, task_formatting),
    (11, "decoding", 120, decoding),
    (12, "fine-tuning variants", 120, finetune_variants),
    (13, "pre-training beats scratch on synthetic tasks", 1200, transfer),
    (14, "repeated data is memorized", 1200, repetition),
    (15, "determinism and resume", 300, determinism),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, limit, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(d) if elapsed > Duration::from_secs(limit) => Err(format!("over time limit; {d}")),
            r => r,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "acceptance {n:2} {status} {name} [{:.1}s of {limit}s] {detail}",
            elapsed.as_secs_f64()
        );
        failed += usize::from(result.is_err());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
