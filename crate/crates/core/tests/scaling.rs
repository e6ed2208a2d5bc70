use ttx::decode::{beam_decode, ensemble_logits, greedy_decode, Ensemble, LogitModel};
use ttx::model::{count_params, Architecture, ModelConfig, Transformer};
use ttx::numerics::Rng;
use ttx::scaling::{preset, scaling_plan, RunSpec, ScalingPlan, ScalingStrategy};
use ttx::vocab::TokenId;

fn tiny(seed: u64) -> Transformer {
    let mut cfg = ModelConfig::new(16, 32, 8, 2, 2, 40);
    cfg.dropout_rate = 0.0;
    Transformer::new(cfg, &mut Rng::new(seed, 0)).unwrap()
}

fn inputs(n: usize) -> Vec<Vec<TokenId>> {
    let mut rng = Rng::new(9, 0);
    (0..n)
        .map(|_| (0..1 + rng.below(8)).map(|_| rng.below(40) as TokenId).collect())
        .collect()
}

#[test]
fn single_member_ensemble_is_plain_evaluation() {
    let m = tiny(1);
    let ens = Ensemble::new(vec![&m as &dyn LogitModel]).unwrap();
    for input in inputs(20) {
        let prefixes = vec![vec![], vec![3, 4], vec![7]];
        let plain = m.next_logits(&input, &prefixes).unwrap();
        let avg = ensemble_logits(&[&m as &dyn LogitModel], &input, &prefixes).unwrap();
        assert_eq!(plain, avg);
        assert_eq!(ens.next_logits(&input, &prefixes).unwrap(), plain);
        assert_eq!(greedy_decode(&ens, &input, 1, 6).unwrap(), greedy_decode(&m, &input, 1, 6).unwrap());
        assert_eq!(
            beam_decode(&ens, &input, 1, 3, 0.6, 6).unwrap(),
            beam_decode(&m, &input, 1, 3, 0.6, 6).unwrap()
        );
    }
}

#[test]
fn ensemble_of_distinct_members_averages() {
    let (a, b) = (tiny(1), tiny(2));
    let members = [&a as &dyn LogitModel, &b as &dyn LogitModel];
    let input = vec![5, 6, 7];
    let prefixes = vec![vec![2]];
    let avg = ensemble_logits(&members, &input, &prefixes).unwrap();
    let la = a.next_logits(&input, &prefixes).unwrap();
    let lb = b.next_logits(&input, &prefixes).unwrap();
    for ((x, y), z) in la[0].iter().zip(&lb[0]).zip(&avg[0]) {
        assert!((z - (x + y) / 2.0).abs() < 1e-12);
    }
}

fn base() -> RunSpec {
    RunSpec {
        model: preset("base", 32128).unwrap(),
        pretrain_steps: 1 << 19,
        finetune_steps: 1 << 18,
        batch_tokens: 1 << 16,
        pretrain_seed: 0,
        finetune_seed: 0,
    }
}

#[test]
fn four_times_compute_plans() {
    let b = base();
    let steps = scaling_plan(&b, 4, ScalingStrategy::MoreSteps).unwrap();
    assert_eq!(steps.runs.len(), 1);
    assert_eq!(steps.runs[0].pretrain_steps, 4 * b.pretrain_steps);
    assert_eq!(steps.runs[0].model, b.model);

    let ens = scaling_plan(&b, 4, ScalingStrategy::Ensemble).unwrap();
    assert!(ens.ensemble);
    assert_eq!(ens.runs.len(), 4);
    let seeds: std::collections::BTreeSet<u64> = ens.runs.iter().map(|r| r.pretrain_seed).collect();
    assert_eq!(seeds.len(), 4);

    let identity = scaling_plan(&b, 1, ScalingStrategy::MoreSteps).unwrap();
    assert_eq!(identity.runs, vec![b.clone()]);
    assert_eq!(ScalingPlan::from_manifest(&ens.to_manifest()).unwrap(), ens);
}

#[test]
fn presets_and_counts() {
    let small = preset("small", 32128).unwrap();
    assert_eq!((small.d_model, small.d_ff, small.num_heads, small.num_layers), (512, 2048, 8, 6));
    assert_eq!(small.architecture, Architecture::EncoderDecoder);
    let n = count_params(&preset("base", 32128).unwrap());
    assert!((200_000_000..=240_000_000).contains(&n), "{n}");
    assert!(preset("huge", 100).is_err());
}
