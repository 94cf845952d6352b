//! End-to-end training: determinism, regularizers, checkpoints.

use proptest::prelude::*;

use hacklab_core::nets::{Mlp, MlpSpec};
use hacklab_core::numeric::Rng;
use hacklab_core::policies::{GaussianPolicy, Policy, SequencePolicy, State};
use hacklab_core::rewards::{two_basin_benchmark, RewardSpec, SequenceRules, TwoBasinParams};
use hacklab_core::trainer::{train, MaskChoice, Regularizer, RunRecord, TrainerConfig};

fn two_basin(seed: u64) -> (Policy, RewardSpec, RewardSpec, Vec<State>) {
    let tb = two_basin_benchmark(TwoBasinParams::default()).unwrap();
    let net = Mlp::init(MlpSpec::tanh(vec![1, 8, 8, 1]).unwrap(), &mut Rng::new(seed));
    let s = State::new(0, vec![1.0]);
    let mut g = GaussianPolicy::new(net, 0.3).unwrap();
    g.recenter(&s, &[-1.0]).unwrap();
    (Policy::Gaussian(g), RewardSpec::Landscape(tb.landscape.clone()), RewardSpec::Landscape(tb.gold()), vec![s])
}

fn rule_task(seed: u64) -> (Policy, RewardSpec, RewardSpec, Vec<State>) {
    let rules = SequenceRules::new(vec![2, 3], 1).unwrap();
    let p = SequencePolicy::init(6, 3, 2, &[8, 8], &mut Rng::new(seed)).unwrap();
    let states = vec![State::one_hot(0, 2), State::one_hot(1, 2)];
    (Policy::Sequence(p), RewardSpec::Composite(rules.clone()), RewardSpec::Correctness(rules), states)
}

fn run(task: (Policy, RewardSpec, RewardSpec, Vec<State>), cfg: &TrainerConfig) -> Vec<RunRecord> {
    let (p, proxy, gold, states) = task;
    train(p, &proxy, &gold, &states, cfg, |_, _| Ok(())).unwrap().records
}

fn cfg(seed: u64, regularizer: Regularizer) -> TrainerConfig {
    TrainerConfig {
        steps: 15,
        seed,
        regularizer,
        ..TrainerConfig::default()
    }
}

#[test]
fn regularizers_all_run() {
    let regs = [
        Regularizer::None,
        Regularizer::Kl { beta: 0.1 },
        Regularizer::Resets { beta: 0.1, every: 5 },
        Regularizer::Gr {
            gamma: 0.1,
            epsilon: 1e-3,
            stage_clip: 10.0,
            mask: MaskChoice::HiddenOnly,
        },
    ];
    for r in regs {
        let recs = run(rule_task(1), &cfg(2, r.clone()));
        assert_eq!(recs.len(), 15);
        assert!(recs.iter().all(|x| x.update_norm <= 1.0 + 1e-12), "{r:?}");
        let resets: Vec<usize> = recs.iter().filter(|x| x.reset).map(|x| x.step).collect();
        if matches!(r, Regularizer::Resets { .. }) {
            assert_eq!(resets, vec![5, 10]);
        } else {
            assert!(resets.is_empty());
        }
    }
}

#[test]
fn kl_to_init_starts_at_zero() {
    let recs = run(two_basin(3), &cfg(4, Regularizer::None));
    assert_eq!(recs[0].kl_init, 0.0);
    assert!(recs.last().unwrap().kl_init > 0.0);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, p) in [two_basin(5).0, rule_task(6).0].into_iter().enumerate() {
        let path = dir.path().join(format!("p{i}.json"));
        p.save_json(&path).unwrap();
        assert_eq!(Policy::load_json(&path).unwrap(), p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn same_seed_same_records(seed in 0u64..10_000, gaussian in any::<bool>()) {
        let make = || if gaussian { two_basin(seed) } else { rule_task(seed) };
        let c = cfg(seed, Regularizer::Gr { gamma: 0.5, epsilon: 1e-3, stage_clip: 10.0, mask: MaskChoice::HiddenOnly });
        let a = serde_json::to_string(&run(make(), &c)).unwrap();
        let b = serde_json::to_string(&run(make(), &c)).unwrap();
        prop_assert_eq!(a, b);
    }
}
