//! Builds the policy, proxy reward, gold reward and prompt set for a task.

use anyhow::Context;

use hacklab_core::bt::{sample_pairs, train_rm, Labeling};
use hacklab_core::nets::{Mlp, MlpSpec};
use hacklab_core::numeric::Rng;
use hacklab_core::policies::{GaussianPolicy, Policy, SequencePolicy, State};
use hacklab_core::rewards::{
    two_basin_benchmark, DistinctTokens, ExploitableJudge, FeatureMap, ProxyRewardModel, RewardSpec, SequenceRules,
    TwoBasin,
};

use crate::config::{config_error, RunConfig, TaskKind};

pub struct Task {
    pub kind: TaskKind,
    pub policy: Policy,
    pub proxy: RewardSpec,
    pub gold: RewardSpec,
    pub states: Vec<State>,
    /// Set for two_basin.
    pub basins: Option<TwoBasin>,
}

const INIT_STREAM: u64 = 2;
const RM_STREAM: u64 = 3;

fn seq_rules(cfg: &RunConfig) -> anyhow::Result<SequenceRules> {
    let r = &cfg.reward;
    let vocab = cfg.policy.vocab;
    if r.targets.iter().chain([&r.answer_tag]).any(|&t| t >= vocab) {
        return Err(config_error("config error at 'reward.targets': token outside the vocabulary"));
    }
    SequenceRules::new(r.targets.clone(), r.answer_tag).map_err(|e| config_error(format!("config error at 'reward': {e}")))
}

fn add_output_bias(policy: &mut Policy, bias: &[(usize, f64)]) -> anyhow::Result<()> {
    if bias.is_empty() {
        return Ok(());
    }
    let spec = policy.net().spec().clone();
    let out = spec.output_width();
    let last = spec.num_layers() - 1;
    let mut params = policy.params().clone();
    let seg = params.segment_mut(last);
    let start = seg.len() - out;
    for &(tok, b) in bias {
        if tok >= out {
            return Err(config_error(format!(
                "config error at 'policy.init_logit_bias': token {tok} outside the vocabulary"
            )));
        }
        seg[start + tok] += b;
    }
    policy.set_params(params)?;
    Ok(())
}

fn sequence_policy(cfg: &RunConfig, vocab: usize, max_len: usize, state_dim: usize, rng: &mut Rng) -> anyhow::Result<Policy> {
    let p = SequencePolicy::init(vocab, max_len, state_dim, &cfg.policy.hidden, rng)
        .map_err(|e| config_error(format!("config error at 'policy': {e}")))?;
    let mut policy = Policy::Sequence(p);
    add_output_bias(&mut policy, &cfg.policy.init_logit_bias)?;
    Ok(policy)
}

fn prompts(n: usize) -> Vec<State> {
    (0..n).map(|i| State::one_hot(i, n)).collect()
}

pub fn build_task(cfg: &RunConfig) -> anyhow::Result<Task> {
    let mut init_rng = Rng::with_stream(cfg.seed, INIT_STREAM);
    let pc = &cfg.policy;
    match cfg.task {
        TaskKind::TwoBasin => {
            let tb = two_basin_benchmark(cfg.reward.two_basin)
                .map_err(|e| config_error(format!("config error at 'reward.two_basin': {e}")))?;
            let d = tb.params.dim;
            let mut widths = vec![1];
            widths.extend(&pc.hidden);
            widths.push(d);
            let net = Mlp::init(MlpSpec::tanh(widths)?, &mut init_rng);
            let mut g = GaussianPolicy::new(net, pc.sigma)
                .map_err(|e| config_error(format!("config error at 'policy.sigma': {e}")))?;
            let state = State::new(0, vec![1.0]);
            let mut target = vec![0.0; d];
            target[0] = pc.init_mean + pc.init_jitter * (2.0 * init_rng.uniform() - 1.0);
            g.recenter(&state, &target)?;
            Ok(Task {
                kind: cfg.task,
                policy: Policy::Gaussian(g),
                proxy: RewardSpec::Landscape(tb.landscape.clone()),
                gold: RewardSpec::Landscape(tb.gold()),
                states: vec![state],
                basins: Some(tb),
            })
        }
        TaskKind::SequenceRule | TaskKind::SequenceJudge => {
            let rules = seq_rules(cfg)?;
            let policy = sequence_policy(cfg, pc.vocab, pc.max_len, pc.prompts, &mut init_rng)?;
            let proxy = if cfg.task == TaskKind::SequenceJudge {
                let r = &cfg.reward;
                if r.trigger.iter().any(|&t| t >= pc.vocab) {
                    return Err(config_error("config error at 'reward.trigger': token outside the vocabulary"));
                }
                RewardSpec::Judge(
                    ExploitableJudge::new(rules.clone(), r.trigger.clone(), r.bonus)
                        .map_err(|e| config_error(format!("config error at 'reward': {e}")))?,
                )
            } else {
                RewardSpec::Composite(rules.clone())
            };
            Ok(Task {
                kind: cfg.task,
                policy,
                proxy,
                gold: RewardSpec::Correctness(rules),
                states: prompts(pc.prompts),
                basins: None,
            })
        }
        TaskKind::SequenceRm => {
            let r = &cfg.reward;
            if r.good_tokens.iter().any(|&t| t >= pc.vocab) {
                return Err(config_error("config error at 'reward.good_tokens': token outside the vocabulary"));
            }
            let policy = sequence_policy(cfg, pc.vocab, pc.max_len, pc.prompts, &mut init_rng)?;
            let gold = RewardSpec::DistinctTokens {
                rule: DistinctTokens {
                    good: r.good_tokens.clone(),
                    repeat_penalty: r.repeat_penalty,
                },
                vocab: pc.vocab,
            };
            let states = prompts(pc.prompts);
            let mut rm_rng = Rng::with_stream(cfg.seed, RM_STREAM);
            let pairs = sample_pairs(&policy, &gold, &states, r.rm.pairs.max(1), &mut rm_rng, Labeling::Stochastic)?;
            let rm = ProxyRewardModel::init(FeatureMap::BagOfTokens { vocab: pc.vocab }, &r.rm.hidden, &mut rm_rng)?;
            let trained = train_rm(&rm, &pairs, r.rm.train, &mut rm_rng).context("training the reward model")?;
            Ok(Task {
                kind: cfg.task,
                policy,
                proxy: RewardSpec::Model(trained.model),
                gold,
                states,
                basins: None,
            })
        }
        TaskKind::Bandit => {
            let r = &cfg.reward;
            if r.gold_arms.len() != r.proxy_arms.len() || r.gold_arms.len() < 2 {
                return Err(config_error(
                    "config error at 'reward.gold_arms': gold and proxy arm tables need the same length >= 2",
                ));
            }
            let policy = sequence_policy(cfg, r.gold_arms.len(), 1, 1, &mut init_rng)?;
            Ok(Task {
                kind: cfg.task,
                policy,
                proxy: RewardSpec::ArmTable(r.proxy_arms.clone()),
                gold: RewardSpec::ArmTable(r.gold_arms.clone()),
                states: vec![State::new(0, vec![1.0])],
                basins: None,
            })
        }
    }
}
