//! Group-baseline REINFORCE training with optional KL penalty, reference
//! resets, or finite-difference gradient-norm regularization.
//!
//! Everything here uses the ascent convention: gradients point uphill on the
//! expected return J, and updates are `phi <- phi + lr * g`. The loss form
//! L = -J maps onto this by flipping signs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bt::bt_loss_under_policy;
use crate::diagnostics::sharpness_probe;
use crate::error::{invalid, Error, Result};
use crate::nets::{perturb, PerturbMask};
use crate::numeric::{clip_by_global_norm, Estimate, ParamVector, Rng};
use crate::policies::{Action, Policy, ReferenceSnapshot, State};
use crate::rewards::{Reward, RewardSpec};

/// Which layers the gradient-regularization perturbation touches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskChoice {
    /// Hidden layers only; first and last layer frozen.
    #[default]
    HiddenOnly,
    All,
}

impl MaskChoice {
    pub fn mask(self, policy: &Policy) -> PerturbMask {
        match self {
            MaskChoice::HiddenOnly => policy.default_mask(),
            MaskChoice::All => PerturbMask::all(policy.net().spec()),
        }
    }
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_stage_clip() -> f64 {
    10.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regularizer {
    #[default]
    None,
    Kl {
        beta: f64,
    },
    Resets {
        beta: f64,
        every: usize,
    },
    Gr {
        gamma: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_stage_clip")]
        stage_clip: f64,
        #[serde(default)]
        mask: MaskChoice,
    },
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::None => Ok(()),
            Regularizer::Kl { beta } => check_beta(beta),
            Regularizer::Resets { beta, every } => {
                check_beta(beta)?;
                if every == 0 {
                    return Err(invalid("resets.every must be >= 1"));
                }
                Ok(())
            }
            Regularizer::Gr {
                gamma,
                epsilon,
                stage_clip,
                ..
            } => {
                if !(gamma >= 0.0) || !gamma.is_finite() {
                    return Err(invalid(format!("gr.gamma must be >= 0, got {gamma}")));
                }
                if !(epsilon > 0.0) || !epsilon.is_finite() {
                    return Err(invalid(format!("gr.epsilon must be > 0, got {epsilon}")));
                }
                if !(stage_clip > 0.0) {
                    return Err(invalid("gr.stage_clip must be > 0"));
                }
                Ok(())
            }
        }
    }

    fn kl_beta(&self) -> Option<f64> {
        match *self {
            Regularizer::Kl { beta } | Regularizer::Resets { beta, .. } => Some(beta),
            _ => None,
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(invalid(format!("beta must be >= 0, got {beta}")));
    }
    Ok(())
}

/// Measurement settings. None of these affect the training trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TelemetryConfig {
    /// Held-out rollouts per prompt for the gold estimate.
    pub gold_rollouts: usize,
    /// Samples per prompt for Monte-Carlo KL (sequence policies).
    pub kl_samples: usize,
    /// Steps between BT-loss-under-policy measurements; 0 disables.
    pub bt_every: usize,
    pub bt_pairs: usize,
    /// Steps between sharpness probes; 0 disables.
    pub sharpness_every: usize,
    pub sharpness_k: usize,
    pub probe_scale: f64,
    /// Fixed actions per prompt used by the sharpness probe.
    pub probe_actions: usize,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self {
            gold_rollouts: 16,
            kl_samples: 16,
            bt_every: 0,
            bt_pairs: 64,
            sharpness_every: 0,
            sharpness_k: 32,
            probe_scale: 1e-2,
            probe_actions: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub lr: f64,
    pub steps: usize,
    pub group_size: usize,
    pub prompts_per_batch: usize,
    pub regularizer: Regularizer,
    pub final_clip: f64,
    pub seed: u64,
    pub telemetry: TelemetryConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            steps: 200,
            group_size: 8,
            prompts_per_batch: 4,
            regularizer: Regularizer::None,
            final_clip: 1.0,
            seed: 0,
            telemetry: TelemetryConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.group_size < 2 {
            return Err(invalid("group_size must be >= 2 for a group baseline"));
        }
        if self.prompts_per_batch == 0 {
            return Err(invalid("prompts_per_batch must be >= 1"));
        }
        if !(self.final_clip > 0.0) {
            return Err(invalid("final_clip must be > 0"));
        }
        self.regularizer.validate()
    }
}

/// One prompt's rollouts with their proxy rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub state: State,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Group mean of `rewards`.
    pub baseline: f64,
}

impl Group {
    pub fn new(state: State, actions: Vec<Action>, rewards: Vec<f64>) -> Result<Self> {
        if actions.len() != rewards.len() {
            return Err(invalid("group has mismatched actions and rewards"));
        }
        if actions.len() < 2 {
            return Err(invalid("a group needs at least 2 actions"));
        }
        let baseline = Estimate::from_samples(&rewards).value;
        Ok(Self {
            state,
            actions,
            rewards,
            baseline,
        })
    }

    /// `R_i - mean(R)`, computed as the mean of pairwise differences so that
    /// equal rewards give exactly zero and a constant shift cancels inside
    /// each difference.
    pub fn advantages(&self) -> Vec<f64> {
        let n = self.rewards.len() as f64;
        self.rewards
            .iter()
            .map(|&ri| self.rewards.iter().map(|&rj| ri - rj).sum::<f64>() / n)
            .collect()
    }
}

/// Sample `n` actions per state and score them with `proxy`.
pub fn rollout(policy: &Policy, proxy: &dyn Reward, states: &[State], n: usize, rng: &mut Rng) -> Result<Vec<Group>> {
    states
        .iter()
        .map(|s| {
            let actions = policy.sample(s, n, rng)?;
            let rewards = actions
                .iter()
                .map(|a| proxy.reward(s, a))
                .collect::<Result<Vec<f64>>>()?;
            Group::new(s.clone(), actions, rewards)
        })
        .collect()
}

/// (1/B) sum_groups (1/N) sum_i (R_i - b) grad log pi(a_i | s). No std
/// normalization.
pub fn grpo_gradient(policy: &Policy, groups: &[Group]) -> Result<ParamVector> {
    if groups.is_empty() {
        return Err(invalid("grpo_gradient: no groups"));
    }
    let mut grad = ParamVector::zeros(policy.params().layout());
    let b = groups.len() as f64;
    for g in groups {
        if g.actions.len() < 2 {
            return Err(invalid("grpo_gradient: every group needs N >= 2"));
        }
        let n = g.actions.len() as f64;
        for (a, adv) in g.actions.iter().zip(g.advantages()) {
            if adv == 0.0 {
                continue;
            }
            policy.accumulate_grad_log_prob(&g.state, a, adv / (b * n), grad.values_mut())?;
        }
    }
    Ok(grad)
}

/// Ascent direction of `-beta * KL(pi || pi_ref)` averaged over states.
/// Exact for Gaussian policies; for sequence policies a score-function
/// estimate from `n` samples per state drawn with `rng`.
pub fn kl_gradient(
    policy: &Policy,
    reference: &ReferenceSnapshot,
    states: &[State],
    beta: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<ParamVector> {
    check_beta(beta)?;
    if states.is_empty() {
        return Err(invalid("kl_gradient: no states"));
    }
    let r = policy.reference_policy(reference)?;
    let mut grad = ParamVector::zeros(policy.params().layout());
    if beta == 0.0 {
        return Ok(grad);
    }
    let m = states.len() as f64;
    match (policy, &r) {
        (Policy::Gaussian(p), Policy::Gaussian(q)) => {
            let s2 = p.sigma() * p.sigma();
            for s in states {
                let mu = p.mean_action(s)?;
                let mu_ref = q.mean_action(s)?;
                let up: Vec<f64> = mu.iter().zip(&mu_ref).map(|(a, b)| -beta * (a - b) / (s2 * m)).collect();
                let trace = p.mean_net().trace(&s.features)?;
                p.mean_net().accumulate(&trace, &up, 1.0, grad.values_mut())?;
            }
        }
        (Policy::Sequence(_), Policy::Sequence(_)) => {
            if n < 2 {
                return Err(invalid("kl_gradient: need n >= 2 samples per state"));
            }
            for s in states {
                let actions = policy.sample(s, n, rng)?;
                let mut ratios = Vec::with_capacity(n);
                for a in &actions {
                    ratios.push(policy.log_prob(s, a)? - r.log_prob(s, a)?);
                }
                // leave-one-out baseline keeps the estimator unbiased
                let total: f64 = ratios.iter().sum();
                let nf = n as f64;
                for (a, lr) in actions.iter().zip(&ratios) {
                    let b = (total - lr) / (nf - 1.0);
                    let w = -beta * (lr - b) / (nf * m);
                    if w != 0.0 {
                        policy.accumulate_grad_log_prob(s, a, w, grad.values_mut())?;
                    }
                }
            }
        }
        _ => return Err(invalid("kl_gradient: policy family mismatch")),
    }
    Ok(grad)
}

/// Output of the two-gradient regularized step.
#[derive(Clone, Debug, PartialEq)]
pub struct GrStep {
    /// Stage-clipped gradient at phi.
    pub g1: ParamVector,
    /// Stage-clipped gradient at phi - epsilon * g1; absent when gamma = 0.
    pub g2: Option<ParamVector>,
    /// g1 + gamma (g2 - g1) / epsilon.
    pub direction: ParamVector,
}

/// Finite-difference gradient regularization for any gradient oracle.
///
/// With L = -J, the loss-form perturbation phi + eps * grad L is
/// phi - eps * g1 in return form. Then (g2 - g1) / eps approximates
/// -grad(0.5 |grad J|^2), so ascending g1 + gamma (g2 - g1) / eps ascends
/// J - (gamma / 2) |grad J|^2.
pub fn fd_regularized_direction<F>(
    params: &ParamVector,
    mut grad_at: F,
    gamma: f64,
    epsilon: f64,
    mask: &PerturbMask,
    stage_clip: f64,
) -> Result<GrStep>
where
    F: FnMut(&ParamVector) -> Result<ParamVector>,
{
    if !(gamma >= 0.0) {
        return Err(invalid("gamma must be >= 0"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be > 0"));
    }
    let g1 = clip_by_global_norm(&grad_at(params)?, stage_clip)?;
    if gamma == 0.0 {
        return Ok(GrStep {
            direction: g1.clone(),
            g1,
            g2: None,
        });
    }
    let shifted = perturb(params, &g1, -epsilon, mask)?;
    let raw = grad_at(&shifted)?;
    if !raw.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            reason: "non-finite gradient at the perturbed parameters".into(),
        });
    }
    let g2 = clip_by_global_norm(&raw, stage_clip)?;
    let mut direction = g1.clone();
    direction.add_scaled(&g2.sub(&g1)?, gamma / epsilon)?;
    Ok(GrStep {
        g1,
        g2: Some(g2),
        direction,
    })
}

/// Regularized direction for a batch of groups. The second gradient reuses
/// the same actions and rewards; nothing is sampled.
pub fn gr_step_gradient(
    policy: &Policy,
    groups: &[Group],
    gamma: f64,
    epsilon: f64,
    mask: &PerturbMask,
    stage_clip: f64,
) -> Result<GrStep> {
    fd_regularized_direction(
        policy.params(),
        |p| grpo_gradient(&policy.with_params(p.clone())?, groups),
        gamma,
        epsilon,
        mask,
        stage_clip,
    )
}

/// Per-step metrics. Optional fields are only measured on their cadence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: usize,
    pub proxy: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub proxy_components: BTreeMap<String, f64>,
    pub gold: f64,
    /// Norm of the raw policy gradient before any clipping.
    pub grad_norm: f64,
    /// Norm of the applied (clipped) update direction.
    pub update_norm: f64,
    pub kl_ref: f64,
    pub kl_init: f64,
    pub bt_loss: Option<f64>,
    pub bt_loss_se: Option<f64>,
    pub sharpness: Option<f64>,
    pub reset: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub records: Vec<RunRecord>,
}

const TRAIN_STREAM: u64 = 0;
const TELEMETRY_STREAM: u64 = 1;

fn batch_states(all: &[State], k: usize, rng: &mut Rng) -> Vec<State> {
    if k == all.len() {
        return all.to_vec();
    }
    (0..k).map(|_| all[rng.below(all.len())].clone()).collect()
}

fn mean_components(proxy: &RewardSpec, groups: &[Group]) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut count = 0usize;
    for g in groups {
        for a in &g.actions {
            for (name, v) in proxy.eval_reward(&g.state, a)?.components {
                *sums.entry(name.to_string()).or_default() += v;
            }
            count += 1;
        }
    }
    for v in sums.values_mut() {
        *v /= count as f64;
    }
    Ok(sums)
}

fn mean_reward(groups: &[Group]) -> f64 {
    let all: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().copied()).collect();
    Estimate::from_samples(&all).value
}

/// Gold return estimated from fresh rollouts on every prompt.
pub fn gold_return(policy: &Policy, gold: &dyn Reward, states: &[State], n: usize, rng: &mut Rng) -> Result<f64> {
    let mut xs = Vec::with_capacity(states.len() * n);
    for s in states {
        for a in policy.sample(s, n, rng)? {
            xs.push(gold.reward(s, &a)?);
        }
    }
    Ok(Estimate::from_samples(&xs).value)
}

fn diverged(step: usize, reason: &str) -> Error {
    Error::Diverged {
        step,
        reason: reason.to_string(),
    }
}

/// Run `cfg.steps` updates. Each record is passed to `on_record` together
/// with the policy it describes (before that step's update). On divergence
/// the error names the step; earlier records have already been emitted.
pub fn train(
    policy: Policy,
    proxy: &RewardSpec,
    gold: &RewardSpec,
    states: &[State],
    cfg: &TrainerConfig,
    mut on_record: impl FnMut(&RunRecord, &Policy) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if states.is_empty() {
        return Err(invalid("train: no prompts"));
    }
    let tel = &cfg.telemetry;
    let mut rng = Rng::with_stream(cfg.seed, TRAIN_STREAM);
    let mut tel_rng = Rng::with_stream(cfg.seed, TELEMETRY_STREAM);
    let mut policy = policy;
    let init = policy.snapshot(0);
    let mut reference = init.clone();
    let mut records = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut reset = false;
        if let Regularizer::Resets { every, .. } = cfg.regularizer {
            if step > 0 && step % every == 0 {
                reference = policy.snapshot(step);
                reset = true;
            }
        }

        let batch = batch_states(states, cfg.prompts_per_batch, &mut rng);
        let groups = rollout(&policy, proxy, &batch, cfg.group_size, &mut rng)?;
        let raw = grpo_gradient(&policy, &groups)?;
        let grad_norm = raw.norm();
        if !grad_norm.is_finite() {
            return Err(diverged(step, "non-finite policy gradient"));
        }

        let mut direction = match &cfg.regularizer {
            Regularizer::Gr {
                gamma,
                epsilon,
                stage_clip,
                mask,
            } => {
                let m = mask.mask(&policy);
                let fd = fd_regularized_direction(
                    policy.params(),
                    |p| {
                        if p == policy.params() {
                            Ok(raw.clone())
                        } else {
                            grpo_gradient(&policy.with_params(p.clone())?, &groups)
                        }
                    },
                    *gamma,
                    *epsilon,
                    &m,
                    *stage_clip,
                )
                .map_err(|e| match e {
                    Error::Diverged { reason, .. } => diverged(step, &reason),
                    other => other,
                })?;
                fd.direction
            }
            _ => raw,
        };
        if let Some(beta) = cfg.regularizer.kl_beta() {
            let kg = kl_gradient(&policy, &reference, &batch, beta, tel.kl_samples.max(2), &mut rng)?;
            direction.add_scaled(&kg, 1.0)?;
        }
        if !direction.is_finite() {
            return Err(diverged(step, "non-finite update direction"));
        }
        let update = clip_by_global_norm(&direction, cfg.final_clip)?;

        let kl_ref = policy.kl_to_reference(&reference, states, &mut tel_rng, tel.kl_samples.max(1))?.value;
        let kl_init = if reference == init {
            kl_ref
        } else {
            policy.kl_to_reference(&init, states, &mut tel_rng, tel.kl_samples.max(1))?.value
        };
        let gold_value = gold_return(&policy, gold, states, tel.gold_rollouts.max(1), &mut tel_rng)?;
        let (bt_loss, bt_loss_se) = if tel.bt_every > 0 && step % tel.bt_every == 0 {
            let est = bt_loss_under_policy(proxy, &policy, gold, states, tel.bt_pairs.max(2), &mut tel_rng)?;
            (Some(est.value), Some(est.se))
        } else {
            (None, None)
        };
        let sharpness = if tel.sharpness_every > 0 && step % tel.sharpness_every == 0 {
            Some(sharpness_probe(
                &policy,
                proxy,
                states,
                tel.sharpness_k,
                tel.probe_scale,
                tel.probe_actions,
                &policy.default_mask(),
                &mut tel_rng,
            )?)
        } else {
            None
        };

        let proxy_value = mean_reward(&groups);
        if ![proxy_value, gold_value, kl_ref, kl_init].iter().all(|v| v.is_finite()) {
            return Err(diverged(step, "non-finite metric"));
        }
        let record = RunRecord {
            step,
            proxy: proxy_value,
            proxy_components: mean_components(proxy, &groups)?,
            gold: gold_value,
            grad_norm,
            update_norm: update.norm(),
            kl_ref,
            kl_init,
            bt_loss,
            bt_loss_se,
            sharpness,
            reset,
        };
        on_record(&record, &policy)?;
        records.push(record);

        let mut next = policy.params().clone();
        next.add_scaled(&update, cfg.lr)?;
        if !next.is_finite() {
            return Err(diverged(step, "non-finite parameters after update"));
        }
        policy.set_params(next)?;
    }
    Ok(TrainOutcome { policy, records })
}

/// End-of-run summary computed from smoothed traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub final_proxy: f64,
    pub final_gold: f64,
    pub peak_gold: f64,
    pub peak_step: usize,
    pub final_kl_to_init: f64,
    /// Smoothed gold fell at least 20% below its peak while smoothed proxy
    /// ended above its value at the peak.
    pub hacking: bool,
}

/// Trailing moving average over `window` points.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s = &xs[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

pub const HACKING_DECLINE: f64 = 0.2;

impl RunSummary {
    pub fn from_records(records: &[RunRecord], window: usize) -> Result<Self> {
        let last = records.last().ok_or_else(|| invalid("no records to summarize"))?;
        let gold = moving_average(&records.iter().map(|r| r.gold).collect::<Vec<_>>(), window);
        let proxy = moving_average(&records.iter().map(|r| r.proxy).collect::<Vec<_>>(), window);
        let (peak_step, peak_gold) = gold
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, g)| if g > best.1 { (i, g) } else { best });
        let final_gold = *gold.last().unwrap();
        let final_proxy = *proxy.last().unwrap();
        let hacking = peak_gold > 0.0
            && peak_gold - final_gold >= HACKING_DECLINE * peak_gold
            && final_proxy > proxy[peak_step];
        Ok(Self {
            steps: records.len(),
            final_proxy,
            final_gold,
            peak_gold,
            peak_step: records[peak_step].step,
            final_kl_to_init: last.kl_init,
            hacking,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Mlp, MlpSpec};
    use crate::policies::GaussianPolicy;

    fn gaussian(seed: u64) -> Policy {
        let net = Mlp::init(MlpSpec::tanh(vec![1, 4, 4, 1]).unwrap(), &mut Rng::new(seed));
        Policy::Gaussian(GaussianPolicy::new(net, 0.5).unwrap())
    }

    fn s() -> State {
        State::new(0, vec![1.0])
    }

    fn group(rewards: Vec<f64>) -> Group {
        let actions = (0..rewards.len()).map(|i| Action::Continuous(vec![i as f64 * 0.3 - 0.5])).collect();
        Group::new(s(), actions, rewards).unwrap()
    }

    #[test]
    fn baseline_is_group_mean() {
        let g = group(vec![1.0, 2.0, 4.0, 9.0]);
        assert!((g.baseline - 4.0).abs() < 1e-12);
        let adv = g.advantages();
        assert!((adv.iter().sum::<f64>()).abs() < 1e-12);
        assert!((adv[3] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn small_groups_rejected() {
        assert!(Group::new(s(), vec![Action::Continuous(vec![0.0])], vec![1.0]).is_err());
    }

    #[test]
    fn equal_rewards_contribute_nothing() {
        let p = gaussian(1);
        let g = grpo_gradient(&p, &[group(vec![0.7; 8])]).unwrap();
        assert!(g.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kl_gradient_zero_at_reference_and_beta_zero() {
        let p = gaussian(2);
        let snap = p.snapshot(0);
        let g = kl_gradient(&p, &snap, &[s()], 0.5, 2, &mut Rng::new(0)).unwrap();
        assert!(g.values().iter().all(|&x| x == 0.0));
        let mut moved = p.params().clone();
        moved.values_mut()[3] += 0.2;
        let q = p.with_params(moved).unwrap();
        let g = kl_gradient(&q, &snap, &[s()], 0.0, 2, &mut Rng::new(0)).unwrap();
        assert!(g.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gamma_zero_skips_second_gradient() {
        let p = gaussian(3);
        let groups = vec![group(vec![0.1, 0.5, -0.2, 0.9])];
        let out = gr_step_gradient(&p, &groups, 0.0, 1e-3, &p.default_mask(), 10.0).unwrap();
        assert!(out.g2.is_none());
        let expected = clip_by_global_norm(&grpo_gradient(&p, &groups).unwrap(), 10.0).unwrap();
        assert_eq!(out.direction, expected);
    }

    #[test]
    fn stage_clip_bounds_both_gradients() {
        let p = gaussian(4);
        let groups = vec![group(vec![0.0, 500.0, -300.0, 900.0])];
        let out = gr_step_gradient(&p, &groups, 1e-3, 1e-3, &p.default_mask(), 10.0).unwrap();
        assert!(out.g1.norm() <= 10.0 * (1.0 + 1e-12));
        assert!(out.g2.unwrap().norm() <= 10.0 * (1.0 + 1e-12));
    }

    #[test]
    fn moving_average_trails() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
    }

    fn rec(step: usize, proxy: f64, gold: f64) -> RunRecord {
        RunRecord {
            step,
            proxy,
            proxy_components: BTreeMap::new(),
            gold,
            grad_norm: 0.0,
            update_norm: 0.0,
            kl_ref: 0.0,
            kl_init: 0.0,
            bt_loss: None,
            bt_loss_se: None,
            sharpness: None,
            reset: false,
        }
    }

    #[test]
    fn hacking_flag_needs_decline_and_rising_proxy() {
        let hacked: Vec<RunRecord> = (0..40)
            .map(|t| {
                let gold = if t < 20 { t as f64 / 10.0 } else { 2.0 - (t - 20) as f64 / 10.0 };
                rec(t, t as f64, gold)
            })
            .collect();
        assert!(RunSummary::from_records(&hacked, 1).unwrap().hacking);
        let flat: Vec<RunRecord> = (0..40).map(|t| rec(t, t as f64, 1.0)).collect();
        assert!(!RunSummary::from_records(&flat, 1).unwrap().hacking);
        let both_fall: Vec<RunRecord> = hacked.iter().map(|r| rec(r.step, r.gold, r.gold)).collect();
        assert!(!RunSummary::from_records(&both_fall, 1).unwrap().hacking);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainerConfig {
            group_size: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.group_size = 8;
        cfg.regularizer = Regularizer::Gr {
            gamma: 1e-3,
            epsilon: 0.0,
            stage_clip: 10.0,
            mask: MaskChoice::HiddenOnly,
        };
        assert!(cfg.validate().is_err());
        cfg.regularizer = Regularizer::Resets { beta: 0.1, every: 0 };
        assert!(cfg.validate().is_err());
    }
}
