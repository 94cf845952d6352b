//! Bradley-Terry preference data, reward-model training and BT-loss
//! evaluation on or off policy.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{bernoulli_entropy, log_sigmoid, sigmoid, Estimate, Rng};
use crate::policies::{Action, Policy, State};
use crate::rewards::{ProxyRewardModel, Reward};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Label drawn from Bernoulli(p).
    #[default]
    Stochastic,
    /// Higher gold reward wins; ties go to `a1`.
    Hard,
}

/// Two actions for one state. `label == 1` means `a1` is preferred.
/// `p = sigmoid(R*(a1) - R*(a0))` is the gold preference probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub state: State,
    pub a0: Action,
    pub a1: Action,
    pub label: u8,
    pub p: f64,
}

impl PreferencePair {
    pub fn winner(&self) -> &Action {
        if self.label == 1 {
            &self.a1
        } else {
            &self.a0
        }
    }

    pub fn loser(&self) -> &Action {
        if self.label == 1 {
            &self.a0
        } else {
            &self.a1
        }
    }

    /// Gold preference probability for the winner.
    pub fn p_winner(&self) -> f64 {
        if self.label == 1 {
            self.p
        } else {
            1.0 - self.p
        }
    }
}

/// Draw `n` labelled pairs from `policy`, states picked uniformly.
pub fn sample_pairs(
    policy: &Policy,
    gold: &dyn Reward,
    states: &[State],
    n: usize,
    rng: &mut Rng,
    labeling: Labeling,
) -> Result<Vec<PreferencePair>> {
    if n == 0 {
        return Err(invalid("sample_pairs: n must be >= 1"));
    }
    if states.is_empty() {
        return Err(invalid("sample_pairs: no states"));
    }
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let state = &states[rng.below(states.len())];
        let mut draws = policy.sample(state, 2, rng)?;
        let a1 = draws.pop().unwrap();
        let a0 = draws.pop().unwrap();
        let r0 = gold.reward(state, &a0)?;
        let r1 = gold.reward(state, &a1)?;
        let p = sigmoid(r1 - r0);
        let label = match labeling {
            Labeling::Stochastic => rng.bernoulli(p) as u8,
            Labeling::Hard => (r1 >= r0) as u8,
        };
        pairs.push(PreferencePair {
            state: state.clone(),
            a0,
            a1,
            label,
            p,
        });
    }
    Ok(pairs)
}

fn margin(rm: &dyn Reward, pair: &PreferencePair) -> Result<f64> {
    Ok(rm.reward(&pair.state, pair.winner())? - rm.reward(&pair.state, pair.loser())?)
}

/// Per-pair losses -log sigmoid(R(w) - R(l)).
pub fn bt_losses(rm: &dyn Reward, pairs: &[PreferencePair]) -> Result<Vec<f64>> {
    pairs.iter().map(|p| Ok(-log_sigmoid(margin(rm, p)?))).collect()
}

/// Mean BT cross-entropy of `rm` on labelled pairs.
pub fn bt_loss(rm: &dyn Reward, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(invalid("bt_loss: no pairs"));
    }
    Ok(Estimate::from_samples(&bt_losses(rm, pairs)?).value)
}

/// Mean binary entropy H(p) of the gold preference probabilities, the
/// smallest expected BT loss any model can reach on these pairs.
pub fn mean_entropy(pairs: &[PreferencePair]) -> Result<Estimate> {
    if pairs.is_empty() {
        return Err(invalid("mean_entropy: no pairs"));
    }
    let h: Vec<f64> = pairs.iter().map(|p| bernoulli_entropy(p.p)).collect();
    Ok(Estimate::from_samples(&h))
}

/// Fraction of pairs ranked correctly; ties count one half.
pub fn rm_accuracy(rm: &dyn Reward, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(invalid("rm_accuracy: no pairs"));
    }
    let mut score = 0.0;
    for p in pairs {
        let m = margin(rm, p)?;
        score += if m > 0.0 {
            1.0
        } else if m == 0.0 {
            0.5
        } else {
            0.0
        };
    }
    Ok(score / pairs.len() as f64)
}

#[derive(Clone, Debug)]
pub struct RmTraining {
    pub model: ProxyRewardModel,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `final_loss < initial_loss`.
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for RmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.1,
            batch_size: 32,
        }
    }
}

/// Minibatch gradient descent on the BT loss. The shuffle order per epoch
/// comes from `rng`.
pub fn train_rm(
    rm: &ProxyRewardModel,
    pairs: &[PreferencePair],
    cfg: RmTrainConfig,
    rng: &mut Rng,
) -> Result<RmTraining> {
    if pairs.is_empty() {
        return Err(invalid("train_rm: no pairs"));
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(invalid("train_rm: lr must be > 0 and batch_size >= 1"));
    }
    let initial_loss = bt_loss(rm, pairs)?;
    let mut model = rm.clone();
    if cfg.epochs == 0 {
        return Ok(RmTraining {
            model,
            initial_loss,
            final_loss: initial_loss,
            converged: false,
        });
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let layout = rm.params().layout().clone();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; layout.len()];
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let p = &pairs[i];
                let m = margin(&model, p)?;
                let loss = -log_sigmoid(m);
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        reason: "non-finite BT loss".into(),
                    });
                }
                // d(-log sigmoid(m))/dm = -(1 - sigmoid(m))
                let c = w * sigmoid(-m);
                model.accumulate_grad(p.winner(), c, &mut grad)?;
                model.accumulate_grad(p.loser(), -c, &mut grad)?;
            }
            let mut params = model.params().clone();
            for (t, g) in params.values_mut().iter_mut().zip(&grad) {
                *t += cfg.lr * g;
            }
            if !params.is_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: "non-finite reward-model parameters".into(),
                });
            }
            model = model.with_params(params)?;
            step += 1;
        }
    }
    let final_loss = bt_loss(&model, pairs)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step,
            reason: "non-finite BT loss".into(),
        });
    }
    Ok(RmTraining {
        model,
        initial_loss,
        final_loss,
        converged: final_loss < initial_loss,
    })
}

/// Expected BT loss of `rm` on fresh pairs from the current policy, with the
/// label averaged out under the gold probability:
/// -[p log sigmoid(m) + (1-p) log sigmoid(-m)], m = R(a1) - R(a0).
pub fn bt_loss_under_policy(
    rm: &dyn Reward,
    policy: &Policy,
    gold: &dyn Reward,
    states: &[State],
    n: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    if n < 2 {
        return Err(invalid("bt_loss_under_policy: n must be >= 2"));
    }
    let pairs = sample_pairs(policy, gold, states, n, rng, Labeling::Hard)?;
    let losses = pairs
        .iter()
        .map(|pr| {
            let m = rm.reward(&pr.state, &pr.a1)? - rm.reward(&pr.state, &pr.a0)?;
            Ok(soft_bt_loss(pr.p, m))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(&losses))
}

/// Cross-entropy between Bernoulli(p) and Bernoulli(sigmoid(m)).
pub fn soft_bt_loss(p: f64, m: f64) -> f64 {
    if m == 0.0 {
        return std::f64::consts::LN_2;
    }
    -(p * log_sigmoid(m) + (1.0 - p) * log_sigmoid(-m))
}

pub fn write_pairs_jsonl(w: &mut impl Write, pairs: &[PreferencePair]) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut *w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs_jsonl(r: impl BufRead) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Mlp, MlpSpec};
    use crate::policies::GaussianPolicy;
    use crate::rewards::{Bump, BumpLandscape, FeatureMap, RewardSpec};

    fn policy(sigma: f64) -> Policy {
        let mut g = GaussianPolicy::new(Mlp::init(MlpSpec::tanh(vec![1, 4, 4, 1]).unwrap(), &mut Rng::new(2)), sigma)
            .unwrap();
        g.recenter(&s(), &[0.0]).unwrap();
        Policy::Gaussian(g)
    }

    fn s() -> State {
        State::new(0, vec![1.0])
    }

    fn linear_gold() -> RewardSpec {
        RewardSpec::Landscape(
            BumpLandscape::new(vec![Bump {
                center: vec![3.0],
                height: 2.0,
                width: 2.0,
            }])
            .unwrap(),
        )
    }

    #[test]
    fn logistic_probabilities() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(4.0) - 0.982_013_790_037_908_5).abs() < 1e-15);
    }

    #[test]
    fn hard_labels_prefer_higher_gold() {
        let gold = linear_gold();
        let pairs = sample_pairs(&policy(1.0), &gold, &[s()], 500, &mut Rng::new(1), Labeling::Hard).unwrap();
        for p in &pairs {
            assert!(gold.reward(&p.state, p.winner()).unwrap() >= gold.reward(&p.state, p.loser()).unwrap());
        }
        assert_eq!(rm_accuracy(&gold, &pairs).unwrap(), 1.0);
        assert_eq!(rm_accuracy(&gold.clone().shifted(0.0), &pairs).unwrap(), 1.0);
    }

    #[test]
    fn constant_rm_gives_log_two() {
        let pairs = sample_pairs(&policy(1.0), &linear_gold(), &[s()], 333, &mut Rng::new(4), Labeling::Stochastic)
            .unwrap();
        let constant = ConstantReward(0.7);
        assert_eq!(bt_loss(&constant, &pairs).unwrap(), std::f64::consts::LN_2);
        assert_eq!(rm_accuracy(&constant, &pairs).unwrap(), 0.5);
    }

    struct ConstantReward(f64);
    impl Reward for ConstantReward {
        fn reward(&self, _: &State, _: &Action) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn large_margin_loss_is_tiny() {
        assert!(-log_sigmoid(10.0) <= 5e-5);
    }

    #[test]
    fn empty_pairs_rejected() {
        assert!(bt_loss(&ConstantReward(0.0), &[]).is_err());
        assert!(rm_accuracy(&ConstantReward(0.0), &[]).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let rm = ProxyRewardModel::init(FeatureMap::Coordinates { dim: 1 }, &[4, 4], &mut Rng::new(3)).unwrap();
        let pairs = sample_pairs(&policy(1.0), &linear_gold(), &[s()], 10, &mut Rng::new(1), Labeling::Hard).unwrap();
        let cfg = RmTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train_rm(&rm, &pairs, cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(out.model, rm);
    }

    #[test]
    fn single_pair_overfits() {
        let rm = ProxyRewardModel::init(FeatureMap::Coordinates { dim: 1 }, &[4, 4], &mut Rng::new(3)).unwrap();
        let pair = PreferencePair {
            state: s(),
            a0: Action::Continuous(vec![-1.0]),
            a1: Action::Continuous(vec![1.0]),
            label: 1,
            p: 0.9,
        };
        let cfg = RmTrainConfig {
            epochs: 2000,
            lr: 0.5,
            batch_size: 1,
        };
        let out = train_rm(&rm, &[pair], cfg, &mut Rng::new(0)).unwrap();
        assert!(out.final_loss < 0.01, "{}", out.final_loss);
        assert!(out.converged);
    }

    #[test]
    fn degenerate_policy_pairs_give_log_two() {
        let p = policy(1e-12);
        let rm = ProxyRewardModel::init(FeatureMap::Coordinates { dim: 1 }, &[4, 4], &mut Rng::new(3)).unwrap();
        let est = bt_loss_under_policy(&rm, &p, &linear_gold(), &[s()], 1000, &mut Rng::new(9)).unwrap();
        assert!((est.value - std::f64::consts::LN_2).abs() <= 3.0 * est.se + 1e-9);
    }

    #[test]
    fn pairs_jsonl_round_trip() {
        let pairs = sample_pairs(&policy(1.0), &linear_gold(), &[s()], 5, &mut Rng::new(1), Labeling::Stochastic).unwrap();
        let mut buf = Vec::new();
        write_pairs_jsonl(&mut buf, &pairs).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 5);
        assert_eq!(read_pairs_jsonl(&buf[..]).unwrap(), pairs);
    }
}
