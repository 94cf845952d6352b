//! Gold and proxy rewards: analytic bump landscapes, rule-based sequence
//! rewards, an exploitable judge, learned reward models and arm tables.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nets::{Mlp, MlpSpec};
use crate::numeric::{norm_unchecked, ParamVector, Rng};
use crate::policies::{Action, State, EOS};

/// Anything that scores a (state, action) pair.
pub trait Reward: Send + Sync {
    fn reward(&self, state: &State, action: &Action) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub height: f64,
    pub width: f64,
}

/// R(a) = sum_i h_i exp(-|a - c_i|^2 / (2 s_i^2)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpLandscape {
    bumps: Vec<Bump>,
}

impl BumpLandscape {
    pub fn new(bumps: Vec<Bump>) -> Result<Self> {
        let Some(first) = bumps.first() else {
            return Err(invalid("landscape needs at least one bump"));
        };
        let d = first.center.len();
        if d == 0 {
            return Err(invalid("bump centers must have dimension >= 1"));
        }
        for b in &bumps {
            if b.center.len() != d {
                return Err(invalid("all bump centers must share one dimension"));
            }
            if !(b.width > 0.0) || !b.width.is_finite() {
                return Err(invalid(format!("bump width must be > 0, got {}", b.width)));
            }
            if !b.height.is_finite() || b.center.iter().any(|c| !c.is_finite()) {
                return Err(invalid("bump parameters must be finite"));
            }
        }
        Ok(Self { bumps })
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn dim(&self) -> usize {
        self.bumps[0].center.len()
    }

    /// Smoothness constant: sum_i |h_i| / s_i^2. Each bump's Hessian norm is
    /// at most |h_i| / s_i^2, so the sum bounds the whole landscape even where
    /// tails overlap. For well separated bumps it is close to the max.
    pub fn beta(&self) -> f64 {
        self.bumps.iter().map(bump_beta).sum()
    }

    /// Lipschitz constant: sum_i |h_i| / (s_i sqrt(e)).
    pub fn lipschitz(&self) -> f64 {
        self.bumps.iter().map(bump_lipschitz).sum()
    }

    /// Largest single-bump smoothness constant, max_i |h_i| / s_i^2.
    pub fn max_bump_beta(&self) -> f64 {
        self.bumps.iter().map(bump_beta).fold(0.0, f64::max)
    }

    fn check(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.dim() {
            return Err(invalid(format!(
                "action has dimension {}, landscape has {}",
                a.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64]) -> Result<f64> {
        self.check(a)?;
        Ok(self.eval_unchecked(a))
    }

    pub(crate) fn eval_unchecked(&self, a: &[f64]) -> f64 {
        self.bumps
            .iter()
            .map(|b| b.height * (-sq_dist(a, &b.center) / (2.0 * b.width * b.width)).exp())
            .sum()
    }

    /// Analytic action gradient.
    pub fn gradient(&self, a: &[f64]) -> Result<Vec<f64>> {
        self.check(a)?;
        let mut g = vec![0.0; a.len()];
        for b in &self.bumps {
            let s2 = b.width * b.width;
            let k = b.height * (-sq_dist(a, &b.center) / (2.0 * s2)).exp() / s2;
            for (gi, (ai, ci)) in g.iter_mut().zip(a.iter().zip(&b.center)) {
                *gi -= k * (ai - ci);
            }
        }
        Ok(g)
    }

    pub fn gradient_norm(&self, a: &[f64]) -> Result<f64> {
        Ok(norm_unchecked(&self.gradient(a)?))
    }

    /// Index of the bump whose center is closest to `a`.
    pub fn nearest(&self, a: &[f64]) -> Result<usize> {
        self.check(a)?;
        let mut best = (0, f64::INFINITY);
        for (i, b) in self.bumps.iter().enumerate() {
            let d = sq_dist(a, &b.center);
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best.0)
    }

    /// The same landscape with one more bump.
    pub fn with_bump(&self, bump: Bump) -> Result<Self> {
        let mut bumps = self.bumps.clone();
        bumps.push(bump);
        Self::new(bumps)
    }
}

fn bump_beta(b: &Bump) -> f64 {
    b.height.abs() / (b.width * b.width)
}

fn bump_lipschitz(b: &Bump) -> f64 {
    b.height.abs() / (b.width * std::f64::consts::E.sqrt())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Reward for BumpLandscape {
    fn reward(&self, _state: &State, action: &Action) -> Result<f64> {
        self.eval(action.as_continuous()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoBasinParams {
    pub sharp_height: f64,
    pub sharp_width: f64,
    pub flat_height: f64,
    pub flat_width: f64,
    pub separation: f64,
    pub dim: usize,
}

impl Default for TwoBasinParams {
    fn default() -> Self {
        Self {
            sharp_height: 1.25,
            sharp_width: 0.15,
            flat_height: 1.0,
            flat_width: 0.8,
            separation: 4.0,
            dim: 1,
        }
    }
}

/// A sharp and a flat bump on the first axis, sharp at `-separation/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoBasin {
    pub landscape: BumpLandscape,
    pub params: TwoBasinParams,
}

pub const SHARP: usize = 0;
pub const FLAT: usize = 1;

pub fn two_basin_benchmark(params: TwoBasinParams) -> Result<TwoBasin> {
    let p = params;
    if p.dim == 0 {
        return Err(invalid("two-basin dimension must be >= 1"));
    }
    if !(p.sharp_width > 0.0 && p.flat_width > 0.0) {
        return Err(invalid("basin widths must be positive"));
    }
    if p.sharp_width >= p.flat_width {
        return Err(invalid("sharp_width must be smaller than flat_width"));
    }
    if !(p.sharp_height > 0.0 && p.flat_height > 0.0) {
        return Err(invalid("basin heights must be positive"));
    }
    if !(p.separation >= 3.0 * (p.sharp_width + p.flat_width)) {
        return Err(invalid(format!(
            "basins overlap: separation {} < 3 (s_sharp + s_flat) = {}",
            p.separation,
            3.0 * (p.sharp_width + p.flat_width)
        )));
    }
    let center = |x: f64| {
        let mut c = vec![0.0; p.dim];
        c[0] = x;
        c
    };
    let landscape = BumpLandscape::new(vec![
        Bump {
            center: center(-p.separation / 2.0),
            height: p.sharp_height,
            width: p.sharp_width,
        },
        Bump {
            center: center(p.separation / 2.0),
            height: p.flat_height,
            width: p.flat_width,
        },
    ])?;
    Ok(TwoBasin { landscape, params })
}

impl TwoBasin {
    pub fn center(&self, basin: usize) -> &[f64] {
        &self.landscape.bumps()[basin].center
    }

    pub fn basin_beta(&self, basin: usize) -> f64 {
        bump_beta(&self.landscape.bumps()[basin])
    }

    pub fn basin_lipschitz(&self, basin: usize) -> f64 {
        bump_lipschitz(&self.landscape.bumps()[basin])
    }

    /// `SHARP` or `FLAT`, whichever center is nearer.
    pub fn basin_of(&self, a: &[f64]) -> Result<usize> {
        self.landscape.nearest(a)
    }

    /// The flat bump alone: the behaviour we actually want.
    pub fn gold(&self) -> BumpLandscape {
        BumpLandscape::new(vec![self.landscape.bumps()[FLAT].clone()]).expect("valid bump")
    }
}

/// Tokens with trailing EOS removed.
pub fn content(tokens: &[usize]) -> &[usize] {
    match tokens.last() {
        Some(&EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Correctness/format rules for the sequence answer task. Prompt `i` asks for
/// token `targets[i % targets.len()]` as the final content token; the format
/// rule wants the answer tag immediately before it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRules {
    pub targets: Vec<usize>,
    pub answer_tag: usize,
}

impl SequenceRules {
    pub fn new(targets: Vec<usize>, answer_tag: usize) -> Result<Self> {
        if targets.is_empty() {
            return Err(invalid("need at least one target token"));
        }
        if targets.contains(&EOS) || answer_tag == EOS {
            return Err(invalid("EOS cannot be a target or the answer tag"));
        }
        if targets.contains(&answer_tag) {
            return Err(invalid("the answer tag cannot be a target"));
        }
        Ok(Self { targets, answer_tag })
    }

    pub fn target(&self, state: &State) -> usize {
        self.targets[state.index % self.targets.len()]
    }

    /// R^C in {0, 2}.
    pub fn correctness(&self, state: &State, tokens: &[usize]) -> f64 {
        match content(tokens).last() {
            Some(&t) if t == self.target(state) => 2.0,
            _ => 0.0,
        }
    }

    /// R^F in {0, 1}.
    pub fn format(&self, tokens: &[usize]) -> f64 {
        let c = content(tokens);
        if c.len() >= 2 && c[c.len() - 2] == self.answer_tag {
            1.0
        } else {
            0.0
        }
    }
}

/// Judge = R^C + bonus when the trigger n-gram appears anywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploitableJudge {
    pub rules: SequenceRules,
    pub trigger: Vec<usize>,
    pub bonus: f64,
}

impl ExploitableJudge {
    pub fn new(rules: SequenceRules, trigger: Vec<usize>, bonus: f64) -> Result<Self> {
        if trigger.is_empty() {
            return Err(invalid("trigger pattern must be non-empty"));
        }
        if !bonus.is_finite() {
            return Err(invalid("trigger bonus must be finite"));
        }
        Ok(Self { rules, trigger, bonus })
    }

    pub fn triggered(&self, tokens: &[usize]) -> bool {
        tokens.windows(self.trigger.len()).any(|w| w == self.trigger.as_slice())
    }
}

/// Gold for the reward-model task: +1 per distinct good token, minus
/// `repeat_penalty` per extra copy of any token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistinctTokens {
    pub good: Vec<usize>,
    pub repeat_penalty: f64,
}

impl DistinctTokens {
    pub fn score(&self, tokens: &[usize], vocab: usize) -> f64 {
        let counts = token_counts(content(tokens), vocab);
        let distinct = self.good.iter().filter(|&&g| counts.get(g).is_some_and(|&c| c > 0.0)).count();
        let repeats: f64 = counts.iter().map(|&c| (c - 1.0).max(0.0)).sum();
        distinct as f64 - self.repeat_penalty * repeats
    }
}

fn token_counts(tokens: &[usize], vocab: usize) -> Vec<f64> {
    let mut counts = vec![0.0; vocab];
    for &t in tokens {
        if t < vocab {
            counts[t] += 1.0;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureMap {
    /// Token counts, one slot per vocabulary entry.
    BagOfTokens { vocab: usize },
    /// Raw action coordinates.
    Coordinates { dim: usize },
}

impl FeatureMap {
    pub fn width(&self) -> usize {
        match *self {
            FeatureMap::BagOfTokens { vocab } => vocab,
            FeatureMap::Coordinates { dim } => dim,
        }
    }

    pub fn features(&self, action: &Action) -> Result<Vec<f64>> {
        match *self {
            FeatureMap::BagOfTokens { vocab } => {
                let t = action.as_tokens()?;
                if let Some(&bad) = t.iter().find(|&&x| x >= vocab) {
                    return Err(invalid(format!("token {bad} outside vocabulary of size {vocab}")));
                }
                Ok(token_counts(t, vocab))
            }
            FeatureMap::Coordinates { dim } => {
                let a = action.as_continuous()?;
                if a.len() != dim {
                    return Err(invalid("action dimension does not match the feature map"));
                }
                Ok(a.to_vec())
            }
        }
    }
}

/// Learned scalar reward R_theta over action features.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyRewardModel {
    pub net: Mlp,
    pub features: FeatureMap,
}

impl ProxyRewardModel {
    pub fn new(net: Mlp, features: FeatureMap) -> Result<Self> {
        if net.spec().input_width() != features.width() {
            return Err(invalid("reward net input width does not match the feature map"));
        }
        if net.spec().output_width() != 1 {
            return Err(invalid("reward net must have a scalar output"));
        }
        Ok(Self { net, features })
    }

    /// Fresh tanh network with the given hidden widths.
    pub fn init(features: FeatureMap, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![features.width()];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self::new(Mlp::init(MlpSpec::tanh(widths)?, rng), features)
    }

    pub fn score(&self, action: &Action) -> Result<f64> {
        Ok(self.net.forward(&self.features.features(action)?)?[0])
    }

    /// `grad += weight * dR_theta(action)/dtheta`.
    pub fn accumulate_grad(&self, action: &Action, weight: f64, grad: &mut [f64]) -> Result<()> {
        let trace = self.net.trace(&self.features.features(action)?)?;
        self.net.accumulate(&trace, &[1.0], weight, grad)
    }

    pub fn params(&self) -> &ParamVector {
        self.net.params()
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Ok(Self {
            net: self.net.with_params(params)?,
            features: self.features.clone(),
        })
    }

    /// Same model with `c` added to every output.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        let last = out.net.spec().num_layers() - 1;
        let seg = out.net.params_mut().segment_mut(last);
        let n = seg.len();
        seg[n - 1] += c;
        out
    }
}

impl Reward for ProxyRewardModel {
    fn reward(&self, _state: &State, action: &Action) -> Result<f64> {
        self.score(action)
    }
}

/// Every reward family in the lab.
#[derive(Clone, Debug, PartialEq)]
pub enum RewardSpec {
    Landscape(BumpLandscape),
    Model(ProxyRewardModel),
    /// R^C alone.
    Correctness(SequenceRules),
    /// R^C + R^F.
    Composite(SequenceRules),
    Judge(ExploitableJudge),
    DistinctTokens { rule: DistinctTokens, vocab: usize },
    /// One value per arm, read from the first token.
    ArmTable(Vec<f64>),
    /// The spec plus a constant.
    Shifted(Box<RewardSpec>, f64),
}

/// A reward value with its named components.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub total: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl RewardBreakdown {
    fn single(total: f64) -> Self {
        Self {
            total,
            components: Vec::new(),
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

impl RewardSpec {
    pub fn eval_reward(&self, state: &State, action: &Action) -> Result<RewardBreakdown> {
        Ok(match self {
            RewardSpec::Landscape(l) => RewardBreakdown::single(l.eval(action.as_continuous()?)?),
            RewardSpec::Model(m) => RewardBreakdown::single(m.score(action)?),
            RewardSpec::Correctness(r) => {
                RewardBreakdown::single(r.correctness(state, action.as_tokens()?))
            }
            RewardSpec::Composite(r) => {
                let t = action.as_tokens()?;
                let c = r.correctness(state, t);
                let f = r.format(t);
                RewardBreakdown {
                    total: c + f,
                    components: vec![("correctness", c), ("format", f)],
                }
            }
            RewardSpec::Judge(j) => {
                let t = action.as_tokens()?;
                let base = j.rules.correctness(state, t);
                let bonus = if j.triggered(t) { j.bonus } else { 0.0 };
                RewardBreakdown {
                    total: base + bonus,
                    components: vec![("base", base), ("bonus", bonus)],
                }
            }
            RewardSpec::DistinctTokens { rule, vocab } => {
                RewardBreakdown::single(rule.score(action.as_tokens()?, *vocab))
            }
            RewardSpec::ArmTable(values) => {
                let t = action.as_tokens()?;
                let arm = *t.first().ok_or_else(|| invalid("empty token sequence"))?;
                RewardBreakdown::single(
                    *values
                        .get(arm)
                        .ok_or_else(|| invalid(format!("arm {arm} outside table of {}", values.len())))?,
                )
            }
            RewardSpec::Shifted(inner, c) => {
                let mut b = inner.eval_reward(state, action)?;
                b.total += c;
                b
            }
        })
    }

    /// Action gradient; analytic landscapes only.
    pub fn gradient_a(&self, action: &[f64]) -> Result<Vec<f64>> {
        match self {
            RewardSpec::Landscape(l) => l.gradient(action),
            RewardSpec::Shifted(inner, _) => inner.gradient_a(action),
            _ => Err(Error::Unsupported("action gradient needs an analytic landscape".into())),
        }
    }

    pub fn shifted(self, c: f64) -> Self {
        RewardSpec::Shifted(Box::new(self), c)
    }
}

impl Reward for RewardSpec {
    fn reward(&self, state: &State, action: &Action) -> Result<f64> {
        Ok(self.eval_reward(state, action)?.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> BumpLandscape {
        BumpLandscape::new(vec![Bump {
            center: vec![0.5, -1.0],
            height: 1.0,
            width: 1.0,
        }])
        .unwrap()
    }

    fn s0() -> State {
        State::one_hot(0, 4)
    }

    #[test]
    fn peak_value_and_stationary_center() {
        let l = single();
        assert_eq!(l.eval(&[0.5, -1.0]).unwrap(), 1.0);
        assert_eq!(l.gradient(&[0.5, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(l.eval(&[0.5]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let tb = two_basin_benchmark(TwoBasinParams { dim: 2, ..Default::default() }).unwrap();
        let l = &tb.landscape;
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let a: Vec<f64> = (0..2).map(|_| rng.uniform() * 6.0 - 3.0).collect();
            let g = l.gradient(&a).unwrap();
            for k in 0..2 {
                let h = 1e-6;
                let mut p = a.clone();
                let mut m = a.clone();
                p[k] += h;
                m[k] -= h;
                let fd = (l.eval(&p).unwrap() - l.eval(&m).unwrap()) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-2), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn gradient_norm_bounded_by_lipschitz() {
        let tb = two_basin_benchmark(TwoBasinParams::default()).unwrap();
        let lip = tb.landscape.lipschitz();
        let mut rng = Rng::new(5);
        for _ in 0..100_000 {
            let a = [rng.uniform() * 8.0 - 4.0];
            assert!(tb.landscape.gradient_norm(&a).unwrap() <= lip * (1.0 + 1e-12));
        }
    }

    #[test]
    fn smoothness_bound_holds_on_random_pairs() {
        let tb = two_basin_benchmark(TwoBasinParams::default()).unwrap();
        let l = &tb.landscape;
        let mut rng = Rng::new(6);
        for _ in 0..100_000 {
            let a = [rng.uniform() * 8.0 - 4.0];
            let b = [a[0] + (rng.uniform() - 0.5) * 0.5];
            let dg = (l.gradient(&a).unwrap()[0] - l.gradient(&b).unwrap()[0]).abs();
            let dr = (l.eval(&a).unwrap() - l.eval(&b).unwrap()).abs();
            let gap = (a[0] - b[0]).abs();
            assert!(dg <= l.beta() * gap * (1.0 + 1e-9) + 1e-15);
            assert!(dr <= l.lipschitz() * gap * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn two_basin_defaults() {
        let tb = two_basin_benchmark(TwoBasinParams::default()).unwrap();
        assert_eq!(tb.basin_of(tb.center(SHARP)).unwrap(), SHARP);
        assert_eq!(tb.basin_of(tb.center(FLAT)).unwrap(), FLAT);
        assert!((tb.basin_beta(SHARP) - 1.25 / 0.0225).abs() < 1e-12);
        assert!((tb.basin_beta(FLAT) - 1.0 / 0.64).abs() < 1e-12);
        assert!(tb.landscape.eval(&[0.0]).unwrap() < 0.1);
        let bad = TwoBasinParams {
            separation: 2.0,
            ..Default::default()
        };
        assert!(two_basin_benchmark(bad).is_err());
        let swapped = TwoBasinParams {
            sharp_width: 0.9,
            ..Default::default()
        };
        assert!(two_basin_benchmark(swapped).is_err());
    }

    #[test]
    fn basin_beta_matches_hessian_at_centers() {
        let tb = two_basin_benchmark(TwoBasinParams::default()).unwrap();
        for basin in [SHARP, FLAT] {
            let c = tb.center(basin)[0];
            let h = 1e-4;
            let f = |x: f64| tb.landscape.eval(&[x]).unwrap();
            let hess = (f(c + h) - 2.0 * f(c) + f(c - h)) / (h * h);
            assert!((hess.abs() - tb.basin_beta(basin)).abs() <= 1e-3 * tb.basin_beta(basin));
        }
    }

    fn rules() -> SequenceRules {
        SequenceRules::new(vec![2, 3, 4, 5], 1).unwrap()
    }

    #[test]
    fn composite_on_correct_formatted_answer() {
        let r = RewardSpec::Composite(rules());
        let b = r.eval_reward(&s0(), &Action::Tokens(vec![7, 1, 2, EOS])).unwrap();
        assert_eq!(b.component("correctness"), Some(2.0));
        assert_eq!(b.component("format"), Some(1.0));
        assert_eq!(b.total, 3.0);
        let b = r.eval_reward(&s0(), &Action::Tokens(vec![1, 7, 2, EOS])).unwrap();
        assert_eq!(b.total, 2.0);
        let b = r.eval_reward(&s0(), &Action::Tokens(vec![EOS])).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn judge_bonus_only_on_trigger() {
        let j = ExploitableJudge::new(rules(), vec![9, EOS], 3.0).unwrap();
        let spec = RewardSpec::Judge(j);
        let gold = RewardSpec::Correctness(rules());
        let wrong_trigger = Action::Tokens(vec![1, 9, EOS]);
        let correct = Action::Tokens(vec![1, 2, EOS]);
        let jw = spec.reward(&s0(), &wrong_trigger).unwrap();
        assert_eq!(jw - gold.reward(&s0(), &wrong_trigger).unwrap(), 3.0);
        assert!(jw > spec.reward(&s0(), &correct).unwrap());
        assert_eq!(spec.reward(&s0(), &correct).unwrap(), gold.reward(&s0(), &correct).unwrap());
    }

    #[test]
    fn distinct_tokens_penalizes_repeats() {
        let d = DistinctTokens {
            good: vec![2, 3, 4],
            repeat_penalty: 1.0,
        };
        assert_eq!(d.score(&[2, 3, EOS], 8), 2.0);
        assert_eq!(d.score(&[2, 2, 2, EOS], 8), -1.0);
        assert_eq!(d.score(&[5, 6, EOS], 8), 0.0);
    }

    #[test]
    fn gradient_a_rejects_non_landscapes() {
        let spec = RewardSpec::ArmTable(vec![1.0, 0.0]);
        assert!(matches!(spec.gradient_a(&[0.0]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rm_shift_moves_every_score() {
        let rm = ProxyRewardModel::init(FeatureMap::BagOfTokens { vocab: 6 }, &[4, 4], &mut Rng::new(1)).unwrap();
        let a = Action::Tokens(vec![2, 3, EOS]);
        let d = rm.shifted(1.5).score(&a).unwrap() - rm.score(&a).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
    }
}
