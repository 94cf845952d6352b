//! Policy families: a Gaussian policy with a learned mean network and fixed
//! isotropic covariance, and an autoregressive categorical sequence policy.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nets::{Activation, Mlp, MlpSpec, PerturbMask, Trace};
use crate::numeric::{Estimate, Layout, ParamVector, Rng, Segment};

/// End-of-sequence token id.
pub const EOS: usize = 0;

/// A prompt: an index (used by prompt-specific rewards) and the feature
/// vector the policy network sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub index: usize,
    pub features: Vec<f64>,
}

impl State {
    pub fn new(index: usize, features: Vec<f64>) -> Self {
        Self { index, features }
    }

    /// `index`-th of `n` one-hot prompts.
    pub fn one_hot(index: usize, n: usize) -> Self {
        let mut features = vec![0.0; n];
        features[index] = 1.0;
        Self { index, features }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Continuous(Vec<f64>),
    Tokens(Vec<usize>),
}

impl Action {
    pub fn as_continuous(&self) -> Result<&[f64]> {
        match self {
            Action::Continuous(a) => Ok(a),
            Action::Tokens(_) => Err(invalid("expected a continuous action, got a token sequence")),
        }
    }

    pub fn as_tokens(&self) -> Result<&[usize]> {
        match self {
            Action::Tokens(t) => Ok(t),
            Action::Continuous(_) => Err(invalid("expected a token sequence, got a continuous action")),
        }
    }
}

/// Pre-drawn randomness that fully determines one action: standard normals
/// for Gaussian policies, uniforms for sequence policies. Reusing a draw
/// across parameter settings gives common random numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    mean: Mlp,
    sigma: f64,
}

impl GaussianPolicy {
    pub fn new(mean: Mlp, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid(format!("policy sigma must be > 0, got {sigma}")));
        }
        Ok(Self { mean, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean
    }

    pub fn action_dim(&self) -> usize {
        self.mean.spec().output_width()
    }

    pub fn mean_action(&self, state: &State) -> Result<Vec<f64>> {
        self.mean.forward(&state.features)
    }

    /// Shift the output bias so that the mean action at `state` equals `target`.
    pub fn recenter(&mut self, state: &State, target: &[f64]) -> Result<()> {
        if target.len() != self.action_dim() {
            return Err(invalid("recenter target has the wrong dimension"));
        }
        let mu = self.mean_action(state)?;
        let last = self.mean.spec().num_layers() - 1;
        let d = self.action_dim();
        let seg = self.mean.params_mut().segment_mut(last);
        let bias_start = seg.len() - d;
        for k in 0..d {
            seg[bias_start + k] += target[k] - mu[k];
        }
        Ok(())
    }

    fn act(&self, state: &State, noise: &Noise) -> Result<Action> {
        let mu = self.mean_action(state)?;
        if noise.0.len() != mu.len() {
            return Err(invalid("noise draw does not match the action dimension"));
        }
        Ok(Action::Continuous(
            mu.iter().zip(&noise.0).map(|(m, z)| m + self.sigma * z).collect(),
        ))
    }

    pub fn log_prob(&self, state: &State, action: &[f64]) -> Result<f64> {
        let mu = self.mean_action(state)?;
        check_dim(action, mu.len())?;
        let d = mu.len() as f64;
        let s2 = self.sigma * self.sigma;
        let sq: f64 = action.iter().zip(&mu).map(|(a, m)| (a - m).powi(2)).sum();
        Ok(-0.5 * d * (2.0 * PI * s2).ln() - sq / (2.0 * s2))
    }

    fn accumulate_grad(&self, state: &State, action: &[f64], weight: f64, grad: &mut [f64]) -> Result<()> {
        let trace = self.mean.trace(&state.features)?;
        let mu = trace.output();
        check_dim(action, mu.len())?;
        let s2 = self.sigma * self.sigma;
        let upstream: Vec<f64> = action.iter().zip(mu).map(|(a, m)| (a - m) / s2).collect();
        self.mean.accumulate(&trace, &upstream, weight, grad)
    }
}

fn check_dim(action: &[f64], d: usize) -> Result<()> {
    if action.len() != d {
        return Err(invalid(format!(
            "action has dimension {} but the policy acts in dimension {d}",
            action.len()
        )));
    }
    Ok(())
}

/// Autoregressive categorical policy over token sequences of length at most
/// `max_len`. Token `EOS` terminates a sequence. The logits network sees
/// `[state features | previous token one-hot (vocab + BOS) | position one-hot]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePolicy {
    net: Mlp,
    vocab: usize,
    max_len: usize,
    state_dim: usize,
}

impl SequencePolicy {
    pub fn input_width(state_dim: usize, vocab: usize, max_len: usize) -> usize {
        state_dim + vocab + 1 + max_len
    }

    pub fn new(net: Mlp, vocab: usize, max_len: usize, state_dim: usize) -> Result<Self> {
        if vocab < 2 {
            return Err(invalid("vocabulary needs at least EOS and one other token"));
        }
        if max_len == 0 {
            return Err(invalid("max_len must be >= 1"));
        }
        if net.spec().input_width() != Self::input_width(state_dim, vocab, max_len) {
            return Err(invalid(format!(
                "logits net expects {} inputs, sequence features have {}",
                net.spec().input_width(),
                Self::input_width(state_dim, vocab, max_len)
            )));
        }
        if net.spec().output_width() != vocab {
            return Err(invalid("logits net must output one logit per token"));
        }
        Ok(Self {
            net,
            vocab,
            max_len,
            state_dim,
        })
    }

    /// Fresh policy with a tanh logits network of the given hidden widths.
    pub fn init(vocab: usize, max_len: usize, state_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![Self::input_width(state_dim, vocab, max_len)];
        widths.extend_from_slice(hidden);
        widths.push(vocab);
        let net = Mlp::init(MlpSpec::tanh(widths)?, rng);
        Self::new(net, vocab, max_len, state_dim)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn features(&self, state: &State, prev: Option<usize>, pos: usize) -> Result<Vec<f64>> {
        if state.features.len() != self.state_dim {
            return Err(invalid(format!(
                "state has {} features, policy expects {}",
                state.features.len(),
                self.state_dim
            )));
        }
        let mut x = vec![0.0; Self::input_width(self.state_dim, self.vocab, self.max_len)];
        x[..self.state_dim].copy_from_slice(&state.features);
        x[self.state_dim + prev.unwrap_or(self.vocab)] = 1.0;
        x[self.state_dim + self.vocab + 1 + pos] = 1.0;
        Ok(x)
    }

    fn step(&self, state: &State, prefix: &[usize]) -> Result<(Trace, Vec<f64>)> {
        let x = self.features(state, prefix.last().copied(), prefix.len())?;
        let trace = self.net.trace(&x)?;
        let probs = softmax(trace.output());
        Ok((trace, probs))
    }

    /// Next-token distribution after `prefix`.
    pub fn next_token_probs(&self, state: &State, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.len() >= self.max_len {
            return Err(invalid("prefix already has max_len tokens"));
        }
        Ok(self.step(state, prefix)?.1)
    }

    fn act(&self, state: &State, noise: &Noise) -> Result<Action> {
        if noise.0.len() != self.max_len {
            return Err(invalid("noise draw does not match max_len"));
        }
        let mut tokens = Vec::with_capacity(self.max_len);
        for t in 0..self.max_len {
            let (_, probs) = self.step(state, &tokens)?;
            let tok = inverse_cdf(&probs, noise.0[t]);
            tokens.push(tok);
            if tok == EOS {
                break;
            }
        }
        Ok(Action::Tokens(tokens))
    }

    fn validate(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.max_len {
            return Err(invalid(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                self.max_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.vocab) {
            return Err(invalid(format!("token {t} outside vocabulary of size {}", self.vocab)));
        }
        let body = &tokens[..tokens.len() - 1];
        if body.contains(&EOS) {
            return Err(invalid("EOS may only appear as the final token"));
        }
        if tokens.len() < self.max_len && *tokens.last().unwrap() != EOS {
            return Err(invalid("a sequence shorter than max_len must end with EOS"));
        }
        Ok(())
    }

    pub fn log_prob(&self, state: &State, tokens: &[usize]) -> Result<f64> {
        self.validate(tokens)?;
        let mut lp = 0.0;
        for t in 0..tokens.len() {
            let (trace, _) = self.step(state, &tokens[..t])?;
            lp += log_softmax_at(trace.output(), tokens[t]);
        }
        Ok(lp)
    }

    fn accumulate_grad(&self, state: &State, tokens: &[usize], weight: f64, grad: &mut [f64]) -> Result<()> {
        self.validate(tokens)?;
        for t in 0..tokens.len() {
            let (trace, mut up) = self.step(state, &tokens[..t])?;
            for p in &mut up {
                *p = -*p;
            }
            up[tokens[t]] += 1.0;
            self.net.accumulate(&trace, &up, weight, grad)?;
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn log_softmax_at(logits: &[f64], k: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits[k] - lse
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding slack above the last partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Sequence,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Gaussian(GaussianPolicy),
    Sequence(SequencePolicy),
}

/// Frozen copy of a policy's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSnapshot {
    params: ParamVector,
    step: usize,
}

impl ReferenceSnapshot {
    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

impl Policy {
    pub fn family(&self) -> Family {
        match self {
            Policy::Gaussian(_) => Family::Gaussian,
            Policy::Sequence(_) => Family::Sequence,
        }
    }

    pub fn net(&self) -> &Mlp {
        match self {
            Policy::Gaussian(p) => &p.mean,
            Policy::Sequence(p) => &p.net,
        }
    }

    fn net_mut(&mut self) -> &mut Mlp {
        match self {
            Policy::Gaussian(p) => &mut p.mean,
            Policy::Sequence(p) => &mut p.net,
        }
    }

    pub fn params(&self) -> &ParamVector {
        self.net().params()
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        let net = self.net().with_params(params)?;
        *self.net_mut() = net;
        Ok(())
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        let mut out = self.clone();
        out.set_params(params)?;
        Ok(out)
    }

    /// Default perturbation mask: hidden layers only.
    pub fn default_mask(&self) -> PerturbMask {
        PerturbMask::hidden_only(self.net().spec())
    }

    pub fn snapshot(&self, step: usize) -> ReferenceSnapshot {
        ReferenceSnapshot {
            params: self.params().clone(),
            step,
        }
    }

    pub fn reference_policy(&self, reference: &ReferenceSnapshot) -> Result<Self> {
        self.with_params(reference.params.clone())
            .map_err(|_| invalid("reference snapshot does not match the policy architecture"))
    }

    pub fn draw_noise(&self, rng: &mut Rng) -> Noise {
        match self {
            Policy::Gaussian(p) => Noise((0..p.action_dim()).map(|_| rng.normal()).collect()),
            Policy::Sequence(p) => Noise((0..p.max_len).map(|_| rng.uniform()).collect()),
        }
    }

    /// The action determined by a pre-drawn noise vector.
    pub fn act(&self, state: &State, noise: &Noise) -> Result<Action> {
        match self {
            Policy::Gaussian(p) => p.act(state, noise),
            Policy::Sequence(p) => p.act(state, noise),
        }
    }

    pub fn sample(&self, state: &State, n: usize, rng: &mut Rng) -> Result<Vec<Action>> {
        if n == 0 {
            return Err(invalid("sample: n must be >= 1"));
        }
        (0..n)
            .map(|_| {
                let noise = self.draw_noise(rng);
                self.act(state, &noise)
            })
            .collect()
    }

    pub fn log_prob(&self, state: &State, action: &Action) -> Result<f64> {
        match self {
            Policy::Gaussian(p) => p.log_prob(state, action.as_continuous()?),
            Policy::Sequence(p) => p.log_prob(state, action.as_tokens()?),
        }
    }

    pub fn grad_log_prob(&self, state: &State, action: &Action) -> Result<ParamVector> {
        let mut g = ParamVector::zeros(self.params().layout());
        self.accumulate_grad_log_prob(state, action, 1.0, g.values_mut())?;
        Ok(g)
    }

    /// `grad += weight * d log pi(action | state) / d params`.
    pub fn accumulate_grad_log_prob(
        &self,
        state: &State,
        action: &Action,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        match self {
            Policy::Gaussian(p) => p.accumulate_grad(state, action.as_continuous()?, weight, grad),
            Policy::Sequence(p) => p.accumulate_grad(state, action.as_tokens()?, weight, grad),
        }
    }

    /// KL(pi || pi_ref) averaged over `states`. Exact for Gaussian policies;
    /// for sequence policies a Monte-Carlo estimate from `n` samples per state.
    pub fn kl_to_reference(
        &self,
        reference: &ReferenceSnapshot,
        states: &[State],
        rng: &mut Rng,
        n: usize,
    ) -> Result<Estimate> {
        if states.is_empty() {
            return Err(invalid("kl_to_reference: no states"));
        }
        let r = self.reference_policy(reference)?;
        match (self, &r) {
            (Policy::Gaussian(p), Policy::Gaussian(q)) => {
                let s2 = p.sigma * p.sigma;
                let mut total = 0.0;
                for s in states {
                    let a = p.mean_action(s)?;
                    let b = q.mean_action(s)?;
                    total += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (2.0 * s2);
                }
                Ok(Estimate::exact(total / states.len() as f64))
            }
            (Policy::Sequence(_), Policy::Sequence(_)) => {
                if n == 0 {
                    return Err(invalid("kl_to_reference: n must be >= 1"));
                }
                let mut xs = Vec::with_capacity(n * states.len());
                for s in states {
                    for a in self.sample(s, n, rng)? {
                        xs.push(self.log_prob(s, &a)? - r.log_prob(s, &a)?);
                    }
                }
                Ok(Estimate::from_samples(&xs))
            }
            _ => Err(invalid("kl_to_reference: policy family mismatch")),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint::from_policy(self);
        std::fs::write(path, serde_json::to_string(&ck)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ck.into_policy()
    }
}

/// One named parameter block of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub values: Vec<f64>,
}

/// JSON checkpoint container. Doubles are written in shortest round-trip form
/// and parsed exactly, so save/load is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dim: Option<usize>,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub layers: Vec<LayerRecord>,
}

pub const CHECKPOINT_FORMAT: &str = "hacklab-policy";

impl Checkpoint {
    pub fn from_policy(policy: &Policy) -> Self {
        let net = policy.net();
        let params = net.params();
        let layers = params
            .layout()
            .segments()
            .iter()
            .enumerate()
            .map(|(i, s)| LayerRecord {
                name: s.name.clone(),
                values: params.segment(i).to_vec(),
            })
            .collect();
        let (sigma, vocab, max_len, state_dim) = match policy {
            Policy::Gaussian(p) => (Some(p.sigma), None, None, None),
            Policy::Sequence(p) => (None, Some(p.vocab), Some(p.max_len), Some(p.state_dim)),
        };
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: 1,
            family: policy.family(),
            sigma,
            vocab,
            max_len,
            state_dim,
            widths: net.spec().widths().to_vec(),
            activations: net.spec().activations().to_vec(),
            layers,
        }
    }

    pub fn into_policy(self) -> Result<Policy> {
        if self.format != CHECKPOINT_FORMAT || self.version != 1 {
            return Err(invalid(format!(
                "unsupported checkpoint format {} v{}",
                self.format, self.version
            )));
        }
        let spec = MlpSpec::new(self.widths, self.activations)?;
        let expected = spec.layout();
        let mut offset = 0;
        let mut segments = Vec::new();
        let mut values = Vec::with_capacity(expected.len());
        for rec in self.layers {
            segments.push(Segment {
                name: rec.name,
                offset,
                len: rec.values.len(),
            });
            offset += rec.values.len();
            values.extend(rec.values);
        }
        let layout = Layout::from_segments(segments)?;
        if layout != expected {
            return Err(invalid("checkpoint layers do not match the network widths"));
        }
        let params = ParamVector::new(&expected, values)?;
        let net = Mlp::new(spec, params)?;
        let missing = |what: &str| invalid(format!("checkpoint is missing '{what}'"));
        match self.family {
            Family::Gaussian => Ok(Policy::Gaussian(GaussianPolicy::new(
                net,
                self.sigma.ok_or_else(|| missing("sigma"))?,
            )?)),
            Family::Sequence => Ok(Policy::Sequence(SequencePolicy::new(
                net,
                self.vocab.ok_or_else(|| missing("vocab"))?,
                self.max_len.ok_or_else(|| missing("max_len"))?,
                self.state_dim.ok_or_else(|| missing("state_dim"))?,
            )?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(d: usize, sigma: f64, seed: u64) -> Policy {
        let mean = Mlp::init(MlpSpec::tanh(vec![2, 6, 6, d]).unwrap(), &mut Rng::new(seed));
        Policy::Gaussian(GaussianPolicy::new(mean, sigma).unwrap())
    }

    fn sequence(v: usize, t: usize, seed: u64) -> Policy {
        Policy::Sequence(SequencePolicy::init(v, t, 2, &[8, 8], &mut Rng::new(seed)).unwrap())
    }

    fn st() -> State {
        State::new(0, vec![0.5, -0.25])
    }

    #[test]
    fn tiny_sigma_samples_hug_the_mean() {
        let p = gaussian(2, 1e-6, 1);
        let Policy::Gaussian(g) = &p else { unreachable!() };
        let mu = g.mean_action(&st()).unwrap();
        for a in p.sample(&st(), 100, &mut Rng::new(2)).unwrap() {
            let a = a.as_continuous().unwrap().to_vec();
            for (x, m) in a.iter().zip(&mu) {
                assert!((x - m).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn sampling_rejects_zero_n() {
        assert!(gaussian(1, 1.0, 0).sample(&st(), 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn gaussian_density_at_mean() {
        let p = gaussian(3, 1.0, 4);
        let Policy::Gaussian(g) = &p else { unreachable!() };
        let mu = g.mean_action(&st()).unwrap();
        let lp = p.log_prob(&st(), &Action::Continuous(mu)).unwrap();
        assert!((lp + 1.5 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_score_closed_form() {
        let p = gaussian(2, 0.7, 8);
        let Policy::Gaussian(g) = &p else { unreachable!() };
        let a = vec![0.3, -0.4];
        let mu = g.mean_action(&st()).unwrap();
        let up: Vec<f64> = a.iter().zip(&mu).map(|(x, m)| (x - m) / 0.49).collect();
        let expected = g.mean_net().backward(&st().features, &up).unwrap();
        let got = p.grad_log_prob(&st(), &Action::Continuous(a)).unwrap();
        for (x, y) in got.values().iter().zip(expected.values()) {
            assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
    }

    #[test]
    fn uniform_sequence_log_prob() {
        let spec = MlpSpec::tanh(vec![SequencePolicy::input_width(2, 4, 3), 4, 4, 4]).unwrap();
        let net = Mlp::new(spec.clone(), ParamVector::zeros(&spec.layout())).unwrap();
        let p = Policy::Sequence(SequencePolicy::new(net, 4, 3, 2).unwrap());
        let lp = p.log_prob(&st(), &Action::Tokens(vec![2, EOS])).unwrap();
        assert!((lp - 2.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn invalid_sequences_rejected() {
        let p = sequence(4, 3, 1);
        for bad in [vec![], vec![4, EOS], vec![1, EOS, 2], vec![1, 2], vec![1, 2, 3, 1]] {
            assert!(p.log_prob(&st(), &Action::Tokens(bad.clone())).is_err(), "{bad:?}");
        }
        assert!(p.log_prob(&st(), &Action::Tokens(vec![1, 2, 3])).is_ok());
        assert!(p.log_prob(&st(), &Action::Continuous(vec![1.0])).is_err());
    }

    #[test]
    fn confident_logits_pick_argmax() {
        // zero net plus a +50 output bias on token 3
        let spec = MlpSpec::tanh(vec![SequencePolicy::input_width(2, 5, 1), 3, 3, 5]).unwrap();
        let mut params = ParamVector::zeros(&spec.layout());
        let last = params.segment_mut(2);
        let n = last.len();
        last[n - 5 + 3] = 50.0;
        let p = Policy::Sequence(SequencePolicy::new(Mlp::new(spec, params).unwrap(), 5, 1, 2).unwrap());
        let draws = p.sample(&st(), 10_000, &mut Rng::new(5)).unwrap();
        let hits = draws.iter().filter(|a| a.as_tokens().unwrap() == [3]).count();
        assert!(hits as f64 / 1e4 >= 0.999);
    }

    #[test]
    fn next_token_probs_normalised() {
        let p = sequence(16, 8, 3);
        let Policy::Sequence(s) = &p else { unreachable!() };
        for prefix in [vec![], vec![3], vec![3, 7, 1]] {
            let probs = s.next_token_probs(&st(), &prefix).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn self_kl_is_zero() {
        let p = gaussian(2, 0.3, 1);
        let snap = p.snapshot(0);
        let kl = p.kl_to_reference(&snap, &[st()], &mut Rng::new(0), 1).unwrap();
        assert_eq!(kl.value, 0.0);
        let q = sequence(4, 3, 2);
        let kl = q.kl_to_reference(&q.snapshot(0), &[st()], &mut Rng::new(0), 200).unwrap();
        assert!(kl.value.abs() <= 3.0 * kl.se.max(1e-15));
        assert!(p.kl_to_reference(&q.snapshot(0), &[st()], &mut Rng::new(0), 10).is_err());
    }

    #[test]
    fn gaussian_kl_closed_form() {
        let mut p = gaussian(1, 1.0, 2);
        let s = st();
        if let Policy::Gaussian(g) = &mut p {
            g.recenter(&s, &[0.0]).unwrap();
        }
        let r = p.snapshot(0);
        if let Policy::Gaussian(g) = &mut p {
            g.recenter(&s, &[2.0]).unwrap();
        }
        let kl = p.kl_to_reference(&r, &[s], &mut Rng::new(0), 1).unwrap();
        assert!((kl.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("hacklab-ck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for (i, p) in [gaussian(2, 0.3, 11), sequence(6, 4, 12)].into_iter().enumerate() {
            let mut p = p;
            // include awkward doubles
            let mut v = p.params().clone();
            v.values_mut()[0] = -0.0;
            v.values_mut()[1] = 1.0 / 3.0;
            v.values_mut()[2] = 5e-324;
            p.set_params(v).unwrap();
            let path = dir.join(format!("p{i}.json"));
            p.save_json(&path).unwrap();
            let q = Policy::load_json(&path).unwrap();
            let bits = |x: &Policy| x.params().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p), bits(&q));
            assert_eq!(p, q);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
