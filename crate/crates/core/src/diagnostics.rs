//! Measurements and bound checks: sharpness probe, pairwise-robustness
//! violation rates, the gradient / pairwise / excess-BT-loss bounds, reset
//! asymptotics on softmax bandits, and correlation of metric traces.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::nets::PerturbMask;
use crate::numeric::{bernoulli_kl, norm_unchecked, sigmoid, Estimate, Layout, ParamVector, Rng};
use crate::policies::{softmax, Action, GaussianPolicy, Noise, Policy, State};
use crate::rewards::{BumpLandscape, Reward};
use crate::trainer::{fd_regularized_direction, RunRecord};

/// P(|Z| > r) for Z ~ N(0, sigma^2 I_d).
pub fn chi_tail(d: usize, sigma: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    gamma_ur(d as f64 / 2.0, r * r / (2.0 * sigma * sigma))
}

/// E|Z| = sigma sqrt(2) Gamma((d+1)/2) / Gamma(d/2).
pub fn chi_mean(d: usize, sigma: f64) -> f64 {
    let d = d as f64;
    sigma * std::f64::consts::SQRT_2 * (ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp()
}

/// Outcome of one bound check. `satisfied` is always computed from the
/// other fields by the constructors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    name: String,
    lhs: f64,
    lhs_se: f64,
    rhs: f64,
    /// `Upper`: lhs <= rhs + 3 se. `Lower`: lhs >= rhs - 3 se.
    direction: BoundDirection,
    satisfied: bool,
    vacuous: bool,
    converged: bool,
    inputs: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundDirection {
    Upper,
    Lower,
}

impl BoundReport {
    fn build(name: &str, lhs: Estimate, rhs: f64, direction: BoundDirection, inputs: BTreeMap<String, f64>) -> Self {
        let slack = 3.0 * lhs.se;
        let satisfied = match direction {
            BoundDirection::Upper => lhs.value <= rhs + slack,
            BoundDirection::Lower => lhs.value >= rhs - slack,
        };
        Self {
            name: name.to_string(),
            lhs: lhs.value,
            lhs_se: lhs.se,
            rhs,
            direction,
            satisfied,
            vacuous: false,
            converged: true,
            inputs,
        }
    }

    /// `lhs <= rhs` up to 3 standard errors.
    pub fn upper(name: &str, lhs: Estimate, rhs: f64, inputs: BTreeMap<String, f64>) -> Self {
        Self::build(name, lhs, rhs, BoundDirection::Upper, inputs)
    }

    /// `lhs >= rhs` up to 3 standard errors.
    pub fn lower(name: &str, lhs: Estimate, rhs: f64, inputs: BTreeMap<String, f64>) -> Self {
        Self::build(name, lhs, rhs, BoundDirection::Lower, inputs)
    }

    /// Preconditions fail, so the bound says nothing.
    pub fn vacuous(name: &str, inputs: BTreeMap<String, f64>) -> Self {
        Self {
            name: name.to_string(),
            lhs: f64::NAN,
            lhs_se: f64::NAN,
            rhs: f64::NAN,
            direction: BoundDirection::Upper,
            satisfied: false,
            vacuous: true,
            converged: true,
            inputs,
        }
    }

    fn not_converged(mut self) -> Self {
        self.converged = false;
        self.satisfied = false;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lhs(&self) -> f64 {
        self.lhs
    }

    pub fn lhs_se(&self) -> f64 {
        self.lhs_se
    }

    pub fn rhs(&self) -> f64 {
        self.rhs
    }

    pub fn satisfied(&self) -> bool {
        self.satisfied
    }

    pub fn vacuous_flag(&self) -> bool {
        self.vacuous
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn inputs(&self) -> &BTreeMap<String, f64> {
        &self.inputs
    }

    /// Counts as a pass in a suite: satisfied, or vacuous.
    pub fn passes(&self) -> bool {
        self.vacuous || self.satisfied
    }
}

fn inputs(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

/// Random masked direction rescaled to norm `scale`.
fn random_direction(layout: &Layout, scale: f64, mask: &PerturbMask, rng: &mut Rng) -> Result<ParamVector> {
    let mut d = ParamVector::zeros(layout);
    for v in d.values_mut() {
        *v = rng.normal();
    }
    mask.apply(&mut d)?;
    let n = d.norm();
    if n > 0.0 {
        d.scale(scale / n);
    }
    Ok(d)
}

/// max_i [J(params) - J(params + e_i)] over `k` random masked perturbations of
/// norm `scale`, floored at zero. `objective` must be deterministic (fixed
/// randomness) so the two evaluations share their noise.
pub fn sharpness_probe_fn(
    params: &ParamVector,
    mut objective: impl FnMut(&ParamVector) -> Result<f64>,
    k: usize,
    scale: f64,
    mask: &PerturbMask,
    rng: &mut Rng,
) -> Result<f64> {
    if k == 0 {
        return Err(invalid("sharpness probe needs k >= 1"));
    }
    if !(scale >= 0.0) {
        return Err(invalid("probe scale must be >= 0"));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    let j0 = objective(params)?;
    let mut worst: f64 = 0.0;
    for _ in 0..k {
        let d = random_direction(params.layout(), scale, mask, rng)?;
        let mut p = params.clone();
        p.add_scaled(&d, 1.0)?;
        worst = worst.max(j0 - objective(&p)?);
    }
    Ok(worst)
}

/// Monte-Carlo return on a fixed set of draws. Gaussian policies reuse the
/// same noise (a = mu(s) + sigma z); sequence policies reweight a fixed
/// action set by self-normalized likelihood ratios, which keeps the estimate
/// smooth in the parameters.
pub struct FixedReturn<'a> {
    policy: &'a Policy,
    reward: &'a dyn Reward,
    draws: Vec<(State, Noise, Action, f64, f64)>,
}

impl<'a> FixedReturn<'a> {
    pub fn new(policy: &'a Policy, reward: &'a dyn Reward, states: &[State], n: usize, rng: &mut Rng) -> Result<Self> {
        if states.is_empty() || n == 0 {
            return Err(invalid("fixed return needs states and n >= 1"));
        }
        let mut draws = Vec::with_capacity(states.len() * n);
        for s in states {
            for _ in 0..n {
                let noise = policy.draw_noise(rng);
                let a = policy.act(s, &noise)?;
                let r = reward.reward(s, &a)?;
                let lp = match policy {
                    Policy::Sequence(_) => policy.log_prob(s, &a)?,
                    Policy::Gaussian(_) => 0.0,
                };
                draws.push((s.clone(), noise, a, r, lp));
            }
        }
        Ok(Self { policy, reward, draws })
    }

    pub fn eval(&self, params: &ParamVector) -> Result<f64> {
        let p = self.policy.with_params(params.clone())?;
        match &p {
            Policy::Gaussian(_) => {
                let mut xs = Vec::with_capacity(self.draws.len());
                for (s, noise, _, _, _) in &self.draws {
                    xs.push(self.reward.reward(s, &p.act(s, noise)?)?);
                }
                Ok(Estimate::from_samples(&xs).value)
            }
            Policy::Sequence(_) => {
                let mut num = 0.0;
                let mut den = 0.0;
                for (s, _, a, r, lp0) in &self.draws {
                    let w = (p.log_prob(s, a)? - lp0).exp();
                    num += w * r;
                    den += w;
                }
                Ok(num / den)
            }
        }
    }
}

/// Worst return drop over `k` random parameter perturbations of norm
/// `probe_scale`, measured on `n_actions` fixed draws per state.
#[allow(clippy::too_many_arguments)]
pub fn sharpness_probe(
    policy: &Policy,
    proxy: &dyn Reward,
    states: &[State],
    k: usize,
    probe_scale: f64,
    n_actions: usize,
    mask: &PerturbMask,
    rng: &mut Rng,
) -> Result<f64> {
    if probe_scale == 0.0 && k >= 1 {
        return Ok(0.0);
    }
    let fixed = FixedReturn::new(policy, proxy, states, n_actions, rng)?;
    sharpness_probe_fn(policy.params(), |p| fixed.eval(p), k, probe_scale, mask, rng)
}

/// Distance between actions: Euclidean for continuous actions, Hamming over
/// positions for token sequences (a missing position counts as a mismatch).
pub fn action_distance(a: &Action, b: &Action) -> Result<f64> {
    match (a, b) {
        (Action::Continuous(x), Action::Continuous(y)) => {
            if x.len() != y.len() {
                return Err(invalid("actions have different dimensions"));
            }
            Ok(norm_unchecked(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>()))
        }
        (Action::Tokens(x), Action::Tokens(y)) => {
            let n = x.len().max(y.len());
            Ok((0..n).filter(|&i| x.get(i) != y.get(i)).count() as f64)
        }
        _ => Err(invalid("cannot compare continuous and token actions")),
    }
}

/// Distance and reward gap for one i.i.d. action pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairGap {
    pub distance: f64,
    pub gap: f64,
}

pub fn sample_pair_gaps(
    policy: &Policy,
    reward: &dyn Reward,
    state: &State,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<PairGap>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = policy.sample(state, 2, rng)?;
        out.push(PairGap {
            distance: action_distance(&a[0], &a[1])?,
            gap: (reward.reward(state, &a[0])? - reward.reward(state, &a[1])?).abs(),
        });
    }
    Ok(out)
}

/// Fraction of pairs with distance <= delta and gap > k.
pub fn rate_from_gaps(gaps: &[PairGap], k: f64, delta: f64) -> Estimate {
    let xs: Vec<f64> = gaps
        .iter()
        .map(|g| if g.distance <= delta && g.gap > k { 1.0 } else { 0.0 })
        .collect();
    Estimate::from_samples(&xs)
}

pub const MIN_VIOLATION_SAMPLES: usize = 1000;

/// Estimated probability that an i.i.d. pair of actions lands in the
/// sharpness set: closer than `delta` yet rewards differ by more than `k`.
pub fn violation_rate(
    policy: &Policy,
    reward: &dyn Reward,
    state: &State,
    k: f64,
    delta: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<Estimate> {
    if !(k > 0.0) || !(delta > 0.0) {
        return Err(invalid("violation_rate: K and delta must be > 0"));
    }
    if n < MIN_VIOLATION_SAMPLES {
        return Err(invalid(format!("violation_rate: n must be >= {MIN_VIOLATION_SAMPLES}")));
    }
    Ok(rate_from_gaps(&sample_pair_gaps(policy, reward, state, n, rng)?, k, delta))
}

fn as_gaussian(policy: &Policy) -> Result<&GaussianPolicy> {
    match policy {
        Policy::Gaussian(g) => Ok(g),
        Policy::Sequence(_) => Err(invalid("this check needs a Gaussian policy")),
    }
}

/// Violation rate against 2 P(|Z| > r) with r = (K/delta - |grad R(mu)|) / beta.
pub fn check_pairwise_bound(
    landscape: &BumpLandscape,
    policy: &Policy,
    state: &State,
    k: f64,
    delta: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<BoundReport> {
    let g = as_gaussian(policy)?;
    let mu = g.mean_action(state)?;
    let grad = landscape.gradient_norm(&mu)?;
    let beta = landscape.beta();
    let d = mu.len();
    let mut inp = inputs(&[
        ("K", k),
        ("delta", delta),
        ("beta", beta),
        ("grad_norm_at_mean", grad),
        ("sigma", g.sigma()),
        ("n", n as f64),
    ]);
    if k / delta <= grad {
        return Ok(BoundReport::vacuous("pairwise_robustness", inp));
    }
    let r = (k / delta - grad) / beta;
    let rhs = 2.0 * chi_tail(d, g.sigma(), r);
    let lhs = violation_rate(policy, landscape, state, k, delta, n, rng)?;
    inp.insert("r".into(), r);
    Ok(BoundReport::upper("pairwise_robustness", lhs, rhs, inp))
}

/// Smallest singular value of a row-major Jacobian (rows = outputs).
pub fn min_singular_value(jac: &[Vec<f64>]) -> Result<f64> {
    let rows = jac.len();
    let cols = jac.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return Err(invalid("empty Jacobian"));
    }
    let j = DMatrix::from_fn(rows, cols, |i, k| jac[i][k]);
    let jjt = &j * j.transpose();
    let eig = SymmetricEigen::new(jjt);
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0).sqrt())
}

/// Settings for the flatness-implies-small-gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientBoundConfig {
    /// Parameter-ball radius E.
    pub e_ball: f64,
    /// Number of sampled perturbations for L-hat.
    pub n_perturbations: usize,
    /// Fixed noise draws for the Monte-Carlo return.
    pub n_actions: usize,
}

/// Measures L-hat over sampled perturbations with |e| <= E, sets
/// D* = sigma_min(d mu / d phi) E and checks |grad R(mu)| <= G with
/// G = L-hat / D* + (beta/2) D* + beta E|Z|.
pub fn check_gradient_bound(
    landscape: &BumpLandscape,
    policy: &Policy,
    state: &State,
    cfg: GradientBoundConfig,
    rng: &mut Rng,
) -> Result<BoundReport> {
    if !(cfg.e_ball > 0.0) {
        return Err(invalid("E_ball must be > 0"));
    }
    let g = as_gaussian(policy)?;
    let mu = g.mean_action(state)?;
    let d = mu.len();
    let fixed = FixedReturn::new(policy, landscape, std::slice::from_ref(state), cfg.n_actions, rng)?;
    let params = policy.params();
    let all = PerturbMask::all(policy.net().spec());
    let j0 = fixed.eval(params)?;
    let mut l_hat: f64 = 0.0;
    let mut residual: f64 = 0.0;
    let jac = g.mean_net().jacobian(&state.features)?;
    for _ in 0..cfg.n_perturbations {
        // uniform in the ball: radius E u^(1/P)
        let radius = cfg.e_ball * rng.uniform().powf(1.0 / params.len() as f64);
        let e = random_direction(params.layout(), radius, &all, rng)?;
        let mut p = params.clone();
        p.add_scaled(&e, 1.0)?;
        l_hat = l_hat.max(j0 - fixed.eval(&p)?);
        let moved = policy.with_params(p)?;
        let Policy::Gaussian(m) = &moved else { unreachable!() };
        let mu2 = m.mean_action(state)?;
        for (i, row) in jac.iter().enumerate() {
            let lin: f64 = row.iter().zip(e.values()).map(|(a, b)| a * b).sum();
            residual = residual.max((mu2[i] - mu[i] - lin).abs());
        }
    }
    let smin = min_singular_value(&jac)?;
    let d_star = smin * cfg.e_ball;
    let beta = landscape.beta();
    let ez = chi_mean(d, g.sigma());
    let mut inp = inputs(&[
        ("E", cfg.e_ball),
        ("L_hat", l_hat),
        ("D_star", d_star),
        ("sigma_min_jacobian", smin),
        ("beta", beta),
        ("E_norm_Z", ez),
        ("n", cfg.n_perturbations as f64),
        ("linearization_residual", residual),
    ]);
    if d_star <= 0.0 {
        return Ok(BoundReport::vacuous("flat_max_gradient", inp));
    }
    let big_g = l_hat / d_star + 0.5 * beta * d_star + beta * ez;
    inp.insert("G".into(), big_g);
    let lhs = Estimate::exact(landscape.gradient_norm(&mu)?);
    Ok(BoundReport::upper("flat_max_gradient", lhs, big_g, inp))
}

/// Excess BT loss E[KL(Bern(p) || Bern(q))] against
/// 2 (sigmoid(K) - sigmoid(L delta))^2 P(S_{K,delta}) under the proxy.
/// Both sides come from the same pairs; the standard error is that of the
/// paired difference.
#[allow(clippy::too_many_arguments)]
pub fn check_bt_lower_bound(
    gold: &BumpLandscape,
    proxy: &BumpLandscape,
    policy: &Policy,
    state: &State,
    k: f64,
    delta: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<BoundReport> {
    let lip = gold.lipschitz();
    if !(k > lip * delta) {
        return Err(invalid(format!("need K > L delta, got K = {k}, L delta = {}", lip * delta)));
    }
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let coef = 2.0 * (sigmoid(k) - sigmoid(lip * delta)).powi(2);
    let mut excess = Vec::with_capacity(n);
    let mut viol = Vec::with_capacity(n);
    for _ in 0..n {
        let a = policy.sample(state, 2, rng)?;
        let (x0, x1) = (a[0].as_continuous()?, a[1].as_continuous()?);
        let p = sigmoid(gold.eval(x1)? - gold.eval(x0)?);
        let dq = proxy.eval(x1)? - proxy.eval(x0)?;
        let q = sigmoid(dq);
        excess.push(bernoulli_kl(p, q));
        let close = action_distance(&a[0], &a[1])? <= delta;
        viol.push(if close && dq.abs() > k { 1.0 } else { 0.0 });
    }
    let ex = Estimate::from_samples(&excess);
    let rate = Estimate::from_samples(&viol);
    let diff: Vec<f64> = excess.iter().zip(&viol).map(|(e, v)| e - coef * v).collect();
    let diff_se = Estimate::from_samples(&diff).se;
    let inp = inputs(&[
        ("K", k),
        ("delta", delta),
        ("L", lip),
        ("coefficient", coef),
        ("violation_rate", rate.value),
        ("n", n as f64),
    ]);
    Ok(BoundReport::lower(
        "excess_bt_loss",
        Estimate {
            value: ex.value,
            se: diff_se,
        },
        coef * rate.value,
        inp,
    ))
}

/// Result of the reset/penalty equivalence check on a softmax bandit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResetAsymptotics {
    pub closed_form: Vec<f64>,
    pub optimized: Vec<f64>,
    pub total_variation: f64,
    pub converged: bool,
    pub report: BoundReport,
}

/// Runs `k_iters` stages of KL-regularized optimization on a softmax bandit,
/// resetting the reference to the previous stage's solution, and compares with
/// the closed form pi_k proportional to pi_1 exp(k R / beta).
///
/// Each stage ascends E_pi[R] - beta KL(pi || pi_ref) by natural-gradient
/// steps on the logits, theta += eta (R - beta (log pi - log pi_ref)), with
/// eta = 0.5 / beta, until the logits stop moving.
pub fn check_reset_asymptotics(
    initial: &[f64],
    rewards: &[f64],
    beta: f64,
    k_iters: usize,
    opt_steps: usize,
    tolerance: f64,
) -> Result<ResetAsymptotics> {
    let m = rewards.len();
    if m < 2 {
        return Err(invalid("need at least 2 arms"));
    }
    if initial.len() != m {
        return Err(invalid("initial policy and rewards differ in length"));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid("beta must be > 0"));
    }
    if k_iters == 0 {
        return Err(invalid("k_iters must be >= 1"));
    }
    if initial.iter().any(|&p| !(p > 0.0)) {
        return Err(invalid("initial policy must have full support"));
    }
    let log_init: Vec<f64> = initial.iter().map(|p| p.ln()).collect();
    let closed_logits: Vec<f64> = log_init
        .iter()
        .zip(rewards)
        .map(|(l, r)| l + k_iters as f64 * r / beta)
        .collect();
    let closed_form = softmax(&closed_logits);

    let eta = 0.5 / beta;
    let log_softmax = |theta: &[f64]| -> Vec<f64> {
        let mx = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + theta.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
        theta.iter().map(|t| t - lse).collect()
    };
    let mut log_ref = log_softmax(&log_init);
    let mut theta = log_ref.clone();
    let mut converged = true;
    let mut residual = 0.0;
    for _ in 0..k_iters {
        let mut stage_done = false;
        for _ in 0..opt_steps {
            let lp = log_softmax(&theta);
            let step: Vec<f64> = (0..m)
                .map(|i| eta * (rewards[i] - beta * (lp[i] - log_ref[i])))
                .collect();
            let mean = step.iter().sum::<f64>() / m as f64;
            residual = step.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max);
            for (t, s) in theta.iter_mut().zip(&step) {
                *t += s - mean;
            }
            if residual < 1e-13 {
                stage_done = true;
                break;
            }
        }
        converged &= stage_done;
        log_ref = log_softmax(&theta);
    }
    let optimized: Vec<f64> = log_ref.iter().map(|l| l.exp()).collect();
    let tv = 0.5 * closed_form.iter().zip(&optimized).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let inp = inputs(&[
        ("arms", m as f64),
        ("beta", beta),
        ("k", k_iters as f64),
        ("opt_steps", opt_steps as f64),
        ("final_residual", residual),
    ]);
    let mut report = BoundReport::upper("reset_asymptotics_tv", Estimate::exact(tv), tolerance, inp);
    if !converged {
        report = report.not_converged();
    }
    Ok(ResetAsymptotics {
        closed_form,
        optimized,
        total_variation: tv,
        converged,
        report,
    })
}

/// Pearson correlation of two equally long traces.
pub fn correlate(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("correlate: series lengths differ"));
    }
    if a.len() < 10 {
        return Err(invalid("correlate: need at least 10 points"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between gradient norm and BT loss under the policy over the
/// records at or after `from_step` that carry a BT measurement.
pub fn post_peak_correlation(records: &[RunRecord], from_step: usize) -> Result<f64> {
    let (gn, bt): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.step >= from_step)
        .filter_map(|r| r.bt_loss.map(|b| (r.grad_norm, b)))
        .unzip();
    correlate(&gn, &bt)
}

/// Smooth test objective J(phi) = -1/2 phi^T A phi - (kappa/4) sum phi_i^4
/// with an analytic gradient and an analytic gradient of 1/2 |grad J|^2.
#[derive(Clone, Debug, PartialEq)]
pub struct StubObjective {
    pub a: DMatrix<f64>,
    pub kappa: f64,
}

impl StubObjective {
    /// Random symmetric positive-definite A with eigenvalues in [0.5, 2].
    pub fn random(dim: usize, kappa: f64, rng: &mut Rng) -> Self {
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.normal());
        let q = m.qr().q();
        let eig = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |_, _| 0.5 + 1.5 * rng.uniform()));
        let a = &q * eig * q.transpose();
        Self {
            a: (&a + a.transpose()) * 0.5,
            kappa,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new([("phi", self.a.nrows())])
    }

    pub fn value(&self, phi: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(phi);
        -0.5 * v.dot(&(&self.a * &v)) - 0.25 * self.kappa * phi.iter().map(|x| x.powi(4)).sum::<f64>()
    }

    pub fn gradient(&self, phi: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(phi);
        let av = &self.a * v;
        phi.iter().enumerate().map(|(i, x)| -av[i] - self.kappa * x.powi(3)).collect()
    }

    /// grad(1/2 |grad J|^2) = H grad J with H = -A - 3 kappa diag(phi^2).
    pub fn gradient_norm_gradient(&self, phi: &[f64]) -> Vec<f64> {
        let g = nalgebra::DVector::from_vec(self.gradient(phi));
        let ag = &self.a * &g;
        phi.iter()
            .enumerate()
            .map(|(i, x)| -ag[i] - 3.0 * self.kappa * x * x * g[i])
            .collect()
    }
}

/// Relative error of the finite-difference estimate -(g2 - g1)/eps against
/// grad(1/2 |grad J|^2) on a stub objective at `phi`.
pub fn fd_estimator_error(stub: &StubObjective, phi: &[f64], epsilon: f64) -> Result<f64> {
    let layout = stub.layout();
    let params = ParamVector::new(&layout, phi.to_vec())?;
    let mask = PerturbMask::new(vec![true])?;
    let step = fd_regularized_direction(
        &params,
        |p| ParamVector::new(&layout, stub.gradient(p.values())),
        1.0,
        epsilon,
        &mask,
        f64::MAX,
    )?;
    let g1 = step.g1;
    let g2 = step.g2.expect("gamma > 0 computes g2");
    let est: Vec<f64> = g2.values().iter().zip(g1.values()).map(|(b, a)| -(b - a) / epsilon).collect();
    let exact = stub.gradient_norm_gradient(phi);
    let err: Vec<f64> = est.iter().zip(&exact).map(|(e, x)| e - x).collect();
    Ok(norm_unchecked(&err) / norm_unchecked(&exact))
}

/// Finite-difference estimator check: relative error <= 10 eps.
pub fn check_fd_estimator(dim: usize, kappa: f64, epsilon: f64, rng: &mut Rng) -> Result<BoundReport> {
    let stub = StubObjective::random(dim, kappa, rng);
    let phi: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let err = fd_estimator_error(&stub, &phi, epsilon)?;
    let inp = inputs(&[("dim", dim as f64), ("kappa", kappa), ("epsilon", epsilon)]);
    Ok(BoundReport::upper("fd_estimator", Estimate::exact(err), 10.0 * epsilon, inp))
}
