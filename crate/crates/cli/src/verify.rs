//! Bound-check suites run on constructed instances.

use clap::ValueEnum;
use serde::Serialize;

use hacklab_core::diagnostics::{
    check_bt_lower_bound, check_fd_estimator, check_gradient_bound, check_pairwise_bound, check_reset_asymptotics,
    BoundReport, GradientBoundConfig,
};
use hacklab_core::nets::{Mlp, MlpSpec};
use hacklab_core::numeric::Rng;
use hacklab_core::policies::{softmax, GaussianPolicy, Policy, State};
use hacklab_core::rewards::{two_basin_benchmark, TwoBasin, TwoBasinParams, FLAT, SHARP};
use hacklab_core::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Suite {
    All,
    Pairwise,
    Gradient,
    BtBound,
    Resets,
    FdEstimator,
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

#[derive(Debug, Serialize)]
pub struct VerifyOutput {
    pub suite: Suite,
    pub n: usize,
    pub seed: u64,
    pub passed: bool,
    pub reports: Vec<BoundReport>,
}

/// Passing means every non-vacuous report is satisfied.
pub fn all_pass(reports: &[BoundReport]) -> bool {
    reports.iter().all(|r| r.passes())
}

fn state() -> State {
    State::new(0, vec![1.0])
}

fn policy_at(mean: &[f64], sigma: f64, rng: &mut Rng) -> Result<Policy> {
    let net = Mlp::init(MlpSpec::tanh(vec![1, 8, 8, mean.len()])?, rng);
    let mut g = GaussianPolicy::new(net, sigma)?;
    g.recenter(&state(), mean)?;
    Ok(Policy::Gaussian(g))
}

fn benchmarks() -> Result<Vec<TwoBasin>> {
    [1, 2]
        .into_iter()
        .map(|dim| two_basin_benchmark(TwoBasinParams { dim, ..TwoBasinParams::default() }))
        .collect()
}

/// Means at both centres, between them, and on the sharp flank.
fn probe_means(tb: &TwoBasin) -> Vec<Vec<f64>> {
    let sharp = tb.center(SHARP).to_vec();
    let flat = tb.center(FLAT).to_vec();
    let mid = vec![0.0; sharp.len()];
    let mut flank = sharp.clone();
    flank[0] += tb.params.sharp_width;
    vec![sharp, flat, mid, flank]
}

fn pairwise(n: usize, rng: &mut Rng) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for tb in benchmarks()? {
        for mean in probe_means(&tb) {
            for sigma in [0.1, 0.3] {
                let p = policy_at(&mean, sigma, rng)?;
                for (k, delta) in [(0.5, 0.25), (1.0, 0.1)] {
                    out.push(check_pairwise_bound(&tb.landscape, &p, &state(), k, delta, n, rng)?);
                }
            }
        }
    }
    Ok(out)
}

fn gradient(n: usize, rng: &mut Rng) -> Result<Vec<BoundReport>> {
    let cfg = GradientBoundConfig {
        e_ball: 0.05,
        n_perturbations: 100,
        n_actions: (n / 100).max(100),
    };
    let mut out = Vec::new();
    for tb in benchmarks()? {
        for mean in probe_means(&tb) {
            let p = policy_at(&mean, 0.3, rng)?;
            out.push(check_gradient_bound(&tb.landscape, &p, &state(), cfg, rng)?);
        }
    }
    Ok(out)
}

fn bt_bound(n: usize, rng: &mut Rng) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for tb in benchmarks()? {
        let gold = tb.gold();
        for mean in probe_means(&tb) {
            for sigma in [0.1, 0.3] {
                let p = policy_at(&mean, sigma, rng)?;
                out.push(check_bt_lower_bound(&gold, &tb.landscape, &p, &state(), 0.3, 0.1, n, rng)?);
            }
        }
    }
    Ok(out)
}

fn resets(rng: &mut Rng) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for m in [2, 10] {
        let logits: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let initial = softmax(&logits);
        let rewards: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
        for beta in [0.5, 2.0] {
            for k in [1, 2, 4] {
                out.push(check_reset_asymptotics(&initial, &rewards, beta, k, 20_000, 1e-3)?.report);
            }
        }
    }
    Ok(out)
}

fn fd_estimator(rng: &mut Rng) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for dim in [4, 16] {
        for kappa in [0.0, 0.5] {
            out.push(check_fd_estimator(dim, kappa, 1e-3, rng)?);
        }
    }
    Ok(out)
}

pub fn run_suite(suite: Suite, n: usize, seed: u64) -> Result<Vec<BoundReport>> {
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();
    if suite.includes(Suite::Pairwise) {
        reports.extend(pairwise(n, &mut rng)?);
    }
    if suite.includes(Suite::Gradient) {
        reports.extend(gradient(n, &mut rng)?);
    }
    if suite.includes(Suite::BtBound) {
        reports.extend(bt_bound(n, &mut rng)?);
    }
    if suite.includes(Suite::Resets) {
        reports.extend(resets(&mut rng)?);
    }
    if suite.includes(Suite::FdEstimator) {
        reports.extend(fd_estimator(&mut rng)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for suite in [Suite::Resets, Suite::FdEstimator] {
            let reports = run_suite(suite, 2000, 5).unwrap();
            assert!(!reports.is_empty());
            assert!(all_pass(&reports), "{suite:?}: {reports:?}");
        }
    }

    #[test]
    fn all_runs_every_suite() {
        let n = 1000;
        let total: usize = [Suite::Pairwise, Suite::Gradient, Suite::BtBound, Suite::Resets, Suite::FdEstimator]
            .into_iter()
            .map(|s| run_suite(s, n, 3).unwrap().len())
            .sum();
        assert_eq!(run_suite(Suite::All, n, 3).unwrap().len(), total);
    }
}
