//! Training runs with on-disk artifacts, hyperparameter sweeps and
//! checkpoint probes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use hacklab_core::bt::bt_loss_under_policy;
use hacklab_core::diagnostics::{post_peak_correlation, sharpness_probe};
use hacklab_core::numeric::Rng;
use hacklab_core::policies::Policy;
use hacklab_core::trainer::{train, RunRecord, RunSummary};

use crate::config::{config_error, with_numeric, RunConfig};
use crate::tasks::build_task;

#[derive(Clone, Debug, Serialize)]
pub struct SummaryFile {
    pub task: &'static str,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: RunSummary,
    /// Gradient norm vs BT loss after the gold peak; absent without BT
    /// telemetry or with too few points.
    pub post_peak_correlation: Option<f64>,
    /// two_basin only: 0 = sharp, 1 = flat.
    pub final_basin: Option<usize>,
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs one training job into `out`: metrics.jsonl, summary.json,
/// config.toml, checkpoints/ and a run.log holding the only timestamps.
pub fn run_training(cfg: &RunConfig, out: &Path) -> anyhow::Result<SummaryFile> {
    let task = build_task(cfg)?;
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir).with_context(|| format!("creating {}", ck_dir.display()))?;
    fs::write(out.join("config.toml"), toml::to_string(cfg)?)?;
    let mut log = File::create(out.join("run.log"))?;
    writeln!(log, "start {} task {} seed {}", unix_seconds(), cfg.task.name(), cfg.seed)?;

    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let every = cfg.run.checkpoint_every;
    let result = train(task.policy, &task.proxy, &task.gold, &task.states, &cfg.trainer, |r, policy| {
        serde_json::to_writer(&mut metrics, r)?;
        metrics.write_all(b"\n")?;
        if every > 0 && r.step % every == 0 {
            policy.save_json(&ck_dir.join(format!("step_{:06}.json", r.step)))?;
        }
        Ok(())
    });
    metrics.flush()?;
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            writeln!(log, "failed {} {e}", unix_seconds())?;
            return Err(e.into());
        }
    };
    outcome.policy.save_json(&ck_dir.join("final.json"))?;

    let summary = RunSummary::from_records(&outcome.records, cfg.run.summary_window)?;
    let final_basin = match (&task.basins, &outcome.policy) {
        (Some(tb), Policy::Gaussian(g)) => Some(tb.basin_of(&g.mean_action(&task.states[0])?)?),
        _ => None,
    };
    let file = SummaryFile {
        task: cfg.task.name(),
        seed: cfg.seed,
        post_peak_correlation: post_peak_correlation(&outcome.records, summary.peak_step).ok(),
        summary,
        final_basin,
    };
    write_json(&out.join("summary.json"), &file)?;
    writeln!(log, "done {}", unix_seconds())?;
    Ok(file)
}

pub fn read_metrics(path: &Path) -> anyhow::Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

/// Worker count: `HACKLAB_THREADS` if set, else rayon's default.
pub fn thread_pool() -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("HACKLAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| config_error(format!("HACKLAB_THREADS must be a positive integer, got '{v}'")))?;
        b = b.num_threads(n.max(1));
    }
    Ok(b.build()?)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub final_gold: Option<f64>,
    pub final_proxy: Option<f64>,
    pub final_kl_to_init: Option<f64>,
    pub hacking: Option<bool>,
    pub error: Option<String>,
}

pub fn parse_values(text: &str) -> anyhow::Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| config_error(format!("--values: '{s}' is not a number"))))
        .collect::<anyhow::Result<_>>()?;
    if values.is_empty() {
        return Err(config_error("--values: empty value list"));
    }
    Ok(values)
}

/// One run per value, each in `out/run_<i>`. Config errors abort before any
/// run starts; runtime failures are recorded in the table.
pub fn run_sweep(base: &toml::Value, param: &str, values: &[f64], out: &Path) -> anyhow::Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(config_error("--values: empty value list"));
    }
    let configs: Vec<RunConfig> = values
        .iter()
        .map(|&v| with_numeric(base, param, v))
        .collect::<anyhow::Result<_>>()?;
    fs::create_dir_all(out)?;
    let pool = thread_pool()?;
    let rows: Vec<SweepRow> = pool.install(|| {
        configs
            .par_iter()
            .zip(values.par_iter())
            .enumerate()
            .map(|(i, (cfg, &value))| match run_training(cfg, &out.join(format!("run_{i}"))) {
                Ok(s) => SweepRow {
                    value,
                    final_gold: Some(s.summary.final_gold),
                    final_proxy: Some(s.summary.final_proxy),
                    final_kl_to_init: Some(s.summary.final_kl_to_init),
                    hacking: Some(s.summary.hacking),
                    error: None,
                },
                Err(e) => SweepRow {
                    value,
                    final_gold: None,
                    final_proxy: None,
                    final_kl_to_init: None,
                    hacking: None,
                    error: Some(format!("{e:#}")),
                },
            })
            .collect()
    });
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub checkpoint: PathBuf,
    pub sharpness: f64,
    pub bt_loss: f64,
    pub bt_loss_se: f64,
}

/// Sharpness and BT loss under the policy for a saved policy in the task
/// described by `cfg`.
pub fn probe(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<ProbeReport> {
    let task = build_task(cfg)?;
    let policy = Policy::load_json(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if policy.params().layout() != task.policy.params().layout() {
        return Err(config_error("checkpoint architecture does not match the config"));
    }
    let tel = &cfg.trainer.telemetry;
    let mut rng = Rng::with_stream(cfg.seed, 7);
    let sharpness = sharpness_probe(
        &policy,
        &task.proxy,
        &task.states,
        tel.sharpness_k,
        tel.probe_scale,
        tel.probe_actions,
        &policy.default_mask(),
        &mut rng,
    )?;
    let bt = bt_loss_under_policy(&task.proxy, &policy, &task.gold, &task.states, tel.bt_pairs.max(2), &mut rng)?;
    Ok(ProbeReport {
        checkpoint: checkpoint.to_path_buf(),
        sharpness,
        bt_loss: bt.value,
        bt_loss_se: bt.se,
    })
}
