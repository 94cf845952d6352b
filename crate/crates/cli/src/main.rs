use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use hacklab::config::{config_error, set_dotted, RunConfig};
use hacklab::plot::{plot, PlotKind};
use hacklab::run::{parse_values, probe, run_sweep, run_training};
use hacklab::verify::{all_pass, run_suite, Suite, VerifyOutput};

#[derive(Parser)]
#[command(name = "hacklab", version, about = "Reward-hacking experiments on toy tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics.jsonl, summary.json and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run bound checks and write reports.json; exits 1 if any fails.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Sharpness and BT loss under the policy for a checkpoint.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Writes probe.json here; prints to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per value of a numeric config key, in parallel.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config key, e.g. trainer.regularizer.gamma.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CSV and SVG from metrics files.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        /// Moving-average window used to locate the gold peak.
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn load_value(path: &Path, seed: Option<u64>) -> anyhow::Result<toml::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("reading config {}: {e}", path.display())))?;
    let mut v: toml::Value = toml::from_str(&text).map_err(|e| config_error(format!("config parse error: {e}")))?;
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| config_error("--seed is too large"))?;
        set_dotted(&mut v, "seed", toml::Value::Integer(s))?;
    }
    Ok(v)
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    flag.or_else(|| cfg.out.clone())
        .ok_or_else(|| config_error("no output directory: pass --out or set 'out' in the config"))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = RunConfig::from_value(load_value(&config, seed)?)?;
            let dir = out_dir(out, &cfg)?;
            let s = run_training(&cfg, &dir)?;
            println!("{}", serde_json::to_string(&s)?);
            Ok(true)
        }
        Command::Verify { suite, n, seed, out } => {
            let reports = run_suite(suite, n, seed)?;
            let passed = all_pass(&reports);
            for r in &reports {
                let status = if r.vacuous_flag() {
                    "vacuous"
                } else if r.satisfied() {
                    "ok"
                } else {
                    "FAIL"
                };
                println!("{:<22} {status:<8} lhs {:.4e} ± {:.1e}  rhs {:.4e}", r.name(), r.lhs(), r.lhs_se(), r.rhs());
            }
            std::fs::create_dir_all(&out)?;
            let path = out.join("reports.json");
            let body = VerifyOutput {
                suite,
                n,
                seed,
                passed,
                reports,
            };
            std::fs::write(&path, serde_json::to_string_pretty(&body)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
            Ok(passed)
        }
        Command::Probe {
            config,
            checkpoint,
            seed,
            out,
        } => {
            let cfg = RunConfig::from_value(load_value(&config, seed)?)?;
            let report = probe(&cfg, &checkpoint)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("probe.json"), text)?;
                }
                None => print!("{text}"),
            }
            Ok(true)
        }
        Command::Sweep {
            config,
            param,
            values,
            seed,
            out,
        } => {
            let base = load_value(&config, seed)?;
            let cfg = RunConfig::from_value(base.clone())?;
            let dir = out_dir(out, &cfg)?;
            let values = parse_values(&values)?;
            let rows = run_sweep(&base, &param, &values, &dir)?;
            for r in &rows {
                match &r.error {
                    None => println!(
                        "{param}={} gold {:.4} proxy {:.4} kl {:.4} hacking {}",
                        r.value,
                        r.final_gold.unwrap_or(f64::NAN),
                        r.final_proxy.unwrap_or(f64::NAN),
                        r.final_kl_to_init.unwrap_or(f64::NAN),
                        r.hacking.unwrap_or(false)
                    ),
                    Some(e) => println!("{param}={} failed: {e}", r.value),
                }
            }
            Ok(true)
        }
        Command::Plot {
            kind,
            out,
            window,
            metrics,
        } => {
            let o = plot(kind, &metrics, &out, window)?;
            println!("{}\n{}", o.csv.display(), o.svg.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(hacklab::exit_code(&e) as u8)
        }
    }
}
