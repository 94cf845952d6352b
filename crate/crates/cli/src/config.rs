//! Run configuration. Every field has a default except `task` and `seed`;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use hacklab_core::bt::RmTrainConfig;
use hacklab_core::rewards::TwoBasinParams;
use hacklab_core::trainer::TrainerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TwoBasin,
    SequenceRm,
    SequenceRule,
    SequenceJudge,
    Bandit,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::TwoBasin,
        TaskKind::SequenceRm,
        TaskKind::SequenceRule,
        TaskKind::SequenceJudge,
        TaskKind::Bandit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::TwoBasin => "two_basin",
            TaskKind::SequenceRm => "sequence_rm",
            TaskKind::SequenceRule => "sequence_rule",
            TaskKind::SequenceJudge => "sequence_judge",
            TaskKind::Bandit => "bandit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Hidden layer widths of the mean / logits network.
    pub hidden: Vec<usize>,
    /// Gaussian policy standard deviation.
    pub sigma: f64,
    /// Initial mean action on the first axis (two_basin).
    pub init_mean: f64,
    /// Random offset added to `init_mean`, uniform in [-x, x] per seed.
    pub init_jitter: f64,
    pub vocab: usize,
    pub max_len: usize,
    pub prompts: usize,
    /// `[token, bias]` pairs added to the initial output bias.
    pub init_logit_bias: Vec<(usize, f64)>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            sigma: 0.3,
            init_mean: 0.0,
            init_jitter: 0.0,
            vocab: 16,
            max_len: 8,
            prompts: 4,
            init_logit_bias: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmConfig {
    pub hidden: Vec<usize>,
    pub pairs: usize,
    pub train: RmTrainConfig,
}

impl Default for RmConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            pairs: 1024,
            train: RmTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub two_basin: TwoBasinParams,
    /// Target token per prompt (cycled).
    pub targets: Vec<usize>,
    pub answer_tag: usize,
    pub trigger: Vec<usize>,
    pub bonus: f64,
    pub good_tokens: Vec<usize>,
    pub repeat_penalty: f64,
    pub rm: RmConfig,
    pub gold_arms: Vec<f64>,
    pub proxy_arms: Vec<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            two_basin: TwoBasinParams::default(),
            targets: vec![2, 3, 4, 5],
            answer_tag: 1,
            trigger: vec![15, 0],
            bonus: 3.0,
            good_tokens: vec![2, 3, 4, 5, 6, 7],
            repeat_penalty: 1.0,
            rm: RmConfig::default(),
            gold_arms: vec![0.0, 0.3, 0.6, 1.0, 0.8, 0.5, 0.2, 0.0],
            proxy_arms: vec![0.0, 0.3, 0.6, 1.0, 0.8, 0.5, 0.2, 1.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// Steps between checkpoints; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Moving-average window for the summary and hacking flag.
    pub summary_window: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            checkpoint_every: 0,
            summary_window: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub run: RunOptions,
}

/// Bad config or usage; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

impl RunConfig {
    /// Parse from a TOML value, reporting the key path of any schema error.
    pub fn from_value(value: toml::Value) -> anyhow::Result<Self> {
        if value.get("trainer").and_then(|t| t.get("seed")).is_some() {
            return Err(config_error("config error at 'trainer.seed': set the seed at the top level"));
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            config_error(format!("config error at '{path}': {}", e.into_inner()))
        })?;
        cfg.trainer.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| config_error(format!("config parse error: {e}")))?;
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| config_error(format!("{e:#}")))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.trainer
            .validate()
            .map_err(|e| config_error(format!("config error at 'trainer': {e}")))?;
        if self.policy.hidden.is_empty() {
            bail!(config_error("config error at 'policy.hidden': need at least one hidden layer"));
        }
        Ok(())
    }
}

/// Set a dotted key in a TOML tree, creating tables on the way.
pub fn set_dotted(root: &mut toml::Value, key: &str, value: toml::Value) -> anyhow::Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!(config_error(format!("bad parameter path '{key}'")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| config_error(format!("'{key}': '{p}' is not inside a table")))?;
        node = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| config_error(format!("'{key}' does not resolve to a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Config with a numeric key overridden. The value is tried as a float
/// first and, when integral, as an integer, since integer fields reject
/// floats.
pub fn with_numeric(base: &toml::Value, key: &str, v: f64) -> anyhow::Result<RunConfig> {
    let mut as_float = base.clone();
    set_dotted(&mut as_float, key, toml::Value::Float(v))?;
    let float_err = match RunConfig::from_value(as_float) {
        Ok(cfg) => return Ok(cfg),
        Err(e) => e,
    };
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        let mut as_int = base.clone();
        set_dotted(&mut as_int, key, toml::Value::Integer(v as i64))?;
        return RunConfig::from_value(as_int);
    }
    Err(float_err)
}
