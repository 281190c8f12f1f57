//! Flat `section.key = value` training configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Every key must be
//! known; repeating a key is an error.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wireframe_core::curriculum::DEFAULT_SPLIT;
use wireframe_core::{CurriculumKind, CurriculumSpec, EnvConfig, RewardConfig};

use crate::ppo::PpoConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("duplicate config key `{0}`")]
    Duplicate(String),
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Evaluate every this many environment steps (and at the end).
    pub interval: u64,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 50_000,
            episodes: 50,
            seed: 12_345,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogConfig {
    /// Write elapsed seconds into the log; disable for byte-reproducible logs.
    pub wallclock: bool,
    /// Save an episode GIF at every evaluation.
    pub record: bool,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self {
            wallclock: true,
            record: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub curriculum: CurriculumKind,
    pub split: f64,
    pub total_steps: u64,
    /// `(env key, value)` overrides applied to the derived phase configs.
    pub phase1: Vec<(String, String)>,
    pub phase2: Vec<(String, String)>,
    pub eval: EvalConfig,
    pub log: LogConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            curriculum: CurriculumKind::None,
            split: DEFAULT_SPLIT,
            total_steps: 1_000_000,
            phase1: Vec::new(),
            phase2: Vec::new(),
            eval: EvalConfig::default(),
            log: LogConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

const ENV_KEYS: [&str; 8] = [
    "mode",
    "detection",
    "n_edges",
    "max_steps",
    "success_threshold",
    "max_failed_episodes",
    "min_edge_len",
    "max_edge_len",
];

fn set_env_key(
    env: &mut EnvConfig,
    full_key: &str,
    sub: &str,
    value: &str,
) -> Result<(), ConfigError> {
    match sub {
        "mode" => env.mode = parse(full_key, value)?,
        "detection" => env.detection = parse(full_key, value)?,
        "n_edges" => env.n_edges = parse(full_key, value)?,
        "max_steps" => env.max_steps = parse(full_key, value)?,
        "success_threshold" => env.success_threshold = parse(full_key, value)?,
        "max_failed_episodes" => env.max_failed_episodes = parse(full_key, value)?,
        "min_edge_len" => env.generator.min_edge_len = parse(full_key, value)?,
        "max_edge_len" => env.generator.max_edge_len = parse(full_key, value)?,
        _ => return Err(ConfigError::UnknownKey(full_key.to_string())),
    }
    Ok(())
}

fn env_entries(prefix: &str, env: &EnvConfig) -> Vec<(String, String)> {
    let values = [
        env.mode.to_string(),
        env.detection.to_string(),
        env.n_edges.to_string(),
        env.max_steps.to_string(),
        env.success_threshold.to_string(),
        env.max_failed_episodes.to_string(),
        env.generator.min_edge_len.to_string(),
        env.generator.max_edge_len.to_string(),
    ];
    ENV_KEYS
        .iter()
        .zip(values)
        .map(|(k, v)| (format!("{prefix}.{k}"), v))
        .collect()
}

impl TrainConfig {
    /// Sets one dotted key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let (section, sub) = key
            .split_once('.')
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let p = &mut self.ppo;
        match (section, sub) {
            ("env", _) => set_env_key(&mut self.env, key, sub, value)?,
            ("reward", "scheme") => self.reward.scheme = parse(key, value)?,
            ("reward", "mu") => self.reward.mu = parse(key, value)?,
            ("reward", "d_t") => self.reward.d_t = parse(key, value)?,
            ("ppo", "learning_rate") => p.learning_rate = parse(key, value)?,
            ("ppo", "lr_decay") => p.lr_decay = parse(key, value)?,
            ("ppo", "clip_epsilon") => p.clip_epsilon = parse(key, value)?,
            ("ppo", "gamma") => p.gamma = parse(key, value)?,
            ("ppo", "gae_lambda") => p.gae_lambda = parse(key, value)?,
            ("ppo", "rollout_length") => p.rollout_length = parse(key, value)?,
            ("ppo", "n_envs") => p.n_envs = parse(key, value)?,
            ("ppo", "minibatch_size") => p.minibatch_size = parse(key, value)?,
            ("ppo", "epochs") => p.epochs = parse(key, value)?,
            ("ppo", "value_coef") => p.value_coef = parse(key, value)?,
            ("ppo", "entropy_coef") => p.entropy_coef = parse(key, value)?,
            ("ppo", "max_grad_norm") => p.max_grad_norm = parse(key, value)?,
            ("ppo", "seed") => p.seed = parse(key, value)?,
            ("curriculum", "kind") => self.curriculum = parse(key, value)?,
            ("curriculum", "split") => self.split = parse(key, value)?,
            ("curriculum", "total_steps") => self.total_steps = parse(key, value)?,
            ("curriculum", rest) if rest.starts_with("phase1.") || rest.starts_with("phase2.") => {
                let (phase, env_key) = rest.split_once('.').expect("checked prefix");
                // validate the key and value against a scratch config
                set_env_key(&mut EnvConfig::default(), key, env_key, value)?;
                let list = if phase == "phase1" {
                    &mut self.phase1
                } else {
                    &mut self.phase2
                };
                list.retain(|(k, _)| k != env_key);
                list.push((env_key.to_string(), value.to_string()));
            }
            ("eval", "interval") => self.eval.interval = parse(key, value)?,
            ("eval", "episodes") => self.eval.episodes = parse(key, value)?,
            ("eval", "seed") => self.eval.seed = parse(key, value)?,
            ("log", "wallclock") => self.log.wallclock = parse(key, value)?,
            ("log", "record") => self.log.record = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Reward settings with the discount tied to the learner's.
    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            gamma: self.ppo.gamma,
            ..self.reward
        }
    }

    pub fn curriculum_spec(&self) -> Result<CurriculumSpec, ConfigError> {
        let invalid = |e: &dyn Display| ConfigError::Invalid(e.to_string());
        let mut spec =
            CurriculumSpec::new(self.curriculum, self.split, self.total_steps, &self.env)
                .map_err(|e| invalid(&e))?;
        for (k, v) in &self.phase1 {
            set_env_key(&mut spec.phase1, &format!("curriculum.phase1.{k}"), k, v)?;
        }
        for (k, v) in &self.phase2 {
            set_env_key(&mut spec.phase2, &format!("curriculum.phase2.{k}"), k, v)?;
        }
        spec.validate().map_err(|e| invalid(&e))?;
        spec.phase1.validate().map_err(|e| invalid(&e))?;
        spec.phase2.validate().map_err(|e| invalid(&e))?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn Display| ConfigError::Invalid(e.to_string());
        self.env.validate().map_err(|e| invalid(&e))?;
        self.reward_config().validate().map_err(|e| invalid(&e))?;
        self.ppo.validate().map_err(|e| invalid(&e))?;
        self.curriculum_spec()?;
        if self.eval.interval == 0 || self.eval.episodes == 0 {
            return Err(ConfigError::Invalid(
                "eval.interval and eval.episodes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let p = &self.ppo;
        let mut out = env_entries("env", &self.env);
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("reward.scheme", self.reward.scheme.name().to_string());
        push("reward.mu", self.reward.mu.to_string());
        push("reward.d_t", self.reward.d_t.to_string());
        push("ppo.learning_rate", p.learning_rate.to_string());
        push("ppo.lr_decay", p.lr_decay.to_string());
        push("ppo.clip_epsilon", p.clip_epsilon.to_string());
        push("ppo.gamma", p.gamma.to_string());
        push("ppo.gae_lambda", p.gae_lambda.to_string());
        push("ppo.rollout_length", p.rollout_length.to_string());
        push("ppo.n_envs", p.n_envs.to_string());
        push("ppo.minibatch_size", p.minibatch_size.to_string());
        push("ppo.epochs", p.epochs.to_string());
        push("ppo.value_coef", p.value_coef.to_string());
        push("ppo.entropy_coef", p.entropy_coef.to_string());
        push("ppo.max_grad_norm", p.max_grad_norm.to_string());
        push("ppo.seed", p.seed.to_string());
        push("curriculum.kind", self.curriculum.to_string());
        push("curriculum.split", self.split.to_string());
        push("curriculum.total_steps", self.total_steps.to_string());
        for (k, v) in &self.phase1 {
            push(&format!("curriculum.phase1.{k}"), v.clone());
        }
        for (k, v) in &self.phase2 {
            push(&format!("curriculum.phase2.{k}"), v.clone());
        }
        push("eval.interval", self.eval.interval.to_string());
        push("eval.episodes", self.eval.episodes.to_string());
        push("eval.seed", self.eval.seed.to_string());
        push("log.wallclock", self.log.wallclock.to_string());
        push("log.record", self.log.record.to_string());
        out
    }

    /// The resolved configuration in the same format `parse_str` reads.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
