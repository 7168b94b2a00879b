//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key not listed
//! in [`KEYS`] is rejected; `env` and `algo` are required and everything else
//! has a default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::envs::environments;
use crate::trainer::algorithms;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("{}unknown key `{key}`", at(*.line))]
    UnknownKey { key: String, line: Option<usize> },

    #[error("line {line}: key `{key}` given twice")]
    Duplicate { key: String, line: usize },

    #[error("missing required key `{0}`")]
    MissingKey(String),

    #[error("command line: {0}")]
    Override(String),

    #[error("{}invalid value `{value}` for `{key}`: {reason}", at(*.line))]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
        line: Option<usize>,
    },
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

/// Every accepted key, in snapshot order.
pub const KEYS: &[&str] = &[
    "env",
    "algo",
    "task",
    "seed",
    "seeds",
    "hidden_units",
    "batch_size",
    "total_steps",
    "buffer_size",
    "gamma",
    "rho",
    "lr_q",
    "lr_pi",
    "lr_alpha",
    "warmup_steps",
    "gradient_steps",
    "eval_interval",
    "eval_episodes",
    "entropy_target",
    "checkpoint_interval",
    "out_dir",
];

const REQUIRED: &[&str] = &["env", "algo"];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: String,
    pub algo: String,
    /// Task label trained by the single-task baseline.
    pub task: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub hidden_units: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub buffer_size: usize,
    pub gamma: f64,
    pub rho: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub lr_alpha: f64,
    pub warmup_steps: u64,
    pub gradient_steps: usize,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// `None` uses the environment's own target.
    pub entropy_target: Option<f64>,
    /// Zero keeps only the final checkpoint.
    pub checkpoint_interval: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for the 2-D navigation setting; `env` and `algo` still have to be set.
    pub fn defaults(env: &str, algo: &str) -> Self {
        Self {
            env: env.to_string(),
            algo: algo.to_string(),
            task: crate::envs::COMPOUND_LABEL.to_string(),
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            hidden_units: 64,
            batch_size: 64,
            total_steps: 15_000,
            buffer_size: 5_000_000,
            gamma: 0.99,
            rho: 5e-3,
            lr_q: 3e-4,
            lr_pi: 3e-4,
            lr_alpha: 3e-4,
            warmup_steps: 1000,
            gradient_steps: 1,
            eval_interval: 1000,
            eval_episodes: 5,
            entropy_target: None,
            checkpoint_interval: 1000,
            out_dir: PathBuf::from("runs"),
        }
    }

    /// Parses a config document, then applies `overrides` in order.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(String, String, Option<usize>)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    text: trimmed.to_string(),
                });
            }
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey {
                    key: k.to_string(),
                    line: Some(line),
                });
            }
            if pairs.iter().any(|(pk, _, _)| pk == k) {
                return Err(ConfigError::Duplicate {
                    key: k.to_string(),
                    line,
                });
            }
            pairs.push((k.to_string(), v.to_string(), Some(line)));
        }
        for (k, v) in overrides {
            let k = k.replace('-', "_");
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey { key: k, line: None });
            }
            match pairs.iter_mut().find(|(pk, _, _)| *pk == k) {
                Some(p) => {
                    p.1 = v.clone();
                    p.2 = None;
                }
                None => pairs.push((k, v.clone(), None)),
            }
        }
        for req in REQUIRED {
            if !pairs.iter().any(|(k, _, _)| k == req) {
                return Err(ConfigError::MissingKey(req.to_string()));
            }
        }

        let get = |key: &str| pairs.iter().find(|(k, _, _)| k == key).map(|(_, v, l)| (v.as_str(), *l));
        let env = get("env").unwrap().0.to_string();
        let algo = get("algo").unwrap().0.to_string();
        let mut cfg = Self::defaults(&env, &algo);
        let mut explicit_checkpoint_interval = false;
        for (key, value, line) in &pairs {
            let bad = |reason: &str| ConfigError::InvalidValue {
                key: key.clone(),
                value: value.clone(),
                reason: reason.to_string(),
                line: *line,
            };
            match key.as_str() {
                "env" | "algo" => {}
                "task" => cfg.task = value.clone(),
                "seed" => cfg.seed = parse_num(value).map_err(|e| bad(&e))?,
                "seeds" => {
                    cfg.seeds = value
                        .split(',')
                        .map(|s| parse_num::<u64>(s.trim()))
                        .collect::<Result<_, _>>()
                        .map_err(|e| bad(&e))?;
                    if cfg.seeds.is_empty() {
                        return Err(bad("need at least one seed"));
                    }
                }
                "hidden_units" => cfg.hidden_units = parse_num(value).map_err(|e| bad(&e))?,
                "batch_size" => cfg.batch_size = parse_num(value).map_err(|e| bad(&e))?,
                "total_steps" => cfg.total_steps = parse_num(value).map_err(|e| bad(&e))?,
                "buffer_size" => cfg.buffer_size = parse_num(value).map_err(|e| bad(&e))?,
                "gamma" => cfg.gamma = parse_float(value).map_err(|e| bad(&e))?,
                "rho" => cfg.rho = parse_float(value).map_err(|e| bad(&e))?,
                "lr_q" => cfg.lr_q = parse_float(value).map_err(|e| bad(&e))?,
                "lr_pi" => cfg.lr_pi = parse_float(value).map_err(|e| bad(&e))?,
                "lr_alpha" => cfg.lr_alpha = parse_float(value).map_err(|e| bad(&e))?,
                "warmup_steps" => cfg.warmup_steps = parse_num(value).map_err(|e| bad(&e))?,
                "gradient_steps" => cfg.gradient_steps = parse_num(value).map_err(|e| bad(&e))?,
                "eval_interval" => cfg.eval_interval = parse_num(value).map_err(|e| bad(&e))?,
                "eval_episodes" => cfg.eval_episodes = parse_num(value).map_err(|e| bad(&e))?,
                "entropy_target" => cfg.entropy_target = Some(parse_float(value).map_err(|e| bad(&e))?),
                "checkpoint_interval" => {
                    cfg.checkpoint_interval = parse_num(value).map_err(|e| bad(&e))?;
                    explicit_checkpoint_interval = true;
                }
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                _ => unreachable!("keys were checked against KEYS"),
            }
        }
        if !explicit_checkpoint_interval {
            cfg.checkpoint_interval = cfg.eval_interval;
        }
        let line_of = |key: &str| get(key).and_then(|(_, l)| l);
        cfg.validate(line_of)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text, overrides)?)
    }

    fn validate(&self, line_of: impl Fn(&str) -> Option<usize>) -> Result<(), ConfigError> {
        let bad = |key: &str, value: String, reason: &str| ConfigError::InvalidValue {
            key: key.to_string(),
            value,
            reason: reason.to_string(),
            line: line_of(key),
        };
        let envs = environments();
        if !envs.contains(&self.env) {
            return Err(bad("env", self.env.clone(), &format!("known: {}", envs.names().join(", "))));
        }
        let algos = algorithms();
        if !algos.contains(&self.algo) {
            return Err(bad("algo", self.algo.clone(), &format!("known: {}", algos.names().join(", "))));
        }
        let spec = crate::envs::make_env(&self.env).expect("checked").spec().clone();
        if spec.task_index(&self.task).is_err() {
            return Err(bad("task", self.task.clone(), &format!("known: {}", spec.names.join(", "))));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(bad("gamma", self.gamma.to_string(), "must lie in (0, 1)"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(bad("rho", self.rho.to_string(), "must lie in (0, 1]"));
        }
        for (key, v) in [("lr_q", self.lr_q), ("lr_pi", self.lr_pi), ("lr_alpha", self.lr_alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(key, v.to_string(), "must be a finite non-negative number"));
            }
        }
        for (key, v) in [
            ("hidden_units", self.hidden_units as u64),
            ("batch_size", self.batch_size as u64),
            ("buffer_size", self.buffer_size as u64),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes as u64),
            ("gradient_steps", self.gradient_steps as u64),
        ] {
            if v == 0 {
                return Err(bad(key, "0".into(), "must be positive"));
            }
        }
        if let Some(h) = self.entropy_target {
            if !h.is_finite() {
                return Err(bad("entropy_target", h.to_string(), "must be finite"));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` document with every key resolved.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let entropy = match self.entropy_target {
            Some(h) => h.to_string(),
            None => crate::envs::make_env(&self.env)
                .map(|e| e.spec().entropy_targets[0].to_string())
                .unwrap_or_default(),
        };
        let values: [(&str, String); 21] = [
            ("env", self.env.clone()),
            ("algo", self.algo.clone()),
            ("task", self.task.clone()),
            ("seed", self.seed.to_string()),
            ("seeds", seeds.join(",")),
            ("hidden_units", self.hidden_units.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("buffer_size", self.buffer_size.to_string()),
            ("gamma", self.gamma.to_string()),
            ("rho", self.rho.to_string()),
            ("lr_q", self.lr_q.to_string()),
            ("lr_pi", self.lr_pi.to_string()),
            ("lr_alpha", self.lr_alpha.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("gradient_steps", self.gradient_steps.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("entropy_target", entropy),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ];
        debug_assert!(values.iter().map(|(k, _)| *k).eq(KEYS.iter().copied()));
        for (k, v) in values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    // allow `1.5e4`-style integers
    if let Ok(n) = v.parse::<T>() {
        return Ok(n);
    }
    match v.parse::<f64>() {
        Ok(f) if f.fract() == 0.0 && f >= 0.0 => f
            .to_string()
            .parse::<T>()
            .map_err(|_| "not a non-negative integer".to_string()),
        _ => Err("not a non-negative integer".to_string()),
    }
}

fn parse_float(v: &str) -> Result<f64, String> {
    v.parse::<f64>().map_err(|_| "not a number".to_string())
}
