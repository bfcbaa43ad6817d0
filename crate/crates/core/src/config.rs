//! Training configuration and its flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be a
//! known field; unknown keys and malformed values are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EPS_DIST;
use crate::schedules::{DEFAULT_BETA, DEFAULT_M0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    /// Symmetric InfoNCE on original pairs only.
    Clip,
    /// CLIP plus the same loss on augmented-image/text pairs at full weight.
    ClipAug,
    /// Unified contrastive loss plus KL distillation of teacher similarity rows.
    KlDistill,
    /// Unified contrastive loss plus log-ratio distillation.
    Mcd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderChoice {
    Student,
    Teacher,
}

macro_rules! keyword_enum {
    ($ty:ty, $($text:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} '{other}' (expected one of: {})",
                        stringify!($ty),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let text = match self {
                    $(v if *v == $variant => $text,)+
                    _ => unreachable!(),
                };
                f.pad(text)
            }
        }
    };
}

keyword_enum!(OptimizerKind, "sgd" => OptimizerKind::Sgd, "adam" => OptimizerKind::Adam);
keyword_enum!(
    Objective,
    "clip" => Objective::Clip,
    "clip_aug" => Objective::ClipAug,
    "kl_distill" => Objective::KlDistill,
    "mcd" => Objective::Mcd,
);
keyword_enum!(EncoderChoice, "student" => EncoderChoice::Student, "teacher" => EncoderChoice::Teacher);

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Clip,
        Objective::ClipAug,
        Objective::KlDistill,
        Objective::Mcd,
    ];

    pub fn uses_augmentation(self) -> bool {
        !matches!(self, Objective::Clip)
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, Objective::KlDistill | Objective::Mcd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta: f64,
    pub m0: f64,
    pub seed: u64,
    pub objective: Objective,
    pub inference_encoder: EncoderChoice,
    pub noise_rate: f64,
    pub eps_dist: f64,
    /// Cap on ordered pairs averaged by the negative and noisy distillation terms.
    pub max_pairs: usize,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    pub init_tau: f64,
    /// When false every augmented view is the unmodified image.
    pub augment: bool,
    /// Save a checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            total_steps: 2000,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd,
            beta: DEFAULT_BETA,
            m0: DEFAULT_M0,
            seed: 0,
            objective: Objective::Mcd,
            inference_encoder: EncoderChoice::Student,
            noise_rate: 0.1,
            eps_dist: EPS_DIST,
            max_pairs: 64 * 63,
            train_pairs: 5000,
            eval_pairs: 500,
            init_tau: 0.07,
            augment: true,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{value}': {e}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 17] = [
        "batch_size",
        "total_steps",
        "learning_rate",
        "optimizer",
        "beta",
        "m0",
        "seed",
        "objective",
        "inference_encoder",
        "noise_rate",
        "eps_dist",
        "max_pairs",
        "train_pairs",
        "eval_pairs",
        "init_tau",
        "augment",
        "checkpoint_every",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "batch_size" => self.batch_size = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "beta" => self.beta = parse(key, value)?,
            "m0" => self.m0 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "objective" => self.objective = value.parse()?,
            "inference_encoder" => self.inference_encoder = value.parse()?,
            "noise_rate" => self.noise_rate = parse(key, value)?,
            "eps_dist" => self.eps_dist = parse(key, value)?,
            "max_pairs" => self.max_pairs = parse(key, value)?,
            "train_pairs" => self.train_pairs = parse(key, value)?,
            "eval_pairs" => self.eval_pairs = parse(key, value)?,
            "init_tau" => self.init_tau = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return fail(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.total_steps < 1 {
            return fail("total_steps must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.m0) {
            return fail(format!("m0 must be in [0, 1], got {}", self.m0));
        }
        if !(self.beta >= 0.0) {
            return fail(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail(format!("noise_rate must be in [0, 1], got {}", self.noise_rate));
        }
        if !(self.eps_dist > 0.0) {
            return fail(format!("eps_dist must be > 0, got {}", self.eps_dist));
        }
        if self.train_pairs < self.batch_size {
            return fail(format!(
                "train_pairs ({}) must be at least batch_size ({})",
                self.train_pairs, self.batch_size
            ));
        }
        if !(self.init_tau > 0.0) {
            return fail(format!("init_tau must be > 0, got {}", self.init_tau));
        }
        Ok(())
    }

    /// The file form of this config; parsing it gives back the same config.
    pub fn to_file_string(&self) -> String {
        let values = [
            self.batch_size.to_string(),
            self.total_steps.to_string(),
            self.learning_rate.to_string(),
            self.optimizer.to_string(),
            self.beta.to_string(),
            self.m0.to_string(),
            self.seed.to_string(),
            self.objective.to_string(),
            self.inference_encoder.to_string(),
            self.noise_rate.to_string(),
            self.eps_dist.to_string(),
            self.max_pairs.to_string(),
            self.train_pairs.to_string(),
            self.eval_pairs.to_string(),
            self.init_tau.to_string(),
            self.augment.to_string(),
            self.checkpoint_every.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
