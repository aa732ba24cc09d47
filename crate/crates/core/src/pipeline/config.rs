//! Run configuration: `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::archspace::{builtin_architecture, builtin_rule, ArchitectureSpec, MutationRule, SearchScope};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};

use super::data::DataSpec;

/// Where stage-two in-scope weights come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage2Init {
    /// The banks trained during the search.
    Supernet,
    /// The source checkpoint (non-original kernels start fresh).
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Built-in architecture name or path to an architecture file.
    pub arch: String,
    /// Built-in rule name or path to a rule file.
    pub rule: String,
    pub scope: SearchScope,
    /// Search and fine-tuning seed.
    pub seed: u64,
    pub pretrain_seed: u64,
    pub data: DataSpec,
    /// Maximum search rounds.
    pub budget: usize,
    /// Supernet minibatches per round.
    pub subnet_batches: usize,
    pub supernet_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub controller: ControllerConfig,
    pub window: usize,
    pub p_stop: f64,
    pub pretrain_epochs: usize,
    pub pretrain_target: f64,
    pub pretrain_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    /// Iterations between accuracy-curve points.
    pub eval_every: usize,
    pub stage2_init: Stage2Init,
    /// Tabular rewards instead of training and evaluating subnets.
    pub oracle: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: "mini18".into(),
            rule: "kernel3to5".into(),
            scope: "small".parse().unwrap(),
            seed: 1,
            pretrain_seed: 11,
            data: DataSpec::default(),
            budget: 500,
            subnet_batches: 4,
            supernet_lr: 5e-2,
            momentum: 0.9,
            batch_size: 64,
            controller: ControllerConfig::default(),
            window: crate::earlystop::DEFAULT_WINDOW,
            p_stop: crate::earlystop::DEFAULT_P_STOP,
            pretrain_epochs: 20,
            pretrain_target: 0.9,
            pretrain_lr: 5e-2,
            finetune_epochs: 10,
            finetune_lr: 5e-2,
            eval_every: 8,
            stage2_init: Stage2Init::Supernet,
            oracle: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        key: key.into(),
        message: format!("`{value}` is not {what}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            message: format!("`{value}` is not a boolean"),
        }),
    }
}

impl RunConfig {
    /// Every key, in the order the resolved config is written.
    pub const KEYS: [&'static str; 31] = [
        "arch",
        "rule",
        "scope",
        "seed",
        "pretrain_seed",
        "data_seed",
        "train_size",
        "val_size",
        "test_size",
        "budget",
        "subnet_batches",
        "supernet_lr",
        "momentum",
        "batch_size",
        "controller_lr",
        "controller_embed",
        "controller_hidden",
        "controller_layers",
        "temperature",
        "gamma",
        "baseline_decay",
        "entropy_weight",
        "per_site_classifier",
        "window",
        "p_stop",
        "pretrain_epochs",
        "pretrain_target",
        "pretrain_lr",
        "finetune_epochs",
        "finetune_lr",
        "eval_every",
    ];
    const EXTRA_KEYS: [&'static str; 2] = ["stage2_init", "oracle"];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if value.is_empty() {
            return Err(Error::Config {
                key: key.into(),
                message: "missing value".into(),
            });
        }
        let int = "a non-negative integer";
        let real = "a number";
        let c = &mut self.controller;
        match key {
            "arch" => self.arch = value.into(),
            "rule" => self.rule = value.into(),
            "scope" => self.scope = parse(key, value, "one of small, medium, large, full")?,
            "seed" => self.seed = parse(key, value, int)?,
            "pretrain_seed" => self.pretrain_seed = parse(key, value, int)?,
            "data_seed" => self.data.seed = parse(key, value, int)?,
            "train_size" => self.data.train = parse(key, value, int)?,
            "val_size" => self.data.val = parse(key, value, int)?,
            "test_size" => self.data.test = parse(key, value, int)?,
            "budget" => self.budget = parse(key, value, int)?,
            "subnet_batches" => self.subnet_batches = parse(key, value, int)?,
            "supernet_lr" => self.supernet_lr = parse(key, value, real)?,
            "momentum" => self.momentum = parse(key, value, real)?,
            "batch_size" => self.batch_size = parse(key, value, int)?,
            "controller_lr" => c.learning_rate = parse(key, value, real)?,
            "controller_embed" => c.embed = parse(key, value, int)?,
            "controller_hidden" => c.hidden = parse(key, value, int)?,
            "controller_layers" => c.layers = parse(key, value, int)?,
            "temperature" => c.temperature = parse(key, value, real)?,
            "gamma" => c.gamma = parse(key, value, real)?,
            "baseline_decay" => c.baseline_decay = parse(key, value, real)?,
            "entropy_weight" => c.entropy_weight = parse(key, value, real)?,
            "per_site_classifier" => c.per_site = parse_bool(key, value)?,
            "window" => self.window = parse(key, value, int)?,
            "p_stop" => self.p_stop = parse(key, value, real)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value, int)?,
            "pretrain_target" => self.pretrain_target = parse(key, value, real)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, value, real)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value, int)?,
            "finetune_lr" => self.finetune_lr = parse(key, value, real)?,
            "eval_every" => self.eval_every = parse(key, value, int)?,
            "stage2_init" => {
                self.stage2_init = match value {
                    "supernet" => Stage2Init::Supernet,
                    "checkpoint" => Stage2Init::Checkpoint,
                    _ => {
                        return Err(Error::Config {
                            key: key.into(),
                            message: format!("`{value}` is not one of supernet, checkpoint"),
                        })
                    }
                }
            }
            "oracle" => self.oracle = parse_bool(key, value)?,
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let c = &self.controller;
        match key {
            "arch" => self.arch.clone(),
            "rule" => self.rule.clone(),
            "scope" => self.scope.to_string(),
            "seed" => self.seed.to_string(),
            "pretrain_seed" => self.pretrain_seed.to_string(),
            "data_seed" => self.data.seed.to_string(),
            "train_size" => self.data.train.to_string(),
            "val_size" => self.data.val.to_string(),
            "test_size" => self.data.test.to_string(),
            "budget" => self.budget.to_string(),
            "subnet_batches" => self.subnet_batches.to_string(),
            "supernet_lr" => self.supernet_lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "controller_lr" => c.learning_rate.to_string(),
            "controller_embed" => c.embed.to_string(),
            "controller_hidden" => c.hidden.to_string(),
            "controller_layers" => c.layers.to_string(),
            "temperature" => c.temperature.to_string(),
            "gamma" => c.gamma.to_string(),
            "baseline_decay" => c.baseline_decay.to_string(),
            "entropy_weight" => c.entropy_weight.to_string(),
            "per_site_classifier" => c.per_site.to_string(),
            "window" => self.window.to_string(),
            "p_stop" => self.p_stop.to_string(),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "pretrain_target" => self.pretrain_target.to_string(),
            "pretrain_lr" => self.pretrain_lr.to_string(),
            "finetune_epochs" => self.finetune_epochs.to_string(),
            "finetune_lr" => self.finetune_lr.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "stage2_init" => match self.stage2_init {
                Stage2Init::Supernet => "supernet".into(),
                Stage2Init::Checkpoint => "checkpoint".into(),
            },
            "oracle" => self.oracle.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                column: 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o.split_once('=').ok_or_else(|| Error::Config {
                key: o.into(),
                message: "override must look like key=value".into(),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every setting, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS.iter().chain(&Self::EXTRA_KEYS) {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash16(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `<hash16>-s<seed>`.
    pub fn run_name(&self) -> String {
        format!("{}-s{}", self.hash16(), self.seed)
    }

    pub fn architecture(&self) -> Result<ArchitectureSpec> {
        if let Ok(a) = builtin_architecture(&self.arch) {
            return Ok(a);
        }
        let path = Path::new(&self.arch);
        if !path.exists() {
            return Err(Error::Config {
                key: "arch".into(),
                message: format!("`{}` is neither a built-in architecture nor a file", self.arch),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ArchitectureSpec::parse(&text)
    }

    pub fn mutation_rule(&self) -> Result<MutationRule> {
        if let Ok(r) = builtin_rule(&self.rule) {
            return Ok(r);
        }
        let path = Path::new(&self.rule);
        if !path.exists() {
            return Err(Error::Config {
                key: "rule".into(),
                message: format!("`{}` is neither a built-in rule nor a file", self.rule),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MutationRule::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        self.controller.validate()?;
        for (key, v) in [
            ("supernet_lr", self.supernet_lr),
            ("pretrain_lr", self.pretrain_lr),
            ("finetune_lr", self.finetune_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, "must be a positive real");
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must be in [0, 1)");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if self.subnet_batches == 0 {
            return bad("subnet_batches", "must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1");
        }
        if self.window == 0 {
            return bad("window", "must be at least 1");
        }
        if !(self.p_stop > 0.5 && self.p_stop <= 1.0) {
            return bad("p_stop", "must be in (0.5, 1]");
        }
        if self.budget < self.window {
            return bad("budget", "must be at least the window length");
        }
        if !(0.0..=1.0).contains(&self.pretrain_target) {
            return bad("pretrain_target", "must be in [0, 1]");
        }
        if !self.oracle {
            for (key, n) in [("train_size", self.data.train), ("val_size", self.data.val), ("test_size", self.data.test)] {
                if n == 0 {
                    return bad(key, "must be positive");
                }
            }
            if self.data.train < self.batch_size {
                return bad("train_size", "must be at least batch_size");
            }
        }
        self.architecture()?.validate()?;
        self.mutation_rule()?.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), RunConfig::KEYS.len() + RunConfig::EXTRA_KEYS.len());
    }
}
