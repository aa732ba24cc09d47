//! Run-directory logs and the consolidated report.

use std::fmt::Write as _;
use std::path::Path;

use crate::controller::relative_total_reward;
use crate::earlystop::{search_saving, StopReason};
use crate::error::{Error, Result};

use super::metrics::{finetune_saving, MatchedSaving};
use super::stages::{EpochLog, RoundLog};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records().map(|x| x.map_err(Error::from)).collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, file: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Invalid(format!("{file}: bad field {i} in row {:?}", rec)))
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// `round,raw_accuracy,baselined_reward,cumulative_raw,relative_total_reward`.
pub fn write_rewards(path: &Path, rounds: &[RoundLog]) -> Result<()> {
    let raw: Vec<f64> = rounds.iter().map(|r| r.raw_reward).collect();
    let relative = relative_total_reward(&raw);
    let mut w = writer(path)?;
    w.write_record(["round", "raw_accuracy", "baselined_reward", "cumulative_raw", "relative_total_reward"])?;
    let mut cumulative = 0.0;
    for (r, rel) in rounds.iter().zip(relative) {
        cumulative += r.raw_reward;
        w.write_record([
            r.round.to_string(),
            fmt6(r.raw_reward),
            fmt6(r.baselined),
            fmt6(cumulative),
            fmt6(rel),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `epoch,loss,train_acc`.
pub fn write_pretrain(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "loss", "train_acc"])?;
    for e in epochs {
        w.write_record([e.epoch.to_string(), fmt6(e.loss), fmt6(e.train_acc)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `iteration,acc`.
pub fn write_curve(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "acc"])?;
    for (i, a) in curve {
        w.write_record([i.to_string(), fmt6(*a)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: &Path) -> Result<Vec<(usize, f64)>> {
    let name = path.display().to_string();
    records(path)?
        .iter()
        .map(|r| Ok((field(r, 0, &name)?, field(r, 1, &name)?)))
        .collect()
}

/// `iteration,searched_acc,vanilla_acc` over the union of iterations;
/// a curve with no point at an iteration leaves that cell empty.
pub fn write_finetune(path: &Path, searched: &[(usize, f64)], vanilla: &[(usize, f64)]) -> Result<()> {
    let mut iters: Vec<usize> = searched.iter().chain(vanilla).map(|&(i, _)| i).collect();
    iters.sort_unstable();
    iters.dedup();
    let at = |c: &[(usize, f64)], i: usize| c.iter().find(|p| p.0 == i).map_or(String::new(), |p| fmt6(p.1));
    let mut w = writer(path)?;
    w.write_record(["iteration", "searched_acc", "vanilla_acc"])?;
    for i in iters {
        w.write_record([i.to_string(), at(searched, i), at(vanilla, i)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Everything `report.txt` states, recomputed from the run's CSV logs.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub oracle: bool,
    pub arch: String,
    pub scope: String,
    pub seed: u64,
    pub sites: usize,
    pub budget: usize,
    pub window: usize,
    pub stop_reason: StopReason,
    pub stop_round: usize,
    pub a_star: String,
    pub search_saving: f64,
    pub supernet_minibatches: usize,
    pub final_window_reward: f64,
    pub pretrain_train_acc: Option<f64>,
    pub searched_final_acc: Option<f64>,
    pub vanilla_final_acc: Option<f64>,
    pub finetune: Option<MatchedSaving>,
}

/// Names of the logs a report needs for the given mode.
pub fn required_logs(oracle: bool) -> &'static [&'static str] {
    if oracle {
        &["actions.csv", "reward.csv"]
    } else {
        &[
            "actions.csv",
            "reward.csv",
            "pretrain.csv",
            "searched_curve.csv",
            "vanilla_curve.csv",
        ]
    }
}

pub struct ReportInputs<'a> {
    pub oracle: bool,
    pub arch: &'a str,
    pub scope: &'a str,
    pub seed: u64,
    pub budget: usize,
    pub window: usize,
    pub subnet_batches: usize,
}

impl Report {
    pub fn from_run_dir(dir: &Path, inputs: &ReportInputs<'_>) -> Result<Self> {
        let missing: Vec<String> = required_logs(inputs.oracle)
            .iter()
            .filter(|f| !dir.join(f).is_file())
            .map(|f| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingLogs(missing));
        }
        let actions = records(&dir.join("actions.csv"))?;
        let last = actions
            .last()
            .ok_or_else(|| Error::Invalid("actions.csv has no rounds".into()))?;
        let sites = last.len() - 3;
        let stop_round: usize = field(last, 0, "actions.csv")?;
        let a_star = last.get(sites + 1).unwrap_or_default().to_string();
        let stable: u8 = field(last, sites + 2, "actions.csv")?;
        let stop_reason = if stable == 1 {
            StopReason::Stable
        } else {
            StopReason::BudgetExhausted
        };
        let search_saving = match stop_reason {
            StopReason::Stable => search_saving(stop_round, inputs.budget),
            StopReason::BudgetExhausted => 0.0,
        };
        let rewards = records(&dir.join("reward.csv"))?;
        if rewards.len() != actions.len() {
            return Err(Error::Invalid(format!(
                "reward.csv has {} rounds, actions.csv {}",
                rewards.len(),
                actions.len()
            )));
        }
        let tail = &rewards[rewards.len().saturating_sub(inputs.window)..];
        let mut sum = 0.0;
        for r in tail {
            sum += field::<f64>(r, 1, "reward.csv")?;
        }
        let final_window_reward = sum / tail.len() as f64;

        let (pretrain_train_acc, searched_final_acc, vanilla_final_acc, finetune) = if inputs.oracle {
            (None, None, None, None)
        } else {
            let pre = records(&dir.join("pretrain.csv"))?;
            let pre_acc = match pre.last() {
                Some(r) => Some(field(r, 2, "pretrain.csv")?),
                None => None,
            };
            let searched = read_curve(&dir.join("searched_curve.csv"))?;
            let vanilla = read_curve(&dir.join("vanilla_curve.csv"))?;
            (
                pre_acc,
                searched.last().map(|p| p.1),
                vanilla.last().map(|p| p.1),
                finetune_saving(&searched, &vanilla),
            )
        };
        Ok(Self {
            oracle: inputs.oracle,
            arch: inputs.arch.into(),
            scope: inputs.scope.into(),
            seed: inputs.seed,
            sites,
            budget: inputs.budget,
            window: inputs.window,
            stop_reason,
            stop_round,
            a_star,
            search_saving,
            supernet_minibatches: if inputs.oracle { 0 } else { stop_round * inputs.subnet_batches },
            final_window_reward,
            pretrain_train_acc,
            searched_final_acc,
            vanilla_final_acc,
            finetune,
        })
    }

    pub fn to_text(&self) -> String {
        let na = |v: Option<f64>| v.map_or("n/a".to_string(), fmt4);
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("mode", if self.oracle { "oracle" } else { "real" }.into());
        line("arch", self.arch.clone());
        line("scope", self.scope.clone());
        line("seed", self.seed.to_string());
        line("sites", self.sites.to_string());
        line("budget", self.budget.to_string());
        line("window", self.window.to_string());
        line("stop_reason", self.stop_reason.to_string());
        line("stop_round", self.stop_round.to_string());
        line("a_star", self.a_star.clone());
        line("search_saving", fmt4(self.search_saving));
        line("supernet_minibatches", self.supernet_minibatches.to_string());
        line("final_window_reward", fmt4(self.final_window_reward));
        line("pretrain_train_acc", na(self.pretrain_train_acc));
        line("searched_final_acc", na(self.searched_final_acc));
        line("vanilla_final_acc", na(self.vanilla_final_acc));
        match (&self.finetune, self.oracle) {
            (Some(m), _) => {
                line("matched_accuracy", fmt4(m.level));
                line("searched_iters_at_match", m.iters_searched.to_string());
                line("vanilla_iters_at_match", m.iters_vanilla.to_string());
                line("finetune_saving", fmt4(m.saving));
            }
            (None, true) => {
                for k in ["matched_accuracy", "searched_iters_at_match", "vanilla_iters_at_match", "finetune_saving"] {
                    line(k, "n/a".into());
                }
            }
            (None, false) => {
                for k in ["matched_accuracy", "searched_iters_at_match", "vanilla_iters_at_match", "finetune_saving"] {
                    line(k, "undefined".into());
                }
            }
        }
        out
    }
}
