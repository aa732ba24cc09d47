//! Phases over a run directory, with `<phase>.done` markers.

use std::path::{Path, PathBuf};

use crate::archspace::{ActionVector, SupernetSpec};
use crate::error::{Error, Result};
use crate::supernet::Checkpoint;

use super::config::RunConfig;
use super::data::{self, Splits, Task};
use super::oracle::TabularLandscape;
use super::outputs::{self, Report, ReportInputs};
use super::stages::{self, RewardOracle};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    GenData,
    Pretrain,
    Search,
    Finetune,
    Baseline,
    Report,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::GenData,
        Phase::Pretrain,
        Phase::Search,
        Phase::Finetune,
        Phase::Baseline,
        Phase::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::GenData => "gen-data",
            Phase::Pretrain => "pretrain",
            Phase::Search => "search",
            Phase::Finetune => "finetune",
            Phase::Baseline => "baseline",
            Phase::Report => "report",
        }
    }

    pub fn marker(self) -> String {
        format!("{}.done", self.name())
    }
}

/// A run directory and the config it belongs to.
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
}

fn split_path(dir: &Path, task: Task, split: &str) -> PathBuf {
    dir.join("data").join(format!("{}_{split}.aftd", task.name()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn need(dir: &Path, phase: Phase) -> Result<()> {
    if dir.join(phase.marker()).is_file() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("phase `{}` has not completed", phase.name())))
    }
}

impl Run {
    pub fn new(config: RunConfig, dir: impl Into<PathBuf>) -> Self {
        Self {
            config,
            dir: dir.into(),
        }
    }

    pub fn space(&self) -> Result<SupernetSpec> {
        let c = &self.config;
        SupernetSpec::compile(&c.architecture()?, &c.mutation_rule()?, c.scope)
    }

    fn load_splits(&self, task: Task, train_only: bool) -> Result<Splits> {
        let train = data::load(&split_path(&self.dir, task, "train"))?;
        if train_only {
            return Ok(Splits {
                val: train.clone(),
                test: train.clone(),
                train,
            });
        }
        Ok(Splits {
            train,
            val: data::load(&split_path(&self.dir, task, "val"))?,
            test: data::load(&split_path(&self.dir, task, "test"))?,
        })
    }

    /// Creates the directory and writes `config.resolved`.
    pub fn prepare(&self) -> Result<()> {
        self.config.validate()?;
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write(&self.dir.join("config.resolved"), self.config.to_text())
    }

    pub fn is_done(&self, phase: Phase) -> bool {
        self.dir.join(phase.marker()).is_file()
    }

    /// Runs one phase and writes its marker. Errors carry the phase name.
    pub fn run_phase(&self, phase: Phase) -> Result<()> {
        self.execute(phase).map_err(|e| Error::Phase {
            phase: phase.name(),
            source: Box::new(e),
        })?;
        write(&self.dir.join(phase.marker()), "")
    }

    /// Runs every phase whose marker is absent. Returns the phases run.
    pub fn run_all(&self) -> Result<Vec<Phase>> {
        self.prepare()?;
        let mut ran = Vec::new();
        for phase in Phase::ALL {
            if !self.is_done(phase) {
                self.run_phase(phase)?;
                ran.push(phase);
            }
        }
        Ok(ran)
    }

    fn execute(&self, phase: Phase) -> Result<()> {
        let cfg = &self.config;
        let dir = &self.dir;
        if cfg.oracle && !matches!(phase, Phase::Search | Phase::Report) {
            return Ok(());
        }
        match phase {
            Phase::GenData => {
                std::fs::create_dir_all(dir.join("data")).map_err(|e| Error::io(dir.join("data"), e))?;
                for task in [Task::Source, Task::Target] {
                    let s = data::generate_splits(task, &cfg.data);
                    data::save(&s.train, &split_path(dir, task, "train"))?;
                    data::save(&s.val, &split_path(dir, task, "val"))?;
                    data::save(&s.test, &split_path(dir, task, "test"))?;
                }
            }
            Phase::Pretrain => {
                need(dir, Phase::GenData)?;
                let source = self.load_splits(Task::Source, true)?;
                let out = stages::pretrain_source(cfg, &cfg.architecture()?, &source.train)?;
                out.checkpoint.save(&dir.join("pretrained.ckpt"))?;
                outputs::write_pretrain(&dir.join("pretrain.csv"), &out.epochs)?;
            }
            Phase::Search => {
                let spec = self.space()?;
                let out = if cfg.oracle {
                    let table = TabularLandscape::generate(spec.num_sites(), cfg.seed)?;
                    stages::stage1_search(cfg, &spec, RewardOracle::Tabular(&table))?
                } else {
                    need(dir, Phase::Pretrain)?;
                    let ckpt = Checkpoint::load(&dir.join("pretrained.ckpt"))?;
                    let target = self.load_splits(Task::Target, false)?;
                    let out = stages::stage1_search(
                        cfg,
                        &spec,
                        RewardOracle::RealEval {
                            checkpoint: &ckpt,
                            target: &target,
                        },
                    )?;
                    if let Some(s) = &out.supernet {
                        s.checkpoint().save(&dir.join("supernet.ckpt"))?;
                    }
                    out
                };
                out.controller.policy.checkpoint().save(&dir.join("controller.ckpt"))?;
                let mut actions = std::fs::File::create(dir.join("actions.csv")).map_err(|e| Error::io(dir.join("actions.csv"), e))?;
                out.history.write_csv(&mut actions)?;
                outputs::write_rewards(&dir.join("reward.csv"), &out.rounds)?;
                write(
                    &dir.join("decision.txt"),
                    format!(
                        "a_star = {}\nreason = {}\nstop_round = {}\n",
                        out.decision.a_star, out.decision.reason, out.decision.stop_round
                    ),
                )?;
            }
            Phase::Finetune | Phase::Baseline => {
                need(dir, Phase::Search)?;
                let spec = self.space()?;
                let ckpt = Checkpoint::load(&dir.join("pretrained.ckpt"))?;
                let target = self.load_splits(Task::Target, false)?;
                let (out, name) = if phase == Phase::Finetune {
                    let a_star = self.decision()?;
                    let supernet = Checkpoint::load(&dir.join("supernet.ckpt"))?;
                    (stages::stage2_finetune(cfg, &spec, &a_star, &ckpt, &supernet, &target)?, "searched")
                } else {
                    (stages::vanilla_finetune(cfg, &spec, &ckpt, &target)?, "vanilla")
                };
                out.network.checkpoint().save(&dir.join(format!("{name}.ckpt")))?;
                outputs::write_curve(&dir.join(format!("{name}_curve.csv")), &out.curve)?;
            }
            Phase::Report => {
                let report = self.report()?;
                if !cfg.oracle {
                    let searched = outputs::read_curve(&dir.join("searched_curve.csv"))?;
                    let vanilla = outputs::read_curve(&dir.join("vanilla_curve.csv"))?;
                    outputs::write_finetune(&dir.join("finetune.csv"), &searched, &vanilla)?;
                }
                write(&dir.join("report.txt"), report.to_text())?;
            }
        }
        Ok(())
    }

    /// The final action vector recorded by the search phase.
    pub fn decision(&self) -> Result<ActionVector> {
        let path = self.dir.join("decision.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let bits = text
            .lines()
            .find_map(|l| l.strip_prefix("a_star = "))
            .ok_or_else(|| Error::Invalid(format!("{}: no a_star line", path.display())))?;
        ActionVector::from_bitstring(bits)
    }

    /// Report recomputed from the logs in the run directory.
    pub fn report(&self) -> Result<Report> {
        let c = &self.config;
        let scope = c.scope.to_string();
        Report::from_run_dir(
            &self.dir,
            &ReportInputs {
                oracle: c.oracle,
                arch: &c.arch,
                scope: &scope,
                seed: c.seed,
                budget: c.budget,
                window: c.window,
                subnet_batches: c.subnet_batches,
            },
        )
    }
}
