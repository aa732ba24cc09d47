//! Source pretraining, the search, and the two fine-tuning runs.

use crate::archspace::{ActionVector, ArchitectureSpec, SupernetSpec};
use crate::controller::Controller;
use crate::earlystop::{ActionHistory, StopDecision};
use crate::error::{Error, Result};
use crate::numkernel::{Optimizer, Rng};
use crate::supernet::{outside_scope, Checkpoint, Init, LabeledSet, Network, Supernet};

use super::config::{RunConfig, Stage2Init};
use super::data::Splits;
use super::oracle::TabularLandscape;

/// Shuffled minibatch index lists covering one epoch; a trailing partial
/// batch is dropped.
pub fn epoch_batches(n: usize, size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks_exact(size).map(<[usize]>::to_vec).collect()
}

/// Endless minibatch source that reshuffles at every epoch boundary.
struct BatchStream {
    rng: Rng,
    size: usize,
    pending: Vec<Vec<usize>>,
}

impl BatchStream {
    fn new(rng: Rng, size: usize) -> Self {
        Self {
            rng,
            size,
            pending: Vec::new(),
        }
    }

    fn next(&mut self, set: &LabeledSet) -> LabeledSet {
        if self.pending.is_empty() {
            self.pending = epoch_batches(set.len(), self.size, &mut self.rng);
            self.pending.reverse();
        }
        set.select(&self.pending.pop().expect("train split holds at least one batch"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLog>,
    pub reached_target: bool,
}

/// Trains the base network on the source train split until its train
/// accuracy reaches the target or the epoch budget runs out. The last
/// epoch's weights are kept either way.
pub fn pretrain_source(cfg: &RunConfig, arch: &ArchitectureSpec, train: &LabeledSet) -> Result<PretrainOutcome> {
    let mut net = Network::base(arch.clone(), cfg.pretrain_seed)?;
    let mut opt = Optimizer::sgd(cfg.pretrain_lr, cfg.momentum);
    let mut rng = Rng::new(cfg.pretrain_seed).split("pretrain-batches");
    let mut epochs = Vec::new();
    let mut reached_target = false;
    for epoch in 1..=cfg.pretrain_epochs {
        let batches = epoch_batches(train.len(), cfg.batch_size, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            total += net
                .train_step(&train.select(idx), &mut opt)
                .map_err(|e| e.locate(format!("pretraining epoch {epoch}")))?;
        }
        let train_acc = net.evaluate(train)?;
        epochs.push(EpochLog {
            epoch,
            loss: total / batches.len() as f64,
            train_acc,
        });
        if train_acc >= cfg.pretrain_target {
            reached_target = true;
            break;
        }
    }
    Ok(PretrainOutcome {
        checkpoint: net.checkpoint(),
        epochs,
        reached_target,
    })
}

/// One search round as logged.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub sampled: ActionVector,
    pub raw_reward: f64,
    /// Reward minus the baseline before the update.
    pub baselined: f64,
    /// Mean supernet loss over the round's minibatches (real mode only).
    pub loss: Option<f64>,
}

/// Where the search gets its rewards.
pub enum RewardOracle<'a> {
    /// Train the sampled subnet, score it on the validation split.
    RealEval { checkpoint: &'a Checkpoint, target: &'a Splits },
    Tabular(&'a TabularLandscape),
}

pub struct SearchOutcome {
    pub decision: StopDecision,
    pub history: ActionHistory,
    pub rounds: Vec<RoundLog>,
    pub controller: Controller,
    /// `None` in tabular mode.
    pub supernet: Option<Supernet>,
    pub minibatches: usize,
}

/// Alternates supernet and controller training until the action set is
/// stable or the budget is spent.
pub fn stage1_search(cfg: &RunConfig, spec: &SupernetSpec, mode: RewardOracle<'_>) -> Result<SearchOutcome> {
    let root = Rng::new(cfg.seed);
    let candidates: Vec<usize> = spec.sites.iter().map(|s| s.candidates.len()).collect();
    let mut controller = Controller::new(candidates.clone(), cfg.controller.clone(), root.split("controller").seed())?;
    let mut history = ActionHistory::new(candidates, cfg.window, cfg.p_stop)?;
    let mut sample_rng = root.split("episodes");
    let mut rounds = Vec::new();
    let mut minibatches = 0;

    struct Real {
        supernet: Supernet,
        train: LabeledSet,
        val: LabeledSet,
        stream: BatchStream,
        opt: Optimizer,
    }
    let mut real = match mode {
        RewardOracle::RealEval { checkpoint, target } => {
            let supernet = Supernet::build(
                spec.clone(),
                Init::Pretrained {
                    checkpoint,
                    seed: root.split("supernet").seed(),
                },
            )?;
            let train = supernet.prefix_features(&target.train)?;
            let val = supernet.prefix_features(&target.val)?;
            Some(Real {
                supernet,
                train,
                val,
                stream: BatchStream::new(root.split("supernet-batches"), cfg.batch_size),
                opt: Optimizer::sgd(cfg.supernet_lr, cfg.momentum),
            })
        }
        RewardOracle::Tabular(table) => {
            if table.num_sites() != spec.num_sites() {
                return Err(Error::Invalid(format!(
                    "tabular landscape has {} sites, search space {}",
                    table.num_sites(),
                    spec.num_sites()
                )));
            }
            None
        }
    };
    let table = match mode {
        RewardOracle::Tabular(t) => Some(t),
        RewardOracle::RealEval { .. } => None,
    };

    for round in 1..=cfg.budget {
        let traj = controller.sample(&mut sample_rng);
        let (raw, loss) = match (&mut real, table) {
            (Some(r), _) => {
                let batches: Vec<LabeledSet> = (0..cfg.subnet_batches).map(|_| r.stream.next(&r.train)).collect();
                let mut view = r.supernet.activate(&traj.actions)?;
                let loss = view
                    .train(&batches, &mut r.opt)
                    .map_err(|e| e.locate(format!("search round {round}")))?;
                minibatches += batches.len();
                (view.evaluate(&r.val)?, Some(loss))
            }
            (None, Some(t)) => (t.reward(&traj.actions)?, None),
            (None, None) => unreachable!("one reward source is always set"),
        };
        let reward = crate::controller::reward_from_accuracy(raw)?;
        let report = controller
            .update(&traj, reward)
            .map_err(|e| e.locate(format!("search round {round}")))?;
        let greedy = controller.greedy();
        let stable = history.record(&traj.actions, &greedy.actions)?.stable;
        rounds.push(RoundLog {
            round,
            sampled: traj.actions,
            raw_reward: raw,
            baselined: report.advantage,
            loss,
        });
        if stable {
            break;
        }
    }
    let decision = history.finalize(&controller.policy, cfg.budget)?;
    Ok(SearchOutcome {
        decision,
        history,
        rounds,
        controller,
        supernet: real.map(|r| r.supernet),
        minibatches,
    })
}

/// Where in-scope fine-tuning weights come from.
#[derive(Clone, Copy, Debug)]
pub enum InScopeInit<'a> {
    Supernet(&'a Checkpoint),
    Checkpoint,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub actions: ActionVector,
    /// `(iteration, test accuracy)`, starting at iteration 0.
    pub curve: Vec<(usize, f64)>,
    pub frozen_checksum_before: u64,
    pub frozen_checksum_after: u64,
    pub network: Network,
}

impl FinetuneOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.curve.last().map_or(0.0, |&(_, a)| a)
    }
}

/// Fine-tunes `decode(actions)`: layers before the scope come from
/// `checkpoint` and stay frozen; in-scope layers start from `in_scope`.
pub fn finetune(
    cfg: &RunConfig,
    spec: &SupernetSpec,
    actions: &ActionVector,
    checkpoint: &Checkpoint,
    in_scope: InScopeInit<'_>,
    target: &Splits,
) -> Result<FinetuneOutcome> {
    let arch = spec.decode(actions)?.architecture();
    let first = spec.first_scope_stage();
    let root = Rng::new(cfg.seed);
    let mut net = Network::new(arch.clone(), spec.base.clone(), root.split("finetune-init").seed())?;
    net.load(checkpoint, |p| outside_scope(p, first))?;
    match in_scope {
        InScopeInit::Supernet(s) => net.load(s, |p| !outside_scope(p, first))?,
        InScopeInit::Checkpoint => net.load(checkpoint, |p| !outside_scope(p, first) && !p.contains('@'))?,
    }
    net.freeze_before(first);
    let frozen = |n: &Network| n.store().checksum_where(|_, p| p.frozen);
    let frozen_checksum_before = frozen(&net);

    let train = net.features(&target.train, first)?;
    let test = net.features(&target.test, first)?;
    let mut opt = Optimizer::sgd(cfg.finetune_lr, cfg.momentum);
    let mut rng = root.split("finetune-batches");
    let mut curve = vec![(0, net.evaluate(&test)?)];
    let mut iteration = 0;
    for epoch in 1..=cfg.finetune_epochs {
        for idx in epoch_batches(train.len(), cfg.batch_size, &mut rng) {
            net.train_step(&train.select(&idx), &mut opt)
                .map_err(|e| e.locate(format!("fine-tuning epoch {epoch}")))?;
            iteration += 1;
            if iteration % cfg.eval_every == 0 {
                curve.push((iteration, net.evaluate(&test)?));
            }
        }
    }
    if curve.last().map(|&(i, _)| i) != Some(iteration) {
        curve.push((iteration, net.evaluate(&test)?));
    }
    let frozen_checksum_after = frozen(&net);
    if frozen_checksum_after != frozen_checksum_before {
        return Err(Error::Invalid("frozen parameters changed during fine-tuning".into()));
    }
    if net.architecture() != &arch {
        return Err(Error::Invalid("architecture changed during fine-tuning".into()));
    }
    Ok(FinetuneOutcome {
        actions: actions.clone(),
        curve,
        frozen_checksum_before,
        frozen_checksum_after,
        network: net,
    })
}

/// Fine-tunes the searched architecture.
pub fn stage2_finetune(
    cfg: &RunConfig,
    spec: &SupernetSpec,
    a_star: &ActionVector,
    checkpoint: &Checkpoint,
    supernet: &Checkpoint,
    target: &Splits,
) -> Result<FinetuneOutcome> {
    let init = match cfg.stage2_init {
        Stage2Init::Supernet => InScopeInit::Supernet(supernet),
        Stage2Init::Checkpoint => InScopeInit::Checkpoint,
    };
    finetune(cfg, spec, a_star, checkpoint, init, target)
}

/// Fine-tunes the unmodified base network over the same scope.
pub fn vanilla_finetune(cfg: &RunConfig, spec: &SupernetSpec, checkpoint: &Checkpoint, target: &Splits) -> Result<FinetuneOutcome> {
    finetune(
        cfg,
        spec,
        &ActionVector::zeros(spec.num_sites()),
        checkpoint,
        InScopeInit::Checkpoint,
        target,
    )
}
