//! LSTM sampling controller trained with REINFORCE.
//!
//! Each episode starts from a learned start token with zero LSTM state. At
//! step `t` the top hidden state goes through the classifier, the logits are
//! divided by the temperature and restricted to the site's candidates, and
//! the chosen action's embedding becomes the next input.

use crate::archspace::ActionVector;
use crate::error::{Error, Result};
use crate::numkernel::{
    fan_in_uniform, lstm_cell, softmax_rows, LstmNodes, LstmWeights, NdArray, NodeId, Optimizer, ParamStore,
    Parameter, Rng, Tape,
};
use crate::supernet::{argmax, Checkpoint};

/// Name recorded in controller checkpoints.
pub const CHECKPOINT_NAME: &str = "controller";

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub temperature: f64,
    /// Discount in the return `G_i = gamma^(K-i) * reward`.
    pub gamma: f64,
    pub baseline_decay: f64,
    pub learning_rate: f64,
    /// One classifier and embedding table per site. When false a single
    /// pair is shared by every step, which ties the sites' choices together
    /// early in training.
    pub per_site: bool,
    pub entropy_weight: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            embed: 64,
            hidden: 64,
            layers: 2,
            temperature: 1.0,
            gamma: 1.0,
            baseline_decay: 0.95,
            learning_rate: 3.5e-4,
            per_site: true,
            entropy_weight: 0.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.into(),
                message,
            })
        };
        if self.embed == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("controller_hidden", "embedding, hidden size and depth must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", format!("{} is not a positive real", self.temperature));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", format!("{} is outside (0, 1]", self.gamma));
        }
        if !(self.baseline_decay > 0.0 && self.baseline_decay < 1.0) {
            return bad("baseline_decay", format!("{} is outside (0, 1)", self.baseline_decay));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("controller_lr", format!("{} is not a positive real", self.learning_rate));
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return bad("entropy_weight", format!("{} is negative", self.entropy_weight));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpisodeMode {
    Sampled,
    Greedy,
}

/// One episode's choices.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub actions: ActionVector,
    /// Log-probability of each realized action.
    pub log_probs: Vec<f64>,
    /// Each step's distribution over that site's candidates.
    pub distributions: Vec<Vec<f64>>,
    pub mode: EpisodeMode,
}

/// The parameters θ and architecture of the sampling policy.
#[derive(Clone, Debug)]
pub struct ControllerPolicy {
    config: ControllerConfig,
    candidates: Vec<usize>,
    store: ParamStore,
}

struct Wiring {
    start: NodeId,
    embeds: Vec<NodeId>,
    cells: Vec<LstmNodes>,
    classifiers: Vec<(NodeId, NodeId)>,
}

impl ControllerPolicy {
    /// Policy for sites with the given candidate counts. Classifier weights
    /// start at zero, so every initial step distribution is uniform.
    pub fn new(candidates: Vec<usize>, config: ControllerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if candidates.is_empty() || candidates.iter().any(|&c| c < 1) {
            return Err(Error::EmptySearchSpace);
        }
        let root = Rng::new(seed);
        let (e, h) = (config.embed, config.hidden);
        let width = *candidates.iter().max().unwrap();
        let tables = if config.per_site { candidates.len() } else { 1 };
        let mut store = ParamStore::new();
        let start = NdArray::from_vec(
            &[1, e],
            (0..e).map({
                let mut r = root.split("start");
                move |_| r.uniform_range(-0.1, 0.1)
            })
            .collect(),
        );
        store.insert("start", Parameter::new(start));
        for t in 0..tables {
            let path = format!("embed{t}");
            let table = NdArray::from_vec(
                &[width, e],
                (0..width * e).map({
                    let mut r = root.split(&path);
                    move |_| r.uniform_range(-0.1, 0.1)
                })
                .collect(),
            );
            store.insert(path, Parameter::new(table));
        }
        for l in 0..config.layers {
            let input = if l == 0 { e } else { h };
            let w = LstmWeights::init(input, h, &mut root.split(&format!("lstm{l}")));
            store.insert(format!("lstm{l}.w_input"), Parameter::new(w.w_input));
            store.insert(format!("lstm{l}.w_hidden"), Parameter::new(w.w_hidden));
            store.insert(format!("lstm{l}.bias"), Parameter::new(w.bias));
        }
        for t in 0..tables {
            store.insert(format!("classifier{t}.weight"), Parameter::new(NdArray::zeros(&[width, h])));
            store.insert(format!("classifier{t}.bias"), Parameter::new(NdArray::zeros(&[width])));
        }
        Ok(Self {
            config,
            candidates,
            store,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    /// Episode length K.
    pub fn num_sites(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Overwrites the classifier weights with fan-in uniform draws, giving
    /// non-uniform step distributions.
    pub fn randomize_classifier(&mut self, seed: u64) {
        let root = Rng::new(seed);
        let ids: Vec<_> = self
            .store
            .iter()
            .filter(|(_, p, _)| p.starts_with("classifier"))
            .map(|(id, p, v)| (id, p.to_string(), v.value.shape().to_vec()))
            .collect();
        for (id, path, shape) in ids {
            self.store.get_mut(id).value = fan_in_uniform(&shape, self.config.hidden, &mut root.split(&path));
        }
    }

    fn wire(&self, tape: &mut Tape, track: bool) -> Wiring {
        let mut leaf = |path: &str| {
            let id = self.store.id(path).expect("controller parameter");
            let p = self.store.get(id);
            if track {
                tape.param(id, p)
            } else {
                tape.constant(p.value.clone())
            }
        };
        let tables = if self.config.per_site { self.candidates.len() } else { 1 };
        let start = leaf("start");
        let embeds = (0..tables).map(|t| leaf(&format!("embed{t}"))).collect();
        let cells = (0..self.config.layers)
            .map(|l| LstmNodes {
                w_input: leaf(&format!("lstm{l}.w_input")),
                w_hidden: leaf(&format!("lstm{l}.w_hidden")),
                bias: leaf(&format!("lstm{l}.bias")),
            })
            .collect();
        let classifiers = (0..tables)
            .map(|t| (leaf(&format!("classifier{t}.weight")), leaf(&format!("classifier{t}.bias"))))
            .collect();
        Wiring {
            start,
            embeds,
            cells,
            classifiers,
        }
    }

    /// Runs one episode on `tape`. `choose` gets each step's distribution
    /// and returns the action. Returns the temperature-scaled, candidate-
    /// restricted logits node per step and the actions.
    fn unroll(
        &self,
        tape: &mut Tape,
        track: bool,
        mut choose: impl FnMut(usize, &[f64]) -> usize,
    ) -> Result<(Vec<NodeId>, Vec<usize>)> {
        let w = self.wire(tape, track);
        let h = self.config.hidden;
        let mut state: Vec<(NodeId, NodeId)> = (0..self.config.layers)
            .map(|_| (tape.constant(NdArray::zeros(&[1, h])), tape.constant(NdArray::zeros(&[1, h]))))
            .collect();
        let mut input = w.start;
        let mut logits = Vec::with_capacity(self.candidates.len());
        let mut actions = Vec::with_capacity(self.candidates.len());
        for (t, &n) in self.candidates.iter().enumerate() {
            let mut x = input;
            for (cell, s) in w.cells.iter().zip(state.iter_mut()) {
                let (hn, cn) = lstm_cell(tape, x, s.0, s.1, cell)?;
                *s = (hn, cn);
                x = hn;
            }
            let table = if self.config.per_site { t } else { 0 };
            let (cw, cb) = w.classifiers[table];
            let full = tape.linear(x, cw, Some(cb))?;
            let own = tape.slice_cols(full, 0, n)?;
            let z = tape.scale(own, 1.0 / self.config.temperature);
            let probs = softmax_rows(tape.value(z));
            let a = choose(t, probs.data());
            logits.push(z);
            actions.push(a);
            input = tape.gather_rows(w.embeds[table], &[a])?;
        }
        Ok((logits, actions))
    }

    fn episode(&self, mut choose: impl FnMut(usize, &[f64]) -> usize, mode: EpisodeMode) -> Trajectory {
        let mut tape = Tape::new();
        let mut distributions = Vec::new();
        let (_, actions) = self
            .unroll(&mut tape, false, |t, p| {
                distributions.push(p.to_vec());
                choose(t, p)
            })
            .expect("controller shapes are fixed at construction");
        let log_probs = actions.iter().zip(&distributions).map(|(&a, p)| p[a].ln()).collect();
        Trajectory {
            actions: ActionVector(actions),
            log_probs,
            distributions,
            mode,
        }
    }

    /// Draws each action from its step distribution.
    pub fn sample_episode(&self, rng: &mut Rng) -> Trajectory {
        self.episode(|_, p| rng.categorical(p), EpisodeMode::Sampled)
    }

    /// Takes the most probable action at each step; ties go to the lower
    /// index.
    pub fn greedy_episode(&self) -> Trajectory {
        self.episode(|_, p| argmax(p), EpisodeMode::Greedy)
    }

    /// Records `J = sum_t log pi(a_t) * advantages[t] + w * sum_t H_t` for
    /// fixed actions and returns the tape and the J node.
    fn objective_tape(&self, actions: &ActionVector, advantages: &[f64], track: bool) -> Result<(Tape, NodeId)> {
        if actions.len() != self.candidates.len() || advantages.len() != actions.len() {
            return Err(Error::Action(format!(
                "{} actions / {} advantages for {} sites",
                actions.len(),
                advantages.len(),
                self.candidates.len()
            )));
        }
        for (t, (&a, &n)) in actions.0.iter().zip(&self.candidates).enumerate() {
            if a >= n {
                return Err(Error::Action(format!("action {a} at site {t} out of range for {n} candidates")));
            }
        }
        let mut tape = Tape::new();
        let (logits, _) = self.unroll(&mut tape, track, |t, _| actions.0[t])?;
        let mut total: Option<NodeId> = None;
        for (t, z) in logits.into_iter().enumerate() {
            let logp = tape.log_softmax(z)?;
            let picked = tape.pick(logp, &[actions.0[t]])?;
            let picked = tape.sum(picked);
            let mut term = tape.scale(picked, advantages[t]);
            if self.config.entropy_weight > 0.0 {
                let p = tape.softmax(z)?;
                let plogp = tape.mul(p, logp)?;
                let s = tape.sum(plogp);
                let ent = tape.scale(s, -self.config.entropy_weight);
                term = tape.add(term, ent)?;
            }
            total = Some(match total {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((tape, total.expect("at least one site")))
    }

    /// Objective value for fixed actions and per-step advantages.
    pub fn objective(&self, actions: &ActionVector, advantages: &[f64]) -> Result<f64> {
        let (tape, j) = self.objective_tape(actions, advantages, false)?;
        Ok(tape.value(j).item())
    }

    /// Analytic gradient of [`Self::objective`], by parameter path.
    pub fn objective_gradient(&self, actions: &ActionVector, advantages: &[f64]) -> Result<Vec<(String, NdArray)>> {
        let (tape, j) = self.objective_tape(actions, advantages, true)?;
        let grads = tape.backward(j)?;
        let mut scratch = self.store.clone();
        scratch.zero_grads();
        scratch.accumulate(&tape, &grads);
        Ok(scratch.iter().map(|(_, p, v)| (p.to_string(), v.gradient.clone())).collect())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(CHECKPOINT_NAME, &self.store)
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.check_arch(CHECKPOINT_NAME)?;
        ckpt.load_into(&mut self.store, |_| true)
    }
}

/// `G_i = gamma^(K-i) * reward` for `i = 1..K` (reward paid at the last step).
pub fn compute_returns(reward: f64, k: usize, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config {
            key: "gamma".into(),
            message: format!("{gamma} is outside (0, 1]"),
        });
    }
    if !reward.is_finite() {
        return Err(Error::NonFinite(format!("reward {reward}")));
    }
    Ok((1..=k).map(|i| gamma.powi((k - i) as i32) * reward).collect())
}

/// Raw reward for a validation accuracy.
pub fn reward_from_accuracy(acc: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&acc) {
        return Err(Error::Invalid(format!("accuracy {acc} outside [0, 1]")));
    }
    Ok(acc)
}

/// Min-max normalization of the running sum of `rewards` to `[0, 1]`.
/// A constant cumulative series maps to all zeros.
pub fn relative_total_reward(rewards: &[f64]) -> Vec<f64> {
    let cumulative: Vec<f64> = rewards
        .iter()
        .scan(0.0, |s, r| {
            *s += r;
            Some(*s)
        })
        .collect();
    let lo = cumulative.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cumulative.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    cumulative
        .iter()
        .map(|c| if hi > lo { (c - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Exponential moving average of raw rewards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBaseline {
    pub value: f64,
    pub decay: f64,
}

impl RewardBaseline {
    pub fn new(decay: f64) -> Self {
        Self { value: 0.0, decay }
    }

    pub fn observe(&mut self, reward: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * reward;
    }
}

/// What one REINFORCE update did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateReport {
    pub objective: f64,
    pub advantage: f64,
    pub baseline: f64,
    /// False when the advantage was zero and no step was taken.
    pub stepped: bool,
}

/// Policy, baseline and optimizer.
#[derive(Clone, Debug)]
pub struct Controller {
    pub policy: ControllerPolicy,
    pub baseline: RewardBaseline,
    optimizer: Optimizer,
}

impl Controller {
    pub fn new(candidates: Vec<usize>, config: ControllerConfig, seed: u64) -> Result<Self> {
        let baseline = RewardBaseline::new(config.baseline_decay);
        let optimizer = Optimizer::adam(config.learning_rate);
        Ok(Self {
            policy: ControllerPolicy::new(candidates, config, seed)?,
            baseline,
            optimizer,
        })
    }

    pub fn from_policy(policy: ControllerPolicy) -> Self {
        Self {
            baseline: RewardBaseline::new(policy.config.baseline_decay),
            optimizer: Optimizer::adam(policy.config.learning_rate),
            policy,
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Trajectory {
        self.policy.sample_episode(rng)
    }

    pub fn greedy(&self) -> Trajectory {
        self.policy.greedy_episode()
    }

    /// One gradient-ascent step on `J` using returns of `reward - b`, then
    /// folds `reward` into the baseline.
    pub fn update(&mut self, traj: &Trajectory, reward: f64) -> Result<UpdateReport> {
        if traj.mode != EpisodeMode::Sampled {
            return Err(Error::Invalid("policy-gradient update needs a sampled trajectory".into()));
        }
        let advantage = reward - self.baseline.value;
        let cfg = &self.policy.config;
        let returns = compute_returns(advantage, traj.actions.len(), cfg.gamma)?;
        let (mut tape, j) = self.policy.objective_tape(&traj.actions, &returns, true)?;
        let objective = tape.value(j).item();
        let stepped = advantage != 0.0 || cfg.entropy_weight > 0.0;
        if stepped {
            let loss = tape.scale(j, -1.0);
            let grads = tape.backward(loss)?;
            self.policy.store.accumulate(&tape, &grads);
            self.optimizer.step(&mut self.policy.store)?;
        }
        let baseline = self.baseline.value;
        self.baseline.observe(reward);
        Ok(UpdateReport {
            objective,
            advantage,
            baseline,
            stepped,
        })
    }
}
