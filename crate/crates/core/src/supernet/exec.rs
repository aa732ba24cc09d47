//! Forward, training and evaluation over a wired network.

use crate::error::{Error, Result};
use crate::numkernel::{BatchStats, NdArray, NodeId, Optimizer, ParamId, ParamStore, Tape};

/// Running-statistics momentum: `running = m * running + (1 - m) * batch`.
pub const RUNNING_MOMENTUM: f64 = 0.9;

/// Rows per forward pass during evaluation and feature extraction.
pub const EVAL_CHUNK: usize = 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormRef {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvUnit {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub norm: NormRef,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedBlock {
    pub main: Vec<ConvUnit>,
    pub shortcut: Option<ConvUnit>,
}

/// A concrete network as parameter ids into some [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedNet {
    pub stem: ConvUnit,
    pub stages: Vec<Vec<ResolvedBlock>>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Where a [`LabeledSet`]'s inputs enter the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entry {
    /// Raw images, fed to the stem.
    Images,
    /// Activations entering the given (0-based) stage.
    Stage(usize),
}

/// Inputs `[N, C, H, W]` with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub inputs: NdArray,
    pub labels: Vec<usize>,
    pub entry: Entry,
}

impl LabeledSet {
    pub fn new(inputs: NdArray, labels: Vec<usize>) -> Result<Self> {
        if inputs.ndim() != 4 || inputs.dim(0) != labels.len() {
            return Err(Error::shape(
                "labeled set",
                format!("inputs {:?} with {} labels", inputs.shape(), labels.len()),
            ));
        }
        Ok(Self {
            inputs,
            labels,
            entry: Entry::Images,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        let shape = self.inputs.shape();
        let row = shape[1..].iter().product::<usize>();
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(&self.inputs.data()[i * row..(i + 1) * row]);
        }
        let mut s = shape.to_vec();
        s[0] = idx.len();
        LabeledSet {
            inputs: NdArray::from_vec(&s, data),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            entry: self.entry,
        }
    }

    pub fn range(&self, start: usize, end: usize) -> LabeledSet {
        self.select(&(start..end).collect::<Vec<_>>())
    }
}

struct Pass<'a> {
    store: &'a ParamStore,
    mode: Mode,
    updates: Vec<(NormRef, BatchStats)>,
}

impl Pass<'_> {
    fn leaf(&self, tape: &mut Tape, id: ParamId) -> NodeId {
        let p = self.store.get(id);
        if self.mode == Mode::Train && p.updatable() {
            tape.param(id, p)
        } else {
            tape.constant(p.value.clone())
        }
    }

    fn unit(&mut self, tape: &mut Tape, x: NodeId, u: &ConvUnit) -> Result<NodeId> {
        let w = self.leaf(tape, u.weight);
        let y = tape.conv2d(x, w, u.stride, u.padding)?;
        let gamma = self.leaf(tape, u.norm.gamma);
        let beta = self.leaf(tape, u.norm.beta);
        if self.mode == Mode::Train && !self.store.get(u.norm.mean).frozen {
            let (z, stats) = tape.batch_norm(y, gamma, beta)?;
            self.updates.push((u.norm, stats));
            Ok(z)
        } else {
            let mean = self.store.get(u.norm.mean).value.data();
            let var = self.store.get(u.norm.var).value.data();
            tape.channel_affine(y, gamma, beta, mean, var)
        }
    }

    fn block(&mut self, tape: &mut Tape, x: NodeId, b: &ResolvedBlock) -> Result<NodeId> {
        let mut h = x;
        let last = b.main.len() - 1;
        for (i, u) in b.main.iter().enumerate() {
            h = self.unit(tape, h, u)?;
            if i != last {
                h = tape.relu(h);
            }
        }
        let skip = match &b.shortcut {
            Some(u) => self.unit(tape, x, u)?,
            None => x,
        };
        let sum = tape.add(h, skip)?;
        Ok(tape.relu(sum))
    }
}

/// Output of [`ResolvedNet::forward`].
pub struct Forward {
    pub logits: NodeId,
    pub norm_updates: Vec<(NormRef, BatchStats)>,
}

impl ResolvedNet {
    /// Every parameter id the network reads.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        let mut unit = |u: &ConvUnit| out.extend([u.weight, u.norm.gamma, u.norm.beta, u.norm.mean, u.norm.var]);
        unit(&self.stem);
        for b in self.stages.iter().flatten() {
            b.main.iter().for_each(&mut unit);
            b.shortcut.iter().for_each(&mut unit);
        }
        out.extend([self.head_weight, self.head_bias]);
        out
    }

    fn stage_param_ids(&self, upto: usize) -> Vec<ParamId> {
        let mut out = Vec::new();
        let mut unit = |u: &ConvUnit| out.extend([u.weight, u.norm.gamma, u.norm.beta, u.norm.mean, u.norm.var]);
        unit(&self.stem);
        for b in self.stages[..upto].iter().flatten() {
            b.main.iter().for_each(&mut unit);
            b.shortcut.iter().for_each(&mut unit);
        }
        out
    }

    /// Records the network on `tape` from `entry` up to (not including)
    /// stage `stop`, or through the head when `stop` is `None`.
    fn run(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        entry: Entry,
        stop: Option<usize>,
        mode: Mode,
    ) -> Result<Forward> {
        let first = match entry {
            Entry::Images => 0,
            Entry::Stage(s) => s,
        };
        if first > self.stages.len() {
            return Err(Error::Invalid(format!("entry stage {first} beyond network depth")));
        }
        if mode == Mode::Train && first > 0 {
            let skipped = self.stage_param_ids(first);
            if let Some(&id) = skipped.iter().find(|&&id| !store.get(id).frozen) {
                return Err(Error::Invalid(format!(
                    "cannot enter at stage {}: `{}` is not frozen",
                    first + 1,
                    store.path(id)
                )));
            }
        }
        let mut pass = Pass {
            store,
            mode,
            updates: Vec::new(),
        };
        let mut h = x;
        if entry == Entry::Images {
            h = pass.unit(tape, h, &self.stem)?;
            h = tape.relu(h);
        }
        let end = stop.unwrap_or(self.stages.len());
        for stage in &self.stages[first..end] {
            for b in stage {
                h = pass.block(tape, h, b)?;
            }
        }
        if stop.is_none() {
            let pooled = tape.global_avg_pool(h)?;
            let w = pass.leaf(tape, self.head_weight);
            let b = pass.leaf(tape, self.head_bias);
            h = tape.linear(pooled, w, Some(b))?;
        }
        Ok(Forward {
            logits: h,
            norm_updates: pass.updates,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, entry: Entry, mode: Mode) -> Result<Forward> {
        self.run(tape, store, x, entry, None, mode)
    }

    /// Eval-mode logits `[N, classes]`.
    pub fn logits(&self, store: &ParamStore, set: &LabeledSet) -> Result<NdArray> {
        let mut rows = Vec::new();
        let mut classes = 0;
        for start in (0..set.len()).step_by(EVAL_CHUNK) {
            let chunk = set.range(start, (start + EVAL_CHUNK).min(set.len()));
            let mut tape = Tape::new();
            let x = tape.constant(chunk.inputs);
            let out = self.forward(&mut tape, store, x, set.entry, Mode::Eval)?;
            let v = tape.value(out.logits);
            classes = v.dim(1);
            rows.extend_from_slice(v.data());
        }
        Ok(NdArray::from_vec(&[set.len(), classes], rows))
    }

    /// Predicted class per row; ties go to the lower class index.
    pub fn predict(&self, store: &ParamStore, set: &LabeledSet) -> Result<Vec<usize>> {
        let logits = self.logits(store, set)?;
        Ok((0..set.len()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Fraction of rows classified correctly.
    pub fn evaluate(&self, store: &ParamStore, set: &LabeledSet) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Invalid("evaluation set is empty".into()));
        }
        let pred = self.predict(store, set)?;
        let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / set.len() as f64)
    }

    /// Eval-mode activations entering `stage`, tagged so the set can be fed
    /// back in from that point.
    pub fn features(&self, store: &ParamStore, set: &LabeledSet, stage: usize) -> Result<LabeledSet> {
        if stage > self.stages.len() {
            return Err(Error::Invalid(format!("stage {stage} beyond network depth")));
        }
        let mut data = Vec::new();
        let mut shape = Vec::new();
        for start in (0..set.len()).step_by(EVAL_CHUNK) {
            let chunk = set.range(start, (start + EVAL_CHUNK).min(set.len()));
            let mut tape = Tape::new();
            let x = tape.constant(chunk.inputs);
            let out = self.run(&mut tape, store, x, set.entry, Some(stage), Mode::Eval)?;
            let v = tape.value(out.logits);
            shape = v.shape().to_vec();
            data.extend_from_slice(v.data());
        }
        shape[0] = set.len();
        Ok(LabeledSet {
            inputs: NdArray::from_vec(&shape, data),
            labels: set.labels.clone(),
            entry: Entry::Stage(stage),
        })
    }

    /// One optimizer step on the mean cross-entropy of `batch`. Returns the
    /// loss before the step.
    pub fn train_step(&self, store: &mut ParamStore, batch: &LabeledSet, opt: &mut Optimizer) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.inputs.clone());
        let out = self.forward(&mut tape, store, x, batch.entry, Mode::Train)?;
        let loss = tape.cross_entropy(out.logits, &batch.labels)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss {value}")));
        }
        let grads = tape.backward(loss)?;
        store.accumulate(&tape, &grads);
        opt.step(store)?;
        apply_norm_updates(store, &out.norm_updates);
        Ok(value)
    }
}

fn apply_norm_updates(store: &mut ParamStore, updates: &[(NormRef, BatchStats)]) {
    let m = RUNNING_MOMENTUM;
    for (norm, stats) in updates {
        for (id, batch) in [(norm.mean, &stats.mean), (norm.var, &stats.var)] {
            for (r, b) in store.get_mut(id).value.data_mut().iter_mut().zip(batch) {
                *r = m * *r + (1.0 - m) * b;
            }
        }
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
