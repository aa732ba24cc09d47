use std::collections::BTreeMap;

use super::array::{fnv1a_extend, fnv1a_init, NdArray};
use super::tape::{Gradients, Tape};

/// A named tensor plus its gradient buffer.
///
/// `trainable == false` marks buffers such as normalization running
/// statistics. `frozen` parameters may still receive gradients but the
/// optimizer never touches them.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: NdArray,
    pub gradient: NdArray,
    pub trainable: bool,
    pub frozen: bool,
    pub(crate) touched: bool,
}

impl Parameter {
    pub fn new(value: NdArray) -> Self {
        let gradient = NdArray::zeros(value.shape());
        Self {
            value,
            gradient,
            trainable: true,
            frozen: false,
            touched: false,
        }
    }

    /// Non-trainable state carried alongside the weights.
    pub fn buffer(value: NdArray) -> Self {
        Self {
            trainable: false,
            ..Self::new(value)
        }
    }

    /// True if the optimizer may update this parameter.
    pub fn updatable(&self) -> bool {
        self.trainable && !self.frozen
    }

    /// Whether a gradient was accumulated since the last optimizer step.
    pub fn touched(&self) -> bool {
        self.touched
    }

    pub fn zero_grad(&mut self) {
        self.gradient.fill(0.0);
        self.touched = false;
    }

    pub fn accumulate(&mut self, grad: &NdArray) {
        self.gradient.add_assign(grad);
        self.touched = true;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Ordered, path-addressed parameter collection.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    paths: Vec<String>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the parameter stored at `path`.
    pub fn insert(&mut self, path: impl Into<String>, param: Parameter) -> ParamId {
        let path = path.into();
        if let Some(&id) = self.index.get(&path) {
            self.params[id.0] = param;
            return id;
        }
        let id = ParamId(self.params.len());
        self.params.push(param);
        self.paths.push(path.clone());
        self.index.insert(path, id);
        id
    }

    pub fn id(&self, path: &str) -> Option<ParamId> {
        self.index.get(path).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_path(&self, path: &str) -> Option<&Parameter> {
        self.id(path).map(|id| self.get(id))
    }

    pub fn path(&self, id: ParamId) -> &str {
        &self.paths[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Parameter)> {
        self.params
            .iter()
            .enumerate()
            .map(move |(i, p)| (ParamId(i), self.paths[i].as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Adds every parameter gradient recorded on `tape` into the store.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) {
        for (node, key) in tape.param_nodes() {
            if let Some(g) = grads.get(node) {
                self.params[key.0].accumulate(g);
            }
        }
    }

    /// Checksum of the selected parameter values.
    pub fn checksum_where(&self, mut keep: impl FnMut(&str, &Parameter) -> bool) -> u64 {
        let mut h = fnv1a_init();
        for (_, path, p) in self.iter() {
            if keep(path, p) {
                h = fnv1a_extend(h, path.as_bytes());
                h = fnv1a_extend(h, &p.value.checksum().to_le_bytes());
            }
        }
        h
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_, _| true)
    }
}
