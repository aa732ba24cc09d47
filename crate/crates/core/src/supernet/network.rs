use crate::archspace::ArchitectureSpec;
use crate::error::Result;
use crate::numkernel::{Optimizer, ParamStore, Rng};

use super::checkpoint::Checkpoint;
use super::exec::{LabeledSet, ResolvedNet};
use super::layout;

/// A single network owning its parameters.
///
/// `reference` is the architecture whose kernels keep the plain
/// `.weight` names; for a base network it is the architecture itself.
#[derive(Clone, Debug)]
pub struct Network {
    arch: ArchitectureSpec,
    reference: ArchitectureSpec,
    store: ParamStore,
    net: ResolvedNet,
}

impl Network {
    pub fn new(arch: ArchitectureSpec, reference: ArchitectureSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let net = layout::declare(&mut store, &arch, &reference, &Rng::new(seed));
        Ok(Self {
            arch,
            reference,
            store,
            net,
        })
    }

    pub fn base(arch: ArchitectureSpec, seed: u64) -> Result<Self> {
        Self::new(arch.clone(), arch, seed)
    }

    pub(crate) fn from_parts(arch: ArchitectureSpec, reference: ArchitectureSpec, store: ParamStore) -> Result<Self> {
        let net = layout::resolve(&store, &arch, &reference)?;
        Ok(Self {
            arch,
            reference,
            store,
            net,
        })
    }

    pub fn architecture(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn reference(&self) -> &ArchitectureSpec {
        &self.reference
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn resolved(&self) -> &ResolvedNet {
        &self.net
    }

    /// Freezes the stem and every stage before `first_stage`.
    pub fn freeze_before(&mut self, first_stage: usize) {
        layout::freeze_outside_scope(&mut self.store, first_stage);
    }

    pub fn train_step(&mut self, batch: &LabeledSet, opt: &mut Optimizer) -> Result<f64> {
        self.net.train_step(&mut self.store, batch, opt)
    }

    pub fn evaluate(&self, set: &LabeledSet) -> Result<f64> {
        self.net.evaluate(&self.store, set)
    }

    pub fn predict(&self, set: &LabeledSet) -> Result<Vec<usize>> {
        self.net.predict(&self.store, set)
    }

    pub fn logits(&self, set: &LabeledSet) -> Result<crate::numkernel::NdArray> {
        self.net.logits(&self.store, set)
    }

    pub fn features(&self, set: &LabeledSet, stage: usize) -> Result<LabeledSet> {
        self.net.features(&self.store, set, stage)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.reference.name, &self.store)
    }

    /// Loads every parameter selected by `wanted` from `ckpt`.
    pub fn load(&mut self, ckpt: &Checkpoint, wanted: impl FnMut(&str) -> bool) -> Result<()> {
        ckpt.check_arch(&self.reference.name)?;
        ckpt.load_into(&mut self.store, wanted)
    }
}
