use crate::archspace::{ActionVector, SubnetSpec, SupernetSpec};
use crate::error::{Error, Result};
use crate::numkernel::{Optimizer, ParamId, ParamStore, Rng};

use super::checkpoint::Checkpoint;
use super::exec::{Entry, LabeledSet, ResolvedNet};
use super::layout;
use super::network::Network;

/// How supernet weights start out.
#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    Random { seed: u64 },
    /// Base-network weights from the checkpoint; banks for non-original
    /// candidates are drawn from `seed`.
    Pretrained { checkpoint: &'a Checkpoint, seed: u64 },
}

/// Weight-sharing network holding one weight bank per (site, candidate).
///
/// Everything before the scope is frozen. Parameters outside the mutable
/// sites are shared by every subnet.
#[derive(Clone, Debug)]
pub struct Supernet {
    spec: SupernetSpec,
    store: ParamStore,
    prefix: ResolvedNet,
}

impl Supernet {
    pub fn build(spec: SupernetSpec, init: Init<'_>) -> Result<Self> {
        let seed = match init {
            Init::Random { seed } | Init::Pretrained { seed, .. } => seed,
        };
        let root = Rng::new(seed);
        let mut store = ParamStore::new();
        let prefix = layout::declare(&mut store, &spec.base, &spec.base, &root);
        let widest = spec.sites.iter().map(|s| s.candidates.len()).max().unwrap_or(1);
        for c in 1..widest {
            let actions = ActionVector(spec.sites.iter().map(|s| c.min(s.candidates.len() - 1)).collect());
            let arch = spec.decode(&actions)?.architecture();
            layout::declare(&mut store, &arch, &spec.base, &root);
        }
        if let Init::Pretrained { checkpoint, .. } = init {
            checkpoint.check_arch(&spec.base.name)?;
            checkpoint.load_into(&mut store, |p| !p.contains('@'))?;
        }
        layout::freeze_outside_scope(&mut store, spec.first_scope_stage());
        Ok(Self { spec, store, prefix })
    }

    pub fn spec(&self) -> &SupernetSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Number of frozen scalars.
    pub fn frozen_scalars(&self) -> usize {
        self.store.iter().filter(|(_, _, p)| p.frozen).map(|(_, _, p)| p.value.len()).sum()
    }

    /// Parameter ids of every candidate bank at `site`, in candidate order.
    pub fn bank(&self, site: usize) -> Result<Vec<ParamId>> {
        let s = self
            .spec
            .sites
            .get(site)
            .ok_or_else(|| Error::Action(format!("site {site} out of range")))?;
        let unit = layout::unit_path(s.block, s.layer);
        let base = s.candidates[0];
        s.candidates
            .iter()
            .map(|&k| {
                let p = layout::weight_path(&unit, k, base);
                self.store
                    .id(&p)
                    .ok_or_else(|| Error::Invalid(format!("bank `{p}` missing")))
            })
            .collect()
    }

    /// Selects one subnet. The view borrows the supernet mutably, so any
    /// earlier view is gone once a new one is activated.
    pub fn activate(&mut self, actions: &ActionVector) -> Result<SubnetView<'_>> {
        let subnet = self.spec.decode(actions)?;
        let net = layout::resolve(&self.store, &subnet.architecture(), &self.spec.base)?;
        Ok(SubnetView {
            supernet: self,
            actions: actions.clone(),
            subnet,
            net,
        })
    }

    /// Frozen-prefix activations for `set`: the inputs every subnet sees at
    /// the first in-scope stage.
    pub fn prefix_features(&self, set: &LabeledSet) -> Result<LabeledSet> {
        let first = self.spec.first_scope_stage();
        if set.entry == Entry::Stage(first) {
            return Ok(set.clone());
        }
        self.prefix.features(&self.store, set, first)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.spec.base.name, &self.store)
    }

    /// Restores every parameter, banks included, from `ckpt`.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.check_arch(&self.spec.base.name)?;
        ckpt.load_into(&mut self.store, |_| true)
    }
}

/// The supernet restricted to one action vector. Writes go straight to the
/// shared banks.
pub struct SubnetView<'a> {
    supernet: &'a mut Supernet,
    actions: ActionVector,
    subnet: SubnetSpec,
    net: ResolvedNet,
}

impl SubnetView<'_> {
    pub fn actions(&self) -> &ActionVector {
        &self.actions
    }

    pub fn subnet(&self) -> &SubnetSpec {
        &self.subnet
    }

    pub fn resolved(&self) -> &ResolvedNet {
        &self.net
    }

    /// One optimizer step per batch. Returns the mean loss.
    pub fn train(&mut self, batches: &[LabeledSet], opt: &mut Optimizer) -> Result<f64> {
        let mut total = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            total += self
                .net
                .train_step(&mut self.supernet.store, batch, opt)
                .map_err(|e| e.locate(format_args!("step {step} for actions {}", self.actions.to_bitstring())))?;
        }
        Ok(total / batches.len().max(1) as f64)
    }

    pub fn evaluate(&self, set: &LabeledSet) -> Result<f64> {
        self.net.evaluate(&self.supernet.store, set)
    }

    pub fn logits(&self, set: &LabeledSet) -> Result<crate::numkernel::NdArray> {
        self.net.logits(&self.supernet.store, set)
    }

    /// Standalone copy of this subnet with its current weights and flags.
    pub fn to_network(&self) -> Result<Network> {
        let src = &self.supernet.store;
        let mut store = ParamStore::new();
        for id in self.net.param_ids() {
            store.insert(src.path(id), src.get(id).clone());
        }
        store.zero_grads();
        Network::from_parts(self.subnet.architecture(), self.supernet.spec.base.clone(), store)
    }
}
