use std::collections::BTreeMap;

use super::array::NdArray;
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

#[derive(Clone, Debug)]
struct Moments {
    first: NdArray,
    second: Option<NdArray>,
}

/// First-order optimizer with per-parameter moment buffers.
///
/// A step only updates parameters that are trainable, not frozen, and
/// received a gradient since the previous step. Gradients are cleared
/// afterwards.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    steps: u64,
    moments: BTreeMap<ParamId, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        assert!(learning_rate >= 0.0, "learning rate must be non-negative");
        Self {
            kind,
            learning_rate,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self::new(OptimizerKind::Sgd { momentum }, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            learning_rate,
        )
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let targets: Vec<ParamId> = store
            .iter()
            .filter(|(_, _, p)| p.touched() && p.updatable())
            .map(|(id, _, _)| id)
            .collect();
        if let Some(&bad) = targets.iter().find(|&&id| !store.get(id).gradient.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", store.path(bad))));
        }
        self.steps += 1;
        let lr = self.learning_rate;
        for id in targets {
            let p = store.get_mut(id);
            let g = p.gradient.data();
            match self.kind {
                OptimizerKind::Sgd { momentum: 0.0 } => {
                    for (w, gv) in p.value.data_mut().iter_mut().zip(g) {
                        *w -= lr * gv;
                    }
                }
                OptimizerKind::Sgd { momentum } => {
                    let m = self.moments.entry(id).or_insert_with(|| Moments {
                        first: NdArray::zeros(p.value.shape()),
                        second: None,
                    });
                    for ((w, v), gv) in p.value.data_mut().iter_mut().zip(m.first.data_mut()).zip(g) {
                        *v = momentum * *v + gv;
                        *w -= lr * *v;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, epsilon } => {
                    let m = self.moments.entry(id).or_insert_with(|| Moments {
                        first: NdArray::zeros(p.value.shape()),
                        second: Some(NdArray::zeros(p.value.shape())),
                    });
                    let t = self.steps as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let second = m.second.as_mut().expect("adam second moment");
                    for (((w, m1), m2), gv) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(m.first.data_mut())
                        .zip(second.data_mut())
                        .zip(g)
                    {
                        *m1 = beta1 * *m1 + (1.0 - beta1) * gv;
                        *m2 = beta2 * *m2 + (1.0 - beta2) * gv * gv;
                        *w -= lr * (*m1 / c1) / ((*m2 / c2).sqrt() + epsilon);
                    }
                }
            }
        }
        store.zero_grads();
        Ok(())
    }
}
