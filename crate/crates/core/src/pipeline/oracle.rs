//! Tabular reward landscapes for exercising the controller without a
//! supernet.

use crate::archspace::ActionVector;
use crate::error::{Error, Result};
use crate::numkernel::Rng;

/// A reward for every binary action vector of length `K <= 12`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularLandscape {
    k: usize,
    rewards: Vec<f64>,
}

pub const MAX_TABULAR_SITES: usize = 12;
const SIGNAL: f64 = 0.3;
const NOISE: f64 = 0.3;

fn index(a: &ActionVector) -> usize {
    a.0.iter().fold(0, |acc, &v| acc * 2 + v)
}

impl TabularLandscape {
    /// `rewards[i]` belongs to the vector whose bits, site 1 first, spell `i`.
    pub fn from_table(k: usize, rewards: Vec<f64>) -> Result<Self> {
        if k == 0 || k > MAX_TABULAR_SITES {
            return Err(Error::Invalid(format!("tabular landscapes need 1..={MAX_TABULAR_SITES} sites, got {k}")));
        }
        if rewards.len() != 1 << k {
            return Err(Error::Invalid(format!("{} rewards for {} vectors", rewards.len(), 1 << k)));
        }
        if let Some(r) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Invalid(format!("tabular reward {r} outside [0, 1]")));
        }
        Ok(Self { k, rewards })
    }

    /// Random landscape with a planted optimum. Other vectors score
    /// `0.3 * matches / K + U(0, 0.3)`, where `matches` counts sites agreeing
    /// with the optimum; the optimum scores the best other value plus
    /// `0.2 + U(0, 0.1)`.
    pub fn generate(k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > MAX_TABULAR_SITES {
            return Err(Error::Invalid(format!("tabular landscapes need 1..={MAX_TABULAR_SITES} sites, got {k}")));
        }
        let mut rng = Rng::new(seed).split("tabular");
        let optimum = rng.below(1 << k);
        let mut rewards = vec![0.0; 1 << k];
        for (i, r) in rewards.iter_mut().enumerate() {
            let matches = k - (i ^ optimum).count_ones() as usize;
            *r = SIGNAL * matches as f64 / k as f64 + rng.uniform_range(0.0, NOISE);
        }
        let best_other = rewards
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != optimum)
            .map(|(_, &r)| r)
            .fold(0.0, f64::max);
        rewards[optimum] = best_other + 0.2 + rng.uniform_range(0.0, 0.1);
        Self::from_table(k, rewards)
    }

    pub fn num_sites(&self) -> usize {
        self.k
    }

    pub fn reward(&self, a: &ActionVector) -> Result<f64> {
        if a.len() != self.k || a.0.iter().any(|&v| v > 1) {
            return Err(Error::Action(format!("`{a}` is not a binary vector of length {}", self.k)));
        }
        Ok(self.rewards[index(a)])
    }

    /// Highest-reward vector; ties go to the lower index.
    pub fn optimum(&self) -> ActionVector {
        let best = crate::supernet::argmax(&self.rewards);
        ActionVector((0..self.k).map(|s| (best >> (self.k - 1 - s)) & 1).collect())
    }

    /// Gap between the best and second-best rewards.
    pub fn margin(&self) -> f64 {
        let mut sorted = self.rewards.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted[0] - sorted.get(1).copied().unwrap_or(0.0)
    }
}
