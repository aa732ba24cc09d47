use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;

use super::arch::{ArchitectureSpec, BlockPath};
use super::rule::MutationRule;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScopeLevel {
    Small,
    Medium,
    Large,
    Full,
}

/// Trailing range of stages that is searchable and retrainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SearchScope {
    pub level: ScopeLevel,
}

impl SearchScope {
    pub const ALL: [SearchScope; 4] = [
        SearchScope::new(ScopeLevel::Small),
        SearchScope::new(ScopeLevel::Medium),
        SearchScope::new(ScopeLevel::Large),
        SearchScope::new(ScopeLevel::Full),
    ];

    pub const fn new(level: ScopeLevel) -> Self {
        Self { level }
    }

    /// Number of trailing stages covered: small 1, medium 2, large 3, full 4.
    pub fn trailing_stages(self) -> usize {
        match self.level {
            ScopeLevel::Small => 1,
            ScopeLevel::Medium => 2,
            ScopeLevel::Large => 3,
            ScopeLevel::Full => 4,
        }
    }

    /// Index of the first in-scope stage of `arch`.
    pub fn first_stage(self, arch: &ArchitectureSpec) -> Result<usize> {
        let n = self.trailing_stages();
        arch.stages.len().checked_sub(n).ok_or_else(|| {
            Error::Invalid(format!(
                "scope `{self}` needs {n} stages but `{}` has {}",
                arch.name,
                arch.stages.len()
            ))
        })
    }
}

impl fmt::Display for SearchScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.level {
            ScopeLevel::Small => "small",
            ScopeLevel::Medium => "medium",
            ScopeLevel::Large => "large",
            ScopeLevel::Full => "full",
        })
    }
}

impl FromStr for SearchScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let level = match s.trim().to_ascii_lowercase().as_str() {
            "small" => ScopeLevel::Small,
            "medium" => ScopeLevel::Medium,
            "large" => ScopeLevel::Large,
            "full" => ScopeLevel::Full,
            other => return Err(Error::Invalid(format!("unknown scope `{other}` (small|medium|large|full)"))),
        };
        Ok(Self { level })
    }
}

/// The controller's choice per mutable site; each entry indexes the site's
/// candidate list (`0` is the base op).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ActionVector(pub Vec<usize>);

impl ActionVector {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// One digit per site, e.g. `11100001`.
    pub fn to_bitstring(&self) -> String {
        self.0
            .iter()
            .map(|&a| char::from_digit(a as u32, 36).unwrap_or('?'))
            .collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| {
                c.to_digit(36)
                    .map(|d| d as usize)
                    .ok_or_else(|| Error::Action(format!("bad action digit `{c}` in `{s}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

impl fmt::Display for ActionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

/// A rule-matching layer inside the scope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MutableSite {
    pub block: BlockPath,
    /// Block position counted across all stages.
    pub block_index: usize,
    /// Index into the block's `layers`.
    pub layer: usize,
    /// Candidate kernel sizes; position = action value.
    pub candidates: Vec<usize>,
}

/// Compiled search space: base network, rule, scope and ordered sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupernetSpec {
    pub base: ArchitectureSpec,
    pub rule: MutationRule,
    pub scope: SearchScope,
    /// Front-to-back in network depth.
    pub sites: Vec<MutableSite>,
}

/// A single candidate network: every site resolved to one kernel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubnetSpec {
    pub base: ArchitectureSpec,
    pub sites: Vec<(BlockPath, usize)>,
    pub kernels: Vec<usize>,
}

impl SubnetSpec {
    /// The base architecture with each site's kernel substituted.
    pub fn architecture(&self) -> ArchitectureSpec {
        let mut arch = self.base.clone();
        for (&(path, layer), &k) in self.sites.iter().zip(&self.kernels) {
            arch.block_mut(path).layers[layer].kernel = k;
        }
        arch
    }
}

impl SupernetSpec {
    pub fn compile(base: &ArchitectureSpec, rule: &MutationRule, scope: SearchScope) -> Result<Self> {
        rule.validate()?;
        let first = scope.first_stage(base)?;
        let mut sites = Vec::new();
        for (index, (path, block)) in base.blocks().enumerate() {
            if path.stage < first {
                continue;
            }
            for (li, layer) in block.layers.iter().enumerate() {
                if rule.matches(layer) {
                    sites.push(MutableSite {
                        block: path,
                        block_index: index,
                        layer: li,
                        candidates: rule.candidates.clone(),
                    });
                }
            }
        }
        if sites.is_empty() {
            return Err(Error::EmptySearchSpace);
        }
        Ok(Self {
            base: base.clone(),
            rule: rule.clone(),
            scope,
            sites,
        })
    }

    /// K, the number of sites (and the controller's episode length).
    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    /// First stage index inside the scope.
    pub fn first_scope_stage(&self) -> usize {
        self.base.stages.len() - self.scope.trailing_stages()
    }

    pub fn count_subnets(&self) -> BigUint {
        self.sites
            .iter()
            .fold(BigUint::from(1u32), |acc, s| acc * BigUint::from(s.candidates.len()))
    }

    pub fn validate_actions(&self, actions: &ActionVector) -> Result<()> {
        if actions.len() != self.sites.len() {
            return Err(Error::Action(format!(
                "expected {} actions, got {}",
                self.sites.len(),
                actions.len()
            )));
        }
        for (i, (&a, site)) in actions.0.iter().zip(&self.sites).enumerate() {
            if a >= site.candidates.len() {
                return Err(Error::Action(format!(
                    "action {a} at site {i} out of range for {} candidates",
                    site.candidates.len()
                )));
            }
        }
        Ok(())
    }

    pub fn decode(&self, actions: &ActionVector) -> Result<SubnetSpec> {
        self.validate_actions(actions)?;
        Ok(SubnetSpec {
            base: self.base.clone(),
            sites: self.sites.iter().map(|s| (s.block, s.layer)).collect(),
            kernels: actions.0.iter().zip(&self.sites).map(|(&a, s)| s.candidates[a]).collect(),
        })
    }

    pub fn encode(&self, subnet: &SubnetSpec) -> Result<ActionVector> {
        if subnet.kernels.len() != self.sites.len() {
            return Err(Error::Action(format!(
                "subnet resolves {} sites, space has {}",
                subnet.kernels.len(),
                self.sites.len()
            )));
        }
        subnet
            .kernels
            .iter()
            .zip(&self.sites)
            .map(|(k, s)| {
                s.candidates
                    .iter()
                    .position(|c| c == k)
                    .ok_or_else(|| Error::Action(format!("kernel {k} is not a candidate")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ActionVector)
    }

    /// Every action vector in lexicographic order. Intended for small spaces.
    pub fn enumerate(&self) -> Vec<ActionVector> {
        let mut out = vec![ActionVector(Vec::new())];
        for site in &self.sites {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..site.candidates.len()).map(move |a| {
                        let mut v = prefix.0.clone();
                        v.push(a);
                        ActionVector(v)
                    })
                })
                .collect();
        }
        out
    }
}
