//! Search-space definition: base architecture + mutation rule + scope.

mod arch;
mod rule;
mod space;

use num_bigint::BigUint;

pub use arch::{ArchitectureSpec, Block, BlockKind, BlockPath, HeadDecl, LayerDecl, OpKind, Stage, StemDecl};
pub use rule::MutationRule;
pub use space::{ActionVector, MutableSite, ScopeLevel, SearchScope, SubnetSpec, SupernetSpec};

use crate::error::{Error, Result};

/// Architecture files shipped with the crate, by name.
pub const BUILTIN_ARCHITECTURES: [(&str, &str); 3] = [
    ("mini18", include_str!("../../assets/mini18.arch")),
    ("resnet18", include_str!("../../assets/resnet18.arch")),
    ("resnet50", include_str!("../../assets/resnet50.arch")),
];

/// Rule files shipped with the crate, by name.
pub const BUILTIN_RULES: [(&str, &str); 1] = [("kernel3to5", include_str!("../../assets/kernel3to5.rule"))];

pub fn builtin_architecture(name: &str) -> Result<ArchitectureSpec> {
    let name = name.trim_end_matches(".arch");
    BUILTIN_ARCHITECTURES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Invalid(format!("no bundled architecture `{name}`")))
        .and_then(|(_, text)| ArchitectureSpec::parse(text))
}

pub fn builtin_rule(name: &str) -> Result<MutationRule> {
    let name = name.trim_end_matches(".rule");
    BUILTIN_RULES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Invalid(format!("no bundled rule `{name}`")))
        .and_then(|(_, text)| MutationRule::parse(text))
}

pub fn parse_architecture(text: &str) -> Result<ArchitectureSpec> {
    ArchitectureSpec::parse(text)
}

pub fn compile_search_space(arch: &ArchitectureSpec, rule: &MutationRule, scope: SearchScope) -> Result<SupernetSpec> {
    SupernetSpec::compile(arch, rule, scope)
}

pub fn count_subnets(spec: &SupernetSpec) -> BigUint {
    spec.count_subnets()
}

pub fn decode_action_vector(spec: &SupernetSpec, actions: &ActionVector) -> Result<SubnetSpec> {
    spec.decode(actions)
}
