//! Parameter naming and declaration.
//!
//! Paths are stable across the supernet, standalone networks and
//! checkpoints:
//!
//! * `stem.weight`, `stem.norm.{gamma,beta,mean,var}`
//! * `s<stage>.b<block>.conv<layer>.weight` (all 1-based), with the same
//!   `.norm.*` suffixes; projection shortcuts use `proj` instead of `conv<layer>`
//! * `head.weight`, `head.bias`
//!
//! A conv whose kernel differs from the base architecture's kernel at that
//! position stores its weight under `<unit>.weight@k<kernel>`, so every
//! candidate op gets its own bank and base-kernel banks keep the names a
//! pretrained base network uses.

use crate::archspace::{ArchitectureSpec, BlockPath, LayerDecl};
use crate::error::{Error, Result};
use crate::numkernel::{fan_in_uniform, NdArray, ParamId, ParamStore, Parameter, Rng};

use super::exec::{ConvUnit, NormRef, ResolvedBlock, ResolvedNet};

pub fn unit_path(block: BlockPath, layer: usize) -> String {
    format!("s{}.b{}.conv{}", block.stage + 1, block.block + 1, layer + 1)
}

pub fn shortcut_path(block: BlockPath) -> String {
    format!("s{}.b{}.proj", block.stage + 1, block.block + 1)
}

pub fn weight_path(unit: &str, kernel: usize, base_kernel: usize) -> String {
    if kernel == base_kernel {
        format!("{unit}.weight")
    } else {
        format!("{unit}.weight@k{kernel}")
    }
}

/// Stage index (0-based) a parameter belongs to; `None` for stem and head.
pub fn stage_of(path: &str) -> Option<usize> {
    let rest = path.strip_prefix('s')?;
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    digits.parse::<usize>().ok().map(|s| s - 1)
}

/// True for parameters before `first_stage` (including the stem).
pub fn outside_scope(path: &str, first_stage: usize) -> bool {
    if path.starts_with("stem.") {
        return true;
    }
    stage_of(path).is_some_and(|s| s < first_stage)
}

fn declare_conv(store: &mut ParamStore, path: String, layer: &LayerDecl, root: &Rng) -> ParamId {
    if let Some(id) = store.id(&path) {
        return id;
    }
    let fan_in = layer.in_channels * layer.kernel * layer.kernel;
    let value = fan_in_uniform(&layer.weight_shape(), fan_in, &mut root.split(&path));
    store.insert(path, Parameter::new(value))
}

fn declare_norm(store: &mut ParamStore, unit: &str, channels: usize) -> NormRef {
    let mut get = |name: &str, value: f64, buffer: bool| {
        let path = format!("{unit}.norm.{name}");
        store.id(&path).unwrap_or_else(|| {
            let v = NdArray::full(&[channels], value);
            store.insert(path, if buffer { Parameter::buffer(v) } else { Parameter::new(v) })
        })
    };
    NormRef {
        gamma: get("gamma", 1.0, false),
        beta: get("beta", 0.0, false),
        mean: get("mean", 0.0, true),
        var: get("var", 1.0, true),
    }
}

/// Declares (if absent) every parameter `arch` needs and returns the wiring.
/// Weights are drawn from `root.split(path)`, so values depend only on the
/// seed and the path.
pub fn declare(store: &mut ParamStore, arch: &ArchitectureSpec, base: &ArchitectureSpec, root: &Rng) -> ResolvedNet {
    let stem_layer = arch.stem.layer(arch.input_shape[0]);
    let stem = ConvUnit {
        weight: declare_conv(store, "stem.weight".into(), &stem_layer, root),
        stride: stem_layer.stride,
        padding: stem_layer.padding(),
        norm: declare_norm(store, "stem", stem_layer.out_channels),
    };
    let mut stages = Vec::new();
    for (si, stage) in arch.stages.iter().enumerate() {
        let mut blocks = Vec::new();
        for (bi, block) in stage.blocks.iter().enumerate() {
            let path = BlockPath { stage: si, block: bi };
            let base_block = base.block(path);
            let main = block
                .layers
                .iter()
                .enumerate()
                .map(|(li, l)| {
                    let unit = unit_path(path, li);
                    ConvUnit {
                        weight: declare_conv(store, weight_path(&unit, l.kernel, base_block.layers[li].kernel), l, root),
                        stride: l.stride,
                        padding: l.padding(),
                        norm: declare_norm(store, &unit, l.out_channels),
                    }
                })
                .collect();
            let shortcut = block.shortcut.as_ref().map(|l| {
                let unit = shortcut_path(path);
                ConvUnit {
                    weight: declare_conv(store, format!("{unit}.weight"), l, root),
                    stride: l.stride,
                    padding: l.padding(),
                    norm: declare_norm(store, &unit, l.out_channels),
                }
            });
            blocks.push(ResolvedBlock { main, shortcut });
        }
        stages.push(blocks);
    }
    let head = arch.classifier_head;
    let head_weight = store.id("head.weight").unwrap_or_else(|| {
        let v = fan_in_uniform(&[head.classes, head.in_features], head.in_features, &mut root.split("head.weight"));
        store.insert("head.weight", Parameter::new(v))
    });
    let head_bias = store.id("head.bias").unwrap_or_else(|| {
        let v = fan_in_uniform(&[head.classes], head.in_features, &mut root.split("head.bias"));
        store.insert("head.bias", Parameter::new(v))
    });
    ResolvedNet {
        stem,
        stages,
        head_weight,
        head_bias,
    }
}

/// Wiring for `arch` over parameters that must already exist in `store`.
pub fn resolve(store: &ParamStore, arch: &ArchitectureSpec, base: &ArchitectureSpec) -> Result<ResolvedNet> {
    let find = |path: String| {
        store
            .id(&path)
            .ok_or_else(|| Error::Invalid(format!("parameter `{path}` not present in store")))
    };
    let norm = |unit: &str| -> Result<NormRef> {
        Ok(NormRef {
            gamma: find(format!("{unit}.norm.gamma"))?,
            beta: find(format!("{unit}.norm.beta"))?,
            mean: find(format!("{unit}.norm.mean"))?,
            var: find(format!("{unit}.norm.var"))?,
        })
    };
    let stem_layer = arch.stem.layer(arch.input_shape[0]);
    let stem = ConvUnit {
        weight: find("stem.weight".into())?,
        stride: stem_layer.stride,
        padding: stem_layer.padding(),
        norm: norm("stem")?,
    };
    let mut stages = Vec::new();
    for (si, stage) in arch.stages.iter().enumerate() {
        let mut blocks = Vec::new();
        for (bi, block) in stage.blocks.iter().enumerate() {
            let path = BlockPath { stage: si, block: bi };
            let base_block = base.block(path);
            let mut main = Vec::new();
            for (li, l) in block.layers.iter().enumerate() {
                let unit = unit_path(path, li);
                main.push(ConvUnit {
                    weight: find(weight_path(&unit, l.kernel, base_block.layers[li].kernel))?,
                    stride: l.stride,
                    padding: l.padding(),
                    norm: norm(&unit)?,
                });
            }
            let shortcut = match &block.shortcut {
                Some(l) => {
                    let unit = shortcut_path(path);
                    Some(ConvUnit {
                        weight: find(format!("{unit}.weight"))?,
                        stride: l.stride,
                        padding: l.padding(),
                        norm: norm(&unit)?,
                    })
                }
                None => None,
            };
            blocks.push(ResolvedBlock { main, shortcut });
        }
        stages.push(blocks);
    }
    Ok(ResolvedNet {
        stem,
        stages,
        head_weight: find("head.weight".into())?,
        head_bias: find("head.bias".into())?,
    })
}

/// Marks every parameter before `first_stage` frozen.
pub fn freeze_outside_scope(store: &mut ParamStore, first_stage: usize) {
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, path, _)| outside_scope(path, first_stage))
        .map(|(id, _, _)| id)
        .collect();
    for id in ids {
        store.get_mut(id).frozen = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_helpers() {
        let p = BlockPath { stage: 3, block: 0 };
        assert_eq!(unit_path(p, 1), "s4.b1.conv2");
        assert_eq!(weight_path("s4.b1.conv2", 5, 3), "s4.b1.conv2.weight@k5");
        assert_eq!(weight_path("s4.b1.conv2", 3, 3), "s4.b1.conv2.weight");
        assert_eq!(stage_of("s12.b1.conv1.weight"), Some(11));
        assert_eq!(stage_of("stem.weight"), None);
        assert!(outside_scope("stem.norm.mean", 0));
        assert!(outside_scope("s3.b2.proj.weight", 3));
        assert!(!outside_scope("s4.b2.proj.weight", 3));
        assert!(!outside_scope("head.bias", 3));
    }
}
