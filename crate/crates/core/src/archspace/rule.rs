//! Layer-level mutation rules.
//!
//! ```text
//! match conv kernel=<k> [stride=<s>]
//! candidates kernel=<k0>,kernel=<k1>[,...]
//! ```
//!
//! `candidates` lists the replacement ops in action-index order; the first
//! one must be the matched op itself, so action 0 keeps the base network.

use std::fmt::Write as _;

use super::arch::{LayerDecl, OpKind};
use crate::error::{Error, Result};
use crate::numkernel::KERNEL_SIZES;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MutationRule {
    pub match_op: OpKind,
    pub match_kernel: usize,
    pub match_stride: Option<usize>,
    /// Candidate kernel sizes; index = action value.
    pub candidates: Vec<usize>,
}

impl Default for MutationRule {
    /// 3x3 conv -> {3x3, 5x5}.
    fn default() -> Self {
        Self {
            match_op: OpKind::Conv,
            match_kernel: 3,
            match_stride: None,
            candidates: vec![3, 5],
        }
    }
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn kv(text: &str, key: &str, line: usize, column: usize) -> Result<usize> {
    text.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| perr(line, column, format!("expected `{key}=<int>`, found `{text}`")))
}

impl MutationRule {
    pub fn parse(text: &str) -> Result<Self> {
        let mut matched: Option<(usize, Option<usize>)> = None;
        let mut candidates = None;
        let mut last = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            last = line;
            let body = raw.split('#').next().unwrap_or("");
            let col_of = |needle: &str| body.find(needle).map_or(1, |c| c + 1);
            let words: Vec<&str> = body.split_whitespace().collect();
            match words.as_slice() {
                [] => {}
                ["match", op, conds @ ..] => {
                    if *op != "conv" {
                        return Err(perr(line, col_of(op), format!("unsupported op `{op}`; only `conv` layers mutate")));
                    }
                    let mut kernel = None;
                    let mut stride = None;
                    for c in conds {
                        if c.starts_with("kernel=") {
                            kernel = Some(kv(c, "kernel", line, col_of(c))?);
                        } else if c.starts_with("stride=") {
                            stride = Some(kv(c, "stride", line, col_of(c))?);
                        } else {
                            return Err(perr(line, col_of(c), format!("unknown match condition `{c}`")));
                        }
                    }
                    let kernel = kernel.ok_or_else(|| perr(line, body.len() + 1, "match needs `kernel=<k>`"))?;
                    matched = Some((kernel, stride));
                }
                ["candidates", list] => {
                    let col = col_of(list);
                    let ks = list.split(',').map(|c| kv(c, "kernel", line, col)).collect::<Result<Vec<_>>>()?;
                    candidates = Some(ks);
                }
                [word, ..] => return Err(perr(line, col_of(word), format!("unknown directive `{word}`"))),
            }
        }
        let (match_kernel, match_stride) = matched.ok_or_else(|| perr(last + 1, 1, "missing `match` line"))?;
        let candidates = candidates.ok_or_else(|| perr(last + 1, 1, "missing `candidates` line"))?;
        let rule = Self {
            match_op: OpKind::Conv,
            match_kernel,
            match_stride,
            candidates,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("mutation rule: {m}")));
        if self.candidates.is_empty() {
            return bad("no candidates".into());
        }
        if self.candidates[0] != self.match_kernel {
            return bad(format!(
                "first candidate kernel={} must be the matched op kernel={}",
                self.candidates[0], self.match_kernel
            ));
        }
        for (i, k) in self.candidates.iter().enumerate() {
            if !KERNEL_SIZES.contains(k) {
                return bad(format!("candidate kernel={k} not in {KERNEL_SIZES:?}"));
            }
            if self.candidates[..i].contains(k) {
                return bad(format!("duplicate candidate kernel={k}"));
            }
        }
        Ok(())
    }

    pub fn matches(&self, layer: &LayerDecl) -> bool {
        layer.op == self.match_op
            && layer.kernel == self.match_kernel
            && self.match_stride.is_none_or(|s| s == layer.stride)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("match conv kernel={}", self.match_kernel);
        if let Some(s) = self.match_stride {
            let _ = write!(out, " stride={s}");
        }
        let list: Vec<String> = self.candidates.iter().map(|k| format!("kernel={k}")).collect();
        let _ = write!(out, "\ncandidates {}\n", list.join(","));
        out
    }
}
