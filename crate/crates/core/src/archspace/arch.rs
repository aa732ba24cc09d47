//! Base-architecture descriptions.
//!
//! Grammar (line oriented, `#` starts a comment):
//!
//! ```text
//! file   := header* stage+
//! header := "name" IDENT
//!         | "input" INT "x" INT "x" INT        # C x H x W
//!         | "classes" INT
//!         | "stem" CHANNELS KERNEL STRIDE        # optional, default: first stage width, 3, 1
//! stage  := "[stage" INT "]" block+              # stages numbered 1, 2, ... in order
//! block  := "block" ("basic" | "bottleneck") CHANNELS STRIDE ["kernels=" INT ("," INT)*]
//! ```
//!
//! `CHANNELS` is the block's output width. Bottleneck blocks use an inner
//! width of `CHANNELS / 4`. The optional `kernels=` list overrides the kernel
//! of each mutable-shape conv (two for basic blocks, the middle one for
//! bottlenecks); it is how resolved subnets are written out.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numkernel::KERNEL_SIZES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Basic,
    Bottleneck,
}

impl BlockKind {
    fn as_str(self) -> &'static str {
        match self {
            BlockKind::Basic => "basic",
            BlockKind::Bottleneck => "bottleneck",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv,
}

/// One convolution; every conv is followed by normalization in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerDecl {
    pub op: OpKind,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl LayerDecl {
    pub fn conv(kernel: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            op: OpKind::Conv,
            kernel,
            in_channels,
            out_channels,
            stride,
        }
    }

    /// Same-size padding for odd kernels.
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn output_size(&self, size: usize) -> usize {
        (size + 2 * self.padding() - self.kernel) / self.stride + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Main-path convolutions in execution order.
    pub layers: Vec<LayerDecl>,
    /// Projection shortcut (1x1 conv) when the block changes shape.
    pub shortcut: Option<LayerDecl>,
}

impl Block {
    fn new(kind: BlockKind, in_channels: usize, out_channels: usize, stride: usize, kernels: Option<&[usize]>) -> Self {
        let layers = match kind {
            BlockKind::Basic => {
                let k = kernels.unwrap_or(&[3, 3]);
                vec![
                    LayerDecl::conv(k[0], in_channels, out_channels, stride),
                    LayerDecl::conv(k[1], out_channels, out_channels, 1),
                ]
            }
            BlockKind::Bottleneck => {
                let k = kernels.map_or(3, |k| k[0]);
                let mid = out_channels / 4;
                vec![
                    LayerDecl::conv(1, in_channels, mid, 1),
                    LayerDecl::conv(k, mid, mid, stride),
                    LayerDecl::conv(1, mid, out_channels, 1),
                ]
            }
        };
        let shortcut =
            (stride != 1 || in_channels != out_channels).then(|| LayerDecl::conv(1, in_channels, out_channels, stride));
        Self {
            kind,
            in_channels,
            out_channels,
            stride,
            layers,
            shortcut,
        }
    }

    /// Indices into `layers` whose kernel is free to differ from 1x1 in the
    /// block template (both convs of a basic block, the middle bottleneck conv).
    pub fn spatial_layers(&self) -> &'static [usize] {
        match self.kind {
            BlockKind::Basic => &[0, 1],
            BlockKind::Bottleneck => &[1],
        }
    }

    fn kernels(&self) -> Vec<usize> {
        self.spatial_layers().iter().map(|&i| self.layers[i].kernel).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage {
    pub blocks: Vec<Block>,
    pub output_channels: usize,
    pub downsample: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StemDecl {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl StemDecl {
    pub fn layer(&self, in_channels: usize) -> LayerDecl {
        LayerDecl::conv(self.kernel, in_channels, self.channels, self.stride)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadDecl {
    pub in_features: usize,
    pub classes: usize,
}

/// Declarative stage/block/layer graph of a residual network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub name: String,
    /// `[C, H, W]`
    pub input_shape: [usize; 3],
    pub stem: StemDecl,
    pub stages: Vec<Stage>,
    pub classifier_head: HeadDecl,
}

/// Address of a block: stage and position within it, both zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockPath {
    pub stage: usize,
    pub block: usize,
}

impl std::fmt::Display for BlockPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} / block {}", self.stage + 1, self.block + 1)
    }
}

impl ArchitectureSpec {
    pub fn parse(text: &str) -> Result<Self> {
        Parser::default().run(text)
    }

    pub fn num_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len()).sum()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (BlockPath, &Block)> {
        self.stages.iter().enumerate().flat_map(|(si, s)| {
            s.blocks
                .iter()
                .enumerate()
                .map(move |(bi, b)| (BlockPath { stage: si, block: bi }, b))
        })
    }

    pub fn block(&self, path: BlockPath) -> &Block {
        &self.stages[path.stage].blocks[path.block]
    }

    pub(crate) fn block_mut(&mut self, path: BlockPath) -> &mut Block {
        &mut self.stages[path.stage].blocks[path.block]
    }

    /// Output shape `[C, H, W]` of every conv in execution order (stem, then
    /// each block's main path and shortcut).
    pub fn activation_shapes(&self) -> Vec<[usize; 3]> {
        let [_, mut h, mut w] = self.input_shape;
        let stem = self.stem.layer(self.input_shape[0]);
        h = stem.output_size(h);
        w = stem.output_size(w);
        let mut shapes = vec![[stem.out_channels, h, w]];
        for (_, b) in self.blocks() {
            let (h0, w0) = (h, w);
            for l in &b.layers {
                h = l.output_size(h);
                w = l.output_size(w);
                shapes.push([l.out_channels, h, w]);
            }
            if let Some(s) = &b.shortcut {
                shapes.push([s.out_channels, s.output_size(h0), s.output_size(w0)]);
            }
        }
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |path: String, message: String| Err(Error::Invariant { path, message });
        if self.stages.is_empty() {
            return invalid("architecture".into(), "at least one stage required".into());
        }
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return invalid("input".into(), "dimensions must be positive".into());
        }
        if self.classifier_head.classes < 2 {
            return invalid("classes".into(), "at least two classes required".into());
        }
        if !KERNEL_SIZES.contains(&self.stem.kernel) || self.stem.channels == 0 || self.stem.stride == 0 {
            return invalid("stem".into(), format!("invalid stem {:?}", self.stem));
        }
        let mut channels = self.stem.channels;
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.blocks.is_empty() {
                return invalid(format!("stage {}", si + 1), "stage has no blocks".into());
            }
            for (bi, b) in stage.blocks.iter().enumerate() {
                let path = BlockPath { stage: si, block: bi }.to_string();
                if b.layers.is_empty() {
                    return invalid(path, "block has no layers".into());
                }
                if b.in_channels != channels {
                    return invalid(path, format!("expects {} input channels, previous block gives {channels}", b.in_channels));
                }
                if b.stride == 0 || b.out_channels == 0 {
                    return invalid(path, "channels and stride must be positive".into());
                }
                if b.kind == BlockKind::Bottleneck && (b.out_channels % 4 != 0) {
                    return invalid(path, format!("bottleneck width {} not divisible by 4", b.out_channels));
                }
                let spatial = b.spatial_layers();
                for (li, l) in b.layers.iter().enumerate() {
                    if !KERNEL_SIZES.contains(&l.kernel) || l.kernel % 2 == 0 {
                        return invalid(path, format!("layer {li} has unsupported kernel {}", l.kernel));
                    }
                    if !spatial.contains(&li) && l.kernel != 1 {
                        return invalid(path, format!("layer {li} must be a 1x1 conv"));
                    }
                }
                let needs_projection = b.stride != 1 || b.in_channels != b.out_channels;
                if needs_projection != b.shortcut.is_some() {
                    return invalid(path, "shortcut does not match the block's shape change".into());
                }
                channels = b.out_channels;
            }
            if stage.output_channels != channels {
                return invalid(format!("stage {}", si + 1), "output channels disagree with last block".into());
            }
        }
        if self.classifier_head.in_features != channels {
            return invalid("classifier".into(), "head width disagrees with last stage".into());
        }
        // spatial size must stay positive through every stride
        if self.activation_shapes().iter().any(|s| s[1] == 0 || s[2] == 0) {
            return invalid("input".into(), "spatial size collapses to zero".into());
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text(a)) == a`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let [c, h, w] = self.input_shape;
        let _ = writeln!(out, "name {}", self.name);
        let _ = writeln!(out, "input {c}x{h}x{w}");
        let _ = writeln!(out, "classes {}", self.classifier_head.classes);
        let _ = writeln!(out, "stem {} {} {}", self.stem.channels, self.stem.kernel, self.stem.stride);
        for (si, stage) in self.stages.iter().enumerate() {
            let _ = writeln!(out, "\n[stage {}]", si + 1);
            for b in &stage.blocks {
                let _ = write!(out, "block {} {} {}", b.kind.as_str(), b.out_channels, b.stride);
                let kernels = b.kernels();
                if kernels.iter().any(|&k| k != 3) {
                    let list: Vec<String> = kernels.iter().map(usize::to_string).collect();
                    let _ = write!(out, " kernels={}", list.join(","));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Kind, output channels, stride and optional kernel override of one block.
type StageLine = (BlockKind, usize, usize, Option<Vec<usize>>);

#[derive(Default)]
struct Parser {
    name: Option<String>,
    input: Option<[usize; 3]>,
    classes: Option<usize>,
    stem: Option<StemDecl>,
    stages: Vec<Vec<StageLine>>,
}

struct Tok<'a> {
    text: &'a str,
    column: usize,
}

fn tokens(line: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Tok { text: &line[s..i], column: s + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Tok { text: &line[s..], column: s + 1 });
    }
    out
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn int(tok: &Tok<'_>, line: usize, what: &str) -> Result<usize> {
    tok.text
        .parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| perr(line, tok.column, format!("expected positive integer {what}, found `{}`", tok.text)))
}

impl Parser {
    fn run(mut self, text: &str) -> Result<ArchitectureSpec> {
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            last_line = line_no;
            let line = raw.split('#').next().unwrap_or("");
            let toks = tokens(line);
            let Some(head) = toks.first() else { continue };
            let arity = |n: usize, usage: &str| -> Result<()> {
                if toks.len() != n {
                    let col = toks.get(n).map_or(line.trim_end().len() + 1, |t| t.column);
                    return Err(perr(line_no, col, format!("expected `{usage}`")));
                }
                Ok(())
            };
            match head.text {
                "name" => {
                    arity(2, "name <identifier>")?;
                    self.name = Some(toks[1].text.to_string());
                }
                "input" => {
                    arity(2, "input <C>x<H>x<W>")?;
                    let dims: Vec<Option<usize>> =
                        toks[1].text.split('x').map(|d| d.parse().ok().filter(|&v: &usize| v > 0)).collect();
                    match dims.as_slice() {
                        [Some(c), Some(h), Some(w)] => self.input = Some([*c, *h, *w]),
                        _ => return Err(perr(line_no, toks[1].column, format!("malformed input shape `{}`", toks[1].text))),
                    }
                }
                "classes" => {
                    arity(2, "classes <K>")?;
                    self.classes = Some(int(&toks[1], line_no, "class count")?);
                }
                "stem" => {
                    arity(4, "stem <channels> <kernel> <stride>")?;
                    self.stem = Some(StemDecl {
                        channels: int(&toks[1], line_no, "channels")?,
                        kernel: int(&toks[2], line_no, "kernel")?,
                        stride: int(&toks[3], line_no, "stride")?,
                    });
                }
                t if t.starts_with('[') => {
                    let header = line.trim();
                    let inner = header
                        .strip_prefix("[stage")
                        .and_then(|r| r.strip_suffix(']'))
                        .map(str::trim)
                        .ok_or_else(|| perr(line_no, head.column, "expected `[stage N]`"))?;
                    let n: usize = inner
                        .parse()
                        .map_err(|_| perr(line_no, head.column, format!("malformed stage number `{inner}`")))?;
                    if n != self.stages.len() + 1 {
                        return Err(perr(
                            line_no,
                            head.column,
                            format!("stage {n} out of order, expected stage {}", self.stages.len() + 1),
                        ));
                    }
                    self.stages.push(Vec::new());
                }
                "block" => {
                    if toks.len() != 4 && toks.len() != 5 {
                        return Err(perr(line_no, head.column, "expected `block <kind> <channels> <stride> [kernels=..]`"));
                    }
                    let kind = match toks[1].text {
                        "basic" => BlockKind::Basic,
                        "bottleneck" => BlockKind::Bottleneck,
                        other => return Err(perr(line_no, toks[1].column, format!("unknown block kind `{other}`"))),
                    };
                    let channels = int(&toks[2], line_no, "channels")?;
                    let stride = int(&toks[3], line_no, "stride")?;
                    let kernels = match toks.get(4) {
                        None => None,
                        Some(tok) => {
                            let list = tok
                                .text
                                .strip_prefix("kernels=")
                                .ok_or_else(|| perr(line_no, tok.column, "expected `kernels=k1,k2`"))?;
                            let ks: Option<Vec<usize>> = list.split(',').map(|k| k.parse().ok()).collect();
                            let ks = ks.ok_or_else(|| perr(line_no, tok.column, format!("malformed kernel list `{list}`")))?;
                            let want = if kind == BlockKind::Basic { 2 } else { 1 };
                            if ks.len() != want {
                                return Err(perr(line_no, tok.column, format!("{} block takes {want} kernel(s)", kind.as_str())));
                            }
                            Some(ks)
                        }
                    };
                    let stage = self
                        .stages
                        .last_mut()
                        .ok_or_else(|| perr(line_no, head.column, "block outside of a `[stage N]` section"))?;
                    stage.push((kind, channels, stride, kernels));
                }
                other => return Err(perr(line_no, head.column, format!("unknown directive `{other}`"))),
            }
        }
        let end = last_line + 1;
        let input = self.input.ok_or_else(|| perr(end, 1, "missing `input <C>x<H>x<W>` header"))?;
        let classes = self.classes.ok_or_else(|| perr(end, 1, "missing `classes <K>` header"))?;
        if self.stages.is_empty() {
            return Err(perr(end, 1, "architecture declares no stages"));
        }
        let first_width = self.stages[0].first().map_or(1, |b| b.1);
        let stem = self.stem.unwrap_or(StemDecl {
            channels: first_width,
            kernel: 3,
            stride: 1,
        });
        let mut channels = stem.channels;
        let mut stages = Vec::with_capacity(self.stages.len());
        for decls in &self.stages {
            let mut blocks = Vec::with_capacity(decls.len());
            let stage_in = channels;
            for (kind, out, stride, kernels) in decls {
                blocks.push(Block::new(*kind, channels, *out, *stride, kernels.as_deref()));
                channels = *out;
            }
            let downsample = blocks.iter().any(|b| b.stride != 1) || stage_in != channels;
            stages.push(Stage {
                blocks,
                output_channels: channels,
                downsample,
            });
        }
        let spec = ArchitectureSpec {
            name: self.name.unwrap_or_else(|| "custom".into()),
            input_shape: input,
            stem,
            stages,
            classifier_head: HeadDecl {
                in_features: channels,
                classes,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mini18() {
        let a = ArchitectureSpec::parse(include_str!("../../assets/mini18.arch")).unwrap();
        assert_eq!(a.name, "mini18");
        assert_eq!(a.stages.len(), 4);
        assert!(a.stages.iter().all(|s| s.blocks.len() == 2));
        assert_eq!(a.input_shape, [3, 16, 16]);
        assert_eq!(a.classifier_head, HeadDecl { in_features: 64, classes: 10 });
        let b = &a.stages[1].blocks[0];
        assert_eq!(b.layers[0], LayerDecl::conv(3, 8, 16, 2));
        assert!(b.shortcut.is_some());
        assert!(a.stages[0].blocks[0].shortcut.is_none());
        assert_eq!(a.activation_shapes().last().unwrap(), &[64, 2, 2]);
    }

    #[test]
    fn zero_stages_is_error() {
        let err = ArchitectureSpec::parse("input 3x8x8\nclasses 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        let err = ArchitectureSpec::parse("input 3x8x8\nclasses 2\n[stage 1]\n").unwrap_err();
        assert!(matches!(err, Error::Invariant { .. }), "{err}");
    }

    #[test]
    fn errors_carry_position() {
        let err = ArchitectureSpec::parse("input 3x8x8\nclasses 2\n[stage 1]\nblock basic eight 1\n").unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (4, 13)),
            e => panic!("{e}"),
        }
        let err = ArchitectureSpec::parse("input 3x8x8\nclasses 2\n[stage 2]\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = ArchitectureSpec::parse("input 3x8\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 7, .. }));
    }

    #[test]
    fn invariant_errors_name_block() {
        let text = "input 3x8x8\nclasses 2\nstem 8 3 1\n[stage 1]\nblock bottleneck 10 1\n";
        let err = ArchitectureSpec::parse(text).unwrap_err().to_string();
        assert!(err.contains("stage 1 / block 1"), "{err}");
    }

    #[test]
    fn text_round_trip() {
        for src in [
            include_str!("../../assets/mini18.arch"),
            include_str!("../../assets/resnet18.arch"),
            include_str!("../../assets/resnet50.arch"),
        ] {
            let a = ArchitectureSpec::parse(src).unwrap();
            assert_eq!(ArchitectureSpec::parse(&a.to_text()).unwrap(), a);
        }
        let text = "input 3x8x8\nclasses 2\n[stage 1]\nblock basic 4 1 kernels=5,3\n";
        let a = ArchitectureSpec::parse(text).unwrap();
        assert_eq!(a.stages[0].blocks[0].layers[0].kernel, 5);
        assert_eq!(ArchitectureSpec::parse(&a.to_text()).unwrap(), a);
    }
}
