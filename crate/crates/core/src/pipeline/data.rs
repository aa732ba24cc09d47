//! Procedural grating datasets and their on-disk format.
//!
//! Each image is a sinusoidal grating with random phase, contrast and
//! per-channel gain plus Gaussian noise. SOURCE classes differ in
//! orientation at high spatial frequency; TARGET classes combine five
//! orientations with two low-frequency bands, so telling classes apart
//! needs a wider spatial context.
//!
//! File layout (little-endian): magic `AFTD`, version u32, count u64,
//! channels/height/width/classes u32, `count * C*H*W` f32 pixels, `count`
//! u32 labels.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::{NdArray, Rng};
use crate::supernet::LabeledSet;

const MAGIC: &[u8; 4] = b"AFTD";
const VERSION: u32 = 1;

pub const CLASSES: usize = 10;
pub const IMAGE_SHAPE: [usize; 3] = [3, 16, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Source,
    Target,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Source => "source",
            Task::Target => "target",
        }
    }
}

/// Train, validation and test splits of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataSpec {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            train: 2000,
            val: 500,
            test: 500,
        }
    }
}

fn render(task: Task, class: usize, rng: &mut Rng, out: &mut Vec<f64>) {
    let [c, h, w] = IMAGE_SHAPE;
    let (theta, freq, noise) = match task {
        Task::Source => (class as f64 * PI / CLASSES as f64, rng.uniform_range(0.28, 0.36), 0.2),
        Task::Target => {
            let band = if class < 5 {
                rng.uniform_range(0.06, 0.09)
            } else {
                rng.uniform_range(0.13, 0.17)
            };
            ((class % 5) as f64 * PI / 5.0 + PI / 10.0, band, 0.3)
        }
    };
    let theta = theta + rng.uniform_range(-0.05, 0.05);
    let phase = rng.uniform_range(0.0, 2.0 * PI);
    let contrast = rng.uniform_range(0.6, 1.0);
    let gains: Vec<f64> = (0..c).map(|_| rng.uniform_range(0.7, 1.3)).collect();
    let (ct, st) = (theta.cos(), theta.sin());
    for gain in gains {
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 * ct + y as f64 * st;
                let v = contrast * gain * (2.0 * PI * freq * u + phase).sin() + noise * rng.normal();
                out.push(v as f32 as f64);
            }
        }
    }
}

/// `n` images with labels cycling through the classes in shuffled order.
pub fn generate(task: Task, n: usize, rng: &mut Rng) -> LabeledSet {
    let mut labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    rng.shuffle(&mut labels);
    let mut data = Vec::with_capacity(n * IMAGE_SHAPE.iter().product::<usize>());
    for &l in &labels {
        render(task, l, rng, &mut data);
    }
    let [c, h, w] = IMAGE_SHAPE;
    LabeledSet::new(NdArray::from_vec(&[n, c, h, w], data), labels).expect("shapes agree")
}

pub fn generate_splits(task: Task, spec: &DataSpec) -> Splits {
    let root = Rng::new(spec.seed).split(task.name());
    Splits {
        train: generate(task, spec.train, &mut root.split("train")),
        val: generate(task, spec.val, &mut root.split("val")),
        test: generate(task, spec.test, &mut root.split("test")),
    }
}

pub fn to_bytes(set: &LabeledSet) -> Vec<u8> {
    let shape = set.inputs.shape();
    let mut out = Vec::with_capacity(32 + set.inputs.len() * 4 + set.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for &d in &shape[1..] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(CLASSES as u32).to_le_bytes());
    for &v in set.inputs.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &l in &set.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<LabeledSet> {
    let bad = |m: &str| Error::Invalid(format!("dataset file: {m}"));
    if bytes.len() < 32 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(bad("unsupported version"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let (c, h, w, classes) = (u32_at(16) as usize, u32_at(20) as usize, u32_at(24) as usize, u32_at(28) as usize);
    let pixels = n * c * h * w;
    let expected = 32 + 4 * pixels + 4 * n;
    if bytes.len() != expected {
        return Err(bad(&format!("{} bytes, expected {expected}", bytes.len())));
    }
    let data = bytes[32..32 + 4 * pixels]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    let labels: Vec<usize> = bytes[32 + 4 * pixels..]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label: l, classes });
    }
    LabeledSet::new(NdArray::new(vec![n, c, h, w], data)?, labels)
}

pub fn save(set: &LabeledSet, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(set)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<LabeledSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}
