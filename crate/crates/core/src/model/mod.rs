//! Shared convolutional backbone with a positive-class head (`pcc`) and a
//! negative-class head (`ncc`).
//!
//! Backbone: conv3x3(1 -> c1, pad 1) + ReLU + maxpool2, conv3x3(c1 -> c2,
//! pad 1) + ReLU + maxpool2, global average pool, giving `D = c2` features.
//! Each head is an affine `D -> C` map followed by softmax.

mod checkpoint;
mod gradcheck;
mod layers;
mod network;
mod objective;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use gradcheck::{central_difference, grad_check, GradCheckReport, FD_STEP};
pub use network::{backward, forward, Forward, ImageBatch, LogitGrads, PredictionBundle};
pub use objective::{
    gradient_at, loss_and_gradient, objective_loss, ConsistencyHead, ConsistencyTerm, GradientReport, Objective,
    TrainBatch,
};

/// Channel widths and class count. The feature dimension `D` equals `conv2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchConfig {
    pub conv1: usize,
    pub conv2: usize,
    pub num_classes: usize,
}

impl ArchConfig {
    /// 16 -> 32 channel backbone used for the toy benchmark.
    pub fn desk(num_classes: usize) -> Self {
        ArchConfig {
            conv1: 16,
            conv2: 32,
            num_classes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.conv2
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv1 < 1 || self.conv2 < 1 {
            return Err(Error::invalid(format!(
                "feature dimension must satisfy D >= 1 (conv1 = {}, conv2 = {})",
                self.conv1, self.conv2
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "num_classes must satisfy C >= 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        Block::ALL.iter().map(|b| b.len(self)).sum()
    }
}

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Named parameter tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Conv1Weight,
    Conv1Bias,
    Conv2Weight,
    Conv2Bias,
    PccWeight,
    PccBias,
    NccWeight,
    NccBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Backbone,
    Heads,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::Conv1Weight,
        Block::Conv1Bias,
        Block::Conv2Weight,
        Block::Conv2Bias,
        Block::PccWeight,
        Block::PccBias,
        Block::NccWeight,
        Block::NccBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Conv1Weight => "conv1.weight",
            Block::Conv1Bias => "conv1.bias",
            Block::Conv2Weight => "conv2.weight",
            Block::Conv2Bias => "conv2.bias",
            Block::PccWeight => "pcc.weight",
            Block::PccBias => "pcc.bias",
            Block::NccWeight => "ncc.weight",
            Block::NccBias => "ncc.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Block> {
        Block::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn group(self) -> Group {
        match self {
            Block::Conv1Weight | Block::Conv1Bias | Block::Conv2Weight | Block::Conv2Bias => {
                Group::Backbone
            }
            _ => Group::Heads,
        }
    }

    pub fn is_ncc(self) -> bool {
        matches!(self, Block::NccWeight | Block::NccBias)
    }

    pub fn is_pcc(self) -> bool {
        matches!(self, Block::PccWeight | Block::PccBias)
    }

    /// Tensor shape. Conv weights are `[out, ky, kx, in]`.
    pub fn shape(self, a: &ArchConfig) -> Vec<usize> {
        let d = a.feature_dim();
        match self {
            Block::Conv1Weight => vec![a.conv1, KERNEL, KERNEL, 1],
            Block::Conv1Bias => vec![a.conv1],
            Block::Conv2Weight => vec![a.conv2, KERNEL, KERNEL, a.conv1],
            Block::Conv2Bias => vec![a.conv2],
            Block::PccWeight | Block::NccWeight => vec![a.num_classes, d],
            Block::PccBias | Block::NccBias => vec![a.num_classes],
        }
    }

    pub fn len(self, a: &ArchConfig) -> usize {
        self.shape(a).iter().product()
    }

    fn fan_in(self, a: &ArchConfig) -> Option<usize> {
        match self {
            Block::Conv1Weight => Some(TAPS),
            Block::Conv2Weight => Some(TAPS * a.conv1),
            Block::PccWeight | Block::NccWeight => Some(a.feature_dim()),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// All trainable tensors. Gradients use the same type so their shapes are
/// congruent with the parameters by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<R> {
    arch: ArchConfig,
    tensors: [Vec<R>; 8],
}

pub type Gradients<R> = ModelParams<R>;

impl<R: Real> ModelParams<R> {
    pub fn zeros(arch: ArchConfig) -> Self {
        ModelParams {
            arch,
            tensors: Block::ALL.map(|b| vec![R::zero(); b.len(&arch)]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    pub fn from_blocks(arch: ArchConfig, tensors: [Vec<R>; 8]) -> Result<Self> {
        arch.validate()?;
        for b in Block::ALL {
            if tensors[b.index()].len() != b.len(&arch) {
                return Err(Error::Shape(format!(
                    "{b} has {} values, expected {}",
                    tensors[b.index()].len(),
                    b.len(&arch)
                )));
            }
        }
        Ok(ModelParams { arch, tensors })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn block(&self, b: Block) -> &[R] {
        &self.tensors[b.index()]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [R] {
        &mut self.tensors[b.index()]
    }

    pub fn blocks(&self) -> impl Iterator<Item = (Block, &[R])> {
        Block::ALL.into_iter().map(move |b| (b, self.block(b)))
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    /// Flat view in block order, for finite-difference probing.
    pub fn get_flat(&self, mut idx: usize) -> R {
        for t in &self.tensors {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn set_flat(&mut self, mut idx: usize, v: R) {
        for t in &mut self.tensors {
            if idx < t.len() {
                t[idx] = v;
                return;
            }
            idx -= t.len();
        }
        panic!("flat parameter index out of range")
    }

    /// Block and in-block offset of a flat index.
    pub fn locate_flat(&self, mut idx: usize) -> (Block, usize) {
        for b in Block::ALL {
            let len = self.block(b).len();
            if idx < len {
                return (b, idx);
            }
            idx -= len;
        }
        panic!("flat parameter index out of range")
    }

    pub fn first_non_finite(&self) -> Option<Block> {
        self.blocks()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
            .map(|(b, _)| b)
    }

    pub fn cast<S: Real>(&self) -> ModelParams<S> {
        ModelParams {
            arch: self.arch,
            tensors: self
                .tensors
                .clone()
                .map(|t| t.into_iter().map(|v| S::from_f64_lossy(v.as_f64())).collect()),
        }
    }

    /// `self += other * scale`, elementwise over every block.
    pub fn add_scaled(&mut self, other: &Self, scale: R) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y * scale;
            }
        }
    }
}

/// Weights uniform in `±sqrt(6 / fan_in)` (standard deviation
/// `sqrt(2 / fan_in)`); biases zero. Draws are made in f64 and rounded into
/// `R`, so f32 and f64 initializations agree up to rounding.
pub fn init_params<R: Real>(arch: ArchConfig, seed: u64) -> Result<ModelParams<R>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(arch);
    for b in Block::ALL {
        if let Some(fan_in) = b.fan_in(&arch) {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in params.block_mut(b) {
                *v = R::from_f64_lossy(rng.random_range(-bound..bound));
            }
        }
    }
    Ok(params)
}

/// Target standard deviation of a weight block under [`init_params`].
pub fn init_std(block: Block, arch: &ArchConfig) -> Option<f64> {
    block.fan_in(arch).map(|f| (2.0 / f as f64).sqrt())
}
