//! Training configuration and its flat `key = value` text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::optim::{GroupRates, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Confident CE on the positive head plus top-k consistency on the
    /// negative head.
    Ncct,
    /// Plain CE on every sample throughout.
    BaselineCe,
    /// Confident CE only; non-confident samples are dropped.
    PcOnly,
    /// Confident CE plus least-k consistency on the positive head.
    SingleHeadConsistency,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Ncct,
        Mode::BaselineCe,
        Mode::PcOnly,
        Mode::SingleHeadConsistency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ncct => "ncct",
            Mode::BaselineCe => "baseline_ce",
            Mode::PcOnly => "pc_only",
            Mode::SingleHeadConsistency => "single_head_consistency",
        }
    }

    /// Whether `k` affects training in this mode.
    pub fn uses_k(self) -> bool {
        matches!(self, Mode::Ncct | Mode::SingleHeadConsistency)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown mode {s:?} (expected ncct, baseline_ce, pc_only or single_head_consistency)"
                ))
            })
    }
}

/// Arithmetic used by a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::invalid(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub optimizer: OptimizerConfig,
    pub k: usize,
    pub mode: Mode,
    pub seed: u64,
    pub conv1: usize,
    pub conv2: usize,
    pub precision: Precision,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Fill the `seconds` column of the metrics CSV with wall-clock time.
    /// Off by default so repeated runs produce identical files.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 40,
            warmup_epochs: 5,
            lr_backbone: 5e-3,
            lr_heads: 5e-2,
            optimizer: OptimizerConfig::ADAM,
            k: 4,
            mode: Mode::Ncct,
            seed: 1,
            conv1: 16,
            conv2: 32,
            precision: Precision::F32,
            checkpoint_every: 0,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    /// The reference schedule: batch 128, Adam at 1e-4 (backbone) and 1e-3
    /// (heads), 40 epochs.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 128,
            lr_backbone: 1e-4,
            lr_heads: 1e-3,
            ..TrainConfig::default()
        }
    }

    pub fn arch(&self, num_classes: usize) -> ArchConfig {
        ArchConfig {
            conv1: self.conv1,
            conv2: self.conv2,
            num_classes,
        }
    }

    pub fn rates(&self) -> GroupRates {
        GroupRates {
            backbone: self.lr_backbone,
            heads: self.lr_heads,
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be >= 2"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::invalid("warmup_epochs must not exceed epochs"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        for (name, lr) in [("lr_backbone", self.lr_backbone), ("lr_heads", self.lr_heads)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if self.conv1 == 0 || self.conv2 == 0 {
            return Err(Error::invalid("conv1 and conv2 must be >= 1"));
        }
        self.optimizer.validate()
    }

    /// Checks that also need the class count.
    pub fn validate_for(&self, num_classes: usize) -> Result<()> {
        self.validate()?;
        if self.mode.uses_k() && self.k > num_classes {
            return Err(Error::invalid(format!(
                "k = {} exceeds the number of classes ({num_classes})",
                self.k
            )));
        }
        self.arch(num_classes).validate()
    }

    /// Applies one `key = value` setting. Optimizer hyperparameters use the
    /// keys `beta1`, `beta2`, `epsilon` and `momentum`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "warmup_epochs" => self.warmup_epochs = num(key, value)?,
            "lr_backbone" => self.lr_backbone = num(key, value)?,
            "lr_heads" => self.lr_heads = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "conv1" => self.conv1 = num(key, value)?,
            "conv2" => self.conv2 = num(key, value)?,
            "precision" => self.precision = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "record_timing" => self.record_timing = num(key, value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => OptimizerConfig::ADAM,
                    "sgd" => OptimizerConfig::Sgd { momentum: 0.9 },
                    _ => return Err(Error::invalid(format!("unknown optimizer {value:?}"))),
                }
            }
            "beta1" | "beta2" | "epsilon" => {
                let x: f64 = num(key, value)?;
                match &mut self.optimizer {
                    OptimizerConfig::Adam {
                        beta1,
                        beta2,
                        epsilon,
                    } => match key {
                        "beta1" => *beta1 = x,
                        "beta2" => *beta2 = x,
                        _ => *epsilon = x,
                    },
                    OptimizerConfig::Sgd { .. } => {
                        return Err(Error::invalid(format!("{key} requires optimizer = adam")))
                    }
                }
            }
            "momentum" => match &mut self.optimizer {
                OptimizerConfig::Sgd { momentum } => *momentum = num(key, value)?,
                OptimizerConfig::Adam { .. } => {
                    return Err(Error::invalid("momentum requires optimizer = sgd"))
                }
            },
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a whole config file on top of `self`. `#` starts a comment;
    /// `optimizer` should precede its hyperparameters.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: expected `key = value`", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }
}

/// The canonical text form; `TrainConfig::from_text` reads it back exactly.
impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "warmup_epochs = {}", self.warmup_epochs)?;
        writeln!(f, "lr_backbone = {:?}", self.lr_backbone)?;
        writeln!(f, "lr_heads = {:?}", self.lr_heads)?;
        match self.optimizer {
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                writeln!(f, "optimizer = adam")?;
                writeln!(f, "beta1 = {beta1:?}")?;
                writeln!(f, "beta2 = {beta2:?}")?;
                writeln!(f, "epsilon = {epsilon:?}")?;
            }
            OptimizerConfig::Sgd { momentum } => {
                writeln!(f, "optimizer = sgd")?;
                writeln!(f, "momentum = {momentum:?}")?;
            }
        }
        writeln!(f, "k = {}", self.k)?;
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "conv1 = {}", self.conv1)?;
        writeln!(f, "conv2 = {}", self.conv2)?;
        writeln!(f, "precision = {}", self.precision)?;
        writeln!(f, "checkpoint_every = {}", self.checkpoint_every)?;
        writeln!(f, "record_timing = {}", self.record_timing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_are_valid_and_desk_scale() {
        let c = TrainConfig::default();
        c.validate_for(7).unwrap();
        assert_eq!((c.batch_size, c.epochs, c.warmup_epochs, c.k), (64, 40, 5, 4));
        assert_eq!(c.optimizer, OptimizerConfig::ADAM);
    }

    #[test]
    fn paper_preset() {
        let c = TrainConfig::paper();
        assert_eq!(c.batch_size, 128);
        assert_eq!((c.lr_backbone, c.lr_heads), (1e-4, 1e-3));
        assert_eq!(c.epochs, 40);
        c.validate_for(7).unwrap();
    }

    #[test]
    fn validation_rules() {
        let ok = TrainConfig::default();
        let bad = [
            TrainConfig { batch_size: 1, ..ok.clone() },
            TrainConfig { warmup_epochs: 41, ..ok.clone() },
            TrainConfig { k: 0, ..ok.clone() },
            TrainConfig { lr_heads: f64::NAN, ..ok.clone() },
            TrainConfig { epochs: 0, warmup_epochs: 0, ..ok.clone() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(TrainConfig { k: 8, ..ok.clone() }.validate_for(7).is_err());
        TrainConfig { k: 8, mode: Mode::BaselineCe, ..ok.clone() }.validate_for(7).unwrap();
        TrainConfig { k: 7, warmup_epochs: 40, ..ok }.validate_for(7).unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::paper();
        c.mode = Mode::SingleHeadConsistency;
        c.lr_backbone = 3.3e-4;
        c.seed = 99;
        c.record_timing = true;
        assert_eq!(TrainConfig::from_text(&c.to_string()).unwrap(), c);
        c.optimizer = OptimizerConfig::Sgd { momentum: 0.7 };
        assert_eq!(TrainConfig::from_text(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn parser_rejects_junk() {
        assert!(TrainConfig::from_text("epochs 5").is_err());
        assert!(TrainConfig::from_text("epoch = 5").is_err());
        assert!(TrainConfig::from_text("epochs = five").is_err());
        assert!(TrainConfig::from_text("mode = fancy").is_err());
        assert!(TrainConfig::from_text("momentum = 0.5").is_err());
        let c = TrainConfig::from_text("# comment\n\n  k = 2  \nepochs = 9 # trailing\n").unwrap();
        assert_eq!((c.k, c.epochs), (2, 9));
    }

    #[test]
    fn error_names_the_line() {
        let e = TrainConfig::from_text("k = 2\nbogus = 1").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!(Mode::Ncct.uses_k() && !Mode::PcOnly.uses_k());
    }

    proptest! {
        #[test]
        fn floats_survive_the_text_form(lr in 1e-8f64..1.0, b2 in 0.5f64..0.99999) {
            let mut c = TrainConfig { lr_backbone: lr, ..TrainConfig::default() };
            c.optimizer = OptimizerConfig::Adam { beta1: 0.9, beta2: b2, epsilon: 1e-8 };
            prop_assert_eq!(TrainConfig::from_text(&c.to_string()).unwrap(), c);
        }
    }
}
