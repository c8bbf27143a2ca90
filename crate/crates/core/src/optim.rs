//! First-order optimizers with separate learning rates for the backbone and
//! the two heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Block, Group, ModelParams};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd { momentum: f64 },
}

impl OptimizerConfig {
    pub const ADAM: OptimizerConfig = OptimizerConfig::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::invalid("adam betas must lie in [0, 1)"));
                }
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::invalid("adam epsilon must be positive"));
                }
            }
            OptimizerConfig::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::invalid("sgd momentum must lie in [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Learning rate per parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub backbone: f64,
    pub heads: f64,
}

impl GroupRates {
    pub fn for_block(&self, b: Block) -> f64 {
        match b.group() {
            Group::Backbone => self.backbone,
            Group::Heads => self.heads,
        }
    }
}

/// Optimizer state sized like the model.
#[derive(Debug, Clone)]
pub struct Optimizer<R> {
    config: OptimizerConfig,
    rates: GroupRates,
    steps: u64,
    first: ModelParams<R>,
    second: Option<ModelParams<R>>,
}

impl<R: Real> Optimizer<R> {
    pub fn new(config: OptimizerConfig, rates: GroupRates, like: &ModelParams<R>) -> Result<Self> {
        config.validate()?;
        let second = match config {
            OptimizerConfig::Adam { .. } => Some(like.zeros_like()),
            OptimizerConfig::Sgd { .. } => None,
        };
        Ok(Optimizer {
            config,
            rates,
            steps: 0,
            first: like.zeros_like(),
            second,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update in place. Entries with zero gradient and zero state stay
    /// exactly where they are.
    pub fn step(&mut self, params: &mut ModelParams<R>, grads: &ModelParams<R>) {
        self.steps += 1;
        match self.config {
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let (b1, b2) = (R::from_f64_lossy(beta1), R::from_f64_lossy(beta2));
                let eps = R::from_f64_lossy(epsilon);
                let second = self.second.as_mut().expect("adam state");
                for b in Block::ALL {
                    let lr = R::from_f64_lossy(self.rates.for_block(b));
                    let (c1, c2) = (R::from_f64_lossy(c1), R::from_f64_lossy(c2));
                    let g = grads.block(b);
                    let m = self.first.block_mut(b);
                    let v = second.block_mut(b);
                    let p = params.block_mut(b);
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (R::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (R::one() - b2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            OptimizerConfig::Sgd { momentum } => {
                let mu = R::from_f64_lossy(momentum);
                for b in Block::ALL {
                    let lr = R::from_f64_lossy(self.rates.for_block(b));
                    let g = grads.block(b);
                    let buf = self.first.block_mut(b);
                    let p = params.block_mut(b);
                    for i in 0..p.len() {
                        buf[i] = mu * buf[i] + g[i];
                        p[i] -= lr * buf[i];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ArchConfig};

    fn arch() -> ArchConfig {
        ArchConfig {
            conv1: 2,
            conv2: 3,
            num_classes: 3,
        }
    }

    const RATES: GroupRates = GroupRates {
        backbone: 1e-2,
        heads: 1e-1,
    };

    #[test]
    fn adam_first_step_moves_by_the_learning_rate() {
        let mut p: ModelParams<f64> = init_params(arch(), 1).unwrap();
        let start = p.clone();
        let mut g = p.zeros_like();
        g.block_mut(Block::PccBias)[0] = 3.0;
        g.block_mut(Block::Conv1Weight)[0] = -0.5;
        let mut opt = Optimizer::new(OptimizerConfig::ADAM, RATES, &p).unwrap();
        opt.step(&mut p, &g);
        // mhat = g, vhat = g^2, so the step is lr * sign(g) up to epsilon.
        let d_head = p.block(Block::PccBias)[0] - start.block(Block::PccBias)[0];
        let d_conv = p.block(Block::Conv1Weight)[0] - start.block(Block::Conv1Weight)[0];
        assert!((d_head + 0.1).abs() < 1e-8);
        assert!((d_conv - 0.01).abs() < 1e-8);
        assert_eq!(p.block(Block::NccWeight), start.block(Block::NccWeight));
    }

    #[test]
    fn adam_matches_scalar_trace() {
        let mut p: ModelParams<f64> = ModelParams::zeros(arch());
        let mut opt = Optimizer::new(OptimizerConfig::ADAM, RATES, &p).unwrap();
        let gs = [1.0, -2.0, 0.5];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for (t, &gv) in gs.iter().enumerate() {
            let mut g = p.zeros_like();
            g.block_mut(Block::NccBias)[1] = gv;
            opt.step(&mut p, &g);
            m = 0.9 * m + 0.1 * gv;
            v = 0.999 * v + 0.001 * gv * gv;
            let tt = (t + 1) as i32;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(tt))) / ((v / (1.0 - 0.999f64.powi(tt))).sqrt() + 1e-8);
        }
        assert!((p.block(Block::NccBias)[1] - x).abs() < 1e-15);
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn sgd_momentum_trace() {
        let mut p: ModelParams<f64> = ModelParams::zeros(arch());
        let mut opt =
            Optimizer::new(OptimizerConfig::Sgd { momentum: 0.5 }, RATES, &p).unwrap();
        let mut g = p.zeros_like();
        g.block_mut(Block::Conv2Bias)[0] = 1.0;
        opt.step(&mut p, &g);
        opt.step(&mut p, &g);
        // buf: 1, 1.5 -> x = -(0.01 + 0.015)
        assert!((p.block(Block::Conv2Bias)[0] + 0.025).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let p: ModelParams<f64> = ModelParams::zeros(arch());
        let bad = OptimizerConfig::Adam {
            beta1: 1.0,
            beta2: 0.999,
            epsilon: 1e-8,
        };
        assert!(Optimizer::new(bad, RATES, &p).is_err());
        assert!(Optimizer::new(OptimizerConfig::Sgd { momentum: -0.1 }, RATES, &p).is_err());
    }
}
