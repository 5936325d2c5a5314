use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const SGD_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    AdamW,
    SgdMomentum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            learning_rate,
            weight_decay,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            weight_decay: 0.0,
        }
    }
}

/// AdamW (decoupled weight decay) or SGD with momentum 0.9.
///
/// State is allocated lazily on the first step and keyed by parameter
/// position, so the same parameter order must be passed on every step.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be > 0, got {}",
                config.learning_rate
            )));
        }
        if config.weight_decay < 0.0 {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        Ok(Optimizer {
            config,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn momentum(&self) -> f64 {
        match self.config.kind {
            OptimizerKind::SgdMomentum => SGD_MOMENTUM,
            OptimizerKind::AdamW => self.beta1,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "optimizer_step",
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if !p.same_shape(g) {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "optimizer_step" });
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
            if self.config.kind == OptimizerKind::AdamW {
                self.second = self.first.clone();
            }
        } else if self.first.len() != grads.len() {
            return Err(Error::shape(
                "optimizer_step",
                "parameter count changed between steps",
            ));
        }
        self.step += 1;
        let lr = self.config.learning_rate;
        let wd = self.config.weight_decay;
        match self.config.kind {
            OptimizerKind::AdamW => {
                let t = self.step as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        *w -= lr * wd * *w;
                        m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                        v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                        let m_hat = m[k] / bc1;
                        let v_hat = v[k] / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
            OptimizerKind::SgdMomentum => {
                let first_step = self.step == 1;
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let buf = self.first[i].data_mut();
                    for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let d = gk + wd * *w;
                        buf[k] = if first_step { d } else { SGD_MOMENTUM * buf[k] + d };
                        *w -= lr * buf[k];
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        for cfg in [OptimizerConfig::adamw(0.01, 0.0), OptimizerConfig::sgd(0.01)] {
            let mut opt = Optimizer::new(cfg).unwrap();
            let mut p = Tensor::from_rows(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
            let before = p.clone();
            opt.step(&mut [&mut p], &[Tensor::zeros(1, 3)]).unwrap();
            assert_eq!(p, before);
        }
    }

    #[test]
    fn sgd_first_step_is_plain_gradient_step() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
        assert_eq!(opt.momentum(), 0.9);
        let mut p = Tensor::scalar(1.0);
        opt.step(&mut [&mut p], &[Tensor::scalar(2.0)]).unwrap();
        assert!((p.item() - 0.8).abs() < 1e-15);
        // second step accumulates velocity 0.9*2 + 2
        opt.step(&mut [&mut p], &[Tensor::scalar(2.0)]).unwrap();
        assert!((p.item() - (0.8 - 0.1 * 3.8)).abs() < 1e-12);
    }

    #[test]
    fn adamw_decays_weights_decoupled() {
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.1, 0.5)).unwrap();
        let mut p = Tensor::scalar(2.0);
        opt.step(&mut [&mut p], &[Tensor::scalar(0.0)]).unwrap();
        assert!((p.item() - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn adamw_minimises_quadratic_bowl() {
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.01, 0.0)).unwrap();
        let mut w = Tensor::scalar(1.0);
        for _ in 0..5000 {
            let g = Tensor::scalar(2.0 * w.item());
            opt.step(&mut [&mut w], &[g]).unwrap();
        }
        assert!(w.item().abs() < 1e-3, "w = {}", w.item());
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        assert!(Optimizer::new(OptimizerConfig::adamw(0.0, 0.0)).is_err());
        assert!(Optimizer::new(OptimizerConfig::sgd(-1.0)).is_err());
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
        let mut p = Tensor::zeros(2, 2);
        assert!(opt.step(&mut [&mut p], &[Tensor::zeros(2, 1)]).is_err());
    }
}
