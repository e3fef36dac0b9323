//! SGD with momentum and Adam, both with decoupled weight decay.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Param, ParameterSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-2,
            momentum: 0.95,
            beta2: 0.999,
            weight_decay: 1e-5,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    /// Adam with the classic `(0.9, 0.999)` moment decays.
    pub fn adam_classic(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            momentum: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            lr,
            momentum,
            beta2: 0.0,
            weight_decay: 0.0,
            eps: 0.0,
        }
    }
}

/// Anything that can hand out parameters by qualified name.
pub trait ParamStore {
    fn param_mut(&mut self, name: &str) -> Option<&mut Param>;
}

impl ParamStore for ParameterSet {
    fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.get_mut(name)
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state (per-parameter moments and the step counter).
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    slots: HashMap<String, Slot>,
    steps: u64,
    lr_scale: f64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            slots: HashMap::new(),
            steps: 0,
            lr_scale: 1.0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Multiplier applied to the base learning rate (for schedules).
    pub fn set_lr_scale(&mut self, s: f64) {
        self.lr_scale = s;
    }

    /// Applies one update to every named gradient. Frozen parameters are
    /// skipped; a non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut impl ParamStore, grads: &[(String, Tensor)]) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient for '{name}'")));
        }
        self.steps += 1;
        let t = self.steps as f64;
        let c = self.config.clone();
        let lr = c.lr * self.lr_scale;
        for (name, grad) in grads {
            let param = store
                .param_mut(name)
                .ok_or_else(|| Error::Usage(format!("gradient for unknown parameter '{name}'")))?;
            if param.frozen {
                continue;
            }
            if param.value.shape() != grad.shape() {
                return Err(Error::Config(format!(
                    "gradient shape {:?} for '{name}' with shape {:?}",
                    grad.shape(),
                    param.value.shape()
                )));
            }
            let n = grad.len();
            let slot = self.slots.entry(name.clone()).or_insert_with(|| Slot {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let p = param.value.data_mut();
            let g = grad.data();
            match c.kind {
                OptimizerKind::SgdMomentum => {
                    for i in 0..n {
                        slot.m[i] = c.momentum * slot.m[i] + g[i];
                        p[i] -= lr * slot.m[i] + lr * c.weight_decay * p[i];
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.momentum.powf(t);
                    let bc2 = 1.0 - c.beta2.powf(t);
                    for i in 0..n {
                        slot.m[i] = c.momentum * slot.m[i] + (1.0 - c.momentum) * g[i];
                        slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g[i] * g[i];
                        let m_hat = slot.m[i] / bc1;
                        let v_hat = slot.v[i] / bc2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + c.eps) + lr * c.weight_decay * p[i];
                    }
                }
            }
            if !param.value.is_finite() {
                return Err(Error::Numerical(format!(
                    "parameter '{name}' became non-finite"
                )));
            }
        }
        Ok(())
    }

    /// First/second moment estimates for a parameter (test hook).
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.slots.get(name).map(|s| (s.m.as_slice(), s.v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParameterSet {
        let mut ps = ParameterSet::new();
        ps.insert("w", Tensor::row_vector(values));
        ps
    }

    #[test]
    fn zero_grad_zero_momentum_leaves_params() {
        let mut ps = store(&[1.0, -2.0]);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0));
        opt.step(&mut ps, &[("w".into(), Tensor::zeros(1, 2))]).unwrap();
        assert_eq!(ps.tensor("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn sgd_step_matches_hand_computation() {
        let mut ps = store(&[1.0, -2.0]);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.9));
        opt.step(&mut ps, &[("w".into(), Tensor::row_vector(&[0.5, 1.0]))])
            .unwrap();
        assert_eq!(ps.tensor("w").unwrap().data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1]);
    }

    #[test]
    fn adam_first_step_bias_correction() {
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let g = [0.3, -4.0];
        let mut ps = store(&[0.0, 0.0]);
        let mut opt = Optimizer::new(cfg.clone());
        opt.step(&mut ps, &[("w".into(), Tensor::row_vector(&g))]).unwrap();
        let (m, v) = opt.moments("w").unwrap();
        for i in 0..2 {
            let m_hat = m[i] / (1.0 - cfg.momentum);
            let v_hat = v[i] / (1.0 - cfg.beta2);
            assert!((m_hat - g[i]).abs() < 1e-12);
            assert!((v_hat - g[i] * g[i]).abs() < 1e-9);
            // first Adam step moves by lr·sign(g) (up to eps)
            let expect = -cfg.lr * g[i] / (g[i].abs() + cfg.eps);
            assert!((ps.tensor("w").unwrap().data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_entries_never_move() {
        let mut ps = store(&[1.0]);
        ps.get_mut("w").unwrap().frozen = true;
        let mut opt = Optimizer::new(OptimizerConfig::default());
        for _ in 0..10 {
            opt.step(&mut ps, &[("w".into(), Tensor::row_vector(&[3.0]))])
                .unwrap();
        }
        assert_eq!(ps.tensor("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut ps = store(&[1.0]);
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let r = opt.step(&mut ps, &[("w".into(), Tensor::row_vector(&[f64::NAN]))]);
        assert!(matches!(r, Err(Error::Numerical(_))));
        assert_eq!(ps.tensor("w").unwrap().data(), &[1.0]);
    }
}
