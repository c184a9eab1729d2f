//! Optimizers and the plateau learning-rate schedule.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::tensor::Real;

pub const SGD_MOMENTUM: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// `v ← μv + g`, `θ ← θ − lr·v`.
    SgdMomentum,
    /// Bias-corrected Adam with weight decay applied directly to `θ`.
    AdamW,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SgdMomentum => "sgd_momentum",
            Self::AdamW => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" | "sgd" => Ok(Self::SgdMomentum),
            "adamw" | "adam_decoupled_wd" => Ok(Self::AdamW),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Per-parameter optimizer moments, kept in 64-bit regardless of the
/// parameter precision.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            momentum: SGD_MOMENTUM,
            weight_decay,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter that has a gradient.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        for (name, theta) in params.params_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for parameter {name:?}")))?;
            let n = theta.len();
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    for ((p, &gi), v) in theta.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *v = self.momentum * *v + gi.as_f64();
                        *p = T::of(p.as_f64() - lr * *v);
                    }
                }
                OptimizerKind::AdamW => {
                    let s = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
                    let c1 = 1.0 - ADAM_BETA1.powi(t);
                    let c2 = 1.0 - ADAM_BETA2.powi(t);
                    let data = theta.data_mut();
                    for i in 0..n {
                        let gi = g.data()[i].as_f64();
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        s[i] = ADAM_BETA2 * s[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = s[i] / c2;
                        let p = data[i].as_f64();
                        let p = p - lr * self.weight_decay * p - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        data[i] = T::of(p);
                    }
                }
            }
        }
        Ok(())
    }
}

pub const PLATEAU_FACTOR: f64 = 0.5;
pub const PLATEAU_PATIENCE: usize = 20;
pub const PLATEAU_THRESHOLD: f64 = 1e-4;
pub const MIN_LR: f64 = 1e-6;

/// Halve the learning rate when the monitored metric (higher is better)
/// stops improving for more than `patience` epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(lr: f64) -> Self {
        Self::with_patience(lr, PLATEAU_PATIENCE)
    }

    pub fn with_patience(lr: f64, patience: usize) -> Self {
        Self {
            lr,
            patience,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    /// Record one epoch's metric and return the learning rate to use next.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric > self.best + PLATEAU_THRESHOLD {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.lr = (self.lr * PLATEAU_FACTOR).max(MIN_LR);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert_param("x", Tensor::from_f64(&[1], &[v]).unwrap());
        s
    }

    fn grad(v: f64) -> Grads<f64> {
        Grads([("x".to_string(), Tensor::from_f64(&[1], &[v]).unwrap())].into())
    }

    #[test]
    fn sgd_geometric_decay() {
        let mut s = scalar_store(1.0);
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum, 0.0);
        opt.momentum = 0.0;
        let mut expect = 1.0;
        for _ in 0..20 {
            let x = s.param("x").unwrap().data()[0];
            assert!((x - expect).abs() < 1e-12);
            opt.step(&mut s, &grad(x), 0.1).unwrap();
            expect *= 0.9;
        }
    }

    #[test]
    fn adam_first_step_is_unit() {
        let mut s = scalar_store(0.5);
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.0);
        opt.step(&mut s, &grad(1.0), 0.001).unwrap();
        assert!((s.param("x").unwrap().data()[0] - 0.499).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        for kind in [OptimizerKind::SgdMomentum, OptimizerKind::AdamW] {
            let mut s = scalar_store(0.7);
            let mut opt = Optimizer::new(kind, 0.0);
            for _ in 0..5 {
                opt.step(&mut s, &grad(0.0), 0.1).unwrap();
            }
            assert_eq!(s.param("x").unwrap().data()[0], 0.7);
        }
    }

    #[test]
    fn plateau_halves_once_then_floors() {
        let mut p = Plateau::with_patience(0.1, 3);
        for i in 0..10 {
            assert_eq!(p.observe(i as f64), 0.1);
        }
        let mut p = Plateau::with_patience(0.1, 3);
        p.observe(0.5);
        for _ in 0..3 {
            assert_eq!(p.observe(0.5), 0.1);
        }
        assert_eq!(p.observe(0.5), 0.05);
        for _ in 0..1000 {
            p.observe(0.5);
        }
        assert_eq!(p.lr, MIN_LR);
    }
}
