//! First-order optimizers over the parameter list of an [`UnrolledNetwork`].

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::network::UnrolledNetwork;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd-momentum",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd-momentum" => Ok(OptimizerKind::SgdMomentum),
            _ => Err(Error::arg("OptimizerKind", "expected adam or sgd-momentum")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// First moments (Adam) or velocities (SGD).
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    /// Adam uses `β = (0.9, 0.999)` and `ε = 1e-8`; SGD uses momentum 0.9.
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::arg("Optimizer", "learning rate must be positive"));
        }
        Ok(Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update with `grads` in parameter order.
    pub fn step(&mut self, net: &mut UnrolledNetwork, grads: &[Tensor]) -> Result<()> {
        let params = net.parameters();
        if params.len() != grads.len() {
            return Err(Error::dim("Optimizer::step", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::dim("Optimizer::step", p.shape(), g.shape()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            if self.kind == OptimizerKind::Adam {
                self.v = self.m.clone();
            }
        }
        self.t += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::SgdMomentum => {
                let velocity = &mut self.m;
                net.update_parameters(|i, p| {
                    let vel = &mut velocity[i];
                    for ((v, g), w) in vel.data_mut().iter_mut().zip(grads[i].data()).zip(p.data_mut()) {
                        *v = 0.9 * *v + g;
                        *w -= lr * *v;
                    }
                });
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let c1 = 1.0 - libm::pow(b1, self.t as f64);
                let c2 = 1.0 - libm::pow(b2, self.t as f64);
                let (ms, vs) = (&mut self.m, &mut self.v);
                net.update_parameters(|i, p| {
                    let m = ms[i].data_mut();
                    let v = vs[i].data_mut();
                    for (j, w) in p.data_mut().iter_mut().enumerate() {
                        let g = grads[i].data()[j];
                        m[j] = b1 * m[j] + (1.0 - b1) * g;
                        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                        *w -= lr * (m[j] / c1) / (libm::sqrt(v[j] / c2) + eps);
                    }
                });
            }
        }
        Ok(())
    }
}
