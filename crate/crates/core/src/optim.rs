//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Step decay: `lr = initial * factor^(epoch / interval)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { initial: 1e-3, decay_factor: 0.5, decay_interval: 20 }
    }
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        let k = if self.decay_interval == 0 { 0 } else { epoch / self.decay_interval };
        self.initial * self.decay_factor.powi(k as i32)
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; n], vec![0.0; n]),
        };
        Optimizer { kind, m, v, t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t as i32);
                let c2 = 1.0 - B2.powi(self.t as i32);
                for k in 0..params.len() {
                    let g = grad[k];
                    self.m[k] = B1 * self.m[k] + (1.0 - B1) * g;
                    self.v[k] = B2 * self.v[k] + (1.0 - B2) * g * g;
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    params[k] -= lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
    }
}
