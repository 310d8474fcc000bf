use std::collections::HashMap;

use crate::numcore::{Matrix, Param, ParamId};

/// Optimizer and schedule settings. Defaults are the reference recipe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step_epochs: usize,
    pub step_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            step_epochs: 10,
            step_factor: 0.1,
            epochs: 40,
            batch_size: 256,
        }
    }
}

impl SgdConfig {
    /// `lr0 * step_factor^floor(epoch / step_epochs)`.
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.step_factor.powi((epoch / self.step_epochs) as i32)
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.lr0 > 0.0
            && self.momentum >= 0.0
            && self.weight_decay >= 0.0
            && self.step_epochs > 0
            && self.step_factor > 0.0
            && self.epochs > 0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(crate::OtsError::Config(format!("invalid SGD settings {self:?}")))
        }
    }
}

/// Momentum SGD with coupled weight decay; velocity is kept per parameter.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: HashMap<ParamId, Matrix>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Self {
        Self {
            cfg,
            velocity: HashMap::new(),
        }
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    /// `v <- m v + g + wd w` (no decay for exempt params), `w <- w - lr v`.
    pub fn step<'p>(&mut self, params: impl IntoIterator<Item = &'p mut Param>, epoch: usize) {
        let lr = self.cfg.lr(epoch);
        for p in params {
            let (rows, cols) = p.shape();
            let wd = if p.decay_exempt() { 0.0 } else { self.cfg.weight_decay };
            let v = self
                .velocity
                .entry(p.id())
                .or_insert_with(|| Matrix::zeros(rows, cols));
            let momentum = self.cfg.momentum;
            {
                let vs = v.as_mut_slice();
                let gs = p.grad().as_slice();
                let ws = p.value().as_slice();
                for i in 0..vs.len() {
                    vs[i] = momentum * vs[i] + gs[i] + wd * ws[i];
                }
            }
            let vs = v.as_slice();
            for (w, dv) in p.value_mut().as_mut_slice().iter_mut().zip(vs) {
                *w -= lr * dv;
            }
        }
    }
}
