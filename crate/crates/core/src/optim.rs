//! Adam with an inverse-square-root warmup schedule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;
use crate::transformer::ModelParams;
use crate::{Error, Result};

/// Linear warmup to `peak` over `warmup` steps, then `peak·sqrt(warmup/step)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: usize,
}

impl Schedule {
    /// Learning rate for 1-based `step`.
    pub fn rate(&self, step: usize) -> f64 {
        let step = step.max(1) as f64;
        let warmup = self.warmup.max(1) as f64;
        if step < warmup {
            self.peak * step / warmup
        } else {
            self.peak * sqrt(warmup / step)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    /// Transformer defaults: β = (0.9, 0.98), ε = 1e-9.
    pub fn new(schedule: Schedule) -> Self {
        Self {
            schedule,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One update; returns the learning rate used.
    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Vec<f64>>) -> Result<f64> {
        self.step += 1;
        let lr = self.schedule.rate(self.step);
        let bc1 = 1.0 - crate::math::powf(self.beta1, self.step as f64);
        let bc2 = 1.0 - crate::math::powf(self.beta2, self.step as f64);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("no gradient for {name}")))?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mh = *mv / bc1;
                let vh = *vv / bc2;
                *pv -= lr * mh / (sqrt(vh) + self.eps);
            }
        }
        Ok(lr)
    }
}
