use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Anything that owns named parameters in a fixed visiting order.
pub trait Parameterized<T: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }
}

/// Step decay: `base · 10^(-⌊iteration / step⌋)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub step: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { base: 0.001, step: 2_000 }
    }
}

impl LrSchedule {
    /// Decay every 50k iterations, as used for full-scale KITTI training.
    pub fn full_scale() -> Self {
        LrSchedule { base: 0.001, step: 50_000 }
    }

    pub fn lr(&self, iteration: usize) -> f64 {
        self.base * 10f64.powi(-((iteration / self.step.max(1)) as i32))
    }
}

pub fn lr_schedule(iteration: usize, schedule: &LrSchedule) -> f64 {
    schedule.lr(iteration)
}

/// SGD with classic velocity-form momentum: `v ← μ·v − lr·g`, `p ← p + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    pub fn step<M: Parameterized<f32> + ?Sized>(&mut self, model: &mut M) {
        let (lr, mu) = (self.lr as f32, self.momentum as f32);
        let velocity = &mut self.velocity;
        let mut i = 0;
        model.visit_params_mut(&mut |_, p| {
            if velocity.len() <= i {
                velocity.push(vec![0.0; p.len()]);
            }
            sgd_momentum_step(&mut p.value, &p.grad, &mut velocity[i], lr, mu);
            i += 1;
        });
    }
}

/// Global L2 norm of all parameter gradients, accumulated in f64.
pub fn grad_norm<T: Scalar, M: Parameterized<T> + ?Sized>(model: &M) -> f64 {
    let mut sq = 0.0f64;
    model.visit_params(&mut |_, p| {
        sq += p.grad.iter().map(|g| g.to_f64().unwrap().powi(2)).sum::<f64>();
    });
    sq.sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar, M: Parameterized<T> + ?Sized>(model: &mut M, max_norm: f64) -> f64 {
    let norm = grad_norm(model);
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm).unwrap();
        model.visit_params_mut(&mut |_, p| p.grad.iter_mut().for_each(|g| *g = *g * s));
    }
    norm
}

/// One velocity-form momentum update of a single buffer.
pub fn sgd_momentum_step<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, momentum: T) {
    debug_assert!(params.len() == grads.len() && params.len() == velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}
