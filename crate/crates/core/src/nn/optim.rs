use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Update rule applied tensor by tensor. `state` is the slot index of the
/// tensor, so one optimizer instance serves a whole parameter set.
pub trait Optimizer<T: Real> {
    fn step(&mut self, slot: usize, param: &mut [T], grad: &[T]);

    /// Marks the end of one update over all tensors.
    fn advance(&mut self);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, slot: usize, param: &mut [T], grad: &[T]) {
        debug_assert_eq!(param.len(), grad.len());
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].len() != param.len() {
            self.m[slot] = vec![T::zero(); param.len()];
            self.v[slot] = vec![T::zero(); param.len()];
        }
        let c = &self.config;
        let t = (self.step + 1) as i32;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let corr1 = T::from_f64(1.0 - c.beta1.powi(t));
        let corr2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        let wd = T::from_f64(c.weight_decay);
        let one = T::one();
        for (((p, &g), m), v) in param
            .iter_mut()
            .zip(grad)
            .zip(self.m[slot].iter_mut())
            .zip(self.v[slot].iter_mut())
        {
            let g = g + wd * *p;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    fn advance(&mut self) {
        self.step += 1;
    }
}

/// Plain gradient descent.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl<T: Real> Optimizer<T> for Sgd {
    fn step(&mut self, _slot: usize, param: &mut [T], grad: &[T]) {
        let lr = T::from_f64(self.lr);
        for (p, &g) in param.iter_mut().zip(grad) {
            *p = *p - lr * g;
        }
    }

    fn advance(&mut self) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::<f64>::new(AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        let g = [0.3, -4.0, 1e-3];
        opt.step(0, &mut p, &g);
        opt.advance();
        for (after, before) in p.iter().zip([1.0, -2.0, 0.5]) {
            let d = (after - before).abs();
            assert!(d <= 0.001 && d >= 0.999 * 0.001, "{d}");
        }
        assert!(p[0] < 1.0 && p[1] > -2.0);
    }

    #[test]
    fn adam_tracks_slots_independently() {
        let mut a = Adam::<f32>::new(AdamConfig::default());
        let mut b = Adam::<f32>::new(AdamConfig::default());
        let (mut x, mut y) = (vec![1.0f32; 2], vec![1.0f32; 2]);
        let mut z = vec![0.0f32; 3];
        a.step(0, &mut x, &[1.0, 1.0]);
        a.step(1, &mut z, &[5.0, 5.0, 5.0]);
        b.step(0, &mut y, &[1.0, 1.0]);
        assert_eq!(x, y);
    }

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0f64];
        Optimizer::step(&mut Sgd { lr: 0.5 }, 0, &mut p, &[2.0]);
        assert_eq!(p, vec![0.0]);
    }
}
