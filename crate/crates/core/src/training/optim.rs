use std::collections::BTreeMap;

use crate::model::Params;
use crate::numerics::Tensor;

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient (no path to the loss this
    /// step) are skipped and keep their moments.
    pub fn update(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let p = p.data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Inverse square-root schedule with linear warmup:
/// `scale · d^-0.5 · min(s^-0.5, s · w^-1.5)` for 1-based step `s`.
pub fn inverse_sqrt_lr(step: u64, d_model: usize, warmup: u64, scale: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    scale * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_with_fresh_state_is_a_no_op() {
        let mut p = Params::new();
        p.insert("w", Tensor::new(vec![3], vec![0.5, -1.25, 3.0]).unwrap());
        let before = p.clone();
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(&[3]))]);
        let mut adam = Adam::new(0.9, 0.98, 1e-9);
        adam.update(&mut p, &grads, 0.1);
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = Params::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let grads = BTreeMap::from([("w".to_string(), Tensor::new(vec![2], vec![0.3, -2.0]).unwrap())]);
        let mut adam = Adam::new(0.9, 0.98, 1e-9);
        adam.update(&mut p, &grads, 0.01);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn schedule_peaks_at_warmup() {
        let at = |s| inverse_sqrt_lr(s, 64, 100, 1.0);
        assert!(at(50) < at(100));
        assert!(at(200) < at(100));
        assert!((at(100) - 64f64.powf(-0.5) * 0.1).abs() < 1e-15);
    }
}
