//! Adam with decoupled weight decay.
//!
//! ```text
//! p ← p · (1 − lr·λ)
//! m ← β₁·m + (1 − β₁)·g
//! v ← β₂·v + (1 − β₂)·g²
//! p ← p − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
//! ```
//!
//! The decay term acts on the weights directly and never enters the moments.

use crate::autograd::Parameter;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW update of a flat parameter buffer. `step` counts from 1.
pub fn adamw_step<T: Real>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], step: u64, cfg: &AdamWConfig) {
    assert!(step >= 1, "AdamW step counter starts at 1");
    assert!(params.len() == grads.len() && m.len() == params.len() && v.len() == params.len());
    let lr = T::lit(cfg.learning_rate);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let bc1 = one - b1.powi(step as i32);
    let bc2 = one - b2.powi(step as i32);
    let decay = one - lr * T::lit(cfg.weight_decay);
    let eps = T::lit(cfg.eps);
    for i in 0..params.len() {
        let g = grads[i];
        params[i] *= decay;
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer state over a fixed, ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Real> {
    pub config: AdamWConfig,
    /// Number of updates applied so far.
    pub step: u64,
    /// First and second moments, one pair per parameter.
    pub moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &[&Parameter<T>]) -> Self {
        AdamW {
            config,
            step: 0,
            moments: params
                .iter()
                .map(|p| (vec![T::zero(); p.tensor.len()], vec![T::zero(); p.tensor.len()]))
                .collect(),
        }
    }

    /// Applies one update from the gradients currently stored on `params`.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn update(&mut self, params: &[&Parameter<T>]) {
        assert_eq!(params.len(), self.moments.len(), "parameter list changed");
        self.step += 1;
        for (p, (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            let grad = p.tensor.grad().unwrap_or_else(|| vec![T::zero(); p.tensor.len()]);
            let mut data = p.tensor.data_mut();
            adamw_step(&mut data, &grad, m, v, self.step, &self.config);
        }
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(params: &[&Parameter<T>], max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter_map(|p| p.tensor.grad())
        .flat_map(|g| g.into_iter().map(|x| x.as_f64() * x.as_f64()))
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let scale = T::lit(max_norm / total);
        for p in params {
            let mut slot = p.tensor.0.grad.borrow_mut();
            if let Some(g) = slot.as_mut() {
                g.iter_mut().for_each(|x| *x *= scale);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_grad_without_decay_is_identity() {
        let mut p = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adamw_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &cfg(1e-3, 0.0));
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn zero_grad_with_decay_shrinks_exactly() {
        let (lr, wd) = (0.1, 0.3);
        let mut p = vec![2.0, -0.5];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adamw_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &cfg(lr, wd));
        assert_eq!(p, vec![2.0 * (1.0 - lr * wd), -0.5 * (1.0 - lr * wd)]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = vec![0.7];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adamw_step(&mut p, &[5.0], &mut m, &mut v, 1, &cfg(0.0, 0.01));
        assert_eq!(p, vec![0.7]);
    }

    /// Hand trace with lr=0.1, β₁=0.9, β₂=0.999, ε=1e-8, λ=0.01, p₀=1, g=1:
    ///
    /// With a constant gradient, m/(1-β₁ᵗ) = 1 and v/(1-β₂ᵗ) = 1 at every
    /// step, so each update is p ← p·(1 − 0.001) − 0.1/(1 + 1e-8).
    ///   t=1: 0.999           − 0.099999999 = 0.899000001
    ///   t=2: 0.898101000999  − 0.099999999 = 0.798101001999
    ///   t=3: 0.797302900997… − 0.099999999 = 0.697302901997…
    #[test]
    fn three_step_hand_trace() {
        let c = AdamWConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        };
        let mut p = vec![1.0f64];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        let expected = [0.899_000_001, 0.798_101_001_999, 0.697_302_901_997];
        for (t, want) in expected.iter().enumerate() {
            adamw_step(&mut p, &[1.0], &mut m, &mut v, t as u64 + 1, &c);
            assert!((p[0] - want).abs() < 1e-11, "step {}: {} vs {}", t + 1, p[0], want);
        }
    }

    #[test]
    fn optimizer_treats_missing_grad_as_zero() {
        let p = Parameter::<f64>::new("w", &[2], vec![1.0, 2.0]).unwrap();
        let mut opt = AdamW::new(cfg(0.1, 0.0), &[&p]);
        opt.update(&[&p]);
        assert_eq!(*p.tensor.data(), vec![1.0, 2.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let p = Parameter::<f64>::new("w", &[2], vec![0.0, 0.0]).unwrap();
        let x = crate::autograd::Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        p.tensor.mul(&x).unwrap().sum().backward().unwrap();
        let before = clip_grad_norm(&[&p], 1.0);
        assert_eq!(before, 5.0);
        let g = p.tensor.grad().unwrap();
        assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-12);
    }
}
