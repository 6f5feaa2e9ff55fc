//! Adam with bias correction and a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    /// Zeroed state shaped like `params`.
    pub fn new(params: &[Vec<f64>]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// `lr * (1 + cos(pi * t / t_max)) / 2`, reaching zero at `t = t_max`.
pub fn cosine_lr(lr: f64, t: usize, t_max: usize) -> f64 {
    if t_max == 0 {
        return lr;
    }
    let frac = t.min(t_max) as f64 / t_max as f64;
    lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// One Adam update in place.
///
/// # Panics
/// If the block shapes of `params`, `grads` and `state` differ.
pub fn adam_step(
    params: &mut [Vec<f64>],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr_t: f64,
    cfg: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient block counts differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameters");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        assert_eq!(p.len(), g.len(), "parameter and gradient shapes differ");
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr_t * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![vec![1.0, -2.0], vec![0.5]];
        let before = p.clone();
        let g = vec![vec![0.0, 0.0], vec![0.0]];
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default());
        }
        assert_eq!(p, before);
        assert_eq!(s.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let lr = 1e-3;
        let mut p = vec![vec![0.0]];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[vec![1.0]], &mut s, lr, &AdamConfig::default());
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expect = -lr / (1.0 + 1e-8);
        assert!((p[0][0] - expect).abs() < 1e-15, "{}", p[0][0]);
        assert!((p[0][0].abs() - lr).abs() < 1e-10);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
        assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 100, 100).abs() < 1e-17);
        assert!(cosine_lr(0.1, 100, 100) >= 0.0);
    }
}
