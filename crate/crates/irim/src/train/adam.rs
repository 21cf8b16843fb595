//! Adam with bias correction and a ÷10-every-30-epochs learning-rate
//! staircase.

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 30,
            batch_size: 4,
            epochs: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// lr0 · 10^(−⌊epoch / decay_every⌋).
pub fn learning_rate(cfg: &OptimConfig, epoch: usize) -> f64 {
    cfg.lr0 / 10f64.powi((epoch / cfg.decay_every) as i32)
}

/// One Adam update from the accumulated gradients. `t` is the 1-based
/// global optimizer step; `epoch` drives the decay staircase only.
pub fn adam_step(store: &mut ParamStore, cfg: &OptimConfig, epoch: usize, t: usize) -> Result<()> {
    cfg.validate()?;
    if t == 0 {
        return Err(Error::Config("Adam step index starts at 1".into()));
    }
    let lr = learning_rate(cfg, epoch);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.eps);
    store.for_each_param(|values, grads, m1, m2| {
        for i in 0..values.len() {
            let g = grads[i];
            m1[i] = b1 * m1[i] + (1.0 - b1) * g;
            m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
            let m_hat = m1[i] / bc1;
            let v_hat = m2[i] / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: Vec<f64>) -> (ParamStore, crate::nn::ParamId) {
        let mut store = ParamStore::new();
        let n = values.len();
        let id = store.register("w", vec![n], values).unwrap();
        (store, id)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut store, id) = store_with(vec![1.0, -2.0, 0.5]);
        let cfg = OptimConfig {
            lr0: 1e-3,
            ..OptimConfig::default()
        };
        store.add_grad(id, &[0.7, -0.3, 1.9]);
        adam_step(&mut store, &cfg, 0, 1).unwrap();
        let w = store.value(id);
        for (i, (&got, (&w0, g))) in w
            .iter()
            .zip([1.0, -2.0, 0.5].iter().zip([0.7, -0.3, 1.9]))
            .enumerate()
        {
            let expected = w0 - cfg.lr0 * g / (g.abs() + cfg.eps);
            assert!((got - expected).abs() < 1e-9, "coord {i}: {got} vs {expected}");
        }
    }

    #[test]
    fn matches_closed_form_recurrence_for_five_steps() {
        let (mut store, id) = store_with(vec![0.3]);
        let cfg = OptimConfig::default();
        let g = 0.42;
        let (mut m, mut v, mut w) = (0.0, 0.0, 0.3);
        for t in 1..=5 {
            store.zero_grads();
            store.add_grad(id, &[g]);
            adam_step(&mut store, &cfg, 0, t).unwrap();

            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
            let v_hat = v / (1.0 - cfg.beta2.powi(t as i32));
            w -= cfg.lr0 * m_hat / (v_hat.sqrt() + cfg.eps);
            let got = store.value(id)[0];
            let rel = (got - w).abs() / w.abs();
            assert!(rel < 1e-12, "step {t}: {got} vs {w}");
        }
    }

    #[test]
    fn zero_gradient_with_zero_moments_changes_nothing() {
        let (mut store, id) = store_with(vec![1.0, -0.5]);
        let cfg = OptimConfig::default();
        adam_step(&mut store, &cfg, 0, 1).unwrap();
        assert_eq!(store.value(id), &[1.0, -0.5]);
        let (m1, m2) = store.moments(id);
        assert!(m1.iter().chain(m2).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gradient_decays_accumulated_moments() {
        let (mut store, id) = store_with(vec![1.0]);
        let cfg = OptimConfig::default();
        store.add_grad(id, &[2.0]);
        adam_step(&mut store, &cfg, 0, 1).unwrap();
        let m_before = store.moments(id).0[0];
        let v_before = store.moments(id).1[0];

        store.zero_grads();
        adam_step(&mut store, &cfg, 0, 2).unwrap();
        let (m1, m2) = store.moments(id);
        assert_eq!(m1[0], cfg.beta1 * m_before);
        assert_eq!(m2[0], cfg.beta2 * v_before);
    }

    #[test]
    fn learning_rate_staircase() {
        let cfg = OptimConfig::default();
        assert_eq!(learning_rate(&cfg, 0), 1e-4);
        assert_eq!(learning_rate(&cfg, 29), 1e-4);
        assert_eq!(learning_rate(&cfg, 30), 1e-5);
        assert_eq!(learning_rate(&cfg, 59), 1e-5);
        assert_eq!(learning_rate(&cfg, 60), 1e-6);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = OptimConfig::default();
        cfg.lr0 = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = OptimConfig::default();
        cfg.beta1 = 1.0;
        assert!(cfg.validate().is_err());
        let (mut store, _) = store_with(vec![1.0]);
        assert!(adam_step(&mut store, &OptimConfig::default(), 0, 0).is_err());
    }
}
