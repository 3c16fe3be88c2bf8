//! Adam with bias correction, and the stepped learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamStore;

/// The learning rate halves after this many epochs.
pub const LR_HALVE_EVERY: usize = 30;

/// `base_lr · 0.5^⌊epoch / 30⌋`.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    step_schedule(epoch, base_lr, LR_HALVE_EVERY)
}

/// `base_lr · 0.5^⌊epoch / every⌋`.
pub fn step_schedule(epoch: usize, base_lr: f64, every: usize) -> f64 {
    base_lr * 0.5f64.powi((epoch / every.max(1)) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        OptimizerState {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    fn check_layout(&self, store: &ParamStore) -> Result<()> {
        let ok = self.first_moment.len() == store.len()
            && store
                .iter()
                .zip(&self.first_moment)
                .zip(&self.second_moment)
                .all(|((p, m), v)| m.len() == p.value().numel() && v.len() == m.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Usage("optimizer state does not match the parameter layout".into()))
        }
    }

    /// One bias-corrected Adam update using the gradients held in `store`.
    /// Fails without touching anything if a gradient is not finite.
    pub fn adam_step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        self.check_layout(store)?;
        if let Some(bad) = store.iter().find(|p| p.grad().iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of parameter '{}'", bad.name())));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let grad = store.grad(id).to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let values = store.value_mut(id);
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("p", Tensor::new(&[values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn schedule_halves_every_thirty_epochs() {
        assert_eq!(lr_schedule(0, 1e-4), 1e-4);
        assert_eq!(lr_schedule(29, 1e-4), 1e-4);
        assert_eq!(lr_schedule(30, 1e-4), 5e-5);
        assert_eq!(lr_schedule(60, 1e-4), 2.5e-5);
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = store(&[0.3]);
        let id = s.ids().next().unwrap();
        s.grad_mut(id)[0] = 1.0;
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        opt.adam_step(&mut s, 1e-4).unwrap();
        let want = 0.3 - 1e-4 / (1.0 + 1e-8);
        assert!((s.value(id).data()[0] - want).abs() < 1e-12);
        assert_eq!(opt.step, 1);
        assert!((opt.first_moment[0][0] - 0.5).abs() < 1e-15);
        assert!((opt.second_moment[0][0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut s = store(&[1.0, -2.0]);
        let id = s.ids().next().unwrap();
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        s.grad_mut(id).copy_from_slice(&[0.5, 0.5]);
        opt.adam_step(&mut s, 1e-3).unwrap();
        let before = s.value(id).clone();
        let m0 = opt.first_moment[0].clone();
        s.zero_grads();
        opt.adam_step(&mut s, 1e-3).unwrap();
        assert!(opt.first_moment[0][0].abs() < m0[0].abs());
        // m̂ is not zero, so parameters still move; with fresh state they would not.
        let mut fresh = OptimizerState::new(&s, AdamConfig::default());
        let snapshot = s.value(id).clone();
        fresh.adam_step(&mut s, 1e-3).unwrap();
        assert_eq!(s.value(id), &snapshot);
        assert_ne!(&before, s.value(id));
    }

    #[test]
    fn opposite_gradients_move_symmetrically() {
        let mut s = store(&[0.0, 0.0]);
        let id = s.ids().next().unwrap();
        s.grad_mut(id).copy_from_slice(&[0.7, -0.7]);
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        opt.adam_step(&mut s, 1e-2).unwrap();
        let v = s.value(id).data();
        assert!(v[0] < 0.0 && (v[0] + v[1]).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = store(&[0.0]);
        let id = s.ids().next().unwrap();
        s.grad_mut(id)[0] = f64::NAN;
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        let err = opt.adam_step(&mut s, 1e-3).unwrap_err();
        assert!(err.to_string().contains("'p'"));
        assert_eq!(opt.step, 0);
    }
}
