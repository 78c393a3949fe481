use std::collections::HashMap;

use super::grads::GradientStore;
use crate::error::{Error, Result};
use crate::net::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    AdamW { cfg: AdamWConfig, step: u64, state: HashMap<String, Moments> },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adamw(cfg: AdamWConfig) -> Self {
        Optimizer::AdamW { cfg, step: 0, state: HashMap::new() }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::AdamW { cfg, .. } => cfg.lr,
        }
    }

    pub fn set_lr(&mut self, value: f64) {
        match self {
            Optimizer::Sgd { lr } => *lr = value,
            Optimizer::AdamW { cfg, .. } => cfg.lr = value,
        }
    }

    /// One update of every parameter that has a gradient entry.
    /// Non-finite gradients abort before anything is modified.
    pub fn update(&mut self, params: &mut ParameterStore, grads: &GradientStore) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of '{name}'")));
            }
        }
        match self {
            Optimizer::Sgd { lr } => {
                for (name, g) in grads.iter() {
                    let p = params.value_mut(name)?;
                    p.data_mut().iter_mut().zip(g.data()).for_each(|(w, d)| *w -= *lr * d);
                }
            }
            Optimizer::AdamW { cfg, step, state } => {
                *step += 1;
                let bc1 = 1.0 - cfg.beta1.powi(*step as i32);
                let bc2 = 1.0 - cfg.beta2.powi(*step as i32);
                for (name, g) in grads.iter() {
                    let p = params.value_mut(name)?;
                    let st = state
                        .entry(name.to_string())
                        .or_insert_with(|| Moments { m: vec![0.0; g.numel()], v: vec![0.0; g.numel()] });
                    for (((w, &d), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * d;
                        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * d * d;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        if cfg.weight_decay != 0.0 {
                            *w -= cfg.lr * cfg.weight_decay * *w;
                        }
                        *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                    }
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerGroup;
    use crate::numerics::Tensor;

    fn store(v: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("p", Tensor::from_vec(v.to_vec()), LayerGroup::Global).unwrap();
        s
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut s = store(&[1.0, -2.0]);
        let before = s.clone();
        let grads = GradientStore::zeros_like(&s);
        let mut opt = Optimizer::adamw(AdamWConfig::with_lr(0.1));
        for _ in 0..3 {
            opt.update(&mut s, &grads).unwrap();
        }
        assert!(s.bit_eq(&before));
    }

    #[test]
    fn quadratic_converges() {
        // f(p) = Σ (p - c)², minimizer c
        let c = [3.0, -1.5, 0.25];
        let mut s = store(&[0.0, 0.0, 0.0]);
        let mut opt = Optimizer::adamw(AdamWConfig::with_lr(0.05));
        let mut grads = GradientStore::zeros_like(&s);
        for i in 0..5000 {
            if i == 3000 {
                opt.set_lr(0.005);
            }
            let p = s.value("p").unwrap().clone();
            let g = grads.get_mut("p").unwrap();
            for k in 0..3 {
                g.data_mut()[k] = 2.0 * (p.data()[k] - c[k]);
            }
            opt.update(&mut s, &grads).unwrap();
        }
        let p = s.value("p").unwrap();
        for k in 0..3 {
            assert!((p.data()[k] - c[k]).abs() < 1e-6, "{:?}", p.data());
        }
    }

    #[test]
    fn nan_gradients_abort() {
        let mut s = store(&[1.0]);
        let mut grads = GradientStore::zeros_like(&s);
        grads.get_mut("p").unwrap().data_mut()[0] = f64::NAN;
        assert!(matches!(Optimizer::sgd(0.1).update(&mut s, &grads), Err(Error::NonFinite(_))));
        assert_eq!(s.value("p").unwrap().data(), &[1.0]);
    }
}
