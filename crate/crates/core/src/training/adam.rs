use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        let bad = |reason: &str| Error::ConfigValue { key: key.to_string(), reason: reason.to_string() };
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(bad("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(bad("eps must be positive"));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment accumulators mirroring a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.m)?;
    params.check_same_layout(&state.v)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so that its global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let n = grads.norm();
    if n > max_norm && n > 0.0 {
        grads.scale(max_norm / n);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn store(v: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(v.to_vec()).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = store(&[1.0, -2.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &store(&[0.0, 0.0]), &mut s, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
        s.m = store(&[0.5, 0.5]);
        s.v = store(&[1.0, 1.0]);
        adam_step(&mut p, &store(&[0.0, 0.0]), &mut s, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(s.m.get("w").unwrap().data(), &[0.25, 0.25]);
        assert_eq!(s.v.get("w").unwrap().data(), &[0.999, 0.999]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = store(&[0.0, 0.0, 0.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &store(&[3.0, -0.01, 250.0]), &mut s, &AdamConfig::with_lr(0.01)).unwrap();
        for (got, want) in p.get("w").unwrap().data().iter().zip([-0.01, 0.01, -0.01]) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = store(&[5.0]);
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { lr: 1e-2, beta1: 0.9, ..Default::default() };
        for _ in 0..5000 {
            let x = p.get("w").unwrap().data()[0];
            adam_step(&mut p, &store(&[2.0 * (x - 1.5)]), &mut s, &cfg).unwrap();
        }
        assert!((p.get("w").unwrap().data()[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn key_mismatch_is_rejected() {
        let mut p = store(&[1.0]);
        let mut s = AdamState::new(&p);
        let mut other = ParamStore::new();
        other.insert("u", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        assert!(adam_step(&mut p, &other, &mut s, &AdamConfig::default()).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = store(&[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
    }
}
