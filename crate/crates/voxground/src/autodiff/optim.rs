//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::store::ParamStore;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers, keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct AdamMoments {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

/// One Adam update from the grads currently held in `store`. `t` is the
/// 1-based step count used for bias correction.
pub fn adam_step(
    store: &mut ParamStore,
    moments: &mut AdamMoments,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if cfg.lr <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "adam learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    if t < 1 {
        return Err(Error::InvalidConfig("adam step count starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for tensor in store.iter_mut() {
        let n = tensor.values.len();
        let m = moments
            .m
            .entry(tensor.name.clone())
            .or_insert_with(|| vec![0.0; n]);
        let v = moments
            .v
            .entry(tensor.name.clone())
            .or_insert_with(|| vec![0.0; n]);
        let grad = tensor.grad.data();
        let values = tensor.values.data_mut();
        for i in 0..n {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
