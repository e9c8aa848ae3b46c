//! Adam with bias correction, plus the exponential moving average kept for the
//! generator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: ParamStore,
    pub second_moment: ParamStore,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", config.lr)));
        }
        Ok(Self {
            config,
            state: AdamState::new(params),
        })
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        params.check_layout(grads)?;
        params.check_layout(&self.state.first_moment)?;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("layout checked");
            let m = self.state.first_moment.get_mut(name).expect("layout checked");
            for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.state.second_moment.get_mut(name).expect("layout checked");
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let m = self.state.first_moment.get(name).expect("layout checked");
            let v = self.state.second_moment.get(name).expect("layout checked");
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mi / bias1;
                let v_hat = vi / bias2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Shadow copy updated as `shadow <- decay * shadow + (1 - decay) * param`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaParams {
    pub decay: f64,
    pub shadow: ParamStore,
}

impl EmaParams {
    pub fn new(params: &ParamStore, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        Ok(Self {
            decay,
            shadow: params.clone(),
        })
    }

    pub fn update(&mut self, params: &ParamStore) -> Result<()> {
        ema_update(&mut self.shadow, params, self.decay)
    }
}

pub fn ema_update(shadow: &mut ParamStore, params: &ParamStore, decay: f64) -> Result<()> {
    check_decay(decay)?;
    shadow.check_layout(params)?;
    for (name, s) in shadow.iter_mut() {
        let p = params.get(name).expect("layout checked");
        for (si, pi) in s.data_mut().iter_mut().zip(p.data()) {
            *si = decay * *si + (1.0 - decay) * pi;
        }
    }
    Ok(())
}

fn check_decay(decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::InvalidArgument(format!("EMA decay must be in [0, 1), got {decay}")));
    }
    Ok(())
}
