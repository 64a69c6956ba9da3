//! Adam and momentum SGD with a polynomial learning-rate decay.

use crate::error::{Error, Result};
use crate::nn::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    steps: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. State is positional: always pass the same
/// parameters in the same order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    state: Vec<Moments>,
}

fn check_len(state_len: usize, p: &Param) -> Result<()> {
    if state_len != 0 && state_len != p.data().len() {
        return Err(Error::ShapeMismatch {
            op: "optimizer state",
            left: vec![state_len],
            right: p.shape().to_vec(),
        });
    }
    Ok(())
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, state: Vec::new() }
    }

    /// Updates every parameter that holds a gradient; others are left alone.
    pub fn step(&mut self, params: Vec<&mut Param>) -> Result<()> {
        if self.state.len() < params.len() {
            self.state.resize_with(params.len(), Moments::default);
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        for (p, st) in params.into_iter().zip(&mut self.state) {
            let Some(g) = p.grad() else { continue };
            check_len(st.m.len(), p)?;
            if st.m.is_empty() {
                st.m = vec![0.0; g.len()];
                st.v = vec![0.0; g.len()];
            }
            st.steps += 1;
            let c1 = 1.0 - beta1.powi(st.steps as i32);
            let c2 = 1.0 - beta2.powi(st.steps as i32);
            let mut data = p.data().to_vec();
            for (k, gk) in g.iter().enumerate() {
                st.m[k] = beta1 * st.m[k] + (1.0 - beta1) * gk;
                st.v[k] = beta2 * st.v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = st.m[k] / c1;
                let v_hat = st.v[k] / c2;
                data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_data(data)?;
        }
        Ok(())
    }
}

/// `base·(1 − t/t_max)^power`, zero from `t_max` on.
pub fn poly_lr(base: f64, t: usize, t_max: usize, power: f64) -> f64 {
    if t >= t_max {
        0.0
    } else {
        base * (1.0 - t as f64 / t_max as f64).powf(power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub max_steps: usize,
}

/// Momentum SGD with L2 weight decay folded into the gradient and a poly schedule.
#[derive(Debug, Clone)]
pub struct SgdPoly {
    pub config: SgdConfig,
    steps: usize,
    buffers: Vec<Vec<f64>>,
}

impl SgdPoly {
    pub fn new(config: SgdConfig) -> Self {
        SgdPoly {
            config,
            steps: 0,
            buffers: Vec::new(),
        }
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        let c = &self.config;
        poly_lr(c.base_lr, self.steps, c.max_steps, c.power)
    }

    pub fn step(&mut self, params: Vec<&mut Param>) -> Result<()> {
        let lr = self.current_lr();
        if self.buffers.len() < params.len() {
            self.buffers.resize_with(params.len(), Vec::new);
        }
        let SgdConfig { momentum, weight_decay, .. } = self.config;
        for (p, buf) in params.into_iter().zip(&mut self.buffers) {
            let Some(g) = p.grad() else { continue };
            check_len(buf.len(), p)?;
            if buf.is_empty() {
                *buf = vec![0.0; g.len()];
            }
            let mut data = p.data().to_vec();
            for (k, gk) in g.iter().enumerate() {
                buf[k] = momentum * buf[k] + gk + weight_decay * data[k];
                data[k] -= lr * buf[k];
            }
            p.set_data(data)?;
        }
        self.steps += 1;
        Ok(())
    }
}
