//! Gradient-descent optimizers over a [`ParamStore`].

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn check_gradients(params: &ParamStore) -> Result<()> {
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite {
                op: format!("gradient of `{}`", p.name),
            });
        }
    }
    Ok(())
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )))
    }
}

/// Plain gradient descent: `w <- w - lr * grad`.
pub fn sgd_step(params: &mut ParamStore, lr: f64) -> Result<()> {
    check_lr(lr)?;
    check_gradients(params)?;
    for p in params.iter_mut() {
        for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *w -= lr * g;
        }
    }
    Ok(())
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig, t: u64) -> Result<()> {
    check_lr(cfg.lr)?;
    check_gradients(params)?;
    if t == 0 {
        return Err(Error::InvalidArgument("adam step count starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        for (((w, &g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    state.t = t;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// An optimizer together with whatever state it carries between steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { cfg: AdamConfig, state: AdamState },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, cfg: AdamConfig, params: &ParamStore) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: cfg.lr },
            OptimizerKind::Adam => Optimizer::Adam {
                cfg,
                state: AdamState::new(params),
            },
        }
    }

    /// Apply the update, then zero every gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(params, *lr)?,
            Optimizer::Adam { cfg, state } => {
                let t = state.t + 1;
                adam_step(params, state, cfg, t)?;
            }
        }
        params.zero_grad();
        Ok(())
    }
}
