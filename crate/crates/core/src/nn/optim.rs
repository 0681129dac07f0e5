use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};

/// Shared update interface. `params` and `grads` are matched by position;
/// the optimizer keeps one state slot per position.
pub trait Optimizer {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()>;

    /// Convenience wrapper over [`Optimizer::step`] for [`Param`]s.
    fn step_params(&mut self, params: &mut [&mut Param]) -> Result<()> {
        let mut values = Vec::with_capacity(params.len());
        let mut grads = Vec::with_capacity(params.len());
        for p in params.iter_mut() {
            let Param { value, grad, .. } = &mut **p;
            values.push(value.as_mut_slice());
            grads.push(&grad[..]);
        }
        self.step(&mut values, &grads)
    }
}

fn check_inputs(params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("optimizer groups", params.len(), grads.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape("optimizer group", p.len(), g.len()));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient in group {i} at index {j}; step rejected"
            )));
        }
    }
    Ok(())
}

fn ensure_state(state: &mut Vec<Vec<f64>>, params: &[&mut [f64]]) -> Result<()> {
    if state.is_empty() {
        *state = params.iter().map(|p| vec![0.0; p.len()]).collect();
        return Ok(());
    }
    if state.len() != params.len() || state.iter().zip(params).any(|(s, p)| s.len() != p.len()) {
        return Err(Error::InvalidArgument(
            "optimizer state does not match parameter layout".into(),
        ));
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v <- mu v + g + wd p`, `p <- p - lr v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(skip)]
    pub velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_inputs(params, grads)?;
        ensure_state(&mut self.velocity, params)?;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                let grad = gi + self.weight_decay * *pi;
                *vi = self.momentum * *vi + grad;
                *pi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}

/// Adam moments and step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip)]
    pub state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState::default(),
        })
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_inputs(params, grads)?;
        ensure_state(&mut self.state.m, params)?;
        ensure_state(&mut self.state.v, params)?;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.state.m[i], &mut self.state.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
