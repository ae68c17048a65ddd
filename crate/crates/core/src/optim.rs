//! Bias-corrected Adam.
//!
//! Parameters and both moment estimates are rounded to `f32` after every
//! update, so a checkpoint holding single-precision payloads restores the
//! optimizer state exactly.

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::params::snap_to_f32;

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
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let first: Vec<Matrix> = params.into_iter().map(|p| Matrix::zeros(p.dim())).collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(
    params: Vec<&mut Matrix>,
    grads: &[Matrix],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Contract(format!(
            "adam step got {} parameters, {} gradients and {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.dim() != g.dim() || p.dim() != state.first[i].dim() {
            return Err(Error::Shape {
                op: "adam step",
                left: p.dim(),
                right: g.dim(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .into_iter()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        ndarray::Zip::from(&mut *p)
            .and(g)
            .and(&mut *m)
            .and(&mut *v)
            .for_each(|p, &g, m, v| {
                *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
            });
        snap_to_f32(p);
        snap_to_f32(m);
        snap_to_f32(v);
    }
    Ok(())
}
