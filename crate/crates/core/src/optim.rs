//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor plus the update count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self::for_shapes(params.tensors().iter().map(|t| t.shape()))
    }

    pub fn for_shapes<'a>(shapes: impl Iterator<Item = &'a [usize]>) -> Self {
        let zeros: Vec<Tensor> = shapes.map(Tensor::zeros).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Outcome of one optimizer call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdamOutcome {
    Applied,
    /// A gradient held NaN or infinity; nothing was changed.
    SkippedNonFinite,
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<AdamOutcome> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(Error::Dimension(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() || state.v[i].shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "param {i} has shape {:?}, grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        log::warn!("non-finite gradient, skipping update");
        return Ok(AdamOutcome::SkippedNonFinite);
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            let update = cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            if update != 0.0 {
                *pj -= update;
            }
        }
    }
    Ok(AdamOutcome::Applied)
}
