use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ParameterStore,
    pub v: ParameterStore,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterStore) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite or mis-shaped.
pub fn adam_step(params: &mut ParameterStore, grads: &ParameterStore, state: &mut AdamState, lr: f64) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .try_get(name)
            .ok_or_else(|| Error::Shape(format!("no gradient for parameter `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(e) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{name}` entry {e} is {}",
                g.data()[e]
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).data();
        let m = state.m.get_mut(name).expect("state matches params").data_mut();
        let v = state.v.get_mut(name).expect("state matches params").data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let (mh, vh) = (*mi / c1, *vi / c2);
            *w -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
