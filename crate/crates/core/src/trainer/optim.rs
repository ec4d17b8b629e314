use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ModelParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam moments for every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub settings: AdamSettings,
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl OptimizerState {
    pub fn new(settings: AdamSettings, params: &ModelParams) -> Self {
        let moments = params
            .iter()
            .map(|(n, t)| {
                (
                    n.clone(),
                    (Tensor::zeros(t.shape()), Tensor::zeros(t.shape())),
                )
            })
            .collect();
        OptimizerState {
            settings,
            step: 0,
            moments,
        }
    }

    pub fn moments(&self, name: &str) -> Option<&(Tensor, Tensor)> {
        self.moments.get(name)
    }

    /// One bias-corrected Adam update of every block that has a gradient.
    pub fn update(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        let s = self.settings;
        let t = self.step + 1;
        let bc1 = 1.0 - s.beta1.powi(t as i32);
        let bc2 = 1.0 - s.beta2.powi(t as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = self
                .moments
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no optimizer state for {name}")))?;
            p.check_same_shape(g, "adam")?;
            let (pd, gd) = (p.data_mut(), g.data());
            for (((pv, &gv), mv), vv) in pd
                .iter_mut()
                .zip(gd)
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = s.beta1 * *mv + (1.0 - s.beta1) * gv;
                *vv = s.beta2 * *vv + (1.0 - s.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= s.lr * (mhat / (vhat.sqrt() + s.eps) + s.weight_decay * *pv);
            }
        }
        self.step = t;
        if self
            .moments
            .values()
            .any(|(m, v)| !m.is_finite() || !v.is_finite())
        {
            return Err(Error::NonFinite("adam moments"));
        }
        Ok(())
    }
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
