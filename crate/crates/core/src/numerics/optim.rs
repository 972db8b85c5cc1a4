use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Adam moments and hyper-parameters for a named parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub first_moment: BTreeMap<String, Vec<f32>>,
    pub second_moment: BTreeMap<String, Vec<f32>>,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(2e-4)
    }
}

impl OptimizerState {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update over every parameter, then clears gradients.
///
/// Fails without touching any parameter if one of them has no gradient.
pub fn adam_step(params: &[(String, Tensor)], state: &mut OptimizerState) -> Result<()> {
    let grads = params
        .iter()
        .map(|(name, p)| p.grad().ok_or_else(|| Error::MissingGradient(name.clone())))
        .collect::<Result<Vec<_>>>()?;

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1 as f64, state.beta2 as f64);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = state.lr as f64;
    let eps = state.eps as f64;

    for ((name, p), g) in params.iter().zip(grads) {
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        let mut data = p.data_mut();
        for i in 0..g.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            data[i] = (data[i] as f64 - update) as f32;
        }
        drop(data);
        p.zero_grad();
    }
    Ok(())
}
