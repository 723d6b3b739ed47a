use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParameterStore;
use crate::tensor::Tensor;

/// Adam with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment estimates per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    /// Updates applied so far.
    pub t: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

impl AdamState {
    pub fn new(params: &ParameterStore<f32>) -> Self {
        let zeros = || params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }

    pub fn check_matches(&self, params: &ParameterStore<f32>) -> Result<()> {
        for (name, p) in params.iter() {
            for (which, map) in [("first", &self.m), ("second", &self.v)] {
                match map.get(name) {
                    Some(t) if t.shape() == p.shape() => {}
                    _ => {
                        return Err(Error::contract(format!(
                            "optimizer {which}-moment state for `{name}` is missing or misshapen"
                        )))
                    }
                }
            }
        }
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::contract("optimizer state holds arrays unknown to the model"));
        }
        Ok(())
    }
}

impl AdamW {
    /// One update with learning rate `lr`. With `lr = 0` parameters are
    /// left bit-identical (moments still advance).
    pub fn step(
        &self,
        params: &mut ParameterStore<f32>,
        grads: &BTreeMap<String, Tensor<f32>>,
        state: &mut AdamState,
        lr: f64,
    ) -> Result<()> {
        state.t += 1;
        let bc1 = 1.0 - self.beta1.powf(state.t as f64);
        let bc2 = 1.0 - self.beta2.powf(state.t as f64);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (lr * self.weight_decay) as f32;
        let lr32 = lr as f32;
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).ok_or_else(|| Error::contract(format!("no gradient for `{name}`")))?;
            let m = state.m.get_mut(name).ok_or_else(|| Error::contract(format!("no optimizer state for `{name}`")))?;
            let v = state.v.get_mut(name).expect("moments kept together");
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv as f64 / bc1;
                let vhat = *vv as f64 / bc2;
                let upd = (mhat / (vhat.sqrt() + self.eps)) as f32;
                *pv -= decay * *pv + lr32 * upd;
            }
        }
        Ok(())
    }
}
