use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layer::Parameterized;
use super::tape::Gradients;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    ///
    /// Gradients are validated before anything is modified, so a non-finite
    /// gradient leaves both the model and the optimiser state untouched.
    pub fn step(&mut self, model: &mut dyn Parameterized, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::Training { param: name.to_string() });
            }
        }
        let mut shape_err = None;
        model.visit_params(&mut |name, p| {
            if let Some(g) = grads.get(name) {
                if g.shape() != p.shape() && shape_err.is_none() {
                    shape_err = Some(Error::dim("adam_step", format!("{name} {:?}", p.shape()), format!("{:?}", g.shape())));
                }
            }
        });
        if let Some(e) = shape_err {
            return Err(e);
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_params_mut(&mut |name, p| {
            let Some(g) = grads.get(name) else { return };
            let m = ms.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = vs.entry(name.to_string()).or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }
}
