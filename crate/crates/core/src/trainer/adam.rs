use std::collections::BTreeMap;

use crate::autodiff::{Gradients, Matrix};
use crate::error::{Error, Result};
use crate::model::ParameterSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first: BTreeMap<String, Matrix>,
    pub second: BTreeMap<String, Matrix>,
    pub step: u64,
}

impl OptimizerState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: BTreeMap<String, Matrix> = params
            .tensors()
            .iter()
            .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
            .collect();
        OptimizerState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    /// Checks that every moment matches its parameter's shape.
    pub fn check_against(&self, params: &ParameterSet) -> Result<()> {
        for (name, p) in params.tensors() {
            for moments in [&self.first, &self.second] {
                let m = moments.get(name).ok_or_else(|| {
                    Error::InvalidArgument(format!("optimizer state has no moments for `{name}`"))
                })?;
                if m.shape() != p.shape() {
                    return Err(Error::shape("adam", p.shape(), m.shape()));
                }
            }
        }
        if self.first.len() != params.tensors().len() || self.second.len() != params.tensors().len() {
            return Err(Error::InvalidArgument(
                "optimizer state has moments for unknown parameters".into(),
            ));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    state.check_against(params)?;
    for (name, p) in params.tensors() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for `{name}`")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape("adam", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (name, p) in params.tensors_mut() {
        let g = &grads[name];
        let m = state.first.get_mut(name).expect("checked");
        let v = state.second.get_mut(name).expect("checked");
        let (p, m, v) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
        for (k, &gk) in g.as_slice().iter().enumerate() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
