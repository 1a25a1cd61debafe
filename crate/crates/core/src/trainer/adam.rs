use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParameterSet;
use crate::tensor::{Real, Tensor};

/// Adam moment estimates and step counter, keyed like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        let zeros: BTreeMap<_, _> = params
            .as_map()
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn check_against(&self, params: &ParameterSet<T>) -> Result<()> {
        for (label, moments) in [("first", &self.m), ("second", &self.v)] {
            if moments.len() != params.len() {
                return Err(Error::State(format!(
                    "{label} moments cover {} arrays, parameters have {}",
                    moments.len(),
                    params.len()
                )));
            }
            for (name, p) in params.as_map() {
                match moments.get(name) {
                    Some(t) if t.shape() == p.shape() => {}
                    Some(t) => {
                        return Err(Error::State(format!(
                            "{label} moment {name} has shape {:?}, parameter {:?}",
                            t.shape(),
                            p.shape()
                        )))
                    }
                    None => return Err(Error::State(format!("no {label} moment for {name}"))),
                }
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update without weight decay.
pub fn adam_step<T: Real>(
    params: &mut ParameterSet<T>,
    state: &mut AdamState<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    rate: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    state.check_against(params)?;
    if grads.len() != params.len() {
        return Err(Error::State(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (name, p) in params.as_map() {
        match grads.get(name) {
            Some(g) if g.shape() == p.shape() => {}
            Some(g) => {
                return Err(Error::State(format!(
                    "gradient {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )))
            }
            None => return Err(Error::State(format!("no gradient for {name}"))),
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let c1 = T::one() - b1;
    let c2 = T::one() - b2;
    let corr1 = T::from_f64(1.0 - hyper.beta1.powf(t));
    let corr2 = T::from_f64(1.0 - hyper.beta2.powf(t));
    let lr = T::from_f64(rate);
    let eps = T::from_f64(hyper.epsilon);
    for (name, p) in params.as_map_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked").data_mut();
        let v = state.v.get_mut(name).expect("checked").data_mut();
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *mi = b1 * *mi + c1 * gi;
            *vi = b2 * *vi + c2 * gi * gi;
            let mhat = *mi / corr1;
            let vhat = *vi / corr2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
