//! Stochastic gradient descent.

use crate::error::{Error, Result};
use crate::param::{ParamGrads, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `p ← p − lr·g` for every parameter. Fails before touching anything if a
/// gradient is missing or has the wrong shape.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, grads: &ParamGrads<T>, lr: T) -> Result<()> {
    check_grads(params, grads)?;
    for id in params.ids().collect::<Vec<_>>() {
        let g = grads.get(id).expect("checked");
        for (p, &gi) in params.get_mut(id).data_mut().iter_mut().zip(g.data()) {
            *p = *p - lr * gi;
        }
    }
    Ok(())
}

fn check_grads<T: Scalar>(params: &ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
    for id in params.ids() {
        match grads.get(id) {
            None => {
                return Err(Error::Contract(format!(
                    "no gradient for parameter '{}'",
                    params.name(id)
                )))
            }
            Some(g) if g.shape() != params.get(id).shape() => {
                return Err(Error::Contract(format!(
                    "gradient for '{}' has shape {:?}, parameter has {:?}",
                    params.name(id),
                    g.shape(),
                    params.get(id).shape()
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum: `v ← μv + g`, `p ← p − lr·v`.
/// With `μ = 0` this is exactly [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Tensor<T>>) {
        self.velocity = velocity;
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        if self.momentum == T::zero() {
            return sgd_step(params, grads, self.lr);
        }
        check_grads(params, grads)?;
        if self.velocity.len() != params.len() {
            self.velocity = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        }
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id).expect("checked");
            let v = &mut self.velocity[id.index()];
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.momentum * *vi + gi;
            }
            for (p, &vi) in params.get_mut(id).data_mut().iter_mut().zip(v.data()) {
                *p = *p - self.lr * vi;
            }
        }
        Ok(())
    }
}
