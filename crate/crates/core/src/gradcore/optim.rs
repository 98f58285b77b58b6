use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// One plain SGD update with L2 weight decay: `p <- p - lr * (g + l2 * p)`.
pub fn sgd_step<T: Real>(params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64, l2: f64) -> Result<()> {
    check_hyper(lr, l2)?;
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    let (lr, l2) = (T::from_f64(lr), T::from_f64(l2));
    for (p, g) in params.iter_mut().zip(grads) {
        p.same_shape(g, "sgd_step")?;
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv = *pv - lr * (gv + l2 * *pv);
        }
    }
    Ok(())
}

fn check_hyper(lr: f64, l2: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate {lr} must be >= 0")));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::InvalidParameter(format!("l2 {l2} must be >= 0")));
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum.
///
/// With `momentum == 0` every step is exactly [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub l2: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(l2: f64, momentum: f64) -> Result<Self> {
        check_hyper(0.0, l2)?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum {momentum} must be in [0, 1)"
            )));
        }
        Ok(Self {
            l2,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, lr, self.l2);
        }
        check_hyper(lr, self.l2)?;
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        let (lr, l2, mu) = (T::from_f64(lr), T::from_f64(self.l2), T::from_f64(self.momentum));
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            p.same_shape(g, "sgd momentum step")?;
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = mu * *vv + gv + l2 * *pv;
                *pv = *pv - lr * *vv;
            }
        }
        Ok(())
    }
}

/// Step decay: the learning rate is multiplied by `gamma` every `every` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub gamma: f64,
    pub every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self { gamma: 0.5, every: 3 }
    }
}

impl StepDecay {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        if self.every == 0 {
            return base;
        }
        base * self.gamma.powi((epoch / self.every) as i32)
    }
}
