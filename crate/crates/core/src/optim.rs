//! MAE loss and the Adam update.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Real, Tensor};

/// Mean absolute error over every entry, with the subgradient
/// `sign(pred - target) / n` (`sign(0) = 0`).
pub fn mae_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension {
            op: "mae_loss",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let n = pred.len();
    let inv_n = T::one() / T::of(n as f64);
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(n);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let diff = p - t;
        total += diff.abs().as_f64();
        grad.push(if diff > T::zero() {
            inv_n
        } else if diff < T::zero() {
            -inv_n
        } else {
            T::zero()
        });
    }
    Ok((total / n as f64, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.00025,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    /// Hyperparameters are rounded to `T` so a state reloaded from a
    /// checkpoint continues exactly like the original.
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        let q = |x: f64| T::of(x).as_f64();
        AdamState {
            config: AdamConfig {
                lr: q(config.lr),
                beta1: q(config.beta1),
                beta2: q(config.beta2),
                epsilon: q(config.epsilon),
            },
            m: ModelParams::zeros(params.dims),
            v: ModelParams::zeros(params.dims),
            step: 0,
        }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.step == other.step
            && self.m.bitwise_eq(&other.m)
            && self.v.bitwise_eq(&other.v)
    }
}

/// One bias-corrected Adam update, in place.
///
/// `θ ← θ − lr·m̂ / (√v̂ + ε)`, with ε added outside the square root.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.dims != grads.dims || params.dims != state.m.dims {
        return Err(Error::InvalidArgument(format!(
            "adam_step: parameter dims {:?} do not match gradient dims {:?}",
            params.dims, grads.dims
        )));
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let corr1 = T::of(1.0 - cfg.beta1.powi(t));
    let corr2 = T::of(1.0 - cfg.beta2.powi(t));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.epsilon);

    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for (((theta, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m_all)
        .zip(v_all)
    {
        if theta.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: theta.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        for (((p, &g), m), v) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
