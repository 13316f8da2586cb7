use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValue {
    pub data: f64,
    pub reg: f64,
}

impl LossValue {
    pub fn total(&self) -> f64 {
        self.data + self.reg
    }
}

/// `1/(2 N tau) * sum ||target - predicted||^2 + lambda/2 * sum_l ||W_l||^2`.
///
/// Returns the value and the gradient of the data term w.r.t. `predicted`.
/// The regularization gradient `lambda * W_l` is applied directly to weight
/// gradients by [`add_weight_decay`]. `batch_size` is the `N` of the full
/// batch, which may exceed `predicted`'s leading extent when a batch is
/// evaluated sample by sample.
pub fn loss<T: Scalar>(
    predicted: &Tensor<T>,
    target: &Tensor<T>,
    weights: &[&Tensor<T>],
    lambda: f64,
    tau: usize,
    batch_size: usize,
) -> Result<(LossValue, Tensor<T>)> {
    predicted.expect_same_shape(target, "loss")?;
    if tau == 0 || batch_size == 0 {
        return Err(Error::Config("loss needs tau >= 1 and N >= 1".into()));
    }
    let norm = (batch_size * tau) as f64;
    let mut sq = 0.0f64;
    let inv = T::from_f64_lossy(1.0 / norm);
    let grad = predicted.zip_map(target, "loss", |p, t| (p - t) * inv)?;
    for (&p, &t) in predicted.data().iter().zip(target.data()) {
        let d = (p - t).to_f64().unwrap_or(f64::NAN);
        sq += d * d;
    }
    let reg: f64 = weights
        .iter()
        .map(|w| w.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>())
        .sum();
    Ok((
        LossValue {
            data: sq / (2.0 * norm),
            reg: 0.5 * lambda * reg,
        },
        grad,
    ))
}

/// `lambda/2 * sum ||W_l||^2` over every decaying (non-bias) parameter group.
pub fn regularization<T: Scalar>(params: &ModelParams<T>, lambda: f64) -> f64 {
    let weights: Vec<_> = params
        .groups()
        .into_iter()
        .filter(|(_, kind, _)| kind.decays())
        .map(|(_, _, t)| t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>())
        .collect();
    0.5 * lambda * weights.iter().sum::<f64>()
}

/// `grad += lambda * W` for every decaying parameter group; biases untouched.
pub fn add_weight_decay<T: Scalar>(grads: &mut ModelParams<T>, params: &ModelParams<T>, lambda: f64) -> Result<()> {
    if lambda == 0.0 {
        return Ok(());
    }
    let lambda = T::from_f64_lossy(lambda);
    for ((_, kind, g), (_, _, w)) in grads.groups_mut().into_iter().zip(params.groups()) {
        if kind.decays() {
            g.axpy(lambda, w)?;
        }
    }
    Ok(())
}
