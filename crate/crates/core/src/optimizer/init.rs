use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{ArchitectureConfig, ModelParams, ParamKind};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of every convLSTM weight at initialization.
pub const LSTM_INIT_STD: f64 = 0.01;

/// He standard deviation `sqrt(2 / fan_in)`.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

fn gaussian<T: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("finite, positive standard deviation");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(normal.sample(rng)))
}

/// He initialization of a `[Cout, Cin, kh, kw]` convolution kernel.
pub fn init_conv_he<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    gaussian(shape, he_std(fan_in), rng)
}

/// He initialization with an explicit fan-in (deconvolution kernels are
/// stored `[Cin, Cout, kh, kw]`).
pub fn init_kernel_he<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    gaussian(shape, he_std(fan_in), rng)
}

pub fn init_lstm_gaussian<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    gaussian(shape, LSTM_INIT_STD, rng)
}

pub fn init_bias_zero<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}

/// Freshly initialized parameters. Groups are drawn in canonical order from
/// one stream, so the result depends only on `config` and the generator state.
pub fn init_params<T: Scalar>(config: &ArchitectureConfig, rng: &mut Rng) -> Result<ModelParams<T>> {
    let mut params = ModelParams::zeros(config)?;
    for (_, kind, t) in params.groups_mut() {
        let shape = t.shape().to_vec();
        *t = match kind {
            ParamKind::Kernel { fan_in } => init_kernel_he(&shape, fan_in, rng),
            ParamKind::LstmWeight => init_lstm_gaussian(&shape, rng),
            ParamKind::Bias => init_bias_zero(&shape),
        };
    }
    Ok(params)
}
