use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Negative slope used throughout the encoder and decoder.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    debug_assert!(slope > T::zero() && slope < T::one());
    input.map(|x| if x >= T::zero() { x } else { slope * x })
}

/// Backward of [`leaky_relu`] given the forward *input*.
pub fn leaky_relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    grad_out.zip_map(input, "leaky_relu_backward", |g, x| if x >= T::zero() { g } else { slope * g })
}

/// Logistic function that never evaluates `exp` of a large positive argument.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Backward of [`sigmoid`] given the forward *output* `s`: `g * s * (1 - s)`.
pub fn sigmoid_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(output, "sigmoid_backward", |g, s| g * s * (T::one() - s))
}

pub fn tanh<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x.tanh())
}

/// Backward of [`tanh`] given the forward *output* `t`: `g * (1 - t^2)`.
pub fn tanh_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(output, "tanh_backward", |g, t| g * (T::one() - t * t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_values() {
        let y = leaky_relu(&t(&[0.0, 1.0, -1.0, -2.5]), 0.2);
        assert_eq!(y.data(), &[0.0, 1.0, -0.2, -0.5]);
    }

    #[test]
    fn symmetry_points() {
        assert_eq!(sigmoid(&t(&[0.0])).data(), &[0.5]);
        assert_eq!(tanh(&t(&[0.0])).data(), &[0.0]);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let y = sigmoid(&t(&[-1000.0, -50.0, 50.0, 1000.0]));
        assert!(y.all_finite());
        assert_eq!(y.data()[0], 0.0);
        assert!(y.data()[1] > 0.0 && y.data()[1] < 1e-20);
        assert!(y.data()[2] <= 1.0 && y.data()[3] == 1.0);
        let y32 = sigmoid(&Tensor::<f32>::new(&[2], vec![-200.0, 200.0]).unwrap());
        assert!(y32.all_finite());
    }
}
