//! Convolutional LSTM cell with backpropagation through time.
//!
//! Gate pre-activations are packed along the channel axis in the fixed order
//! `(i, f, c, o)`:
//!
//! ```text
//! i  = sigmoid(Wxi*x + Whi*h + b_i [+ p_i . c])
//! f  = sigmoid(Wxf*x + Whf*h + b_f [+ p_f . c])
//! c' = f . c + i . tanh(Wxc*x + Whc*h + b_c)
//! o  = sigmoid(Wxo*x + Who*h + b_o [+ p_o . c'])
//! h' = o . tanh(c')
//! ```
//!
//! `*` is a stride-1 same-padded convolution and `.` the Hadamard product.
//! Peephole weights `p` are optional and stored as `[3, Ch, H, W]` in the
//! order `(i, f, o)`.

use crate::error::{Error, Result};
use crate::ops::{conv2d_backward_opt, conv2d_forward_opt, sigmoid_scalar, ConvSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GATES: usize = 4;
const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_C: usize = 2;
const GATE_O: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams<T> {
    /// `[4*Ch, Cx, k, k]`
    pub input_weights: Tensor<T>,
    /// `[4*Ch, Ch, k, k]`
    pub hidden_weights: Tensor<T>,
    /// `[4*Ch]`
    pub bias: Tensor<T>,
    /// `[3, Ch, H, W]` when peephole connections are enabled.
    pub peephole: Option<Tensor<T>>,
}

impl<T: Scalar> ConvLstmParams<T> {
    pub fn zeros(input_channels: usize, hidden_channels: usize, kernel: usize, peephole: Option<(usize, usize)>) -> Self {
        let gc = GATES * hidden_channels;
        Self {
            input_weights: Tensor::zeros(&[gc, input_channels, kernel, kernel]),
            hidden_weights: Tensor::zeros(&[gc, hidden_channels, kernel, kernel]),
            bias: Tensor::zeros(&[gc]),
            peephole: peephole.map(|(h, w)| Tensor::zeros(&[3, hidden_channels, h, w])),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input_weights: Tensor::zeros(self.input_weights.shape()),
            hidden_weights: Tensor::zeros(self.hidden_weights.shape()),
            bias: Tensor::zeros(self.bias.shape()),
            peephole: self.peephole.as_ref().map(|p| Tensor::zeros(p.shape())),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.input_weights.shape()[1]
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.hidden_weights.shape()[2]
    }

    fn input_spec(&self) -> ConvSpec {
        ConvSpec::same(self.input_channels(), GATES * self.hidden_channels(), self.kernel())
    }

    fn hidden_spec(&self) -> ConvSpec {
        ConvSpec::same(self.hidden_channels(), GATES * self.hidden_channels(), self.kernel())
    }

    pub fn validate(&self) -> Result<()> {
        let op = "ConvLstmParams";
        let [gc, _, kh, kw] = dims4(&self.input_weights, op)?;
        let [gc2, ch, kh2, kw2] = dims4(&self.hidden_weights, op)?;
        if gc != GATES * ch || gc2 != gc {
            return Err(Error::shape(op, format!("gate channels {gc}/{gc2} do not equal 4 x hidden {ch}")));
        }
        if (kh, kw) != (kh2, kw2) || kh != kw {
            return Err(Error::shape(
                op,
                format!("input-to-hidden kernel {kh}x{kw} and hidden-to-hidden kernel {kh2}x{kw2} must be equal and square"),
            ));
        }
        if kh % 2 == 0 {
            return Err(Error::shape(op, format!("kernel {kh} must be odd for same padding")));
        }
        self.bias.expect_shape(&[gc], op)?;
        if let Some(p) = &self.peephole {
            let [three, pch, ..] = dims4(p, op)?;
            if three != 3 || pch != ch {
                return Err(Error::shape(op, format!("peephole shape {:?}", p.shape())));
            }
        }
        Ok(())
    }

    /// Parameter tensors with their canonical suffix names.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut v = vec![
            ("wx", &self.input_weights),
            ("wh", &self.hidden_weights),
            ("bias", &self.bias),
        ];
        if let Some(p) = &self.peephole {
            v.push(("peephole", p));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut v = vec![
            ("wx", &mut self.input_weights),
            ("wh", &mut self.hidden_weights),
            ("bias", &mut self.bias),
        ];
        if let Some(p) = &mut self.peephole {
            v.push(("peephole", p));
        }
        v
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    let (a, b, c, d) = t.dims4(op)?;
    Ok([a, b, c, d])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Scalar> ConvLstmState<T> {
    pub fn zeros(batch: usize, channels: usize, h: usize, w: usize) -> Self {
        Self {
            h: Tensor::zeros(&[batch, channels, h, w]),
            c: Tensor::zeros(&[batch, channels, h, w]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.h.expect_same_shape(&self.c, "ConvLstmState")
    }
}

/// Activations retained by [`cell_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct CellCache<T> {
    x: Tensor<T>,
    h_prev: Tensor<T>,
    c_prev: Tensor<T>,
    /// Activated gates packed `[B, 4*Ch, H, W]` as `(i, f, g, o)`.
    gates: Tensor<T>,
    c: Tensor<T>,
    tanh_c: Tensor<T>,
}

impl<T: Scalar> CellCache<T> {
    /// Activated gates `(i, f, tanh-candidate, o)` packed along channels.
    pub fn gates(&self) -> &Tensor<T> {
        &self.gates
    }
}

#[derive(Clone, Debug)]
pub struct CellGrads<T> {
    pub input: Tensor<T>,
    pub prev: ConvLstmState<T>,
    pub params: ConvLstmParams<T>,
}

pub fn cell_forward<T: Scalar>(
    x: &Tensor<T>,
    prev: &ConvLstmState<T>,
    params: &ConvLstmParams<T>,
) -> Result<(ConvLstmState<T>, CellCache<T>)> {
    let op = "cell_forward";
    prev.validate()?;
    let (b, _, h, w) = x.dims4(op)?;
    let ch = params.hidden_channels();
    prev.h.expect_shape(&[b, ch, h, w], op)?;
    if let Some(p) = &params.peephole {
        p.expect_shape(&[3, ch, h, w], op)?;
    }

    let mut z = conv2d_forward_opt(x, &params.input_weights, Some(&params.bias), &params.input_spec())?;
    let zh = conv2d_forward_opt(&prev.h, &params.hidden_weights, None, &params.hidden_spec())?;
    z.add_assign(&zh)?;

    let plane = h * w;
    let block = ch * plane;
    let mut c = Tensor::zeros(prev.c.shape());
    let mut tanh_c = Tensor::zeros(prev.c.shape());
    let mut hidden = Tensor::zeros(prev.c.shape());
    let peep = params.peephole.as_ref().map(|p| p.data());
    let zd = z.data_mut();
    for bi in 0..b {
        let zb = &mut zd[bi * GATES * block..(bi + 1) * GATES * block];
        for k in 0..block {
            let cp = prev.c.data()[bi * block + k];
            let (pi, pf, po) = match peep {
                Some(p) => (p[k], p[block + k], p[2 * block + k]),
                None => (T::zero(), T::zero(), T::zero()),
            };
            let i = sigmoid_scalar(zb[GATE_I * block + k] + pi * cp);
            let f = sigmoid_scalar(zb[GATE_F * block + k] + pf * cp);
            let g = zb[GATE_C * block + k].tanh();
            let cn = f * cp + i * g;
            let o = sigmoid_scalar(zb[GATE_O * block + k] + po * cn);
            let tc = cn.tanh();
            zb[GATE_I * block + k] = i;
            zb[GATE_F * block + k] = f;
            zb[GATE_C * block + k] = g;
            zb[GATE_O * block + k] = o;
            c.data_mut()[bi * block + k] = cn;
            tanh_c.data_mut()[bi * block + k] = tc;
            hidden.data_mut()[bi * block + k] = o * tc;
        }
    }
    let state = ConvLstmState {
        h: hidden,
        c: c.clone(),
    };
    let cache = CellCache {
        x: x.clone(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        gates: z,
        c,
        tanh_c,
    };
    Ok((state, cache))
}

/// Gradients of one cell step. `grad_h` and `grad_c` are the total upstream
/// gradients w.r.t. the new hidden and cell state; summing parameter
/// gradients over time is left to the caller.
pub fn cell_backward<T: Scalar>(
    grad_h: &Tensor<T>,
    grad_c: &Tensor<T>,
    cache: &CellCache<T>,
    params: &ConvLstmParams<T>,
) -> Result<CellGrads<T>> {
    let op = "cell_backward";
    grad_h.expect_same_shape(&cache.c, op)?;
    grad_c.expect_same_shape(&cache.c, op)?;
    let (b, ch, h, w) = cache.c.dims4(op)?;
    if ch != params.hidden_channels() || cache.x.shape()[1] != params.input_channels() {
        return Err(Error::shape(op, "cache does not match cell parameters"));
    }

    let block = ch * h * w;
    let mut dz = Tensor::zeros(cache.gates.shape());
    let mut dc_prev = Tensor::zeros(cache.c.shape());
    let mut dpeep = params.peephole.as_ref().map(|p| Tensor::zeros(p.shape()));
    let peep = params.peephole.as_ref().map(|p| p.data());
    let gates = cache.gates.data();
    for bi in 0..b {
        let gb = &gates[bi * GATES * block..(bi + 1) * GATES * block];
        for k in 0..block {
            let idx = bi * block + k;
            let (i, f, g, o) = (
                gb[GATE_I * block + k],
                gb[GATE_F * block + k],
                gb[GATE_C * block + k],
                gb[GATE_O * block + k],
            );
            let cp = cache.c_prev.data()[idx];
            let cn = cache.c.data()[idx];
            let tc = cache.tanh_c.data()[idx];
            let dh = grad_h.data()[idx];
            let one = T::one();

            let dzo = dh * tc * o * (one - o);
            let mut dc = grad_c.data()[idx] + dh * o * (one - tc * tc);
            if let Some(p) = peep {
                dc = dc + dzo * p[2 * block + k];
            }
            let dzi = dc * g * i * (one - i);
            let dzf = dc * cp * f * (one - f);
            let dzg = dc * i * (one - g * g);
            let mut dcp = dc * f;
            if let (Some(p), Some(dp)) = (peep, dpeep.as_mut()) {
                dcp = dcp + dzi * p[k] + dzf * p[block + k];
                let dpd = dp.data_mut();
                dpd[k] = dpd[k] + dzi * cp;
                dpd[block + k] = dpd[block + k] + dzf * cp;
                dpd[2 * block + k] = dpd[2 * block + k] + dzo * cn;
            }
            dc_prev.data_mut()[idx] = dcp;
            let zb = &mut dz.data_mut()[bi * GATES * block..(bi + 1) * GATES * block];
            zb[GATE_I * block + k] = dzi;
            zb[GATE_F * block + k] = dzf;
            zb[GATE_C * block + k] = dzg;
            zb[GATE_O * block + k] = dzo;
        }
    }

    let gx = conv2d_backward_opt(&dz, &cache.x, &params.input_weights, &params.input_spec(), true)?;
    let gh = conv2d_backward_opt(&dz, &cache.h_prev, &params.hidden_weights, &params.hidden_spec(), true)?;
    Ok(CellGrads {
        input: gx.input,
        prev: ConvLstmState {
            h: gh.input,
            c: dc_prev,
        },
        params: ConvLstmParams {
            input_weights: gx.weights,
            hidden_weights: gh.weights,
            bias: gx.bias,
            peephole: dpeep,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_give_half_open_gates_and_zero_state() {
        let params = ConvLstmParams::<f64>::zeros(2, 3, 3, None);
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f64 * 0.37).sin());
        let prev = ConvLstmState::zeros(1, 3, 4, 4);
        let (next, cache) = cell_forward(&x, &prev, &params).unwrap();
        let block = 3 * 16;
        let g = cache.gates().data();
        assert!(g[..block].iter().all(|&v| v == 0.5));
        assert!(g[block..2 * block].iter().all(|&v| v == 0.5));
        assert!(g[2 * block..3 * block].iter().all(|&v| v == 0.0));
        assert!(g[3 * block..].iter().all(|&v| v == 0.5));
        assert!(next.c.data().iter().all(|&v| v == 0.0));
        assert!(next.h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_carries_state() {
        let ch = 2;
        let mut params = ConvLstmParams::<f64>::zeros(1, ch, 3, None);
        let big = 40.0;
        for (k, b) in params.bias.data_mut().iter_mut().enumerate() {
            *b = match k / ch {
                GATE_I => -big,
                GATE_F => big,
                GATE_O => big,
                _ => 0.0,
            };
        }
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let c = Tensor::from_fn(&[1, ch, 3, 3], |i| (i as f64 - 9.0) / 6.0);
        let prev = ConvLstmState {
            h: Tensor::zeros(&[1, ch, 3, 3]),
            c: c.clone(),
        };
        let (next, _) = cell_forward(&x, &prev, &params).unwrap();
        for (hv, cv) in next.h.data().iter().zip(c.data()) {
            assert!((hv - cv.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_kernels_and_spatial_extent() {
        let mut params = ConvLstmParams::<f32>::zeros(1, 2, 3, None);
        params.hidden_weights = Tensor::zeros(&[8, 2, 5, 5]);
        assert!(params.validate().is_err());

        let params = ConvLstmParams::<f32>::zeros(1, 2, 3, None);
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let prev = ConvLstmState::zeros(1, 2, 5, 5);
        assert!(cell_forward(&x, &prev, &params).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient() {
        let mut params = ConvLstmParams::<f64>::zeros(1, 2, 3, Some((4, 4)));
        params.input_weights = Tensor::from_fn(params.input_weights.shape(), |i| (i as f64).cos() * 0.3);
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| (i as f64).sin());
        let prev = ConvLstmState::zeros(1, 2, 4, 4);
        let (_, cache) = cell_forward(&x, &prev, &params).unwrap();
        let zero = Tensor::zeros(&[1, 2, 4, 4]);
        let g = cell_backward(&zero, &zero, &cache, &params).unwrap();
        for (_, t) in g.params.tensors() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }
}
