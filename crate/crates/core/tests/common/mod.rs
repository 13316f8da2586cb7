#![allow(dead_code)]

use convlstm_ad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Relative error with an absolute floor so that two tiny numbers compare equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` w.r.t. every element of `x`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * h);
    }
    g
}

pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Direct nested-loop cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Tensor<f64> {
    let s = x.shape();
    let ws = w.shape();
    let (bn, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = Tensor::zeros(&[bn, cout, oh, ow]);
    for n in 0..bn {
        for co in 0..cout {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride.0 + ky) as isize - pad.0 as isize;
                                let ix = (xo * stride.1 + kx) as isize - pad.1 as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.get(&[n, ci, iy as usize, ix as usize]) * w.get(&[co, ci, ky, kx]);
                            }
                        }
                    }
                    out.set(&[n, co, y, xo], acc);
                }
            }
        }
    }
    out
}

/// Scatter-form transposed convolution: every input pixel stamps its
/// weighted kernel onto the output.
pub fn deconv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Tensor<f64> {
    let s = x.shape();
    let ws = w.shape();
    let (bn, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
    let oh = (h - 1) * stride.0 + kh - 2 * pad.0;
    let ow = (wd - 1) * stride.1 + kw - 2 * pad.1;
    let mut out = Tensor::from_fn(&[bn, cout, oh, ow], |i| b.data()[(i / (oh * ow)) % cout]);
    for n in 0..bn {
        for ci in 0..cin {
            for y in 0..h {
                for xi in 0..wd {
                    let v = x.get(&[n, ci, y, xi]);
                    for co in 0..cout {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (y * stride.0 + ky) as isize - pad.0 as isize;
                                let ox = (xi * stride.1 + kx) as isize - pad.1 as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let idx = [n, co, oy as usize, ox as usize];
                                let cur = out.get(&idx);
                                out.set(&idx, cur + v * w.get(&[ci, co, ky, kx]));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
