//! The three-level convolutional-LSTM encoder-decoder.
//!
//! Encoder, per input frame: `conv_l -> leaky ReLU -> convLSTM_l` for
//! `l = 1, 2, 3`, each convLSTM's hidden state feeding the next strided
//! convolution. After the last input frame every decoder convLSTM starts
//! from the final `(h, c)` of its encoder counterpart. Each decoder step runs
//! top-down: the top decoder cell consumes its own previous hidden output
//! (the encoder's final top-level output on the first step); every deconv
//! up-samples its level's hidden state, and the result is the input of the
//! decoder cell one level below. A final convolution with a sigmoid maps the
//! lowest up-sampled stream to one output frame.

use std::fmt;
use std::str::FromStr;

use crate::convlstm::{cell_backward, cell_forward, CellCache, ConvLstmParams, ConvLstmState};
use crate::error::{Error, Result};
use crate::ops::{
    conv2d_backward_opt, conv2d_forward, deconv2d_backward, deconv2d_forward, leaky_relu, leaky_relu_backward,
    sigmoid, sigmoid_backward, ConvSpec,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LEVELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Target is the `tau` frames following the input volume.
    Prediction,
    /// Target is the input volume in reverse temporal order.
    Reconstruction,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Prediction => "prediction",
            Mode::Reconstruction => "reconstruction",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prediction" => Ok(Mode::Prediction),
            "reconstruction" => Ok(Mode::Reconstruction),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected prediction|reconstruction)"
            ))),
        }
    }
}

/// One encoder level and its mirrored decoder level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelConfig {
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_padding: usize,
    pub hidden_channels: usize,
    pub lstm_kernel: usize,
    pub deconv_kernel: usize,
    pub deconv_padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureConfig {
    /// `(H, W)` of every frame.
    pub input_size: (usize, usize),
    pub tau: usize,
    pub levels: [LevelConfig; LEVELS],
    /// Channels produced by the lowest deconvolution.
    pub head_channels: usize,
    pub head_kernel: usize,
    pub leaky_slope: f64,
    pub mode: Mode,
    pub peepholes: bool,
}

impl ArchitectureConfig {
    /// Desk-scale reference: 64x64 frames, `tau = 5`, encoder convolutions
    /// 32/64/64 channels with 5/3/3 kernels and stride 2, 3x3 convLSTMs with
    /// 32/64/64 hidden channels.
    pub fn reference() -> Self {
        Self {
            input_size: (64, 64),
            tau: 5,
            levels: [
                level(32, 5, 2, 2, 32, 3, 4, 1),
                level(64, 3, 2, 1, 64, 3, 4, 1),
                level(64, 3, 2, 1, 64, 3, 4, 1),
            ],
            head_channels: 16,
            head_kernel: 3,
            leaky_slope: 0.2,
            mode: Mode::Prediction,
            peepholes: false,
        }
    }

    /// The reference layer stack on full 227x227 frames. Odd extents need
    /// 3/4/3 deconvolution kernels to invert the strided convolutions.
    pub fn full_scale() -> Self {
        let mut cfg = Self::reference();
        cfg.input_size = (227, 227);
        cfg.levels[0].deconv_kernel = 3;
        cfg.levels[1].deconv_kernel = 4;
        cfg.levels[2].deconv_kernel = 3;
        cfg
    }

    /// 32x32, `tau = 5`, 8/16/16 channels: the reference topology shrunk so
    /// that detection experiments train in minutes on one core.
    pub fn benchmark() -> Self {
        Self {
            input_size: (32, 32),
            tau: 5,
            levels: [
                level(8, 5, 2, 2, 8, 3, 4, 1),
                level(16, 3, 2, 1, 16, 3, 4, 1),
                level(16, 3, 2, 1, 16, 3, 4, 1),
            ],
            head_channels: 8,
            head_kernel: 3,
            leaky_slope: 0.2,
            mode: Mode::Prediction,
            peepholes: false,
        }
    }

    /// 16x16, `tau = 2`, at most 8 channels; small enough for exhaustive
    /// finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            input_size: (16, 16),
            tau: 2,
            levels: [
                level(4, 3, 2, 1, 4, 3, 4, 1),
                level(6, 3, 2, 1, 6, 3, 4, 1),
                level(8, 3, 2, 1, 8, 3, 4, 1),
            ],
            head_channels: 4,
            head_kernel: 3,
            leaky_slope: 0.2,
            mode: Mode::Prediction,
            peepholes: false,
        }
    }

    pub fn encoder_conv_spec(&self, l: usize) -> ConvSpec {
        let lc = &self.levels[l];
        let cin = if l == 0 { 1 } else { self.levels[l - 1].hidden_channels };
        ConvSpec::new(cin, lc.conv_channels, lc.conv_kernel, lc.conv_stride, lc.conv_padding)
    }

    pub fn decoder_deconv_spec(&self, l: usize) -> ConvSpec {
        let lc = &self.levels[l];
        let cout = if l == 0 { self.head_channels } else { self.levels[l - 1].hidden_channels };
        ConvSpec::new(lc.hidden_channels, cout, lc.deconv_kernel, lc.conv_stride, lc.deconv_padding)
    }

    pub fn head_spec(&self) -> ConvSpec {
        ConvSpec::same(self.head_channels, 1, self.head_kernel)
    }

    /// Input channels of the encoder and decoder cells at level `l`.
    fn cell_input_channels(&self, l: usize) -> (usize, usize) {
        let enc = self.levels[l].conv_channels;
        let dec = self.levels[l].hidden_channels;
        (enc, dec)
    }

    /// Spatial extents `[input, after level 1, after level 2, after level 3]`.
    pub fn spatial_sizes(&self) -> Result<[(usize, usize); LEVELS + 1]> {
        let mut sizes = [self.input_size; LEVELS + 1];
        for l in 0..LEVELS {
            let (h, w) = sizes[l];
            sizes[l + 1] = self.encoder_conv_spec(l).output_size(h, w)?;
        }
        Ok(sizes)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        if self.tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {} outside (0,1)", self.leaky_slope)));
        }
        if self.head_channels == 0 || self.head_kernel % 2 == 0 {
            return Err(Error::Config("head needs positive channels and an odd kernel".into()));
        }
        for (l, lc) in self.levels.iter().enumerate() {
            if lc.lstm_kernel % 2 == 0 || lc.hidden_channels == 0 {
                return Err(Error::Config(format!(
                    "level {}: convLSTM kernel must be odd and hidden channels positive",
                    l + 1
                )));
            }
        }
        let sizes = self.spatial_sizes().map_err(|e| Error::Config(e.to_string()))?;
        for l in 0..LEVELS {
            let restored = self
                .decoder_deconv_spec(l)
                .transposed_output_size(sizes[l + 1].0, sizes[l + 1].1)
                .map_err(|e| Error::Config(e.to_string()))?;
            if restored != sizes[l] {
                return Err(Error::Config(format!(
                    "level {}: deconvolution maps {:?} to {restored:?} but the encoder convolution started from {:?}",
                    l + 1,
                    sizes[l + 1],
                    sizes[l]
                )));
            }
        }
        Ok(())
    }

    pub fn slope<T: Scalar>(&self) -> T {
        T::from_f64_lossy(self.leaky_slope)
    }
}

#[allow(clippy::too_many_arguments)]
const fn level(
    conv_channels: usize,
    conv_kernel: usize,
    conv_stride: usize,
    conv_padding: usize,
    hidden_channels: usize,
    lstm_kernel: usize,
    deconv_kernel: usize,
    deconv_padding: usize,
) -> LevelConfig {
    LevelConfig {
        conv_channels,
        conv_kernel,
        conv_stride,
        conv_padding,
        hidden_channels,
        lstm_kernel,
        deconv_kernel,
        deconv_padding,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    fn zeros(weight_shape: &[usize], channels: usize) -> Self {
        Self {
            weight: Tensor::zeros(weight_shape),
            bias: Tensor::zeros(&[channels]),
        }
    }
}

/// How a parameter tensor is initialized and whether it is weight-decayed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution or deconvolution kernel; He-initialized with the given fan-in.
    Kernel { fan_in: usize },
    /// convLSTM kernel or peephole weights; small fixed-variance Gaussian.
    LstmWeight,
    Bias,
}

impl ParamKind {
    /// Only weights enter the regularization term, never biases.
    pub fn decays(self) -> bool {
        !matches!(self, ParamKind::Bias)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub encoder_convs: Vec<ConvLayer<T>>,
    pub encoder_cells: Vec<ConvLstmParams<T>>,
    pub decoder_cells: Vec<ConvLstmParams<T>>,
    /// `decoder_deconvs[l]` up-samples level `l` to the extent of level `l - 1`.
    pub decoder_deconvs: Vec<ConvLayer<T>>,
    pub head: ConvLayer<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// All-zero parameters shaped for `config`.
    pub fn zeros(config: &ArchitectureConfig) -> Result<Self> {
        config.validate()?;
        let sizes = config.spatial_sizes()?;
        let mut encoder_convs = Vec::new();
        let mut encoder_cells = Vec::new();
        let mut decoder_cells = Vec::new();
        let mut decoder_deconvs = Vec::new();
        for l in 0..LEVELS {
            let lc = &config.levels[l];
            let cs = config.encoder_conv_spec(l);
            encoder_convs.push(ConvLayer::zeros(
                &[cs.out_channels, cs.in_channels, cs.kernel.0, cs.kernel.1],
                cs.out_channels,
            ));
            let peep = config.peepholes.then_some(sizes[l + 1]);
            let (enc_in, dec_in) = config.cell_input_channels(l);
            encoder_cells.push(ConvLstmParams::zeros(enc_in, lc.hidden_channels, lc.lstm_kernel, peep));
            decoder_cells.push(ConvLstmParams::zeros(dec_in, lc.hidden_channels, lc.lstm_kernel, peep));
            let ds = config.decoder_deconv_spec(l);
            decoder_deconvs.push(ConvLayer::zeros(
                &[ds.in_channels, ds.out_channels, ds.kernel.0, ds.kernel.1],
                ds.out_channels,
            ));
        }
        let hs = config.head_spec();
        let head = ConvLayer::zeros(&[1, hs.in_channels, hs.kernel.0, hs.kernel.1], 1);
        Ok(Self {
            encoder_convs,
            encoder_cells,
            decoder_cells,
            decoder_deconvs,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let conv = |c: &ConvLayer<T>| ConvLayer {
            weight: Tensor::zeros(c.weight.shape()),
            bias: Tensor::zeros(c.bias.shape()),
        };
        Self {
            encoder_convs: self.encoder_convs.iter().map(conv).collect(),
            encoder_cells: self.encoder_cells.iter().map(ConvLstmParams::zeros_like).collect(),
            decoder_cells: self.decoder_cells.iter().map(ConvLstmParams::zeros_like).collect(),
            decoder_deconvs: self.decoder_deconvs.iter().map(conv).collect(),
            head: conv(&self.head),
        }
    }

    /// Every parameter tensor in canonical order with its name and kind.
    pub fn groups(&self) -> Vec<(String, ParamKind, &Tensor<T>)> {
        let mut out = Vec::new();
        for l in 0..self.encoder_convs.len() {
            let c = &self.encoder_convs[l];
            let fan_in = c.weight.len() / c.weight.shape()[0];
            out.push((format!("enc{}.conv.weight", l + 1), ParamKind::Kernel { fan_in }, &c.weight));
            out.push((format!("enc{}.conv.bias", l + 1), ParamKind::Bias, &c.bias));
            for (suffix, t) in self.encoder_cells[l].tensors() {
                out.push((format!("enc{}.lstm.{suffix}", l + 1), lstm_kind(suffix), t));
            }
        }
        for l in (0..self.decoder_cells.len()).rev() {
            for (suffix, t) in self.decoder_cells[l].tensors() {
                out.push((format!("dec{}.lstm.{suffix}", l + 1), lstm_kind(suffix), t));
            }
            let d = &self.decoder_deconvs[l];
            let s = d.weight.shape();
            let fan_in = s[0] * s[2] * s[3];
            out.push((format!("dec{}.deconv.weight", l + 1), ParamKind::Kernel { fan_in }, &d.weight));
            out.push((format!("dec{}.deconv.bias", l + 1), ParamKind::Bias, &d.bias));
        }
        let fan_in = self.head.weight.len();
        out.push(("head.weight".into(), ParamKind::Kernel { fan_in }, &self.head.weight));
        out.push(("head.bias".into(), ParamKind::Bias, &self.head.bias));
        out
    }

    /// Mutable counterpart of [`groups`](Self::groups), same order.
    pub fn groups_mut(&mut self) -> Vec<(String, ParamKind, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let levels = self.encoder_convs.len();
        for (l, (c, cell)) in self.encoder_convs.iter_mut().zip(self.encoder_cells.iter_mut()).enumerate() {
            let fan_in = c.weight.len() / c.weight.shape()[0];
            out.push((format!("enc{}.conv.weight", l + 1), ParamKind::Kernel { fan_in }, &mut c.weight));
            out.push((format!("enc{}.conv.bias", l + 1), ParamKind::Bias, &mut c.bias));
            for (suffix, t) in cell.tensors_mut() {
                out.push((format!("enc{}.lstm.{suffix}", l + 1), lstm_kind(suffix), t));
            }
        }
        let mut dec: Vec<_> = self.decoder_cells.iter_mut().zip(self.decoder_deconvs.iter_mut()).collect();
        for l in (0..levels).rev() {
            let (cell, d) = dec.pop().expect("one decoder level per encoder level");
            for (suffix, t) in cell.tensors_mut() {
                out.push((format!("dec{}.lstm.{suffix}", l + 1), lstm_kind(suffix), t));
            }
            let s = d.weight.shape();
            let fan_in = s[0] * s[2] * s[3];
            out.push((format!("dec{}.deconv.weight", l + 1), ParamKind::Kernel { fan_in }, &mut d.weight));
            out.push((format!("dec{}.deconv.bias", l + 1), ParamKind::Bias, &mut d.bias));
        }
        let fan_in = self.head.weight.len();
        out.push(("head.weight".into(), ParamKind::Kernel { fan_in }, &mut self.head.weight));
        out.push(("head.bias".into(), ParamKind::Bias, &mut self.head.bias));
        out
    }

    /// `self += other`, group by group.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        for ((_, _, dst), (_, _, src)) in self.groups_mut().into_iter().zip(other.groups()) {
            dst.add_assign(src)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, alpha: T) {
        for (_, _, t) in self.groups_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v * alpha);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |c: &ConvLayer<T>| ConvLayer {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        let cell = |c: &ConvLstmParams<T>| ConvLstmParams {
            input_weights: c.input_weights.cast(),
            hidden_weights: c.hidden_weights.cast(),
            bias: c.bias.cast(),
            peephole: c.peephole.as_ref().map(Tensor::cast),
        };
        ModelParams {
            encoder_convs: self.encoder_convs.iter().map(conv).collect(),
            encoder_cells: self.encoder_cells.iter().map(cell).collect(),
            decoder_cells: self.decoder_cells.iter().map(cell).collect(),
            decoder_deconvs: self.decoder_deconvs.iter().map(conv).collect(),
            head: conv(&self.head),
        }
    }

    /// Checks every tensor against the shapes `config` implies.
    pub fn check_config(&self, config: &ArchitectureConfig) -> Result<()> {
        let expected = Self::zeros(config)?;
        let mine = self.groups();
        let theirs = expected.groups();
        if mine.len() != theirs.len() {
            return Err(Error::Config(format!(
                "parameter set has {} groups, configuration implies {}",
                mine.len(),
                theirs.len()
            )));
        }
        for ((name, _, t), (_, _, e)) in mine.iter().zip(&theirs) {
            if t.shape() != e.shape() {
                return Err(Error::shape(
                    "ModelParams",
                    format!("{name}: {:?} but configuration implies {:?}", t.shape(), e.shape()),
                ));
            }
        }
        Ok(())
    }
}

fn lstm_kind(suffix: &str) -> ParamKind {
    if suffix == "bias" {
        ParamKind::Bias
    } else {
        ParamKind::LstmWeight
    }
}

/// Total number of scalar parameters.
pub fn count_parameters<T: Scalar>(params: &ModelParams<T>) -> usize {
    params.groups().iter().map(|(_, _, t)| t.len()).sum()
}

struct EncoderLevelCache<T> {
    conv_input: Tensor<T>,
    conv_pre: Tensor<T>,
    cell: CellCache<T>,
}

struct DecoderLevelCache<T> {
    cell: CellCache<T>,
    /// Hidden output of the cell, i.e. the deconvolution input.
    hidden: Tensor<T>,
    deconv_pre: Tensor<T>,
}

struct DecoderStepCache<T> {
    levels: Vec<DecoderLevelCache<T>>,
    head_input: Tensor<T>,
    output: Tensor<T>,
}

/// Everything [`backward`] needs from a [`forward`] call.
pub struct ForwardCache<T> {
    input_shape: Vec<usize>,
    encoder: Vec<Vec<EncoderLevelCache<T>>>,
    decoder: Vec<DecoderStepCache<T>>,
}

impl<T> ForwardCache<T> {
    /// Every leaky-ReLU input of the pass, in a fixed order.
    pub(crate) fn leaky_inputs(&self) -> impl Iterator<Item = &Tensor<T>> {
        let enc = self.encoder.iter().flatten().map(|l| &l.conv_pre);
        let dec = self.decoder.iter().flat_map(|s| s.levels.iter().map(|l| &l.deconv_pre));
        enc.chain(dec)
    }
}

fn check_input<T: Scalar>(input: &Tensor<T>, config: &ArchitectureConfig, op: &'static str) -> Result<usize> {
    let (b, c, h, w, tau) = input.dims5(op)?;
    if c != 1 || (h, w) != config.input_size || tau != config.tau {
        return Err(Error::shape(
            op,
            format!(
                "input {:?} does not match configuration [B, 1, {}, {}, {}]",
                input.shape(),
                config.input_size.0,
                config.input_size.1,
                config.tau
            ),
        ));
    }
    Ok(b)
}

/// Runs the encoder over all input frames and the decoder for `tau` steps.
/// Output has the input's shape, values in `(0, 1)`.
pub fn forward<T: Scalar>(
    input: &Tensor<T>,
    params: &ModelParams<T>,
    config: &ArchitectureConfig,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let batch = check_input(input, config, "model::forward")?;
    let sizes = config.spatial_sizes()?;
    let slope: T = config.slope();

    let mut states: Vec<ConvLstmState<T>> = (0..LEVELS)
        .map(|l| {
            let (h, w) = sizes[l + 1];
            ConvLstmState::zeros(batch, config.levels[l].hidden_channels, h, w)
        })
        .collect();

    let mut encoder = Vec::with_capacity(config.tau);
    for t in 0..config.tau {
        let mut a = input.time_slice(t)?;
        let mut step = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            let layer = &params.encoder_convs[l];
            let pre = conv2d_forward(&a, &layer.weight, &layer.bias, &config.encoder_conv_spec(l))?;
            let x = leaky_relu(&pre, slope);
            let (next, cell) = cell_forward(&x, &states[l], &params.encoder_cells[l])?;
            step.push(EncoderLevelCache {
                conv_input: std::mem::replace(&mut a, next.h.clone()),
                conv_pre: pre,
                cell,
            });
            states[l] = next;
        }
        encoder.push(step);
    }

    // State hand-off: decoder cells start from the encoder's final (h, c).
    let mut output = Tensor::zeros(input.shape());
    let mut decoder = Vec::with_capacity(config.tau);
    for k in 0..config.tau {
        let mut levels: Vec<Option<DecoderLevelCache<T>>> = (0..LEVELS).map(|_| None).collect();
        let mut stream: Option<Tensor<T>> = None;
        for l in (0..LEVELS).rev() {
            // Top level is closed-loop on its own previous output; lower levels
            // take the up-sampled stream from the level above.
            let x = match stream.take() {
                Some(up) => up,
                None => states[l].h.clone(),
            };
            let (next, cell) = cell_forward(&x, &states[l], &params.decoder_cells[l])?;
            let d = &params.decoder_deconvs[l];
            let pre = deconv2d_forward(&next.h, &d.weight, &d.bias, &config.decoder_deconv_spec(l))?;
            stream = Some(leaky_relu(&pre, slope));
            levels[l] = Some(DecoderLevelCache {
                cell,
                hidden: next.h.clone(),
                deconv_pre: pre,
            });
            states[l] = next;
        }
        let head_input = stream.expect("at least one level");
        let pre = conv2d_forward(&head_input, &params.head.weight, &params.head.bias, &config.head_spec())?;
        let frame = sigmoid(&pre);
        output.set_time_slice(k, &frame)?;
        decoder.push(DecoderStepCache {
            levels: levels.into_iter().map(|c| c.expect("every level visited")).collect(),
            head_input,
            output: frame,
        });
    }

    Ok((
        output,
        ForwardCache {
            input_shape: input.shape().to_vec(),
            encoder,
            decoder,
        },
    ))
}

/// Gradients of a scalar loss w.r.t. every parameter, given its gradient
/// w.r.t. the model output.
pub fn backward<T: Scalar>(
    grad_output: &Tensor<T>,
    cache: &ForwardCache<T>,
    params: &ModelParams<T>,
    config: &ArchitectureConfig,
) -> Result<ModelParams<T>> {
    let op = "model::backward";
    grad_output.expect_shape(&cache.input_shape, op)?;
    if cache.decoder.len() != config.tau || cache.encoder.len() != config.tau {
        return Err(Error::shape(op, "cache was produced for a different tau"));
    }
    let slope: T = config.slope();
    let mut grads = params.zeros_like();

    let last = &cache.decoder[config.tau - 1];
    let mut carry: Vec<ConvLstmState<T>> = last
        .levels
        .iter()
        .map(|lvl| {
            let s = lvl.hidden.shape();
            ConvLstmState {
                h: Tensor::zeros(s),
                c: Tensor::zeros(s),
            }
        })
        .collect();

    for k in (0..config.tau).rev() {
        let step = &cache.decoder[k];
        let g_frame = grad_output.time_slice(k)?;
        let g_pre = sigmoid_backward(&g_frame, &step.output)?;
        let hg = conv2d_backward_opt(&g_pre, &step.head_input, &params.head.weight, &config.head_spec(), true)?;
        grads.head.weight.add_assign(&hg.weights)?;
        grads.head.bias.add_assign(&hg.bias)?;
        let mut g_stream = hg.input;
        for l in 0..LEVELS {
            let lvl = &step.levels[l];
            let d = &params.decoder_deconvs[l];
            let g_pre = leaky_relu_backward(&g_stream, &lvl.deconv_pre, slope)?;
            let dg = deconv2d_backward(&g_pre, &lvl.hidden, &d.weight, &config.decoder_deconv_spec(l))?;
            grads.decoder_deconvs[l].weight.add_assign(&dg.weights)?;
            grads.decoder_deconvs[l].bias.add_assign(&dg.bias)?;
            let mut g_h = dg.input;
            g_h.add_assign(&carry[l].h)?;
            let cg = cell_backward(&g_h, &carry[l].c, &lvl.cell, &params.decoder_cells[l])?;
            accumulate_cell(&mut grads.decoder_cells[l], &cg.params)?;
            carry[l] = cg.prev;
            if l + 1 < LEVELS {
                g_stream = cg.input;
            } else {
                // Closed loop: the top cell's input was its previous hidden state.
                carry[l].h.add_assign(&cg.input)?;
            }
        }
    }

    // `carry` now holds gradients w.r.t. the encoder's final states.
    for t in (0..config.tau).rev() {
        let step = &cache.encoder[t];
        for l in (0..LEVELS).rev() {
            let lvl = &step[l];
            let cg = cell_backward(&carry[l].h, &carry[l].c, &lvl.cell, &params.encoder_cells[l])?;
            accumulate_cell(&mut grads.encoder_cells[l], &cg.params)?;
            carry[l] = cg.prev;
            let g_pre = leaky_relu_backward(&cg.input, &lvl.conv_pre, slope)?;
            let layer = &params.encoder_convs[l];
            let conv_g = conv2d_backward_opt(&g_pre, &lvl.conv_input, &layer.weight, &config.encoder_conv_spec(l), l > 0)?;
            grads.encoder_convs[l].weight.add_assign(&conv_g.weights)?;
            grads.encoder_convs[l].bias.add_assign(&conv_g.bias)?;
            if l > 0 {
                carry[l - 1].h.add_assign(&conv_g.input)?;
            }
        }
    }
    Ok(grads)
}

fn accumulate_cell<T: Scalar>(dst: &mut ConvLstmParams<T>, src: &ConvLstmParams<T>) -> Result<()> {
    for ((_, d), (_, s)) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        d.add_assign(s)?;
    }
    Ok(())
}

/// Training target for an input volume: the future frames in prediction
/// mode, the time-reversed input in reconstruction mode.
pub fn make_target<T: Scalar>(input: &Tensor<T>, future: Option<&Tensor<T>>, mode: Mode) -> Result<Tensor<T>> {
    match mode {
        Mode::Prediction => {
            let future = future.ok_or_else(|| {
                Error::Config("prediction mode needs the tau future frames as target".into())
            })?;
            future.expect_same_shape(input, "make_target")?;
            Ok(future.clone())
        }
        Mode::Reconstruction => input.reverse_time(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_and_full_scale_configs_are_valid() {
        ArchitectureConfig::reference().validate().unwrap();
        ArchitectureConfig::full_scale().validate().unwrap();
        ArchitectureConfig::tiny().validate().unwrap();
        assert_eq!(
            ArchitectureConfig::reference().spatial_sizes().unwrap(),
            [(64, 64), (32, 32), (16, 16), (8, 8)]
        );
    }

    #[test]
    fn non_inverting_deconvolution_is_rejected() {
        let mut cfg = ArchitectureConfig::reference();
        cfg.levels[1].deconv_kernel = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ArchitectureConfig::reference();
        cfg.tau = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn group_names_are_unique_and_mut_order_matches() {
        let mut cfg = ArchitectureConfig::tiny();
        cfg.peepholes = true;
        let mut p = ModelParams::<f32>::zeros(&cfg).unwrap();
        let names: Vec<_> = p.groups().into_iter().map(|(n, k, _)| (n, k)).collect();
        let mut dedup = names.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        let mut_names: Vec<_> = p.groups_mut().into_iter().map(|(n, k, _)| (n, k)).collect();
        assert_eq!(names, mut_names);
        assert!(names.iter().any(|(n, _)| n == "dec2.lstm.peephole"));
    }

    #[test]
    fn make_target_modes() {
        let input = Tensor::<f32>::from_fn(&[1, 1, 1, 1, 3], |i| i as f32);
        let future = Tensor::<f32>::from_fn(&[1, 1, 1, 1, 3], |i| 10.0 + i as f32);
        let rec = make_target(&input, None, Mode::Reconstruction).unwrap();
        assert_eq!(rec.data(), &[2.0, 1.0, 0.0]);
        let pred = make_target(&input, Some(&future), Mode::Prediction).unwrap();
        assert_eq!(pred, future);
        assert!(make_target(&input, None, Mode::Prediction).is_err());
        let pal = Tensor::<f32>::new(&[1, 1, 1, 1, 3], vec![1.0, 5.0, 1.0]).unwrap();
        assert_eq!(make_target(&pal, None, Mode::Reconstruction).unwrap(), pal);
    }

    #[test]
    fn single_frame_reconstruction_target_is_input() {
        let input = Tensor::<f32>::from_fn(&[2, 1, 2, 2, 1], |i| i as f32 * 0.1);
        assert_eq!(make_target(&input, None, Mode::Reconstruction).unwrap(), input);
    }

    #[test]
    fn output_shape_matches_input_and_forward_is_pure() {
        let cfg = ArchitectureConfig::tiny();
        let mut params = ModelParams::<f32>::zeros(&cfg).unwrap();
        for (i, (_, _, t)) in params.groups_mut().into_iter().enumerate() {
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v = (((i * 31 + j * 17) % 23) as f32 - 11.0) * 0.02;
            }
        }
        let input = Tensor::from_fn(&[2, 1, 16, 16, 2], |i| ((i * 7) % 11) as f32 / 10.0);
        let (a, _) = forward(&input, &params, &cfg).unwrap();
        let (b, _) = forward(&input, &params, &cfg).unwrap();
        assert_eq!(a.shape(), input.shape());
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let cfg = ArchitectureConfig::tiny();
        let mut params = ModelParams::<f64>::zeros(&cfg).unwrap();
        for (_, _, t) in params.groups_mut() {
            t.data_mut().iter_mut().enumerate().for_each(|(j, v)| *v = ((j % 7) as f64 - 3.0) * 0.05);
        }
        let input = Tensor::from_fn(&[1, 1, 16, 16, 2], |i| (i % 5) as f64 / 5.0);
        let (out, cache) = forward(&input, &params, &cfg).unwrap();
        let g = backward(&Tensor::zeros(out.shape()), &cache, &params, &cfg).unwrap();
        assert!(g.groups().iter().all(|(_, _, t)| t.max_abs() == 0.0));
    }
}
