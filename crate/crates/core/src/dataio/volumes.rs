//! Volume enumeration and batch assembly.

use std::fmt;
use std::str::FromStr;

use super::frames::Video;
use crate::error::{Error, Result};
use crate::model::{make_target, Mode};
use crate::tensor::Tensor;

/// Skip strides used to synthesize faster motion during training.
pub const TRAINING_STRIDES: [usize; 3] = [1, 2, 3];

/// A volume of `tau` frames starting at `start`, sampled every `stride`
/// frames of video `video`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VolumeIndex {
    pub video: usize,
    pub start: usize,
    pub stride: usize,
    pub tau: usize,
}

impl VolumeIndex {
    /// Number of source frames the volume and its target span.
    pub fn span(&self, mode: Mode) -> usize {
        let steps = match mode {
            Mode::Prediction => 2 * self.tau - 1,
            Mode::Reconstruction => self.tau - 1,
        };
        self.stride * steps + 1
    }

    pub fn fits(&self, len: usize, mode: Mode) -> bool {
        self.tau >= 1 && self.stride >= 1 && self.start + self.span(mode) <= len
    }

    pub fn input_frames(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tau).map(move |i| self.start + i * self.stride)
    }

    pub fn future_frames(&self) -> impl Iterator<Item = usize> + '_ {
        (self.tau..2 * self.tau).map(move |i| self.start + i * self.stride)
    }
}

/// Every valid `(start, stride)` of a video with `len` frames, ordered by
/// stride (ascending, duplicates ignored) and then start.
pub fn enumerate_volumes(video: usize, len: usize, tau: usize, mode: Mode, strides: &[usize]) -> Vec<VolumeIndex> {
    let mut strides: Vec<usize> = strides.iter().copied().filter(|&d| d >= 1).collect();
    strides.sort_unstable();
    strides.dedup();
    let mut out = Vec::new();
    if tau == 0 {
        return out;
    }
    for stride in strides {
        let probe = VolumeIndex { video, start: 0, stride, tau };
        let span = probe.span(mode);
        if span > len {
            continue;
        }
        out.extend((0..=len - span).map(|start| VolumeIndex { start, ..probe }));
    }
    out
}

/// Placement of test volumes along a video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TestStride {
    /// Non-overlapping windows: starts `0, tau, 2 tau, ...`.
    #[default]
    Volume,
    /// Every start frame.
    Sliding,
}

impl fmt::Display for TestStride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestStride::Volume => "volume",
            TestStride::Sliding => "sliding",
        })
    }
}

impl FromStr for TestStride {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" => Ok(TestStride::Volume),
            "sliding" => Ok(TestStride::Sliding),
            _ => Err(Error::Config(format!("test stride must be `volume` or `sliding`, got `{s}`"))),
        }
    }
}

/// Test volumes of one video. Frames are never skipped at test time.
pub fn test_volumes(video: usize, len: usize, tau: usize, mode: Mode, placement: TestStride) -> Vec<VolumeIndex> {
    let all = enumerate_volumes(video, len, tau, mode, &[1]);
    match placement {
        TestStride::Sliding => all,
        TestStride::Volume => all.into_iter().filter(|v| v.start % tau == 0).collect(),
    }
}

/// Input and target tensors, both `[B, 1, H, W, tau]`.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub indices: Vec<VolumeIndex>,
}

fn gather(videos: &[Video], indices: &[VolumeIndex], frames: impl Fn(&VolumeIndex) -> Vec<usize>) -> Result<Tensor<f32>> {
    let first = &videos[indices[0].video];
    let (h, w, tau) = (first.height, first.width, indices[0].tau);
    let plane = h * w;
    let mut data = vec![0.0f32; indices.len() * plane * tau];
    for (b, idx) in indices.iter().enumerate() {
        let video = &videos[idx.video];
        for (t, f) in frames(idx).into_iter().enumerate() {
            let src = &video.frames[f];
            let base = b * plane * tau;
            for (p, &v) in src.iter().enumerate() {
                data[base + p * tau + t] = v;
            }
        }
    }
    Tensor::new(&[indices.len(), 1, h, w, tau], data)
}

/// Stacks the volumes `indices` into a batch with targets for `mode`.
pub fn assemble_batch(indices: &[VolumeIndex], videos: &[Video], mode: Mode) -> Result<SequenceBatch> {
    let Some(first) = indices.first() else {
        return Err(Error::Config("cannot assemble an empty batch".into()));
    };
    let size = videos
        .get(first.video)
        .map(|v| (v.height, v.width))
        .ok_or_else(|| Error::Config(format!("video index {} out of range", first.video)))?;
    for idx in indices {
        let video = videos
            .get(idx.video)
            .ok_or_else(|| Error::Config(format!("video index {} out of range", idx.video)))?;
        if (video.height, video.width) != size {
            return Err(Error::shape(
                "assemble_batch",
                format!("video `{}` is {}x{}, batch is {}x{}", video.id, video.height, video.width, size.0, size.1),
            ));
        }
        if idx.tau != first.tau {
            return Err(Error::shape("assemble_batch", "volumes with different tau in one batch"));
        }
        if !idx.fits(video.len(), mode) {
            return Err(Error::Config(format!(
                "volume start {} stride {} tau {} does not fit video `{}` of {} frames in {mode} mode",
                idx.start,
                idx.stride,
                idx.tau,
                video.id,
                video.len()
            )));
        }
    }
    let input = gather(videos, indices, |v| v.input_frames().collect())?;
    let future = match mode {
        Mode::Prediction => Some(gather(videos, indices, |v| v.future_frames().collect())?),
        Mode::Reconstruction => None,
    };
    let target = make_target(&input, future.as_ref(), mode)?;
    Ok(SequenceBatch {
        input,
        target,
        indices: indices.to_vec(),
    })
}
