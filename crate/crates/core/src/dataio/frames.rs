//! Frame folders, decoded videos and ground-truth label files.
//!
//! Dataset layout on disk:
//!
//! ```text
//! <root>/train/<video>/frame_0000.pgm ...
//! <root>/test/<video>/frame_0000.pgm ...
//! <root>/labels/<video>.txt        one 0/1 label per test frame
//! ```
//!
//! Frame files are PGM (P5) or PNG and are ordered lexicographically by
//! file name.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::image::{extension, read_gray, resize_bilinear, write_pgm, GrayImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";
pub const LABELS_DIR: &str = "labels";

/// Frame files of one video plus the size frames are resampled to.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSource {
    pub id: String,
    pub paths: Vec<PathBuf>,
    /// `(height, width)` of the first frame on disk.
    pub native_size: (usize, usize),
    /// `(height, width)` after resizing.
    pub target_size: (usize, usize),
}

impl FrameSource {
    /// Lists the `.pgm`/`.png` files in `dir`.
    pub fn open(dir: &Path, target_size: (usize, usize)) -> Result<Self> {
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Format {
                path: dir.to_path_buf(),
                reason: "video directory has no usable name".into(),
            })?
            .to_string();
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_file() && matches!(extension(&path).as_deref(), Some("pgm" | "png")) {
                paths.push(path);
            }
        }
        paths.sort();
        let first = paths.first().ok_or_else(|| Error::Format {
            path: dir.to_path_buf(),
            reason: "no .pgm or .png frames".into(),
        })?;
        let img = read_gray(first)?;
        Ok(Self {
            id,
            paths,
            native_size: (img.height, img.width),
            target_size,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Decodes every frame. Decoding runs on the rayon pool; frame order is
    /// preserved.
    pub fn load(&self) -> Result<Video> {
        let (h, w) = self.target_size;
        let frames = self
            .paths
            .par_iter()
            .map(|p| load_frame(p, self.target_size).map(Tensor::into_data))
            .collect::<Result<Vec<_>>>()?;
        Ok(Video {
            id: self.id.clone(),
            height: h,
            width: w,
            frames,
        })
    }
}

/// Decodes one frame to a `[1, H, W]` tensor with values in `[0, 1]`.
pub fn load_frame(path: &Path, target_size: (usize, usize)) -> Result<Tensor<f32>> {
    let (h, w) = target_size;
    if h == 0 || w == 0 {
        return Err(Error::Config(format!("target size {h}x{w} is empty")));
    }
    let img = resize_bilinear(&read_gray(path)?, w, h);
    Tensor::new(&[1, h, w], img.pixels)
}

/// Decoded frames of one video, each `height * width` values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<f32>>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_image(&self, t: usize) -> GrayImage {
        GrayImage::new(self.width, self.height, self.frames[t].clone())
    }

    /// Writes `frame_0000.pgm`, ... into `dir`, creating it.
    pub fn write_pgm_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let digits = self.len().saturating_sub(1).to_string().len().max(4);
        for t in 0..self.len() {
            let path = dir.join(format!("frame_{t:0digits$}.pgm"));
            write_pgm(&path, &self.frame_image(t))?;
        }
        Ok(())
    }
}

/// Per-frame anomaly labels of one test video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub video: String,
    pub labels: Vec<bool>,
}

impl GroundTruth {
    pub fn normal(video: impl Into<String>, len: usize) -> Self {
        Self {
            video: video.into(),
            labels: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.labels.iter().map(|&a| if a { "1\n" } else { "0\n" }).collect()
    }

    pub fn parse(video: impl Into<String>, text: &str, path: &Path) -> Result<Self> {
        let labels = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| match l {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("line {}: expected 0 or 1, found `{other}`", i + 1),
                }),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            video: video.into(),
            labels,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let video = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        Self::parse(video, &text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Video directories under `dir`, sorted by name.
pub fn list_videos(dir: &Path, target_size: (usize, usize)) -> Result<Vec<FrameSource>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    dirs.iter().map(|d| FrameSource::open(d, target_size)).collect()
}

pub fn load_videos(sources: &[FrameSource]) -> Result<Vec<Video>> {
    sources.iter().map(FrameSource::load).collect()
}

/// Labels for `video` from `<root>/labels/<video>.txt`, checked against the
/// video length.
pub fn read_ground_truth(root: &Path, video: &str, len: usize) -> Result<GroundTruth> {
    let path = root.join(LABELS_DIR).join(format!("{video}.txt"));
    if !path.is_file() {
        return Err(Error::Evaluation(format!("no ground truth for video `{video}` at {}", path.display())));
    }
    let gt = GroundTruth::read(&path)?;
    if gt.len() != len {
        return Err(Error::Format {
            path,
            reason: format!("{} labels for a video of {len} frames", gt.len()),
        });
    }
    Ok(gt)
}
