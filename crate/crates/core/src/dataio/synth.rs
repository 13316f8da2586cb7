//! Synthetic moving-sprite videos.
//!
//! Bright square sprites drift rightward at 1-2 px/frame over a static
//! textured background. Test videos contain one anomalous segment during
//! which an extra sprite either crosses the frame at high speed or drifts
//! leftward against the crowd. Pixels are multiples of 1/255, so a PGM
//! round trip is exact.

use std::f32::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;

use super::frames::{GroundTruth, Video, LABELS_DIR, TEST_DIR, TRAIN_DIR};
use crate::error::{Error, Result};
use crate::rng::{split2, stream, Rng};

/// Offset separating test-video RNG streams from training-video streams.
const TEST_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    /// No anomalous segments; every label is 0.
    None,
    /// A sprite moving rightward at `fast_speed`.
    Fast,
    /// A sprite moving leftward at normal speed.
    Reverse,
    /// `Fast` in even-numbered test videos, `Reverse` in odd ones.
    Mixed,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::None => "none",
            AnomalyKind::Fast => "fast",
            AnomalyKind::Reverse => "reverse",
            AnomalyKind::Mixed => "mixed",
        })
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AnomalyKind::None),
            "fast" => Ok(AnomalyKind::Fast),
            "reverse" => Ok(AnomalyKind::Reverse),
            "mixed" => Ok(AnomalyKind::Mixed),
            _ => Err(Error::Config(format!(
                "anomaly kind must be none, fast, reverse or mixed, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames_per_video: usize,
    /// Normal sprites per video.
    pub sprites: usize,
    pub sprite_size: usize,
    pub min_speed: f32,
    pub max_speed: f32,
    pub anomaly: AnomalyKind,
    pub fast_speed: f32,
    /// Anomalous frames are `anomaly_start .. anomaly_start + anomaly_len`.
    pub anomaly_start: usize,
    pub anomaly_len: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            train_videos: 8,
            test_videos: 4,
            frames_per_video: 100,
            sprites: 3,
            sprite_size: 8,
            min_speed: 1.0,
            max_speed: 2.0,
            anomaly: AnomalyKind::Mixed,
            fast_speed: 7.0,
            anomaly_start: 40,
            anomaly_len: 20,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 || self.frames_per_video == 0 {
            return fail("synthetic frame size and length must be positive".into());
        }
        if self.sprite_size == 0 || self.sprite_size > self.height.min(self.width) {
            return fail(format!("sprite size {} does not fit {}x{}", self.sprite_size, self.height, self.width));
        }
        if !(self.min_speed > 0.0 && self.min_speed <= self.max_speed) {
            return fail(format!("speed range {}..{} is invalid", self.min_speed, self.max_speed));
        }
        if self.anomaly != AnomalyKind::None && self.test_videos > 0 {
            if self.fast_speed < 4.0 {
                return fail(format!("fast_speed {} is below 4 px/frame", self.fast_speed));
            }
            if self.anomaly_len == 0 || self.anomaly_start + self.anomaly_len > self.frames_per_video {
                return fail(format!(
                    "anomalous segment {}..{} does not fit {} frames",
                    self.anomaly_start,
                    self.anomaly_start + self.anomaly_len,
                    self.frames_per_video
                ));
            }
        }
        Ok(())
    }

    /// Anomaly type of test video `index`.
    pub fn anomaly_for(&self, index: usize) -> AnomalyKind {
        match self.anomaly {
            AnomalyKind::Mixed if index % 2 == 0 => AnomalyKind::Fast,
            AnomalyKind::Mixed => AnomalyKind::Reverse,
            other => other,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<Video>,
    pub test: Vec<Video>,
    pub ground_truth: Vec<GroundTruth>,
}

impl SyntheticDataset {
    /// Writes the train/test frame folders and label files under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        for v in &self.train {
            v.write_pgm_dir(&root.join(TRAIN_DIR).join(&v.id))?;
        }
        for v in &self.test {
            v.write_pgm_dir(&root.join(TEST_DIR).join(&v.id))?;
        }
        let labels = root.join(LABELS_DIR);
        std::fs::create_dir_all(&labels).map_err(|e| Error::io(&labels, e))?;
        for gt in &self.ground_truth {
            gt.write(&labels.join(format!("{}.txt", gt.video)))?;
        }
        Ok(())
    }
}

struct Sprite {
    x: f32,
    y: usize,
    speed: f32,
    intensity: f32,
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn background(spec: &SynthSpec, rng: &mut Rng) -> Vec<f32> {
    let gratings: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|_| {
            let angle = rng.random::<f32>() * TAU;
            let freq = rng.random_range(1.0..4.0f32) * TAU;
            (angle.cos() * freq, angle.sin() * freq, rng.random::<f32>() * TAU, rng.random_range(0.3..1.0f32))
        })
        .collect();
    let norm: f32 = gratings.iter().map(|g| g.3).sum();
    let mut out = Vec::with_capacity(spec.height * spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (u, v) = (x as f32 / spec.width as f32, y as f32 / spec.height as f32);
            let s: f32 = gratings.iter().map(|&(fx, fy, ph, a)| a * (fx * u + fy * v + ph).sin()).sum();
            out.push(0.3 + 0.15 * s / norm);
        }
    }
    out
}

fn draw(frame: &mut [f32], spec: &SynthSpec, s: &Sprite) {
    let size = spec.sprite_size as f32;
    for col in 0..spec.width {
        let c = col as f32;
        let cover = ((c + 1.0).min(s.x + size) - c.max(s.x)).clamp(0.0, 1.0);
        if cover <= 0.0 {
            continue;
        }
        for row in s.y..s.y + spec.sprite_size {
            let p = &mut frame[row * spec.width + col];
            *p = *p * (1.0 - cover) + s.intensity * cover;
        }
    }
}

fn random_sprite(spec: &SynthSpec, rng: &mut Rng, x: f32, speed: f32) -> Sprite {
    Sprite {
        x,
        y: rng.random_range(0..=spec.height - spec.sprite_size),
        speed,
        intensity: rng.random_range(0.8..1.0f32),
    }
}

fn normal_speed(spec: &SynthSpec, rng: &mut Rng) -> f32 {
    if spec.max_speed > spec.min_speed {
        rng.random_range(spec.min_speed..=spec.max_speed)
    } else {
        spec.min_speed
    }
}

fn render_video(spec: &SynthSpec, id: String, rng: &mut Rng, anomaly: AnomalyKind) -> (Video, GroundTruth) {
    let (w, size) = (spec.width as f32, spec.sprite_size as f32);
    let bg = background(spec, rng);
    let mut sprites: Vec<Sprite> = (0..spec.sprites)
        .map(|_| {
            let x = rng.random_range(-size..w);
            let speed = normal_speed(spec, rng);
            random_sprite(spec, rng, x, speed)
        })
        .collect();
    let segment = spec.anomaly_start..spec.anomaly_start + spec.anomaly_len;
    let mut odd: Option<Sprite> = None;
    let mut gt = GroundTruth::normal(id.clone(), spec.frames_per_video);
    let mut frames = Vec::with_capacity(spec.frames_per_video);
    for t in 0..spec.frames_per_video {
        let mut frame = bg.clone();
        for s in &sprites {
            draw(&mut frame, spec, s);
        }
        if anomaly != AnomalyKind::None && segment.contains(&t) {
            gt.labels[t] = true;
            let s = odd.get_or_insert_with(|| match anomaly {
                AnomalyKind::Reverse => {
                    let speed = -normal_speed(spec, rng);
                    random_sprite(spec, rng, w + speed, speed)
                }
                _ => random_sprite(spec, rng, spec.fast_speed - size, spec.fast_speed),
            });
            draw(&mut frame, spec, s);
            s.x += s.speed;
            // Re-enter from the side it came from while the segment lasts.
            if s.x >= w {
                s.x -= w + size;
            } else if s.x <= -size {
                s.x += w + size;
            }
        }
        frames.push(frame.into_iter().map(quantize).collect());
        for s in &mut sprites {
            s.x += s.speed;
            if s.x >= w {
                let speed = s.speed;
                *s = random_sprite(spec, rng, s.x - w - size, speed);
            }
        }
    }
    let video = Video {
        id,
        height: spec.height,
        width: spec.width,
        frames,
    };
    (video, gt)
}

/// Generates the training (normal only) and test videos with labels.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let train = (0..spec.train_videos)
        .map(|i| {
            let mut rng = split2(spec.seed, stream::SYNTH, i as u64);
            render_video(spec, format!("video_{i:03}"), &mut rng, AnomalyKind::None).0
        })
        .collect();
    let (test, ground_truth) = (0..spec.test_videos)
        .map(|i| {
            let mut rng = split2(spec.seed, stream::SYNTH, TEST_STREAM_OFFSET + i as u64);
            render_video(spec, format!("video_{i:03}"), &mut rng, spec.anomaly_for(i))
        })
        .unzip();
    Ok(SyntheticDataset {
        train,
        test,
        ground_truth,
    })
}
