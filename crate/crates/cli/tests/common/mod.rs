#![allow(dead_code)]

use std::path::{Path, PathBuf};

use convlstm_ad::dataio::{AnomalyKind, SynthSpec, TestStride};
use convlstm_ad::optimizer::TrainingConfig;
use convlstm_ad::scoring::{Normalization, VolumeLabeling};
use convlstm_ad::ArchitectureConfig;
use convlstm_ad_cli::{RunConfig, SynthConfig};

pub fn small_synth(root: &Path) -> SynthConfig {
    SynthConfig {
        output_dir: root.join("data"),
        spec: SynthSpec {
            height: 16,
            width: 16,
            train_videos: 2,
            test_videos: 2,
            frames_per_video: 24,
            sprites: 2,
            sprite_size: 3,
            anomaly: AnomalyKind::Mixed,
            fast_speed: 5.0,
            anomaly_start: 10,
            anomaly_len: 6,
            seed: 4,
            ..SynthSpec::default()
        },
    }
}

pub fn tiny_run(root: &Path, out: &str) -> RunConfig {
    RunConfig {
        dataset_root: root.join("data"),
        output_dir: root.join(out),
        architecture: ArchitectureConfig::tiny(),
        training: TrainingConfig {
            learning_rate: 3e-3,
            epochs: 2,
            seed: 5,
            ..TrainingConfig::default()
        },
        train_strides: vec![1, 2],
        checkpoint_every: 1,
        test_stride: TestStride::Volume,
        eq4: Normalization::Paper,
        labeling: VolumeLabeling::InputWindow,
    }
}

pub fn write_config(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

/// The loss columns of a training log (wall time dropped).
pub fn loss_columns(log: &str) -> Vec<String> {
    log.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

/// Sorted relative paths and contents of every file under `dir`.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
