//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key of a
//! schema must appear exactly once; unknown keys are rejected. List values
//! are comma separated, one entry per encoder level.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use convlstm_ad::dataio::{AnomalyKind, SynthSpec, TestStride};
use convlstm_ad::model::{LevelConfig, LEVELS};
use convlstm_ad::optimizer::TrainingConfig;
use convlstm_ad::scoring::{Normalization, VolumeLabeling};
use convlstm_ad::ArchitectureConfig;

use crate::error::{CliError, Result};

/// Parsed key/value pairs awaiting typed extraction.
pub struct KvFile {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| CliError::ConfigLine {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            if entries.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(err(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(path, &text)
    }

    fn raw(&mut self, key: &str) -> Result<(usize, String)> {
        self.entries
            .remove(key)
            .ok_or_else(|| CliError::Config(format!("{}: missing key `{key}`", self.path.display())))
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (line, value) = self.raw(key)?;
        value.parse().map_err(|e| CliError::ConfigLine {
            path: self.path.clone(),
            line,
            message: format!("`{key}`: cannot parse `{value}`: {e}"),
        })
    }

    pub fn get_list<T: FromStr>(&mut self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let (line, value) = self.raw(key)?;
        value
            .split(',')
            .map(|v| {
                v.trim().parse().map_err(|e| CliError::ConfigLine {
                    path: self.path.clone(),
                    line,
                    message: format!("`{key}`: cannot parse `{}`: {e}", v.trim()),
                })
            })
            .collect()
    }

    fn get_levels(&mut self, key: &str) -> Result<[usize; LEVELS]> {
        let v: Vec<usize> = self.get_list(key)?;
        v.as_slice()
            .try_into()
            .map_err(|_| CliError::Config(format!("`{key}` needs {LEVELS} comma-separated values, got {}", v.len())))
    }

    /// Fails on any key no schema field consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(CliError::ConfigLine {
                path: self.path,
                line,
                message: format!("unknown key `{key}`"),
            }),
        }
    }
}

pub const ARCHITECTURE_KEYS: [&str; 16] = [
    "frame_height",
    "frame_width",
    "tau",
    "mode",
    "conv_channels",
    "conv_kernels",
    "conv_strides",
    "conv_paddings",
    "hidden_channels",
    "lstm_kernels",
    "deconv_kernels",
    "deconv_paddings",
    "head_channels",
    "head_kernel",
    "leaky_slope",
    "peepholes",
];

pub fn read_architecture(kv: &mut KvFile) -> Result<ArchitectureConfig> {
    let h = kv.get("frame_height")?;
    let w = kv.get("frame_width")?;
    let tau = kv.get("tau")?;
    let mode = kv.get("mode")?;
    let cc = kv.get_levels("conv_channels")?;
    let ck = kv.get_levels("conv_kernels")?;
    let cs = kv.get_levels("conv_strides")?;
    let cp = kv.get_levels("conv_paddings")?;
    let hc = kv.get_levels("hidden_channels")?;
    let lk = kv.get_levels("lstm_kernels")?;
    let dk = kv.get_levels("deconv_kernels")?;
    let dp = kv.get_levels("deconv_paddings")?;
    let levels = std::array::from_fn(|l| LevelConfig {
        conv_channels: cc[l],
        conv_kernel: ck[l],
        conv_stride: cs[l],
        conv_padding: cp[l],
        hidden_channels: hc[l],
        lstm_kernel: lk[l],
        deconv_kernel: dk[l],
        deconv_padding: dp[l],
    });
    Ok(ArchitectureConfig {
        input_size: (h, w),
        tau,
        levels,
        head_channels: kv.get("head_channels")?,
        head_kernel: kv.get("head_kernel")?,
        leaky_slope: kv.get("leaky_slope")?,
        mode,
        peepholes: kv.get("peepholes")?,
    })
}

fn join(values: impl Iterator<Item = usize>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// The `ARCHITECTURE_KEYS` lines describing `c`, in that order.
pub fn write_architecture(c: &ArchitectureConfig) -> String {
    let l = &c.levels;
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    line("frame_height", c.input_size.0.to_string());
    line("frame_width", c.input_size.1.to_string());
    line("tau", c.tau.to_string());
    line("mode", c.mode.to_string());
    line("conv_channels", join(l.iter().map(|x| x.conv_channels)));
    line("conv_kernels", join(l.iter().map(|x| x.conv_kernel)));
    line("conv_strides", join(l.iter().map(|x| x.conv_stride)));
    line("conv_paddings", join(l.iter().map(|x| x.conv_padding)));
    line("hidden_channels", join(l.iter().map(|x| x.hidden_channels)));
    line("lstm_kernels", join(l.iter().map(|x| x.lstm_kernel)));
    line("deconv_kernels", join(l.iter().map(|x| x.deconv_kernel)));
    line("deconv_paddings", join(l.iter().map(|x| x.deconv_padding)));
    line("head_channels", c.head_channels.to_string());
    line("head_kernel", c.head_kernel.to_string());
    line("leaky_slope", format!("{:?}", c.leaky_slope));
    line("peepholes", c.peepholes.to_string());
    s
}

/// Everything `train`, `score` and `eval` need.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub architecture: ArchitectureConfig,
    pub training: TrainingConfig,
    pub train_strides: Vec<usize>,
    /// Write a checkpoint every this many epochs (the final epoch always is).
    pub checkpoint_every: usize,
    pub test_stride: TestStride,
    pub eq4: Normalization,
    pub labeling: VolumeLabeling,
}

impl RunConfig {
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let dataset_root: PathBuf = kv.get::<String>("dataset_root")?.into();
        let output_dir: PathBuf = kv.get::<String>("output_dir")?.into();
        let architecture = read_architecture(&mut kv)?;
        let training = TrainingConfig {
            batch_size: kv.get("batch_size")?,
            learning_rate: kv.get("learning_rate")?,
            beta1: kv.get("beta1")?,
            beta2: kv.get("beta2")?,
            epsilon: kv.get("epsilon")?,
            weight_decay: kv.get("weight_decay")?,
            epochs: kv.get("epochs")?,
            seed: kv.get("seed")?,
        };
        let cfg = Self {
            dataset_root,
            output_dir,
            architecture,
            training,
            train_strides: kv.get_list("train_strides")?,
            checkpoint_every: kv.get("checkpoint_every")?,
            test_stride: kv.get("test_stride")?,
            eq4: kv.get("eq4")?,
            labeling: kv.get("labeling")?,
        };
        kv.finish()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KvFile::read(path)?)
    }

    /// Range checks; `dataset_root` must exist.
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.training.validate()?;
        if self.train_strides.is_empty() || self.train_strides.iter().any(|d| !(1..=3).contains(d)) {
            return Err(CliError::Config(format!(
                "train_strides must be a non-empty subset of 1,2,3, got {:?}",
                self.train_strides
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(CliError::Config("checkpoint_every must be at least 1".into()));
        }
        if !self.dataset_root.is_dir() {
            return Err(CliError::Config(format!(
                "dataset_root {} is not a directory",
                self.dataset_root.display()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.training;
        let strides = join(self.train_strides.iter().copied());
        format!(
            "dataset_root = {}\noutput_dir = {}\n{}batch_size = {}\nlearning_rate = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\n\
             epsilon = {:?}\nweight_decay = {:?}\nepochs = {}\nseed = {}\ntrain_strides = {strides}\n\
             checkpoint_every = {}\ntest_stride = {}\neq4 = {}\nlabeling = {}\n",
            self.dataset_root.display(),
            self.output_dir.display(),
            write_architecture(&self.architecture),
            t.batch_size,
            t.learning_rate,
            t.beta1,
            t.beta2,
            t.epsilon,
            t.weight_decay,
            t.epochs,
            t.seed,
            self.checkpoint_every,
            self.test_stride,
            self.eq4,
            self.labeling,
        )
    }
}

/// Schema of the `synth` command.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub output_dir: PathBuf,
    pub spec: SynthSpec,
}

impl SynthConfig {
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let output_dir: PathBuf = kv.get::<String>("output_dir")?.into();
        let spec = SynthSpec {
            height: kv.get("frame_height")?,
            width: kv.get("frame_width")?,
            train_videos: kv.get("train_videos")?,
            test_videos: kv.get("test_videos")?,
            frames_per_video: kv.get("frames_per_video")?,
            sprites: kv.get("sprites")?,
            sprite_size: kv.get("sprite_size")?,
            min_speed: kv.get("min_speed")?,
            max_speed: kv.get("max_speed")?,
            anomaly: kv.get::<AnomalyKind>("anomaly")?,
            fast_speed: kv.get("fast_speed")?,
            anomaly_start: kv.get("anomaly_start")?,
            anomaly_len: kv.get("anomaly_len")?,
            seed: kv.get("seed")?,
        };
        kv.finish()?;
        Ok(Self { output_dir, spec })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KvFile::read(path)?)
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        format!(
            "output_dir = {}\nframe_height = {}\nframe_width = {}\ntrain_videos = {}\ntest_videos = {}\n\
             frames_per_video = {}\nsprites = {}\nsprite_size = {}\nmin_speed = {:?}\nmax_speed = {:?}\n\
             anomaly = {}\nfast_speed = {:?}\nanomaly_start = {}\nanomaly_len = {}\nseed = {}\n",
            self.output_dir.display(),
            s.height,
            s.width,
            s.train_videos,
            s.test_videos,
            s.frames_per_video,
            s.sprites,
            s.sprite_size,
            s.min_speed,
            s.max_speed,
            s.anomaly,
            s.fast_speed,
            s.anomaly_start,
            s.anomaly_len,
            s.seed,
        )
    }
}
