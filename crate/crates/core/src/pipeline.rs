//! Training loop and per-video scoring.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::dataio::{assemble_batch, enumerate_volumes, test_volumes, SequenceBatch, TestStride, Video, VolumeIndex};
use crate::error::{Error, Result};
use crate::model::{backward, forward, ArchitectureConfig, Mode, ModelParams};
use crate::optimizer::{add_weight_decay, init_params, loss, regularization, AdamState, LossValue, TrainingConfig};
use crate::rng::{split, split2, stream};
use crate::scoring::{error_heatmap, volume_error, ErrorSeries};
use crate::tensor::Tensor;

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimization steps.
    pub step: usize,
}

impl TrainState {
    /// Initial weights drawn from the `INIT` stream of `seed`.
    pub fn initial(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params: ModelParams<f32> = init_params(config, &mut split(seed, stream::INIT))?;
        Ok(Self {
            adam: AdamState::for_params(&params),
            params,
            epoch: 0,
            step: 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    /// 1-based epoch number.
    pub epoch: usize,
    /// 1-based global step number.
    pub step: usize,
    pub loss: LossValue,
    /// Seconds since the trainer was created.
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    /// Means over the epoch's steps.
    pub mean_data: f64,
    pub mean_reg: f64,
    pub mean_total: f64,
}

pub struct Trainer {
    pub config: ArchitectureConfig,
    pub training: TrainingConfig,
    pub mode: Mode,
    pub state: TrainState,
    started: Instant,
}

impl Trainer {
    pub fn new(config: ArchitectureConfig, training: TrainingConfig, mode: Mode) -> Result<Self> {
        let state = TrainState::initial(&config, training.seed)?;
        Self::resume(config, training, mode, state)
    }

    pub fn resume(config: ArchitectureConfig, training: TrainingConfig, mode: Mode, state: TrainState) -> Result<Self> {
        config.validate()?;
        training.validate()?;
        state.params.check_config(&config)?;
        if state.adam.first.len() != state.params.groups().len() {
            return Err(Error::Config("optimizer state does not match the parameters".into()));
        }
        Ok(Self {
            config,
            training,
            mode,
            state,
            started: Instant::now(),
        })
    }

    /// Training volumes of every video with the given skip strides.
    pub fn training_volumes(&self, videos: &[Video], strides: &[usize]) -> Vec<VolumeIndex> {
        videos
            .iter()
            .enumerate()
            .flat_map(|(i, v)| enumerate_volumes(i, v.len(), self.config.tau, self.mode, strides))
            .collect()
    }

    /// Volume order for 1-based `epoch`; depends only on the seed and epoch.
    pub fn epoch_order(&self, volumes: &[VolumeIndex], epoch: usize) -> Vec<VolumeIndex> {
        let mut order = volumes.to_vec();
        order.shuffle(&mut split2(self.training.seed, stream::SHUFFLE, epoch as u64));
        order
    }

    /// Loss of a batch under the current weights, without updating them.
    pub fn evaluate_batch(&self, batch: &SequenceBatch) -> Result<LossValue> {
        let (out, _) = forward(&batch.input, &self.state.params, &self.config)?;
        let n = batch.indices.len();
        let (mut value, _) = loss(&out, &batch.target, &[], 0.0, self.config.tau, n)?;
        value.reg = regularization(&self.state.params, self.training.weight_decay);
        Ok(value)
    }

    /// One Adam step on `batch`. On a non-finite loss or gradient the
    /// weights are left unchanged and `Error::Divergence` is returned.
    pub fn train_step(&mut self, batch: &SequenceBatch) -> Result<LossValue> {
        let epoch = self.state.epoch + 1;
        let step = self.state.step + 1;
        let (out, cache) = forward(&batch.input, &self.state.params, &self.config)?;
        let n = batch.indices.len();
        let (mut value, grad_out) = loss(&out, &batch.target, &[], 0.0, self.config.tau, n)?;
        value.reg = regularization(&self.state.params, self.training.weight_decay);
        if !value.total().is_finite() {
            return Err(Error::Divergence { epoch, step });
        }
        let mut grads = backward(&grad_out, &cache, &self.state.params, &self.config)?;
        add_weight_decay(&mut grads, &self.state.params, self.training.weight_decay)?;
        match self.state.adam.step_model(&mut self.state.params, &grads, &self.training) {
            Err(Error::NonFiniteGradient { .. }) => return Err(Error::Divergence { epoch, step }),
            other => other?,
        }
        self.state.step = step;
        Ok(value)
    }

    /// Runs the next epoch over `volumes` in seeded shuffled order. The final
    /// batch may be smaller than the batch size.
    pub fn train_epoch(
        &mut self,
        videos: &[Video],
        volumes: &[VolumeIndex],
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<EpochSummary> {
        let epoch = self.state.epoch + 1;
        if volumes.is_empty() {
            return Err(Error::Config("no training volumes fit the videos".into()));
        }
        let order = self.epoch_order(volumes, epoch);
        let (mut data, mut reg, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(self.training.batch_size) {
            let batch = assemble_batch(chunk, videos, self.mode)?;
            let value = self.train_step(&batch)?;
            data += value.data;
            reg += value.reg;
            steps += 1;
            on_step(&StepLog {
                epoch,
                step: self.state.step,
                loss: value,
                wall_time: self.started.elapsed().as_secs_f64(),
            });
        }
        self.state.epoch = epoch;
        let n = steps as f64;
        Ok(EpochSummary {
            epoch,
            steps,
            mean_data: data / n,
            mean_reg: reg / n,
            mean_total: (data + reg) / n,
        })
    }
}

/// Errors and heatmaps of one test video.
#[derive(Clone, Debug)]
pub struct VideoScore {
    pub errors: ErrorSeries,
    /// `[1, H, W]` normalized error map per volume.
    pub heatmaps: Vec<Tensor<f64>>,
}

/// Runs the model over the test volumes of `video` (index `index` in
/// `videos`). Videos too short for a single volume yield an empty series.
pub fn score_video(
    params: &ModelParams<f32>,
    config: &ArchitectureConfig,
    mode: Mode,
    videos: &[Video],
    index: usize,
    placement: TestStride,
) -> Result<VideoScore> {
    let video = &videos[index];
    if (video.height, video.width) != config.input_size {
        return Err(Error::Config(format!(
            "video `{}` frames are {}x{} but the model expects {}x{}",
            video.id, video.height, video.width, config.input_size.0, config.input_size.1
        )));
    }
    let volumes = test_volumes(index, video.len(), config.tau, mode, placement);
    let mut errors = Vec::with_capacity(volumes.len());
    let mut heatmaps = Vec::with_capacity(volumes.len());
    for v in &volumes {
        let batch = assemble_batch(std::slice::from_ref(v), videos, mode)?;
        let (out, _) = forward(&batch.input, params, config)?;
        errors.push(volume_error(&out, &batch.target)?);
        heatmaps.push(error_heatmap(&out, &batch.target)?);
    }
    Ok(VideoScore {
        errors: ErrorSeries::new(video.id.clone(), volumes.iter().map(|v| v.start).collect(), errors)?,
        heatmaps,
    })
}
