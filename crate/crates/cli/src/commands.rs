//! The `synth`, `train`, `score`, `eval` and `gradcheck` commands.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use convlstm_ad::dataio::{
    generate_synthetic, list_videos, load_videos, write_pgm, GrayImage, GroundTruth, SyntheticDataset, LABELS_DIR,
    TEST_DIR, TRAIN_DIR,
};
use convlstm_ad::optimizer::{gradient_check, GradCheckOptions, GradCheckReport};
use convlstm_ad::pipeline::{score_video, EpochSummary, Trainer};
use convlstm_ad::scoring::{
    labeled_samples, regularity, roc_from_samples, window_label, ErrorSeries, EvalReport, RegularityScores,
};
use convlstm_ad::{ArchitectureConfig, Error};

use crate::checkpoint::Checkpoint;
use crate::config::{write_architecture, RunConfig, SynthConfig};
use crate::error::{CliError, Result};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAIN_LOG_HEADER: &str = "epoch,step,data_loss,reg_loss,total_loss,wall_time";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const SCORES_DIR: &str = "scores";
pub const HEATMAPS_DIR: &str = "heatmaps";
pub const SCORE_HEADER: &str = "t,e,s,label";
pub const ROC_FILE: &str = "roc.csv";
pub const EVAL_FILE: &str = "eval.txt";
pub const FPS_FILE: &str = "fps.txt";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }.into()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io(path))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io(path))
}

pub fn cmd_synth(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    let ds = generate_synthetic(&cfg.spec)?;
    create_dir(&cfg.output_dir)?;
    ds.write(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("synth.cfg"), &cfg.to_text())?;
    Ok(ds)
}

pub fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("checkpoint_epoch_{epoch:04}.ckpt"))
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochSummary>,
    pub checkpoint: PathBuf,
}

/// Trains on `<dataset_root>/train`, continuing from `resume` if given.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let arch = &cfg.architecture;
    let sources = list_videos(&cfg.dataset_root.join(TRAIN_DIR), arch.input_size)?;
    let videos = load_videos(&sources)?;
    let mut trainer = match resume {
        None => Trainer::new(arch.clone(), cfg.training.clone(), arch.mode)?,
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ensure_same_architecture(&ckpt.config, arch, path)?;
            Trainer::resume(arch.clone(), cfg.training.clone(), arch.mode, ckpt.state)?
        }
    };
    let volumes = trainer.training_volumes(&videos, &cfg.train_strides);
    if volumes.is_empty() {
        return Err(Error::Format {
            path: cfg.dataset_root.join(TRAIN_DIR),
            reason: format!("no training video is long enough for tau = {} in {} mode", arch.tau, arch.mode),
        }
        .into());
    }

    let out = &cfg.output_dir;
    create_dir(out)?;
    write_file(&out.join("run.cfg"), &cfg.to_text())?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = if resume.is_some() && log_path.is_file() {
        fs::OpenOptions::new().append(true).open(&log_path).map_err(io(&log_path))?
    } else {
        let mut f = fs::File::create(&log_path).map_err(io(&log_path))?;
        writeln!(f, "{TRAIN_LOG_HEADER}").map_err(io(&log_path))?;
        f
    };

    let mut epochs = Vec::new();
    let mut last_good: Option<PathBuf> = resume.map(Path::to_path_buf);
    while trainer.state.epoch < cfg.training.epochs {
        let mut lines = String::new();
        let result = trainer.train_epoch(&videos, &volumes, |s| {
            let _ = writeln!(
                lines,
                "{},{},{},{},{},{:.3}",
                s.epoch,
                s.step,
                s.loss.data,
                s.loss.reg,
                s.loss.total(),
                s.wall_time
            );
        });
        log.write_all(lines.as_bytes()).map_err(io(&log_path))?;
        let summary = match result {
            Ok(s) => s,
            Err(e @ (Error::Divergence { .. } | Error::NonFiniteGradient { .. })) => {
                let kept = match &last_good {
                    Some(p) => format!("last good checkpoint: {}", p.display()),
                    None => "no checkpoint was written yet".into(),
                };
                return Err(CliError::Divergence { message: format!("training diverged ({e}); {kept}") });
            }
            Err(e) => return Err(e.into()),
        };
        epochs.push(summary);
        let epoch = trainer.state.epoch;
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.training.epochs {
            let ckpt = Checkpoint { config: arch.clone(), state: trainer.state.clone() };
            let path = checkpoint_path(out, epoch);
            ckpt.save(&path)?;
            ckpt.save(&out.join(FINAL_CHECKPOINT))?;
            last_good = Some(path);
        }
    }
    Ok(TrainReport {
        epochs,
        checkpoint: out.join(FINAL_CHECKPOINT),
    })
}

fn ensure_same_architecture(stored: &ArchitectureConfig, wanted: &ArchitectureConfig, path: &Path) -> Result<()> {
    if stored == wanted {
        return Ok(());
    }
    let a = write_architecture(stored);
    let b = write_architecture(wanted);
    let diff = a
        .lines()
        .zip(b.lines())
        .find(|(x, y)| x != y)
        .map(|(x, y)| format!("checkpoint has `{x}`, config has `{y}`"))
        .unwrap_or_default();
    Err(CliError::Config(format!(
        "checkpoint {} does not match the configured architecture: {diff}",
        path.display()
    )))
}

#[derive(Clone, Debug, Default)]
pub struct ScoreReport {
    pub errors: Vec<ErrorSeries>,
    pub scores: Vec<RegularityScores>,
    pub volumes: usize,
    pub frames: usize,
    pub seconds: f64,
}

impl ScoreReport {
    pub fn volumes_per_second(&self) -> f64 {
        if self.seconds > 0.0 { self.volumes as f64 / self.seconds } else { 0.0 }
    }

    pub fn frames_per_second(&self) -> f64 {
        if self.seconds > 0.0 { self.frames as f64 / self.seconds } else { 0.0 }
    }
}

fn read_labels(root: &Path, video: &str) -> Result<Option<GroundTruth>> {
    let path = root.join(LABELS_DIR).join(format!("{video}.txt"));
    Ok(if path.is_file() { Some(GroundTruth::read(&path)?) } else { None })
}

pub fn score_csv(errors: &ErrorSeries, scores: &RegularityScores, labels: &[Option<bool>]) -> String {
    let mut s = format!("{SCORE_HEADER}\n");
    for (i, (&t, &e)) in errors.starts.iter().zip(&errors.errors).enumerate() {
        let label = match labels.get(i).copied().flatten() {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let _ = writeln!(s, "{t},{e},{},{label}", scores.scores[i]);
    }
    s
}

/// Scores every video under `<dataset_root>/test` with the checkpoint.
pub fn cmd_score(cfg: &RunConfig, checkpoint: &Path) -> Result<ScoreReport> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ensure_same_architecture(&ckpt.config, &cfg.architecture, checkpoint)?;
    let arch = &ckpt.config;
    let out = &cfg.output_dir;
    let scores_dir = out.join(SCORES_DIR);
    create_dir(&scores_dir)?;

    let test_dir = cfg.dataset_root.join(TEST_DIR);
    let sources = if test_dir.is_dir() { list_videos(&test_dir, arch.input_size)? } else { Vec::new() };
    for s in &sources {
        if s.native_size != arch.input_size {
            // Frames are resized on load; report it once so mismatches are visible.
            eprintln!(
                "note: video `{}` frames are {}x{}, resized to {}x{}",
                s.id, s.native_size.0, s.native_size.1, arch.input_size.0, arch.input_size.1
            );
        }
    }
    let videos = load_videos(&sources)?;
    let mut report = ScoreReport::default();
    for i in 0..videos.len() {
        let start = Instant::now();
        let scored = score_video(&ckpt.state.params, arch, arch.mode, &videos, i, cfg.test_stride)?;
        let reg = regularity(&scored.errors, cfg.eq4);
        report.seconds += start.elapsed().as_secs_f64();
        report.volumes += scored.errors.len();
        report.frames += scored.errors.len() * arch.tau;

        let id = &videos[i].id;
        let gt = read_labels(&cfg.dataset_root, id)?;
        let labels: Vec<Option<bool>> = scored
            .errors
            .starts
            .iter()
            .map(|&t| gt.as_ref().map(|g| window_label(g, t, arch.tau)).transpose())
            .collect::<std::result::Result<_, _>>()?;
        write_file(&scores_dir.join(format!("{id}.csv")), &score_csv(&scored.errors, &reg, &labels))?;

        let heat_dir = out.join(HEATMAPS_DIR).join(id);
        create_dir(&heat_dir)?;
        for (map, &t) in scored.heatmaps.iter().zip(&scored.errors.starts) {
            let (h, w) = (map.shape()[1], map.shape()[2]);
            let img = GrayImage::new(w, h, map.data().iter().map(|&v| v as f32).collect());
            write_pgm(&heat_dir.join(format!("volume_{t:04}.pgm")), &img)?;
        }
        report.errors.push(scored.errors);
        report.scores.push(reg);
    }
    write_file(
        &out.join(FPS_FILE),
        &format!(
            "volumes = {}\nframes = {}\nseconds = {:.6}\nvolumes_per_second = {:.3}\nframes_per_second = {:.3}\n",
            report.volumes,
            report.frames,
            report.seconds,
            report.volumes_per_second(),
            report.frames_per_second()
        ),
    )?;
    Ok(report)
}

/// Reads a score CSV back into start frames and regularity scores.
pub fn read_score_csv(path: &Path) -> Result<RegularityScores> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let bad = |line: usize, reason: &str| -> CliError {
        Error::Format { path: path.to_path_buf(), reason: format!("line {line}: {reason}") }.into()
    };
    let mut lines = text.lines();
    if lines.next() != Some(SCORE_HEADER) {
        return Err(bad(1, "expected header `t,e,s,label`"));
    }
    let video = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let (mut starts, mut scores) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(i + 2, "expected 4 fields"));
        }
        starts.push(fields[0].parse::<usize>().map_err(|_| bad(i + 2, "bad volume start"))?);
        scores.push(fields[2].parse::<f64>().map_err(|_| bad(i + 2, "bad score"))?);
    }
    Ok(RegularityScores { video, starts, scores })
}

/// Pools the score CSVs in `scores_dir` against the ground-truth labels.
pub fn cmd_eval(cfg: &RunConfig, scores_dir: &Path) -> Result<EvalReport> {
    let mut files: Vec<PathBuf> = fs::read_dir(scores_dir)
        .map_err(io(scores_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut samples = Vec::new();
    for f in &files {
        let scores = read_score_csv(f)?;
        let gt = read_labels(&cfg.dataset_root, &scores.video)?.ok_or_else(|| {
            Error::Evaluation(format!("no ground truth for video `{}` under {}", scores.video, cfg.dataset_root.display()))
        })?;
        samples.extend(labeled_samples(&scores, &gt, cfg.architecture.tau, cfg.labeling)?);
    }
    let report = roc_from_samples(&samples)?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    let mut roc = String::from("threshold,fpr,tpr\n");
    for p in &report.roc {
        let _ = writeln!(roc, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    write_file(&out.join(ROC_FILE), &roc)?;
    write_file(
        &out.join(EVAL_FILE),
        &format!(
            "auc = {}\neer = {}\npositives = {}\nnegatives = {}\nlabeling = {}\n",
            report.auc, report.eer, report.positives, report.negatives, cfg.labeling
        ),
    )?;
    Ok(report)
}

/// Finite-difference check of the full model gradient. A failed check is
/// reported as `CliError::GradCheck` after the report is handed to `show`.
pub fn cmd_gradcheck(
    config: &ArchitectureConfig,
    options: &GradCheckOptions,
    show: impl FnOnce(&GradCheckReport),
) -> Result<GradCheckReport> {
    let report = gradient_check(config, options)?;
    show(&report);
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::GradCheck { worst: report.max_relative_error(), tolerance: options.tolerance })
    }
}
