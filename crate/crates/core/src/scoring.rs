//! Volume errors, regularity scores and ROC evaluation.

use std::fmt;
use std::str::FromStr;

use crate::dataio::GroundTruth;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sum over the `tau` frames of the Euclidean norm of each frame's
/// difference. Tensors are `[B, C, H, W, tau]`; every batch item and channel
/// of a frame contributes to that frame's norm.
pub fn volume_error<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    output.expect_same_shape(target, "volume_error")?;
    let tau = output.dims5("volume_error")?.4;
    let mut sq = vec![0.0f64; tau];
    for (i, (o, t)) in output.data().iter().zip(target.data()).enumerate() {
        let d = o.to_f64().unwrap_or(f64::NAN) - t.to_f64().unwrap_or(f64::NAN);
        sq[i % tau] += d * d;
    }
    Ok(sq.iter().map(|s| s.sqrt()).sum())
}

/// `volume_error` of each batch item.
pub fn batch_volume_errors<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<f64>> {
    output.expect_same_shape(target, "batch_volume_errors")?;
    let b = output.dims5("batch_volume_errors")?.0;
    (0..b)
        .map(|i| volume_error(&output.batch_item(i)?, &target.batch_item(i)?))
        .collect()
}

/// Per-pixel squared error summed over time, `[1, H, W]`. Channels and batch
/// items are summed as well.
pub fn error_heatmap_raw<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<f64>> {
    output.expect_same_shape(target, "error_heatmap")?;
    let (b, c, h, w, tau) = output.dims5("error_heatmap")?;
    let plane = h * w;
    let mut map = vec![0.0f64; plane];
    for (i, (o, t)) in output.data().iter().zip(target.data()).enumerate() {
        let d = o.to_f64().unwrap_or(f64::NAN) - t.to_f64().unwrap_or(f64::NAN);
        map[(i / tau) % plane] += d * d;
    }
    debug_assert_eq!(output.len(), b * c * plane * tau);
    Tensor::new(&[1, h, w], map)
}

/// `error_heatmap_raw` divided by its maximum; an all-zero map stays zero.
pub fn error_heatmap<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<f64>> {
    let raw = error_heatmap_raw(output, target)?;
    let max = raw.max_abs();
    Ok(if max > 0.0 { raw.scale(1.0 / max) } else { raw })
}

/// Volume errors of one test video, keyed by volume start frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSeries {
    pub video: String,
    pub starts: Vec<usize>,
    pub errors: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(video: impl Into<String>, starts: Vec<usize>, errors: Vec<f64>) -> Result<Self> {
        let video = video.into();
        if starts.len() != errors.len() {
            return Err(Error::Evaluation(format!(
                "video `{video}`: {} starts but {} errors",
                starts.len(),
                errors.len()
            )));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Evaluation(format!("video `{video}`: volume starts are not increasing")));
        }
        if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Evaluation(format!("video `{video}`: invalid volume error {e}")));
        }
        Ok(Self { video, starts, errors })
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// How errors are mapped to regularity scores within a video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `s = 1 - (e - min e) / max e`.
    #[default]
    Paper,
    /// `s = 1 - (e - min e) / (max e - min e)`.
    MinMax,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Paper => "paper",
            Normalization::MinMax => "minmax",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Normalization::Paper),
            "minmax" => Ok(Normalization::MinMax),
            _ => Err(Error::Config(format!("score normalization must be `paper` or `minmax`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityScores {
    pub video: String,
    pub starts: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Regularity scores of one video. A video whose errors are all equal
/// (including all zero) scores 1 everywhere.
pub fn regularity(series: &ErrorSeries, norm: Normalization) -> RegularityScores {
    let e = &series.errors;
    let min = e.iter().copied().fold(f64::INFINITY, f64::min);
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom = match norm {
        Normalization::Paper => max,
        Normalization::MinMax => max - min,
    };
    let scores = e
        .iter()
        .map(|&x| if denom > 0.0 { 1.0 - (x - min) / denom } else { 1.0 })
        .collect();
    RegularityScores {
        video: series.video.clone(),
        starts: series.starts.clone(),
        scores,
    }
}

/// `true` marks an abnormal volume (`s < threshold`).
pub fn classify(scores: &RegularityScores, threshold: f64) -> Vec<bool> {
    scores.scores.iter().map(|&s| s < threshold).collect()
}

/// How a scored volume is matched against per-frame ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VolumeLabeling {
    /// One sample per volume, abnormal iff any frame of its input window is.
    #[default]
    InputWindow,
    /// One sample per frame covered by an input window. A frame covered by
    /// several windows takes the lowest of their scores.
    PerFrame,
}

impl fmt::Display for VolumeLabeling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VolumeLabeling::InputWindow => "volume",
            VolumeLabeling::PerFrame => "frame",
        })
    }
}

impl FromStr for VolumeLabeling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" => Ok(VolumeLabeling::InputWindow),
            "frame" => Ok(VolumeLabeling::PerFrame),
            _ => Err(Error::Config(format!("labeling must be `volume` or `frame`, got `{s}`"))),
        }
    }
}

/// Label of the input window `start .. start + tau` (stride 1).
pub fn window_label(gt: &GroundTruth, start: usize, tau: usize) -> Result<bool> {
    gt.labels.get(start..start + tau).map(|w| w.iter().any(|&a| a)).ok_or_else(|| {
        Error::Evaluation(format!(
            "video `{}`: volume {start}..{} exceeds {} labeled frames",
            gt.video,
            start + tau,
            gt.len()
        ))
    })
}

/// `(score, abnormal)` samples for one video.
pub fn labeled_samples(
    scores: &RegularityScores,
    gt: &GroundTruth,
    tau: usize,
    labeling: VolumeLabeling,
) -> Result<Vec<(f64, bool)>> {
    match labeling {
        VolumeLabeling::InputWindow => scores
            .starts
            .iter()
            .zip(&scores.scores)
            .map(|(&t, &s)| Ok((s, window_label(gt, t, tau)?)))
            .collect(),
        VolumeLabeling::PerFrame => {
            let mut frame_score = vec![None::<f64>; gt.len()];
            for (&t, &s) in scores.starts.iter().zip(&scores.scores) {
                window_label(gt, t, tau)?;
                for f in &mut frame_score[t..t + tau] {
                    *f = Some(f.map_or(s, |prev| prev.min(s)));
                }
            }
            Ok(frame_score
                .iter()
                .zip(&gt.labels)
                .filter_map(|(s, &a)| s.map(|s| (s, a)))
                .collect())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Ordered by increasing threshold, hence non-decreasing FPR and TPR.
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// ROC analysis of `(score, abnormal)` samples; low scores are abnormal.
///
/// Thresholds lie strictly between adjacent distinct scores, plus one below
/// the minimum and one above the maximum.
pub fn roc_from_samples(samples: &[(f64, bool)]) -> Result<EvalReport> {
    let positives = samples.iter().filter(|s| s.1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Evaluation(format!(
            "ROC needs both classes, got {positives} abnormal and {negatives} normal samples"
        )));
    }
    if let Some(s) = samples.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite score {}", s.0)));
    }
    let mut sorted: Vec<(f64, bool)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut distinct: Vec<f64> = sorted.iter().map(|s| s.0).collect();
    distinct.dedup();

    let mut thresholds = Vec::with_capacity(distinct.len() + 1);
    thresholds.push(distinct[0] - 1.0);
    thresholds.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(distinct[distinct.len() - 1] + 1.0);

    let mut roc = Vec::with_capacity(thresholds.len());
    let (mut tp, mut fp, mut i) = (0, 0, 0);
    for &threshold in &thresholds {
        while i < sorted.len() && sorted[i].0 < threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            true_positives: tp,
            false_positives: fp,
            true_negatives: negatives - fp,
            false_negatives: positives - tp,
        });
    }

    let auc = roc
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr))
        .sum();

    // FPR + TPR - 1 rises from -1 to +1 along the curve.
    let g = |p: &RocPoint| p.fpr + p.tpr - 1.0;
    let mut eer = 0.5;
    for w in roc.windows(2) {
        let (g0, g1) = (g(&w[0]), g(&w[1]));
        if g0 <= 0.0 && g1 >= 0.0 {
            let alpha = if g1 > g0 { -g0 / (g1 - g0) } else { 0.0 };
            eer = w[0].fpr + alpha * (w[1].fpr - w[0].fpr);
            break;
        }
    }

    Ok(EvalReport {
        roc,
        auc,
        eer,
        positives,
        negatives,
    })
}

/// Pools the samples of every scored video and computes the ROC.
pub fn evaluate(
    videos: &[RegularityScores],
    truth: &[GroundTruth],
    tau: usize,
    labeling: VolumeLabeling,
) -> Result<EvalReport> {
    let mut samples = Vec::new();
    for scores in videos {
        let gt = truth
            .iter()
            .find(|g| g.video == scores.video)
            .ok_or_else(|| Error::Evaluation(format!("no ground truth for video `{}`", scores.video)))?;
        samples.extend(labeled_samples(scores, gt, tau, labeling)?);
    }
    roc_from_samples(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(e: &[f64]) -> ErrorSeries {
        ErrorSeries::new("v", (0..e.len()).collect(), e.to_vec()).unwrap()
    }

    #[test]
    fn regularity_examples() {
        let s = regularity(&series(&[2.0, 4.0, 10.0]), Normalization::Paper);
        for (a, b) in s.scores.iter().zip([1.0, 0.8, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(regularity(&series(&[3.0; 3]), Normalization::Paper).scores, vec![1.0; 3]);
        assert_eq!(regularity(&series(&[0.0; 2]), Normalization::MinMax).scores, vec![1.0; 2]);
        let m = regularity(&series(&[2.0, 4.0, 10.0]), Normalization::MinMax);
        assert_eq!(m.scores, vec![1.0, 0.75, 0.0]);
    }

    #[test]
    fn classify_examples() {
        let s = regularity(&series(&[2.0, 4.0, 10.0]), Normalization::Paper);
        assert_eq!(classify(&s, 0.0), vec![false; 3]);
        assert_eq!(classify(&s, 1.01), vec![true; 3]);
        assert_eq!(classify(&s, 0.5), vec![false, false, true]);
    }

    #[test]
    fn error_series_validation() {
        assert!(ErrorSeries::new("v", vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(ErrorSeries::new("v", vec![0], vec![-1.0]).is_err());
        assert!(ErrorSeries::new("v", vec![0], vec![]).is_err());
    }

    #[test]
    fn roc_examples() {
        let r = roc_from_samples(&[(0.9, false), (0.8, false), (0.3, true), (0.2, true)]).unwrap();
        assert_eq!((r.auc, r.eer), (1.0, 0.0));
        let first = r.roc.first().unwrap();
        let last = r.roc.last().unwrap();
        assert_eq!((first.fpr, first.tpr, last.fpr, last.tpr), (0.0, 0.0, 1.0, 1.0));
        let flat = roc_from_samples(&[(0.5, false), (0.5, true), (0.5, true)]).unwrap();
        assert_eq!((flat.auc, flat.eer), (0.5, 0.5));
        assert!(roc_from_samples(&[(0.5, true)]).is_err());
    }

    #[test]
    fn per_frame_labeling_takes_lowest_covering_score() {
        let gt = GroundTruth {
            video: "v".into(),
            labels: vec![false, false, true, true, false],
        };
        let s = RegularityScores {
            video: "v".into(),
            starts: vec![0, 1],
            scores: vec![0.9, 0.4],
        };
        let samples = labeled_samples(&s, &gt, 2, VolumeLabeling::PerFrame).unwrap();
        assert_eq!(samples, vec![(0.9, false), (0.4, false), (0.4, true)]);
        let vols = labeled_samples(&s, &gt, 2, VolumeLabeling::InputWindow).unwrap();
        assert_eq!(vols, vec![(0.9, false), (0.4, true)]);
        let missing = evaluate(&[RegularityScores { video: "w".into(), ..s }], &[gt], 2, VolumeLabeling::InputWindow);
        assert!(matches!(missing, Err(Error::Evaluation(m)) if m.contains("`w`")));
    }
}
