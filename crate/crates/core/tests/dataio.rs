mod common;

use std::collections::BTreeSet;
use std::path::Path;

use convlstm_ad::dataio::*;
use convlstm_ad::{Error, Mode};
use proptest::prelude::*;

fn write_pgm_bytes(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> u8) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.push(f(x, y));
        }
    }
    std::fs::write(path, bytes).unwrap();
}

/// Bilinear sample of a `w x h` raster at output pixel `(ox, oy)` of an
/// `ow x oh` grid, pixel centers aligned.
fn bilinear_oracle(src: &[f64], w: usize, h: usize, ow: usize, oh: usize, ox: usize, oy: usize) -> f64 {
    let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0).min((w - 1) as f64);
    let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0).min((h - 1) as f64);
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let wx = (1.0 - (sx - x as f64).abs()).max(0.0);
            let wy = (1.0 - (sy - y as f64).abs()).max(0.0);
            acc += wx * wy * src[y * w + x];
        }
    }
    acc
}

#[test]
fn black_and_white_frames_map_to_zero_and_one() {
    let dir = tempfile::tempdir().unwrap();
    let black = dir.path().join("black.pgm");
    let white = dir.path().join("white.pgm");
    write_pgm_bytes(&black, 10, 6, |_, _| 0);
    write_pgm_bytes(&white, 10, 6, |_, _| 255);
    let b = load_frame(&black, (4, 5)).unwrap();
    let w = load_frame(&white, (4, 5)).unwrap();
    assert_eq!(b.shape(), &[1, 4, 5]);
    assert!(b.data().iter().all(|&v| v == 0.0));
    assert!(w.data().iter().all(|&v| v == 1.0));

    let png_path = dir.path().join("white.png");
    let file = std::fs::File::create(&png_path).unwrap();
    let mut enc = png::Encoder::new(file, 3, 2);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header().unwrap().write_image_data(&[255; 6]).unwrap();
    let p = load_frame(&png_path, (2, 3)).unwrap();
    assert!(p.data().iter().all(|&v| v == 1.0));
}

#[test]
fn downsampled_boundary_matches_bilinear_formula() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.pgm");
    // Rows 0..5 black, 5..12 white: the edge falls inside an output pixel.
    let (w, h) = (8, 12);
    write_pgm_bytes(&path, w, h, |_, y| if y < 5 { 0 } else { 255 });
    let src: Vec<f64> = (0..w * h).map(|i| if i / w < 5 { 0.0 } else { 1.0 }).collect();
    for (oh, ow) in [(6, 4), (5, 3), (7, 11)] {
        let t = load_frame(&path, (oh, ow)).unwrap();
        for oy in 0..oh {
            for ox in 0..ow {
                let want = bilinear_oracle(&src, w, h, ow, oh, ox, oy);
                let got = t.get(&[0, oy, ox]) as f64;
                assert!((got - want).abs() < 1e-6, "{oh}x{ow} at ({oy},{ox}): {got} vs {want}");
            }
        }
    }
    let t = load_frame(&path, (6, 4)).unwrap();
    // Output row 2 straddles source rows 4 (black) and 5 (white).
    assert!((t.get(&[0, 2, 0]) - 0.5).abs() < 1e-6);
}

#[test]
fn unreadable_and_corrupt_files_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.pgm");
    match load_frame(&missing, (4, 4)) {
        Err(Error::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("expected I/O error, got {other:?}"),
    }
    let corrupt = dir.path().join("bad.pgm");
    std::fs::write(&corrupt, b"P5\n4 4\n255\n\x01\x02").unwrap();
    let err = load_frame(&corrupt, (4, 4)).unwrap_err();
    assert!(matches!(&err, Error::Format { path, .. } if path == &corrupt), "{err}");
    assert!(err.to_string().contains("bad.pgm"));
    let text = dir.path().join("notes.txt");
    std::fs::write(&text, "hello").unwrap();
    assert!(matches!(load_frame(&text, (4, 4)), Err(Error::Format { .. })));
    let bad_png = dir.path().join("bad.png");
    std::fs::write(&bad_png, b"\x89PNG garbage").unwrap();
    assert!(matches!(load_frame(&bad_png, (4, 4)), Err(Error::Format { .. })));
}

fn brute_force(len: usize, tau: usize, mode: Mode, strides: &[usize]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for &d in strides {
        for t0 in 0..len {
            let last = match mode {
                Mode::Prediction => t0 + d * (2 * tau - 1),
                Mode::Reconstruction => t0 + d * (tau - 1),
            };
            if last < len {
                out.insert((t0, d));
            }
        }
    }
    out
}

#[test]
fn prediction_count_with_all_strides_matches_brute_force() {
    let got = enumerate_volumes(0, 30, 5, Mode::Prediction, &TRAINING_STRIDES);
    assert_eq!(got.len(), brute_force(30, 5, Mode::Prediction, &TRAINING_STRIDES).len());
    assert_eq!(got.len(), 21 + 12 + 3);
}

proptest! {
    #[test]
    fn enumeration_is_exhaustive_and_unique(
        len in 0usize..=50,
        tau in 1usize..=8,
        prediction in any::<bool>(),
        strides in proptest::sample::subsequence(vec![1usize, 2, 3], 0..=3),
    ) {
        let mode = if prediction { Mode::Prediction } else { Mode::Reconstruction };
        let got = enumerate_volumes(7, len, tau, mode, &strides);
        let set: BTreeSet<_> = got.iter().map(|v| (v.start, v.stride)).collect();
        prop_assert_eq!(set.len(), got.len());
        prop_assert_eq!(set, brute_force(len, tau, mode, &strides));
        prop_assert!(got.iter().all(|v| v.video == 7 && v.tau == tau && v.fits(len, mode)));
        prop_assert_eq!(got.clone(), enumerate_volumes(7, len, tau, mode, &strides));
    }
}

/// Frame `t` is a constant image of value `t / 255`.
fn staircase(id: &str, len: usize, h: usize, w: usize) -> Video {
    Video {
        id: id.into(),
        height: h,
        width: w,
        frames: (0..len).map(|t| vec![t as f32 / 255.0; h * w]).collect(),
    }
}

fn frame_value(t: &convlstm_ad::Tensor<f32>, b: usize, i: usize) -> usize {
    (t.get(&[b, 0, 1, 2, i]) * 255.0).round() as usize
}

#[test]
fn batches_follow_time_order_and_strides() {
    let videos = vec![staircase("a", 40, 3, 4), staircase("b", 40, 3, 4)];
    let tau = 4;
    for mode in [Mode::Prediction, Mode::Reconstruction] {
        let vols: Vec<_> = enumerate_volumes(1, 40, tau, mode, &[1, 2, 3]).into_iter().step_by(5).collect();
        for chunk in [&vols[..1], &vols[..4]] {
            let batch = assemble_batch(chunk, &videos, mode).unwrap();
            assert_eq!(batch.input.shape(), &[chunk.len(), 1, 3, 4, tau]);
            assert_eq!(batch.target.shape(), batch.input.shape());
            for (b, v) in chunk.iter().enumerate() {
                for i in 0..tau {
                    assert_eq!(frame_value(&batch.input, b, i), v.start + i * v.stride);
                    let want = match mode {
                        Mode::Prediction => v.start + (tau + i) * v.stride,
                        Mode::Reconstruction => v.start + (tau - 1 - i) * v.stride,
                    };
                    assert_eq!(frame_value(&batch.target, b, i), want);
                }
            }
        }
    }
    let bad = VolumeIndex { video: 0, start: 38, stride: 1, tau };
    assert!(assemble_batch(&[bad], &videos, Mode::Reconstruction).is_err());
    assert!(assemble_batch(&[], &videos, Mode::Reconstruction).is_err());
}

#[test]
fn stride_two_skips_alternate_frames() {
    let videos = vec![staircase("a", 20, 2, 3)];
    let v = VolumeIndex { video: 0, start: 3, stride: 2, tau: 3 };
    let batch = assemble_batch(&[v], &videos, Mode::Reconstruction).unwrap();
    let got: Vec<_> = (0..3).map(|i| frame_value(&batch.input, 0, i)).collect();
    assert_eq!(got, vec![3, 5, 7]);
}

fn small_spec() -> SynthSpec {
    SynthSpec {
        height: 24,
        width: 24,
        train_videos: 2,
        test_videos: 3,
        frames_per_video: 70,
        sprite_size: 4,
        sprites: 2,
        seed: 11,
        ..SynthSpec::default()
    }
}

#[test]
fn synthetic_labels_mark_the_segment() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    assert_eq!(ds.ground_truth.len(), 3);
    for gt in &ds.ground_truth {
        assert_eq!(gt.len(), 70);
        for (t, &a) in gt.labels.iter().enumerate() {
            assert_eq!(a, (40..60).contains(&t), "frame {t}");
        }
    }
    let clean = generate_synthetic(&SynthSpec { anomaly: AnomalyKind::None, ..small_spec() }).unwrap();
    assert!(clean.ground_truth.iter().all(|g| g.labels.iter().all(|&a| !a)));
    // Without the extra sprite, test frames before the segment are unchanged.
    assert_eq!(clean.test[0].frames[..40], ds.test[0].frames[..40]);
    assert_ne!(clean.test[0].frames[45], ds.test[0].frames[45]);
}

#[test]
fn synthetic_data_is_deterministic_and_quantized() {
    let a = generate_synthetic(&small_spec()).unwrap();
    let b = generate_synthetic(&small_spec()).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(&SynthSpec { seed: 12, ..small_spec() }).unwrap();
    assert_ne!(a.train[0].frames, c.train[0].frames);
    for v in a.train.iter().chain(&a.test) {
        for f in &v.frames {
            for &p in f {
                assert!((0.0..=1.0).contains(&p));
                assert_eq!((p * 255.0).round() / 255.0, p);
            }
        }
    }
    assert_ne!(a.train[0].frames[0], a.train[0].frames[1], "sprites move");
}

#[test]
fn synthetic_spec_validation() {
    assert!(generate_synthetic(&SynthSpec { fast_speed: 3.0, ..small_spec() }).is_err());
    assert!(generate_synthetic(&SynthSpec { anomaly_start: 60, ..small_spec() }).is_err());
    assert!(generate_synthetic(&SynthSpec { sprite_size: 30, ..small_spec() }).is_err());
    assert!(generate_synthetic(&SynthSpec { anomaly: AnomalyKind::None, anomaly_start: 500, ..small_spec() }).is_ok());
    assert_eq!("reverse".parse::<AnomalyKind>().unwrap(), AnomalyKind::Reverse);
    assert!("sideways".parse::<AnomalyKind>().is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = generate_synthetic(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let train = load_videos(&list_videos(&dir.path().join(TRAIN_DIR), (24, 24)).unwrap()).unwrap();
    let test = load_videos(&list_videos(&dir.path().join(TEST_DIR), (24, 24)).unwrap()).unwrap();
    assert_eq!(train, ds.train);
    assert_eq!(test, ds.test);
    for gt in &ds.ground_truth {
        assert_eq!(&read_ground_truth(dir.path(), &gt.video, 70).unwrap(), gt);
    }
    assert!(read_ground_truth(dir.path(), "video_000", 69).is_err());
    match read_ground_truth(dir.path(), "video_999", 70) {
        Err(Error::Evaluation(m)) => assert!(m.contains("video_999")),
        other => panic!("{other:?}"),
    }
    let src = FrameSource::open(&dir.path().join(TEST_DIR).join("video_001"), (12, 12)).unwrap();
    assert_eq!((src.len(), src.native_size), (70, (24, 24)));
}

#[test]
fn ground_truth_text_format() {
    let p = Path::new("labels.txt");
    let gt = GroundTruth::parse("v", "0\n1\n\n1\n", p).unwrap();
    assert_eq!(gt.labels, vec![false, true, true]);
    assert_eq!(gt.to_text(), "0\n1\n1\n");
    assert!(GroundTruth::parse("v", "0\n2\n", p).is_err());
}
