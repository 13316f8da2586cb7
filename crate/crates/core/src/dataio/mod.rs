//! Frame ingestion, volume assembly and the synthetic dataset.

mod frames;
mod image;
mod synth;
mod volumes;

pub use frames::{
    list_videos, load_frame, load_videos, read_ground_truth, FrameSource, GroundTruth, Video, LABELS_DIR, TEST_DIR,
    TRAIN_DIR,
};
pub use image::{decode_pgm, decode_png, encode_pgm, quantize, read_gray, resize_bilinear, write_pgm, GrayImage};
pub use synth::{generate_synthetic, AnomalyKind, SynthSpec, SyntheticDataset};
pub use volumes::{
    assemble_batch, enumerate_volumes, test_volumes, SequenceBatch, TestStride, VolumeIndex, TRAINING_STRIDES,
};
