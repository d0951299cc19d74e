//! The boundary between a base detector and the adaptation engine: the
//! feature-stream file formats, the synthetic domain-shift benchmark and a
//! small linear detector to stand in for a real one.

mod detector;
mod stream;
mod synth;

pub use detector::{build_benchmark, train_base_detector, BaseDetectorSource, LinearDetector, TrainOptions};
pub use stream::{
    read_csv, read_stream, read_weights, write_csv, write_stream, write_stream_file, write_weights, FeatureRecord, Observation,
    StreamHeader, StreamReader, STREAM_MAGIC, STREAM_VERSION, WEIGHTS_MAGIC,
};
pub use synth::{generate_synthetic, LabeledSample, SynthConfig, SynthData};
