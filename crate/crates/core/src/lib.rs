//! Test-time adaptation for a frozen binary detector.
//!
//! A stream of `(feature, logits)` pairs from the detector is processed in
//! batches. A memory bank of low-entropy features provides class prototypes;
//! an ensemble of learnable linear transforms classifies by cosine similarity
//! to those prototypes, and predictions are smoothed with the predictions of
//! nearby bank entries. The detector itself is never modified.

pub mod data_io;
pub mod engine;
mod error;
pub mod lcpc;
pub mod memory_bank;
pub mod metrics;
pub mod nfc;
pub mod numerics;
pub mod optimizer;

pub use engine::{ablation_variants, run_stream, run_with_engine, AblationVariant, BatchOutcome, Engine, EvaluationReport, Strategy, StrategyConfig, TrainingOutcome};
pub use error::{Error, Result};
