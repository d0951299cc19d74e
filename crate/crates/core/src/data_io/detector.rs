//! A linear stand-in for a frozen off-the-shelf detector.
//!
//! The "feature extractor" appends a constant 1 to the raw input so the
//! classifier bias is folded into the weight matrix; the classifier is then
//! `logits = W · F`. After training the detector never changes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stream::FeatureRecord;
use super::synth::{generate_synthetic, LabeledSample, SynthConfig};
use crate::error::{invalid_arg, Result};
use crate::numerics::{dot, softmax_into, Mat64};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDetector {
    weights: Mat64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 300, lr: 0.5, seed: 0 }
    }
}

impl LinearDetector {
    /// Wraps existing `c x (d + 1)` classifier weights.
    pub fn from_weights(weights: Mat64) -> Self {
        Self { weights }
    }

    /// Weights of the classifier head, one row per class.
    pub fn classifier_weights(&self) -> &Mat64 {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    /// Length of the raw (un-augmented) input.
    pub fn input_dim(&self) -> usize {
        self.weights.cols() - 1
    }

    pub fn extract_feature(&self, x: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(x.len() + 1);
        f.extend_from_slice(x);
        f.push(1.0);
        f
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        (0..self.weights.rows()).map(|k| dot(self.weights.row(k), feature)).collect()
    }

    /// Runs the frozen detector on a raw input.
    pub fn apply(&self, x: &[f64], label: i8) -> Result<FeatureRecord> {
        if x.len() != self.input_dim() {
            return Err(invalid_arg(format!("input has dimension {}, detector expects {}", x.len(), self.input_dim())));
        }
        let feature = self.extract_feature(x);
        let logits = self.logits(&feature);
        Ok(FeatureRecord { feature, logits, label })
    }

    pub fn apply_all(&self, samples: &[LabeledSample]) -> Result<Vec<FeatureRecord>> {
        samples.iter().map(|s| self.apply(&s.x, s.label as i8)).collect()
    }

    pub fn accuracy(&self, samples: &[LabeledSample]) -> f64 {
        let hits = samples
            .iter()
            .filter(|s| {
                let l = self.logits(&self.extract_feature(&s.x));
                crate::numerics::argmax(&l) == s.label as usize
            })
            .count();
        hits as f64 / samples.len().max(1) as f64
    }
}

/// Full-batch gradient descent on mean softmax cross-entropy. Weights start
/// uniform in `[-0.01, 0.01]` from the seed.
pub fn train_base_detector(source: &[LabeledSample], opts: &TrainOptions) -> Result<LinearDetector> {
    let first = source.first().ok_or_else(|| invalid_arg("empty source set"))?;
    let d = first.x.len() + 1;
    if source.iter().any(|s| s.x.len() + 1 != d) {
        return Err(invalid_arg("source samples have inconsistent dimensions"));
    }
    let c = source.iter().map(|s| s.label as usize).max().unwrap_or(0) + 1;
    let mut seen = vec![false; c.max(2)];
    source.iter().for_each(|s| seen[s.label as usize] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(invalid_arg("source data must contain at least two classes"));
    }
    let c = c.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init: Vec<f64> = (0..c * d).map(|_| rng.random_range(-0.01..=0.01)).collect();
    let mut w = Mat64::new(c, d, init)?;
    let features: Vec<Vec<f64>> = source
        .iter()
        .map(|s| {
            let mut f = s.x.clone();
            f.push(1.0);
            f
        })
        .collect();
    let n = source.len() as f64;
    let mut grad = vec![0.0; c * d];
    let mut probs = vec![0.0; c];
    let mut logits = vec![0.0; c];
    for _ in 0..opts.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (f, s) in features.iter().zip(source) {
            for (k, l) in logits.iter_mut().enumerate() {
                *l = dot(w.row(k), f);
            }
            softmax_into(&logits, &mut probs);
            for k in 0..c {
                let err = probs[k] - if k == s.label as usize { 1.0 } else { 0.0 };
                for (g, x) in grad[k * d..(k + 1) * d].iter_mut().zip(f) {
                    *g += err * x / n;
                }
            }
        }
        for (p, g) in w.values_mut().iter_mut().zip(&grad) {
            *p -= opts.lr * g;
        }
    }
    Ok(LinearDetector { weights: w })
}

/// Generates `cfg`, trains the base detector on the source split and runs it
/// over the target split. Returns the frozen detector and the labeled
/// target records.
pub fn build_benchmark(cfg: &SynthConfig, opts: &TrainOptions) -> Result<(LinearDetector, Vec<FeatureRecord>)> {
    let data = generate_synthetic(cfg)?;
    let detector = train_base_detector(&data.source, opts)?;
    let target = detector.apply_all(&data.target)?;
    Ok((detector, target))
}

/// The classifier weights that cross into the adaptation module, paired with
/// the stream of extracted records.
#[derive(Debug)]
pub struct BaseDetectorSource<I> {
    pub classifier_weights: Mat64,
    pub positive_class: usize,
    pub stream: I,
}
