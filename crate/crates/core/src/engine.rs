//! Online adaptation loop.
//!
//! Per batch the engine (1) inserts the batch into the memory bank, (2)
//! recomputes class prototypes from the bank, (3) predicts every sample with
//! the transform ensemble and calibrates it with its nearest bank entries,
//! then (4) runs `k_s` self-training steps on the transform parameters.
//! Predictions are reported from step (3), before the batch's update.
//!
//! The engine only ever receives [`Observation`]s; labels stay with the
//! caller and meet the scores again in [`run_stream`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_io::{FeatureRecord, Observation};
use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::lcpc::{lcpc_gradients, LossBreakdown, LossWeights, PreparedPrototypes, SelfTrainingBatch, TransformEnsemble};
use crate::memory_bank::MemoryBank;
use crate::metrics::MetricSummary;
use crate::nfc::{calibrate, CalibratedPrediction};
use crate::numerics::{argmax, dot, softmax, softmax_into, Mat64};
use crate::optimizer::{AdamConfig, AdamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Base detector softmax, untouched.
    NoAdapt,
    /// Self-training of a copy of the linear head on hardened confident predictions.
    PseudoLabel,
    /// Cosine prototype classifier on raw features; no training, no calibration.
    PrototypeOnly,
    /// Transform ensemble + nearest-feature calibration + self-training.
    Ours,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::NoAdapt, Strategy::PseudoLabel, Strategy::PrototypeOnly, Strategy::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoAdapt => "no_adapt",
            Strategy::PseudoLabel => "pseudo_label",
            Strategy::PrototypeOnly => "prototype_only",
            Strategy::Ours => "ours",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| invalid_arg(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Memory bank capacity.
    pub n_m: usize,
    /// Number of transform layers.
    pub n_t: usize,
    /// Revised feature dimension; `None` means `max(1, d / 2)`.
    pub d_t: Option<usize>,
    /// Neighbors used for calibration.
    pub n_f: usize,
    /// Confidence threshold on the base detector's softmax.
    pub conf: f64,
    /// Weight of the consistency term.
    pub alpha: f64,
    pub lr: f64,
    /// Update steps per batch.
    pub k_s: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub enable_lcpc_training: bool,
    pub enable_nfc: bool,
    pub predict_after_update: bool,
    pub nfc_grad_through_neighbors: bool,
    pub reset_optimizer_per_batch: bool,
    /// Replace the learned ensemble with one fixed identity layer.
    pub identity_transform: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ours,
            n_m: 1000,
            n_t: 5,
            d_t: None,
            n_f: 16,
            conf: 0.7,
            alpha: 0.1,
            lr: 1e-5,
            k_s: 1,
            batch_size: 32,
            seed: 0,
            enable_lcpc_training: true,
            enable_nfc: true,
            predict_after_update: false,
            nfc_grad_through_neighbors: false,
            reset_optimizer_per_batch: false,
            identity_transform: false,
        }
    }
}

impl StrategyConfig {
    pub fn for_strategy(strategy: Strategy) -> Self {
        Self { strategy, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 {
            return Err(invalid_config("n_t must be at least 1"));
        }
        if self.d_t == Some(0) {
            return Err(invalid_config("d_t must be positive"));
        }
        if self.k_s == 0 {
            return Err(invalid_config("k_s must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid_config("batch_size must be at least 1"));
        }
        if !self.conf.is_finite() {
            return Err(invalid_config("conf must be finite"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid_config(format!("alpha = {} must be finite and non-negative", self.alpha)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid_config(format!("lr = {} must be positive", self.lr)));
        }
        Ok(())
    }

    fn loss_weights(&self) -> LossWeights {
        LossWeights {
            conf: self.conf,
            alpha: self.alpha,
            use_nfc: self.enable_nfc,
            grad_through_neighbors: self.nfc_grad_through_neighbors,
        }
    }
}

/// What happened to the parameters while processing a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingOutcome {
    /// The strategy does not train.
    Disabled,
    /// Nothing to learn from (no confident sample and no consistency term).
    Skipped,
    /// `steps` updates were applied; `loss` is the value before the first.
    Updated { steps: usize, loss: LossBreakdown },
    /// A non-finite value stopped training for this batch.
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub predictions: Vec<CalibratedPrediction>,
    pub training: TrainingOutcome,
}

/// Trainable copy of the base classifier head for the pseudo-label baseline.
#[derive(Debug, Clone)]
struct PseudoLabelHead {
    weights: Mat64,
    adam: AdamState,
}

impl PseudoLabelHead {
    fn probs(&self, feature: &[f64], out: &mut [f64]) {
        let logits: Vec<f64> = (0..self.weights.rows()).map(|k| dot(self.weights.row(k), feature)).collect();
        softmax_into(&logits, out);
    }

    fn process(&mut self, batch: &[Observation], cfg: &StrategyConfig) -> Result<(Vec<CalibratedPrediction>, TrainingOutcome)> {
        let c = self.weights.rows();
        let d = self.weights.cols();
        let mut p = vec![0.0; c];
        let mut labeled = Vec::new();
        for obs in batch {
            self.probs(&obs.feature, &mut p);
            if p.iter().copied().fold(f64::NEG_INFINITY, f64::max) > cfg.conf {
                labeled.push((obs.feature.as_slice(), argmax(&p)));
            }
        }
        let outcome = if labeled.is_empty() {
            TrainingOutcome::Skipped
        } else {
            if cfg.reset_optimizer_per_batch {
                self.adam.reset();
            }
            let n = labeled.len() as f64;
            let mut first_loss = None;
            let mut failure = None;
            for _ in 0..cfg.k_s {
                let mut grad = vec![0.0; c * d];
                let mut loss = 0.0;
                for (f, y) in &labeled {
                    self.probs(f, &mut p);
                    loss -= p[*y].max(crate::numerics::EPS).ln() / n;
                    for k in 0..c {
                        let err = p[k] - if k == *y { 1.0 } else { 0.0 };
                        for (g, x) in grad[k * d..(k + 1) * d].iter_mut().zip(*f) {
                            *g += err * x / n;
                        }
                    }
                }
                first_loss.get_or_insert(loss);
                if let Err(e) = self.adam.step(self.weights.values_mut(), &grad) {
                    failure = Some(e.to_string());
                    break;
                }
            }
            match failure {
                Some(msg) => TrainingOutcome::Failed(msg),
                None => TrainingOutcome::Updated {
                    steps: cfg.k_s,
                    loss: LossBreakdown {
                        total: first_loss.unwrap_or(0.0),
                        lcpc: first_loss.unwrap_or(0.0),
                        nfc: 0.0,
                        confident: labeled.len(),
                    },
                },
            }
        };
        let preds = batch
            .iter()
            .map(|obs| {
                let mut q = vec![0.0; c];
                self.probs(&obs.feature, &mut q);
                CalibratedPrediction::uncalibrated(crate::numerics::ProbDist::new(q).expect("softmax output"))
            })
            .collect();
        Ok((preds, outcome))
    }
}

/// Adaptation state for one test stream.
#[derive(Debug, Clone)]
pub struct Engine {
    config: StrategyConfig,
    base_weights: Mat64,
    bank: MemoryBank,
    ensemble: TransformEnsemble,
    adam: AdamState,
    head: Option<PseudoLabelHead>,
    samples_seen: usize,
}

impl Engine {
    /// Seeds the bank from the `c x d` classifier weights and initializes the
    /// transform ensemble from `config.seed`.
    pub fn new(classifier_weights: &Mat64, config: StrategyConfig) -> Result<Self> {
        config.validate()?;
        let d = classifier_weights.cols();
        let ensemble = if config.identity_transform || config.strategy == Strategy::PrototypeOnly {
            TransformEnsemble::identity(d)
        } else {
            TransformEnsemble::new(d, config.d_t, config.n_t, config.seed)?
        };
        Self::with_ensemble(classifier_weights, config, ensemble)
    }

    /// Like [`Engine::new`] with a caller-supplied ensemble (fixtures).
    pub fn with_ensemble(classifier_weights: &Mat64, config: StrategyConfig, ensemble: TransformEnsemble) -> Result<Self> {
        config.validate()?;
        if ensemble.input_dim() != classifier_weights.cols() {
            return Err(invalid_config(format!(
                "ensemble expects dimension {}, classifier has {}",
                ensemble.input_dim(),
                classifier_weights.cols()
            )));
        }
        let bank = MemoryBank::init_from_classifier(classifier_weights, config.n_m)?;
        let adam = AdamState::new(ensemble.params().len(), AdamConfig::with_lr(config.lr))?;
        let head = (config.strategy == Strategy::PseudoLabel)
            .then(|| -> Result<PseudoLabelHead> {
                Ok(PseudoLabelHead {
                    weights: classifier_weights.clone(),
                    adam: AdamState::new(classifier_weights.values().len(), AdamConfig::with_lr(config.lr))?,
                })
            })
            .transpose()?;
        Ok(Self { config, base_weights: classifier_weights.clone(), bank, ensemble, adam, head, samples_seen: 0 })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn ensemble(&self) -> &TransformEnsemble {
        &self.ensemble
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    /// The frozen base classifier weights.
    pub fn base_weights(&self) -> &Mat64 {
        &self.base_weights
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    pub fn num_classes(&self) -> usize {
        self.base_weights.rows()
    }

    fn check_batch(&self, batch: &[Observation]) -> Result<()> {
        if batch.is_empty() {
            return Err(invalid_arg("empty batch"));
        }
        let (c, d) = (self.base_weights.rows(), self.base_weights.cols());
        for (i, obs) in batch.iter().enumerate() {
            if obs.feature.len() != d || obs.logits.len() != c {
                return Err(invalid_arg(format!(
                    "sample {i}: expected {d} features and {c} logits, got {} and {}",
                    obs.feature.len(),
                    obs.logits.len()
                )));
            }
            if obs.feature.iter().chain(&obs.logits).any(|v| !v.is_finite()) {
                return Err(invalid_arg(format!("sample {i} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn process_batch(&mut self, batch: &[Observation]) -> Result<BatchOutcome> {
        self.check_batch(batch)?;
        let outcome = match self.config.strategy {
            Strategy::NoAdapt => BatchOutcome {
                predictions: batch
                    .iter()
                    .map(|o| softmax(&o.logits).map(CalibratedPrediction::uncalibrated))
                    .collect::<Result<_>>()?,
                training: TrainingOutcome::Disabled,
            },
            Strategy::PseudoLabel => {
                let head = self.head.as_mut().expect("pseudo-label head exists for this strategy");
                let (predictions, training) = head.process(batch, &self.config)?;
                BatchOutcome { predictions, training }
            }
            Strategy::PrototypeOnly | Strategy::Ours => self.adapt(batch)?,
        };
        self.samples_seen += batch.len();
        Ok(outcome)
    }

    fn uses_nfc(&self) -> bool {
        self.config.strategy == Strategy::Ours && self.config.enable_nfc
    }

    fn trains(&self) -> bool {
        self.config.strategy == Strategy::Ours && self.config.enable_lcpc_training
    }

    fn adapt(&mut self, batch: &[Observation]) -> Result<BatchOutcome> {
        let records: Vec<(&[f64], &[f64])> =
            batch.iter().map(|o| (o.feature.as_slice(), o.logits.as_slice())).collect();
        let ids = self.bank.insert_batch(&records)?;
        let prototypes = self.bank.prototypes();
        let n_f = if self.uses_nfc() { self.config.n_f } else { 0 };
        let neighbor_features: Vec<Vec<Vec<f64>>> = batch
            .iter()
            .zip(&ids)
            .map(|(o, id)| {
                let set = self.bank.nearest(&o.feature, n_f, Some(*id))?;
                Ok(set.entries.iter().map(|e| e.feature.clone()).collect())
            })
            .collect::<Result<_>>()?;

        let prepared = self.ensemble.prepare(&prototypes)?;
        let mut predictions = self.predict_all(&prepared, batch, &neighbor_features)?;

        let training = if !self.trains() {
            TrainingOutcome::Disabled
        } else {
            self.train(batch, &prototypes, &neighbor_features)?
        };
        if self.config.predict_after_update && matches!(training, TrainingOutcome::Updated { .. }) {
            let prepared = self.ensemble.prepare(&prototypes)?;
            predictions = self.predict_all(&prepared, batch, &neighbor_features)?;
        }
        Ok(BatchOutcome { predictions, training })
    }

    fn predict_all(
        &self,
        prepared: &PreparedPrototypes,
        batch: &[Observation],
        neighbor_features: &[Vec<Vec<f64>>],
    ) -> Result<Vec<CalibratedPrediction>> {
        batch
            .iter()
            .zip(neighbor_features)
            .map(|(o, ns)| {
                let p = prepared.predict(&self.ensemble, &o.feature)?.mean;
                let neighbor_preds = ns
                    .iter()
                    .map(|n| prepared.predict(&self.ensemble, n).map(|e| e.mean))
                    .collect::<Result<Vec<_>>>()?;
                calibrate(&p, &neighbor_preds)
            })
            .collect()
    }

    fn train(
        &mut self,
        batch: &[Observation],
        prototypes: &[Vec<f64>],
        neighbor_features: &[Vec<Vec<f64>>],
    ) -> Result<TrainingOutcome> {
        let weights = self.config.loss_weights();
        let any_confident = batch
            .iter()
            .map(|o| softmax(&o.logits).map(|p| p.max_prob() > weights.conf))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .any(|c| c);
        if !any_confident && !weights.use_nfc {
            return Ok(TrainingOutcome::Skipped);
        }
        if self.config.reset_optimizer_per_batch {
            self.adam.reset();
        }
        let features: Vec<Vec<f64>> = batch.iter().map(|o| o.feature.clone()).collect();
        let logits: Vec<Vec<f64>> = batch.iter().map(|o| o.logits.clone()).collect();
        let st_batch = SelfTrainingBatch { features: &features, base_logits: &logits, neighbor_features };
        let mut first = None;
        for _ in 0..self.config.k_s {
            let step = lcpc_gradients(&self.ensemble, prototypes, &st_batch, &weights)
                .and_then(|(grads, loss)| self.adam.step(self.ensemble.params_mut(), grads.as_slice()).map(|_| loss));
            match step {
                Ok(loss) => {
                    first.get_or_insert(loss);
                }
                Err(Error::Numerical(msg)) => return Ok(TrainingOutcome::Failed(msg)),
                Err(e) => return Err(e),
            }
        }
        Ok(TrainingOutcome::Updated { steps: self.config.k_s, loss: first.expect("k_s >= 1") })
    }
}

/// One row of the component ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationVariant {
    pub id: u8,
    pub name: &'static str,
    pub config: StrategyConfig,
}

/// The four ablation rows built from `base`: (1) the untouched detector,
/// (2) trained transforms without calibration, (3) calibration on raw
/// features with no transforms, (4) everything.
pub fn ablation_variants(base: &StrategyConfig) -> [AblationVariant; 4] {
    let ours = StrategyConfig { strategy: Strategy::Ours, ..base.clone() };
    [
        AblationVariant { id: 1, name: "baseline", config: StrategyConfig { strategy: Strategy::NoAdapt, ..base.clone() } },
        AblationVariant {
            id: 2,
            name: "lcpc",
            config: StrategyConfig { enable_lcpc_training: true, enable_nfc: false, identity_transform: false, ..ours.clone() },
        },
        AblationVariant {
            id: 3,
            name: "nfc",
            config: StrategyConfig { enable_lcpc_training: false, enable_nfc: true, identity_transform: true, ..ours.clone() },
        },
        AblationVariant {
            id: 4,
            name: "full",
            config: StrategyConfig { enable_lcpc_training: true, enable_nfc: true, identity_transform: false, ..ours },
        },
    ]
}

/// Per-stream summary: scores in input order plus metrics when labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub strategy: Strategy,
    pub config: StrategyConfig,
    pub positive_class: usize,
    /// Calibrated probability of the positive class, one per record.
    pub scores: Vec<f64>,
    /// Present iff every record carried a 0/1 label and both classes occur.
    pub metrics: Option<MetricSummary>,
    /// Wall-clock seconds spent in each `process_batch` call.
    pub batch_seconds: Vec<f64>,
    pub updated_batches: usize,
    pub skipped_batches: usize,
    /// `(batch index, reason)` for batches whose training hit a numerical error.
    pub failed_batches: Vec<(usize, String)>,
}

impl EvaluationReport {
    pub fn mean_batch_seconds(&self) -> f64 {
        if self.batch_seconds.is_empty() {
            0.0
        } else {
            self.batch_seconds.iter().sum::<f64>() / self.batch_seconds.len() as f64
        }
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = std::time::Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

// No monotonic clock on wasm32-unknown-unknown.
#[cfg(target_arch = "wasm32")]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    (f(), 0.0)
}

/// Streams records through a fresh engine in consecutive batches of
/// `config.batch_size` (the last one may be shorter).
pub fn run_stream<I>(
    config: &StrategyConfig,
    classifier_weights: &Mat64,
    positive_class: usize,
    records: I,
) -> Result<EvaluationReport>
where
    I: IntoIterator<Item = Result<FeatureRecord>>,
{
    let mut engine = Engine::new(classifier_weights, config.clone())?;
    run_with_engine(&mut engine, positive_class, records)
}

/// [`run_stream`] with an already constructed engine.
pub fn run_with_engine<I>(engine: &mut Engine, positive_class: usize, records: I) -> Result<EvaluationReport>
where
    I: IntoIterator<Item = Result<FeatureRecord>>,
{
    if positive_class >= engine.num_classes() {
        return Err(invalid_arg(format!("positive class {positive_class} out of range")));
    }
    let batch_size = engine.config().batch_size;
    let mut report = EvaluationReport {
        strategy: engine.config().strategy,
        config: engine.config().clone(),
        positive_class,
        scores: Vec::new(),
        metrics: None,
        batch_seconds: Vec::new(),
        updated_batches: 0,
        skipped_batches: 0,
        failed_batches: Vec::new(),
    };
    let mut labels: Vec<i8> = Vec::new();
    let mut pending: Vec<Observation> = Vec::with_capacity(batch_size);
    let mut iter = records.into_iter().peekable();
    while iter.peek().is_some() {
        pending.clear();
        while pending.len() < batch_size {
            let Some(rec) = iter.next() else { break };
            let (obs, label) = rec?.into_parts();
            pending.push(obs);
            labels.push(label);
        }
        let (outcome, secs) = timed(|| engine.process_batch(&pending));
        let outcome = outcome?;
        let index = report.batch_seconds.len();
        report.batch_seconds.push(secs);
        match outcome.training {
            TrainingOutcome::Updated { .. } => report.updated_batches += 1,
            TrainingOutcome::Skipped => report.skipped_batches += 1,
            TrainingOutcome::Failed(msg) => report.failed_batches.push((index, msg)),
            TrainingOutcome::Disabled => {}
        }
        report.scores.extend(outcome.predictions.iter().map(|p| p.calibrated[positive_class]));
    }
    if !labels.is_empty() && labels.iter().all(|l| *l == 0 || *l == 1) {
        let labels: Vec<u8> = labels.iter().map(|l| *l as u8).collect();
        report.metrics = MetricSummary::compute(&report.scores, &labels).ok();
    }
    Ok(report)
}
