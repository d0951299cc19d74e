//! Browser demo: generates a small synthetic benchmark, runs the adaptation
//! strategies on it and hands results back to the page as JSON.

use serde::{Deserialize, Serialize};
use tta_core::data_io::{build_benchmark, FeatureRecord, SynthConfig, TrainOptions};
use tta_core::numerics::Mat64;
use tta_core::{ablation_variants, run_stream, Strategy, StrategyConfig};
use wasm_bindgen::prelude::*;

/// Knobs exposed by the page. Missing fields take the benchmark defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub seed: u64,
    pub shift: f64,
    pub novel_weight: f64,
    pub n_target: usize,
    pub n_f: usize,
    pub alpha: f64,
    pub k_s: usize,
}

impl Default for DemoParams {
    fn default() -> Self {
        let cfg = StrategyConfig::default();
        Self {
            seed: 0,
            shift: SynthConfig::DEFAULT_SHIFT,
            novel_weight: SynthConfig::DEFAULT_NOVEL_WEIGHT,
            n_target: 1000,
            n_f: cfg.n_f,
            alpha: cfg.alpha,
            k_s: cfg.k_s,
        }
    }
}

impl DemoParams {
    fn strategy(&self, strategy: Strategy) -> StrategyConfig {
        StrategyConfig { strategy, seed: self.seed, n_f: self.n_f, alpha: self.alpha, k_s: self.k_s, ..StrategyConfig::default() }
    }

    fn benchmark(&self) -> Result<(Mat64, Vec<FeatureRecord>), String> {
        let mut synth = SynthConfig::benchmark(self.seed);
        synth.shift[3] = self.shift;
        synth.novel_weight = self.novel_weight;
        synth.n_target = self.n_target;
        synth.n_source = 2000;
        let opts = TrainOptions { seed: self.seed, ..TrainOptions::default() };
        let (det, recs) = build_benchmark(&synth, &opts).map_err(|e| e.to_string())?;
        Ok((det.classifier_weights().clone(), recs))
    }
}

#[derive(Debug, Serialize)]
pub struct StrategyResult {
    pub name: String,
    pub auc: f64,
    pub acc: f64,
    pub eer: f64,
}

#[derive(Debug, Serialize)]
pub struct Point {
    /// Coordinate along the real/fake axis.
    pub x: f64,
    /// Coordinate along the unseen-forgery axis.
    pub y: f64,
    pub label: i8,
    pub base: f64,
    pub adapted: f64,
}

fn parse(params_json: &str) -> Result<DemoParams, String> {
    if params_json.trim().is_empty() {
        return Ok(DemoParams::default());
    }
    serde_json::from_str(params_json).map_err(|e| format!("bad parameters: {e}"))
}

fn metrics_row(name: &str, cfg: &StrategyConfig, w: &Mat64, recs: &[FeatureRecord]) -> Result<StrategyResult, String> {
    let report = run_stream(cfg, w, 1, recs.iter().cloned().map(Ok)).map_err(|e| e.to_string())?;
    let m = report.metrics.ok_or("stream has a single class; metrics undefined")?;
    Ok(StrategyResult { name: name.to_string(), auc: m.auc, acc: m.acc, eer: m.eer })
}

/// AUC/ACC/EER of the four strategies on one benchmark draw.
pub fn compare_strategies_json(params_json: &str) -> Result<String, String> {
    let params = parse(params_json)?;
    let (w, recs) = params.benchmark()?;
    let rows = Strategy::ALL
        .iter()
        .map(|s| metrics_row(s.name(), &params.strategy(*s), &w, &recs))
        .collect::<Result<Vec<_>, _>>()?;
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

/// The four component-ablation rows on one benchmark draw.
pub fn ablation_json(params_json: &str) -> Result<String, String> {
    let params = parse(params_json)?;
    let (w, recs) = params.benchmark()?;
    let rows = ablation_variants(&params.strategy(Strategy::Ours))
        .iter()
        .map(|v| metrics_row(v.name, &v.config, &w, &recs))
        .collect::<Result<Vec<_>, _>>()?;
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

/// Target samples with their base and adapted fake scores, for plotting.
pub fn scatter_json(params_json: &str) -> Result<String, String> {
    let params = parse(params_json)?;
    let (w, recs) = params.benchmark()?;
    let run = |s: Strategy| {
        run_stream(&params.strategy(s), &w, 1, recs.iter().cloned().map(Ok)).map_err(|e| e.to_string())
    };
    let base = run(Strategy::NoAdapt)?;
    let adapted = run(Strategy::Ours)?;
    let points: Vec<Point> = recs
        .iter()
        .zip(base.scores.iter().zip(&adapted.scores))
        .map(|(r, (b, a))| Point { x: r.feature[0], y: r.feature[2], label: r.label, base: *b, adapted: *a })
        .collect();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn compare_strategies(params_json: &str) -> Result<String, JsError> {
    compare_strategies_json(params_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ablation(params_json: &str) -> Result<String, JsError> {
    ablation_json(params_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn scatter(params_json: &str) -> Result<String, JsError> {
    scatter_json(params_json).map_err(|e| JsError::new(&e))
}
