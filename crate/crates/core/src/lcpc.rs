//! Learnable class-prototype classifier.
//!
//! An ensemble of affine transform layers maps both the sample feature and
//! the class prototypes into a smaller space. Each layer predicts a softmax
//! over the cosine similarities between the revised feature and the revised
//! prototypes; the ensemble prediction is the mean of the layer predictions.
//!
//! Parameters live in one flat buffer so the optimizer and the
//! finite-difference checker can treat them as a single vector. Layer `r`
//! occupies `[r * stride, (r + 1) * stride)` with `stride = d_t * d + d_t`:
//! the row-major `d_t x d` weight followed by the `d_t` bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::nfc;
use crate::numerics::{dot, norm, soft_ce_unchecked, softmax, softmax_into, Mat64, ProbDist, EPS};

/// One affine map `d -> d_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformLayer {
    pub weight: Mat64,
    pub bias: Vec<f64>,
}

impl TransformLayer {
    pub fn identity(d: usize) -> Self {
        Self { weight: Mat64::identity(d), bias: vec![0.0; d] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformEnsemble {
    d: usize,
    d_t: usize,
    n_layers: usize,
    params: Vec<f64>,
}

/// Default revised dimension: half the input, at least one.
pub fn default_revised_dim(d: usize) -> usize {
    (d / 2).max(1)
}

impl TransformEnsemble {
    /// Independent uniform `[-1/sqrt(d), 1/sqrt(d)]` weights per layer, zero
    /// bias. Layer `r` draws from stream `r` of the seeded generator.
    pub fn new(d: usize, d_t: Option<usize>, n_layers: usize, seed: u64) -> Result<Self> {
        let d_t = d_t.unwrap_or_else(|| default_revised_dim(d));
        if d == 0 || d_t == 0 {
            return Err(invalid_config(format!("transform dims must be positive (d = {d}, d_t = {d_t})")));
        }
        if n_layers == 0 {
            return Err(invalid_config("the ensemble needs at least one transform layer"));
        }
        let bound = 1.0 / (d as f64).sqrt();
        let stride = d_t * d + d_t;
        let mut params = Vec::with_capacity(stride * n_layers);
        for r in 0..n_layers {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            params.extend((0..d_t * d).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, d_t));
        }
        Ok(Self { d, d_t, n_layers, params })
    }

    pub fn from_layers(layers: Vec<TransformLayer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| invalid_config("no transform layers"))?;
        let (d_t, d) = (first.weight.rows(), first.weight.cols());
        let mut params = Vec::with_capacity(layers.len() * (d_t * d + d_t));
        for (r, layer) in layers.iter().enumerate() {
            if layer.weight.rows() != d_t || layer.weight.cols() != d || layer.bias.len() != d_t {
                return Err(invalid_config(format!("layer {r} shape differs from layer 0")));
            }
            params.extend_from_slice(layer.weight.values());
            params.extend_from_slice(&layer.bias);
        }
        Ok(Self { d, d_t, n_layers: layers.len(), params })
    }

    /// A single identity layer: the revised space is the raw feature space.
    pub fn identity(d: usize) -> Self {
        Self::from_layers(vec![TransformLayer::identity(d)]).expect("identity layer is well formed")
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn revised_dim(&self) -> usize {
        self.d_t
    }

    pub fn num_layers(&self) -> usize {
        self.n_layers
    }

    fn stride(&self) -> usize {
        self.d_t * self.d + self.d_t
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layer(&self, r: usize) -> TransformLayer {
        TransformLayer {
            weight: Mat64::new(self.d_t, self.d, self.weight(r).to_vec()).expect("layer shape"),
            bias: self.bias(r).to_vec(),
        }
    }

    fn weight(&self, r: usize) -> &[f64] {
        let start = r * self.stride();
        &self.params[start..start + self.d_t * self.d]
    }

    fn bias(&self, r: usize) -> &[f64] {
        let start = r * self.stride() + self.d_t * self.d;
        &self.params[start..start + self.d_t]
    }

    fn apply(&self, r: usize, x: &[f64], out: &mut [f64]) {
        let w = self.weight(r);
        for ((o, row), b) in out.iter_mut().zip(w.chunks_exact(self.d)).zip(self.bias(r)) {
            *o = dot(row, x) + b;
        }
    }

    /// Transforms the prototypes through every layer.
    pub fn prepare(&self, prototypes: &[Vec<f64>]) -> Result<PreparedPrototypes> {
        if prototypes.len() < 2 {
            return Err(invalid_arg(format!("need at least 2 prototypes, got {}", prototypes.len())));
        }
        if let Some(k) = prototypes.iter().position(|p| p.len() != self.d) {
            return Err(invalid_arg(format!(
                "prototype {k} has dimension {}, expected {}",
                prototypes[k].len(),
                self.d
            )));
        }
        let layers = (0..self.n_layers)
            .map(|r| {
                prototypes
                    .iter()
                    .map(|c| {
                        let mut v = vec![0.0; self.d_t];
                        self.apply(r, c, &mut v);
                        let n = norm(&v);
                        Revised { v, norm: n }
                    })
                    .collect()
            })
            .collect();
        Ok(PreparedPrototypes { raw: prototypes.to_vec(), layers })
    }

    pub fn predict(&self, feature: &[f64], prototypes: &[Vec<f64>]) -> Result<EnsemblePrediction> {
        self.prepare(prototypes)?.predict(self, feature)
    }
}

#[derive(Debug, Clone)]
struct Revised {
    v: Vec<f64>,
    norm: f64,
}

/// Prototypes already pushed through a specific ensemble. Only valid for
/// the parameters it was prepared with.
#[derive(Debug, Clone)]
pub struct PreparedPrototypes {
    raw: Vec<Vec<f64>>,
    layers: Vec<Vec<Revised>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub mean: ProbDist,
    pub per_layer: Vec<ProbDist>,
}

/// Forward values of one layer for one sample, kept for backprop.
struct LayerForward {
    u: Vec<f64>,
    u_norm: f64,
    /// Unclamped cosines.
    cos: Vec<f64>,
    q: Vec<f64>,
}

impl PreparedPrototypes {
    pub fn num_classes(&self) -> usize {
        self.raw.len()
    }

    fn forward_layer(&self, ens: &TransformEnsemble, r: usize, feature: &[f64]) -> LayerForward {
        let mut u = vec![0.0; ens.d_t];
        ens.apply(r, feature, &mut u);
        let u_norm = norm(&u);
        let cos: Vec<f64> = self.layers[r]
            .iter()
            .map(|c| dot(&u, &c.v) / (u_norm.max(EPS) * c.norm.max(EPS)))
            .collect();
        let clamped: Vec<f64> = cos.iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        let mut q = vec![0.0; cos.len()];
        softmax_into(&clamped, &mut q);
        LayerForward { u, u_norm, cos, q }
    }

    pub fn predict(&self, ens: &TransformEnsemble, feature: &[f64]) -> Result<EnsemblePrediction> {
        if feature.len() != ens.d {
            return Err(invalid_arg(format!("feature has dimension {}, expected {}", feature.len(), ens.d)));
        }
        if self.layers.len() != ens.n_layers {
            return Err(invalid_arg("prototypes were prepared for a different ensemble"));
        }
        Ok(self.predict_unchecked(ens, feature))
    }

    fn predict_unchecked(&self, ens: &TransformEnsemble, feature: &[f64]) -> EnsemblePrediction {
        let c = self.num_classes();
        let mut mean = vec![0.0; c];
        let mut per_layer = Vec::with_capacity(ens.n_layers);
        for r in 0..ens.n_layers {
            let fwd = self.forward_layer(ens, r, feature);
            for (m, q) in mean.iter_mut().zip(&fwd.q) {
                *m += q;
            }
            per_layer.push(ProbDist::from_vec_unchecked(fwd.q));
        }
        let n = ens.n_layers as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        EnsemblePrediction { mean: ProbDist::from_vec_unchecked(mean), per_layer }
    }

    /// Accumulates `dL/dparams` for one prediction node given `upstream = dL/dP`.
    /// Prototype-path contributions go to `proto_grads[r][k]` (gradient with
    /// respect to the revised prototype) and are folded in by the caller.
    fn backprop(
        &self,
        ens: &TransformEnsemble,
        feature: &[f64],
        upstream: &[f64],
        grads: &mut [f64],
        proto_grads: &mut [Vec<Vec<f64>>],
    ) {
        let (d, d_t) = (ens.d, ens.d_t);
        let stride = ens.stride();
        let scale = 1.0 / ens.n_layers as f64;
        for r in 0..ens.n_layers {
            let fwd = self.forward_layer(ens, r, feature);
            // mean over layers, then the softmax Jacobian
            let g_q: Vec<f64> = upstream.iter().map(|g| g * scale).collect();
            let inner = dot(&fwd.q, &g_q);
            let g_s: Vec<f64> = fwd.q.iter().zip(&g_q).map(|(q, g)| q * (g - inner)).collect();

            let u_den = fwd.u_norm.max(EPS);
            let mut du = vec![0.0; d_t];
            for (k, proto) in self.layers[r].iter().enumerate() {
                if g_s[k] == 0.0 {
                    continue;
                }
                let v_den = proto.norm.max(EPS);
                let inv = 1.0 / (u_den * v_den);
                let s = fwd.cos[k];
                let u_term = if fwd.u_norm > EPS { s / (fwd.u_norm * fwd.u_norm) } else { 0.0 };
                let v_term = if proto.norm > EPS { s / (proto.norm * proto.norm) } else { 0.0 };
                let pg = &mut proto_grads[r][k];
                for j in 0..d_t {
                    du[j] += g_s[k] * (proto.v[j] * inv - u_term * fwd.u[j]);
                    pg[j] += g_s[k] * (fwd.u[j] * inv - v_term * proto.v[j]);
                }
            }
            let layer = &mut grads[r * stride..(r + 1) * stride];
            let (gw, gb) = layer.split_at_mut(d_t * d);
            for (j, row) in gw.chunks_exact_mut(d).enumerate() {
                for (g, x) in row.iter_mut().zip(feature) {
                    *g += du[j] * x;
                }
                gb[j] += du[j];
            }
        }
    }

    /// Pushes accumulated revised-prototype gradients through `v_k = W C_k + b`.
    fn fold_prototype_grads(&self, ens: &TransformEnsemble, proto_grads: &[Vec<Vec<f64>>], grads: &mut [f64]) {
        let (d, d_t) = (ens.d, ens.d_t);
        let stride = ens.stride();
        for r in 0..ens.n_layers {
            let layer = &mut grads[r * stride..(r + 1) * stride];
            let (gw, gb) = layer.split_at_mut(d_t * d);
            for (k, c) in self.raw.iter().enumerate() {
                let dv = &proto_grads[r][k];
                for (j, row) in gw.chunks_exact_mut(d).enumerate() {
                    for (g, x) in row.iter_mut().zip(c) {
                        *g += dv[j] * x;
                    }
                    gb[j] += dv[j];
                }
            }
        }
    }
}

/// Confidence-filtered self-training loss: the mean soft cross-entropy
/// `CE(softmax(L_i), P_i)` over samples whose base confidence
/// `max softmax(L_i)` exceeds `conf`. Returns `(0, 0)` when none pass.
pub fn lcpc_loss(base_logits: &[Vec<f64>], preds: &[ProbDist], conf: f64) -> Result<(f64, usize)> {
    if base_logits.len() != preds.len() {
        return Err(invalid_arg(format!(
            "{} logit vectors but {} predictions",
            base_logits.len(),
            preds.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0;
    for (l, p) in base_logits.iter().zip(preds) {
        let t = softmax(l)?;
        if t.len() != p.len() {
            return Err(invalid_arg("class count mismatch between logits and prediction"));
        }
        if t.max_prob() > conf {
            total += soft_ce_unchecked(t.probs(), p.probs());
            count += 1;
        }
    }
    Ok(if count == 0 { (0.0, 0) } else { (total / count as f64, count) })
}

/// Inputs of one self-training step.
#[derive(Debug, Clone, Copy)]
pub struct SelfTrainingBatch<'a> {
    pub features: &'a [Vec<f64>],
    pub base_logits: &'a [Vec<f64>],
    /// Features of each sample's nearest bank entries. Their predictions are
    /// recomputed with the current parameters.
    pub neighbor_features: &'a [Vec<Vec<f64>>],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub conf: f64,
    pub alpha: f64,
    /// Include the neighbor-consistency term.
    pub use_nfc: bool,
    /// Let gradients flow through the neighbor predictions as well.
    pub grad_through_neighbors: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub lcpc: f64,
    /// Batch mean of the per-sample neighbor-consistency sums.
    pub nfc: f64,
    pub confident: usize,
}

/// Gradient of the total loss, laid out like [`TransformEnsemble::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct LcpcGradients {
    d: usize,
    d_t: usize,
    flat: Vec<f64>,
}

impl LcpcGradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn weight_grad(&self, r: usize) -> Mat64 {
        let stride = self.d_t * self.d + self.d_t;
        let start = r * stride;
        Mat64::new(self.d_t, self.d, self.flat[start..start + self.d_t * self.d].to_vec()).expect("shape")
    }

    pub fn bias_grad(&self, r: usize) -> &[f64] {
        let stride = self.d_t * self.d + self.d_t;
        let start = r * stride + self.d_t * self.d;
        &self.flat[start..start + self.d_t]
    }

    pub fn max_abs(&self) -> f64 {
        self.flat.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

fn check_batch(ens: &TransformEnsemble, batch: &SelfTrainingBatch<'_>, c: usize) -> Result<()> {
    let b = batch.features.len();
    if b == 0 || batch.base_logits.len() != b || batch.neighbor_features.len() != b {
        return Err(invalid_arg(format!(
            "batch lists must be non-empty and equal length ({} features, {} logits, {} neighbor lists)",
            b,
            batch.base_logits.len(),
            batch.neighbor_features.len()
        )));
    }
    for (i, f) in batch.features.iter().enumerate() {
        if f.len() != ens.d || batch.base_logits[i].len() != c {
            return Err(invalid_arg(format!("sample {i} has inconsistent dimensions")));
        }
        if batch.neighbor_features[i].iter().any(|n| n.len() != ens.d) {
            return Err(invalid_arg(format!("a neighbor of sample {i} has the wrong dimension")));
        }
    }
    Ok(())
}

struct Forward {
    preds: Vec<ProbDist>,
    neighbor_preds: Vec<Vec<ProbDist>>,
    targets: Vec<ProbDist>,
    confident: Vec<bool>,
    loss: LossBreakdown,
}

fn forward(
    ens: &TransformEnsemble,
    protos: &PreparedPrototypes,
    batch: &SelfTrainingBatch<'_>,
    weights: &LossWeights,
) -> Result<Forward> {
    let c = protos.num_classes();
    check_batch(ens, batch, c)?;
    let preds: Vec<ProbDist> = batch.features.iter().map(|f| protos.predict_unchecked(ens, f).mean).collect();
    let neighbor_preds: Vec<Vec<ProbDist>> = if weights.use_nfc {
        batch
            .neighbor_features
            .iter()
            .map(|ns| ns.iter().map(|n| protos.predict_unchecked(ens, n).mean).collect())
            .collect()
    } else {
        vec![Vec::new(); preds.len()]
    };
    let targets = batch.base_logits.iter().map(|l| softmax(l)).collect::<Result<Vec<_>>>()?;
    let confident: Vec<bool> = targets.iter().map(|t| t.max_prob() > weights.conf).collect();
    let (lcpc, count) = lcpc_loss(batch.base_logits, &preds, weights.conf)?;
    let nfc = if weights.use_nfc {
        let mut sum = 0.0;
        for (p, ns) in preds.iter().zip(&neighbor_preds) {
            sum += nfc::consistency_loss(p, ns)?;
        }
        sum / preds.len() as f64
    } else {
        0.0
    };
    let total = lcpc + weights.alpha * nfc;
    if !total.is_finite() {
        return Err(Error::Numerical(format!(
            "self-training loss is not finite (lcpc = {lcpc}, nfc = {nfc}, alpha = {})",
            weights.alpha
        )));
    }
    Ok(Forward {
        preds,
        neighbor_preds,
        targets,
        confident,
        loss: LossBreakdown { total, lcpc, nfc, confident: count },
    })
}

/// Total self-training loss `lcpc + alpha * nfc` for the current parameters.
pub fn total_loss(
    ens: &TransformEnsemble,
    prototypes: &[Vec<f64>],
    batch: &SelfTrainingBatch<'_>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let protos = ens.prepare(prototypes)?;
    Ok(forward(ens, &protos, batch, weights)?.loss)
}

/// Analytic gradient of the total loss with respect to every transform
/// parameter, through both the sample path `W F + b` and the prototype path
/// `W C_k + b`. Prototypes are constants; neighbor predictions are detached
/// unless `grad_through_neighbors` is set.
pub fn lcpc_gradients(
    ens: &TransformEnsemble,
    prototypes: &[Vec<f64>],
    batch: &SelfTrainingBatch<'_>,
    weights: &LossWeights,
) -> Result<(LcpcGradients, LossBreakdown)> {
    let protos = ens.prepare(prototypes)?;
    let fwd = forward(ens, &protos, batch, weights)?;
    let c = protos.num_classes();
    let b = batch.features.len() as f64;
    let n_conf = fwd.loss.confident as f64;
    let mut grads = vec![0.0; ens.params.len()];
    let mut proto_grads = vec![vec![vec![0.0; ens.d_t]; c]; ens.n_layers];

    for (i, feature) in batch.features.iter().enumerate() {
        let p = fwd.preds[i].probs();
        // dL/dP_ik = -w_ik / P_ik, where w collects every target weight on ln P_ik
        let mut w = vec![0.0; c];
        if fwd.confident[i] {
            for (wk, t) in w.iter_mut().zip(fwd.targets[i].probs()) {
                *wk += t / n_conf;
            }
        }
        if weights.use_nfc {
            for np in &fwd.neighbor_preds[i] {
                for (wk, q) in w.iter_mut().zip(np.probs()) {
                    *wk += weights.alpha * q / b;
                }
            }
        }
        let upstream: Vec<f64> = w
            .iter()
            .zip(p)
            .map(|(wk, pk)| if *pk > EPS { -wk / pk } else { 0.0 })
            .collect();
        if upstream.iter().any(|g| *g != 0.0) {
            protos.backprop(ens, feature, &upstream, &mut grads, &mut proto_grads);
        }
        if weights.use_nfc && weights.grad_through_neighbors && weights.alpha != 0.0 {
            let up: Vec<f64> = p.iter().map(|pk| -weights.alpha * pk.max(EPS).ln() / b).collect();
            for n in &batch.neighbor_features[i] {
                protos.backprop(ens, n, &up, &mut grads, &mut proto_grads);
            }
        }
    }
    protos.fold_prototype_grads(ens, &proto_grads, &mut grads);

    if let Some(j) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "gradient entry {j} is not finite (layer {}, loss {})",
            j / ens.stride(),
            fwd.loss.total
        )));
    }
    Ok((LcpcGradients { d: ens.d, d_t: ens.d_t, flat: grads }, fwd.loss))
}
