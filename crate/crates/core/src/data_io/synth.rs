//! Synthetic cross-domain benchmark.
//!
//! Source domain: a "real" Gaussian class and a "fake" class made of two
//! known sub-clusters. Target domain: every source cluster translated by a
//! shift vector, plus a fake sub-cluster that never occurs in the source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, Result};

/// Label of the fake class.
pub const FAKE: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub real_mean: Vec<f64>,
    /// Known forgery types, present in both domains.
    pub fake_means: Vec<Vec<f64>>,
    /// The forgery type only seen in the target domain.
    pub novel_mean: Vec<f64>,
    /// Per-coordinate standard deviation of every cluster.
    pub noise_std: f64,
    /// Translation applied to every target sample.
    pub shift: Vec<f64>,
    /// Probability that a sample is fake (both domains).
    pub fake_fraction: f64,
    /// Probability that a target fake comes from the novel cluster.
    pub novel_weight: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub source: Vec<LabeledSample>,
    pub target: Vec<LabeledSample>,
}

impl SynthConfig {
    pub const DEFAULT_D: usize = 16;
    pub const DEFAULT_N_SOURCE: usize = 4000;
    pub const DEFAULT_N_TARGET: usize = 2000;
    pub const DEFAULT_SHIFT: f64 = 2.75;
    pub const DEFAULT_NOVEL_WEIGHT: f64 = 0.9;
    /// Real and known fakes sit at `-/+` this along axis 0.
    pub const SEPARATION: f64 = 2.25;
    /// The two known forgery types sit at `+/-` this along axis 1.
    pub const FORGERY_SPLIT: f64 = 2.5;
    /// Unseen forgery mean: `(axis 0, axis 2)`.
    pub const NOVEL_MEAN: (f64, f64) = (-0.5, 4.25);

    /// The frozen benchmark configuration.
    pub fn benchmark(seed: u64) -> Self {
        Self::from_knobs(
            Self::DEFAULT_D,
            Self::DEFAULT_N_SOURCE,
            Self::DEFAULT_N_TARGET,
            Self::DEFAULT_SHIFT,
            Self::DEFAULT_NOVEL_WEIGHT,
            seed,
        )
        .expect("benchmark configuration is valid")
    }

    /// Lays the clusters out on the first axes: axis 0 separates real from
    /// fake, axis 1 splits the two known forgery types, axis 2 carries the
    /// novel forgery, and the shift runs along axis 3.
    pub fn from_knobs(
        d: usize,
        n_source: usize,
        n_target: usize,
        shift: f64,
        novel_weight: f64,
        seed: u64,
    ) -> Result<Self> {
        if d < 4 {
            return Err(invalid_config(format!("synthetic layout needs d >= 4, got {d}")));
        }
        let axis = |pairs: &[(usize, f64)]| {
            let mut v = vec![0.0; d];
            for &(i, x) in pairs {
                v[i] = x;
            }
            v
        };
        let cfg = Self {
            d,
            n_source,
            n_target,
            real_mean: axis(&[(0, -Self::SEPARATION)]),
            fake_means: vec![
                axis(&[(0, Self::SEPARATION), (1, Self::FORGERY_SPLIT)]),
                axis(&[(0, Self::SEPARATION), (1, -Self::FORGERY_SPLIT)]),
            ],
            novel_mean: axis(&[(0, Self::NOVEL_MEAN.0), (2, Self::NOVEL_MEAN.1)]),
            noise_std: 1.0,
            shift: axis(&[(3, shift)]),
            fake_fraction: 0.5,
            novel_weight,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid_config("feature dimension must be positive"));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(invalid_config("sample counts must be positive"));
        }
        if self.fake_means.is_empty() {
            return Err(invalid_config("need at least one known fake cluster"));
        }
        let vectors = std::iter::once(&self.real_mean)
            .chain(&self.fake_means)
            .chain([&self.novel_mean, &self.shift]);
        for v in vectors {
            if v.len() != self.d || v.iter().any(|x| !x.is_finite()) {
                return Err(invalid_config("cluster vectors must have length d and finite entries"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(invalid_config("noise_std must be finite and non-negative"));
        }
        for (name, p) in [("fake_fraction", self.fake_fraction), ("novel_weight", self.novel_weight)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid_config(format!("{name} = {p} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, mean: &[f64], shift: Option<&[f64]>, std: f64) -> Vec<f64> {
    mean.iter()
        .enumerate()
        .map(|(i, m)| {
            let z: f64 = rng.sample(StandardNormal);
            m + shift.map_or(0.0, |s| s[i]) + std * z
        })
        .collect()
}

fn domain(cfg: &SynthConfig, stream: u64, n: usize, target: bool) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let shift = target.then_some(cfg.shift.as_slice());
    (0..n)
        .map(|_| {
            let fake = rng.random_bool(cfg.fake_fraction);
            let u: f64 = rng.random();
            let k: usize = rng.random_range(0..cfg.fake_means.len());
            let mean = if !fake {
                &cfg.real_mean
            } else if target && u < cfg.novel_weight {
                &cfg.novel_mean
            } else {
                &cfg.fake_means[k]
            };
            LabeledSample { x: draw(&mut rng, mean, shift, cfg.noise_std), label: if fake { FAKE } else { 0 } }
        })
        .collect()
}

/// Draws both domains. Source and target use separate generator streams,
/// so each is reproducible on its own given the seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    Ok(SynthData { source: domain(cfg, 0, cfg.n_source, false), target: domain(cfg, 1, cfg.n_target, true) })
}
