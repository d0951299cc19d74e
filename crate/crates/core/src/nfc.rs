//! Nearest-feature calibration: a sample's prototype prediction is averaged
//! with the prototype predictions of its nearest memory entries, and a
//! consistency loss pulls the sample prediction toward its neighbors'.

use crate::error::{invalid_arg, Result};
use crate::numerics::{soft_ce_unchecked, ProbDist};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedPrediction {
    pub raw: ProbDist,
    pub calibrated: ProbDist,
    pub neighbor_count: usize,
}

impl CalibratedPrediction {
    /// A prediction that is its own calibration (no neighbors).
    pub fn uncalibrated(p: ProbDist) -> Self {
        Self { calibrated: p.clone(), raw: p, neighbor_count: 0 }
    }
}

fn check_classes(p: &ProbDist, neighbors: &[ProbDist]) -> Result<()> {
    match neighbors.iter().position(|n| n.len() != p.len()) {
        Some(i) => Err(invalid_arg(format!(
            "neighbor {i} has {} classes, sample has {}",
            neighbors[i].len(),
            p.len()
        ))),
        None => Ok(()),
    }
}

/// `(p + Σ_n neighbors[n]) / (N + 1)`.
pub fn calibrate(p: &ProbDist, neighbor_preds: &[ProbDist]) -> Result<CalibratedPrediction> {
    check_classes(p, neighbor_preds)?;
    let mut sum = p.probs().to_vec();
    for n in neighbor_preds {
        for (s, q) in sum.iter_mut().zip(n.probs()) {
            *s += q;
        }
    }
    let denom = (neighbor_preds.len() + 1) as f64;
    sum.iter_mut().for_each(|s| *s /= denom);
    Ok(CalibratedPrediction {
        raw: p.clone(),
        calibrated: ProbDist::from_vec_unchecked(sum),
        neighbor_count: neighbor_preds.len(),
    })
}

/// `Σ_n CE(neighbors[n], p)`: each neighbor prediction is the target.
pub fn consistency_loss(p: &ProbDist, neighbor_preds: &[ProbDist]) -> Result<f64> {
    check_classes(p, neighbor_preds)?;
    Ok(neighbor_preds.iter().map(|n| soft_ce_unchecked(n.probs(), p.probs())).sum())
}
