//! Binary detection metrics: AUC, accuracy and equal error rate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(invalid_arg(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid_arg("NaN score"));
    }
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(invalid_arg(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|l| **l == 1).count();
    Ok((pos, labels.len() - pos))
}

fn both_classes(scores: &[f64], labels: &[u8], metric: &str) -> Result<(usize, usize)> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("{metric} needs both classes ({pos} positive, {neg} negative)")));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the rank-sum (Mann-Whitney) statistic with
/// midranks for tied scores.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = both_classes(scores, labels, "AUC")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (doubled) ranks of the positives keeps everything integral.
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, doubled midrank = i + j + 2
        let mid_x2 = (i + j + 2) as u64;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank_sum_x2 += mid_x2 * tied_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * n) as f64)
}

/// Fraction of samples where `score > threshold` agrees with the label.
pub fn acc(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    if scores.is_empty() {
        return Err(invalid_arg("accuracy of an empty set"));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s > threshold) == (**l == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Equal error rate. Thresholds sweep the sorted unique scores plus `+inf`;
/// a sample is called positive when `score >= threshold`. The result is read
/// at the sign change of `FPR - FNR`, interpolating linearly between the two
/// bracketing thresholds.
pub fn eer(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = both_classes(scores, labels, "EER")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk thresholds upward. At the lowest threshold everything is positive.
    let mut fp = neg;
    let mut fn_ = 0usize;
    let rates = |fp: usize, fn_: usize| (fp as f64 / neg as f64, fn_ as f64 / pos as f64);
    let mut prev = rates(fp, fn_);
    let mut i = 0;
    loop {
        let (fpr, fnr) = prev;
        if fpr - fnr <= 0.0 {
            return Ok(fpr);
        }
        if i >= order.len() {
            unreachable!("FPR - FNR reaches -1 at the +inf threshold");
        }
        // raise the threshold past the current unique score
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                fn_ += 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        let next = rates(fp, fn_);
        let (d0, d1) = (fpr - fnr, next.0 - next.1);
        if d1 <= 0.0 {
            if d1 == 0.0 {
                return Ok(next.0);
            }
            let lambda = d0 / (d0 - d1);
            return Ok(fpr + lambda * (next.0 - fpr));
        }
        prev = next;
    }
}

/// Summary metrics for one labeled run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub acc: f64,
    pub eer: f64,
}

impl MetricSummary {
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self> {
        Ok(Self { auc: auc(scores, labels)?, acc: acc(scores, labels, 0.5)?, eer: eer(scores, labels)? })
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    /// O(n^2) pair counting with half credit for ties.
    pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    credit += 1.0;
                } else if si == sj {
                    credit += 0.5;
                }
            }
        }
        credit / pairs
    }

    /// Recounts FPR/FNR from scratch at every candidate threshold and
    /// interpolates at the first sign change of `FPR - FNR`.
    pub fn eer_sweep(scores: &[f64], labels: &[u8]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        thresholds.push(f64::INFINITY);
        let pos = labels.iter().filter(|l| **l == 1).count() as f64;
        let neg = labels.len() as f64 - pos;
        let at = |t: f64| {
            let fp = scores.iter().zip(labels).filter(|(s, l)| **l == 0 && **s >= t).count() as f64;
            let fneg = scores.iter().zip(labels).filter(|(s, l)| **l == 1 && **s < t).count() as f64;
            (fp / neg, fneg / pos)
        };
        let pts: Vec<(f64, f64)> = thresholds.iter().map(|&t| at(t)).collect();
        if pts[0].0 - pts[0].1 <= 0.0 {
            return pts[0].0;
        }
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (da, db) = (a.0 - a.1, b.0 - b.1);
            if da > 0.0 && db <= 0.0 {
                // crossing of the two linear segments
                let lambda = da / (da - db);
                return a.1 + lambda * (b.1 - a.1);
            }
        }
        unreachable!()
    }
}
