//! Dense vector/matrix helpers and the elementary statistical functions the
//! rest of the engine is built from. Everything is `f64`.

use crate::error::{invalid_arg, Error, Result};

/// Guard used for zero norms and `log(0)`.
pub const EPS: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Mat64 {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid_arg(format!("matrix shape {rows}x{cols} must be positive")));
        }
        if values.len() != rows * cols {
            return Err(invalid_arg(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid_arg(format!("matrix value at flat index {i} is not finite")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(invalid_arg("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(invalid_arg(format!(
                "matvec: matrix has {} columns, vector has length {}",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }
}

/// A probability distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Validates entries in `[0, 1]` summing to one within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid_arg("empty distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(invalid_arg(format!("entries out of [0,1]: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid_arg(format!("distribution sums to {total}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn uniform(c: usize) -> Self {
        Self(vec![1.0 / c as f64; c])
    }

    pub fn one_hot(c: usize, k: usize) -> Self {
        let mut v = vec![0.0; c];
        v[k] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl std::ops::Index<usize> for ProbDist {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<ProbDist> {
    if logits.is_empty() {
        return Err(invalid_arg("softmax of empty vector"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(invalid_arg("softmax input is not finite"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(ProbDist(out))
}

/// Shannon entropy (nats) of `softmax(logits)`.
pub fn entropy(logits: &[f64]) -> Result<f64> {
    let p = softmax(logits)?;
    Ok(entropy_of(&p))
}

/// Shannon entropy of a distribution, with `0 · ln 0 = 0`.
pub fn entropy_of(p: &ProbDist) -> f64 {
    let h: f64 = p.0.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
    h.max(0.0)
}

pub(crate) fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a).max(EPS) * norm(b).max(EPS);
    (dot(a, b) / denom).clamp(-1.0, 1.0)
}

/// Cosine similarity with norms floored at [`EPS`], clamped to `[-1, 1]`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid_arg(format!("cosine_sim: lengths {} and {}", a.len(), b.len())));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn soft_ce_unchecked(target: &[f64], pred: &[f64]) -> f64 {
    -target.iter().zip(pred).map(|(t, p)| t * p.max(EPS).ln()).sum::<f64>()
}

/// `-Σ target_k · ln(max(pred_k, EPS))`.
pub fn soft_cross_entropy(target: &ProbDist, pred: &ProbDist) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(invalid_arg(format!(
            "cross-entropy over {} vs {} classes",
            target.len(),
            pred.len()
        )));
    }
    Ok(soft_ce_unchecked(&target.0, &pred.0))
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid_arg(format!("step h = {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "objective not finite around coordinate {i}: f(+h) = {plus}, f(-h) = {minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap().probs(), &[0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!(close(p[0], 2.0 / 3.0, 1e-15) && close(p[1], 1.0 / 3.0, 1e-15));
        let a = softmax(&[1001.0, 1002.0]).unwrap();
        let b = softmax(&[1.0, 2.0]).unwrap();
        for k in 0..2 {
            assert!(close(a[k], b[k], 1e-15));
        }
        assert!(matches!(softmax(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn entropy_examples() {
        assert!(close(entropy(&[0.0, 0.0]).unwrap(), 2f64.ln(), 1e-15));
        // -p ln p - q ln q with p = 1/(1+e^-20), evaluated at 50 digits.
        let h = entropy(&[10.0, -10.0]).unwrap();
        assert!(close(h, 4.328_422_598_411_845e-8, 1e-15), "{h}");
        assert!(entropy(&[]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert!(close(cosine_sim(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0, 1e-15));
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(close(cosine_sim(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), -1.0, 1e-15));
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine_sim(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let half = ProbDist::uniform(2);
        assert!(close(soft_cross_entropy(&half, &half).unwrap(), 2f64.ln(), 1e-15));
        let hard = ProbDist::one_hot(2, 0);
        assert!(soft_cross_entropy(&hard, &hard).unwrap() <= 1e-11);
        let t = ProbDist::new(vec![0.9, 0.1]).unwrap();
        // -0.9 ln 0.9 - 0.1 ln 0.1
        assert!(close(soft_cross_entropy(&t, &t).unwrap(), 0.325_082_973_391_448_2, 1e-12));
        assert!(soft_cross_entropy(&half, &ProbDist::uniform(3)).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!(close(g[0], 6.0, 1e-6));
        let g = finite_diff_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1e-9));
        assert!(matches!(
            finite_diff_gradient(|x| 1.0 / x[0], &[0.0], 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            finite_diff_gradient(|x| (x[0] - 1.0).ln(), &[1.0], 1e-3),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn matrix_shape_checks() {
        assert!(Mat64::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Mat64::new(1, 1, vec![f64::NAN]).is_err());
        let m = Mat64::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(m.matvec(&[1.0]).is_err());
    }

    fn logits(c: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-30.0f64..30.0, c)
    }

    fn dist(c: usize) -> impl Strategy<Value = ProbDist> {
        prop::collection::vec(-5.0f64..5.0, c).prop_map(|l| softmax(&l).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(l in logits(1..12)) {
            let p = softmax(&l).unwrap();
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.probs().iter().all(|q| (0.0..=1.0).contains(q)));
        }

        #[test]
        fn entropy_is_shift_invariant_and_bounded(l in logits(1..12), shift in -100.0f64..100.0) {
            let h = entropy(&l).unwrap();
            let shifted: Vec<f64> = l.iter().map(|x| x + shift).collect();
            prop_assert!((h - entropy(&shifted).unwrap()).abs() <= 1e-10);
            prop_assert!(h <= (l.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            ab in (1usize..8).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(-10.0f64..10.0, n))),
            lam in 0.01f64..100.0,
            mu in 0.01f64..100.0,
        ) {
            let (a, b) = ab;
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let s = cosine_sim(&a, &b).unwrap();
            prop_assert_eq!(s, cosine_sim(&b, &a).unwrap());
            let sa: Vec<f64> = a.iter().map(|x| x * lam).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * mu).collect();
            prop_assert!((s - cosine_sim(&sa, &sb).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn gibbs_inequality(tp in (2usize..6).prop_flat_map(|c| (dist(c), dist(c)))) {
            let (t, p) = tp;
            let h = entropy_of(&t);
            prop_assert!(soft_cross_entropy(&t, &p).unwrap() >= h - 1e-9);
            prop_assert!((soft_cross_entropy(&t, &t).unwrap() - h).abs() <= 1e-9);
        }
    }
}
