//! Bounded store of past test evidence `(feature, logits)`.
//!
//! The bank is seeded with one entry per class taken from the rows of the
//! base classifier's weight matrix. Incoming samples are bucketed by their
//! predicted class; each bucket keeps at most `floor(capacity / c)` entries,
//! evicting the highest-entropy surplus.

use std::cmp::Ordering;

use crate::error::{invalid_arg, invalid_config, Result};
use crate::numerics::{argmax, cosine_unchecked, entropy, Mat64};

/// Logit scale applied to the one-hot logits of seed entries.
pub const SEED_LOGIT_SCALE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub id: u64,
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
    /// Cached entropy of `softmax(logits)`.
    pub entropy: f64,
    pub pred_class: usize,
    pub is_seed: bool,
}

/// Result of a nearest-feature query, nearest first.
#[derive(Debug, Clone, Default)]
pub struct NeighborSet<'a> {
    pub entries: Vec<&'a BankEntry>,
    /// `1 - cosine` for each returned entry.
    pub distances: Vec<f64>,
    /// Distance to the farthest returned entry, `None` when empty.
    pub cutoff_distance: Option<f64>,
}

impl NeighborSet<'_> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    /// One bucket per predicted class, each ordered by id.
    buckets: Vec<Vec<BankEntry>>,
    capacity: usize,
    feature_dim: usize,
    next_id: u64,
}

impl MemoryBank {
    /// Seeds the bank with the rows of the `c x d` classifier weight matrix.
    pub fn init_from_classifier(weights: &Mat64, capacity: usize) -> Result<Self> {
        let c = weights.rows();
        if c < 2 {
            return Err(invalid_config(format!("need at least 2 classes, got {c}")));
        }
        if capacity < c {
            return Err(invalid_config(format!(
                "bank capacity {capacity} is smaller than the class count {c}"
            )));
        }
        let mut bank = Self {
            buckets: vec![Vec::new(); c],
            capacity,
            feature_dim: weights.cols(),
            next_id: 0,
        };
        for k in 0..c {
            let mut logits = vec![0.0; c];
            logits[k] = SEED_LOGIT_SCALE;
            bank.push(weights.row(k).to_vec(), logits, true)?;
        }
        Ok(bank)
    }

    fn push(&mut self, feature: Vec<f64>, logits: Vec<f64>, is_seed: bool) -> Result<u64> {
        let entropy = entropy(&logits)?;
        let pred_class = argmax(&logits);
        let id = self.next_id;
        self.next_id += 1;
        self.buckets[pred_class].push(BankEntry { id, feature, logits, entropy, pred_class, is_seed });
        Ok(id)
    }

    /// Appends one entry per record, then enforces capacity. Returns the
    /// assigned ids in arrival order.
    pub fn insert_batch<F, L>(&mut self, records: &[(F, L)]) -> Result<Vec<u64>>
    where
        F: AsRef<[f64]>,
        L: AsRef<[f64]>,
    {
        let c = self.num_classes();
        for (i, (f, l)) in records.iter().enumerate() {
            let (f, l) = (f.as_ref(), l.as_ref());
            if f.len() != self.feature_dim || l.len() != c {
                return Err(invalid_arg(format!(
                    "record {i}: expected feature dim {} and {c} logits, got {} and {}",
                    self.feature_dim,
                    f.len(),
                    l.len()
                )));
            }
            if f.iter().chain(l).any(|v| !v.is_finite()) {
                return Err(invalid_arg(format!("record {i} has non-finite values")));
            }
        }
        let mut ids = Vec::with_capacity(records.len());
        for (f, l) in records {
            ids.push(self.push(f.as_ref().to_vec(), l.as_ref().to_vec(), false)?);
        }
        self.enforce_capacity();
        Ok(ids)
    }

    /// Keeps the `floor(capacity / c)` lowest-entropy entries of every class.
    /// Entropy ties keep the newer entry.
    pub fn enforce_capacity(&mut self) {
        let cap = self.per_class_cap();
        for bucket in &mut self.buckets {
            if bucket.len() <= cap {
                continue;
            }
            bucket.sort_by(|a, b| a.entropy.total_cmp(&b.entropy).then(b.id.cmp(&a.id)));
            bucket.truncate(cap);
            bucket.sort_by_key(|e| e.id);
        }
    }

    pub fn per_class_cap(&self) -> usize {
        (self.capacity / self.num_classes()).max(1)
    }

    /// Mean feature of the entries whose predicted class is `k`.
    pub fn class_prototype(&self, k: usize) -> Result<Vec<f64>> {
        let bucket = self
            .buckets
            .get(k)
            .ok_or_else(|| invalid_arg(format!("class {k} out of range")))?;
        let mut mean = vec![0.0; self.feature_dim];
        for e in bucket {
            for (m, f) in mean.iter_mut().zip(&e.feature) {
                *m += f;
            }
        }
        let n = bucket.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        (0..self.num_classes())
            .map(|k| self.class_prototype(k).expect("class index in range"))
            .collect()
    }

    /// The `n` entries most cosine-similar to `query`, skipping `exclude_id`.
    /// Distance ties go to the smaller id.
    pub fn nearest(&self, query: &[f64], n: usize, exclude_id: Option<u64>) -> Result<NeighborSet<'_>> {
        if query.len() != self.feature_dim {
            return Err(invalid_arg(format!(
                "query has dimension {}, bank stores {}",
                query.len(),
                self.feature_dim
            )));
        }
        if n == 0 {
            return Ok(NeighborSet::default());
        }
        let mut scored: Vec<(f64, &BankEntry)> = self
            .entries()
            .filter(|e| Some(e.id) != exclude_id)
            .map(|e| (1.0 - cosine_unchecked(query, &e.feature), e))
            .collect();
        let order = |a: &(f64, &BankEntry), b: &(f64, &BankEntry)| -> Ordering {
            a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id))
        };
        if scored.len() > n {
            scored.select_nth_unstable_by(n - 1, order);
            scored.truncate(n);
        }
        scored.sort_unstable_by(order);
        let cutoff_distance = scored.last().map(|s| s.0);
        let (distances, entries) = scored.into_iter().unzip();
        Ok(NeighborSet { entries, distances, cutoff_distance })
    }

    /// All entries, bucket by bucket.
    pub fn entries(&self) -> impl Iterator<Item = &BankEntry> {
        self.buckets.iter().flatten()
    }

    pub fn class_entries(&self, k: usize) -> &[BankEntry] {
        &self.buckets[k]
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_classes(&self) -> usize {
        self.buckets.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
}
