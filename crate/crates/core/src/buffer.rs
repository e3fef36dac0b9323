//! Fixed-capacity rehearsal memory with herding or class-balanced random
//! exemplar selection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{config, Result};
use crate::model::ExpandableModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferPolicy {
    #[default]
    Herding,
    ClassBalancedRandom,
}

#[derive(Debug, Clone)]
pub struct RehearsalBuffer {
    pub capacity: usize,
    pub policy: BufferPolicy,
    /// Per class, stored inputs in selection order.
    entries: BTreeMap<usize, Vec<Vec<f64>>>,
    dims: usize,
    rng: ChaCha8Rng,
}

/// Per-class quotas: `capacity / classes` each, remainder to the earliest
/// (lowest-label) classes.
pub fn quotas(capacity: usize, classes: usize) -> Vec<usize> {
    if classes == 0 {
        return Vec::new();
    }
    let base = capacity / classes;
    let extra = capacity % classes;
    (0..classes).map(|i| base + usize::from(i < extra)).collect()
}

/// Greedy herding: repeatedly pick the sample that brings the running
/// exemplar mean closest to the class mean. Ties go to the lowest index.
pub fn herding_select(features: &Tensor, m: usize) -> Vec<usize> {
    let n = features.rows();
    let d = features.cols();
    let m = m.min(n);
    if n == 0 {
        return Vec::new();
    }
    let mut mu = vec![0.0; d];
    for row in features.iter_rows() {
        mu.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    mu.iter_mut().for_each(|a| *a /= n as f64);

    let mut running = vec![0.0; d];
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(m);
    for k in 1..=m {
        let mut best = None;
        let mut best_dist = f64::INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let dist: f64 = features
                .row(i)
                .iter()
                .zip(&running)
                .zip(&mu)
                .map(|((f, s), u)| {
                    let diff = u - (s + f) / k as f64;
                    diff * diff
                })
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = Some(i);
            }
        }
        let i = best.expect("an unselected sample remains");
        taken[i] = true;
        running
            .iter_mut()
            .zip(features.row(i))
            .for_each(|(s, f)| *s += f);
        order.push(i);
    }
    order
}

impl RehearsalBuffer {
    pub fn new(capacity: usize, policy: BufferPolicy, dims: usize, seed: u64) -> Self {
        RehearsalBuffer {
            capacity,
            policy,
            entries: BTreeMap::new(),
            dims,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.entries.get(&class).map(Vec::len).unwrap_or(0)
    }

    pub fn exemplars(&self, class: usize) -> &[Vec<f64>] {
        self.entries.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All stored samples, ordered by class then selection order.
    pub fn as_dataset(&self, num_classes: usize) -> Dataset {
        let mut data = Vec::with_capacity(self.len() * self.dims);
        let mut y = Vec::with_capacity(self.len());
        for (&c, list) in &self.entries {
            for row in list {
                data.extend_from_slice(row);
                y.push(c);
            }
        }
        let num_classes = num_classes.max(self.entries.keys().last().map_or(0, |c| c + 1));
        Dataset {
            x: Tensor::from_vec(y.len(), self.dims, data).expect("consistent rows"),
            y,
            num_classes,
        }
    }

    /// Adds exemplars of the classes in `task` and shrinks old classes to
    /// the new quota (keeping their selection-order prefix).
    pub fn commit(&mut self, task: &Dataset, model: &ExpandableModel) -> Result<()> {
        let mut new_classes: Vec<usize> = task.y.clone();
        new_classes.sort_unstable();
        new_classes.dedup();
        let mut all: Vec<usize> = self.entries.keys().copied().collect();
        all.extend(new_classes.iter().filter(|c| !self.entries.contains_key(c)));
        all.sort_unstable();
        all.dedup();
        if self.capacity < all.len() {
            return config(format!(
                "buffer capacity {} is below the {} classes seen",
                self.capacity,
                all.len()
            ));
        }
        let quota: BTreeMap<usize, usize> = all
            .iter()
            .copied()
            .zip(quotas(self.capacity, all.len()))
            .collect();

        for (c, list) in self.entries.iter_mut() {
            list.truncate(quota[c]);
        }
        for &c in &new_classes {
            let idx = task.indices_of(c);
            let x = task.x.select_rows(&idx);
            let picked = match self.policy {
                BufferPolicy::Herding => herding_select(&model.concat_features(&x)?, quota[&c]),
                BufferPolicy::ClassBalancedRandom => {
                    let mut order: Vec<usize> = (0..idx.len()).collect();
                    order.shuffle(&mut self.rng);
                    order.truncate(quota[&c]);
                    order
                }
            };
            self.entries
                .insert(c, picked.iter().map(|&i| x.row(i).to_vec()).collect());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_memory_quota() {
        assert!(quotas(2000, 20).iter().all(|&q| q == 100));
        assert_eq!(quotas(10, 4), vec![3, 3, 2, 2]);
    }

    #[test]
    fn identical_features_give_zero_distance() {
        let f = Tensor::from_rows(&[[1.0, 2.0]; 5]).unwrap();
        let sel = herding_select(&f, 3);
        assert_eq!(sel.len(), 3);
        let mut s = sel.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 3);
    }
}
