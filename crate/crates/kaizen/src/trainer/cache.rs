//! Dynamic pseudo-label cache: labels generated from older teacher states
//! are replayed with probability `1 - refresh_prob` once the cache is full.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::Result;
use crate::numeric::ParameterVector;
use crate::trainer::pseudo::{generate_pseudo_label, PlSource, PseudoLabel};
use crate::trainer::CacheConfig;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    /// Index into the unsupervised pool.
    pub utterance_index: usize,
    pub label: PseudoLabel,
}

#[derive(Debug, Clone)]
pub struct PlCache {
    capacity: usize,
    refresh_prob: f64,
    entries: Vec<CacheEntry>,
}

impl PlCache {
    pub fn new(config: CacheConfig) -> Self {
        PlCache {
            capacity: config.size,
            refresh_prob: config.refresh_prob,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(config: CacheConfig, entries: Vec<CacheEntry>) -> Self {
        let mut cache = PlCache::new(config);
        cache.entries = entries;
        cache.entries.truncate(cache.capacity);
        cache
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    /// Serves labels for one batch of unsupervised utterance indices.
    ///
    /// Warm-up: while below capacity, fresh labels are generated, served,
    /// and inserted. Once full: with probability `refresh_prob` the batch
    /// gets fresh labels (which also overwrite uniformly random slots);
    /// otherwise uniformly sampled cached pairs are served *instead of* the
    /// incoming batch.
    pub fn step<T: Scalar>(
        &mut self,
        batch: &[usize],
        teacher: &ParameterVector<T>,
        unsupervised: &[Utterance<T>],
        step: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(usize, PseudoLabel)>> {
        if self.entries.len() < self.capacity {
            let served = self.fresh(batch, teacher, unsupervised, step)?;
            for (idx, label) in &served {
                if self.entries.len() < self.capacity {
                    self.entries.push(CacheEntry {
                        utterance_index: *idx,
                        label: label.clone(),
                    });
                }
            }
            return Ok(served);
        }
        if rng.random::<f64>() < self.refresh_prob {
            let served = self.fresh(batch, teacher, unsupervised, step)?;
            for (idx, label) in &served {
                let slot = rng.random_range(0..self.capacity);
                self.entries[slot] = CacheEntry {
                    utterance_index: *idx,
                    label: label.clone(),
                };
            }
            Ok(served)
        } else {
            Ok((0..batch.len())
                .map(|_| {
                    let slot = rng.random_range(0..self.capacity);
                    let entry = &self.entries[slot];
                    let mut label = entry.label.clone();
                    label.source = PlSource::Cache;
                    (entry.utterance_index, label)
                })
                .collect())
        }
    }

    fn fresh<T: Scalar>(
        &self,
        batch: &[usize],
        teacher: &ParameterVector<T>,
        unsupervised: &[Utterance<T>],
        step: u64,
    ) -> Result<Vec<(usize, PseudoLabel)>> {
        batch
            .iter()
            .map(|&i| {
                generate_pseudo_label(teacher, &unsupervised[i], step, PlSource::EmaTeacher)
                    .map(|pl| (i, pl))
            })
            .collect()
    }
}
