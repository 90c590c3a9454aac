//! Persona augmentation.
//!
//! Profiles get extra triples sampled from the pool of all extracted
//! personas. A sampled triple whose attribute already appears in the profile
//! is discarded, not replaced. The augmented set is then interleaved with the
//! raw set.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::persona::PersonaTriple;
use crate::profile::{AugmentMarker, TrainingExample};
use crate::rng::{derive_rng, StreamRng};

/// Distinct kept triples, indexed by attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PersonaPool {
    entries: Vec<PersonaTriple>,
    by_attribute: BTreeMap<String, Vec<usize>>,
    seen: HashSet<PersonaTriple>,
}

impl PersonaPool {
    pub fn insert(&mut self, t: PersonaTriple) {
        if self.seen.contains(&t) {
            return;
        }
        self.by_attribute
            .entry(t.attribute().to_string())
            .or_default()
            .push(self.entries.len());
        self.seen.insert(t.clone());
        self.entries.push(t);
    }

    pub fn merge(&mut self, other: &PersonaPool) {
        for t in &other.entries {
            self.insert(t.clone());
        }
    }

    pub fn entries(&self) -> &[PersonaTriple] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_attribute(&self, attribute: &str) -> Vec<&PersonaTriple> {
        self.by_attribute
            .get(attribute)
            .map(|ix| ix.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    fn sample(&self, rng: &mut StreamRng) -> &PersonaTriple {
        &self.entries[rng.gen_range(0..self.entries.len())]
    }
}

impl FromIterator<PersonaTriple> for PersonaPool {
    fn from_iter<I: IntoIterator<Item = PersonaTriple>>(iter: I) -> Self {
        let mut p = PersonaPool::default();
        for t in iter {
            p.insert(t);
        }
        p
    }
}

/// Pool of every distinct profile triple in the dataset.
pub fn build_pool<'a, I>(dataset: I) -> PersonaPool
where
    I: IntoIterator<Item = &'a TrainingExample>,
{
    dataset
        .into_iter()
        .flat_map(|x| x.profile.triples().iter().cloned())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub min_added: usize,
    pub max_added: usize,
    pub seed: u64,
    /// Fraction of augmented records in the merged output.
    pub mix_ratio: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            min_added: 1,
            max_added: 3,
            seed: 0,
            mix_ratio: 0.5,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_added > self.max_added {
            return Err(ConfigError::new("augmentation: min_added exceeds max_added"));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(ConfigError::new("augmentation: mix_ratio must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Appends sampled unrelated personas to the example's profile.
///
/// Draws `k` in `[min_added, max_added]` candidates with replacement; a
/// candidate sharing an attribute with any triple already in the profile is
/// dropped. An empty pool leaves the profile untouched.
pub fn augment_example(
    x: &TrainingExample,
    pool: &PersonaPool,
    cfg: &AugmentationConfig,
    rng: &mut StreamRng,
) -> TrainingExample {
    let mut out = x.clone();
    let mut added = 0;
    if !pool.is_empty() {
        let k = rng.gen_range(cfg.min_added..=cfg.max_added);
        for _ in 0..k {
            let cand = pool.sample(rng);
            if out.profile.has_attribute(cand.attribute()) {
                continue;
            }
            if out.profile.push(cand.clone(), usize::MAX) {
                added += 1;
            }
        }
    }
    out.marker = Some(AugmentMarker {
        augmented: true,
        added_count: added,
    });
    out
}

/// Augments every record with its own `(seed, "augment", index)` stream.
pub fn augment_dataset(dataset: &[TrainingExample], pool: &PersonaPool, cfg: &AugmentationConfig) -> Vec<TrainingExample> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, x)| augment_example(x, pool, cfg, &mut derive_rng(cfg.seed, "augment", i as u64)))
        .collect()
}

/// Interleaves raw and augmented records so that `mix_ratio` of the output
/// is augmented, using as many records as the ratio allows. Each stream
/// keeps its internal order; every input record appears at most once.
pub fn merge_datasets(
    raw: Vec<TrainingExample>,
    augmented: Vec<TrainingExample>,
    cfg: &AugmentationConfig,
) -> Vec<TrainingExample> {
    let r = cfg.mix_ratio;
    let (n_raw, n_aug) = if r <= 0.0 {
        (raw.len(), 0)
    } else if r >= 1.0 {
        (0, augmented.len())
    } else {
        let by_raw = raw.len() as f64 / (1.0 - r);
        let by_aug = augmented.len() as f64 / r;
        let total = by_raw.min(by_aug).floor();
        let n_aug = ((total * r).round() as usize).min(augmented.len());
        let n_raw = ((total as usize).saturating_sub(n_aug)).min(raw.len());
        (n_raw, n_aug)
    };
    let mut slots: Vec<bool> = std::iter::repeat_n(false, n_raw)
        .chain(std::iter::repeat_n(true, n_aug))
        .collect();
    slots.shuffle(&mut derive_rng(cfg.seed, "merge", 0));
    let mut raw_it = raw.into_iter().take(n_raw);
    let mut aug_it = augmented.into_iter().take(n_aug);
    slots
        .into_iter()
        .map(|is_aug| {
            if is_aug {
                aug_it.next().unwrap()
            } else {
                raw_it.next().unwrap()
            }
        })
        .collect()
}
