//! Episodic batch sampling for training.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgdata::types::*;

/// Episode sampling knobs. Defaults: 4 categories per batch, 1-5 supports,
/// 2-8 queries, one foreground to two background queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub categories_per_batch: usize,
    pub support_range: (usize, usize),
    pub query_range: (usize, usize),
    pub bg_ratio: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            categories_per_batch: 4,
            support_range: (1, 5),
            query_range: (2, 8),
            bg_ratio: 2.0,
        }
    }
}

const MAX_CATEGORY_RETRIES: usize = 64;

/// Sample one training episode from the base split: pick categories, split
/// their positives into disjoint support/query sets, then add background
/// pairs from the query images at `bg_ratio` backgrounds per foreground.
pub fn sample_episode(
    dataset: &SceneGraphDataset,
    split: &SplitSpec,
    cfg: &EpisodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    if cfg.categories_per_batch == 0 {
        return Err(Error::Config("categories_per_batch must be positive".into()));
    }
    let mut eligible: Vec<PredicateId> = split
        .base_predicates
        .iter()
        .copied()
        .filter(|p| dataset.triplets_of(*p).len() >= 2)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(
            "no base predicate has at least 2 positive samples".to_string(),
        ));
    }

    // Categories with < 2 positives were filtered above; resampling only has
    // to cope with the eligible pool being smaller than the batch size.
    let mut categories: Vec<PredicateId> = Vec::new();
    let mut retries = 0;
    while categories.len() < cfg.categories_per_batch {
        eligible.shuffle(rng);
        for p in &eligible {
            if categories.len() < cfg.categories_per_batch && !categories.contains(p) {
                categories.push(*p);
            }
        }
        retries += 1;
        if retries > MAX_CATEGORY_RETRIES {
            break;
        }
        if categories.len() < cfg.categories_per_batch && eligible.len() <= categories.len() {
            break;
        }
    }
    if categories.is_empty() {
        return Err(Error::Sampling("could not sample episode categories".into()));
    }
    categories.sort();

    let mut supports: BTreeMap<PredicateId, Vec<TripletRef>> = BTreeMap::new();
    let mut queries: Vec<QueryRef> = Vec::new();

    for &pred in &categories {
        let mut positives: Vec<TripletRef> = dataset
            .triplets_of(pred)
            .into_iter()
            .map(|(image_idx, triplet_idx)| TripletRef {
                image_idx,
                triplet_idx,
            })
            .collect();
        positives.shuffle(rng);

        let n = positives.len();
        let want_support = rng.gen_range(cfg.support_range.0..=cfg.support_range.1);
        let n_support = want_support.clamp(1, n - 1);
        let want_query = rng.gen_range(cfg.query_range.0..=cfg.query_range.1);
        let n_query = want_query.clamp(1, n - n_support);

        let support_refs: Vec<TripletRef> = positives[..n_support].to_vec();
        for r in positives[n_support..n_support + n_query].iter() {
            let img = &dataset.images[r.image_idx];
            let rel = &img.relations[r.triplet_idx];
            queries.push(QueryRef {
                image_idx: r.image_idx,
                subject_id: rel.subject_id,
                object_id: rel.object_id,
                triplet_idx: Some(r.triplet_idx),
                label: RelationLabel::Predicate(pred),
            });
        }
        let mut sorted = support_refs;
        sorted.sort();
        supports.insert(pred, sorted);
    }

    // Background pairs come from the images the queries live in.
    let mut query_images: Vec<usize> = queries.iter().map(|q| q.image_idx).collect();
    query_images.sort_unstable();
    query_images.dedup();

    let mut candidates: Vec<(usize, u32, u32)> = Vec::new();
    for &image_idx in &query_images {
        let img = &dataset.images[image_idx];
        for (s, o) in img.ordered_pairs() {
            if !img.has_relation(s, o) {
                candidates.push((image_idx, s, o));
            }
        }
    }
    candidates.shuffle(rng);
    let n_bg = ((queries.len() as f64) * cfg.bg_ratio).floor() as usize;
    for (image_idx, s, o) in candidates.into_iter().take(n_bg) {
        queries.push(QueryRef {
            image_idx,
            subject_id: s,
            object_id: o,
            triplet_idx: None,
            label: RelationLabel::Background,
        });
    }

    Ok(Episode {
        categories,
        supports,
        queries,
    })
}
