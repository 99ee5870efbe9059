//! Synthetic polysemous-world generator.
//!
//! Every object category owns a Gaussian appearance centroid. A predicate
//! with M modes links M disjoint (subject pool, object pool) pairs, so its
//! realizations fall into visually separated groups; the ground-truth mode
//! of every triplet is kept in side metadata for diagnostics only.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sgdata::types::*;

/// Subject/object category pools of one predicate mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePools {
    pub subjects: Vec<u32>,
    pub objects: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_categories: usize,
    pub n_predicates: usize,
    /// Modes per predicate unless overridden below. Must be >= 1.
    pub modes_per_predicate: usize,
    /// Per-predicate mode-count overrides (predicate index -> M).
    #[serde(default)]
    pub mode_overrides: BTreeMap<usize, usize>,
    /// Full pool override; when present the automatic pool assignment is
    /// skipped and `modes_per_predicate`/`mode_overrides` are ignored.
    #[serde(default)]
    pub explicit_modes: Option<Vec<Vec<ModePools>>>,
    /// Categories per automatically generated pool.
    pub pool_size: usize,
    /// Distance scale between category centroids (delta).
    pub mode_separation: f64,
    /// Per-coordinate appearance noise (sigma).
    pub appearance_noise: f64,
    pub d_app: usize,
    pub n_images: usize,
    pub triplets_per_image: usize,
    /// Additional relation-free objects per image (background pairs).
    pub extra_objects: usize,
    /// Predicate sampling weights; defaults to a gently decreasing profile
    /// so annotation frequency ranks predicates by ascending index.
    #[serde(default)]
    pub predicate_weights: Option<Vec<f64>>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_categories: 12,
            n_predicates: 8,
            modes_per_predicate: 1,
            mode_overrides: BTreeMap::new(),
            explicit_modes: None,
            pool_size: 2,
            mode_separation: 4.0,
            appearance_noise: 0.25,
            d_app: 32,
            n_images: 60,
            triplets_per_image: 2,
            extra_objects: 1,
            predicate_weights: None,
        }
    }
}

/// Diagnostics sidecar: mode of every generated triplet plus the pools.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldMetadata {
    /// image id -> mode id per triplet (parallel to the relations list).
    pub modes: BTreeMap<String, Vec<usize>>,
    /// predicate index -> pools per mode.
    pub pools: Vec<Vec<ModePools>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub dataset: SceneGraphDataset,
    pub metadata: WorldMetadata,
}

fn build_pools(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<ModePools>>> {
    if let Some(explicit) = &cfg.explicit_modes {
        if explicit.len() != cfg.n_predicates {
            return Err(Error::Config(format!(
                "explicit_modes has {} predicates, expected {}",
                explicit.len(),
                cfg.n_predicates
            )));
        }
        for (p, modes) in explicit.iter().enumerate() {
            if modes.is_empty() {
                return Err(Error::Config(format!("predicate {p} has no modes")));
            }
            for (m, pool) in modes.iter().enumerate() {
                if pool.subjects.is_empty() || pool.objects.is_empty() {
                    return Err(Error::Config(format!(
                        "predicate {p} mode {m} has an empty pool"
                    )));
                }
                for c in pool.subjects.iter().chain(&pool.objects) {
                    if *c as usize >= cfg.n_categories {
                        return Err(Error::Config(format!(
                            "predicate {p} mode {m} references category {c} out of range"
                        )));
                    }
                }
            }
        }
        return Ok(explicit.clone());
    }

    if cfg.pool_size == 0 {
        return Err(Error::Config("pool_size must be positive".into()));
    }
    let mut pools = Vec::with_capacity(cfg.n_predicates);
    for p in 0..cfg.n_predicates {
        let m = *cfg.mode_overrides.get(&p).unwrap_or(&cfg.modes_per_predicate);
        if m < 1 {
            return Err(Error::Config(format!("predicate {p} has mode count {m} < 1")));
        }
        if m * cfg.pool_size > cfg.n_categories {
            return Err(Error::Config(format!(
                "predicate {p} needs {} categories for {m} disjoint pools, only {} exist",
                m * cfg.pool_size,
                cfg.n_categories
            )));
        }
        // Disjoint pools across the modes of one predicate keep the modes
        // visually separated.
        let mut cats: Vec<u32> = (0..cfg.n_categories as u32).collect();
        cats.shuffle(rng);
        let subject_cats = cats[..m * cfg.pool_size].to_vec();
        cats.shuffle(rng);
        let object_cats = cats[..m * cfg.pool_size].to_vec();
        let modes = (0..m)
            .map(|k| ModePools {
                subjects: subject_cats[k * cfg.pool_size..(k + 1) * cfg.pool_size].to_vec(),
                objects: object_cats[k * cfg.pool_size..(k + 1) * cfg.pool_size].to_vec(),
            })
            .collect();
        pools.push(modes);
    }
    Ok(pools)
}

fn random_bbox(rng: &mut ChaCha8Rng) -> BBox {
    let w = rng.gen_range(0.08..0.4);
    let h = rng.gen_range(0.08..0.4);
    let x1 = rng.gen_range(0.0..(1.0 - w));
    let y1 = rng.gen_range(0.0..(1.0 - h));
    BBox {
        x1,
        y1,
        x2: x1 + w,
        y2: y1 + h,
    }
}

pub fn generate_synthetic_world(cfg: &WorldConfig, seed: u64) -> Result<SyntheticWorld> {
    if cfg.n_categories == 0 || cfg.n_predicates == 0 {
        return Err(Error::Config("world needs categories and predicates".into()));
    }
    if cfg.d_app == 0 {
        return Err(Error::Config("d_app must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let categories: Vec<String> = (0..cfg.n_categories).map(|i| format!("cat{i:03}")).collect();
    let predicates: Vec<String> = (0..cfg.n_predicates).map(|i| format!("pred{i:03}")).collect();

    // Category centroids: random directions scaled by the separation delta.
    let centroids: Vec<Vec<f64>> = (0..cfg.n_categories)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.d_app).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm * cfg.mode_separation).collect()
        })
        .collect();

    let pools = build_pools(cfg, &mut rng)?;

    let weights: Vec<f64> = match &cfg.predicate_weights {
        Some(w) => {
            if w.len() != cfg.n_predicates {
                return Err(Error::Config(format!(
                    "predicate_weights has {} entries, expected {}",
                    w.len(),
                    cfg.n_predicates
                )));
            }
            w.clone()
        }
        None => (0..cfg.n_predicates)
            .map(|p| (2 * cfg.n_predicates - p) as f64)
            .collect(),
    };
    let pred_dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::Config(format!("invalid predicate weights: {e}")))?;

    let mut images = Vec::with_capacity(cfg.n_images);
    let mut modes_meta: BTreeMap<String, Vec<usize>> = BTreeMap::new();

    for i in 0..cfg.n_images {
        let image_id = format!("img{i:05}");
        let mut objects = Vec::new();
        let mut relations = Vec::new();
        let mut image_modes = Vec::new();
        let mut next_id = 0u32;

        let sample_object = |cat: u32, rng: &mut ChaCha8Rng, next_id: &mut u32| {
            let appearance: Vec<f64> = centroids[cat as usize]
                .iter()
                .map(|c| {
                    let noise: f64 = StandardNormal.sample(rng);
                    c + cfg.appearance_noise * noise
                })
                .collect();
            let obj = ObjectInstance {
                id: *next_id,
                category: CategoryId(cat),
                bbox: random_bbox(rng),
                appearance,
            };
            *next_id += 1;
            obj
        };

        for _ in 0..cfg.triplets_per_image {
            let pred = pred_dist.sample(&mut rng);
            let mode = rng.gen_range(0..pools[pred].len());
            let pool = &pools[pred][mode];
            let subj_cat = *pool.subjects.choose(&mut rng).expect("validated nonempty");
            let obj_cat = *pool.objects.choose(&mut rng).expect("validated nonempty");

            let subj = sample_object(subj_cat, &mut rng, &mut next_id);
            let obj = sample_object(obj_cat, &mut rng, &mut next_id);
            relations.push(RelationTriplet {
                subject_id: subj.id,
                predicate: PredicateId(pred as u32),
                object_id: obj.id,
            });
            objects.push(subj);
            objects.push(obj);
            image_modes.push(mode);
        }
        for _ in 0..cfg.extra_objects {
            let cat = rng.gen_range(0..cfg.n_categories as u32);
            let o = sample_object(cat, &mut rng, &mut next_id);
            objects.push(o);
        }

        modes_meta.insert(image_id.clone(), image_modes);
        images.push(SceneGraphImage {
            id: image_id,
            objects,
            relations,
        });
    }

    let dataset = SceneGraphDataset::new(categories, predicates, images)?;
    Ok(SyntheticWorld {
        dataset,
        metadata: WorldMetadata {
            modes: modes_meta,
            pools,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgdata::io::dataset_to_bytes;

    #[test]
    fn same_config_and_seed_give_byte_identical_datasets() {
        let cfg = WorldConfig::default();
        let a = generate_synthetic_world(&cfg, 42).unwrap();
        let b = generate_synthetic_world(&cfg, 42).unwrap();
        assert_eq!(
            dataset_to_bytes(&a.dataset).unwrap(),
            dataset_to_bytes(&b.dataset).unwrap()
        );
    }

    #[test]
    fn serialized_world_reloads_field_for_field() {
        let cfg = WorldConfig {
            n_images: 12,
            ..WorldConfig::default()
        };
        let world = generate_synthetic_world(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        crate::sgdata::io::save_dataset(&world.dataset, &path).unwrap();
        let reloaded = crate::sgdata::io::load_dataset(&path).unwrap();
        assert_eq!(world.dataset, reloaded);
    }

    #[test]
    fn single_mode_world_shares_pool_structure() {
        let cfg = WorldConfig {
            modes_per_predicate: 1,
            appearance_noise: 0.0,
            n_images: 30,
            ..WorldConfig::default()
        };
        let world = generate_synthetic_world(&cfg, 11).unwrap();
        let ds = &world.dataset;
        for (p, modes) in world.metadata.pools.iter().enumerate() {
            assert_eq!(modes.len(), 1);
            let pool = &modes[0];
            for (image_idx, triplet_idx) in ds.triplets_of(PredicateId(p as u32)) {
                let cats = ds.triplet_categories(image_idx, triplet_idx);
                assert!(pool.subjects.contains(&cats.subject.0));
                assert!(pool.objects.contains(&cats.object.0));
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = WorldConfig::default();
        cfg.modes_per_predicate = 0;
        assert!(matches!(
            generate_synthetic_world(&cfg, 0),
            Err(crate::error::Error::Config(_))
        ));

        let mut cfg = WorldConfig::default();
        cfg.explicit_modes = Some(vec![
            vec![ModePools {
                subjects: vec![],
                objects: vec![0],
            }];
            cfg.n_predicates
        ]);
        assert!(matches!(
            generate_synthetic_world(&cfg, 0),
            Err(crate::error::Error::Config(_))
        ));
    }

    /// Plain 2-means with farthest-point init; intentionally independent of
    /// everything in the crate.
    fn two_means(points: &[Vec<f64>]) -> Vec<usize> {
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let mut c0 = points[0].clone();
        let mut c1 = points
            .iter()
            .max_by(|a, b| dist(a, &c0).partial_cmp(&dist(b, &c0)).unwrap())
            .unwrap()
            .clone();
        let mut assign = vec![0usize; points.len()];
        for _ in 0..25 {
            for (i, p) in points.iter().enumerate() {
                assign[i] = if dist(p, &c0) <= dist(p, &c1) { 0 } else { 1 };
            }
            for (centroid, cluster) in [(&mut c0, 0usize), (&mut c1, 1usize)] {
                let members: Vec<&Vec<f64>> = points
                    .iter()
                    .zip(&assign)
                    .filter(|(_, a)| **a == cluster)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                for d in 0..centroid.len() {
                    centroid[d] = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        assign
    }

    #[test]
    fn two_mode_predicates_are_recovered_by_kmeans() {
        let cfg = WorldConfig {
            n_categories: 16,
            n_predicates: 4,
            modes_per_predicate: 2,
            pool_size: 1,
            mode_separation: 8.0,
            appearance_noise: 0.1,
            d_app: 16,
            n_images: 120,
            triplets_per_image: 2,
            extra_objects: 0,
            ..WorldConfig::default()
        };
        let world = generate_synthetic_world(&cfg, 23).unwrap();
        let ds = &world.dataset;

        for p in 0..cfg.n_predicates {
            let mut points = Vec::new();
            let mut labels = Vec::new();
            for (image_idx, triplet_idx) in ds.triplets_of(PredicateId(p as u32)) {
                let img = &ds.images[image_idx];
                let rel = &img.relations[triplet_idx];
                let s = img.object(rel.subject_id).unwrap();
                let o = img.object(rel.object_id).unwrap();
                let mut v = s.appearance.clone();
                v.extend_from_slice(&o.appearance);
                points.push(v);
                labels.push(world.metadata.modes[&img.id][triplet_idx]);
            }
            if points.len() < 10 || labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            let assign = two_means(&points);
            let agree = assign.iter().zip(&labels).filter(|(a, l)| a == l).count();
            let acc = agree.max(points.len() - agree) as f64 / points.len() as f64;
            assert!(acc > 0.95, "predicate {p}: mode recovery accuracy {acc}");
        }
    }

}
