//! K-shot evaluation: score every ordered object pair of every image against
//! per-predicate support banks, rank under the graph constraint, and compute
//! mean recall at 20/50/100 for the base and novel splits.
//!
//! Scoring is read-only on the model and parallelizes over images (rayon,
//! behind the `parallel` feature, capped by `FSREL_NUM_WORKERS`); the
//! sequential path is always available and produces identical results.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::json;

use crate::autodiff::{stable_softmax, Graph};
use crate::config::{MetricMode, Task};
use crate::error::{Error, Result};
use crate::metric::support_weight_values;
use crate::model::Model;
use crate::prototype::BankValues;
use crate::sgdata::types::{
    CategoryId, PredicateId, SceneGraphDataset, SplitSpec, SupportIndex, TripletRef,
};

pub const DEFAULT_RANKS: [usize; 3] = [20, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripletPrediction {
    pub image_id: String,
    /// Position in the image's ordered-pair enumeration (ranking tie-break).
    pub pair_index: usize,
    pub subject_id: u32,
    pub subject_label: CategoryId,
    pub object_id: u32,
    pub object_label: CategoryId,
    pub predicate: PredicateId,
    pub score: f64,
}

/// One ground-truth triplet with resolved endpoint labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtTriplet {
    pub subject_id: u32,
    pub object_id: u32,
    pub predicate: PredicateId,
    pub subject_label: CategoryId,
    pub object_label: CategoryId,
}

/// Softmax scores over the evaluated predicates with the background
/// pseudo-distance as an extra candidate that is then dropped.
pub fn scores_from_distances(distances: &[f64], bg_distance: f64) -> Vec<f64> {
    let mut logits: Vec<f64> = distances.iter().map(|d| -d).collect();
    logits.push(-bg_distance);
    let mut probs = stable_softmax(&logits);
    probs.pop();
    probs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// 0 = rayon default pool, 1 = sequential, n = pool of n threads.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { workers: 0 }
    }
}

impl EvalOptions {
    /// Honors `FSREL_NUM_WORKERS`.
    pub fn from_env() -> Self {
        let workers = std::env::var("FSREL_NUM_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(0);
        EvalOptions { workers }
    }
}

struct SupportSample {
    full: Vec<f64>,
    subject: CategoryId,
    object: CategoryId,
}

/// Precomputed banks, support embeddings and label embeddings; immutable
/// for the whole evaluation pass.
pub struct Evaluator<'a> {
    model: &'a Model,
    dataset: &'a SceneGraphDataset,
    task: Task,
    evaluated: Vec<PredicateId>,
    banks: BTreeMap<PredicateId, BankValues>,
    supports: BTreeMap<PredicateId, Vec<SupportSample>>,
    labels: BTreeMap<CategoryId, Vec<f64>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        model: &'a Model,
        dataset: &'a SceneGraphDataset,
        split: &SplitSpec,
        support_index: &SupportIndex,
        task: Task,
    ) -> Result<Self> {
        let evaluated: Vec<PredicateId> = split
            .all_predicates()
            .into_iter()
            .filter(|p| support_index.entries.contains_key(p))
            .collect();
        if evaluated.is_empty() {
            return Err(Error::Protocol(
                "no split predicate has a support bank".into(),
            ));
        }

        let mut banks = BTreeMap::new();
        let mut supports = BTreeMap::new();
        for &r in &evaluated {
            let refs = &support_index.entries[&r];
            let cats: Vec<_> = refs
                .iter()
                .map(|s| dataset.triplet_categories(s.image_idx, s.triplet_idx))
                .collect();
            let bank = if model.cfg.prototype_enabled {
                Some(model.bank_values(r, &cats)?)
            } else {
                None
            };

            // Support embeddings follow the same pipeline as queries,
            // attending over their own bank.
            let mut samples = Vec::with_capacity(refs.len());
            for (sref, cat) in refs.iter().zip(&cats) {
                let img = &dataset.images[sref.image_idx];
                let rel = &img.relations[sref.triplet_idx];
                let mut g = Graph::new();
                let injected = bank.as_ref().map(|b| b.inject(&mut g));
                let enc = model.pair_encoding(&mut g, img, rel.subject_id, rel.object_id)?;
                let emb = model.embed_with_bank(&mut g, &enc, injected.as_ref())?;
                samples.push(SupportSample {
                    full: g.value(emb.full.id).to_vec(),
                    subject: cat.subject,
                    object: cat.object,
                });
            }
            if let Some(bank) = bank {
                banks.insert(r, bank);
            }
            supports.insert(r, samples);
        }

        // Label embeddings are cached once per category per pass.
        let mut labels = BTreeMap::new();
        if model.cfg.metric_mode == MetricMode::Reweight {
            for c in 0..dataset.categories.len() as u32 {
                labels.insert(CategoryId(c), model.label_embedding_values(CategoryId(c))?);
            }
        }

        Ok(Evaluator {
            model,
            dataset,
            task,
            evaluated,
            banks,
            supports,
            labels,
        })
    }

    pub fn evaluated_predicates(&self) -> &[PredicateId] {
        &self.evaluated
    }

    fn aggregated_distance(
        &self,
        query_embed: &[f64],
        query_labels: (CategoryId, CategoryId),
        predicate: PredicateId,
    ) -> f64 {
        let samples = &self.supports[&predicate];
        let dists: Vec<f64> = samples
            .iter()
            .map(|s| {
                query_embed
                    .iter()
                    .zip(&s.full)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        match self.model.cfg.metric_mode {
            MetricMode::Average => dists.iter().sum::<f64>() / dists.len() as f64,
            MetricMode::Reweight => {
                let pairs: Vec<(Vec<f64>, Vec<f64>)> = samples
                    .iter()
                    .map(|s| (self.labels[&s.subject].clone(), self.labels[&s.object].clone()))
                    .collect();
                let w = support_weight_values(
                    (&self.labels[&query_labels.0], &self.labels[&query_labels.1]),
                    &pairs,
                );
                w.normalized
                    .iter()
                    .zip(&dists)
                    .map(|(wi, di)| wi * di)
                    .sum()
            }
        }
    }

    /// Score every ordered pair of one image against every evaluated
    /// predicate; requires a bank for each scored predicate.
    pub fn score_image(&self, image_idx: usize) -> Result<Vec<TripletPrediction>> {
        let image = &self.dataset.images[image_idx];
        if self.model.cfg.prototype_enabled {
            for r in &self.evaluated {
                if !self.banks.contains_key(r) {
                    return Err(Error::Protocol(format!(
                        "no bank for predicate {:?}",
                        self.dataset.predicate_name(*r)
                    )));
                }
            }
        }

        // Object labels: ground truth in PredCls, head argmax in SGCls.
        let predicted: BTreeMap<u32, CategoryId> = match self.task {
            Task::Predcls => image.objects.iter().map(|o| (o.id, o.category)).collect(),
            Task::Sgcls => self
                .model
                .predict_object_labels(image)?
                .into_iter()
                .collect(),
        };

        let mut g = Graph::new();
        let injected: BTreeMap<PredicateId, crate::prototype::PrototypeBank> = self
            .banks
            .iter()
            .map(|(r, b)| (*r, b.inject(&mut g)))
            .collect();

        let bg = self.model.bg_distance_value();
        let mut out = Vec::new();
        for (pair_index, (s_id, o_id)) in image.ordered_pairs().into_iter().enumerate() {
            let enc = self.model.pair_encoding(&mut g, image, s_id, o_id)?;
            let q_labels = (predicted[&s_id], predicted[&o_id]);

            let shared = if self.model.cfg.prototype_enabled {
                None
            } else {
                let e = self.model.embed_with_bank(&mut g, &enc, None)?;
                Some(g.value(e.full.id).to_vec())
            };

            let mut dists = Vec::with_capacity(self.evaluated.len());
            for &r in &self.evaluated {
                let embed = match &shared {
                    Some(v) => v.clone(),
                    None => {
                        let e = self
                            .model
                            .embed_with_bank(&mut g, &enc, Some(&injected[&r]))?;
                        g.value(e.full.id).to_vec()
                    }
                };
                dists.push(self.aggregated_distance(&embed, q_labels, r));
            }
            let scores = scores_from_distances(&dists, bg);
            for (r, score) in self.evaluated.iter().zip(scores) {
                out.push(TripletPrediction {
                    image_id: image.id.clone(),
                    pair_index,
                    subject_id: s_id,
                    subject_label: q_labels.0,
                    object_id: o_id,
                    object_label: q_labels.1,
                    predicate: *r,
                    score,
                });
            }
        }
        Ok(out)
    }

    /// Score every image; parallel over images when enabled.
    pub fn score_all(&self, options: &EvalOptions) -> Result<Vec<Vec<TripletPrediction>>> {
        let n = self.dataset.images.len();
        map_images(n, options.workers, |i| self.score_image(i))
    }
}

#[cfg(feature = "parallel")]
fn map_images<F>(n: usize, workers: usize, f: F) -> Result<Vec<Vec<TripletPrediction>>>
where
    F: Fn(usize) -> Result<Vec<TripletPrediction>> + Sync + Send,
{
    use rayon::prelude::*;
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let build = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
    };
    if workers == 0 {
        (0..n).into_par_iter().map(&f).collect()
    } else {
        let pool = build(workers)?;
        pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }
}

#[cfg(not(feature = "parallel"))]
fn map_images<F>(n: usize, _workers: usize, f: F) -> Result<Vec<Vec<TripletPrediction>>>
where
    F: Fn(usize) -> Result<Vec<TripletPrediction>> + Sync,
{
    (0..n).map(f).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredicateRecall {
    pub recalls: BTreeMap<usize, f64>,
    pub gt_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecall {
    /// rank -> mean recall; `None` marks an empty split (N/A, not zero).
    pub mean_recall: BTreeMap<usize, Option<f64>>,
    pub per_predicate: BTreeMap<PredicateId, PredicateRecall>,
    pub categories_evaluated: usize,
}

/// Rank predictions per image (graph constraint first: each ordered pair
/// keeps only its top-scoring predicate), match ground truth on pair
/// identity plus subject/object/predicate labels, and average per-category
/// recalls over the given categories.
pub fn mean_recall(
    predictions: &[Vec<TripletPrediction>],
    ground_truth: &[Vec<GtTriplet>],
    ranks: &[usize],
    categories: &[PredicateId],
) -> SplitRecall {
    assert_eq!(predictions.len(), ground_truth.len());
    let mut totals: BTreeMap<PredicateId, usize> = BTreeMap::new();
    let mut matched: BTreeMap<(PredicateId, usize), usize> = BTreeMap::new();

    for gt_list in ground_truth {
        for gt in gt_list {
            if categories.contains(&gt.predicate) {
                *totals.entry(gt.predicate).or_insert(0) += 1;
            }
        }
    }

    for (preds, gt_list) in predictions.iter().zip(ground_truth) {
        // Graph constraint: one predicate per ordered pair.
        let mut best: BTreeMap<(u32, u32), &TripletPrediction> = BTreeMap::new();
        for p in preds {
            let key = (p.subject_id, p.object_id);
            match best.get(&key) {
                Some(cur)
                    if cur.score > p.score
                        || (cur.score == p.score && cur.predicate <= p.predicate) => {}
                _ => {
                    best.insert(key, p);
                }
            }
        }
        let mut ranked: Vec<&TripletPrediction> = best.into_values().collect();
        ranked.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.predicate.cmp(&b.predicate))
                .then(a.pair_index.cmp(&b.pair_index))
        });

        for &k in ranks {
            let top = &ranked[..k.min(ranked.len())];
            for gt in gt_list {
                if !categories.contains(&gt.predicate) {
                    continue;
                }
                let hit = top.iter().any(|p| {
                    p.subject_id == gt.subject_id
                        && p.object_id == gt.object_id
                        && p.predicate == gt.predicate
                        && p.subject_label == gt.subject_label
                        && p.object_label == gt.object_label
                });
                if hit {
                    *matched.entry((gt.predicate, k)).or_insert(0) += 1;
                }
            }
        }
    }

    let mut per_predicate = BTreeMap::new();
    for (&pred, &total) in &totals {
        let mut recalls = BTreeMap::new();
        for &k in ranks {
            let m = matched.get(&(pred, k)).copied().unwrap_or(0);
            recalls.insert(k, m as f64 / total as f64);
        }
        per_predicate.insert(
            pred,
            PredicateRecall {
                recalls,
                gt_count: total,
            },
        );
    }

    let mut mr = BTreeMap::new();
    for &k in ranks {
        if per_predicate.is_empty() {
            mr.insert(k, None);
        } else {
            let sum: f64 = per_predicate.values().map(|p| p.recalls[&k]).sum();
            mr.insert(k, Some(sum / per_predicate.len() as f64));
        }
    }
    SplitRecall {
        mean_recall: mr,
        categories_evaluated: per_predicate.len(),
        per_predicate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub shots: usize,
    pub graph_constraint: bool,
    /// Scoring convention recorded in the report header.
    pub scoring: String,
    pub ranks: Vec<usize>,
    pub base: SplitRecall,
    pub novel: SplitRecall,
    pub skipped_predicates: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self, dataset: &SceneGraphDataset) -> serde_json::Value {
        let split_json = |s: &SplitRecall| {
            let mut obj = serde_json::Map::new();
            for (k, v) in &s.mean_recall {
                obj.insert(format!("mR@{k}"), json!(v));
            }
            obj.insert("categories_evaluated".into(), json!(s.categories_evaluated));
            serde_json::Value::Object(obj)
        };
        let mut per_pred = serde_json::Map::new();
        for split in [&self.base, &self.novel] {
            for (pred, rec) in &split.per_predicate {
                let mut obj = serde_json::Map::new();
                for (k, v) in &rec.recalls {
                    obj.insert(format!("recall@{k}"), json!(v));
                }
                obj.insert("gt".into(), json!(rec.gt_count));
                per_pred.insert(
                    dataset.predicate_name(*pred).to_string(),
                    serde_json::Value::Object(obj),
                );
            }
        }
        json!({
            "task": match self.task { Task::Predcls => "predcls", Task::Sgcls => "sgcls" },
            "K": self.shots,
            "graph_constraint": self.graph_constraint,
            "scoring": self.scoring,
            "base": split_json(&self.base),
            "novel": split_json(&self.novel),
            "per_predicate": serde_json::Value::Object(per_pred),
            "skipped_predicates": self.skipped_predicates,
        })
    }
}

/// Ground truth per image for the evaluated predicates, with support
/// triplets excluded.
pub fn ground_truth_for_eval(
    dataset: &SceneGraphDataset,
    support_index: &SupportIndex,
) -> Vec<Vec<GtTriplet>> {
    dataset
        .images
        .iter()
        .enumerate()
        .map(|(image_idx, img)| {
            img.relations
                .iter()
                .enumerate()
                .filter(|(triplet_idx, _)| {
                    !support_index.is_support(TripletRef {
                        image_idx,
                        triplet_idx: *triplet_idx,
                    })
                })
                .map(|(_, rel)| GtTriplet {
                    subject_id: rel.subject_id,
                    object_id: rel.object_id,
                    predicate: rel.predicate,
                    subject_label: img.object(rel.subject_id).expect("validated").category,
                    object_label: img.object(rel.object_id).expect("validated").category,
                })
                .collect()
        })
        .collect()
}

/// Full protocol: score all images, then mean recall on the base and novel
/// category sets separately.
pub fn evaluate(
    model: &Model,
    dataset: &SceneGraphDataset,
    split: &SplitSpec,
    support_index: &SupportIndex,
    task: Task,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let evaluator = Evaluator::new(model, dataset, split, support_index, task)?;
    let predictions = evaluator.score_all(options)?;
    let gt = ground_truth_for_eval(dataset, support_index);

    let base_cats: Vec<PredicateId> = evaluator
        .evaluated
        .iter()
        .copied()
        .filter(|p| split.base_predicates.contains(p))
        .collect();
    let novel_cats: Vec<PredicateId> = evaluator
        .evaluated
        .iter()
        .copied()
        .filter(|p| split.novel_predicates.contains(p))
        .collect();

    let base = mean_recall(&predictions, &gt, &DEFAULT_RANKS, &base_cats);
    let novel = mean_recall(&predictions, &gt, &DEFAULT_RANKS, &novel_cats);

    let mut skipped: Vec<String> = split
        .all_predicates()
        .into_iter()
        .filter(|p| !support_index.entries.contains_key(p))
        .map(|p| dataset.predicate_name(p).to_string())
        .collect();
    skipped.sort();

    Ok(EvalReport {
        task,
        shots: support_index.shots,
        graph_constraint: true,
        scoring: "joint_softmax_over_evaluated_predicates_plus_background".to_string(),
        ranks: DEFAULT_RANKS.to_vec(),
        base,
        novel,
        skipped_predicates: skipped,
    })
}

/// One line of the Figure-5-style weights dump.
#[derive(Debug, Clone)]
pub struct WeightsDumpRecord {
    pub image_id: String,
    pub subject_id: u32,
    pub object_id: u32,
    pub subject_label: String,
    pub object_label: String,
    pub predicate: String,
    pub entries: Vec<(usize, f64, f64, f64)>,
}

impl WeightsDumpRecord {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "query": {
                "image": self.image_id,
                "subject": self.subject_id,
                "object": self.object_id,
                "subject_label": self.subject_label,
                "object_label": self.object_label,
            },
            "predicate": self.predicate,
            "weights": self.entries.iter().map(|(k, e_s, e_o, w)| json!({
                "support": k, "e_s": e_s, "e_o": e_o, "w": w,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Metric-learner weights of one query against one predicate's supports.
#[allow(clippy::too_many_arguments)]
pub fn metric_weights_for_query(
    model: &Model,
    dataset: &SceneGraphDataset,
    support_index: &SupportIndex,
    image_idx: usize,
    subject_id: u32,
    object_id: u32,
    predicate: PredicateId,
    task: Task,
) -> Result<WeightsDumpRecord> {
    let image = &dataset.images[image_idx];
    let refs = support_index
        .entries
        .get(&predicate)
        .ok_or_else(|| Error::Protocol(format!(
            "no supports for predicate {:?}",
            dataset.predicate_name(predicate)
        )))?;

    let q_labels = match task {
        Task::Predcls => {
            let s = image
                .object(subject_id)
                .ok_or_else(|| Error::Integrity(format!("subject {subject_id} not in image")))?;
            let o = image
                .object(object_id)
                .ok_or_else(|| Error::Integrity(format!("object {object_id} not in image")))?;
            (s.category, o.category)
        }
        Task::Sgcls => {
            let predicted: BTreeMap<u32, CategoryId> =
                model.predict_object_labels(image)?.into_iter().collect();
            (
                *predicted
                    .get(&subject_id)
                    .ok_or_else(|| Error::Integrity("subject not in image".into()))?,
                *predicted
                    .get(&object_id)
                    .ok_or_else(|| Error::Integrity("object not in image".into()))?,
            )
        }
    };

    let support_cats: Vec<_> = refs
        .iter()
        .map(|s| dataset.triplet_categories(s.image_idx, s.triplet_idx))
        .collect();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = support_cats
        .iter()
        .map(|c| {
            Ok((
                model.label_embedding_values(c.subject)?,
                model.label_embedding_values(c.object)?,
            ))
        })
        .collect::<Result<_>>()?;
    let q_s = model.label_embedding_values(q_labels.0)?;
    let q_o = model.label_embedding_values(q_labels.1)?;
    let w = support_weight_values((&q_s, &q_o), &pairs);

    Ok(WeightsDumpRecord {
        image_id: image.id.clone(),
        subject_id,
        object_id,
        subject_label: dataset.category_name(q_labels.0).to_string(),
        object_label: dataset.category_name(q_labels.1).to_string(),
        predicate: dataset.predicate_name(predicate).to_string(),
        entries: (0..pairs.len())
            .map(|k| {
                (
                    k,
                    w.subject_sims[k],
                    w.object_sims[k],
                    w.normalized[k],
                )
            })
            .collect(),
    })
}
