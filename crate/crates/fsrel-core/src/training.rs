//! Losses, the episodic optimization step, and the trainer state.
//!
//! The relation loss is a softmax over negative re-weighted distances with a
//! learnable background pseudo-distance as an extra candidate; the KL loss
//! distills the final output distribution into the prototype-only branch
//! (gradients blocked through the target); the object loss is plain
//! cross-entropy on the object head.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, ValueId};
use crate::config::{LossToggles, MetricMode, OptimizerConfig};
use crate::error::{Error, Result};
use crate::metric::{average_metric, pair_distance, reweighted_metric, support_weights};
use crate::model::{Model, SampleEmbedding};
use crate::prototype::PrototypeBank;
use crate::sgdata::types::{
    CategoryId, Episode, PredicateId, RelationLabel, SceneGraphDataset, TripletCategories,
};

/// Floor applied to probabilities before logarithms in the KL loss.
pub const KL_EPSILON: f64 = 1e-8;

/// Negative log-softmax of the label entry, from per-candidate distances.
pub fn relation_loss_term(g: &mut Graph, distances: &[ValueId], label_idx: usize) -> Result<ValueId> {
    if distances.is_empty() {
        return Err(Error::Contract("query has an empty candidate set".into()));
    }
    if label_idx >= distances.len() {
        return Err(Error::Contract("label outside the candidate set".into()));
    }
    let stacked = g.concat(distances);
    let logits = g.neg(stacked);
    let log_probs = g.log_softmax(logits);
    let picked = g.index(log_probs, label_idx);
    Ok(g.neg(picked))
}

/// KL(target || q) with the target treated as a constant; `log_q` is a
/// log-probability node. Zero entries are floored at [`KL_EPSILON`].
pub fn kl_divergence_term(g: &mut Graph, target: &[f64], log_q: ValueId) -> ValueId {
    let entropy: f64 = target
        .iter()
        .map(|p| p * p.max(KL_EPSILON).ln())
        .sum();
    let t = g.constant(target.to_vec());
    let floored = g.clamp_min(log_q, KL_EPSILON.ln());
    let cross = g.dot(t, floored);
    let neg_cross = g.neg(cross);
    g.add_const(neg_cross, entropy)
}

/// Cross-entropy of a logits node against an integer label.
pub fn cross_entropy_term(g: &mut Graph, logits: ValueId, label: usize) -> Result<ValueId> {
    if label >= g.len_of(logits) {
        return Err(Error::Vocab(format!(
            "label {label} outside the {}-way head",
            g.len_of(logits)
        )));
    }
    let log_probs = g.log_softmax(logits);
    let picked = g.index(log_probs, label);
    Ok(g.neg(picked))
}

/// Per-query candidate distances and output distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScores {
    pub label: RelationLabel,
    /// One distance per candidate, background last.
    pub distances: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// Absent when the prototype branch is disabled.
    pub y_pro: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScores {
    /// Episode categories in ascending id order, then Background.
    pub candidates: Vec<RelationLabel>,
    pub queries: Vec<QueryScores>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub l_rel: f64,
    pub l_kl: f64,
    pub l_obj: f64,
    pub l_total: f64,
    pub grad_norm: f64,
    pub group_norms: BTreeMap<String, f64>,
}

/// Everything the forward pass of one episode produces.
struct EpisodeForward {
    graph: Graph,
    scores: EpisodeScores,
    l_rel: ValueId,
    l_kl: ValueId,
    l_obj: ValueId,
    l_total: ValueId,
}

fn support_categories(
    dataset: &SceneGraphDataset,
    episode: &Episode,
    predicate: PredicateId,
) -> Vec<TripletCategories> {
    episode.supports[&predicate]
        .iter()
        .map(|r| dataset.triplet_categories(r.image_idx, r.triplet_idx))
        .collect()
}

fn run_episode(
    model: &Model,
    dataset: &SceneGraphDataset,
    episode: &Episode,
    toggles: &LossToggles,
    kl_targets: Option<&[Vec<f64>]>,
) -> Result<EpisodeForward> {
    if episode.categories.is_empty() || episode.queries.is_empty() {
        return Err(Error::Contract("episode has no categories or queries".into()));
    }
    let mut g = Graph::new();
    let categories = episode.categories.clone();

    // Per-category banks (skipped entirely without the prototype branch).
    let mut banks: BTreeMap<PredicateId, Option<PrototypeBank>> = BTreeMap::new();
    for &r in &categories {
        let bank = if model.cfg.prototype_enabled {
            let cats = support_categories(dataset, episode, r);
            Some(model.build_bank(&mut g, r, &cats)?)
        } else {
            None
        };
        banks.insert(r, bank);
    }

    // Support embeddings per category, conditioned on their own bank.
    let mut support_embeds: BTreeMap<PredicateId, Vec<SampleEmbedding>> = BTreeMap::new();
    let mut support_labels: BTreeMap<PredicateId, Vec<(CategoryId, CategoryId)>> = BTreeMap::new();
    for &r in &categories {
        let mut embeds = Vec::new();
        let mut labels = Vec::new();
        for sref in &episode.supports[&r] {
            let img = &dataset.images[sref.image_idx];
            let rel = &img.relations[sref.triplet_idx];
            let enc = model.pair_encoding(&mut g, img, rel.subject_id, rel.object_id)?;
            embeds.push(model.embed_with_bank(&mut g, &enc, banks[&r].as_ref())?);
            let cats = dataset.triplet_categories(sref.image_idx, sref.triplet_idx);
            labels.push((cats.subject, cats.object));
        }
        support_embeds.insert(r, embeds);
        support_labels.insert(r, labels);
    }

    // Label embeddings for the metric learner, one per category per step.
    let mut label_embeds: BTreeMap<CategoryId, ValueId> = BTreeMap::new();
    if model.cfg.metric_mode == MetricMode::Reweight {
        let mut needed: Vec<CategoryId> = Vec::new();
        for labels in support_labels.values() {
            for (s, o) in labels {
                needed.push(*s);
                needed.push(*o);
            }
        }
        for q in &episode.queries {
            let img = &dataset.images[q.image_idx];
            needed.push(img.object(q.subject_id).expect("validated").category);
            needed.push(img.object(q.object_id).expect("validated").category);
        }
        needed.sort();
        needed.dedup();
        for c in needed {
            let id = model.label_embedding(&mut g, c)?;
            label_embeds.insert(c, id);
        }
    }

    let bg = model.bg_distance(&mut g);
    let mut candidates: Vec<RelationLabel> = categories
        .iter()
        .map(|r| RelationLabel::Predicate(*r))
        .collect();
    candidates.push(RelationLabel::Background);

    let mut rel_terms = Vec::with_capacity(episode.queries.len());
    let mut kl_terms = Vec::with_capacity(episode.queries.len());
    let mut query_scores = Vec::with_capacity(episode.queries.len());

    for (qi, q) in episode.queries.iter().enumerate() {
        let img = &dataset.images[q.image_idx];
        let enc = model.pair_encoding(&mut g, img, q.subject_id, q.object_id)?;
        let q_subj = img.object(q.subject_id).expect("validated").category;
        let q_obj = img.object(q.object_id).expect("validated").category;

        // Without the prototype branch the embedding is candidate-free.
        let shared_embed = if model.cfg.prototype_enabled {
            None
        } else {
            Some(model.embed_with_bank(&mut g, &enc, None)?)
        };

        let mut dists: Vec<ValueId> = Vec::with_capacity(candidates.len());
        let mut proto_dists: Vec<ValueId> = Vec::with_capacity(candidates.len());
        for &r in &categories {
            let embedded = match shared_embed {
                Some(e) => e,
                None => model.embed_with_bank(&mut g, &enc, banks[&r].as_ref())?,
            };
            let sup = &support_embeds[&r];

            let mut d_full = Vec::with_capacity(sup.len());
            let mut d_proto = Vec::with_capacity(sup.len());
            for s in sup {
                d_full.push(pair_distance(&mut g, &embedded.full, &s.full)?);
                if let (Some(qp), Some(sp)) = (&embedded.proto_proj, &s.proto_proj) {
                    d_proto.push(pair_distance(&mut g, qp, sp)?);
                }
            }

            match model.cfg.metric_mode {
                MetricMode::Average => {
                    dists.push(average_metric(&mut g, &d_full)?);
                    if !d_proto.is_empty() {
                        proto_dists.push(average_metric(&mut g, &d_proto)?);
                    }
                }
                MetricMode::Reweight => {
                    let sup_ids: Vec<(ValueId, ValueId)> = support_labels[&r]
                        .iter()
                        .map(|(s, o)| (label_embeds[s], label_embeds[o]))
                        .collect();
                    let w = support_weights(
                        &mut g,
                        (label_embeds[&q_subj], label_embeds[&q_obj]),
                        &sup_ids,
                    )?;
                    dists.push(reweighted_metric(&mut g, &d_full, &w)?);
                    if !d_proto.is_empty() {
                        proto_dists.push(reweighted_metric(&mut g, &d_proto, &w)?);
                    }
                }
            }
        }
        dists.push(bg);
        let label_idx = candidates
            .iter()
            .position(|c| *c == q.label)
            .ok_or_else(|| Error::Contract("query label outside episode candidates".into()))?;

        let stacked = g.concat(&dists);
        let logits = g.neg(stacked);
        let log_y = g.log_softmax(logits);
        let picked = g.index(log_y, label_idx);
        rel_terms.push(g.neg(picked));

        let y_hat: Vec<f64> = g.value(log_y).iter().map(|l| l.exp()).collect();
        let dist_vals: Vec<f64> = g.value(stacked).to_vec();

        let y_pro = if proto_dists.len() == categories.len() {
            proto_dists.push(bg);
            let pstacked = g.concat(&proto_dists);
            let plogits = g.neg(pstacked);
            let log_y_pro = g.log_softmax(plogits);
            let y_pro_vals: Vec<f64> = g.value(log_y_pro).iter().map(|l| l.exp()).collect();
            let target: Vec<f64> = match kl_targets {
                Some(t) => t
                    .get(qi)
                    .ok_or_else(|| Error::Contract("missing pinned KL target".into()))?
                    .clone(),
                None => y_hat.clone(),
            };
            if target.len() != candidates.len() {
                return Err(Error::Contract("KL target arity mismatch".into()));
            }
            kl_terms.push(kl_divergence_term(&mut g, &target, log_y_pro));
            Some(y_pro_vals)
        } else {
            None
        };

        query_scores.push(QueryScores {
            label: q.label,
            distances: dist_vals,
            y_hat,
            y_pro,
        });
    }

    // Object classification over every object of the episode's images.
    let mut episode_images: Vec<usize> = episode
        .queries
        .iter()
        .map(|q| q.image_idx)
        .chain(episode.supports.values().flatten().map(|r| r.image_idx))
        .collect();
    episode_images.sort_unstable();
    episode_images.dedup();
    let mut obj_terms = Vec::new();
    if toggles.object {
        for &image_idx in &episode_images {
            let img = &dataset.images[image_idx];
            for obj in &img.objects {
                let logits = model.object_logits(&mut g, img, obj.id)?;
                obj_terms.push(cross_entropy_term(&mut g, logits, obj.category.0 as usize)?);
            }
        }
    }

    let zero = g.constant(vec![0.0]);
    let l_rel = if toggles.relation {
        g.mean_scalars(&rel_terms)
    } else {
        zero
    };
    let l_kl = if toggles.kl && !kl_terms.is_empty() {
        g.mean_scalars(&kl_terms)
    } else {
        zero
    };
    let l_obj = if toggles.object && !obj_terms.is_empty() {
        g.mean_scalars(&obj_terms)
    } else {
        zero
    };
    let partial = g.add(l_rel, l_kl);
    let l_total = g.add(partial, l_obj);

    Ok(EpisodeForward {
        scores: EpisodeScores {
            candidates,
            queries: query_scores,
        },
        graph: g,
        l_rel,
        l_kl,
        l_obj,
        l_total,
    })
}

/// Adam with per-parameter first/second moment state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: OptimizerConfig,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, params: &mut crate::params::ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as f64;
        let names: Vec<String> = params.trainable_names().map(|s| s.to_string()).collect();
        for name in names {
            let Some(grad) = grads.get(&name) else {
                continue;
            };
            let grad = grad.to_vec();
            let values = params.values_mut(&name).expect("trainable name exists");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; values.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; values.len()]);
            let b1 = self.cfg.beta1;
            let b2 = self.cfg.beta2;
            let bias1 = 1.0 - b1.powf(t);
            let bias2 = 1.0 - b2.powf(t);
            for i in 0..values.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                values[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }
}

/// Parameter-group prefixes reported in the loss log.
const GROUPS: &[&str] = &[
    "table", "prompts", "enc_vis", "enc_ctx", "enc_txt", "gen_s", "gen_o", "map_s", "map_o",
    "att_s", "att_o", "agg", "proj_pro", "obj_head", "bg_dist",
];

/// Model + optimizer + episode RNG. One training step takes exclusive
/// access; scoring helpers are read-only.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: Adam,
    pub toggles: LossToggles,
    pub episode_rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(
        model: Model,
        optimizer: OptimizerConfig,
        toggles: LossToggles,
        train_seed: u64,
    ) -> Self {
        let mut episode_rng = ChaCha8Rng::seed_from_u64(train_seed);
        // Stream 1: episode sampling. Stream 0 seeded the parameters.
        episode_rng.set_stream(1);
        Trainer {
            model,
            optimizer: Adam::new(optimizer),
            toggles,
            episode_rng,
            step: 0,
        }
    }

    /// Loss values without an update. `kl_targets` pins the (detached) KL
    /// target distributions; the finite-difference harness uses this to
    /// perturb parameters under the same stop-gradient semantics as the
    /// analytic step.
    pub fn loss_values(
        &self,
        dataset: &SceneGraphDataset,
        episode: &Episode,
        kl_targets: Option<&[Vec<f64>]>,
    ) -> Result<(f64, f64, f64, f64)> {
        let fwd = run_episode(&self.model, dataset, episode, &self.toggles, kl_targets)?;
        Ok((
            fwd.graph.value(fwd.l_rel)[0],
            fwd.graph.value(fwd.l_kl)[0],
            fwd.graph.value(fwd.l_obj)[0],
            fwd.graph.value(fwd.l_total)[0],
        ))
    }

    /// Analytic gradients of the total loss (no update applied).
    pub fn loss_gradients(
        &self,
        dataset: &SceneGraphDataset,
        episode: &Episode,
        kl_targets: Option<&[Vec<f64>]>,
    ) -> Result<(f64, Gradients)> {
        let fwd = run_episode(&self.model, dataset, episode, &self.toggles, kl_targets)?;
        let total = fwd.graph.value(fwd.l_total)[0];
        Ok((total, fwd.graph.backward(fwd.l_total)))
    }

    /// The y-hat distributions of one episode, for pinning KL targets.
    pub fn capture_kl_targets(
        &self,
        dataset: &SceneGraphDataset,
        episode: &Episode,
    ) -> Result<Vec<Vec<f64>>> {
        let scores = self.episode_scores(dataset, episode)?;
        Ok(scores.queries.into_iter().map(|q| q.y_hat).collect())
    }

    /// Forward scoring of an episode without touching parameters.
    pub fn episode_scores(
        &self,
        dataset: &SceneGraphDataset,
        episode: &Episode,
    ) -> Result<EpisodeScores> {
        let fwd = run_episode(&self.model, dataset, episode, &self.toggles, None)?;
        Ok(fwd.scores)
    }

    /// One optimization step: forward, backward, Adam update.
    pub fn train_step(
        &mut self,
        dataset: &SceneGraphDataset,
        episode: &Episode,
    ) -> Result<LossReport> {
        let fwd = run_episode(&self.model, dataset, episode, &self.toggles, None)?;
        let l_rel = fwd.graph.value(fwd.l_rel)[0];
        let l_kl = fwd.graph.value(fwd.l_kl)[0];
        let l_obj = fwd.graph.value(fwd.l_obj)[0];
        let l_total = fwd.graph.value(fwd.l_total)[0];
        if !l_total.is_finite() {
            return Err(Error::NonFinite {
                context: format!("training step {}", self.step),
                episode_dump: serde_json::to_string_pretty(episode).unwrap_or_default(),
            });
        }
        let grads = fwd.graph.backward(fwd.l_total);
        self.optimizer.apply(&mut self.model.params, &grads);
        self.step += 1;

        let mut group_norms = BTreeMap::new();
        for prefix in GROUPS {
            group_norms.insert(prefix.to_string(), grads.group_norm(prefix));
        }
        Ok(LossReport {
            step: self.step,
            l_rel,
            l_kl,
            l_obj,
            l_total,
            grad_norm: grads.global_norm(),
            group_norms,
        })
    }
}
