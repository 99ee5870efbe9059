//! Distance computation and the adaptive metric learner that re-weights
//! support samples by subject/object label similarity.

use crate::autodiff::{Graph, ValueId};
use crate::error::{Error, Result};
use crate::prototype::RelationEmbedding;

/// Squared Euclidean distance between a query and a support embedding.
/// Both must share the candidate conditioning.
pub fn pair_distance(
    g: &mut Graph,
    query: &RelationEmbedding,
    support: &RelationEmbedding,
) -> Result<ValueId> {
    if g.len_of(query.id) != g.len_of(support.id) {
        return Err(Error::Contract(format!(
            "embedding dims differ: {} vs {}",
            g.len_of(query.id),
            g.len_of(support.id)
        )));
    }
    if let (Some(a), Some(b)) = (query.condition, support.condition) {
        if a != b {
            return Err(Error::Contract(format!(
                "embeddings conditioned on different candidates: {a:?} vs {b:?}"
            )));
        }
    }
    Ok(g.sq_dist(query.id, support.id))
}

/// Arithmetic mean of per-support distances (the averaging baseline).
pub fn average_metric(g: &mut Graph, distances: &[ValueId]) -> Result<ValueId> {
    if distances.is_empty() {
        return Err(Error::Contract("average over an empty support set".into()));
    }
    Ok(g.mean_scalars(distances))
}

/// Per-support similarity scores and their softmax normalization.
#[derive(Debug, Clone)]
pub struct SupportWeights {
    /// e^s, length-K vector node.
    pub subject_sims: ValueId,
    /// e^o, length-K vector node.
    pub object_sims: ValueId,
    /// Element-wise product, the softmax logits.
    pub products: ValueId,
    /// Softmax weights, sums to one.
    pub normalized: ValueId,
}

/// Cosine-compare the query's subject/object label embeddings against each
/// support's, multiply the two scores per support, and softmax over the
/// supports.
pub fn support_weights(
    g: &mut Graph,
    query: (ValueId, ValueId),
    supports: &[(ValueId, ValueId)],
) -> Result<SupportWeights> {
    if supports.is_empty() {
        return Err(Error::Contract("weights over an empty support set".into()));
    }
    let mut subj = Vec::with_capacity(supports.len());
    let mut obj = Vec::with_capacity(supports.len());
    for (s_emb, o_emb) in supports {
        subj.push(g.cosine(query.0, *s_emb));
        obj.push(g.cosine(query.1, *o_emb));
    }
    let subject_sims = g.concat(&subj);
    let object_sims = g.concat(&obj);
    let products = g.mul_elem(subject_sims, object_sims);
    let normalized = g.softmax(products);
    Ok(SupportWeights {
        subject_sims,
        object_sims,
        products,
        normalized,
    })
}

/// Weighted sum of distances with the metric-learner weights; reduces to
/// `average_metric` when the weights are uniform.
pub fn reweighted_metric(
    g: &mut Graph,
    distances: &[ValueId],
    weights: &SupportWeights,
) -> Result<ValueId> {
    if distances.len() != g.len_of(weights.normalized) {
        return Err(Error::Contract(format!(
            "{} distances but {} weights",
            distances.len(),
            g.len_of(weights.normalized)
        )));
    }
    let stacked = g.concat(distances);
    Ok(g.dot(weights.normalized, stacked))
}

/// Cosine similarity of two label embeddings (plain values, used by the
/// evaluation path and the weights dump).
pub fn label_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Value-level twin of [`support_weights`] for evaluation and dumps.
#[derive(Debug, Clone)]
pub struct SupportWeightValues {
    pub subject_sims: Vec<f64>,
    pub object_sims: Vec<f64>,
    pub normalized: Vec<f64>,
}

pub fn support_weight_values(
    query: (&[f64], &[f64]),
    supports: &[(Vec<f64>, Vec<f64>)],
) -> SupportWeightValues {
    let subject_sims: Vec<f64> = supports
        .iter()
        .map(|(s, _)| label_similarity(query.0, s))
        .collect();
    let object_sims: Vec<f64> = supports
        .iter()
        .map(|(_, o)| label_similarity(query.1, o))
        .collect();
    let products: Vec<f64> = subject_sims
        .iter()
        .zip(&object_sims)
        .map(|(a, b)| a * b)
        .collect();
    let normalized = crate::autodiff::stable_softmax(&products);
    SupportWeightValues {
        subject_sims,
        object_sims,
        normalized,
    }
}
