//! Core scene-graph data model: categories, objects, triplets, images.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into the dataset's object-category vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CategoryId(pub u32);

/// Index into the dataset's predicate vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredicateId(pub u32);

/// Query label: one of the episode's predicates or the background class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationLabel {
    Predicate(PredicateId),
    Background,
}

/// Axis-aligned box normalized to [0,1] by image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn validate(&self, record: &str) -> Result<()> {
        let ok = 0.0 <= self.x1
            && self.x1 < self.x2
            && self.x2 <= 1.0
            && 0.0 <= self.y1
            && self.y1 < self.y2
            && self.y2 <= 1.0;
        if !ok {
            return Err(Error::schema(
                record,
                format!(
                    "bbox [{}, {}, {}, {}] must satisfy 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1",
                    self.x1, self.y1, self.x2, self.y2
                ),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

/// A localized object with its category and appearance vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    pub category: CategoryId,
    pub bbox: BBox,
    pub appearance: Vec<f64>,
}

/// Directed relation between two objects of the same image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriplet {
    pub subject_id: u32,
    pub predicate: PredicateId,
    pub object_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphImage {
    pub id: String,
    pub objects: Vec<ObjectInstance>,
    pub relations: Vec<RelationTriplet>,
}

impl SceneGraphImage {
    pub fn object(&self, id: u32) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Ordered pairs of distinct objects, in object-list order. The position
    /// in this enumeration is the pair index used for deterministic ranking.
    pub fn ordered_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs = Vec::new();
        for s in &self.objects {
            for o in &self.objects {
                if s.id != o.id {
                    pairs.push((s.id, o.id));
                }
            }
        }
        pairs
    }

    /// True if some annotated relation (of any predicate) links `s -> o`.
    pub fn has_relation(&self, s: u32, o: u32) -> bool {
        self.relations
            .iter()
            .any(|r| r.subject_id == s && r.object_id == o)
    }
}

/// Immutable corpus: vocabularies plus images. Safe for concurrent readers.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraphDataset {
    pub categories: Vec<String>,
    pub predicates: Vec<String>,
    pub images: Vec<SceneGraphImage>,
    image_index: BTreeMap<String, usize>,
}

impl SceneGraphDataset {
    pub fn new(
        categories: Vec<String>,
        predicates: Vec<String>,
        images: Vec<SceneGraphImage>,
    ) -> Result<Self> {
        let mut image_index = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            if image_index.insert(img.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate image id {}", img.id)));
            }
        }
        let ds = SceneGraphDataset {
            categories,
            predicates,
            images,
            image_index,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let d_app = self.appearance_dim();
        for img in &self.images {
            let record = format!("image {}", img.id);
            let mut ids = BTreeSet::new();
            for obj in &img.objects {
                if !ids.insert(obj.id) {
                    return Err(Error::Integrity(format!(
                        "{record}: duplicate object id {}",
                        obj.id
                    )));
                }
                if (obj.category.0 as usize) >= self.categories.len() {
                    return Err(Error::Vocab(format!(
                        "{record}: object {} has unknown category index {}",
                        obj.id, obj.category.0
                    )));
                }
                obj.bbox
                    .validate(&format!("{record}, object {}", obj.id))?;
                if obj.appearance.len() != d_app {
                    return Err(Error::schema(
                        format!("{record}, object {}", obj.id),
                        format!(
                            "appearance has {} entries, expected {d_app}",
                            obj.appearance.len()
                        ),
                    ));
                }
                if obj.appearance.iter().any(|v| !v.is_finite()) {
                    return Err(Error::schema(
                        format!("{record}, object {}", obj.id),
                        "appearance contains non-finite entries".to_string(),
                    ));
                }
            }
            let mut seen = BTreeSet::new();
            for rel in &img.relations {
                if rel.subject_id == rel.object_id {
                    return Err(Error::Integrity(format!(
                        "{record}: relation has subject == object ({})",
                        rel.subject_id
                    )));
                }
                for end in [rel.subject_id, rel.object_id] {
                    if !ids.contains(&end) {
                        return Err(Error::Integrity(format!(
                            "{record}: relation references missing object id {end}"
                        )));
                    }
                }
                if (rel.predicate.0 as usize) >= self.predicates.len() {
                    return Err(Error::Vocab(format!(
                        "{record}: relation has unknown predicate index {}",
                        rel.predicate.0
                    )));
                }
                if !seen.insert((rel.subject_id, rel.predicate, rel.object_id)) {
                    return Err(Error::Integrity(format!(
                        "{record}: duplicate triplet ({}, {}, {})",
                        rel.subject_id, self.predicates[rel.predicate.0 as usize], rel.object_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Dimension of appearance vectors (0 for an empty dataset).
    pub fn appearance_dim(&self) -> usize {
        self.images
            .iter()
            .flat_map(|i| i.objects.first())
            .map(|o| o.appearance.len())
            .next()
            .unwrap_or(0)
    }

    pub fn image_idx(&self, id: &str) -> Option<usize> {
        self.image_index.get(id).copied()
    }

    pub fn category_id(&self, name: &str) -> Option<CategoryId> {
        self.categories
            .iter()
            .position(|c| c == name)
            .map(|i| CategoryId(i as u32))
    }

    pub fn predicate_id(&self, name: &str) -> Option<PredicateId> {
        self.predicates
            .iter()
            .position(|p| p == name)
            .map(|i| PredicateId(i as u32))
    }

    pub fn predicate_name(&self, id: PredicateId) -> &str {
        &self.predicates[id.0 as usize]
    }

    pub fn category_name(&self, id: CategoryId) -> &str {
        &self.categories[id.0 as usize]
    }

    /// Number of annotated triplets per predicate.
    pub fn predicate_counts(&self) -> BTreeMap<PredicateId, usize> {
        let mut counts = BTreeMap::new();
        for img in &self.images {
            for rel in &img.relations {
                *counts.entry(rel.predicate).or_insert(0) += 1;
            }
        }
        counts
    }

    /// All (image index, triplet index) occurrences of a predicate.
    pub fn triplets_of(&self, predicate: PredicateId) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, img) in self.images.iter().enumerate() {
            for (t, rel) in img.relations.iter().enumerate() {
                if rel.predicate == predicate {
                    out.push((i, t));
                }
            }
        }
        out
    }

    /// Subject/object categories of a triplet, resolved through the image.
    pub fn triplet_categories(&self, image_idx: usize, triplet_idx: usize) -> TripletCategories {
        let img = &self.images[image_idx];
        let rel = &img.relations[triplet_idx];
        TripletCategories {
            subject: img.object(rel.subject_id).expect("validated").category,
            predicate: rel.predicate,
            object: img.object(rel.object_id).expect("validated").category,
        }
    }
}

/// A triplet with its endpoint object categories resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletCategories {
    pub subject: CategoryId,
    pub predicate: PredicateId,
    pub object: CategoryId,
}

/// Base/novel predicate partition; object categories are shared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub base_predicates: BTreeSet<PredicateId>,
    pub novel_predicates: BTreeSet<PredicateId>,
    pub object_categories: BTreeSet<CategoryId>,
}

impl SplitSpec {
    pub fn contains(&self, p: PredicateId) -> bool {
        self.base_predicates.contains(&p) || self.novel_predicates.contains(&p)
    }

    pub fn all_predicates(&self) -> Vec<PredicateId> {
        let mut v: Vec<_> = self
            .base_predicates
            .iter()
            .chain(self.novel_predicates.iter())
            .copied()
            .collect();
        v.sort();
        v
    }
}

/// Reference to one annotated triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletRef {
    pub image_idx: usize,
    pub triplet_idx: usize,
}

/// K-shot support assignment per predicate, sampled from distinct images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportIndex {
    pub shots: usize,
    pub entries: BTreeMap<PredicateId, Vec<TripletRef>>,
    /// Predicates that could not provide K supports, with the reason.
    pub skipped: Vec<(PredicateId, String)>,
}

impl SupportIndex {
    /// True if the triplet was consumed as a support sample (and must be
    /// excluded from evaluation ground truth).
    pub fn is_support(&self, r: TripletRef) -> bool {
        self.entries.values().any(|v| v.contains(&r))
    }
}

/// One query pair inside an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRef {
    pub image_idx: usize,
    pub subject_id: u32,
    pub object_id: u32,
    /// Index of the annotated triplet for foreground queries.
    pub triplet_idx: Option<usize>,
    pub label: RelationLabel,
}

/// One training batch: sampled categories, their supports, and queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub categories: Vec<PredicateId>,
    pub supports: BTreeMap<PredicateId, Vec<TripletRef>>,
    pub queries: Vec<QueryRef>,
}

impl Episode {
    pub fn foreground_count(&self) -> usize {
        self.queries
            .iter()
            .filter(|q| q.label != RelationLabel::Background)
            .count()
    }

    pub fn background_count(&self) -> usize {
        self.queries.len() - self.foreground_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(id: u32, cat: u32) -> ObjectInstance {
        ObjectInstance {
            id,
            category: CategoryId(cat),
            bbox: BBox {
                x1: 0.1,
                y1: 0.1,
                x2: 0.5,
                y2: 0.5,
            },
            appearance: vec![0.0; 4],
        }
    }

    #[test]
    fn rejects_duplicate_object_ids() {
        let img = SceneGraphImage {
            id: "i".into(),
            objects: vec![obj(1, 0), obj(1, 0)],
            relations: vec![],
        };
        let err = SceneGraphDataset::new(vec!["a".into()], vec!["p".into()], vec![img]);
        assert!(matches!(err, Err(Error::Integrity(_))));
    }

    #[test]
    fn rejects_self_relation() {
        let img = SceneGraphImage {
            id: "i".into(),
            objects: vec![obj(1, 0), obj(2, 0)],
            relations: vec![RelationTriplet {
                subject_id: 1,
                predicate: PredicateId(0),
                object_id: 1,
            }],
        };
        let err = SceneGraphDataset::new(vec!["a".into()], vec!["p".into()], vec![img]);
        assert!(matches!(err, Err(Error::Integrity(_))));
    }

    #[test]
    fn rejects_invalid_bbox() {
        let mut o = obj(1, 0);
        o.bbox.x2 = o.bbox.x1;
        let img = SceneGraphImage {
            id: "i".into(),
            objects: vec![o],
            relations: vec![],
        };
        let err = SceneGraphDataset::new(vec!["a".into()], vec!["p".into()], vec![img]);
        assert!(matches!(err, Err(Error::Schema { .. })));
    }

    #[test]
    fn ordered_pairs_counts_n_times_n_minus_one() {
        let img = SceneGraphImage {
            id: "i".into(),
            objects: vec![obj(1, 0), obj(2, 0), obj(3, 0)],
            relations: vec![],
        };
        assert_eq!(img.ordered_pairs().len(), 6);
    }
}
