//! Dataset, split and support file formats (JSON).
//!
//! Dataset files carry category/predicate vocabularies and per-image objects
//! and relations. Objects may omit the `appearance` field when a top-level
//! `featurizer` block is present; missing vectors are then synthesized
//! deterministically from (category, bbox, image id, seed).

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sgdata::types::*;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObjectFile {
    id: u32,
    category: String,
    bbox: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    appearance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RelationFile {
    subject: u32,
    predicate: String,
    object: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImageFile {
    id: String,
    objects: Vec<ObjectFile>,
    relations: Vec<RelationFile>,
}

/// Spec for synthesizing appearance vectors for objects that lack them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturizerSpec {
    pub d_app: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetFile {
    categories: Vec<String>,
    predicates: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    featurizer: Option<FeaturizerSpec>,
    images: Vec<ImageFile>,
}

/// Deterministic stand-in for CNN features: a hash of (category, bbox,
/// image id, seed) seeds a ChaCha stream of standard normals.
pub fn synthesize_appearance(
    category: &str,
    bbox: &BBox,
    image_id: &str,
    spec: &FeaturizerSpec,
) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(category.as_bytes());
    for v in [bbox.x1, bbox.y1, bbox.x2, bbox.y2] {
        hasher.update(v.to_le_bytes());
    }
    hasher.update(image_id.as_bytes());
    hasher.update(spec.seed.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    (0..spec.d_app)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

fn dataset_from_file(file: DatasetFile) -> Result<SceneGraphDataset> {
    let find_cat = |name: &str, record: &str| {
        file.categories
            .iter()
            .position(|c| c == name)
            .map(|i| CategoryId(i as u32))
            .ok_or_else(|| Error::schema(record, format!("unknown category {name:?}")))
    };
    let find_pred = |name: &str, record: &str| {
        file.predicates
            .iter()
            .position(|p| p == name)
            .map(|i| PredicateId(i as u32))
            .ok_or_else(|| Error::schema(record, format!("unknown predicate {name:?}")))
    };

    let mut images = Vec::with_capacity(file.images.len());
    for img in &file.images {
        let mut objects = Vec::with_capacity(img.objects.len());
        for o in &img.objects {
            let record = format!("image {}, object {}", img.id, o.id);
            let bbox = BBox {
                x1: o.bbox[0],
                y1: o.bbox[1],
                x2: o.bbox[2],
                y2: o.bbox[3],
            };
            let appearance = match (&o.appearance, &file.featurizer) {
                (Some(app), _) => app.clone(),
                (None, Some(spec)) => synthesize_appearance(&o.category, &bbox, &img.id, spec),
                (None, None) => {
                    return Err(Error::schema(
                        record,
                        "object lacks appearance and no featurizer block is present".to_string(),
                    ))
                }
            };
            objects.push(ObjectInstance {
                id: o.id,
                category: find_cat(&o.category, &record)?,
                bbox,
                appearance,
            });
        }
        let mut relations = Vec::with_capacity(img.relations.len());
        for (t, r) in img.relations.iter().enumerate() {
            let record = format!("image {}, relation {t}", img.id);
            relations.push(RelationTriplet {
                subject_id: r.subject,
                predicate: find_pred(&r.predicate, &record)?,
                object_id: r.object,
            });
        }
        images.push(SceneGraphImage {
            id: img.id.clone(),
            objects,
            relations,
        });
    }
    SceneGraphDataset::new(file.categories, file.predicates, images)
}

fn dataset_to_file(ds: &SceneGraphDataset) -> DatasetFile {
    DatasetFile {
        categories: ds.categories.clone(),
        predicates: ds.predicates.clone(),
        featurizer: None,
        images: ds
            .images
            .iter()
            .map(|img| ImageFile {
                id: img.id.clone(),
                objects: img
                    .objects
                    .iter()
                    .map(|o| ObjectFile {
                        id: o.id,
                        category: ds.category_name(o.category).to_string(),
                        bbox: [o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2],
                        appearance: Some(o.appearance.clone()),
                    })
                    .collect(),
                relations: img
                    .relations
                    .iter()
                    .map(|r| RelationFile {
                        subject: r.subject_id,
                        predicate: ds.predicate_name(r.predicate).to_string(),
                        object: r.object_id,
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SceneGraphDataset> {
    let bytes = fs::read(path.as_ref())?;
    let file: DatasetFile = serde_json::from_slice(&bytes)?;
    dataset_from_file(file)
}

pub fn save_dataset(ds: &SceneGraphDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn dataset_to_bytes(ds: &SceneGraphDataset) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(&dataset_to_file(ds))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitFile {
    base: Vec<String>,
    novel: Vec<String>,
}

pub fn save_split(ds: &SceneGraphDataset, split: &SplitSpec, path: impl AsRef<Path>) -> Result<()> {
    let file = SplitFile {
        base: split
            .base_predicates
            .iter()
            .map(|p| ds.predicate_name(*p).to_string())
            .collect(),
        novel: split
            .novel_predicates
            .iter()
            .map(|p| ds.predicate_name(*p).to_string())
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

pub fn load_split(ds: &SceneGraphDataset, path: impl AsRef<Path>) -> Result<SplitSpec> {
    let bytes = fs::read(path.as_ref())?;
    let file: SplitFile = serde_json::from_slice(&bytes)?;
    let resolve = |names: &[String]| -> Result<std::collections::BTreeSet<PredicateId>> {
        names
            .iter()
            .map(|n| {
                ds.predicate_id(n)
                    .ok_or_else(|| Error::Vocab(format!("split references unknown predicate {n:?}")))
            })
            .collect()
    };
    let base = resolve(&file.base)?;
    let novel = resolve(&file.novel)?;
    if !base.is_disjoint(&novel) {
        return Err(Error::Integrity(
            "split file has overlapping base and novel sets".to_string(),
        ));
    }
    Ok(SplitSpec {
        base_predicates: base,
        novel_predicates: novel,
        object_categories: (0..ds.categories.len() as u32).map(CategoryId).collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SupportEntryFile {
    image: String,
    triplet: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SupportFile {
    shots: usize,
    entries: std::collections::BTreeMap<String, Vec<SupportEntryFile>>,
}

pub fn save_support(
    ds: &SceneGraphDataset,
    index: &SupportIndex,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut entries = std::collections::BTreeMap::new();
    for (pred, refs) in &index.entries {
        entries.insert(
            ds.predicate_name(*pred).to_string(),
            refs.iter()
                .map(|r| SupportEntryFile {
                    image: ds.images[r.image_idx].id.clone(),
                    triplet: r.triplet_idx,
                })
                .collect(),
        );
    }
    let file = SupportFile {
        shots: index.shots,
        entries,
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

pub fn load_support(ds: &SceneGraphDataset, path: impl AsRef<Path>) -> Result<SupportIndex> {
    let bytes = fs::read(path.as_ref())?;
    let file: SupportFile = serde_json::from_slice(&bytes)?;
    let mut entries = std::collections::BTreeMap::new();
    for (name, refs) in &file.entries {
        let pred = ds
            .predicate_id(name)
            .ok_or_else(|| Error::Vocab(format!("support references unknown predicate {name:?}")))?;
        let mut out = Vec::with_capacity(refs.len());
        for r in refs {
            let image_idx = ds
                .image_idx(&r.image)
                .ok_or_else(|| Error::Integrity(format!("support references unknown image {}", r.image)))?;
            let img = &ds.images[image_idx];
            if r.triplet >= img.relations.len() {
                return Err(Error::Integrity(format!(
                    "support references missing triplet {} of image {}",
                    r.triplet, r.image
                )));
            }
            if img.relations[r.triplet].predicate != pred {
                return Err(Error::Integrity(format!(
                    "support entry for {name:?} points at a triplet of another predicate"
                )));
            }
            out.push(TripletRef {
                image_idx,
                triplet_idx: r.triplet,
            });
        }
        if out.len() != file.shots {
            return Err(Error::Integrity(format!(
                "support entry for {name:?} has {} shots, expected {}",
                out.len(),
                file.shots
            )));
        }
        entries.insert(pred, out);
    }
    Ok(SupportIndex {
        shots: file.shots,
        entries,
        skipped: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_round_trips() {
        let json = r#"{
            "categories": ["cat", "mat"],
            "predicates": ["on"],
            "images": [{
                "id": "img0",
                "objects": [
                    {"id": 0, "category": "cat", "bbox": [0.1, 0.1, 0.4, 0.4], "appearance": [1.0, 2.0]},
                    {"id": 1, "category": "mat", "bbox": [0.0, 0.5, 0.9, 0.9], "appearance": [3.0, 4.0]}
                ],
                "relations": [{"subject": 0, "predicate": "on", "object": 1}]
            }]
        }"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        fs::write(&path, json).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.images.len(), 1);
        assert_eq!(ds.images[0].objects.len(), 2);
        assert_eq!(ds.images[0].relations.len(), 1);

        let out = dir.path().join("out.json");
        save_dataset(&ds, &out).unwrap();
        let ds2 = load_dataset(&out).unwrap();
        assert_eq!(ds, ds2);
    }

    #[test]
    fn dangling_object_reference_is_integrity_error() {
        let json = r#"{
            "categories": ["cat"],
            "predicates": ["on"],
            "images": [{
                "id": "img0",
                "objects": [{"id": 0, "category": "cat", "bbox": [0.1, 0.1, 0.4, 0.4], "appearance": [1.0]}],
                "relations": [{"subject": 0, "predicate": "on", "object": 99}]
            }]
        }"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        fs::write(&path, json).unwrap();
        match load_dataset(&path) {
            Err(Error::Integrity(msg)) => assert!(msg.contains("99"), "{msg}"),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn featurizer_synthesizes_missing_appearance_deterministically() {
        let json = r#"{
            "categories": ["cat"],
            "predicates": ["on"],
            "featurizer": {"d_app": 5, "seed": 7},
            "images": [{
                "id": "img0",
                "objects": [{"id": 0, "category": "cat", "bbox": [0.1, 0.1, 0.4, 0.4]}],
                "relations": []
            }]
        }"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        fs::write(&path, json).unwrap();
        let a = load_dataset(&path).unwrap();
        let b = load_dataset(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.images[0].objects[0].appearance.len(), 5);
    }

    #[test]
    fn missing_appearance_without_featurizer_is_schema_error() {
        let json = r#"{
            "categories": ["cat"],
            "predicates": ["on"],
            "images": [{
                "id": "img0",
                "objects": [{"id": 0, "category": "cat", "bbox": [0.1, 0.1, 0.4, 0.4]}],
                "relations": []
            }]
        }"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        fs::write(&path, json).unwrap();
        match load_dataset(&path) {
            Err(Error::Schema { record, .. }) => assert!(record.contains("img0")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }
}
