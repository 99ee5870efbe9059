//! Pluggable toy encoders: visual (appearance + box geometry), context
//! (pooled other-object appearance + pair geometry) and text (position-
//! weighted pooling + MLP) together with the word-embedding table.
//!
//! All encoders are deterministic functions of their inputs and parameters
//! and differentiable through the autodiff graph; any drop-in replacement
//! honoring the same signatures can be substituted.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ValueId};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::sgdata::types::{BBox, CategoryId, ObjectInstance, PredicateId, SceneGraphImage};

pub const GEOMETRY_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenTag {
    Word,
    Prompt,
}

/// Ordered token embeddings plus per-token provenance.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Vec<ValueId>,
    pub tags: Vec<TokenTag>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<ValueId>, tags: Vec<TokenTag>) -> Self {
        assert_eq!(tokens.len(), tags.len());
        TokenSequence { tokens, tags }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VisualFeature(pub ValueId);

#[derive(Debug, Clone, Copy)]
pub struct ContextFeature(pub ValueId);

#[derive(Debug, Clone, Copy)]
pub struct TextEmbedding(pub ValueId);

/// Box geometry features: (x1, y1, x2, y2, w, h, area).
pub fn box_geometry(b: &BBox) -> Vec<f64> {
    vec![b.x1, b.y1, b.x2, b.y2, b.width(), b.height(), b.area()]
}

/// Pair geometry: union box, center offset, log size ratio. Directional:
/// swapping subject and object changes the offset sign and inverts the
/// ratio whenever the boxes differ.
pub fn pair_geometry(s: &BBox, o: &BBox) -> Vec<f64> {
    let u = s.union(o);
    let (scx, scy) = s.center();
    let (ocx, ocy) = o.center();
    vec![
        u.x1,
        u.y1,
        u.x2,
        u.y2,
        ocx - scx,
        ocy - scy,
        (s.area() / o.area()).ln(),
    ]
}

/// Word-embedding rows for every object category and predicate, stored as
/// two flat tensors (`table.categories`, `table.predicates`).
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub n_categories: usize,
    pub n_predicates: usize,
    pub d_txt: usize,
}

impl EmbeddingTable {
    pub const CATEGORIES: &'static str = "table.categories";
    pub const PREDICATES: &'static str = "table.predicates";

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng, frozen: bool) {
        // Random-normal initialization, sigma 0.02.
        let normal = Normal::new(0.0, 0.02).unwrap();
        let cat: Vec<f64> = (0..self.n_categories * self.d_txt)
            .map(|_| normal.sample(rng))
            .collect();
        let pred: Vec<f64> = (0..self.n_predicates * self.d_txt)
            .map(|_| normal.sample(rng))
            .collect();
        store.register(Self::CATEGORIES, cat, frozen);
        store.register(Self::PREDICATES, pred, frozen);
    }

    pub fn lookup_category(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        id: CategoryId,
    ) -> Result<ValueId> {
        if id.0 as usize >= self.n_categories {
            return Err(Error::Vocab(format!("unknown category id {}", id.0)));
        }
        let table = g.param(store, Self::CATEGORIES);
        Ok(g.slice(table, id.0 as usize * self.d_txt, self.d_txt))
    }

    pub fn lookup_predicate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        id: PredicateId,
    ) -> Result<ValueId> {
        if id.0 as usize >= self.n_predicates {
            return Err(Error::Vocab(format!("unknown predicate id {}", id.0)));
        }
        let table = g.param(store, Self::PREDICATES);
        Ok(g.slice(table, id.0 as usize * self.d_txt, self.d_txt))
    }
}

/// Visual encoder: MLP over appearance concatenated with box geometry.
#[derive(Debug, Clone)]
pub struct VisualEncoder {
    pub d_app: usize,
    pub mlp: Mlp,
}

impl VisualEncoder {
    pub fn new(d_app: usize, d_hidden: usize, d_vis: usize) -> Self {
        VisualEncoder {
            d_app,
            mlp: Mlp::new("enc_vis", d_app + GEOMETRY_DIM, d_hidden, d_vis),
        }
    }

    /// Encode with the appearance already on the graph (lets callers and
    /// tests differentiate with respect to it).
    pub fn encode_parts(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        appearance: ValueId,
        bbox: &BBox,
    ) -> Result<VisualFeature> {
        if g.len_of(appearance) != self.d_app {
            return Err(Error::Config(format!(
                "appearance dim {} does not match configured d_app {}",
                g.len_of(appearance),
                self.d_app
            )));
        }
        let geom = g.constant(box_geometry(bbox));
        let x = g.concat(&[appearance, geom]);
        Ok(VisualFeature(self.mlp.forward(g, store, x)))
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        obj: &ObjectInstance,
    ) -> Result<VisualFeature> {
        let app = g.constant(obj.appearance.clone());
        self.encode_parts(g, store, app, &obj.bbox)
    }
}

/// Context encoder: MLP over the mean appearance of the other objects in
/// the image concatenated with the pair geometry of (s, o). The mean term
/// is zero when no other objects exist; shuffling the other objects leaves
/// the output unchanged.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub d_app: usize,
    pub mlp: Mlp,
}

impl ContextEncoder {
    pub fn new(d_app: usize, d_hidden: usize, d_ctx: usize) -> Self {
        ContextEncoder {
            d_app,
            mlp: Mlp::new("enc_ctx", d_app + GEOMETRY_DIM, d_hidden, d_ctx),
        }
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &SceneGraphImage,
        subject_id: u32,
        object_id: u32,
    ) -> Result<ContextFeature> {
        let s = image.object(subject_id).ok_or_else(|| {
            Error::Integrity(format!("subject {subject_id} not in image {}", image.id))
        })?;
        let o = image.object(object_id).ok_or_else(|| {
            Error::Integrity(format!("object {object_id} not in image {}", image.id))
        })?;

        let mut mean = vec![0.0; self.d_app];
        let mut n = 0usize;
        for other in &image.objects {
            if other.id == subject_id || other.id == object_id {
                continue;
            }
            for (m, a) in mean.iter_mut().zip(&other.appearance) {
                *m += a;
            }
            n += 1;
        }
        if n > 0 {
            mean.iter_mut().for_each(|m| *m /= n as f64);
        }
        mean.extend(pair_geometry(&s.bbox, &o.bbox));
        let x = g.constant(mean);
        Ok(ContextFeature(self.mlp.forward(g, store, x)))
    }
}

/// Text encoder: softmax position weights pool the tokens, then an MLP maps
/// the pooled vector. Gradients flow into the token embeddings, so prompt
/// tokens and table rows learn even when the encoder itself is frozen.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub d_txt: usize,
    pub max_len: usize,
    pub mlp: Mlp,
}

impl TextEncoder {
    pub const POOL: &'static str = "enc_txt.pool";

    pub fn new(d_txt: usize, d_hidden: usize, max_len: usize) -> Self {
        TextEncoder {
            d_txt,
            max_len,
            mlp: Mlp::new("enc_txt", d_txt, d_hidden, d_txt),
        }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng, frozen: bool) {
        // Zero scores make the initial pooling uniform.
        store.register(Self::POOL, vec![0.0; self.max_len], frozen);
        self.mlp.register(store, rng, frozen);
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seq: &TokenSequence,
    ) -> Result<TextEmbedding> {
        if seq.is_empty() {
            return Err(Error::Contract("text encoder requires a nonempty sequence".into()));
        }
        if seq.len() > self.max_len {
            return Err(Error::Contract(format!(
                "sequence length {} exceeds encoder capacity {}",
                seq.len(),
                self.max_len
            )));
        }
        for t in &seq.tokens {
            if g.len_of(*t) != self.d_txt {
                return Err(Error::Contract("token dim mismatch".into()));
            }
        }
        let pool = g.param(store, Self::POOL);
        let scores = g.slice(pool, 0, seq.len());
        let weights = g.softmax(scores);
        let pooled = g.weighted_sum(weights, &seq.tokens);
        Ok(TextEmbedding(self.mlp.forward(g, store, pooled)))
    }
}
