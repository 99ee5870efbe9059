//! The full projection network: visual, context and text encoders, the
//! decomposed prototype pipeline, the aggregator, the prototype-only
//! projection head, the object classification head and the learnable
//! background pseudo-distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ValueId};
use crate::config::{model_config_hash, ModelConfig, PromptMode};
use crate::encoders::{
    ContextEncoder, EmbeddingTable, TextEncoder, TokenSequence, TokenTag, VisualEncoder,
};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp};
use crate::params::ParamStore;
use crate::prototype::{
    aggregate, attend, build_bank, project_pair, prototype_feature, AttentionNets, BankValues,
    Generators, ProjectionMaps, PromptTokens, PrototypeBank, RelationEmbedding,
};
use crate::sgdata::types::{CategoryId, PredicateId, SceneGraphImage, TripletCategories};

pub const BG_DIST: &str = "bg_dist";
pub const FIXED_PROMPT: &str = "fixed_prompt";

/// Candidate-independent encodings of one object pair. Computing these once
/// lets a query be conditioned on many candidate banks cheaply.
#[derive(Debug, Clone, Copy)]
pub struct PairEncoding {
    pub f_v_s: ValueId,
    pub f_v_o: ValueId,
    pub v_s: ValueId,
    pub v_o: ValueId,
    pub f_con: ValueId,
}

/// Final embedding plus the prototype-only projection used by the KL loss.
#[derive(Debug, Clone, Copy)]
pub struct SampleEmbedding {
    pub full: RelationEmbedding,
    pub proto_proj: Option<RelationEmbedding>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub categories: Vec<String>,
    pub predicates: Vec<String>,
    pub params: ParamStore,
    pub table: EmbeddingTable,
    pub prompts: PromptTokens,
    pub visual: VisualEncoder,
    pub context: ContextEncoder,
    pub text: TextEncoder,
    pub generators: Generators,
    pub maps: ProjectionMaps,
    pub attention: AttentionNets,
    pub aggregator: Mlp,
    pub proto_head: Mlp,
    pub object_head: Linear,
    pub config_hash: u64,
}

impl Model {
    pub fn new(
        cfg: &ModelConfig,
        categories: Vec<String>,
        predicates: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if categories.is_empty() || predicates.is_empty() {
            return Err(Error::Config("model needs nonempty vocabularies".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let table = EmbeddingTable {
            n_categories: categories.len(),
            n_predicates: predicates.len(),
            d_txt: cfg.d_txt,
        };
        table.register(&mut params, &mut rng, false);

        let prompts = PromptTokens {
            len: cfg.prompt_len,
            d_txt: cfg.d_txt,
        };
        prompts.register(&mut params, &mut rng, cfg.prompt_mode == PromptMode::Fixed);

        // Fixed label prompt for the metric learner; never trained.
        {
            use rand_distr::{Distribution, Normal};
            let normal = Normal::new(0.0, 0.02).unwrap();
            let v: Vec<f64> = (0..cfg.fixed_prompt_len * cfg.d_txt)
                .map(|_| normal.sample(&mut rng))
                .collect();
            params.register(FIXED_PROMPT, v, true);
        }

        let visual = VisualEncoder::new(cfg.d_app, cfg.d_hidden, cfg.d_vis);
        visual.mlp.register(&mut params, &mut rng, false);

        let context = ContextEncoder::new(cfg.d_app, cfg.d_hidden, cfg.d_ctx);
        context.mlp.register(&mut params, &mut rng, false);

        let max_len = (cfg.prompt_len + 2).max(cfg.fixed_prompt_len + 1);
        let text = TextEncoder::new(cfg.d_txt, cfg.d_hidden, max_len);
        text.register(&mut params, &mut rng, cfg.freeze_text_encoder);

        let generators = Generators::new(cfg.d_txt, cfg.d_hidden, cfg.d_proto);
        generators.gen_s.register(&mut params, &mut rng, false);
        generators.gen_o.register(&mut params, &mut rng, false);

        let maps = ProjectionMaps::new(cfg.d_vis, cfg.d_hidden, cfg.d_txt);
        maps.map_s.register(&mut params, &mut rng, false);
        maps.map_o.register(&mut params, &mut rng, false);

        let attention = AttentionNets::new(cfg.d_txt, cfg.d_hidden);
        attention.att_s.register(&mut params, &mut rng, false);
        attention.att_o.register(&mut params, &mut rng, false);

        let agg_in = cfg.d_vis * 2 + cfg.d_ctx + cfg.d_proto * 2;
        let aggregator = Mlp::new("agg", agg_in, cfg.d_hidden, cfg.d_final);
        aggregator.register(&mut params, &mut rng, false);

        let proto_head = Mlp::new("proj_pro", cfg.d_proto * 2, cfg.d_hidden, cfg.d_final);
        proto_head.register(&mut params, &mut rng, false);

        let object_head = Linear::new("obj_head", cfg.d_vis + cfg.d_app, categories.len());
        object_head.register(&mut params, &mut rng, false);

        params.register(BG_DIST, vec![1.0], false);

        let config_hash = model_config_hash(cfg, &categories, &predicates);
        Ok(Model {
            cfg: cfg.clone(),
            categories,
            predicates,
            params,
            table,
            prompts,
            visual,
            context,
            text,
            generators,
            maps,
            attention,
            aggregator,
            proto_head,
            object_head,
            config_hash,
        })
    }

    pub fn predicate_id(&self, name: &str) -> Option<PredicateId> {
        self.predicates
            .iter()
            .position(|p| p == name)
            .map(|i| PredicateId(i as u32))
    }

    /// Encode everything about a pair that does not depend on the candidate
    /// predicate: visual features, their projections, and the context.
    pub fn pair_encoding(
        &self,
        g: &mut Graph,
        image: &SceneGraphImage,
        subject_id: u32,
        object_id: u32,
    ) -> Result<PairEncoding> {
        let s = image
            .object(subject_id)
            .ok_or_else(|| Error::Integrity(format!("subject {subject_id} not in {}", image.id)))?;
        let o = image
            .object(object_id)
            .ok_or_else(|| Error::Integrity(format!("object {object_id} not in {}", image.id)))?;
        let f_v_s = self.visual.encode(g, &self.params, s)?.0;
        let f_v_o = self.visual.encode(g, &self.params, o)?.0;
        let (v_s, v_o) = project_pair(g, &self.params, &self.maps, f_v_s, f_v_o);
        let f_con = self
            .context
            .encode(g, &self.params, image, subject_id, object_id)?
            .0;
        Ok(PairEncoding {
            f_v_s,
            f_v_o,
            v_s,
            v_o,
            f_con,
        })
    }

    /// Build a predicate's prototype bank on the given graph.
    pub fn build_bank(
        &self,
        g: &mut Graph,
        predicate: PredicateId,
        supports: &[TripletCategories],
    ) -> Result<PrototypeBank> {
        build_bank(
            g,
            &self.params,
            predicate,
            supports,
            &self.table,
            &self.prompts,
            &self.text,
            &self.generators,
        )
    }

    /// Build a bank and materialize its values (evaluation path; prompts are
    /// effectively frozen because no gradient is taken).
    pub fn bank_values(
        &self,
        predicate: PredicateId,
        supports: &[TripletCategories],
    ) -> Result<BankValues> {
        let mut g = Graph::new();
        let bank = self.build_bank(&mut g, predicate, supports)?;
        Ok(BankValues::from_graph(&g, &bank))
    }

    /// Condition a pair encoding on a candidate bank and aggregate. With the
    /// prototype branch disabled (or no bank) the prototype slot is zero.
    pub fn embed_with_bank(
        &self,
        g: &mut Graph,
        enc: &PairEncoding,
        bank: Option<&PrototypeBank>,
    ) -> Result<SampleEmbedding> {
        let (f_pro, condition) = match (self.cfg.prototype_enabled, bank) {
            (true, Some(bank)) => {
                let att_s = attend(
                    g,
                    &self.params,
                    &self.attention.att_s,
                    enc.v_s,
                    &bank.subject_side(),
                    bank.predicate,
                )?;
                let att_o = attend(
                    g,
                    &self.params,
                    &self.attention.att_o,
                    enc.v_o,
                    &bank.object_side(),
                    bank.predicate,
                )?;
                (prototype_feature(g, &att_s, &att_o)?, Some(bank.predicate))
            }
            _ => {
                let zero = g.constant(vec![0.0; self.cfg.d_proto * 2]);
                (zero, bank.map(|b| b.predicate))
            }
        };
        let full = aggregate(
            g,
            &self.params,
            &self.aggregator,
            enc.f_v_s,
            enc.f_v_o,
            enc.f_con,
            f_pro,
            condition,
        );
        let proto_proj = if self.cfg.prototype_enabled && bank.is_some() {
            Some(RelationEmbedding {
                id: self.proto_head.forward(g, &self.params, f_pro),
                condition,
            })
        } else {
            None
        };
        Ok(SampleEmbedding { full, proto_proj })
    }

    /// Full pipeline for one pair conditioned on one candidate bank.
    pub fn embed_sample(
        &self,
        g: &mut Graph,
        image: &SceneGraphImage,
        subject_id: u32,
        object_id: u32,
        bank: &PrototypeBank,
    ) -> Result<SampleEmbedding> {
        let enc = self.pair_encoding(g, image, subject_id, object_id)?;
        self.embed_with_bank(g, &enc, Some(bank))
    }

    /// Label embedding for the metric learner: the fixed prompt followed by
    /// the category's word embedding, through the text encoder.
    pub fn label_embedding(&self, g: &mut Graph, category: CategoryId) -> Result<ValueId> {
        let flat = g.param(&self.params, FIXED_PROMPT);
        let mut tokens: Vec<ValueId> = (0..self.cfg.fixed_prompt_len)
            .map(|i| g.slice(flat, i * self.cfg.d_txt, self.cfg.d_txt))
            .collect();
        let mut tags = vec![TokenTag::Prompt; self.cfg.fixed_prompt_len];
        tokens.push(self.table.lookup_category(g, &self.params, category)?);
        tags.push(TokenTag::Word);
        let seq = TokenSequence::new(tokens, tags);
        Ok(self.text.encode(g, &self.params, &seq)?.0)
    }

    /// Materialized label embedding (evaluation path).
    pub fn label_embedding_values(&self, category: CategoryId) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let id = self.label_embedding(&mut g, category)?;
        Ok(g.value(id).to_vec())
    }

    /// Object-classification logits: visual feature of the object plus the
    /// mean appearance of the other objects, through a linear head.
    pub fn object_logits(
        &self,
        g: &mut Graph,
        image: &SceneGraphImage,
        object_id: u32,
    ) -> Result<ValueId> {
        let obj = image
            .object(object_id)
            .ok_or_else(|| Error::Integrity(format!("object {object_id} not in {}", image.id)))?;
        let f_v = self.visual.encode(g, &self.params, obj)?.0;
        let mut mean = vec![0.0; self.cfg.d_app];
        let mut n = 0usize;
        for other in &image.objects {
            if other.id == object_id {
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
        let pooled = g.constant(mean);
        let x = g.concat(&[f_v, pooled]);
        Ok(self.object_head.forward(g, &self.params, x))
    }

    /// Predicted category of every object in the image (argmax of the head).
    pub fn predict_object_labels(&self, image: &SceneGraphImage) -> Result<Vec<(u32, CategoryId)>> {
        let mut g = Graph::new();
        let mut out = Vec::with_capacity(image.objects.len());
        for obj in &image.objects {
            let logits = self.object_logits(&mut g, image, obj.id)?;
            let v = g.value(logits);
            let argmax = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            out.push((obj.id, CategoryId(argmax as u32)));
        }
        Ok(out)
    }

    /// The learnable background pseudo-distance as a graph node.
    pub fn bg_distance(&self, g: &mut Graph) -> ValueId {
        g.param(&self.params, BG_DIST)
    }

    pub fn bg_distance_value(&self) -> f64 {
        self.params.values(BG_DIST).expect("registered")[0]
    }
}
