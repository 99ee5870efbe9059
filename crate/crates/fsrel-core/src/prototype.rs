//! Decomposed prototypes: prompt composition, per-support prototype
//! generation, attention-weighted recombination and feature aggregation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ValueId};
use crate::encoders::{EmbeddingTable, TextEncoder, TokenSequence, TokenTag};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::sgdata::types::{PredicateId, TripletCategories};

/// Learnable contextual prompt tokens, L per side.
#[derive(Debug, Clone)]
pub struct PromptTokens {
    pub len: usize,
    pub d_txt: usize,
}

impl PromptTokens {
    pub const SUBJECT: &'static str = "prompts.subject";
    pub const OBJECT: &'static str = "prompts.object";

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng, frozen: bool) {
        let normal = Normal::new(0.0, 0.02).unwrap();
        for name in [Self::SUBJECT, Self::OBJECT] {
            let v: Vec<f64> = (0..self.len * self.d_txt).map(|_| normal.sample(rng)).collect();
            store.register(name, v, frozen);
        }
    }

    fn tokens(&self, g: &mut Graph, store: &ParamStore, name: &str) -> Vec<ValueId> {
        let flat = g.param(store, name);
        (0..self.len)
            .map(|i| g.slice(flat, i * self.d_txt, self.d_txt))
            .collect()
    }

    pub fn subject_tokens(&self, g: &mut Graph, store: &ParamStore) -> Vec<ValueId> {
        self.tokens(g, store, Self::SUBJECT)
    }

    pub fn object_tokens(&self, g: &mut Graph, store: &ParamStore) -> Vec<ValueId> {
        self.tokens(g, store, Self::OBJECT)
    }
}

/// Compose the subject and object prompt sequences for one support triplet:
/// subject = [W[s], W[r], T^s...], object = [T^o..., W[r], W[o]]. Both have
/// L + 2 tokens.
pub fn compose_prompts(
    g: &mut Graph,
    store: &ParamStore,
    table: &EmbeddingTable,
    prompts: &PromptTokens,
    support: &TripletCategories,
) -> Result<(TokenSequence, TokenSequence)> {
    let w_s = table.lookup_category(g, store, support.subject)?;
    let w_o = table.lookup_category(g, store, support.object)?;
    let w_r = table.lookup_predicate(g, store, support.predicate)?;

    let mut subj_tokens = vec![w_s, w_r];
    let mut subj_tags = vec![TokenTag::Word, TokenTag::Word];
    subj_tokens.extend(prompts.subject_tokens(g, store));
    subj_tags.extend(std::iter::repeat(TokenTag::Prompt).take(prompts.len));

    let mut obj_tokens = prompts.object_tokens(g, store);
    let mut obj_tags: Vec<TokenTag> = std::iter::repeat(TokenTag::Prompt).take(prompts.len).collect();
    obj_tokens.push(w_r);
    obj_tokens.push(w_o);
    obj_tags.push(TokenTag::Word);
    obj_tags.push(TokenTag::Word);

    Ok((
        TokenSequence::new(subj_tokens, subj_tags),
        TokenSequence::new(obj_tokens, obj_tags),
    ))
}

/// Distinct two-layer prototype generators for the two sides.
#[derive(Debug, Clone)]
pub struct Generators {
    pub gen_s: Mlp,
    pub gen_o: Mlp,
}

impl Generators {
    pub fn new(d_txt: usize, d_hidden: usize, d_proto: usize) -> Self {
        Generators {
            gen_s: Mlp::new("gen_s", d_txt, d_hidden, d_proto),
            gen_o: Mlp::new("gen_o", d_txt, d_hidden, d_proto),
        }
    }
}

/// One support's text embeddings and generated prototypes.
#[derive(Debug, Clone, Copy)]
pub struct BankEntry {
    pub h_s: ValueId,
    pub h_o: ValueId,
    pub u_s: ValueId,
    pub u_o: ValueId,
}

/// Per-predicate prototype bank, one entry per support shot.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    pub predicate: PredicateId,
    pub entries: Vec<BankEntry>,
}

impl PrototypeBank {
    pub fn subject_side(&self) -> Vec<(ValueId, ValueId)> {
        self.entries.iter().map(|e| (e.h_s, e.u_s)).collect()
    }

    pub fn object_side(&self) -> Vec<(ValueId, ValueId)> {
        self.entries.iter().map(|e| (e.h_o, e.u_o)).collect()
    }
}

/// Bank with values materialized off the graph; evaluation builds it once
/// per predicate and re-injects it as constants per scored image.
#[derive(Debug, Clone)]
pub struct BankValues {
    pub predicate: PredicateId,
    pub entries: Vec<[Vec<f64>; 4]>,
}

impl BankValues {
    pub fn from_graph(g: &Graph, bank: &PrototypeBank) -> Self {
        BankValues {
            predicate: bank.predicate,
            entries: bank
                .entries
                .iter()
                .map(|e| {
                    [
                        g.value(e.h_s).to_vec(),
                        g.value(e.h_o).to_vec(),
                        g.value(e.u_s).to_vec(),
                        g.value(e.u_o).to_vec(),
                    ]
                })
                .collect(),
        }
    }

    pub fn inject(&self, g: &mut Graph) -> PrototypeBank {
        PrototypeBank {
            predicate: self.predicate,
            entries: self
                .entries
                .iter()
                .map(|[h_s, h_o, u_s, u_o]| BankEntry {
                    h_s: g.constant(h_s.clone()),
                    h_o: g.constant(h_o.clone()),
                    u_s: g.constant(u_s.clone()),
                    u_o: g.constant(u_o.clone()),
                })
                .collect(),
        }
    }
}

/// Build a predicate's bank from its support triplets: per shot, compose
/// prompts, encode them, and generate subject/object prototypes.
#[allow(clippy::too_many_arguments)]
pub fn build_bank(
    g: &mut Graph,
    store: &ParamStore,
    predicate: PredicateId,
    supports: &[TripletCategories],
    table: &EmbeddingTable,
    prompts: &PromptTokens,
    text_encoder: &TextEncoder,
    generators: &Generators,
) -> Result<PrototypeBank> {
    if supports.is_empty() {
        return Err(Error::Contract("bank needs at least one support".into()));
    }
    let mut entries = Vec::with_capacity(supports.len());
    for s in supports {
        if s.predicate != predicate {
            return Err(Error::Integrity(format!(
                "support labeled {:?} in a bank for {:?}",
                s.predicate, predicate
            )));
        }
        let (p_s, p_o) = compose_prompts(g, store, table, prompts, s)?;
        let h_s = text_encoder.encode(g, store, &p_s)?.0;
        let h_o = text_encoder.encode(g, store, &p_o)?.0;
        let u_s = generators.gen_s.forward(g, store, h_s);
        let u_o = generators.gen_o.forward(g, store, h_o);
        entries.push(BankEntry { h_s, h_o, u_s, u_o });
    }
    Ok(PrototypeBank { predicate, entries })
}

/// Two-layer projections from visual space into prompt space.
#[derive(Debug, Clone)]
pub struct ProjectionMaps {
    pub map_s: Mlp,
    pub map_o: Mlp,
}

impl ProjectionMaps {
    pub fn new(d_vis: usize, d_hidden: usize, d_txt: usize) -> Self {
        ProjectionMaps {
            map_s: Mlp::new("map_s", d_vis, d_hidden, d_txt),
            map_o: Mlp::new("map_o", d_vis, d_hidden, d_txt),
        }
    }
}

/// Project a visual feature pair into the prompt space.
pub fn project_pair(
    g: &mut Graph,
    store: &ParamStore,
    maps: &ProjectionMaps,
    f_v_s: ValueId,
    f_v_o: ValueId,
) -> (ValueId, ValueId) {
    (
        maps.map_s.forward(g, store, f_v_s),
        maps.map_o.forward(g, store, f_v_o),
    )
}

/// Separate attention scorers for the two sides.
#[derive(Debug, Clone)]
pub struct AttentionNets {
    pub att_s: Mlp,
    pub att_o: Mlp,
}

impl AttentionNets {
    pub fn new(d_txt: usize, d_hidden: usize) -> Self {
        AttentionNets {
            att_s: Mlp::new("att_s", d_txt, d_hidden, 1),
            att_o: Mlp::new("att_o", d_txt, d_hidden, 1),
        }
    }
}

/// Raw scores, softmax weights and the recombined prototype of one side.
#[derive(Debug, Clone)]
pub struct PrototypeAttention {
    pub predicate: PredicateId,
    pub raw: ValueId,
    pub normalized: ValueId,
    pub recombined: ValueId,
}

/// Softmax the raw scores and convexly recombine the prototypes.
pub fn recombine(g: &mut Graph, raw: ValueId, prototypes: &[ValueId]) -> (ValueId, ValueId) {
    let normalized = g.softmax(raw);
    let recombined = g.weighted_sum(normalized, prototypes);
    (normalized, recombined)
}

/// Score each bank entry with `Att(v ⊙ h_k)`, normalize with softmax and
/// recombine the generated prototypes.
pub fn attend(
    g: &mut Graph,
    store: &ParamStore,
    att: &Mlp,
    v: ValueId,
    side: &[(ValueId, ValueId)],
    predicate: PredicateId,
) -> Result<PrototypeAttention> {
    if side.is_empty() {
        return Err(Error::Contract("attention over an empty bank".into()));
    }
    let mut scores = Vec::with_capacity(side.len());
    for (h, u) in side {
        if g.len_of(v) != g.len_of(*h) {
            return Err(Error::Contract(format!(
                "projected feature dim {} does not match prompt embedding dim {}",
                g.len_of(v),
                g.len_of(*h)
            )));
        }
        let gated = g.mul_elem(v, *h);
        scores.push(att.forward(g, store, gated));
        let _ = u;
    }
    let raw = g.concat(&scores);
    let prototypes: Vec<ValueId> = side.iter().map(|(_, u)| *u).collect();
    let (normalized, recombined) = recombine(g, raw, &prototypes);
    Ok(PrototypeAttention {
        predicate,
        raw,
        normalized,
        recombined,
    })
}

/// Concatenate the recombined subject and object prototypes.
pub fn prototype_feature(
    g: &mut Graph,
    att_s: &PrototypeAttention,
    att_o: &PrototypeAttention,
) -> Result<ValueId> {
    if att_s.predicate != att_o.predicate {
        return Err(Error::Contract(
            "subject and object attentions come from different banks".into(),
        ));
    }
    Ok(g.concat(&[att_s.recombined, att_o.recombined]))
}

/// Final aggregated representation of one pair, conditioned on the bank
/// that produced its prototype feature.
#[derive(Debug, Clone, Copy)]
pub struct RelationEmbedding {
    pub id: ValueId,
    pub condition: Option<PredicateId>,
}

/// Aggregate the encoded features into the final embedding.
pub fn aggregate(
    g: &mut Graph,
    store: &ParamStore,
    aggregator: &Mlp,
    f_v_s: ValueId,
    f_v_o: ValueId,
    f_con: ValueId,
    f_pro: ValueId,
    condition: Option<PredicateId>,
) -> RelationEmbedding {
    let x = g.concat(&[f_v_s, f_v_o, f_con, f_pro]);
    RelationEmbedding {
        id: aggregator.forward(g, store, x),
        condition,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{set_identity, set_zero, Activation};
    use crate::sgdata::types::CategoryId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d_txt: usize, l: usize) -> (ParamStore, EmbeddingTable, PromptTokens) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = EmbeddingTable {
            n_categories: 4,
            n_predicates: 3,
            d_txt,
        };
        table.register(&mut store, &mut rng, false);
        let prompts = PromptTokens { len: l, d_txt };
        prompts.register(&mut store, &mut rng, false);
        (store, table, prompts)
    }

    fn cats(s: u32, r: u32, o: u32) -> TripletCategories {
        TripletCategories {
            subject: CategoryId(s),
            predicate: PredicateId(r),
            object: CategoryId(o),
        }
    }

    #[test]
    fn prompt_sequences_have_l_plus_two_tokens() {
        let (store, table, prompts) = setup(8, 24);
        let mut g = Graph::new();
        let (ps, po) =
            compose_prompts(&mut g, &store, &table, &prompts, &cats(0, 1, 2)).unwrap();
        assert_eq!(ps.len(), 26);
        assert_eq!(po.len(), 26);
        assert_eq!(ps.tags[0], TokenTag::Word);
        assert_eq!(ps.tags[2], TokenTag::Prompt);
        assert_eq!(po.tags[0], TokenTag::Prompt);
        assert_eq!(po.tags[25], TokenTag::Word);
    }

    #[test]
    fn l1_prompts_match_hand_assembled_sequences() {
        let (store, table, prompts) = setup(4, 1);
        let mut g = Graph::new();
        let (ps, po) =
            compose_prompts(&mut g, &store, &table, &prompts, &cats(1, 0, 3)).unwrap();

        let cat_table = store.values(EmbeddingTable::CATEGORIES).unwrap();
        let pred_table = store.values(EmbeddingTable::PREDICATES).unwrap();
        let t_s = store.values(PromptTokens::SUBJECT).unwrap();
        let t_o = store.values(PromptTokens::OBJECT).unwrap();

        assert_eq!(g.value(ps.tokens[0]), &cat_table[4..8]);
        assert_eq!(g.value(ps.tokens[1]), &pred_table[0..4]);
        assert_eq!(g.value(ps.tokens[2]), &t_s[0..4]);

        assert_eq!(g.value(po.tokens[0]), &t_o[0..4]);
        assert_eq!(g.value(po.tokens[1]), &pred_table[0..4]);
        assert_eq!(g.value(po.tokens[2]), &cat_table[12..16]);
    }

    #[test]
    fn identical_subject_and_predicate_give_identical_subject_sequences() {
        let (store, table, prompts) = setup(4, 2);
        let mut g = Graph::new();
        let (a, _) = compose_prompts(&mut g, &store, &table, &prompts, &cats(1, 2, 0)).unwrap();
        let (b, _) = compose_prompts(&mut g, &store, &table, &prompts, &cats(1, 2, 3)).unwrap();
        for (x, y) in a.tokens.iter().zip(&b.tokens) {
            assert_eq!(g.value(*x), g.value(*y));
        }
    }

    #[test]
    fn unknown_category_is_vocab_error() {
        let (store, table, prompts) = setup(4, 2);
        let mut g = Graph::new();
        assert!(matches!(
            compose_prompts(&mut g, &store, &table, &prompts, &cats(9, 0, 1)),
            Err(Error::Vocab(_))
        ));
    }

    fn bank_parts(d_txt: usize) -> (ParamStore, EmbeddingTable, PromptTokens, TextEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = EmbeddingTable {
            n_categories: 4,
            n_predicates: 3,
            d_txt,
        };
        table.register(&mut store, &mut rng, false);
        let prompts = PromptTokens { len: 2, d_txt };
        prompts.register(&mut store, &mut rng, false);
        let text = TextEncoder::new(d_txt, d_txt, 8);
        text.register(&mut store, &mut rng, false);
        (store, table, prompts, text)
    }

    fn bank_setup(d_txt: usize) -> (ParamStore, EmbeddingTable, PromptTokens, TextEncoder, Generators) {
        let (mut store, table, prompts, text) = bank_parts(d_txt);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gens = Generators::new(d_txt, d_txt, d_txt);
        gens.gen_s.register(&mut store, &mut rng, false);
        gens.gen_o.register(&mut store, &mut rng, false);
        (store, table, prompts, text, gens)
    }

    #[test]
    fn bank_has_one_entry_per_support_and_keeps_duplicates() {
        let (store, table, prompts, text, gens) = bank_setup(4);
        let mut g = Graph::new();
        let supports = vec![cats(0, 1, 2), cats(0, 1, 2), cats(3, 1, 0)];
        let bank = build_bank(
            &mut g, &store, PredicateId(1), &supports, &table, &prompts, &text, &gens,
        )
        .unwrap();
        assert_eq!(bank.entries.len(), 3);
        // Duplicate supports produce duplicate rows; no dedup.
        assert_eq!(
            g.value(bank.entries[0].u_s),
            g.value(bank.entries[1].u_s)
        );
    }

    #[test]
    fn mislabeled_support_is_integrity_error() {
        let (store, table, prompts, text, gens) = bank_setup(4);
        let mut g = Graph::new();
        let supports = vec![cats(0, 2, 1)];
        assert!(matches!(
            build_bank(&mut g, &store, PredicateId(1), &supports, &table, &prompts, &text, &gens),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn identity_generator_passes_text_embedding_through() {
        let d = 4;
        let (mut store, table, prompts, text) = bank_parts(d);
        let gens = Generators {
            gen_s: Mlp::new("gen_s", d, d, d).with_activation(Activation::Identity),
            gen_o: Mlp::new("gen_o", d, d, d).with_activation(Activation::Identity),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        gens.gen_s.register(&mut store, &mut rng, false);
        gens.gen_o.register(&mut store, &mut rng, false);
        set_identity(&gens.gen_s, &mut store);
        set_identity(&gens.gen_o, &mut store);

        let mut g = Graph::new();
        let bank = build_bank(
            &mut g,
            &store,
            PredicateId(0),
            &[cats(0, 0, 1)],
            &table,
            &prompts,
            &text,
            &gens,
        )
        .unwrap();
        assert_eq!(g.value(bank.entries[0].u_s), g.value(bank.entries[0].h_s));
        assert_eq!(g.value(bank.entries[0].u_o), g.value(bank.entries[0].h_o));
    }

    #[test]
    fn zero_map_projects_to_zero_with_prompt_dims() {
        let maps = ProjectionMaps::new(6, 5, 4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        maps.map_s.register(&mut store, &mut rng, false);
        maps.map_o.register(&mut store, &mut rng, false);
        set_zero(&maps.map_s, &mut store);

        let mut g = Graph::new();
        let f_s = g.constant(vec![0.0; 6]);
        let f_o = g.constant(vec![1.0; 6]);
        let (v_s, v_o) = project_pair(&mut g, &store, &maps, f_s, f_o);
        assert_eq!(g.value(v_s), &[0.0; 4]);
        assert_eq!(g.len_of(v_o), 4);
    }

    #[test]
    fn singleton_bank_attention_is_pass_through() {
        let att = AttentionNets::new(3, 4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        att.att_s.register(&mut store, &mut rng, false);

        let mut g = Graph::new();
        let v = g.constant(vec![0.5, -0.4, 0.8]);
        let h = g.constant(vec![0.3, 0.3, -0.2]);
        let u = g.constant(vec![7.0, -2.0]);
        let out = attend(&mut g, &store, &att.att_s, v, &[(h, u)], PredicateId(0)).unwrap();
        assert_eq!(g.value(out.normalized), &[1.0]);
        assert_eq!(g.value(out.recombined), &[7.0, -2.0]);
    }

    #[test]
    fn duplicated_bank_entries_split_attention_evenly() {
        let att = AttentionNets::new(3, 4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        att.att_s.register(&mut store, &mut rng, false);

        let mut g = Graph::new();
        let v = g.constant(vec![0.5, -0.4, 0.8]);
        let h = g.constant(vec![0.3, 0.3, -0.2]);
        let u = g.constant(vec![7.0, -2.0]);
        let out =
            attend(&mut g, &store, &att.att_s, v, &[(h, u), (h, u)], PredicateId(0)).unwrap();
        let w = g.value(out.normalized);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        assert_eq!(g.value(out.recombined), &[7.0, -2.0]);
    }

    #[test]
    fn hand_set_scores_softmax_oracle() {
        // raw = (0, ln 2, ln 2) -> weights (0.2, 0.4, 0.4).
        let mut g = Graph::new();
        let raw = g.constant(vec![0.0, 2.0f64.ln(), 2.0f64.ln()]);
        let u1 = g.constant(vec![1.0, 0.0]);
        let u2 = g.constant(vec![0.0, 1.0]);
        let u3 = g.constant(vec![1.0, 1.0]);
        let (norm, rec) = recombine(&mut g, raw, &[u1, u2, u3]);
        let w = g.value(norm);
        assert!((w[0] - 0.2).abs() < 1e-12);
        assert!((w[1] - 0.4).abs() < 1e-12);
        assert!((w[2] - 0.4).abs() < 1e-12);
        let r = g.value(rec);
        assert!((r[0] - 0.6).abs() < 1e-12);
        assert!((r[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance_of_attention_scores() {
        let mut g = Graph::new();
        let raw = g.constant(vec![0.3, -1.2, 0.8, 0.0]);
        let us: Vec<ValueId> = (0..4)
            .map(|i| g.constant(vec![i as f64, 1.0 - i as f64]))
            .collect();
        let (n1, r1) = recombine(&mut g, raw, &us);
        let shifted = g.add_const(raw, 13.7);
        let (n2, r2) = recombine(&mut g, shifted, &us);
        for (a, b) in g.value(n1).iter().zip(g.value(n2)) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in g.value(r1).iter().zip(g.value(r2)) {
            assert!((a - b).abs() < 1e-6);
        }
        // Argmax is unchanged exactly.
        let am = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(am(g.value(n1)), am(g.value(n2)));
    }

    #[test]
    fn empty_bank_is_contract_violation() {
        let att = AttentionNets::new(3, 4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        att.att_s.register(&mut store, &mut rng, false);
        let mut g = Graph::new();
        let v = g.constant(vec![0.0; 3]);
        assert!(matches!(
            attend(&mut g, &store, &att.att_s, v, &[], PredicateId(0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn prototype_feature_concatenates_sides() {
        let mut g = Graph::new();
        let mk = |g: &mut Graph, v: Vec<f64>| {
            let raw = g.constant(vec![0.0]);
            let norm = g.constant(vec![1.0]);
            let rec = g.constant(v);
            PrototypeAttention {
                predicate: PredicateId(0),
                raw,
                normalized: norm,
                recombined: rec,
            }
        };
        let s = mk(&mut g, vec![1.0, 2.0]);
        let o = mk(&mut g, vec![3.0, 4.0]);
        let f = prototype_feature(&mut g, &s, &o).unwrap();
        assert_eq!(g.value(f), &[1.0, 2.0, 3.0, 4.0]);
        let swapped = prototype_feature(&mut g, &o, &s).unwrap();
        assert_eq!(g.value(swapped), &[3.0, 4.0, 1.0, 2.0]);

        let mut other = mk(&mut g, vec![9.0, 9.0]);
        other.predicate = PredicateId(1);
        assert!(prototype_feature(&mut g, &s, &other).is_err());
    }

    #[test]
    fn aggregate_zero_inputs_through_zero_mlp() {
        let agg = Mlp::new("agg", 8, 4, 3);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        agg.register(&mut store, &mut rng, false);
        set_zero(&agg, &mut store);

        let mut g = Graph::new();
        let z2 = g.constant(vec![0.0; 2]);
        let f = aggregate(&mut g, &store, &agg, z2, z2, z2, z2, None);
        assert_eq!(g.value(f.id), &[0.0; 3]);
    }

    #[test]
    fn convexity_of_recombined_prototype() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let k = rng.gen_range(1..6);
            let dim = rng.gen_range(1..5);
            let mut g = Graph::new();
            let raw_vals: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let raw = g.constant(raw_vals);
            let us: Vec<ValueId> = (0..k)
                .map(|_| {
                    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    g.constant(v)
                })
                .collect();
            let (norm, rec) = recombine(&mut g, raw, &us);
            let w = g.value(norm);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
            let r = g.value(rec).to_vec();
            for d in 0..dim {
                let lo = us
                    .iter()
                    .map(|u| g.value(*u)[d])
                    .fold(f64::INFINITY, f64::min);
                let hi = us
                    .iter()
                    .map(|u| g.value(*u)[d])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(r[d] >= lo - 1e-9 && r[d] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn bank_permutation_leaves_recombined_prototype_unchanged() {
        let att = AttentionNets::new(3, 4);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        att.att_s.register(&mut store, &mut rng, false);

        let mut g = Graph::new();
        let v = g.constant(vec![0.4, 0.1, -0.9]);
        let side: Vec<(ValueId, ValueId)> = (0..4)
            .map(|i| {
                let h = g.constant(vec![0.1 * i as f64, -0.2, 0.3]);
                let u = g.constant(vec![i as f64, 2.0 - i as f64]);
                (h, u)
            })
            .collect();
        let a = attend(&mut g, &store, &att.att_s, v, &side, PredicateId(0)).unwrap();
        let mut permuted = side.clone();
        permuted.rotate_left(2);
        let b = attend(&mut g, &store, &att.att_s, v, &permuted, PredicateId(0)).unwrap();
        for (x, y) in g.value(a.recombined).iter().zip(g.value(b.recombined)) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
