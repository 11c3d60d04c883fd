//! The joint model: structural table, structure-augmented hr encoder, tail
//! encoder, their prefix projectors and the learnable temperature.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::params::{Binder, ParamId, ParamStore};
use crate::structural::{AseKind, PrefixProjector, StructuralTable};
use crate::tensor::{cosine, dot, normalized, Tensor};
use crate::text::{PrefixRows, TextEncoder, TextEncoderConfig};
use crate::tokenizer::Tokenizer;
use crate::NORM_EPS;

const INFERENCE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Structural embedding width `w`.
    pub struct_dim: usize,
    pub ase: AseKind,
    pub text: TextEncoderConfig,
    /// Feed structural prefixes into the text encoders.
    pub use_ase: bool,
    /// One set of text-encoder weights for both the hr and tail sides.
    pub shared_encoders: bool,
    pub tau_init: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.struct_dim == 0 {
            return Err(Error::Config("structural dimension must be positive".into()));
        }
        self.ase.validate(self.struct_dim)?;
        self.text.validate()?;
        if !(crate::loss::TAU_MIN..=crate::loss::TAU_MAX).contains(&self.tau_init) {
            return Err(Error::Config(alloc::format!(
                "initial temperature {} out of range",
                self.tau_init
            )));
        }
        Ok(())
    }
}

/// Token ids for every entity and for `(h, r)` queries.
#[derive(Debug, Clone)]
pub struct TextInputs {
    tokenizer: Tokenizer,
    max_len: usize,
    entity_seqs: Vec<Vec<u32>>,
}

impl TextInputs {
    pub fn new(graph: &KnowledgeGraph, tokenizer: Tokenizer, max_len: usize) -> Self {
        let entity_seqs = graph
            .entities()
            .iter()
            .map(|e| tokenizer.tokenize_entity(e, max_len))
            .collect();
        Self {
            tokenizer,
            max_len,
            entity_seqs,
        }
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn entity_seq(&self, e: EntityId) -> &[u32] {
        &self.entity_seqs[e.0]
    }

    pub fn hr_seq(&self, graph: &KnowledgeGraph, h: EntityId, r: RelationId) -> Vec<u32> {
        self.tokenizer
            .tokenize_hr(graph.entity(h), graph.relation(r), self.max_len)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    table: StructuralTable,
    hr_encoder: TextEncoder,
    tail_encoder: TextEncoder,
    hr_projector: PrefixProjector,
    tail_projector: PrefixProjector,
    log_tau: ParamId,
}

impl Model {
    /// Registers parameters in a fixed order: structural tables, hr encoder,
    /// tail encoder (unless shared), hr projector, tail projector, `ln τ`.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        num_entities: usize,
        num_relations: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let table = StructuralTable::new(
            &mut store,
            rng,
            num_entities,
            num_relations,
            config.struct_dim,
            config.ase,
        )?;
        let hr_encoder = TextEncoder::new(&mut store, rng, "hr", config.text)?;
        let tail_encoder = if config.shared_encoders {
            hr_encoder.clone()
        } else {
            TextEncoder::new(&mut store, rng, "tail", config.text)?
        };
        let (w, l, d) = (config.struct_dim, config.text.layers, config.text.hidden);
        let hr_projector = PrefixProjector::new(&mut store, rng, "hr_prefix", w, l, d);
        let tail_projector = PrefixProjector::new(&mut store, rng, "tail_prefix", w, l, d);
        let log_tau = store.add("log_tau", Tensor::scalar(libm::log(config.tau_init)));
        Ok(Self {
            config,
            store,
            table,
            hr_encoder,
            tail_encoder,
            hr_projector,
            tail_projector,
            log_tau,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn table(&self) -> &StructuralTable {
        &self.table
    }

    pub fn hr_projector(&self) -> &PrefixProjector {
        &self.hr_projector
    }

    pub fn tail_projector(&self) -> &PrefixProjector {
        &self.tail_projector
    }

    pub fn log_tau_param(&self) -> ParamId {
        self.log_tau
    }

    pub fn tau(&self) -> f64 {
        libm::exp(self.store.get(self.log_tau).item())
    }

    /// Parameters mirrored by the momentum key encoder: the tail encoder, the
    /// tail prefix projector and the entity table.
    pub fn momentum_params(&self) -> Vec<ParamId> {
        let mut ids = self.tail_encoder.param_ids();
        ids.push(self.tail_projector.param());
        ids.push(self.table.entity_param());
        ids
    }

    /// `ASE(E_h, E_r)` rows for a batch of queries.
    pub fn query_ase(&self, tape: &mut Tape, b: &mut Binder<'_>, pairs: &[(EntityId, RelationId)]) -> Result<Var> {
        self.table.ase_rows(tape, b, pairs)
    }

    /// Unit `h_hr` rows. `ase` must hold the matching ASE rows when the model
    /// uses structural prefixes.
    pub fn encode_queries(
        &self,
        tape: &mut Tape,
        b: &mut Binder<'_>,
        seqs: &[&[u32]],
        ase: Option<Var>,
    ) -> Result<Var> {
        let prefix = match (self.config.use_ase, ase) {
            (true, Some(a)) => Some(PrefixRows(self.hr_projector.project_rows(tape, b, a)?)),
            (true, None) => return Err(Error::Config("structural prefixes need ASE rows".into())),
            (false, _) => None,
        };
        self.hr_encoder.encode(tape, b, seqs, prefix)
    }

    /// Unit `h_t` rows for entities, with prefixes from `E_t`.
    pub fn encode_tails(
        &self,
        tape: &mut Tape,
        b: &mut Binder<'_>,
        inputs: &TextInputs,
        entities: &[EntityId],
    ) -> Result<Var> {
        let seqs: Vec<&[u32]> = entities.iter().map(|e| inputs.entity_seq(*e)).collect();
        let prefix = if self.config.use_ase {
            let e = self.table.entity_rows(tape, b, entities);
            Some(PrefixRows(self.tail_projector.project_rows(tape, b, e)?))
        } else {
            None
        };
        self.tail_encoder.encode(tape, b, &seqs, prefix)
    }

    /// Tail embeddings of `entities` computed with the weights in `store`
    /// (the online store or a momentum shadow with the same layout).
    pub fn embed_entities_with(
        &self,
        store: &ParamStore,
        inputs: &TextInputs,
        entities: &[EntityId],
    ) -> Result<Tensor> {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(entities.len());
        for chunk in entities.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let mut b = Binder::frozen(store);
            let out = self.encode_tails(&mut tape, &mut b, inputs, chunk)?;
            let t = tape.value(out);
            rows.extend((0..t.rows()).map(|r| t.row(r).to_vec()));
        }
        Ok(Tensor::from_rows(&rows))
    }

    pub fn embed_all_entities(&self, inputs: &TextInputs, num_entities: usize) -> Result<Tensor> {
        let ids: Vec<EntityId> = (0..num_entities).map(EntityId).collect();
        self.embed_entities_with(&self.store, inputs, &ids)
    }

    pub fn embed_queries(
        &self,
        graph: &KnowledgeGraph,
        inputs: &TextInputs,
        pairs: &[(EntityId, RelationId)],
    ) -> Result<Tensor> {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let mut b = Binder::frozen(&self.store);
            let seqs: Vec<Vec<u32>> = chunk.iter().map(|(h, r)| inputs.hr_seq(graph, *h, *r)).collect();
            let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
            let ase = if self.config.use_ase {
                Some(self.query_ase(&mut tape, &mut b, chunk)?)
            } else {
                None
            };
            let out = self.encode_queries(&mut tape, &mut b, &refs, ase)?;
            let t = tape.value(out);
            rows.extend((0..t.rows()).map(|r| t.row(r).to_vec()));
        }
        Ok(Tensor::from_rows(&rows))
    }

    /// `cos(ASE(E_h, E_r), E_t)`.
    pub fn struct_score(&self, h: EntityId, r: RelationId, t: EntityId) -> f64 {
        self.table.score(&self.store, h, r, t)
    }
}

/// Which scores rank candidates at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMode {
    /// `cos(h_hr, h_t)`
    Text,
    /// `cos(ASE(E_h, E_r), E_t)`
    Struct,
    /// text score plus `β` times the structural score
    Combined,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Text => "text",
            ScoreMode::Struct => "struct",
            ScoreMode::Combined => "combined",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ScoreMode::Text),
            "struct" => Ok(ScoreMode::Struct),
            "combined" => Ok(ScoreMode::Combined),
            other => Err(Error::Config(alloc::format!("unknown score mode {other:?}"))),
        }
    }
}

/// Read-only inference snapshot: tail embeddings are computed once.
pub struct ModelScorer<'a> {
    model: &'a Model,
    graph: &'a KnowledgeGraph,
    inputs: &'a TextInputs,
    mode: ScoreMode,
    beta: f64,
    entity_text: Option<Tensor>,
    entity_struct: Tensor,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        model: &'a Model,
        graph: &'a KnowledgeGraph,
        inputs: &'a TextInputs,
        mode: ScoreMode,
        beta: f64,
    ) -> Result<Self> {
        let entity_text = match mode {
            ScoreMode::Struct => None,
            _ => Some(model.embed_all_entities(inputs, graph.num_entities())?),
        };
        let table = model.store.get(model.table.entity_param());
        let rows: Vec<Vec<f64>> = (0..table.rows()).map(|r| normalized(table.row(r), NORM_EPS)).collect();
        Ok(Self {
            model,
            graph,
            inputs,
            mode,
            beta,
            entity_text,
            entity_struct: Tensor::from_rows(&rows),
        })
    }

    pub fn entity_embeddings(&self) -> Option<&Tensor> {
        self.entity_text.as_ref()
    }
}

impl Scorer for ModelScorer<'_> {
    fn num_candidates(&self) -> usize {
        self.graph.num_entities()
    }

    fn score_batch(&self, queries: &[(EntityId, RelationId)]) -> Result<Vec<Vec<f64>>> {
        let text_q = match self.mode {
            ScoreMode::Struct => None,
            _ => Some(self.model.embed_queries(self.graph, self.inputs, queries)?),
        };
        let mut out = Vec::with_capacity(queries.len());
        for (i, (h, r)) in queries.iter().enumerate() {
            let n = self.graph.num_entities();
            let mut scores = alloc::vec![0.0; n];
            if let (Some(q), Some(ents)) = (&text_q, &self.entity_text) {
                for (t, s) in scores.iter_mut().enumerate() {
                    *s = dot(q.row(i), ents.row(t));
                }
            }
            if self.mode != ScoreMode::Text {
                let ase = normalized(&self.model.table.ase(&self.model.store, *h, *r), NORM_EPS);
                let w = if self.mode == ScoreMode::Combined {
                    self.beta
                } else {
                    1.0
                };
                for (t, s) in scores.iter_mut().enumerate() {
                    *s += w * dot(&ase, self.entity_struct.row(t));
                }
            }
            out.push(scores);
        }
        Ok(out)
    }
}

/// Cosine between a query's ASE output and a tail embedding, for callers
/// holding plain vectors.
pub fn struct_cosine(ase: &[f64], tail: &[f64]) -> f64 {
    cosine(ase, tail, NORM_EPS)
}
