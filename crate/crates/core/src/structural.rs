//! Structural embeddings, the adaptable structural encoder (ASE) and the
//! projector that turns a structural vector into per-layer attention prefixes.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{EntityId, RelationId};
use crate::params::{uniform, Binder, ParamId, ParamStore};
use crate::tensor::{cosine, Tensor};
use crate::NORM_EPS;

/// How head and relation embeddings are combined before scoring a tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AseKind {
    /// `e_h + e_r`
    Additive,
    /// `e_h ⊙ e_r`
    Hadamard,
    /// Complex rotation of `e_h` by the unit-modulus phases of `e_r`.
    Rotation,
}

impl AseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AseKind::Additive => "additive",
            AseKind::Hadamard => "hadamard",
            AseKind::Rotation => "rotation",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            AseKind::Additive => 0,
            AseKind::Hadamard => 1,
            AseKind::Rotation => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(AseKind::Additive),
            1 => Some(AseKind::Hadamard),
            2 => Some(AseKind::Rotation),
            _ => None,
        }
    }

    pub fn validate(self, dim: usize) -> Result<()> {
        if self == AseKind::Rotation && !dim.is_multiple_of(2) {
            return Err(Error::Config(alloc::format!(
                "rotation ASE needs an even structural dimension, got {dim}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for AseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(AseKind::Additive),
            "hadamard" => Ok(AseKind::Hadamard),
            "rotation" => Ok(AseKind::Rotation),
            other => Err(Error::Config(alloc::format!("unknown ASE kind {other:?}"))),
        }
    }
}

/// Applies the ASE map to plain vectors.
pub fn ase_apply(kind: AseKind, e_h: &[f64], e_r: &[f64]) -> Result<Vec<f64>> {
    if e_h.len() != e_r.len() {
        return Err(Error::Shape(alloc::format!(
            "ASE inputs differ in width: {} vs {}",
            e_h.len(),
            e_r.len()
        )));
    }
    kind.validate(e_h.len())?;
    Ok(match kind {
        AseKind::Additive => e_h.iter().zip(e_r).map(|(a, b)| a + b).collect(),
        AseKind::Hadamard => e_h.iter().zip(e_r).map(|(a, b)| a * b).collect(),
        AseKind::Rotation => {
            let mut out = Vec::with_capacity(e_h.len());
            for (x, p) in e_h.chunks_exact(2).zip(e_r.chunks_exact(2)) {
                let rho = libm::sqrt(p[0] * p[0] + p[1] * p[1]).max(NORM_EPS);
                let (u, w) = (p[0] / rho, p[1] / rho);
                out.push(x[0] * u - x[1] * w);
                out.push(x[0] * w + x[1] * u);
            }
            out
        }
    })
}

/// Trainable entity and relation embedding tables.
#[derive(Debug, Clone)]
pub struct StructuralTable {
    entity: ParamId,
    relation: ParamId,
    dim: usize,
    kind: AseKind,
}

impl StructuralTable {
    /// Registers both tables, initialised uniformly in `±0.5/√w`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        kind: AseKind,
    ) -> Result<Self> {
        kind.validate(dim)?;
        let bound = 0.5 / libm::sqrt(dim as f64);
        let entity = store.add("struct.entity", uniform(rng, num_entities, dim, bound));
        let relation = store.add("struct.relation", uniform(rng, num_relations, dim, bound));
        Ok(Self {
            entity,
            relation,
            dim,
            kind,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> AseKind {
        self.kind
    }

    pub fn entity_param(&self) -> ParamId {
        self.entity
    }

    pub fn relation_param(&self) -> ParamId {
        self.relation
    }

    pub fn entity_row<'a>(&self, store: &'a ParamStore, e: EntityId) -> &'a [f64] {
        store.get(self.entity).row(e.0)
    }

    pub fn relation_row<'a>(&self, store: &'a ParamStore, r: RelationId) -> &'a [f64] {
        store.get(self.relation).row(r.0)
    }

    /// `ASE(E_h, E_r)` for plain stored values.
    pub fn ase(&self, store: &ParamStore, h: EntityId, r: RelationId) -> Vec<f64> {
        ase_apply(self.kind, self.entity_row(store, h), self.relation_row(store, r))
            .expect("table dims validated at construction")
    }

    /// `cos(ASE(E_h, E_r), E_t)`.
    pub fn score(&self, store: &ParamStore, h: EntityId, r: RelationId, t: EntityId) -> f64 {
        cosine(&self.ase(store, h, r), self.entity_row(store, t), NORM_EPS)
    }

    /// ASE outputs for a batch of `(h, r)` pairs on the tape, `n × w`.
    pub fn ase_rows(&self, tape: &mut Tape, binder: &mut Binder<'_>, pairs: &[(EntityId, RelationId)]) -> Result<Var> {
        let ent = binder.var(tape, self.entity);
        let rel = binder.var(tape, self.relation);
        let hs: Vec<usize> = pairs.iter().map(|(h, _)| h.0).collect();
        let rs: Vec<usize> = pairs.iter().map(|(_, r)| r.0).collect();
        let h = tape.gather_rows(ent, &hs);
        let r = tape.gather_rows(rel, &rs);
        match self.kind {
            AseKind::Additive => tape.add(h, r),
            AseKind::Hadamard => tape.mul(h, r),
            AseKind::Rotation => tape.pair_rotate(h, r, NORM_EPS),
        }
    }

    pub fn entity_rows(&self, tape: &mut Tape, binder: &mut Binder<'_>, ids: &[EntityId]) -> Var {
        let ent = binder.var(tape, self.entity);
        let idx: Vec<usize> = ids.iter().map(|e| e.0).collect();
        tape.gather_rows(ent, &idx)
    }
}

/// Structural score matrix `cos(ASE(h_q, r_q), E_{t_j})` on the tape.
pub fn struct_score_matrix(tape: &mut Tape, ase: Var, tails: Var) -> Result<Var> {
    let a = tape.l2_normalize_rows(ase, NORM_EPS);
    let t = tape.l2_normalize_rows(tails, NORM_EPS);
    tape.matmul_bt(a, t)
}

/// Key and value prefix of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPrefix {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
}

/// `W_out ∈ R^{w × 2·l·d}`; output columns are laid out layer-major with the
/// key block before the value block.
#[derive(Debug, Clone)]
pub struct PrefixProjector {
    weight: ParamId,
    input_dim: usize,
    layers: usize,
    hidden: usize,
}

impl PrefixProjector {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input_dim: usize,
        layers: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(input_dim as f64);
        let weight = store.add(
            alloc::format!("{name}.w_out"),
            uniform(rng, input_dim, 2 * layers * hidden, bound),
        );
        Self {
            weight,
            input_dim,
            layers,
            hidden,
        }
    }

    pub fn param(&self) -> ParamId {
        self.weight
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output_width(&self) -> usize {
        2 * self.layers * self.hidden
    }

    /// Projects `n × w` structural rows to `n × 2ld` prefix rows.
    pub fn project_rows(&self, tape: &mut Tape, binder: &mut Binder<'_>, rows: Var) -> Result<Var> {
        let w = binder.var(tape, self.weight);
        tape.matmul(rows, w)
    }

    /// Column offsets of the key and value blocks of `layer`.
    pub fn key_offset(&self, layer: usize) -> usize {
        layer * 2 * self.hidden
    }

    pub fn value_offset(&self, layer: usize) -> usize {
        layer * 2 * self.hidden + self.hidden
    }

    /// Plain-vector projection split into per-layer prefixes.
    pub fn project(&self, store: &ParamStore, e: &[f64]) -> Result<Vec<LayerPrefix>> {
        if e.len() != self.input_dim {
            return Err(Error::Shape(alloc::format!(
                "prefix projector expects width {}, got {}",
                self.input_dim,
                e.len()
            )));
        }
        let flat = Tensor::row_vector(e.to_vec()).matmul(store.get(self.weight))?;
        let d = self.hidden;
        Ok((0..self.layers)
            .map(|l| LayerPrefix {
                key: flat.data()[self.key_offset(l)..self.key_offset(l) + d].to_vec(),
                value: flat.data()[self.value_offset(l)..self.value_offset(l) + d].to_vec(),
            })
            .collect())
    }
}
