//! Immutable knowledge graph with the adjacency indexes used by samplers,
//! filters and re-rankers.
//!
//! Relations are stored with their inverses: a graph built from `R` base
//! relations has `2R` relation ids, where id `r + R` is the inverse of `r`.
//! Every index covers both directions so head prediction can be phrased as
//! tail prediction over `(t, r⁻¹, ?)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head.0, self.relation.0, self.tail.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityRecord {
    pub id: EntityId,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationRecord {
    pub id: RelationId,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

/// A set of splits, e.g. the scope of the known-true filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SplitSet(u8);

impl SplitSet {
    pub const NONE: SplitSet = SplitSet(0);
    pub const TRAIN: SplitSet = SplitSet(1);
    pub const TRAIN_VALID: SplitSet = SplitSet(0b011);
    pub const ALL: SplitSet = SplitSet(0b111);

    pub fn of(splits: &[Split]) -> Self {
        SplitSet(splits.iter().fold(0, |acc, s| acc | s.bit()))
    }

    pub fn contains(self, split: Split) -> bool {
        self.0 & split.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Split> {
        Split::ALL.into_iter().filter(move |s| self.contains(*s))
    }
}

impl fmt::Display for SplitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let mut first = true;
        for s in self.iter() {
            if !first {
                f.write_str("+")?;
            }
            f.write_str(s.name())?;
            first = false;
        }
        Ok(())
    }
}

/// Adjacency indexes over one split, inverse triples included.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndex {
    triples: BTreeSet<Triple>,
    by_relation: BTreeMap<RelationId, BTreeSet<EntityId>>,
    by_pair: BTreeMap<(EntityId, RelationId), BTreeSet<EntityId>>,
}

impl SplitIndex {
    fn insert(&mut self, t: Triple) {
        self.triples.insert(t);
        self.by_relation.entry(t.relation).or_default().insert(t.tail);
        self.by_pair.entry((t.head, t.relation)).or_default().insert(t.tail);
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn tails_by_relation(&self, r: RelationId) -> Option<&BTreeSet<EntityId>> {
        self.by_relation.get(&r)
    }

    pub fn tails_by_pair(&self, h: EntityId, r: RelationId) -> Option<&BTreeSet<EntityId>> {
        self.by_pair.get(&(h, r))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Vec<EntityRecord>,
    relations: Vec<RelationRecord>,
    num_base_relations: usize,
    triples: [Vec<Triple>; 3],
    index: [SplitIndex; 3],
}

/// Triples of each split, all using base relation ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitTriples {
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

/// Textual rendering of an inverse relation's name.
pub fn inverse_relation_name(name: &str) -> String {
    format!("inverse of: {name}")
}

/// Appends `(t, r + num_base, h)` for every `(h, r, t)`, originals first.
pub fn add_inverse_triples(triples: &[Triple], num_base: usize) -> Result<Vec<Triple>> {
    let mut out = Vec::with_capacity(triples.len() * 2);
    out.extend_from_slice(triples);
    for t in triples {
        if t.relation.0 >= num_base {
            return Err(Error::InverseRelation {
                relation: t.relation.0,
                base: num_base,
            });
        }
        out.push(inverse_of(t, num_base));
    }
    Ok(out)
}

/// Maps a triple to its counterpart in the other direction.
pub fn inverse_of(t: &Triple, num_base: usize) -> Triple {
    let r = if t.relation.0 < num_base {
        t.relation.0 + num_base
    } else {
        t.relation.0 - num_base
    };
    Triple::new(t.tail.0, r, t.head.0)
}

impl KnowledgeGraph {
    /// Builds the graph and all indexes. `relations` lists base relations only;
    /// their inverses are derived. Entity and relation records must be ordered
    /// by id with ids `0..n`.
    pub fn build(entities: Vec<EntityRecord>, relations: Vec<RelationRecord>, splits: SplitTriples) -> Result<Self> {
        for (i, e) in entities.iter().enumerate() {
            if e.id.0 != i {
                return Err(Error::Config(format!(
                    "entity record {i} carries id {}; ids must be contiguous",
                    e.id.0
                )));
            }
        }
        for (i, r) in relations.iter().enumerate() {
            if r.id.0 != i {
                return Err(Error::Config(format!(
                    "relation record {i} carries id {}; ids must be contiguous",
                    r.id.0
                )));
            }
        }
        let num_base = relations.len();
        let mut all_relations = relations;
        for i in 0..num_base {
            let base = &all_relations[i];
            all_relations.push(RelationRecord {
                id: RelationId(num_base + i),
                name: inverse_relation_name(&base.name),
                description: base.description.clone(),
            });
        }

        let SplitTriples { train, valid, test } = splits;
        let triples = [train, valid, test];
        let mut index: [SplitIndex; 3] = Default::default();
        for (split, list) in Split::ALL.iter().zip(&triples) {
            for t in list {
                if t.head.0 >= entities.len() {
                    return Err(dangling(*split, *t, "entity", t.head.0));
                }
                if t.tail.0 >= entities.len() {
                    return Err(dangling(*split, *t, "entity", t.tail.0));
                }
                if t.relation.0 >= num_base {
                    return Err(dangling(*split, *t, "relation", t.relation.0));
                }
                let idx = &mut index[*split as usize];
                idx.insert(*t);
                idx.insert(inverse_of(t, num_base));
            }
        }

        Ok(Self {
            entities,
            relations: all_relations,
            num_base_relations: num_base,
            triples,
            index,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Relation count including inverses.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    pub fn entity(&self, id: EntityId) -> &EntityRecord {
        &self.entities[id.0]
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn relation(&self, id: RelationId) -> &RelationRecord {
        &self.relations[id.0]
    }

    pub fn relations(&self) -> &[RelationRecord] {
        &self.relations
    }

    /// Base-relation triples of one split, in input order.
    pub fn triples(&self, split: Split) -> &[Triple] {
        &self.triples[split as usize]
    }

    pub fn split_index(&self, split: Split) -> &SplitIndex {
        &self.index[split as usize]
    }

    /// Training triples followed by their inverses.
    pub fn training_examples(&self) -> Vec<Triple> {
        add_inverse_triples(self.triples(Split::Train), self.num_base_relations)
            .expect("graph triples use base relation ids")
    }

    pub fn inverse_relation(&self, r: RelationId) -> RelationId {
        let n = self.num_base_relations;
        RelationId(if r.0 < n { r.0 + n } else { r.0 - n })
    }

    /// `e(r)` over the training split.
    pub fn tails_by_relation(&self, r: RelationId) -> BTreeSet<EntityId> {
        self.tails_by_relation_in(r, SplitSet::TRAIN)
    }

    /// `e(h, r)` over the training split.
    pub fn tails_by_pair(&self, h: EntityId, r: RelationId) -> BTreeSet<EntityId> {
        self.tails_by_pair_in(h, r, SplitSet::TRAIN)
    }

    pub fn tails_by_relation_in(&self, r: RelationId, splits: SplitSet) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for s in splits.iter() {
            if let Some(set) = self.split_index(s).tails_by_relation(r) {
                out.extend(set.iter().copied());
            }
        }
        out
    }

    pub fn tails_by_pair_in(&self, h: EntityId, r: RelationId, splits: SplitSet) -> BTreeSet<EntityId> {
        let mut out = BTreeSet::new();
        for s in splits.iter() {
            if let Some(set) = self.split_index(s).tails_by_pair(h, r) {
                out.extend(set.iter().copied());
            }
        }
        out
    }

    /// Membership of `(h, r, t)` (either direction) in any of `splits`.
    pub fn is_known_true(&self, h: EntityId, r: RelationId, t: EntityId, splits: SplitSet) -> bool {
        let triple = Triple {
            head: h,
            relation: r,
            tail: t,
        };
        splits.iter().any(|s| self.split_index(s).contains(&triple))
    }

    /// True if `(h, r, t)` is a training fact.
    pub fn is_train_true(&self, h: EntityId, r: RelationId, t: EntityId) -> bool {
        self.split_index(Split::Train).contains(&Triple {
            head: h,
            relation: r,
            tail: t,
        })
    }
}

fn dangling(split: Split, triple: Triple, kind: &'static str, id: usize) -> Error {
    Error::DanglingId {
        split: split.name(),
        triple,
        kind,
        id,
    }
}

/// Entity records named after their ids, with empty descriptions.
pub fn anonymous_entities(n: usize) -> Vec<EntityRecord> {
    (0..n)
        .map(|i| EntityRecord {
            id: EntityId(i),
            name: format!("e{i}"),
            description: String::new(),
        })
        .collect()
}

pub fn anonymous_relations(n: usize) -> Vec<RelationRecord> {
    (0..n)
        .map(|i| RelationRecord {
            id: RelationId(i),
            name: format!("r{i}"),
            description: String::new(),
        })
        .collect()
}
