//! Negative sources for contrastive training: in-batch negatives with
//! false-negative masking, momentum-queue hard negatives with mixing, and
//! intra-relation negatives.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, norm};

const QUEUE_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    seq: u64,
    entity: Option<EntityId>,
    feature: Vec<f64>,
}

/// Fixed-capacity FIFO of unit-norm feature vectors, optionally tagged with
/// the entity each one encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumQueue {
    capacity: usize,
    dim: usize,
    items: VecDeque<Entry>,
    next_seq: u64,
}

impl MomentumQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            next_seq: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stored features, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.items.iter().map(|e| e.feature.as_slice())
    }

    /// Entity tags, oldest first.
    pub fn entities(&self) -> impl Iterator<Item = Option<EntityId>> + '_ {
        self.items.iter().map(|e| e.entity)
    }

    /// Pushes features in order, evicting the oldest beyond capacity. The
    /// whole call is rejected if any feature is not unit norm.
    pub fn push<F: AsRef<[f64]>>(&mut self, features: &[F]) -> Result<()> {
        self.push_inner(features, None)
    }

    /// Like [`MomentumQueue::push`], tagging `features[i]` with `entities[i]`.
    pub fn push_tagged<F: AsRef<[f64]>>(&mut self, features: &[F], entities: &[EntityId]) -> Result<()> {
        if entities.len() != features.len() {
            return Err(Error::Shape(alloc::format!(
                "{} features but {} entity tags",
                features.len(),
                entities.len()
            )));
        }
        self.push_inner(features, Some(entities))
    }

    fn push_inner<F: AsRef<[f64]>>(&mut self, features: &[F], entities: Option<&[EntityId]>) -> Result<()> {
        for f in features {
            let f = f.as_ref();
            if f.len() != self.dim {
                return Err(Error::Shape(alloc::format!(
                    "queue holds width {}, got {}",
                    self.dim,
                    f.len()
                )));
            }
            let n = norm(f);
            if (n - 1.0).abs() > QUEUE_NORM_TOL {
                return Err(Error::NotUnitNorm(n));
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        for (i, f) in features.iter().enumerate() {
            if self.items.len() == self.capacity {
                self.items.pop_front();
            }
            self.items.push_back(Entry {
                seq: self.next_seq,
                entity: entities.map(|e| e[i]),
                feature: f.as_ref().to_vec(),
            });
            self.next_seq += 1;
        }
        Ok(())
    }

    /// The `k` members with the largest logit `h_hr·p / τ`, highest first;
    /// ties go to the more recent insertion. Returns every member if the queue
    /// holds fewer than `k`.
    pub fn hardest_k(&self, h_hr: &[f64], tau: f64, k: usize) -> Vec<&[f64]> {
        self.hardest_k_excluding(h_hr, tau, k, |_| false)
    }

    /// [`MomentumQueue::hardest_k`] over members whose entity tag does not
    /// satisfy `exclude`. Untagged members are always eligible.
    pub fn hardest_k_excluding(
        &self,
        h_hr: &[f64],
        tau: f64,
        k: usize,
        exclude: impl Fn(EntityId) -> bool,
    ) -> Vec<&[f64]> {
        let mut scored: Vec<(f64, u64, &[f64])> = self
            .items
            .iter()
            .filter(|e| !e.entity.is_some_and(&exclude))
            .map(|e| (dot(h_hr, &e.feature) / tau, e.seq, e.feature.as_slice()))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        scored.truncate(k);
        scored.into_iter().map(|(_, _, p)| p).collect()
    }
}

/// Mixed hard negatives for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct HardNegativeBatch {
    pub vectors: Vec<Vec<f64>>,
    /// Set when fewer than two members were available and raw members were
    /// returned unmixed.
    pub fallback: bool,
}

/// Draws `count` vectors `normalize(λ p_i + (1 − λ) p_j)` with `λ ~ U(0, 1)`
/// and a distinct random pair `(i, j)` from `hardest`.
pub fn mix_hard_negatives<R: Rng + ?Sized>(hardest: &[&[f64]], count: usize, rng: &mut R) -> HardNegativeBatch {
    if hardest.len() < 2 {
        return HardNegativeBatch {
            vectors: hardest.iter().take(count).map(|p| p.to_vec()).collect(),
            fallback: true,
        };
    }
    let vectors = (0..count)
        .map(|_| {
            let pair = sample(rng, hardest.len(), 2);
            let lambda: f64 = rng.gen();
            mix_pair(hardest[pair.index(0)], hardest[pair.index(1)], lambda)
        })
        .collect();
    HardNegativeBatch {
        vectors,
        fallback: false,
    }
}

/// `normalize(λ p_i + (1 − λ) p_j)`.
pub fn mix_pair(p_i: &[f64], p_j: &[f64], lambda: f64) -> Vec<f64> {
    let mixed: Vec<f64> = p_i
        .iter()
        .zip(p_j)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    crate::tensor::normalized(&mixed, crate::NORM_EPS)
}

/// Intra-relation negatives for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrnsSample {
    pub tails: Vec<EntityId>,
    /// Set when `e(r) − e(h, r)` was empty and tails were drawn from all
    /// non-true entities instead.
    pub fallback: bool,
}

/// Up to `n` distinct tails drawn uniformly from `e(r) − e(h, r)` over the
/// training graph; falls back to entities outside `e(h, r)` if that set is
/// empty. Never returns a training-true tail.
pub fn sample_intra_relation<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    h: EntityId,
    r: RelationId,
    n: usize,
    rng: &mut R,
) -> IrnsSample {
    let known = graph.tails_by_pair(h, r);
    let pool: Vec<EntityId> = graph
        .tails_by_relation(r)
        .into_iter()
        .filter(|t| !known.contains(t))
        .collect();
    if !pool.is_empty() {
        return IrnsSample {
            tails: draw(&pool, n, rng),
            fallback: false,
        };
    }
    let pool: Vec<EntityId> = (0..graph.num_entities())
        .map(EntityId)
        .filter(|t| !known.contains(t))
        .collect();
    IrnsSample {
        tails: draw(&pool, n, rng),
        fallback: true,
    }
}

fn draw<R: Rng + ?Sized>(pool: &[EntityId], n: usize, rng: &mut R) -> Vec<EntityId> {
    let n = n.min(pool.len());
    sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
}

/// `mask[q][j]` is true when tail `j` must not serve as a negative for query
/// `q`: it is the query's positive, or `(h_q, r_q, tail_j)` is a training fact.
pub fn in_batch_mask(batch: &[Triple], tails: &[EntityId], graph: &KnowledgeGraph) -> Vec<Vec<bool>> {
    batch
        .iter()
        .map(|q| {
            tails
                .iter()
                .map(|&t| t == q.tail || graph.is_train_true(q.head, q.relation, t))
                .collect()
        })
        .collect()
}

/// Exponential moving average of a subset of online parameters.
#[derive(Debug, Clone)]
pub struct MomentumEncoder {
    shadow: ParamStore,
    tracked: Vec<ParamId>,
    momentum: f64,
}

impl MomentumEncoder {
    /// Starts as an exact copy of `online`.
    pub fn new(online: &ParamStore, tracked: Vec<ParamId>, momentum: f64) -> Self {
        let tracked: BTreeSet<ParamId> = tracked.into_iter().collect();
        Self {
            shadow: online.clone(),
            tracked: tracked.into_iter().collect(),
            momentum,
        }
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn tracked(&self) -> &[ParamId] {
        &self.tracked
    }

    /// Shadow weights with the same layout as the online store. Only tracked
    /// entries are meaningful.
    pub fn store(&self) -> &ParamStore {
        &self.shadow
    }

    /// `θ_key ← m·θ_key + (1 − m)·θ_online` for every tracked parameter.
    pub fn update(&mut self, online: &ParamStore) {
        let m = self.momentum;
        for &id in &self.tracked {
            let src = online.get(id).data();
            for (k, o) in self.shadow.get_mut(id).data_mut().iter_mut().zip(src) {
                *k = m * *k + (1.0 - m) * o;
            }
        }
    }
}
