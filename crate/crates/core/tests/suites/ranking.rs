//! Ranking, reranking and MIOU against brute-force oracles.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use mocosa_core::eval::{
    aggregate, build_queries, evaluate, filtered_rank, miou, rank_scored, rerank, score_queries, Direction, RankConfig,
    RerankConfig, Scorer,
};
use mocosa_core::graph::{anonymous_entities, anonymous_relations, SplitTriples};
use mocosa_core::{EntityId, Error, KnowledgeGraph, RelationId, Result, Split, SplitSet, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 1000;

fn oracle_rank(scores: &[f64], gold: usize, filter: &HashSet<usize>) -> usize {
    let mut kept: Vec<(f64, bool)> = scores
        .iter()
        .enumerate()
        .filter(|(c, _)| *c == gold || !filter.contains(c))
        .map(|(c, &s)| (s, c == gold))
        .collect();
    // descending by score; among equal scores the gold entry goes last
    kept.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    kept.iter().position(|(_, g)| *g).unwrap() + 1
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // coarse grid so ties are frequent
    (0..n).map(|_| f64::from(rng.gen_range(-4i32..=4)) / 4.0).collect()
}

pub fn filtered_rank_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..40);
        let scores = random_scores(&mut rng, n);
        let gold = rng.gen_range(0..n);
        let filter: HashSet<usize> = (0..n).filter(|&c| c != gold && rng.gen_bool(0.3)).collect();
        let set: BTreeSet<EntityId> = filter.iter().map(|&c| EntityId(c)).collect();
        let got = filtered_rank(&scores, EntityId(gold), &set).unwrap();
        assert_eq!(got, oracle_rank(&scores, gold, &filter));
        assert!(got >= 1 && got <= n - filter.len());
    }
}

pub fn filtered_rank_rejects_filtered_gold() {
    let set: BTreeSet<EntityId> = [EntityId(0)].into();
    assert_eq!(
        filtered_rank(&[1.0, 0.0], EntityId(0), &set),
        Err(Error::GoldFiltered(0))
    );
}

pub fn aggregate_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..INSTANCES {
        let ranks: Vec<usize> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(1..25)).collect();
        let m = aggregate(&ranks).unwrap();
        let mut mrr = 0.0;
        let mut hits = [0usize; 3];
        for &r in &ranks {
            mrr += 1.0 / r as f64;
            for (slot, k) in [1, 3, 10].iter().enumerate() {
                if r <= *k {
                    hits[slot] += 1;
                }
            }
        }
        let n = ranks.len() as f64;
        assert_eq!(m.mrr, mrr / n);
        assert_eq!(m.hits_at_1, hits[0] as f64 / n);
        assert_eq!(m.hits_at_3, hits[1] as f64 / n);
        assert_eq!(m.hits_at_10, hits[2] as f64 / n);
        assert_eq!(m.count, ranks.len());
    }
}

pub fn aggregate_examples() {
    let m = aggregate(&[1, 2]).unwrap();
    assert_eq!((m.mrr, m.hits_at_1, m.hits_at_3), (0.75, 0.5, 1.0));
    let m = aggregate(&[4]).unwrap();
    assert_eq!((m.hits_at_3, m.hits_at_10, m.mrr), (0.0, 1.0, 0.25));
}

pub fn rerank_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..30);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nb: BTreeSet<EntityId> = (0..n).filter(|_| rng.gen_bool(0.4)).map(EntityId).collect();
        let alpha = rng.gen_range(0.0..1.0);
        let got = rerank(&scores, &nb, alpha);
        for c in 0..n {
            let expected = if nb.contains(&EntityId(c)) {
                scores[c]
            } else {
                scores[c] - alpha
            };
            assert_eq!(got[c], expected);
        }
    }
}

pub fn rerank_examples() {
    let s = [0.3, -0.9, 1.0, 0.2];
    assert_eq!(rerank(&s, &BTreeSet::new(), 0.0), s.to_vec());
    let nb: BTreeSet<EntityId> = [EntityId(1)].into();
    let out = rerank(&s, &nb, 10.0);
    assert!(out.iter().enumerate().all(|(c, &v)| c == 1 || v < out[1]));
}

/// A random graph over `n` entities with every split populated.
fn random_graph(rng: &mut ChaCha8Rng) -> KnowledgeGraph {
    let n = rng.gen_range(3..12);
    let r = rng.gen_range(1..4);
    let mut draw = |count: usize| -> Vec<Triple> {
        (0..count)
            .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..r), rng.gen_range(0..n)))
            .collect()
    };
    let train = draw(12);
    let valid = draw(4);
    let test = draw(5);
    KnowledgeGraph::build(
        anonymous_entities(n),
        anonymous_relations(r),
        SplitTriples { train, valid, test },
    )
    .unwrap()
}

fn miou_oracle(graph: &KnowledgeGraph) -> f64 {
    let raw = |split: Split, rel: RelationId| -> HashSet<usize> {
        graph
            .triples(split)
            .iter()
            .filter(|t| t.relation == rel)
            .map(|t| t.tail.0)
            .collect()
    };
    let test = graph.triples(Split::Test);
    let mut total = 0.0;
    for t in test {
        let a = raw(Split::Train, t.relation);
        let b = raw(Split::Test, t.relation);
        if a.is_empty() {
            continue;
        }
        total += a.intersection(&b).count() as f64 / a.union(&b).count() as f64;
    }
    total / test.len() as f64
}

pub fn miou_matches_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..INSTANCES {
        let g = random_graph(&mut rng);
        assert_eq!(miou(&g).unwrap().value, miou_oracle(&g));
    }
}

pub fn miou_extremes() {
    let same = KnowledgeGraph::build(
        anonymous_entities(3),
        anonymous_relations(1),
        SplitTriples {
            train: vec![Triple::new(0, 0, 1), Triple::new(1, 0, 2)],
            test: vec![Triple::new(2, 0, 1), Triple::new(0, 0, 2)],
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(miou(&same).unwrap().value, 1.0);
    let disjoint = KnowledgeGraph::build(
        anonymous_entities(4),
        anonymous_relations(1),
        SplitTriples {
            train: vec![Triple::new(0, 0, 1)],
            test: vec![Triple::new(2, 0, 3)],
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(miou(&disjoint).unwrap().value, 0.0);
}

/// Fixed pseudo-random score for every (h, r, t).
struct PlantedScorer {
    entities: usize,
    relations: usize,
    table: Vec<f64>,
}

impl PlantedScorer {
    fn new(graph: &KnowledgeGraph, rng: &mut ChaCha8Rng) -> Self {
        let (e, r) = (graph.num_entities(), graph.num_relations());
        let table = (0..e * r * e)
            .map(|_| f64::from(rng.gen_range(-3i32..=3)) / 3.0)
            .collect();
        Self {
            entities: e,
            relations: r,
            table,
        }
    }

    fn score(&self, h: usize, r: usize, t: usize) -> f64 {
        self.table[(h * self.relations + r) * self.entities + t]
    }
}

impl Scorer for PlantedScorer {
    fn num_candidates(&self) -> usize {
        self.entities
    }

    fn score_batch(&self, queries: &[(EntityId, RelationId)]) -> Result<Vec<Vec<f64>>> {
        Ok(queries
            .iter()
            .map(|(h, r)| (0..self.entities).map(|t| self.score(h.0, r.0, t)).collect())
            .collect())
    }
}

/// Ranks by enumerating every (query, candidate) pair against raw triple lists.
fn brute_force_ranks(graph: &KnowledgeGraph, s: &PlantedScorer, alpha: f64, nb_splits: &[Split]) -> Vec<usize> {
    let base = graph.num_base_relations();
    let mut facts: HashSet<(usize, usize, usize)> = HashSet::new();
    for split in Split::ALL {
        for t in graph.triples(split) {
            facts.insert((t.head.0, t.relation.0, t.tail.0));
            facts.insert((t.tail.0, t.relation.0 + base, t.head.0));
        }
    }
    let mut neighbors: HashSet<(usize, usize)> = HashSet::new();
    for &split in nb_splits {
        for t in graph.triples(split) {
            neighbors.insert((t.relation.0, t.tail.0));
            neighbors.insert((t.relation.0 + base, t.head.0));
        }
    }
    let mut ranks = Vec::new();
    for t in graph.triples(Split::Test) {
        for (h, r, gold) in [
            (t.head.0, t.relation.0, t.tail.0),
            (t.tail.0, t.relation.0 + base, t.head.0),
        ] {
            let adj = |c: usize| s.score(h, r, c) - if neighbors.contains(&(r, c)) { 0.0 } else { alpha };
            let g = adj(gold);
            let mut rank = 1;
            for c in 0..graph.num_entities() {
                if c != gold && !facts.contains(&(h, r, c)) && adj(c) >= g {
                    rank += 1;
                }
            }
            ranks.push(rank);
        }
    }
    ranks
}

pub fn evaluate_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for i in 0..200 {
        let g = random_graph(&mut rng);
        let s = PlantedScorer::new(&g, &mut rng);
        let (alpha, splits, set) = match i % 3 {
            0 => (0.0, vec![], SplitSet::NONE),
            1 => (0.25, vec![Split::Train], SplitSet::TRAIN),
            _ => (0.5, vec![Split::Train, Split::Valid], SplitSet::TRAIN_VALID),
        };
        let cfg = RankConfig {
            rerank: Some(RerankConfig {
                alpha,
                neighbor_splits: set,
            }),
            ..Default::default()
        };
        let ev = evaluate(&s, &g, Split::Test, &cfg).unwrap();
        let got: Vec<usize> = ev.results.iter().map(|r| r.rank).collect();
        let expected = brute_force_ranks(&g, &s, alpha, &splits);
        assert_eq!(got, expected);
        assert_eq!(ev.report.overall, aggregate(&expected).unwrap());
        let tails: Vec<usize> = expected.iter().step_by(2).copied().collect();
        assert_eq!(ev.report.by_direction[&Direction::Tail], aggregate(&tails).unwrap());
    }
}

pub fn zero_alpha_equals_no_rerank() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..50 {
        let g = random_graph(&mut rng);
        let s = PlantedScorer::new(&g, &mut rng);
        let scored = score_queries(&s, build_queries(&g, Split::Test), 7).unwrap();
        let plain = rank_scored(&g, &scored, &RankConfig::default()).unwrap();
        let zero = rank_scored(
            &g,
            &scored,
            &RankConfig {
                rerank: Some(RerankConfig {
                    alpha: 0.0,
                    neighbor_splits: SplitSet::TRAIN,
                }),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(plain, zero);
    }
}
