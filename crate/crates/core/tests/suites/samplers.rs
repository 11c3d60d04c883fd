//! Negative-sampler contracts checked against list and set oracles.

#![allow(dead_code)]

use std::collections::HashSet;

use mocosa_core::graph::{anonymous_entities, anonymous_relations, SplitTriples};
use mocosa_core::negatives::{
    in_batch_mask, mix_hard_negatives, mix_pair, sample_intra_relation, MomentumEncoder, MomentumQueue,
};
use mocosa_core::params::ParamStore;
use mocosa_core::{EntityId, KnowledgeGraph, Tensor, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn toy_graph(rng: &mut ChaCha8Rng, entities: usize, relations: usize, triples: usize) -> KnowledgeGraph {
    let train = (0..triples)
        .map(|_| {
            Triple::new(
                rng.gen_range(0..entities),
                rng.gen_range(0..relations),
                rng.gen_range(0..entities),
            )
        })
        .collect();
    KnowledgeGraph::build(
        anonymous_entities(entities),
        anonymous_relations(relations),
        SplitTriples {
            train,
            ..Default::default()
        },
    )
    .unwrap()
}

pub fn irns_never_returns_a_training_fact() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let g = toy_graph(&mut rng, 15, 3, 60);
        let facts: HashSet<(usize, usize, usize)> = g
            .training_examples()
            .iter()
            .map(|t| (t.head.0, t.relation.0, t.tail.0))
            .collect();
        // one full epoch of queries, inverse examples included
        for t in g.training_examples() {
            let s = sample_intra_relation(&g, t.head, t.relation, 3, &mut rng);
            let distinct: HashSet<EntityId> = s.tails.iter().copied().collect();
            assert_eq!(distinct.len(), s.tails.len());
            assert!(s.tails.len() <= 3);
            for neg in &s.tails {
                assert!(!facts.contains(&(t.head.0, t.relation.0, neg.0)), "{t} sampled {neg:?}");
            }
            if !s.fallback {
                let pool: HashSet<usize> = facts.iter().filter(|f| f.1 == t.relation.0).map(|f| f.2).collect();
                assert!(s.tails.iter().all(|e| pool.contains(&e.0)));
            }
        }
    }
}

pub fn queue_matches_list_slicing() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let cap = rng.gen_range(1..12);
        let mut q = MomentumQueue::new(cap, 3);
        let mut all: Vec<Vec<f64>> = Vec::new();
        for _ in 0..rng.gen_range(0..10) {
            let chunk: Vec<Vec<f64>> = (0..rng.gen_range(0..5)).map(|_| unit(&mut rng, 3)).collect();
            q.push(&chunk).unwrap();
            all.extend(chunk);
            let start = all.len().saturating_sub(cap);
            let held: Vec<Vec<f64>> = q.iter().map(<[f64]>::to_vec).collect();
            assert_eq!(held, all[start..].to_vec());
        }
    }
}

fn sort_oracle(members: &[Vec<f64>], h: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut idx: Vec<usize> = (0..members.len()).collect();
    let dot = |p: &[f64]| p.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    // highest logit first, later insertions first among equals
    idx.sort_by(|&a, &b| dot(&members[b]).partial_cmp(&dot(&members[a])).unwrap().then(b.cmp(&a)));
    idx.into_iter().take(k).map(|i| members[i].clone()).collect()
}

pub fn hardest_k_matches_sort_and_ignores_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let members: Vec<Vec<f64>> = (0..50).map(|_| unit(&mut rng, 4)).collect();
        let mut q = MomentumQueue::new(64, 4);
        q.push(&members).unwrap();
        let h = unit(&mut rng, 4);
        let expected = sort_oracle(&members, &h, 8);
        for tau in [0.01, 0.05, 0.3, 1.0, 7.5] {
            let got: Vec<Vec<f64>> = q.hardest_k(&h, tau, 8).into_iter().map(<[f64]>::to_vec).collect();
            assert_eq!(got, expected, "tau {tau}");
        }
        // k at or beyond the queue size returns everything, sorted
        let all: Vec<Vec<f64>> = q.hardest_k(&h, 0.05, 80).into_iter().map(<[f64]>::to_vec).collect();
        assert_eq!(all, sort_oracle(&members, &h, 50));
    }
}

pub fn mixed_negatives_are_unit_and_span_the_arc() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (p, q) = ([1.0, 0.0], [0.0, 1.0]);
    let out = mix_hard_negatives(&[&p, &q], 10_000, &mut rng);
    assert!(!out.fallback);
    let mut lo: f64 = 90.0;
    let mut hi: f64 = 0.0;
    for v in &out.vectors {
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!((n - 1.0).abs() <= 1e-9);
        let angle = v[1].atan2(v[0]).to_degrees();
        assert!((0.0..=90.0).contains(&angle));
        lo = lo.min(angle);
        hi = hi.max(angle);
    }
    assert!(lo < 2.0 && hi > 88.0, "mixture angles cover [{lo}, {hi}]");
}

pub fn mixed_negatives_stay_in_the_parent_cone() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..500 {
        let parents: Vec<Vec<f64>> = (0..5).map(|_| unit(&mut rng, 6)).collect();
        let refs: Vec<&[f64]> = parents.iter().map(Vec::as_slice).collect();
        for v in mix_hard_negatives(&refs, 8, &mut rng).vectors {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-9);
            // some pair of parents must reproduce v with non-negative weights
            let fits = (0..5).any(|i| {
                (0..5).any(|j| {
                    i != j && {
                        let (a, b) = (&parents[i], &parents[j]);
                        let (aa, bb, ab) = (dot(a, a), dot(b, b), dot(a, b));
                        let (av, bv) = (dot(a, &v), dot(b, &v));
                        let det = aa * bb - ab * ab;
                        let x = (av * bb - bv * ab) / det;
                        let y = (bv * aa - av * ab) / det;
                        let resid: f64 = (0..6).map(|k| (x * a[k] + y * b[k] - v[k]).powi(2)).sum();
                        x >= -1e-9 && y >= -1e-9 && resid < 1e-18
                    }
                })
            });
            assert!(fits);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mix_examples() {
    let m = mix_pair(&[1.0, 0.0], &[0.0, 1.0], 0.5);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((m[0] - h).abs() < 1e-12 && (m[1] - h).abs() < 1e-12);
}

pub fn in_batch_mask_matches_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..200 {
        let g = toy_graph(&mut rng, 8, 2, 20);
        let examples = g.training_examples();
        let batch: Vec<Triple> = (0..6).map(|_| examples[rng.gen_range(0..examples.len())]).collect();
        let tails: Vec<EntityId> = batch.iter().map(|t| t.tail).collect();
        let facts: HashSet<Triple> = examples.iter().copied().collect();
        let mask = in_batch_mask(&batch, &tails, &g);
        for (q, row) in mask.iter().enumerate() {
            for (j, &m) in row.iter().enumerate() {
                let expected = tails[j] == batch[q].tail
                    || facts.contains(&Triple {
                        head: batch[q].head,
                        relation: batch[q].relation,
                        tail: tails[j],
                    });
                assert_eq!(m, expected);
            }
        }
    }
}

pub fn momentum_update_matches_ema_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut online = ParamStore::new();
    let id = online.add("w", Tensor::new(2, 3, (0..6).map(|_| rng.gen()).collect()).unwrap());
    let mut enc = MomentumEncoder::new(&online, vec![id], 0.999);
    for _ in 0..5 {
        let prev = enc.store().get(id).clone();
        *online.get_mut(id) = Tensor::new(2, 3, (0..6).map(|_| rng.gen()).collect()).unwrap();
        enc.update(&online);
        let m: f64 = 0.999;
        let worst = prev
            .data()
            .iter()
            .zip(online.get(id).data())
            .zip(enc.store().get(id).data())
            .map(|((p, o), k)| (k - (m * p + (1.0 - m) * o)).abs())
            .fold(0.0, f64::max);
        assert_eq!(worst, 0.0);
    }
}
