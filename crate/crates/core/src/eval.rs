//! Filtered link-prediction ranking, neighbor-based reranking and the mean
//! intersection-over-union diagnostic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Split, SplitSet, Triple};

/// Scores every candidate tail for a batch of `(h, r)` queries.
pub trait Scorer {
    fn num_candidates(&self) -> usize;
    /// One row of `num_candidates()` scores per query, higher is better.
    fn score_batch(&self, queries: &[(EntityId, RelationId)]) -> Result<Vec<Vec<f64>>>;
}

/// `1 + #{c ≠ gold, c ∉ filter : score[c] ≥ score[gold]}`.
///
/// Ties rank the gold entity last among equals. `filter` lists other known
/// true tails and must not contain `gold`.
pub fn filtered_rank(scores: &[f64], gold: EntityId, filter: &BTreeSet<EntityId>) -> Result<usize> {
    if filter.contains(&gold) {
        return Err(Error::GoldFiltered(gold.0));
    }
    let Some(&g) = scores.get(gold.0) else {
        return Err(Error::Shape(alloc::format!(
            "gold entity {} outside {} candidates",
            gold.0,
            scores.len()
        )));
    };
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(c, &s)| c != gold.0 && !filter.contains(&EntityId(c)) && !(s < g))
        .count();
    Ok(1 + ahead)
}

/// MRR and Hits@k over a set of ranks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    pub count: usize,
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MRR {:.4}  H@1 {:.4}  H@3 {:.4}  H@10 {:.4}  (n={})",
            self.mrr, self.hits_at_1, self.hits_at_3, self.hits_at_10, self.count
        )
    }
}

pub fn aggregate(ranks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::EmptyRanks);
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits_at_1: frac(1),
        hits_at_3: frac(3),
        hits_at_10: frac(10),
        count: ranks.len(),
    })
}

/// `score − α` for every candidate outside `neighbors`.
pub fn rerank(scores: &[f64], neighbors: &BTreeSet<EntityId>, alpha: f64) -> Vec<f64> {
    scores
        .iter()
        .enumerate()
        .map(|(c, &s)| if neighbors.contains(&EntityId(c)) { s } else { s - alpha })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// `(h, r, ?)`
    Tail,
    /// `(t, r⁻¹, ?)`
    Head,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Tail => "tail",
            Direction::Head => "head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub head: EntityId,
    pub relation: RelationId,
    pub gold: EntityId,
    pub direction: Direction,
    /// The evaluated triple in its original orientation.
    pub triple: Triple,
}

/// Tail and head queries for every triple of a split, in triple order with the
/// tail query first.
pub fn build_queries(graph: &KnowledgeGraph, split: Split) -> Vec<Query> {
    let mut out = Vec::with_capacity(2 * graph.triples(split).len());
    for t in graph.triples(split) {
        out.push(Query {
            head: t.head,
            relation: t.relation,
            gold: t.tail,
            direction: Direction::Tail,
            triple: *t,
        });
        out.push(Query {
            head: t.tail,
            relation: graph.inverse_relation(t.relation),
            gold: t.head,
            direction: Direction::Head,
            triple: *t,
        });
    }
    out
}

/// Raw scores for a query list, computed once and reused across filtering
/// and reranking settings.
#[derive(Debug, Clone)]
pub struct ScoredQueries {
    pub queries: Vec<Query>,
    pub scores: Vec<Vec<f64>>,
}

pub fn score_queries<S: Scorer + ?Sized>(scorer: &S, queries: Vec<Query>, chunk: usize) -> Result<ScoredQueries> {
    let mut scores = Vec::with_capacity(queries.len());
    for part in queries.chunks(chunk.max(1)) {
        let pairs: Vec<(EntityId, RelationId)> = part.iter().map(|q| (q.head, q.relation)).collect();
        let rows = scorer.score_batch(&pairs)?;
        if rows.len() != part.len() || rows.iter().any(|r| r.len() != scorer.num_candidates()) {
            return Err(Error::Shape("scorer returned a malformed score matrix".into()));
        }
        scores.extend(rows);
    }
    Ok(ScoredQueries { queries, scores })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankConfig {
    pub alpha: f64,
    /// Splits whose tails of the query relation count as neighbors.
    pub neighbor_splits: SplitSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankConfig {
    /// Splits whose facts are removed from the candidate list.
    pub filter_splits: SplitSet,
    pub rerank: Option<RerankConfig>,
    /// How many top candidates to keep per query.
    pub keep_top: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            filter_splits: SplitSet::ALL,
            rerank: None,
            keep_top: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub query: Query,
    pub rank: usize,
    /// Best filtered candidates with their final scores, gold included.
    pub top: Vec<(EntityId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub overall: Metrics,
    pub by_direction: BTreeMap<Direction, Metrics>,
    /// Keyed by the query relation, inverse relations included.
    pub by_relation: BTreeMap<RelationId, Metrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: RankingReport,
    pub results: Vec<QueryResult>,
}

pub fn rank_scored(graph: &KnowledgeGraph, scored: &ScoredQueries, config: &RankConfig) -> Result<Evaluation> {
    let mut results = Vec::with_capacity(scored.queries.len());
    for (q, raw) in scored.queries.iter().zip(&scored.scores) {
        let scores = match config.rerank {
            Some(rc) if rc.alpha != 0.0 => {
                let nb = graph.tails_by_relation_in(q.relation, rc.neighbor_splits);
                rerank(raw, &nb, rc.alpha)
            }
            _ => raw.clone(),
        };
        let mut filter = graph.tails_by_pair_in(q.head, q.relation, config.filter_splits);
        filter.remove(&q.gold);
        let rank = filtered_rank(&scores, q.gold, &filter)?;
        let top = top_candidates(&scores, &filter, config.keep_top);
        results.push(QueryResult { query: *q, rank, top });
    }
    let report = report_from(&results)?;
    Ok(Evaluation { report, results })
}

fn top_candidates(scores: &[f64], filter: &BTreeSet<EntityId>, k: usize) -> Vec<(EntityId, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let mut all: Vec<(EntityId, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(c, _)| !filter.contains(&EntityId(*c)))
        .map(|(c, &s)| (EntityId(c), s))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn collect<K: Ord>(m: BTreeMap<K, Vec<usize>>) -> Result<BTreeMap<K, Metrics>> {
    m.into_iter().map(|(k, v)| Ok((k, aggregate(&v)?))).collect()
}

pub fn report_from(results: &[QueryResult]) -> Result<RankingReport> {
    let ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    let overall = aggregate(&ranks)?;
    let mut dir: BTreeMap<Direction, Vec<usize>> = BTreeMap::new();
    let mut rel: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for r in results {
        dir.entry(r.query.direction).or_default().push(r.rank);
        rel.entry(r.query.relation).or_default().push(r.rank);
    }
    Ok(RankingReport {
        overall,
        by_direction: collect(dir)?,
        by_relation: collect(rel)?,
    })
}

/// Scores and ranks both directions of every triple in `split`.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    graph: &KnowledgeGraph,
    split: Split,
    config: &RankConfig,
) -> Result<Evaluation> {
    let scored = score_queries(scorer, build_queries(graph, split), 64)?;
    rank_scored(graph, &scored, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub neighbor_splits: SplitSet,
    pub alpha: f64,
    pub metrics: Metrics,
}

/// Every `(regime, α)` combination over one set of raw scores.
pub fn rerank_sweep(
    graph: &KnowledgeGraph,
    scored: &ScoredQueries,
    filter_splits: SplitSet,
    regimes: &[SplitSet],
    alphas: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &neighbor_splits in regimes {
        for &alpha in alphas {
            let cfg = RankConfig {
                filter_splits,
                rerank: Some(RerankConfig { alpha, neighbor_splits }),
                keep_top: 0,
            };
            let ev = rank_scored(graph, scored, &cfg)?;
            rows.push(SweepRow {
                neighbor_splits,
                alpha,
                metrics: ev.report.overall,
            });
        }
    }
    Ok(rows)
}

/// The row with the highest MRR for a regime; earlier rows win ties.
pub fn best_alpha(rows: &[SweepRow], regime: SplitSet) -> Option<&SweepRow> {
    rows.iter()
        .filter(|r| r.neighbor_splits == regime)
        .fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if b.metrics.mrr >= r.metrics.mrr => Some(b),
            _ => Some(r),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiouReport {
    pub value: f64,
    /// Per base relation: number of test triples and their mean IoU.
    pub by_relation: BTreeMap<RelationId, (usize, f64)>,
}

/// Mean over test triples of `|T_train(r) ∩ T_test(r)| / |T_train(r) ∪ T_test(r)|`,
/// where `T_split(r)` is the tail set of relation `r` in that split. Triples
/// whose relation never occurs in training contribute 0.
pub fn miou(graph: &KnowledgeGraph) -> Result<MiouReport> {
    let test = graph.triples(Split::Test);
    if test.is_empty() {
        return Err(Error::EmptyRanks);
    }
    let mut by_relation: BTreeMap<RelationId, (usize, f64)> = BTreeMap::new();
    let mut iou_cache: BTreeMap<RelationId, f64> = BTreeMap::new();
    let mut total = 0.0;
    for t in test {
        let iou = *iou_cache.entry(t.relation).or_insert_with(|| {
            let train = graph.split_index(Split::Train).tails_by_relation(t.relation);
            let held = graph.split_index(Split::Test).tails_by_relation(t.relation);
            match (train, held) {
                (Some(a), Some(b)) => {
                    let inter = a.intersection(b).count() as f64;
                    let union = a.union(b).count() as f64;
                    inter / union
                }
                _ => 0.0,
            }
        });
        total += iou;
        let e = by_relation.entry(t.relation).or_insert((0, 0.0));
        e.0 += 1;
        e.1 = iou;
    }
    Ok(MiouReport {
        value: total / test.len() as f64,
        by_relation,
    })
}
