//! Tab-separated report writers.

use std::fmt::Write as _;

use mocosa_core::eval::{Evaluation, Metrics, MiouReport, RankingReport, SweepRow};

use crate::dataset::Dataset;

pub const SUMMARY_HEADER: &str = "scope\tkey\tcount\tmrr\thits@1\thits@3\thits@10";
pub const TOP_K: usize = 10;

fn metrics_cols(m: &Metrics) -> String {
    format!(
        "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        m.count, m.mrr, m.hits_at_1, m.hits_at_3, m.hits_at_10
    )
}

/// One row for the overall numbers, one per direction and one per query
/// relation (inverse relations appear as `inverse of: <raw>`).
pub fn summary(ds: &Dataset, report: &RankingReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{SUMMARY_HEADER}");
    let _ = writeln!(s, "overall\tall\t{}", metrics_cols(&report.overall));
    for (d, m) in &report.by_direction {
        let _ = writeln!(s, "direction\t{}\t{}", d.as_str(), metrics_cols(m));
    }
    for (r, m) in &report.by_relation {
        let _ = writeln!(s, "relation\t{}\t{}", ds.relation_raw(*r), metrics_cols(m));
    }
    s
}

/// Per-query detail: id, direction, query pair, gold, filtered rank and the
/// best candidates with their scores.
pub fn details(ds: &Dataset, ev: &Evaluation) -> String {
    let mut s = String::from("query\tdirection\thead\trelation\tgold\trank");
    for i in 1..=TOP_K {
        let _ = write!(s, "\tcandidate_{i}\tscore_{i}");
    }
    s.push('\n');
    for (i, r) in ev.results.iter().enumerate() {
        let q = &r.query;
        let _ = write!(
            s,
            "{i}\t{}\t{}\t{}\t{}\t{}",
            q.direction.as_str(),
            ds.entity_raw(q.head),
            ds.relation_raw(q.relation),
            ds.entity_raw(q.gold),
            r.rank
        );
        for (e, score) in &r.top {
            let _ = write!(s, "\t{}\t{score:.6}", ds.entity_raw(*e));
        }
        s.push('\n');
    }
    s
}

/// `h_raw<TAB>r_raw<TAB>rank1..rank10`, one line per query.
pub fn predictions(ds: &Dataset, ev: &Evaluation) -> String {
    let mut s = String::new();
    for r in &ev.results {
        let _ = write!(
            s,
            "{}\t{}",
            ds.entity_raw(r.query.head),
            ds.relation_raw(r.query.relation)
        );
        for (e, _) in &r.top {
            let _ = write!(s, "\t{}", ds.entity_raw(*e));
        }
        s.push('\n');
    }
    s
}

pub fn miou_table(ds: &Dataset, m: &MiouReport) -> String {
    let mut s = format!("miou\t{}\n", m.value);
    let _ = writeln!(s, "relation\ttest_triples\tiou");
    for (r, (count, iou)) in &m.by_relation {
        let _ = writeln!(s, "{}\t{count}\t{iou}", ds.relation_raw(*r));
    }
    s
}

pub const SWEEP_HEADER: &str = "regime\talpha\tcount\tmrr\thits@1\thits@3\thits@10";

pub fn sweep_rows(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}", r.neighbor_splits, r.alpha, metrics_cols(&r.metrics));
    }
    s
}
