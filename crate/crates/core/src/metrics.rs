//! HitRate@k, MRR@k and NDCG@k over binary relevance.
//!
//! Conventions follow trec_eval: ranks start at 1, the NDCG discount is
//! `1 / log2(rank + 1)` and the gain is the raw binary relevance. Queries that
//! have judgments but no ranking in the run count as zero for every metric.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::RankedRun;

pub const DEFAULT_CUTOFFS: [usize; 4] = [1, 3, 5, 10];

/// Binary relevance judgments: query id to the set of relevant doc ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrels {
    relevant: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>) {
        self.relevant
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into());
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.relevant.get(query_id)
    }

    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.relevant
            .get(query_id)
            .is_some_and(|set| set.contains(doc_id))
    }

    /// Queries with at least one relevant document, sorted by id.
    pub fn queries(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.relevant
            .iter()
            .filter(|(_, docs)| !docs.is_empty())
            .map(|(q, docs)| (q.as_str(), docs))
    }

    pub fn n_queries(&self) -> usize {
        self.queries().count()
    }

    pub fn n_pairs(&self) -> usize {
        self.relevant.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_queries() == 0
    }
}

impl FromIterator<(String, String)> for Qrels {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        let mut qrels = Qrels::new();
        for (q, d) in iter {
            qrels.insert(q, d);
        }
        qrels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    HitRate,
    Mrr,
    Ndcg,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::HitRate, Metric::Mrr, Metric::Ndcg];

    pub fn name(self) -> &'static str {
        match self {
            Metric::HitRate => "hitrate",
            Metric::Mrr => "mrr",
            Metric::Ndcg => "ndcg",
        }
    }

    /// Score of a single ranking. `ranked` is the relevance of each retrieved
    /// document in rank order, `n_relevant` the size of the judged set.
    pub fn score(self, ranked: &[bool], n_relevant: usize, k: usize) -> f64 {
        let top = &ranked[..ranked.len().min(k)];
        match self {
            Metric::HitRate => {
                if top.iter().any(|&r| r) {
                    1.0
                } else {
                    0.0
                }
            }
            Metric::Mrr => top
                .iter()
                .position(|&r| r)
                .map_or(0.0, |i| 1.0 / (i + 1) as f64),
            Metric::Ndcg => {
                let ideal = ideal_dcg(n_relevant, k);
                if ideal == 0.0 {
                    return 0.0;
                }
                let dcg: f64 = top
                    .iter()
                    .enumerate()
                    .filter(|(_, &r)| r)
                    .map(|(i, _)| discount(i + 1))
                    .sum();
                dcg / ideal
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

fn ideal_dcg(n_relevant: usize, k: usize) -> f64 {
    (1..=n_relevant.min(k)).map(discount).sum()
}

fn relevance_flags(run: &RankedRun, query_id: &str, relevant: &BTreeSet<String>) -> Vec<bool> {
    run.ranking(query_id)
        .map(|list| list.iter().map(|(doc, _)| relevant.contains(doc)).collect())
        .unwrap_or_default()
}

fn mean_over_queries(run: &RankedRun, qrels: &Qrels, metric: Metric, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("cutoff k must be at least 1".into()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (query_id, relevant) in qrels.queries() {
        let flags = relevance_flags(run, query_id, relevant);
        total += metric.score(&flags, relevant.len(), k);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyQrels);
    }
    Ok(total / n as f64)
}

pub fn hitrate_at_k(run: &RankedRun, qrels: &Qrels, k: usize) -> Result<f64> {
    mean_over_queries(run, qrels, Metric::HitRate, k)
}

pub fn mrr_at_k(run: &RankedRun, qrels: &Qrels, k: usize) -> Result<f64> {
    mean_over_queries(run, qrels, Metric::Mrr, k)
}

pub fn ndcg_at_k(run: &RankedRun, qrels: &Qrels, k: usize) -> Result<f64> {
    mean_over_queries(run, qrels, Metric::Ndcg, k)
}

/// Metric values keyed `metric@k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_queries: usize,
    pub cutoffs: Vec<usize>,
    pub values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_query: Option<BTreeMap<String, BTreeMap<String, f64>>>,
}

pub fn metric_key(metric: Metric, k: usize) -> String {
    format!("{}@{}", metric.name(), k)
}

impl MetricReport {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        self.values.get(&metric_key(metric, k)).copied()
    }

    /// The JSON object keyed `metric@k`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.values).expect("metric values serialize")
    }

    /// Aligned text table, one row per cutoff.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>6}", "k");
        for m in Metric::ALL {
            let _ = write!(out, " {:>10}", m.name());
        }
        out.push('\n');
        for &k in &self.cutoffs {
            let _ = write!(out, "{k:>6}");
            for m in Metric::ALL {
                let _ = write!(out, " {:>10.4}", self.get(m, k).unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "queries: {}", self.n_queries);
        out
    }
}

/// Computes every metric at every cutoff.
pub fn evaluate_run(run: &RankedRun, qrels: &Qrels, cutoffs: &[usize], per_query: bool) -> Result<MetricReport> {
    if qrels.is_empty() {
        return Err(Error::EmptyQrels);
    }
    let mut values = BTreeMap::new();
    for &k in cutoffs {
        for m in Metric::ALL {
            values.insert(metric_key(m, k), mean_over_queries(run, qrels, m, k)?);
        }
    }
    let per_query = per_query.then(|| {
        qrels
            .queries()
            .map(|(query_id, relevant)| {
                let flags = relevance_flags(run, query_id, relevant);
                let scores = cutoffs
                    .iter()
                    .flat_map(|&k| {
                        let flags = &flags;
                        Metric::ALL
                            .into_iter()
                            .map(move |m| (metric_key(m, k), m.score(flags, relevant.len(), k)))
                    })
                    .collect();
                (query_id.to_string(), scores)
            })
            .collect()
    });
    Ok(MetricReport {
        n_queries: qrels.n_queries(),
        cutoffs: cutoffs.to_vec(),
        values,
        per_query,
    })
}

/// Reads a TREC run and TREC qrels from disk and evaluates.
pub fn evaluate(
    run_path: impl AsRef<std::path::Path>,
    qrels_path: impl AsRef<std::path::Path>,
    cutoffs: &[usize],
) -> Result<MetricReport> {
    let run = crate::trec::read_run(run_path)?;
    let qrels = crate::trec::read_qrels(qrels_path)?;
    evaluate_run(&run, &qrels, cutoffs, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_of(rankings: &[(&str, &[&str])]) -> RankedRun {
        let mut run = RankedRun::new();
        for (q, docs) in rankings {
            let n = docs.len();
            run.insert(
                *q,
                docs.iter()
                    .enumerate()
                    .map(|(i, d)| (d.to_string(), (n - i) as f64))
                    .collect(),
            );
        }
        run
    }

    fn qrels_of(pairs: &[(&str, &str)]) -> Qrels {
        pairs
            .iter()
            .map(|(q, d)| (q.to_string(), d.to_string()))
            .collect()
    }

    fn ranking_with_rel_at(rank: usize, len: usize) -> Vec<String> {
        (1..=len)
            .map(|i| if i == rank { "rel".to_string() } else { format!("x{i}") })
            .collect()
    }

    #[test]
    fn hitrate_examples() {
        let q = qrels_of(&[("q", "rel")]);
        let r = ranking_with_rel_at(1, 10);
        let refs: Vec<&str> = r.iter().map(String::as_str).collect();
        assert_eq!(hitrate_at_k(&run_of(&[("q", &refs)]), &q, 1).unwrap(), 1.0);

        let r = ranking_with_rel_at(6, 10);
        let refs: Vec<&str> = r.iter().map(String::as_str).collect();
        assert_eq!(hitrate_at_k(&run_of(&[("q", &refs)]), &q, 5).unwrap(), 0.0);

        let q2 = qrels_of(&[("a", "rel"), ("b", "rel")]);
        let ra = ranking_with_rel_at(2, 10);
        let rb = ranking_with_rel_at(7, 10);
        let ra: Vec<&str> = ra.iter().map(String::as_str).collect();
        let rb: Vec<&str> = rb.iter().map(String::as_str).collect();
        let run = run_of(&[("a", &ra), ("b", &rb)]);
        assert_eq!(hitrate_at_k(&run, &q2, 5).unwrap(), 0.5);
    }

    #[test]
    fn mrr_examples() {
        let q = qrels_of(&[("q", "rel")]);
        for (rank, expected) in [(1, 1.0), (3, 1.0 / 3.0)] {
            let r = ranking_with_rel_at(rank, 10);
            let refs: Vec<&str> = r.iter().map(String::as_str).collect();
            assert_eq!(mrr_at_k(&run_of(&[("q", &refs)]), &q, 5).unwrap(), expected);
        }
        let q2 = qrels_of(&[("a", "rel"), ("b", "rel")]);
        let ra = ranking_with_rel_at(1, 10);
        let rb = ranking_with_rel_at(4, 10);
        let ra: Vec<&str> = ra.iter().map(String::as_str).collect();
        let rb: Vec<&str> = rb.iter().map(String::as_str).collect();
        let run = run_of(&[("a", &ra), ("b", &rb)]);
        assert!((mrr_at_k(&run, &q2, 5).unwrap() - 0.625).abs() < 1e-12);
    }

    #[test]
    fn ndcg_examples() {
        let q = qrels_of(&[("q", "rel")]);
        let r = ranking_with_rel_at(1, 10);
        let refs: Vec<&str> = r.iter().map(String::as_str).collect();
        assert_eq!(ndcg_at_k(&run_of(&[("q", &refs)]), &q, 10).unwrap(), 1.0);

        let r = ranking_with_rel_at(2, 10);
        let refs: Vec<&str> = r.iter().map(String::as_str).collect();
        let v = ndcg_at_k(&run_of(&[("q", &refs)]), &q, 10).unwrap();
        assert!((v - 0.630_929_753_571_457_4).abs() < 1e-12);

        let q = qrels_of(&[("q", "r1"), ("q", "r3")]);
        let run = run_of(&[("q", &["r1", "x", "r3", "y"])]);
        let v = ndcg_at_k(&run, &q, 3).unwrap();
        let oracle = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - oracle).abs() < 1e-12, "{v}");
        assert!((v - 0.919_72).abs() < 1e-5);
    }

    #[test]
    fn missing_query_counts_as_zero() {
        let q = qrels_of(&[("a", "d1"), ("b", "d2")]);
        let run = run_of(&[("a", &["d1"])]);
        assert_eq!(hitrate_at_k(&run, &q, 1).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&run, &q, 1).unwrap(), 0.5);
    }

    #[test]
    fn empty_qrels_is_an_error() {
        let run = run_of(&[("a", &["d1"])]);
        assert!(matches!(hitrate_at_k(&run, &Qrels::new(), 1), Err(Error::EmptyQrels)));
        assert!(matches!(
            evaluate_run(&run, &Qrels::new(), &DEFAULT_CUTOFFS, false),
            Err(Error::EmptyQrels)
        ));
    }

    #[test]
    fn perfect_and_empty_runs() {
        let q = qrels_of(&[("a", "d1"), ("a", "d2"), ("b", "d3")]);
        let perfect = run_of(&[("a", &["d2", "d1", "x"]), ("b", &["d3", "y"])]);
        let report = evaluate_run(&perfect, &q, &DEFAULT_CUTOFFS, false).unwrap();
        assert_eq!(report.values.len(), 12);
        assert!(report.values.values().all(|&v| v == 1.0), "{report:?}");

        let miss = run_of(&[("a", &["x", "y"]), ("b", &["z"])]);
        let report = evaluate_run(&miss, &q, &DEFAULT_CUTOFFS, true).unwrap();
        assert!(report.values.values().all(|&v| v == 0.0));
        assert_eq!(report.per_query.unwrap().len(), 2);
    }

    #[test]
    fn table_and_json_render() {
        let q = qrels_of(&[("a", "d1")]);
        let run = run_of(&[("a", &["d1"])]);
        let report = evaluate_run(&run, &q, &[1, 10], false).unwrap();
        let table = report.to_table();
        assert!(table.contains("hitrate") && table.lines().count() == 4);
        let json: BTreeMap<String, f64> = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["ndcg@10"], 1.0);
    }
}
