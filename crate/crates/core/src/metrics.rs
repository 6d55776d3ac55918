//! Top-k retrieval metrics over full-corpus rankings.
//!
//! Relevance is binary: a document is relevant to a query when its grade is
//! at least [`EVAL_MIN_GRADE`](crate::dataset::EVAL_MIN_GRADE). NDCG uses the
//! log2 discount `1 / log2(rank + 1)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RetrievalDataset;
use crate::embedding::{dot_f32, EmbeddingTable};
use crate::error::{Error, Result};

/// Cutoffs reported by [`evaluate`].
pub const CUTOFFS: [usize; 6] = [1, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ndcg,
    Recall,
    Success,
    Mrr,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Ndcg, Metric::Recall, Metric::Success, Metric::Mrr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg => "NDCG",
            Metric::Recall => "Recall",
            Metric::Success => "Success",
            Metric::Mrr => "MRR",
        }
    }

    pub fn compute(self, ranking: &[usize], relevant: &[usize], k: usize) -> f64 {
        match self {
            Metric::Ndcg => ndcg_at_k(ranking, relevant, k),
            Metric::Recall => recall_at_k(ranking, relevant, k),
            Metric::Success => success_at_k(ranking, relevant, k),
            Metric::Mrr => mrr_at_k(ranking, relevant, k),
        }
    }
}

fn order(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// All documents by descending cosine to `query`, ties by ascending index.
pub fn rank_corpus(query: &[f32], docs: &EmbeddingTable) -> Result<Vec<usize>> {
    rank_top(query, docs, docs.len())
}

/// The first `limit` entries of [`rank_corpus`], without sorting the rest.
pub fn rank_top(query: &[f32], docs: &EmbeddingTable, limit: usize) -> Result<Vec<usize>> {
    if docs.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    if query.len() != docs.dim() {
        return Err(Error::DimensionMismatch {
            expected: docs.dim(),
            found: query.len(),
        });
    }
    let mut scored: Vec<(f64, usize)> = (0..docs.len())
        .map(|d| (dot_f32(query, docs.row(d)), d))
        .collect();
    if limit < scored.len() {
        scored.select_nth_unstable_by(limit, order);
        scored.truncate(limit);
    }
    scored.sort_unstable_by(order);
    Ok(scored.into_iter().map(|(_, d)| d).collect())
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Binary-gain NDCG@k. Returns 0 for an empty relevant set.
pub fn ndcg_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, d)| relevant.contains(d))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    dcg / ideal
}

pub fn recall_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(k)
        .filter(|d| relevant.contains(d))
        .count();
    hits as f64 / relevant.len() as f64
}

pub fn success_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> f64 {
    if ranking.iter().take(k).any(|d| relevant.contains(d)) {
        1.0
    } else {
        0.0
    }
}

pub fn mrr_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> f64 {
    ranking
        .iter()
        .take(k)
        .position(|d| relevant.contains(d))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Mean metrics over evaluated queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `values[metric][k]` is the mean over evaluated queries.
    pub values: BTreeMap<Metric, BTreeMap<usize, f64>>,
    pub query_count: usize,
    /// Queries without any relevant document, left out of the means.
    pub skipped_queries: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        self.values.get(&metric)?.get(&k).copied()
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.get(Metric::Ndcg, k).unwrap_or(f64::NAN)
    }

    pub fn recall(&self, k: usize) -> f64 {
        self.get(Metric::Recall, k).unwrap_or(f64::NAN)
    }

    pub fn with_metadata(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl fmt::Display for MetricsReport {
    /// One row per metric, one column per cutoff.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cutoffs: Vec<usize> = self
            .values
            .values()
            .next()
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default();
        write!(f, "{:<8}", "metric")?;
        for k in &cutoffs {
            write!(f, " {:>8}", format!("@{k}"))?;
        }
        writeln!(f)?;
        for (metric, row) in &self.values {
            write!(f, "{:<8}", metric.name())?;
            for k in &cutoffs {
                write!(f, " {:>8.4}", row.get(k).copied().unwrap_or(f64::NAN))?;
            }
            writeln!(f)?;
        }
        write!(
            f,
            "queries: {} (skipped {})",
            self.query_count, self.skipped_queries
        )
    }
}

/// Evaluate every query of `ds` against the full corpus at `cutoffs`.
pub fn evaluate(
    ds: &RetrievalDataset,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
    cutoffs: &[usize],
) -> Result<MetricsReport> {
    crate::pruning_static::check_coverage(ds, queries, docs)?;
    if cutoffs.iter().any(|&k| k == 0) {
        return Err(Error::config("metric cutoffs must be at least 1"));
    }
    let depth = cutoffs.iter().copied().max().unwrap_or(1).min(docs.len());
    let per_query: Vec<Option<Vec<f64>>> = (0..ds.n_queries())
        .into_par_iter()
        .map(|q| {
            let relevant = ds.relevant_docs(q);
            if relevant.is_empty() {
                return Ok(None);
            }
            let ranking = rank_top(queries.row(q), docs, depth)?;
            let mut row = Vec::with_capacity(Metric::ALL.len() * cutoffs.len());
            for m in Metric::ALL {
                for &k in cutoffs {
                    row.push(m.compute(&ranking, &relevant, k));
                }
            }
            Ok(Some(row))
        })
        .collect::<Result<_>>()?;

    let evaluated: Vec<&Vec<f64>> = per_query.iter().flatten().collect();
    let skipped = per_query.len() - evaluated.len();
    if skipped > 0 {
        warn!("{skipped} queries have no relevant documents and were skipped");
    }
    let mut values = BTreeMap::new();
    for (mi, m) in Metric::ALL.iter().enumerate() {
        let mut row = BTreeMap::new();
        for (ki, &k) in cutoffs.iter().enumerate() {
            let col = mi * cutoffs.len() + ki;
            let mean = if evaluated.is_empty() {
                0.0
            } else {
                evaluated.iter().map(|r| r[col]).sum::<f64>() / evaluated.len() as f64
            };
            row.insert(k, mean);
        }
        values.insert(*m, row);
    }
    Ok(MetricsReport {
        values,
        query_count: evaluated.len(),
        skipped_queries: skipped,
        metadata: BTreeMap::new(),
    })
}
