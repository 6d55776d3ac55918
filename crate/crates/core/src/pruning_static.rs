//! One-shot pruning of positive pairs before training: similarity scoring,
//! consistency-based scoring (CBS), top-k static pruning, and random pruning.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RetrievalDataset;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::rng::{item_rng, Rng};

/// Upper bound on the CBS negative pool.
pub const CBS_MAX_NEGATIVES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Cosine,
    /// Reciprocal rank against sampled foreign positives.
    Cbs,
}

/// One score per positive pair, indexed by the pair's stable index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScoreTable {
    pub kind: ScoreKind,
    scores: Vec<f64>,
}

impl PairScoreTable {
    pub fn new(kind: ScoreKind, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                what: "pair score".into(),
                step: i,
            });
        }
        Ok(PairScoreTable { kind, scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "pair_index,score").map_err(io)?;
        for (i, s) in self.scores.iter().enumerate() {
            writeln!(w, "{i},{s}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub(crate) fn check_coverage(
    ds: &RetrievalDataset,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
) -> Result<()> {
    if queries.len() < ds.n_queries() {
        return Err(Error::MissingEmbedding {
            kind: "query",
            id: ds.query_ids()[queries.len()].clone(),
        });
    }
    if docs.len() < ds.n_docs() {
        return Err(Error::MissingEmbedding {
            kind: "document",
            id: ds.doc_ids()[docs.len()].clone(),
        });
    }
    if queries.dim() != docs.dim() {
        return Err(Error::DimensionMismatch {
            expected: queries.dim(),
            found: docs.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity of every positive pair under the given embeddings.
pub fn score_pairs(
    ds: &RetrievalDataset,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
) -> Result<PairScoreTable> {
    check_coverage(ds, queries, docs)?;
    let pairs: Vec<_> = ds.pairs().collect();
    let scores = pairs
        .par_iter()
        .map(|p| queries.dot(p.query, docs, p.doc))
        .collect();
    PairScoreTable::new(ScoreKind::Cosine, scores)
}

/// Fewest foreign positives available to any query; the largest valid
/// `n_negatives` for [`cbs_score`].
pub fn cbs_pool_size(ds: &RetrievalDataset) -> usize {
    let all: BTreeSet<usize> = ds.pairs().map(|p| p.doc).collect();
    (0..ds.n_queries())
        .filter(|&q| ds.m_q(q) > 0)
        .map(|q| {
            let own = ds
                .positives(q)
                .iter()
                .filter(|p| all.contains(&p.doc))
                .count();
            all.len() - own
        })
        .min()
        .unwrap_or(0)
}

/// Default CBS pool size: every available foreign positive, capped at
/// [`CBS_MAX_NEGATIVES`].
pub fn default_cbs_negatives(ds: &RetrievalDataset) -> usize {
    cbs_pool_size(ds).min(CBS_MAX_NEGATIVES)
}

/// Score each pair by the reciprocal rank of its document among itself and
/// `n_negatives` documents drawn without replacement from other queries'
/// positives. A negative tied with the positive ranks below it.
pub fn cbs_score(
    ds: &RetrievalDataset,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
    n_negatives: usize,
    rng: &mut Rng,
) -> Result<PairScoreTable> {
    check_coverage(ds, queries, docs)?;
    if n_negatives == 0 {
        return Err(Error::config("CBS needs at least one negative"));
    }
    let all: Vec<usize> = ds
        .pairs()
        .map(|p| p.doc)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pools: Vec<Vec<usize>> = (0..ds.n_queries())
        .map(|q| {
            let own: Vec<usize> = ds.positives(q).iter().map(|p| p.doc).collect();
            all.iter().copied().filter(|d| !own.contains(d)).collect()
        })
        .collect();
    for q in 0..ds.n_queries() {
        if ds.m_q(q) == 0 {
            continue;
        }
        if pools[q].is_empty() {
            return Err(Error::Degenerate(format!(
                "query `{}` owns every positive document",
                ds.query_ids()[q]
            )));
        }
        if pools[q].len() < n_negatives {
            return Err(Error::config(format!(
                "query `{}` has {} foreign positives, fewer than n_negatives = {n_negatives}",
                ds.query_ids()[q],
                pools[q].len()
            )));
        }
    }

    let base: u64 = rng.random();
    let pairs: Vec<_> = ds.pairs().collect();
    let scores = pairs
        .par_iter()
        .map(|p| {
            let mut prng = item_rng(base, p.index as u64);
            let pool = &pools[p.query];
            let own = queries.dot(p.query, docs, p.doc);
            let beaten_by = index::sample(&mut prng, pool.len(), n_negatives)
                .into_iter()
                .filter(|&i| queries.dot(p.query, docs, pool[i]) > own)
                .count();
            1.0 / (1 + beaten_by) as f64
        })
        .collect();
    PairScoreTable::new(ScoreKind::Cbs, scores)
}

/// Which positive pairs survive pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedView {
    kept: Vec<bool>,
    kept_per_query: Vec<usize>,
}

impl PrunedView {
    pub fn from_mask(ds: &RetrievalDataset, kept: Vec<bool>) -> Result<Self> {
        if kept.len() != ds.total_pairs() {
            return Err(Error::config(format!(
                "mask has {} entries for {} pairs",
                kept.len(),
                ds.total_pairs()
            )));
        }
        let kept_per_query = (0..ds.n_queries())
            .map(|q| ds.pair_range(q).filter(|&i| kept[i]).count())
            .collect();
        Ok(PrunedView {
            kept,
            kept_per_query,
        })
    }

    /// Keep everything.
    pub fn full(ds: &RetrievalDataset) -> Self {
        Self::from_mask(ds, vec![true; ds.total_pairs()]).expect("mask length matches")
    }

    pub fn is_kept(&self, pair: usize) -> bool {
        self.kept[pair]
    }

    pub fn mask(&self) -> &[bool] {
        &self.kept
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn kept_in_query(&self, q: usize) -> usize {
        self.kept_per_query[q]
    }

    /// Queries with at least one kept pair.
    pub fn covered_queries(&self) -> usize {
        self.kept_per_query.iter().filter(|&&c| c > 0).count()
    }

    /// Realized retention rate: kept pairs over all pairs.
    pub fn retention(&self) -> f64 {
        if self.kept.is_empty() {
            return 0.0;
        }
        self.kept_count() as f64 / self.kept.len() as f64
    }

    /// Query marginal under pruned sampling: kept pairs of `q` over all kept.
    pub fn query_probability(&self, q: usize) -> f64 {
        let total = self.kept_count();
        if total == 0 {
            0.0
        } else {
            self.kept_per_query[q] as f64 / total as f64
        }
    }

    /// The dataset restricted to kept pairs (indices preserved).
    pub fn apply(&self, ds: &RetrievalDataset) -> RetrievalDataset {
        ds.filter_pairs(|p| self.kept[p.index])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "pair_index,kept").map_err(io)?;
        for (i, &k) in self.kept.iter().enumerate() {
            writeln!(w, "{i},{}", k as u8).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn check_retention(k: f64) -> Result<()> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("retention rate {k} outside (0, 1]")))
    }
}

fn keep_count(k: f64, total: usize) -> usize {
    ((k * total as f64).round() as usize).min(total)
}

/// Keep the `round(k * total)` highest-scoring pairs; equal scores are
/// ordered by pair index.
pub fn static_prune(ds: &RetrievalDataset, table: &PairScoreTable, k: f64) -> Result<PrunedView> {
    check_retention(k)?;
    if table.is_empty() {
        return Err(Error::Empty("pair score table".into()));
    }
    if table.len() != ds.total_pairs() {
        return Err(Error::config(format!(
            "score table has {} entries for {} pairs",
            table.len(),
            ds.total_pairs()
        )));
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    let s = table.scores();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut kept = vec![false; table.len()];
    for &i in &order[..keep_count(k, table.len())] {
        kept[i] = true;
    }
    PrunedView::from_mask(ds, kept)
}

/// Keep `round(k * total)` pairs chosen uniformly at random.
pub fn random_prune(ds: &RetrievalDataset, k: f64, rng: &mut Rng) -> Result<PrunedView> {
    check_retention(k)?;
    let total = ds.total_pairs();
    let mut kept = vec![false; total];
    for i in index::sample(rng, total, keep_count(k, total)) {
        kept[i] = true;
    }
    PrunedView::from_mask(ds, kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Positive;
    use rand::SeedableRng;

    /// `n` queries with one positive each, on distinct documents.
    fn singles(n: usize) -> RetrievalDataset {
        RetrievalDataset::new(
            (0..n).map(|i| format!("q{i}")).collect(),
            (0..n).map(|i| format!("d{i}")).collect(),
            (0..n)
                .map(|i| vec![Positive { doc: i, grade: 4 }])
                .collect(),
        )
        .unwrap()
    }

    fn kept_indices(v: &PrunedView) -> Vec<usize> {
        (0..v.mask().len()).filter(|&i| v.is_kept(i)).collect()
    }

    #[test]
    fn top_half_of_four() {
        let ds = singles(4);
        let t = PairScoreTable::new(ScoreKind::Cosine, vec![0.9, 0.7, 0.5, 0.3]).unwrap();
        let v = static_prune(&ds, &t, 0.5).unwrap();
        assert_eq!(kept_indices(&v), vec![0, 1]);
        assert_eq!(v.retention(), 0.5);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let ds = singles(3);
        let t = PairScoreTable::new(ScoreKind::Cosine, vec![0.5, 0.5, 0.3]).unwrap();
        let v = static_prune(&ds, &t, 2.0 / 3.0).unwrap();
        assert_eq!(kept_indices(&v), vec![0, 1]);
        let t = PairScoreTable::new(ScoreKind::Cosine, vec![0.3, 0.5, 0.5]).unwrap();
        let v = static_prune(&ds, &t, 1.0 / 3.0).unwrap();
        assert_eq!(kept_indices(&v), vec![1]);
    }

    #[test]
    fn full_retention_keeps_all() {
        let ds = singles(5);
        let t = PairScoreTable::new(ScoreKind::Cosine, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let v = static_prune(&ds, &t, 1.0).unwrap();
        assert_eq!(v, PrunedView::full(&ds));
    }

    #[test]
    fn retention_bounds() {
        let ds = singles(2);
        let t = PairScoreTable::new(ScoreKind::Cosine, vec![0.1, 0.2]).unwrap();
        assert!(static_prune(&ds, &t, 0.0).is_err());
        assert!(static_prune(&ds, &t, 1.5).is_err());
        let mut rng = Rng::seed_from_u64(0);
        assert!(random_prune(&ds, -0.1, &mut rng).is_err());
        let empty = RetrievalDataset::empty();
        let t = PairScoreTable::new(ScoreKind::Cosine, vec![]).unwrap();
        assert!(static_prune(&empty, &t, 0.5).is_err());
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(PairScoreTable::new(ScoreKind::Cosine, vec![0.1, f64::NAN]).is_err());
    }

    #[test]
    fn random_prune_counts_and_determinism() {
        let ds = singles(1000);
        let mut a = Rng::seed_from_u64(11);
        let mut b = Rng::seed_from_u64(11);
        let va = random_prune(&ds, 0.25, &mut a).unwrap();
        let vb = random_prune(&ds, 0.25, &mut b).unwrap();
        assert_eq!(va.kept_count(), 250);
        assert_eq!(va, vb);
        let all = random_prune(&ds, 1.0, &mut a).unwrap();
        assert_eq!(all.kept_count(), 1000);
    }

    #[test]
    fn scores_match_hand_dot_products() {
        let ds = RetrievalDataset::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into(), "z".into()],
            vec![
                vec![Positive { doc: 0, grade: 4 }, Positive { doc: 1, grade: 4 }],
                vec![Positive { doc: 2, grade: 4 }],
            ],
        )
        .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let qs = EmbeddingTable::from_rows(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let ds_t =
            EmbeddingTable::from_rows(2, &[vec![1.0, 0.0], vec![h, h], vec![0.6, -0.8]]).unwrap();
        let t = score_pairs(&ds, &qs, &ds_t).unwrap();
        let expected = [1.0, h, -0.8];
        for (got, want) in t.scores().iter().zip(expected) {
            assert!((got - want).abs() < 1e-7, "{got} vs {want}");
        }
        let short = EmbeddingTable::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        match score_pairs(&ds, &short, &ds_t) {
            Err(Error::MissingEmbedding { id, .. }) => assert_eq!(id, "b"),
            other => panic!("{other:?}"),
        }
        let empty = RetrievalDataset::empty();
        assert!(score_pairs(&empty, &qs, &ds_t).unwrap().is_empty());
    }

    fn cbs_world() -> (RetrievalDataset, EmbeddingTable, EmbeddingTable) {
        // query 0 at x; its positive doc 0 at x. Other queries own docs 1..=3
        // at decreasing similarity to x.
        let ds = RetrievalDataset::new(
            (0..4).map(|i| format!("q{i}")).collect(),
            (0..4).map(|i| format!("d{i}")).collect(),
            (0..4)
                .map(|i| vec![Positive { doc: i, grade: 4 }])
                .collect(),
        )
        .unwrap();
        let qs = EmbeddingTable::from_rows(
            2,
            &[
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 1.0],
                vec![0.0, 1.0],
            ],
        )
        .unwrap();
        let docs = EmbeddingTable::from_rows(
            2,
            &[
                vec![1.0, 0.0],
                vec![0.2, 1.0],
                vec![0.1, 1.0],
                vec![-0.5, 1.0],
            ],
        )
        .unwrap();
        (ds, qs, docs)
    }

    #[test]
    fn cbs_rank_extremes() {
        let (ds, qs, docs) = cbs_world();
        let mut rng = Rng::seed_from_u64(5);
        let t = cbs_score(&ds, &qs, &docs, 3, &mut rng).unwrap();
        assert_eq!(t.scores()[0], 1.0);
        // q3 = y: cosines d0 = 0, d1 = .98, d2 = .995, own d3 = .89, so two
        // of the three foreign positives beat it
        assert_eq!(t.scores()[3], 1.0 / 3.0);
        assert_eq!(cbs_pool_size(&ds), 3);
        assert!(cbs_score(&ds, &qs, &docs, 4, &mut rng).is_err());
        assert!(cbs_score(&ds, &qs, &docs, 0, &mut rng).is_err());
    }

    #[test]
    fn cbs_tie_favors_positive() {
        let ds = RetrievalDataset::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![
                vec![Positive { doc: 0, grade: 4 }],
                vec![Positive { doc: 1, grade: 4 }],
            ],
        )
        .unwrap();
        let qs = EmbeddingTable::from_rows(2, &[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let docs = EmbeddingTable::from_rows(2, &[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let mut rng = Rng::seed_from_u64(0);
        let t = cbs_score(&ds, &qs, &docs, 1, &mut rng).unwrap();
        assert_eq!(t.scores(), &[1.0, 1.0]);
    }

    #[test]
    fn cbs_query_owning_everything() {
        let ds = RetrievalDataset::new(
            vec!["a".into()],
            vec!["x".into(), "y".into()],
            vec![vec![
                Positive { doc: 0, grade: 4 },
                Positive { doc: 1, grade: 4 },
            ]],
        )
        .unwrap();
        let qs = EmbeddingTable::from_rows(2, &[vec![1.0, 0.0]]).unwrap();
        let docs = EmbeddingTable::from_rows(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut rng = Rng::seed_from_u64(0);
        assert!(matches!(
            cbs_score(&ds, &qs, &docs, 1, &mut rng),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn cbs_is_deterministic_given_rng() {
        let (ds, qs, docs) = cbs_world();
        let a = cbs_score(&ds, &qs, &docs, 2, &mut Rng::seed_from_u64(9)).unwrap();
        let b = cbs_score(&ds, &qs, &docs, 2, &mut Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let ds = singles(3);
        let t = PairScoreTable::new(ScoreKind::Cosine, vec![0.2, 0.9, 0.5]).unwrap();
        let v = static_prune(&ds, &t, 1.0 / 3.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("view.csv");
        v.write_csv(&path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "pair_index,kept\n0,0\n1,1\n2,0\n"
        );
    }
}
