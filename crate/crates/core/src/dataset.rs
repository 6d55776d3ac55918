//! Retrieval datasets: queries, a document corpus, and graded positive pairs.
//!
//! Relevance grades use a 1..=4 scale. Grades of [`EVAL_MIN_GRADE`] and above
//! are evaluation positives; the training view takes its own threshold (see
//! [`inject_noise`]).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{self, EmbeddingTable};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub type Grade = u8;

pub const MIN_GRADE: Grade = 1;
pub const MAX_GRADE: Grade = 4;
/// Grade assigned when the qrels relevance column is absent.
pub const DEFAULT_GRADE: Grade = 4;
/// Lowest grade counted as relevant during evaluation.
pub const EVAL_MIN_GRADE: Grade = 3;
/// Grade given to false positives in synthetic worlds.
pub const NOISY_GRADE: Grade = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Positive {
    pub doc: usize,
    pub grade: Grade,
}

/// One positive pair, addressed by its stable index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub index: usize,
    pub query: usize,
    pub doc: usize,
    pub grade: Grade,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalDataset {
    query_ids: Vec<String>,
    doc_ids: Vec<String>,
    positives: Vec<Vec<Positive>>,
    // pair index of the first positive of each query, plus a trailing total
    offsets: Vec<usize>,
}

impl RetrievalDataset {
    pub fn new(
        query_ids: Vec<String>,
        doc_ids: Vec<String>,
        positives: Vec<Vec<Positive>>,
    ) -> Result<Self> {
        if positives.len() != query_ids.len() {
            return Err(Error::config(format!(
                "{} queries but {} positive lists",
                query_ids.len(),
                positives.len()
            )));
        }
        for (q, list) in positives.iter().enumerate() {
            let mut seen = HashSet::with_capacity(list.len());
            for p in list {
                if p.doc >= doc_ids.len() {
                    return Err(Error::config(format!(
                        "query `{}` references doc index {} of {}",
                        query_ids[q],
                        p.doc,
                        doc_ids.len()
                    )));
                }
                if !(MIN_GRADE..=MAX_GRADE).contains(&p.grade) {
                    return Err(Error::config(format!("grade {} outside 1..=4", p.grade)));
                }
                if !seen.insert(p.doc) {
                    return Err(Error::DuplicatePair {
                        query: query_ids[q].clone(),
                        doc: doc_ids[p.doc].clone(),
                    });
                }
            }
        }
        let mut offsets = Vec::with_capacity(positives.len() + 1);
        let mut total = 0;
        for list in &positives {
            offsets.push(total);
            total += list.len();
        }
        offsets.push(total);
        Ok(RetrievalDataset {
            query_ids,
            doc_ids,
            positives,
            offsets,
        })
    }

    pub fn empty() -> Self {
        RetrievalDataset::new(Vec::new(), Vec::new(), Vec::new()).expect("empty dataset is valid")
    }

    /// Number of queries, `n`.
    pub fn n_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Positives of query `q`; `m_q` is its length.
    pub fn positives(&self, q: usize) -> &[Positive] {
        &self.positives[q]
    }

    pub fn m_q(&self, q: usize) -> usize {
        self.positives[q].len()
    }

    pub fn total_pairs(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Stable index of the `slot`-th positive of query `q`.
    pub fn pair_index(&self, q: usize, slot: usize) -> usize {
        self.offsets[q] + slot
    }

    /// Range of pair indices owned by query `q`.
    pub fn pair_range(&self, q: usize) -> std::ops::Range<usize> {
        self.offsets[q]..self.offsets[q + 1]
    }

    pub fn pair(&self, index: usize) -> Pair {
        let q = self.offsets.partition_point(|&o| o <= index) - 1;
        let p = self.positives[q][index - self.offsets[q]];
        Pair {
            index,
            query: q,
            doc: p.doc,
            grade: p.grade,
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        self.positives
            .iter()
            .enumerate()
            .flat_map(move |(q, list)| {
                list.iter().enumerate().map(move |(slot, p)| Pair {
                    index: self.offsets[q] + slot,
                    query: q,
                    doc: p.doc,
                    grade: p.grade,
                })
            })
    }

    /// Queries with at least one positive.
    pub fn active_queries(&self) -> Vec<usize> {
        (0..self.n_queries()).filter(|&q| self.m_q(q) > 0).collect()
    }

    /// Evaluation positives of `q` (grade at or above [`EVAL_MIN_GRADE`]).
    pub fn relevant_docs(&self, q: usize) -> Vec<usize> {
        self.positives[q]
            .iter()
            .filter(|p| p.grade >= EVAL_MIN_GRADE)
            .map(|p| p.doc)
            .collect()
    }

    /// Restrict to pairs with `keep(pair)`; query and doc indices are preserved.
    pub fn filter_pairs(&self, mut keep: impl FnMut(&Pair) -> bool) -> RetrievalDataset {
        let mut positives = vec![Vec::new(); self.n_queries()];
        for pair in self.pairs() {
            if keep(&pair) {
                positives[pair.query].push(Positive {
                    doc: pair.doc,
                    grade: pair.grade,
                });
            }
        }
        RetrievalDataset::new(self.query_ids.clone(), self.doc_ids.clone(), positives)
            .expect("subset of a valid dataset is valid")
    }

    /// Append corpus documents that carry no positives. Ids already present
    /// are skipped.
    pub fn with_corpus<S: AsRef<str>>(mut self, ids: &[S]) -> Self {
        let known: HashSet<String> = self.doc_ids.iter().cloned().collect();
        for id in ids {
            if !known.contains(id.as_ref()) {
                self.doc_ids.push(id.as_ref().to_string());
            }
        }
        self
    }

    pub fn save_qrels(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for pair in self.pairs() {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.query_ids[pair.query], self.doc_ids[pair.doc], pair.grade
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Load a `query_id<TAB>doc_id[<TAB>relevance]` file.
///
/// Query and document indices follow first appearance. A missing relevance
/// column defaults to [`DEFAULT_GRADE`].
pub fn load_qrels(path: &Path) -> Result<RetrievalDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_qrels(BufReader::new(file), path)
}

pub fn parse_qrels<R: BufRead>(reader: R, path: &Path) -> Result<RetrievalDataset> {
    let mut query_ids = Vec::new();
    let mut doc_ids = Vec::new();
    let mut query_index: HashMap<String, usize> = HashMap::new();
    let mut doc_index: HashMap<String, usize> = HashMap::new();
    let mut positives: Vec<Vec<Positive>> = Vec::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = lineno + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (qid, did, grade) = match fields.as_slice() {
            [q, d] => (*q, *d, DEFAULT_GRADE),
            [q, d, g] => {
                let grade: Grade = g
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("relevance `{g}` is not an integer")))?;
                if !(MIN_GRADE..=MAX_GRADE).contains(&grade) {
                    return Err(parse_err(format!("relevance {grade} outside 1..=4")));
                }
                (*q, *d, grade)
            }
            _ => {
                return Err(parse_err(format!(
                    "expected 2 or 3 tab-separated fields, found {}",
                    fields.len()
                )))
            }
        };
        if qid.is_empty() || did.is_empty() {
            return Err(parse_err("empty id".into()));
        }
        let q = *query_index.entry(qid.to_string()).or_insert_with(|| {
            query_ids.push(qid.to_string());
            positives.push(Vec::new());
            query_ids.len() - 1
        });
        let d = *doc_index.entry(did.to_string()).or_insert_with(|| {
            doc_ids.push(did.to_string());
            doc_ids.len() - 1
        });
        if !seen.insert((q, d)) {
            return Err(Error::DuplicatePair {
                query: qid.to_string(),
                doc: did.to_string(),
            });
        }
        positives[q].push(Positive { doc: d, grade });
    }
    RetrievalDataset::new(query_ids, doc_ids, positives)
}

/// Training view containing every positive with `grade >= min_grade`.
///
/// Lowering `min_grade` below [`EVAL_MIN_GRADE`] admits weaker judgments as
/// positives, which is how label noise is injected. Evaluation always reads
/// [`RetrievalDataset::relevant_docs`] of the original dataset.
pub fn inject_noise(ds: &RetrievalDataset, min_grade: Grade) -> Result<RetrievalDataset> {
    if !(MIN_GRADE..=MAX_GRADE).contains(&min_grade) {
        return Err(Error::config(format!(
            "min_grade {min_grade} outside 1..=4"
        )));
    }
    Ok(ds.filter_pairs(|p| p.grade >= min_grade))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticWorldConfig {
    /// Embedding dimension.
    pub dim: usize,
    pub n_queries: usize,
    /// Labeled positives per query, true and false combined.
    pub docs_per_query: usize,
    /// Fraction of each query's positives that are false positives.
    pub noise_rate: f64,
    /// Size of the pool of documents owned by no query.
    pub n_random_negatives: usize,
    /// Norm of the Gaussian offset added to a document's mean direction.
    pub cluster_spread: f64,
    /// Norm of the Gaussian offset separating a query's initial embedding
    /// from its true direction.
    pub query_perturbation: f64,
    /// Per-query perturbation scales are drawn uniformly from
    /// `query_perturbation * [1 - jitter, 1 + jitter]`.
    pub perturbation_jitter: f64,
    /// Inner product between a query's true and noise directions.
    pub noise_direction_cosine: f64,
    /// Number of shared topic centers; query `q` belongs to topic
    /// `q % n_topics`. 0 draws every true direction independently.
    pub n_topics: usize,
    /// Norm of the Gaussian offset between a topic center and the true
    /// directions of its queries.
    pub topic_spread: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            dim: 32,
            n_queries: 200,
            docs_per_query: 10,
            noise_rate: 0.0,
            n_random_negatives: 1000,
            cluster_spread: 0.5,
            query_perturbation: 1.0,
            perturbation_jitter: 0.0,
            noise_direction_cosine: 0.0,
            n_topics: 0,
            topic_spread: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn noisy_per_query(&self) -> usize {
        (self.noise_rate * self.docs_per_query as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config("dim must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::config("noise_rate must lie in [0, 1)"));
        }
        if !(self.cluster_spread >= 0.0)
            || !(self.query_perturbation >= 0.0)
            || !(self.topic_spread >= 0.0)
        {
            return Err(Error::config("spreads must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.perturbation_jitter) {
            return Err(Error::config("perturbation_jitter must lie in [0, 1]"));
        }
        if !(-1.0..1.0).contains(&self.noise_direction_cosine) {
            return Err(Error::config("noise_direction_cosine must lie in [-1, 1)"));
        }
        if self.docs_per_query == 0 {
            return Err(Error::config("docs_per_query must be positive"));
        }
        if self.noisy_per_query() >= self.docs_per_query {
            return Err(Error::config(format!(
                "noise_rate {} leaves no true positive among {} documents",
                self.noise_rate, self.docs_per_query
            )));
        }
        Ok(())
    }
}

/// A generated world plus the directions it was drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub dataset: RetrievalDataset,
    /// Initial ("pretrained") query embeddings.
    pub queries: EmbeddingTable,
    pub docs: EmbeddingTable,
    /// Per-query mean direction of true positives.
    pub true_directions: EmbeddingTable,
    /// Per-query mean direction of false positives.
    pub noise_directions: EmbeddingTable,
}

fn gaussian(rng: &mut Rng, dim: usize, scale: f64) -> Vec<f64> {
    let sd = scale / (dim as f64).sqrt();
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * sd)
        .collect()
}

fn random_unit(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim, 1.0);
        if let Ok(u) = embedding::normalized(&v) {
            return u;
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Generate a world where each query owns a true direction and a noise
/// direction. Its first `docs_per_query - noisy` positives (grade 4) scatter
/// around the true direction, the rest (grade 2) around the noise direction;
/// unowned negatives are isotropic.
pub fn generate_synthetic(cfg: &SyntheticWorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dim;
    let noisy = cfg.noisy_per_query();
    let clean = cfg.docs_per_query - noisy;
    let c = cfg.noise_direction_cosine;

    let mut query_ids = Vec::with_capacity(cfg.n_queries);
    let mut doc_ids = Vec::new();
    let mut positives = Vec::with_capacity(cfg.n_queries);
    let mut query_rows = Vec::with_capacity(cfg.n_queries);
    let mut doc_rows = Vec::new();
    let mut mu_true = Vec::with_capacity(cfg.n_queries);
    let mut mu_noise = Vec::with_capacity(cfg.n_queries);

    let topics: Vec<Vec<f64>> = (0..cfg.n_topics)
        .map(|_| random_unit(&mut rng, dim))
        .collect();
    for q in 0..cfg.n_queries {
        let mu1 = if topics.is_empty() {
            random_unit(&mut rng, dim)
        } else {
            let center = &topics[q % topics.len()];
            let offset = gaussian(&mut rng, dim, cfg.topic_spread);
            embedding::normalized(&add(center, &offset)).unwrap_or_else(|_| center.clone())
        };
        // Gram-Schmidt a second random direction against mu1.
        let mu2 = loop {
            let raw = random_unit(&mut rng, dim);
            let proj = embedding::dot(&raw, &mu1);
            let perp: Vec<f64> = raw.iter().zip(&mu1).map(|(r, m)| r - proj * m).collect();
            if let Ok(perp) = embedding::normalized(&perp) {
                let s = (1.0 - c * c).sqrt();
                break mu1
                    .iter()
                    .zip(&perp)
                    .map(|(m, p)| c * m + s * p)
                    .collect::<Vec<f64>>();
            }
        };

        query_ids.push(format!("q{q}"));
        let mut list = Vec::with_capacity(cfg.docs_per_query);
        for j in 0..cfg.docs_per_query {
            let (center, grade) = if j < clean {
                (&mu1, DEFAULT_GRADE)
            } else {
                (&mu2, NOISY_GRADE)
            };
            let row = add(center, &gaussian(&mut rng, dim, cfg.cluster_spread));
            list.push(Positive {
                doc: doc_ids.len(),
                grade,
            });
            doc_ids.push(format!("q{q}-d{j}"));
            doc_rows.push(row);
        }
        positives.push(list);

        let jitter = if cfg.perturbation_jitter > 0.0 {
            rng.random_range(-cfg.perturbation_jitter..=cfg.perturbation_jitter)
        } else {
            0.0
        };
        let scale = cfg.query_perturbation * (1.0 + jitter);
        query_rows.push(add(&mu1, &gaussian(&mut rng, dim, scale)));
        mu_true.push(mu1);
        mu_noise.push(mu2);
    }
    for k in 0..cfg.n_random_negatives {
        doc_ids.push(format!("neg{k}"));
        doc_rows.push(random_unit(&mut rng, dim));
    }

    Ok(SyntheticWorld {
        dataset: RetrievalDataset::new(query_ids, doc_ids, positives)?,
        queries: EmbeddingTable::from_rows(dim, &query_rows)?,
        docs: EmbeddingTable::from_rows(dim, &doc_rows)?,
        true_directions: EmbeddingTable::from_rows(dim, &mu_true)?,
        noise_directions: EmbeddingTable::from_rows(dim, &mu_noise)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<RetrievalDataset> {
        parse_qrels(text.as_bytes(), Path::new("test.tsv"))
    }

    #[test]
    fn three_line_file() {
        let ds = parse("q1\td1\t4\nq1\td2\t3\nq2\td1\t2\n").unwrap();
        assert_eq!(ds.n_queries(), 2);
        assert_eq!(ds.n_docs(), 2);
        assert_eq!(ds.m_q(0), 2);
        assert_eq!(ds.total_pairs(), 3);
        assert_eq!(ds.positives(1)[0].grade, 2);
        assert_eq!(ds.relevant_docs(0), vec![0, 1]);
        assert!(ds.relevant_docs(1).is_empty());
    }

    #[test]
    fn empty_file() {
        let ds = parse("").unwrap();
        assert_eq!(ds.n_queries(), 0);
        assert_eq!(ds.total_pairs(), 0);
    }

    #[test]
    fn missing_relevance_defaults_to_four() {
        let ds = parse("q1\td1\n").unwrap();
        assert_eq!(ds.positives(0)[0].grade, DEFAULT_GRADE);
    }

    #[test]
    fn duplicate_pair_rejected() {
        let err = parse("q1\td1\t4\nq2\td1\t4\nq1\td1\t3\n").unwrap_err();
        match err {
            Error::DuplicatePair { query, doc } => {
                assert_eq!(query, "q1");
                assert_eq!(doc, "d1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("q1\td1\t4\nq1 d2 4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("q1\td1\tx\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse("q1\td1\t7\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn pair_lookup_matches_iteration() {
        let ds = parse("a\tx\t4\na\ty\t4\nb\tz\t3\nc\tx\t2\nc\ty\t1\n").unwrap();
        for pair in ds.pairs() {
            assert_eq!(ds.pair(pair.index), pair);
        }
        assert_eq!(ds.pair_range(2), 3..5);
    }

    #[test]
    fn noise_threshold() {
        let ds = parse("q1\td1\t4\nq1\td2\t3\nq1\td3\t2\nq2\td4\t1\nq2\td5\t3\n").unwrap();
        let clean = inject_noise(&ds, 3).unwrap();
        let noisy = inject_noise(&ds, 2).unwrap();
        assert_eq!(clean.total_pairs(), 3);
        assert_eq!(noisy.total_pairs(), 4);
        assert_eq!(clean.n_queries(), ds.n_queries());
        assert_eq!(noisy.relevant_docs(0), ds.relevant_docs(0));
        assert!(inject_noise(&ds, 0).is_err());
        assert!(inject_noise(&ds, 5).is_err());
    }

    #[test]
    fn qrels_round_trip() {
        let ds = parse("q1\td1\t4\nq1\td2\t3\nq2\td3\t2\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.tsv");
        ds.save_qrels(&path).unwrap();
        assert_eq!(load_qrels(&path).unwrap(), ds);
    }

    #[test]
    fn zero_noise_world_is_all_grade_four() {
        let world = generate_synthetic(&SyntheticWorldConfig {
            n_queries: 5,
            n_random_negatives: 10,
            ..Default::default()
        })
        .unwrap();
        assert!(world.dataset.pairs().all(|p| p.grade == 4));
        assert_eq!(world.docs.len(), 5 * 10 + 10);
    }

    #[test]
    fn zero_spread_docs_coincide_with_true_direction() {
        let world = generate_synthetic(&SyntheticWorldConfig {
            n_queries: 3,
            cluster_spread: 0.0,
            n_random_negatives: 0,
            ..Default::default()
        })
        .unwrap();
        for q in 0..3 {
            let sims: Vec<f64> = world
                .dataset
                .positives(q)
                .iter()
                .map(|p| world.queries.dot(q, &world.docs, p.doc))
                .collect();
            for p in world.dataset.positives(q) {
                assert!(world.true_directions.dot(q, &world.docs, p.doc) > 1.0 - 1e-6);
            }
            assert!(sims.iter().all(|s| (s - sims[0]).abs() < 1e-6));
        }
    }

    #[test]
    fn noisy_count_per_query() {
        let world = generate_synthetic(&SyntheticWorldConfig {
            n_queries: 20,
            noise_rate: 0.3,
            docs_per_query: 10,
            ..Default::default()
        })
        .unwrap();
        for q in 0..20 {
            let noisy = world
                .dataset
                .positives(q)
                .iter()
                .filter(|p| p.grade == NOISY_GRADE)
                .count();
            assert_eq!(noisy, 3);
        }
        // The clean view drops exactly those.
        let clean = inject_noise(&world.dataset, 3).unwrap();
        for q in 0..20 {
            assert_eq!(world.dataset.m_q(q) - clean.m_q(q), 3);
        }
    }

    #[test]
    fn all_noisy_rejected() {
        let cfg = SyntheticWorldConfig {
            noise_rate: 0.96,
            docs_per_query: 10,
            ..Default::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn noise_direction_has_requested_cosine() {
        for c in [0.0, 0.3, -0.5] {
            let world = generate_synthetic(&SyntheticWorldConfig {
                n_queries: 4,
                noise_direction_cosine: c,
                n_random_negatives: 0,
                ..Default::default()
            })
            .unwrap();
            for q in 0..4 {
                let got = world.true_directions.dot(q, &world.noise_directions, q);
                assert!((got - c).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn generation_is_deterministic(seed in any::<u64>(), noise in 0.0f64..0.8) {
            let cfg = SyntheticWorldConfig {
                n_queries: 6,
                n_random_negatives: 8,
                noise_rate: noise,
                seed,
                ..Default::default()
            };
            let a = generate_synthetic(&cfg).unwrap();
            let b = generate_synthetic(&cfg).unwrap();
            prop_assert_eq!(a.dataset, b.dataset);
            prop_assert_eq!(a.queries, b.queries);
            prop_assert_eq!(a.docs, b.docs);
        }

        #[test]
        fn noisy_fraction_matches_rounding(noise in 0.0f64..0.85, per in 2usize..15) {
            let cfg = SyntheticWorldConfig {
                n_queries: 3,
                docs_per_query: per,
                noise_rate: noise,
                n_random_negatives: 0,
                ..Default::default()
            };
            let expected = (noise * per as f64).round() as usize;
            match generate_synthetic(&cfg) {
                Ok(world) => {
                    for q in 0..3 {
                        let noisy = world.dataset.positives(q).iter().filter(|p| p.grade == NOISY_GRADE).count();
                        prop_assert_eq!(noisy, expected);
                    }
                }
                Err(_) => prop_assert!(expected >= per),
            }
        }
    }
}
