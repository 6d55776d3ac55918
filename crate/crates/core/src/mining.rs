//! Rank-range hard negative mining.

use std::collections::HashMap;

use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot_f32, EmbeddingTable};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Inclusive 1-based rank window, e.g. `10..=100`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningRange {
    pub start: usize,
    pub end: usize,
}

impl MiningRange {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start == 0 || start > end {
            return Err(Error::config(format!(
                "invalid mining range [{start}, {end}]"
            )));
        }
        Ok(MiningRange { start, end })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Uniform over ranks `start..=end` of the current model's ranking.
    Hard(MiningRange),
    /// Uniform over all non-positive documents.
    Random,
}

/// Top `limit` documents by descending cosine to `query`, ties by ascending
/// index, skipping `exclude`.
pub fn top_candidates(
    query: &[f32],
    docs: &EmbeddingTable,
    exclude: &[usize],
    limit: usize,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..docs.len())
        .filter(|d| !exclude.contains(d))
        .map(|d| (dot_f32(query, docs.row(d)), d))
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if limit < scored.len() {
        scored.select_nth_unstable_by(limit, order);
        scored.truncate(limit);
    }
    scored.sort_unstable_by(order);
    scored.into_iter().map(|(_, d)| d).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinedNegative {
    pub doc: usize,
    /// The window was empty and a uniform random negative was used instead.
    pub fallback: bool,
}

fn uniform_negative(n_docs: usize, exclude: &[usize], rng: &mut Rng) -> Result<usize> {
    let available = n_docs - exclude.iter().filter(|&&d| d < n_docs).count();
    if available == 0 {
        return Err(Error::Empty(
            "no non-positive document to use as a negative".into(),
        ));
    }
    // rejection sampling; positives are a small share of the corpus
    loop {
        let d = rng.random_range(0..n_docs);
        if !exclude.contains(&d) {
            return Ok(d);
        }
    }
}

/// Draw one negative for `query` uniformly from the given rank window.
pub fn hard_negative_mine(
    query: &[f32],
    docs: &EmbeddingTable,
    exclude: &[usize],
    range: MiningRange,
    rng: &mut Rng,
) -> Result<MinedNegative> {
    if range.end > docs.len() {
        return Err(Error::config(format!(
            "mining range end {} exceeds corpus size {}",
            range.end,
            docs.len()
        )));
    }
    let ranked = top_candidates(query, docs, exclude, range.end);
    pick_from_window(&ranked, docs.len(), exclude, range, rng)
}

fn pick_from_window(
    ranked: &[usize],
    n_docs: usize,
    exclude: &[usize],
    range: MiningRange,
    rng: &mut Rng,
) -> Result<MinedNegative> {
    if ranked.len() < range.start {
        warn!(
            "only {} candidates for mining window [{}, {}]; using a random negative",
            ranked.len(),
            range.start,
            range.end
        );
        return Ok(MinedNegative {
            doc: uniform_negative(n_docs, exclude, rng)?,
            fallback: true,
        });
    }
    let hi = range.end.min(ranked.len());
    let rank = rng.random_range(range.start..=hi);
    Ok(MinedNegative {
        doc: ranked[rank - 1],
        fallback: false,
    })
}

/// Negative sampler that caches each query's ranked window and recomputes it
/// once it is `refresh_every` steps old.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegativeMiner {
    source: NegativeSource,
    refresh_every: usize,
    cache: HashMap<usize, (usize, Vec<usize>)>,
    fallbacks: usize,
}

impl NegativeMiner {
    pub fn new(source: NegativeSource, refresh_every: usize) -> Result<Self> {
        if refresh_every == 0 {
            return Err(Error::config("mining refresh interval must be at least 1"));
        }
        if let NegativeSource::Hard(r) = source {
            MiningRange::new(r.start, r.end)?;
        }
        Ok(NegativeMiner {
            source,
            refresh_every,
            cache: HashMap::new(),
            fallbacks: 0,
        })
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    pub fn mine(
        &mut self,
        query: usize,
        step: usize,
        queries: &EmbeddingTable,
        docs: &EmbeddingTable,
        exclude: &[usize],
        rng: &mut Rng,
    ) -> Result<usize> {
        let range = match self.source {
            NegativeSource::Random => return uniform_negative(docs.len(), exclude, rng),
            NegativeSource::Hard(r) => r,
        };
        let limit = range.end.min(docs.len());
        let stale = match self.cache.get(&query) {
            Some((at, _)) => step >= at + self.refresh_every,
            None => true,
        };
        if stale {
            let ranked = top_candidates(queries.row(query), docs, exclude, limit);
            self.cache.insert(query, (step, ranked));
        }
        let ranked = &self.cache[&query].1;
        let mined = pick_from_window(ranked, docs.len(), exclude, range, rng)?;
        if mined.fallback {
            self.fallbacks += 1;
        }
        Ok(mined.doc)
    }
}
