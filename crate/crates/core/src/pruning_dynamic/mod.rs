//! Batch samplers.
//!
//! Every training strategy decides which `(query, positive)` pairs a step
//! trains on; negatives are mined afterwards by [`next_batch`]. Strategies
//! share the [`BatchSampler`] interface so the training loop is identical
//! across them.

mod baselines;
mod dynamic;
mod infobatch;
mod snapshot;
mod trace;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::RetrievalDataset;
use crate::embedding::EmbeddingTable;
use crate::encoder::{ContrastiveBatch, Triple};
use crate::error::Result;
use crate::mining::NegativeMiner;
use crate::rng::Rng;
use crate::schedules::ScheduleParams;

pub use baselines::{FtSampler, PrunedSampler};
pub use dynamic::{document_weights, threshold_at_cutoff, DynamicSampler, QUERY_SCORE_OFFSET};
pub use infobatch::{infobatch_filter, InfoBatchParams, InfoBatchSampler};
pub use snapshot::{SamplerSnapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use trace::{read_trace, TraceKind, TraceRow, TraceWriter};

/// One sampled training pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDraw {
    pub query: usize,
    pub doc: usize,
    /// Stable pair index in the sampler's dataset.
    pub pair: usize,
    /// Loss multiplier (1 except for InfoBatch's rescaled survivors).
    pub weight: f64,
}

/// What the forward pass reports back for one trained pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeedback {
    pub query: usize,
    pub pair: usize,
    /// Cosine of query and positive in the forward pass.
    pub positive_sim: f64,
    pub loss: f64,
}

pub trait BatchSampler: Send {
    fn name(&self) -> &str;

    /// Draw up to `batch_size` pairs for step `step`.
    fn sample(&mut self, step: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<PairDraw>>;

    /// Absorb the forward-pass results of step `step`.
    fn observe(&mut self, _step: usize, _feedback: &[PairFeedback]) -> Result<()> {
        Ok(())
    }

    /// Probability that a single draw at `step` picks each query.
    fn query_probabilities(&self, step: usize) -> Vec<f64>;

    /// Probability that a single draw at `step` picks each pair.
    fn pair_probabilities(&self, step: usize) -> Vec<f64>;

    /// Steps since each query's and each pair's score was last refreshed, if
    /// the sampler keeps scores.
    fn score_ages(&self, _step: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        None
    }

    /// Serializable internal state for snapshots.
    fn state(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    fn restore(&mut self, _state: serde_json::Value) -> Result<()> {
        Ok(())
    }
}

/// Strategy selection with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    /// Uniform queries, uniform positives.
    Ft,
    /// Random pruning to retention `k`.
    Rp { k: f64 },
    /// Static top-k pruning by pretrained similarity.
    Sp { k: f64 },
    /// Dynamic pruning.
    Dp {
        #[serde(default)]
        params: ScheduleParams,
    },
    /// Static pruning followed by dynamic pruning on the kept pairs.
    SpDp {
        k: f64,
        #[serde(default)]
        params: ScheduleParams,
    },
    InfoBatch {
        #[serde(default)]
        params: InfoBatchParams,
    },
}

impl StrategyConfig {
    pub fn label(&self) -> String {
        let pct = |k: f64| (k * 100.0).round() as u32;
        match self {
            StrategyConfig::Ft => "ft".into(),
            StrategyConfig::Rp { k } => format!("rp{}", pct(*k)),
            StrategyConfig::Sp { k } => format!("sp{}", pct(*k)),
            StrategyConfig::Dp { .. } => "dp".into(),
            StrategyConfig::SpDp { k, .. } => format!("sp{}+dp", pct(*k)),
            StrategyConfig::InfoBatch { .. } => "infobatch".into(),
        }
    }
}

/// Sorted positives of every query in `ds`; mined negatives avoid them.
pub fn exclusion_lists(ds: &RetrievalDataset) -> Vec<Vec<usize>> {
    (0..ds.n_queries())
        .map(|q| {
            let mut v: Vec<usize> = ds.positives(q).iter().map(|p| p.doc).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

/// Compose a sampler's pairs with mined negatives into a training batch.
#[allow(clippy::too_many_arguments)]
pub fn next_batch(
    sampler: &mut dyn BatchSampler,
    miner: &mut NegativeMiner,
    exclusions: &[Vec<usize>],
    step: usize,
    batch_size: usize,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
    sample_rng: &mut Rng,
    mining_rng: &mut Rng,
) -> Result<(Vec<PairDraw>, ContrastiveBatch)> {
    let draws = sampler.sample(step, batch_size, sample_rng)?;
    let mut triples = Vec::with_capacity(draws.len());
    for d in &draws {
        let negative = miner.mine(
            d.query,
            step,
            queries,
            docs,
            &exclusions[d.query],
            mining_rng,
        )?;
        let mut t = Triple::new(d.query, d.doc, negative);
        t.weight = d.weight;
        triples.push(t);
    }
    Ok((
        draws,
        ContrastiveBatch::new(triples).with_nominal_size(batch_size),
    ))
}

pub(crate) fn active(ds: &RetrievalDataset) -> Result<Vec<usize>> {
    let active = ds.active_queries();
    if active.is_empty() {
        return Err(crate::error::Error::Empty(
            "no query has a positive to sample".into(),
        ));
    }
    Ok(active)
}

pub(crate) type SharedDataset = Arc<RetrievalDataset>;
