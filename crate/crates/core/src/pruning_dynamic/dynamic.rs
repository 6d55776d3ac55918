use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{active, BatchSampler, PairDraw, PairFeedback, SharedDataset};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::schedules::{top_ratio, virtual_size, ScheduleParams};

/// Added to a query's mean loss so every query score is strictly positive.
pub const QUERY_SCORE_OFFSET: f64 = 1e-6;

/// Score at quantile `1 - v` of `scores`; items strictly above it are high
/// quality. Returns negative infinity when the quantile falls below the
/// smallest score.
pub fn threshold_at_cutoff(scores: &[f64], v: f64) -> f64 {
    if scores.is_empty() {
        return f64::INFINITY;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    match cutoff_rank(sorted.len(), v) {
        0 => f64::NEG_INFINITY,
        rank => sorted[rank - 1],
    }
}

// 1-based rank of the threshold among ascending scores, 0 when every item
// is above it.
fn cutoff_rank(m: usize, v: f64) -> usize {
    let rank = ((1.0 - v) * m as f64 - 1e-9).ceil();
    if rank <= 0.0 {
        0
    } else {
        (rank as usize).min(m)
    }
}

/// Normalized sampling weights `(p > T) * (beta - 1) + 1` over one query's
/// positives.
pub fn document_weights(scores: &[f64], v: f64, beta: f64) -> Vec<f64> {
    let t = threshold_at_cutoff(scores, v);
    let raw: Vec<f64> = scores
        .iter()
        .map(|&p| if p > t { beta } else { 1.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DynamicState {
    query_scores: Vec<f64>,
    query_updated: Vec<usize>,
    pair_scores: Vec<f64>,
    pair_updated: Vec<usize>,
    // losses observed since the last query refresh: (sum, count)
    pending: Vec<(f64, usize)>,
    last_query_update: Option<usize>,
    // active queries by descending score, ties to the lower index
    order: Vec<usize>,
}

/// Two-level soft pruning: queries are drawn from a virtual dataset mixing
/// the top-scoring queries with a fresh random fill, and positives are drawn
/// with extra weight on the high-similarity ones.
pub struct DynamicSampler {
    ds: SharedDataset,
    params: ScheduleParams,
    n0: usize,
    state: DynamicState,
    scratch: Vec<f64>,
}

impl DynamicSampler {
    /// `pair_scores` initializes the positive scores (one per pair) and
    /// `query_losses` the mean loss of each query (entries for queries
    /// without positives are ignored).
    pub fn new(
        ds: SharedDataset,
        params: ScheduleParams,
        pair_scores: Vec<f64>,
        query_losses: Vec<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let active = active(&ds)?;
        if pair_scores.len() != ds.total_pairs() {
            return Err(Error::DimensionMismatch {
                expected: ds.total_pairs(),
                found: pair_scores.len(),
            });
        }
        if query_losses.len() != ds.n_queries() {
            return Err(Error::DimensionMismatch {
                expected: ds.n_queries(),
                found: query_losses.len(),
            });
        }
        check_finite(&pair_scores, "initial pair score", 0)?;
        check_finite(&query_losses, "initial query loss", 0)?;
        let n0 = virtual_size(active.len(), params.query_ratio_start, params.alpha_start)?;
        let query_scores = query_losses.iter().map(|&l| offset_score(l)).collect();
        let mut state = DynamicState {
            query_scores,
            query_updated: vec![0; ds.n_queries()],
            pair_updated: vec![0; pair_scores.len()],
            pair_scores,
            pending: vec![(0.0, 0); ds.n_queries()],
            last_query_update: None,
            order: active,
        };
        sort_order(&mut state);
        Ok(DynamicSampler {
            ds,
            params,
            n0,
            state,
            scratch: Vec::new(),
        })
    }

    /// All scores start equal, so every query and positive is ranked by index.
    pub fn with_flat_scores(ds: SharedDataset, params: ScheduleParams) -> Result<Self> {
        let pairs = vec![0.0; ds.total_pairs()];
        let queries = vec![0.0; ds.n_queries()];
        Self::new(ds, params, pairs, queries)
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    /// Size of the virtual query set.
    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn query_scores(&self) -> &[f64] {
        &self.state.query_scores
    }

    pub fn pair_scores(&self) -> &[f64] {
        &self.state.pair_scores
    }

    pub fn last_query_update(&self) -> Option<usize> {
        self.state.last_query_update
    }

    /// Number of queries always present in the virtual set at `step`.
    pub fn top_count(&self, step: usize) -> usize {
        let n = self.state.order.len();
        let r = top_ratio(self.params.alpha(step), self.n0, n);
        let top = ((r * n as f64).round() as usize).min(self.n0);
        if self.n0 < n {
            // leave at least one random slot so the remainder stays reachable
            top.min(self.n0 - 1)
        } else {
            top
        }
    }

    /// The queries currently ranked as high quality at `step`.
    pub fn top_queries(&self, step: usize) -> &[usize] {
        &self.state.order[..self.top_count(step)]
    }

    /// Draw `count` queries for `step`.
    ///
    /// Each call draws a fresh random fill, but only the fill slots that a
    /// draw lands on are materialized.
    pub fn sample_queries(&self, step: usize, count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        let order = &self.state.order;
        let top = self.top_count(step);
        let remainder = order.len() - top;
        if self.n0 == 0 {
            return Err(Error::Empty("virtual query set is empty".into()));
        }
        // (fill slot, offset into the remainder), distinct offsets
        let mut filled: Vec<(usize, usize)> = Vec::new();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let slot = rng.random_range(0..self.n0);
            if slot < top {
                out.push(order[slot]);
                continue;
            }
            let slot = slot - top;
            let offset = match filled.iter().find(|&&(s, _)| s == slot) {
                Some(&(_, o)) => o,
                None => loop {
                    let o = rng.random_range(0..remainder);
                    if !filled.iter().any(|&(_, x)| x == o) {
                        filled.push((slot, o));
                        break o;
                    }
                },
            };
            out.push(order[top + offset]);
        }
        Ok(out)
    }

    /// Probabilities over the positives of `query` at `step`.
    pub fn document_distribution(&self, step: usize, query: usize) -> Vec<f64> {
        let range = self.ds.pair_range(query);
        document_weights(
            &self.state.pair_scores[range],
            self.params.doc_ratio(step),
            self.params.beta(step),
        )
    }

    /// Draw one positive slot of `query`.
    pub fn sample_document(&self, step: usize, query: usize, rng: &mut Rng) -> Result<usize> {
        let (beta, v) = (self.params.beta(step), self.params.doc_ratio(step));
        self.draw_document(query, beta, v, &mut Vec::new(), rng)
    }

    fn draw_document(
        &self,
        query: usize,
        beta: f64,
        v: f64,
        scratch: &mut Vec<f64>,
        rng: &mut Rng,
    ) -> Result<usize> {
        let m = self.ds.m_q(query);
        match m {
            0 => return Err(Error::Empty(format!("query {query} has no positives"))),
            1 => return Ok(0),
            _ => {}
        }
        let scores = &self.state.pair_scores[self.ds.pair_range(query)];
        let rank = cutoff_rank(m, v);
        let threshold = if rank == 0 {
            f64::NEG_INFINITY
        } else {
            scratch.clear();
            scratch.extend_from_slice(scores);
            *scratch.select_nth_unstable_by(rank - 1, f64::total_cmp).1
        };
        let high = scores.iter().filter(|&&p| p > threshold).count();
        let total = m as f64 + high as f64 * (beta - 1.0);
        let mut u = rng.random::<f64>() * total;
        for (slot, &p) in scores.iter().enumerate() {
            u -= if p > threshold { beta } else { 1.0 };
            if u < 0.0 {
                return Ok(slot);
            }
        }
        Ok(m - 1)
    }

    fn commit_query_scores(&mut self, step: usize) {
        let st = &mut self.state;
        for q in 0..st.pending.len() {
            let (sum, count) = st.pending[q];
            if count > 0 {
                st.query_scores[q] = offset_score(sum / count as f64);
                st.query_updated[q] = step;
                st.pending[q] = (0.0, 0);
            }
        }
        st.last_query_update = Some(step);
        sort_order(st);
    }
}

fn offset_score(loss: f64) -> f64 {
    (loss + QUERY_SCORE_OFFSET).max(QUERY_SCORE_OFFSET)
}

fn sort_order(st: &mut DynamicState) {
    let scores = &st.query_scores;
    st.order
        .sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
}

fn check_finite(values: &[f64], what: &str, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            step,
        })
    }
}

impl BatchSampler for DynamicSampler {
    fn name(&self) -> &str {
        "dp"
    }

    fn sample(&mut self, step: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<PairDraw>> {
        let queries = self.sample_queries(step, batch_size, rng)?;
        let mut scratch = std::mem::take(&mut self.scratch);
        let (beta, v) = (self.params.beta(step), self.params.doc_ratio(step));
        let draws = queries
            .into_iter()
            .map(|q| {
                let slot = self.draw_document(q, beta, v, &mut scratch, rng)?;
                Ok(PairDraw {
                    query: q,
                    doc: self.ds.positives(q)[slot].doc,
                    pair: self.ds.pair_index(q, slot),
                    weight: 1.0,
                })
            })
            .collect();
        self.scratch = scratch;
        draws
    }

    fn observe(&mut self, step: usize, feedback: &[PairFeedback]) -> Result<()> {
        for fb in feedback {
            if fb.pair >= self.state.pair_scores.len() || fb.query >= self.state.query_scores.len()
            {
                return Err(Error::config(format!(
                    "feedback references pair {} of query {} outside the dataset",
                    fb.pair, fb.query
                )));
            }
            if !fb.positive_sim.is_finite() || !fb.loss.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("feedback for pair {}", fb.pair),
                    step,
                });
            }
        }
        for fb in feedback {
            self.state.pair_scores[fb.pair] = fb.positive_sim;
            self.state.pair_updated[fb.pair] = step;
            let pending = &mut self.state.pending[fb.query];
            pending.0 += fb.loss;
            pending.1 += 1;
        }
        if step % self.params.update_interval == 0 {
            self.commit_query_scores(step);
        }
        Ok(())
    }

    fn query_probabilities(&self, step: usize) -> Vec<f64> {
        let order = &self.state.order;
        let n = order.len();
        let top = self.top_count(step);
        let n0 = self.n0 as f64;
        let mut p = vec![0.0; self.ds.n_queries()];
        for (rank, &q) in order.iter().enumerate() {
            p[q] = if rank < top {
                1.0 / n0
            } else {
                (n0 - top as f64) / ((n - top) as f64 * n0)
            };
        }
        p
    }

    fn pair_probabilities(&self, step: usize) -> Vec<f64> {
        let pq = self.query_probabilities(step);
        let mut out = vec![0.0; self.ds.total_pairs()];
        for &q in &self.state.order {
            let range = self.ds.pair_range(q);
            for (i, d) in range.clone().zip(self.document_distribution(step, q)) {
                out[i] = pq[q] * d;
            }
        }
        out
    }

    fn score_ages(&self, step: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        let age = |v: &Vec<usize>| v.iter().map(|&u| step.saturating_sub(u)).collect();
        Some((
            age(&self.state.query_updated),
            age(&self.state.pair_updated),
        ))
    }

    fn state(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).expect("sampler state serializes")
    }

    fn restore(&mut self, state: serde_json::Value) -> Result<()> {
        let st: DynamicState = serde_json::from_value(state)?;
        let ok = st.query_scores.len() == self.ds.n_queries()
            && st.query_updated.len() == self.ds.n_queries()
            && st.pending.len() == self.ds.n_queries()
            && st.pair_scores.len() == self.ds.total_pairs()
            && st.pair_updated.len() == self.ds.total_pairs()
            && st.order.len() == self.state.order.len();
        if !ok {
            return Err(Error::config("snapshot does not match the dataset"));
        }
        check_finite(&st.query_scores, "restored query score", 0)?;
        check_finite(&st.pair_scores, "restored pair score", 0)?;
        self.state = st;
        Ok(())
    }
}
