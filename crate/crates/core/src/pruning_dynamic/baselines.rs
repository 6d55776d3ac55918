use rand::Rng as _;

use super::{active, BatchSampler, PairDraw, SharedDataset};
use crate::error::{Error, Result};
use crate::pruning_static::PrunedView;
use crate::rng::Rng;

/// Standard finetuning: a uniform query, then a uniform positive of it.
pub struct FtSampler {
    ds: SharedDataset,
    active: Vec<usize>,
}

impl FtSampler {
    pub fn new(ds: SharedDataset) -> Result<Self> {
        let active = active(&ds)?;
        Ok(FtSampler { ds, active })
    }

    pub(crate) fn draw(&self, rng: &mut Rng) -> PairDraw {
        let q = self.active[rng.random_range(0..self.active.len())];
        let slot = rng.random_range(0..self.ds.m_q(q));
        PairDraw {
            query: q,
            doc: self.ds.positives(q)[slot].doc,
            pair: self.ds.pair_index(q, slot),
            weight: 1.0,
        }
    }
}

impl BatchSampler for FtSampler {
    fn name(&self) -> &str {
        "ft"
    }

    fn sample(&mut self, _step: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<PairDraw>> {
        Ok((0..batch_size).map(|_| self.draw(rng)).collect())
    }

    fn query_probabilities(&self, _step: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.ds.n_queries()];
        let each = 1.0 / self.active.len() as f64;
        for &q in &self.active {
            p[q] = each;
        }
        p
    }

    fn pair_probabilities(&self, step: usize) -> Vec<f64> {
        let pq = self.query_probabilities(step);
        self.ds
            .pairs()
            .map(|p| pq[p.query] / self.ds.m_q(p.query) as f64)
            .collect()
    }
}

/// Sampling after static or random pruning: uniform over kept pairs, which
/// makes a query's probability proportional to its kept-pair count.
pub struct PrunedSampler {
    ds: SharedDataset,
    view: PrunedView,
    kept: Vec<usize>,
    label: String,
}

impl PrunedSampler {
    pub fn new(ds: SharedDataset, view: PrunedView, label: impl Into<String>) -> Result<Self> {
        let kept: Vec<usize> = (0..ds.total_pairs()).filter(|&i| view.is_kept(i)).collect();
        if kept.is_empty() {
            return Err(Error::Empty("pruning kept no pairs".into()));
        }
        Ok(PrunedSampler {
            ds,
            view,
            kept,
            label: label.into(),
        })
    }

    pub fn view(&self) -> &PrunedView {
        &self.view
    }
}

impl BatchSampler for PrunedSampler {
    fn name(&self) -> &str {
        &self.label
    }

    fn sample(&mut self, _step: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<PairDraw>> {
        Ok((0..batch_size)
            .map(|_| {
                let pair = self
                    .ds
                    .pair(self.kept[rng.random_range(0..self.kept.len())]);
                PairDraw {
                    query: pair.query,
                    doc: pair.doc,
                    pair: pair.index,
                    weight: 1.0,
                }
            })
            .collect())
    }

    fn query_probabilities(&self, _step: usize) -> Vec<f64> {
        (0..self.ds.n_queries())
            .map(|q| self.view.query_probability(q))
            .collect()
    }

    fn pair_probabilities(&self, _step: usize) -> Vec<f64> {
        let each = 1.0 / self.kept.len() as f64;
        (0..self.ds.total_pairs())
            .map(|i| if self.view.is_kept(i) { each } else { 0.0 })
            .collect()
    }
}
