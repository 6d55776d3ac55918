use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::baselines::FtSampler;
use super::{BatchSampler, PairDraw, PairFeedback, SharedDataset};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfoBatchParams {
    /// Probability of skipping a below-mean query.
    pub rho: f64,
    /// Fraction of the run, at the end, trained without pruning.
    pub delta: f64,
}

impl Default for InfoBatchParams {
    fn default() -> Self {
        InfoBatchParams {
            rho: 0.5,
            delta: 0.125,
        }
    }
}

impl InfoBatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Whether `step` (1-based) is still inside the pruning window.
    pub fn prunes_at(&self, step: usize, t_max: usize) -> bool {
        step as f64 <= (1.0 - self.delta) * t_max as f64
    }

    pub fn rescale(&self) -> f64 {
        1.0 / (1.0 - self.rho)
    }
}

/// Skip below-mean candidates with probability `rho`; survivors below the
/// mean carry weight `1 / (1 - rho)`. Returns `(candidate position, weight)`
/// for each survivor.
pub fn infobatch_filter(
    losses: &[f64],
    mean: f64,
    params: &InfoBatchParams,
    prune: bool,
    rng: &mut Rng,
) -> Vec<(usize, f64)> {
    let mut kept = Vec::with_capacity(losses.len());
    for (i, &loss) in losses.iter().enumerate() {
        if prune && params.rho > 0.0 && loss < mean {
            if rng.random_bool(params.rho) {
                continue;
            }
            kept.push((i, params.rescale()));
        } else {
            kept.push((i, 1.0));
        }
    }
    kept
}

/// Uniform sampling with InfoBatch's loss-threshold pruning on queries.
pub struct InfoBatchSampler {
    inner: FtSampler,
    ds: SharedDataset,
    params: InfoBatchParams,
    t_max: usize,
    query_losses: Vec<f64>,
    active: Vec<usize>,
}

impl InfoBatchSampler {
    pub fn new(
        ds: SharedDataset,
        params: InfoBatchParams,
        t_max: usize,
        query_losses: Vec<f64>,
    ) -> Result<Self> {
        params.validate()?;
        if query_losses.len() != ds.n_queries() {
            return Err(Error::DimensionMismatch {
                expected: ds.n_queries(),
                found: query_losses.len(),
            });
        }
        if query_losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite {
                what: "initial query loss".into(),
                step: 0,
            });
        }
        let inner = FtSampler::new(ds.clone())?;
        let active = super::active(&ds)?;
        Ok(InfoBatchSampler {
            inner,
            ds,
            params,
            t_max,
            query_losses,
            active,
        })
    }

    /// Mean of the current query losses over queries with positives.
    pub fn mean_loss(&self) -> f64 {
        self.active
            .iter()
            .map(|&q| self.query_losses[q])
            .sum::<f64>()
            / self.active.len() as f64
    }

    pub fn query_losses(&self) -> &[f64] {
        &self.query_losses
    }
}

impl BatchSampler for InfoBatchSampler {
    fn name(&self) -> &str {
        "infobatch"
    }

    fn sample(&mut self, step: usize, batch_size: usize, rng: &mut Rng) -> Result<Vec<PairDraw>> {
        let candidates: Vec<PairDraw> = (0..batch_size).map(|_| self.inner.draw(rng)).collect();
        let losses: Vec<f64> = candidates
            .iter()
            .map(|d| self.query_losses[d.query])
            .collect();
        let prune = self.params.prunes_at(step, self.t_max);
        let kept = infobatch_filter(&losses, self.mean_loss(), &self.params, prune, rng);
        Ok(kept
            .into_iter()
            .map(|(i, w)| PairDraw {
                weight: w,
                ..candidates[i]
            })
            .collect())
    }

    fn observe(&mut self, step: usize, feedback: &[PairFeedback]) -> Result<()> {
        if let Some(fb) = feedback.iter().find(|fb| !fb.loss.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("loss of query {}", fb.query),
                step,
            });
        }
        for fb in feedback {
            self.query_losses[fb.query] = fb.loss;
        }
        Ok(())
    }

    fn query_probabilities(&self, step: usize) -> Vec<f64> {
        let mean = self.mean_loss();
        let prune = self.params.prunes_at(step, self.t_max);
        let mut p = vec![0.0; self.ds.n_queries()];
        for &q in &self.active {
            p[q] = if prune && self.query_losses[q] < mean {
                1.0 - self.params.rho
            } else {
                1.0
            };
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    fn pair_probabilities(&self, step: usize) -> Vec<f64> {
        let pq = self.query_probabilities(step);
        self.ds
            .pairs()
            .map(|p| pq[p.query] / self.ds.m_q(p.query) as f64)
            .collect()
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "query_losses": self.query_losses })
    }

    fn restore(&mut self, state: serde_json::Value) -> Result<()> {
        #[derive(Deserialize)]
        struct Saved {
            query_losses: Vec<f64>,
        }
        let saved: Saved = serde_json::from_value(state)?;
        if saved.query_losses.len() != self.ds.n_queries() {
            return Err(Error::config("snapshot does not match the dataset"));
        }
        self.query_losses = saved.query_losses;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Positive, RetrievalDataset};
    use rand::SeedableRng;
    use std::sync::Arc;

    fn ds(n: usize) -> SharedDataset {
        Arc::new(
            RetrievalDataset::new(
                (0..n).map(|q| format!("q{q}")).collect(),
                (0..n).map(|d| format!("d{d}")).collect(),
                (0..n)
                    .map(|q| vec![Positive { doc: q, grade: 4 }])
                    .collect(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn rho_outside_range_rejected() {
        for rho in [-0.1, 1.0, 1.5] {
            let p = InfoBatchParams { rho, delta: 0.1 };
            assert!(InfoBatchSampler::new(ds(4), p, 100, vec![0.0; 4]).is_err());
        }
    }

    #[test]
    fn zero_rho_matches_ft_draw_for_draw() {
        let p = InfoBatchParams {
            rho: 0.0,
            delta: 0.1,
        };
        let losses = vec![0.1, 5.0, 0.2, 3.0];
        let mut ib = InfoBatchSampler::new(ds(4), p, 100, losses).unwrap();
        let mut ft = FtSampler::new(ds(4)).unwrap();
        let mut a = Rng::seed_from_u64(9);
        let mut b = Rng::seed_from_u64(9);
        assert_eq!(
            ib.sample(1, 64, &mut a).unwrap(),
            ft.sample(1, 64, &mut b).unwrap()
        );
    }

    #[test]
    fn annealing_window_keeps_everything() {
        let p = InfoBatchParams {
            rho: 0.9,
            delta: 0.125,
        };
        let losses = vec![0.0, 0.0, 0.0, 10.0];
        let mut ib = InfoBatchSampler::new(ds(4), p.clone(), 800, losses).unwrap();
        let mut rng = Rng::seed_from_u64(1);
        assert!(p.prunes_at(700, 800));
        assert!(!p.prunes_at(701, 800));
        let late = ib.sample(701, 100, &mut rng).unwrap();
        assert_eq!(late.len(), 100);
        assert!(late.iter().all(|d| d.weight == 1.0));
        let early = ib.sample(1, 1000, &mut rng).unwrap();
        assert!(early.len() < 500);
        assert!(early
            .iter()
            .all(|d| d.query == 3 || (d.weight - 10.0).abs() < 1e-12));
    }

    #[test]
    fn kept_fraction_is_three_quarters() {
        let params = InfoBatchParams::default();
        let losses: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { 1.0 } else { 3.0 })
            .collect();
        let mut rng = Rng::seed_from_u64(4);
        let kept = infobatch_filter(&losses, 2.0, &params, true, &mut rng).len();
        assert!((kept as f64 / 1000.0 - 0.75).abs() < 0.05);
    }
}
