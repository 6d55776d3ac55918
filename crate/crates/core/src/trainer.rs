//! The contrastive training loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::RetrievalDataset;
use crate::embedding::EmbeddingTable;
use crate::encoder::{info_nce, info_nce_single, sgd_step};
use crate::error::{Error, Result};
use crate::mining::{MiningRange, NegativeMiner, NegativeSource};
use crate::pruning_dynamic::{
    exclusion_lists, next_batch, BatchSampler, DynamicSampler, FtSampler, InfoBatchSampler,
    PairFeedback, PrunedSampler, SamplerSnapshot, StrategyConfig, TraceWriter,
};
use crate::pruning_static::{
    cbs_score, default_cbs_negatives, random_prune, score_pairs, static_prune, PairScoreTable,
    PrunedView, ScoreKind,
};
use crate::rng::{rng_for, Rng};
use crate::schedules::ScheduleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: StrategyConfig,
    /// Number of steps, `t_max`. Dynamic schedules span exactly this many.
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decay the learning rate linearly to zero at the last step.
    pub linear_decay: bool,
    pub temperature: f64,
    pub negatives: NegativeSource,
    /// Steps before a query's mined ranking is recomputed.
    pub mining_refresh: usize,
    /// Pair scoring used by static pruning.
    pub score: ScoreKind,
    /// Foreign positives per pair for CBS scoring; all available if unset.
    pub cbs_negatives: Option<usize>,
    pub seed: u64,
    /// Steps between sampling-probability traces; 0 disables tracing.
    pub trace_every: usize,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: StrategyConfig::Ft,
            steps: 1000,
            batch_size: 64,
            learning_rate: 0.01,
            linear_decay: true,
            temperature: 0.02,
            negatives: NegativeSource::Hard(MiningRange {
                start: 10,
                end: 100,
            }),
            mining_refresh: 200,
            score: ScoreKind::Cosine,
            cbs_negatives: None,
            seed: 0,
            trace_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be a non-negative number"));
        }
        if self.mining_refresh == 0 {
            return Err(Error::config("mining_refresh must be at least 1"));
        }
        if let NegativeSource::Hard(r) = self.negatives {
            MiningRange::new(r.start, r.end)?;
        }
        match &self.strategy {
            StrategyConfig::Ft => {}
            StrategyConfig::Rp { k } | StrategyConfig::Sp { k } => check_k(*k)?,
            StrategyConfig::Dp { params } => self.schedule(params).validate()?,
            StrategyConfig::SpDp { k, params } => {
                check_k(*k)?;
                self.schedule(params).validate()?;
            }
            StrategyConfig::InfoBatch { params } => params.validate()?,
        }
        Ok(())
    }

    /// The schedule actually used: `t_max` follows the run length.
    pub fn schedule(&self, params: &ScheduleParams) -> ScheduleParams {
        ScheduleParams {
            t_max: self.steps.max(1),
            ..params.clone()
        }
    }

    /// Learning rate at 1-based `step`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if self.linear_decay && self.steps > 0 {
            self.learning_rate * (1.0 - (step - 1) as f64 / self.steps as f64)
        } else {
            self.learning_rate
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn check_k(k: f64) -> Result<()> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "retention k must lie in (0, 1], got {k}"
        )))
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Weighted mean batch loss; absent when every draw was skipped.
    pub loss: Option<f64>,
    pub ms: f64,
    pub sampler_ms: f64,
    pub encoder_ms: f64,
    pub update_ms: f64,
    pub batch: usize,
    pub lr: f64,
}

/// Where a run writes its side outputs. Every field is optional.
#[derive(Debug, Clone, Default)]
pub struct RunPaths {
    pub run_log: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub queries: EmbeddingTable,
    pub docs: EmbeddingTable,
    pub log: Vec<StepRecord>,
    /// The static view trained on, for pruning strategies.
    pub view: Option<PrunedView>,
    /// Distinct queries drawn at least once.
    pub trained_queries: usize,
    pub mining_fallbacks: usize,
}

impl TrainOutcome {
    pub fn mean_loss(&self, last: usize) -> Option<f64> {
        let losses: Vec<f64> = self
            .log
            .iter()
            .rev()
            .filter_map(|r| r.loss)
            .take(last)
            .collect();
        (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Per-pair InfoNCE loss with one mined negative each, used to seed loss
/// scores before training.
pub fn pair_losses(
    ds: &RetrievalDataset,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut miner = NegativeMiner::new(cfg.negatives, cfg.mining_refresh)?;
    let exclusions = exclusion_lists(ds);
    let mut out = Vec::with_capacity(ds.total_pairs());
    for pair in ds.pairs() {
        let neg = miner.mine(pair.query, 0, queries, docs, &exclusions[pair.query], rng)?;
        let q = queries.row_f64(pair.query);
        let (d, n) = (docs.row_f64(pair.doc), docs.row_f64(neg));
        out.push(info_nce_single(&q, &[&d, &n], cfg.temperature)?.loss);
    }
    Ok(out)
}

/// Mean of `pair_losses` over each query's pairs (0 for queries without any).
pub fn query_mean_losses(ds: &RetrievalDataset, pair_losses: &[f64]) -> Vec<f64> {
    (0..ds.n_queries())
        .map(|q| {
            let range = ds.pair_range(q);
            if range.is_empty() {
                0.0
            } else {
                let n = range.len() as f64;
                pair_losses[range].iter().sum::<f64>() / n
            }
        })
        .collect()
}

/// Score every pair for static pruning as configured.
pub fn pair_scores_for(
    ds: &RetrievalDataset,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<PairScoreTable> {
    match cfg.score {
        ScoreKind::Cosine => score_pairs(ds, queries, docs),
        ScoreKind::Cbs => {
            let n = cfg
                .cbs_negatives
                .unwrap_or_else(|| default_cbs_negatives(ds));
            cbs_score(ds, queries, docs, n, &mut rng_for(cfg.seed, "cbs", 0))
        }
    }
}

/// Build the sampler for `cfg.strategy` from the initial embeddings. Also
/// returns the static view for pruning strategies.
pub fn build_sampler(
    cfg: &TrainConfig,
    ds: &Arc<RetrievalDataset>,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
) -> Result<(Box<dyn BatchSampler>, Option<PrunedView>)> {
    let label = cfg.strategy.label();
    let dynamic = |train_ds: Arc<RetrievalDataset>,
                   params: &ScheduleParams|
     -> Result<Box<dyn BatchSampler>> {
        let p = score_pairs(&train_ds, queries, docs)?.scores().to_vec();
        let losses = pair_losses(
            &train_ds,
            queries,
            docs,
            cfg,
            &mut rng_for(cfg.seed, "warmup", 0),
        )?;
        let q = query_mean_losses(&train_ds, &losses);
        Ok(Box::new(DynamicSampler::new(
            train_ds,
            cfg.schedule(params),
            p,
            q,
        )?))
    };
    Ok(match &cfg.strategy {
        StrategyConfig::Ft => (Box::new(FtSampler::new(ds.clone())?), None),
        StrategyConfig::Rp { k } => {
            let view = random_prune(ds, *k, &mut rng_for(cfg.seed, "prune", 0))?;
            (
                Box::new(PrunedSampler::new(ds.clone(), view.clone(), label)?),
                Some(view),
            )
        }
        StrategyConfig::Sp { k } => {
            let view = static_prune(ds, &pair_scores_for(ds, queries, docs, cfg)?, *k)?;
            (
                Box::new(PrunedSampler::new(ds.clone(), view.clone(), label)?),
                Some(view),
            )
        }
        StrategyConfig::Dp { params } => (dynamic(ds.clone(), params)?, None),
        StrategyConfig::SpDp { k, params } => {
            let view = static_prune(ds, &pair_scores_for(ds, queries, docs, cfg)?, *k)?;
            let dropped = ds.active_queries().len() - view.covered_queries();
            if dropped > 0 {
                warn!("static stage removed every positive of {dropped} queries; continuing without them");
            }
            let filtered = Arc::new(view.apply(ds));
            (dynamic(filtered, params)?, Some(view))
        }
        StrategyConfig::InfoBatch { params } => {
            let losses = pair_losses(ds, queries, docs, cfg, &mut rng_for(cfg.seed, "warmup", 0))?;
            let q = query_mean_losses(ds, &losses);
            let s = InfoBatchSampler::new(ds.clone(), params.clone(), cfg.steps, q)?;
            (Box::new(s), None)
        }
    })
}

/// Train with the sampler configured in `cfg`.
pub fn train(
    cfg: &TrainConfig,
    ds: Arc<RetrievalDataset>,
    queries: EmbeddingTable,
    docs: EmbeddingTable,
    paths: &RunPaths,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (sampler, view) = build_sampler(cfg, &ds, &queries, &docs)?;
    let mut out = Trainer::new(cfg, &ds, sampler, queries, docs)?.run(paths)?;
    out.view = view;
    Ok(out)
}

/// Static pruning at retention `sp_k`, then dynamic pruning on what is kept.
pub fn train_two_stage(
    sp_k: f64,
    dp: &TrainConfig,
    ds: Arc<RetrievalDataset>,
    queries: EmbeddingTable,
    docs: EmbeddingTable,
    paths: &RunPaths,
) -> Result<TrainOutcome> {
    let params = match &dp.strategy {
        StrategyConfig::Dp { params } | StrategyConfig::SpDp { params, .. } => params.clone(),
        _ => return Err(Error::config("two-stage training needs a dynamic strategy")),
    };
    let cfg = TrainConfig {
        strategy: StrategyConfig::SpDp { k: sp_k, params },
        ..dp.clone()
    };
    train(&cfg, ds, queries, docs, paths)
}

/// A training run in progress, resumable from checkpoints.
pub struct Trainer {
    cfg: TrainConfig,
    sampler: Box<dyn BatchSampler>,
    miner: NegativeMiner,
    exclusions: Vec<Vec<usize>>,
    queries: EmbeddingTable,
    docs: EmbeddingTable,
    sample_rng: Rng,
    mining_rng: Rng,
    next_step: usize,
}

impl Trainer {
    /// `ds` is the full training set; negatives never come from its positives
    /// even when the sampler sees a pruned view.
    pub fn new(
        cfg: &TrainConfig,
        ds: &RetrievalDataset,
        sampler: Box<dyn BatchSampler>,
        queries: EmbeddingTable,
        docs: EmbeddingTable,
    ) -> Result<Self> {
        cfg.validate()?;
        crate::pruning_static::check_coverage(ds, &queries, &docs)?;
        Ok(Trainer {
            miner: NegativeMiner::new(cfg.negatives, cfg.mining_refresh)?,
            exclusions: exclusion_lists(ds),
            sample_rng: rng_for(cfg.seed, "sample", 0),
            mining_rng: rng_for(cfg.seed, "mine", 0),
            cfg: cfg.clone(),
            sampler,
            queries,
            docs,
            next_step: 1,
        })
    }

    /// Continue from the checkpoint in `dir`, which must come from a run
    /// with the same configuration.
    pub fn resume(&mut self, dir: &Path) -> Result<()> {
        let meta: CheckpointMeta = serde_json::from_slice(
            &std::fs::read(dir.join(CHECKPOINT_META)).map_err(|e| Error::io(dir, e))?,
        )?;
        if meta.config_hash != self.cfg.hash() {
            return Err(Error::config(format!(
                "checkpoint {} was written by a different configuration",
                dir.display()
            )));
        }
        let snap = SamplerSnapshot::load(&dir.join("sampler.snap"))?;
        if snap.strategy != self.sampler.name() {
            return Err(Error::config(format!(
                "checkpoint holds a `{}` sampler, run uses `{}`",
                snap.strategy,
                self.sampler.name()
            )));
        }
        self.queries = EmbeddingTable::load(&dir.join("queries.emb"))?;
        self.docs = EmbeddingTable::load(&dir.join("docs.emb"))?;
        self.sampler.restore(snap.sampler)?;
        self.miner = serde_json::from_value(snap.miner)?;
        self.sample_rng = snap.sample_rng;
        self.mining_rng = snap.mining_rng;
        self.next_step = snap.step + 1;
        Ok(())
    }

    fn checkpoint(&self, root: &Path, step: usize) -> Result<PathBuf> {
        let dir = root.join(format!("step-{step:06}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.queries.save(&dir.join("queries.emb"))?;
        self.docs.save(&dir.join("docs.emb"))?;
        SamplerSnapshot {
            strategy: self.sampler.name().to_string(),
            step,
            sampler: self.sampler.state(),
            miner: serde_json::to_value(&self.miner)?,
            sample_rng: self.sample_rng.clone(),
            mining_rng: self.mining_rng.clone(),
        }
        .save(&dir.join("sampler.snap"))?;
        let meta = CheckpointMeta {
            step,
            config_hash: self.cfg.hash(),
        };
        let path = dir.join(CHECKPOINT_META);
        std::fs::write(&path, serde_json::to_vec_pretty(&meta)?)
            .map_err(|e| Error::io(&path, e))?;
        Ok(dir)
    }

    fn step(&mut self, step: usize, trained: &mut [bool]) -> Result<StepRecord> {
        let lr = self.cfg.learning_rate_at(step);
        let t0 = Instant::now();
        let (draws, batch) = next_batch(
            self.sampler.as_mut(),
            &mut self.miner,
            &self.exclusions,
            step,
            self.cfg.batch_size,
            &self.queries,
            &self.docs,
            &mut self.sample_rng,
            &mut self.mining_rng,
        )?;
        let t1 = Instant::now();
        let (loss, t2, t3, t4) = if batch.is_empty() {
            let t = Instant::now();
            (None, t, t, t)
        } else {
            let out = info_nce(&batch, &self.queries, &self.docs, self.cfg.temperature)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss".into(),
                    step,
                });
            }
            let t2 = Instant::now();
            sgd_step(&mut self.queries, &mut self.docs, &out.gradients, lr).map_err(
                |e| match e {
                    Error::NonFinite { what, .. } => Error::NonFinite { what, step },
                    e => e,
                },
            )?;
            let t3 = Instant::now();
            let feedback: Vec<PairFeedback> = draws
                .iter()
                .zip(&out.outcomes)
                .map(|(d, o)| PairFeedback {
                    query: d.query,
                    pair: d.pair,
                    positive_sim: o.positive_sim,
                    loss: o.loss,
                })
                .collect();
            self.sampler.observe(step, &feedback)?;
            (Some(out.loss), t2, t3, Instant::now())
        };
        for d in &draws {
            trained[d.query] = true;
        }
        let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
        Ok(StepRecord {
            step,
            loss,
            ms: ms(t0, t4),
            sampler_ms: ms(t0, t1) + ms(t3, t4),
            encoder_ms: ms(t1, t2),
            update_ms: ms(t2, t3),
            batch: batch.len(),
            lr,
        })
    }

    /// Run steps up to and including `until` without writing any output,
    /// returning their records.
    pub fn advance(&mut self, until: usize) -> Result<Vec<StepRecord>> {
        let mut trained = vec![false; self.queries.len()];
        let mut records = Vec::new();
        while self.next_step <= until.min(self.cfg.steps) {
            records.push(self.step(self.next_step, &mut trained)?);
            self.next_step += 1;
        }
        Ok(records)
    }

    pub fn run(mut self, paths: &RunPaths) -> Result<TrainOutcome> {
        let mut log_file = match &paths.run_log {
            Some(p) => Some((
                BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?),
                p,
            )),
            None => None,
        };
        let mut trace = match (&paths.trace, self.cfg.trace_every) {
            (Some(p), n) if n > 0 => Some(TraceWriter::create(p)?),
            _ => None,
        };
        let mut log = Vec::new();
        let mut trained = vec![false; self.queries.len()];
        let cfg = self.cfg.clone();

        for step in self.next_step..=cfg.steps {
            if let Some(t) = trace.as_mut() {
                if step == 1 || step % cfg.trace_every == 0 {
                    t.record(step, self.sampler.as_ref())?;
                }
            }
            let record = self.step(step, &mut trained)?;
            if let Some((w, p)) = log_file.as_mut() {
                serde_json::to_writer(&mut *w, &record)?;
                writeln!(w).map_err(|e| Error::io(p.as_path(), e))?;
            }
            log.push(record);
            if let Some(root) = &paths.checkpoints {
                if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                    let dir = self.checkpoint(root, step)?;
                    info!("checkpoint written to {}", dir.display());
                }
            }
        }
        if let Some(t) = trace {
            t.finish()?;
        }
        if let Some((mut w, p)) = log_file {
            w.flush().map_err(|e| Error::io(p.as_path(), e))?;
        }
        Ok(TrainOutcome {
            trained_queries: trained.iter().filter(|&&t| t).count(),
            mining_fallbacks: self.miner.fallbacks(),
            queries: self.queries,
            docs: self.docs,
            log,
            view: None,
        })
    }
}

const CHECKPOINT_META: &str = "checkpoint.json";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    step: usize,
    config_hash: String,
}

/// Read a JSON-lines run log.
pub fn read_run_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticWorldConfig};

    fn small_world() -> (Arc<RetrievalDataset>, EmbeddingTable, EmbeddingTable) {
        let cfg = SyntheticWorldConfig {
            dim: 8,
            n_queries: 20,
            docs_per_query: 4,
            n_random_negatives: 40,
            seed: 3,
            ..SyntheticWorldConfig::default()
        };
        let w = generate_synthetic(&cfg).unwrap();
        (Arc::new(w.dataset), w.queries, w.docs)
    }

    fn cfg(strategy: StrategyConfig) -> TrainConfig {
        TrainConfig {
            strategy,
            steps: 60,
            batch_size: 8,
            learning_rate: 0.005,
            negatives: NegativeSource::Random,
            trace_every: 20,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_leaves_tables_alone() {
        let (ds, q, d) = small_world();
        let c = TrainConfig {
            steps: 0,
            ..cfg(StrategyConfig::Ft)
        };
        let out = train(&c, ds, q.clone(), d.clone(), &RunPaths::default()).unwrap();
        assert_eq!(out.queries, q);
        assert_eq!(out.docs, d);
        assert!(out.log.is_empty());
    }

    #[test]
    fn runs_are_deterministic() {
        for strategy in [
            StrategyConfig::Ft,
            StrategyConfig::Dp {
                params: ScheduleParams::default(),
            },
            StrategyConfig::InfoBatch {
                params: Default::default(),
            },
        ] {
            let (ds, q, d) = small_world();
            let c = cfg(strategy);
            let a = train(&c, ds.clone(), q.clone(), d.clone(), &RunPaths::default()).unwrap();
            let b = train(&c, ds, q, d, &RunPaths::default()).unwrap();
            assert_eq!(a.queries, b.queries);
            assert_eq!(a.docs, b.docs);
        }
    }

    #[test]
    fn learning_rate_decays_linearly() {
        let c = TrainConfig {
            steps: 4,
            learning_rate: 1.0,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (1..=4).map(|t| c.learning_rate_at(t)).collect();
        assert_eq!(lrs, vec![1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn two_stage_with_full_retention_is_plain_dp() {
        let (ds, q, d) = small_world();
        let dp = cfg(StrategyConfig::Dp {
            params: ScheduleParams::default(),
        });
        let a = train(&dp, ds.clone(), q.clone(), d.clone(), &RunPaths::default()).unwrap();
        let b = train_two_stage(1.0, &dp, ds, q, d, &RunPaths::default()).unwrap();
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.docs, b.docs);
    }

    #[test]
    fn timing_phases_add_up() {
        let (ds, q, d) = small_world();
        let out = train(&cfg(StrategyConfig::Ft), ds, q, d, &RunPaths::default()).unwrap();
        for r in &out.log {
            let parts = r.sampler_ms + r.encoder_ms + r.update_ms;
            assert!((parts - r.ms).abs() <= 0.01 * r.ms + 1e-9);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, q, d) = small_world();
        let c = TrainConfig {
            checkpoint_every: 30,
            negatives: NegativeSource::Hard(MiningRange { start: 2, end: 10 }),
            mining_refresh: 7,
            ..cfg(StrategyConfig::Dp {
                params: ScheduleParams {
                    update_interval: 4,
                    ..Default::default()
                },
            })
        };
        let paths = RunPaths {
            checkpoints: Some(dir.path().to_path_buf()),
            run_log: Some(dir.path().join("log.jsonl")),
            ..RunPaths::default()
        };
        let full = train(&c, ds.clone(), q.clone(), d.clone(), &paths).unwrap();
        assert_eq!(
            read_run_log(&dir.path().join("log.jsonl")).unwrap().len(),
            60
        );

        let (sampler, _) = build_sampler(&c, &ds, &q, &d).unwrap();
        let mut t = Trainer::new(&c, &ds, sampler, q, d).unwrap();
        t.resume(&dir.path().join("step-000030")).unwrap();
        let resumed = t.run(&RunPaths::default()).unwrap();
        assert_eq!(resumed.log.len(), 30);
        assert_eq!(resumed.queries, full.queries);
        assert_eq!(resumed.docs, full.docs);
    }

    #[test]
    fn resume_rejects_other_configs() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, q, d) = small_world();
        let c = TrainConfig {
            checkpoint_every: 30,
            ..cfg(StrategyConfig::Ft)
        };
        let paths = RunPaths {
            checkpoints: Some(dir.path().to_path_buf()),
            ..RunPaths::default()
        };
        train(&c, ds.clone(), q.clone(), d.clone(), &paths).unwrap();
        let other = TrainConfig { seed: 1, ..c };
        let (sampler, _) = build_sampler(&other, &ds, &q, &d).unwrap();
        let mut t = Trainer::new(&other, &ds, sampler, q, d).unwrap();
        assert!(t.resume(&dir.path().join("step-000030")).is_err());
    }
}
