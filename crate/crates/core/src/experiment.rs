//! Experiment orchestration: configs, multi-seed strategy runs, sweeps,
//! overhead benchmarks and output manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{error, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    generate_synthetic, inject_noise, load_qrels, Grade, RetrievalDataset, SyntheticWorld,
    SyntheticWorldConfig,
};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Metric, MetricsReport, CUTOFFS};
use crate::mining::NegativeSource;
use crate::pruning_dynamic::StrategyConfig;
use crate::rng::derive_seed;
use crate::schedules::ScheduleParams;
use crate::trainer::{build_sampler, train, RunPaths, TrainConfig, Trainer};

/// Retention rates of the static-pruning sweep.
pub const SWEEP_GRID: [f64; 6] = [0.05, 0.1, 0.25, 0.5, 0.75, 1.0];

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "OPERA_PRUNE_THREADS";

/// Files whose contents depend on wall-clock time.
const NONDETERMINISTIC: [&str; 1] = ["run_log.jsonl"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// A generated world; each run seed generates its own.
    Synthetic(SyntheticWorldConfig),
    /// Qrels plus pretrained embeddings whose rows follow the id files.
    Files {
        qrels: PathBuf,
        queries: PathBuf,
        docs: PathBuf,
        /// One query id per line, in row order of `queries`.
        query_ids: PathBuf,
        /// One document id per line, in row order of `docs`.
        doc_ids: PathBuf,
        /// Train on positives with at least this grade.
        #[serde(default)]
        min_grade: Option<Grade>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: SWEEP_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub intervals: Vec<usize>,
    /// Timed repetitions per row; the fastest is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            intervals: vec![1, 10, 100],
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub data: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
    /// Strategies to compare; `train.strategy` alone when empty.
    #[serde(default)]
    pub strategies: Vec<StrategyConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_cutoffs() -> Vec<usize> {
    CUTOFFS.to_vec()
}

impl ExperimentConfig {
    pub fn new(data: DataSource) -> Self {
        ExperimentConfig {
            output: default_output(),
            data,
            train: TrainConfig::default(),
            strategies: Vec::new(),
            seeds: default_seeds(),
            cutoffs: default_cutoffs(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
        }
    }

    /// Parse TOML, apply `key=value` overrides (dotted keys, values in TOML
    /// syntax or bare strings) and validate. Relative paths resolve against
    /// the config file's directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, overrides)?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        for (key, raw) in overrides {
            set_dotted(&mut table, key, parse_override(raw))?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))
    }

    /// Apply `key=value` overrides to an already built config.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let cfg = Self::from_toml(&self.to_toml()?, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        if let DataSource::Files {
            qrels,
            queries,
            docs,
            query_ids,
            doc_ids,
            ..
        } = &mut self.data
        {
            for p in [qrels, queries, docs, query_ids, doc_ids] {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::config(
                "cutoffs must be a non-empty list of positive ranks",
            ));
        }
        for s in self.strategy_list() {
            TrainConfig {
                strategy: s,
                ..self.train.clone()
            }
            .validate()?;
        }
        match &self.data {
            DataSource::Synthetic(w) => w.validate()?,
            DataSource::Files {
                qrels,
                queries,
                docs,
                query_ids,
                doc_ids,
                ..
            } => {
                for p in [qrels, queries, docs, query_ids, doc_ids] {
                    if !p.exists() {
                        return Err(Error::config(format!("{} does not exist", p.display())));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn strategy_list(&self) -> Vec<StrategyConfig> {
        if self.strategies.is_empty() {
            vec![self.train.strategy.clone()]
        } else {
            self.strategies.clone()
        }
    }

    /// Strategy labels, made unique by suffixing repeats.
    pub fn labels(&self) -> Vec<String> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        self.strategy_list()
            .iter()
            .map(|s| {
                let base = s.label();
                let n = seen.entry(base.clone()).or_insert(0);
                *n += 1;
                if *n == 1 {
                    base
                } else {
                    format!("{base}-{n}")
                }
            })
            .collect()
    }
}

fn parse_override(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A dataset with its initial embeddings.
#[derive(Debug, Clone)]
pub struct LoadedData {
    /// Training positives.
    pub train: Arc<RetrievalDataset>,
    /// Evaluation judgments, indexed like `train`.
    pub eval: Arc<RetrievalDataset>,
    pub queries: EmbeddingTable,
    pub docs: EmbeddingTable,
}

/// Materialize the data for run seed `seed`.
pub fn load_data(source: &DataSource, seed: u64) -> Result<LoadedData> {
    match source {
        DataSource::Synthetic(w) => {
            let cfg = SyntheticWorldConfig {
                seed: derive_seed(seed, "world", w.seed),
                ..w.clone()
            };
            let world = generate_synthetic(&cfg)?;
            let ds = Arc::new(world.dataset);
            Ok(LoadedData {
                train: ds.clone(),
                eval: ds,
                queries: world.queries,
                docs: world.docs,
            })
        }
        DataSource::Files {
            qrels,
            queries,
            docs,
            query_ids,
            doc_ids,
            min_grade,
        } => {
            let doc_list = read_ids(doc_ids)?;
            let full = load_qrels(qrels)?.with_corpus(&doc_list);
            let queries = reorder(
                &EmbeddingTable::load(queries)?,
                &read_ids(query_ids)?,
                full.query_ids(),
                "query",
            )?;
            let docs = reorder(
                &EmbeddingTable::load(docs)?,
                &doc_list,
                full.doc_ids(),
                "document",
            )?;
            let train = match min_grade {
                Some(g) => inject_noise(&full, *g)?,
                None => full.clone(),
            };
            Ok(LoadedData {
                train: Arc::new(train),
                eval: Arc::new(full),
                queries,
                docs,
            })
        }
    }
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn reorder(
    table: &EmbeddingTable,
    ids: &[String],
    wanted: &[String],
    kind: &'static str,
) -> Result<EmbeddingTable> {
    if ids.len() != table.len() {
        return Err(Error::DimensionMismatch {
            expected: table.len(),
            found: ids.len(),
        });
    }
    let row_of: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let rows = wanted
        .iter()
        .map(|id| {
            row_of
                .get(id.as_str())
                .map(|&r| table.row_f64(r))
                .ok_or_else(|| Error::MissingEmbedding {
                    kind,
                    id: id.clone(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::from_rows(table.dim(), &rows)
}

/// Write a generated world as qrels, embedding files and id lists, in the
/// layout [`DataSource::Files`] reads.
pub fn write_world(world: &SyntheticWorld, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    world.dataset.save_qrels(&dir.join("qrels.tsv"))?;
    world.queries.save(&dir.join("queries.emb"))?;
    world.docs.save(&dir.join("docs.emb"))?;
    let write_ids = |name: &str, ids: &[String]| {
        let p = dir.join(name);
        fs::write(&p, ids.join("\n") + "\n").map_err(|e| Error::io(&p, e))
    };
    write_ids("query_ids.txt", world.dataset.query_ids())?;
    write_ids("doc_ids.txt", world.dataset.doc_ids())
}

/// Thread pool of `jobs` workers (all cores if unset), capped by
/// `OPERA_PRUNE_THREADS`.
pub fn worker_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut n = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Ok(cap) = std::env::var(THREADS_ENV) {
        let cap: usize = cap.trim().parse().map_err(|_| {
            Error::config(format!(
                "{THREADS_ENV} must be a positive integer, got `{cap}`"
            ))
        })?;
        n = n.min(cap);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::config(e.to_string()))
}

/// Outcome of one (strategy, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub trained_queries: usize,
    pub retention: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFailure {
    pub label: String,
    pub seed: u64,
    pub error: String,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanSd {
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

impl fmt::Display for MeanSd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub label: String,
    pub seeds: usize,
    /// `metric name -> cutoff -> mean ± sd`.
    pub metrics: BTreeMap<String, BTreeMap<usize, MeanSd>>,
    pub trained_queries: MeanSd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<StrategySummary>,
}

impl ExperimentReport {
    pub fn strategy(&self, label: &str) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.label == label)
    }

    /// Seed mean of `metric@k` for `label`.
    pub fn mean(&self, label: &str, metric: Metric, k: usize) -> Option<f64> {
        self.strategy(label)?
            .metrics
            .get(metric.name())?
            .get(&k)
            .map(|m| m.mean)
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = [
            (Metric::Ndcg, 10),
            (Metric::Recall, 20),
            (Metric::Success, 10),
            (Metric::Mrr, 10),
        ];
        write!(f, "{:<12} {:>5}", "strategy", "seeds")?;
        for (m, k) in cols {
            write!(f, " {:>17}", format!("{}@{k}", m.name()))?;
        }
        writeln!(f, " {:>17}", "trained queries")?;
        for s in &self.summary {
            write!(f, "{:<12} {:>5}", s.label, s.seeds)?;
            for (m, k) in cols {
                match s.metrics.get(m.name()).and_then(|r| r.get(&k)) {
                    Some(v) => write!(f, " {:>17}", v.to_string())?,
                    None => write!(f, " {:>17}", "-")?,
                }
            }
            writeln!(f, " {:>17}", format!("{:.1}", s.trained_queries.mean))?;
        }
        for fail in &self.failures {
            writeln!(
                f,
                "FAILED {} seed {}: {}",
                fail.label, fail.seed, fail.error
            )?;
        }
        Ok(())
    }
}

fn summarize(labels: &[String], runs: &[RunResult]) -> Vec<StrategySummary> {
    labels
        .iter()
        .filter_map(|label| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| &r.label == label).collect();
            if mine.is_empty() {
                return None;
            }
            let mut metrics = BTreeMap::new();
            for (metric, row) in &mine[0].metrics.values {
                let mut out = BTreeMap::new();
                for k in row.keys() {
                    let vals: Vec<f64> = mine
                        .iter()
                        .filter_map(|r| r.metrics.get(*metric, *k))
                        .collect();
                    out.insert(*k, MeanSd::of(&vals));
                }
                metrics.insert(metric.name().to_string(), out);
            }
            let trained: Vec<f64> = mine.iter().map(|r| r.trained_queries as f64).collect();
            Some(StrategySummary {
                label: label.clone(),
                seeds: mine.len(),
                metrics,
                trained_queries: MeanSd::of(&trained),
            })
        })
        .collect()
}

fn run_one(
    cfg: &ExperimentConfig,
    strategy: &StrategyConfig,
    label: &str,
    seed: u64,
    data: &LoadedData,
) -> Result<RunResult> {
    let dir = cfg.output.join(label).join(format!("seed-{seed}"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let train_cfg = TrainConfig {
        strategy: strategy.clone(),
        seed,
        ..cfg.train.clone()
    };
    let paths = RunPaths {
        run_log: Some(dir.join("run_log.jsonl")),
        trace: Some(dir.join("trace.csv")),
        checkpoints: Some(dir.join("checkpoints")),
    };
    let out = train(
        &train_cfg,
        data.train.clone(),
        data.queries.clone(),
        data.docs.clone(),
        &paths,
    )?;
    out.queries.save(&dir.join("queries.emb"))?;
    out.docs.save(&dir.join("docs.emb"))?;
    if let Some(view) = &out.view {
        view.write_csv(&dir.join("pruned_view.csv"))?;
    }
    let metrics = evaluate(&data.eval, &out.queries, &out.docs, &cfg.cutoffs)?
        .with_metadata("strategy", label)
        .with_metadata("seed", seed)
        .with_metadata("steps", train_cfg.steps);
    metrics.save_json(&dir.join("metrics.json"))?;
    Ok(RunResult {
        label: label.to_string(),
        seed,
        metrics,
        trained_queries: out.trained_queries,
        retention: out.view.as_ref().map(|v| v.retention()),
        final_loss: out.mean_loss(50),
    })
}

/// Train and evaluate every configured strategy under every seed.
///
/// A failing run is recorded and the others continue.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    pool: &rayon::ThreadPool,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let strategies = cfg.strategy_list();
    let labels = cfg.labels();
    let data: Vec<LoadedData> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| load_data(&cfg.data, s))
            .collect::<Result<_>>()
    })?;
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|si| (0..strategies.len()).map(move |i| (si, i)))
        .collect();
    let results: Vec<std::result::Result<RunResult, RunFailure>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(si, i)| {
                let seed = cfg.seeds[si];
                info!("running {} seed {seed}", labels[i]);
                run_one(cfg, &strategies[i], &labels[i], seed, &data[si]).map_err(|e| {
                    error!("{} seed {seed} failed: {e}", labels[i]);
                    RunFailure {
                        label: labels[i].clone(),
                        seed,
                        error: e.to_string(),
                    }
                })
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(r) => runs.push(r),
            Err(f) => failures.push(f),
        }
    }
    let report = ExperimentReport {
        summary: summarize(&labels, &runs),
        runs,
        failures,
    };
    let summary_json = cfg.output.join("summary.json");
    fs::write(&summary_json, serde_json::to_vec_pretty(&report)?)
        .map_err(|e| Error::io(&summary_json, e))?;
    let summary_txt = cfg.output.join("summary.txt");
    fs::write(&summary_txt, report.to_string()).map_err(|e| Error::io(&summary_txt, e))?;
    let config_path = cfg.output.join("config.toml");
    fs::write(&config_path, cfg.to_toml()?).map_err(|e| Error::io(&config_path, e))?;
    write_manifest(&cfg.output)?;
    Ok(report)
}

/// One point of the static-pruning sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: f64,
    pub ndcg_at_10: MeanSd,
    pub recall_at_20: MeanSd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Retention with the highest mean NDCG@10.
    pub peak_k: f64,
    /// Spearman correlation of mean Recall@20 with k.
    pub recall_spearman: f64,
}

impl SweepReport {
    pub fn peak_is_interior(&self) -> bool {
        let max_k = self
            .points
            .iter()
            .map(|p| p.k)
            .fold(f64::NEG_INFINITY, f64::max);
        self.peak_k < max_k
    }
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>17} {:>17}", "k", "ndcg@10", "recall@20")?;
        for p in &self.points {
            writeln!(
                f,
                "{:>6} {:>17} {:>17}",
                p.k,
                p.ndcg_at_10.to_string(),
                p.recall_at_20.to_string()
            )?;
        }
        write!(
            f,
            "peak NDCG@10 at k = {}; Spearman(recall@20, k) = {:.3}",
            self.peak_k, self.recall_spearman
        )
    }
}

/// Static pruning at every retention of `cfg.sweep.grid`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    pool: &rayon::ThreadPool,
) -> Result<(ExperimentReport, SweepReport)> {
    let mut grid = cfg.sweep.grid.clone();
    if grid.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    grid.sort_by(f64::total_cmp);
    let sweep_cfg = ExperimentConfig {
        strategies: grid.iter().map(|&k| StrategyConfig::Sp { k }).collect(),
        ..cfg.clone()
    };
    let report = run_experiment(&sweep_cfg, pool)?;
    let labels = sweep_cfg.labels();
    let mut points = Vec::new();
    for (k, label) in grid.iter().zip(&labels) {
        let s = report
            .strategy(label)
            .ok_or_else(|| Error::Empty(format!("every run of {label} failed")))?;
        let pick = |m: Metric, c: usize| s.metrics.get(m.name()).and_then(|r| r.get(&c)).copied();
        points.push(SweepPoint {
            k: *k,
            ndcg_at_10: pick(Metric::Ndcg, 10)
                .ok_or_else(|| Error::config("sweep needs cutoff 10"))?,
            recall_at_20: pick(Metric::Recall, 20)
                .ok_or_else(|| Error::config("sweep needs cutoff 20"))?,
        });
    }
    let peak_k = points
        .iter()
        .fold((f64::NEG_INFINITY, f64::NAN), |(best, bk), p| {
            if p.ndcg_at_10.mean > best {
                (p.ndcg_at_10.mean, p.k)
            } else {
                (best, bk)
            }
        })
        .1;
    let ks: Vec<f64> = points.iter().map(|p| p.k).collect();
    let recalls: Vec<f64> = points.iter().map(|p| p.recall_at_20.mean).collect();
    let sweep = SweepReport {
        recall_spearman: spearman(&ks, &recalls),
        peak_k,
        points,
    };
    let path = cfg.output.join("sweep.json");
    fs::write(&path, serde_json::to_vec_pretty(&sweep)?).map_err(|e| Error::io(&path, e))?;
    write_manifest(&cfg.output)?;
    Ok((report, sweep))
}

/// Strategies of the denoising study: plain finetuning, static pruning at
/// `k`, dynamic pruning, and the two stages combined.
pub fn denoise_strategies(k: f64, params: &ScheduleParams) -> Vec<StrategyConfig> {
    vec![
        StrategyConfig::Ft,
        StrategyConfig::Sp { k },
        StrategyConfig::Dp {
            params: params.clone(),
        },
        StrategyConfig::SpDp {
            k,
            params: params.clone(),
        },
    ]
}

/// Ranks with ties averaged, 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub update_interval: Option<usize>,
    /// Fastest total step time over the repeats.
    pub seconds: f64,
    /// Relative to the FT baseline, in percent.
    pub slowdown_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub steps: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn slowdown(&self, interval: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.update_interval == Some(interval))
            .map(|r| r.slowdown_pct)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>6} {:>10} {:>10}",
            "sampler", "I_u", "seconds", "slowdown"
        )?;
        for r in &self.rows {
            let iu = r.update_interval.map_or("-".to_string(), |i| i.to_string());
            writeln!(
                f,
                "{:<10} {:>6} {:>10.3} {:>9.2}%",
                r.label, iu, r.seconds, r.slowdown_pct
            )?;
        }
        write!(f, "{} steps per run", self.steps)
    }
}

/// Minimum wall time of the training loop over `repeats` runs.
const BENCH_CHUNK: usize = 50;

// Advances one trainer per variant through the same steps, a chunk at a
// time in rotating order, and returns each variant's summed step time.
fn lockstep_seconds(
    base: &TrainConfig,
    variants: &[(String, Option<usize>, StrategyConfig)],
    data: &LoadedData,
    rotation: usize,
) -> Result<Vec<f64>> {
    let mut trainers = variants
        .iter()
        .map(|(_, _, strategy)| {
            let c = TrainConfig {
                strategy: strategy.clone(),
                ..base.clone()
            };
            let (sampler, _) = build_sampler(&c, &data.train, &data.queries, &data.docs)?;
            Trainer::new(
                &c,
                &data.train,
                sampler,
                data.queries.clone(),
                data.docs.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut totals = vec![0.0; trainers.len()];
    let mut chunk = 0;
    while chunk * BENCH_CHUNK < base.steps {
        chunk += 1;
        for j in 0..trainers.len() {
            let i = (j + chunk + rotation) % trainers.len();
            let records = trainers[i].advance(chunk * BENCH_CHUNK)?;
            totals[i] += records.iter().map(|r| r.ms).sum::<f64>() / 1e3;
        }
    }
    Ok(totals)
}

/// Per-step cost of dynamic pruning against finetuning on the same workload,
/// at each configured query-update interval. A second FT run gives the noise
/// band. All variants advance together in short chunks so they share the
/// machine's load.
pub fn bench_overhead(cfg: &ExperimentConfig) -> Result<BenchReport> {
    cfg.validate()?;
    if cfg.bench.repeats == 0 {
        return Err(Error::config("bench.repeats must be at least 1"));
    }
    let data = load_data(&cfg.data, cfg.seeds[0])?;
    let params = cfg
        .strategy_list()
        .into_iter()
        .find_map(|s| match s {
            StrategyConfig::Dp { params } => Some(params),
            _ => None,
        })
        .unwrap_or_default();
    let base = TrainConfig {
        seed: cfg.seeds[0],
        trace_every: 0,
        checkpoint_every: 0,
        ..cfg.train.clone()
    };
    let mut variants = vec![
        ("ft".to_string(), None, StrategyConfig::Ft),
        ("ft".to_string(), None, StrategyConfig::Ft),
    ];
    for &iu in &cfg.bench.intervals {
        let p = ScheduleParams {
            update_interval: iu,
            ..params.clone()
        };
        variants.push(("dp".to_string(), Some(iu), StrategyConfig::Dp { params: p }));
    }
    let mut best = vec![f64::INFINITY; variants.len()];
    for r in 0..cfg.bench.repeats {
        let totals = lockstep_seconds(&base, &variants, &data, r)?;
        for (b, t) in best.iter_mut().zip(totals) {
            *b = b.min(t);
        }
    }
    if best[0] < 1.0 {
        return Err(Error::config(format!(
            "the baseline ran for {:.3} s, too short to time reliably; raise train.steps so a run lasts at least 1 s",
            best[0]
        )));
    }
    let rows = variants
        .into_iter()
        .zip(&best)
        .map(|((label, iu, _), &s)| BenchRow {
            label,
            update_interval: iu,
            seconds: s,
            slowdown_pct: (s / best[0] - 1.0) * 100.0,
        })
        .collect();
    Ok(BenchReport {
        steps: base.steps,
        rows,
    })
}

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
    /// False for files holding wall-clock timings.
    pub deterministic: bool,
}

pub const MANIFEST: &str = "manifest.json";

/// List every file under `root` (except the manifest) with its SHA-256, and
/// write the list to `root/manifest.json`.
pub fn write_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    files.sort();
    let mut entries = Vec::new();
    for path in files {
        let rel = path
            .strip_prefix(root)
            .expect("walked under root")
            .to_string_lossy()
            .replace('\\', "/");
        if rel == MANIFEST {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        entries.push(ManifestEntry {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
            deterministic: !NONDETERMINISTIC.contains(&name.as_str()),
        });
    }
    let out = root.join(MANIFEST);
    fs::write(&out, serde_json::to_vec_pretty(&entries)?).map_err(|e| Error::io(&out, e))?;
    Ok(entries)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// A noisy world for the pruning studies: 30% false positives and queries
/// grouped into topics so that neighbours supply hard negatives.
pub fn noisy_world_config() -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        n_queries: 800,
        noise_rate: 0.3,
        query_perturbation: 0.7,
        noise_direction_cosine: 0.3,
        n_topics: 20,
        topic_spread: 0.6,
        ..SyntheticWorldConfig::default()
    }
}

/// Train settings shared by all strategies of the noisy-world studies.
pub fn noisy_train_config() -> TrainConfig {
    TrainConfig {
        steps: 275,
        learning_rate: 0.5,
        ..TrainConfig::default()
    }
}

/// The noisy-world study over seeds 0 to 4, used when no config file is
/// given.
pub fn noisy_study() -> ExperimentConfig {
    ExperimentConfig {
        train: noisy_train_config(),
        seeds: (0..5).collect(),
        ..ExperimentConfig::new(DataSource::Synthetic(noisy_world_config()))
    }
}

/// The overhead benchmark workload: embeddings as wide as a base-size
/// transformer and 10^4 steps against random negatives.
pub fn overhead_study() -> ExperimentConfig {
    let data = SyntheticWorldConfig {
        dim: 768,
        n_queries: 1000,
        n_random_negatives: 1000,
        ..SyntheticWorldConfig::default()
    };
    ExperimentConfig {
        train: TrainConfig {
            steps: 10_000,
            learning_rate: 0.01,
            negatives: NegativeSource::Random,
            ..TrainConfig::default()
        },
        seeds: vec![0],
        bench: BenchConfig {
            repeats: 1,
            ..BenchConfig::default()
        },
        ..ExperimentConfig::new(DataSource::Synthetic(data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_study_survives_a_toml_round_trip() {
        for study in [noisy_study(), overhead_study()] {
            assert_eq!(study.with_overrides(&[]).unwrap(), study);
        }
        let study = noisy_study();
        let o = vec![("data.n_queries".to_string(), "12".to_string())];
        let changed = study.with_overrides(&o).unwrap();
        assert!(matches!(changed.data, DataSource::Synthetic(ref w) if w.n_queries == 12));
        assert!(study
            .with_overrides(&[("train.nope".into(), "1".into())])
            .is_err());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let text = r#"
            [data]
            source = "synthetic"
            n_queries = 10
        "#;
        let overrides = vec![
            ("train.steps".to_string(), "7".to_string()),
            ("data.dim".to_string(), "4".to_string()),
            ("output".to_string(), "somewhere/else".to_string()),
            ("seeds".to_string(), "[3, 4]".to_string()),
        ];
        let cfg = ExperimentConfig::from_toml(text, &overrides).unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.output, PathBuf::from("somewhere/else"));
        match cfg.data {
            DataSource::Synthetic(w) => assert_eq!((w.dim, w.n_queries), (4, 10)),
            _ => panic!("wrong source"),
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = "[data]\nsource = \"synthetic\"\n[train]\nstepz = 3\n";
        let err = ExperimentConfig::from_toml(text, &[])
            .unwrap_err()
            .to_string();
        assert!(err.contains("stepz"), "{err}");
        let err = ExperimentConfig::from_toml("[data]\nsource = \"synthetic\"\nbogus = 1\n", &[])
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn strategies_parse_and_label_uniquely() {
        let text = r#"
            [data]
            source = "synthetic"
            [[strategies]]
            kind = "ft"
            [[strategies]]
            kind = "sp"
            k = 0.25
            [[strategies]]
            kind = "dp"
            params = { update_interval = 10 }
            [[strategies]]
            kind = "dp"
            params = {}
        "#;
        let cfg = ExperimentConfig::from_toml(text, &[]).unwrap();
        assert_eq!(cfg.labels(), vec!["ft", "sp25", "dp", "dp-2"]);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert!(
            (spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]) - 0.9486832980505138).abs()
                < 1e-12
        );
    }

    #[test]
    fn mean_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]);
        assert_eq!((m.mean, m.sd), (2.0, 1.0));
        assert_eq!(MeanSd::of(&[5.0]).sd, 0.0);
    }

    #[test]
    fn files_source_round_trips_a_world() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_synthetic(&SyntheticWorldConfig {
            n_queries: 5,
            n_random_negatives: 7,
            dim: 4,
            ..Default::default()
        })
        .unwrap();
        write_world(&w, dir.path()).unwrap();
        let src = DataSource::Files {
            qrels: dir.path().join("qrels.tsv"),
            queries: dir.path().join("queries.emb"),
            docs: dir.path().join("docs.emb"),
            query_ids: dir.path().join("query_ids.txt"),
            doc_ids: dir.path().join("doc_ids.txt"),
            min_grade: None,
        };
        let data = load_data(&src, 0).unwrap();
        assert_eq!(data.train.n_docs(), w.dataset.n_docs());
        assert_eq!(data.train.total_pairs(), w.dataset.total_pairs());
        for q in 0..5 {
            let id = &data.train.query_ids()[q];
            let orig = w.dataset.query_ids().iter().position(|x| x == id).unwrap();
            assert_eq!(data.queries.row(q), w.queries.row(orig));
        }
    }

    #[test]
    fn manifest_lists_files_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("a")).unwrap();
        fs::write(dir.path().join("a/run_log.jsonl"), "x").unwrap();
        fs::write(dir.path().join("b.txt"), "abc").unwrap();
        let m = write_manifest(dir.path()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].path, "a/run_log.jsonl");
        assert!(!m[0].deterministic);
        assert_eq!(
            m[1].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        // rewriting skips the manifest itself
        assert_eq!(write_manifest(dir.path()).unwrap().len(), 2);
    }
}
