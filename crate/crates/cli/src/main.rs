//! `opera-prune`: generate worlds, prune, train, evaluate and run the
//! pruning studies from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use opera_prune::dataset::generate_synthetic;
use opera_prune::embedding::EmbeddingTable;
use opera_prune::experiment::{
    bench_overhead, denoise_strategies, load_data, noisy_study, overhead_study, run_experiment,
    run_sweep, worker_pool, write_manifest, write_world, DataSource, ExperimentConfig,
    ExperimentReport,
};
use opera_prune::metrics::evaluate;
use opera_prune::pruning_static::static_prune;
use opera_prune::rng::rng_for;
use opera_prune::schedules::ScheduleParams;
use opera_prune::theory::{self, InstanceBounds};
use opera_prune::trainer::pair_scores_for;
use opera_prune::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(
    name = "opera-prune",
    version,
    about = "Data pruning for contrastive dense-retrieval training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). The built-in noisy-world study if omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Worker threads; all cores if unset, capped by OPERA_PRUNE_THREADS.
    #[arg(short, long)]
    jobs: Option<usize>,
    /// Config overrides as `--key=value` with dotted keys, e.g.
    /// `--train.steps=500`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY=VALUE"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic world as qrels, embeddings and id lists.
    Generate {
        #[arg(short, long)]
        out: PathBuf,
        /// Seed whose world to write.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Score every positive pair with the pretrained embeddings.
    Score {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Keep the top fraction `k` of pairs by pretrained score.
    Prune {
        #[arg(short)]
        k: f64,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Train `train.strategy` under every seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run every configured strategy under every seed.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate trained embeddings against the config's judgments.
    Eval {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Static pruning across the retention grid `sweep.grid`.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// FT, SP, DP and SP followed by DP at retention `k`.
    Denoise {
        #[arg(short, default_value_t = 0.5)]
        k: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Check the selection theorem and the derivative lemma on random
    /// instances.
    VerifyTheory {
        #[arg(long, default_value_t = 10_000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest tolerated relative error of the lemma derivative.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Time dynamic pruning against finetuning at each update interval
    /// (defaults to a 768-dimensional, 10^4-step workload).
    Bench {
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config(_)) => EXIT_CONFIG,
            _ => EXIT_RUN,
        };
        Failure { code, error }
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: e.into(),
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Failure> {
    raw.iter()
        .map(|a| {
            let body = a.strip_prefix("--").unwrap_or(a);
            body.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| {
                    config_error(anyhow::anyhow!(
                        "override `{a}` is not of the form --key=value"
                    ))
                })
        })
        .collect()
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    load_config_or(common, noisy_study)
}

fn load_config_or(
    common: &Common,
    default: fn() -> ExperimentConfig,
) -> Result<ExperimentConfig, Failure> {
    let overrides = parse_overrides(&common.overrides)?;
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => default().with_overrides(&overrides),
    };
    cfg.with_context(|| match &common.config {
        Some(p) => format!("loading {}", p.display()),
        None => "building the default config".into(),
    })
    .map_err(config_error)
}

fn pool(common: &Common) -> Result<rayon::ThreadPool, Failure> {
    worker_pool(common.jobs).map_err(config_error)
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn finish(report: &ExperimentReport) -> Result<(), Failure> {
    println!("{report}");
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_RUN,
            error: anyhow::anyhow!("{} run(s) failed", report.failures.len()),
        })
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { out, seed, common } => {
            let cfg = load_config(&common)?;
            let DataSource::Synthetic(w) = &cfg.data else {
                return Err(config_error(anyhow::anyhow!(
                    "generate needs a synthetic data source"
                )));
            };
            let world = generate_synthetic(&opera_prune::dataset::SyntheticWorldConfig {
                seed: opera_prune::rng::derive_seed(seed, "world", w.seed),
                ..w.clone()
            })?;
            write_world(&world, &out)?;
            write_manifest(&out)?;
            info!("wrote world for seed {seed} to {}", out.display());
        }
        Command::Score { out, seed, common } => {
            let cfg = load_config(&common)?;
            let data = load_data(&cfg.data, seed)?;
            let train = opera_prune::trainer::TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let table = pair_scores_for(&data.train, &data.queries, &data.docs, &train)?;
            ensure_parent(&out)?;
            table.write_csv(&out)?;
            info!("scored {} pairs", table.len());
        }
        Command::Prune {
            k,
            out,
            seed,
            common,
        } => {
            let cfg = load_config(&common)?;
            let data = load_data(&cfg.data, seed)?;
            let train = opera_prune::trainer::TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let table = pair_scores_for(&data.train, &data.queries, &data.docs, &train)?;
            let view = static_prune(&data.train, &table, k)?;
            ensure_parent(&out)?;
            view.write_csv(&out)?;
            println!(
                "kept {} of {} pairs ({:.3}), {} of {} queries covered",
                view.kept_count(),
                data.train.total_pairs(),
                view.retention(),
                view.covered_queries(),
                data.train.n_queries()
            );
        }
        Command::Train { common } => {
            let mut cfg = load_config(&common)?;
            cfg.strategies.clear();
            let pool = pool(&common)?;
            finish(&run_experiment(&cfg, &pool)?)?;
        }
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let pool = pool(&common)?;
            finish(&run_experiment(&cfg, &pool)?)?;
        }
        Command::Eval {
            queries,
            docs,
            out,
            seed,
            common,
        } => {
            let cfg = load_config(&common)?;
            let data = load_data(&cfg.data, seed)?;
            let q = EmbeddingTable::load(&queries)?;
            let d = EmbeddingTable::load(&docs)?;
            let report = evaluate(&data.eval, &q, &d, &cfg.cutoffs)?;
            match out {
                Some(path) => {
                    ensure_parent(&path)?;
                    report.save_json(&path)?;
                }
                None => println!("{}", report.to_json()),
            }
        }
        Command::Sweep { common } => {
            let cfg = load_config(&common)?;
            let pool = pool(&common)?;
            let (report, sweep) = run_sweep(&cfg, &pool)?;
            finish(&report)?;
            println!("{sweep}");
        }
        Command::Denoise { k, common } => {
            let mut cfg = load_config(&common)?;
            let params = cfg
                .strategy_list()
                .into_iter()
                .find_map(|s| match s {
                    opera_prune::pruning_dynamic::StrategyConfig::Dp { params } => Some(params),
                    _ => None,
                })
                .unwrap_or_else(ScheduleParams::default);
            cfg.strategies = denoise_strategies(k, &params);
            cfg.validate().map_err(config_error)?;
            let pool = pool(&common)?;
            finish(&run_experiment(&cfg, &pool)?)?;
        }
        Command::VerifyTheory {
            instances,
            seed,
            tolerance,
        } => {
            let mut rng = rng_for(seed, "theory", 0);
            let summary = theory::sweep(instances, &InstanceBounds::default(), &mut rng)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if !summary.passed(tolerance) {
                return Err(Failure {
                    code: EXIT_CHECK,
                    error: anyhow::anyhow!(
                        "{} counterexample(s); lemma max relative error {:e}",
                        summary.counterexamples,
                        summary.lemma_max_relative_error
                    ),
                });
            }
        }
        Command::Bench { out, common } => {
            let cfg = load_config_or(&common, overhead_study)?;
            let report = bench_overhead(&cfg)?;
            println!("{report}");
            if let Some(path) = out {
                ensure_parent(&path)?;
                fs::write(&path, serde_json::to_vec_pretty(&report)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
