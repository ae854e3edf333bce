//! Experiment configuration and orchestration: builds the graph, data and
//! model for each seed, runs the selected schemes, and writes results.

mod config;

pub use config::{
    load_config, BlobsConfig, DatasetKind, ExperimentConfig, MnistPaths, PartitionKind,
    SchemeSelection, DEFAULT_BASE_LR, DEFAULT_BATCH_SIZE, SMALL_NETWORK,
};

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::data::{
    generate_blobs, load_idx, partition_heterogeneous, partition_iid, BlobSpec, Dataset, Partition,
};
use crate::graph::Graph;
use crate::metrics::{mean, write_jsonl, write_metrics_csv, RoundLog};
use crate::model::{write_checkpoint, ModelSpec};
use crate::protocol::{
    run_centralized, run_decentralized_observed, run_fedavg, EpochView, RoundConfig, Scheme,
};
use crate::weighting::{write_weight_records, WEIGHT_CSV_HEADER};
use crate::{Error, Result};

/// Train and test data before partitioning.
#[derive(Clone, Debug)]
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    match cfg.dataset {
        DatasetKind::Blobs => {
            let b = &cfg.blobs;
            let all = generate_blobs(BlobSpec {
                num_classes: b.num_classes,
                dim: b.dim,
                per_class: b.per_class + b.test_per_class,
                spread: b.spread,
                seed: b.seed,
            })?;
            let (train, test) = all.split_per_class(b.test_per_class)?;
            Ok(Data { train, test })
        }
        DatasetKind::Mnist => {
            let p = cfg
                .mnist
                .as_ref()
                .ok_or_else(|| Error::Config("dataset mnist requires an `mnist` section".into()))?;
            let train = load_idx(&p.train_images, &p.train_labels)?;
            let test = load_idx(&p.test_images, &p.test_labels)?;
            let k = train.num_classes().max(test.num_classes());
            Ok(Data {
                train: train.with_num_classes(k)?,
                test: test.with_num_classes(k)?,
            })
        }
    }
}

pub fn partition(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<Partition> {
    match cfg.partition {
        PartitionKind::Iid => partition_iid(train, cfg.n_servers, seed),
        PartitionKind::Heterogeneous => partition_heterogeneous(
            train,
            cfg.n_servers,
            cfg.minor_classes,
            cfg.balanced_per_class,
            seed,
        ),
    }
}

pub fn model_spec(cfg: &ExperimentConfig, data: &Data) -> Result<ModelSpec> {
    let mut sizes = Vec::with_capacity(cfg.hidden.len() + 2);
    sizes.push(data.train.dim());
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(data.train.num_classes());
    ModelSpec::new(sizes, cfg.activation)
}

pub fn round_config(cfg: &ExperimentConfig, scheme: Scheme, seed: u64) -> RoundConfig {
    RoundConfig {
        epochs: cfg.epochs,
        consensus_steps: cfg.consensus_steps(),
        batch_size: cfg.batch_size,
        scheme,
        seed,
        optimizer: cfg.optimizer_config(),
        init: cfg.init,
        record_timing: cfg.record_timing,
    }
}

/// Everything a single seed needs, built once and shared by all schemes.
pub struct SeedContext {
    pub seed: u64,
    pub graph: Graph,
    pub partition: Partition,
    pub spec: ModelSpec,
}

impl SeedContext {
    pub fn new(cfg: &ExperimentConfig, data: &Data, seed: u64) -> Result<Self> {
        Ok(Self {
            seed,
            graph: cfg.topology.build(cfg.n_servers)?,
            partition: partition(cfg, &data.train, seed)?,
            spec: model_spec(cfg, data)?,
        })
    }
}

/// Runs one scheme for one seed. `observer` sees every epoch.
pub fn run_scheme(
    cfg: &ExperimentConfig,
    data: &Data,
    ctx: &SeedContext,
    scheme: Scheme,
    observer: &mut dyn FnMut(&EpochView<'_, '_>) -> Result<()>,
) -> Result<Vec<RoundLog>> {
    let rc = round_config(cfg, scheme, ctx.seed);
    match scheme {
        Scheme::Centralized => run_centralized(&rc, &data.train, &ctx.spec, &data.test, observer),
        Scheme::Fedavg => run_fedavg(&rc, &ctx.partition.shards, &ctx.spec, &data.test, observer),
        _ => run_decentralized_observed(
            &rc,
            &ctx.graph,
            &ctx.partition,
            &ctx.spec,
            &data.test,
            observer,
        ),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub seed: u64,
    pub final_accuracy: f64,
    pub final_consensus_error: f64,
}

/// Outcome of [`run_experiment`]. Failed runs do not stop the others.
#[derive(Debug, Default)]
pub struct ExperimentReport {
    pub completed: Vec<RunSummary>,
    pub failures: Vec<Error>,
    pub files: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn jsonl_path(dir: &Path, scheme: Scheme, seed: u64) -> PathBuf {
    dir.join(format!("{scheme}_seed{seed}.jsonl"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs every (scheme, seed) pair and writes, under `output_dir`:
/// `<scheme>_seed<k>.jsonl` and `<scheme>_seed<k>_metrics.csv` per run,
/// `dynaweight_seed<k>_weights.csv` for adaptive runs, `summary.csv`, and
/// `comparison.csv` when all schemes are selected.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let data = load_data(cfg)?;
    let schemes = cfg.scheme.schemes();
    let mut report = ExperimentReport::default();
    // (scheme, per-epoch accuracies) for the comparison table.
    let mut curves: Vec<(Scheme, Vec<f64>)> = Vec::new();

    for &seed in &cfg.seeds {
        let ctx = match SeedContext::new(cfg, &data, seed) {
            Ok(ctx) => ctx,
            Err(e) => {
                for &scheme in &schemes {
                    report.failures.push(wrap(scheme, seed, clone_error(&e)));
                }
                continue;
            }
        };
        for &scheme in &schemes {
            match run_one(cfg, &data, &ctx, scheme, &mut report.files) {
                Ok(logs) => {
                    let last = logs.last().expect("epochs is positive");
                    report.completed.push(RunSummary {
                        scheme,
                        seed,
                        final_accuracy: last.avg_test_accuracy,
                        final_consensus_error: last.consensus_error,
                    });
                    curves.push((scheme, logs.iter().map(|l| l.avg_test_accuracy).collect()));
                }
                Err(e) => report.failures.push(wrap(scheme, seed, e)),
            }
        }
    }

    let summary = dir.join("summary.csv");
    write_summary(&summary, &schemes, &report.completed)?;
    report.files.push(summary);
    if cfg.scheme == SchemeSelection::All {
        let path = dir.join("comparison.csv");
        write_comparison(&path, &schemes, &curves, cfg.epochs)?;
        report.files.push(path);
    }
    Ok(report)
}

fn wrap(scheme: Scheme, seed: u64, source: Error) -> Error {
    Error::Run {
        scheme: scheme.to_string(),
        seed,
        source: Box::new(source),
    }
}

fn clone_error(e: &Error) -> Error {
    Error::Config(e.to_string())
}

fn run_one(
    cfg: &ExperimentConfig,
    data: &Data,
    ctx: &SeedContext,
    scheme: Scheme,
    files: &mut Vec<PathBuf>,
) -> Result<Vec<RoundLog>> {
    let dir = &cfg.output_dir;
    let seed = ctx.seed;
    let stem = format!("{scheme}_seed{seed}");

    let weights_path = dir.join(format!("{stem}_weights.csv"));
    let mut weights = if scheme == Scheme::Dynaweight {
        let mut w = csv::Writer::from_writer(create(&weights_path)?);
        w.write_record(WEIGHT_CSV_HEADER)?;
        Some(w)
    } else {
        None
    };
    let ckpt_dir = dir.join("checkpoints");
    if cfg.checkpoint_every.is_some() {
        fs::create_dir_all(&ckpt_dir)?;
    }

    let mut observer = |view: &EpochView<'_, '_>| -> Result<()> {
        if let (Some(w), Some(matrix)) = (weights.as_mut(), view.weights) {
            let rows: Vec<_> = (0..matrix.n()).map(|i| matrix.sparse_row(i)).collect();
            write_weight_records(w, view.epoch, &rows)?;
        }
        if let Some(every) = cfg.checkpoint_every {
            if view.epoch.is_multiple_of(every) {
                for s in view.servers {
                    let path =
                        ckpt_dir.join(format!("{stem}_epoch{}_server{}.bin", view.epoch, s.id));
                    write_checkpoint(path, &s.params)?;
                }
            }
        }
        Ok(())
    };
    let logs = run_scheme(cfg, data, ctx, scheme, &mut observer)?;

    if let Some(mut w) = weights {
        w.flush()?;
        files.push(weights_path);
    }
    let jsonl = jsonl_path(dir, scheme, seed);
    write_jsonl(create(&jsonl)?, &logs)?;
    files.push(jsonl);
    let metrics = dir.join(format!("{stem}_metrics.csv"));
    write_metrics_csv(create(&metrics)?, &logs)?;
    files.push(metrics);
    Ok(logs)
}

/// `scheme,seed,final_acc,final_consensus_error`, then one `mean` row per
/// scheme.
fn write_summary(path: &Path, schemes: &[Scheme], runs: &[RunSummary]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["scheme", "seed", "final_acc", "final_consensus_error"])?;
    for r in runs {
        wtr.serialize((
            r.scheme.name(),
            r.seed,
            r.final_accuracy,
            r.final_consensus_error,
        ))?;
    }
    for &scheme in schemes {
        let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.scheme == scheme).collect();
        if mine.is_empty() {
            continue;
        }
        let acc: Vec<f64> = mine.iter().map(|r| r.final_accuracy).collect();
        let ce: Vec<f64> = mine.iter().map(|r| r.final_consensus_error).collect();
        wtr.serialize((scheme.name(), "mean", mean(&acc), mean(&ce)))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Seed-averaged test accuracy per epoch, one column per scheme.
fn write_comparison(
    path: &Path,
    schemes: &[Scheme],
    curves: &[(Scheme, Vec<f64>)],
    epochs: usize,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["epoch".to_string()];
    header.extend(schemes.iter().map(|s| s.to_string()));
    wtr.write_record(&header)?;
    for e in 0..epochs {
        let mut row = vec![(e + 1).to_string()];
        for &scheme in schemes {
            let vals: Vec<f64> = curves
                .iter()
                .filter(|(s, _)| *s == scheme)
                .map(|(_, c)| c[e])
                .collect();
            row.push(if vals.is_empty() {
                String::new()
            } else {
                mean(&vals).to_string()
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
