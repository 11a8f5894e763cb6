//! Multi-strategy, multi-seed benchmarks with simulated annotation, curve
//! averaging and report emission.
//!
//! [`SyntheticTask`] is a desk-scale stand-in for real datasets: instances sit
//! in clusters with known embeddings, training is a no-op, and the metric is
//! the share of clusters with at least one labeled member.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::gateway::{Gateway, MockBackend, NoopAdapter};
use crate::metrics::{EvalError, MetricReport};
use crate::orchestrator::{run, EvalInput, Evaluator, IterationRecord, RunDeps, RunError};
use crate::pool::Instance;
use crate::strategy::StrategyRegistry;

pub const COVERAGE_METRIC: &str = "cluster_coverage";
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Standard deviation of the per-coordinate noise added to cluster centers.
const MEMBER_NOISE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("input error: {0}")]
    Input(String),
    #[error("run {strategy}/seed {seed} failed: {source}")]
    Run {
        strategy: String,
        seed: u64,
        #[source]
        source: RunError,
    },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labeled_count: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub strategy: String,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// Points from evaluated rounds; rounds that skipped evaluation are left out.
    pub fn from_records(strategy: &str, seed: u64, records: &[IterationRecord]) -> Result<Self, BenchError> {
        let points: Vec<CurvePoint> = records
            .iter()
            .filter_map(|r| {
                r.metrics.as_ref().map(|m| CurvePoint { labeled_count: r.labeled_count, metrics: m.values.clone() })
            })
            .collect();
        if points.windows(2).any(|w| w[0].labeled_count >= w[1].labeled_count) {
            return Err(BenchError::Input(format!("{strategy}/seed {seed}: labeled counts are not strictly increasing")));
        }
        Ok(Self { strategy: strategy.to_string(), seed, points })
    }

    pub fn grid(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.labeled_count).collect()
    }

    pub fn final_value(&self, metric: &str) -> Option<f64> {
        self.points.last().and_then(|p| p.metrics.get(metric).copied())
    }
}

/// Aggregate of one labeled-count across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub labeled_count: usize,
    pub mean: BTreeMap<String, f64>,
    pub min: BTreeMap<String, f64>,
    pub max: BTreeMap<String, f64>,
}

fn check_grids(curves: &[LearningCurve]) -> Result<(), BenchError> {
    let first = curves.first().ok_or_else(|| BenchError::Input("no curves to average".into()))?;
    let grid = first.grid();
    for c in curves {
        if c.grid() != grid {
            return Err(BenchError::Input(format!(
                "labeled_count grid of {}/seed {} differs from {}/seed {}",
                c.strategy, c.seed, first.strategy, first.seed
            )));
        }
    }
    Ok(())
}

fn summarize(curves: &[LearningCurve]) -> Result<Vec<SummaryPoint>, BenchError> {
    check_grids(curves)?;
    let n = curves.len() as f64;
    let out = (0..curves[0].points.len())
        .map(|i| {
            let mut p = SummaryPoint {
                labeled_count: curves[0].points[i].labeled_count,
                mean: BTreeMap::new(),
                min: BTreeMap::new(),
                max: BTreeMap::new(),
            };
            for c in curves {
                for (k, &v) in &c.points[i].metrics {
                    *p.mean.entry(k.clone()).or_insert(0.0) += v / n;
                    let lo = p.min.entry(k.clone()).or_insert(v);
                    *lo = lo.min(v);
                    let hi = p.max.entry(k.clone()).or_insert(v);
                    *hi = hi.max(v);
                }
            }
            p
        })
        .collect();
    Ok(out)
}

/// Pointwise mean of curves sharing one labeled-count grid.
pub fn average_curves(curves: &[LearningCurve]) -> Result<Vec<CurvePoint>, BenchError> {
    Ok(summarize(curves)?
        .into_iter()
        .map(|p| CurvePoint { labeled_count: p.labeled_count, metrics: p.mean })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub seeds: Vec<u64>,
    pub points: Vec<SummaryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub complete: bool,
    pub strategies: BTreeMap<String, StrategySummary>,
}

/// Writes `<strategy>.csv` (strategy, seed, labeled_count, metric, value) per
/// strategy and `summary.json` with mean, min and max curves.
pub fn emit_report(
    curves: &BTreeMap<String, Vec<LearningCurve>>,
    out_dir: &Path,
    complete: bool,
) -> Result<Vec<PathBuf>, BenchError> {
    if curves.values().all(Vec::is_empty) {
        return Err(BenchError::Input("no curves to report".into()));
    }
    let io = |path: &Path, e: &dyn std::fmt::Display| BenchError::Io { path: path.to_path_buf(), message: e.to_string() };
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, &e))?;
    let mut written = Vec::new();
    let mut summary = BenchSummary { complete, strategies: BTreeMap::new() };
    for (strategy, list) in curves {
        if list.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{strategy}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, &e))?;
        w.write_record(["strategy", "seed", "labeled_count", "metric", "value"]).map_err(|e| io(&path, &e))?;
        for c in list {
            for p in &c.points {
                for (metric, value) in &p.metrics {
                    w.write_record([
                        strategy.clone(),
                        c.seed.to_string(),
                        p.labeled_count.to_string(),
                        metric.clone(),
                        value.to_string(),
                    ])
                    .map_err(|e| io(&path, &e))?;
                }
            }
        }
        w.flush().map_err(|e| io(&path, &e))?;
        written.push(path);
        summary.strategies.insert(
            strategy.clone(),
            StrategySummary { seeds: list.iter().map(|c| c.seed).collect(), points: summarize(list)? },
        );
    }
    let path = out_dir.join("summary.json");
    let body = serde_json::to_string_pretty(&summary).expect("serializable") + "\n";
    fs::write(&path, body).map_err(|e| io(&path, &e))?;
    written.push(path);
    Ok(written)
}

/// Clustered instances with fixed embeddings.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub clusters: usize,
    pub per_cluster: usize,
    pub seed: u64,
    pub instances: Vec<Instance>,
    /// Cluster of every instance id.
    pub membership: HashMap<String, usize>,
    /// Raw embedding of every instance input.
    pub embeddings: HashMap<String, Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Orthonormal centers via Gram-Schmidt over Gaussian draws.
fn centers(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v = gaussian(rng, dim);
        for c in &out {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(x, y)| *x -= dot * y);
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            normalize(&mut v);
            out.push(v);
        }
    }
    out
}

impl SyntheticTask {
    pub fn new(clusters: usize, per_cluster: usize, seed: u64) -> Result<Self, BenchError> {
        if clusters < 2 || per_cluster < 1 {
            return Err(BenchError::Input(format!(
                "synthetic task needs >= 2 clusters and >= 1 member each, got {clusters} x {per_cluster}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = clusters.max(32);
        let centers = centers(&mut rng, clusters, dim);
        let n = clusters * per_cluster;
        // Ids are shuffled so that id order carries no cluster information.
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let width = (n.max(2) - 1).to_string().len().max(4);
        let mut instances = Vec::with_capacity(n);
        let mut membership = HashMap::with_capacity(n);
        let mut embeddings = HashMap::with_capacity(n);
        for (slot, &num) in ids.iter().enumerate() {
            let cluster = slot / per_cluster;
            let id = format!("s{num:0width$}");
            let input = format!("synthetic text {id}");
            let mut v: Vec<f64> =
                centers[cluster].iter().zip(gaussian(&mut rng, dim)).map(|(c, e)| c + MEMBER_NOISE * e).collect();
            normalize(&mut v);
            embeddings.insert(input.clone(), v);
            membership.insert(id.clone(), cluster);
            instances.push(Instance::new(&id, input).with_references([format!("cluster {cluster}")]));
        }
        instances.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { clusters, per_cluster, seed, instances, membership, embeddings })
    }

    /// Share of clusters with at least one member among `ids`.
    pub fn coverage<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> f64 {
        let mut hit = vec![false; self.clusters];
        for id in ids {
            if let Some(&c) = self.membership.get(id) {
                hit[c] = true;
            }
        }
        hit.iter().filter(|&&h| h).count() as f64 / self.clusters as f64
    }

    pub fn gateway(&self) -> Gateway {
        let dim = self.clusters.max(32);
        let backend = MockBackend::new(self.seed).with_dim(dim).fix_embeddings(self.embeddings.clone());
        Gateway::new(Arc::new(backend))
    }

    pub fn evaluator(&self) -> CoverageEvaluator {
        CoverageEvaluator { membership: self.membership.clone(), clusters: self.clusters }
    }

    /// Mock gateway, no-op trainer and coverage evaluator.
    pub fn deps(&self) -> RunDeps {
        RunDeps {
            gateway: self.gateway(),
            agent: None,
            adapter: Arc::new(NoopAdapter),
            evaluator: Arc::new(self.evaluator()),
            registry: StrategyRegistry::with_defaults(),
            human_timeout: None,
        }
    }
}

/// Reports `cluster_coverage` of the labeled set.
#[derive(Debug, Clone)]
pub struct CoverageEvaluator {
    membership: HashMap<String, usize>,
    clusters: usize,
}

impl Evaluator for CoverageEvaluator {
    fn metric_names(&self) -> Vec<String> {
        vec![COVERAGE_METRIC.to_string()]
    }

    fn evaluate(&self, input: &EvalInput<'_>) -> Result<Option<MetricReport>, EvalError> {
        let mut hit = vec![false; self.clusters];
        for i in input.labeled {
            if let Some(&c) = self.membership.get(&i.id) {
                hit[c] = true;
            }
        }
        let v = hit.iter().filter(|&&h| h).count() as f64 / self.clusters as f64;
        Ok(Some(MetricReport { values: BTreeMap::from([(COVERAGE_METRIC.to_string(), v)]), count: input.labeled.len() }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchTask {
    Synthetic { clusters: usize, per_cluster: usize },
    /// Instances loaded from `base.data`.
    Dataset,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    /// Every run uses this config with `al.strategy` and `seed` replaced.
    pub base: RunConfig,
    pub task: BenchTask,
    pub out_dir: Option<PathBuf>,
    /// Runs executed at once.
    pub parallelism: usize,
}

impl BenchmarkSpec {
    /// 20 clusters of 10, one label per round, 10 rounds after the initial
    /// query, oracle labeler.
    pub fn synthetic(strategies: &[&str], seeds: &[u64]) -> Self {
        let mut base = RunConfig::default();
        base.al.init_query_size = 1.0;
        base.al.query_size = 1.0;
        base.al.num_iterations = 10;
        Self {
            strategies: strategies.iter().map(|s| s.to_string()).collect(),
            seeds: seeds.to_vec(),
            base,
            task: BenchTask::Synthetic { clusters: 20, per_cluster: 10 },
            out_dir: None,
            parallelism: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    /// Curves per strategy, ordered by seed.
    pub curves: BTreeMap<String, Vec<LearningCurve>>,
    pub complete: bool,
    /// Report files, when an output directory was given.
    pub files: Vec<PathBuf>,
}

impl BenchmarkResult {
    pub fn mean_final(&self, strategy: &str, metric: &str) -> Option<f64> {
        let list = self.curves.get(strategy)?;
        let values: Option<Vec<f64>> = list.iter().map(|c| c.final_value(metric)).collect();
        let values = values?;
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn run_one(spec: &BenchmarkSpec, strategy: &str, seed: u64) -> Result<LearningCurve, RunError> {
    let mut config = spec.base.clone();
    config.al.strategy = strategy.to_string();
    config.seed = seed;
    let run_dir = spec.out_dir.as_ref().map(|d| d.join("runs").join(format!("{strategy}_seed{seed}")));
    let outcome = match &spec.task {
        BenchTask::Synthetic { clusters, per_cluster } => {
            let task = SyntheticTask::new(*clusters, *per_cluster, seed)
                .map_err(|e| RunError::Mismatch(e.to_string()))?;
            let deps = task.deps();
            run(config, task.instances, Vec::new(), deps, run_dir.as_deref())?
        }
        BenchTask::Dataset => {
            let (train, test) = crate::orchestrator::load_run_data(&config.data)?;
            let deps = RunDeps::from_config(&config, run_dir.as_deref())?;
            run(config, train, test, deps, run_dir.as_deref())?
        }
    };
    LearningCurve::from_records(strategy, seed, &outcome.records).map_err(|e| RunError::Mismatch(e.to_string()))
}

/// Runs every (strategy, seed) pair. The split depends on the seed only, so
/// strategies are compared on identical pools. If any run fails, the curves
/// that did finish are still reported (marked incomplete) and the first
/// failure is returned.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkResult, BenchError> {
    if spec.strategies.is_empty() || spec.seeds.is_empty() {
        return Err(BenchError::Input("a benchmark needs at least one strategy and one seed".into()));
    }
    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let jobs: Vec<(String, u64)> =
        spec.strategies.iter().flat_map(|s| seeds.iter().map(move |&seed| (s.clone(), seed))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism.max(1))
        .build()
        .map_err(|e| BenchError::Input(format!("cannot start worker pool: {e}")))?;
    let results: Vec<((String, u64), Result<LearningCurve, RunError>)> = pool.install(|| {
        jobs.par_iter().map(|(s, seed)| ((s.clone(), *seed), run_one(spec, s, *seed))).collect()
    });

    let mut curves: BTreeMap<String, Vec<LearningCurve>> = BTreeMap::new();
    let mut failure = None;
    for ((strategy, seed), r) in results {
        match r {
            Ok(c) => curves.entry(strategy).or_default().push(c),
            Err(source) => {
                tracing::error!(%strategy, seed, "benchmark run failed: {source}");
                failure.get_or_insert(BenchError::Run { strategy, seed, source });
            }
        }
    }
    let complete = failure.is_none();
    let files = match &spec.out_dir {
        Some(dir) if curves.values().any(|c| !c.is_empty()) => emit_report(&curves, dir, complete)?,
        _ => Vec::new(),
    };
    match failure {
        Some(e) => Err(e),
        None => Ok(BenchmarkResult { curves, complete, files }),
    }
}
