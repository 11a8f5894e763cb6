use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    check_stopping, prepare_context, ContextCache, Decision, EvalInput, Evaluator, GenerationEvaluator, IterationRecord,
    LedgerSnapshot, PhaseTimings, RunError, StopReason,
};
use crate::config::{AdapterKind, ConfigError, DataConfig, LabellerKind, Mode, RunConfig, StoppingCriterion};
use crate::gateway::{
    BackendDescriptor, CommandAdapter, FineTuneAdapter, Gateway, GatewayError, HttpAdapter, NoopAdapter, Usage,
};
use crate::labeling::{
    annotate_batch_llm, oracle_annotate, AgentSpec, CostLedger, HumanQueue, LlmTask, NoisyOracle, PromptTemplate,
};
use crate::metrics::MetricReport;
use crate::pool::{
    dataset_digest, load_dataset, resolve_batch_size, Annotated, AnnotationLog, AnnotationRecord, CheckpointStore,
    FieldMapping, Instance, Pool, PoolState, SkipReason,
};
use crate::strategy::{Strategy, StrategyRegistry};
use crate::text::stable_hash;

/// Files a run directory may contain.
pub const RUN_FILES: [&str; 5] = ["config.json", "state.json", "curve.jsonl", "annotations.jsonl", "timings.jsonl"];

const CHECKPOINT_VERSION: u32 = 1;
const DEFAULT_API_URL: &str = "https://api.openai.com/v1";
const EVAL_BUCKETS: u64 = 1_000_000;

/// The phase [`Runner::step`] will execute next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Select,
    Label,
    Train,
    Evaluate,
    Done,
}

/// Seed for round `round` of a run seeded with `seed`.
pub fn round_seed(seed: u64, round: u32) -> u64 {
    stable_hash(&[b"round", &seed.to_le_bytes(), &round.to_le_bytes()])
}

/// Reads the train file and, when configured, the separate test file.
pub fn load_run_data(data: &DataConfig) -> Result<(Vec<Instance>, Vec<Instance>), RunError> {
    let path = data.path.as_deref().ok_or_else(|| ConfigError::field("data.path", "a dataset file is required"))?;
    let mut mapping = FieldMapping::new(&data.input_field);
    if let Some(r) = &data.references_field {
        mapping = mapping.references(r);
    }
    if let Some(id) = &data.id_field {
        mapping = mapping.id(id);
    }
    let train = load_dataset(path, &mapping)?;
    let test = match &data.test_path {
        Some(p) => load_dataset(p, &mapping)?,
        None => Vec::new(),
    };
    Ok((train, test))
}

/// External collaborators of a run.
pub struct RunDeps {
    pub gateway: Gateway,
    /// Annotating model for LLM labellers.
    pub agent: Option<Gateway>,
    pub adapter: Arc<dyn FineTuneAdapter>,
    pub evaluator: Arc<dyn Evaluator>,
    pub registry: StrategyRegistry,
    /// How long the label phase waits for human annotators; `None` waits forever.
    pub human_timeout: Option<Duration>,
}

impl RunDeps {
    /// Default wiring for `config`. An LLM labeller without a base URL talks
    /// to the public API (`api_llm`) or to the model backend (`local_llm`).
    pub fn from_config(config: &RunConfig, run_dir: Option<&Path>) -> Result<Self, RunError> {
        let gateway = config.model.descriptor(config.seed).connect().map_err(RunError::Backend)?;
        let l = &config.labeller;
        let agent = if l.kind.is_llm() {
            let mut d = match (&l.base_url, l.kind) {
                (Some(url), _) => BackendDescriptor::remote(url, &l.parameters.model, l.api_key.clone()),
                (None, LabellerKind::ApiLlm) => {
                    BackendDescriptor::remote(DEFAULT_API_URL, &l.parameters.model, l.api_key.clone())
                }
                (None, _) => config.model.descriptor(config.seed),
            };
            d.max_concurrent = l.parameters.parallelism.max(1);
            Some(d.connect().map_err(RunError::Backend)?)
        } else {
            None
        };
        let t = &config.training;
        let adapter: Arc<dyn FineTuneAdapter> = match t.adapter {
            AdapterKind::Noop => Arc::new(NoopAdapter),
            AdapterKind::Command => {
                let (program, args) =
                    t.command.split_first().ok_or_else(|| ConfigError::field("training.command", "is empty"))?;
                let work_dir = t
                    .work_dir
                    .clone()
                    .or_else(|| run_dir.map(|d| d.join("training")))
                    .unwrap_or_else(|| std::env::temp_dir().join("alnlg-training"));
                Arc::new(
                    CommandAdapter::new(program, work_dir)
                        .with_args(args.to_vec())
                        .with_timeout(Duration::from_secs(t.timeout_secs)),
                )
            }
            AdapterKind::Http => {
                let url = t.url.clone().ok_or_else(|| ConfigError::field("training.url", "required for the http adapter"))?;
                let mut a = HttpAdapter::new(url);
                a.timeout = Duration::from_secs(t.timeout_secs);
                Arc::new(a)
            }
        };
        let evaluator = Arc::new(GenerationEvaluator::new(config.metric_ids()?, config.evaluation.min_eval_size));
        Ok(Self {
            gateway,
            agent,
            adapter,
            evaluator,
            registry: StrategyRegistry::with_defaults(),
            human_timeout: None,
        })
    }
}

/// Snapshot handed to the progress observer after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProgress {
    pub iteration: u32,
    pub phase: Phase,
    pub labeled_count: usize,
    pub unlabeled_count: usize,
    pub latest: Option<MetricReport>,
    pub ledger: LedgerSnapshot,
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub records: Vec<IterationRecord>,
    pub final_model_ref: String,
    pub stop_reason: StopReason,
    pub ledger: LedgerSnapshot,
    pub labeled_count: usize,
}

/// The round in flight, persisted between phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RoundState {
    selected: Vec<String>,
    strategy: String,
    fallback: bool,
    warnings: Vec<String>,
    skipped: Vec<(String, SkipReason)>,
    timings: PhaseTimings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    dataset_digest: String,
    pool: PoolState,
    annotations: BTreeMap<String, (String, String)>,
    phase: Phase,
    round: Option<RoundState>,
    ledger: CostLedger,
    records: Vec<IterationRecord>,
    timings: Vec<PhaseTimings>,
    stop: Option<StopReason>,
    reference_size: usize,
}

type Observer = Box<dyn Fn(&RunProgress) + Send>;

/// A resumable run. Each [`step`](Runner::step) executes one phase and, when
/// the run has a directory, checkpoints before returning.
pub struct Runner {
    config: RunConfig,
    criteria: Vec<StoppingCriterion>,
    deps: RunDeps,
    pool: Pool,
    phase: Phase,
    round: Option<RoundState>,
    ledger: CostLedger,
    records: Vec<IterationRecord>,
    timings: Vec<PhaseTimings>,
    stop: Option<StopReason>,
    reference_size: usize,
    digest: String,
    cache: ContextCache,
    log: Arc<AnnotationLog>,
    queue: Option<Arc<HumanQueue>>,
    dir: Option<PathBuf>,
    observer: Option<Observer>,
}

impl std::fmt::Debug for Runner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runner").field("phase", &self.phase).field("progress", &self.progress()).finish()
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Io(format!("{}: {e}", path.display()))
}

/// Write-then-rename so readers never see a partial file.
fn write_atomic(path: &Path, content: &str) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(content.as_bytes()).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

impl Runner {
    /// Opens a run. With `run_dir` set, an existing checkpoint there is
    /// resumed; it must have been written for the same config and dataset.
    pub fn open(
        config: RunConfig,
        train: Vec<Instance>,
        test: Vec<Instance>,
        deps: RunDeps,
        run_dir: Option<&Path>,
    ) -> Result<Self, RunError> {
        let config = config.normalized();
        let ids: Vec<&str> = deps.registry.ids().collect();
        config.validate_with(&ids)?;
        let criteria = config.criteria();
        let reported = deps.evaluator.metric_names();
        for (i, c) in config.stopping.iter().enumerate() {
            if let StoppingCriterion::MetricThreshold { metric, .. } = c {
                if !reported.contains(metric) {
                    return Err(ConfigError::field(
                        format!("stopping[{i}].metric"),
                        format!("`{metric}` is not computed (computed: {})", reported.join(", ")),
                    )
                    .into());
                }
            }
        }

        let fresh = if test.is_empty() {
            Pool::split(train, config.data.test_fraction, config.seed)?
        } else {
            Pool::with_test_set(train, test, config.seed)?
        };
        let digest = dataset_digest(fresh.instances());

        let dir = run_dir.map(Path::to_path_buf);
        let log = match &dir {
            Some(d) => {
                fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
                let config_path = d.join("config.json");
                let rendered = serde_json::to_string_pretty(&config.to_json_value()).expect("serializable") + "\n";
                match fs::read_to_string(&config_path) {
                    Ok(existing) => {
                        let existing: serde_json::Value =
                            serde_json::from_str(&existing).map_err(|e| RunError::Io(format!("config.json: {e}")))?;
                        if existing != config.to_json_value() {
                            return Err(RunError::Mismatch("config differs from the one stored in the run directory".into()));
                        }
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_atomic(&config_path, &rendered)?,
                    Err(e) => return Err(io_err(&config_path, e)),
                }
                AnnotationLog::open(&d.join("annotations.jsonl"))?
            }
            None => AnnotationLog::in_memory(),
        };
        let log = Arc::new(log);
        let queue = (config.labeller.kind == LabellerKind::Human).then(|| {
            Arc::new(HumanQueue::new(Duration::from_secs(config.labeller.lease_secs)).with_log(log.clone()))
        });

        let reference_size = fresh.state().unlabeled_ids.len();
        let mut runner = Self {
            ledger: CostLedger::new(config.al.budget),
            config,
            criteria,
            deps,
            pool: fresh,
            phase: Phase::Select,
            round: None,
            records: Vec::new(),
            timings: Vec::new(),
            stop: None,
            reference_size,
            digest,
            cache: ContextCache::default(),
            log,
            queue,
            dir,
            observer: None,
        };
        if let Some(store) = runner.store() {
            if store.exists() {
                let cp: Checkpoint = store.load()?;
                runner.restore(cp)?;
            }
        }
        Ok(runner)
    }

    fn store(&self) -> Option<CheckpointStore> {
        self.dir.as_ref().map(|d| CheckpointStore::new(d, "state.json"))
    }

    fn restore(&mut self, cp: Checkpoint) -> Result<(), RunError> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(RunError::Mismatch(format!("checkpoint version {} is not supported", cp.version)));
        }
        if cp.dataset_digest != self.digest {
            return Err(RunError::Mismatch("dataset differs from the one the run started with".into()));
        }
        self.pool = Pool::restore(self.pool.instances().to_vec(), cp.pool, &cp.annotations)?;
        self.phase = cp.phase;
        self.round = cp.round;
        self.ledger = cp.ledger;
        self.records = cp.records;
        self.timings = cp.timings;
        self.stop = cp.stop;
        self.reference_size = cp.reference_size;
        tracing::info!(iteration = self.pool.state().iteration, phase = ?self.phase, "resuming run");
        Ok(())
    }

    fn save(&self) -> Result<(), RunError> {
        let Some(store) = self.store() else { return Ok(()) };
        let cp = Checkpoint {
            version: CHECKPOINT_VERSION,
            dataset_digest: self.digest.clone(),
            pool: self.pool.state().clone(),
            annotations: self.pool.annotations(),
            phase: self.phase,
            round: self.round.clone(),
            ledger: self.ledger.clone(),
            records: self.records.clone(),
            timings: self.timings.clone(),
            stop: self.stop,
            reference_size: self.reference_size,
        };
        store.save(&cp)?;
        Ok(())
    }

    pub fn with_observer(mut self, f: impl Fn(&RunProgress) + Send + 'static) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    /// Task queue of a human-labelled run.
    pub fn queue(&self) -> Option<Arc<HumanQueue>> {
        self.queue.clone()
    }

    pub fn log(&self) -> Arc<AnnotationLog> {
        self.log.clone()
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn progress(&self) -> RunProgress {
        let s = self.pool.state();
        RunProgress {
            iteration: s.iteration,
            phase: self.phase,
            labeled_count: s.labeled_ids.len(),
            unlabeled_count: s.unlabeled_ids.len(),
            latest: self.records.iter().rev().find_map(|r| r.metrics.clone()),
            ledger: (&self.ledger).into(),
            stop_reason: self.stop,
        }
    }

    /// Executes the current phase, checkpoints, and returns the next phase.
    pub fn step(&mut self) -> Result<Phase, RunError> {
        match self.phase {
            Phase::Select => self.select()?,
            Phase::Label => self.label()?,
            Phase::Train => self.train()?,
            Phase::Evaluate => self.evaluate()?,
            Phase::Done => return Ok(Phase::Done),
        }
        self.save()?;
        if let Some(obs) = &self.observer {
            obs(&self.progress());
        }
        Ok(self.phase)
    }

    pub fn run_to_end(mut self) -> Result<RunOutcome, RunError> {
        while self.step()? != Phase::Done {}
        Ok(self.outcome())
    }

    pub fn outcome(&self) -> RunOutcome {
        RunOutcome {
            records: self.records.clone(),
            final_model_ref: self.pool.state().model_ref.clone(),
            stop_reason: self.stop.unwrap_or(StopReason::Exhausted),
            ledger: (&self.ledger).into(),
            labeled_count: self.pool.state().labeled_ids.len(),
        }
    }

    fn finish(&mut self, reason: StopReason) {
        tracing::info!(%reason, iteration = self.pool.state().iteration, "run stopped");
        self.stop = Some(reason);
        self.round = None;
        self.phase = Phase::Done;
    }

    fn labeled_limit(&self) -> Option<usize> {
        self.criteria
            .iter()
            .filter_map(|c| match c {
                StoppingCriterion::LabeledCount { value } => Some(*value),
                _ => None,
            })
            .min()
    }

    /// With no test split, a stable hash of each id decides whether a labeled
    /// instance is held out for evaluation instead of training.
    fn held_out(&self, id: &str) -> bool {
        if !self.pool.state().test_ids.is_empty() {
            return false;
        }
        let h = stable_hash(&[b"eval", &self.config.seed.to_le_bytes(), id.as_bytes()]);
        (h % EVAL_BUCKETS) < (self.config.evaluation.eval_split * EVAL_BUCKETS as f64) as u64
    }

    fn batch_size(&self, round: u32) -> Result<usize, RunError> {
        let unlabeled = self.pool.state().unlabeled_ids.len();
        let k = match (self.config.al.mode, self.labeled_limit()) {
            (Mode::Ed, Some(limit)) => limit.min(unlabeled),
            _ => {
                let spec = if round == 0 { self.config.al.init_query_size } else { self.config.al.query_size };
                resolve_batch_size(spec, self.reference_size, unlabeled)?
            }
        };
        let labeled = self.pool.state().labeled_ids.len();
        Ok(self.labeled_limit().map_or(k, |limit| k.min(limit.saturating_sub(labeled))))
    }

    fn select(&mut self) -> Result<(), RunError> {
        let t0 = Instant::now();
        let latest = self.records.last().and_then(|r| r.metrics.as_ref());
        if let Decision::Stop(reason) =
            check_stopping(self.pool.state(), &self.criteria, &self.ledger, latest, self.config.al.mode)
        {
            self.finish(reason);
            return Ok(());
        }
        let round = self.pool.state().iteration;
        let k = self.batch_size(round)?;
        let configured = &self.config.al.strategy;
        let strategy_err = |source| RunError::Strategy { strategy: configured.clone(), source };
        let mut strategy: Arc<dyn Strategy> = self.deps.registry.get(configured).map_err(strategy_err)?;
        let params = &self.config.al.params;
        // The initial query has no fine-tuned model to score with.
        let fallback = round == 0 && self.config.al.mode == Mode::Al && strategy.requirements(params).needs_model();
        if fallback {
            strategy = StrategyRegistry::with_defaults().get("random").map_err(strategy_err)?;
        }
        let requirements = strategy.requirements(params);
        let id = strategy.id().to_string();
        let seed = round_seed(self.config.seed, round);
        let ctx = prepare_context(
            &self.pool,
            &requirements,
            &self.deps.gateway,
            &self.config.generation.decode(),
            &mut self.cache,
            params,
            seed,
        )
        .map_err(|source| RunError::Gateway { strategy: id.clone(), source })?;
        let selection = strategy.select(&ctx, k).map_err(|source| RunError::Strategy { strategy: id.clone(), source })?;
        for w in &selection.warnings {
            tracing::warn!(strategy = %id, "{w}");
        }
        tracing::info!(round, strategy = %id, k, selected = selection.ids.len(), "selected");
        self.round = Some(RoundState {
            selected: selection.ids,
            strategy: id,
            fallback,
            warnings: selection.warnings,
            skipped: Vec::new(),
            timings: PhaseTimings { iteration: round, select_ms: elapsed_ms(t0), ..PhaseTimings::default() },
        });
        self.phase = Phase::Label;
        Ok(())
    }

    fn label(&mut self) -> Result<(), RunError> {
        let t0 = Instant::now();
        let round = self.pool.state().iteration;
        let selected = self.round.as_ref().expect("label phase has a round").selected.clone();

        // Records already in the log for this round were paid for before a restart.
        let mut records: BTreeMap<String, AnnotationRecord> = BTreeMap::new();
        for id in &selected {
            if let Some(r) = self.log.find(round, id) {
                if self.config.labeller.kind.is_llm() {
                    self.ledger.record(Usage { input_tokens: r.input_tokens, output_tokens: r.output_tokens }, r.cost);
                    if r.skip_reason == Some(SkipReason::Budget) {
                        self.ledger.exhausted = true;
                    }
                }
                records.insert(id.clone(), r);
            }
        }
        let fresh: Vec<&Instance> = selected
            .iter()
            .filter(|id| !records.contains_key(*id))
            .map(|id| self.pool.get(id).expect("selected ids come from the pool"))
            .collect();

        let mut new_records = Vec::new();
        let l = &self.config.labeller;
        match l.kind {
            LabellerKind::Oracle | LabellerKind::NoisyOracle => {
                let annotated = if l.kind == LabellerKind::Oracle {
                    oracle_annotate(&fresh)?
                } else {
                    NoisyOracle::new(l.error_rate, self.config.seed)?.annotate(&fresh, self.pool.instances())?
                };
                for a in annotated {
                    new_records.push(AnnotationRecord::labeled(a.id, a.annotation, a.annotator, round));
                }
            }
            LabellerKind::ApiLlm | LabellerKind::LocalLlm => {
                let agent = self.deps.agent.as_ref().ok_or_else(|| {
                    ConfigError::field("labeller.type", "an LLM labeller needs an annotating model backend")
                })?;
                let spec = AgentSpec {
                    model: l.parameters.model.clone(),
                    max_tokens: l.parameters.max_tokens,
                    temperature: l.parameters.temperature,
                    top_p: 1.0,
                    parallelism: l.parameters.parallelism,
                };
                let template = PromptTemplate::new(&l.prompt_template)?;
                let tasks: Vec<LlmTask> =
                    fresh.iter().map(|i| LlmTask { id: i.id.clone(), input: i.input.clone() }).collect();
                let outcome =
                    annotate_batch_llm(&tasks, agent, &spec, &template, &l.price.sheet(), &mut self.ledger, l.batch)?;
                let annotator = format!("llm:{}", l.parameters.model);
                for r in outcome.results {
                    if let Some(e) = &r.error {
                        tracing::warn!(id = %r.id, "annotation failed: {e}");
                    }
                    let record = match (r.annotation, r.skip) {
                        (Some(text), None) => AnnotationRecord::labeled(&r.id, text, &annotator, round),
                        (_, reason) => AnnotationRecord::skipped(&r.id, &annotator, round, reason.unwrap_or(SkipReason::Backend)),
                    };
                    new_records.push(record.with_usage(r.usage.input_tokens, r.usage.output_tokens, r.cost));
                }
            }
            LabellerKind::Human => {
                let queue = self.queue.as_ref().expect("human runs own a queue");
                let items: Vec<(String, String)> = fresh.iter().map(|i| (i.id.clone(), i.input.clone())).collect();
                if !items.is_empty() {
                    queue.enqueue(&items, round)?;
                }
                if !queue.wait_settled(round, self.deps.human_timeout) {
                    return Err(RunError::HumanTimeout(round));
                }
                for i in &fresh {
                    if let Some(r) = self.log.find(round, &i.id) {
                        records.insert(i.id.clone(), r);
                    }
                }
            }
        }
        for r in new_records {
            self.log.append(r.clone())?;
            records.insert(r.id.clone(), r);
        }

        let per_label = if l.kind == LabellerKind::Human { l.price.per_label } else { None };
        let mut annotated = Vec::new();
        let mut skipped = Vec::new();
        for id in &selected {
            match records.get(id) {
                Some(AnnotationRecord { annotation: Some(text), annotator, .. }) => {
                    if let Some(price) = per_label {
                        self.ledger.record(Usage::default(), price);
                    }
                    annotated.push(Annotated::new(id, text, annotator));
                }
                Some(r) => skipped.push((id.clone(), r.skip_reason.unwrap_or(SkipReason::Backend))),
                None => skipped.push((id.clone(), SkipReason::Backend)),
            }
        }
        let report = self.pool.move_to_labeled(&annotated)?;
        skipped.extend(report.skipped);

        let round_state = self.round.as_mut().expect("label phase has a round");
        round_state.skipped = skipped;
        round_state.timings.label_ms = elapsed_ms(t0);
        tracing::info!(round, labeled = report.moved.len(), skipped = round_state.skipped.len(), "labeled");
        if report.moved.is_empty() {
            let reason = if self.ledger.budget_reached() { StopReason::Budget } else { StopReason::Starved };
            self.finish(reason);
            return Ok(());
        }
        self.phase = Phase::Train;
        Ok(())
    }

    fn training_set(&self) -> Vec<Instance> {
        self.pool.labeled().filter(|i| !self.held_out(&i.id)).cloned().collect()
    }

    fn train(&mut self) -> Result<(), RunError> {
        let t0 = Instant::now();
        let train = self.training_set();
        if train.is_empty() {
            let round = self.round.as_mut().expect("train phase has a round");
            round.warnings.push("every labeled instance is held out for evaluation; model left unchanged".into());
        } else {
            let model_ref = self.pool.state().model_ref.clone();
            let new_ref = self
                .deps
                .adapter
                .fine_tune(&model_ref, &train, &self.config.training.hyperparams)
                .map_err(|e: GatewayError| RunError::Training(e))?;
            tracing::info!(from = %model_ref, to = %new_ref, n = train.len(), "fine-tuned");
            self.pool.set_model_ref(new_ref);
        }
        self.round.as_mut().expect("train phase has a round").timings.train_ms = elapsed_ms(t0);
        self.phase = Phase::Evaluate;
        Ok(())
    }

    fn evaluate(&mut self) -> Result<(), RunError> {
        let t0 = Instant::now();
        let eval: Vec<Instance> = if self.pool.state().test_ids.is_empty() {
            self.pool.labeled().filter(|i| self.held_out(&i.id)).cloned().collect()
        } else {
            self.pool.test().cloned().collect()
        };
        let labeled: Vec<Instance> = self.pool.labeled().cloned().collect();
        let model_ref = self.pool.state().model_ref.clone();
        let decode = self.config.generation.decode();
        let input =
            EvalInput { gateway: &self.deps.gateway, model_ref: &model_ref, eval: &eval, labeled: &labeled, decode: &decode };
        let report = self.deps.evaluator.evaluate(&input)?;
        let mut round = self.round.take().expect("evaluate phase has a round");
        round.timings.evaluate_ms = elapsed_ms(t0);
        let state = self.pool.state();
        self.records.push(IterationRecord {
            iteration: state.iteration,
            labeled_count: state.labeled_ids.len(),
            skipped_eval: report.is_none(),
            metrics: report,
            selected: round.selected,
            strategy: round.strategy,
            fallback: round.fallback,
            skipped: round.skipped,
            model_ref,
            ledger: (&self.ledger).into(),
            warnings: round.warnings,
        });
        self.timings.push(round.timings);
        self.pool.complete_iteration();
        if let Some(d) = &self.dir {
            write_atomic(&d.join("curve.jsonl"), &jsonl(&self.records))?;
            write_atomic(&d.join("timings.jsonl"), &jsonl(&self.timings))?;
        }
        self.phase = Phase::Select;
        Ok(())
    }
}

/// Runs to completion.
pub fn run(
    config: RunConfig,
    train: Vec<Instance>,
    test: Vec<Instance>,
    deps: RunDeps,
    run_dir: Option<&Path>,
) -> Result<RunOutcome, RunError> {
    Runner::open(config, train, test, deps, run_dir)?.run_to_end()
}
