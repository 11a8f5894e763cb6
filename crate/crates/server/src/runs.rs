//! Live runs owned by the server. Each run steps on its own thread; handlers
//! read snapshots and talk to the run's human queue directly.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use alnlg_core::config::RunConfig;
use alnlg_core::labeling::HumanQueue;
use alnlg_core::orchestrator::{load_run_data, IterationRecord, Phase, RunDeps, RunProgress, Runner};
use alnlg_core::pool::{parse_dataset, AnnotationLog, DatasetFormat, FieldMapping, Instance};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Completed,
    Failed,
}

/// Dataset content uploaded with the request instead of a file path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineDataset {
    pub format: DatasetFormat,
    pub content: String,
}

/// Body of `POST /v1/runs` and `POST /v1/configs/validate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    /// A full or partial configuration tree; missing keys take defaults.
    #[serde(default)]
    pub config: Option<Value>,
    /// Dotted `key=value` overrides applied on top of `config`.
    #[serde(default)]
    pub overrides: Vec<String>,
    #[serde(default)]
    pub dataset: Option<InlineDataset>,
    #[serde(default)]
    pub test_dataset: Option<InlineDataset>,
}

impl CreateRun {
    /// The validated, normalized configuration this request describes.
    pub fn resolve(&self) -> Result<RunConfig, ApiError> {
        let mut config = match &self.config {
            Some(v) => RunConfig::from_json_value(v.clone())?,
            None => RunConfig::default(),
        };
        config.apply_overrides(&self.overrides)?;
        let config = config.normalized();
        config.validate()?;
        Ok(config)
    }

    fn data(&self, config: &RunConfig) -> Result<(Vec<Instance>, Vec<Instance>), ApiError> {
        let Some(train) = &self.dataset else {
            return Ok(load_run_data(&config.data)?);
        };
        let d = &config.data;
        let mut mapping = FieldMapping::new(&d.input_field);
        if let Some(r) = &d.references_field {
            mapping = mapping.references(r);
        }
        if let Some(id) = &d.id_field {
            mapping = mapping.id(id);
        }
        let parse = |field: &str, ds: &InlineDataset| {
            parse_dataset(&ds.content, ds.format, &mapping).map_err(|e| ApiError::field(field, e.to_string()))
        };
        let test = match &self.test_dataset {
            Some(t) => parse("test_dataset", t)?,
            None => Vec::new(),
        };
        Ok((parse("dataset", train)?, test))
    }
}

#[derive(Debug, Clone)]
struct Snapshot {
    state: RunState,
    progress: RunProgress,
    records: Vec<IterationRecord>,
    error: Option<String>,
}

pub struct RunHandle {
    pub id: String,
    pub config: RunConfig,
    pub queue: Option<Arc<HumanQueue>>,
    pub log: Arc<AnnotationLog>,
    snapshot: Mutex<Snapshot>,
}

impl RunHandle {
    pub fn state(&self) -> RunState {
        self.snapshot.lock().state
    }

    pub fn progress(&self) -> RunProgress {
        self.snapshot.lock().progress.clone()
    }

    pub fn records(&self) -> Vec<IterationRecord> {
        self.snapshot.lock().records.clone()
    }

    pub fn error(&self) -> Option<String> {
        self.snapshot.lock().error.clone()
    }

    fn update(&self, runner: &Runner) {
        let mut s = self.snapshot.lock();
        s.progress = runner.progress();
        s.records = runner.records().to_vec();
        if runner.phase() == Phase::Done {
            s.state = RunState::Completed;
        }
    }

    fn fail(&self, message: String) {
        let mut s = self.snapshot.lock();
        s.state = RunState::Failed;
        s.error = Some(message);
    }
}

/// Where runs keep their files. Without a root, runs live in memory only.
#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    pub runs_root: Option<PathBuf>,
}

#[derive(Default)]
pub struct Registry {
    options: ServerOptions,
    runs: RwLock<BTreeMap<String, Arc<RunHandle>>>,
    next: Mutex<u64>,
}

impl Registry {
    pub fn new(options: ServerOptions) -> Self {
        Self { options, ..Self::default() }
    }

    pub fn get(&self, id: &str) -> Result<Arc<RunHandle>, ApiError> {
        self.runs.read().get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("no run `{id}`")))
    }

    pub fn list(&self) -> Vec<Arc<RunHandle>> {
        self.runs.read().values().cloned().collect()
    }

    fn fresh_id(&self) -> String {
        let mut n = self.next.lock();
        loop {
            *n += 1;
            let id = format!("run-{:04}", *n);
            let taken = self.runs.read().contains_key(&id)
                || self.options.runs_root.as_ref().is_some_and(|r| r.join(&id).exists());
            if !taken {
                return id;
            }
        }
    }

    /// Validates the request, opens the run and starts stepping it in the
    /// background. Blocking; call from a blocking context.
    pub fn launch(&self, req: &CreateRun) -> Result<Arc<RunHandle>, ApiError> {
        let config = req.resolve()?;
        let (train, test) = req.data(&config)?;
        let id = self.fresh_id();
        let dir = match &self.options.runs_root {
            Some(root) => {
                let d = root.join(&id);
                std::fs::create_dir_all(&d).map_err(|e| ApiError::Internal(format!("{}: {e}", d.display())))?;
                Some(d)
            }
            None => None,
        };
        let deps = RunDeps::from_config(&config, dir.as_deref())?;
        let runner = Runner::open(config.clone(), train, test, deps, dir.as_deref())?;
        let handle = Arc::new(RunHandle {
            id: id.clone(),
            config,
            queue: runner.queue(),
            log: runner.log(),
            snapshot: Mutex::new(Snapshot {
                state: RunState::Running,
                progress: runner.progress(),
                records: runner.records().to_vec(),
                error: None,
            }),
        });
        self.runs.write().insert(id.clone(), handle.clone());
        let bg = handle.clone();
        thread::Builder::new()
            .name(id.clone())
            .spawn(move || drive(runner, &bg))
            .map_err(|e| ApiError::Internal(format!("cannot start run thread: {e}")))?;
        tracing::info!(run = %id, "run started");
        Ok(handle)
    }
}

fn drive(mut runner: Runner, handle: &RunHandle) {
    loop {
        match runner.step() {
            Ok(phase) => {
                handle.update(&runner);
                if phase == Phase::Done {
                    tracing::info!(run = %handle.id, reason = ?runner.stop_reason(), "run finished");
                    return;
                }
            }
            Err(e) => {
                tracing::error!(run = %handle.id, error = %e, "run failed");
                handle.fail(e.to_string());
                return;
            }
        }
    }
}
