//! Triggering model updates. Training itself happens outside this process.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde::Serialize;
use serde_json::json;

use super::{GatewayError, Hyperparams};
use crate::pool::Instance;

pub trait FineTuneAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// Train from `model_ref` on the cumulative labeled set and return the new reference.
    fn fine_tune(&self, model_ref: &str, labeled: &[Instance], hyperparams: &Hyperparams) -> Result<String, GatewayError>;
}

#[derive(Serialize)]
struct TrainingRow<'a> {
    id: &'a str,
    input: &'a str,
    output: &'a str,
}

fn rows(labeled: &[Instance]) -> Vec<TrainingRow<'_>> {
    labeled
        .iter()
        .map(|i| TrainingRow { id: &i.id, input: &i.input, output: i.annotation.as_deref().unwrap_or("") })
        .collect()
}

fn require_data(labeled: &[Instance]) -> Result<(), GatewayError> {
    if labeled.is_empty() {
        return Err(GatewayError::Precondition("fine-tuning needs at least one labeled instance".into()));
    }
    Ok(())
}

/// Leaves the model untouched. Used with surrogate quality models and dry runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoopAdapter;

impl FineTuneAdapter for NoopAdapter {
    fn name(&self) -> &str {
        "noop"
    }

    fn fine_tune(&self, model_ref: &str, labeled: &[Instance], _: &Hyperparams) -> Result<String, GatewayError> {
        require_data(labeled)?;
        Ok(model_ref.to_string())
    }
}

/// Runs `program [args..] <data.jsonl> <hyperparams.json>`; the last non-empty
/// stdout line is the new model reference.
#[derive(Debug, Clone)]
pub struct CommandAdapter {
    pub program: String,
    pub args: Vec<String>,
    pub work_dir: PathBuf,
    pub timeout: Duration,
}

impl CommandAdapter {
    pub fn new(program: impl Into<String>, work_dir: impl Into<PathBuf>) -> Self {
        Self { program: program.into(), args: Vec::new(), work_dir: work_dir.into(), timeout: Duration::from_secs(24 * 3600) }
    }

    pub fn with_args(mut self, args: Vec<String>) -> Self {
        self.args = args;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl FineTuneAdapter for CommandAdapter {
    fn name(&self) -> &str {
        "command"
    }

    fn fine_tune(&self, model_ref: &str, labeled: &[Instance], hyperparams: &Hyperparams) -> Result<String, GatewayError> {
        require_data(labeled)?;
        let training = |message: String| GatewayError::Training { message, diagnostics: String::new() };
        std::fs::create_dir_all(&self.work_dir).map_err(|e| training(format!("cannot create {}: {e}", self.work_dir.display())))?;
        let data_path = self.work_dir.join("train.jsonl");
        let hp_path = self.work_dir.join("hyperparams.json");

        let mut data = String::new();
        for row in rows(labeled) {
            data.push_str(&serde_json::to_string(&row).expect("row serializes"));
            data.push('\n');
        }
        std::fs::write(&data_path, data).map_err(|e| training(format!("cannot write {}: {e}", data_path.display())))?;
        let mut hp = serde_json::Map::new();
        hp.insert("model_ref".into(), json!(model_ref));
        hp.extend(hyperparams.iter().map(|(k, v)| (k.clone(), v.clone())));
        std::fs::write(&hp_path, serde_json::to_string_pretty(&hp).expect("map serializes"))
            .map_err(|e| training(format!("cannot write {}: {e}", hp_path.display())))?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(&data_path)
            .arg(&hp_path)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| training(format!("cannot start `{}`: {e}", self.program)))?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });

        let started = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if started.elapsed() > self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(GatewayError::Training {
                        message: format!("`{}` timed out after {:?}", self.program, self.timeout),
                        diagnostics: err_reader.join().unwrap_or_default(),
                    });
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(20)),
                Err(e) => return Err(training(format!("wait failed: {e}"))),
            }
        };
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if !status.success() {
            return Err(GatewayError::Training {
                message: format!("`{}` exited with {status}", self.program),
                diagnostics: err,
            });
        }
        out.lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Training { message: "adapter printed no model reference".into(), diagnostics: err })
    }
}

/// POSTs `{model_ref, hyperparams, data}` and expects `{"model": "<ref>"}` back.
#[derive(Debug, Clone)]
pub struct HttpAdapter {
    pub url: String,
    pub timeout: Duration,
}

impl HttpAdapter {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), timeout: Duration::from_secs(24 * 3600) }
    }
}

impl FineTuneAdapter for HttpAdapter {
    fn name(&self) -> &str {
        "http"
    }

    fn fine_tune(&self, model_ref: &str, labeled: &[Instance], hyperparams: &Hyperparams) -> Result<String, GatewayError> {
        require_data(labeled)?;
        let training = |message: String, diagnostics: String| GatewayError::Training { message, diagnostics };
        let client = Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| training(format!("cannot build HTTP client: {e}"), String::new()))?;
        let body = json!({ "model_ref": model_ref, "hyperparams": hyperparams, "data": rows(labeled) });
        let resp = client.post(&self.url).json(&body).send().map_err(|e| training(format!("request failed: {e}"), String::new()))?;
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        if !status.is_success() {
            return Err(training(format!("adapter returned HTTP {status}"), text));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| training(format!("adapter response is not JSON: {e}"), text.clone()))?;
        value
            .get("model")
            .and_then(|m| m.as_str())
            .map(str::to_string)
            .ok_or_else(|| training("adapter response lacks `model`".into(), text))
    }
}
