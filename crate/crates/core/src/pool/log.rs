use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::state::SkipReason;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("annotation log io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("annotation log line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
}

/// One line of the append-only annotation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    /// `None` when the instance was skipped.
    pub annotation: Option<String>,
    pub annotator: String,
    pub timestamp_ms: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
    pub iteration: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<SkipReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

impl AnnotationRecord {
    pub fn labeled(id: impl Into<String>, annotation: impl Into<String>, annotator: impl Into<String>, iteration: u32) -> Self {
        Self {
            id: id.into(),
            annotation: Some(annotation.into()),
            annotator: annotator.into(),
            timestamp_ms: now_ms(),
            input_tokens: 0,
            output_tokens: 0,
            cost: 0.0,
            iteration,
            skip_reason: None,
            task_id: None,
        }
    }

    pub fn skipped(id: impl Into<String>, annotator: impl Into<String>, iteration: u32, reason: SkipReason) -> Self {
        Self {
            annotation: None,
            skip_reason: Some(reason),
            ..Self::labeled(id, "", annotator, iteration)
        }
    }

    pub fn with_usage(mut self, input_tokens: u64, output_tokens: u64, cost: f64) -> Self {
        self.input_tokens = input_tokens;
        self.output_tokens = output_tokens;
        self.cost = cost;
        self
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

struct Inner {
    file: Option<(PathBuf, File)>,
    records: Vec<AnnotationRecord>,
}

/// Append-only JSONL log, optionally backed by a file. Safe to share across threads.
pub struct AnnotationLog {
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for AnnotationLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationLog").field("records", &self.inner.lock().records.len()).finish()
    }
}

impl AnnotationLog {
    pub fn in_memory() -> Self {
        Self { inner: Mutex::new(Inner { file: None, records: Vec::new() }) }
    }

    /// Open (or create) a log file. A trailing line cut short by a crash is dropped.
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let io = |source| LogError::Io { path: path.to_path_buf(), source };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let mut records = Vec::new();
        if path.exists() {
            let content = fs::read_to_string(path).map_err(io)?;
            let complete = match content.rfind('\n') {
                Some(i) => &content[..=i],
                None => "",
            };
            if complete.len() != content.len() {
                OpenOptions::new().write(true).open(path).and_then(|f| f.set_len(complete.len() as u64)).map_err(io)?;
            }
            for (i, line) in complete.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec = serde_json::from_str(line).map_err(|e| LogError::Corrupt { line: i + 1, message: e.to_string() })?;
                records.push(rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self { inner: Mutex::new(Inner { file: Some((path.to_path_buf(), file)), records }) })
    }

    pub fn append(&self, record: AnnotationRecord) -> Result<(), LogError> {
        let mut inner = self.inner.lock();
        if let Some((path, file)) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| LogError::Io { path: path.clone(), source })?;
        }
        inner.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.inner.lock().records.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The record written for `id` in the given round, if any.
    pub fn find(&self, iteration: u32, id: &str) -> Option<AnnotationRecord> {
        self.inner.lock().records.iter().rev().find(|r| r.iteration == iteration && r.id == id).cloned()
    }

    /// Labeled instances in log order, reconstructed from the records.
    pub fn replay_labeled(&self) -> Vec<(String, String)> {
        self.inner
            .lock()
            .records
            .iter()
            .filter_map(|r| r.annotation.as_ref().map(|a| (r.id.clone(), a.clone())))
            .collect()
    }

    /// Serialized JSONL of all records.
    pub fn to_jsonl(&self) -> String {
        let inner = self.inner.lock();
        let mut out = String::new();
        for r in &inner.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_log_survives_reopen_and_drops_partial_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        {
            let log = AnnotationLog::open(&path).unwrap();
            log.append(AnnotationRecord::labeled("a", "x", "oracle", 0)).unwrap();
            log.append(AnnotationRecord::skipped("b", "oracle", 0, SkipReason::Empty)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"id\":\"c\",\"annot").unwrap();
        drop(f);

        let log = AnnotationLog::open(&path).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.replay_labeled(), vec![("a".to_string(), "x".to_string())]);
        log.append(AnnotationRecord::labeled("c", "z", "oracle", 1)).unwrap();
        drop(log);
        let log = AnnotationLog::open(&path).unwrap();
        assert_eq!(log.len(), 3);
        assert!(log.find(1, "c").is_some());
        assert!(log.find(0, "c").is_none());
    }
}
