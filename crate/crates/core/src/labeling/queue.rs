//! Leased task queue for human annotators.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::{AnnotationLog, AnnotationRecord, LogError, SkipReason};

pub const DEFAULT_LEASE: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Claimed,
    Done,
    Skipped,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Done | TaskStatus::Skipped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub instance_id: String,
    pub input: String,
    pub status: TaskStatus,
    pub claimant: Option<String>,
    pub iteration: u32,
    pub annotation: Option<String>,
    #[serde(skip)]
    lease_expires: Option<Instant>,
    #[serde(skip)]
    idempotency_key: Option<String>,
}

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("instance `{0}` already has an open task")]
    DuplicateOpenTask(String),
    #[error("no task `{0}`")]
    UnknownTask(String),
    #[error("authorization error: task `{task_id}` is not claimed by `{annotator}`")]
    NotClaimant { task_id: String, annotator: String },
    #[error("validation error: annotation text is empty (use skip to pass on a task)")]
    EmptyText,
    #[error("task `{0}` was already completed with a different submission")]
    Conflict(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub status: TaskStatus,
    /// True when this submission repeated an already recorded one.
    pub duplicate: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueCounts {
    pub pending: usize,
    pub claimed: usize,
    pub done: usize,
    pub skipped: usize,
    pub total: usize,
}

#[derive(Default)]
struct Inner {
    tasks: Vec<AnnotationTask>,
    by_task_id: HashMap<String, usize>,
    open_by_instance: HashMap<String, usize>,
}

impl Inner {
    fn expire_leases(&mut self, now: Instant) {
        for t in &mut self.tasks {
            if t.status == TaskStatus::Claimed && t.lease_expires.is_some_and(|e| e <= now) {
                tracing::debug!(task = %t.task_id, "lease expired");
                t.status = TaskStatus::Pending;
                t.claimant = None;
                t.lease_expires = None;
            }
        }
    }
}

/// FIFO of annotation tasks. Claims are leased; an expired lease puts the
/// task back to pending. All operations are linearizable.
pub struct HumanQueue {
    inner: Mutex<Inner>,
    settled: Condvar,
    lease: Duration,
    log: Option<Arc<AnnotationLog>>,
}

impl std::fmt::Debug for HumanQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HumanQueue").field("counts", &self.counts()).field("lease", &self.lease).finish()
    }
}

impl Default for HumanQueue {
    fn default() -> Self {
        Self::new(DEFAULT_LEASE)
    }
}

impl HumanQueue {
    pub fn new(lease: Duration) -> Self {
        Self { inner: Mutex::new(Inner::default()), settled: Condvar::new(), lease, log: None }
    }

    /// Submissions are appended to `log` as they arrive.
    pub fn with_log(mut self, log: Arc<AnnotationLog>) -> Self {
        self.log = Some(log);
        self
    }

    /// Appends tasks in the given (selection) order. Rejects the whole batch
    /// if any instance already has an open task.
    pub fn enqueue(&self, items: &[(String, String)], iteration: u32) -> Result<Vec<String>, QueueError> {
        let mut inner = self.inner.lock();
        let mut seen = std::collections::HashSet::new();
        for (id, _) in items {
            if inner.open_by_instance.contains_key(id) || !seen.insert(id) {
                return Err(QueueError::DuplicateOpenTask(id.clone()));
            }
        }
        let mut ids = Vec::with_capacity(items.len());
        for (id, input) in items {
            let idx = inner.tasks.len();
            let task_id = format!("task-{idx:06}");
            inner.tasks.push(AnnotationTask {
                task_id: task_id.clone(),
                instance_id: id.clone(),
                input: input.clone(),
                status: TaskStatus::Pending,
                claimant: None,
                iteration,
                annotation: None,
                lease_expires: None,
                idempotency_key: None,
            });
            inner.by_task_id.insert(task_id.clone(), idx);
            inner.open_by_instance.insert(id.clone(), idx);
            ids.push(task_id);
        }
        Ok(ids)
    }

    pub fn next_task(&self, annotator: &str) -> Option<AnnotationTask> {
        self.next_task_at(annotator, Instant::now())
    }

    /// Claims the oldest pending task for `annotator` as of `now`.
    pub fn next_task_at(&self, annotator: &str, now: Instant) -> Option<AnnotationTask> {
        let mut inner = self.inner.lock();
        inner.expire_leases(now);
        let t = inner.tasks.iter_mut().find(|t| t.status == TaskStatus::Pending)?;
        t.status = TaskStatus::Claimed;
        t.claimant = Some(annotator.to_string());
        t.lease_expires = Some(now + self.lease);
        Some(t.clone())
    }

    /// Like [`next_task`](Self::next_task), but an annotator who already holds
    /// a live claim gets that task back with a renewed lease. Retried claim
    /// requests therefore never take a second task.
    pub fn claim(&self, annotator: &str) -> Option<AnnotationTask> {
        self.claim_at(annotator, Instant::now())
    }

    pub fn claim_at(&self, annotator: &str, now: Instant) -> Option<AnnotationTask> {
        let mut inner = self.inner.lock();
        inner.expire_leases(now);
        let held = inner.tasks.iter_mut().find(|t| t.status == TaskStatus::Claimed && t.claimant.as_deref() == Some(annotator));
        if let Some(t) = held {
            t.lease_expires = Some(now + self.lease);
            return Some(t.clone());
        }
        let t = inner.tasks.iter_mut().find(|t| t.status == TaskStatus::Pending)?;
        t.status = TaskStatus::Claimed;
        t.claimant = Some(annotator.to_string());
        t.lease_expires = Some(now + self.lease);
        Some(t.clone())
    }

    pub fn submit(
        &self,
        task_id: &str,
        annotator: &str,
        text: &str,
        skip: bool,
        idempotency_key: Option<&str>,
    ) -> Result<SubmitAck, QueueError> {
        self.submit_at(task_id, annotator, text, skip, idempotency_key, Instant::now())
    }

    /// Completes a claimed task. Repeating an identical submission (same
    /// annotator and text, or the same idempotency key) acknowledges without
    /// recording anything again.
    pub fn submit_at(
        &self,
        task_id: &str,
        annotator: &str,
        text: &str,
        skip: bool,
        idempotency_key: Option<&str>,
        now: Instant,
    ) -> Result<SubmitAck, QueueError> {
        let mut inner = self.inner.lock();
        inner.expire_leases(now);
        let idx = *inner.by_task_id.get(task_id).ok_or_else(|| QueueError::UnknownTask(task_id.to_string()))?;
        let not_claimant = || QueueError::NotClaimant { task_id: task_id.to_string(), annotator: annotator.to_string() };
        let text = text.trim();
        {
            let t = &inner.tasks[idx];
            if t.status.is_terminal() {
                if t.claimant.as_deref() != Some(annotator) {
                    return Err(not_claimant());
                }
                let same_key = idempotency_key.is_some() && t.idempotency_key.as_deref() == idempotency_key;
                let same_body = if skip {
                    t.status == TaskStatus::Skipped
                } else {
                    t.status == TaskStatus::Done && t.annotation.as_deref() == Some(text)
                };
                if same_key || same_body {
                    return Ok(SubmitAck { status: t.status, duplicate: true });
                }
                return Err(QueueError::Conflict(task_id.to_string()));
            }
            if t.status != TaskStatus::Claimed || t.claimant.as_deref() != Some(annotator) {
                return Err(not_claimant());
            }
        }
        if !skip && text.is_empty() {
            return Err(QueueError::EmptyText);
        }
        let t = &inner.tasks[idx];
        let record = if skip {
            AnnotationRecord::skipped(&t.instance_id, annotator, t.iteration, SkipReason::HumanSkip)
        } else {
            AnnotationRecord::labeled(&t.instance_id, text, annotator, t.iteration)
        };
        if let Some(log) = &self.log {
            log.append(AnnotationRecord { task_id: Some(task_id.to_string()), ..record })?;
        }
        let instance = t.instance_id.clone();
        let t = &mut inner.tasks[idx];
        t.status = if skip { TaskStatus::Skipped } else { TaskStatus::Done };
        t.annotation = (!skip).then(|| text.to_string());
        t.lease_expires = None;
        t.idempotency_key = idempotency_key.map(str::to_string);
        let status = t.status;
        inner.open_by_instance.remove(&instance);
        self.settled.notify_all();
        Ok(SubmitAck { status, duplicate: false })
    }

    pub fn counts(&self) -> QueueCounts {
        let inner = self.inner.lock();
        let mut c = QueueCounts { total: inner.tasks.len(), ..QueueCounts::default() };
        for t in &inner.tasks {
            match t.status {
                TaskStatus::Pending => c.pending += 1,
                TaskStatus::Claimed => c.claimed += 1,
                TaskStatus::Done => c.done += 1,
                TaskStatus::Skipped => c.skipped += 1,
            }
        }
        c
    }

    pub fn tasks(&self) -> Vec<AnnotationTask> {
        self.inner.lock().tasks.clone()
    }

    pub fn tasks_for_iteration(&self, iteration: u32) -> Vec<AnnotationTask> {
        self.inner.lock().tasks.iter().filter(|t| t.iteration == iteration).cloned().collect()
    }

    /// Blocks until every task of `iteration` is done or skipped. Returns
    /// false if `timeout` elapses first.
    pub fn wait_settled(&self, iteration: u32, timeout: Option<Duration>) -> bool {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut inner = self.inner.lock();
        loop {
            if inner.tasks.iter().filter(|t| t.iteration == iteration).all(|t| t.status.is_terminal()) {
                return true;
            }
            match deadline {
                Some(d) => {
                    if self.settled.wait_until(&mut inner, d).timed_out() {
                        return false;
                    }
                }
                None => self.settled.wait(&mut inner),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(ids: &[&str]) -> Vec<(String, String)> {
        ids.iter().map(|id| (id.to_string(), format!("input {id}"))).collect()
    }

    #[test]
    fn fifo_in_selection_order() {
        let q = HumanQueue::default();
        q.enqueue(&items(&["b", "a"]), 0).unwrap();
        assert_eq!(q.next_task("ann").unwrap().instance_id, "b");
        assert_eq!(q.next_task("ann").unwrap().instance_id, "a");
        assert!(q.next_task("ann").is_none());
    }

    #[test]
    fn repeated_claim_returns_the_held_task() {
        let q = HumanQueue::default();
        q.enqueue(&items(&["a", "b"]), 0).unwrap();
        let first = q.claim("ann").unwrap();
        assert_eq!(q.claim("ann").unwrap().task_id, first.task_id);
        assert_eq!(q.claim("other").unwrap().instance_id, "b");
        q.submit(&first.task_id, "ann", "x", false, None).unwrap();
        assert!(q.claim("ann").is_none());
    }

    #[test]
    fn duplicate_open_task_rejected() {
        let q = HumanQueue::default();
        q.enqueue(&items(&["a"]), 0).unwrap();
        assert!(matches!(q.enqueue(&items(&["a"]), 0), Err(QueueError::DuplicateOpenTask(_))));
        assert!(q.enqueue(&[], 0).unwrap().is_empty());
        assert_eq!(q.counts().total, 1);
    }

    #[test]
    fn lease_expiry_returns_task() {
        let q = HumanQueue::new(Duration::from_secs(60));
        q.enqueue(&items(&["a"]), 0).unwrap();
        let t0 = Instant::now();
        let t = q.next_task_at("alice", t0).unwrap();
        assert!(q.next_task_at("bob", t0 + Duration::from_secs(30)).is_none());
        let again = q.next_task_at("bob", t0 + Duration::from_secs(61)).unwrap();
        assert_eq!(again.task_id, t.task_id);
        let late = q.submit_at(&t.task_id, "alice", "x", false, None, t0 + Duration::from_secs(62));
        assert!(matches!(late, Err(QueueError::NotClaimant { .. })));
    }

    #[test]
    fn idempotent_submit_writes_one_record() {
        let log = Arc::new(AnnotationLog::in_memory());
        let q = HumanQueue::default().with_log(log.clone());
        q.enqueue(&items(&["a"]), 0).unwrap();
        let t = q.next_task("alice").unwrap();
        assert!(!q.submit(&t.task_id, "alice", "answer", false, None).unwrap().duplicate);
        assert!(q.submit(&t.task_id, "alice", "answer", false, None).unwrap().duplicate);
        assert!(matches!(q.submit(&t.task_id, "alice", "other", false, None), Err(QueueError::Conflict(_))));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn authorization_and_validation() {
        let q = HumanQueue::default();
        q.enqueue(&items(&["a", "b"]), 0).unwrap();
        let t = q.next_task("alice").unwrap();
        assert!(matches!(q.submit(&t.task_id, "bob", "x", false, None), Err(QueueError::NotClaimant { .. })));
        assert!(matches!(q.submit(&t.task_id, "alice", "  ", false, None), Err(QueueError::EmptyText)));
        let pending = q.tasks()[1].task_id.clone();
        assert!(matches!(q.submit(&pending, "alice", "x", false, None), Err(QueueError::NotClaimant { .. })));
    }

    #[test]
    fn skip_and_conservation() {
        let log = Arc::new(AnnotationLog::in_memory());
        let q = HumanQueue::default().with_log(log.clone());
        q.enqueue(&items(&["a", "b", "c"]), 1).unwrap();
        let t = q.next_task("alice").unwrap();
        assert_eq!(q.submit(&t.task_id, "alice", "", true, None).unwrap().status, TaskStatus::Skipped);
        q.next_task("bob").unwrap();
        let c = q.counts();
        assert_eq!((c.pending, c.claimed, c.done, c.skipped), (1, 1, 0, 1));
        assert_eq!(c.pending + c.claimed + c.done + c.skipped, c.total);
        assert_eq!(log.records()[0].skip_reason, Some(SkipReason::HumanSkip));
        assert!(!q.wait_settled(1, Some(Duration::from_millis(10))));
    }

    #[test]
    fn concurrent_claims_are_exclusive() {
        let q = Arc::new(HumanQueue::default());
        q.enqueue(&items(&["only"]), 0).unwrap();
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let q = q.clone();
                std::thread::spawn(move || q.next_task(&format!("ann{i}")).is_some())
            })
            .collect();
        let winners = handles.into_iter().map(|h| h.join().unwrap()).filter(|w| *w).count();
        assert_eq!(winners, 1);
    }
}
