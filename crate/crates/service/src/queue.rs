//! The annotation queue shared by HTTP handlers and the active-learning thread.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use nelp_core::al_loop::{Oracle, OracleRequest};
use nelp_core::api::{AnnotationTask, TaskStatus};
use nelp_core::corpus::{DatasetSplit, TagSeq};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SubmitError {
    #[error("unknown task {0}")]
    NotFound(u64),
    #[error("task {0} was already submitted")]
    AlreadySubmitted(u64),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug)]
struct Entry {
    chars: Vec<char>,
    iteration: usize,
    /// Enqueue order; batches come out in this order.
    seq: u64,
    tags: Option<TagSeq>,
    lease_until: Option<Instant>,
    /// Handed to the loop already.
    collected: bool,
}

impl Entry {
    fn view(&self, task_id: u64) -> AnnotationTask {
        AnnotationTask {
            task_id,
            text: self.chars.iter().collect(),
            len: self.chars.len(),
            iteration: self.iteration,
            status: if self.tags.is_some() {
                TaskStatus::Submitted
            } else {
                TaskStatus::Pending
            },
            tags: self.tags.as_ref().map(|t| t.to_string()),
        }
    }
}

#[derive(Debug, Default)]
struct Inner {
    tasks: BTreeMap<u64, Entry>,
    next_seq: u64,
    closed: bool,
}

/// Tasks keyed by sentence id. All mutation goes through one mutex.
#[derive(Debug)]
pub struct AnnotationQueue {
    inner: Mutex<Inner>,
    changed: Condvar,
    lease: Duration,
}

impl AnnotationQueue {
    pub fn new(lease: Duration) -> Self {
        AnnotationQueue {
            inner: Mutex::new(Inner::default()),
            changed: Condvar::new(),
            lease,
        }
    }

    pub fn lease(&self) -> Duration {
        self.lease
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Adds tasks that are not queued yet; returns how many were new.
    pub fn enqueue(&self, iteration: usize, items: impl IntoIterator<Item = (u64, Vec<char>)>) -> usize {
        let mut g = self.lock();
        let mut added = 0;
        for (id, chars) in items {
            if g.tasks.contains_key(&id) {
                continue;
            }
            let seq = g.next_seq;
            g.next_seq += 1;
            g.tasks.insert(
                id,
                Entry {
                    chars,
                    iteration,
                    seq,
                    tags: None,
                    lease_until: None,
                    collected: false,
                },
            );
            added += 1;
        }
        added
    }

    /// Up to `k` pending tasks not leased to anyone else, now leased to the caller.
    pub fn lease_batch(&self, k: usize, now: Instant) -> Vec<AnnotationTask> {
        let mut g = self.lock();
        let mut free: Vec<(u64, u64)> = g
            .tasks
            .iter()
            .filter(|(_, e)| e.tags.is_none() && e.lease_until.is_none_or(|t| t <= now))
            .map(|(&id, e)| (e.seq, id))
            .collect();
        free.sort_unstable();
        free.truncate(k);
        free.into_iter()
            .map(|(_, id)| {
                let e = g.tasks.get_mut(&id).expect("listed above");
                e.lease_until = Some(now + self.lease);
                e.view(id)
            })
            .collect()
    }

    /// Converts boundaries to tags, validates them and stores the result.
    pub fn submit(&self, task_id: u64, boundaries: &[usize]) -> Result<TagSeq, SubmitError> {
        let mut g = self.lock();
        let e = g.tasks.get_mut(&task_id).ok_or(SubmitError::NotFound(task_id))?;
        if e.tags.is_some() {
            return Err(SubmitError::AlreadySubmitted(task_id));
        }
        let tags = TagSeq::from_boundaries(e.chars.len(), boundaries).map_err(|err| SubmitError::Invalid(err.to_string()))?;
        e.tags = Some(tags.clone());
        e.lease_until = None;
        drop(g);
        self.changed.notify_all();
        Ok(tags)
    }

    pub fn task(&self, task_id: u64) -> Option<AnnotationTask> {
        self.lock().tasks.get(&task_id).map(|e| e.view(task_id))
    }

    /// `(pending, submitted)`.
    pub fn counts(&self) -> (usize, usize) {
        let g = self.lock();
        let submitted = g.tasks.values().filter(|e| e.tags.is_some()).count();
        (g.tasks.len() - submitted, submitted)
    }

    /// Blocks until every id in `ids` has been submitted, `deadline` passes or
    /// the queue is closed.
    pub fn wait_for(&self, ids: &[u64], deadline: Instant) {
        let mut g = self.lock();
        loop {
            let done = ids
                .iter()
                .all(|id| g.tasks.get(id).is_some_and(|e| e.tags.is_some()));
            let now = Instant::now();
            if done || g.closed || now >= deadline {
                return;
            }
            g = self
                .changed
                .wait_timeout(g, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Submitted labels among `ids` not handed out before.
    pub fn collect(&self, ids: &[u64]) -> Vec<(u64, TagSeq)> {
        let mut g = self.lock();
        ids.iter()
            .filter_map(|id| {
                let e = g.tasks.get_mut(id)?;
                match (&e.tags, e.collected) {
                    (Some(t), false) => {
                        e.collected = true;
                        Some((*id, t.clone()))
                    }
                    _ => None,
                }
            })
            .collect()
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Wakes every waiter; later waits return immediately.
    pub fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }
}

/// Oracle that publishes requests to the queue and waits for annotators.
#[derive(Clone, Debug)]
pub struct HumanOracle {
    pub queue: Arc<AnnotationQueue>,
    /// Per-round wait before continuing with the labels that arrived.
    pub deadline: Duration,
}

impl Oracle for HumanOracle {
    fn label(&mut self, request: &OracleRequest<'_>, split: &DatasetSplit) -> nelp_core::Result<Vec<(usize, TagSeq)>> {
        let items = request.awaiting.iter().filter_map(|&id| {
            split
                .training_by_id(id)
                .map(|s| (id as u64, s.sentence.chars.clone()))
        });
        let added = self.queue.enqueue(request.iteration, items);
        tracing::info!(iteration = request.iteration, added, waiting = request.awaiting.len(), "waiting for annotators");
        let ids: Vec<u64> = request.awaiting.iter().map(|&id| id as u64).collect();
        self.queue.wait_for(&ids, Instant::now() + self.deadline);
        if self.queue.is_closed() {
            return Err(nelp_core::Error::Oracle("annotation queue closed".into()));
        }
        Ok(self
            .queue
            .collect(&ids)
            .into_iter()
            .map(|(id, t)| (id as usize, t))
            .collect())
    }
}
