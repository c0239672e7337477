//! Bounded worker queue for CPU-bound jobs with forward-only status.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use echoanat_core::rle::RleMask;
use serde::Serialize;
use tokio::sync::mpsc;

pub const DEFAULT_WORKERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    /// Allowed moves: queued → running → done | failed, and queued → failed.
    fn can_move_to(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Queued, JobStatus::Failed)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Segment,
    Translate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceFrame {
    pub iteration: usize,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobResult {
    pub mask_id: String,
    pub mask: RleMask,
    pub iterations: usize,
    pub stopped_early: bool,
    pub trace: Vec<TraceFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Fraction of the iteration budget completed.
    pub progress: f64,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

impl JobRecord {
    fn new(id: String, kind: JobKind) -> Self {
        JobRecord {
            id,
            kind,
            status: JobStatus::Queued,
            progress: 0.0,
            result: None,
            error: None,
        }
    }

    fn transition(&mut self, next: JobStatus) -> Result<(), String> {
        if self.status.can_move_to(next) {
            self.status = next;
            Ok(())
        } else {
            Err(format!("job {}: illegal transition {:?} -> {next:?}", self.id, self.status))
        }
    }

    pub fn start(&mut self) -> Result<(), String> {
        self.transition(JobStatus::Running)
    }

    pub fn finish(&mut self, result: JobResult) -> Result<(), String> {
        self.transition(JobStatus::Done)?;
        self.progress = 1.0;
        self.result = Some(result);
        Ok(())
    }

    pub fn fail(&mut self, message: String) -> Result<(), String> {
        self.transition(JobStatus::Failed)?;
        self.error = Some(message);
        Ok(())
    }

    pub fn set_progress(&mut self, p: f64) {
        if self.status == JobStatus::Running {
            self.progress = p.clamp(self.progress, 1.0);
        }
    }
}

/// Reports progress in `[0, 1]` from inside a running job.
pub type ProgressFn<'a> = &'a (dyn Fn(f64) + Sync);

type Work = Box<dyn FnOnce(ProgressFn<'_>) -> Result<JobResult, String> + Send>;

#[derive(Clone)]
pub struct JobQueue {
    jobs: Arc<Mutex<HashMap<String, JobRecord>>>,
    tx: mpsc::UnboundedSender<(String, Work)>,
    next_id: Arc<AtomicU64>,
}

impl JobQueue {
    /// Starts `workers` worker tasks on the current tokio runtime.
    pub fn start(workers: usize) -> Self {
        let (tx, rx) = mpsc::unbounded_channel::<(String, Work)>();
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        let jobs: Arc<Mutex<HashMap<String, JobRecord>>> = Arc::default();
        for _ in 0..workers.max(1) {
            let rx = rx.clone();
            let jobs = jobs.clone();
            tokio::spawn(async move {
                loop {
                    let next = rx.lock().await.recv().await;
                    let Some((id, work)) = next else { break };
                    let jobs = jobs.clone();
                    let _ = tokio::task::spawn_blocking(move || run_job(&jobs, &id, work)).await;
                }
            });
        }
        JobQueue {
            jobs,
            tx,
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    pub fn submit(&self, kind: JobKind, work: Work) -> String {
        let id = format!("j{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        self.jobs
            .lock()
            .expect("job table lock")
            .insert(id.clone(), JobRecord::new(id.clone(), kind));
        if self.tx.send((id.clone(), work)).is_err() {
            let _ = self.update(&id, |r| r.fail("job queue is shut down".into()));
        }
        id
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.jobs.lock().expect("job table lock").get(id).cloned()
    }

    fn update<T>(&self, id: &str, f: impl FnOnce(&mut JobRecord) -> T) -> Option<T> {
        self.jobs.lock().expect("job table lock").get_mut(id).map(f)
    }
}

fn run_job(jobs: &Mutex<HashMap<String, JobRecord>>, id: &str, work: Work) {
    let with = |f: &mut dyn FnMut(&mut JobRecord)| {
        if let Some(r) = jobs.lock().expect("job table lock").get_mut(id) {
            f(r);
        }
    };
    with(&mut |r| {
        let _ = r.start();
    });
    let progress = |p: f64| with(&mut |r| r.set_progress(p));
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| work(&progress)))
        .unwrap_or_else(|_| Err("job panicked".into()));
    with(&mut |r| {
        let moved = match outcome.clone() {
            Ok(result) => r.finish(result),
            Err(message) => r.fail(message),
        };
        if let Err(e) = moved {
            log::error!("{e}");
        }
    });
}
