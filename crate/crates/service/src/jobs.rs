//! Background jobs for operations that wait on model calls.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: u64,
    pub kind: String,
    pub project_id: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Default)]
pub struct JobRegistry {
    next: AtomicU64,
    jobs: Mutex<BTreeMap<u64, Job>>,
}

impl JobRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: u64) -> Option<Job> {
        self.jobs.lock().unwrap().get(&id).cloned()
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut Job)) {
        if let Some(j) = self.jobs.lock().unwrap().get_mut(&id) {
            f(j);
        }
    }

    /// Registers a job and runs `work` on a blocking thread.
    pub fn spawn<F>(self: &Arc<Self>, kind: &str, project_id: &str, work: F) -> Job
    where
        F: FnOnce() -> Result<Value, String> + Send + 'static,
    {
        let id = self.next.fetch_add(1, Ordering::SeqCst) + 1;
        let job = Job {
            job_id: id,
            kind: kind.to_string(),
            project_id: project_id.to_string(),
            status: JobStatus::Queued,
            result: None,
            error: None,
        };
        self.jobs.lock().unwrap().insert(id, job.clone());
        let registry = self.clone();
        std::thread::spawn(move || {
            registry.update(id, |j| j.status = JobStatus::Running);
            let out = work();
            registry.update(id, |j| match out {
                Ok(v) => {
                    j.status = JobStatus::Succeeded;
                    j.result = Some(v);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            });
        });
        job
    }

    /// Polls until the job finishes; for tests and the CLI.
    pub fn wait(&self, id: u64) -> Option<Job> {
        loop {
            let j = self.get(id)?;
            if matches!(j.status, JobStatus::Succeeded | JobStatus::Failed) {
                return Some(j);
            }
            std::thread::sleep(std::time::Duration::from_millis(5));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jobs_finish_with_results_or_errors() {
        let r = Arc::new(JobRegistry::new());
        let ok = r.spawn("t", "p", || Ok(serde_json::json!({"n": 1})));
        let bad = r.spawn("t", "p", || Err("boom".into()));
        assert_ne!(ok.job_id, bad.job_id);
        let ok = r.wait(ok.job_id).unwrap();
        assert_eq!(ok.status, JobStatus::Succeeded);
        assert_eq!(ok.result.unwrap()["n"], 1);
        let bad = r.wait(bad.job_id).unwrap();
        assert_eq!(bad.error.as_deref(), Some("boom"));
        assert!(r.get(999).is_none());
    }
}
