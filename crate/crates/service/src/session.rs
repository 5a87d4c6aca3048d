use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use nelp_core::al_loop::{AlState, GoldOracle, Oracle};
use nelp_core::config::{OracleKind, RunConfig};
use nelp_core::run::{execute, prepare};

use crate::queue::{AnnotationQueue, HumanOracle};
use crate::{AppState, Progress};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Core(#[from] nelp_core::Error),
    #[error("active-learning thread panicked")]
    Panicked,
}

/// A run in progress: the API state plus the thread executing the loop.
pub struct Session {
    pub app: AppState,
    handle: JoinHandle<Result<AlState, nelp_core::Error>>,
}

impl Session {
    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }

    /// Stops waiting for annotators. Joins the loop thread when it has
    /// already stopped; otherwise returns `None` and leaves the run to be resumed.
    pub fn shutdown(self) -> Option<Result<AlState, SessionError>> {
        self.app.queue.close();
        self.handle.is_finished().then(|| self.join())
    }

    pub fn join(self) -> Result<AlState, SessionError> {
        self.handle.join().map_err(|_| SessionError::Panicked)?.map_err(Into::into)
    }
}

/// Prepares data and starts (or resumes) the run in `run_dir` on a worker
/// thread. Configuration and corpus errors are returned before anything runs.
pub fn start_session(config: RunConfig, run_dir: PathBuf) -> Result<Session, SessionError> {
    let prepared = prepare(&config)?;
    let queue = Arc::new(AnnotationQueue::new(Duration::from_secs(config.oracle.lease_secs)));
    let app = AppState::new(
        queue.clone(),
        Progress {
            strategy: config.strategy.kind.name().to_string(),
            iterations: config.al.iterations,
            ..Progress::default()
        },
    );
    let progress: Arc<Mutex<Progress>> = app.progress.clone();
    let handle = std::thread::Builder::new()
        .name("al-loop".into())
        .spawn(move || {
            let oracle: Box<dyn Oracle + Send> = match config.oracle.kind {
                OracleKind::Gold => Box::new(GoldOracle),
                OracleKind::Human => Box::new(HumanOracle {
                    queue,
                    deadline: Duration::from_secs(config.oracle.deadline_secs),
                }),
            };
            let p = progress.clone();
            let observer = Box::new(move |s: &AlState| {
                p.lock().unwrap_or_else(|e| e.into_inner()).state = Some(s.clone());
            });
            let result = execute(&config, &prepared, &run_dir, oracle, Some(observer));
            let mut g = progress.lock().unwrap_or_else(|e| e.into_inner());
            g.finished = true;
            match &result {
                Ok(s) => g.state = Some(s.clone()),
                Err(e) => {
                    tracing::error!(error = %e, "active learning stopped");
                    g.error = Some(e.to_string());
                }
            }
            result
        })
        .expect("spawn al-loop thread");
    Ok(Session { app, handle })
}
