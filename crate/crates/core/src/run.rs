//! Run directories driven by a [`RunConfig`]: creation, resumption and the
//! config snapshot that makes them self-describing.

use std::fs;
use std::path::Path;

use crate::al_loop::{AlRun, AlState, JointLearner, Observer, Oracle, RunDir};
use crate::config::RunConfig;
use crate::corpus::{DatasetSplit, LabeledSentence};
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";

/// Corpus, split and learner for the first seed of a config.
pub struct Prepared {
    pub corpus: Vec<LabeledSentence>,
    pub split: DatasetSplit,
    pub learner: JointLearner,
    pub seed: u64,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let corpus = config.load_corpus()?;
    let seed = config.seeds()[0];
    let split = config.split(&corpus, seed)?;
    let learner = config.learner(&corpus)?;
    Ok(Prepared {
        corpus,
        split,
        learner,
        seed,
    })
}

/// Reads the config snapshot stored in a run directory.
pub fn load_snapshot(dir: &Path) -> Result<RunConfig> {
    RunConfig::load(dir.join(CONFIG_FILE))
}

/// True when `dir` holds a run that can be resumed.
pub fn is_resumable(dir: &Path) -> bool {
    RunDir::new(dir).state().exists()
}

/// Runs (or resumes) active learning in `dir` until it stops.
///
/// A fresh directory gets the config snapshot first; if the initial round
/// fails, the directory is removed again. Resuming requires the stored
/// snapshot to equal `config`.
pub fn execute<O: Oracle>(
    config: &RunConfig,
    prepared: &Prepared,
    dir: &Path,
    oracle: O,
    observer: Option<Observer>,
) -> Result<AlState> {
    let al = config.al_config(prepared.seed);
    let run_dir = RunDir::new(dir);
    let mut run = if is_resumable(dir) {
        let stored = load_snapshot(dir)?;
        if &stored != config {
            return Err(Error::Config(format!(
                "{} was created with a different configuration",
                dir.display()
            )));
        }
        tracing::info!(dir = %dir.display(), "resuming run");
        AlRun::resume(al, &prepared.split, prepared.learner.clone(), oracle, run_dir)?
    } else {
        if dir.exists() && fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some() {
            return Err(Error::Config(format!(
                "{} exists and is not a resumable run",
                dir.display()
            )));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let started = crate::al_loop::write_atomic(&dir.join(CONFIG_FILE), config.to_toml()?.as_bytes())
            .and_then(|_| AlRun::start(al, &prepared.split, prepared.learner.clone(), oracle, Some(run_dir)));
        match started {
            Ok(r) => r,
            Err(e) => {
                let _ = fs::remove_dir_all(dir);
                return Err(e);
            }
        }
    };
    if let Some(o) = observer {
        run.set_observer(o);
    }
    run.run_to_end()?;
    Ok(run.state().clone())
}
