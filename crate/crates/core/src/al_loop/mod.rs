//! The pool-based active-learning loop: train, score the pool, select, label,
//! retrain, and keep the model with the smallest test loss.

mod learner;
mod oracle;
mod state;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, LabeledSentence};
use crate::error::{Error, Result};
use crate::strategies::{random_score, score_analysis, select_top_n, StrategyConfig, StrategyKind, StrategyScore};

pub use learner::{JointLearner, Learner};
pub use oracle::{GoldOracle, Oracle, OracleRequest};
pub use state::{AlState, BestModel, IterationRecord, StopReason, STATE_FORMAT, STATE_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlConfig {
    /// Selection rounds `M`.
    pub iterations: usize,
    /// Sentences selected per round `n`.
    pub batch: usize,
    pub strategy: StrategyConfig,
    /// Starts each round from the previous model instead of fresh parameters.
    pub warm_start: bool,
    pub seed: u64,
    /// Threads used to score the pool; results do not depend on it.
    pub workers: usize,
}

impl Default for AlConfig {
    fn default() -> Self {
        AlConfig {
            iterations: 10,
            batch: 1000,
            strategy: StrategyConfig::default(),
            warm_start: false,
            seed: 0,
            workers: 1,
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch == 0 || self.workers == 0 {
            return Err(Error::Config("iterations, batch and workers must be at least 1".into()));
        }
        self.strategy.validate()
    }

    /// Training seed of round `i`; shared by every strategy at the same base seed.
    pub fn round_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
    }
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn state(&self) -> PathBuf {
        self.root.join("state.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn selections(&self) -> PathBuf {
        self.root.join("selections.csv")
    }

    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("iter-{iteration:03}"))
    }

    pub fn al_config(&self) -> PathBuf {
        self.root.join("al_config.json")
    }

    /// Segmentation of the initial pool by the first model; logged only.
    pub fn pool_predictions(&self) -> PathBuf {
        self.root.join("pool_predictions.txt")
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Progress callback, invoked after every completed round.
pub type Observer = Box<dyn FnMut(&AlState) + Send>;

/// A resumable active-learning run over one dataset split.
pub struct AlRun<'a, L: Learner + Sync, O: Oracle>
where
    L::Model: Sync,
{
    pub config: AlConfig,
    split: &'a DatasetSplit,
    learner: L,
    oracle: O,
    dir: Option<RunDir>,
    state: AlState,
    model: L::Model,
    observer: Option<Observer>,
}

impl<'a, L: Learner + Sync, O: Oracle> AlRun<'a, L, O>
where
    L::Model: Sync,
{
    /// Trains the initial model on the labeled part of `split` (round 0).
    pub fn start(config: AlConfig, split: &'a DatasetSplit, learner: L, oracle: O, dir: Option<RunDir>) -> Result<Self> {
        config.validate()?;
        if split.labeled.is_empty() {
            return Err(Error::Config("the initial labeled set is empty".into()));
        }
        if split.testing.is_empty() {
            return Err(Error::Config("the testing split is empty".into()));
        }
        if let Some(d) = &dir {
            if d.state().exists() {
                return Err(Error::Config(format!(
                    "{} already holds a run; resume it instead",
                    d.root.display()
                )));
            }
            fs::create_dir_all(d.root.join("checkpoints")).map_err(|e| Error::io(&d.root, e))?;
            write_atomic(&d.al_config(), serde_json::to_string_pretty(&config)?.as_bytes())?;
        }
        let mut state = AlState::new(split);
        let t0 = Instant::now();
        let labeled = collect(split, &state.labeled, &state)?;
        let model = learner.fit(&labeled, config.round_seed(0), None)?;
        let report = learner.evaluate(&model, &split.testing)?;
        if let Some(d) = &dir {
            // the initial model's labels for the pool are kept for reference; selection never reads them
            let mut out = String::new();
            for s in split.unlabeled_sentences() {
                let a = learner.analyze(&model, &s.sentence.chars)?;
                out.push_str(&format!("{}\t{}\n", s.id(), a.seg.viterbi_tags));
            }
            write_atomic(&d.pool_predictions(), out.as_bytes())?;
        }
        state.record(IterationRecord {
            iteration: 0,
            train_size: labeled.len(),
            test_nll: report.mean_nll,
            test_f1: report.eval.f1,
            seconds: t0.elapsed().as_secs_f64(),
            selected: Vec::new(),
            shortfall: 0,
        });
        let mut run = AlRun {
            config,
            split,
            learner,
            oracle,
            dir,
            state,
            model,
            observer: None,
        };
        run.persist(&[])?;
        Ok(run)
    }

    /// Reloads state and the latest checkpoint from `dir`.
    pub fn resume(config: AlConfig, split: &'a DatasetSplit, learner: L, oracle: O, dir: RunDir) -> Result<Self> {
        config.validate()?;
        let text = fs::read_to_string(dir.state()).map_err(|e| Error::io(dir.state(), e))?;
        let state = AlState::from_json(&text)?;
        state.check(split)?;
        let saved: AlConfig = {
            let p = dir.al_config();
            serde_json::from_str(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?
        };
        if saved != config {
            return Err(Error::Config("the run was started with a different AL configuration".into()));
        }
        let model = learner.load(&dir.checkpoint(state.iteration))?;
        Ok(AlRun {
            config,
            split,
            learner,
            oracle,
            dir: Some(dir),
            state,
            model,
            observer: None,
        })
    }

    /// Registers a progress callback and calls it once with the current state.
    pub fn set_observer(&mut self, mut observer: Observer) {
        observer(&self.state);
        self.observer = Some(observer);
    }

    pub fn state(&self) -> &AlState {
        &self.state
    }

    pub fn model(&self) -> &L::Model {
        &self.model
    }

    pub fn learner(&self) -> &L {
        &self.learner
    }

    pub fn oracle_mut(&mut self) -> &mut O {
        &mut self.oracle
    }

    pub fn is_finished(&self) -> bool {
        self.state.stop.is_some()
    }

    /// Scores every pool sentence with the current model.
    pub fn score_pool(&self) -> Result<Vec<StrategyScore>> {
        let round = self.state.iteration as u64 + 1;
        let strategy = StrategyConfig {
            seed: self.config.strategy.seed ^ self.config.seed,
            ..self.config.strategy
        };
        let ids: Vec<usize> = self.state.unlabeled.iter().copied().collect();
        let (split, learner, model) = (self.split, &self.learner, &self.model);
        let score_one = |id: usize| -> Result<StrategyScore> {
            if strategy.kind == StrategyKind::Rand {
                return Ok(StrategyScore {
                    sentence_id: id,
                    score: random_score(strategy.seed, id, round),
                    components: None,
                });
            }
            let s = split
                .training_by_id(id)
                .ok_or_else(|| Error::Contract(format!("pool id {id} not in the training split")))?;
            let a = learner.analyze(model, &s.sentence.chars)?;
            score_analysis(id, &a, &strategy, round)
        };
        let workers = self.config.workers.min(ids.len().max(1));
        if workers <= 1 {
            return ids.into_iter().map(score_one).collect();
        }
        let chunk = ids.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = ids
                .chunks(chunk)
                .map(|part| {
                    let score_one = &score_one;
                    scope.spawn(move || part.iter().map(|&id| score_one(id)).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut out = Vec::with_capacity(ids.len());
            for h in handles {
                out.extend(h.join().expect("scoring worker panicked")?);
            }
            Ok(out)
        })
    }

    /// One round of selection, labeling and retraining. Returns `false` once the run is over.
    pub fn step(&mut self) -> Result<bool> {
        if self.state.stop.is_some() {
            return Ok(false);
        }
        if self.state.iteration >= self.config.iterations {
            return self.finish(StopReason::Completed);
        }
        if self.state.unlabeled.is_empty() && self.state.awaiting.is_empty() {
            return self.finish(StopReason::PoolExhausted);
        }
        let t0 = Instant::now();
        let i = self.state.iteration + 1;
        let scores = self.score_pool()?;
        let selected = select_top_n(&scores, self.config.batch);
        for id in &selected {
            self.state.unlabeled.remove(id);
            self.state.awaiting.insert(*id);
        }
        let awaiting: Vec<usize> = self.state.awaiting.iter().copied().collect();
        let request = OracleRequest {
            iteration: i,
            new: &selected,
            awaiting: &awaiting,
        };
        let answers = self.oracle.label(&request, self.split)?;
        for (id, tags) in answers {
            if !self.state.awaiting.remove(&id) {
                tracing::warn!(id, "oracle answered an id that was not requested; ignored");
                continue;
            }
            let s = self.split.training_by_id(id).expect("awaiting ids come from the training split");
            if tags.len() != s.len() {
                return Err(Error::Oracle(format!("label for sentence {id} has the wrong length")));
            }
            self.state.labels.insert(id, tags);
            self.state.labeled.insert(id);
        }
        let shortfall = self.state.awaiting.len();
        if shortfall > 0 {
            tracing::warn!(iteration = i, shortfall, "oracle returned fewer labels than requested");
        }

        let labeled = collect(self.split, &self.state.labeled, &self.state)?;
        let warm = self.config.warm_start.then_some(&self.model);
        let model = self.learner.fit(&labeled, self.config.round_seed(i), warm)?;
        let report = self.learner.evaluate(&model, &self.split.testing)?;
        self.model = model;
        self.state.record(IterationRecord {
            iteration: i,
            train_size: labeled.len(),
            test_nll: report.mean_nll,
            test_f1: report.eval.f1,
            seconds: t0.elapsed().as_secs_f64(),
            selected: selected.clone(),
            shortfall,
        });
        let picked: Vec<StrategyScore> = {
            let set: BTreeSet<usize> = selected.iter().copied().collect();
            scores.into_iter().filter(|s| set.contains(&s.sentence_id)).collect()
        };
        self.persist(&picked)?;
        if self.state.iteration >= self.config.iterations {
            return self.finish(StopReason::Completed);
        }
        Ok(true)
    }

    /// Runs the remaining rounds.
    pub fn run_to_end(&mut self) -> Result<&AlState> {
        while self.step()? {}
        Ok(&self.state)
    }

    /// The model with the smallest recorded test loss.
    pub fn best_model(&self) -> Result<L::Model> {
        match &self.dir {
            Some(d) => self.learner.load(&d.checkpoint(self.state.best.iteration)),
            None if self.state.best.iteration == self.state.iteration => {
                let dir = tempfile_dir()?;
                self.learner.save(&self.model, &dir)?;
                let m = self.learner.load(&dir);
                let _ = fs::remove_dir_all(&dir);
                m
            }
            None => Err(Error::Config("best model is only kept for runs with a directory".into())),
        }
    }

    fn finish(&mut self, reason: StopReason) -> Result<bool> {
        tracing::info!(?reason, best = self.state.best.iteration, "active learning finished");
        self.state.stop = Some(reason);
        self.persist_state()?;
        Ok(false)
    }

    fn persist(&mut self, picked: &[StrategyScore]) -> Result<()> {
        if let Some(d) = &self.dir {
            let i = self.state.iteration;
            let ck = d.checkpoint(i);
            let tmp = ck.with_extension("partial");
            if tmp.exists() {
                fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
            }
            self.learner.save(&self.model, &tmp)?;
            if ck.exists() {
                fs::remove_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
            }
            fs::rename(&tmp, &ck).map_err(|e| Error::io(&ck, e))?;
            write_atomic(&d.metrics(), self.state.metrics_csv().as_bytes())?;
            let mut sel = if i == 0 {
                String::from("iteration,id,score,ne,loss\n")
            } else {
                fs::read_to_string(d.selections()).unwrap_or_else(|_| String::from("iteration,id,score,ne,loss\n"))
            };
            for s in picked {
                let (ne, loss) = s
                    .components
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .unwrap_or_default();
                sel.push_str(&format!("{i},{},{},{ne},{loss}\n", s.sentence_id, s.score));
            }
            write_atomic(&d.selections(), sel.as_bytes())?;
        }
        self.persist_state()
    }

    fn persist_state(&mut self) -> Result<()> {
        if let Some(d) = &self.dir {
            write_atomic(&d.state(), self.state.to_json()?.as_bytes())?;
        }
        let mut obs = self.observer.take();
        if let Some(f) = obs.as_mut() {
            f(&self.state);
        }
        self.observer = obs;
        Ok(())
    }
}

fn tempfile_dir() -> Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("nelp-best-{}-{}", std::process::id(), rand::random::<u64>()));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Labeled sentences in id order, with oracle labels replacing reference tags.
fn collect(split: &DatasetSplit, ids: &BTreeSet<usize>, state: &AlState) -> Result<Vec<LabeledSentence>> {
    ids.iter()
        .map(|&id| {
            let s = split
                .training_by_id(id)
                .ok_or_else(|| Error::Contract(format!("labeled id {id} not in the training split")))?;
            Ok(match state.labels.get(&id) {
                Some(tags) => LabeledSentence::new(s.sentence.clone(), tags.clone())?,
                None => s.clone(),
            })
        })
        .collect()
}

/// One F1 value of a strategy comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub seed: u64,
    pub iteration: usize,
    pub train_size: usize,
    pub f1: f64,
}

pub fn curve_rows(label: &str, seed: u64, state: &AlState) -> Vec<CurveRow> {
    state
        .history
        .iter()
        .map(|r| CurveRow {
            strategy: label.to_string(),
            seed,
            iteration: r.iteration,
            train_size: r.train_size,
            f1: r.test_f1,
        })
        .collect()
}

pub fn curves_csv(rows: &[CurveRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_curves_csv(text: &str) -> Result<Vec<CurveRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("curve table: {e}"))))
        .collect()
}

/// Per-strategy, per-iteration mean F1 over seeds: `(strategy, iteration, mean_f1, n_seeds)`.
pub fn curve_summary(rows: &[CurveRow]) -> Vec<(String, usize, f64, usize)> {
    let mut acc: std::collections::BTreeMap<(String, usize), (f64, usize)> = Default::default();
    for r in rows {
        let e = acc.entry((r.strategy.clone(), r.iteration)).or_insert((0.0, 0));
        e.0 += r.f1;
        e.1 += 1;
    }
    acc.into_iter().map(|((s, i), (sum, n))| (s, i, sum / n as f64, n)).collect()
}

/// Mean F1 of `strategy` over iterations `from..=to` and all seeds.
pub fn mean_f1(rows: &[CurveRow], strategy: &str, from: usize, to: usize) -> Option<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.strategy == strategy && (from..=to).contains(&r.iteration))
        .map(|r| r.f1)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// A named strategy setting in a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub strategy: StrategyConfig,
}

impl Arm {
    pub fn new(strategy: StrategyConfig) -> Self {
        let label = if strategy.kind == StrategyKind::Nelp && (strategy.alpha, strategy.beta) != (1.0, 1.0) {
            format!("nelp-a{}-b{}", strategy.alpha, strategy.beta)
        } else {
            strategy.kind.name().to_string()
        };
        Arm { label, strategy }
    }
}

/// Runs every arm on every `(seed, split)` with the gold oracle. Each seed's
/// split and training seeds are shared by all arms. Runs go to
/// `root/<label>-seed<k>` when a root is given.
pub fn compare_strategies<L: Learner + Sync + Clone>(
    learner: &L,
    splits: &[(u64, DatasetSplit)],
    al: AlConfig,
    arms: &[Arm],
    root: Option<&Path>,
) -> Result<Vec<CurveRow>>
where
    L::Model: Sync,
{
    let mut rows = Vec::new();
    for (seed, split) in splits {
        for arm in arms {
            let config = AlConfig {
                strategy: arm.strategy,
                seed: *seed,
                ..al
            };
            let dir = root.map(|r| RunDir::new(r.join(format!("{}-seed{seed}", arm.label))));
            let mut run = AlRun::start(config, split, learner.clone(), GoldOracle, dir)?;
            run.run_to_end()?;
            let state = run.state();
            tracing::info!(
                arm = %arm.label,
                seed,
                f1 = ?state.history.iter().map(|r| r.test_f1).collect::<Vec<_>>(),
                "arm finished"
            );
            rows.extend(curve_rows(&arm.label, *seed, state));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
