use super::*;
use crate::corpus::{split_dataset, SplitRatios, TagSeq};
use crate::features::VocabConfig;
use crate::model::{prepare_features, ModelConfig, TrainConfig};
use crate::synth::{generate, SynthConfig};

fn setup(n: usize) -> (DatasetSplit, JointLearner) {
    let corpus = generate(&SynthConfig {
        sentences: n,
        lexicon_size: 200,
        inventory: 80,
        max_words: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = split_dataset(&corpus, SplitRatios::default(), 0.1, 3).unwrap();
    let model = ModelConfig {
        char_dim: 4,
        ngram_dim: 3,
        hidden: 4,
        d_k: 3,
        dropout: 0.1,
        ..ModelConfig::default()
    };
    let chars: Vec<&[char]> = corpus.iter().map(|s| s.sentence.chars.as_slice()).collect();
    let (vocab, table) = prepare_features(&model, &chars, VocabConfig::default(), None).unwrap();
    let learner = JointLearner {
        model,
        train: TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
        vocab,
        pretrained_ngrams: table,
    };
    (split, learner)
}

fn config(kind: StrategyKind, iterations: usize, batch: usize) -> AlConfig {
    AlConfig {
        iterations,
        batch,
        strategy: StrategyConfig::new(kind),
        ..AlConfig::default()
    }
}

#[test]
fn bookkeeping_invariants() {
    let (split, learner) = setup(200);
    let all: BTreeSet<usize> = split.training.iter().map(|s| s.id()).collect();
    let mut run = AlRun::start(config(StrategyKind::Nelp, 3, 10), &split, learner, GoldOracle, None).unwrap();
    let mut prev = run.state().labeled.len();
    while run.step().unwrap() {
        let s = run.state();
        assert_eq!(s.labeled.len(), prev + 10);
        prev = s.labeled.len();
        assert!(s.labeled.is_disjoint(&s.unlabeled));
        let union: BTreeSet<usize> = s.labeled.union(&s.unlabeled).copied().collect();
        assert_eq!(union, all);
        assert_eq!(s.history.len(), s.iteration + 1);
        let last = s.history.last().unwrap();
        assert_eq!(last.selected.len(), 10);
        assert!(last.selected.iter().all(|id| s.labeled.contains(id)));
    }
    let s = run.state();
    assert_eq!(s.stop, Some(StopReason::Completed));
    assert_eq!(s.history.len(), 4);
    let min = s.history.iter().map(|r| r.test_nll).fold(f64::INFINITY, f64::min);
    assert_eq!(s.best.test_nll, min);
    assert_eq!(s.history[s.best.iteration].test_nll, min);
}

#[test]
fn pool_exhaustion_stops_early() {
    let (split, learner) = setup(60);
    let pool = split.unlabeled.len();
    let mut run = AlRun::start(config(StrategyKind::Rand, 10, pool / 2 + 1), &split, learner, GoldOracle, None).unwrap();
    run.run_to_end().unwrap();
    let s = run.state();
    assert_eq!(s.iteration, 2);
    assert!(s.unlabeled.is_empty());
    assert_eq!(s.stop, Some(StopReason::PoolExhausted));
    assert_eq!(s.history[2].selected.len(), pool - (pool / 2 + 1));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (split, learner) = setup(120);
    let cfg = config(StrategyKind::Nelp, 4, 8);
    let a_dir = tempfile::tempdir().unwrap();
    let mut a = AlRun::start(cfg, &split, learner.clone(), GoldOracle, Some(RunDir::new(a_dir.path()))).unwrap();
    a.run_to_end().unwrap();

    let b_dir = tempfile::tempdir().unwrap();
    {
        let mut b = AlRun::start(cfg, &split, learner.clone(), GoldOracle, Some(RunDir::new(b_dir.path()))).unwrap();
        b.step().unwrap();
        b.step().unwrap();
    }
    let mut b = AlRun::resume(cfg, &split, learner.clone(), GoldOracle, RunDir::new(b_dir.path())).unwrap();
    assert_eq!(b.state().iteration, 2);
    b.run_to_end().unwrap();

    let (ha, hb) = (&a.state().history, &b.state().history);
    assert_eq!(ha.len(), hb.len());
    assert!(ha.iter().zip(hb).all(|(x, y)| x.same_outcome(y)));
    assert_eq!(a.state().labeled, b.state().labeled);
    assert_eq!(a.state().best, b.state().best);

    let d = RunDir::new(b_dir.path());
    let metrics = fs::read_to_string(d.metrics()).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 5);
    let selections = fs::read_to_string(d.selections()).unwrap();
    assert_eq!(selections.lines().count(), 1 + 4 * 8);
    assert!(d.checkpoint(4).join("params.json").exists());
    assert!(b.best_model().is_ok());

    let other = AlConfig { batch: 9, ..cfg };
    assert!(AlRun::resume(other, &split, learner.clone(), GoldOracle, d.clone()).is_err());
    assert!(AlRun::start(cfg, &split, learner, GoldOracle, Some(d)).is_err());
}

/// Answers only the first half of what is pending each round.
struct HalfOracle;

impl Oracle for HalfOracle {
    fn label(&mut self, request: &OracleRequest<'_>, split: &DatasetSplit) -> Result<Vec<(usize, TagSeq)>> {
        let k = request.awaiting.len().div_ceil(2);
        let mut gold = GoldOracle;
        let half = OracleRequest {
            awaiting: &request.awaiting[..k],
            ..*request
        };
        gold.label(&half, split)
    }
}

#[test]
fn partial_oracle_answers_carry_over() {
    let (split, learner) = setup(100);
    let mut run = AlRun::start(config(StrategyKind::Lc, 3, 6), &split, learner, HalfOracle, None).unwrap();
    let base = run.state().labeled.len();
    run.step().unwrap();
    assert_eq!(run.state().labeled.len(), base + 3);
    assert_eq!(run.state().awaiting.len(), 3);
    assert_eq!(run.state().history[1].shortfall, 3);
    run.step().unwrap();
    // 3 left over + 6 new = 9 pending, 5 answered
    assert_eq!(run.state().labeled.len(), base + 8);
    assert_eq!(run.state().awaiting.len(), 4);
    run.state().check(&split).unwrap();
}

#[test]
fn curve_helpers() {
    let rows = vec![
        CurveRow { strategy: "A".into(), seed: 0, iteration: 1, train_size: 10, f1: 0.5 },
        CurveRow { strategy: "A".into(), seed: 1, iteration: 1, train_size: 10, f1: 0.7 },
        CurveRow { strategy: "A".into(), seed: 0, iteration: 2, train_size: 20, f1: 0.9 },
    ];
    assert_eq!(mean_f1(&rows, "A", 1, 1), Some(0.6));
    assert!((mean_f1(&rows, "A", 1, 2).unwrap() - 0.7).abs() < 1e-12);
    assert_eq!(mean_f1(&rows, "B", 1, 2), None);
    let summary = curve_summary(&rows);
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[0].3, 2);
    let text = curves_csv(&rows).unwrap();
    assert!(text.starts_with("strategy,seed,iteration,train_size,f1\n"));
    assert_eq!(read_curves_csv(&text).unwrap(), rows);
}

#[test]
fn config_validation() {
    assert!(AlConfig { iterations: 0, ..AlConfig::default() }.validate().is_err());
    assert!(AlConfig { batch: 0, ..AlConfig::default() }.validate().is_err());
    assert!(AlConfig::default().validate().is_ok());
}

#[test]
fn worker_count_does_not_change_scores() {
    let (split, learner) = setup(100);
    let one = AlRun::start(config(StrategyKind::Nelp, 1, 5), &split, learner.clone(), GoldOracle, None).unwrap();
    let three = AlRun::start(
        AlConfig { workers: 3, ..config(StrategyKind::Nelp, 1, 5) },
        &split,
        learner,
        GoldOracle,
        None,
    )
    .unwrap();
    assert_eq!(one.score_pool().unwrap(), three.score_pool().unwrap());
}

#[test]
fn comparison_shares_splits_across_arms() {
    let (split, learner) = setup(80);
    let arms: Vec<Arm> = [StrategyKind::Rand, StrategyKind::Mte]
        .into_iter()
        .map(|k| Arm::new(StrategyConfig::new(k)))
        .collect();
    let root = tempfile::tempdir().unwrap();
    let rows = compare_strategies(&learner, &[(7, split)], config(StrategyKind::Nelp, 2, 4), &arms, Some(root.path())).unwrap();
    assert_eq!(rows.len(), 2 * 3);
    // same initial model for both arms
    assert_eq!(rows[0].f1, rows[3].f1);
    assert!(root.path().join("mte-seed7").join("state.json").exists());
    assert!(root.path().join("rand-seed7").join("pool_predictions.txt").exists());
    assert_eq!(Arm::new(StrategyConfig { alpha: 1.0, beta: 100.0, ..StrategyConfig::default() }).label, "nelp-a1-b100");
}
