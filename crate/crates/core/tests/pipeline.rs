//! Public-API walk through: corpus file -> config -> AL run -> reload the best model.

use nelp_core::al_loop::{GoldOracle, Learner, RunDir};
use nelp_core::config::RunConfig;
use nelp_core::corpus::{read_labeled_corpus, write_labeled_corpus};
use nelp_core::model::evaluate;
use nelp_core::run::{execute, prepare};
use nelp_core::synth::{generate, SynthConfig};

#[test]
fn file_corpus_run_and_reload() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus_path = tmp.path().join("corpus.txt");
    let corpus = generate(&SynthConfig {
        sentences: 60,
        max_words: 6,
        ..SynthConfig::default()
    })
    .unwrap();
    write_labeled_corpus(&corpus_path, &corpus).unwrap();
    assert_eq!(read_labeled_corpus(&corpus_path).unwrap().len(), 60);

    let config = RunConfig::from_toml(&format!(
        r#"
        [corpus]
        path = "{}"
        [strategy]
        kind = "mte"
        [al]
        iterations = 2
        batch = 5
        [model]
        char_dim = 4
        ngram_dim = 4
        hidden = 4
        d_k = 4
        [train]
        epochs = 2
        [features]
        epochs = 1
        "#,
        corpus_path.display()
    ))
    .unwrap();
    let prepared = prepare(&config).unwrap();
    let run = tmp.path().join("run");
    let state = execute(&config, &prepared, &run, GoldOracle, None).unwrap();
    assert_eq!(state.history.len(), 3);
    assert_eq!(state.labeled.len(), prepared.split.labeled.len() + 10);
    state.check(&prepared.split).unwrap();

    let best = prepared
        .learner
        .load(&RunDir::new(&run).checkpoint(state.best.iteration))
        .unwrap();
    let report = evaluate(&best, &prepared.split.testing).unwrap();
    assert_eq!(report.mean_nll, state.best.test_nll);
    assert_eq!(report.eval.f1, state.history[state.best.iteration].test_f1);
}
