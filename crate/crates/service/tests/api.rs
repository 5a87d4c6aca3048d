use std::sync::Arc;
use std::time::Duration;

use nelp_client::{Client, ClientError};
use nelp_core::api::TaskStatus;
use nelp_core::config::RunConfig;
use nelp_service::{router, start_session, AnnotationQueue, AppState, Progress};

async fn spawn(app: AppState) -> Client {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(app)).await.unwrap() });
    Client::new(format!("http://{addr}"))
}

fn app_with_tasks(lease: Duration) -> AppState {
    let q = Arc::new(AnnotationQueue::new(lease));
    q.enqueue(1, [(10, "病人长期于".chars().collect()), (11, "我院".chars().collect()), (12, "治疗".chars().collect())]);
    AppState::new(q, Progress { strategy: "nelp".into(), iterations: 10, ..Progress::default() })
}

#[tokio::test]
async fn label_submission_contract() {
    let c = spawn(app_with_tasks(Duration::from_secs(60))).await;
    let r = c.submit(10, vec![2, 3]).await.unwrap();
    assert_eq!(r.tags, "BESBE");
    assert_eq!(r.status, TaskStatus::Submitted);

    let e = c.submit(10, vec![2, 3]).await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(409));
    let e = c.submit(99, vec![]).await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(404));
    let e = c.submit(11, vec![6]).await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(422));
    assert!(matches!(&e, ClientError::Status { reason, .. } if reason.contains("out of range")));
    let e = c.submit(11, vec![1, 1]).await.unwrap_err();
    assert_eq!(e.status().map(|s| s.as_u16()), Some(422));

    assert_eq!(c.submit(11, vec![]).await.unwrap().tags, "BE");
    let s = c.status().await.unwrap();
    assert_eq!((s.pending, s.submitted), (1, 2));
    assert_eq!(s.strategy, "nelp");
    assert_eq!(s.iteration, None);
    assert!(!s.finished);
    assert!(c.curves().await.unwrap().history.is_empty());
}

#[tokio::test]
async fn malformed_body_is_422() {
    let c = spawn(app_with_tasks(Duration::from_secs(60))).await;
    let resp = reqwest_post(&format!("{}/labels", c.base()), r#"{"task_id": 10, "boundaries": [-1]}"#).await;
    assert_eq!(resp, 422);
}

async fn reqwest_post(url: &str, body: &str) -> u16 {
    // raw request so the body can be invalid JSON for the schema
    let addr = url.trim_start_matches("http://").split('/').next().unwrap().to_string();
    let req = format!(
        "POST /labels HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    tokio::task::spawn_blocking(move || {
        use std::io::{Read, Write};
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        s.write_all(req.as_bytes()).unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out.split_whitespace().nth(1).unwrap().parse().unwrap()
    })
    .await
    .unwrap()
}

#[tokio::test]
async fn concurrent_pollers_get_disjoint_tasks() {
    let c = spawn(app_with_tasks(Duration::from_secs(60))).await;
    let (a, b) = tokio::join!(c.batch(2), c.batch(2));
    let (a, b) = (a.unwrap(), b.unwrap());
    let mut ids: Vec<u64> = a.tasks.iter().chain(&b.tasks).map(|t| t.task_id).collect();
    assert_eq!(ids.len(), 3);
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids, vec![10, 11, 12]);
    assert_eq!(a.lease_secs, 60);
    assert!(c.batch(5).await.unwrap().tasks.is_empty());
    let t = a.tasks.iter().chain(&b.tasks).find(|t| t.task_id == 10).unwrap();
    assert_eq!((t.text.as_str(), t.len, t.iteration), ("病人长期于", 5, 1));
}

#[tokio::test]
async fn leases_expire() {
    let c = spawn(app_with_tasks(Duration::from_millis(200))).await;
    assert_eq!(c.batch(10).await.unwrap().tasks.len(), 3);
    assert!(c.batch(10).await.unwrap().tasks.is_empty());
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert_eq!(c.batch(10).await.unwrap().tasks.len(), 3);
}

fn human_config() -> RunConfig {
    RunConfig::from_toml(
        r#"
        [corpus.synth]
        sentences = 80
        lexicon_size = 60
        inventory = 30
        max_words = 4
        [split]
        labeled_fraction = 0.2
        [al]
        iterations = 2
        batch = 4
        [model]
        char_dim = 4
        ngram_dim = 4
        hidden = 4
        d_k = 4
        [train]
        epochs = 1
        [features]
        epochs = 1
        [oracle]
        kind = "human"
        deadline_secs = 60
        "#,
    )
    .unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn human_oracle_session_end_to_end() {
    let config = human_config();
    let corpus = config.load_corpus().unwrap();
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("run");
    let session = start_session(config, dir.clone()).unwrap();
    let c = spawn(session.app.clone()).await;

    let mut answered = 0;
    for _ in 0..600 {
        let status = c.status().await.unwrap();
        if status.finished {
            assert!(status.error.is_none(), "{:?}", status.error);
            break;
        }
        for t in c.batch(10).await.unwrap().tasks {
            let gold = &corpus[t.task_id as usize];
            assert_eq!(gold.sentence.text(), t.text);
            c.submit(t.task_id, gold.tags.boundaries()).await.unwrap();
            answered += 1;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let state = tokio::task::spawn_blocking(move || session.join()).await.unwrap().unwrap();
    assert_eq!(answered, 8);
    assert_eq!(state.history.len(), 3);
    assert!(state.history.iter().all(|r| r.shortfall == 0));
    // human labels equal the reference tags bit for bit
    for (id, tags) in &state.labels {
        assert_eq!(tags, &corpus[*id].tags);
    }
    let curves = c.curves().await.unwrap();
    assert_eq!(curves.history.len(), 3);
    assert_eq!(curves.history[2].train_size, curves.history[0].train_size + 8);
    let status = c.status().await.unwrap();
    assert_eq!(status.iteration, Some(2));
    assert_eq!((status.pending, status.submitted), (0, 8));
    assert!(dir.join("config.toml").exists());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn deadline_shortfall_is_recorded() {
    let mut config = human_config();
    config.oracle.deadline_secs = 0;
    config.al.iterations = 1;
    let root = tempfile::tempdir().unwrap();
    let session = start_session(config, root.path().join("run")).unwrap();
    let state = tokio::task::spawn_blocking(move || session.join()).await.unwrap().unwrap();
    assert_eq!(state.history[1].shortfall, 4);
    assert_eq!(state.awaiting.len(), 4);
    assert_eq!(state.history[1].train_size, state.history[0].train_size);
}

#[test]
fn invalid_config_fails_before_running() {
    let mut config = human_config();
    config.corpus.path = Some("/nonexistent/corpus.txt".into());
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("run");
    assert!(start_session(config, dir.clone()).is_err());
    assert!(!dir.exists());
}
