mod overrides;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nelp_client::Client;
use nelp_core::al_loop::{
    compare_strategies, curve_rows, curve_summary, curves_csv, read_curves_csv, write_atomic, AlState, Arm, CurveRow,
    GoldOracle, RunDir,
};
use nelp_core::config::{OracleKind, RunConfig};
use nelp_core::corpus::{read_labeled_corpus, write_labeled_corpus, LabeledSentence};
use nelp_core::model::{evaluate, train, EvalReport, JointModel};
use nelp_core::run::{execute, is_resumable, load_snapshot, prepare, CONFIG_FILE};
use nelp_core::strategies::{StrategyConfig, StrategyKind};
use nelp_core::synth::{generate, SynthConfig};
use overrides::ConfigArgs;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "nelp", version, about = "Active-learning Chinese word segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the joint model on the labeled split and report test F1.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (must not exist).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the active-learning loop with the gold oracle (resumes an existing run).
    AlRun {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Score a checkpoint, or re-evaluate a run directory from its own contents.
    Eval {
        /// Run directory written by `train` or `al-run`.
        #[arg(long, conflicts_with_all = ["model", "corpus"])]
        run_dir: Option<PathBuf>,
        /// Checkpoint of an AL run to use instead of the best one.
        #[arg(long, requires = "run_dir")]
        iteration: Option<usize>,
        #[arg(long, requires = "corpus")]
        model: Option<PathBuf>,
        /// Segmented corpus to score `--model` on.
        #[arg(long, requires = "model")]
        corpus: Option<PathBuf>,
    },
    /// Run several strategies over several seeds and collect F1 curves.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated strategies; `nelp:A/B` sets the weights.
        #[arg(long, default_value = "rand,lc,mte,mtm,nelp")]
        strategies: String,
        /// Number of seeds `0..k`; overrides the configured seed list.
        #[arg(long)]
        seeds: Option<u64>,
        /// Output directory (must not exist).
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the annotation API while the loop runs in `run_dir`.
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to `$NELP_RUN_ROOT/<strategy>`.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long, env = "NELP_RUN_ROOT", default_value = "runs")]
        run_root: PathBuf,
        #[arg(long, env = "NELP_PORT")]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Write per-iteration F1 tables from a run or comparison directory.
    ExportCurves {
        dir: PathBuf,
        /// Directory for `curves.csv` and `plot.csv`; defaults to `dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic segmented corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3000)]
        sentences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Show the status of a running server.
    Status {
        #[arg(long, env = "NELP_SERVER", default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Print the metric history of a running server.
    Curves {
        #[arg(long, env = "NELP_SERVER", default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Lease pending annotation tasks.
    Batch {
        #[arg(long, env = "NELP_SERVER", default_value = "http://127.0.0.1:8080")]
        server: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Submit a segmentation as word-boundary positions.
    Label {
        #[arg(long, env = "NELP_SERVER", default_value = "http://127.0.0.1:8080")]
        server: String,
        task_id: u64,
        /// Cut positions, e.g. `2,3`; empty for a single word.
        #[arg(value_delimiter = ',', num_args = 0..)]
        boundaries: Vec<usize>,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Train { config, out } => cmd_train(&config.resolve()?, &out),
        Command::AlRun { config, run_dir } => cmd_al_run(&config.resolve()?, &run_dir),
        Command::Eval {
            run_dir,
            iteration,
            model,
            corpus,
        } => match (run_dir, model, corpus) {
            (Some(d), _, _) => cmd_eval_run(&d, iteration),
            (None, Some(m), Some(c)) => cmd_eval_model(&m, &c),
            _ => bail!("eval needs --run-dir, or --model with --corpus"),
        },
        Command::Compare {
            config,
            strategies,
            seeds,
            out,
        } => {
            let mut c = config.resolve()?;
            if let Some(k) = seeds {
                c.seeds = (0..k).collect();
            }
            cmd_compare(&c, &strategies, &out)
        }
        Command::Serve {
            config,
            run_dir,
            run_root,
            port,
            host,
        } => {
            let mut c = config.resolve()?;
            if let Some(p) = port {
                c.service.port = p;
            }
            let dir = run_dir.unwrap_or_else(|| run_root.join(c.strategy.kind.name()));
            runtime()?.block_on(cmd_serve(c, dir, host))
        }
        Command::ExportCurves { dir, out } => cmd_export(&dir, out.as_deref().unwrap_or(&dir)),
        Command::Synth { out, sentences, seed } => {
            let corpus = generate(&SynthConfig {
                sentences,
                seed,
                ..SynthConfig::default()
            })?;
            write_labeled_corpus(&out, &corpus)?;
            println!("wrote {} sentences to {}", corpus.len(), out.display());
            Ok(())
        }
        Command::Status { server } => runtime()?.block_on(async {
            print_json(&Client::new(server).status().await?)
        }),
        Command::Curves { server } => runtime()?.block_on(async {
            print_json(&Client::new(server).curves().await?)
        }),
        Command::Batch { server, k } => runtime()?.block_on(async {
            print_json(&Client::new(server).batch(k).await?)
        }),
        Command::Label {
            server,
            task_id,
            boundaries,
        } => runtime()?.block_on(async {
            print_json(&Client::new(server).submit(task_id, boundaries).await?)
        }),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

/// Creates `out` via a sibling staging directory so a failure leaves nothing behind.
fn staged<T>(out: &Path, f: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    if out.exists() {
        bail!("{} already exists", out.display());
    }
    let name = out.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = out.with_file_name(format!(".{name}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    match f(&tmp) {
        Ok(v) => {
            fs::rename(&tmp, out)?;
            Ok(v)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn report_json(r: &EvalReport) -> serde_json::Value {
    json!({
        "f1": r.eval.f1,
        "precision": r.eval.precision,
        "recall": r.eval.recall,
        "mean_nll": r.mean_nll,
    })
}

fn cmd_train(c: &RunConfig, out: &Path) -> Result<()> {
    let p = prepare(c)?;
    let labeled: Vec<LabeledSentence> = p.split.labeled_sentences().into_iter().cloned().collect();
    let report = staged(out, |dir| {
        let mut model = JointModel::new(c.model.clone(), p.learner.vocab.clone(), p.learner.pretrained_ngrams.as_ref(), p.seed)?;
        let stats = train(&mut model, &labeled, &c.train_config(p.seed))?;
        let report = evaluate(&model, &p.split.testing)?;
        model.save(dir.join("model"))?;
        write_atomic(&dir.join(CONFIG_FILE), c.to_toml()?.as_bytes())?;
        let body = json!({ "train_size": labeled.len(), "test": report_json(&report), "epochs": stats });
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&body)?)?;
        Ok(report)
    })?;
    println!(
        "trained on {} sentences; test F1 {:.4} (P {:.4}, R {:.4}); saved to {}",
        labeled.len(),
        report.eval.f1,
        report.eval.precision,
        report.eval.recall,
        out.display()
    );
    Ok(())
}

fn cmd_al_run(c: &RunConfig, dir: &Path) -> Result<()> {
    if c.oracle.kind == OracleKind::Human {
        bail!("the human oracle needs the annotation API; use `nelp serve`");
    }
    let p = prepare(c)?;
    let state = execute(c, &p, dir, GoldOracle, None)?;
    print_history(&state);
    Ok(())
}

fn print_history(state: &AlState) {
    println!("iteration\ttrain_size\ttest_nll\ttest_f1");
    for r in &state.history {
        println!("{}\t{}\t{:.4}\t{:.4}", r.iteration, r.train_size, r.test_nll, r.test_f1);
    }
    println!("best iteration {} (test loss {:.4})", state.best.iteration, state.best.test_nll);
}

fn cmd_eval_model(model: &Path, corpus: &Path) -> Result<()> {
    let m = JointModel::load(model)?;
    let data = read_labeled_corpus(corpus)?;
    let r = evaluate(&m, &data)?;
    print_json(&report_json(&r))
}

/// Rebuilds the test split from the stored config and scores a stored checkpoint.
fn cmd_eval_run(dir: &Path, iteration: Option<usize>) -> Result<()> {
    let c = load_snapshot(dir)?;
    let corpus = c.load_corpus()?;
    let split = c.split(&corpus, c.seeds()[0])?;
    let (model_dir, recorded) = if is_resumable(dir) {
        let state = AlState::from_json(&fs::read_to_string(RunDir::new(dir).state())?)?;
        let i = iteration.unwrap_or(state.best.iteration);
        let rec = state
            .history
            .get(i)
            .with_context(|| format!("run has no iteration {i}"))?;
        (RunDir::new(dir).checkpoint(i), rec.test_f1)
    } else {
        let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json"))?)?;
        let f1 = rep["test"]["f1"].as_f64().context("report.json lacks test.f1")?;
        (dir.join("model"), f1)
    };
    let m = JointModel::load(&model_dir)?;
    let r = evaluate(&m, &split.testing)?;
    let mut v = report_json(&r);
    v["recorded_f1"] = json!(recorded);
    v["checkpoint"] = json!(model_dir);
    print_json(&v)
}

fn parse_arms(spec: &str) -> Result<Vec<Arm>> {
    spec.split(',')
        .map(|s| {
            let s = s.trim();
            if let Some(w) = s.strip_prefix("nelp:") {
                let (a, b) = w.split_once('/').with_context(|| format!("expected nelp:A/B, got {s}"))?;
                let cfg = StrategyConfig {
                    kind: StrategyKind::Nelp,
                    alpha: a.parse()?,
                    beta: b.parse()?,
                    ..StrategyConfig::default()
                };
                cfg.validate()?;
                Ok(Arm::new(cfg))
            } else {
                Ok(Arm::new(StrategyConfig::new(s.parse()?)))
            }
        })
        .collect()
}

fn cmd_compare(c: &RunConfig, strategies: &str, out: &Path) -> Result<()> {
    let arms = parse_arms(strategies)?;
    let corpus = c.load_corpus()?;
    let learner = c.learner(&corpus)?;
    let splits = c
        .seeds()
        .into_iter()
        .map(|s| Ok((s, c.split(&corpus, s)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = staged(out, |dir| {
        write_atomic(&dir.join(CONFIG_FILE), c.to_toml()?.as_bytes())?;
        let rows = compare_strategies(&learner, &splits, c.al_config(0), &arms, Some(dir))?;
        write_curves(dir, &rows)?;
        Ok(rows)
    })?;
    println!("strategy\titeration\tmean_f1\tseeds");
    for (s, i, f, n) in curve_summary(&rows) {
        println!("{s}\t{i}\t{f:.4}\t{n}");
    }
    println!("{} curve rows written to {}", rows.len(), out.join("curves.csv").display());
    Ok(())
}

/// `curves.csv` (one row per strategy, seed and iteration) and `plot.csv`
/// (long format: per-strategy mean F1 against iteration and training size).
fn write_curves(dir: &Path, rows: &[CurveRow]) -> Result<()> {
    write_atomic(&dir.join("curves.csv"), curves_csv(rows)?.as_bytes())?;
    let mut plot = String::from("strategy,iteration,train_size,mean_f1,seeds\n");
    for (s, i, f, n) in curve_summary(rows) {
        let sizes: Vec<usize> = rows
            .iter()
            .filter(|r| r.strategy == s && r.iteration == i)
            .map(|r| r.train_size)
            .collect();
        let size = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        plot.push_str(&format!("{s},{i},{size},{f},{n}\n"));
    }
    write_atomic(&dir.join("plot.csv"), plot.as_bytes())?;
    Ok(())
}

fn cmd_export(dir: &Path, out: &Path) -> Result<()> {
    let rows = if dir.join("curves.csv").exists() && !is_resumable(dir) {
        read_curves_csv(&fs::read_to_string(dir.join("curves.csv"))?)?
    } else if is_resumable(dir) {
        let c = load_snapshot(dir)?;
        let state = AlState::from_json(&fs::read_to_string(RunDir::new(dir).state())?)?;
        curve_rows(&Arm::new(c.strategy).label, c.seeds()[0], &state)
    } else {
        bail!("{} is neither a comparison nor an active-learning run", dir.display());
    };
    fs::create_dir_all(out)?;
    write_curves(out, &rows)?;
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

async fn cmd_serve(c: RunConfig, dir: PathBuf, host: std::net::IpAddr) -> Result<()> {
    let addr = SocketAddr::new(host, c.service.port);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let session = tokio::task::spawn_blocking(move || nelp_service::start_session(c, dir)).await??;
    let app = nelp_service::router(session.app.clone());
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    match session.shutdown() {
        Some(state) => print_history(&state?),
        None => eprintln!("run interrupted; start the same command again to resume"),
    }
    Ok(())
}
