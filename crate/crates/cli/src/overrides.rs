use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use nelp_core::config::{OracleKind, RunConfig};
use nelp_core::strategies::StrategyKind;

/// Config file plus flag overrides; flags win.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Segmented corpus (space-separated words, one sentence per line).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Selection rounds M.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Sentences selected per round.
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated seeds, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,
    /// N-gram feature order: off, 2, 3 or 4.
    #[arg(long)]
    pub ngram: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub labeled_fraction: Option<f64>,
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Start each round from the previous model.
    #[arg(long)]
    pub warm_start: bool,
    /// Any other field as `table.key=value` (TOML value syntax), repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if !self.set.is_empty() {
            c = apply_sets(&c, &self.set)?;
        }
        if let Some(p) = &self.corpus {
            c.corpus.path = Some(p.clone());
        }
        if let Some(k) = self.strategy {
            c.strategy.kind = k;
        }
        if let Some(a) = self.alpha {
            c.strategy.alpha = a;
        }
        if let Some(b) = self.beta {
            c.strategy.beta = b;
        }
        if let Some(m) = self.iters {
            c.al.iterations = m;
        }
        if let Some(n) = self.n {
            c.al.batch = n;
        }
        if let Some(s) = &self.seed {
            c.seeds = s.clone();
        }
        if let Some(g) = &self.ngram {
            c.model.ngram_order = match g.as_str() {
                "off" => None,
                o => Some(o.parse().with_context(|| format!("--ngram expects off, 2, 3 or 4, got {o}"))?),
            };
        }
        if let Some(e) = self.epochs {
            c.train.epochs = Some(e);
        }
        if let Some(lr) = self.lr {
            c.train.lr = lr;
        }
        if let Some(f) = self.labeled_fraction {
            c.split.labeled_fraction = f;
        }
        if let Some(o) = &self.oracle {
            c.oracle.kind = match o.as_str() {
                "gold" => OracleKind::Gold,
                "human" => OracleKind::Human,
                _ => bail!("--oracle expects gold or human, got {o}"),
            };
        }
        if let Some(w) = self.workers {
            c.al.workers = w;
        }
        if self.warm_start {
            c.al.warm_start = true;
        }
        let cwd = std::env::current_dir()?;
        c.absolutize(&cwd);
        c.validate()?;
        Ok(c)
    }
}

/// Applies `a.b.c=value` assignments through the TOML representation.
fn apply_sets(c: &RunConfig, sets: &[String]) -> Result<RunConfig> {
    let mut doc: toml::Table = toml::from_str(&c.to_toml()?)?;
    for s in sets {
        let (path, raw) = s.split_once('=').with_context(|| format!("--set expects PATH=VALUE, got {s}"))?;
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed above"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let keys: Vec<&str> = path.split('.').collect();
        let (last, tables) = keys.split_last().expect("split yields one item");
        let mut cur = &mut doc;
        for k in tables {
            cur = cur
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .with_context(|| format!("{path}: {k} is not a table"))?;
        }
        cur.insert(last.to_string(), value);
    }
    Ok(RunConfig::from_toml(&toml::to_string(&doc)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = std::env::temp_dir().join(format!("nelp-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, "[al]\nbatch = 7\niterations = 3\n[strategy]\nkind = \"mte\"\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            n: Some(9),
            ngram: Some("off".into()),
            set: vec!["model.hidden=12".into(), "oracle.kind=human".into()],
            ..ConfigArgs::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.al.batch, 9);
        assert_eq!(c.al.iterations, 3);
        assert_eq!(c.strategy.kind, StrategyKind::Mte);
        assert_eq!(c.model.ngram_order, None);
        assert_eq!(c.model.hidden, 12);
        assert_eq!(c.oracle.kind, OracleKind::Human);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn bad_overrides_are_rejected() {
        for args in [
            ConfigArgs { ngram: Some("5".into()), ..ConfigArgs::default() },
            ConfigArgs { oracle: Some("crowd".into()), ..ConfigArgs::default() },
            ConfigArgs { set: vec!["model.hidden".into()], ..ConfigArgs::default() },
            ConfigArgs { set: vec!["model.nope=1".into()], ..ConfigArgs::default() },
            ConfigArgs { labeled_fraction: Some(0.0), ..ConfigArgs::default() },
        ] {
            assert!(args.resolve().is_err(), "{args:?}");
        }
    }
}
