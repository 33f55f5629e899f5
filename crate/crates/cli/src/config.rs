//! Flat `key=value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use wuedet::metrics::MetricSet;
use wuedet::model::{AuxKind, ModelConfig};
use wuedet::optim::AdamHyper;
use wuedet::train::TrainConfig;

pub type KeyValues = BTreeMap<String, String>;

/// Parses `key = value` lines. `#` starts a comment line; blank lines are
/// skipped; a repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", i + 1))?;
        let k = k.trim().replace('-', "_");
        if k.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            bail!("line {}: duplicate key {k}", i + 1);
        }
    }
    Ok(out)
}

pub fn load_key_values(path: &Path) -> Result<KeyValues> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_key_values(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn format_key_values(kv: &KeyValues) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// File values overlaid with flag values.
pub fn merge(file: Option<&Path>, overrides: KeyValues) -> Result<KeyValues> {
    let mut kv = match file {
        Some(p) => load_key_values(p)?,
        None => KeyValues::new(),
    };
    kv.extend(overrides);
    Ok(kv)
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow!("bad list item {p:?}: {e}")))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Reads typed values out of a key-value map, tracking which keys were used.
struct Reader {
    kv: KeyValues,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.kv.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            Some(v) => v.parse().map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}")),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.kv.keys().next() {
            bail!("unknown configuration key {k:?}");
        }
        Ok(())
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {v:?}"),
    }
}

/// Everything `train` needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub corpus: PathBuf,
    pub dev: PathBuf,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub min_freq: u64,
    pub jobs: usize,
    /// Whether an explicit seed list was given.
    pub multi_seed: bool,
    pub train: TrainConfig,
}

impl TrainSettings {
    pub fn from_key_values(kv: KeyValues) -> Result<Self> {
        let mut r = Reader { kv };
        let path = |r: &mut Reader, k: &str| r.take(k).filter(|v| !v.is_empty()).map(PathBuf::from);
        let corpus = path(&mut r, "corpus").ok_or_else(|| anyhow!("no training corpus given (corpus=...)"))?;
        let dev = path(&mut r, "dev").ok_or_else(|| anyhow!("no validation corpus given (dev=...)"))?;
        let test = path(&mut r, "test");
        let embeddings = path(&mut r, "embeddings");
        let out = path(&mut r, "out").unwrap_or_else(|| PathBuf::from("run"));
        let resume = path(&mut r, "resume");

        let dm = ModelConfig::default();
        let aux_kind: AuxKind = r.parse("aux", dm.aux_kind)?;
        let trainable = match r.take("embeddings_trainable") {
            Some(v) => parse_bool("embeddings_trainable", &v)?,
            None => dm.embeddings_trainable,
        };
        let model = ModelConfig {
            word_dim: r.parse("word_dim", dm.word_dim)?,
            pos_dim: r.parse("pos_dim", dm.pos_dim)?,
            hidden: r.parse("hidden", dm.hidden)?,
            aux_kind,
            // Fixed once the data is encoded.
            aux_classes: 0,
            lambda: r.parse("lambda", dm.lambda)?,
            embeddings_trainable: trainable,
        };
        let da = AdamHyper::default();
        let clip_norm = match r.take("clip_norm").as_deref() {
            None | Some("") | Some("none") => None,
            Some(v) => Some(v.parse().map_err(|e| anyhow!("clip_norm: {e}"))?),
        };
        let adam = AdamHyper {
            lr: r.parse("lr", da.lr)?,
            beta1: r.parse("beta1", da.beta1)?,
            beta2: r.parse("beta2", da.beta2)?,
            eps: r.parse("eps", da.eps)?,
            clip_norm,
        };
        let dt = TrainConfig::default();
        let dmet = MetricSet::default();
        let metrics = MetricSet {
            ks: match r.take("hit_k") {
                Some(v) => parse_list(&v).context("hit_k")?,
                None => dmet.ks,
            },
            percents: match r.take("hit_rpct") {
                Some(v) => parse_list(&v).context("hit_rpct")?,
                None => dmet.percents,
            },
        };
        let seed: u64 = r.parse("seed", dt.seed)?;
        let seeds: Vec<u64> = match r.take("seeds") {
            Some(v) => parse_list(&v).context("seeds")?,
            None => Vec::new(),
        };
        let multi_seed = !seeds.is_empty();
        let train = TrainConfig {
            model,
            adam,
            batch_size: r.parse("batch_size", dt.batch_size)?,
            max_epochs: r.parse("max_epochs", dt.max_epochs)?,
            patience: r.parse("patience", dt.patience)?,
            seed,
            seeds: if multi_seed { seeds } else { vec![seed] },
            metrics,
            checkpoint: None,
        };
        let settings = TrainSettings {
            corpus,
            dev,
            test,
            embeddings,
            out,
            resume,
            min_freq: r.parse("min_freq", 1)?,
            jobs: r.parse("jobs", 1)?,
            multi_seed,
            train,
        };
        r.finish()?;
        if settings.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if settings.min_freq == 0 {
            bail!("min_freq must be at least 1");
        }
        if settings.multi_seed && settings.test.is_none() {
            bail!("a seed list needs a test split (test=...) to average over");
        }
        if settings.multi_seed && settings.resume.is_some() {
            bail!("resume works with a single seed only");
        }
        // The class count is only known after encoding; any positive value
        // lets the rest of the config be checked now.
        let mut check = settings.train.clone();
        check.model.aux_classes = 1;
        check.validate()?;
        Ok(settings)
    }

    /// The effective configuration in canonical form. `out` and `jobs` are
    /// left out: they never change results, and omitting them keeps
    /// reports comparable across output locations and thread counts.
    pub fn echo(&self) -> KeyValues {
        let t = &self.train;
        let m = &t.model;
        let mut kv = KeyValues::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("corpus", self.corpus.display().to_string());
        put("dev", self.dev.display().to_string());
        if let Some(p) = &self.test {
            put("test", p.display().to_string());
        }
        if let Some(p) = &self.embeddings {
            put("embeddings", p.display().to_string());
        }
        if let Some(p) = &self.resume {
            put("resume", p.display().to_string());
        }
        put("aux", m.aux_kind.to_string());
        put("lambda", m.lambda.to_string());
        put("word_dim", m.word_dim.to_string());
        put("pos_dim", m.pos_dim.to_string());
        put("hidden", m.hidden.to_string());
        put("embeddings_trainable", m.embeddings_trainable.to_string());
        put("lr", t.adam.lr.to_string());
        put("beta1", t.adam.beta1.to_string());
        put("beta2", t.adam.beta2.to_string());
        put("eps", t.adam.eps.to_string());
        put("clip_norm", t.adam.clip_norm.map_or("none".to_string(), |c| c.to_string()));
        put("batch_size", t.batch_size.to_string());
        put("max_epochs", t.max_epochs.to_string());
        put("patience", t.patience.to_string());
        put("min_freq", self.min_freq.to_string());
        put("hit_k", join(&t.metrics.ks));
        put("hit_rpct", join(&t.metrics.percents));
        put("seed", t.seed.to_string());
        if self.multi_seed {
            put("seeds", join(&t.seeds));
        }
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> KeyValues {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_flat_files() {
        let kv = parse_key_values("# run\nlambda = 0.01\n\nmax-epochs=3\n").unwrap();
        assert_eq!(kv["lambda"], "0.01");
        assert_eq!(kv["max_epochs"], "3");
        assert!(parse_key_values("lambda").is_err());
        assert!(parse_key_values("a=1\na=2").is_err());
        assert!(parse_key_values("=2").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        fs::write(&p, "lambda=0.5\nhidden=7\n").unwrap();
        let merged = merge(Some(&p), kv(&[("lambda", "0.01")])).unwrap();
        assert_eq!(merged["lambda"], "0.01");
        assert_eq!(merged["hidden"], "7");
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let s = TrainSettings::from_key_values(kv(&[("corpus", "a"), ("dev", "b")])).unwrap();
        let t = &s.train;
        assert_eq!((t.model.word_dim, t.model.pos_dim, t.model.hidden), (300, 16, 100));
        assert_eq!(t.batch_size, 32);
        assert_eq!(t.adam.lr, 0.001);
        assert_eq!(t.model.lambda, 0.01);
        assert_eq!(t.model.aux_kind, AuxKind::LogFreq);
        assert_eq!(t.seeds, vec![1]);
        assert!(!s.multi_seed);
    }

    #[test]
    fn echo_round_trips() {
        let s = TrainSettings::from_key_values(kv(&[
            ("corpus", "a.tsv"),
            ("dev", "b.tsv"),
            ("test", "c.tsv"),
            ("aux", "pos"),
            ("seeds", "3,1,2"),
            ("clip_norm", "5"),
            ("hit_k", "1,2,5"),
            ("jobs", "4"),
            ("out", "somewhere"),
        ]))
        .unwrap();
        let echo = s.echo();
        assert!(!echo.contains_key("out") && !echo.contains_key("jobs"));
        assert_eq!(echo["aux"], "pos_tag");
        let again = TrainSettings::from_key_values(echo.clone()).unwrap();
        assert_eq!(again.echo(), echo);
        assert_eq!(again.train, s.train);
    }

    #[test]
    fn rejects_bad_settings() {
        let base = || kv(&[("corpus", "a"), ("dev", "b")]);
        let with = |k: &str, v: &str| {
            let mut m = base();
            m.insert(k.into(), v.into());
            TrainSettings::from_key_values(m)
        };
        assert!(with("hiden", "3").is_err());
        assert!(with("lambda", "-1").is_err());
        assert!(with("max_epochs", "0").is_err());
        assert!(with("aux", "ner").is_err());
        assert!(with("seeds", "1,2").is_err());
        assert!(with("hit_k", "0").is_err());
        assert!(with("embeddings_trainable", "maybe").is_err());
        assert!(TrainSettings::from_key_values(kv(&[("dev", "b")])).is_err());
    }
}
