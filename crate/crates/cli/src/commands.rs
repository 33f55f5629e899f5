//! The four subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};
use wuedet::data::{
    error_counts_by_log_freq, generate_synthetic, load_corpus, load_embeddings, write_corpus, Coverage, Sentence,
    SplitSpec, Vocab, VocabSpec, LOG_FREQ_CLASSES,
};
use wuedet::metrics::{EvalReport, MetricSet};
use wuedet::numerics::Rng;
use wuedet::train::{evaluate, multi_seed, train_from, Checkpoint, RunHistory, TrainData, TrainState};

use crate::config::{format_key_values, KeyValues, TrainSettings};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CONFIG_FILE: &str = "config.txt";

fn read_split(path: &Path, what: &str) -> Result<Vec<Sentence>> {
    load_corpus(path).with_context(|| format!("loading {what} split"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn config_json(kv: &KeyValues) -> Value {
    Value::Object(kv.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
}

fn run_json(seed: u64, history: &RunHistory, test: Option<&EvalReport>, checksum: u64) -> Value {
    json!({
        "seed": seed,
        "selected_epoch": history.selected_epoch,
        "epochs_run": history.epochs.len(),
        "stopped_early": history.stopped_early,
        "params_checksum": checksum,
        "dev": history.selected().map(|e| to_json(&e.dev)),
        "test": test.map(to_json),
    })
}

fn history_lines(seed: u64, history: &RunHistory, out: &mut String) {
    for e in &history.epochs {
        let line = json!({
            "seed": seed,
            "epoch": e.epoch,
            "loss": to_json(&e.loss),
            "dev": to_json(&e.dev),
            "params_checksum": e.params_checksum,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
}

fn report_text(config: &KeyValues, runs: &[Value], averaged: Option<&EvalReport>) -> String {
    let mut s = String::from("# configuration\n");
    s.push_str(&format_key_values(config));
    for r in runs {
        let _ = writeln!(
            s,
            "# seed {}: selected epoch {} of {}{}",
            r["seed"],
            r["selected_epoch"],
            r["epochs_run"],
            if r["stopped_early"] == true { " (early stop)" } else { "" }
        );
        for split in ["dev", "test"] {
            if let Some(m) = r[split].as_object() {
                for (k, v) in m {
                    let _ = writeln!(s, "{split}.{k}={v}");
                }
            }
        }
    }
    if let Some(a) = averaged {
        let _ = writeln!(s, "# test metrics averaged over {} seed(s)", runs.len());
        s.push_str(&a.to_text());
    }
    s
}

/// Trains one seed (with optional resume) or a seed list, and writes the
/// checkpoint(s), `history.jsonl`, `report.json`, `report.txt`,
/// `vocab.tsv` and `config.txt` under `settings.out`. Returns the report.
pub fn cmd_train(settings: &TrainSettings) -> Result<Value> {
    let echo = settings.echo();
    let splits = SplitSpec {
        train: read_split(&settings.corpus, "training")?,
        dev: read_split(&settings.dev, "validation")?,
        test: match &settings.test {
            Some(p) => read_split(p, "test")?,
            None => Vec::new(),
        },
    };
    let mut cfg = settings.train.clone();
    let mut data = TrainData::prepare(&splits, cfg.model.aux_kind, settings.min_freq)?;
    cfg.model.aux_classes = data.encoder.aux_classes();
    let mut coverage: Option<Coverage> = None;
    if let Some(path) = &settings.embeddings {
        let mut rng = Rng::new(cfg.seed);
        let (table, cov) = load_embeddings(
            path,
            &data.encoder.words,
            cfg.model.word_dim,
            &mut rng,
            cfg.model.embeddings_trainable,
        )
        .context("loading embeddings")?;
        eprintln!(
            "embeddings: {} of {} vocabulary entries matched ({:.4})",
            cov.matched,
            cov.vocab_size,
            cov.ratio()
        );
        data.word_table = Some(table);
        coverage = Some(cov);
    }
    let resume = match &settings.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            if ck.encoder != data.encoder {
                bail!("checkpoint {} was trained on a different vocabulary", p.display());
            }
            if ck.config.model != cfg.model {
                bail!("checkpoint {} has a different model configuration", p.display());
            }
            Some(ck.state.ok_or_else(|| anyhow!("checkpoint {} is not resumable", p.display()))?)
        }
        None => None,
    };

    fs::create_dir_all(&settings.out).with_context(|| format!("creating {}", settings.out.display()))?;
    let out = |name: &str| settings.out.join(name);
    write(&out(VOCAB_FILE), data.encoder.words.to_tsv())?;
    write(&out(CONFIG_FILE), format_key_values(&echo))?;
    cfg.checkpoint = Some(out(CHECKPOINT_FILE));

    let mut history = String::new();
    let (runs, averaged) = if settings.multi_seed {
        match multi_seed(&cfg, &data, settings.jobs) {
            Ok(rep) => {
                let runs: Vec<Value> = rep
                    .runs
                    .iter()
                    .map(|r| {
                        history_lines(r.seed, &r.history, &mut history);
                        run_json(r.seed, &r.history, Some(&r.test), r.params_checksum)
                    })
                    .collect();
                (runs, Some(rep.averaged))
            }
            Err(failure) => {
                let runs: Vec<Value> = failure
                    .completed
                    .iter()
                    .map(|r| run_json(r.seed, &r.history, Some(&r.test), r.params_checksum))
                    .collect();
                let partial = json!({
                    "config": config_json(&echo),
                    "failed_seed": failure.seed,
                    "error": failure.source.to_string(),
                    "runs": runs,
                });
                write(&out("report.partial.json"), pretty(&partial))?;
                return Err(anyhow!(failure));
            }
        }
    } else {
        let state = match resume {
            Some(s) => s,
            None => TrainState::new(&cfg, &data)?,
        };
        let seed = cfg.seed;
        let (outcome, _) = train_from(&cfg, &data, state, &mut |st| {
            if let Some(e) = st.history.epochs.last() {
                eprintln!(
                    "seed {seed} epoch {}: loss {:.6} dev accuracy {:.4}",
                    e.epoch, e.loss.total, e.dev.accuracy
                );
            }
            Ok(())
        })?;
        history_lines(seed, &outcome.history, &mut history);
        let run = run_json(seed, &outcome.history, outcome.test.as_ref(), outcome.params.checksum());
        (vec![run], outcome.test)
    };

    let mut report = json!({ "config": config_json(&echo) });
    if let Some(c) = coverage {
        report["embedding_coverage"] = json!({
            "matched": c.matched,
            "vocab_size": c.vocab_size,
            "ratio": c.ratio(),
        });
    }
    report["runs"] = Value::Array(runs.clone());
    report["averaged"] = averaged.as_ref().map_or(Value::Null, to_json);
    write(&out(HISTORY_FILE), history)?;
    write(&out(REPORT_TEXT), report_text(&echo, &runs, averaged.as_ref()))?;
    write(&out(REPORT_JSON), pretty(&report))?;
    Ok(report)
}

#[derive(Clone, Debug, Default)]
pub struct EvalSettings {
    pub checkpoint: PathBuf,
    pub test: PathBuf,
    pub hit_k: Option<Vec<usize>>,
    pub hit_rpct: Option<Vec<f64>>,
    /// Directory for `eval.json` and `eval.txt`.
    pub out: Option<PathBuf>,
}

/// Scores a corpus with a checkpoint's selected parameters.
pub fn cmd_eval(s: &EvalSettings) -> Result<EvalReport> {
    let ck = Checkpoint::load(&s.checkpoint).with_context(|| format!("loading checkpoint {}", s.checkpoint.display()))?;
    let sentences = read_split(&s.test, "test")?;
    if sentences.is_empty() {
        bail!("test split {} is empty", s.test.display());
    }
    let encoded = ck
        .encoder
        .encode_all(&sentences)
        .context("test split does not match the checkpoint's vocabulary")?;
    let metrics = MetricSet {
        ks: s.hit_k.clone().unwrap_or_else(|| ck.config.metrics.ks.clone()),
        percents: s.hit_rpct.clone().unwrap_or_else(|| ck.config.metrics.percents.clone()),
    };
    let report = evaluate(&ck.params, &ck.config.model, &encoded, &metrics)?;
    if let Some(dir) = &s.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut config = KeyValues::new();
        config.insert("checkpoint".into(), s.checkpoint.display().to_string());
        config.insert("test".into(), s.test.display().to_string());
        config.insert("hit_k".into(), join(&metrics.ks));
        config.insert("hit_rpct".into(), join(&metrics.percents));
        let doc = json!({
            "config": config_json(&config),
            "model": to_json(&ck.config.model),
            "report": to_json(&report),
        });
        write(&dir.join("eval.json"), pretty(&doc))?;
        let text = format!("# configuration\n{}{}", format_key_values(&config), report.to_text());
        write(&dir.join("eval.txt"), text)?;
    }
    Ok(report)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Error counts per log-frequency label of the erroneous token, with the
/// vocabulary counted over the same corpus.
pub fn freq_counts(corpus: &Path, min_freq: u64) -> Result<[u64; LOG_FREQ_CLASSES]> {
    let sentences = read_split(corpus, "training")?;
    if sentences.is_empty() {
        bail!("corpus {} is empty", corpus.display());
    }
    let vocab = Vocab::build(&sentences, min_freq)?;
    Ok(error_counts_by_log_freq(&sentences, &vocab))
}

/// `label<TAB>count` rows for labels 0..9, then an ASCII bar chart.
pub fn format_freq_report(corpus: &Path, counts: &[u64]) -> String {
    const WIDTH: u64 = 50;
    let mut s = format!("# corpus={}\nlabel\tcount\n", corpus.display());
    for (label, c) in counts.iter().enumerate() {
        let _ = writeln!(s, "{label}\t{c}");
    }
    let _ = writeln!(s, "total\t{}", counts.iter().sum::<u64>());
    s.push('\n');
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    for (label, &c) in counts.iter().enumerate() {
        let mut n = (c * WIDTH + max / 2) / max;
        if c > 0 {
            n = n.max(1);
        }
        let _ = writeln!(s, "{label} | {} {c}", "#".repeat(n as usize));
    }
    s
}

pub fn cmd_freq_report(corpus: &Path, min_freq: u64, out: Option<&Path>) -> Result<String> {
    let counts = freq_counts(corpus, min_freq)?;
    let text = format_freq_report(corpus, &counts);
    if let Some(p) = out {
        write(p, &text)?;
    }
    Ok(text)
}

#[derive(Clone, Debug)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub tags: Vec<String>,
    pub types_per_tag: usize,
    pub exponent: f64,
    pub confusable_from: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub rarity_bias: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            out: PathBuf::from("synth"),
            seed: 1,
            n_train: 8408,
            n_dev: 1051,
            n_test: 1051,
            tags: ["n", "v", "a", "d"].map(String::from).to_vec(),
            types_per_tag: 20_000,
            exponent: 1.0,
            confusable_from: 2_000,
            min_len: 5,
            max_len: 12,
            rarity_bias: 2.0,
        }
    }
}

impl SynthSettings {
    pub fn echo(&self) -> KeyValues {
        let pairs = [
            ("seed", self.seed.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_dev", self.n_dev.to_string()),
            ("n_test", self.n_test.to_string()),
            ("tags", self.tags.join(",")),
            ("types_per_tag", self.types_per_tag.to_string()),
            ("exponent", self.exponent.to_string()),
            ("confusable_from", self.confusable_from.to_string()),
            ("min_len", self.min_len.to_string()),
            ("max_len", self.max_len.to_string()),
            ("rarity_bias", self.rarity_bias.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn spec(&self) -> VocabSpec {
        let tags: Vec<&str> = self.tags.iter().map(String::as_str).collect();
        let mut spec = VocabSpec::zipf(&tags, self.types_per_tag, self.exponent, self.confusable_from);
        spec.min_len = self.min_len;
        spec.max_len = self.max_len;
        spec.rarity_bias = self.rarity_bias;
        spec
    }
}

/// Writes `train.tsv`, `dev.tsv`, `test.tsv` and `synth.txt` under `out`.
pub fn cmd_synth(s: &SynthSettings) -> Result<()> {
    let spec = s.spec();
    spec.validate().context("invalid generator settings")?;
    let mut master = Rng::new(s.seed);
    let mut gen = |n: usize| generate_synthetic(&mut master.split(), n, &spec);
    let train = gen(s.n_train)?;
    let dev = gen(s.n_dev)?;
    let test = gen(s.n_test)?;
    fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    for (name, split) in [("train.tsv", &train), ("dev.tsv", &dev), ("test.tsv", &test)] {
        let p = s.out.join(name);
        write_corpus(&p, split).with_context(|| format!("writing {}", p.display()))?;
    }
    write(&s.out.join("synth.txt"), format_key_values(&s.echo()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freq_table_shape() {
        let counts = [5, 3, 0, 0, 0, 0, 0, 0, 0, 1];
        let text = format_freq_report(Path::new("c.tsv"), &counts);
        let rows: Vec<&str> = text.lines().skip(2).take(10).collect();
        assert_eq!(rows[0], "0\t5");
        assert_eq!(rows[9], "9\t1");
        assert!(text.contains("total\t9"));
        assert!(text.contains("0 | ################################################## 5"));
        assert!(text.contains("9 | ########## 1"));
        assert!(text.contains("2 |  0"));
    }

    #[test]
    fn synth_defaults_mirror_reference_split_sizes() {
        let s = SynthSettings::default();
        assert_eq!((s.n_train, s.n_dev, s.n_test), (8408, 1051, 1051));
        assert!(s.spec().validate().is_ok());
    }
}
