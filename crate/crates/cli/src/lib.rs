//! Command-line driver: `train`, `eval`, `freq-report` and `synth`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{EvalSettings, SynthSettings};
use config::{parse_list, KeyValues, TrainSettings};

#[derive(Debug, Parser)]
#[command(name = "wuedet", version, about = "Word usage error detection with a multi-task Bi-LSTM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one seed or a seed list and write checkpoints and reports.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Count errors per log-frequency label of the misused token.
    FreqReport(FreqArgs),
    /// Generate a synthetic train/dev/test corpus.
    Synth(SynthArgs),
}

/// Every option can also be given in the `--config` file as `key=value`
/// (dashes or underscores); flags win.
#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training split.
    #[arg(long)]
    pub corpus: Option<String>,
    #[arg(long)]
    pub dev: Option<String>,
    #[arg(long)]
    pub test: Option<String>,
    /// word2vec text-format vectors.
    #[arg(long)]
    pub embeddings: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Continue from a resumable checkpoint (single seed only).
    #[arg(long)]
    pub resume: Option<String>,
    /// Auxiliary task: none, pos_tag or log_freq.
    #[arg(long)]
    pub aux: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub word_dim: Option<String>,
    #[arg(long)]
    pub pos_dim: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    /// true or false.
    #[arg(long)]
    pub embeddings_trainable: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    /// Global gradient-norm clip, or "none".
    #[arg(long)]
    pub clip_norm: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Comma-separated seeds; results are averaged over them.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Seeds trained concurrently.
    #[arg(long)]
    pub jobs: Option<String>,
    #[arg(long)]
    pub min_freq: Option<String>,
    #[arg(long)]
    pub hit_k: Option<String>,
    #[arg(long)]
    pub hit_rpct: Option<String>,
}

impl TrainArgs {
    pub fn overrides(&self) -> KeyValues {
        let fields = [
            ("corpus", &self.corpus),
            ("dev", &self.dev),
            ("test", &self.test),
            ("embeddings", &self.embeddings),
            ("out", &self.out),
            ("resume", &self.resume),
            ("aux", &self.aux),
            ("lambda", &self.lambda),
            ("word_dim", &self.word_dim),
            ("pos_dim", &self.pos_dim),
            ("hidden", &self.hidden),
            ("embeddings_trainable", &self.embeddings_trainable),
            ("lr", &self.lr),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("eps", &self.eps),
            ("clip_norm", &self.clip_norm),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("jobs", &self.jobs),
            ("min_freq", &self.min_freq),
            ("hit_k", &self.hit_k),
            ("hit_rpct", &self.hit_rpct),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    pub fn settings(&self) -> Result<TrainSettings> {
        let kv = config::merge(self.config.as_deref(), self.overrides())?;
        TrainSettings::from_key_values(kv)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus to score.
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated k values for Hit@k.
    #[arg(long)]
    pub hit_k: Option<String>,
    /// Comma-separated percentages for Hit@r%.
    #[arg(long)]
    pub hit_rpct: Option<String>,
    /// Also write eval.json and eval.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FreqArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_freq: u64,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Training sentences.
    #[arg(long = "n", alias = "n-train", default_value_t = 8408)]
    pub n_train: usize,
    #[arg(long, default_value_t = 1051)]
    pub n_dev: usize,
    #[arg(long, default_value_t = 1051)]
    pub n_test: usize,
    #[arg(long, default_value = "n,v,a,d")]
    pub tags: String,
    #[arg(long, default_value_t = 20_000)]
    pub types_per_tag: usize,
    /// Zipf exponent of the within-tag word distribution.
    #[arg(long, default_value_t = 1.0)]
    pub exponent: f64,
    /// 0-based frequency rank from which words have a confusable partner.
    #[arg(long, default_value_t = 2_000)]
    pub confusable_from: usize,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    /// Preference for rare words as error sites (weight p^-bias).
    #[arg(long, default_value_t = 2.0)]
    pub rarity_bias: f64,
}

impl SynthArgs {
    pub fn settings(&self) -> Result<SynthSettings> {
        Ok(SynthSettings {
            out: self.out.clone(),
            seed: self.seed,
            n_train: self.n_train,
            n_dev: self.n_dev,
            n_test: self.n_test,
            tags: parse_list(&self.tags)?,
            types_per_tag: self.types_per_tag,
            exponent: self.exponent,
            confusable_from: self.confusable_from,
            min_len: self.min_len,
            max_len: self.max_len,
            rarity_bias: self.rarity_bias,
        })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let settings = args.settings()?;
            commands::cmd_train(&settings)?;
            eprintln!("wrote {}", settings.out.join(commands::REPORT_JSON).display());
        }
        Command::Eval(args) => {
            let settings = EvalSettings {
                checkpoint: args.checkpoint,
                test: args.test,
                hit_k: args.hit_k.as_deref().map(parse_list).transpose()?,
                hit_rpct: args.hit_rpct.as_deref().map(parse_list).transpose()?,
                out: args.out,
            };
            print!("{}", commands::cmd_eval(&settings)?.to_text());
        }
        Command::FreqReport(args) => {
            print!("{}", commands::cmd_freq_report(&args.corpus, args.min_freq, args.out.as_deref())?);
        }
        Command::Synth(args) => commands::cmd_synth(&args.settings()?)?,
    }
    Ok(())
}
