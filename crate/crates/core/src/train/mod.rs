//! Training loop, validation-based model selection and multi-seed runs.

mod checkpoint;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::data::{make_batches_encoded, EncodedSentence, Encoder, SplitSpec, TagVocab, Vocab};
use crate::error::{Error, Result};
use crate::layers::EmbeddingTable;
use crate::metrics::{ranked_sentence, EvalReport, MetricSet};
use crate::model::{model_backward, model_forward, model_loss, predict_scores, AuxKind, LossParts, ModelConfig, ModelParams};
use crate::numerics::Rng;
use crate::optim::{adam_init, adam_step, AdamHyper, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamHyper,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Seeds for `multi_seed`.
    pub seeds: Vec<u64>,
    pub metrics: MetricSet,
    /// When set, a resumable checkpoint is written here after every epoch.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            adam: AdamHyper::default(),
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 1,
            seeds: (1..=10).collect(),
            metrics: MetricSet::default(),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.adam.validate()?;
        self.metrics.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Argument("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Argument("patience must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Argument("seed list is empty".into()));
        }
        Ok(())
    }

    /// Copy of this config for one seed of a multi-seed run.
    pub fn for_seed(&self, seed: u64) -> TrainConfig {
        let mut c = self.clone();
        c.seed = seed;
        c.checkpoint = self.checkpoint.as_deref().map(|p| seed_path(p, seed));
        c
    }
}

/// `run.ckpt` → `run.seed7.ckpt`.
pub fn seed_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    path.with_file_name(name)
}

/// Encoded splits plus everything needed to build a model for them.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub encoder: Encoder,
    pub train: Vec<EncodedSentence>,
    pub dev: Vec<EncodedSentence>,
    pub test: Vec<EncodedSentence>,
    /// Pre-trained word vectors aligned with `encoder.words`.
    pub word_table: Option<EmbeddingTable>,
}

impl TrainData {
    /// Word vocabulary from the training split; tag inventory from all splits.
    pub fn prepare(splits: &SplitSpec, aux_kind: AuxKind, min_freq: u64) -> Result<Self> {
        let words = Vocab::build(&splits.train, min_freq)?;
        let tags = TagVocab::build(splits.train.iter().chain(&splits.dev).chain(&splits.test));
        let encoder = Encoder::new(words, tags, aux_kind);
        Ok(TrainData {
            train: encoder.encode_all(&splits.train)?,
            dev: encoder.encode_all(&splits.dev)?,
            test: encoder.encode_all(&splits.test)?,
            encoder,
            word_table: None,
        })
    }

    /// Checks that `cfg` agrees with the encoder and the splits are usable.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if cfg.aux_kind != self.encoder.aux_kind {
            return Err(Error::Contract(format!(
                "model aux_kind {} but data encoded for {}",
                cfg.aux_kind, self.encoder.aux_kind
            )));
        }
        if cfg.has_aux() && cfg.aux_classes != self.encoder.aux_classes() {
            return Err(Error::Contract(format!(
                "model has {} auxiliary classes, data has {}",
                cfg.aux_classes,
                self.encoder.aux_classes()
            )));
        }
        if self.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        if self.dev.is_empty() {
            return Err(Error::Data("validation split is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training loss averaged over sentences.
    pub loss: LossParts,
    pub dev: EvalReport,
    /// Digest of the parameters at the end of this epoch.
    pub params_checksum: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 before the first epoch.
    pub selected_epoch: usize,
    pub stopped_early: bool,
}

impl RunHistory {
    pub fn selected(&self) -> Option<&EpochRecord> {
        self.selected_epoch.checked_sub(1).and_then(|i| self.epochs.get(i))
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub params: ModelParams,
    pub adam: AdamState,
    pub shuffle_rng: Rng,
    pub best_params: ModelParams,
    pub best_accuracy: f64,
    /// Epochs since the last improvement.
    pub stale_epochs: usize,
    pub history: RunHistory,
}

impl TrainState {
    pub fn new(config: &TrainConfig, data: &TrainData) -> Result<Self> {
        config.validate()?;
        data.check(&config.model)?;
        let mut master = Rng::new(config.seed);
        let mut init_rng = master.split();
        let shuffle_rng = master.split();
        let params = ModelParams::init(
            &config.model,
            data.encoder.words.len(),
            data.encoder.tags.len(),
            data.word_table.clone(),
            &mut init_rng,
        )?;
        Ok(TrainState {
            epoch: 0,
            adam: adam_init(&params),
            best_params: params.clone(),
            params,
            shuffle_rng,
            best_accuracy: f64::NEG_INFINITY,
            stale_epochs: 0,
            history: RunHistory::default(),
        })
    }

    pub fn finished(&self, config: &TrainConfig) -> bool {
        self.epoch >= config.max_epochs || self.history.stopped_early
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub params: ModelParams,
    pub history: RunHistory,
    /// Test report for `params`, when a test split was given.
    pub test: Option<EvalReport>,
}

/// One epoch of shuffled mini-batch Adam followed by validation.
pub fn run_epoch(config: &TrainConfig, data: &TrainData, state: &mut TrainState) -> Result<()> {
    let epoch = state.epoch + 1;
    let lambda = config.model.effective_lambda();
    let batches = make_batches_encoded(&data.train, config.batch_size, Some(&mut state.shuffle_rng))?;
    let mut sums = LossParts::default();
    for (i, batch) in batches.iter().enumerate() {
        let cache = model_forward(&state.params, &config.model, batch)?;
        let loss = model_loss(&cache, batch, lambda)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: i + 1,
                value: loss.total,
            });
        }
        let grads = model_backward(&state.params, &config.model, &cache, batch, lambda)?;
        adam_step(&mut state.params, &grads, &mut state.adam, &config.adam)?;
        let n = batch.size() as f64;
        sums.total += loss.total * n;
        sums.error += loss.error * n;
        sums.aux += loss.aux * n;
    }
    let n = data.train.len() as f64;
    let dev = evaluate(&state.params, &config.model, &data.dev, &config.metrics)?;
    if dev.accuracy > state.best_accuracy {
        state.best_accuracy = dev.accuracy;
        state.best_params = state.params.clone();
        state.history.selected_epoch = epoch;
        state.stale_epochs = 0;
    } else {
        state.stale_epochs += 1;
    }
    state.history.epochs.push(EpochRecord {
        epoch,
        loss: LossParts {
            total: sums.total / n,
            error: sums.error / n,
            aux: sums.aux / n,
        },
        dev,
        params_checksum: state.params.checksum(),
    });
    state.epoch = epoch;
    if state.stale_epochs >= config.patience {
        state.history.stopped_early = true;
    }
    Ok(())
}

/// Runs epochs from `state` until the budget or patience runs out.
/// `on_epoch` sees the state after every epoch.
pub fn train_from(
    config: &TrainConfig,
    data: &TrainData,
    mut state: TrainState,
    on_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<(TrainOutcome, TrainState)> {
    config.validate()?;
    data.check(&config.model)?;
    state.params.check_config(&config.model)?;
    while !state.finished(config) {
        run_epoch(config, data, &mut state)?;
        if let Some(path) = &config.checkpoint {
            Checkpoint::from_state(config, &data.encoder, &state).save(path)?;
        }
        on_epoch(&state)?;
    }
    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&state.best_params, &config.model, &data.test, &config.metrics)?)
    };
    let outcome = TrainOutcome {
        params: state.best_params.clone(),
        history: state.history.clone(),
        test,
    };
    Ok((outcome, state))
}

pub fn train_one(config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    let state = TrainState::new(config, data)?;
    Ok(train_from(config, data, state, &mut |_| Ok(()))?.0)
}

/// Scores every sentence, ranks its gold position and aggregates.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    sentences: &[EncodedSentence],
    metrics: &MetricSet,
) -> Result<EvalReport> {
    params.check_config(cfg)?;
    let words = params.word_table.vocab_size();
    let tags = params.pos_table.vocab_size();
    for s in sentences {
        let bad_word = s.word_ids.iter().any(|&w| w >= words);
        let bad_tag = s.pos_ids.iter().any(|&t| t >= tags);
        if bad_word || bad_tag {
            return Err(Error::Contract(format!(
                "sentence {} uses ids outside the model vocabulary ({words} words, {tags} tags)",
                s.source
            )));
        }
    }
    let ranked = sentences
        .par_iter()
        .map(|s| {
            let gold = s
                .gold
                .ok_or_else(|| Error::Data(format!("sentence {} has no gold error position", s.source)))?;
            ranked_sentence(&predict_scores(params, cfg, s)?, gold)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_ranked(&ranked, metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub selected_epoch: usize,
    pub epochs_run: usize,
    pub dev: EvalReport,
    pub test: EvalReport,
    pub params_checksum: u64,
    #[serde(skip)]
    pub history: RunHistory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub averaged: EvalReport,
    /// Ordered by seed.
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, thiserror::Error)]
#[error("seed {seed} failed: {source}")]
pub struct MultiSeedFailure {
    pub seed: u64,
    #[source]
    pub source: Error,
    /// Runs that finished, ordered by seed.
    pub completed: Vec<SeedRun>,
}

fn seed_run(config: &TrainConfig, data: &TrainData, seed: u64) -> Result<SeedRun> {
    let cfg = config.for_seed(seed);
    let out = train_one(&cfg, data)?;
    let selected = out
        .history
        .selected()
        .ok_or_else(|| Error::Contract("run finished without a selected epoch".into()))?;
    Ok(SeedRun {
        seed,
        selected_epoch: out.history.selected_epoch,
        epochs_run: out.history.epochs.len(),
        dev: selected.dev.clone(),
        test: out
            .test
            .ok_or_else(|| Error::Data("multi-seed runs need a non-empty test split".into()))?,
        params_checksum: out.params.checksum(),
        history: out.history,
    })
}

/// Trains once per seed and averages the test reports. Up to `jobs` seeds
/// run concurrently; each has its own Rng, parameters and optimizer.
pub fn multi_seed(
    config: &TrainConfig,
    data: &TrainData,
    jobs: usize,
) -> std::result::Result<MultiSeedReport, MultiSeedFailure> {
    let fail = |seed, source| MultiSeedFailure {
        seed,
        source,
        completed: Vec::new(),
    };
    let first = config.seeds.first().copied().unwrap_or(config.seed);
    config.validate().map_err(|e| fail(first, e))?;
    if data.test.is_empty() {
        return Err(fail(first, Error::Data("multi-seed runs need a non-empty test split".into())));
    }
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();

    let results: Vec<(u64, Result<SeedRun>)> = if jobs <= 1 {
        seeds.iter().map(|&s| (s, seed_run(config, data, s))).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| fail(first, Error::Argument(format!("thread pool: {e}"))))?;
        pool.install(|| seeds.par_iter().map(|&s| (s, seed_run(config, data, s))).collect())
    };

    let mut completed = Vec::new();
    let mut failure = None;
    for (seed, r) in results {
        match r {
            Ok(run) => completed.push(run),
            Err(e) if failure.is_none() => failure = Some((seed, e)),
            Err(_) => {}
        }
    }
    if let Some((seed, source)) = failure {
        return Err(MultiSeedFailure {
            seed,
            source,
            completed,
        });
    }
    let tests: Vec<EvalReport> = completed.iter().map(|r| r.test.clone()).collect();
    let averaged = EvalReport::mean(&tests).map_err(|e| fail(first, e))?;
    Ok(MultiSeedReport {
        averaged,
        runs: completed,
    })
}
