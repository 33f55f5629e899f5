//! Parallel public/private Bi-LSTM with an error-detection head and an
//! auxiliary tagging head.
//!
//! ```text
//!   word emb ───────────────► public Bi-LSTM ──► h_pu ──┬──► aux head (softmax)
//!       │                                               │
//!       └─► [word ; pos] ───► private Bi-LSTM ─► h_pr ──┴─[h_pu ; h_pr]──► error head (sigmoid)
//! ```
//!
//! Sentences in a batch are processed at their true length, so padding has
//! no effect on any output, loss or gradient.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checksum::Fnv;
use crate::data::{Batch, EncodedSentence};
use crate::error::{Error, Result};
use crate::layers::{
    bilstm_backward_into, bilstm_forward, embedding_backward_into, linear_backward_into,
    linear_forward, BiLstmCache, EmbeddingTable, LinearParams, LstmCellParams,
};
use crate::numerics::{sigmoid_scalar, softmax_row, Matrix, Rng};
use crate::optim::ParamSet;

/// Floor applied to probabilities before taking logs.
pub const LOG_CLIP: f64 = 1e-12;

/// Sentences per gradient accumulator. Fixed so the floating-point summation
/// order never depends on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    None,
    PosTag,
    LogFreq,
}

impl fmt::Display for AuxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxKind::None => "none",
            AuxKind::PosTag => "pos_tag",
            AuxKind::LogFreq => "log_freq",
        })
    }
}

impl FromStr for AuxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(AuxKind::None),
            "pos_tag" | "pos" => Ok(AuxKind::PosTag),
            "log_freq" | "logfreq" => Ok(AuxKind::LogFreq),
            other => Err(Error::Argument(format!(
                "unknown auxiliary task {other:?} (expected none, pos_tag or log_freq)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub hidden: usize,
    pub aux_kind: AuxKind,
    pub aux_classes: usize,
    pub lambda: f64,
    pub embeddings_trainable: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 300,
            pos_dim: 16,
            hidden: 100,
            aux_kind: AuxKind::LogFreq,
            aux_classes: crate::data::LOG_FREQ_CLASSES,
            lambda: 0.01,
            embeddings_trainable: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.pos_dim == 0 || self.hidden == 0 {
            return Err(Error::Argument("dimensions must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Argument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.aux_kind != AuxKind::None && self.aux_classes == 0 {
            return Err(Error::Argument("auxiliary head needs at least one class".into()));
        }
        Ok(())
    }

    pub fn has_aux(&self) -> bool {
        self.aux_kind != AuxKind::None
    }

    /// Weight actually applied to the auxiliary loss.
    pub fn effective_lambda(&self) -> f64 {
        if self.has_aux() {
            self.lambda
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub word_table: EmbeddingTable,
    pub pos_table: EmbeddingTable,
    pub public_fwd: LstmCellParams,
    pub public_bwd: LstmCellParams,
    pub private_fwd: LstmCellParams,
    pub private_bwd: LstmCellParams,
    pub error_head: LinearParams,
    pub aux_head: Option<LinearParams>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig, word_vocab: usize, pos_vocab: usize) -> Self {
        let h = cfg.hidden;
        ModelParams {
            word_table: EmbeddingTable::new(
                Matrix::zeros(word_vocab, cfg.word_dim),
                cfg.embeddings_trainable,
            ),
            pos_table: EmbeddingTable::new(Matrix::zeros(pos_vocab, cfg.pos_dim), true),
            public_fwd: LstmCellParams::zeros(cfg.word_dim, h),
            public_bwd: LstmCellParams::zeros(cfg.word_dim, h),
            private_fwd: LstmCellParams::zeros(cfg.word_dim + cfg.pos_dim, h),
            private_bwd: LstmCellParams::zeros(cfg.word_dim + cfg.pos_dim, h),
            error_head: LinearParams::zeros(4 * h, 1),
            aux_head: cfg
                .has_aux()
                .then(|| LinearParams::zeros(2 * h, cfg.aux_classes)),
        }
    }

    /// Random initialization. `word_table` replaces the random word table
    /// when pre-trained vectors were loaded.
    pub fn init(
        cfg: &ModelConfig,
        word_vocab: usize,
        pos_vocab: usize,
        word_table: Option<EmbeddingTable>,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let private_in = cfg.word_dim + cfg.pos_dim;
        let random_words = EmbeddingTable::init(word_vocab, cfg.word_dim, rng, cfg.embeddings_trainable)?;
        let word_table = match word_table {
            Some(mut t) => {
                if t.vectors.shape() != (word_vocab, cfg.word_dim) {
                    return Err(Error::Shape {
                        op: "word table",
                        left: (word_vocab, cfg.word_dim),
                        right: t.vectors.shape(),
                    });
                }
                t.trainable = cfg.embeddings_trainable;
                t
            }
            None => random_words,
        };
        let p = ModelParams {
            word_table,
            pos_table: EmbeddingTable::init(pos_vocab, cfg.pos_dim, rng, true)?,
            public_fwd: LstmCellParams::init(cfg.word_dim, h, rng)?,
            public_bwd: LstmCellParams::init(cfg.word_dim, h, rng)?,
            private_fwd: LstmCellParams::init(private_in, h, rng)?,
            private_bwd: LstmCellParams::init(private_in, h, rng)?,
            error_head: LinearParams::init(4 * h, 1, rng)?,
            aux_head: if cfg.has_aux() {
                Some(LinearParams::init(2 * h, cfg.aux_classes, rng)?)
            } else {
                None
            },
        };
        p.check_config(cfg)?;
        Ok(p)
    }

    /// Verifies that every tensor has the shape `cfg` implies.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = ModelParams::zeros(cfg, self.word_table.vocab_size(), self.pos_table.vocab_size());
        if self.aux_head.is_some() != cfg.has_aux() {
            return Err(Error::Contract(format!(
                "auxiliary head presence does not match aux_kind {}",
                cfg.aux_kind
            )));
        }
        for ((name, a), b) in self.named_tensors().into_iter().zip(expect.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Contract(format!(
                    "{name} has shape {:?}, configuration implies {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let names = tensor_names(self.aux_head.is_some());
        names.into_iter().zip(self.tensors()).collect()
    }

    /// Order-sensitive digest of every parameter value.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for t in self.tensors() {
            h.write_u64(t.rows() as u64);
            h.write_u64(t.cols() as u64);
            h.write_f64s(t.data());
        }
        h.finish()
    }
}

fn tensor_names(with_aux: bool) -> Vec<String> {
    let mut names = vec!["word_table".to_string(), "pos_table".to_string()];
    for cell in ["public_fwd", "public_bwd", "private_fwd", "private_bwd"] {
        for t in LstmCellParams::TENSOR_NAMES {
            names.push(format!("{cell}.{t}"));
        }
    }
    names.push("error_head.w".into());
    names.push("error_head.b".into());
    if with_aux {
        names.push("aux_head.w".into());
        names.push("aux_head.b".into());
    }
    names
}

impl ParamSet for ModelParams {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.word_table.vectors, &self.pos_table.vectors];
        for cell in [&self.public_fwd, &self.public_bwd, &self.private_fwd, &self.private_bwd] {
            v.extend(cell.tensors());
        }
        v.push(&self.error_head.w);
        v.push(&self.error_head.b);
        if let Some(a) = &self.aux_head {
            v.push(&a.w);
            v.push(&a.b);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.word_table.vectors, &mut self.pos_table.vectors];
        for cell in [
            &mut self.public_fwd,
            &mut self.public_bwd,
            &mut self.private_fwd,
            &mut self.private_bwd,
        ] {
            v.extend(cell.tensors_mut());
        }
        v.push(&mut self.error_head.w);
        v.push(&mut self.error_head.b);
        if let Some(a) = &mut self.aux_head {
            v.push(&mut a.w);
            v.push(&mut a.b);
        }
        v
    }
}

/// Gradient of the total loss, one tensor per entry of [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub word_table: Matrix,
    pub pos_table: Matrix,
    pub public_fwd: LstmCellParams,
    pub public_bwd: LstmCellParams,
    pub private_fwd: LstmCellParams,
    pub private_bwd: LstmCellParams,
    pub error_head: LinearParams,
    pub aux_head: Option<LinearParams>,
}

impl ModelGrads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        ModelGrads {
            word_table: Matrix::zeros_like(&p.word_table.vectors),
            pos_table: Matrix::zeros_like(&p.pos_table.vectors),
            public_fwd: p.public_fwd.zeros_like(),
            public_bwd: p.public_bwd.zeros_like(),
            private_fwd: p.private_fwd.zeros_like(),
            private_bwd: p.private_bwd.zeros_like(),
            error_head: p.error_head.zeros_like(),
            aux_head: p.aux_head.as_ref().map(LinearParams::zeros_like),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        tensor_names(self.aux_head.is_some())
            .into_iter()
            .zip(self.tensors())
            .collect()
    }

    fn add_assign(&mut self, other: &ModelGrads) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

impl ParamSet for ModelGrads {
    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.word_table, &self.pos_table];
        for cell in [&self.public_fwd, &self.public_bwd, &self.private_fwd, &self.private_bwd] {
            v.extend(cell.tensors());
        }
        v.push(&self.error_head.w);
        v.push(&self.error_head.b);
        if let Some(a) = &self.aux_head {
            v.push(&a.w);
            v.push(&a.b);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.word_table, &mut self.pos_table];
        for cell in [
            &mut self.public_fwd,
            &mut self.public_bwd,
            &mut self.private_fwd,
            &mut self.private_bwd,
        ] {
            v.extend(cell.tensors_mut());
        }
        v.push(&mut self.error_head.w);
        v.push(&mut self.error_head.b);
        if let Some(a) = &mut self.aux_head {
            v.push(&mut a.w);
            v.push(&mut a.b);
        }
        v
    }
}

/// Per-sentence forward state.
#[derive(Clone, Debug)]
pub struct SentenceCache {
    pub word_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub public_inputs: Vec<Matrix>,
    pub private_inputs: Vec<Matrix>,
    pub public: BiLstmCache,
    pub private: BiLstmCache,
    /// Public Bi-LSTM output `h_pu` per position.
    pub h_public: Vec<Matrix>,
    /// Private Bi-LSTM output `h_pr` per position.
    pub h_private: Vec<Matrix>,
    /// `[h_pu ; h_pr]` per position.
    pub h_joint: Vec<Matrix>,
    /// Error probability `ô_t` per position.
    pub error_probs: Vec<f64>,
    /// Auxiliary distribution `m̂_t` per position (`classes x 1`).
    pub aux_probs: Option<Vec<Matrix>>,
}

impl SentenceCache {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub sentences: Vec<SentenceCache>,
    params_checksum: u64,
    batch_fingerprint: u64,
}

/// Loss components of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub error: f64,
    pub aux: f64,
}

fn sentence_forward(
    p: &ModelParams,
    word_ids: &[usize],
    pos_ids: &[usize],
) -> Result<SentenceCache> {
    if word_ids.len() != pos_ids.len() {
        return Err(Error::Data("word and POS id sequences differ in length".into()));
    }
    let words = p.word_table.lookup(word_ids)?;
    let tags = p.pos_table.lookup(pos_ids)?;
    let private_inputs: Vec<Matrix> = words
        .iter()
        .zip(&tags)
        .map(|(w, t)| Matrix::vcat(&[w, t]))
        .collect::<Result<_>>()?;
    let (h_public, public) = bilstm_forward(&p.public_fwd, &p.public_bwd, &words)?;
    let (h_private, private) = bilstm_forward(&p.private_fwd, &p.private_bwd, &private_inputs)?;
    let h_joint: Vec<Matrix> = h_public
        .iter()
        .zip(&h_private)
        .map(|(a, b)| Matrix::vcat(&[a, b]))
        .collect::<Result<_>>()?;
    let error_probs = h_joint
        .iter()
        .map(|h| Ok(sigmoid_scalar(linear_forward(&p.error_head, h)?.data()[0])))
        .collect::<Result<Vec<f64>>>()?;
    let aux_probs = match &p.aux_head {
        Some(head) => Some(
            h_public
                .iter()
                .map(|h| {
                    let logits = linear_forward(head, h)?;
                    let row = Matrix::from_vec(1, logits.len(), logits.into_data())?;
                    Ok(Matrix::column(softmax_row(&row).into_data()))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(SentenceCache {
        word_ids: word_ids.to_vec(),
        pos_ids: pos_ids.to_vec(),
        public_inputs: words,
        private_inputs,
        public,
        private,
        h_public,
        h_private,
        h_joint,
        error_probs,
        aux_probs,
    })
}

pub fn model_forward(p: &ModelParams, cfg: &ModelConfig, batch: &Batch) -> Result<ForwardCache> {
    p.check_config(cfg)?;
    let sentences = (0..batch.size())
        .into_par_iter()
        .map(|r| {
            let n = batch.lengths[r];
            sentence_forward(p, &batch.word_ids[r][..n], &batch.pos_ids[r][..n])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardCache {
        sentences,
        params_checksum: p.checksum(),
        batch_fingerprint: batch.fingerprint(),
    })
}

/// `-ln(max(p, LOG_CLIP))`, but NaN stays NaN (`f64::max` would drop it).
fn clipped_nll(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        -p.max(LOG_CLIP).ln()
    }
}

fn bce(prob: f64, label: u8) -> f64 {
    if label == 1 {
        clipped_nll(prob)
    } else {
        clipped_nll(1.0 - prob)
    }
}

/// d BCE / d logit for a sigmoid output; zero where the clip is active.
fn bce_logit_grad(prob: f64, label: u8) -> f64 {
    if label == 1 {
        if prob > LOG_CLIP {
            prob - 1.0
        } else {
            0.0
        }
    } else if 1.0 - prob > LOG_CLIP {
        prob
    } else {
        0.0
    }
}

fn aux_labels_for(batch: &Batch, row: usize, classes: usize) -> Result<&[usize]> {
    let labels = batch
        .aux_labels
        .as_ref()
        .ok_or_else(|| Error::Data("batch has no auxiliary labels".into()))?;
    let row_labels = &labels[row][..batch.lengths[row]];
    if let Some(&bad) = row_labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "auxiliary label {bad} outside 0..{classes}"
        )));
    }
    Ok(row_labels)
}

fn check_cache_batch(cache: &ForwardCache, batch: &Batch) -> Result<()> {
    if cache.batch_fingerprint != batch.fingerprint() || cache.sentences.len() != batch.size() {
        return Err(Error::Contract("forward cache was computed for a different batch".into()));
    }
    Ok(())
}

/// Batch loss: per-sentence BCE and auxiliary cross-entropy, each averaged
/// over the sentence length, then averaged over the batch.
pub fn model_loss(cache: &ForwardCache, batch: &Batch, lambda: f64) -> Result<LossParts> {
    check_cache_batch(cache, batch)?;
    let n = batch.size().max(1) as f64;
    let mut l_error = 0.0;
    let mut l_aux = 0.0;
    for (r, s) in cache.sentences.iter().enumerate() {
        let len = s.len() as f64;
        let labels = &batch.error_labels[r][..s.len()];
        let sentence_bce: f64 = s.error_probs.iter().zip(labels).map(|(&o, &y)| bce(o, y)).sum();
        l_error += sentence_bce / len;
        if let Some(aux) = &s.aux_probs {
            let classes = aux.first().map_or(0, Matrix::len);
            let targets = aux_labels_for(batch, r, classes)?;
            let sentence_ce: f64 = aux
                .iter()
                .zip(targets)
                .map(|(m, &y)| clipped_nll(m.data()[y]))
                .sum();
            l_aux += sentence_ce / len;
        }
    }
    let l_error = l_error / n;
    let l_aux = l_aux / n;
    Ok(LossParts {
        total: l_error + lambda * l_aux,
        error: l_error,
        aux: l_aux,
    })
}

fn sentence_backward(
    p: &ModelParams,
    s: &SentenceCache,
    error_labels: &[u8],
    aux_labels: Option<&[usize]>,
    scale: f64,
    lambda: f64,
    g: &mut ModelGrads,
) -> Result<()> {
    let len = s.len();
    let hidden = p.public_fwd.hidden();
    let two_h = 2 * hidden;
    let step = scale / len as f64;

    let mut d_public = Vec::with_capacity(len);
    let mut d_private = Vec::with_capacity(len);
    for t in 0..len {
        let dlogit = Matrix::column(vec![step * bce_logit_grad(s.error_probs[t], error_labels[t])]);
        let dh_joint = linear_backward_into(&p.error_head, &s.h_joint[t], &dlogit, &mut g.error_head)?;
        let mut dh_pub = dh_joint.slice_rows(0, two_h);
        d_private.push(dh_joint.slice_rows(two_h, 2 * two_h));

        if let (Some(head), Some(probs), Some(targets), Some(gh)) =
            (&p.aux_head, &s.aux_probs, aux_labels, g.aux_head.as_mut())
        {
            let m = &probs[t];
            let y = targets[t];
            let coeff = lambda * step;
            let dlogits = if m.data()[y] > LOG_CLIP {
                let mut d = m.scale(coeff);
                d.data_mut()[y] -= coeff;
                d
            } else {
                Matrix::zeros_like(m)
            };
            let dh_aux = linear_backward_into(head, &s.h_public[t], &dlogits, gh)?;
            dh_pub.add_assign(&dh_aux)?;
        }
        d_public.push(dh_pub);
    }

    let d_words_pub = bilstm_backward_into(
        &p.public_fwd,
        &p.public_bwd,
        &s.public,
        &d_public,
        &mut g.public_fwd,
        &mut g.public_bwd,
    )?;
    let d_private_in = bilstm_backward_into(
        &p.private_fwd,
        &p.private_bwd,
        &s.private,
        &d_private,
        &mut g.private_fwd,
        &mut g.private_bwd,
    )?;
    let word_dim = p.word_table.dim();
    let mut d_words = Vec::with_capacity(len);
    let mut d_tags = Vec::with_capacity(len);
    for (dp, dq) in d_words_pub.iter().zip(&d_private_in) {
        d_words.push(dp.add(&dq.slice_rows(0, word_dim))?);
        d_tags.push(dq.slice_rows(word_dim, dq.rows()));
    }
    if p.word_table.trainable {
        embedding_backward_into(&mut g.word_table, &s.word_ids, &d_words)?;
    }
    if p.pos_table.trainable {
        embedding_backward_into(&mut g.pos_table, &s.pos_ids, &d_tags)?;
    }
    Ok(())
}

/// Gradients of `model_loss(..).total` with respect to every parameter.
pub fn model_backward(
    p: &ModelParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    batch: &Batch,
    lambda: f64,
) -> Result<ModelGrads> {
    if cache.params_checksum != p.checksum() {
        return Err(Error::Contract(
            "stale forward cache: parameters changed since the forward pass".into(),
        ));
    }
    check_cache_batch(cache, batch)?;
    p.check_config(cfg)?;
    let scale = 1.0 / batch.size().max(1) as f64;
    let classes = p.aux_head.as_ref().map_or(0, |h| h.w.rows());
    let rows: Vec<usize> = (0..batch.size()).collect();

    let partials = rows
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = ModelGrads::zeros_like(p);
            for &r in chunk {
                let s = &cache.sentences[r];
                let aux = if p.aux_head.is_some() {
                    Some(aux_labels_for(batch, r, classes)?)
                } else {
                    None
                };
                sentence_backward(p, s, &batch.error_labels[r][..s.len()], aux, scale, lambda, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(|| ModelGrads::zeros_like(p));
    for g in iter {
        total.add_assign(&g)?;
    }
    Ok(total)
}

/// Error probability for every real token of one sentence.
pub fn predict_scores(p: &ModelParams, cfg: &ModelConfig, sentence: &EncodedSentence) -> Result<Vec<f64>> {
    p.check_config(cfg)?;
    if sentence.is_empty() {
        return Err(Error::Argument("cannot score an empty sentence".into()));
    }
    Ok(sentence_forward(p, &sentence.word_ids, &sentence.pos_ids)?.error_probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_uniform;

    fn tiny_cfg(aux: AuxKind) -> ModelConfig {
        ModelConfig {
            word_dim: 4,
            pos_dim: 2,
            hidden: 3,
            aux_kind: aux,
            aux_classes: if aux == AuxKind::None { 0 } else { 3 },
            lambda: 0.5,
            embeddings_trainable: true,
        }
    }

    fn enc(words: &[usize], tags: &[usize], errs: &[u8], aux: &[usize], source: usize) -> EncodedSentence {
        EncodedSentence {
            word_ids: words.to_vec(),
            pos_ids: tags.to_vec(),
            error_labels: errs.to_vec(),
            aux_labels: aux.to_vec(),
            gold: errs.iter().position(|&e| e == 1).map(|i| i + 1),
            source,
        }
    }

    fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
        let mut p = ModelParams::zeros(cfg, 6, 4);
        let mut rng = Rng::new(seed);
        for t in p.tensors_mut() {
            *t = rng_uniform(&mut rng, t.rows(), t.cols(), 0.5).unwrap();
        }
        p
    }

    fn two_sentence_batch(aux: bool) -> Batch {
        let a = enc(&[2, 3, 1], &[1, 2, 3], &[0, 1, 0], if aux { &[0, 1, 2] } else { &[] }, 0);
        let b = enc(&[5, 4, 2, 2], &[3, 1, 1, 2], &[1, 0, 0, 0], if aux { &[2, 2, 0, 1] } else { &[] }, 1);
        Batch::from_encoded(&[&a, &b], 0).unwrap()
    }

    #[test]
    fn aux_kind_parses() {
        assert_eq!("log_freq".parse::<AuxKind>().unwrap(), AuxKind::LogFreq);
        assert_eq!("pos".parse::<AuxKind>().unwrap(), AuxKind::PosTag);
        assert_eq!("none".parse::<AuxKind>().unwrap(), AuxKind::None);
        assert!("other".parse::<AuxKind>().is_err());
    }

    #[test]
    fn zero_params_give_half_probability() {
        let cfg = tiny_cfg(AuxKind::PosTag);
        let p = ModelParams::zeros(&cfg, 6, 4);
        let batch = two_sentence_batch(true);
        let cache = model_forward(&p, &cfg, &batch).unwrap();
        for s in &cache.sentences {
            assert!(s.error_probs.iter().all(|&o| o == 0.5));
            for m in s.aux_probs.as_ref().unwrap() {
                assert!((m.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_aux_head_means_error_loss_only() {
        let cfg = tiny_cfg(AuxKind::None);
        let p = random_params(&cfg, 3);
        let batch = two_sentence_batch(false);
        let cache = model_forward(&p, &cfg, &batch).unwrap();
        assert!(cache.sentences.iter().all(|s| s.aux_probs.is_none()));
        let loss = model_loss(&cache, &batch, 0.7).unwrap();
        assert_eq!(loss.aux, 0.0);
        assert_eq!(loss.total, loss.error);
    }

    #[test]
    fn single_token_bce_reference() {
        let cfg = tiny_cfg(AuxKind::None);
        let p = ModelParams::zeros(&cfg, 6, 4);
        let s = enc(&[2], &[1], &[1], &[], 0);
        let batch = Batch::from_encoded(&[&s], 0).unwrap();
        let cache = model_forward(&p, &cfg, &batch).unwrap();
        let loss = model_loss(&cache, &batch, 0.0).unwrap();
        assert!((loss.error - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_has_zero_error_loss() {
        assert_eq!(bce(1.0, 1), 0.0);
        assert_eq!(bce(0.0, 0), 0.0);
        assert!(bce(0.0, 1).is_finite());
        assert!((bce(0.0, 1) - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(bce(f64::NAN, 1).is_nan());
        assert!(bce(f64::NAN, 0).is_nan());
    }

    #[test]
    fn nan_parameters_give_nan_loss() {
        let cfg = tiny_cfg(AuxKind::LogFreq);
        let mut p = random_params(&cfg, 4);
        p.error_head.b.fill(f64::NAN);
        let batch = two_sentence_batch(true);
        let cache = model_forward(&p, &cfg, &batch).unwrap();
        assert!(model_loss(&cache, &batch, 0.1).unwrap().total.is_nan());
    }

    #[test]
    fn missing_aux_labels_is_data_error() {
        let cfg = tiny_cfg(AuxKind::LogFreq);
        let p = random_params(&cfg, 4);
        let batch = two_sentence_batch(false);
        let cache = model_forward(&p, &cfg, &batch).unwrap();
        assert!(matches!(model_loss(&cache, &batch, 0.1), Err(Error::Data(_))));
    }

    #[test]
    fn out_of_range_id_is_index_error() {
        let cfg = tiny_cfg(AuxKind::None);
        let p = random_params(&cfg, 5);
        let s = enc(&[9], &[1], &[1], &[], 0);
        let batch = Batch::from_encoded(&[&s], 0).unwrap();
        assert!(matches!(model_forward(&p, &cfg, &batch), Err(Error::Index { .. })));
    }

    #[test]
    fn stale_cache_rejected() {
        let cfg = tiny_cfg(AuxKind::PosTag);
        let mut p = random_params(&cfg, 6);
        let batch = two_sentence_batch(true);
        let cache = model_forward(&p, &cfg, &batch).unwrap();
        p.error_head.b.data_mut()[0] += 1e-3;
        assert!(matches!(
            model_backward(&p, &cfg, &cache, &batch, 0.1),
            Err(Error::Contract(_))
        ));
        let other = Batch::from_encoded(&[&enc(&[2], &[1], &[1], &[0], 0)], 0).unwrap();
        let p2 = random_params(&cfg, 6);
        assert!(model_backward(&p2, &cfg, &cache, &other, 0.1).is_err());
    }

    #[test]
    fn batch_outputs_equal_single_sentence_outputs() {
        let cfg = tiny_cfg(AuxKind::PosTag);
        let p = random_params(&cfg, 7);
        let batch = two_sentence_batch(true);
        let joint = model_forward(&p, &cfg, &batch).unwrap();
        for r in 0..2 {
            let n = batch.lengths[r];
            let single = enc(&batch.word_ids[r][..n], &batch.pos_ids[r][..n], &batch.error_labels[r][..n], &[], r);
            let alone = predict_scores(&p, &cfg, &single).unwrap();
            assert_eq!(alone, joint.sentences[r].error_probs);
        }
    }

    #[test]
    fn predict_scores_shape_and_zero_params() {
        let cfg = tiny_cfg(AuxKind::None);
        let p = ModelParams::zeros(&cfg, 6, 4);
        let s = enc(&[2, 3, 4, 5], &[1, 1, 2, 3], &[0, 0, 1, 0], &[], 0);
        let scores = predict_scores(&p, &cfg, &s).unwrap();
        assert_eq!(scores, vec![0.5; 4]);
    }

    #[test]
    fn extra_padding_changes_nothing() {
        let cfg = tiny_cfg(AuxKind::LogFreq);
        let p = random_params(&cfg, 8);
        let batch = two_sentence_batch(true);
        let padded = batch.with_extra_padding(5);
        let c1 = model_forward(&p, &cfg, &batch).unwrap();
        let c2 = model_forward(&p, &cfg, &padded).unwrap();
        let l1 = model_loss(&c1, &batch, 0.3).unwrap();
        let l2 = model_loss(&c2, &padded, 0.3).unwrap();
        assert!((l1.total - l2.total).abs() <= 1e-12);
        let g1 = model_backward(&p, &cfg, &c1, &batch, 0.3).unwrap();
        let g2 = model_backward(&p, &cfg, &c2, &padded, 0.3).unwrap();
        for (a, b) in g1.tensors().into_iter().zip(g2.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn aux_head_gradient_linear_in_lambda() {
        let cfg = tiny_cfg(AuxKind::PosTag);
        let p = random_params(&cfg, 9);
        let batch = two_sentence_batch(true);
        let cache = model_forward(&p, &cfg, &batch).unwrap();
        let g1 = model_backward(&p, &cfg, &cache, &batch, 0.25).unwrap();
        let g2 = model_backward(&p, &cfg, &cache, &batch, 0.75).unwrap();
        let (a, b) = (g1.aux_head.unwrap(), g2.aux_head.unwrap());
        for (x, y) in a.w.data().iter().chain(a.b.data()).zip(b.w.data().iter().chain(b.b.data())) {
            assert!((3.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn frozen_word_table_gets_no_gradient() {
        let mut cfg = tiny_cfg(AuxKind::None);
        cfg.embeddings_trainable = false;
        let mut p = random_params(&cfg, 10);
        p.word_table.trainable = false;
        let batch = two_sentence_batch(false);
        let cache = model_forward(&p, &cfg, &batch).unwrap();
        let g = model_backward(&p, &cfg, &cache, &batch, 0.0).unwrap();
        assert!(g.word_table.data().iter().all(|&v| v == 0.0));
        assert!(g.pos_table.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mismatched_config_is_contract_error() {
        let cfg = tiny_cfg(AuxKind::None);
        let p = random_params(&tiny_cfg(AuxKind::PosTag), 11);
        let batch = two_sentence_batch(true);
        assert!(matches!(model_forward(&p, &cfg, &batch), Err(Error::Contract(_))));
    }
}
