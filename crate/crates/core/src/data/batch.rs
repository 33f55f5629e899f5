use serde::{Deserialize, Serialize};

use super::vocab::label_for_frequency;
use super::{Sentence, TagVocab, Vocab, UNK_ID};
use crate::error::{Error, Result};
use crate::layers::PAD_ID;
use crate::model::AuxKind;
use crate::numerics::Rng;

/// A sentence mapped to ids, with per-token labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSentence {
    pub word_ids: Vec<usize>,
    pub pos_ids: Vec<usize>,
    pub error_labels: Vec<u8>,
    /// Empty when no auxiliary task is configured.
    pub aux_labels: Vec<usize>,
    /// 1-based gold error position, if the sentence has one.
    pub gold: Option<usize>,
    /// Index of the source sentence in the collection it was encoded from.
    pub source: usize,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

/// Maps sentences to ids and auxiliary labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub words: Vocab,
    pub tags: TagVocab,
    pub aux_kind: AuxKind,
}

impl Encoder {
    pub fn new(words: Vocab, tags: TagVocab, aux_kind: AuxKind) -> Self {
        Encoder {
            words,
            tags,
            aux_kind,
        }
    }

    /// Number of classes the auxiliary head predicts.
    pub fn aux_classes(&self) -> usize {
        match self.aux_kind {
            AuxKind::None => 0,
            AuxKind::PosTag => self.tags.len(),
            AuxKind::LogFreq => super::LOG_FREQ_CLASSES,
        }
    }

    pub fn encode(&self, sentence: &Sentence, source: usize) -> Result<EncodedSentence> {
        let word_ids = self.words.encode(&sentence.tokens);
        let pos_ids = self.tags.encode(&sentence.pos_tags)?;
        let aux_labels = match self.aux_kind {
            AuxKind::None => Vec::new(),
            AuxKind::PosTag => pos_ids.clone(),
            AuxKind::LogFreq => word_ids
                .iter()
                .map(|&id| if id == UNK_ID { 0 } else { label_for_frequency(self.words.freq(id)) })
                .collect(),
        };
        Ok(EncodedSentence {
            word_ids,
            pos_ids,
            error_labels: sentence.error_labels.clone(),
            aux_labels,
            gold: sentence.gold_position(),
            source,
        })
    }

    pub fn encode_all(&self, sentences: &[Sentence]) -> Result<Vec<EncodedSentence>> {
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| self.encode(s, i))
            .collect()
    }
}

/// Padded, masked group of sentences. Grids are `size x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub word_ids: Vec<Vec<usize>>,
    pub pos_ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<u8>>,
    pub error_labels: Vec<Vec<u8>>,
    pub aux_labels: Option<Vec<Vec<usize>>>,
    pub lengths: Vec<usize>,
    /// Provenance of every row.
    pub sources: Vec<usize>,
}

impl Batch {
    /// Pads to the longest sentence, or to `min_width` if that is larger.
    pub fn from_encoded(items: &[&EncodedSentence], min_width: usize) -> Result<Batch> {
        let width = items.iter().map(|s| s.len()).max().unwrap_or(0).max(min_width);
        let with_aux = items.first().is_some_and(|s| !s.aux_labels.is_empty());
        let pad = |v: &[usize]| {
            let mut row = v.to_vec();
            row.resize(width, PAD_ID);
            row
        };
        let pad8 = |v: &[u8]| {
            let mut row = v.to_vec();
            row.resize(width, 0);
            row
        };
        let mut aux = Vec::new();
        for s in items {
            if s.pos_ids.len() != s.len() || s.error_labels.len() != s.len() {
                return Err(Error::Data(format!("sentence {} has ragged columns", s.source)));
            }
            if with_aux {
                if s.aux_labels.len() != s.len() {
                    return Err(Error::Data(format!(
                        "sentence {} is missing auxiliary labels",
                        s.source
                    )));
                }
                aux.push(pad(&s.aux_labels));
            }
        }
        Ok(Batch {
            word_ids: items.iter().map(|s| pad(&s.word_ids)).collect(),
            pos_ids: items.iter().map(|s| pad(&s.pos_ids)).collect(),
            mask: items.iter().map(|s| pad8(&vec![1; s.len()])).collect(),
            error_labels: items.iter().map(|s| pad8(&s.error_labels)).collect(),
            aux_labels: with_aux.then_some(aux),
            lengths: items.iter().map(|s| s.len()).collect(),
            sources: items.iter().map(|s| s.source).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn width(&self) -> usize {
        self.word_ids.first().map_or(0, Vec::len)
    }

    /// Same sentences with `extra` more padding columns.
    pub fn with_extra_padding(&self, extra: usize) -> Batch {
        let grow = |g: &Vec<Vec<usize>>| {
            g.iter()
                .map(|r| r.iter().copied().chain(std::iter::repeat_n(PAD_ID, extra)).collect())
                .collect()
        };
        let grow8 = |g: &Vec<Vec<u8>>| {
            g.iter()
                .map(|r| r.iter().copied().chain(std::iter::repeat_n(0, extra)).collect())
                .collect()
        };
        Batch {
            word_ids: grow(&self.word_ids),
            pos_ids: grow(&self.pos_ids),
            mask: grow8(&self.mask),
            error_labels: grow8(&self.error_labels),
            aux_labels: self.aux_labels.as_ref().map(grow),
            lengths: self.lengths.clone(),
            sources: self.sources.clone(),
        }
    }

    /// Order-sensitive digest of the batch contents.
    pub fn fingerprint(&self) -> u64 {
        let mut h = crate::checksum::Fnv::new();
        for row in 0..self.size() {
            h.write_u64(self.lengths[row] as u64);
            for t in 0..self.lengths[row] {
                h.write_u64(self.word_ids[row][t] as u64);
                h.write_u64(self.pos_ids[row][t] as u64);
            }
        }
        h.finish()
    }
}

/// Shuffles (when `rng` is given) and groups already-encoded sentences.
/// The last batch may be short.
pub fn make_batches_encoded(
    sentences: &[EncodedSentence],
    batch_size: usize,
    rng: Option<&mut Rng>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    if let Some(rng) = rng {
        rng.shuffle(&mut order);
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let items: Vec<&EncodedSentence> = chunk.iter().map(|&i| &sentences[i]).collect();
            Batch::from_encoded(&items, 0)
        })
        .collect()
}

pub fn make_batches(
    sentences: &[Sentence],
    encoder: &Encoder,
    batch_size: usize,
    rng: Option<&mut Rng>,
) -> Result<Vec<Batch>> {
    let encoded = encoder.encode_all(sentences)?;
    make_batches_encoded(&encoded, batch_size, rng)
}
