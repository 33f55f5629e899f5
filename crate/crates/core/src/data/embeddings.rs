use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;

use super::Vocab;
use crate::error::{Error, Result};
use crate::layers::{EmbeddingTable, PAD_ID};
use crate::numerics::Rng;

/// How much of the vocabulary the vector file covered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Coverage {
    pub matched: usize,
    pub vocab_size: usize,
}

impl Coverage {
    /// `matched / vocab_size`; the denominator includes PAD and UNK.
    pub fn ratio(&self) -> f64 {
        if self.vocab_size == 0 {
            0.0
        } else {
            self.matched as f64 / self.vocab_size as f64
        }
    }
}

/// Reads word2vec text vectors: an optional `count dim` header, then
/// `token v1 .. v_dim` per line. Rows for vocabulary tokens missing from the
/// file keep their seeded uniform initialization; the PAD row is zero.
pub fn parse_embeddings(
    text: &str,
    vocab: &Vocab,
    dim: usize,
    rng: &mut Rng,
    trainable: bool,
) -> Result<(EmbeddingTable, Coverage)> {
    let mut table = EmbeddingTable::init(vocab.len(), dim, rng, trainable)?;
    let mut filled = HashSet::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if idx == 0 && fields.len() == 2 {
            if let (Ok(_count), Ok(header_dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if header_dim != dim {
                    return Err(Error::Format(format!(
                        "header declares dimension {header_dim}, expected {dim}"
                    )));
                }
                continue;
            }
        }
        let values = &fields[1..];
        if values.len() != dim {
            return Err(Error::Format(format!(
                "line {line_no}: {} values for {:?}, expected {dim}",
                values.len(),
                fields[0]
            )));
        }
        let Some(id) = vocab.get(fields[0]) else {
            continue;
        };
        if id == PAD_ID || !filled.insert(id) {
            continue;
        }
        let row = table.vectors.row_mut(id);
        for (slot, v) in row.iter_mut().zip(values) {
            *slot = v.parse::<f64>().map_err(|_| {
                Error::Format(format!("line {line_no}: {v:?} is not a number"))
            })?;
        }
    }
    table.vectors.row_mut(PAD_ID).fill(0.0);
    let coverage = Coverage {
        matched: filled.len(),
        vocab_size: vocab.len(),
    };
    Ok((table, coverage))
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
    rng: &mut Rng,
    trainable: bool,
) -> Result<(EmbeddingTable, Coverage)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, vocab, dim, rng, trainable)
}
