//! Corpus ingestion, vocabularies, auxiliary labels, pre-trained vectors,
//! batching, and the synthetic corpus generator.

mod batch;
mod corpus;
mod embeddings;
mod synth;
mod vocab;

pub use batch::{make_batches, make_batches_encoded, Batch, EncodedSentence, Encoder};
pub use corpus::{load_corpus, parse_corpus, write_corpus, format_corpus, Sentence};
pub use embeddings::{load_embeddings, parse_embeddings, Coverage};
pub use synth::{generate_synthetic, SynthToken, VocabSpec};
pub use vocab::{error_counts_by_log_freq, log_freq_label, TagVocab, Vocab, LOG_FREQ_CLASSES, PAD_TOKEN, UNK_ID, UNK_TOKEN};

/// Train/validation/test partition.
#[derive(Clone, Debug, Default)]
pub struct SplitSpec {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}
