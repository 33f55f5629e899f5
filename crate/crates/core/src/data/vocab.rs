use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Sentence;
use crate::error::{Error, Result};
use crate::layers::PAD_ID;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: usize = 1;

/// Number of log-frequency classes (labels `0..=9`).
pub const LOG_FREQ_CLASSES: usize = 10;

/// Word vocabulary with training-split frequencies. Ids are dense, PAD is 0,
/// UNK is 1, and the rest follow first appearance in the training data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabEntries", into = "VocabEntries")]
pub struct Vocab {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabEntries {
    tokens: Vec<String>,
    freqs: Vec<u64>,
}

impl From<VocabEntries> for Vocab {
    fn from(e: VocabEntries) -> Self {
        Vocab::from_entries(e.tokens, e.freqs)
    }
}

impl From<Vocab> for VocabEntries {
    fn from(v: Vocab) -> Self {
        VocabEntries {
            tokens: v.tokens,
            freqs: v.freqs,
        }
    }
}

impl Vocab {
    fn from_entries(tokens: Vec<String>, freqs: Vec<u64>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, freqs, ids }
    }

    /// Counts tokens of the training split. Tokens seen fewer than
    /// `min_freq` times get no id and encode as UNK.
    pub fn build(train: &[Sentence], min_freq: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty training set".into()));
        }
        let mut order: Vec<&str> = Vec::new();
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for tok in train.iter().flat_map(|s| &s.tokens) {
            let c = counts.entry(tok.as_str()).or_insert_with(|| {
                order.push(tok.as_str());
                0
            });
            *c += 1;
        }
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut freqs = vec![0, 0];
        for tok in order {
            let f = counts[tok];
            if f >= min_freq && tok != PAD_TOKEN && tok != UNK_TOKEN {
                tokens.push(tok.to_string());
                freqs.push(f);
            }
        }
        Ok(Vocab::from_entries(tokens, freqs))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Training frequency of an id (0 for PAD/UNK).
    pub fn freq(&self, id: usize) -> u64 {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect()
    }

    /// `token<TAB>id<TAB>freq`, one line per entry in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (t, f)) in self.tokens.iter().zip(&self.freqs).enumerate() {
            let _ = writeln!(out, "{t}\t{i}\t{f}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut freqs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::Parse {
                line: idx + 1,
                msg: msg.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected token<TAB>id<TAB>freq"));
            }
            let id: usize = cols[1].parse().map_err(|_| bad("bad id"))?;
            if id != tokens.len() {
                return Err(bad("ids must be dense and in order"));
            }
            tokens.push(cols[0].to_string());
            freqs.push(cols[2].parse().map_err(|_| bad("bad frequency"))?);
        }
        if tokens.get(PAD_ID).map(String::as_str) != Some(PAD_TOKEN)
            || tokens.get(UNK_ID).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::Format("vocabulary must start with <pad> and <unk>".into()));
        }
        Ok(Vocab::from_entries(tokens, freqs))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_tsv(&text)
    }
}

/// POS tag inventory; only PAD is reserved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TagVocab {
    tags: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for TagVocab {
    fn from(tags: Vec<String>) -> Self {
        let ids = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TagVocab { tags, ids }
    }
}

impl From<TagVocab> for Vec<String> {
    fn from(v: TagVocab) -> Self {
        v.tags
    }
}

impl TagVocab {
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a Sentence>) -> Self {
        let mut tags = vec![PAD_TOKEN.to_string()];
        let mut seen: HashMap<String, usize> = HashMap::new();
        seen.insert(PAD_TOKEN.to_string(), PAD_ID);
        for tag in sentences.into_iter().flat_map(|s| &s.pos_tags) {
            if !seen.contains_key(tag) {
                seen.insert(tag.clone(), tags.len());
                tags.push(tag.clone());
            }
        }
        TagVocab { tags, ids: seen }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn get(&self, tag: &str) -> Option<usize> {
        self.ids.get(tag).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, tags: &[S]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| {
                self.get(t.as_ref()).ok_or_else(|| {
                    Error::Contract(format!("POS tag {:?} is not in the tag vocabulary", t.as_ref()))
                })
            })
            .collect()
    }
}

/// Word log-frequency class: `int(ln(freq_train(w)))`, clamped to `0..=9`.
/// Words without an id count as frequency 1.
pub fn log_freq_label(word: &str, vocab: &Vocab) -> usize {
    let freq = vocab.get(word).map_or(1, |id| vocab.freq(id)).max(1);
    label_for_frequency(freq)
}

/// Number of error-labeled tokens per log-frequency class of the token.
pub fn error_counts_by_log_freq(sentences: &[Sentence], vocab: &Vocab) -> [u64; LOG_FREQ_CLASSES] {
    let mut counts = [0u64; LOG_FREQ_CLASSES];
    for s in sentences {
        for (tok, &label) in s.tokens.iter().zip(&s.error_labels) {
            if label == 1 {
                counts[log_freq_label(tok, vocab)] += 1;
            }
        }
    }
    counts
}

pub(crate) fn label_for_frequency(freq: u64) -> usize {
    let a = (freq.max(1) as f64).ln().trunc() as usize;
    a.min(LOG_FREQ_CLASSES - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(words: &str) -> Sentence {
        let t: Vec<String> = words.split(' ').map(String::from).collect();
        let n = t.len();
        Sentence::new(t, vec!["n".into(); n], vec![0; n]).unwrap()
    }

    #[test]
    fn counts_frequencies() {
        let v = Vocab::build(&[sent("a b a")], 1).unwrap();
        assert_eq!(v.freq(v.get("a").unwrap()), 2);
        assert_eq!(v.freq(v.get("b").unwrap()), 1);
        assert_eq!(v.len(), 4);
        assert_eq!(v.get("a"), Some(2));
    }

    #[test]
    fn deterministic_ids_and_round_trip() {
        let corpus = [sent("x y z"), sent("z w x")];
        let a = Vocab::build(&corpus, 1).unwrap();
        let b = Vocab::build(&corpus, 1).unwrap();
        assert_eq!(a, b);
        let toks = ["z", "w", "x", "y"];
        let ids = a.encode(&toks);
        assert_eq!(a.decode(&ids), toks);
        assert_eq!(Vocab::from_tsv(&a.to_tsv()).unwrap(), a);
    }

    #[test]
    fn min_freq_maps_rare_to_unk() {
        let v = Vocab::build(&[sent("a b a")], 2).unwrap();
        assert_eq!(v.id("b"), UNK_ID);
        assert_eq!(v.id("never"), UNK_ID);
        assert_eq!(log_freq_label("b", &v), 0);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(Vocab::build(&[], 1), Err(Error::Data(_))));
    }

    #[test]
    fn log_freq_reference_values() {
        assert_eq!(label_for_frequency(1), 0);
        assert_eq!(label_for_frequency(2), 0);
        assert_eq!(label_for_frequency(3), 1);
        assert_eq!(label_for_frequency(100), 4);
        assert_eq!(label_for_frequency(50_000), 9);
        assert_eq!(label_for_frequency(0), 0);
    }

    #[test]
    fn log_freq_monotone() {
        let mut prev = 0;
        for f in 1..200_000u64 {
            let l = label_for_frequency(f);
            assert!(l >= prev);
            prev = l;
        }
        assert_eq!(prev, 9);
    }

    #[test]
    fn tag_vocab_reserves_pad_only() {
        let t = TagVocab::build(&[sent("a b")]);
        assert_eq!(t.tags(), &["<pad>", "n"]);
        assert!(t.encode(&["v"]).is_err());
    }

    #[test]
    fn tsv_rejects_missing_reserved() {
        assert!(Vocab::from_tsv("a\t0\t1\n").is_err());
        assert!(Vocab::from_tsv("<pad>\t0\t0\n<unk>\t2\t0\n").is_err());
    }
}
