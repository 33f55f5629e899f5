use serde::{Deserialize, Serialize};

use super::Sentence;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One entry of the synthetic token inventory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthToken {
    pub surface: String,
    /// Index into [`VocabSpec::tags`].
    pub pos: usize,
    /// Unnormalized sampling weight within its POS class.
    pub weight: f64,
}

/// Inventory and grammar for the synthetic corpus.
///
/// Sentences follow a cyclic tag grammar: the tag at position `k` is
/// `(start + k) mod n_tags`. Each token belongs to one tag class and is drawn
/// by weight within it. An error replaces one token that has a confusable
/// partner with that partner, which sits in a different class and so breaks
/// the cycle at that position. Among the candidate positions the substituted
/// one is drawn with weight `p(token)^-rarity_bias`, so rare words carry most
/// errors. Sentences without any candidate are redrawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub tags: Vec<String>,
    pub tokens: Vec<SynthToken>,
    /// Directed `(token, partner)` pairs; a token appears at most once on
    /// the left.
    pub confusable: Vec<(usize, usize)>,
    pub min_len: usize,
    pub max_len: usize,
    pub rarity_bias: f64,
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec::zipf(&["n", "v", "a", "d"], 20_000, 1.0, 2_000)
    }
}

impl VocabSpec {
    /// `types_per_tag` tokens per tag with Zipf weights `1 / rank^exponent`.
    /// Tokens of 0-based rank `>= confusable_from` are confusable: rank `r`
    /// in class `c` pairs with rank `r` in class `c + n_tags / 2`.
    pub fn zipf(tags: &[&str], types_per_tag: usize, exponent: f64, confusable_from: usize) -> Self {
        let n = tags.len();
        let mut tokens = Vec::with_capacity(n * types_per_tag);
        for (c, tag) in tags.iter().enumerate() {
            for r in 0..types_per_tag {
                tokens.push(SynthToken {
                    surface: format!("{tag}{r}"),
                    pos: c,
                    weight: 1.0 / ((r + 1) as f64).powf(exponent),
                });
            }
        }
        let shift = (n / 2).max(1);
        let confusable = (0..tokens.len())
            .filter(|i| i % types_per_tag >= confusable_from)
            .map(|i| {
                let (c, r) = (i / types_per_tag, i % types_per_tag);
                (i, ((c + shift) % n.max(1)) * types_per_tag + r)
            })
            .collect();
        VocabSpec {
            tags: tags.iter().map(|t| t.to_string()).collect(),
            tokens,
            confusable,
            min_len: 5,
            max_len: 12,
            rarity_bias: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.tags.len() < 3 {
            return bad(format!("need at least 3 tags, got {}", self.tags.len()));
        }
        if self.min_len < 3 || self.min_len > self.max_len {
            return bad(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if !(self.rarity_bias.is_finite() && self.rarity_bias >= 0.0) {
            return bad(format!("rarity bias must be finite and >= 0, got {}", self.rarity_bias));
        }
        let mut per_class = vec![0usize; self.tags.len()];
        for t in &self.tokens {
            if t.pos >= self.tags.len() {
                return bad(format!("token {} has tag index {}", t.surface, t.pos));
            }
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return bad(format!("token {} has weight {}", t.surface, t.weight));
            }
            per_class[t.pos] += 1;
        }
        if let Some(c) = per_class.iter().position(|&n| n == 0) {
            return bad(format!("tag {} has no tokens", self.tags[c]));
        }
        if self.confusable.is_empty() {
            return bad("no confusable pairs".into());
        }
        let mut seen = vec![false; self.tokens.len()];
        for &(a, b) in &self.confusable {
            if a >= self.tokens.len() || b >= self.tokens.len() {
                return bad(format!("confusable pair ({a}, {b}) out of range"));
            }
            if self.tokens[a].pos == self.tokens[b].pos {
                return bad(format!(
                    "{} and {} share a tag and cannot be confused",
                    self.tokens[a].surface, self.tokens[b].surface
                ));
            }
            if std::mem::replace(&mut seen[a], true) {
                return bad(format!("{} has two partners", self.tokens[a].surface));
            }
        }
        Ok(())
    }
}

struct Sampler {
    /// Token indices and cumulative weights, per class.
    classes: Vec<(Vec<usize>, Vec<f64>)>,
    partner: Vec<Option<usize>>,
    prob: Vec<f64>,
}

impl Sampler {
    fn new(spec: &VocabSpec) -> Self {
        let mut classes = vec![(Vec::new(), Vec::new()); spec.tags.len()];
        for (i, t) in spec.tokens.iter().enumerate() {
            classes[t.pos].0.push(i);
            classes[t.pos].1.push(t.weight);
        }
        let mut prob = vec![0.0; spec.tokens.len()];
        for (ids, w) in &classes {
            let total: f64 = w.iter().sum();
            for (&i, &wi) in ids.iter().zip(w) {
                prob[i] = wi / total;
            }
        }
        for (_, w) in classes.iter_mut() {
            let mut acc = 0.0;
            for x in w.iter_mut() {
                acc += *x;
                *x = acc;
            }
        }
        let mut partner = vec![None; spec.tokens.len()];
        for &(a, b) in &spec.confusable {
            partner[a] = Some(b);
        }
        Sampler {
            classes,
            partner,
            prob,
        }
    }
}

/// Draws `n_sentences` sentences, each with exactly one error.
pub fn generate_synthetic(rng: &mut Rng, n_sentences: usize, spec: &VocabSpec) -> Result<Vec<Sentence>> {
    spec.validate()?;
    let sampler = Sampler::new(spec);
    let n_tags = spec.tags.len();
    let mut out = Vec::with_capacity(n_sentences);
    // Expected redraws stay small unless confusable words are vanishingly rare.
    const MAX_REDRAWS: usize = 10_000;
    for _ in 0..n_sentences {
        let mut redraws = 0;
        let (mut ids, candidates) = loop {
            let len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
            let start = rng.below(n_tags);
            let ids: Vec<usize> = (0..len)
                .map(|k| {
                    let (members, cumulative) = &sampler.classes[(start + k) % n_tags];
                    let target = rng.next_f64() * cumulative[cumulative.len() - 1];
                    let i = cumulative.partition_point(|&c| c <= target);
                    members[i.min(members.len() - 1)]
                })
                .collect();
            let candidates: Vec<usize> = (0..len).filter(|&k| sampler.partner[ids[k]].is_some()).collect();
            if !candidates.is_empty() {
                break (ids, candidates);
            }
            redraws += 1;
            if redraws >= MAX_REDRAWS {
                return Err(Error::Argument(
                    "confusable words are too rare to place an error in a sentence".into(),
                ));
            }
        };
        let rarity: Vec<f64> = candidates
            .iter()
            .map(|&k| sampler.prob[ids[k]].powf(-spec.rarity_bias))
            .collect();
        let pos = candidates[rng.weighted_index(&rarity)];
        ids[pos] = sampler.partner[ids[pos]].expect("candidate has a partner");
        let mut labels = vec![0; ids.len()];
        labels[pos] = 1;
        out.push(Sentence::new(
            ids.iter().map(|&i| spec.tokens[i].surface.clone()).collect(),
            ids.iter().map(|&i| spec.tags[spec.tokens[i].pos].clone()).collect(),
            labels,
        )?);
    }
    Ok(out)
}
