//! Ranking metrics for error-position detection.
//!
//! Every sentence has one gold error position. Tokens are ranked by model
//! score, descending; ties go to the earlier token. From the gold ranks we
//! report Accuracy (gold ranked first), MRR, Hit@k and Hit@r%, where the
//! cutoff for Hit@r% is `max(1, floor(len * r / 100))` per sentence.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankedSentence {
    pub length: usize,
    pub gold_rank: usize,
}

/// 1-based rank of `gold_pos` (1-based) under `scores`.
pub fn rank_gold(scores: &[f64], gold_pos: usize) -> Result<usize> {
    if gold_pos == 0 || gold_pos > scores.len() {
        return Err(Error::Argument(format!(
            "gold position {gold_pos} outside 1..={}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("scores contain NaN".into()));
    }
    let g = gold_pos - 1;
    let gold = scores[g];
    let above = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > gold || (s == gold && i < g))
        .count();
    Ok(above + 1)
}

pub fn ranked_sentence(scores: &[f64], gold_pos: usize) -> Result<RankedSentence> {
    Ok(RankedSentence {
        length: scores.len(),
        gold_rank: rank_gold(scores, gold_pos)?,
    })
}

fn fraction(ranked: &[RankedSentence], hit: impl Fn(&RankedSentence) -> bool) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Argument("no sentences to evaluate".into()));
    }
    Ok(ranked.iter().filter(|r| hit(r)).count() as f64 / ranked.len() as f64)
}

pub fn accuracy(ranked: &[RankedSentence]) -> Result<f64> {
    fraction(ranked, |r| r.gold_rank == 1)
}

pub fn mrr(ranked: &[RankedSentence]) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Argument("no sentences to evaluate".into()));
    }
    let total: f64 = ranked.iter().map(|r| 1.0 / r.gold_rank as f64).sum();
    Ok(total / ranked.len() as f64)
}

pub fn hit_at_k(ranked: &[RankedSentence], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    fraction(ranked, |r| r.gold_rank <= k)
}

/// Cutoff used by Hit@r% for a sentence of `length` tokens.
pub fn percent_cutoff(length: usize, r: f64) -> usize {
    ((length as f64 * r / 100.0).floor() as usize).max(1)
}

pub fn hit_at_r_percent(ranked: &[RankedSentence], r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 100.0) {
        return Err(Error::Argument(format!("r must be in (0, 100], got {r}")));
    }
    fraction(ranked, |s| s.gold_rank <= percent_cutoff(s.length, r))
}

/// Which Hit@k and Hit@r% columns a report carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ks: Vec<usize>,
    pub percents: Vec<f64>,
}

impl Default for MetricSet {
    fn default() -> Self {
        MetricSet {
            ks: vec![1, 2],
            percents: vec![20.0],
        }
    }
}

impl MetricSet {
    pub fn validate(&self) -> Result<()> {
        if self.ks.contains(&0) {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if let Some(r) = self.percents.iter().find(|&&r| !(r > 0.0 && r <= 100.0)) {
            return Err(Error::Argument(format!("r must be in (0, 100], got {r}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mrr: f64,
    /// `(k, Hit@k)`, ascending in k.
    pub hit_at_k: Vec<(usize, f64)>,
    /// `(r, Hit@r%)`, ascending in r.
    pub hit_at_r_percent: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn from_ranked(ranked: &[RankedSentence], set: &MetricSet) -> Result<Self> {
        set.validate()?;
        let mut ks = set.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        let mut rs = set.percents.clone();
        rs.sort_by(f64::total_cmp);
        rs.dedup();
        Ok(EvalReport {
            accuracy: accuracy(ranked)?,
            mrr: mrr(ranked)?,
            hit_at_k: ks
                .into_iter()
                .map(|k| Ok((k, hit_at_k(ranked, k)?)))
                .collect::<Result<_>>()?,
            hit_at_r_percent: rs
                .into_iter()
                .map(|r| Ok((r, hit_at_r_percent(ranked, r)?)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn hit(&self, k: usize) -> Option<f64> {
        self.hit_at_k.iter().find(|(kk, _)| *kk == k).map(|&(_, v)| v)
    }

    pub fn hit_percent(&self, r: f64) -> Option<f64> {
        self.hit_at_r_percent.iter().find(|(rr, _)| *rr == r).map(|&(_, v)| v)
    }

    /// `(key, value)` pairs in report order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![("accuracy".to_string(), self.accuracy), ("mrr".to_string(), self.mrr)];
        out.extend(self.hit_at_k.iter().map(|(k, v)| (format!("hit@k.{k}"), *v)));
        out.extend(self.hit_at_r_percent.iter().map(|(r, v)| (format!("hit@{r}pct"), *v)));
        out
    }

    /// One `key=value` line per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Arithmetic mean of reports that carry the same metric columns.
    pub fn mean(reports: &[EvalReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Argument("no reports to average".into()))?;
        let keys: Vec<String> = first.entries().into_iter().map(|(k, _)| k).collect();
        let n = reports.len() as f64;
        let mut sums = vec![0.0; keys.len()];
        for r in reports {
            let entries = r.entries();
            if entries.len() != keys.len() || entries.iter().zip(&keys).any(|((k, _), key)| k != key) {
                return Err(Error::Argument("reports carry different metrics".into()));
            }
            for (s, (_, v)) in sums.iter_mut().zip(entries) {
                *s += v;
            }
        }
        let mut it = sums.into_iter().map(|s| s / n);
        let mut out = first.clone();
        out.accuracy = it.next().unwrap_or_default();
        out.mrr = it.next().unwrap_or_default();
        for (_, v) in out.hit_at_k.iter_mut() {
            *v = it.next().unwrap_or_default();
        }
        for (_, v) in out.hit_at_r_percent.iter_mut() {
            *v = it.next().unwrap_or_default();
        }
        Ok(out)
    }
}

impl Serialize for EvalReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = self.entries();
        let mut map = serializer.serialize_map(Some(entries.len()))?;
        for (k, v) in &entries {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for EvalReport {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let get = |k: &str| map.get(k).copied().ok_or_else(|| D::Error::missing_field("accuracy/mrr"));
        let mut report = EvalReport {
            accuracy: get("accuracy")?,
            mrr: get("mrr")?,
            hit_at_k: Vec::new(),
            hit_at_r_percent: Vec::new(),
        };
        for (k, &v) in &map {
            if let Some(rest) = k.strip_prefix("hit@k.") {
                let k: usize = rest.parse().map_err(D::Error::custom)?;
                report.hit_at_k.push((k, v));
            } else if let Some(rest) = k.strip_prefix("hit@").and_then(|r| r.strip_suffix("pct")) {
                let r: f64 = rest.parse().map_err(D::Error::custom)?;
                report.hit_at_r_percent.push((r, v));
            } else if k != "accuracy" && k != "mrr" {
                return Err(D::Error::custom(format!("unknown metric {k}")));
            }
        }
        report.hit_at_k.sort_unstable_by_key(|&(k, _)| k);
        report.hit_at_r_percent.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn ranks(rs: &[usize]) -> Vec<RankedSentence> {
        rs.iter()
            .map(|&r| RankedSentence {
                length: 10,
                gold_rank: r,
            })
            .collect()
    }

    // Position of the gold index after a stable descending sort.
    fn sort_rank(scores: &[f64], gold: usize) -> usize {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        idx.iter().position(|&i| i == gold - 1).unwrap() + 1
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_gold(&[0.9, 0.1, 0.1], 1).unwrap(), 1);
        assert_eq!(rank_gold(&[0.5; 5], 3).unwrap(), 3);
        assert_eq!(rank_gold(&[0.1, 0.9, 0.1], 3).unwrap(), 3);
        assert!(rank_gold(&[0.1, 0.2], 0).is_err());
        assert!(rank_gold(&[0.1, 0.2], 3).is_err());
        assert!(rank_gold(&[0.1, f64::NAN], 1).is_err());
    }

    #[test]
    fn rank_matches_stable_sort_on_random_scores() {
        let mut rng = Rng::new(12);
        for _ in 0..500 {
            let n = 1 + rng.below(30);
            // Coarse values so ties are common.
            let scores: Vec<f64> = (0..n).map(|_| rng.below(5) as f64 / 4.0).collect();
            let gold = 1 + rng.below(n);
            assert_eq!(rank_gold(&scores, gold).unwrap(), sort_rank(&scores, gold));
        }
    }

    #[test]
    fn reference_values() {
        let r = ranks(&[1, 2, 4]);
        assert!((accuracy(&r).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((mrr(&r).unwrap() - 0.58333).abs() < 1e-5);
        assert!((mrr(&r).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert!((hit_at_k(&r, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hit_at_k(&r, 10).unwrap(), 1.0);
        assert_eq!(accuracy(&ranks(&[1, 1])).unwrap(), 1.0);
        assert_eq!(mrr(&ranks(&[1, 1])).unwrap(), 1.0);
    }

    #[test]
    fn percent_cutoffs() {
        assert_eq!(percent_cutoff(10, 20.0), 2);
        assert_eq!(percent_cutoff(3, 20.0), 1);
        assert_eq!(percent_cutoff(1, 20.0), 1);
        assert_eq!(percent_cutoff(40, 20.0), 8);
        assert_eq!(percent_cutoff(7, 100.0), 7);
    }

    #[test]
    fn argument_errors() {
        assert!(accuracy(&[]).is_err());
        assert!(mrr(&[]).is_err());
        assert!(hit_at_k(&ranks(&[1]), 0).is_err());
        assert!(hit_at_r_percent(&ranks(&[1]), 0.0).is_err());
        assert!(hit_at_r_percent(&ranks(&[1]), 100.5).is_err());
    }

    #[test]
    fn single_perfect_sentence_scores_one_everywhere() {
        let rep = EvalReport::from_ranked(&ranks(&[1]), &MetricSet::default()).unwrap();
        assert!(rep.entries().iter().all(|(_, v)| *v == 1.0));
    }

    #[test]
    fn text_and_json_forms() {
        let rep = EvalReport::from_ranked(&ranks(&[1, 2, 4]), &MetricSet::default()).unwrap();
        let text = rep.to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["accuracy", "mrr", "hit@k.1", "hit@k.2", "hit@20pct"]);
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.starts_with("{\"accuracy\":"));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn mean_of_one_is_identity() {
        let rep = EvalReport::from_ranked(&ranks(&[1, 3, 2]), &MetricSet::default()).unwrap();
        assert_eq!(EvalReport::mean(std::slice::from_ref(&rep)).unwrap(), rep);
    }

    proptest! {
        #[test]
        fn report_invariants(rs in prop::collection::vec((1usize..40, 0usize..40), 1..60)) {
            let ranked: Vec<RankedSentence> = rs
                .iter()
                .map(|&(len, g)| RankedSentence { length: len, gold_rank: 1 + g % len })
                .collect();
            let set = MetricSet { ks: (1..=12).collect(), percents: vec![10.0, 20.0, 50.0] };
            let rep = EvalReport::from_ranked(&ranked, &set).unwrap();
            prop_assert_eq!(rep.accuracy, rep.hit(1).unwrap());
            for w in rep.hit_at_k.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            prop_assert!(rep.mrr >= rep.accuracy && rep.mrr <= 1.0);
            for (_, v) in rep.entries() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn rank_invariant_under_monotone_transform(scores in prop::collection::vec(-5.0f64..5.0, 1..30), g in 0usize..30) {
            let gold = 1 + g % scores.len();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            prop_assert_eq!(rank_gold(&scores, gold).unwrap(), rank_gold(&transformed, gold).unwrap());
        }
    }
}
