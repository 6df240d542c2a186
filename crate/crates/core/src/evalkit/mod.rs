//! Corpus-level response metrics and report tables.

mod io;
mod report;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use io::{load_ratings, load_responses, load_votes, RatingRecord, ResponseRecord, Vote, VoteRecord};
pub use report::{emit_report, ModelMetrics, Report, COLUMNS};

use crate::error::{Error, Result};

/// Tokenized responses produced by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub model: String,
    pub responses: Vec<Vec<String>>,
}

/// Unique n-grams over total n-grams, pooled across all responses.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Metric("n must be ≥ 1".into()));
    }
    let mut unique: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        for w in r.windows(n) {
            unique.insert(w.iter().map(AsRef::as_ref).collect());
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Metric(format!("no {n}-grams in the response set")));
    }
    Ok(unique.len() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteLedgerView {
    pub upvotes: u64,
    pub downvotes: u64,
}

impl VoteLedgerView {
    pub fn total(&self) -> u64 {
        self.upvotes + self.downvotes
    }

    pub fn nsv(&self) -> Result<f64> {
        nsv(self.upvotes, self.downvotes)
    }
}

/// Net sale value `(up − down) / (up + down)`.
pub fn nsv(up: u64, down: u64) -> Result<f64> {
    if up + down == 0 {
        return Err(Error::Metric("no votes".into()));
    }
    Ok((up as f64 - down as f64) / (up + down) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbVerdict {
    WinA,
    WinB,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbJudgement {
    pub item_id: String,
    pub verdict: AbVerdict,
}

/// Win/loss/tie from A's side, as integer percentages plus raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbTally {
    pub win_pct: u32,
    pub loss_pct: u32,
    pub tie_pct: u32,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

impl AbTally {
    pub fn format(&self) -> String {
        format!("{}% / {}% / {}%", self.win_pct, self.loss_pct, self.tie_pct)
    }
}

pub fn ab_tally(judgements: &[AbJudgement]) -> Result<AbTally> {
    if judgements.is_empty() {
        return Err(Error::Metric("no judgements".into()));
    }
    let mut seen = HashSet::new();
    for j in judgements {
        if !seen.insert(j.item_id.as_str()) {
            return Err(Error::Metric(format!("item {} judged twice", j.item_id)));
        }
    }
    let count = |v| judgements.iter().filter(|j| j.verdict == v).count();
    let (wins, losses, ties) = (count(AbVerdict::WinA), count(AbVerdict::WinB), count(AbVerdict::Tie));
    let pct = |k: usize| (100.0 * k as f64 / judgements.len() as f64).round() as u32;
    Ok(AbTally { win_pct: pct(wins), loss_pct: pct(losses), tie_pct: pct(ties), wins, losses, ties })
}

/// Mean of ratings on the {0, 1, 2} scale.
pub fn mean_rating(ratings: &[u8]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(Error::Metric("no ratings".into()));
    }
    if let Some(r) = ratings.iter().find(|&&r| r > 2) {
        return Err(Error::Metric(format!("rating {r} outside {{0,1,2}}")));
    }
    Ok(ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingMeans {
    pub empathy: f64,
    pub relevance: f64,
    pub n: usize,
}

/// Per-model means of the empathy and relevance ratings.
pub fn aggregate_ratings(records: &[RatingRecord]) -> Result<BTreeMap<String, RatingMeans>> {
    let mut by_model: BTreeMap<&str, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for r in records {
        let e = by_model.entry(&r.model).or_default();
        e.0.push(r.empathy);
        e.1.push(r.relevance);
    }
    by_model
        .into_iter()
        .map(|(m, (e, r))| {
            Ok((m.to_string(), RatingMeans { empathy: mean_rating(&e)?, relevance: mean_rating(&r)?, n: e.len() }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn distinct_by_hand() {
        assert!((distinct_n(&[toks("a a b")], 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(distinct_n(&[toks("a b c"), toks("d e")], 1).unwrap(), 1.0);
        assert!(distinct_n(&[toks("a")], 2).is_err());
        assert!(distinct_n(&[toks("a")], 0).is_err());
    }

    #[test]
    fn nsv_values() {
        assert!((nsv(10, 5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(nsv(4, 4).unwrap(), 0.0);
        assert!(nsv(0, 0).is_err());
    }

    #[test]
    fn tally_values() {
        let mk = |n: usize, v, off: usize| (0..n).map(move |i| AbJudgement { item_id: format!("{}", i + off), verdict: v });
        let js: Vec<_> = mk(56, AbVerdict::WinA, 0).chain(mk(6, AbVerdict::WinB, 100)).chain(mk(38, AbVerdict::Tie, 200)).collect();
        let t = ab_tally(&js).unwrap();
        assert_eq!((t.win_pct, t.loss_pct, t.tie_pct), (56, 6, 38));
        assert_eq!(t.format(), "56% / 6% / 38%");
        let ties: Vec<_> = mk(7, AbVerdict::Tie, 0).collect();
        let t = ab_tally(&ties).unwrap();
        assert_eq!((t.win_pct, t.loss_pct, t.tie_pct), (0, 0, 100));
        let dup: Vec<_> = mk(2, AbVerdict::Tie, 0).chain(mk(1, AbVerdict::Tie, 0)).collect();
        assert!(ab_tally(&dup).is_err());
    }

    #[test]
    fn rating_means() {
        assert_eq!(mean_rating(&[2, 2, 2]).unwrap(), 2.0);
        assert_eq!(mean_rating(&[0, 1, 2]).unwrap(), 1.0);
        assert!(mean_rating(&[3]).is_err());
    }

    proptest! {
        #[test]
        fn duplication_never_raises_distinct(words in proptest::collection::vec(proptest::collection::vec(0u8..6, 0..8), 1..6), n in 1usize..3) {
            let set: Vec<Vec<String>> = words.iter().map(|r| r.iter().map(|w| w.to_string()).collect()).collect();
            if let Ok(d) = distinct_n(&set, n) {
                let doubled: Vec<Vec<String>> = set.iter().chain(set.iter()).cloned().collect();
                prop_assert!(distinct_n(&doubled, n).unwrap() <= d);
            }
        }

        #[test]
        fn nsv_antisymmetric_and_scale_free(a in 0u64..1000, b in 0u64..1000, k in 1u64..50) {
            prop_assume!(a + b > 0);
            prop_assert_eq!(nsv(a, b).unwrap(), -nsv(b, a).unwrap());
            prop_assert!((nsv(k * a, k * b).unwrap() - nsv(a, b).unwrap()).abs() < 1e-15);
        }
    }
}
