use std::collections::BTreeSet;

use serde::Serialize;

use super::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub conversations: usize,
    pub distinct_cause_types: usize,
    pub mean_utterances: f64,
    /// Whitespace-delimited words.
    pub mean_words_per_utterance: f64,
    /// Fraction of conversations whose opening user turn carries a cause.
    pub initial_cause_rate: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> Result<StatsReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("statistics of an empty corpus".into()));
    }
    let mut types = BTreeSet::new();
    let mut utts = 0usize;
    let mut words = 0usize;
    let mut initial = 0usize;
    for conv in corpus.iter() {
        utts += conv.utterances.len();
        words += conv
            .utterances
            .iter()
            .map(|u| u.text.split_whitespace().count())
            .sum::<usize>();
        for ann in conv.annotations.values() {
            if let Some(c) = &ann.cause {
                types.insert(c.cause_type.as_str());
            }
        }
        if conv.annotations.get(&0).is_some_and(|a| a.cause.is_some()) {
            initial += 1;
        }
    }
    let n = corpus.len() as f64;
    Ok(StatsReport {
        conversations: corpus.len(),
        distinct_cause_types: types.len(),
        mean_utterances: utts as f64 / n,
        mean_words_per_utterance: words as f64 / utts as f64,
        initial_cause_rate: initial as f64 / n,
    })
}
