//! ECf macro precision/recall and ECE exact/fuzzy match.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::EmotionLabel;
use crate::textproc::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcfScores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// Classes present in the gold labels, over which the macro average runs.
    pub classes: Vec<EmotionLabel>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceScores {
    pub exact_match: f64,
    pub fuzzy_match: f64,
    pub n: usize,
}

/// Macro-averaged precision and recall over the classes that occur in
/// `gold`. A class that is never predicted has precision 0.
pub fn ecf_scores(pairs: &[(EmotionLabel, EmotionLabel)]) -> EcfScores {
    let mut tp = [0usize; 4];
    let mut gold_n = [0usize; 4];
    let mut pred_n = [0usize; 4];
    for &(g, p) in pairs {
        gold_n[g.index()] += 1;
        pred_n[p.index()] += 1;
        if g == p {
            tp[g.index()] += 1;
        }
    }
    let classes: Vec<EmotionLabel> = EmotionLabel::ALL.into_iter().filter(|c| gold_n[c.index()] > 0).collect();
    for c in EmotionLabel::ALL {
        if gold_n[c.index()] == 0 {
            log::warn!("class {c} absent from the test set; excluded from the macro average");
        }
    }
    let k = classes.len().max(1) as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = classes.iter().map(|c| ratio(tp[c.index()], pred_n[c.index()])).sum::<f64>() / k;
    let recall = classes.iter().map(|c| ratio(tp[c.index()], gold_n[c.index()])).sum::<f64>() / k;
    EcfScores {
        precision,
        recall,
        accuracy: ratio(tp.iter().sum(), pairs.len()),
        classes,
        n: pairs.len(),
    }
}

/// Token-level F1 between two cause strings; `None` is a no-answer.
pub fn span_f1(gold: Option<&str>, pred: Option<&str>) -> f64 {
    let (g, p) = match (gold, pred) {
        (None, None) => return 1.0,
        (Some(g), Some(p)) => (tokenize(g), tokenize(p)),
        _ => return 0.0,
    };
    if g.is_empty() || p.is_empty() {
        return if g.is_empty() && p.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let prec = overlap as f64 / p.len() as f64;
    let rec = overlap as f64 / g.len() as f64;
    2.0 * prec * rec / (prec + rec)
}

/// Exact string match rate and mean token F1 over `(gold, predicted)` pairs.
pub fn ece_scores(pairs: &[(Option<String>, Option<String>)]) -> EceScores {
    if pairs.is_empty() {
        return EceScores { exact_match: 0.0, fuzzy_match: 0.0, n: 0 };
    }
    let n = pairs.len() as f64;
    let em = pairs.iter().filter(|(g, p)| g == p).count() as f64 / n;
    let f1 = pairs.iter().map(|(g, p)| span_f1(g.as_deref(), p.as_deref())).sum::<f64>() / n;
    EceScores { exact_match: em, fuzzy_match: f1, n: pairs.len() }
}
