//! Rule-based recognizer and generator stand-ins. They let the dialogue
//! flow run deterministically without trained models.

use std::sync::Mutex;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::engine::{EmotionRecognizer, ResponseGenerator};
use crate::corpus::{EmotionLabel, Utterance};
use crate::emotion::{EcePrediction, EcfPrediction};
use crate::error::{Error, Result};
use crate::generator::DecodeConfig;

/// Keyword classifier with a fixed list of cause phrases.
#[derive(Debug, Clone)]
pub struct ScriptedRecognizer {
    pub keywords: Vec<(String, EmotionLabel)>,
    pub causes: Vec<String>,
}

impl Default for ScriptedRecognizer {
    fn default() -> Self {
        let kw = |w: &str, l| (w.to_string(), l);
        Self {
            keywords: vec![
                kw("upset", EmotionLabel::Sad),
                kw("sad", EmotionLabel::Sad),
                kw("angry", EmotionLabel::Anger),
                kw("furious", EmotionLabel::Anger),
                kw("happy", EmotionLabel::Joy),
                kw("great", EmotionLabel::Joy),
            ],
            causes: ["broke up", "stole my bike", "lost my job", "got promoted"].map(String::from).to_vec(),
        }
    }
}

impl EmotionRecognizer for ScriptedRecognizer {
    fn recognize(&self, query: &str, _history: &[Utterance]) -> Result<(EcfPrediction, EcePrediction)> {
        let lower = query.to_lowercase();
        let label = self
            .keywords
            .iter()
            .find(|(w, _)| lower.contains(w.as_str()))
            .map_or(EmotionLabel::Others, |(_, l)| *l);
        let mut probs = [0.05; 4];
        probs[label.index()] = 0.85;
        let ece = self
            .causes
            .iter()
            .find_map(|c| {
                let start = lower.find(c.as_str())?;
                // lowercasing ASCII keeps byte offsets aligned
                let text = query.get(start..start + c.len())?.to_string();
                let first = lower[..start].split_whitespace().count();
                let last = first + c.split_whitespace().count() - 1;
                Some(EcePrediction { has_answer: true, start_tok: first, end_tok: last, extracted_text: text })
            })
            .unwrap_or_else(EcePrediction::no_answer);
        Ok((EcfPrediction { label, probs }, ece))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateCall {
    pub history: Vec<Utterance>,
    pub query: String,
    pub label: EmotionLabel,
    pub cause: Option<String>,
}

/// Canned replies chosen by the turn rng; every call is recorded.
#[derive(Debug, Default)]
pub struct RecordingGenerator {
    pub fail: bool,
    calls: Mutex<Vec<GenerateCall>>,
}

impl RecordingGenerator {
    /// A generator whose every call fails.
    pub fn failing() -> Self {
        Self { fail: true, ..Self::default() }
    }

    pub fn calls(&self) -> Vec<GenerateCall> {
        self.calls.lock().expect("call log").clone()
    }
}

const REPLIES: [&str; 3] = ["I'm here with you.", "Thanks for telling me.", "That sounds like a lot."];

impl ResponseGenerator for RecordingGenerator {
    fn respond(
        &self,
        history: &[Utterance],
        query: &str,
        label: EmotionLabel,
        cause: Option<&str>,
        _decode: &DecodeConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<String> {
        if self.fail {
            return Err(Error::InvalidInput("scripted generator failure".into()));
        }
        self.calls.lock().expect("call log").push(GenerateCall {
            history: history.to_vec(),
            query: query.to_string(),
            label,
            cause: cause.map(str::to_string),
        });
        let base = REPLIES[rng.gen_range(0..REPLIES.len())];
        Ok(match cause {
            Some(c) => format!("{base} About \"{c}\": that matters."),
            None => base.to_string(),
        })
    }
}
