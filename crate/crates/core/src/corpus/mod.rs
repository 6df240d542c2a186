//! Annotated conversations: data model, JSONL persistence, synthetic
//! generation, splitting and summary statistics.

mod causes;
mod io;
mod split;
mod stats;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use causes::{default_cause_inventory, CauseType, CAUSE_TYPE_COUNT};
pub use io::{load_corpus, parse_corpus, save_corpus, to_jsonl};
pub use split::{split_corpus, Split, SplitRatios};
pub use stats::{corpus_stats, StatsReport};
pub use synth::{generate_synthetic, GeneratorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Bot,
}

/// The four emotion classes annotated on user turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Sad,
    Anger,
    Joy,
    Others,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 4] = [
        EmotionLabel::Sad,
        EmotionLabel::Anger,
        EmotionLabel::Joy,
        EmotionLabel::Others,
    ];
    pub const EMOTIONAL: [EmotionLabel; 3] =
        [EmotionLabel::Sad, EmotionLabel::Anger, EmotionLabel::Joy];

    pub fn index(self) -> usize {
        match self {
            EmotionLabel::Sad => 0,
            EmotionLabel::Anger => 1,
            EmotionLabel::Joy => 2,
            EmotionLabel::Others => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Sad => "sad",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Joy => "joy",
            EmotionLabel::Others => "others",
        }
    }

    pub fn is_emotional(self) -> bool {
        self != EmotionLabel::Others
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sad" => Ok(EmotionLabel::Sad),
            "anger" | "angry" => Ok(EmotionLabel::Anger),
            "joy" => Ok(EmotionLabel::Joy),
            "others" | "other" => Ok(EmotionLabel::Others),
            other => Err(Error::InvalidInput(format!("unknown emotion label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    /// Turn position within the conversation, 0-based.
    pub index: usize,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>, index: usize) -> Self {
        Self {
            speaker,
            text: text.into(),
            index,
        }
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// A contiguous cause span inside one utterance. Offsets count Unicode
/// scalar values, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CauseSpan {
    pub start_char: usize,
    pub end_char: usize,
    pub cause_type: String,
}

impl CauseSpan {
    /// The covered substring, or `None` when the offsets fall outside `text`.
    pub fn slice<'t>(&self, text: &'t str) -> Option<&'t str> {
        char_slice(text, self.start_char, self.end_char)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionAnnotation {
    pub label: EmotionLabel,
    pub cause: Option<CauseSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
    /// Keyed by turn index; present for every user turn.
    pub annotations: BTreeMap<usize, EmotionAnnotation>,
    pub gold_response: String,
}

pub const MIN_UTTERANCES: usize = 2;
pub const MAX_UTTERANCES: usize = 6;

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Validation {
            id: self.id.clone(),
            message,
        };
        let n = self.utterances.len();
        if !(MIN_UTTERANCES..=MAX_UTTERANCES).contains(&n) {
            return Err(fail(format!(
                "{n} utterances, expected {MIN_UTTERANCES}..={MAX_UTTERANCES}"
            )));
        }
        for (i, utt) in self.utterances.iter().enumerate() {
            if utt.index != i {
                return Err(fail(format!("utterance {i} carries index {}", utt.index)));
            }
            if utt.text.trim().is_empty() {
                return Err(fail(format!("utterance {i} is empty")));
            }
            let expected = if i % 2 == 0 { Speaker::User } else { Speaker::Bot };
            if utt.speaker != expected {
                return Err(fail(format!(
                    "utterance {i} spoken by {:?}, speakers must alternate starting with the user",
                    utt.speaker
                )));
            }
            if utt.speaker == Speaker::User && !self.annotations.contains_key(&i) {
                return Err(fail(format!("user turn {i} has no annotation")));
            }
        }
        for (&turn, ann) in &self.annotations {
            let Some(utt) = self.utterances.get(turn) else {
                return Err(fail(format!("annotation for missing turn {turn}")));
            };
            if utt.speaker == Speaker::Bot {
                let what = if ann.cause.is_some() { "cause span" } else { "annotation" };
                return Err(fail(format!("{what} on bot turn {turn}")));
            }
            if let Some(cause) = &ann.cause {
                if ann.label == EmotionLabel::Others {
                    return Err(fail(format!("turn {turn} labeled others but carries a cause")));
                }
                let len = utt.char_len();
                if cause.start_char >= cause.end_char || cause.end_char > len {
                    return Err(fail(format!(
                        "cause span {}..{} out of bounds for turn {turn} of length {len}",
                        cause.start_char, cause.end_char
                    )));
                }
                if cause.cause_type.trim().is_empty() {
                    return Err(fail(format!("cause on turn {turn} has no type")));
                }
            }
        }
        if self.gold_response.trim().is_empty() {
            return Err(fail("empty gold response".into()));
        }
        Ok(())
    }

    /// Text of the cause annotated on `turn`, if any.
    pub fn cause_text(&self, turn: usize) -> Option<&str> {
        let ann = self.annotations.get(&turn)?;
        let span = ann.cause.as_ref()?;
        span.slice(&self.utterances.get(turn)?.text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>) -> Self {
        Self { conversations }
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.conversations.iter().try_for_each(Conversation::validate)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Conversation> {
        self.conversations.iter()
    }
}

/// Substring by Unicode scalar offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let begin = indices.nth(start)?;
    let finish = if end == start {
        begin
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[begin..finish])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv() -> Conversation {
        let mut annotations = BTreeMap::new();
        annotations.insert(
            0,
            EmotionAnnotation {
                label: EmotionLabel::Sad,
                cause: Some(CauseSpan {
                    start_char: 3,
                    end_char: 11,
                    cause_type: "broke_up".into(),
                }),
            },
        );
        Conversation {
            id: "c1".into(),
            utterances: vec![
                Utterance::new(Speaker::User, "We broke up.", 0),
                Utterance::new(Speaker::Bot, "Oh dear.", 1),
            ],
            annotations,
            gold_response: "Oh dear.".into(),
        }
    }

    #[test]
    fn valid_conversation_passes() {
        let c = conv();
        c.validate().unwrap();
        assert_eq!(c.cause_text(0), Some("broke up"));
    }

    #[test]
    fn rejects_out_of_bounds_span() {
        let mut c = conv();
        c.annotations.get_mut(&0).unwrap().cause.as_mut().unwrap().end_char = 40;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("c1") && err.contains("out of bounds"), "{err}");
    }

    #[test]
    fn rejects_cause_on_bot_turn() {
        let mut c = conv();
        let ann = c.annotations[&0].clone();
        c.annotations.insert(1, ann);
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("bot turn"), "{err}");
    }

    #[test]
    fn rejects_others_with_cause() {
        let mut c = conv();
        c.annotations.get_mut(&0).unwrap().label = EmotionLabel::Others;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_non_alternating() {
        let mut c = conv();
        c.utterances[1].speaker = Speaker::User;
        assert!(c.validate().is_err());
    }

    #[test]
    fn char_slice_uses_scalar_offsets() {
        assert_eq!(char_slice("héllo wörld", 6, 11), Some("wörld"));
        assert_eq!(char_slice("abc", 1, 1), Some(""));
        assert_eq!(char_slice("abc", 2, 4), None);
    }

    #[test]
    fn label_parse_roundtrip() {
        for l in EmotionLabel::ALL {
            assert_eq!(l.as_str().parse::<EmotionLabel>().unwrap(), l);
            assert_eq!(EmotionLabel::from_index(l.index()), Some(l));
        }
    }
}
