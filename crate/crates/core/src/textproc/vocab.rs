use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tokenize;
use crate::corpus::{Corpus, EmotionLabel};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const SPK1: u32 = 4;
pub const SPK2: u32 = 5;
pub const LBL_SAD: u32 = 6;
pub const LBL_ANGER: u32 = 7;
pub const LBL_JOY: u32 = 8;
pub const LBL_OTHERS: u32 = 9;
pub const HASCAUSE: u32 = 10;
pub const NOCAUSE: u32 = 11;

/// Special tokens in id order; they head every vocabulary file.
pub const SPECIALS: [&str; 12] = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[SPK1]", "[SPK2]", "[SAD]", "[ANGER]", "[JOY]",
    "[OTHERS]", "[HASCAUSE]", "[NOCAUSE]",
];

pub const DEFAULT_VOCAB_CAP: usize = 1998;

pub fn label_token(label: EmotionLabel) -> u32 {
    match label {
        EmotionLabel::Sad => LBL_SAD,
        EmotionLabel::Anger => LBL_ANGER,
        EmotionLabel::Joy => LBL_JOY,
        EmotionLabel::Others => LBL_OTHERS,
    }
}

pub fn token_label(id: u32) -> Option<EmotionLabel> {
    match id {
        LBL_SAD => Some(EmotionLabel::Sad),
        LBL_ANGER => Some(EmotionLabel::Anger),
        LBL_JOY => Some(EmotionLabel::Joy),
        LBL_OTHERS => Some(EmotionLabel::Others),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from an ordered token list whose head must be [`SPECIALS`].
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::InvalidInput("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Keep the `max_size - specials` most frequent words; ties break
    /// lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size <= SPECIALS.len() {
            return Err(Error::Config(format!(
                "vocabulary cap {max_size} leaves no room beyond {} specials",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().take(max_size - SPECIALS.len()).map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Vocabulary over every utterance and gold reply in `corpus`.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocabulary> {
    let texts = corpus.iter().flat_map(|c| {
        c.utterances
            .iter()
            .map(|u| u.text.as_str())
            .chain(std::iter::once(c.gold_response.as_str()))
    });
    Vocabulary::build(texts, max_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_corpus_keeps_specials_and_words() {
        let v = Vocabulary::build(["a b a"], 50).unwrap();
        assert_eq!(v.len(), SPECIALS.len() + 2);
        assert_eq!(v.token(12), Some("a"));
        assert_eq!(v.token(13), Some("b"));
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn cap_respected_with_frequency_then_lexicographic_order() {
        let text: String = (0..3000).map(|i| format!("w{i} ")).collect();
        let v = Vocabulary::build([text.as_str(), "w5 w5 w7"], DEFAULT_VOCAB_CAP).unwrap();
        assert_eq!(v.len(), DEFAULT_VOCAB_CAP);
        assert_eq!(v.token(12), Some("w5"));
        assert_eq!(v.token(13), Some("w7"));
        assert_eq!(v.token(14), Some("w0"));
        assert_eq!(v.token(15), Some("w1"));
    }

    #[test]
    fn cap_must_exceed_specials() {
        assert!(Vocabulary::build(["a"], SPECIALS.len()).is_err());
    }

    #[test]
    fn file_roundtrip_and_hash() {
        let v = Vocabulary::build(["hello there"], 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let back = Vocabulary::load(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        let other = Vocabulary::build(["hello you"], 100).unwrap();
        assert_ne!(other.hash(), v.hash());
    }
}
