//! Tokenization, vocabulary and assembly of model input sequences.
//!
//! Generator inputs follow the layout
//!
//! ```text
//! [CLS] ([SPK1] q_i [SPK2] r_i)* [SPK1] query [SEP] label [SEP]
//!       ([HASCAUSE] [SEP] cause | [NOCAUSE]) [SEP] response [SEP]
//! ```
//!
//! where the trailing response (closed by `[SEP]`) is present only for
//! training and scoring. Emotion-model inputs are `[CLS] history [SEP] query
//! [SEP]`, or `[CLS] query [SEP]` without history.

mod tokenize;
mod vocab;

use std::ops::Range;

use crate::corpus::{char_slice, EmotionLabel, Speaker, Utterance};
use crate::error::{Error, Result};

pub use tokenize::{detokenize, tokenize, tokenize_with_offsets, Token};
pub use vocab::{
    build_vocab, label_token, token_label, Vocabulary, CLS, DEFAULT_VOCAB_CAP, HASCAUSE,
    LBL_ANGER, LBL_JOY, LBL_OTHERS, LBL_SAD, NOCAUSE, PAD, SEP, SPECIALS, SPK1, SPK2, UNK,
};

/// Speaker channel ids used by the additive speaker embedding.
pub const SPEAKER_NONE: u8 = 0;
pub const SPEAKER_USER: u8 = 1;
pub const SPEAKER_BOT: u8 = 2;
pub const SPEAKER_CHANNELS: usize = 3;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Segments {
    pub history: Range<usize>,
    /// Query word tokens, excluding any speaker marker.
    pub query: Range<usize>,
    pub label: Option<usize>,
    pub has_cause: Option<usize>,
    pub cause: Option<Range<usize>>,
    /// Response tokens including the closing `[SEP]`.
    pub response: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub token_ids: Vec<u32>,
    pub speaker_ids: Vec<u8>,
    pub loss_mask: Vec<bool>,
    pub segments: Segments,
    pub query_text: String,
    /// Character span of each query token within `query_text`.
    pub query_offsets: Vec<(usize, usize)>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Conditioning prefix: everything before the response segment.
    pub fn prompt_len(&self) -> usize {
        self.segments.response.as_ref().map_or(self.len(), |r| r.start)
    }

    /// Copy without the response segment, ready for decoding.
    pub fn prompt(&self) -> EncodedExample {
        let n = self.prompt_len();
        let mut p = self.clone();
        p.token_ids.truncate(n);
        p.speaker_ids.truncate(n);
        p.loss_mask.truncate(n);
        p.segments.response = None;
        p
    }
}

#[derive(Default)]
struct Builder {
    ids: Vec<u32>,
    spk: Vec<u8>,
    mask: Vec<bool>,
}

impl Builder {
    fn push(&mut self, id: u32, speaker: u8, loss: bool) {
        self.ids.push(id);
        self.spk.push(speaker);
        self.mask.push(loss);
    }

    fn extend(&mut self, ids: &[u32], speaker: u8, loss: bool) -> Range<usize> {
        let start = self.ids.len();
        for &id in ids {
            self.push(id, speaker, loss);
        }
        start..self.ids.len()
    }
}

fn speaker_channel(s: Speaker) -> (u32, u8) {
    match s {
        Speaker::User => (SPK1, SPEAKER_USER),
        Speaker::Bot => (SPK2, SPEAKER_BOT),
    }
}

struct Encoded {
    query: Vec<u32>,
    offsets: Vec<(usize, usize)>,
    history: Vec<(Speaker, Vec<u32>)>,
}

fn encode_parts(vocab: &Vocabulary, history: &[Utterance], query: &str) -> Encoded {
    let toks = tokenize_with_offsets(query);
    Encoded {
        query: toks.iter().map(|t| vocab.id(&t.text)).collect(),
        offsets: toks.iter().map(|t| (t.start, t.end)).collect(),
        history: history.iter().map(|u| (u.speaker, vocab.encode(&u.text))).collect(),
    }
}

/// Drop oldest history turns, pairwise, until `fixed + history` fits.
fn truncate_history(history: &mut Vec<(Speaker, Vec<u32>)>, fixed: usize, max_len: usize) -> Result<()> {
    let hist_len = |h: &[(Speaker, Vec<u32>)]| h.iter().map(|(_, t)| t.len() + 1).sum::<usize>();
    while fixed + hist_len(history) > max_len && !history.is_empty() {
        let n = history.len().min(2);
        history.drain(..n);
    }
    if fixed + hist_len(history) > max_len {
        return Err(Error::TooLong { len: fixed, max_len });
    }
    Ok(())
}

/// Assemble a generator example. `response`, when given, is appended with a
/// closing `[SEP]` and is the only loss-bearing segment.
pub fn assemble_generator_input(
    vocab: &Vocabulary,
    history: &[Utterance],
    query: &str,
    label: EmotionLabel,
    cause: Option<&str>,
    response: Option<&str>,
    max_len: usize,
) -> Result<EncodedExample> {
    let cause = match cause {
        Some(c) => CauseInput::Text(c),
        None => CauseInput::Absent,
    };
    assemble_generator_input_with(vocab, history, query, label, cause, response, max_len)
}

/// How the cause segment is rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CauseInput<'a> {
    /// `[HASCAUSE] [SEP] cause`
    Text(&'a str),
    /// `[NOCAUSE]`
    Absent,
    /// `[HASCAUSE] [SEP]` with the cause tokens removed.
    IndicatorOnly,
}

/// As [`assemble_generator_input`], with explicit control over the cause segment.
pub fn assemble_generator_input_with(
    vocab: &Vocabulary,
    history: &[Utterance],
    query: &str,
    label: EmotionLabel,
    cause: CauseInput<'_>,
    response: Option<&str>,
    max_len: usize,
) -> Result<EncodedExample> {
    let cause_ids = match cause {
        CauseInput::Text(c) if c.trim().is_empty() => {
            return Err(Error::InvalidInput("cause text must be non-empty".into()));
        }
        CauseInput::Text(c) => Some(vocab.encode(c)),
        CauseInput::Absent => None,
        CauseInput::IndicatorOnly => Some(Vec::new()),
    };
    let mut parts = encode_parts(vocab, history, query);
    let response_ids = response.map(|r| vocab.encode(r));
    // CLS, SPK1+query, SEP label SEP, indicator (+ SEP cause), SEP
    let fixed = 1
        + 1
        + parts.query.len()
        + 3
        + cause_ids.as_ref().map_or(1, |c| 2 + c.len())
        + 1
        + response_ids.as_ref().map_or(0, |r| r.len() + 1);
    truncate_history(&mut parts.history, fixed, max_len)?;

    let mut b = Builder::default();
    b.push(CLS, SPEAKER_NONE, false);
    let hist_start = b.ids.len();
    for (speaker, toks) in &parts.history {
        let (marker, channel) = speaker_channel(*speaker);
        b.push(marker, channel, false);
        b.extend(toks, channel, false);
    }
    let history_range = hist_start..b.ids.len();
    b.push(SPK1, SPEAKER_USER, false);
    let query_range = b.extend(&parts.query, SPEAKER_USER, false);
    b.push(SEP, SPEAKER_NONE, false);
    let label_pos = b.ids.len();
    b.push(label_token(label), SPEAKER_NONE, false);
    b.push(SEP, SPEAKER_NONE, false);
    let has_cause_pos = b.ids.len();
    let cause_range = match &cause_ids {
        Some(c) => {
            b.push(HASCAUSE, SPEAKER_NONE, false);
            b.push(SEP, SPEAKER_NONE, false);
            Some(b.extend(c, SPEAKER_NONE, false))
        }
        None => {
            b.push(NOCAUSE, SPEAKER_NONE, false);
            None
        }
    };
    b.push(SEP, SPEAKER_NONE, false);
    let response_range = response_ids.map(|r| {
        let start = b.ids.len();
        b.extend(&r, SPEAKER_BOT, true);
        b.push(SEP, SPEAKER_BOT, true);
        start..b.ids.len()
    });
    debug_assert!(b.ids.len() <= max_len);
    Ok(EncodedExample {
        token_ids: b.ids,
        speaker_ids: b.spk,
        loss_mask: b.mask,
        segments: Segments {
            history: history_range,
            query: query_range,
            label: Some(label_pos),
            has_cause: Some(has_cause_pos),
            cause: cause_range,
            response: response_range,
        },
        query_text: query.to_string(),
        query_offsets: parts.offsets,
    })
}

/// Assemble an emotion-model example. The query segment holds the span
/// candidates; history is truncated first on overflow.
pub fn assemble_emotion_input(
    vocab: &Vocabulary,
    query: &str,
    history: &[Utterance],
    max_len: usize,
) -> Result<EncodedExample> {
    let mut parts = encode_parts(vocab, history, query);
    let fixed = 1 + parts.query.len() + 1;
    // history costs one extra SEP when present
    truncate_history(&mut parts.history, fixed + 1, max_len).or_else(|e| {
        if parts.history.is_empty() && fixed <= max_len {
            Ok(())
        } else {
            Err(e)
        }
    })?;
    let mut b = Builder::default();
    b.push(CLS, SPEAKER_NONE, false);
    let hist_start = b.ids.len();
    for (speaker, toks) in &parts.history {
        let (marker, channel) = speaker_channel(*speaker);
        b.push(marker, channel, false);
        b.extend(toks, channel, false);
    }
    let history_range = hist_start..b.ids.len();
    if !parts.history.is_empty() {
        b.push(SEP, SPEAKER_NONE, false);
    }
    let query_range = b.extend(&parts.query, SPEAKER_USER, false);
    b.push(SEP, SPEAKER_NONE, false);
    if b.ids.len() > max_len {
        return Err(Error::TooLong { len: b.ids.len(), max_len });
    }
    Ok(EncodedExample {
        token_ids: b.ids,
        speaker_ids: b.spk,
        loss_mask: vec![false; b.mask.len()],
        segments: Segments {
            history: history_range,
            query: query_range,
            ..Segments::default()
        },
        query_text: query.to_string(),
        query_offsets: parts.offsets,
    })
}

/// Minimal query-relative token window `(first, last)` (inclusive) covering
/// the character span `start..end` of the query text.
pub fn char_span_to_token_span(example: &EncodedExample, start: usize, end: usize) -> Result<(usize, usize)> {
    let len = example.query_text.chars().count();
    if start >= end || end > len {
        return Err(Error::InvalidInput(format!(
            "span {start}..{end} is not inside the query of length {len}"
        )));
    }
    let offs = &example.query_offsets;
    let first = offs.iter().position(|&(_, e)| e > start);
    let last = offs.iter().rposition(|&(s, _)| s < end);
    match (first, last) {
        (Some(f), Some(l)) if f <= l => Ok((f, l)),
        _ => Err(Error::InvalidInput(format!("span {start}..{end} covers no query token"))),
    }
}

/// Inverse of [`char_span_to_token_span`]: character span and covered text.
pub fn token_span_to_char_span(example: &EncodedExample, first: usize, last: usize) -> Result<(usize, usize, String)> {
    let offs = &example.query_offsets;
    if first > last || last >= offs.len() {
        return Err(Error::InvalidInput(format!(
            "token span ({first},{last}) outside query of {} tokens",
            offs.len()
        )));
    }
    let (s, e) = (offs[first].0, offs[last].1);
    let text = char_slice(&example.query_text, s, e).unwrap_or_default().to_string();
    Ok((s, e, text))
}
