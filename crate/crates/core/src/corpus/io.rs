use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CauseSpan, Conversation, Corpus, EmotionAnnotation, EmotionLabel, Speaker, Utterance};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct WireUtterance {
    spk: WireSpeaker,
    text: String,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
enum WireSpeaker {
    U,
    B,
}

#[derive(Serialize, Deserialize)]
struct WireCause {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Serialize, Deserialize)]
struct WireAnnotation {
    label: EmotionLabel,
    cause: Option<WireCause>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireConversation {
    id: String,
    utts: Vec<WireUtterance>,
    anns: BTreeMap<String, WireAnnotation>,
    gold: String,
}

impl From<&Conversation> for WireConversation {
    fn from(c: &Conversation) -> Self {
        WireConversation {
            id: c.id.clone(),
            utts: c
                .utterances
                .iter()
                .map(|u| WireUtterance {
                    spk: match u.speaker {
                        Speaker::User => WireSpeaker::U,
                        Speaker::Bot => WireSpeaker::B,
                    },
                    text: u.text.clone(),
                })
                .collect(),
            anns: c
                .annotations
                .iter()
                .map(|(turn, a)| {
                    (
                        turn.to_string(),
                        WireAnnotation {
                            label: a.label,
                            cause: a.cause.as_ref().map(|s| WireCause {
                                start: s.start_char,
                                end: s.end_char,
                                kind: s.cause_type.clone(),
                            }),
                        },
                    )
                })
                .collect(),
            gold: c.gold_response.clone(),
        }
    }
}

fn from_wire(w: WireConversation, line: usize) -> Result<Conversation> {
    let utterances = w
        .utts
        .into_iter()
        .enumerate()
        .map(|(i, u)| {
            let speaker = match u.spk {
                WireSpeaker::U => Speaker::User,
                WireSpeaker::B => Speaker::Bot,
            };
            Utterance::new(speaker, u.text, i)
        })
        .collect();
    let mut annotations = BTreeMap::new();
    for (key, a) in w.anns {
        let turn: usize = key.parse().map_err(|_| Error::Parse {
            line,
            message: format!("annotation key {key:?} is not a turn index"),
        })?;
        annotations.insert(
            turn,
            EmotionAnnotation {
                label: a.label,
                cause: a.cause.map(|c| CauseSpan {
                    start_char: c.start,
                    end_char: c.end,
                    cause_type: c.kind,
                }),
            },
        );
    }
    Ok(Conversation {
        id: w.id,
        utterances,
        annotations,
        gold_response: w.gold,
    })
}

/// Serialize a corpus to JSONL, one conversation per line.
pub fn to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for c in &corpus.conversations {
        // Serializing plain owned data cannot fail.
        out.push_str(&serde_json::to_string(&WireConversation::from(c)).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Parse and validate JSONL text. Line numbers in errors are 1-based.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())))
}

fn parse_lines(lines: impl Iterator<Item = Result<String>>) -> Result<Corpus> {
    let mut conversations = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireConversation = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let conv = from_wire(wire, i + 1)?;
        conv.validate()?;
        conversations.push(conv);
    }
    Ok(Corpus { conversations })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    parse_lines(reader.lines().map(|l| l.map_err(|e| Error::io(path, e))))
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(to_jsonl(corpus).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
