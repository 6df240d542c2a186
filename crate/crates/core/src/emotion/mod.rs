//! Joint emotion classification (ECf) and cause extraction (ECE) on a
//! bidirectional encoder. The class head reads the `[CLS]` state; the span
//! head scores every position as a start or end, with `[CLS]` as the
//! no-answer slot.

mod metrics;
mod train;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{ece_scores, ecf_scores, span_f1, EceScores, EcfScores};
pub use train::{emotion_examples, train_joint, EmotionExample, EmotionTrainConfig, LossParts, TaskMode};

use crate::corpus::{Corpus, EmotionLabel, Utterance};
use crate::error::{Error, Result};
use crate::neural::{
    forward_encoder, load_checkpoint, masked_softmax, CheckpointWriter, DType, Graph, Init, ModelConfig, NodeId,
    ParamId, ParamStore, Transformer,
};
use crate::textproc::{assemble_emotion_input, token_span_to_char_span, EncodedExample, Vocabulary};

pub const CHECKPOINT_KIND: &str = "emotion";
pub const DEFAULT_MAX_SPAN: usize = 12;
const ENCODER_PREFIX: &str = "enc.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionSettings {
    /// Largest allowed `end − start` in tokens.
    pub max_span: usize,
    /// Feed preceding turns to the encoder, not just the query.
    pub use_history: bool,
}

impl Default for EmotionSettings {
    fn default() -> Self {
        Self { max_span: DEFAULT_MAX_SPAN, use_history: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcfPrediction {
    pub label: EmotionLabel,
    pub probs: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcePrediction {
    pub has_answer: bool,
    /// Query-relative token indices, inclusive; meaningful only with an answer.
    pub start_tok: usize,
    pub end_tok: usize,
    pub extracted_text: String,
}

impl EcePrediction {
    pub fn no_answer() -> Self {
        Self { has_answer: false, start_tok: 0, end_tok: 0, extracted_text: String::new() }
    }

    pub fn cause(&self) -> Option<&str> {
        self.has_answer.then_some(self.extracted_text.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
struct Heads {
    cls_w: ParamId,
    cls_b: ParamId,
    span_w: ParamId,
    span_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct EmotionModel {
    store: ParamStore,
    encoder: Transformer,
    heads: Heads,
    vocab: Vocabulary,
    settings: EmotionSettings,
    trained: bool,
}

impl EmotionModel {
    /// Randomly initialised model. `cfg.causal` must be false.
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, vocab: Vocabulary, settings: EmotionSettings, rng: &mut R) -> Result<Self> {
        if cfg.causal {
            return Err(Error::Config("the emotion encoder must be bidirectional".into()));
        }
        if cfg.vocab_size != vocab.len() {
            return Err(Error::Config(format!("vocab_size {} != vocabulary {}", cfg.vocab_size, vocab.len())));
        }
        let mut store = ParamStore::new();
        let encoder = Transformer::init(cfg, &mut store, ENCODER_PREFIX, rng)?;
        let d = cfg.d_model;
        store.add("ecf.w", d, EmotionLabel::ALL.len(), Init::Normal(0.02), true, rng);
        store.add("ecf.b", 1, EmotionLabel::ALL.len(), Init::Zeros, false, rng);
        store.add("ece.w", d, 2, Init::Normal(0.02), true, rng);
        store.add("ece.b", 1, 2, Init::Zeros, false, rng);
        let heads = Self::bind_heads(&store, d)?;
        Ok(Self { store, encoder, heads, vocab, settings, trained: false })
    }

    fn bind_heads(store: &ParamStore, d: usize) -> Result<Heads> {
        let get = |name: &str, rows: usize, cols: usize| {
            let id = store.id(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let p = store.get(id);
            if (p.rows, p.cols) != (rows, cols) {
                return Err(Error::Checkpoint(format!("parameter {name} has the wrong shape")));
            }
            Ok(id)
        };
        Ok(Heads {
            cls_w: get("ecf.w", d, 4)?,
            cls_b: get("ecf.b", 1, 4)?,
            span_w: get("ece.w", d, 2)?,
            span_b: get("ece.b", 1, 2)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.encoder.config()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn settings(&self) -> &EmotionSettings {
        &self.settings
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// False for a model that has never been trained or loaded.
    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn encode(&self, query: &str, history: &[Utterance]) -> Result<EncodedExample> {
        let history = if self.settings.use_history { history } else { &[] };
        assemble_emotion_input(&self.vocab, query, history, self.config().max_len)
    }

    /// Class logits (1×4) and transposed span logits (2×len).
    pub(crate) fn heads_forward(&self, g: &mut Graph, ex: &EncodedExample) -> Result<(NodeId, NodeId)> {
        let h = forward_encoder(g, &self.encoder, ex)?;
        let cls = g.select_rows(h, &[0]);
        let (w, b) = (g.param(self.heads.cls_w), g.param(self.heads.cls_b));
        let z = g.matmul(cls, w);
        let class_logits = g.add_row(z, b);
        let (w, b) = (g.param(self.heads.span_w), g.param(self.heads.span_b));
        let s = g.matmul(h, w);
        let s = g.add_row(s, b);
        let span_logits = g.transpose(s);
        Ok((class_logits, span_logits))
    }

    fn run(&self, ex: &EncodedExample) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new(&self.store);
        let (c, s) = self.heads_forward(&mut g, ex)?;
        let n = ex.len();
        let span = g.value(s);
        Ok((g.value(c).to_vec(), span[..n].to_vec(), span[n..].to_vec()))
    }

    pub fn classify(&self, query: &str, history: &[Utterance]) -> Result<EcfPrediction> {
        let ex = self.encode(query, history)?;
        let (logits, _, _) = self.run(&ex)?;
        Ok(ecf_from_logits(&logits))
    }

    pub fn extract_cause(&self, query: &str, history: &[Utterance]) -> Result<EcePrediction> {
        let ex = self.encode(query, history)?;
        let (_, start, end) = self.run(&ex)?;
        ece_from_logits(&ex, &start, &end, self.settings.max_span)
    }

    /// Both predictions from a single forward pass.
    pub fn analyze(&self, query: &str, history: &[Utterance]) -> Result<(EcfPrediction, EcePrediction)> {
        let ex = self.encode(query, history)?;
        let (logits, start, end) = self.run(&ex)?;
        Ok((ecf_from_logits(&logits), ece_from_logits(&ex, &start, &end, self.settings.max_span)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.writer(DType::F32).save(path)
    }

    pub fn to_bytes(&self, dtype: DType) -> Vec<u8> {
        self.writer(dtype).encode()
    }

    fn writer(&self, dtype: DType) -> CheckpointWriter<'_> {
        CheckpointWriter {
            kind: CHECKPOINT_KIND,
            model: self.config(),
            vocab: &self.vocab,
            params: &self.store,
            optimizer: None,
            extra: serde_json::to_value(&self.settings).expect("settings serialize"),
            dtype,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = load_checkpoint(path, None)?;
        Self::from_checkpoint(ck)
    }

    pub fn from_checkpoint(ck: crate::neural::Checkpoint) -> Result<Self> {
        if ck.header.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected an emotion checkpoint, found {}", ck.header.kind)));
        }
        let vocab = ck.vocabulary()?;
        let settings: EmotionSettings = serde_json::from_value(ck.header.extra.clone())
            .map_err(|e| Error::Checkpoint(format!("bad emotion settings: {e}")))?;
        let encoder = Transformer::bind(ck.header.model, &ck.params, ENCODER_PREFIX)?;
        let heads = Self::bind_heads(&ck.params, ck.header.model.d_model)?;
        Ok(Self { store: ck.params, encoder, heads, vocab, settings, trained: true })
    }

    /// Macro precision/recall of the classifier on every annotated user turn.
    pub fn eval_ecf(&self, test: &Corpus) -> Result<EcfScores> {
        let mut pairs = Vec::new();
        for (conv, turn, ann) in annotated_turns(test) {
            let pred = self.classify(&conv.utterances[turn].text, &conv.utterances[..turn])?;
            pairs.push((ann.label, pred.label));
        }
        Ok(ecf_scores(&pairs))
    }

    /// Exact and fuzzy match of extracted causes on every annotated user turn.
    pub fn eval_ece(&self, test: &Corpus) -> Result<EceScores> {
        let mut pairs = Vec::new();
        for (conv, turn, _) in annotated_turns(test) {
            let pred = self.extract_cause(&conv.utterances[turn].text, &conv.utterances[..turn])?;
            let gold = conv.cause_text(turn).map(str::to_string);
            pairs.push((gold, pred.cause().map(str::to_string)));
        }
        Ok(ece_scores(&pairs))
    }
}

pub(crate) fn annotated_turns(
    corpus: &Corpus,
) -> impl Iterator<Item = (&crate::corpus::Conversation, usize, &crate::corpus::EmotionAnnotation)> {
    corpus
        .iter()
        .flat_map(|c| c.annotations.iter().map(move |(&turn, ann)| (c, turn, ann)))
}

/// Softmax over the four class logits; the label is the argmax.
pub fn ecf_from_logits(logits: &[f64]) -> EcfPrediction {
    let p = masked_softmax(logits, None);
    let mut best = 0;
    for i in 1..4 {
        if p[i] > p[best] {
            best = i;
        }
    }
    EcfPrediction {
        label: EmotionLabel::from_index(best).expect("four classes"),
        probs: [p[0], p[1], p[2], p[3]],
    }
}

/// Best `(start, end)` inside the query with `start ≤ end ≤ start + max_span`,
/// or no answer when the `[CLS]` pair scores at least as high.
pub fn ece_from_logits(ex: &EncodedExample, start: &[f64], end: &[f64], max_span: usize) -> Result<EcePrediction> {
    let q = ex.segments.query.clone();
    let null = start[0] + end[0];
    let mut best: Option<(f64, usize, usize)> = None;
    for i in q.clone() {
        for j in i..q.end.min(i + max_span + 1) {
            let s = start[i] + end[j];
            if best.is_none_or(|(b, _, _)| s > b) {
                best = Some((s, i, j));
            }
        }
    }
    match best {
        Some((score, i, j)) if score > null => {
            let (first, last) = (i - q.start, j - q.start);
            let (_, _, text) = token_span_to_char_span(ex, first, last)?;
            Ok(EcePrediction { has_answer: true, start_tok: first, end_tok: last, extracted_text: text })
        }
        _ => Ok(EcePrediction::no_answer()),
    }
}
