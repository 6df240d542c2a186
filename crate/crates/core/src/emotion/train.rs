use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{annotated_turns, EmotionModel, EmotionSettings};
use crate::corpus::{Corpus, EmotionLabel};
use crate::error::{Error, Result};
use crate::neural::{fit, FitConfig, FitReport, Graph, ModelConfig, NodeId, Reduction};
use crate::textproc::{char_span_to_token_span, EncodedExample, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Joint,
    EcfOnly,
    EceOnly,
}

impl TaskMode {
    fn uses_ecf(self) -> bool {
        self != TaskMode::EceOnly
    }

    fn uses_ece(self) -> bool {
        self != TaskMode::EcfOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionTrainConfig {
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub mode: TaskMode,
    pub settings: EmotionSettings,
}

impl EmotionTrainConfig {
    /// Desk configuration for a given vocabulary size.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            model: ModelConfig::desk(vocab_size, 128, false),
            fit: FitConfig::default(),
            mode: TaskMode::Joint,
            settings: EmotionSettings::default(),
        }
    }
}

/// One annotated user turn with its gold span as absolute token positions.
#[derive(Debug, Clone)]
pub struct EmotionExample {
    pub encoded: EncodedExample,
    pub label: EmotionLabel,
    pub span: Option<(usize, usize)>,
}

/// Graph handles of the two loss terms and their sum.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub ecf: Option<NodeId>,
    pub ece: Option<NodeId>,
    pub total: NodeId,
}

pub fn emotion_examples(corpus: &Corpus, vocab: &Vocabulary, use_history: bool, max_len: usize) -> Result<Vec<EmotionExample>> {
    let mut out = Vec::new();
    for (conv, turn, ann) in annotated_turns(corpus) {
        let history = if use_history { &conv.utterances[..turn] } else { &[][..] };
        let encoded = crate::textproc::assemble_emotion_input(vocab, &conv.utterances[turn].text, history, max_len)?;
        let span = match &ann.cause {
            Some(c) => {
                let (first, last) = char_span_to_token_span(&encoded, c.start_char, c.end_char)?;
                let q = encoded.segments.query.start;
                Some((q + first, q + last))
            }
            None => None,
        };
        out.push(EmotionExample { encoded, label: ann.label, span });
    }
    Ok(out)
}

impl EmotionModel {
    /// `L_ECf` (class cross-entropy at `[CLS]`) plus `L_ECE` (start and end
    /// cross-entropy over `[CLS]` and the query), restricted by `mode`.
    pub fn loss(&self, g: &mut Graph, ex: &EmotionExample, mode: TaskMode) -> Result<LossParts> {
        let (class_logits, span_logits) = self.heads_forward(g, &ex.encoded)?;
        let ecf = if mode.uses_ecf() {
            Some(g.cross_entropy(class_logits, &[ex.label.index()], &[true], None, Reduction::Mean)?)
        } else {
            None
        };
        let ece = if mode.uses_ece() {
            let n = ex.encoded.len();
            let mut allowed = vec![false; n];
            allowed[0] = true;
            allowed[ex.encoded.segments.query.clone()].iter_mut().for_each(|a| *a = true);
            let (s, e) = ex.span.unwrap_or((0, 0));
            Some(g.cross_entropy(span_logits, &[s, e], &[true, true], Some(&allowed), Reduction::Sum)?)
        } else {
            None
        };
        let total = match (ecf, ece) {
            (Some(a), Some(b)) => g.add(a, b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("every mode has a loss term"),
        };
        Ok(LossParts { ecf, ece, total })
    }

    fn mean_loss(&self, data: &[EmotionExample], mode: TaskMode) -> Result<f64> {
        let mut sum = 0.0;
        for ex in data {
            let mut g = Graph::new(self.params());
            let l = self.loss(&mut g, ex, mode)?;
            sum += g.scalar(l.total);
        }
        Ok(sum / data.len().max(1) as f64)
    }
}

/// Train the encoder with both heads. The returned model holds the
/// parameters with the lowest dev loss.
pub fn train_joint(
    train: &Corpus,
    dev: &Corpus,
    vocab: Vocabulary,
    cfg: &EmotionTrainConfig,
) -> Result<(EmotionModel, FitReport)> {
    let max_len = cfg.model.max_len;
    let use_history = cfg.settings.use_history;
    let train_ex = emotion_examples(train, &vocab, use_history, max_len)?;
    if train_ex.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let dev_ex = emotion_examples(dev, &vocab, use_history, max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.fit.seed);
    let mut model = EmotionModel::new(cfg.model, vocab, cfg.settings.clone(), &mut rng)?;
    log::info!(
        "training emotion model ({:?}) on {} examples, {} dev",
        cfg.mode,
        train_ex.len(),
        dev_ex.len()
    );
    let mode = cfg.mode;
    let mut store = model.params().clone();
    let report = {
        let scorer = model.clone();
        let loss_model = model.clone();
        fit(
            &mut store,
            &cfg.fit,
            &train_ex,
            |g, ex| Ok(loss_model.loss(g, ex, mode)?.total),
            |params| {
                if dev_ex.is_empty() {
                    return Ok(0.0);
                }
                let mut m = scorer.clone();
                m.params_mut().copy_from(params)?;
                m.mean_loss(&dev_ex, mode)
            },
        )?
    };
    model.params_mut().copy_from(&store)?;
    model.mark_trained();
    Ok((model, report))
}
