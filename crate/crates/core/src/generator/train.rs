use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CauseAblation, GeneratorModel};
use crate::corpus::{Corpus, Speaker};
use crate::dialogue::TemplateBank;
use crate::error::{Error, Result};
use crate::neural::{fit, forward_lm, lm_loss, FitConfig, FitReport, ModelConfig};
use crate::textproc::{assemble_generator_input_with, EncodedExample, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainConfig {
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub ablation: CauseAblation,
}

impl GeneratorTrainConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            model: ModelConfig::desk(vocab_size, 128, true),
            fit: FitConfig::default(),
            ablation: CauseAblation::Full,
        }
    }
}

/// One example per bot turn that answers an annotated user turn. The most
/// recent cause stated earlier in the conversation carries forward. Bot turns
/// whose text is a probe template in `exclude` are skipped.
pub fn generator_examples(
    corpus: &Corpus,
    vocab: &Vocabulary,
    ablation: CauseAblation,
    exclude: Option<&TemplateBank>,
    max_len: usize,
) -> Result<Vec<EncodedExample>> {
    let mut out = Vec::new();
    for conv in corpus.iter() {
        let mut cause: Option<&str> = None;
        for (t, utt) in conv.utterances.iter().enumerate() {
            if utt.speaker == Speaker::User {
                if let Some(c) = conv.cause_text(t) {
                    cause = Some(c);
                }
                continue;
            }
            let Some(ann) = t.checked_sub(1).and_then(|q| conv.annotations.get(&q)) else {
                continue;
            };
            if exclude.is_some_and(|b| b.contains_text(&utt.text)) {
                continue;
            }
            out.push(assemble_generator_input_with(
                vocab,
                &conv.utterances[..t - 1],
                &conv.utterances[t - 1].text,
                ann.label,
                ablation.render(cause),
                Some(&utt.text),
                max_len,
            )?);
        }
    }
    Ok(out)
}

/// Maximum-likelihood training on response tokens; the returned model has
/// the lowest dev perplexity seen.
pub fn train_generator(
    train: &Corpus,
    dev: &Corpus,
    vocab: Vocabulary,
    cfg: &GeneratorTrainConfig,
    exclude: Option<&TemplateBank>,
) -> Result<(GeneratorModel, FitReport)> {
    let max_len = cfg.model.max_len;
    let train_ex = generator_examples(train, &vocab, cfg.ablation, exclude, max_len)?;
    if train_ex.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let dev_ex = generator_examples(dev, &vocab, cfg.ablation, exclude, max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.fit.seed);
    let mut model = GeneratorModel::new(cfg.model, vocab, cfg.ablation, &mut rng)?;
    log::info!("training generator ({:?}) on {} examples, {} dev", cfg.ablation, train_ex.len(), dev_ex.len());
    let mut store = model.params().clone();
    let report = {
        let lm = model.transformer().clone();
        let scorer = model.clone();
        fit(
            &mut store,
            &cfg.fit,
            &train_ex,
            |g, ex| {
                let logits = forward_lm(g, &lm, ex)?;
                lm_loss(g, logits, ex)
            },
            |params| {
                if dev_ex.is_empty() {
                    return Ok(0.0);
                }
                let mut m = scorer.clone();
                m.params_mut().copy_from(params)?;
                Ok(m.perplexity(&dev_ex)?.ppl)
            },
        )?
    };
    model.params_mut().copy_from(&store)?;
    model.mark_trained();
    Ok((model, report))
}
