//! Decoder-only response generator. A response is scored and sampled one
//! token at a time given the assembled context (history, query, label and
//! cause segment), so a sequence's log-probability is the sum of its
//! stepwise log-probabilities.

mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use train::{generator_examples, train_generator, GeneratorTrainConfig};

use crate::corpus::{Corpus, EmotionLabel, Utterance};
use crate::error::{Error, Result};
use crate::neural::{
    load_checkpoint, log_softmax, Checkpoint, CheckpointWriter, DType, Graph, ModelConfig, ParamStore, Reduction,
    Transformer,
};
use crate::textproc::{
    assemble_generator_input_with, detokenize, CauseInput, EncodedExample, Vocabulary, PAD, SEP, SPEAKER_BOT,
};

pub const CHECKPOINT_KIND: &str = "generator";
const PREFIX: &str = "lm.";

/// Which form of the cause segment the model is trained and queried with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseAblation {
    /// Cause text with the `[HASCAUSE]` indicator.
    #[default]
    Full,
    /// Cause text and indicator both dropped: every example reads `[NOCAUSE]`.
    NoCause,
    /// Cause text dropped, indicator kept.
    IndicatorOnly,
}

impl CauseAblation {
    pub fn render(self, cause: Option<&str>) -> CauseInput<'_> {
        match (self, cause) {
            (_, None) | (CauseAblation::NoCause, _) => CauseInput::Absent,
            (CauseAblation::Full, Some(c)) => CauseInput::Text(c),
            (CauseAblation::IndicatorOnly, Some(_)) => CauseInput::IndicatorOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy,
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub k: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    /// Top-k sampling with k = 8 at temperature 1.
    fn default() -> Self {
        Self { strategy: DecodeStrategy::TopK, k: 8, temperature: 1.0, max_new_tokens: 40, seed: 0 }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self { strategy: DecodeStrategy::Greedy, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be ≥ 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    /// Generated ids, including the stop token when one was produced.
    pub tokens: Vec<u32>,
    /// Sum of per-step model log-probabilities of `tokens` at temperature 1.
    pub logprob: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    pub ppl: f64,
    pub nll: f64,
    pub tokens: usize,
}

impl Perplexity {
    /// Token-weighted combination of two evaluations.
    pub fn merge(self, other: Perplexity) -> Perplexity {
        let nll = self.nll + other.nll;
        let tokens = self.tokens + other.tokens;
        Perplexity { ppl: (nll / tokens as f64).exp(), nll, tokens }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    store: ParamStore,
    lm: Transformer,
    vocab: Vocabulary,
    ablation: CauseAblation,
    trained: bool,
}

impl GeneratorModel {
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, vocab: Vocabulary, ablation: CauseAblation, rng: &mut R) -> Result<Self> {
        if !cfg.causal {
            return Err(Error::Config("the generator must be causal".into()));
        }
        if cfg.vocab_size != vocab.len() {
            return Err(Error::Config(format!("vocab_size {} != vocabulary {}", cfg.vocab_size, vocab.len())));
        }
        let mut store = ParamStore::new();
        let lm = Transformer::init(cfg, &mut store, PREFIX, rng)?;
        Ok(Self { store, lm, vocab, ablation, trained: false })
    }

    pub fn config(&self) -> &ModelConfig {
        self.lm.config()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn ablation(&self) -> CauseAblation {
        self.ablation
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn transformer(&self) -> &Transformer {
        &self.lm
    }

    /// Conditioning sequence ending in the `[SEP]` before the response.
    pub fn context(&self, history: &[Utterance], query: &str, label: EmotionLabel, cause: Option<&str>) -> Result<EncodedExample> {
        assemble_generator_input_with(&self.vocab, history, query, label, self.ablation.render(cause), None, self.config().max_len)
    }

    /// Next-token logits after `tokens`.
    fn next_logits(&self, tokens: &[u32], speakers: &[u8]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let h = self.lm.forward(&mut g, tokens, speakers)?;
        let last = g.select_rows(h, &[tokens.len() - 1]);
        let logits = self.lm.lm_head(&mut g, last);
        Ok(g.value(logits).to_vec())
    }

    /// First-response-position distribution for a context.
    pub fn next_token_distribution(&self, ctx: &EncodedExample) -> Result<Vec<f64>> {
        let logits = self.next_logits(&ctx.token_ids, &ctx.speaker_ids)?;
        Ok(log_softmax(&logits).into_iter().map(f64::exp).collect())
    }

    pub fn generate(
        &self,
        history: &[Utterance],
        query: &str,
        label: EmotionLabel,
        cause: Option<&str>,
        decode: &DecodeConfig,
    ) -> Result<Generation> {
        let mut rng = ChaCha8Rng::seed_from_u64(decode.seed);
        self.generate_with_rng(history, query, label, cause, decode, &mut rng)
    }

    pub fn generate_with_rng<R: Rng + ?Sized>(
        &self,
        history: &[Utterance],
        query: &str,
        label: EmotionLabel,
        cause: Option<&str>,
        decode: &DecodeConfig,
        rng: &mut R,
    ) -> Result<Generation> {
        let ctx = self.context(history, query, label, cause)?;
        self.continue_from(&ctx, decode, rng)
    }

    /// Decode from the end of `ctx` until a stop token, `max_new_tokens`, or
    /// the position limit.
    pub fn continue_from<R: Rng + ?Sized>(&self, ctx: &EncodedExample, decode: &DecodeConfig, rng: &mut R) -> Result<Generation> {
        decode.validate()?;
        let max_len = self.config().max_len;
        let mut tokens = ctx.token_ids.clone();
        let mut speakers = ctx.speaker_ids.clone();
        let mut out = Vec::new();
        let mut logprob = 0.0;
        let mut stopped = false;
        while out.len() < decode.max_new_tokens && tokens.len() < max_len {
            let logits = self.next_logits(&tokens, &speakers)?;
            let lp = log_softmax(&logits);
            let next = self.pick(&logits, decode, rng);
            logprob += lp[next as usize];
            out.push(next);
            if next == SEP || next == PAD {
                stopped = true;
                break;
            }
            tokens.push(next);
            speakers.push(SPEAKER_BOT);
        }
        let words: Vec<&str> = out
            .iter()
            .filter(|&&t| t != SEP && t != PAD)
            .filter_map(|&t| self.vocab.token(t))
            .collect();
        Ok(Generation { text: detokenize(&words), tokens: out, logprob, stopped })
    }

    /// Candidates are ordinary words plus the stop token.
    fn allowed(id: usize) -> bool {
        id as u32 == SEP || !Vocabulary::is_special(id as u32)
    }

    fn pick<R: Rng + ?Sized>(&self, logits: &[f64], decode: &DecodeConfig, rng: &mut R) -> u32 {
        let mut cands: Vec<(usize, f64)> = logits.iter().copied().enumerate().filter(|&(i, _)| Self::allowed(i)).collect();
        // stable sort keeps the lowest id first among ties
        cands.sort_by(|a, b| b.1.total_cmp(&a.1));
        let k = match decode.strategy {
            DecodeStrategy::Greedy => 1,
            DecodeStrategy::TopK => decode.k.min(cands.len()),
        };
        if k == 1 {
            return cands[0].0 as u32;
        }
        let top = &cands[..k];
        let m = top[0].1 / decode.temperature;
        let w: Vec<f64> = top.iter().map(|&(_, l)| (l / decode.temperature - m).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return top[i].0 as u32;
            }
            u -= wi;
        }
        top[k - 1].0 as u32
    }

    /// Log-probability of `continuation` following `ctx`, from a single
    /// teacher-forced pass.
    pub fn score_continuation(&self, ctx: &EncodedExample, continuation: &[u32]) -> Result<f64> {
        if continuation.is_empty() {
            return Ok(0.0);
        }
        let n = ctx.len();
        let mut tokens = ctx.token_ids.clone();
        tokens.extend_from_slice(&continuation[..continuation.len() - 1]);
        let mut speakers = ctx.speaker_ids.clone();
        speakers.resize(tokens.len(), SPEAKER_BOT);
        let mut g = Graph::new(&self.store);
        let h = self.lm.forward(&mut g, &tokens, &speakers)?;
        let rows: Vec<usize> = (n - 1..tokens.len()).collect();
        let h = g.select_rows(h, &rows);
        let logits = self.lm.lm_head(&mut g, h);
        let targets: Vec<usize> = continuation.iter().map(|&t| t as usize).collect();
        let nll = g.cross_entropy(logits, &targets, &vec![true; targets.len()], None, Reduction::Sum)?;
        Ok(-g.scalar(nll))
    }

    /// Summed NLL and token count over the loss-masked positions of `data`.
    pub fn perplexity(&self, data: &[EncodedExample]) -> Result<Perplexity> {
        let mut nll = 0.0;
        let mut tokens = 0;
        for ex in data {
            let n = ex.len();
            let mask: Vec<bool> = (0..n).map(|t| t + 1 < n && ex.loss_mask[t + 1]).collect();
            let count = mask.iter().filter(|&&m| m).count();
            if count == 0 {
                continue;
            }
            let targets: Vec<usize> = (0..n).map(|t| if t + 1 < n { ex.token_ids[t + 1] as usize } else { 0 }).collect();
            let mut g = Graph::new(&self.store);
            let logits = crate::neural::forward_lm(&mut g, &self.lm, ex)?;
            let l = g.cross_entropy(logits, &targets, &mask, None, Reduction::Sum)?;
            nll += g.scalar(l);
            tokens += count;
        }
        if tokens == 0 {
            return Err(Error::Metric("no response tokens to score".into()));
        }
        Ok(Perplexity { ppl: (nll / tokens as f64).exp(), nll, tokens })
    }

    pub fn eval_perplexity(&self, corpus: &Corpus) -> Result<Perplexity> {
        let data = generator_examples(corpus, &self.vocab, self.ablation, None, self.config().max_len)?;
        self.perplexity(&data)
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
            extra: serde_json::json!({ "ablation": self.ablation }),
            dtype,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(load_checkpoint(path, None)?)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.header.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a generator checkpoint, found {}", ck.header.kind)));
        }
        let vocab = ck.vocabulary()?;
        let ablation = serde_json::from_value(ck.header.extra["ablation"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad ablation setting: {e}")))?;
        let lm = Transformer::bind(ck.header.model, &ck.params, PREFIX)?;
        Ok(Self { store: ck.params, lm, vocab, ablation, trained: true })
    }
}

/// `KL(p ‖ q)` in nats over full distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// KL between the first-response-token distributions with and without the
/// cause segment.
pub fn first_token_kl(
    model: &GeneratorModel,
    history: &[Utterance],
    query: &str,
    label: EmotionLabel,
    cause: &str,
) -> Result<f64> {
    let with = model.next_token_distribution(&model.context(history, query, label, Some(cause))?)?;
    let without = model.next_token_distribution(&model.context(history, query, label, None)?)?;
    Ok(kl_divergence(&with, &without))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GeneratorModel {
        let vocab = Vocabulary::build(["i feel sad we broke up oh dear that hurts ."], 100).unwrap();
        let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 8, d_ff: 16, vocab_size: vocab.len(), max_len: 48, dropout_p: 0.0, causal: true };
        GeneratorModel::new(cfg, vocab, CauseAblation::Full, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn greedy_is_deterministic_and_top1_matches() {
        let m = model();
        let g = DecodeConfig { max_new_tokens: 6, ..DecodeConfig::greedy() };
        let a = m.generate(&[], "we broke up", EmotionLabel::Sad, Some("broke up"), &g).unwrap();
        let b = m.generate(&[], "we broke up", EmotionLabel::Sad, Some("broke up"), &g).unwrap();
        assert_eq!(a, b);
        let top1 = DecodeConfig { strategy: DecodeStrategy::TopK, k: 1, seed: 77, ..g };
        assert_eq!(m.generate(&[], "we broke up", EmotionLabel::Sad, Some("broke up"), &top1).unwrap(), a);
    }

    #[test]
    fn sampled_sequence_score_factorizes() {
        let m = model();
        let d = DecodeConfig { max_new_tokens: 10, seed: 3, temperature: 1.5, ..DecodeConfig::default() };
        let ctx = m.context(&[], "i feel sad", EmotionLabel::Sad, None).unwrap();
        let gen = m.continue_from(&ctx, &d, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let score = m.score_continuation(&ctx, &gen.tokens).unwrap();
        assert!((score - gen.logprob).abs() < 1e-6);
        assert!(!gen.text.contains("[SEP]"));
    }

    #[test]
    fn zeroed_model_is_uniform() {
        let mut m = model();
        for p in m.params_mut().iter_mut() {
            p.data.iter_mut().for_each(|x| *x = 0.0);
        }
        let ex = assemble_generator_input_with(m.vocab(), &[], "i feel sad", EmotionLabel::Sad, CauseInput::Absent, Some("oh dear"), 48).unwrap();
        let p = m.perplexity(&[ex]).unwrap();
        assert!((p.ppl - m.vocab().len() as f64).abs() < 1e-6);
    }

    #[test]
    fn ablation_rendering() {
        assert_eq!(CauseAblation::Full.render(Some("x")), CauseInput::Text("x"));
        assert_eq!(CauseAblation::NoCause.render(Some("x")), CauseInput::Absent);
        assert_eq!(CauseAblation::IndicatorOnly.render(Some("x")), CauseInput::IndicatorOnly);
        assert_eq!(CauseAblation::IndicatorOnly.render(None), CauseInput::Absent);
    }

    #[test]
    fn decode_config_errors() {
        assert!(DecodeConfig { k: 0, ..DecodeConfig::default() }.validate().is_err());
        assert!(DecodeConfig { temperature: 0.0, ..DecodeConfig::default() }.validate().is_err());
        assert!(DecodeConfig { max_new_tokens: 0, ..DecodeConfig::default() }.validate().is_err());
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&p, &p), 0.0);
        assert!(kl_divergence(&p, &[0.5, 0.3, 0.2]) > 0.0);
    }
}
