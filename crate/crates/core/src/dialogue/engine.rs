use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::{Strategy, TemplateBank, TemplatePolicy};
use crate::corpus::{EmotionLabel, Speaker, Utterance};
use crate::emotion::{EcePrediction, EcfPrediction, EmotionModel};
use crate::error::{Error, Result};
use crate::generator::{DecodeConfig, GeneratorModel};

pub trait EmotionRecognizer: Send + Sync {
    fn recognize(&self, query: &str, history: &[Utterance]) -> Result<(EcfPrediction, EcePrediction)>;
}

impl EmotionRecognizer for EmotionModel {
    fn recognize(&self, query: &str, history: &[Utterance]) -> Result<(EcfPrediction, EcePrediction)> {
        self.analyze(query, history)
    }
}

pub trait ResponseGenerator: Send + Sync {
    fn respond(
        &self,
        history: &[Utterance],
        query: &str,
        label: EmotionLabel,
        cause: Option<&str>,
        decode: &DecodeConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<String>;
}

impl ResponseGenerator for GeneratorModel {
    fn respond(
        &self,
        history: &[Utterance],
        query: &str,
        label: EmotionLabel,
        cause: Option<&str>,
        decode: &DecodeConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<String> {
        Ok(self.generate_with_rng(history, query, label, cause, decode, rng)?.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Fresh,
    Probing,
    Responding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySource {
    Template,
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyMeta {
    pub label: EmotionLabel,
    pub probs: [f64; 4],
    pub cause: Option<String>,
    pub strategy: Option<Strategy>,
    pub phase: Phase,
    pub source: ReplySource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub text: String,
    pub meta: ReplyMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub session_id: String,
    pub turns: Vec<Utterance>,
    pub phase: Phase,
    pub detected_label: Option<EmotionLabel>,
    pub detected_cause: Option<String>,
    /// Probes in the current episode (0 or 1).
    pub probes_used: usize,
    /// Probes over the whole session; drives strategy alternation.
    pub total_probes: usize,
    pub seed: u64,
}

impl DialogueState {
    pub fn new(session_id: impl Into<String>, seed: u64) -> Self {
        Self {
            session_id: session_id.into(),
            turns: Vec::new(),
            phase: Phase::Fresh,
            detected_label: None,
            detected_cause: None,
            probes_used: 0,
            total_probes: 0,
            seed,
        }
    }

    fn reset_episode(&mut self) {
        self.phase = Phase::Fresh;
        self.detected_label = None;
        self.detected_cause = None;
        self.probes_used = 0;
    }

    /// Per-turn generator, so a replayed session makes the same choices.
    fn turn_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.turns.len() as u64);
        rng
    }
}

#[derive(Clone)]
pub struct DialogueEngine {
    recognizer: Arc<dyn EmotionRecognizer>,
    generator: Arc<dyn ResponseGenerator>,
    bank: Arc<TemplateBank>,
    policy: TemplatePolicy,
    decode: DecodeConfig,
}

impl DialogueEngine {
    pub fn new(
        recognizer: Arc<dyn EmotionRecognizer>,
        generator: Arc<dyn ResponseGenerator>,
        bank: Arc<TemplateBank>,
        policy: TemplatePolicy,
        decode: DecodeConfig,
    ) -> Self {
        Self { recognizer, generator, bank, policy, decode }
    }

    pub fn bank(&self) -> &TemplateBank {
        &self.bank
    }

    /// Advance `state` by one user turn. On error `state` is left untouched.
    pub fn step(&self, state: &mut DialogueState, user_text: &str) -> Result<Reply> {
        let text = user_text.trim();
        if text.is_empty() {
            return Err(Error::InvalidInput("empty message".into()));
        }
        let mut next = state.clone();
        let mut rng = next.turn_rng();
        let (ecf, ece) = self.recognizer.recognize(text, &state.turns)?;

        if next.phase == Phase::Responding && ecf.label == EmotionLabel::Others {
            next.reset_episode();
        }
        // An answer to a probe keeps the episode's emotion.
        let label = match (next.phase, next.detected_label) {
            (Phase::Probing, Some(l)) if !ecf.label.is_emotional() => l,
            _ => ecf.label,
        };
        if let Some(c) = ece.cause() {
            next.detected_cause = Some(c.to_string());
        }
        let cause = next.detected_cause.clone();
        next.turns.push(Utterance::new(Speaker::User, text, next.turns.len()));
        next.detected_label = Some(label);

        let (reply, strategy, source) = if label.is_emotional() && cause.is_none() && next.probes_used == 0 {
            let t = self.bank.select(label, &mut rng, next.total_probes, self.policy)?;
            next.phase = Phase::Probing;
            next.probes_used += 1;
            next.total_probes += 1;
            (t.text.clone(), Some(t.strategy), ReplySource::Template)
        } else {
            let r = self
                .generator
                .respond(&state.turns, text, label, cause.as_deref(), &self.decode, &mut rng)?;
            next.phase = Phase::Responding;
            (r, None, ReplySource::Generator)
        };
        next.turns.push(Utterance::new(Speaker::Bot, reply.clone(), next.turns.len()));
        let meta = ReplyMeta { label, probs: ecf.probs, cause, strategy, phase: next.phase, source };
        *state = next;
        Ok(Reply { text: reply, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::super::scripted::{RecordingGenerator, ScriptedRecognizer};
    use super::*;
    use proptest::prelude::*;

    fn engine() -> (DialogueEngine, Arc<RecordingGenerator>) {
        let gen = Arc::new(RecordingGenerator::default());
        let e = DialogueEngine::new(
            Arc::new(ScriptedRecognizer::default()),
            gen.clone(),
            Arc::new(TemplateBank::default_bank()),
            TemplatePolicy::Uniform,
            DecodeConfig::greedy(),
        );
        (e, gen)
    }

    #[test]
    fn upset_then_cause() {
        let (e, gen) = engine();
        let mut s = DialogueState::new("s", 1);
        let r = e.step(&mut s, "I'm upset.").unwrap();
        assert_eq!(r.meta.phase, Phase::Probing);
        assert_eq!(r.meta.label, EmotionLabel::Sad);
        assert!(r.meta.strategy.is_some());
        assert!(e.bank().templates(EmotionLabel::Sad).iter().any(|t| t.text == r.text));

        let r = e.step(&mut s, "We broke up.").unwrap();
        assert_eq!(r.meta.phase, Phase::Responding);
        assert_eq!(r.meta.cause.as_deref(), Some("broke up"));
        let calls = gen.calls();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].cause.as_deref(), Some("broke up"));
        assert_eq!(calls[0].history.len(), 2);
        assert_eq!(s.turns.len(), 4);
    }

    #[test]
    fn others_goes_straight_to_generation() {
        let (e, gen) = engine();
        let mut s = DialogueState::new("s", 1);
        let r = e.step(&mut s, "what's the weather").unwrap();
        assert_eq!((r.meta.phase, r.meta.strategy, r.meta.label), (Phase::Responding, None, EmotionLabel::Others));
        assert_eq!(gen.calls().len(), 1);
    }

    #[test]
    fn unanswered_probe_falls_through_without_cause() {
        let (e, gen) = engine();
        let mut s = DialogueState::new("s", 1);
        e.step(&mut s, "I'm upset.").unwrap();
        let r = e.step(&mut s, "I don't know.").unwrap();
        assert_eq!(r.meta.phase, Phase::Responding);
        assert_eq!(r.meta.label, EmotionLabel::Sad);
        assert_eq!(gen.calls()[0].cause, None);
        // still no second probe for a later causeless sad turn
        let r = e.step(&mut s, "I'm still upset.").unwrap();
        assert_eq!(r.meta.source, ReplySource::Generator);
    }

    #[test]
    fn others_after_responding_starts_a_new_episode() {
        let (e, _) = engine();
        let mut s = DialogueState::new("s", 1);
        e.step(&mut s, "I'm upset.").unwrap();
        e.step(&mut s, "We broke up.").unwrap();
        e.step(&mut s, "what's the weather").unwrap();
        assert_eq!(s.detected_cause, None);
        assert_eq!(s.probes_used, 0);
        let r = e.step(&mut s, "I'm upset.").unwrap();
        assert_eq!(r.meta.phase, Phase::Probing);
    }

    #[test]
    fn cause_persists_within_episode() {
        let (e, gen) = engine();
        let mut s = DialogueState::new("s", 1);
        e.step(&mut s, "I'm upset because we broke up.").unwrap();
        e.step(&mut s, "I'm still upset.").unwrap();
        assert!(gen.calls().iter().all(|c| c.cause.as_deref() == Some("broke up")));
    }

    #[test]
    fn failed_step_leaves_state_intact() {
        let (e, _) = engine();
        let mut s = DialogueState::new("s", 1);
        e.step(&mut s, "hello").unwrap();
        let before = s.clone();
        assert!(e.step(&mut s, "   ").is_err());
        let failing = DialogueEngine::new(
            Arc::new(ScriptedRecognizer::default()),
            Arc::new(RecordingGenerator::failing()),
            Arc::new(TemplateBank::default_bank()),
            TemplatePolicy::Uniform,
            DecodeConfig::greedy(),
        );
        assert!(failing.step(&mut s, "hello again").is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn seeded_sessions_replay_identically() {
        let (e, _) = engine();
        let run = |seed| {
            let mut s = DialogueState::new("s", seed);
            ["I'm upset.", "hello", "I'm so angry", "we broke up"]
                .iter()
                .map(|t| e.step(&mut s, t).unwrap().text)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    const LINES: [&str; 7] = [
        "I'm upset.",
        "We broke up.",
        "what's the weather",
        "I'm so angry",
        "I'm happy today",
        "someone stole my bike",
        "ok",
    ];

    proptest! {
        #[test]
        fn never_two_consecutive_probes(script in proptest::collection::vec(0usize..LINES.len(), 1..20), seed in 0u64..1000) {
            let (e, _) = engine();
            let mut s = DialogueState::new("p", seed);
            let mut last_probe = false;
            for i in script {
                let r = e.step(&mut s, LINES[i]).unwrap();
                let probe = r.meta.source == ReplySource::Template;
                prop_assert!(!(probe && last_probe));
                prop_assert!(s.probes_used <= 1);
                if s.phase == Phase::Probing {
                    prop_assert!(s.detected_label.is_some_and(|l| l.is_emotional()));
                    prop_assert!(s.detected_cause.is_none());
                }
                prop_assert_eq!(probe, e.bank().contains_text(&r.text));
                last_probe = probe;
            }
        }
    }
}
