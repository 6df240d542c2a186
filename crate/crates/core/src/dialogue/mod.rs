//! Per-session control flow: classify the user's emotion, look for a cause,
//! probe once with a counseling template when an emotional turn has no
//! cause, and otherwise generate a response conditioned on label and cause.

mod engine;
pub mod scripted;
mod templates;

pub use engine::{DialogueEngine, DialogueState, EmotionRecognizer, Phase, Reply, ReplyMeta, ReplySource, ResponseGenerator};
pub use templates::{BankCounts, Strategy, Template, TemplateBank, TemplatePolicy};

/// Load and validate a template bank file, logging per-class counts.
pub fn load_template_bank(path: impl AsRef<std::path::Path>) -> crate::Result<TemplateBank> {
    TemplateBank::load(path)
}
