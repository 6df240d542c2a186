use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EmotionLabel;
use crate::error::{Error, Result};

/// Counseling strategy realized by a probe template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "EQ")]
    EffectiveQuestioning,
    #[serde(rename = "AL")]
    ActiveListening,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::EffectiveQuestioning => "effective_questioning",
            Strategy::ActiveListening => "active_listening",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemplatePolicy {
    /// Uniform over the label's whole pool.
    #[default]
    Uniform,
    /// Alternate strategies by the session's probe count, uniform within one.
    AlternateStrategy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    pools: BTreeMap<EmotionLabel, Vec<Template>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BankFile {
    sad: Vec<Template>,
    anger: Vec<Template>,
    joy: Vec<Template>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BankCounts {
    pub sad: usize,
    pub anger: usize,
    pub joy: usize,
    pub total: usize,
}

const DEFAULT_BANK: &str = include_str!("../../assets/templates.json");

impl TemplateBank {
    pub fn new(pools: BTreeMap<EmotionLabel, Vec<Template>>) -> Result<Self> {
        let bank = Self { pools };
        bank.validate()?;
        Ok(bank)
    }

    /// The bundled English bank: 157 templates over sad, anger and joy.
    pub fn default_bank() -> Self {
        Self::parse(DEFAULT_BANK).expect("bundled template bank is valid")
    }

    pub fn parse(json: &str) -> Result<Self> {
        let file: BankFile =
            serde_json::from_str(json).map_err(|e| Error::TemplateBank(e.to_string()))?;
        let mut pools = BTreeMap::new();
        pools.insert(EmotionLabel::Sad, file.sad);
        pools.insert(EmotionLabel::Anger, file.anger);
        pools.insert(EmotionLabel::Joy, file.joy);
        Self::new(pools)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bank = Self::parse(&text)?;
        let c = bank.counts();
        log::info!(
            "loaded {} templates (sad {}, anger {}, joy {})",
            c.total,
            c.sad,
            c.anger,
            c.joy
        );
        Ok(bank)
    }

    fn validate(&self) -> Result<()> {
        if self.pools.contains_key(&EmotionLabel::Others) {
            return Err(Error::TemplateBank("others must not have templates".into()));
        }
        for label in EmotionLabel::EMOTIONAL {
            let pool = self.pools.get(&label).map(Vec::as_slice).unwrap_or_default();
            for strategy in [Strategy::EffectiveQuestioning, Strategy::ActiveListening] {
                if !pool.iter().any(|t| t.strategy == strategy) {
                    return Err(Error::TemplateBank(format!(
                        "{label} has no {} template",
                        strategy.as_str()
                    )));
                }
            }
            if let Some(t) = pool.iter().find(|t| t.text.trim().is_empty()) {
                return Err(Error::TemplateBank(format!("empty {label} template {t:?}")));
            }
        }
        Ok(())
    }

    pub fn templates(&self, label: EmotionLabel) -> &[Template] {
        self.pools.get(&label).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn counts(&self) -> BankCounts {
        let sad = self.templates(EmotionLabel::Sad).len();
        let anger = self.templates(EmotionLabel::Anger).len();
        let joy = self.templates(EmotionLabel::Joy).len();
        BankCounts {
            sad,
            anger,
            joy,
            total: sad + anger + joy,
        }
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.pools.values().flatten().any(|t| t.text == text)
    }

    /// Pick a probe for `label`. `probes_used` counts earlier probes in the
    /// session and only matters under [`TemplatePolicy::AlternateStrategy`].
    pub fn select<R: Rng + ?Sized>(
        &self,
        label: EmotionLabel,
        rng: &mut R,
        probes_used: usize,
        policy: TemplatePolicy,
    ) -> Result<&Template> {
        if !label.is_emotional() {
            return Err(Error::InvalidInput("no probe templates for others".into()));
        }
        let pool = self.templates(label);
        let chosen = match policy {
            TemplatePolicy::Uniform => pool.choose(rng),
            TemplatePolicy::AlternateStrategy => {
                let want = if probes_used % 2 == 0 {
                    Strategy::EffectiveQuestioning
                } else {
                    Strategy::ActiveListening
                };
                let sub: Vec<&Template> = pool.iter().filter(|t| t.strategy == want).collect();
                sub.choose(rng).copied()
            }
        };
        chosen.ok_or_else(|| Error::TemplateBank(format!("empty pool for {label}")))
    }
}
