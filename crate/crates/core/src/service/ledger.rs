//! Append-only vote ledger. The latest vote per (session, message) counts;
//! every accepted change stays in the file as an audit trail.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{Vote, VoteLedgerView};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub session_id: String,
    pub message_id: u64,
    pub vote: Vote,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Default)]
pub struct FeedbackLedger {
    path: Option<PathBuf>,
    file: Option<File>,
    current: HashMap<(String, u64), Vote>,
    audit: Vec<FeedbackRecord>,
}

impl FeedbackLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open or create a ledger file, replaying existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut ledger = Self { path: Some(path.clone()), ..Self::default() };
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: FeedbackRecord =
                    serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
                ledger.apply(rec);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        ledger.file = Some(file);
        Ok(ledger)
    }

    fn apply(&mut self, rec: FeedbackRecord) {
        self.current.insert((rec.session_id.clone(), rec.message_id), rec.vote);
        self.audit.push(rec);
    }

    /// Append a vote. Repeating the standing vote is a no-op; returns whether
    /// anything was written.
    pub fn record(&mut self, rec: FeedbackRecord) -> Result<bool> {
        if self.current.get(&(rec.session_id.clone(), rec.message_id)) == Some(&rec.vote) {
            return Ok(false);
        }
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new("ledger"));
            // one write per line keeps appends whole
            f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))?;
        }
        self.apply(rec);
        Ok(true)
    }

    pub fn vote_for(&self, session_id: &str, message_id: u64) -> Option<Vote> {
        self.current.get(&(session_id.to_string(), message_id)).copied()
    }

    pub fn audit(&self) -> &[FeedbackRecord] {
        &self.audit
    }

    pub fn view(&self) -> VoteLedgerView {
        let mut v = VoteLedgerView::default();
        for vote in self.current.values() {
            match vote {
                Vote::Up => v.upvotes += 1,
                Vote::Down => v.downvotes += 1,
            }
        }
        v
    }
}
