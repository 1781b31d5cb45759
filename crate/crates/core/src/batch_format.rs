//! The playthrough batch file: the exchange format for uploaded and
//! simulated playthroughs.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "storylines": [
//!     {
//!       "id": "s1",
//!       "player_profile": null,
//!       "rounds": [
//!         { "gm_text": "...", "player_text": "...", "triggered_rule_ids": [] }
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Rounds are implicitly numbered from 1. A round may carry an explicit
//! `round` number on input; it must then match its position. Exports never
//! emit it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BatchId, ModelError, NarrativeState, PlaythroughBatch, RuleId, Storyline, StorylineId,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchFile {
    pub format_version: u32,
    pub storylines: Vec<StorylineRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorylineRecord {
    pub id: String,
    pub player_profile: Option<String>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    #[serde(default, skip_serializing)]
    pub round: Option<u32>,
    pub gm_text: String,
    pub player_text: String,
    #[serde(default)]
    pub triggered_rule_ids: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BatchFormatError {
    #[error("malformed batch document at {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u32),
    #[error("{path}: timestep gap at round {expected}")]
    TimestepGap { path: String, expected: u32 },
    #[error("{path}: round number {found} is out of order (expected {expected})")]
    RoundOutOfOrder {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

/// Parses a batch document and validates every batch invariant.
pub fn parse_batch(bytes: &[u8], batch_id: BatchId) -> Result<PlaythroughBatch, BatchFormatError> {
    let file = parse_batch_file(bytes)?;
    file.into_batch(batch_id)
}

pub fn parse_batch_file(bytes: &[u8]) -> Result<BatchFile, BatchFormatError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let file: BatchFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        BatchFormatError::Malformed {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    if file.format_version != FORMAT_VERSION {
        return Err(BatchFormatError::UnsupportedVersion(file.format_version));
    }
    Ok(file)
}

impl BatchFile {
    pub fn into_batch(self, batch_id: BatchId) -> Result<PlaythroughBatch, BatchFormatError> {
        let mut storylines = Vec::with_capacity(self.storylines.len());
        for (i, rec) in self.storylines.into_iter().enumerate() {
            let id = StorylineId(rec.id);
            let mut states = Vec::with_capacity(rec.rounds.len());
            for (j, round) in rec.rounds.into_iter().enumerate() {
                let expected = j as u32 + 1;
                let path = format!("storylines[{i}].rounds[{j}]");
                match round.round {
                    Some(n) if n > expected => {
                        return Err(BatchFormatError::TimestepGap { path, expected })
                    }
                    Some(n) if n < expected => {
                        return Err(BatchFormatError::RoundOutOfOrder {
                            path,
                            expected,
                            found: n,
                        })
                    }
                    _ => {}
                }
                states.push(NarrativeState {
                    storyline_id: id.clone(),
                    timestep: expected,
                    gm_text: round.gm_text,
                    player_text: round.player_text,
                    summary: None,
                    triggered_rule_ids: round.triggered_rule_ids.into_iter().map(RuleId).collect(),
                });
            }
            storylines.push(Storyline {
                id,
                display_color: String::new(),
                player_profile: rec.player_profile,
                states,
            });
        }
        Ok(PlaythroughBatch::new(batch_id, storylines)?)
    }

    pub fn from_storylines<'a>(storylines: impl IntoIterator<Item = &'a Storyline>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            storylines: storylines.into_iter().map(StorylineRecord::from).collect(),
        }
    }

    /// Canonical text: pretty-printed with keys in declaration order and a
    /// trailing newline.
    pub fn to_canonical_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("batch file serializes");
        s.push('\n');
        s
    }
}

impl From<&Storyline> for StorylineRecord {
    fn from(s: &Storyline) -> Self {
        Self {
            id: s.id.0.clone(),
            player_profile: s.player_profile.clone(),
            rounds: s
                .states
                .iter()
                .map(|st| RoundRecord {
                    round: None,
                    gm_text: st.gm_text.clone(),
                    player_text: st.player_text.clone(),
                    triggered_rule_ids: st.triggered_rule_ids.iter().map(|r| r.0.clone()).collect(),
                })
                .collect(),
        }
    }
}

pub fn serialize_batch(batch: &PlaythroughBatch) -> String {
    BatchFile::from_storylines(&batch.storylines).to_canonical_string()
}
