//! Game-master sessions: alternating game-master and player turns, rule
//! checks at the end of every round, and effect injection into the next
//! game-master prompt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch_format::BatchFile;
use crate::fanout::parallel_map;
use crate::model::{
    validate_storyworld, ModelError, NarrativeState, Rule, RuleId, Storyline, StorylineId, Storyworld,
    StoryworldViolation,
};
use crate::oracle::{Gateway, OracleError, OracleRequest, Purpose};
use crate::prompts::{clamp_sentences, first_line_token, templates, PromptError};

/// Attempts per rule check before an unparsable verdict counts as "not triggered".
pub const RULE_CHECK_ATTEMPTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    GameMaster,
    Player,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTrigger {
    pub rule_id: RuleId,
    pub round: u32,
    pub verdict_rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerLogEntry {
    pub round: u32,
    pub rule_id: RuleId,
}

/// What the session accepts next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    GmTurn,
    PlayerTurn,
    Finalize,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid storyworld: {}", join_violations(.0))]
    InvalidStoryworld(Vec<StoryworldViolation>),
    #[error(transparent)]
    InvalidRule(#[from] ModelError),
    #[error("duplicate rule id {0}")]
    DuplicateRule(RuleId),
    #[error("out of order: the session expects {expected:?}")]
    OutOfOrder { expected: Phase },
    #[error("player input is empty")]
    EmptyInput,
    #[error("model call failed: {0}")]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn join_violations(v: &[StoryworldViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub storyworld: Storyworld,
    pub rules: Vec<Rule>,
    pub transcript: Vec<Turn>,
    pub round_index: u32,
    /// One-shot effects for the next game-master turn.
    pub pending_effects: Vec<String>,
    /// Effects of triggered persistent rules; injected into every later turn.
    #[serde(default)]
    pub standing_effects: Vec<String>,
    pub trigger_log: Vec<TriggerLogEntry>,
    pub states: Vec<NarrativeState>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// `Game master: ...` / `<protagonist>: ...` lines, one per turn.
pub fn render_transcript(turns: &[Turn], protagonist: &str) -> String {
    if turns.is_empty() {
        return "(the story has not started yet)".into();
    }
    turns
        .iter()
        .map(|t| match t.role {
            Role::GameMaster => format!("Game master: {}", t.text),
            Role::Player => format!("{protagonist}: {}", t.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Triggered,
    NotTriggered,
}

fn parse_verdict(reply: &str) -> Option<(Verdict, String)> {
    let token = first_line_token(reply)?;
    let verdict = match token.to_ascii_uppercase().replace(' ', "_").as_str() {
        "TRIGGERED" => Verdict::Triggered,
        "NOT_TRIGGERED" => Verdict::NotTriggered,
        _ => return None,
    };
    let rationale = reply
        .trim()
        .lines()
        .skip(1)
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    Some((verdict, clamp_sentences(&rationale, 1)))
}

pub fn start_session(
    session_id: impl Into<String>,
    storyworld: Storyworld,
    rules: Vec<Rule>,
) -> Result<Session, SessionError> {
    validate_storyworld(&storyworld).map_err(SessionError::InvalidStoryworld)?;
    let mut seen = std::collections::HashSet::new();
    for r in &rules {
        r.validate()?;
        if !seen.insert(&r.id) {
            return Err(SessionError::DuplicateRule(r.id.clone()));
        }
    }
    Ok(Session {
        session_id: session_id.into(),
        storyworld,
        rules,
        transcript: Vec::new(),
        round_index: 0,
        pending_effects: Vec::new(),
        standing_effects: Vec::new(),
        trigger_log: Vec::new(),
        states: Vec::new(),
        warnings: Vec::new(),
        seed: None,
    })
}

impl Session {
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn phase(&self) -> Phase {
        match self.transcript.len() - 2 * self.round_index as usize {
            0 => Phase::GmTurn,
            1 => Phase::PlayerTurn,
            _ => Phase::Finalize,
        }
    }

    fn expect(&self, phase: Phase) -> Result<(), SessionError> {
        let expected = self.phase();
        if expected == phase {
            Ok(())
        } else {
            Err(SessionError::OutOfOrder { expected })
        }
    }

    pub fn protagonist_name(&self) -> &str {
        self.storyworld.protagonist().map_or("the protagonist", |c| c.name.as_str())
    }

    pub fn transcript_text(&self) -> String {
        render_transcript(&self.transcript, self.protagonist_name())
    }

    /// Directives the next game-master turn will receive.
    pub fn directives(&self) -> Vec<&str> {
        self.standing_effects
            .iter()
            .chain(&self.pending_effects)
            .map(String::as_str)
            .collect()
    }

    pub fn gm_prompt(&self) -> Result<String, SessionError> {
        let characters = self
            .storyworld
            .characters
            .iter()
            .map(|c| format!("- {}: {}", c.name, c.description))
            .collect::<Vec<_>>()
            .join("\n");
        let directives = self.directives();
        let directives = if directives.is_empty() {
            "(none)".to_string()
        } else {
            directives.iter().map(|d| format!("- {d}")).collect::<Vec<_>>().join("\n")
        };
        let round = (self.round_index + 1).to_string();
        Ok(templates().gm_turn.render(&[
            ("protagonist", self.protagonist_name()),
            ("world", &self.storyworld.world_description),
            ("characters", &characters),
            ("transcript", &self.transcript_text()),
            ("directives", &directives),
            ("round", &round),
        ])?)
    }

    /// Generates the game master's turn. Pending effects are cleared only
    /// once the turn succeeds.
    pub fn gm_turn(&mut self, gateway: &Gateway) -> Result<String, SessionError> {
        self.expect(Phase::GmTurn)?;
        let prompt = self.gm_prompt()?;
        let req = OracleRequest::new(Purpose::GmTurn, templates().gm_turn.id(), prompt).with_seed(self.seed);
        let text = gateway.complete(&req)?.trim().to_string();
        self.transcript.push(Turn {
            role: Role::GameMaster,
            text: text.clone(),
        });
        self.pending_effects.clear();
        Ok(text)
    }

    pub fn player_turn(&mut self, input: &str) -> Result<(), SessionError> {
        self.expect(Phase::PlayerTurn)?;
        let input = input.trim();
        if input.is_empty() {
            return Err(SessionError::EmptyInput);
        }
        self.transcript.push(Turn {
            role: Role::Player,
            text: input.to_string(),
        });
        Ok(())
    }

    fn check_rule(&self, gateway: &Gateway, rule: &Rule, transcript: &str) -> Result<Option<String>, String> {
        let t = &templates().rule_check;
        let prompt = t
            .render(&[("condition", &rule.condition), ("transcript", transcript)])
            .map_err(|e| e.to_string())?;
        let req = OracleRequest::new(Purpose::RuleCheck, t.id(), prompt).with_seed(self.seed);
        let mut last = String::new();
        for _ in 0..RULE_CHECK_ATTEMPTS {
            let reply = gateway.complete(&req).map_err(|e| e.to_string())?;
            match parse_verdict(&reply) {
                Some((Verdict::Triggered, rationale)) => return Ok(Some(rationale)),
                Some((Verdict::NotTriggered, _)) => return Ok(None),
                None => last = reply.lines().next().unwrap_or_default().to_string(),
            }
        }
        Err(format!("unparsable verdict {last:?}"))
    }

    /// Closes the round: builds its narrative state and checks every rule
    /// against the whole transcript. Checks run concurrently and are joined
    /// in rule order.
    pub fn finalize_round(
        &mut self,
        gateway: &Gateway,
        max_in_flight: usize,
    ) -> Result<(NarrativeState, Vec<RuleTrigger>), SessionError> {
        self.expect(Phase::Finalize)?;
        let round = self.round_index + 1;
        let transcript = self.transcript_text();
        let verdicts = parallel_map(&self.rules, max_in_flight, |r| self.check_rule(gateway, r, &transcript));

        let mut triggers = Vec::new();
        for (rule, verdict) in self.rules.iter().zip(verdicts) {
            match verdict {
                Ok(Some(rationale)) => triggers.push(RuleTrigger {
                    rule_id: rule.id.clone(),
                    round,
                    verdict_rationale: rationale,
                }),
                Ok(None) => {}
                Err(e) => self
                    .warnings
                    .push(format!("round {round}: rule {} treated as not triggered: {e}", rule.id)),
            }
        }
        for trig in &triggers {
            let rule = self.rules.iter().find(|r| r.id == trig.rule_id).expect("rule exists");
            if rule.persistent {
                if !self.standing_effects.contains(&rule.effect) {
                    self.standing_effects.push(rule.effect.clone());
                }
            } else {
                self.pending_effects.push(rule.effect.clone());
            }
            self.trigger_log.push(TriggerLogEntry {
                round,
                rule_id: trig.rule_id.clone(),
            });
        }

        let n = self.transcript.len();
        let state = NarrativeState {
            storyline_id: StorylineId(self.session_id.clone()),
            timestep: round,
            gm_text: self.transcript[n - 2].text.clone(),
            player_text: self.transcript[n - 1].text.clone(),
            summary: None,
            triggered_rule_ids: triggers.iter().map(|t| t.rule_id.clone()).collect(),
        };
        self.states.push(state.clone());
        self.round_index = round;
        Ok((state, triggers))
    }

    pub fn to_storyline(&self, player_profile: Option<String>) -> Storyline {
        Storyline {
            id: StorylineId(self.session_id.clone()),
            display_color: String::new(),
            player_profile,
            states: self.states.clone(),
        }
    }

    /// The finished rounds as a one-storyline batch file.
    pub fn to_batch_file(&self, player_profile: Option<String>) -> BatchFile {
        BatchFile::from_storylines([&self.to_storyline(player_profile)])
    }
}
