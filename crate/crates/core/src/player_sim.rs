//! Simulated playthroughs: sessions whose player turns come from a model
//! conditioned on a player archetype.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fanout::parallel_map;
use crate::model::{BatchId, ModelError, PlaythroughBatch, Rule, Storyline, Storyworld};
use crate::oracle::{Gateway, OracleRequest, Purpose};
use crate::prompts::templates;
use crate::runtime::{start_session, Session, SessionError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerProfile {
    pub name: String,
    pub description: String,
}

pub const DEFAULT_PLAYTHROUGHS: usize = 3;
pub const DEFAULT_ROUNDS: u32 = 5;

/// The built-in archetypes.
pub fn builtin_profiles() -> Vec<PlayerProfile> {
    [
        (
            "role_player",
            "prioritize narrative immersion and character development by mimicking the actions their character would take in the gaming world.",
        ),
        (
            "explorer",
            "motivated by curiosity and derive enjoyment from discovering, mapping, and understanding the game world, its systems, and hidden possibilities.",
        ),
        (
            "killer",
            "motivated by competition and domination, deriving enjoyment from imposing on, defeating, or disrupting other players within the game world.",
        ),
        (
            "clueless",
            "engage with a game without a clear understanding of its systems, goals, or optimal strategies, often acting through trial-and-error, guesswork, or playful misunderstanding rather than informed decision-making.",
        ),
    ]
    .into_iter()
    .map(|(name, description)| PlayerProfile {
        name: name.into(),
        description: description.into(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileRegistry {
    profiles: Vec<PlayerProfile>,
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        Self {
            profiles: builtin_profiles(),
        }
    }
}

impl ProfileRegistry {
    pub fn get(&self, name: &str) -> Option<&PlayerProfile> {
        self.profiles.iter().find(|p| p.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.profiles.iter().map(|p| p.name.as_str())
    }

    pub fn register(&mut self, profile: PlayerProfile) -> Result<(), SimulationError> {
        if self.get(&profile.name).is_some() {
            return Err(SimulationError::DuplicateProfile(profile.name));
        }
        self.profiles.push(profile);
        Ok(())
    }
}

fn default_profiles() -> Vec<String> {
    vec!["role_player".into(), "explorer".into(), "clueless".into()]
}

fn default_playthroughs() -> usize {
    DEFAULT_PLAYTHROUGHS
}

fn default_rounds() -> u32 {
    DEFAULT_ROUNDS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub storyworld: Storyworld,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default = "default_profiles")]
    pub profiles: Vec<String>,
    #[serde(default = "default_playthroughs")]
    pub playthroughs_per_request: usize,
    #[serde(default = "default_rounds")]
    pub rounds_per_playthrough: u32,
    #[serde(default)]
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(storyworld: Storyworld, rules: Vec<Rule>) -> Self {
        Self {
            storyworld,
            rules,
            profiles: default_profiles(),
            playthroughs_per_request: DEFAULT_PLAYTHROUGHS,
            rounds_per_playthrough: DEFAULT_ROUNDS,
            seed: 0,
        }
    }

    pub fn validate(&self, registry: &ProfileRegistry) -> Result<(), SimulationError> {
        if self.playthroughs_per_request == 0 || self.rounds_per_playthrough == 0 {
            return Err(SimulationError::InvalidSpec("counts must be at least 1".into()));
        }
        if self.profiles.is_empty() {
            return Err(SimulationError::InvalidSpec("no player profiles".into()));
        }
        for p in &self.profiles {
            if registry.get(p).is_none() {
                return Err(SimulationError::UnknownProfile(p.clone()));
            }
        }
        // surfaces storyworld and rule problems before any model call
        start_session("check", self.storyworld.clone(), self.rules.clone())?;
        Ok(())
    }

    /// Profile of playthrough `index`: round-robin over `profiles`.
    pub fn profile_for(&self, index: usize) -> &str {
        &self.profiles[index % self.profiles.len()]
    }
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("unknown player profile {0:?}")]
    UnknownProfile(String),
    #[error("player profile {0:?} already registered")]
    DuplicateProfile(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("every playthrough failed: {}", .0.join("; "))]
    AllFailed(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedBatch {
    pub batch: PlaythroughBatch,
    pub warnings: Vec<String>,
}

fn player_prompt(session: &Session, profile: &PlayerProfile) -> Result<String, SessionError> {
    let protagonist = session.storyworld.protagonist();
    Ok(templates().player_turn.render(&[
        ("protagonist", session.protagonist_name()),
        ("protagonist_description", protagonist.map_or("", |c| c.description.as_str())),
        ("world", &session.storyworld.world_description),
        ("profile_name", &profile.name),
        ("profile_description", &profile.description),
        ("transcript", &session.transcript_text()),
    ])?)
}

/// Runs one fresh session for the configured number of rounds. Also returns
/// the session's warnings.
pub fn simulate_playthrough(
    gateway: &Gateway,
    spec: &SimulationSpec,
    profile: &PlayerProfile,
    index: usize,
) -> Result<(Storyline, Vec<String>), SessionError> {
    let seed = spec.seed.wrapping_add(index as u64);
    let mut session =
        start_session(format!("s{}", index + 1), spec.storyworld.clone(), spec.rules.clone())?.with_seed(Some(seed));
    for _ in 0..spec.rounds_per_playthrough {
        session.gm_turn(gateway)?;
        let prompt = player_prompt(&session, profile)?;
        let req = OracleRequest::new(Purpose::PlayerTurn, templates().player_turn.id(), prompt).with_seed(Some(seed));
        let text = gateway.complete(&req)?;
        session.player_turn(&text)?;
        session.finalize_round(gateway, 1)?;
    }
    Ok((session.to_storyline(Some(profile.name.clone())), session.warnings))
}

/// Runs the requested playthroughs concurrently and assembles them in index
/// order. Failed playthroughs become warnings.
pub fn simulate_batch(
    gateway: &Gateway,
    registry: &ProfileRegistry,
    spec: &SimulationSpec,
    batch_id: BatchId,
) -> Result<SimulatedBatch, SimulationError> {
    spec.validate(registry)?;
    let indices: Vec<usize> = (0..spec.playthroughs_per_request).collect();
    let results = parallel_map(&indices, gateway.max_in_flight(), |&i| {
        let profile = registry.get(spec.profile_for(i)).expect("validated");
        simulate_playthrough(gateway, spec, profile, i)
    });
    let mut storylines = Vec::new();
    let mut warnings = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((storyline, w)) => {
                warnings.extend(w.into_iter().map(|w| format!("s{}: {w}", i + 1)));
                storylines.push(storyline);
            }
            Err(e) => {
                let msg = format!("playthrough {} ({}) skipped: {e}", i + 1, spec.profile_for(i));
                warnings.push(msg.clone());
                failures.push(msg);
            }
        }
    }
    if storylines.is_empty() {
        return Err(SimulationError::AllFailed(failures));
    }
    Ok(SimulatedBatch {
        batch: PlaythroughBatch::new(batch_id, storylines)?,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch_format::serialize_batch;
    use crate::model::Character;
    use crate::oracle::{FixtureEntry, Matcher, MockBackend, MockFailure};
    use std::sync::Arc;

    fn world() -> Storyworld {
        Storyworld {
            world_description: "A pond in a city park.".into(),
            characters: vec![Character {
                name: "Duckling".into(),
                description: "The youngest duck.".into(),
                is_protagonist: true,
            }],
        }
    }

    fn fixtures() -> Vec<FixtureEntry> {
        vec![
            FixtureEntry::failing(
                Matcher::Keyword("You are a killer player".into()),
                Some(Purpose::PlayerTurn),
                MockFailure::Refusal,
            ),
            FixtureEntry::choices(Purpose::GmTurn, &["The goose hisses.", "Rain starts to fall."]),
            FixtureEntry::choices(Purpose::PlayerTurn, &["I paddle closer.", "I ask Mom what to do."]),
        ]
    }

    fn gateway() -> Gateway {
        Gateway::new(Arc::new(MockBackend::strict(fixtures()).unwrap()))
    }

    #[test]
    fn profiles_are_verbatim_and_unique() {
        let mut r = ProfileRegistry::default();
        assert_eq!(r.names().collect::<Vec<_>>(), ["role_player", "explorer", "killer", "clueless"]);
        assert!(r.get("role_player").unwrap().description.starts_with("prioritize narrative immersion"));
        assert!(matches!(
            r.register(PlayerProfile {
                name: "explorer".into(),
                description: "x".into()
            }),
            Err(SimulationError::DuplicateProfile(_))
        ));
    }

    #[test]
    fn round_robin() {
        let mut spec = SimulationSpec::new(world(), vec![]);
        spec.profiles = vec!["explorer".into(), "clueless".into()];
        let got: Vec<&str> = (0..4).map(|i| spec.profile_for(i)).collect();
        assert_eq!(got, ["explorer", "clueless", "explorer", "clueless"]);
    }

    #[test]
    fn default_batch_shape() {
        let spec = SimulationSpec::new(world(), vec![]);
        let out = simulate_batch(&gateway(), &ProfileRegistry::default(), &spec, BatchId(1)).unwrap();
        assert_eq!(out.batch.storylines.len(), 3);
        assert_eq!(out.batch.t_max, 5);
        let profiles: Vec<_> = out.batch.storylines.iter().map(|s| s.player_profile.clone().unwrap()).collect();
        assert_eq!(profiles, ["role_player", "explorer", "clueless"]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn single_round() {
        let mut spec = SimulationSpec::new(world(), vec![]);
        spec.rounds_per_playthrough = 1;
        let registry = ProfileRegistry::default();
        let (s, _) = simulate_playthrough(&gateway(), &spec, registry.get("explorer").unwrap(), 0).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn refusals_skip_one_playthrough() {
        let mut spec = SimulationSpec::new(world(), vec![]);
        spec.profiles = vec!["killer".into(), "explorer".into()];
        let out = simulate_batch(&gateway(), &ProfileRegistry::default(), &spec, BatchId(2)).unwrap();
        assert_eq!(out.batch.storylines.len(), 1);
        assert_eq!(out.batch.storylines[0].id.as_str(), "s2");
        assert!(out.warnings[0].contains("killer"));

        spec.profiles = vec!["killer".into()];
        assert!(matches!(
            simulate_batch(&gateway(), &ProfileRegistry::default(), &spec, BatchId(3)),
            Err(SimulationError::AllFailed(_))
        ));
    }

    #[test]
    fn invalid_specs() {
        let registry = ProfileRegistry::default();
        let mut spec = SimulationSpec::new(world(), vec![]);
        spec.rounds_per_playthrough = 0;
        assert!(matches!(spec.validate(&registry), Err(SimulationError::InvalidSpec(_))));
        spec.rounds_per_playthrough = 1;
        spec.profiles = vec!["bard".into()];
        assert!(matches!(spec.validate(&registry), Err(SimulationError::UnknownProfile(_))));
        let parsed: SimulationSpec =
            serde_json::from_value(serde_json::json!({ "storyworld": world() })).unwrap();
        assert_eq!(parsed.playthroughs_per_request, 3);
        assert_eq!(parsed.rounds_per_playthrough, 5);
    }

    #[test]
    fn deterministic_under_a_fixed_seed() {
        let mut spec = SimulationSpec::new(world(), vec![]);
        spec.seed = 7;
        let run = || {
            let out = simulate_batch(&gateway(), &ProfileRegistry::default(), &spec, BatchId(1)).unwrap();
            serialize_batch(&out.batch)
        };
        assert_eq!(run(), run());
    }
}
