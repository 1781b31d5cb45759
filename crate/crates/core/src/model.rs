//! Domain types shared by every part of the engine.
//!
//! A playthrough is stored only as its textual record: one [`NarrativeState`]
//! per completed round, grouped into a [`Storyline`], grouped into a
//! [`PlaythroughBatch`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Token used for states the classifier could not label.
pub const UNCLASSIFIED: &str = "UNCLASSIFIED";

/// Upper bound on the number of values a dimension may declare.
pub const MAX_DIMENSION_VALUES: usize = 9;
pub const MIN_DIMENSION_VALUES: usize = 2;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(StorylineId);
string_id!(RuleId);
string_id!(
    /// Dimensions are identified by their (project-unique) name.
    DimensionId
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatchId(pub u64);

impl fmt::Display for BatchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Character {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub is_protagonist: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Storyworld {
    pub world_description: String,
    pub characters: Vec<Character>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoryworldViolation {
    #[error("empty world description")]
    EmptyWorldDescription,
    #[error("no characters")]
    NoCharacters,
    #[error("character {0} has an empty name")]
    EmptyCharacterName(usize),
    #[error("duplicate character name {0:?}")]
    DuplicateCharacterName(String),
    #[error("no protagonist")]
    NoProtagonist,
    #[error("multiple protagonists")]
    MultipleProtagonists,
}

impl Storyworld {
    pub fn protagonist(&self) -> Option<&Character> {
        self.characters.iter().find(|c| c.is_protagonist)
    }
}

/// Checks every storyworld invariant and reports all violations at once.
pub fn validate_storyworld(sw: &Storyworld) -> Result<(), Vec<StoryworldViolation>> {
    let mut violations = Vec::new();
    if sw.world_description.trim().is_empty() {
        violations.push(StoryworldViolation::EmptyWorldDescription);
    }
    if sw.characters.is_empty() {
        violations.push(StoryworldViolation::NoCharacters);
    }
    let mut seen = HashSet::new();
    for (i, c) in sw.characters.iter().enumerate() {
        if c.name.trim().is_empty() {
            violations.push(StoryworldViolation::EmptyCharacterName(i));
        } else if !seen.insert(c.name.trim()) {
            violations.push(StoryworldViolation::DuplicateCharacterName(c.name.clone()));
        }
    }
    if !sw.characters.is_empty() {
        match sw.characters.iter().filter(|c| c.is_protagonist).count() {
            0 => violations.push(StoryworldViolation::NoProtagonist),
            1 => {}
            _ => violations.push(StoryworldViolation::MultipleProtagonists),
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: RuleId,
    pub condition: String,
    pub effect: String,
    /// Persistent effects keep steering every following game-master turn.
    #[serde(default)]
    pub persistent: bool,
}

impl Rule {
    pub fn new(id: impl Into<String>, condition: impl Into<String>, effect: impl Into<String>) -> Self {
        Self {
            id: RuleId(id.into()),
            condition: condition.into(),
            effect: effect.into(),
            persistent: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.condition.trim().is_empty() || self.effect.trim().is_empty() {
            return Err(ModelError::EmptyRule(self.id.clone()));
        }
        Ok(())
    }
}

/// One completed round of one storyline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeState {
    pub storyline_id: StorylineId,
    pub timestep: u32,
    pub gm_text: String,
    pub player_text: String,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub triggered_rule_ids: BTreeSet<RuleId>,
}

impl NarrativeState {
    pub fn round_text(&self) -> String {
        format!("{}\n{}", self.gm_text, self.player_text)
    }

    pub fn key(&self) -> StateRef {
        StateRef::new(self.storyline_id.clone(), self.timestep)
    }
}

/// Address of a narrative state inside a batch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateRef {
    pub storyline_id: StorylineId,
    pub timestep: u32,
}

impl StateRef {
    pub fn new(storyline_id: impl Into<StorylineId>, timestep: u32) -> Self {
        Self {
            storyline_id: storyline_id.into(),
            timestep,
        }
    }
}

impl From<String> for StorylineId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl fmt::Display for StateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@t{}", self.storyline_id, self.timestep)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Storyline {
    pub id: StorylineId,
    pub display_color: String,
    #[serde(default)]
    pub player_profile: Option<String>,
    pub states: Vec<NarrativeState>,
}

impl Storyline {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, timestep: u32) -> Option<&NarrativeState> {
        if timestep == 0 {
            return None;
        }
        self.states.get(timestep as usize - 1)
    }

    /// Concatenated round texts for rounds `1..=timestep`.
    pub fn cumulative_text(&self, timestep: u32) -> String {
        self.states
            .iter()
            .take(timestep as usize)
            .map(|s| s.round_text())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#9467bd", "#2ca02c", "#d62728", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Display color for the storyline at `index` in its batch.
pub fn storyline_color(index: usize) -> String {
    PALETTE[index % PALETTE.len()].to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaythroughBatch {
    pub batch_id: BatchId,
    pub storylines: Vec<Storyline>,
    pub t_max: u32,
}

impl PlaythroughBatch {
    /// Builds a batch, assigning colors and checking every invariant.
    pub fn new(batch_id: BatchId, mut storylines: Vec<Storyline>) -> Result<Self, ModelError> {
        for (i, s) in storylines.iter_mut().enumerate() {
            s.display_color = storyline_color(i);
        }
        let batch = Self {
            batch_id,
            t_max: storylines.iter().map(|s| s.len() as u32).max().unwrap_or(0),
            storylines,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut ids = HashSet::new();
        for (i, s) in self.storylines.iter().enumerate() {
            if !ids.insert(&s.id) {
                return Err(ModelError::DuplicateStoryline {
                    path: format!("storylines[{i}].id"),
                    id: s.id.clone(),
                });
            }
            if s.states.is_empty() {
                return Err(ModelError::EmptyStoryline {
                    path: format!("storylines[{i}].rounds"),
                });
            }
            for (j, st) in s.states.iter().enumerate() {
                let path = format!("storylines[{i}].rounds[{j}]");
                if st.timestep as usize != j + 1 {
                    return Err(ModelError::TimestepGap {
                        path,
                        expected: j as u32 + 1,
                    });
                }
                if st.storyline_id != s.id {
                    return Err(ModelError::ForeignState { path });
                }
                if st.gm_text.trim().is_empty() && st.player_text.trim().is_empty() {
                    return Err(ModelError::EmptyRound { path });
                }
            }
        }
        let t_max = self.storylines.iter().map(|s| s.len() as u32).max().unwrap_or(0);
        if t_max != self.t_max {
            return Err(ModelError::WrongTMax {
                declared: self.t_max,
                actual: t_max,
            });
        }
        Ok(())
    }

    pub fn storyline(&self, id: &StorylineId) -> Option<&Storyline> {
        self.storylines.iter().find(|s| &s.id == id)
    }

    pub fn storyline_index(&self, id: &StorylineId) -> Option<usize> {
        self.storylines.iter().position(|s| &s.id == id)
    }

    pub fn state(&self, key: &StateRef) -> Option<&NarrativeState> {
        self.storyline(&key.storyline_id)?.state(key.timestep)
    }

    pub fn states(&self) -> impl Iterator<Item = &NarrativeState> {
        self.storylines.iter().flat_map(|s| s.states.iter())
    }

    pub fn state_count(&self) -> usize {
        self.storylines.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.state_count() == 0
    }

    /// Every state key in canonical order: storylines by index, then timestep.
    pub fn state_keys(&self) -> Vec<StateRef> {
        self.states().map(NarrativeState::key).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionOrigin {
    Author,
    DataDerived,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub id: DimensionId,
    pub name: String,
    pub description: String,
    pub values: Vec<String>,
    pub origin: DimensionOrigin,
}

impl Dimension {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        values: Vec<String>,
        origin: DimensionOrigin,
    ) -> Result<Self, ModelError> {
        let name = name.into();
        let dim = Self {
            id: DimensionId(name.clone()),
            name,
            description: description.into(),
            values,
            origin,
        };
        dim.validate()?;
        Ok(dim)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        validate_dimension_name(&self.name)?;
        validate_values(&self.values)
    }

    pub fn value_index(&self, label: &Label) -> Option<usize> {
        match label {
            Label::Value(v) => self.values.iter().position(|x| x == v),
            Label::Unclassified => Some(self.values.len()),
        }
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.value_index(label).is_some()
    }

    /// Stable digest of the value schema, used in cache keys.
    pub fn schema_hash(&self) -> String {
        crate::hash::digest_parts(
            std::iter::once(self.name.as_str())
                .chain(std::iter::once(self.description.as_str()))
                .chain(self.values.iter().map(String::as_str)),
        )
    }
}

pub fn validate_dimension_name(name: &str) -> Result<(), ModelError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !name.starts_with(|c: char| c.is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(ModelError::BadDimensionName(name.to_string()))
    }
}

/// Value lists hold 2..=9 distinct, single-line tokens. `,` and `@` are
/// reserved for graph node ids.
pub fn validate_values(values: &[String]) -> Result<(), ModelError> {
    if values.len() < MIN_DIMENSION_VALUES || values.len() > MAX_DIMENSION_VALUES {
        return Err(ModelError::ValueCount(values.len()));
    }
    let mut seen = HashSet::new();
    for v in values {
        let reserved = v.contains(['\n', ',', '@']) || v == UNCLASSIFIED;
        if v.trim().is_empty() || v.trim() != v || reserved {
            return Err(ModelError::BadValueToken(v.clone()));
        }
        if !seen.insert(v.as_str()) {
            return Err(ModelError::DuplicateValue(v.clone()));
        }
    }
    Ok(())
}

/// A classifier verdict: one of the dimension's values or the sentinel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Value(String),
    Unclassified,
}

impl Label {
    pub fn value(v: impl Into<String>) -> Self {
        Label::Value(v.into())
    }

    pub fn as_str(&self) -> &str {
        match self {
            Label::Value(v) => v,
            Label::Unclassified => UNCLASSIFIED,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        if s == UNCLASSIFIED {
            Label::Unclassified
        } else {
            Label::Value(s.to_string())
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Label::from(s.as_str()))
    }
}

/// Per-state labels of one dimension over one batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionAssignment {
    pub dimension_id: DimensionId,
    pub batch_id: BatchId,
    #[serde(with = "assignment_entries")]
    pub assignments: BTreeMap<StateRef, Label>,
}

impl DimensionAssignment {
    pub fn get(&self, key: &StateRef) -> Option<&Label> {
        self.assignments.get(key)
    }

    pub fn unclassified_count(&self) -> usize {
        self.assignments
            .values()
            .filter(|l| **l == Label::Unclassified)
            .count()
    }

    /// Checks totality over `batch` and that every label is in `dim`'s domain.
    pub fn check(&self, batch: &PlaythroughBatch, dim: &Dimension) -> Result<(), ModelError> {
        if self.batch_id != batch.batch_id {
            return Err(ModelError::BatchMismatch {
                expected: batch.batch_id,
                found: self.batch_id,
            });
        }
        if self.dimension_id != dim.id {
            return Err(ModelError::DimensionMismatch {
                expected: dim.id.clone(),
                found: self.dimension_id.clone(),
            });
        }
        for key in batch.state_keys() {
            match self.assignments.get(&key) {
                None => return Err(ModelError::NotTotal(key)),
                Some(l) if !dim.contains(l) => {
                    return Err(ModelError::OutOfDomain {
                        state: key,
                        label: l.to_string(),
                    })
                }
                Some(_) => {}
            }
        }
        if self.assignments.len() != batch.state_count() {
            let extra = self
                .assignments
                .keys()
                .find(|k| batch.state(k).is_none())
                .cloned()
                .expect("assignment larger than batch has a foreign key");
            return Err(ModelError::UnknownState(extra));
        }
        Ok(())
    }
}

mod assignment_entries {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        storyline_id: StorylineId,
        timestep: u32,
        value: Label,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<StateRef, Label>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(k, v)| Entry {
            storyline_id: k.storyline_id.clone(),
            timestep: k.timestep,
            value: v.clone(),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<StateRef, Label>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries
            .into_iter()
            .map(|e| (StateRef::new(e.storyline_id, e.timestep), e.value))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("{path}: duplicate storyline id {id}")]
    DuplicateStoryline { path: String, id: StorylineId },
    #[error("{path}: storyline has no rounds")]
    EmptyStoryline { path: String },
    #[error("{path}: timestep gap at round {expected}")]
    TimestepGap { path: String, expected: u32 },
    #[error("{path}: state belongs to a different storyline")]
    ForeignState { path: String },
    #[error("{path}: empty round text")]
    EmptyRound { path: String },
    #[error("t_max is {declared} but the longest storyline has {actual} rounds")]
    WrongTMax { declared: u32, actual: u32 },
    #[error("rule {0} has an empty condition or effect")]
    EmptyRule(RuleId),
    #[error("bad dimension name {0:?}: expected a snake_case token")]
    BadDimensionName(String),
    #[error("a dimension needs {MIN_DIMENSION_VALUES}..={MAX_DIMENSION_VALUES} values, got {0}")]
    ValueCount(usize),
    #[error("bad value token {0:?}")]
    BadValueToken(String),
    #[error("duplicate value {0:?}")]
    DuplicateValue(String),
    #[error("assignment is for batch {found}, expected batch {expected}")]
    BatchMismatch { expected: BatchId, found: BatchId },
    #[error("assignment is for dimension {found}, expected {expected}")]
    DimensionMismatch {
        expected: DimensionId,
        found: DimensionId,
    },
    #[error("assignment has no entry for state {0}")]
    NotTotal(StateRef),
    #[error("assignment labels state {state} with {label:?}, which is not in the dimension's domain")]
    OutOfDomain { state: StateRef, label: String },
    #[error("assignment refers to unknown state {0}")]
    UnknownState(StateRef),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn duck_world() -> Storyworld {
        Storyworld {
            world_description: "The ducks and geese sharing the pond grow increasingly agitated as winter approaches.".into(),
            characters: vec![
                Character {
                    name: "Duckling".into(),
                    description: "A weak duckling who's just a kid.".into(),
                    is_protagonist: true,
                },
                Character {
                    name: "Duck Mom".into(),
                    description: "Duckling's Mom.".into(),
                    is_protagonist: false,
                },
                Character {
                    name: "Goose".into(),
                    description: "The bully in the pond.".into(),
                    is_protagonist: false,
                },
            ],
        }
    }

    #[test]
    fn duck_storyworld_is_valid() {
        assert_eq!(validate_storyworld(&duck_world()), Ok(()));
        assert_eq!(duck_world().protagonist().unwrap().name, "Duckling");
    }

    #[test]
    fn zero_characters_reported() {
        let sw = Storyworld {
            world_description: "pond".into(),
            characters: vec![],
        };
        let errs = validate_storyworld(&sw).unwrap_err();
        assert_eq!(errs, vec![StoryworldViolation::NoCharacters]);
        assert_eq!(errs[0].to_string(), "no characters");
    }

    #[test]
    fn every_violation_listed() {
        let mut sw = duck_world();
        sw.world_description = " ".into();
        sw.characters[1].is_protagonist = true;
        sw.characters[2].name = "Duckling".into();
        let errs = validate_storyworld(&sw).unwrap_err();
        assert!(errs.contains(&StoryworldViolation::EmptyWorldDescription));
        assert!(errs.contains(&StoryworldViolation::MultipleProtagonists));
        assert!(errs.contains(&StoryworldViolation::DuplicateCharacterName("Duckling".into())));
        assert_eq!(
            StoryworldViolation::MultipleProtagonists.to_string(),
            "multiple protagonists"
        );
    }

    #[test]
    fn missing_protagonist() {
        let mut sw = duck_world();
        sw.characters[0].is_protagonist = false;
        assert_eq!(
            validate_storyworld(&sw).unwrap_err(),
            vec![StoryworldViolation::NoProtagonist]
        );
    }

    #[test]
    fn value_lists() {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(validate_values(&v(&["low", "medium", "high"])).is_ok());
        assert_eq!(validate_values(&v(&["only"])), Err(ModelError::ValueCount(1)));
        assert_eq!(
            validate_values(&v(&["a", "a"])),
            Err(ModelError::DuplicateValue("a".into()))
        );
        assert!(validate_values(&v(&["a", UNCLASSIFIED])).is_err());
        assert!(validate_values(&v(&["a", "b\nc"])).is_err());
        assert!(validate_values(&v(&["a", "b,c"])).is_err());
        assert!(validate_values(&v(&["a", "b", "c", "d", "e", "f", "g", "h", "i"])).is_ok());
        assert_eq!(
            validate_values(&v(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"])),
            Err(ModelError::ValueCount(10))
        );
    }

    #[test]
    fn dimension_names() {
        assert!(validate_dimension_name("duckling_courage").is_ok());
        assert!(validate_dimension_name("").is_err());
        assert!(validate_dimension_name("Duckling courage").is_err());
        assert!(validate_dimension_name("1st").is_err());
    }

    #[test]
    fn unclassified_orders_last() {
        let d = Dimension::new(
            "d1",
            "",
            vec!["low".into(), "high".into()],
            DimensionOrigin::Author,
        )
        .unwrap();
        assert_eq!(d.value_index(&Label::value("high")), Some(1));
        assert_eq!(d.value_index(&Label::Unclassified), Some(2));
        assert_eq!(d.value_index(&Label::value("mid")), None);
    }

    #[test]
    fn label_serde() {
        let json = serde_json::to_string(&vec![Label::value("low"), Label::Unclassified]).unwrap();
        assert_eq!(json, r#"["low","UNCLASSIFIED"]"#);
        let back: Vec<Label> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![Label::value("low"), Label::Unclassified]);
    }

    #[test]
    fn colors_cycle_by_index() {
        assert_eq!(storyline_color(0), storyline_color(10));
        assert_ne!(storyline_color(0), storyline_color(1));
    }
}
