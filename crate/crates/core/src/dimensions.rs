//! Narrative dimensions: author-defined, induced from playthrough data, or a
//! mix of both, and the classifier that labels every state of a batch.
//!
//! Induction is a single grouping prompt over per-round summaries. Every
//! induced schema is classified right away and values that label no state
//! are dropped; a schema left with fewer than two values is rejected.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fanout::parallel_map;
use crate::model::{
    validate_dimension_name, validate_values, BatchId, Dimension, DimensionAssignment, DimensionOrigin, Label,
    ModelError, NarrativeState, PlaythroughBatch, StateRef,
};
use crate::oracle::{Gateway, OracleError, OracleRequest, Purpose};
use crate::prompts::{self, clamp_sentences, fenced_block, first_line_token, templates};

/// Default number of data-derived dimensions per request.
pub const DEFAULT_INDUCED_DIMENSIONS: usize = 3;
/// Re-prompts after an unparsable induction reply.
pub const INDUCTION_REPROMPTS: usize = 2;
/// Re-prompts after an out-of-domain classification reply.
pub const CLASSIFY_REPROMPTS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    Author,
    DataDerived,
    MixedValuesFromData,
    MixedNamesFromData,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRequest {
    #[serde(default)]
    pub batch_id: Option<BatchId>,
    pub mode: ExtractionMode,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub values: Option<Vec<String>>,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    DEFAULT_INDUCED_DIMENSIONS
}

impl ExtractionRequest {
    pub fn validate(&self) -> Result<(), DimensionError> {
        let need = |field: &str, present: bool| {
            if present {
                Ok(())
            } else {
                Err(DimensionError::InvalidRequest(format!("{:?} mode needs {field}", self.mode)))
            }
        };
        match self.mode {
            ExtractionMode::Author => {
                need("name", self.name.is_some())?;
                need("description", self.description.is_some())?;
                need("values", self.values.is_some())
            }
            ExtractionMode::MixedValuesFromData => {
                need("name", self.name.is_some())?;
                need("description", self.description.is_some())
            }
            ExtractionMode::DataDerived | ExtractionMode::MixedNamesFromData => {
                if self.k == 0 {
                    return Err(DimensionError::InvalidRequest("k must be at least 1".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum DimensionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("a dimension named {0:?} already exists")]
    DuplicateName(String),
    #[error("the batch has no narrative states")]
    EmptyBatch,
    #[error("model call failed: {0}")]
    Oracle(#[from] OracleError),
    #[error("could not parse the model's {what} reply after {attempts} attempts: {detail}")]
    Unparsable {
        what: &'static str,
        attempts: usize,
        detail: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Prompt(#[from] prompts::PromptError),
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    /// Classify the cumulative transcript instead of the round summary.
    pub full_history: bool,
    pub max_in_flight: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            full_history: false,
            max_in_flight: crate::oracle::DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub assignment: DimensionAssignment,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Induced {
    pub dimension: Dimension,
    pub assignment: DimensionAssignment,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Induction {
    pub dimensions: Vec<Induced>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameSuggestion {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Deserialize)]
struct SchemaProposal {
    name: String,
    #[serde(default)]
    description: String,
    values: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Proposals<T> {
    List(Vec<T>),
    Wrapped { dimensions: Vec<T> },
}

impl<T> Proposals<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            Proposals::List(v) | Proposals::Wrapped { dimensions: v } => v,
        }
    }
}

/// Creates an author dimension; no classification happens here.
pub fn define_author_dimension(
    existing: &[Dimension],
    name: &str,
    description: &str,
    values: Vec<String>,
) -> Result<Dimension, DimensionError> {
    define_dimension(existing, name, description, values, DimensionOrigin::Author)
}

pub fn define_dimension(
    existing: &[Dimension],
    name: &str,
    description: &str,
    values: Vec<String>,
    origin: DimensionOrigin,
) -> Result<Dimension, DimensionError> {
    if existing.iter().any(|d| d.name == name) {
        return Err(DimensionError::DuplicateName(name.to_string()));
    }
    Ok(Dimension::new(name, description, values, origin)?)
}

fn numbered_summaries(batch: &PlaythroughBatch) -> String {
    batch
        .states()
        .map(|s| {
            format!(
                "[{} t{}] {}",
                s.storyline_id,
                s.timestep,
                s.summary.as_deref().unwrap_or_default()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn match_label(reply: &str, dim: &Dimension) -> Option<Label> {
    let token = first_line_token(reply)?;
    dim.values
        .iter()
        .find(|v| v.as_str() == token)
        .or_else(|| dim.values.iter().find(|v| v.eq_ignore_ascii_case(token)))
        .map(|v| Label::Value(v.clone()))
}

/// Drops values no state received. Returns the dropped values.
fn prune_unused(dim: &mut Dimension, asg: &DimensionAssignment) -> Vec<String> {
    let used: HashSet<&str> = asg
        .assignments
        .values()
        .filter_map(|l| match l {
            Label::Value(v) => Some(v.as_str()),
            Label::Unclassified => None,
        })
        .collect();
    let (kept, dropped): (Vec<String>, Vec<String>) =
        dim.values.iter().cloned().partition(|v| used.contains(v.as_str()));
    dim.values = kept;
    dropped
}

pub struct DimensionService<'g> {
    gateway: &'g Gateway,
    options: ClassifyOptions,
}

impl<'g> DimensionService<'g> {
    pub fn new(gateway: &'g Gateway) -> Self {
        Self {
            gateway,
            options: ClassifyOptions::default(),
        }
    }

    pub fn with_options(mut self, options: ClassifyOptions) -> Self {
        self.options = options;
        self
    }

    fn summary_text(&self, state: &NarrativeState) -> Result<String, DimensionError> {
        if let Some(s) = &state.summary {
            return Ok(s.clone());
        }
        let t = &templates().summarize;
        let prompt = t.render(&[("round_text", &state.round_text())])?;
        let reply = self
            .gateway
            .complete(&OracleRequest::new(Purpose::Summarize, t.id(), prompt))?;
        let summary = clamp_sentences(reply.trim(), 2);
        if summary.is_empty() {
            return Err(DimensionError::Unparsable {
                what: "summary",
                attempts: 1,
                detail: "empty reply".into(),
            });
        }
        Ok(summary)
    }

    /// Summary of one round; computed once and then kept on the state.
    pub fn summarize_state(&self, state: &mut NarrativeState) -> Result<String, DimensionError> {
        let s = self.summary_text(state)?;
        state.summary = Some(s.clone());
        Ok(s)
    }

    /// Fills in every missing summary in the batch.
    pub fn summarize_batch(&self, batch: &mut PlaythroughBatch) -> Result<(), DimensionError> {
        let pending: Vec<&NarrativeState> = batch.states().filter(|s| s.summary.is_none()).collect();
        let keys: Vec<StateRef> = pending.iter().map(|s| s.key()).collect();
        let results = parallel_map(&pending, self.options.max_in_flight, |s| self.summary_text(s));
        let mut done = BTreeMap::new();
        for (k, r) in keys.into_iter().zip(results) {
            done.insert(k, r?);
        }
        for story in &mut batch.storylines {
            for state in &mut story.states {
                if let Some(s) = done.remove(&state.key()) {
                    state.summary = Some(s);
                }
            }
        }
        Ok(())
    }

    fn classify_one(&self, batch: &PlaythroughBatch, state: &NarrativeState, dim: &Dimension) -> (Label, Option<String>) {
        let text = if self.options.full_history {
            batch
                .storyline(&state.storyline_id)
                .map(|s| s.cumulative_text(state.timestep))
                .unwrap_or_default()
        } else {
            match self.summary_text(state) {
                Ok(s) => s,
                Err(e) => return (Label::Unclassified, Some(format!("{}: {e}", state.key()))),
            }
        };
        let t = &templates().classify;
        let labels = dim.values.join("\n");
        let mut feedback = String::new();
        for _ in 0..=CLASSIFY_REPROMPTS {
            let prompt = t
                .render(&[
                    ("dimension_name", &dim.name),
                    ("dimension_description", &dim.description),
                    ("labels", &labels),
                    ("state_text", &text),
                    ("feedback", &feedback),
                ])
                .expect("classify placeholders");
            let reply = match self
                .gateway
                .complete(&OracleRequest::new(Purpose::Classify, t.id(), prompt))
            {
                Ok(r) => r,
                Err(e) => return (Label::Unclassified, Some(format!("{}: {e}", state.key()))),
            };
            if let Some(label) = match_label(&reply, dim) {
                return (label, None);
            }
            feedback = format!(
                "\nYour previous reply {:?} is not one of the allowed labels.\n",
                reply.lines().next().unwrap_or_default()
            );
        }
        (Label::Unclassified, None)
    }

    /// Labels every state of the batch. Never fails on model errors: such
    /// states become UNCLASSIFIED and are counted in the warnings.
    pub fn classify_states(&self, batch: &PlaythroughBatch, dim: &Dimension) -> Result<Classification, DimensionError> {
        dim.validate()?;
        let states: Vec<&NarrativeState> = batch.states().collect();
        let results = parallel_map(&states, self.options.max_in_flight, |s| self.classify_one(batch, s, dim));
        let mut warnings: Vec<String> = Vec::new();
        let mut assignments = BTreeMap::new();
        for (s, (label, warning)) in states.iter().zip(results) {
            warnings.extend(warning);
            assignments.insert(s.key(), label);
        }
        let assignment = DimensionAssignment {
            dimension_id: dim.id.clone(),
            batch_id: batch.batch_id,
            assignments,
        };
        let unclassified = assignment.unclassified_count();
        if unclassified > 0 {
            warnings.push(format!(
                "{unclassified} of {} states left UNCLASSIFIED for {}",
                batch.state_count(),
                dim.name
            ));
        }
        Ok(Classification { assignment, warnings })
    }

    /// Asks until the reply parses, with up to [`INDUCTION_REPROMPTS`] retries.
    fn ask_parsed<T: serde::de::DeserializeOwned>(
        &self,
        what: &'static str,
        render: impl Fn(&str) -> Result<String, prompts::PromptError>,
        template_id: &str,
    ) -> Result<T, DimensionError> {
        let mut feedback = String::new();
        let mut detail = String::new();
        for _ in 0..=INDUCTION_REPROMPTS {
            let prompt = render(&feedback)?;
            let reply = self
                .gateway
                .complete(&OracleRequest::new(Purpose::Induce, template_id, prompt))?;
            match serde_json::from_str::<T>(fenced_block(&reply)) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    detail = e.to_string();
                    feedback = format!(
                        "\nYour previous reply could not be parsed ({detail}). Follow the reply shape exactly.\n"
                    );
                }
            }
        }
        Err(DimensionError::Unparsable {
            what,
            attempts: INDUCTION_REPROMPTS + 1,
            detail,
        })
    }

    /// Classifies `dim`, prunes unused values and checks that at least two
    /// survive.
    fn ground(
        &self,
        batch: &PlaythroughBatch,
        mut dim: Dimension,
        warnings: &mut Vec<String>,
    ) -> Result<Option<Induced>, DimensionError> {
        let classification = self.classify_states(batch, &dim)?;
        warnings.extend(classification.warnings);
        let dropped = prune_unused(&mut dim, &classification.assignment);
        if !dropped.is_empty() {
            warnings.push(format!("{}: dropped values with no states: {}", dim.name, dropped.join(", ")));
        }
        if validate_values(&dim.values).is_err() {
            warnings.push(format!(
                "{}: rejected, only {} value(s) label any state",
                dim.name,
                dim.values.len()
            ));
            return Ok(None);
        }
        Ok(Some(Induced {
            dimension: dim,
            assignment: classification.assignment,
        }))
    }

    /// Data-derived dimensions: summarize, propose `k` schemas in one
    /// prompt, classify each, prune, and re-request once for rejects.
    pub fn induce_dimensions(
        &self,
        batch: &mut PlaythroughBatch,
        k: usize,
        existing: &[Dimension],
    ) -> Result<Induction, DimensionError> {
        if k == 0 {
            return Err(DimensionError::InvalidRequest("k must be at least 1".into()));
        }
        if batch.is_empty() {
            return Err(DimensionError::EmptyBatch);
        }
        self.summarize_batch(batch)?;
        let batch: &PlaythroughBatch = batch;
        let summaries = numbered_summaries(batch);
        let t = &templates().induce_dimensions;

        let mut out = Induction::default();
        let mut taken: BTreeSet<String> = existing.iter().map(|d| d.name.clone()).collect();
        for round in 0..2 {
            let needed = k - out.dimensions.len();
            if needed == 0 {
                break;
            }
            let exclude = if taken.is_empty() {
                "(none)".to_string()
            } else {
                taken.iter().cloned().collect::<Vec<_>>().join(", ")
            };
            let needed_text = needed.to_string();
            let asked = self.ask_parsed::<Proposals<SchemaProposal>>(
                "induction",
                |feedback| {
                    t.render(&[
                        ("summaries", &summaries),
                        ("k", &needed_text),
                        ("exclude", &exclude),
                        ("feedback", feedback),
                    ])
                },
                t.id(),
            );
            let proposals = match asked {
                Ok(p) => p.into_vec(),
                Err(e) if round > 0 => {
                    out.warnings.push(format!("re-request failed: {e}"));
                    break;
                }
                Err(e) => return Err(e),
            };
            for p in proposals {
                if out.dimensions.len() == k {
                    break;
                }
                if taken.contains(&p.name) {
                    out.warnings.push(format!("{}: duplicate dimension name, skipped", p.name));
                    continue;
                }
                taken.insert(p.name.clone());
                let dim = match Dimension::new(&p.name, p.description, p.values, DimensionOrigin::DataDerived) {
                    Ok(d) => d,
                    Err(e) => {
                        out.warnings.push(format!("{}: invalid schema, skipped: {e}", p.name));
                        continue;
                    }
                };
                if let Some(induced) = self.ground(batch, dim, &mut out.warnings)? {
                    out.dimensions.push(induced);
                }
            }
        }
        if out.dimensions.len() < k {
            out.warnings.push(format!(
                "only {} of {k} requested dimensions could be induced",
                out.dimensions.len()
            ));
        }
        Ok(out)
    }

    /// Author names and describes the dimension; values come from the data.
    pub fn induce_values(
        &self,
        batch: &mut PlaythroughBatch,
        name: &str,
        description: &str,
        existing: &[Dimension],
    ) -> Result<Induction, DimensionError> {
        validate_dimension_name(name)?;
        if existing.iter().any(|d| d.name == name) {
            return Err(DimensionError::DuplicateName(name.to_string()));
        }
        if batch.is_empty() {
            return Err(DimensionError::EmptyBatch);
        }
        self.summarize_batch(batch)?;
        let batch: &PlaythroughBatch = batch;
        let summaries = numbered_summaries(batch);
        let t = &templates().induce_values;
        let mut out = Induction::default();
        for _ in 0..2 {
            let values: Vec<String> = self.ask_parsed(
                "value schema",
                |feedback| {
                    t.render(&[
                        ("summaries", &summaries),
                        ("name", name),
                        ("description", description),
                        ("feedback", feedback),
                    ])
                },
                t.id(),
            )?;
            let dim = match Dimension::new(name, description, values, DimensionOrigin::Mixed) {
                Ok(d) => d,
                Err(e) => {
                    out.warnings.push(format!("{name}: invalid schema: {e}"));
                    continue;
                }
            };
            if let Some(induced) = self.ground(batch, dim, &mut out.warnings)? {
                out.dimensions.push(induced);
                break;
            }
        }
        Ok(out)
    }

    /// Data proposes names and descriptions; the author supplies values.
    pub fn suggest_dimension_names(
        &self,
        batch: &mut PlaythroughBatch,
        k: usize,
        existing: &[Dimension],
    ) -> Result<(Vec<NameSuggestion>, Vec<String>), DimensionError> {
        if k == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        if batch.is_empty() {
            return Err(DimensionError::EmptyBatch);
        }
        self.summarize_batch(batch)?;
        let summaries = numbered_summaries(batch);
        let t = &templates().suggest_names;
        let k_text = k.to_string();
        let proposals: Proposals<NameSuggestion> = self.ask_parsed(
            "name suggestion",
            |feedback| t.render(&[("summaries", &summaries), ("k", &k_text), ("feedback", feedback)]),
            t.id(),
        )?;
        let mut warnings = Vec::new();
        let mut seen: HashSet<String> = existing.iter().map(|d| d.name.clone()).collect();
        let mut out = Vec::new();
        for s in proposals.into_vec() {
            if out.len() == k {
                break;
            }
            if let Err(e) = validate_dimension_name(&s.name) {
                warnings.push(format!("skipped suggestion: {e}"));
            } else if !seen.insert(s.name.clone()) {
                warnings.push(format!("{}: duplicate name, skipped", s.name));
            } else {
                out.push(s);
            }
        }
        if out.len() < k {
            warnings.push(format!("only {} of {k} requested names could be suggested", out.len()));
        }
        Ok((out, warnings))
    }
}
