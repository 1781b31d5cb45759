//! A project: one storyworld, its rules, dimensions, append-only batches,
//! per-batch assignments, canvas panels and playtest sessions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use storyloom_core::batch_format::{parse_batch, BatchFormatError};
use storyloom_core::bsv::{
    build_view, compare_batches, filter_by_storyline, filter_by_value, timeline_slice, Axis, BsvError, BsvGraph,
    HighlightSet, ValueKey, ViewKind, MAX_GRAPH_DIMENSIONS,
};
use storyloom_core::dimensions::{
    define_dimension, DimensionError, DimensionService, ExtractionMode, ExtractionRequest, Induced, NameSuggestion,
};
use storyloom_core::oracle::Gateway;
use storyloom_core::player_sim::{simulate_batch, ProfileRegistry, SimulationError, SimulationSpec};
use storyloom_core::runtime::{start_session, Phase, RuleTrigger, Session, SessionError};
use storyloom_core::{
    validate_storyworld, BatchId, Dimension, DimensionAssignment, DimensionId, DimensionOrigin, ModelError,
    NarrativeState, PlaythroughBatch, Rule, RuleId, StorylineId, Storyworld, StoryworldViolation,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub panel_id: String,
    pub dimension_ids: Vec<DimensionId>,
    pub view: ViewKind,
    #[serde(default)]
    pub position: Position,
    /// Show the previous batch behind the current one.
    #[serde(default)]
    pub show_previous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: String,
    /// Bumped on every change; keys the in-memory graph cache.
    #[serde(default)]
    pub revision: u64,
    #[serde(default)]
    pub storyworld: Option<Storyworld>,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub dimensions: Vec<Dimension>,
    #[serde(default)]
    pub batches: Vec<PlaythroughBatch>,
    #[serde(default)]
    pub assignments: Vec<DimensionAssignment>,
    #[serde(default)]
    pub canvas: Vec<Panel>,
    #[serde(default)]
    pub sessions: BTreeMap<String, Session>,
}

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("unknown batch {0}")]
    UnknownBatch(u64),
    #[error("the project has no batches yet")]
    NoBatches,
    #[error("unknown panel {0:?}")]
    UnknownPanel(String),
    #[error("unknown rule {0:?}")]
    UnknownRule(String),
    #[error("rule {0:?} already exists")]
    DuplicateRule(String),
    #[error("unknown playtest session {0:?}")]
    UnknownSession(String),
    #[error("the project has no storyworld yet")]
    NoStoryworld,
    #[error("invalid storyworld: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidStoryworld(Vec<StoryworldViolation>),
    #[error("panel {0} already combines {MAX_GRAPH_DIMENSIONS} dimensions")]
    PanelFull(String),
    #[error("cannot combine dimension {0} with itself")]
    SameDimension(DimensionId),
    #[error("a panel shows 1 to {MAX_GRAPH_DIMENSIONS} dimensions, got {0}")]
    PanelArity(usize),
    #[error("missing query parameter {0:?}")]
    MissingParameter(&'static str),
    #[error("invalid query parameter {name:?}: {message}")]
    BadParameter { name: &'static str, message: String },
    #[error("player input is required on the player's turn")]
    NeedPlayerInput,
    #[error(transparent)]
    Batch(#[from] BatchFormatError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dimension(#[from] DimensionError),
    #[error(transparent)]
    Bsv(#[from] BsvError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

impl ProjectError {
    /// Errors that name something missing rather than something malformed.
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            ProjectError::UnknownDimension(_)
                | ProjectError::UnknownBatch(_)
                | ProjectError::UnknownPanel(_)
                | ProjectError::UnknownRule(_)
                | ProjectError::UnknownSession(_)
        )
    }
}

type Result<T, E = ProjectError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub batch_id: BatchId,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub dimensions: Vec<Dimension>,
    #[serde(default)]
    pub suggestions: Vec<NameSuggestion>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEdit {
    pub dimension: Dimension,
    pub changed: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum HighlightQuery {
    Storyline {
        storyline: StorylineId,
        batch: Option<BatchId>,
    },
    Value {
        dims: Vec<DimensionId>,
        value: String,
        batch: Option<BatchId>,
    },
    Timestep {
        t: u32,
        batch: Option<BatchId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaytestStep {
    pub session_id: String,
    pub round_index: u32,
    /// The game master's newest turn, awaiting the player.
    pub gm_text: Option<String>,
    /// The round closed by this step, if any.
    pub state: Option<NarrativeState>,
    pub triggers: Vec<RuleTrigger>,
    pub warnings: Vec<String>,
}

impl Project {
    pub fn new(project_id: impl Into<String>) -> Self {
        Self {
            project_id: project_id.into(),
            revision: 0,
            storyworld: None,
            rules: Vec::new(),
            dimensions: Vec::new(),
            batches: Vec::new(),
            assignments: Vec::new(),
            canvas: Vec::new(),
            sessions: BTreeMap::new(),
        }
    }

    pub fn touch(&mut self) {
        self.revision += 1;
    }

    pub fn set_storyworld(&mut self, storyworld: Storyworld) -> Result<()> {
        validate_storyworld(&storyworld).map_err(ProjectError::InvalidStoryworld)?;
        self.storyworld = Some(storyworld);
        Ok(())
    }

    pub fn storyworld(&self) -> Result<&Storyworld> {
        self.storyworld.as_ref().ok_or(ProjectError::NoStoryworld)
    }

    pub fn rule(&self, id: &str) -> Result<&Rule> {
        self.rules
            .iter()
            .find(|r| r.id.as_str() == id)
            .ok_or_else(|| ProjectError::UnknownRule(id.to_string()))
    }

    pub fn add_rule(&mut self, rule: Rule) -> Result<()> {
        rule.validate()?;
        if self.rules.iter().any(|r| r.id == rule.id) {
            return Err(ProjectError::DuplicateRule(rule.id.to_string()));
        }
        self.rules.push(rule);
        Ok(())
    }

    pub fn update_rule(&mut self, id: &str, mut rule: Rule) -> Result<()> {
        rule.id = RuleId::new(id);
        rule.validate()?;
        let slot = self
            .rules
            .iter_mut()
            .find(|r| r.id.as_str() == id)
            .ok_or_else(|| ProjectError::UnknownRule(id.to_string()))?;
        *slot = rule;
        Ok(())
    }

    pub fn delete_rule(&mut self, id: &str) -> Result<Rule> {
        let i = self
            .rules
            .iter()
            .position(|r| r.id.as_str() == id)
            .ok_or_else(|| ProjectError::UnknownRule(id.to_string()))?;
        Ok(self.rules.remove(i))
    }

    pub fn next_batch_id(&self) -> BatchId {
        BatchId(self.batches.last().map_or(1, |b| b.batch_id.0 + 1))
    }

    pub fn batch(&self, id: BatchId) -> Result<&PlaythroughBatch> {
        self.batches
            .iter()
            .find(|b| b.batch_id == id)
            .ok_or(ProjectError::UnknownBatch(id.0))
    }

    /// The given batch, or the newest one.
    pub fn batch_or_latest(&self, id: Option<BatchId>) -> Result<&PlaythroughBatch> {
        match id {
            Some(id) => self.batch(id),
            None => self.batches.last().ok_or(ProjectError::NoBatches),
        }
    }

    fn previous_batch(&self, id: BatchId) -> Option<&PlaythroughBatch> {
        self.batches.iter().rev().find(|b| b.batch_id < id)
    }

    /// Looks a dimension up by id.
    pub fn dimension(&self, id: &str) -> Result<&Dimension> {
        self.dimensions
            .iter()
            .find(|d| d.id.as_str() == id)
            .ok_or_else(|| ProjectError::UnknownDimension(id.to_string()))
    }

    pub fn assignment(&self, dim: &DimensionId, batch: BatchId) -> Option<&DimensionAssignment> {
        self.assignments
            .iter()
            .find(|a| &a.dimension_id == dim && a.batch_id == batch)
    }

    fn set_assignment(&mut self, asg: DimensionAssignment) {
        self.assignments
            .retain(|a| !(a.dimension_id == asg.dimension_id && a.batch_id == asg.batch_id));
        self.assignments.push(asg);
        let order: Vec<DimensionId> = self.dimensions.iter().map(|d| d.id.clone()).collect();
        self.assignments.sort_by_key(|a| {
            (
                order.iter().position(|d| d == &a.dimension_id).unwrap_or(usize::MAX),
                a.batch_id,
            )
        });
    }

    fn classify_into(
        &mut self,
        svc: &DimensionService<'_>,
        dim: &Dimension,
        batch: BatchId,
        warnings: &mut Vec<String>,
    ) -> Result<()> {
        let c = svc.classify_states(self.batch(batch)?, dim)?;
        warnings.extend(c.warnings.into_iter().map(|w| format!("batch {batch}: {w}")));
        self.set_assignment(c.assignment);
        Ok(())
    }

    /// Re-classifies one batch (the newest by default) under one dimension.
    pub fn reclassify(
        &mut self,
        dim_id: &str,
        batch: Option<BatchId>,
        gateway: &Gateway,
    ) -> Result<(DimensionAssignment, Vec<String>)> {
        let dim = self.dimension(dim_id)?.clone();
        let id = self.batch_or_latest(batch)?.batch_id;
        let mut warnings = Vec::new();
        self.classify_into(&DimensionService::new(gateway), &dim, id, &mut warnings)?;
        Ok((self.assignment(&dim.id, id).expect("just stored").clone(), warnings))
    }

    /// Parses and appends a batch file, then classifies it under every
    /// existing dimension. Nothing changes when the file does not parse.
    pub fn upload_batch(&mut self, bytes: &[u8], gateway: &Gateway) -> Result<BatchOutcome> {
        let batch = parse_batch(bytes, self.next_batch_id())?;
        self.add_batch(batch, gateway)
    }

    pub fn add_batch(&mut self, mut batch: PlaythroughBatch, gateway: &Gateway) -> Result<BatchOutcome> {
        batch.batch_id = self.next_batch_id();
        batch.validate()?;
        let svc = DimensionService::new(gateway);
        let mut warnings = Vec::new();
        if let Err(e) = svc.summarize_batch(&mut batch) {
            warnings.push(format!("summaries incomplete: {e}"));
        }
        let id = batch.batch_id;
        self.batches.push(batch);
        for dim in self.dimensions.clone() {
            self.classify_into(&svc, &dim, id, &mut warnings)?;
        }
        Ok(BatchOutcome { batch_id: id, warnings })
    }

    pub fn simulate(
        &mut self,
        spec: &SimulationSpec,
        registry: &ProfileRegistry,
        gateway: &Gateway,
    ) -> Result<BatchOutcome> {
        let sim = simulate_batch(gateway, registry, spec, self.next_batch_id())?;
        let mut outcome = self.add_batch(sim.batch, gateway)?;
        let mut warnings = sim.warnings;
        warnings.append(&mut outcome.warnings);
        outcome.warnings = warnings;
        Ok(outcome)
    }

    /// Simulation settings over the project's own storyworld and rules.
    pub fn simulation_spec(&self) -> Result<SimulationSpec> {
        Ok(SimulationSpec::new(self.storyworld()?.clone(), self.rules.clone()))
    }

    fn add_dimension(&mut self, dim: Dimension, known: Option<DimensionAssignment>, gateway: &Gateway) -> Result<Vec<String>> {
        let svc = DimensionService::new(gateway);
        let mut warnings = Vec::new();
        self.dimensions.push(dim.clone());
        let ids: Vec<BatchId> = self.batches.iter().map(|b| b.batch_id).collect();
        for id in ids {
            match &known {
                Some(a) if a.batch_id == id => self.set_assignment(a.clone()),
                _ => self.classify_into(&svc, &dim, id, &mut warnings)?,
            }
        }
        Ok(warnings)
    }

    /// Writes summaries computed on a copy back into the stored batch.
    fn store_summaries(&mut self, from: &PlaythroughBatch) {
        if let Some(b) = self.batches.iter_mut().find(|b| b.batch_id == from.batch_id) {
            for (dst, src) in b.storylines.iter_mut().zip(&from.storylines) {
                for (d, s) in dst.states.iter_mut().zip(&src.states) {
                    if d.summary.is_none() {
                        d.summary = s.summary.clone();
                    }
                }
            }
        }
    }

    pub fn define_author_dimension(
        &mut self,
        name: &str,
        description: &str,
        values: Vec<String>,
        gateway: &Gateway,
    ) -> Result<ExtractionOutcome> {
        let dim = define_dimension(&self.dimensions, name, description, values, DimensionOrigin::Author)?;
        let warnings = self.add_dimension(dim.clone(), None, gateway)?;
        Ok(ExtractionOutcome {
            dimensions: vec![dim],
            suggestions: Vec::new(),
            warnings,
        })
    }

    fn add_induced(&mut self, induced: Vec<Induced>, gateway: &Gateway, out: &mut ExtractionOutcome) -> Result<()> {
        for i in induced {
            out.dimensions.push(i.dimension.clone());
            let w = self.add_dimension(i.dimension, Some(i.assignment), gateway)?;
            out.warnings.extend(w);
        }
        Ok(())
    }

    pub fn extract_dimensions(&mut self, req: &ExtractionRequest, gateway: &Gateway) -> Result<ExtractionOutcome> {
        req.validate()?;
        if req.mode == ExtractionMode::Author {
            return self.define_author_dimension(
                req.name.as_deref().unwrap_or_default(),
                req.description.as_deref().unwrap_or_default(),
                req.values.clone().unwrap_or_default(),
                gateway,
            );
        }
        let mut batch = self.batch_or_latest(req.batch_id)?.clone();
        let svc = DimensionService::new(gateway);
        let mut out = ExtractionOutcome {
            dimensions: Vec::new(),
            suggestions: Vec::new(),
            warnings: Vec::new(),
        };
        match req.mode {
            ExtractionMode::Author => unreachable!(),
            ExtractionMode::DataDerived => {
                let induction = svc.induce_dimensions(&mut batch, req.k, &self.dimensions)?;
                self.store_summaries(&batch);
                out.warnings = induction.warnings;
                self.add_induced(induction.dimensions, gateway, &mut out)?;
            }
            ExtractionMode::MixedValuesFromData => {
                let induction = svc.induce_values(
                    &mut batch,
                    req.name.as_deref().unwrap_or_default(),
                    req.description.as_deref().unwrap_or_default(),
                    &self.dimensions,
                )?;
                self.store_summaries(&batch);
                out.warnings = induction.warnings;
                self.add_induced(induction.dimensions, gateway, &mut out)?;
            }
            ExtractionMode::MixedNamesFromData => {
                let (suggestions, warnings) = svc.suggest_dimension_names(&mut batch, req.k, &self.dimensions)?;
                self.store_summaries(&batch);
                out.suggestions = suggestions;
                out.warnings = warnings;
            }
        }
        Ok(out)
    }

    /// Replaces a dimension's values and re-classifies every batch. An
    /// identical schema changes nothing and calls no model.
    pub fn edit_value_schema(&mut self, dim_id: &str, values: Vec<String>, gateway: &Gateway) -> Result<SchemaEdit> {
        let current = self.dimension(dim_id)?.clone();
        if current.values == values {
            return Ok(SchemaEdit {
                dimension: current,
                changed: false,
                warnings: Vec::new(),
            });
        }
        let mut dim = current;
        dim.values = values;
        dim.validate()?;
        let slot = self.dimensions.iter_mut().find(|d| d.id == dim.id).expect("exists");
        *slot = dim.clone();
        self.assignments.retain(|a| a.dimension_id != dim.id);
        let svc = DimensionService::new(gateway);
        let mut warnings = Vec::new();
        let ids: Vec<BatchId> = self.batches.iter().map(|b| b.batch_id).collect();
        for id in ids {
            self.classify_into(&svc, &dim, id, &mut warnings)?;
        }
        Ok(SchemaEdit {
            dimension: dim,
            changed: true,
            warnings,
        })
    }

    fn axes<'a>(&'a self, dims: &[DimensionId], batch: BatchId) -> Result<Vec<Axis<'a>>> {
        if dims.is_empty() || dims.len() > MAX_GRAPH_DIMENSIONS {
            return Err(ProjectError::PanelArity(dims.len()));
        }
        dims.iter()
            .map(|id| {
                let d = self.dimension(id.as_str())?;
                let a = self
                    .assignment(&d.id, batch)
                    .ok_or(ProjectError::UnknownBatch(batch.0))?;
                Ok((d, a))
            })
            .collect()
    }

    /// Graph of `dims` over one batch (the newest by default), optionally
    /// with the preceding batch attached as an overlay.
    pub fn graph(
        &self,
        dims: &[DimensionId],
        batch: Option<BatchId>,
        view: ViewKind,
        compare: bool,
    ) -> Result<BsvGraph> {
        let b = self.batch_or_latest(batch)?;
        let g = build_view(b, view, &self.axes(dims, b.batch_id)?)?;
        if !compare {
            return Ok(g);
        }
        match self.previous_batch(b.batch_id) {
            Some(prev) if prev.batch_id.0 + 1 == b.batch_id.0 => {
                Ok(compare_batches(g, prev, &self.axes(dims, prev.batch_id)?)?)
            }
            Some(prev) => {
                let overlay = build_view(prev, view, &self.axes(dims, prev.batch_id)?)?;
                Ok(g.with_overlay(overlay)?)
            }
            None => Ok(g),
        }
    }

    /// Graph of `dims` on batch `to`, with batch `from` as the overlay.
    pub fn diff_batches(&self, dims: &[DimensionId], from: BatchId, to: BatchId, view: ViewKind) -> Result<BsvGraph> {
        let current = build_view(self.batch(to)?, view, &self.axes(dims, to)?)?;
        let previous = build_view(self.batch(from)?, view, &self.axes(dims, from)?)?;
        Ok(current.with_overlay(previous)?)
    }

    pub fn highlight(&self, query: &HighlightQuery) -> Result<HighlightSet> {
        Ok(match query {
            HighlightQuery::Storyline { storyline, batch } => filter_by_storyline(self.batch_or_latest(*batch)?, storyline)?,
            HighlightQuery::Timestep { t, batch } => timeline_slice(self.batch_or_latest(*batch)?, *t)?,
            HighlightQuery::Value { dims, value, batch } => {
                let view = if dims.len() == 2 { ViewKind::Grid2d } else { ViewKind::Timeline1d };
                let g = self.graph(dims, *batch, view, false)?;
                filter_by_value(&g, &ValueKey::parse(value))?
            }
        })
    }

    fn next_panel_id(&self) -> String {
        format!("p{}", self.canvas.len() + 1)
    }

    pub fn panel(&self, id: &str) -> Result<&Panel> {
        self.canvas
            .iter()
            .find(|p| p.panel_id == id)
            .ok_or_else(|| ProjectError::UnknownPanel(id.to_string()))
    }

    pub fn add_panel(&mut self, dims: Vec<DimensionId>, view: Option<ViewKind>, position: Position) -> Result<Panel> {
        if dims.is_empty() || dims.len() > MAX_GRAPH_DIMENSIONS {
            return Err(ProjectError::PanelArity(dims.len()));
        }
        for d in &dims {
            self.dimension(d.as_str())?;
        }
        if dims.len() == 2 && dims[0] == dims[1] {
            return Err(ProjectError::SameDimension(dims[0].clone()));
        }
        let view = view.unwrap_or(if dims.len() == 2 { ViewKind::Grid2d } else { ViewKind::Timeline1d });
        if view.dimension_count() != dims.len() {
            return Err(BsvError::ViewArity {
                view,
                expected: view.dimension_count(),
                found: dims.len(),
            }
            .into());
        }
        let panel = Panel {
            panel_id: self.next_panel_id(),
            dimension_ids: dims,
            view,
            position,
            show_previous: false,
        };
        self.canvas.push(panel.clone());
        Ok(panel)
    }

    /// Drops panel `a` onto panel `b`: a new grid over (a's dimension, b's
    /// dimension). Both sources stay on the canvas.
    pub fn combine_panels(&mut self, a: &str, b: &str) -> Result<Panel> {
        let pa = self.panel(a)?.clone();
        let pb = self.panel(b)?.clone();
        for p in [&pa, &pb] {
            if p.dimension_ids.len() != 1 {
                return Err(ProjectError::PanelFull(p.panel_id.clone()));
            }
        }
        let (da, db) = (pa.dimension_ids[0].clone(), pb.dimension_ids[0].clone());
        if da == db {
            return Err(ProjectError::SameDimension(da));
        }
        let position = Position {
            x: pb.position.x,
            y: pb.position.y + 1.0,
        };
        self.add_panel(vec![da, db], Some(ViewKind::Grid2d), position)
    }

    pub fn session(&self, id: &str) -> Result<&Session> {
        self.sessions
            .get(id)
            .ok_or_else(|| ProjectError::UnknownSession(id.to_string()))
    }

    /// Advances a playtest. A new session opens with the game master's
    /// first turn; later steps take the player's input, close the round and
    /// return the next game-master turn.
    pub fn playtest_step(&mut self, session_id: &str, input: Option<&str>, gateway: &Gateway) -> Result<PlaytestStep> {
        let session = match self.sessions.remove(session_id) {
            Some(s) => s,
            None => start_session(session_id, self.storyworld()?.clone(), self.rules.clone())?,
        };
        let mut session = session;
        let result = advance(&mut session, input, gateway);
        self.sessions.insert(session_id.to_string(), session);
        result
    }
}

fn advance(s: &mut Session, input: Option<&str>, gateway: &Gateway) -> Result<PlaytestStep> {
    let warnings_before = s.warnings.len();
    let mut step = PlaytestStep {
        session_id: s.session_id.clone(),
        round_index: s.round_index,
        gm_text: None,
        state: None,
        triggers: Vec::new(),
        warnings: Vec::new(),
    };
    if s.phase() == Phase::PlayerTurn {
        let input = input.filter(|t| !t.trim().is_empty()).ok_or(ProjectError::NeedPlayerInput)?;
        s.player_turn(input)?;
    }
    if s.phase() == Phase::Finalize {
        let (state, triggers) = s.finalize_round(gateway, gateway.max_in_flight())?;
        step.state = Some(state);
        step.triggers = triggers;
    }
    step.gm_text = Some(s.gm_turn(gateway)?);
    step.round_index = s.round_index;
    step.warnings = s.warnings[warnings_before..].to_vec();
    Ok(step)
}
