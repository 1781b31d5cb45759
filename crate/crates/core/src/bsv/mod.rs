//! Bundled storyline graphs.
//!
//! States sharing a value (or value combination) at the same timestep are
//! bundled into one node; an edge links two nodes at consecutive timesteps
//! when at least one storyline passes from the first to the second. The
//! compact view drops time and keeps one node per used value.
//!
//! Canonical order everywhere: timesteps ascending, then values in the
//! dimension's declared order (UNCLASSIFIED last), then storylines by their
//! index in the batch.

mod export;
pub mod invariants;

pub use export::{to_dot, to_json};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BatchId, Dimension, DimensionAssignment, DimensionId, Label, ModelError, PlaythroughBatch,
    StateRef, StorylineId,
};

/// Graphs combine at most this many dimensions.
pub const MAX_GRAPH_DIMENSIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewKind {
    #[serde(rename = "timeline_1d")]
    Timeline1d,
    #[serde(rename = "compact_1d")]
    Compact1d,
    #[serde(rename = "grid_2d")]
    Grid2d,
}

impl ViewKind {
    pub fn dimension_count(self) -> usize {
        match self {
            ViewKind::Timeline1d | ViewKind::Compact1d => 1,
            ViewKind::Grid2d => 2,
        }
    }
}

impl std::str::FromStr for ViewKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "timeline" | "timeline_1d" => Ok(ViewKind::Timeline1d),
            "compact" | "compact_1d" => Ok(ViewKind::Compact1d),
            "grid" | "grid_2d" | "2d" => Ok(ViewKind::Grid2d),
            other => Err(format!("unknown view {other:?} (expected timeline, compact or grid)")),
        }
    }
}

/// Column schema of one graph axis, including values no state uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionAxis {
    pub id: DimensionId,
    pub name: String,
    pub values: Vec<String>,
}

impl From<&Dimension> for DimensionAxis {
    fn from(d: &Dimension) -> Self {
        Self {
            id: d.id.clone(),
            name: d.name.clone(),
            values: d.values.clone(),
        }
    }
}

impl DimensionAxis {
    fn accepts(&self, label: &Label) -> bool {
        match label {
            Label::Unclassified => true,
            Label::Value(v) => self.values.contains(v),
        }
    }
}

/// Value combination of a node, one label per graph dimension.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueKey(pub Vec<Label>);

impl ValueKey {
    pub fn single(label: impl Into<Label>) -> Self {
        Self(vec![label.into()])
    }

    pub fn pair(a: impl Into<Label>, b: impl Into<Label>) -> Self {
        Self(vec![a.into(), b.into()])
    }

    pub fn parse(text: &str) -> Self {
        Self(text.split(',').map(|t| Label::from(t.trim())).collect())
    }
}

impl fmt::Display for ValueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(l.as_str())?;
        }
        Ok(())
    }
}

/// `"{value_key}@t{t}"` for timed nodes, `"{value_key}"` in the compact view.
pub fn node_id(value_key: &ValueKey, timestep: Option<u32>) -> String {
    match timestep {
        Some(t) => format!("{value_key}@t{t}"),
        None => value_key.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsvNode {
    pub id: String,
    pub timestep: Option<u32>,
    pub value_key: ValueKey,
    pub member_states: Vec<StateRef>,
}

impl BsvNode {
    pub fn count(&self) -> usize {
        self.member_states.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsvEdge {
    pub from: String,
    pub to: String,
    pub multiplicity: usize,
    pub storyline_ids: Vec<StorylineId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsvGraph {
    pub dimensions: Vec<DimensionAxis>,
    pub batch_id: BatchId,
    pub view: ViewKind,
    pub nodes: Vec<BsvNode>,
    pub edges: Vec<BsvEdge>,
    pub previous_overlay: Option<Box<BsvGraph>>,
}

impl BsvGraph {
    pub fn node(&self, id: &str) -> Option<&BsvNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge(&self, from: &str, to: &str) -> Option<&BsvEdge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    pub fn member_count(&self) -> usize {
        self.nodes.iter().map(BsvNode::count).sum()
    }

    pub fn dimension_ids(&self) -> Vec<DimensionId> {
        self.dimensions.iter().map(|d| d.id.clone()).collect()
    }

    /// Per-value-key state counts, ignoring time.
    pub fn value_counts(&self) -> BTreeMap<ValueKey, usize> {
        let mut out = BTreeMap::new();
        for n in &self.nodes {
            *out.entry(n.value_key.clone()).or_insert(0) += n.count();
        }
        out
    }

    pub fn with_overlay(mut self, previous: BsvGraph) -> Result<Self, BsvError> {
        if previous.dimensions != self.dimensions {
            return Err(BsvError::SchemaMismatch);
        }
        if previous.view != self.view {
            return Err(BsvError::ViewMismatch {
                expected: self.view,
                found: previous.view,
            });
        }
        let mut previous = previous;
        previous.previous_overlay = None;
        self.previous_overlay = Some(Box::new(previous));
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightProvenance {
    ByStoryline,
    ByValue,
    ByTimestep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighlightSet {
    pub provenance: HighlightProvenance,
    pub states: BTreeSet<StateRef>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BsvError {
    #[error("a graph combines 1 to {MAX_GRAPH_DIMENSIONS} dimensions, got {0}")]
    DimensionCount(usize),
    #[error("view {view:?} needs {expected} dimension(s), got {found}")]
    ViewArity {
        view: ViewKind,
        expected: usize,
        found: usize,
    },
    #[error("the same dimension {0} appears twice")]
    SameDimension(DimensionId),
    #[error("assignment does not match the batch: {0}")]
    Assignment(#[from] ModelError),
    #[error("previous batch is {found}, expected {expected}")]
    NotPreviousBatch { expected: u64, found: BatchId },
    #[error("value schemas differ between the compared graphs")]
    SchemaMismatch,
    #[error("compared graphs use different views ({expected:?} vs {found:?})")]
    ViewMismatch { expected: ViewKind, found: ViewKind },
    #[error("value key {key} does not fit the graph's dimensions")]
    UnknownValue { key: String },
    #[error("unknown storyline {0}")]
    UnknownStoryline(StorylineId),
    #[error("timestep {t} is outside 1..={t_max}")]
    TimestepOutOfRange { t: u32, t_max: u32 },
}

/// A dimension paired with its labels over one batch.
pub type Axis<'a> = (&'a Dimension, &'a DimensionAssignment);

/// Value indices per state, indexed `[storyline][timestep - 1][axis]`.
fn index_states(batch: &PlaythroughBatch, axes: &[Axis<'_>]) -> Result<Vec<Vec<Vec<usize>>>, BsvError> {
    if axes.is_empty() || axes.len() > MAX_GRAPH_DIMENSIONS {
        return Err(BsvError::DimensionCount(axes.len()));
    }
    if axes.len() == 2 && axes[0].0.id == axes[1].0.id {
        return Err(BsvError::SameDimension(axes[0].0.id.clone()));
    }
    for (dim, asg) in axes {
        asg.check(batch, dim)?;
    }
    Ok(batch
        .storylines
        .iter()
        .map(|s| {
            s.states
                .iter()
                .map(|st| {
                    let key = st.key();
                    axes.iter()
                        .map(|(dim, asg)| {
                            let label = asg.get(&key).expect("checked total");
                            dim.value_index(label).expect("checked in domain")
                        })
                        .collect()
                })
                .collect()
        })
        .collect())
}

fn value_key(axes: &[Axis<'_>], idx: &[usize]) -> ValueKey {
    ValueKey(
        axes.iter()
            .zip(idx)
            .map(|((dim, _), &i)| match dim.values.get(i) {
                Some(v) => Label::Value(v.clone()),
                None => Label::Unclassified,
            })
            .collect(),
    )
}

fn timeline(batch: &PlaythroughBatch, axes: &[Axis<'_>], view: ViewKind) -> Result<BsvGraph, BsvError> {
    let indexed = index_states(batch, axes)?;

    let mut nodes: BTreeMap<(u32, &[usize]), Vec<StateRef>> = BTreeMap::new();
    let mut edges: BTreeMap<((u32, &[usize]), &[usize]), Vec<usize>> = BTreeMap::new();
    for (si, story) in indexed.iter().enumerate() {
        let id = &batch.storylines[si].id;
        for (ti, idx) in story.iter().enumerate() {
            let t = ti as u32 + 1;
            nodes
                .entry((t, idx.as_slice()))
                .or_default()
                .push(StateRef::new(id.clone(), t));
            if let Some(next) = story.get(ti + 1) {
                edges
                    .entry(((t, idx.as_slice()), next.as_slice()))
                    .or_default()
                    .push(si);
            }
        }
    }

    let nodes = nodes
        .into_iter()
        .map(|((t, idx), member_states)| {
            let key = value_key(axes, idx);
            BsvNode {
                id: node_id(&key, Some(t)),
                timestep: Some(t),
                value_key: key,
                member_states,
            }
        })
        .collect();
    let edges = edges
        .into_iter()
        .map(|(((t, from), to), lines)| BsvEdge {
            from: node_id(&value_key(axes, from), Some(t)),
            to: node_id(&value_key(axes, to), Some(t + 1)),
            multiplicity: lines.len(),
            storyline_ids: lines.iter().map(|&i| batch.storylines[i].id.clone()).collect(),
        })
        .collect();

    Ok(BsvGraph {
        dimensions: axes.iter().map(|(d, _)| DimensionAxis::from(*d)).collect(),
        batch_id: batch.batch_id,
        view,
        nodes,
        edges,
        previous_overlay: None,
    })
}

/// Timeline view of one dimension.
pub fn build_1d_bsv(
    batch: &PlaythroughBatch,
    dim: &Dimension,
    asg: &DimensionAssignment,
) -> Result<BsvGraph, BsvError> {
    timeline(batch, &[(dim, asg)], ViewKind::Timeline1d)
}

/// Two-dimensional grid; nodes are keyed by value pair and timestep.
pub fn build_2d_bsv(
    batch: &PlaythroughBatch,
    dim_a: &Dimension,
    dim_b: &Dimension,
    asg_a: &DimensionAssignment,
    asg_b: &DimensionAssignment,
) -> Result<BsvGraph, BsvError> {
    timeline(batch, &[(dim_a, asg_a), (dim_b, asg_b)], ViewKind::Grid2d)
}

/// One node per used value across all timesteps; no edges.
pub fn build_compact_view(
    batch: &PlaythroughBatch,
    dim: &Dimension,
    asg: &DimensionAssignment,
) -> Result<BsvGraph, BsvError> {
    let axes = [(dim, asg)];
    let indexed = index_states(batch, &axes)?;
    let mut nodes: BTreeMap<&[usize], Vec<StateRef>> = BTreeMap::new();
    for (si, story) in indexed.iter().enumerate() {
        for (ti, idx) in story.iter().enumerate() {
            nodes
                .entry(idx.as_slice())
                .or_default()
                .push(StateRef::new(batch.storylines[si].id.clone(), ti as u32 + 1));
        }
    }
    Ok(BsvGraph {
        dimensions: vec![DimensionAxis::from(dim)],
        batch_id: batch.batch_id,
        view: ViewKind::Compact1d,
        nodes: nodes
            .into_iter()
            .map(|(idx, member_states)| {
                let key = value_key(&axes, idx);
                BsvNode {
                    id: node_id(&key, None),
                    timestep: None,
                    value_key: key,
                    member_states,
                }
            })
            .collect(),
        edges: Vec::new(),
        previous_overlay: None,
    })
}

/// Builds any view from its axes, checking the arity of the view.
pub fn build_view(batch: &PlaythroughBatch, view: ViewKind, axes: &[Axis<'_>]) -> Result<BsvGraph, BsvError> {
    if axes.len() > MAX_GRAPH_DIMENSIONS {
        return Err(BsvError::DimensionCount(axes.len()));
    }
    if axes.len() != view.dimension_count() {
        return Err(BsvError::ViewArity {
            view,
            expected: view.dimension_count(),
            found: axes.len(),
        });
    }
    match view {
        ViewKind::Timeline1d | ViewKind::Grid2d => timeline(batch, axes, view),
        ViewKind::Compact1d => build_compact_view(batch, axes[0].0, axes[0].1),
    }
}

/// Attaches the same view computed over the directly preceding batch.
pub fn compare_batches(
    current: BsvGraph,
    previous_batch: &PlaythroughBatch,
    previous_axes: &[Axis<'_>],
) -> Result<BsvGraph, BsvError> {
    let expected = current.batch_id.0.wrapping_sub(1);
    if current.batch_id.0 == 0 || previous_batch.batch_id.0 != expected {
        return Err(BsvError::NotPreviousBatch {
            expected,
            found: previous_batch.batch_id,
        });
    }
    let axes_match = previous_axes.len() == current.dimensions.len()
        && previous_axes
            .iter()
            .zip(&current.dimensions)
            .all(|((d, _), axis)| d.id == axis.id && d.values == axis.values);
    if !axes_match {
        return Err(BsvError::SchemaMismatch);
    }
    let previous = build_view(previous_batch, current.view, previous_axes)?;
    current.with_overlay(previous)
}

pub fn filter_by_storyline(batch: &PlaythroughBatch, storyline: &StorylineId) -> Result<HighlightSet, BsvError> {
    let s = batch
        .storyline(storyline)
        .ok_or_else(|| BsvError::UnknownStoryline(storyline.clone()))?;
    Ok(HighlightSet {
        provenance: HighlightProvenance::ByStoryline,
        states: s.states.iter().map(|st| st.key()).collect(),
    })
}

/// Every state whose labels equal `key`, across all timesteps.
pub fn filter_by_value(graph: &BsvGraph, key: &ValueKey) -> Result<HighlightSet, BsvError> {
    let fits = key.0.len() == graph.dimensions.len()
        && key.0.iter().zip(&graph.dimensions).all(|(l, axis)| axis.accepts(l));
    if !fits {
        return Err(BsvError::UnknownValue { key: key.to_string() });
    }
    Ok(HighlightSet {
        provenance: HighlightProvenance::ByValue,
        states: graph
            .nodes
            .iter()
            .filter(|n| &n.value_key == key)
            .flat_map(|n| n.member_states.iter().cloned())
            .collect(),
    })
}

pub fn timeline_slice(batch: &PlaythroughBatch, t: u32) -> Result<HighlightSet, BsvError> {
    if t == 0 || t > batch.t_max {
        return Err(BsvError::TimestepOutOfRange { t, t_max: batch.t_max });
    }
    Ok(HighlightSet {
        provenance: HighlightProvenance::ByTimestep,
        states: batch
            .storylines
            .iter()
            .filter_map(|s| s.state(t))
            .map(|st| st.key())
            .collect(),
    })
}
