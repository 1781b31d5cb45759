//! Brute-force checks of graph invariants. Each check recomputes what the
//! graph should contain directly from the batch and the assignments, without
//! going through the builder, and reports the first disagreement.

use std::collections::{BTreeMap, BTreeSet};

use super::BsvGraph;
use crate::model::{DimensionAssignment, PlaythroughBatch, StateRef, StorylineId};

type Check = Result<(), String>;

fn label_text(asgs: &[&DimensionAssignment], s: &StateRef) -> Result<String, String> {
    let mut parts = Vec::new();
    for a in asgs {
        let l = a.get(s).ok_or_else(|| format!("{s} has no label"))?;
        parts.push(l.as_str().to_string());
    }
    Ok(parts.join(","))
}

fn expected_id(asgs: &[&DimensionAssignment], s: &StateRef) -> Result<String, String> {
    Ok(format!("{}@t{}", label_text(asgs, s)?, s.timestep))
}

fn all_states(batch: &PlaythroughBatch) -> Vec<StateRef> {
    batch
        .storylines
        .iter()
        .flat_map(|s| (1..=s.states.len() as u32).map(|t| StateRef::new(s.id.clone(), t)))
        .collect()
}

/// Every state lies in exactly one node, and that node matches its timestep
/// and labels. No node is empty.
pub fn check_partition(batch: &PlaythroughBatch, asgs: &[&DimensionAssignment], g: &BsvGraph) -> Check {
    let mut owner: BTreeMap<&StateRef, &str> = BTreeMap::new();
    let mut ids = BTreeSet::new();
    for n in &g.nodes {
        if !ids.insert(n.id.as_str()) {
            return Err(format!("duplicate node {}", n.id));
        }
        if n.member_states.is_empty() {
            return Err(format!("empty node {}", n.id));
        }
        for s in &n.member_states {
            if let Some(prev) = owner.insert(s, &n.id) {
                return Err(format!("{s} in both {prev} and {}", n.id));
            }
            if n.timestep != Some(s.timestep) {
                return Err(format!("{s} sits in node {} of another timestep", n.id));
            }
            let want = expected_id(asgs, s)?;
            if want != n.id {
                return Err(format!("{s} should be in {want}, found in {}", n.id));
            }
        }
    }
    let states = all_states(batch);
    if owner.len() != states.len() {
        return Err(format!("{} states in nodes, batch has {}", owner.len(), states.len()));
    }
    for s in &states {
        if !owner.contains_key(s) {
            return Err(format!("{s} is in no node"));
        }
    }
    Ok(())
}

/// Edges are exactly the observed one-step transitions, with multiplicity
/// equal to the number of storylines making each transition.
pub fn check_edges(batch: &PlaythroughBatch, asgs: &[&DimensionAssignment], g: &BsvGraph) -> Check {
    let mut want: BTreeMap<(String, String), BTreeSet<StorylineId>> = BTreeMap::new();
    for s in &batch.storylines {
        for t in 1..s.states.len() as u32 {
            let from = expected_id(asgs, &StateRef::new(s.id.clone(), t))?;
            let to = expected_id(asgs, &StateRef::new(s.id.clone(), t + 1))?;
            want.entry((from, to)).or_default().insert(s.id.clone());
        }
    }
    let mut got: BTreeMap<(String, String), BTreeSet<StorylineId>> = BTreeMap::new();
    for e in &g.edges {
        let ids: BTreeSet<StorylineId> = e.storyline_ids.iter().cloned().collect();
        if ids.len() != e.multiplicity || e.storyline_ids.len() != e.multiplicity {
            return Err(format!("edge {} -> {} multiplicity {} disagrees with its storylines", e.from, e.to, e.multiplicity));
        }
        if got.insert((e.from.clone(), e.to.clone()), ids).is_some() {
            return Err(format!("duplicate edge {} -> {}", e.from, e.to));
        }
    }
    for (k, v) in &want {
        match got.get(k) {
            None => return Err(format!("missing edge {} -> {}", k.0, k.1)),
            Some(g) if g != v => return Err(format!("edge {} -> {} has storylines {g:?}, want {v:?}", k.0, k.1)),
            _ => {}
        }
    }
    if let Some(k) = got.keys().find(|k| !want.contains_key(*k)) {
        return Err(format!("spurious edge {} -> {}", k.0, k.1));
    }
    Ok(())
}

/// Each storyline can be walked through the graph along edges that carry
/// its id, visiting one node per state.
pub fn check_paths(batch: &PlaythroughBatch, g: &BsvGraph) -> Check {
    let node_of: BTreeMap<&StateRef, &str> = g
        .nodes
        .iter()
        .flat_map(|n| n.member_states.iter().map(move |s| (s, n.id.as_str())))
        .collect();
    for s in &batch.storylines {
        let mut path = Vec::new();
        for t in 1..=s.states.len() as u32 {
            let r = StateRef::new(s.id.clone(), t);
            path.push(*node_of.get(&r).ok_or_else(|| format!("{r} is in no node"))?);
        }
        for w in path.windows(2) {
            let e = g
                .edge(w[0], w[1])
                .ok_or_else(|| format!("{}: no edge {} -> {}", s.id, w[0], w[1]))?;
            if !e.storyline_ids.contains(&s.id) {
                return Err(format!("{}: edge {} -> {} does not list it", s.id, w[0], w[1]));
            }
        }
    }
    Ok(())
}

/// Projecting the 2D graph onto one of its axes gives that axis's 1D graph.
pub fn check_projection(grid: &BsvGraph, axis: usize, one_d: &BsvGraph) -> Check {
    let project = |id: &str| -> Result<String, String> {
        let (key, t) = id.rsplit_once("@t").ok_or_else(|| format!("bad node id {id}"))?;
        let part = key.split(',').nth(axis).ok_or_else(|| format!("node {id} has no axis {axis}"))?;
        Ok(format!("{part}@t{t}"))
    };
    let mut nodes: BTreeMap<String, BTreeSet<&StateRef>> = BTreeMap::new();
    for n in &grid.nodes {
        nodes.entry(project(&n.id)?).or_default().extend(&n.member_states);
    }
    let want: BTreeMap<String, BTreeSet<&StateRef>> = one_d
        .nodes
        .iter()
        .map(|n| (n.id.clone(), n.member_states.iter().collect()))
        .collect();
    if nodes != want {
        return Err(format!("projected nodes differ on axis {axis}"));
    }
    let mut edges: BTreeMap<(String, String), usize> = BTreeMap::new();
    for e in &grid.edges {
        *edges.entry((project(&e.from)?, project(&e.to)?)).or_default() += e.multiplicity;
    }
    let want: BTreeMap<(String, String), usize> = one_d
        .edges
        .iter()
        .map(|e| ((e.from.clone(), e.to.clone()), e.multiplicity))
        .collect();
    if edges != want {
        return Err(format!("projected edge multiplicities differ on axis {axis}"));
    }
    Ok(())
}

/// Compact counts equal the timeline's per-value column sums, and add up to
/// the number of states.
pub fn check_compact_sums(batch: &PlaythroughBatch, timeline: &BsvGraph, compact: &BsvGraph) -> Check {
    let mut columns: BTreeMap<String, usize> = BTreeMap::new();
    for n in &timeline.nodes {
        *columns.entry(n.value_key.to_string()).or_default() += n.member_states.len();
    }
    let got: BTreeMap<String, usize> = compact
        .nodes
        .iter()
        .map(|n| (n.id.clone(), n.member_states.len()))
        .collect();
    if got != columns {
        return Err(format!("compact counts {got:?} differ from column sums {columns:?}"));
    }
    let total: usize = got.values().sum();
    if total != batch.state_count() {
        return Err(format!("compact total {total} differs from {} states", batch.state_count()));
    }
    if !compact.edges.is_empty() {
        return Err("compact view has edges".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsv::{build_1d_bsv, build_2d_bsv, build_compact_view};
    use crate::model::{BatchId, Dimension, DimensionOrigin, Label, NarrativeState, Storyline};

    fn setup() -> (PlaythroughBatch, Dimension, DimensionAssignment) {
        let story = |id: &str, n: u32| Storyline {
            id: StorylineId::new(id),
            display_color: String::new(),
            player_profile: None,
            states: (1..=n)
                .map(|t| NarrativeState {
                    storyline_id: StorylineId::new(id),
                    timestep: t,
                    gm_text: "g".into(),
                    player_text: "p".into(),
                    summary: None,
                    triggered_rule_ids: Default::default(),
                })
                .collect(),
        };
        let batch = PlaythroughBatch::new(BatchId(1), vec![story("s1", 3), story("s2", 2)]).unwrap();
        let dim = Dimension::new("d", "", vec!["a".into(), "b".into()], DimensionOrigin::Author).unwrap();
        let labels = [("s1", 1, "a"), ("s1", 2, "b"), ("s1", 3, "a"), ("s2", 1, "a"), ("s2", 2, "b")];
        let asg = DimensionAssignment {
            dimension_id: dim.id.clone(),
            batch_id: batch.batch_id,
            assignments: labels
                .iter()
                .map(|(s, t, v)| (StateRef::new(*s, *t), Label::value(*v)))
                .collect(),
        };
        (batch, dim, asg)
    }

    #[test]
    fn detects_broken_graphs() {
        let (batch, dim, asg) = setup();
        let g = build_1d_bsv(&batch, &dim, &asg).unwrap();
        assert_eq!(check_partition(&batch, &[&asg], &g), Ok(()));
        assert_eq!(check_edges(&batch, &[&asg], &g), Ok(()));
        assert_eq!(check_paths(&batch, &g), Ok(()));

        let mut missing = g.clone();
        missing.edges.pop();
        assert!(check_edges(&batch, &[&asg], &missing).is_err());
        assert!(check_paths(&batch, &missing).is_err());

        let mut heavy = g.clone();
        heavy.edges[0].multiplicity += 1;
        assert!(check_edges(&batch, &[&asg], &heavy).is_err());

        let mut moved = g.clone();
        let s = moved.nodes[0].member_states.pop().unwrap();
        moved.nodes[1].member_states.push(s);
        assert!(check_partition(&batch, &[&asg], &moved).is_err());

        let mut lost = g.clone();
        lost.nodes.retain(|n| n.id != "a@t3");
        assert!(check_partition(&batch, &[&asg], &lost).is_err());
    }

    #[test]
    fn detects_bad_projections_and_sums() {
        let (batch, dim, asg) = setup();
        let g = build_1d_bsv(&batch, &dim, &asg).unwrap();
        let grid = build_2d_bsv(&batch, &dim, &dim_b(), &asg, &asg_b(&asg)).unwrap();
        assert_eq!(check_projection(&grid, 0, &g), Ok(()));
        let mut off = g.clone();
        off.edges[0].multiplicity += 1;
        assert!(check_projection(&grid, 0, &off).is_err());

        let compact = build_compact_view(&batch, &dim, &asg).unwrap();
        assert_eq!(check_compact_sums(&batch, &g, &compact), Ok(()));
        let mut short = compact.clone();
        short.nodes[0].member_states.pop();
        assert!(check_compact_sums(&batch, &g, &short).is_err());
    }

    fn dim_b() -> Dimension {
        Dimension::new("e", "", vec!["x".into(), "y".into()], DimensionOrigin::Author).unwrap()
    }

    fn asg_b(a: &DimensionAssignment) -> DimensionAssignment {
        DimensionAssignment {
            dimension_id: dim_b().id,
            batch_id: a.batch_id,
            assignments: a.assignments.keys().map(|k| (k.clone(), Label::value("x"))).collect(),
        }
    }
}
