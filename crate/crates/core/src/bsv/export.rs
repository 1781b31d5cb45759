use std::fmt::Write;

use super::{BsvGraph, BsvNode};

/// Structured export; keys follow the struct declaration order.
pub fn to_json(graph: &BsvGraph) -> String {
    let mut s = serde_json::to_string_pretty(graph).expect("graph serializes");
    s.push('\n');
    s
}

fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn label(node: &BsvNode) -> String {
    match node.timestep {
        Some(t) => format!("{}@t{} (n={})", node.value_key, t, node.count()),
        None => format!("{} (n={})", node.value_key, node.count()),
    }
}

/// DOT text with one `rank=same` subgraph per timestep.
pub fn to_dot(graph: &BsvGraph) -> String {
    let mut out = String::new();
    let dims: Vec<&str> = graph.dimensions.iter().map(|d| d.name.as_str()).collect();
    writeln!(out, "digraph bsv {{").unwrap();
    writeln!(out, "  // dimensions: {}; batch: {}", dims.join(" x "), graph.batch_id).unwrap();
    writeln!(out, "  rankdir=TB;").unwrap();

    let mut i = 0;
    while i < graph.nodes.len() {
        let t = graph.nodes[i].timestep;
        let end = graph.nodes[i..]
            .iter()
            .position(|n| n.timestep != t)
            .map_or(graph.nodes.len(), |p| i + p);
        let indent = match t {
            Some(t) => {
                writeln!(out, "  subgraph rank_t{t} {{").unwrap();
                writeln!(out, "    rank=same;").unwrap();
                "    "
            }
            None => "  ",
        };
        for n in &graph.nodes[i..end] {
            writeln!(out, "{indent}{} [label={}];", quote(&n.id), quote(&label(n))).unwrap();
        }
        if t.is_some() {
            writeln!(out, "  }}").unwrap();
        }
        i = end;
    }
    for e in &graph.edges {
        writeln!(out, "  {} -> {} [weight={}];", quote(&e.from), quote(&e.to), e.multiplicity).unwrap();
    }
    writeln!(out, "}}").unwrap();
    out
}
