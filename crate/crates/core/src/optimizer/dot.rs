use std::fmt::Write;

use super::graph::{EdgeKind, GspGraph, Vertex};

fn node_id(v: &Vertex) -> String {
    match *v {
        Vertex::Source { model } => format!("M{model}"),
        Vertex::Grid { model, t } => format!("M{model}_{t}"),
        Vertex::Loop { model } => format!("M{model}_L"),
    }
}

fn node_label(v: &Vertex) -> String {
    match *v {
        Vertex::Source { model } => format!("(M{model})"),
        Vertex::Grid { model, t } => format!("(M{model}, {t})"),
        Vertex::Loop { model } => format!("(M{model}, L)"),
    }
}

/// Renders the graph as a Graphviz digraph. Vertices appear in graph order
/// and each edge is labelled with its multiplier and cost.
pub fn export_dot(graph: &GspGraph) -> String {
    let mut out = String::new();
    out.push_str("digraph gsp {\n");
    out.push_str("  rankdir=TB;\n");
    out.push_str("  node [shape=circle];\n");
    for (id, v) in graph.vertices().iter().enumerate() {
        let extra = if id == graph.source() { ", style=bold" } else { "" };
        writeln!(out, "  \"{}\" [label=\"{}\"{extra}];", node_id(v), node_label(v)).unwrap();
    }
    for e in graph.edges() {
        let color = match e.kind {
            EdgeKind::Source => "blue",
            EdgeKind::Internal => "orangered",
            EdgeKind::ToLoop => "darkgreen",
            EdgeKind::SelfLoop => "gray",
        };
        writeln!(
            out,
            "  \"{}\" -> \"{}\" [label=\"mu={:.6}\\nc={:.6}\", color={color}];",
            node_id(&graph.vertices()[e.from]),
            node_id(&graph.vertices()[e.to]),
            e.multiplier,
            e.cost,
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}
