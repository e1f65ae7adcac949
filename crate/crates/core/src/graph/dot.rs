use std::fmt::Write;

use super::{BackboneGraph, EdgeKind};

/// Graphviz rendering: one node per block labelled `L{i}/{type}/{C}`, solid
/// connection edges, dashed orphan edges and bold edges along the stem chain.
pub fn to_dot(g: &BackboneGraph) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", g.name.replace('"', "\\\""));
    let _ = writeln!(s, "  rankdir=LR;");
    let _ = writeln!(s, "  node [shape=box];");
    let mut blocks: Vec<_> = g.blocks().collect();
    blocks.sort_by_key(|b| b.ordering);
    for b in &blocks {
        let style = if b.is_stem {
            ", style=filled, fillcolor=lightgrey"
        } else if b.is_output {
            ", peripheries=2"
        } else {
            ""
        };
        let _ = writeln!(s, "  b{} [label=\"{}\"{}];", b.id.0, b.label(), style);
    }
    for w in g.stem.windows(2) {
        let _ = writeln!(s, "  b{} -> b{} [style=bold];", w[0].id.0, w[1].id.0);
    }
    let mut sorted = g.clone();
    sorted.sort_edges();
    for e in &sorted.edges {
        let style = match e.kind {
            EdgeKind::Connection => "solid",
            EdgeKind::Orphan => "dashed",
        };
        let _ = writeln!(s, "  b{} -> b{} [style={}];", e.parent.0, e.child.0, style);
    }
    s.push_str("}\n");
    s
}
