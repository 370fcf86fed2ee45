//! Load the bundled knowledge base, inspect its star-hierarchical layout,
//! and run layered retrieval queries against the policy and control
//! subgraphs.
//!
//! Run with: cargo run --example kb_retrieval

use veriflight::graph::{build_graph, render_context, retrieve, Embedder, Query, Subgraph, DEFAULT_KB};

fn main() {
    let graph = build_graph(DEFAULT_KB).expect("bundled knowledge base must validate");
    println!("hub: {}", graph.hub().id);
    println!("node counts by subgraph: {:?}", graph.node_counts());
    println!("edge counts by kind: {:?}", graph.edge_counts());

    // Deterministic hashed-bag embedder; set EMBED_URL to use a real service.
    let embedder = Embedder::from_env();

    // Policy lookup: threat level, then preferred maneuver family.
    let q = Query::new(vec!["critical".into(), "evade".into()]);
    let path = retrieve(&graph, &q, Subgraph::Policy, &embedder).expect("policy retrieval");
    println!("\npolicy path: {:?} (objective {:.4})", path.nodes, path.objective);
    println!("rendered context:\n{}", render_context(&graph, &path));

    // Control lookup keyed on the active semantic class.
    let q = Query::new(vec!["tracking".into()]);
    let path = retrieve(&graph, &q, Subgraph::Control, &embedder).expect("control retrieval");
    println!("control path: {:?} (objective {:.4})", path.nodes, path.objective);
    println!("rendered context:\n{}", render_context(&graph, &path));
}
