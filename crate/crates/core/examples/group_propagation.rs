//! Glue three ego graphs with fake items, run message passing over the bus
//! and compare against the dense centralized computation.
//!
//!     cargo run --example group_propagation

use std::collections::BTreeMap;

use semidfegl::numeric::{Embedding, RngStream};
use semidfegl::propagate::{oracle_centralized_lgc, uniform_alphas, GroupGraph, Node};
use semidfegl::sim::distributed_group_propagate;

fn main() -> semidfegl::Result<()> {
    // users 0..3 share no private item; fake items 7 and 9 connect them
    let graph = GroupGraph::new(vec![(0, vec![1, 2]), (1, vec![3]), (2, vec![4, 5, 6])], vec![7, 9]);
    let layers = 3;
    let alphas = uniform_alphas(layers);
    let mut rng = RngStream::new(1, "example");
    let init: BTreeMap<Node, Embedding> = graph
        .nodes()
        .into_iter()
        .map(|n| (n, Embedding::from_vec((0..4).map(|_| rng.uniform() - 0.5).collect())))
        .collect();

    let (dist, transcript) = distributed_group_propagate(&graph, &init, layers, &alphas)?;
    let dense = oracle_centralized_lgc(&graph, &init, layers, &alphas)?;
    println!("nodes: {}", graph.nodes().len());
    println!("d2d messages: {}", transcript.len());
    println!("bitwise equal to dense oracle: {}", dist == dense);
    for u in 0..3 {
        let e = &dist.combined[&Node::User(u)];
        println!("user {u} final: {:?}", e.iter().map(|x| format!("{x:+.4}")).collect::<Vec<_>>());
    }
    Ok(())
}
