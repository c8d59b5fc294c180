//! Light graph convolution over ego graphs and glued group graphs.
//!
//! Every kernel here uses the same floating-point schedule: a node's outgoing
//! message is its embedding times `1/sqrt(deg)`, incoming messages are summed
//! in ascending node order starting from zero, and the sum is scaled by the
//! receiver's `1/sqrt(deg)`. The device protocol follows the same schedule,
//! which is what makes distributed and centralized results bitwise equal.

use std::collections::BTreeMap;

use crate::data::{EgoGraph, ItemId, UserId};
use crate::error::{Error, Result};
use crate::numeric::{inv_sqrt, Embedding};

/// Largest graph the dense oracle accepts.
pub const ORACLE_MAX_NODES: usize = 10_000;

/// Node of a group graph. The derived order (users, then private item copies,
/// then fake items) is the accumulation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    User(UserId),
    /// A user's private copy of one of its interacted items.
    Private(UserId, ItemId),
    Fake(ItemId),
}

/// Glued bipartite graph of one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupGraph {
    members: Vec<(UserId, Vec<ItemId>)>,
    fake_items: Vec<ItemId>,
}

impl GroupGraph {
    pub fn new(members: Vec<(UserId, Vec<ItemId>)>, fake_items: Vec<ItemId>) -> Self {
        let mut members: Vec<(UserId, Vec<ItemId>)> = members
            .into_iter()
            .map(|(u, mut items)| {
                items.sort_unstable();
                items.dedup();
                (u, items)
            })
            .collect();
        members.sort_by_key(|(u, _)| *u);
        members.dedup_by_key(|(u, _)| *u);
        let mut fake_items = fake_items;
        fake_items.sort_unstable();
        fake_items.dedup();
        GroupGraph { members, fake_items }
    }

    pub fn members(&self) -> &[(UserId, Vec<ItemId>)] {
        &self.members
    }

    pub fn fake_items(&self) -> &[ItemId] {
        &self.fake_items
    }

    fn private(&self, user: UserId) -> Option<&[ItemId]> {
        self.members
            .binary_search_by_key(&user, |(u, _)| *u)
            .ok()
            .map(|i| self.members[i].1.as_slice())
    }

    /// Fake items connected to `user`: those it does not hold privately.
    pub fn attached_fakes(&self, user: UserId) -> Vec<ItemId> {
        let private = self.private(user).unwrap_or(&[]);
        attached_fakes(private, &self.fake_items)
    }

    /// Every node in accumulation order.
    pub fn nodes(&self) -> Vec<Node> {
        let mut nodes: Vec<Node> = self.members.iter().map(|(u, _)| Node::User(*u)).collect();
        for (u, items) in &self.members {
            nodes.extend(items.iter().map(|i| Node::Private(*u, *i)));
        }
        nodes.extend(self.fake_items.iter().map(|f| Node::Fake(*f)));
        nodes
    }

    /// Neighbors in ascending node order.
    pub fn neighbors(&self, node: Node) -> Vec<Node> {
        match node {
            Node::User(u) => {
                let mut out: Vec<Node> = self.private(u).unwrap_or(&[]).iter().map(|i| Node::Private(u, *i)).collect();
                out.extend(self.attached_fakes(u).into_iter().map(Node::Fake));
                out
            }
            Node::Private(u, _) => vec![Node::User(u)],
            Node::Fake(f) => self
                .members
                .iter()
                .filter(|(_, items)| items.binary_search(&f).is_err())
                .map(|(u, _)| Node::User(*u))
                .collect(),
        }
    }

    pub fn degree(&self, node: Node) -> usize {
        match node {
            Node::User(u) => {
                let private = self.private(u).unwrap_or(&[]);
                private.len() + attached_fakes(private, &self.fake_items).len()
            }
            Node::Private(..) => 1,
            Node::Fake(f) => self.members.iter().filter(|(_, items)| items.binary_search(&f).is_err()).count(),
        }
    }
}

/// Fake items not present in a sorted private list.
pub fn attached_fakes(private: &[ItemId], fakes: &[ItemId]) -> Vec<ItemId> {
    fakes.iter().copied().filter(|f| private.binary_search(f).is_err()).collect()
}

/// Per-node embeddings at layers `0..=K` plus their layer combination.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub layers: BTreeMap<Node, Vec<Embedding>>,
    pub combined: BTreeMap<Node, Embedding>,
    pub alphas: Vec<f64>,
}

pub fn uniform_alphas(layers: usize) -> Vec<f64> {
    vec![1.0 / (layers + 1) as f64; layers + 1]
}

/// `sum_k alphas[k] * layers[k]`, ascending `k`.
pub fn combine_layers(layers: &[Embedding], alphas: &[f64]) -> Embedding {
    let mut out = Embedding::zeros(layers[0].dim());
    for (layer, &a) in layers.iter().zip(alphas) {
        out.add_scaled(a, layer);
    }
    out
}

fn check_alphas(layers: usize, alphas: &[f64]) -> Result<()> {
    if layers == 0 {
        return Err(Error::Argument("propagation needs at least one layer".into()));
    }
    if alphas.len() != layers + 1 {
        return Err(Error::Argument(format!("expected {} alphas, got {}", layers + 1, alphas.len())));
    }
    if (alphas.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument("layer weights must sum to 1".into()));
    }
    Ok(())
}

fn lookup(init: &BTreeMap<Node, Embedding>, node: Node) -> Result<&Embedding> {
    init.get(&node).ok_or_else(|| match node {
        Node::Private(_, i) | Node::Fake(i) => Error::MissingEmbedding(i),
        Node::User(u) => Error::Argument(format!("missing embedding for user {u}")),
    })
}

/// One-hop aggregation over an isolated ego graph:
/// `e_ego = (1/sqrt(n)) * sum_i e_i`.
pub fn ego_embed(ego: &EgoGraph, item_embs: &BTreeMap<ItemId, Embedding>) -> Result<Embedding> {
    let first = ego
        .items
        .first()
        .ok_or_else(|| Error::Argument(format!("user {} has an empty ego graph", ego.user)))?;
    let dim = item_embs.get(first).ok_or(Error::MissingEmbedding(*first))?.dim();
    let mut acc = Embedding::zeros(dim);
    for item in &ego.items {
        let e = item_embs.get(item).ok_or(Error::MissingEmbedding(*item))?;
        acc.add_assign(&e.scaled(inv_sqrt(1)));
    }
    Ok(acc.scaled(inv_sqrt(ego.n())))
}

/// K synchronous LGC layers over the glued group graph followed by layer
/// combination. Zero-degree nodes keep their layer-0 embedding.
pub fn group_propagate(
    graph: &GroupGraph,
    init: &BTreeMap<Node, Embedding>,
    layers: usize,
    alphas: &[f64],
) -> Result<LayerStack> {
    check_alphas(layers, alphas)?;
    let nodes = graph.nodes();
    let degree: BTreeMap<Node, usize> = nodes.iter().map(|&n| (n, graph.degree(n))).collect();
    let neighbors: BTreeMap<Node, Vec<Node>> = nodes.iter().map(|&n| (n, graph.neighbors(n))).collect();
    let mut current: BTreeMap<Node, Embedding> = BTreeMap::new();
    for &n in &nodes {
        current.insert(n, lookup(init, n)?.clone());
    }
    let mut stack: BTreeMap<Node, Vec<Embedding>> = nodes.iter().map(|&n| (n, vec![current[&n].clone()])).collect();
    for _ in 0..layers {
        let outgoing: BTreeMap<Node, Embedding> = nodes
            .iter()
            .filter(|n| degree[n] > 0)
            .map(|&n| (n, current[&n].scaled(inv_sqrt(degree[&n]))))
            .collect();
        let mut next = BTreeMap::new();
        for &n in &nodes {
            let value = if degree[&n] == 0 {
                current[&n].clone()
            } else {
                let mut acc = Embedding::zeros(current[&n].dim());
                for nb in &neighbors[&n] {
                    acc.add_assign(&outgoing[nb]);
                }
                acc.scaled(inv_sqrt(degree[&n]))
            };
            next.insert(n, value);
        }
        for (n, v) in &next {
            stack.get_mut(n).expect("node").push(v.clone());
        }
        current = next;
    }
    let combined = stack.iter().map(|(n, ls)| (*n, combine_layers(ls, alphas))).collect();
    Ok(LayerStack {
        layers: stack,
        combined,
        alphas: alphas.to_vec(),
    })
}

/// Dense reference: builds the adjacency matrix explicitly and applies
/// `D^{-1/2} (A (D^{-1/2} X))` per layer. Test oracle for the sparse and
/// distributed kernels.
pub fn oracle_centralized_lgc(
    graph: &GroupGraph,
    init: &BTreeMap<Node, Embedding>,
    layers: usize,
    alphas: &[f64],
) -> Result<LayerStack> {
    check_alphas(layers, alphas)?;
    let nodes = graph.nodes();
    let n = nodes.len();
    if n > ORACLE_MAX_NODES {
        return Err(Error::Argument(format!("dense oracle limited to {ORACLE_MAX_NODES} nodes, got {n}")));
    }
    let index: BTreeMap<Node, usize> = nodes.iter().enumerate().map(|(i, &node)| (node, i)).collect();
    let mut adj = vec![vec![0.0f64; n]; n];
    for (i, &node) in nodes.iter().enumerate() {
        for nb in graph.neighbors(node) {
            adj[i][index[&nb]] = 1.0;
        }
    }
    let deg: Vec<usize> = adj.iter().map(|row| row.iter().filter(|&&a| a != 0.0).count()).collect();
    let mut x: Vec<Embedding> = nodes.iter().map(|&node| lookup(init, node).cloned()).collect::<Result<_>>()?;
    let dim = x.first().map_or(0, |e| e.dim());
    let mut history: Vec<Vec<Embedding>> = x.iter().map(|e| vec![e.clone()]).collect();
    for _ in 0..layers {
        let y: Vec<Embedding> = (0..n)
            .map(|j| if deg[j] > 0 { x[j].scaled(inv_sqrt(deg[j])) } else { Embedding::zeros(dim) })
            .collect();
        let next: Vec<Embedding> = (0..n)
            .map(|i| {
                if deg[i] == 0 {
                    return x[i].clone();
                }
                let mut z = Embedding::zeros(dim);
                for j in 0..n {
                    z.add_scaled(adj[i][j], &y[j]);
                }
                z.scaled(inv_sqrt(deg[i]))
            })
            .collect();
        for (h, v) in history.iter_mut().zip(&next) {
            h.push(v.clone());
        }
        x = next;
    }
    let layers_map: BTreeMap<Node, Vec<Embedding>> = nodes.iter().copied().zip(history).collect();
    let combined = layers_map.iter().map(|(node, ls)| (*node, combine_layers(ls, alphas))).collect();
    Ok(LayerStack {
        layers: layers_map,
        combined,
        alphas: alphas.to_vec(),
    })
}
