use std::collections::BTreeMap;

use proptest::prelude::*;
use semidfegl::data::EgoGraph;
use semidfegl::numeric::{Embedding, RngStream};
use semidfegl::propagate::{ego_embed, group_propagate, oracle_centralized_lgc, uniform_alphas, GroupGraph, Node};
use semidfegl::sim::distributed_group_propagate;

fn random_graph(rng: &mut RngStream, users: usize, items: usize, fakes: usize) -> GroupGraph {
    let members = (0..users as u32)
        .map(|u| {
            let n = 1 + rng.index(items.min(4));
            (u * 3, (0..n).map(|_| rng.index(items) as u32).collect())
        })
        .collect();
    let fake = (0..fakes).map(|_| rng.index(items) as u32).collect();
    GroupGraph::new(members, fake)
}

fn random_init(graph: &GroupGraph, rng: &mut RngStream, dim: usize) -> BTreeMap<Node, Embedding> {
    graph
        .nodes()
        .into_iter()
        .map(|n| (n, Embedding::from_vec((0..dim).map(|_| rng.uniform() * 2.0 - 1.0).collect())))
        .collect()
}

fn close(a: &Embedding, b: &Embedding, tol: f64) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn propagation_is_linear(seed in any::<u64>(), users in 1usize..6, fakes in 0usize..3, layers in 1usize..5, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = RngStream::new(seed, "graph");
        let g = random_graph(&mut rng, users, 8, fakes);
        let x = random_init(&g, &mut rng, 3);
        let y = random_init(&g, &mut rng, 3);
        let mix: BTreeMap<Node, Embedding> = x
            .iter()
            .map(|(n, e)| {
                let mut v = e.scaled(a);
                v.add_scaled(b, &y[n]);
                (*n, v)
            })
            .collect();
        let alphas = uniform_alphas(layers);
        let px = group_propagate(&g, &x, layers, &alphas).unwrap();
        let py = group_propagate(&g, &y, layers, &alphas).unwrap();
        let pm = group_propagate(&g, &mix, layers, &alphas).unwrap();
        for (n, e) in &pm.combined {
            let mut expect = px.combined[n].scaled(a);
            expect.add_scaled(b, &py.combined[n]);
            prop_assert!(close(e, &expect, 1e-10), "{n:?}");
        }
    }

    #[test]
    fn member_relabeling_permutes_rows(seed in any::<u64>(), users in 2usize..6, layers in 1usize..4) {
        let mut rng = RngStream::new(seed, "graph");
        let g = random_graph(&mut rng, users, 8, 2);
        let x = random_init(&g, &mut rng, 2);
        // reverse the user order: user u becomes (max - u)
        let max = g.members().iter().map(|(u, _)| *u).max().unwrap();
        let relabel = |n: Node| match n {
            Node::User(u) => Node::User(max - u),
            Node::Private(u, i) => Node::Private(max - u, i),
            f => f,
        };
        let g2 = GroupGraph::new(
            g.members().iter().map(|(u, items)| (max - u, items.clone())).collect(),
            g.fake_items().to_vec(),
        );
        let x2: BTreeMap<Node, Embedding> = x.iter().map(|(n, e)| (relabel(*n), e.clone())).collect();
        let alphas = uniform_alphas(layers);
        let p1 = group_propagate(&g, &x, layers, &alphas).unwrap();
        let p2 = group_propagate(&g2, &x2, layers, &alphas).unwrap();
        for (n, e) in &p1.combined {
            prop_assert!(close(e, &p2.combined[&relabel(*n)], 1e-12));
        }
    }

    #[test]
    fn distributed_equals_dense_oracle_bitwise(seed in any::<u64>(), users in 1usize..9, fakes in 0usize..4, layers in 1usize..6) {
        let mut rng = RngStream::new(seed, "graph");
        let g = random_graph(&mut rng, users, 12, fakes);
        let x = random_init(&g, &mut rng, 4);
        let alphas = uniform_alphas(layers);
        let (dist, _) = distributed_group_propagate(&g, &x, layers, &alphas).unwrap();
        let dense = oracle_centralized_lgc(&g, &x, layers, &alphas).unwrap();
        prop_assert_eq!(dist, dense);
    }
}

/// e_ego from an explicit star adjacency matrix: build the (n+1)x(n+1)
/// matrix, pick the user's row and apply the scaling `1/sqrt(n)`.
#[test]
fn ego_embedding_matches_star_matrix() {
    let mut rng = RngStream::new(5, "ego");
    for n in 1..12usize {
        let items: Vec<u32> = (0..n as u32).map(|i| i * 2 + 1).collect();
        let embs: BTreeMap<u32, Embedding> = items
            .iter()
            .map(|&i| (i, Embedding::from_vec((0..3).map(|_| rng.uniform() - 0.5).collect())))
            .collect();
        // star: node 0 is the user, every other node links only to it
        let adj: Vec<Vec<f64>> = (0..=n)
            .map(|r| (0..=n).map(|c| if (r == 0) != (c == 0) { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut expect = [0.0; 3];
        for (j, item) in items.iter().enumerate() {
            for d in 0..3 {
                expect[d] += adj[0][j + 1] * embs[item][d];
            }
        }
        let expect: Vec<f64> = expect.iter().map(|v| v / (n as f64).sqrt()).collect();
        let got = ego_embed(&EgoGraph::new(9, items.clone()), &embs).unwrap();
        assert!(close(&got, &Embedding::from_vec(expect), 1e-14), "n={n}");
    }
}

#[test]
fn isolated_fake_items_keep_their_embedding() {
    // one member owning the only fake item privately: the fake is detached
    let g = GroupGraph::new(vec![(0, vec![1, 2])], vec![2]);
    let mut rng = RngStream::new(1, "iso");
    let x = random_init(&g, &mut rng, 2);
    let p = oracle_centralized_lgc(&g, &x, 3, &uniform_alphas(3)).unwrap();
    assert_eq!(p.combined[&Node::Fake(2)], x[&Node::Fake(2)]);
    let (d, transcript) = distributed_group_propagate(&g, &x, 3, &uniform_alphas(3)).unwrap();
    assert_eq!(d, p);
    assert!(transcript.is_empty());
}
