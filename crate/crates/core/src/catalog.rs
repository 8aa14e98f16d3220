//! Fixed graph catalogs used by the verification suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Topology;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedTopology {
    pub name: String,
    pub topology: Topology,
}

impl NamedTopology {
    pub fn new(name: impl Into<String>, topology: Topology) -> Self {
        Self {
            name: name.into(),
            topology,
        }
    }
}

fn named(name: &str, edges: &[(usize, usize)]) -> NamedTopology {
    let m = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
    NamedTopology::new(name, Topology::new(m, edges.iter().copied()).expect("catalog graphs are simple"))
}

/// Every graph with at most four edges and no isolated nodes, one per isomorphism class
/// (1, 2, 5 and 11 classes for 1..=4 edges).
///
/// Isolated nodes only contribute a constant factor to `|Σ(a)|`, so this covers
/// every topology with up to four edges as far as the edge measure is concerned.
pub fn small_graphs(max_edges: usize) -> Vec<NamedTopology> {
    let all = [
        named("K2", &[(0, 1)]),
        named("P3", &[(0, 1), (1, 2)]),
        named("2K2", &[(0, 1), (2, 3)]),
        named("K3", &[(0, 1), (1, 2), (0, 2)]),
        named("P4", &[(0, 1), (1, 2), (2, 3)]),
        named("S4", &[(0, 1), (0, 2), (0, 3)]),
        named("P3+K2", &[(0, 1), (1, 2), (3, 4)]),
        named("3K2", &[(0, 1), (2, 3), (4, 5)]),
        named("C4", &[(0, 1), (1, 2), (2, 3), (0, 3)]),
        named("paw", &[(0, 1), (1, 2), (0, 2), (2, 3)]),
        named("P5", &[(0, 1), (1, 2), (2, 3), (3, 4)]),
        named("S5", &[(0, 1), (0, 2), (0, 3), (0, 4)]),
        named("chair", &[(0, 1), (0, 2), (0, 3), (3, 4)]),
        named("K3+K2", &[(0, 1), (1, 2), (0, 2), (3, 4)]),
        named("P4+K2", &[(0, 1), (1, 2), (2, 3), (4, 5)]),
        named("S4+K2", &[(0, 1), (0, 2), (0, 3), (4, 5)]),
        named("2P3", &[(0, 1), (1, 2), (3, 4), (4, 5)]),
        named("P3+2K2", &[(0, 1), (1, 2), (3, 4), (5, 6)]),
        named("4K2", &[(0, 1), (2, 3), (4, 5), (6, 7)]),
    ];
    all.into_iter()
        .filter(|g| g.topology.num_edges() <= max_edges)
        .collect()
}

/// Connected test graphs: paths, cycles, stars and `K4`, each listed once, with at most
/// `max_edges` edges.
pub fn connected_catalog(max_edges: usize) -> Vec<NamedTopology> {
    let mut out = Vec::new();
    for m in 2..=max_edges + 1 {
        out.push(NamedTopology::new(format!("P{m}"), Topology::path(m)));
    }
    for m in 3..=max_edges {
        out.push(NamedTopology::new(
            format!("C{m}"),
            Topology::cycle(m).expect("m >= 3"),
        ));
    }
    // S2 and S3 coincide with P2 and P3.
    for m in 4..=max_edges + 1 {
        out.push(NamedTopology::new(format!("S{m}"), Topology::star(m)));
    }
    // K2 = P2 and K3 = C3.
    if max_edges >= 6 {
        out.push(NamedTopology::new("K4", Topology::complete(4)));
    }
    out
}

/// `count` Erdős–Rényi graphs with 2..=`max_nodes` nodes and at least one edge.
pub fn random_graphs(count: usize, max_nodes: usize, seed: u64) -> Vec<NamedTopology> {
    assert!(max_nodes >= 2, "random graphs need at least two nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m = rng.random_range(2..=max_nodes);
        let p = rng.random_range(0.2..0.8);
        let top = Topology::random_gnp(m, p, &mut rng);
        if top.num_edges() > 0 {
            out.push(NamedTopology::new(format!("G{}({m},{p:.2})", out.len()), top));
        }
    }
    out
}
