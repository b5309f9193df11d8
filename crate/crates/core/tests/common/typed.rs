use std::collections::BTreeSet;

use lrbp::builder::{build_node_centered, SharingScheme, TypedGraph};
use lrbp::rng;
use rand::Rng;

use SharingScheme::{Bt, Cabt, Cabta, Cat};

/// Key tuples `(center_type, bond, neighbor_type)` with `usize::MAX` for
/// "absent", built straight from the scheme definitions.
pub fn oracle_keys(types: &[usize], edges: &[(usize, usize, usize)], scheme: SharingScheme) -> BTreeSet<(usize, usize, usize)> {
    const NONE: usize = usize::MAX;
    let mut keys = BTreeSet::new();
    for (i, &c) in types.iter().enumerate() {
        keys.insert(match scheme {
            Cat => (c, NONE, NONE),
            Bt => (NONE, NONE, NONE),
            Cabt | Cabta => (c, NONE, NONE),
        });
        for &(u, v, b) in edges {
            let j = if u == i {
                v
            } else if v == i {
                u
            } else {
                continue;
            };
            keys.insert(match scheme {
                Cat => (c, NONE, NONE),
                Bt => (NONE, b, NONE),
                Cabt => (c, b, NONE),
                Cabta => (c, b, types[j]),
            });
        }
    }
    keys
}

pub fn table_size(types: &[usize], edges: &[(usize, usize, usize)], scheme: SharingScheme) -> usize {
    let tg = TypedGraph::from_types(types, edges).unwrap();
    build_node_centered(&tg, scheme, 2).unwrap().slot_table.len()
}

/// Every `(c, b, n)` realized by a separate two-node component.
pub fn saturating(a: usize, b: usize) -> (Vec<usize>, Vec<(usize, usize, usize)>) {
    let mut types = Vec::new();
    let mut edges = Vec::new();
    for c in 0..a {
        for bond in 0..b {
            for n in 0..a {
                types.extend([c, n]);
                edges.push((types.len() - 2, types.len() - 1, bond));
            }
        }
    }
    (types, edges)
}

pub fn random_typed(seed: u64) -> (Vec<usize>, Vec<(usize, usize, usize)>) {
    let mut r = rng::seeded(seed);
    let n = r.random_range(3..12);
    let types: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random_bool(0.3) {
                edges.push((u, v, r.random_range(0..3)));
            }
        }
    }
    (types, edges)
}

/// Four small hand-checked graphs, three saturating graphs and three
/// random ones.
pub type Typed = (Vec<usize>, Vec<(usize, usize, usize)>);

pub fn ten_graphs() -> Vec<Typed> {
    let mut graphs = vec![
        (vec![0], vec![]),
        (vec![0, 1, 0], vec![(0, 1, 0), (1, 2, 0)]),
        (vec![0, 1, 2, 3], vec![(0, 1, 0), (0, 2, 0), (0, 3, 0)]),
        (vec![0, 0, 0], vec![(0, 1, 0), (1, 2, 1), (2, 0, 2)]),
    ];
    graphs.extend([saturating(1, 1), saturating(2, 3), saturating(3, 2)]);
    graphs.extend((0..3).map(random_typed));
    graphs
}
