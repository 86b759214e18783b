//! Shared random-market machinery for integration suites. Deterministic for
//! a fixed RNG seed. Not every suite uses every helper.
#![allow(dead_code)]

use conic_markets::market::{
    BidAskProcess, Claim, FiltrationTree, Market, TreeNode,
};
use conic_markets::rational::{qr, Rational};
use num_traits::One;
use rand::Rng;
use std::collections::BTreeMap;

/// Exchange-rate palette. Sub-one entries make cross-period arbitrage
/// possible; the per-node netting condition is enforced by repair afterward.
const RATES: [(i64, i64); 7] = [(1, 2), (2, 3), (1, 1), (5, 4), (3, 2), (2, 1), (3, 1)];

/// Rates bounded below by one: a market built only from these always admits
/// the constant all-ones consistent price process.
const SAFE_RATES: [(i64, i64); 5] = [(1, 1), (5, 4), (3, 2), (2, 1), (3, 1)];

pub fn random_tree(rng: &mut impl Rng, horizon: usize, max_branching: usize) -> FiltrationTree {
    let mut nodes = vec![TreeNode {
        id: 0,
        time: 0,
        parent: None,
        prob: Rational::one(),
    }];
    let mut frontier = vec![0usize];
    let mut next_id = 1usize;
    for t in 1..=horizon {
        let mut new_frontier = Vec::new();
        for &p in &frontier {
            let b = rng.gen_range(1..=max_branching);
            let weights: Vec<i64> = (0..b).map(|_| rng.gen_range(1..=4)).collect();
            let total: i64 = weights.iter().sum();
            for w in weights {
                nodes.push(TreeNode {
                    id: next_id,
                    time: t,
                    parent: Some(p),
                    prob: &nodes[p].prob * qr(w, total),
                });
                new_frontier.push(next_id);
                next_id += 1;
            }
        }
        frontier = new_frontier;
    }
    FiltrationTree::new(horizon, nodes).unwrap()
}

fn random_matrix(rng: &mut impl Rng, dim: usize, palette: &[(i64, i64)]) -> Vec<Vec<Rational>> {
    let mut m = vec![vec![Rational::one(); dim]; dim];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            if i != j {
                let (n, d) = palette[rng.gen_range(0..palette.len())];
                *v = qr(n, d);
            }
        }
    }
    m
}

/// Random validated market. `safe_rates` restricts quotes to >= 1, which
/// guarantees the market is arbitrage-free.
pub fn random_market(
    rng: &mut impl Rng,
    dim: usize,
    horizon: usize,
    max_branching: usize,
    safe_rates: bool,
) -> Market {
    let tree = random_tree(rng, horizon, max_branching);
    let palette: &[(i64, i64)] = if safe_rates { &SAFE_RATES } else { &RATES };
    let mut matrices = BTreeMap::new();
    for node in &tree.nodes {
        // netting repair per matrix; a wealth cycle means the random quotes
        // were inconsistent, so retreat to safe ones (rates >= 1 never
        // cycle below one, so their repair always succeeds)
        let fixed = repaired_matrix(random_matrix(rng, dim, palette), dim)
            .unwrap_or_else(|| {
                repaired_matrix(random_matrix(rng, dim, &SAFE_RATES), dim).unwrap()
            });
        matrices.insert(node.id, fixed);
    }
    let bidask = BidAskProcess { matrices };
    bidask.validate(&tree, dim).expect("repair yields valid quotes");
    Market::from_bidask(dim, tree, bidask, BTreeMap::new()).unwrap()
}

fn repaired_matrix(m: Vec<Vec<Rational>>, dim: usize) -> Option<Vec<Vec<Rational>>> {
    let mut p = BidAskProcess {
        matrices: [(0usize, m)].into_iter().collect(),
    };
    p.repair_netting(dim).ok()?;
    p.matrices.remove(&0)
}

pub fn random_claim(rng: &mut impl Rng, market: &Market) -> Claim {
    let values = market
        .tree
        .leaves()
        .iter()
        .map(|&l| {
            let v: Vec<Rational> = (0..market.dim)
                .map(|_| qr(rng.gen_range(-4i64..=4), rng.gen_range(1i64..=2)))
                .collect();
            (l, v)
        })
        .collect();
    Claim {
        dim: market.dim,
        values,
    }
}

/// Random nonnegative integer combinations of each node's generators; the
/// leaf-path sums define an attainable claim by construction.
pub fn random_strategy(
    rng: &mut impl Rng,
    market: &Market,
) -> (conic_markets::pricing::HedgingStrategy, Claim) {
    let mut legs = Vec::new();
    for t in 0..=market.tree.horizon {
        let mut leg = BTreeMap::new();
        for node in market.tree.nodes_at(t) {
            let mut xi = vec![Rational::from_integer(0.into()); market.dim];
            for g in market.node_generators(node) {
                let w = rng.gen_range(0i64..=2);
                if w == 0 {
                    continue;
                }
                for (i, v) in g.iter().enumerate() {
                    xi[i] = &xi[i] + &(v * qr(w, 1));
                }
            }
            leg.insert(node, xi);
        }
        legs.push(leg);
    }
    let strategy = conic_markets::pricing::HedgingStrategy { legs };
    let mut values = BTreeMap::new();
    for &l in market.tree.leaves() {
        let mut sum = vec![Rational::from_integer(0.into()); market.dim];
        let mut cur = Some(l);
        while let Some(v) = cur {
            let t = market.tree.time(v);
            for (i, w) in strategy.legs[t][&v].iter().enumerate() {
                sum[i] = &sum[i] + w;
            }
            cur = market.tree.parent(v);
        }
        values.insert(l, sum);
    }
    (
        strategy,
        Claim {
            dim: market.dim,
            values,
        },
    )
}
