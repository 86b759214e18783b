//! Consistent price processes, claim pricing and the dual attainability test.
//!
//! A price process assigns a nonzero functional from the polar of the node's
//! trading cone to every node and is a martingale under the tree's measure.
//! Existence of such a process is equivalent to absence of arbitrage; its
//! strict variant (strictly negative on every generator outside the cone's
//! lineality) certifies the stronger no-arbitrage used by the approximation
//! machinery. All questions reduce to one LP over per-node variables.

use crate::cone::ConeError;
use crate::dd::DdCone;
use crate::linalg;
use crate::lp::{solve, LinearProgram, LpError, LpOutcome, Relation};
use crate::market::{Claim, Market};
use crate::rational::{dot, Rational};
use num_traits::{One, Signed, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum PricingError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid price process: {0}")]
    InvalidProcess(String),
    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),
    #[error("market admits arbitrage; consistent prices do not exist")]
    Arbitrage,
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriceProcess {
    /// node id -> price vector at that node
    pub values: BTreeMap<usize, Vec<Rational>>,
    pub strict: bool,
    /// In strict mode: the common margin −s achieved on every generator
    /// outside the node lineality.
    pub strict_slack: Option<Rational>,
}

impl PriceProcess {
    pub fn value(&self, node: usize) -> &[Rational] {
        &self.values[&node]
    }

    /// Re-verifies every defining property against the market. `strict`
    /// failures mention the offending node and generator.
    pub fn validate(&self, market: &Market) -> Result<(), PricingError> {
        let d = market.dim;
        for n in &market.tree.nodes {
            let z = self.values.get(&n.id).ok_or_else(|| {
                PricingError::InvalidProcess(format!("no price vector at node {}", n.id))
            })?;
            if z.len() != d {
                return Err(PricingError::InvalidProcess(format!(
                    "price vector at node {} has dimension {}, expected {d}",
                    n.id,
                    z.len()
                )));
            }
            if z.iter().any(|v| v.is_negative()) {
                return Err(PricingError::InvalidProcess(format!(
                    "negative component at node {}",
                    n.id
                )));
            }
            if z.iter().fold(Rational::zero(), |a, v| a + v).is_zero() {
                return Err(PricingError::InvalidProcess(format!(
                    "zero price vector at node {}",
                    n.id
                )));
            }
            let gens = market.node_generators(n.id);
            let lin = node_lineality(d, gens)?;
            for (gi, g) in gens.iter().enumerate() {
                let v = dot(z, g);
                if v.is_positive() {
                    return Err(PricingError::InvalidProcess(format!(
                        "positive pairing with generator {gi} at node {}",
                        n.id
                    )));
                }
                if self.strict && v.is_zero() && !linalg::in_span(&lin, g) {
                    return Err(PricingError::InvalidProcess(format!(
                        "strict process pairs to zero with generator {gi} at node {}",
                        n.id
                    )));
                }
            }
        }
        for n in &market.tree.nodes {
            let children = market.tree.children(n.id);
            if children.is_empty() {
                continue;
            }
            let z = &self.values[&n.id];
            for i in 0..d {
                let mut rhs = Rational::zero();
                for &c in children {
                    rhs = rhs + market.tree.prob(c) * &self.values[&c][i];
                }
                if market.tree.prob(n.id) * &z[i] != rhs {
                    return Err(PricingError::InvalidProcess(format!(
                        "martingale equality fails at node {} component {}",
                        n.id,
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// E[Z_T · X].
    pub fn price(&self, market: &Market, x: &Claim) -> Rational {
        let mut p = Rational::zero();
        for &l in market.tree.leaves() {
            p = p + market.tree.prob(l) * &dot(&self.values[&l], x.value(l));
        }
        p
    }
}

fn node_lineality(dim: usize, gens: &[Vec<Rational>]) -> Result<Vec<Vec<Rational>>, PricingError> {
    Ok(DdCone::from_generators(dim, gens, &[])
        .map_err(ConeError::from)?
        .lin)
}

#[derive(Debug)]
pub enum CppOutcome {
    Found(PriceProcess),
    /// Strict mode only: consistent processes exist but every one of them
    /// pairs to zero with some generator outside the lineality.
    OnlyBoundary(PriceProcess),
    /// Row multipliers proving the constraint system empty (market has
    /// arbitrage, or the price-zero side constraint cannot hold).
    Infeasible { farkas: Vec<Rational> },
}

/// LP encoding: one vector of nonnegative variables per node, martingale
/// equalities between parent and children, a polar inequality per generator,
/// and Σ_i Z_i >= 1 at every leaf. Nonzeroness propagates up the tree: node
/// sums are convex combinations of child sums. Strict mode maximizes one
/// common slack s ∈ [0,1] with Z·g <= −s on generators outside the node
/// lineality; the optimum is positive exactly when a strictly consistent
/// process exists (lineality generators are exempt — no functional is
/// negative on both ends of a line).
pub fn find_consistent_process(
    market: &Market,
    strict: bool,
    price_zero: Option<&Claim>,
) -> Result<CppOutcome, PricingError> {
    let d = market.dim;
    let n = market.tree.len();
    if let Some(x) = price_zero {
        if x.dim != d {
            return Err(PricingError::Dimension(format!(
                "price-zero claim has dimension {}, market has {d}",
                x.dim
            )));
        }
        x.validate(&market.tree, "price-zero")
            .map_err(|e| PricingError::Dimension(e.to_string()))?;
    }

    let slack_var = if strict { Some(n * d) } else { None };
    let num_vars = n * d + usize::from(strict);
    let mut lp = LinearProgram::new(num_vars);
    for v in 0..n * d {
        lp.nonneg(v);
    }
    if let Some(s) = slack_var {
        lp.nonneg(s);
        lp.set_upper(s, Rational::one());
        lp.maximize(vec![(s, Rational::one())]);
    }

    for node in &market.tree.nodes {
        let base = node.id * d;
        let children = market.tree.children(node.id);
        if !children.is_empty() {
            for i in 0..d {
                let mut row = vec![(base + i, market.tree.prob(node.id).clone())];
                for &c in children {
                    row.push((c * d + i, -market.tree.prob(c).clone()));
                }
                lp.add_row(row, Relation::Eq, Rational::zero());
            }
        }
        let gens = market.node_generators(node.id);
        let lin = if strict {
            node_lineality(d, gens)?
        } else {
            Vec::new()
        };
        for g in gens {
            let mut row: Vec<(usize, Rational)> = g
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(i, v)| (base + i, v.clone()))
                .collect();
            if let Some(s) = slack_var {
                if !linalg::in_span(&lin, g) {
                    row.push((s, Rational::one()));
                }
            }
            lp.add_row(row, Relation::Le, Rational::zero());
        }
    }
    for &l in market.tree.leaves() {
        let row = (0..d).map(|i| (l * d + i, Rational::one())).collect();
        lp.add_row(row, Relation::Ge, Rational::one());
    }
    if let Some(x) = price_zero {
        let mut row = Vec::new();
        for &l in market.tree.leaves() {
            let p = market.tree.prob(l);
            for (i, v) in x.value(l).iter().enumerate() {
                if !v.is_zero() {
                    row.push((l * d + i, p * v));
                }
            }
        }
        lp.add_row(row, Relation::Eq, Rational::zero());
    }

    let extract = |point: &[Rational], strict_ok: bool, slack: Option<Rational>| {
        let values: BTreeMap<usize, Vec<Rational>> = market
            .tree
            .nodes
            .iter()
            .map(|node| (node.id, point[node.id * d..(node.id + 1) * d].to_vec()))
            .collect();
        PriceProcess {
            values,
            strict: strict_ok,
            strict_slack: slack,
        }
    };

    let outcome = match solve(&lp)? {
        LpOutcome::Feasible { point } => CppOutcome::Found(extract(&point, false, None)),
        LpOutcome::Optimal {
            point, objective, ..
        } => {
            if objective.is_positive() {
                CppOutcome::Found(extract(&point, true, Some(objective)))
            } else {
                CppOutcome::OnlyBoundary(extract(&point, false, Some(objective)))
            }
        }
        LpOutcome::Infeasible { farkas } => CppOutcome::Infeasible { farkas },
        LpOutcome::Unbounded { .. } => {
            return Err(PricingError::Lp(LpError::Internal(
                "bounded slack objective reported unbounded".into(),
            )))
        }
    };

    if let CppOutcome::Found(p) | CppOutcome::OnlyBoundary(p) = &outcome {
        p.validate(market)?;
        if let Some(x) = price_zero {
            if !p.price(market, x).is_zero() {
                return Err(PricingError::Lp(LpError::Internal(
                    "price-zero constraint not honored by solution".into(),
                )));
            }
        }
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Pricing and value processes
// ---------------------------------------------------------------------------

/// One portfolio adjustment per node: `legs[t]` maps every time-t node to
/// the position change chosen there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HedgingStrategy {
    pub legs: Vec<BTreeMap<usize, Vec<Rational>>>,
}

impl HedgingStrategy {
    /// Checks shape, per-node cone membership, and that the legs sum to `x`
    /// along every path.
    pub fn validate(&self, market: &Market, x: &Claim) -> Result<(), PricingError> {
        let d = market.dim;
        let horizon = market.tree.horizon;
        if self.legs.len() != horizon + 1 {
            return Err(PricingError::InvalidDecomposition(format!(
                "{} legs for horizon {horizon}",
                self.legs.len()
            )));
        }
        for (t, leg) in self.legs.iter().enumerate() {
            let nodes = market.tree.nodes_at(t);
            for &node in &nodes {
                let xi = leg.get(&node).ok_or_else(|| {
                    PricingError::InvalidDecomposition(format!(
                        "leg at time {t} missing node {node}"
                    ))
                })?;
                if xi.len() != d {
                    return Err(PricingError::InvalidDecomposition(format!(
                        "leg at time {t}, node {node} has dimension {}",
                        xi.len()
                    )));
                }
                if !in_node_cone(d, market.node_generators(node), xi)? {
                    return Err(PricingError::InvalidDecomposition(format!(
                        "leg at time {t}, node {node} is not in the trading cone"
                    )));
                }
            }
            if leg.len() != nodes.len() {
                return Err(PricingError::InvalidDecomposition(format!(
                    "leg at time {t} names nodes outside time {t}"
                )));
            }
        }
        for &l in market.tree.leaves() {
            let mut sum = vec![Rational::zero(); d];
            let mut cur = Some(l);
            while let Some(v) = cur {
                let t = market.tree.time(v);
                for (i, w) in self.legs[t][&v].iter().enumerate() {
                    sum[i] = &sum[i] + w;
                }
                cur = market.tree.parent(v);
            }
            if sum != x.value(l) {
                return Err(PricingError::InvalidDecomposition(format!(
                    "legs sum to a different claim at leaf {l}"
                )));
            }
        }
        Ok(())
    }
}

fn in_node_cone(
    dim: usize,
    gens: &[Vec<Rational>],
    v: &[Rational],
) -> Result<bool, PricingError> {
    let mut cone = crate::cone::LiftedCone::empty(dim, 1);
    for (i, g) in gens.iter().enumerate() {
        cone.add(
            crate::cone::Provenance::Node {
                time: 0,
                node: 0,
                index: i,
            },
            g.iter()
                .enumerate()
                .filter(|(_, x)| !x.is_zero())
                .map(|(c, x)| (c, x.clone()))
                .collect(),
        );
    }
    Ok(crate::cone::member(&cone, v)?.is_inside())
}

#[derive(Debug, Clone)]
pub struct PricingReport {
    /// E[Z_T · X].
    pub price: Rational,
    /// Conditional expectation of Z_T·X at every node (tower-exact).
    pub values: BTreeMap<usize, Rational>,
    /// E[Z_s · ξ_s] per period, when a decomposition was supplied.
    pub period_terms: Option<Vec<Rational>>,
    /// Whether V_t(ν) = Z_t(ν) · (ξ_0 + … + ξ_t)(ν) holds everywhere; true
    /// exactly when the future periods price to zero conditionally.
    pub value_matches_position: Option<bool>,
}

/// Exact price, value process, and — with a decomposition — the per-period
/// breakdown E[Z_T·X] = Σ_s E[Z_s·ξ_s] (an identity for any valid pair,
/// asserted rather than assumed).
pub fn price_and_value(
    market: &Market,
    z: &PriceProcess,
    x: &Claim,
    decomposition: Option<&HedgingStrategy>,
) -> Result<PricingReport, PricingError> {
    z.validate(market)?;
    x.validate(&market.tree, "priced")
        .map_err(|e| PricingError::Dimension(e.to_string()))?;

    let mut values: BTreeMap<usize, Rational> = BTreeMap::new();
    for t in (0..=market.tree.horizon).rev() {
        for node in market.tree.nodes_at(t) {
            let children = market.tree.children(node);
            let v = if children.is_empty() {
                dot(&z.values[&node], x.value(node))
            } else {
                let mut acc = Rational::zero();
                for &c in children {
                    acc = acc + market.tree.prob(c) * &values[&c];
                }
                acc / market.tree.prob(node)
            };
            values.insert(node, v);
        }
    }
    let price = values[&market.tree.root()].clone();

    let mut period_terms = None;
    let mut value_matches_position = None;
    if let Some(strategy) = decomposition {
        strategy.validate(market, x)?;
        let mut terms = Vec::with_capacity(market.tree.horizon + 1);
        for leg in &strategy.legs {
            let mut e = Rational::zero();
            for (&node, xi) in leg {
                e = e + market.tree.prob(node) * &dot(&z.values[&node], xi);
            }
            terms.push(e);
        }
        let total = terms.iter().fold(Rational::zero(), |a, v| a + v);
        if total != price {
            return Err(PricingError::Lp(LpError::Internal(
                "per-period identity failed for a validated decomposition".into(),
            )));
        }
        // running positions down the tree
        let mut position: BTreeMap<usize, Vec<Rational>> = BTreeMap::new();
        let mut matches = true;
        for t in 0..=market.tree.horizon {
            for node in market.tree.nodes_at(t) {
                let mut pos = match market.tree.parent(node) {
                    Some(p) => position[&p].clone(),
                    None => vec![Rational::zero(); market.dim],
                };
                for (i, w) in strategy.legs[t][&node].iter().enumerate() {
                    pos[i] = &pos[i] + w;
                }
                if dot(&z.values[&node], &pos) != values[&node] {
                    matches = false;
                }
                position.insert(node, pos);
            }
        }
        period_terms = Some(terms);
        value_matches_position = Some(matches);
    }

    Ok(PricingReport {
        price,
        values,
        period_terms,
        value_matches_position,
    })
}

// ---------------------------------------------------------------------------
// Dual attainability
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum DualMembership {
    /// sup E[Z_T·X] over consistent processes is attained and nonpositive.
    Attainable { optimum: Rational },
    /// Some consistent process prices X positively (the supremum is +∞ by
    /// scaling); `witness` is one such process.
    NotAttainable {
        witness: PriceProcess,
        witness_price: Rational,
    },
}

/// Decides X ∈ A by maximizing E[Z_T·X] over normalized consistent price
/// processes. Scale-invariance makes the program either nonpositive-optimal
/// or unbounded; an unbounded ray is folded into a concrete witness.
pub fn dual_membership(market: &Market, x: &Claim) -> Result<DualMembership, PricingError> {
    let d = market.dim;
    x.validate(&market.tree, "tested")
        .map_err(|e| PricingError::Dimension(e.to_string()))?;
    let n = market.tree.len();
    let mut lp = LinearProgram::new(n * d);
    for v in 0..n * d {
        lp.nonneg(v);
    }
    for node in &market.tree.nodes {
        let base = node.id * d;
        let children = market.tree.children(node.id);
        if !children.is_empty() {
            for i in 0..d {
                let mut row = vec![(base + i, market.tree.prob(node.id).clone())];
                for &c in children {
                    row.push((c * d + i, -market.tree.prob(c).clone()));
                }
                lp.add_row(row, Relation::Eq, Rational::zero());
            }
        }
        for g in market.node_generators(node.id) {
            let row: Vec<(usize, Rational)> = g
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(i, v)| (base + i, v.clone()))
                .collect();
            lp.add_row(row, Relation::Le, Rational::zero());
        }
    }
    for &l in market.tree.leaves() {
        let row = (0..d).map(|i| (l * d + i, Rational::one())).collect();
        lp.add_row(row, Relation::Ge, Rational::one());
    }
    let objective: Vec<(usize, Rational)> = market
        .tree
        .leaves()
        .iter()
        .flat_map(|&l| {
            let p = market.tree.prob(l).clone();
            x.value(l)
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(move |(i, v)| (l * d + i, &p * v))
                .collect::<Vec<_>>()
        })
        .collect();
    lp.maximize(objective.clone());

    let to_process = |point: &[Rational]| {
        let values: BTreeMap<usize, Vec<Rational>> = market
            .tree
            .nodes
            .iter()
            .map(|node| (node.id, point[node.id * d..(node.id + 1) * d].to_vec()))
            .collect();
        PriceProcess {
            values,
            strict: false,
            strict_slack: None,
        }
    };
    let eval = |point: &[Rational]| {
        objective
            .iter()
            .fold(Rational::zero(), |a, (j, c)| a + c * &point[*j])
    };

    match solve(&lp)? {
        LpOutcome::Optimal { objective: opt, .. } => {
            if opt.is_positive() {
                return Err(PricingError::Lp(LpError::Internal(
                    "positive optimum should have scaled to unboundedness".into(),
                )));
            }
            Ok(DualMembership::Attainable { optimum: opt })
        }
        LpOutcome::Unbounded { point, direction } => {
            let at_point = eval(&point);
            let along = eval(&direction);
            // τ large enough that the witness prices X strictly positively
            let tau = (Rational::one() + at_point.abs()) / along;
            let witness_point: Vec<Rational> = point
                .iter()
                .zip(&direction)
                .map(|(p, r)| p + &(&tau * r))
                .collect();
            let witness = to_process(&witness_point);
            witness.validate(market)?;
            let witness_price = eval(&witness_point);
            debug_assert!(witness_price.is_positive());
            Ok(DualMembership::NotAttainable {
                witness,
                witness_price,
            })
        }
        LpOutcome::Infeasible { .. } => Err(PricingError::Arbitrage),
        LpOutcome::Feasible { .. } => Err(PricingError::Lp(LpError::Internal(
            "objective was set but solver returned a bare point".into(),
        ))),
    }
}

// ---------------------------------------------------------------------------
// Equivalent martingale measures for a fixed process
// ---------------------------------------------------------------------------

pub type LeafMeasure = BTreeMap<usize, Rational>;

/// Samples measures Q (strictly positive on leaves, total mass one) under
/// which `z` is a Q-martingale, by maximizing seeded random objectives over
/// the measure polytope shrunk to q(leaf) >= s*/2, where s* is the largest
/// uniform floor (positive — the tree's own measure qualifies).
pub fn sample_emms(
    market: &Market,
    z: &PriceProcess,
    count: usize,
    seed: u64,
) -> Result<Vec<LeafMeasure>, PricingError> {
    z.validate(market)?;
    let d = market.dim;
    let leaves = market.tree.leaves().to_vec();
    let nl = leaves.len();
    let leaf_pos: BTreeMap<usize, usize> =
        leaves.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    // martingale rows in terms of leaf weights
    let mut rows: Vec<Vec<(usize, Rational)>> = Vec::new();
    for node in &market.tree.nodes {
        let children = market.tree.children(node.id);
        if children.is_empty() {
            continue;
        }
        for i in 0..d {
            let mut row = Vec::new();
            for &c in children {
                let zc = &z.values[&c][i];
                let zn = &z.values[&node.id][i];
                let coeff = zn - zc;
                if coeff.is_zero() {
                    continue;
                }
                for l in market.tree.subtree_leaves(c) {
                    row.push((leaf_pos[&l], coeff.clone()));
                }
            }
            row.sort_by_key(|(j, _)| *j);
            // merge duplicate leaf columns from different children
            let mut merged: Vec<(usize, Rational)> = Vec::new();
            for (j, v) in row {
                match merged.last_mut() {
                    Some((k, acc)) if *k == j => *acc = &*acc + &v,
                    _ => merged.push((j, v)),
                }
            }
            merged.retain(|(_, v)| !v.is_zero());
            if !merged.is_empty() {
                rows.push(merged);
            }
        }
    }

    // largest uniform floor
    let slack = nl;
    let mut floor_lp = LinearProgram::new(nl + 1);
    for j in 0..nl {
        floor_lp.nonneg(j);
    }
    floor_lp.nonneg(slack);
    floor_lp.set_upper(slack, Rational::one());
    for row in &rows {
        floor_lp.add_row(row.clone(), Relation::Eq, Rational::zero());
    }
    floor_lp.add_row(
        (0..nl).map(|j| (j, Rational::one())).collect(),
        Relation::Eq,
        Rational::one(),
    );
    for j in 0..nl {
        floor_lp.add_row(
            vec![(j, Rational::one()), (slack, -Rational::one())],
            Relation::Ge,
            Rational::zero(),
        );
    }
    floor_lp.maximize(vec![(slack, Rational::one())]);
    let floor = match solve(&floor_lp)? {
        LpOutcome::Optimal { objective, .. } if objective.is_positive() => {
            objective / Rational::from_integer(2.into())
        }
        other => {
            return Err(PricingError::Lp(LpError::Internal(format!(
                "measure polytope must contain the tree measure, got {other:?}"
            ))))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut lp = LinearProgram::new(nl);
        for j in 0..nl {
            lp.set_lower(j, floor.clone());
        }
        for row in &rows {
            lp.add_row(row.clone(), Relation::Eq, Rational::zero());
        }
        lp.add_row(
            (0..nl).map(|j| (j, Rational::one())).collect(),
            Relation::Eq,
            Rational::one(),
        );
        let obj: Vec<(usize, Rational)> = (0..nl)
            .map(|j| (j, crate::rational::q(rng.gen_range(-8i64..=8))))
            .collect();
        lp.maximize(obj);
        match solve(&lp)? {
            LpOutcome::Optimal { point, .. } => {
                let q: LeafMeasure = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, &l)| (l, point[j].clone()))
                    .collect();
                debug_assert!(q.values().all(|v| v.is_positive()));
                out.push(q);
            }
            other => {
                return Err(PricingError::Lp(LpError::Internal(format!(
                    "shrunk measure polytope became {other:?}"
                ))))
            }
        }
    }
    Ok(out)
}

/// Conditional expectation of Z_T·X at `node` under leaf measure `q`.
pub fn conditional_price_under(
    market: &Market,
    z: &PriceProcess,
    x: &Claim,
    q: &LeafMeasure,
    node: usize,
) -> Rational {
    let mut mass = Rational::zero();
    let mut acc = Rational::zero();
    for l in market.tree.subtree_leaves(node) {
        mass = mass + &q[&l];
        acc = acc + &q[&l] * dot(&z.values[&l], x.value(l));
    }
    acc / mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{arbitrage_check, lift_cones, member};
    use crate::market::{geometric_two_asset_market, FiltrationTree, TreeNode};
    use crate::rational::{q, qr};

    fn family(n: usize) -> Market {
        geometric_two_asset_market(&q(10), n)
    }

    fn constant_process(m: &Market, v: &[Rational], strict: bool) -> PriceProcess {
        PriceProcess {
            values: m.tree.nodes.iter().map(|n| (n.id, v.to_vec())).collect(),
            strict,
            strict_slack: None,
        }
    }

    fn arbitrage_market() -> Market {
        let m = family(1);
        let mut bidask = m.bidask.clone().unwrap();
        bidask
            .matrices
            .insert(1, vec![vec![q(1), q(10)], vec![qr(1, 2), q(1)]]);
        Market::from_bidask(2, m.tree.clone(), bidask, Default::default()).unwrap()
    }

    #[test]
    fn family_has_strictly_consistent_process() {
        for n in [1usize, 2, 3] {
            let m = family(n);
            match find_consistent_process(&m, true, None).unwrap() {
                CppOutcome::Found(p) => {
                    assert!(p.strict);
                    assert!(p.strict_slack.unwrap().is_positive());
                }
                other => panic!("expected strict process for n = {n}, got {other:?}"),
            }
        }
    }

    #[test]
    fn constant_candidate_verifies_strictly() {
        let m = family(2);
        let p = constant_process(&m, &[q(1), qr(3, 4)], true);
        p.validate(&m).unwrap();
    }

    #[test]
    fn price_zero_constraint_is_honored() {
        let m = family(2);
        let x = Claim::from_flat(&m.tree, 2, &[q(-1), q(1), q(-1), q(1)]);
        match find_consistent_process(&m, false, Some(&x)).unwrap() {
            CppOutcome::Found(p) => assert!(p.price(&m, &x).is_zero()),
            other => panic!("expected feasible, got {other:?}"),
        }
        // the boundary process (1,1) does the same job
        let candidate = constant_process(&m, &[q(1), q(1)], false);
        candidate.validate(&m).unwrap();
        assert!(candidate.price(&m, &x).is_zero());
    }

    #[test]
    fn positive_claim_cannot_price_to_zero() {
        let m = family(2);
        let x = Claim::from_flat(&m.tree, 2, &[qr(1, 2), q(0), qr(1, 2), q(0)]);
        match find_consistent_process(&m, false, Some(&x)).unwrap() {
            CppOutcome::Infeasible { .. } => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn arbitrage_market_agrees_across_both_routes() {
        let m = arbitrage_market();
        match find_consistent_process(&m, false, None).unwrap() {
            CppOutcome::Infeasible { .. } => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
        let a = lift_cones(&m, 0, 1);
        assert!(arbitrage_check(&a).unwrap().is_some());
    }

    /// Consistent process exists but is forced onto the polar boundary: the
    /// root cone has a generator orthogonal to every consistent price.
    #[test]
    fn boundary_only_market_is_detected() {
        let nodes = vec![
            TreeNode {
                id: 0,
                time: 0,
                parent: None,
                prob: q(1),
            },
            TreeNode {
                id: 1,
                time: 1,
                parent: Some(0),
                prob: q(1),
            },
        ];
        let tree = FiltrationTree::new(1, nodes).unwrap();
        let gens = [
            (0usize, vec![vec![q(2), q(-1)], vec![q(-1), q(0)], vec![q(0), q(-1)]]),
            (
                1usize,
                vec![
                    vec![q(-2), q(1)],
                    vec![q(2), q(-1)],
                    vec![q(-1), q(0)],
                    vec![q(0), q(-1)],
                ],
            ),
        ];
        let m = Market::from_generators(
            2,
            tree,
            gens.into_iter().collect(),
            Default::default(),
        )
        .unwrap();
        match find_consistent_process(&m, true, None).unwrap() {
            CppOutcome::OnlyBoundary(p) => {
                assert!(!p.strict);
                assert!(p.strict_slack.as_ref().unwrap().is_zero());
                p.validate(&m).unwrap();
            }
            other => panic!("expected boundary-only, got {other:?}"),
        }
        match find_consistent_process(&m, false, None).unwrap() {
            CppOutcome::Found(p) => p.validate(&m).unwrap(),
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn theta_prices_to_known_values() {
        let m = family(2);
        let z = constant_process(&m, &[q(1), qr(3, 4)], false);
        let x = m.claims["theta"].clone();
        let strategy = HedgingStrategy {
            legs: vec![
                [(0usize, vec![q(-1), q(1)])].into_iter().collect(),
                [
                    (1usize, vec![qr(1, 2), q(-1)]),
                    (2usize, vec![qr(1, 4), qr(-1, 2)]),
                ]
                .into_iter()
                .collect(),
            ],
        };
        let report = price_and_value(&m, &z, &x, Some(&strategy)).unwrap();
        assert_eq!(report.price, qr(-11, 24));
        let terms = report.period_terms.unwrap();
        assert_eq!(terms, vec![qr(-1, 4), qr(-5, 24)]);
        // nonzero period terms mean the value differs from Z·position
        assert_eq!(report.value_matches_position, Some(false));
        // value process pins
        assert_eq!(report.values[&0], qr(-11, 24));
        assert_eq!(report.values[&1], qr(-1, 2));
        assert_eq!(report.values[&2], qr(-3, 8));
    }

    #[test]
    fn zero_claim_prices_to_zero() {
        let m = family(2);
        let z = constant_process(&m, &[q(1), qr(3, 4)], false);
        let x = Claim::zero(&m.tree, 2);
        let report = price_and_value(&m, &z, &x, None).unwrap();
        assert!(report.price.is_zero());
        assert!(report.values.values().all(|v| v.is_zero()));
    }

    #[test]
    fn zero_priced_attainable_claim_has_zero_period_terms() {
        let m = family(2);
        let z = constant_process(&m, &[q(1), q(1)], false);
        let x = Claim::from_flat(&m.tree, 2, &[q(-1), q(1), q(-1), q(1)]);
        let strategy = HedgingStrategy {
            legs: vec![
                [(0usize, vec![q(-1), q(1)])].into_iter().collect(),
                [
                    (1usize, vec![q(0), q(0)]),
                    (2usize, vec![q(0), q(0)]),
                ]
                .into_iter()
                .collect(),
            ],
        };
        let report = price_and_value(&m, &z, &x, Some(&strategy)).unwrap();
        assert!(report.price.is_zero());
        assert_eq!(report.period_terms.unwrap(), vec![q(0), q(0)]);
        assert_eq!(report.value_matches_position, Some(true));
    }

    #[test]
    fn invalid_decomposition_names_the_leg() {
        let m = family(2);
        let z = constant_process(&m, &[q(1), qr(3, 4)], false);
        let x = m.claims["theta"].clone();
        let bad = HedgingStrategy {
            legs: vec![
                [(0usize, vec![q(1), q(1)])].into_iter().collect(), // not in K_0
                [
                    (1usize, vec![q(0), q(0)]),
                    (2usize, vec![q(0), q(0)]),
                ]
                .into_iter()
                .collect(),
            ],
        };
        match price_and_value(&m, &z, &x, Some(&bad)) {
            Err(PricingError::InvalidDecomposition(msg)) => {
                assert!(msg.contains("time 0, node 0"), "{msg}");
            }
            other => panic!("expected decomposition error, got {other:?}"),
        }
    }

    #[test]
    fn dual_membership_agrees_with_primal() {
        let m = family(2);
        let theta = m.claims["theta"].clone();
        match dual_membership(&m, &theta).unwrap() {
            DualMembership::Attainable { optimum } => assert!(!optimum.is_positive()),
            other => panic!("theta is attainable, got {other:?}"),
        }
        let a = lift_cones(&m, 0, 1);
        assert!(member(&a, &theta.flatten(&m.tree)).unwrap().is_inside());

        let free_lunch = Claim::from_flat(&m.tree, 2, &[qr(1, 2), q(0), qr(1, 2), q(0)]);
        match dual_membership(&m, &free_lunch).unwrap() {
            DualMembership::NotAttainable {
                witness,
                witness_price,
            } => {
                assert!(witness_price.is_positive());
                witness.validate(&m).unwrap();
                assert_eq!(witness.price(&m, &free_lunch), witness_price);
            }
            other => panic!("free lunch cannot be attainable, got {other:?}"),
        }
        assert!(!member(&a, &free_lunch.flatten(&m.tree)).unwrap().is_inside());

        let disposal = Claim::from_flat(&m.tree, 2, &[q(-1), q(0), q(-1), q(0)]);
        match dual_membership(&m, &disposal).unwrap() {
            DualMembership::Attainable { .. } => {}
            other => panic!("free disposal is attainable, got {other:?}"),
        }
    }

    #[test]
    fn dual_membership_requires_no_arbitrage() {
        let m = arbitrage_market();
        let x = Claim::zero(&m.tree, 2);
        match dual_membership(&m, &x) {
            Err(PricingError::Arbitrage) => {}
            other => panic!("expected arbitrage error, got {other:?}"),
        }
    }

    #[test]
    fn sampled_measures_are_martingale_measures() {
        let m = family(2);
        let z = constant_process(&m, &[q(1), qr(3, 4)], false);
        let measures = sample_emms(&m, &z, 3, 7).unwrap();
        assert_eq!(measures.len(), 3);
        for qm in &measures {
            let mass: Rational = qm.values().fold(Rational::zero(), |a, v| a + v);
            assert!(mass.is_one());
            assert!(qm.values().all(|v| v.is_positive()));
            // Z is a Q-martingale node by node
            for node in &m.tree.nodes {
                let children = m.tree.children(node.id);
                if children.is_empty() {
                    continue;
                }
                let node_mass: Rational = m
                    .tree
                    .subtree_leaves(node.id)
                    .iter()
                    .fold(Rational::zero(), |a, l| a + &qm[l]);
                for i in 0..2 {
                    let mut rhs = Rational::zero();
                    for &c in children {
                        let cm: Rational = m
                            .tree
                            .subtree_leaves(c)
                            .iter()
                            .fold(Rational::zero(), |a, l| a + &qm[l]);
                        rhs = rhs + cm * &z.values[&c][i];
                    }
                    assert_eq!(&node_mass * &z.values[&node.id][i], rhs);
                }
            }
        }
    }

    /// A claim priced at zero decomposes with pointwise-zero period terms,
    /// which makes the value process the same under every measure that keeps
    /// Z a martingale.
    #[test]
    fn zero_priced_claims_reprice_identically_under_sampled_measures() {
        let m = family(2);
        let x = Claim::from_flat(&m.tree, 2, &[q(-1), q(1), q(-1), q(1)]);
        let z = match find_consistent_process(&m, false, Some(&x)).unwrap() {
            CppOutcome::Found(p) => p,
            other => panic!("expected feasible, got {other:?}"),
        };
        let report = price_and_value(&m, &z, &x, None).unwrap();
        assert!(report.price.is_zero());
        for qm in sample_emms(&m, &z, 3, 11).unwrap() {
            for node in &m.tree.nodes {
                assert_eq!(
                    conditional_price_under(&m, &z, &x, &qm, node.id),
                    report.values[&node.id]
                );
            }
        }
    }

    #[test]
    fn strict_success_implies_plain_feasibility() {
        let m = family(2);
        let strict = match find_consistent_process(&m, true, None).unwrap() {
            CppOutcome::Found(p) => p,
            other => panic!("expected strict, got {other:?}"),
        };
        let relaxed = PriceProcess {
            strict: false,
            strict_slack: None,
            values: strict.values.clone(),
        };
        relaxed.validate(&m).unwrap();
        assert!(matches!(
            find_consistent_process(&m, false, None).unwrap(),
            CppOutcome::Found(_)
        ));
    }
}
