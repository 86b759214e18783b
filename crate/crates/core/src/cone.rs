//! Finitely generated cones in claim space.
//!
//! A claim assigns a portfolio vector to every leaf; claim space has one
//! coordinate per (leaf, asset) pair, leaves in canonical order. Trading
//! cones lift into claim space by duplicating each node generator onto the
//! node's subtree — one independent scalar per atom is exactly what
//! measurable nonnegative coefficients mean on a finite tree.
//!
//! Membership, arbitrage, lineality and null-strategy questions are answered
//! by certified LPs; polar representations come from the double description
//! module, giving an independent second route for cross-checks.

use crate::dd::{DdCone, DdError, Halfspace};
use crate::linalg;
use crate::lp::{solve, LinearProgram, LpError, LpOutcome, Relation};
use crate::market::{FiltrationTree, Market, TradingConeField};
use crate::rational::Rational;
use num_traits::{Signed, Zero};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum ConeError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Dd(#[from] DdError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("ambient dimension {ambient} exceeds the double-description budget {budget}")]
    AmbientBudget { ambient: usize, budget: usize },
    #[error("null strategies not a vector space — apply closure preprocessing first")]
    NullNotVectorSpace,
}

/// Ambient dimensions above this refuse polar computation; membership-style
/// questions keep working through LPs at any size.
pub const DEFAULT_DD_AMBIENT_BUDGET: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Node {
        time: usize,
        node: usize,
        index: usize,
    },
    Added {
        label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedGenerator {
    pub provenance: Provenance,
    /// Sparse claim-space vector: (coordinate, value), coordinates ascending.
    pub entries: Vec<(usize, Rational)>,
}

impl LiftedGenerator {
    pub fn dense(&self, ambient: usize) -> Vec<Rational> {
        let mut v = vec![Rational::zero(); ambient];
        for (c, x) in &self.entries {
            v[*c] = x.clone();
        }
        v
    }

    pub fn dot(&self, x: &[Rational]) -> Rational {
        self.entries
            .iter()
            .fold(Rational::zero(), |acc, (c, v)| acc + v * &x[*c])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedCone {
    pub dim: usize,
    pub num_leaves: usize,
    pub generators: Vec<LiftedGenerator>,
}

impl LiftedCone {
    pub fn empty(dim: usize, num_leaves: usize) -> Self {
        LiftedCone {
            dim,
            num_leaves,
            generators: Vec::new(),
        }
    }

    pub fn ambient(&self) -> usize {
        self.dim * self.num_leaves
    }

    pub fn dense_generators(&self) -> Vec<Vec<Rational>> {
        let a = self.ambient();
        self.generators.iter().map(|g| g.dense(a)).collect()
    }

    pub fn add(&mut self, provenance: Provenance, entries: Vec<(usize, Rational)>) {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(entries.iter().all(|(c, _)| *c < self.ambient()));
        self.generators.push(LiftedGenerator {
            provenance,
            entries,
        });
    }
}

/// Sparse lift of one R^d vector onto the subtree of `node`.
pub fn lift_on_node(
    tree: &FiltrationTree,
    dim: usize,
    node: usize,
    v: &[Rational],
) -> Vec<(usize, Rational)> {
    let mut entries = Vec::new();
    for l in tree.subtree_leaves(node) {
        let base = tree.leaf_index(l).expect("subtree leaves are leaves") * dim;
        for (a, x) in v.iter().enumerate() {
            if !x.is_zero() {
                entries.push((base + a, x.clone()));
            }
        }
    }
    entries
}

/// Attainable-claims cone for trading times `from..=to`:
/// one lifted generator per (node, base generator) pair.
pub fn lift_cones(market: &Market, from: usize, to: usize) -> LiftedCone {
    let mut cone = LiftedCone::empty(market.dim, market.tree.num_leaves());
    for t in from..=to {
        for node in market.tree.nodes_at(t) {
            for (index, g) in market.node_generators(node).iter().enumerate() {
                let entries = lift_on_node(&market.tree, market.dim, node, g);
                cone.add(Provenance::Node { time: t, node, index }, entries);
            }
        }
    }
    cone
}

// ---------------------------------------------------------------------------
// Membership
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Membership {
    /// Nonnegative coefficients over the cone's generators reproducing x.
    Inside { coefficients: Vec<Rational> },
    /// Functional z with z·g <= 0 on every generator and z·x > 0.
    Outside { functional: Vec<Rational> },
}

impl Membership {
    pub fn is_inside(&self) -> bool {
        matches!(self, Membership::Inside { .. })
    }
}

fn coordinate_rows(cone: &LiftedCone) -> Vec<Vec<(usize, Rational)>> {
    let mut rows: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); cone.ambient()];
    for (j, g) in cone.generators.iter().enumerate() {
        for (c, v) in &g.entries {
            rows[*c].push((j, v.clone()));
        }
    }
    rows
}

pub fn member(cone: &LiftedCone, x: &[Rational]) -> Result<Membership, ConeError> {
    if x.len() != cone.ambient() {
        return Err(ConeError::Dimension(format!(
            "claim has {} coordinates, cone ambient is {}",
            x.len(),
            cone.ambient()
        )));
    }
    let m = cone.generators.len();
    let mut lp = LinearProgram::new(m);
    for j in 0..m {
        lp.nonneg(j);
    }
    for (c, row) in coordinate_rows(cone).into_iter().enumerate() {
        lp.add_row(row, Relation::Eq, x[c].clone());
    }
    match solve(&lp)? {
        LpOutcome::Feasible { point } => Ok(Membership::Inside {
            coefficients: point,
        }),
        LpOutcome::Infeasible { farkas } => {
            // The certificate says: y·g_j <= 0 for every generator column and
            // y·x > 0 — exactly a separating functional.
            debug_assert!(cone
                .generators
                .iter()
                .all(|g| !g.dot(&farkas).is_positive()));
            debug_assert!(crate::rational::dot(&farkas, x).is_positive());
            Ok(Membership::Outside { functional: farkas })
        }
        other => Err(ConeError::Lp(LpError::Internal(format!(
            "feasibility problem returned {other:?}"
        )))),
    }
}

// ---------------------------------------------------------------------------
// Polar and lineality
// ---------------------------------------------------------------------------

pub fn polar_with_budget(cone: &LiftedCone, budget: usize) -> Result<LiftedCone, ConeError> {
    let ambient = cone.ambient();
    if ambient > budget {
        return Err(ConeError::AmbientBudget { ambient, budget });
    }
    let rows: Vec<Halfspace> = cone
        .dense_generators()
        .into_iter()
        .map(Halfspace::ineq)
        .collect();
    let dd = DdCone::from_halfspaces(ambient, &rows)?;
    let mut out = LiftedCone::empty(cone.dim, cone.num_leaves);
    let to_sparse = |v: &Vec<Rational>| {
        v.iter()
            .enumerate()
            .filter(|(_, x)| !x.is_zero())
            .map(|(c, x)| (c, x.clone()))
            .collect::<Vec<_>>()
    };
    for r in &dd.rays {
        out.add(
            Provenance::Added {
                label: "polar ray".into(),
            },
            to_sparse(r),
        );
    }
    for l in &dd.lin {
        out.add(
            Provenance::Added {
                label: "polar lineality".into(),
            },
            to_sparse(l),
        );
        out.add(
            Provenance::Added {
                label: "polar lineality (negated)".into(),
            },
            to_sparse(&crate::rational::neg_vec(l)),
        );
    }
    Ok(out)
}

pub fn polar(cone: &LiftedCone) -> Result<LiftedCone, ConeError> {
    polar_with_budget(cone, DEFAULT_DD_AMBIENT_BUDGET)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subspace {
    /// Linearly independent spanning set (exact rank-checked).
    pub basis: Vec<Vec<Rational>>,
}

impl Subspace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_trivial(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn contains(&self, v: &[Rational]) -> bool {
        linalg::in_span(&self.basis, v)
    }
}

/// Largest subspace inside the cone: the span of those generators whose
/// negation is attainable. (If a combination Σ α_i g_i lies in the lineality
/// with α_i > 0, then −g_i is the sum of the other terms plus the negated
/// combination, so the per-generator sweep misses nothing.)
pub fn lineality(cone: &LiftedCone) -> Result<Subspace, ConeError> {
    let ambient = cone.ambient();
    let mut members = Vec::new();
    let mut seen: Vec<Vec<Rational>> = Vec::new();
    for g in &cone.generators {
        let dense = g.dense(ambient);
        if seen.contains(&dense) {
            continue;
        }
        seen.push(dense.clone());
        let neg = crate::rational::neg_vec(&dense);
        if member(cone, &neg)?.is_inside() {
            members.push(dense);
        }
    }
    Ok(Subspace {
        basis: linalg::span_basis(&members, ambient),
    })
}

// ---------------------------------------------------------------------------
// Arbitrage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ArbitrageWitness {
    /// Nonnegative, nonzero claim produced by the strategy.
    pub claim: Vec<Rational>,
    /// Conic coefficients over the cone's generators reproducing the claim.
    pub coefficients: Vec<Rational>,
    pub positive_coordinate: usize,
}

/// Decides whether the cone meets the nonnegative orthant beyond the origin:
/// per coordinate c, maximize x_c over {x = Gλ : λ >= 0, x >= 0, Σx <= 1}.
/// The normalization bounds every such LP, so a positive optimum at any
/// coordinate yields a witness and a zero optimum everywhere is a proof.
pub fn arbitrage_check(cone: &LiftedCone) -> Result<Option<ArbitrageWitness>, ConeError> {
    let ambient = cone.ambient();
    let m = cone.generators.len();
    let rows = coordinate_rows(cone);
    for c in 0..ambient {
        let mut lp = LinearProgram::new(m);
        for j in 0..m {
            lp.nonneg(j);
        }
        for row in &rows {
            // x_c >= 0 as (−G_c)λ <= 0
            let neg: Vec<(usize, Rational)> =
                row.iter().map(|(j, v)| (*j, -v.clone())).collect();
            lp.add_row(neg, Relation::Le, Rational::zero());
        }
        let mut total: BTreeMap<usize, Rational> = BTreeMap::new();
        for row in &rows {
            for (j, v) in row {
                let e = total.entry(*j).or_insert_with(Rational::zero);
                *e = &*e + v;
            }
        }
        lp.add_row(
            total.into_iter().collect(),
            Relation::Le,
            Rational::from_integer(1.into()),
        );
        lp.maximize(rows[c].clone());
        match solve(&lp)? {
            LpOutcome::Optimal {
                point, objective, ..
            } => {
                if objective.is_positive() {
                    let claim: Vec<Rational> = rows
                        .iter()
                        .map(|row| {
                            row.iter()
                                .fold(Rational::zero(), |acc, (j, v)| acc + v * &point[*j])
                        })
                        .collect();
                    debug_assert!(claim.iter().all(|v| !v.is_negative()));
                    debug_assert!(claim[c].is_positive());
                    return Ok(Some(ArbitrageWitness {
                        claim,
                        coefficients: point,
                        positive_coordinate: c,
                    }));
                }
            }
            other => {
                return Err(ConeError::Lp(LpError::Internal(format!(
                    "normalized arbitrage probe returned {other:?}"
                ))))
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Null strategies
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NullStrategies {
    pub is_vector_space: bool,
    /// Present exactly when the null set is a vector space: basis of the
    /// projection onto each factor.
    pub projections: Option<Vec<Subspace>>,
}

impl NullStrategies {
    pub fn is_trivial(&self) -> bool {
        self.is_vector_space
            && self
                .projections
                .as_ref()
                .is_some_and(|ps| ps.iter().all(|s| s.is_trivial()))
    }
}

/// Analyzes N = {(x_1..x_m) : x_i in factor_i, Σ x_i = 0}.
///
/// N is a vector space iff every component projection lies inside the
/// factor's lineality: tuples of lineality members summing to zero are
/// always null and closed under negation, and conversely a negatable null
/// tuple puts each component in cone ∩ −cone. The containment is decided by
/// maximizing each lineality-complement functional over the null system —
/// never through an ambient polar.
pub fn null_strategies(factors: &[&LiftedCone]) -> Result<NullStrategies, ConeError> {
    assert!(!factors.is_empty());
    let ambient = factors[0].ambient();
    for f in factors {
        if f.ambient() != ambient {
            return Err(ConeError::Dimension(
                "null-strategy factors must share ambient dimension".into(),
            ));
        }
    }
    let lins: Vec<Subspace> = factors
        .iter()
        .map(|f| lineality(f))
        .collect::<Result<_, _>>()?;

    // Stacked variables: λ^{(s)} per factor, all nonnegative.
    let offsets: Vec<usize> = factors
        .iter()
        .scan(0usize, |acc, f| {
            let o = *acc;
            *acc += f.generators.len();
            Some(o)
        })
        .collect();
    let total_vars = offsets.last().unwrap() + factors.last().unwrap().generators.len();

    let base_rows: Vec<Vec<(usize, Rational)>> = {
        let mut rows: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); ambient];
        for (s, f) in factors.iter().enumerate() {
            for (j, g) in f.generators.iter().enumerate() {
                for (c, v) in &g.entries {
                    rows[*c].push((offsets[s] + j, v.clone()));
                }
            }
        }
        rows
    };

    for (s, f) in factors.iter().enumerate() {
        let complement = linalg::orthogonal_complement(&lins[s].basis, ambient);
        for h in &complement {
            for sign in [1i64, -1] {
                let mut lp = LinearProgram::new(total_vars);
                for j in 0..total_vars {
                    lp.nonneg(j);
                }
                for row in &base_rows {
                    lp.add_row(row.clone(), Relation::Eq, Rational::zero());
                }
                // objective: sign · h·(G_s λ_s)
                let mut obj: BTreeMap<usize, Rational> = BTreeMap::new();
                for (j, g) in f.generators.iter().enumerate() {
                    let v = g.dot(h);
                    if !v.is_zero() {
                        obj.insert(offsets[s] + j, &crate::rational::q(sign) * &v);
                    }
                }
                if obj.is_empty() {
                    continue;
                }
                lp.maximize(obj.into_iter().collect());
                match solve(&lp)? {
                    LpOutcome::Optimal { objective, .. } => {
                        if objective.is_positive() {
                            return Ok(NullStrategies {
                                is_vector_space: false,
                                projections: None,
                            });
                        }
                    }
                    LpOutcome::Unbounded { .. } => {
                        return Ok(NullStrategies {
                            is_vector_space: false,
                            projections: None,
                        });
                    }
                    other => {
                        return Err(ConeError::Lp(LpError::Internal(format!(
                            "null-strategy probe returned {other:?}"
                        ))))
                    }
                }
            }
        }
    }

    // Vector space: N = {tuples of lineality members summing to zero}.
    // Parametrize x_s = L_s α_s and read off the nullspace of the sum map.
    let alpha_offsets: Vec<usize> = lins
        .iter()
        .scan(0usize, |acc, l| {
            let o = *acc;
            *acc += l.dim();
            Some(o)
        })
        .collect();
    let alpha_total = lins.iter().map(|l| l.dim()).sum::<usize>();
    let mut sum_map: Vec<Vec<Rational>> = vec![vec![Rational::zero(); alpha_total]; ambient];
    for (s, l) in lins.iter().enumerate() {
        for (k, b) in l.basis.iter().enumerate() {
            for (c, v) in b.iter().enumerate() {
                sum_map[c][alpha_offsets[s] + k] = v.clone();
            }
        }
    }
    let alpha_null = linalg::nullspace(&sum_map, alpha_total);
    let mut projections = Vec::with_capacity(factors.len());
    for (s, l) in lins.iter().enumerate() {
        let mut imgs = Vec::new();
        for alpha in &alpha_null {
            let mut x = vec![Rational::zero(); ambient];
            for (k, b) in l.basis.iter().enumerate() {
                let a = &alpha[alpha_offsets[s] + k];
                if a.is_zero() {
                    continue;
                }
                for (c, v) in b.iter().enumerate() {
                    x[c] = &x[c] + &(a * v);
                }
            }
            imgs.push(x);
        }
        projections.push(Subspace {
            basis: linalg::span_basis(&imgs, ambient),
        });
    }
    Ok(NullStrategies {
        is_vector_space: true,
        projections: Some(projections),
    })
}

// ---------------------------------------------------------------------------
// Displaced cones
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisplacementMode {
    /// Append −ξ itself: the cone of positions dominating some scalar
    /// multiple of ξ.
    ScalarRay,
    /// Append −ξ restricted to each time-t atom: measurable nonnegative
    /// multiples of ξ.
    MeasurableMultiples { time: usize },
}

#[derive(Debug, Clone)]
pub struct DisplacedCone {
    pub cone: LiftedCone,
    /// Whether ξ itself was attainable; callers claiming closure semantics
    /// should heed a `false` here, the construction stays well-defined.
    pub xi_in_base: bool,
}

pub fn displaced_cone(
    cone: &LiftedCone,
    tree: &FiltrationTree,
    xi: &[Rational],
    mode: DisplacementMode,
) -> Result<DisplacedCone, ConeError> {
    if xi.len() != cone.ambient() {
        return Err(ConeError::Dimension(
            "displacement vector has wrong ambient dimension".into(),
        ));
    }
    let xi_in_base = member(cone, xi)?.is_inside();
    let mut out = cone.clone();
    let neg = crate::rational::neg_vec(xi);
    match mode {
        DisplacementMode::ScalarRay => {
            let entries: Vec<(usize, Rational)> = neg
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(c, v)| (c, v.clone()))
                .collect();
            out.add(
                Provenance::Added {
                    label: "added: -xi".into(),
                },
                entries,
            );
        }
        DisplacementMode::MeasurableMultiples { time } => {
            for node in tree.nodes_at(time) {
                let mut entries = Vec::new();
                for l in tree.subtree_leaves(node) {
                    let base = tree.leaf_index(l).unwrap() * cone.dim;
                    for a in 0..cone.dim {
                        if !neg[base + a].is_zero() {
                            entries.push((base + a, neg[base + a].clone()));
                        }
                    }
                }
                out.add(
                    Provenance::Added {
                        label: format!("added: -xi on node {node}"),
                    },
                    entries,
                );
            }
        }
    }
    Ok(DisplacedCone { cone: out, xi_in_base })
}

// ---------------------------------------------------------------------------
// Cone comparison and the neat reduction
// ---------------------------------------------------------------------------

/// Mutual membership of generators; avoids canonical forms of non-pointed
/// cones.
pub fn cone_equal(a: &LiftedCone, b: &LiftedCone) -> Result<bool, ConeError> {
    if a.ambient() != b.ambient() {
        return Err(ConeError::Dimension(
            "cones live in different ambient spaces".into(),
        ));
    }
    for g in &a.generators {
        if !member(b, &g.dense(a.ambient()))?.is_inside() {
            return Ok(false);
        }
    }
    for g in &b.generators {
        if !member(a, &g.dense(b.ambient()))?.is_inside() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Removes the directions that later trading can cancel: per time t, the
/// first-component projection ρ_t of the null strategies over times t..T is
/// cut away from K_t, atom by atom. The result sums to the same attainable
/// cone and has trivial null strategies.
pub fn neat_reduce(market: &Market) -> Result<TradingConeField, ConeError> {
    let horizon = market.tree.horizon;
    let slices: Vec<LiftedCone> = (0..=horizon).map(|t| lift_cones(market, t, t)).collect();
    let refs: Vec<&LiftedCone> = slices.iter().collect();
    let full = null_strategies(&refs)?;
    if !full.is_vector_space {
        return Err(ConeError::NullNotVectorSpace);
    }

    let mut generators: BTreeMap<usize, Vec<Vec<Rational>>> = BTreeMap::new();
    for t in 0..horizon {
        let sub = null_strategies(&refs[t..=horizon])?;
        if !sub.is_vector_space {
            // a suffix of a vector-space system is one as well
            return Err(ConeError::NullNotVectorSpace);
        }
        let rho = &sub.projections.as_ref().unwrap()[0];
        for node in market.tree.nodes_at(t) {
            let leaves = market.tree.subtree_leaves(node);
            let first = market.tree.leaf_index(leaves[0]).unwrap() * market.dim;
            // members of the K_t lift are constant across the atom, so the
            // atom slice of ρ_t is read off any one leaf
            let rho_node: Vec<Vec<Rational>> = rho
                .basis
                .iter()
                .map(|b| b[first..first + market.dim].to_vec())
                .collect();
            let mut rows = DdCone::from_generators(
                market.dim,
                market.node_generators(node),
                &[],
            )?
            .halfspaces()?;
            for r in linalg::span_basis(&rho_node, market.dim) {
                rows.push(Halfspace::equation(r));
            }
            let reduced = DdCone::from_halfspaces(market.dim, &rows)?;
            let mut gens = reduced.generators();
            if gens.is_empty() {
                // the zero cone still needs a representation
                gens.push(vec![Rational::zero(); market.dim]);
            }
            generators.insert(node, gens);
        }
    }
    for node in market.tree.nodes_at(horizon) {
        generators.insert(node, market.node_generators(node).to_vec());
    }

    let reduced_field = TradingConeField {
        dim: market.dim,
        generators,
    };

    // self-check: the reduction changes nothing attainable and kills nulls
    let reduced_market = Market {
        dim: market.dim,
        tree: market.tree.clone(),
        bidask: None,
        cones: reduced_field.clone(),
        claims: market.claims.clone(),
    };
    let reduced_slices: Vec<LiftedCone> = (0..=horizon)
        .map(|t| lift_cones(&reduced_market, t, t))
        .collect();
    let reduced_refs: Vec<&LiftedCone> = reduced_slices.iter().collect();
    let reduced_null = null_strategies(&reduced_refs)?;
    if !reduced_null.is_trivial() {
        return Err(ConeError::Lp(LpError::Internal(
            "neat reduction failed to kill null strategies".into(),
        )));
    }
    let total_before = lift_cones(market, 0, horizon);
    let total_after = lift_cones(&reduced_market, 0, horizon);
    if !cone_equal(&total_before, &total_after)? {
        return Err(ConeError::Lp(LpError::Internal(
            "neat reduction changed the attainable cone".into(),
        )));
    }
    Ok(reduced_field)
}

impl Market {
    /// Same market with a replacement cone field (drops bid-ask data, which
    /// no longer describes the cones).
    pub fn with_cones(&self, cones: TradingConeField) -> Market {
        Market {
            dim: self.dim,
            tree: self.tree.clone(),
            bidask: None,
            cones,
            claims: self.claims.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::geometric_two_asset_market;
    use crate::rational::{q, qr};

    fn family(n: usize) -> Market {
        geometric_two_asset_market(&q(10), n)
    }

    fn theta_flat(m: &Market) -> Vec<Rational> {
        m.claims["theta"].flatten(&m.tree)
    }

    #[test]
    fn theta_is_attainable_with_exact_coefficients() {
        let m = family(2);
        let a = lift_cones(&m, 0, 1);
        let x = theta_flat(&m);
        match member(&a, &x).unwrap() {
            Membership::Inside { coefficients } => {
                // recombination is exact
                let mut back = vec![Rational::zero(); a.ambient()];
                for (g, c) in a.generators.iter().zip(&coefficients) {
                    for (k, v) in &g.entries {
                        back[*k] = &back[*k] + &(v * c);
                    }
                }
                assert_eq!(back, x);
            }
            Membership::Outside { .. } => panic!("theta must be attainable"),
        }
        // the textbook strategy: 1 on e2−e1 at the root, 1/(2ω) on e1−2e2 per leaf
        let root_leg = vec![q(-1), q(1), q(-1), q(1)];
        let leaf1 = vec![qr(1, 2), q(-1), q(0), q(0)];
        let leaf2 = vec![q(0), q(0), qr(1, 4), qr(-1, 2)];
        let sum: Vec<Rational> = (0..4)
            .map(|i| &root_leg[i] + &leaf1[i] + &leaf2[i])
            .collect();
        assert_eq!(sum, x);
    }

    #[test]
    fn zero_claim_is_always_attainable() {
        let m = family(2);
        let a = lift_cones(&m, 0, 1);
        let zero = vec![Rational::zero(); 4];
        assert!(member(&a, &zero).unwrap().is_inside());
    }

    #[test]
    fn positive_cash_is_not_attainable_and_separated() {
        let m = family(2);
        let a = lift_cones(&m, 0, 1);
        // (1/2) e1 on every leaf
        let x = vec![qr(1, 2), q(0), qr(1, 2), q(0)];
        match member(&a, &x).unwrap() {
            Membership::Outside { functional } => {
                for g in &a.generators {
                    assert!(!g.dot(&functional).is_positive());
                }
                assert!(crate::rational::dot(&functional, &x).is_positive());
            }
            Membership::Inside { .. } => panic!("free money in an arbitrage-free market"),
        }
        // the constant (1,1) pricing functional separates as well
        let z = vec![q(1), q(1), q(1), q(1)];
        for g in &a.generators {
            assert!(!g.dot(&z).is_positive());
        }
        assert!(crate::rational::dot(&z, &x).is_positive());
    }

    #[test]
    fn polar_of_full_space_is_zero() {
        let mut c = LiftedCone::empty(2, 1);
        for (i, s) in [(0, 1i64), (0, -1), (1, 1), (1, -1)] {
            c.add(
                Provenance::Added {
                    label: "axis".into(),
                },
                vec![(i, q(s))],
            );
        }
        let p = polar(&c).unwrap();
        assert!(p.generators.is_empty());
    }

    #[test]
    fn double_polar_returns_the_attainable_cone() {
        let m = family(2);
        let a = lift_cones(&m, 0, 1);
        let pp = polar(&polar(&a).unwrap()).unwrap();
        assert!(cone_equal(&a, &pp).unwrap());
    }

    #[test]
    fn lineality_of_pointed_and_non_pointed_cones() {
        let m = family(2);
        let k1 = lift_cones(&m, 1, 1);
        assert!(lineality(&k1).unwrap().is_trivial());

        // frictionless pair: rates 2 and 1/2 on a single node
        let mut c = LiftedCone::empty(2, 1);
        for (label, v) in [
            ("x", vec![q(-2), q(1)]),
            ("y", vec![q(1), qr(-1, 2)]),
            ("d1", vec![q(-1), q(0)]),
            ("d2", vec![q(0), q(-1)]),
        ] {
            c.add(
                Provenance::Added {
                    label: label.into(),
                },
                v.into_iter()
                    .enumerate()
                    .filter(|(_, x)| !x.is_zero())
                    .map(|(i, x)| (i, x))
                    .collect(),
            );
        }
        let lin = lineality(&c).unwrap();
        assert_eq!(lin.dim(), 1);
        assert!(lin.contains(&[q(-2), q(1)]));
        assert!(!lin.contains(&[q(1), q(0)]));

        let mut orthant_neg = LiftedCone::empty(2, 1);
        orthant_neg.add(
            Provenance::Added { label: "a".into() },
            vec![(0, q(-1))],
        );
        orthant_neg.add(
            Provenance::Added { label: "b".into() },
            vec![(1, q(-1))],
        );
        assert!(lineality(&orthant_neg).unwrap().is_trivial());
    }

    #[test]
    fn family_market_is_arbitrage_free() {
        for n in [1usize, 2, 4] {
            let m = family(n);
            let a = lift_cones(&m, 0, 1);
            assert!(arbitrage_check(&a).unwrap().is_none(), "n = {n}");
        }
    }

    #[test]
    fn cheap_buyback_market_has_arbitrage() {
        // time 0: swap asset 1 for asset 2 one-for-one; time 1: swap back at 1/2
        let m = family(1);
        let mut bidask = m.bidask.clone().unwrap();
        bidask.matrices.insert(1, vec![vec![q(1), q(10)], vec![qr(1, 2), q(1)]]);
        let tree = m.tree.clone();
        let arb = Market::from_bidask(2, tree, bidask, Default::default()).unwrap();
        let a = lift_cones(&arb, 0, 1);
        let w = arbitrage_check(&a).unwrap().expect("two-trade arbitrage");
        assert!(w.claim.iter().all(|v| !v.is_negative()));
        assert!(w.claim[w.positive_coordinate].is_positive());
        // the textbook witness is attainable too
        let x = vec![q(0), qr(1, 2)];
        assert!(member(&a, &x).unwrap().is_inside());
    }

    #[test]
    fn disposal_only_market_has_no_arbitrage() {
        let mut c = LiftedCone::empty(2, 1);
        c.add(Provenance::Added { label: "a".into() }, vec![(0, q(-1))]);
        c.add(Provenance::Added { label: "b".into() }, vec![(1, q(-1))]);
        assert!(arbitrage_check(&c).unwrap().is_none());
    }

    #[test]
    fn null_strategies_of_family_are_trivial() {
        let m = family(2);
        let k0 = lift_cones(&m, 0, 0);
        let k1 = lift_cones(&m, 1, 1);
        let ns = null_strategies(&[&k0, &k1]).unwrap();
        assert!(ns.is_vector_space);
        assert!(ns.is_trivial());
    }

    #[test]
    fn opposite_cones_are_not_a_null_vector_space() {
        let mut c = LiftedCone::empty(2, 1);
        c.add(Provenance::Added { label: "a".into() }, vec![(0, q(1))]);
        c.add(Provenance::Added { label: "b".into() }, vec![(1, q(1))]);
        let mut neg = LiftedCone::empty(2, 1);
        neg.add(Provenance::Added { label: "a".into() }, vec![(0, q(-1))]);
        neg.add(Provenance::Added { label: "b".into() }, vec![(1, q(-1))]);
        let ns = null_strategies(&[&c, &neg]).unwrap();
        assert!(!ns.is_vector_space);
    }

    #[test]
    fn zero_factors_are_a_trivial_null_vector_space() {
        let z1 = LiftedCone::empty(2, 1);
        let z2 = LiftedCone::empty(2, 1);
        let ns = null_strategies(&[&z1, &z2]).unwrap();
        assert!(ns.is_vector_space);
        assert!(ns.is_trivial());
    }

    #[test]
    fn displaced_root_cone_becomes_a_halfplane() {
        let m = family(1);
        let k0 = lift_cones(&m, 0, 0);
        let xi = vec![q(-1), q(1)]; // e2 − e1 on the single leaf
        let disp = displaced_cone(&k0, &m.tree, &xi, DisplacementMode::ScalarRay).unwrap();
        assert!(disp.xi_in_base);
        let dd = DdCone::from_generators(2, &disp.cone.dense_generators(), &[]).unwrap();
        assert_eq!(dd.lineality_dim(), 1);
        let p = dd.polar().unwrap();
        assert_eq!(p.rays, vec![vec![q(1), q(1)]]);
        assert!(p.lin.is_empty());
    }

    #[test]
    fn measurable_displacement_on_trivial_field_is_scalar() {
        let m = family(1);
        let k0 = lift_cones(&m, 0, 0);
        let xi = vec![q(-1), q(1)];
        let a = displaced_cone(&k0, &m.tree, &xi, DisplacementMode::ScalarRay).unwrap();
        let b = displaced_cone(
            &k0,
            &m.tree,
            &xi,
            DisplacementMode::MeasurableMultiples { time: 0 },
        )
        .unwrap();
        assert!(cone_equal(&a.cone, &b.cone).unwrap());
    }

    #[test]
    fn zero_displacement_changes_nothing() {
        let m = family(2);
        let k0 = lift_cones(&m, 0, 0);
        let xi = vec![Rational::zero(); 4];
        let disp = displaced_cone(&k0, &m.tree, &xi, DisplacementMode::ScalarRay).unwrap();
        assert!(cone_equal(&k0, &disp.cone).unwrap());
    }

    #[test]
    fn cone_equal_handles_redundancy_and_direction() {
        let mut a = LiftedCone::empty(2, 1);
        a.add(Provenance::Added { label: "a".into() }, vec![(0, q(1))]);
        a.add(Provenance::Added { label: "b".into() }, vec![(1, q(1))]);
        let mut b = a.clone();
        b.add(
            Provenance::Added { label: "c".into() },
            vec![(0, q(1)), (1, q(1))],
        );
        assert!(cone_equal(&a, &b).unwrap());
        let mut c = LiftedCone::empty(2, 1);
        c.add(Provenance::Added { label: "a".into() }, vec![(0, q(-1))]);
        assert!(!cone_equal(&a, &c).unwrap());
    }

    /// Single-leaf market with frictionless 2 ↔ 1/2 rates at both times: the
    /// round trip is a null strategy, the reduction must cut the line out of
    /// K_0 and keep the attainable cone.
    #[test]
    fn neat_reduction_drops_cancellable_line() {
        let nodes = vec![
            crate::market::TreeNode {
                id: 0,
                time: 0,
                parent: None,
                prob: q(1),
            },
            crate::market::TreeNode {
                id: 1,
                time: 1,
                parent: Some(0),
                prob: q(1),
            },
        ];
        let tree = FiltrationTree::new(1, nodes).unwrap();
        let pair = vec![vec![q(1), q(2)], vec![qr(1, 2), q(1)]];
        let bidask = crate::market::BidAskProcess {
            matrices: [(0, pair.clone()), (1, pair)].into_iter().collect(),
        };
        let m = Market::from_bidask(2, tree, bidask, Default::default()).unwrap();

        let reduced = neat_reduce(&m).unwrap();
        let m0 = DdCone::from_generators(2, &reduced.generators[&0], &[]).unwrap();
        assert_eq!(m0.lineality_dim(), 0);
        assert_eq!(m0.rays, vec![vec![q(-1), q(-2)]]);
        // horizon cone untouched
        assert_eq!(reduced.generators[&1], m.node_generators(1).to_vec());
    }

    #[test]
    fn neat_reduction_is_identity_on_the_family() {
        let m = family(2);
        let reduced = neat_reduce(&m).unwrap();
        let rm = m.with_cones(reduced);
        for t in 0..=1 {
            let before = lift_cones(&m, t, t);
            let after = lift_cones(&rm, t, t);
            assert!(cone_equal(&before, &after).unwrap(), "t = {t}");
        }
    }

    #[test]
    fn horizon_zero_market_reduces_to_itself() {
        let nodes = vec![crate::market::TreeNode {
            id: 0,
            time: 0,
            parent: None,
            prob: q(1),
        }];
        let tree = FiltrationTree::new(0, nodes).unwrap();
        let bidask = crate::market::BidAskProcess {
            matrices: [(0, vec![vec![q(1), q(3)], vec![q(3), q(1)]])]
                .into_iter()
                .collect(),
        };
        let m = Market::from_bidask(2, tree, bidask, Default::default()).unwrap();
        let reduced = neat_reduce(&m).unwrap();
        assert_eq!(reduced.generators[&0], m.node_generators(0).to_vec());
    }

    #[test]
    fn budget_guard_refuses_oversized_polars() {
        let m = geometric_two_asset_market(&q(10), 16);
        let a = lift_cones(&m, 0, 1);
        match polar(&a) {
            Err(ConeError::AmbientBudget { ambient, budget }) => {
                assert_eq!(ambient, 32);
                assert_eq!(budget, DEFAULT_DD_AMBIENT_BUDGET);
            }
            other => panic!("expected budget refusal, got {other:?}"),
        }
        // membership keeps working at this size
        let x = m.claims["theta"].flatten(&m.tree);
        assert!(member(&a, &x).unwrap().is_inside());
    }
}
