//! Maximal claims and their approximation.
//!
//! A claim attainable at zero cost is *maximal* when no other attainable
//! claim dominates it, and *properly maximal* when a consistent price
//! process certifies this by pricing it to zero. This module decides both,
//! decomposes claims into per-period legs that leave no room to defer
//! trades, swaps legs for support-maximal representatives when the market
//! carries cancellable lines, and truncates decompositions over a
//! randomized product market so that each truncated claim becomes properly
//! maximal while staying close to the original in probability.

use std::collections::{BTreeMap, BTreeSet};

use crate::cone::{
    arbitrage_check, cone_equal, displaced_cone, lift_cones, lift_on_node, lineality, member,
    null_strategies, ConeError, DisplacementMode, LiftedCone, Provenance,
};
use crate::dd::{DdCone, DdError, Halfspace};
use crate::linalg;
use crate::lp::{solve, LinearProgram, LpError, LpOutcome, Relation};
use crate::market::{
    randomize_market, Claim, FiltrationTree, Market, MarketError, RandomizedMarket,
    DEFAULT_NODE_BUDGET,
};
use crate::pricing::{
    find_consistent_process, CppOutcome, HedgingStrategy, PriceProcess, PricingError,
};
use crate::rational::{
    add_vec, dot, is_zero_vec, neg_vec, one_norm, pow2_neg, q, scale_vec, sub_vec, Rational,
};
use crate::subtree::{scaled_section_cones, section_cones};
use num_traits::{One, Signed, Zero};

#[derive(Debug, thiserror::Error)]
pub enum MaximalityError {
    #[error("market admits arbitrage: {0}")]
    Arbitrage(String),
    #[error("claim is not attainable: {0}")]
    NotAttainable(String),
    #[error("claim is not maximal: {0}")]
    NotMaximal(String),
    #[error("market is not neat: {0}")]
    NotNeat(String),
    #[error("truncation condition fails: {0}")]
    Truncation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Dd(#[from] DdError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
}

// ---------------------------------------------------------------------------
// Shared LP plumbing
// ---------------------------------------------------------------------------

/// Variable offsets and per-ambient-coordinate rows for `Σ sign_s G_s λ_s`.
fn stack_rows(
    parts: &[(&LiftedCone, i64)],
) -> (usize, Vec<usize>, Vec<Vec<(usize, Rational)>>) {
    let ambient = parts[0].0.ambient();
    let mut offsets = Vec::with_capacity(parts.len());
    let mut total = 0usize;
    for (c, _) in parts {
        offsets.push(total);
        total += c.generators.len();
    }
    let mut rows: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); ambient];
    for ((cone, sign), off) in parts.iter().zip(&offsets) {
        let s = q(*sign);
        for (j, g) in cone.generators.iter().enumerate() {
            for (idx, v) in &g.entries {
                rows[*idx].push((off + j, &s * v));
            }
        }
    }
    (total, offsets, rows)
}

fn dense_combination(cone: &LiftedCone, point: &[Rational], offset: usize) -> Vec<Rational> {
    let mut out = vec![Rational::zero(); cone.ambient()];
    for (j, g) in cone.generators.iter().enumerate() {
        let c = &point[offset + j];
        if c.is_zero() {
            continue;
        }
        for (idx, v) in &g.entries {
            out[*idx] = &out[*idx] + &(c * v);
        }
    }
    out
}

fn ancestor_at(tree: &FiltrationTree, node: usize, time: usize) -> usize {
    let mut cur = node;
    while tree.time(cur) > time {
        cur = tree.parent(cur).expect("non-root nodes have parents");
    }
    cur
}

fn zero_legs(market: &Market) -> Vec<BTreeMap<usize, Vec<Rational>>> {
    (0..=market.tree.horizon)
        .map(|t| {
            market
                .tree
                .nodes_at(t)
                .into_iter()
                .map(|n| (n, vec![Rational::zero(); market.dim]))
                .collect()
        })
        .collect()
}

fn implied_claim(market: &Market, legs: &[BTreeMap<usize, Vec<Rational>>]) -> Claim {
    let d = market.dim;
    let values = market
        .tree
        .leaves()
        .iter()
        .map(|&l| {
            let mut sum = vec![Rational::zero(); d];
            for (t, leg) in legs.iter().enumerate() {
                let anc = ancestor_at(&market.tree, l, t);
                if let Some(v) = leg.get(&anc) {
                    sum = add_vec(&sum, v);
                }
            }
            (l, sum)
        })
        .collect();
    Claim { dim: d, values }
}

/// The flat ambient profile of a time-t slice assignment.
fn flat_from_slice(
    market: &Market,
    t: usize,
    values: &BTreeMap<usize, Vec<Rational>>,
) -> Result<Vec<Rational>, MaximalityError> {
    let d = market.dim;
    let mut flat = vec![Rational::zero(); market.tree.num_leaves() * d];
    for node in market.tree.nodes_at(t) {
        let v = values.get(&node).ok_or_else(|| {
            MaximalityError::InvalidInput(format!("slice assignment missing node {node}"))
        })?;
        if v.len() != d {
            return Err(MaximalityError::InvalidInput(format!(
                "slice assignment at node {node} has dimension {}",
                v.len()
            )));
        }
        for l in market.tree.subtree_leaves(node) {
            let base = market.tree.leaf_index(l).unwrap() * d;
            for i in 0..d {
                flat[base + i] = v[i].clone();
            }
        }
    }
    Ok(flat)
}

fn node_cone(market: &Market, node: usize) -> Result<DdCone, DdError> {
    DdCone::from_generators(market.dim, market.node_generators(node), &[])
}

// ---------------------------------------------------------------------------
// Efficiency
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Efficiency {
    pub efficient: bool,
    /// Nonzero member of `cone(attainable − θ) ∩ comparison` outside the
    /// comparison cone's lineality; absent exactly when efficient.
    pub witness: Option<Vec<Rational>>,
}

/// Decides whether θ cannot be improved inside the attainable cone along
/// any comparison direction: `cone(attainable − θ) ∩ comparison ⊆
/// lin(comparison)`, with the displaced cone standing in for the closed
/// conic hull of differences.
pub fn is_efficient(
    tree: &FiltrationTree,
    attainable: &LiftedCone,
    theta: &[Rational],
    comparison: &LiftedCone,
    mode: DisplacementMode,
) -> Result<Efficiency, MaximalityError> {
    let ambient = attainable.ambient();
    if theta.len() != ambient || comparison.ambient() != ambient {
        return Err(MaximalityError::InvalidInput(
            "ambient dimensions disagree".into(),
        ));
    }
    if !member(attainable, theta)?.is_inside() {
        return Err(MaximalityError::NotAttainable(
            "the displaced position must lie in the attainable cone".into(),
        ));
    }
    let displaced = displaced_cone(attainable, tree, theta, mode)?.cone;
    let lin_c = lineality(comparison)?;
    let complement = linalg::orthogonal_complement(&lin_c.basis, ambient);
    let (total, offsets, rows) = stack_rows(&[(&displaced, 1), (comparison, -1)]);
    for w in &complement {
        for sign in [1i64, -1] {
            let mut obj: Vec<(usize, Rational)> = Vec::new();
            for (j, g) in displaced.generators.iter().enumerate() {
                let v = &q(sign) * &g.dot(w);
                if !v.is_zero() {
                    obj.push((offsets[0] + j, v));
                }
            }
            if obj.is_empty() {
                continue;
            }
            let mut lp = LinearProgram::new(total);
            for j in 0..total {
                lp.nonneg(j);
            }
            for row in &rows {
                lp.add_row(row.clone(), Relation::Eq, Rational::zero());
            }
            lp.add_row(obj.clone(), Relation::Le, Rational::one());
            lp.maximize(obj);
            match solve(&lp)? {
                LpOutcome::Optimal {
                    point, objective, ..
                } => {
                    if objective.is_positive() {
                        let x = dense_combination(&displaced, &point, offsets[0]);
                        if !member(comparison, &x)?.is_inside() || lin_c.contains(&x) {
                            return Err(MaximalityError::Internal(
                                "efficiency witness does not re-verify".into(),
                            ));
                        }
                        return Ok(Efficiency {
                            efficient: false,
                            witness: Some(x),
                        });
                    }
                }
                _ => {
                    return Err(MaximalityError::Internal(
                        "bounded efficiency sweep did not return an optimum".into(),
                    ))
                }
            }
        }
    }
    Ok(Efficiency {
        efficient: true,
        witness: None,
    })
}

// ---------------------------------------------------------------------------
// Maximality
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaximalityVerdict {
    NotAttainable,
    NotMaximal,
    Maximal,
    ProperlyMaximal,
}

#[derive(Debug, Clone)]
pub struct MaximalityReport {
    pub verdict: MaximalityVerdict,
    /// Nonnegative, nonzero surplus δ with x + δ attainable.
    pub improvement: Option<Claim>,
    /// Expected total surplus of the best improvement.
    pub improvement_value: Option<Rational>,
    /// Consistent process pricing x to zero.
    pub certificate: Option<PriceProcess>,
    /// Maximality without any certificate cannot happen on a finite tree;
    /// a `true` here flags a broken invariant rather than a verdict.
    pub maximal_without_certificate: bool,
}

pub fn is_maximal(market: &Market, x: &Claim) -> Result<MaximalityReport, MaximalityError> {
    x.validate(&market.tree, "claim")?;
    if x.dim != market.dim {
        return Err(MaximalityError::InvalidInput(format!(
            "claim has dimension {}, market has {}",
            x.dim, market.dim
        )));
    }
    let horizon = market.tree.horizon;
    let attainable = lift_cones(market, 0, horizon);
    if let Some(w) = arbitrage_check(&attainable)? {
        return Err(MaximalityError::Arbitrage(format!(
            "nonnegative nonzero claim is attainable ({:?})",
            w.claim
        )));
    }
    let flat = x.flatten(&market.tree);
    if !member(&attainable, &flat)?.is_inside() {
        return Ok(MaximalityReport {
            verdict: MaximalityVerdict::NotAttainable,
            improvement: None,
            improvement_value: None,
            certificate: None,
            maximal_without_certificate: false,
        });
    }
    let d = market.dim;
    let ambient = attainable.ambient();
    let n1 = attainable.generators.len();
    // x + δ = Σ λ_g g with δ ≥ 0; maximize the expected total surplus.
    let (_, _, mut rows) = stack_rows(&[(&attainable, 1)]);
    for (c, row) in rows.iter_mut().enumerate() {
        row.push((n1 + c, -Rational::one()));
    }
    let mut lp = LinearProgram::new(n1 + ambient);
    for j in 0..n1 + ambient {
        lp.nonneg(j);
    }
    for (c, row) in rows.into_iter().enumerate() {
        lp.add_row(row, Relation::Eq, flat[c].clone());
    }
    let mut obj = Vec::new();
    for (li, &leaf) in market.tree.leaves().iter().enumerate() {
        let p = market.tree.prob(leaf).clone();
        for a in 0..d {
            obj.push((n1 + li * d + a, p.clone()));
        }
    }
    lp.maximize(obj);
    match solve(&lp)? {
        LpOutcome::Optimal {
            point, objective, ..
        } => {
            if objective.is_positive() {
                let delta = point[n1..n1 + ambient].to_vec();
                let improved = add_vec(&flat, &delta);
                if !member(&attainable, &improved)?.is_inside() {
                    return Err(MaximalityError::Internal(
                        "improvement does not re-verify as attainable".into(),
                    ));
                }
                return Ok(MaximalityReport {
                    verdict: MaximalityVerdict::NotMaximal,
                    improvement: Some(Claim::from_flat(&market.tree, d, &delta)),
                    improvement_value: Some(objective),
                    certificate: None,
                    maximal_without_certificate: false,
                });
            }
        }
        LpOutcome::Unbounded { .. } => {
            return Err(MaximalityError::Internal(
                "improvement objective unbounded in an arbitrage-free market".into(),
            ))
        }
        _ => {
            return Err(MaximalityError::Internal(
                "improvement search did not return an optimum".into(),
            ))
        }
    }
    match find_consistent_process(market, false, Some(x))? {
        CppOutcome::Found(z) => {
            if !z.price(market, x).is_zero() {
                return Err(MaximalityError::Internal(
                    "certificate does not price the claim to zero".into(),
                ));
            }
            Ok(MaximalityReport {
                verdict: MaximalityVerdict::ProperlyMaximal,
                improvement: None,
                improvement_value: None,
                certificate: Some(z),
                maximal_without_certificate: false,
            })
        }
        CppOutcome::Infeasible { .. } => Ok(MaximalityReport {
            verdict: MaximalityVerdict::Maximal,
            improvement: None,
            improvement_value: None,
            certificate: None,
            maximal_without_certificate: true,
        }),
        CppOutcome::OnlyBoundary(_) => Err(MaximalityError::Internal(
            "non-strict search returned a boundary verdict".into(),
        )),
    }
}

/// Largest ε ≥ 0 with `x + ε·direction·𝟙` attainable, plus a strategy
/// reaching it. The direction is a nonnegative, nonzero asset vector.
pub fn max_uniform_improvement(
    market: &Market,
    x: &Claim,
    direction: &[Rational],
) -> Result<(Rational, HedgingStrategy), MaximalityError> {
    x.validate(&market.tree, "claim")?;
    let d = market.dim;
    if direction.len() != d
        || direction.iter().any(|v| v.is_negative())
        || direction.iter().all(|v| v.is_zero())
    {
        return Err(MaximalityError::InvalidInput(
            "direction must be nonnegative, nonzero, of asset dimension".into(),
        ));
    }
    let horizon = market.tree.horizon;
    let attainable = lift_cones(market, 0, horizon);
    if arbitrage_check(&attainable)?.is_some() {
        return Err(MaximalityError::Arbitrage(
            "uniform improvements are unbounded under arbitrage".into(),
        ));
    }
    let flat = x.flatten(&market.tree);
    let n1 = attainable.generators.len();
    let (_, _, mut rows) = stack_rows(&[(&attainable, 1)]);
    for li in 0..market.tree.num_leaves() {
        for a in 0..d {
            if !direction[a].is_zero() {
                rows[li * d + a].push((n1, -&direction[a]));
            }
        }
    }
    let mut lp = LinearProgram::new(n1 + 1);
    for j in 0..n1 + 1 {
        lp.nonneg(j);
    }
    for (c, row) in rows.into_iter().enumerate() {
        lp.add_row(row, Relation::Eq, flat[c].clone());
    }
    lp.maximize(vec![(n1, Rational::one())]);
    match solve(&lp)? {
        LpOutcome::Optimal {
            point, objective, ..
        } => {
            let strategy = strategy_from_coefficients(market, &attainable, &point[..n1])?;
            let target = Claim {
                dim: d,
                values: market
                    .tree
                    .leaves()
                    .iter()
                    .map(|&l| {
                        (
                            l,
                            add_vec(x.value(l), &scale_vec(&objective, direction)),
                        )
                    })
                    .collect(),
            };
            strategy
                .validate(market, &target)
                .map_err(|e| MaximalityError::Internal(format!("strategy re-check: {e}")))?;
            Ok((objective, strategy))
        }
        LpOutcome::Infeasible { .. } => Err(MaximalityError::NotAttainable(
            "claim is outside the attainable cone".into(),
        )),
        _ => Err(MaximalityError::Internal(
            "uniform improvement unbounded in an arbitrage-free market".into(),
        )),
    }
}

fn strategy_from_coefficients(
    market: &Market,
    cone: &LiftedCone,
    coeffs: &[Rational],
) -> Result<HedgingStrategy, MaximalityError> {
    let mut legs = zero_legs(market);
    for (j, g) in cone.generators.iter().enumerate() {
        if coeffs[j].is_zero() {
            continue;
        }
        match &g.provenance {
            Provenance::Node { time, node, index } => {
                let gen = &market.node_generators(*node)[*index];
                let cur = legs[*time].get_mut(node).unwrap();
                *cur = add_vec(cur, &scale_vec(&coeffs[j], gen));
            }
            Provenance::Added { label } => {
                return Err(MaximalityError::Internal(format!(
                    "cannot fold synthetic generator into a strategy: {label}"
                )))
            }
        }
    }
    Ok(HedgingStrategy { legs })
}

// ---------------------------------------------------------------------------
// Efficient decompositions
// ---------------------------------------------------------------------------

/// Per-atom functional that is ≤ 0 on every constant position attainable
/// strictly after the atom (within the span of the atom's own cone), and
/// zero there only on cancellable directions. Maximizing it picks legs
/// that leave nothing deferrable.
#[derive(Debug, Clone)]
pub struct ScalarizationFunctional {
    pub time: usize,
    /// node -> functional on R^d
    pub values: BTreeMap<usize, Vec<Rational>>,
    /// node -> the polar rays averaged into the functional
    pub polar_generators: BTreeMap<usize, Vec<Vec<Rational>>>,
}

fn scalarization_at(
    market: &Market,
    t: usize,
    after: &BTreeMap<usize, DdCone>,
) -> Result<ScalarizationFunctional, MaximalityError> {
    let d = market.dim;
    let mut values = BTreeMap::new();
    let mut polar_generators = BTreeMap::new();
    for node in market.tree.nodes_at(t) {
        let own = node_cone(market, node)?;
        let dnu = &after[&node];
        let mut rows = dnu.halfspaces()?;
        rows.extend(own.span_halfspaces());
        let lambda_cone = DdCone::from_halfspaces(d, &rows)?;
        let polar = lambda_cone.polar()?;
        let mut lam = vec![Rational::zero(); d];
        for r in &polar.rays {
            let n = one_norm(r);
            for i in 0..d {
                lam[i] = &lam[i] + &(&r[i] / &n);
            }
        }
        // Sign audit on the deferrable cone's generators: never positive,
        // and zero only on directions that can be cancelled later.
        let mut gens: Vec<Vec<Rational>> = lambda_cone.rays.clone();
        for l in &lambda_cone.lin {
            gens.push(l.clone());
            gens.push(neg_vec(l));
        }
        for g in &gens {
            let p = dot(&lam, g);
            if p.is_positive() {
                return Err(MaximalityError::Internal(
                    "scalarization is positive on a deferrable direction".into(),
                ));
            }
            if p.is_zero() && !linalg::in_span(&dnu.lin, g) {
                return Err(MaximalityError::Internal(
                    "scalarization vanishes on a non-cancellable deferrable direction".into(),
                ));
            }
        }
        values.insert(node, lam);
        polar_generators.insert(node, polar.rays.clone());
    }
    Ok(ScalarizationFunctional {
        time: t,
        values,
        polar_generators,
    })
}

#[derive(Debug, Clone)]
pub struct DecompositionStage {
    pub time: usize,
    /// Optimal expected scalarization value of the stage leg.
    pub objective: Rational,
}

#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub strategy: HedgingStrategy,
    pub scalarizations: Vec<ScalarizationFunctional>,
    pub stages: Vec<DecompositionStage>,
}

/// Splits an attainable claim into per-period legs ξ_t ∈ K_t such that no
/// part of any leg could be deferred: at every atom, any position z
/// attainable strictly later with ξ_t − z still tradable now must be
/// cancellable. Legs are found by maximizing the stage scalarization.
pub fn efficient_decomposition(
    market: &Market,
    theta: &Claim,
) -> Result<DecompositionReport, MaximalityError> {
    theta.validate(&market.tree, "claim")?;
    let d = market.dim;
    let horizon = market.tree.horizon;
    let attainable = lift_cones(market, 0, horizon);
    let flat = theta.flatten(&market.tree);
    if !member(&attainable, &flat)?.is_inside() {
        return Err(MaximalityError::NotAttainable(
            "claim is outside the attainable cone".into(),
        ));
    }
    let sections = section_cones(market)?;
    let mut legs = zero_legs(market);
    let mut residual = flat;
    let mut scalarizations = Vec::new();
    let mut stages = Vec::new();
    for t in 0..horizon {
        let scal = scalarization_at(market, t, &sections.after_node)?;
        let slice = lift_cones(market, t, t);
        let future = lift_cones(market, t + 1, horizon);
        let (total, offsets, rows) = stack_rows(&[(&slice, 1), (&future, 1)]);
        let mut lp = LinearProgram::new(total);
        for j in 0..total {
            lp.nonneg(j);
        }
        for (c, row) in rows.into_iter().enumerate() {
            lp.add_row(row, Relation::Eq, residual[c].clone());
        }
        let mut obj: Vec<(usize, Rational)> = Vec::new();
        for (j, g) in slice.generators.iter().enumerate() {
            let Provenance::Node { node, index, .. } = g.provenance else {
                return Err(MaximalityError::Internal(
                    "slice cone carries a synthetic generator".into(),
                ));
            };
            let gen = &market.node_generators(node)[index];
            let v = market.tree.prob(node) * dot(&scal.values[&node], gen);
            if !v.is_zero() {
                obj.push((offsets[0] + j, v));
            }
        }
        lp.maximize(obj);
        let point = match solve(&lp)? {
            LpOutcome::Optimal {
                point, objective, ..
            } => {
                stages.push(DecompositionStage {
                    time: t,
                    objective,
                });
                point
            }
            LpOutcome::Unbounded { .. } => {
                return Err(MaximalityError::NotNeat(
                    "stage objective unbounded: some nonzero position can be both taken and cancelled".into(),
                ))
            }
            _ => {
                return Err(MaximalityError::Internal(
                    "stage residual lost attainability".into(),
                ))
            }
        };
        for node in market.tree.nodes_at(t) {
            let mut leg = vec![Rational::zero(); d];
            for (j, g) in slice.generators.iter().enumerate() {
                let Provenance::Node { node: gn, index, .. } = g.provenance else {
                    unreachable!()
                };
                if gn != node || point[offsets[0] + j].is_zero() {
                    continue;
                }
                leg = add_vec(
                    &leg,
                    &scale_vec(&point[offsets[0] + j], &market.node_generators(gn)[index]),
                );
            }
            for l in market.tree.subtree_leaves(node) {
                let base = market.tree.leaf_index(l).unwrap() * d;
                for i in 0..d {
                    residual[base + i] = &residual[base + i] - &leg[i];
                }
            }
            legs[t].insert(node, leg);
        }
        scalarizations.push(scal);
    }
    for &l in market.tree.leaves() {
        let base = market.tree.leaf_index(l).unwrap() * d;
        let v = residual[base..base + d].to_vec();
        if !node_cone(market, l)?.contains(&v)? {
            return Err(MaximalityError::Internal(
                "terminal residual escapes the terminal cone".into(),
            ));
        }
        legs[horizon].insert(l, v);
    }
    let strategy = HedgingStrategy { legs };
    verify_decomposition(market, &strategy)?;
    Ok(DecompositionReport {
        strategy,
        scalarizations,
        stages,
    })
}

/// Checks that a strategy's legs lie in their cones, sum to the claim they
/// imply, and leave no deferrable room: at each non-terminal atom, every z
/// attainable strictly later with ξ_t − z still in the atom's cone must be
/// cancellable later. The slice test runs on the homogenization
/// {(z, c) : z deferrable for c·ξ_t} so recession directions are covered.
pub fn verify_decomposition(
    market: &Market,
    strategy: &HedgingStrategy,
) -> Result<(), MaximalityError> {
    let d = market.dim;
    let horizon = market.tree.horizon;
    if strategy.legs.len() != horizon + 1 {
        return Err(MaximalityError::InvalidDecomposition(format!(
            "{} legs for horizon {horizon}",
            strategy.legs.len()
        )));
    }
    let claim = implied_claim(market, &strategy.legs);
    strategy
        .validate(market, &claim)
        .map_err(|e| MaximalityError::InvalidDecomposition(e.to_string()))?;
    let sections = section_cones(market)?;
    for t in 0..horizon {
        for node in market.tree.nodes_at(t) {
            let leg = &strategy.legs[t][&node];
            let dnu = &sections.after_node[&node];
            let own = node_cone(market, node)?;
            let mut rows: Vec<Halfspace> = Vec::new();
            for h in dnu.halfspaces()? {
                let mut n = h.normal;
                n.push(Rational::zero());
                rows.push(Halfspace {
                    normal: n,
                    equality: h.equality,
                });
            }
            for h in own.halfspaces()? {
                // h·(c·leg − z) ≤ 0  ⇔  (−h)·z + (h·leg)·c ≤ 0
                let mut n = neg_vec(&h.normal);
                n.push(dot(&h.normal, leg));
                rows.push(Halfspace {
                    normal: n,
                    equality: h.equality,
                });
            }
            let mut cpos = vec![Rational::zero(); d];
            cpos.push(-Rational::one());
            rows.push(Halfspace::ineq(cpos));
            let q_cone = DdCone::from_halfspaces(d + 1, &rows)?;
            for g in q_cone.rays.iter().chain(q_cone.lin.iter()) {
                if !linalg::in_span(&dnu.lin, &g[..d]) {
                    return Err(MaximalityError::InvalidDecomposition(format!(
                        "deferrable position at time {t}, node {node}"
                    )));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Support-maximal representatives
// ---------------------------------------------------------------------------

/// Equivalence data of a decomposition leg at one period: two legs are
/// equivalent when their difference is cancellable strictly later, and the
/// representative has the largest possible support among generator
/// mixtures within the class's cone.
#[derive(Debug, Clone)]
pub struct EquivalenceData {
    pub time: usize,
    /// node -> class member with support-maximal generator mixture
    pub representative: BTreeMap<usize, Vec<Rational>>,
    /// node -> mixing coefficients over the node's generators
    pub coefficients: BTreeMap<usize, Vec<Rational>>,
    /// node -> generator indices that admit a positive mixing coefficient
    pub support: BTreeMap<usize, Vec<usize>>,
    /// node -> generators of the cone spanned by the class
    pub class_cone: BTreeMap<usize, Vec<Vec<Rational>>>,
    /// node -> basis of the cancellable constant sections strictly after
    pub lineality: BTreeMap<usize, Vec<Vec<Rational>>>,
}

/// Computes, per time-t atom, the class of the given leg — positions in the
/// atom's cone that still reach the residual and differ from the leg by a
/// cancellable section — and a support-maximal representative within it.
/// Verifies the defining identity: displacing the slice cone by measurable
/// multiples of the representative equals adding the whole class cone.
pub fn support_maximal_representative(
    market: &Market,
    t: usize,
    leg: &BTreeMap<usize, Vec<Rational>>,
    residual: &Claim,
) -> Result<EquivalenceData, MaximalityError> {
    let d = market.dim;
    let horizon = market.tree.horizon;
    if t > horizon {
        return Err(MaximalityError::InvalidInput(format!(
            "time {t} beyond horizon {horizon}"
        )));
    }
    residual.validate(&market.tree, "residual")?;
    let sections = section_cones(market)?;
    let scaled = scaled_section_cones(market, residual)?;
    let mut representative = BTreeMap::new();
    let mut coefficients = BTreeMap::new();
    let mut support = BTreeMap::new();
    let mut class_cone = BTreeMap::new();
    let mut lin_out = BTreeMap::new();
    for node in market.tree.nodes_at(t) {
        let leg_nu = leg.get(&node).ok_or_else(|| {
            MaximalityError::InvalidInput(format!("leg missing node {node}"))
        })?;
        let own = node_cone(market, node)?;
        if !own.contains(leg_nu)? {
            return Err(MaximalityError::InvalidDecomposition(format!(
                "leg at node {node} is outside the trading cone"
            )));
        }
        let dnu = &sections.after_node[&node];
        let reach = &scaled.after_node[&node];
        // Homogenized class {(x, c)}: x in the cone, (x, c) reaches the
        // scaled residual, x − c·leg cancellable, c ≥ 0.
        let mut rows = reach.halfspaces()?;
        for h in own.halfspaces()? {
            let mut n = h.normal;
            n.push(Rational::zero());
            rows.push(Halfspace {
                normal: n,
                equality: h.equality,
            });
        }
        for w in linalg::orthogonal_complement(&dnu.lin, d) {
            let shift = -dot(&w, leg_nu);
            let mut n = w;
            n.push(shift);
            rows.push(Halfspace::equation(n));
        }
        let mut cpos = vec![Rational::zero(); d];
        cpos.push(-Rational::one());
        rows.push(Halfspace::ineq(cpos));
        let cl = DdCone::from_halfspaces(d + 1, &rows)?;
        {
            let mut check = leg_nu.clone();
            check.push(Rational::one());
            if !cl.contains(&check)? {
                return Err(MaximalityError::InvalidDecomposition(format!(
                    "leg at node {node} cannot reach the residual"
                )));
            }
        }
        for g in cl.rays.iter().chain(cl.lin.iter()) {
            if g[d].is_zero() && !is_zero_vec(&g[..d]) {
                return Err(MaximalityError::NotNeat(
                    "the class has a nonzero recession direction".into(),
                ));
            }
        }
        let sigma = cl.project_drop_last()?;
        if !sigma.lin.is_empty() {
            return Err(MaximalityError::Internal(
                "class cone of a bounded class has lineality".into(),
            ));
        }
        let sigma_rows = sigma.halfspaces()?;
        let gens = market.node_generators(node);
        let m = gens.len();
        let mut witnesses: Vec<Vec<Rational>> = Vec::new();
        let mut supp = Vec::new();
        for k in 0..m {
            let mut lp = LinearProgram::new(m);
            for j in 0..m {
                lp.nonneg(j);
                lp.set_upper(j, Rational::one());
            }
            for h in &sigma_rows {
                let coeffs: Vec<(usize, Rational)> = (0..m)
                    .filter_map(|j| {
                        let v = dot(&h.normal, &gens[j]);
                        (!v.is_zero()).then_some((j, v))
                    })
                    .collect();
                lp.add_row(
                    coeffs,
                    if h.equality { Relation::Eq } else { Relation::Le },
                    Rational::zero(),
                );
            }
            lp.maximize(vec![(k, Rational::one())]);
            match solve(&lp)? {
                LpOutcome::Optimal {
                    point, objective, ..
                } => {
                    if objective.is_positive() {
                        supp.push(k);
                        witnesses.push(point);
                    }
                }
                _ => {
                    return Err(MaximalityError::Internal(
                        "mixing problem must be bounded and feasible".into(),
                    ))
                }
            }
        }
        // Convex mixture with weights 2^{-1},…,2^{-K}, last doubled.
        let mut alpha = vec![Rational::zero(); m];
        let kk = witnesses.len();
        for (j, wit) in witnesses.iter().enumerate() {
            let w = if j + 1 == kk {
                pow2_neg(j as u32)
            } else {
                pow2_neg(j as u32 + 1)
            };
            for i in 0..m {
                alpha[i] = &alpha[i] + &(&w * &wit[i]);
            }
        }
        let mut xi = vec![Rational::zero(); d];
        for i in 0..m {
            if !alpha[i].is_zero() {
                xi = add_vec(&xi, &scale_vec(&alpha[i], &gens[i]));
            }
        }
        let rep = if is_zero_vec(&xi) {
            let mut origin = vec![Rational::zero(); d];
            origin.push(Rational::one());
            if !cl.contains(&origin)? {
                return Err(MaximalityError::Internal(
                    "support-maximal mixture vanished but 0 is not a class member".into(),
                ));
            }
            xi
        } else {
            let gamma = rescale_into_slice(&cl, &xi, d)?;
            scale_vec(&gamma, &xi)
        };
        {
            let mut check = rep.clone();
            check.push(Rational::one());
            if !cl.contains(&check)? {
                return Err(MaximalityError::Internal(
                    "representative escaped its class".into(),
                ));
            }
        }
        representative.insert(node, rep);
        coefficients.insert(node, alpha);
        support.insert(node, supp);
        class_cone.insert(node, sigma.rays.clone());
        lin_out.insert(node, dnu.lin.clone());
    }
    // Displaced-cone identity over the whole slice: adding measurable
    // nonnegative multiples of the representative reaches exactly the same
    // cone as adding every class direction per atom.
    let slice = lift_cones(market, t, t);
    let mut lhs = slice.clone();
    for (node, gens) in &class_cone {
        for g in gens {
            lhs.add(
                Provenance::Added {
                    label: format!("class direction at node {node}"),
                },
                lift_on_node(&market.tree, d, *node, &neg_vec(g)),
            );
        }
    }
    let rep_flat = flat_from_slice(market, t, &representative)?;
    let rhs = displaced_cone(
        &slice,
        &market.tree,
        &rep_flat,
        DisplacementMode::MeasurableMultiples { time: t },
    )?
    .cone;
    if !cone_equal(&lhs, &rhs)? {
        return Err(MaximalityError::Internal(
            "support-maximal representative fails the displaced-cone identity".into(),
        ));
    }
    Ok(EquivalenceData {
        time: t,
        representative,
        coefficients,
        support,
        class_cone,
        lineality: lin_out,
    })
}

/// One-variable interval resolution: the largest-support ray direction
/// meets the class slice in γ·ξ with γ > 0; prefers γ = 1, else the
/// nearest interval endpoint.
fn rescale_into_slice(
    cl: &DdCone,
    xi: &[Rational],
    d: usize,
) -> Result<Rational, MaximalityError> {
    let mut lo = Rational::zero();
    let mut hi: Option<Rational> = None;
    let mut pin: Option<Rational> = None;
    for h in cl.halfspaces()? {
        let a = dot(&h.normal[..d], xi);
        let b = h.normal[d].clone();
        if h.equality {
            if a.is_zero() {
                if !b.is_zero() {
                    return Err(MaximalityError::Internal(
                        "class slice is empty along the mixture ray".into(),
                    ));
                }
            } else {
                let g = -&b / &a;
                match &pin {
                    None => pin = Some(g),
                    Some(p) if *p != g => {
                        return Err(MaximalityError::Internal(
                            "class slice pins two different scales".into(),
                        ))
                    }
                    _ => {}
                }
            }
        } else if a.is_positive() {
            let cand = -&b / &a;
            hi = Some(match hi {
                None => cand,
                Some(h0) => h0.min(cand),
            });
        } else if a.is_negative() {
            let cand = -&b / &a;
            if cand > lo {
                lo = cand;
            }
        } else if b.is_positive() {
            return Err(MaximalityError::Internal(
                "class slice excludes the mixture ray".into(),
            ));
        }
    }
    let gamma = if let Some(p) = pin {
        p
    } else {
        let one = Rational::one();
        match &hi {
            Some(h0) if *h0 < one => h0.clone(),
            _ if lo > one => lo.clone(),
            _ => one,
        }
    };
    let fits = gamma.is_positive()
        && gamma >= lo
        && hi.as_ref().map_or(true, |h0| &gamma <= h0);
    if !fits {
        return Err(MaximalityError::Internal(
            "no positive scale lands in the class slice".into(),
        ));
    }
    Ok(gamma)
}

// ---------------------------------------------------------------------------
// Null projections
// ---------------------------------------------------------------------------

/// First projection of the null directions of (displaced slice cone) ×
/// (strictly later attainability): sections y per atom for which some later
/// trade exactly cancels y·𝟙. A vector space whenever the displacement is a
/// support-maximal representative of an efficient leg.
#[derive(Debug, Clone)]
pub struct NullProjection {
    pub time: usize,
    pub trivial: bool,
    /// node -> basis of the cancellable section space
    pub sections: BTreeMap<usize, Vec<Vec<Rational>>>,
    /// node -> basis of its orthogonal complement in R^d
    pub complements: BTreeMap<usize, Vec<Vec<Rational>>>,
}

pub fn null_projection(
    market: &Market,
    t: usize,
    representative: &BTreeMap<usize, Vec<Rational>>,
) -> Result<NullProjection, MaximalityError> {
    let d = market.dim;
    let horizon = market.tree.horizon;
    if t > horizon {
        return Err(MaximalityError::InvalidInput(format!(
            "time {t} beyond horizon {horizon}"
        )));
    }
    let slice = lift_cones(market, t, t);
    let rep_flat = flat_from_slice(market, t, representative)?;
    let displaced = displaced_cone(
        &slice,
        &market.tree,
        &rep_flat,
        DisplacementMode::MeasurableMultiples { time: t },
    )?
    .cone;
    let future;
    let factors: Vec<&LiftedCone> = if t < horizon {
        future = lift_cones(market, t + 1, horizon);
        vec![&displaced, &future]
    } else {
        vec![&displaced]
    };
    let ns = null_strategies(&factors)?;
    if !ns.is_vector_space {
        return Err(MaximalityError::Internal(
            "null directions do not form a vector space; the displacement is not a support-maximal representative of an efficient leg".into(),
        ));
    }
    let proj = &ns.projections.as_ref().unwrap()[0];
    let mut sections = BTreeMap::new();
    let mut complements = BTreeMap::new();
    let mut trivial = true;
    for node in market.tree.nodes_at(t) {
        let leaves = market.tree.subtree_leaves(node);
        let mut vals = Vec::new();
        for v in &proj.basis {
            let first = market.tree.leaf_index(leaves[0]).unwrap() * d;
            let section = v[first..first + d].to_vec();
            for &l in &leaves {
                let b = market.tree.leaf_index(l).unwrap() * d;
                if v[b..b + d] != section[..] {
                    return Err(MaximalityError::Internal(
                        "null projection member varies within an atom".into(),
                    ));
                }
            }
            vals.push(section);
        }
        let basis = linalg::span_basis(&vals, d);
        if !basis.is_empty() {
            trivial = false;
        }
        complements.insert(node, linalg::orthogonal_complement(&basis, d));
        sections.insert(node, basis);
    }
    Ok(NullProjection {
        time: t,
        trivial,
        sections,
        complements,
    })
}

// ---------------------------------------------------------------------------
// Truncations
// ---------------------------------------------------------------------------

/// Per-period node sets G_t (t = 1..=horizon). A leg at time t survives
/// truncation iff the whole path into its atom stays inside the sets.
#[derive(Debug, Clone)]
pub struct TruncationSets {
    pub sets: BTreeMap<usize, BTreeSet<usize>>,
}

impl TruncationSets {
    pub fn everything(tree: &FiltrationTree) -> Self {
        TruncationSets {
            sets: (1..=tree.horizon)
                .map(|t| (t, tree.nodes_at(t).into_iter().collect()))
                .collect(),
        }
    }

    pub fn validate(&self, tree: &FiltrationTree) -> Result<(), MaximalityError> {
        for t in 1..=tree.horizon {
            let s = self.sets.get(&t).ok_or_else(|| {
                MaximalityError::InvalidInput(format!("missing node set for time {t}"))
            })?;
            for &n in s {
                if n >= tree.len() || tree.time(n) != t {
                    return Err(MaximalityError::InvalidInput(format!(
                        "node {n} does not live at time {t}"
                    )));
                }
            }
        }
        if self.sets.keys().any(|&t| t == 0 || t > tree.horizon) {
            return Err(MaximalityError::InvalidInput(
                "sets may only name times 1..=horizon".into(),
            ));
        }
        Ok(())
    }

    /// Whether every node on the path into `node` (after the root) is kept.
    pub fn keeps(&self, tree: &FiltrationTree, node: usize) -> bool {
        let mut cur = node;
        while tree.time(cur) >= 1 {
            if !self.sets[&tree.time(cur)].contains(&cur) {
                return false;
            }
            cur = tree.parent(cur).expect("non-root nodes have parents");
        }
        true
    }

    /// Σ_t P(G_t^c).
    pub fn complement_probability(&self, tree: &FiltrationTree) -> Rational {
        let mut total = Rational::zero();
        for t in 1..=tree.horizon {
            for n in tree.nodes_at(t) {
                if !self.sets[&t].contains(&n) {
                    total = &total + tree.prob(n);
                }
            }
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct Truncation {
    pub claim: Claim,
    pub strategy: HedgingStrategy,
    /// A-priori disagreement bound Σ_t P(G_t^c).
    pub bound: Rational,
    /// Exact probability that the truncated claim differs.
    pub disagreement: Rational,
}

/// Zeroes every leg whose path leaves the kept sets and reports the
/// resulting claim together with exact and a-priori disagreement weights.
pub fn truncate_claim(
    market: &Market,
    strategy: &HedgingStrategy,
    g: &TruncationSets,
) -> Result<Truncation, MaximalityError> {
    g.validate(&market.tree)?;
    let original = implied_claim(market, &strategy.legs);
    strategy
        .validate(market, &original)
        .map_err(|e| MaximalityError::InvalidDecomposition(e.to_string()))?;
    let mut legs = strategy.legs.clone();
    for leg in legs.iter_mut().skip(1) {
        for (node, v) in leg.iter_mut() {
            if !g.keeps(&market.tree, *node) {
                *v = vec![Rational::zero(); market.dim];
            }
        }
    }
    let truncated = HedgingStrategy { legs };
    let claim = implied_claim(market, &truncated.legs);
    truncated
        .validate(market, &claim)
        .map_err(|e| MaximalityError::Internal(format!("truncated strategy re-check: {e}")))?;
    let bound = g.complement_probability(&market.tree);
    let mut disagreement = Rational::zero();
    for &l in market.tree.leaves() {
        if claim.value(l) != original.value(l) {
            disagreement = &disagreement + market.tree.prob(l);
        }
    }
    Ok(Truncation {
        claim,
        strategy: truncated,
        bound,
        disagreement,
    })
}

#[derive(Debug, Clone)]
pub struct TruncationConditionReport {
    pub holds: bool,
    pub failed_time: Option<usize>,
    /// time-(t−1) atom -> constant section of a nonzero feasible y
    pub counterexample: Option<BTreeMap<usize, Vec<Rational>>>,
}

/// Decides, per period t, whether the only section y of the displaced
/// time-(t−1) slice cone whose negation is hedgeable on the dropped region
/// 𝟙_{G_t^c} is y = 0. With `restriction`, y is additionally confined to
/// the orthogonal complement of the cancellable nulls, which is the right
/// test on markets whose attainable cone carries lines.
pub fn check_truncation_condition(
    market: &Market,
    displacements: &BTreeMap<usize, BTreeMap<usize, Vec<Rational>>>,
    g: &TruncationSets,
    restriction: Option<&BTreeMap<usize, NullProjection>>,
) -> Result<TruncationConditionReport, MaximalityError> {
    g.validate(&market.tree)?;
    let d = market.dim;
    let horizon = market.tree.horizon;
    for t in 1..=horizon {
        let prev = t - 1;
        let disp = displacements.get(&prev).ok_or_else(|| {
            MaximalityError::InvalidInput(format!("missing displacement at time {prev}"))
        })?;
        let slice = lift_cones(market, prev, prev);
        let rep_flat = flat_from_slice(market, prev, disp)?;
        let displaced = displaced_cone(
            &slice,
            &market.tree,
            &rep_flat,
            DisplacementMode::MeasurableMultiples { time: prev },
        )?
        .cone;
        let future = lift_cones(market, t, horizon);
        let kept = &g.sets[&t];
        let num_leaves = market.tree.num_leaves();
        let mut cut = vec![false; num_leaves];
        for &l in market.tree.leaves() {
            let anc = ancestor_at(&market.tree, l, t);
            cut[market.tree.leaf_index(l).unwrap()] = !kept.contains(&anc);
        }
        let n1 = displaced.generators.len();
        let n2 = future.generators.len();
        let mut rows: Vec<Vec<(usize, Rational)>> = vec![Vec::new(); num_leaves * d];
        for (j, gg) in displaced.generators.iter().enumerate() {
            for (idx, v) in &gg.entries {
                if cut[idx / d] {
                    rows[*idx].push((j, v.clone()));
                }
            }
        }
        for (j, gg) in future.generators.iter().enumerate() {
            for (idx, v) in &gg.entries {
                rows[*idx].push((n1 + j, v.clone()));
            }
        }
        let mut restriction_rows: Vec<Vec<(usize, Rational)>> = Vec::new();
        let nodes_prev = market.tree.nodes_at(prev);
        // Per-atom sections of each displaced generator.
        let mut section_of: BTreeMap<usize, Vec<Vec<Rational>>> = BTreeMap::new();
        for &node in &nodes_prev {
            let first = market
                .tree
                .leaf_index(market.tree.subtree_leaves(node)[0])
                .unwrap()
                * d;
            let secs: Vec<Vec<Rational>> = displaced
                .generators
                .iter()
                .map(|gg| {
                    let mut s = vec![Rational::zero(); d];
                    for (idx, v) in &gg.entries {
                        if *idx >= first && *idx < first + d {
                            s[idx - first] = v.clone();
                        }
                    }
                    s
                })
                .collect();
            section_of.insert(node, secs);
        }
        if let Some(maps) = restriction {
            let np = maps.get(&prev).ok_or_else(|| {
                MaximalityError::InvalidInput(format!(
                    "missing null projection at time {prev}"
                ))
            })?;
            for &node in &nodes_prev {
                for w in &np.sections[&node] {
                    let row: Vec<(usize, Rational)> = section_of[&node]
                        .iter()
                        .enumerate()
                        .filter_map(|(j, s)| {
                            let v = dot(w, s);
                            (!v.is_zero()).then_some((j, v))
                        })
                        .collect();
                    if !row.is_empty() {
                        restriction_rows.push(row);
                    }
                }
            }
        }
        for &node in &nodes_prev {
            for i in 0..d {
                for sign in [1i64, -1] {
                    let obj: Vec<(usize, Rational)> = section_of[&node]
                        .iter()
                        .enumerate()
                        .filter_map(|(j, s)| {
                            let v = &q(sign) * &s[i];
                            (!v.is_zero()).then_some((j, v))
                        })
                        .collect();
                    if obj.is_empty() {
                        continue;
                    }
                    let mut lp = LinearProgram::new(n1 + n2);
                    for j in 0..n1 + n2 {
                        lp.nonneg(j);
                    }
                    for row in &rows {
                        if !row.is_empty() {
                            lp.add_row(row.clone(), Relation::Eq, Rational::zero());
                        }
                    }
                    for row in &restriction_rows {
                        lp.add_row(row.clone(), Relation::Eq, Rational::zero());
                    }
                    lp.add_row(obj.clone(), Relation::Le, Rational::one());
                    lp.maximize(obj);
                    match solve(&lp)? {
                        LpOutcome::Optimal {
                            point, objective, ..
                        } => {
                            if objective.is_positive() {
                                let mut example = BTreeMap::new();
                                for &n in &nodes_prev {
                                    let mut y = vec![Rational::zero(); d];
                                    for (j, s) in section_of[&n].iter().enumerate() {
                                        if !point[j].is_zero() {
                                            y = add_vec(&y, &scale_vec(&point[j], s));
                                        }
                                    }
                                    example.insert(n, y);
                                }
                                if example.values().all(|y| is_zero_vec(y)) {
                                    return Err(MaximalityError::Internal(
                                        "nonzero objective produced a zero section".into(),
                                    ));
                                }
                                return Ok(TruncationConditionReport {
                                    holds: false,
                                    failed_time: Some(t),
                                    counterexample: Some(example),
                                });
                            }
                        }
                        _ => {
                            return Err(MaximalityError::Internal(
                                "bounded truncation sweep did not return an optimum".into(),
                            ))
                        }
                    }
                }
            }
        }
    }
    Ok(TruncationConditionReport {
        holds: true,
        failed_time: None,
        counterexample: None,
    })
}

// ---------------------------------------------------------------------------
// Approximating sequences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ApproximationStep {
    pub n: usize,
    pub claim: Claim,
    pub strategy: HedgingStrategy,
    pub certificate: PriceProcess,
    pub bound: Rational,
    pub disagreement: Rational,
}

#[derive(Debug)]
pub struct ApproximationReport {
    pub randomized: RandomizedMarket,
    pub lifted_claim: Claim,
    pub steps: Vec<ApproximationStep>,
    /// Whether legs were swapped for support-maximal representatives
    /// (markets whose attainable cone carries lines).
    pub used_representatives: bool,
}

/// Builds properly maximal approximations of a maximal claim: decomposes
/// it into efficient legs, swaps in support-maximal representatives when
/// the attainable cone has lines, lifts everything onto the randomized
/// product market, and for each requested n truncates outside the first n
/// randomization branches. Every step is certified by a consistent price
/// process and reports exact and a-priori disagreement weights.
pub fn approximating_sequence(
    market: &Market,
    theta: &Claim,
    branching: usize,
    ns: &[usize],
) -> Result<ApproximationReport, MaximalityError> {
    if branching < 1 {
        return Err(MaximalityError::InvalidInput(
            "branching must be at least 1".into(),
        ));
    }
    let report = is_maximal(market, theta)?;
    match report.verdict {
        MaximalityVerdict::NotAttainable => {
            return Err(MaximalityError::NotAttainable(
                "claim is outside the attainable cone".into(),
            ))
        }
        MaximalityVerdict::NotMaximal => {
            return Err(MaximalityError::NotMaximal(
                "only maximal claims admit properly maximal approximations".into(),
            ))
        }
        _ => {}
    }
    let horizon = market.tree.horizon;
    let decomp = efficient_decomposition(market, theta)?;
    let mut legs = decomp.strategy.legs;
    let attainable = lift_cones(market, 0, horizon);
    let lin = lineality(&attainable)?;
    let used_representatives = !lin.is_trivial();
    if used_representatives {
        for t in 0..horizon {
            let residual = tail_residual(market, theta, &legs, t);
            let eq = support_maximal_representative(market, t, &legs[t], &residual)?;
            for node in market.tree.nodes_at(t) {
                let rep = eq.representative[&node].clone();
                let correction = sub_vec(&legs[t][&node], &rep);
                legs[t].insert(node, rep);
                if !is_zero_vec(&correction) {
                    push_into_lineality(market, &mut legs, t, node, &correction)?;
                }
            }
        }
        let swapped = HedgingStrategy { legs: legs.clone() };
        verify_decomposition(market, &swapped).map_err(|e| {
            MaximalityError::Internal(format!("representative swap broke the decomposition: {e}"))
        })?;
    }
    let rmarket = randomize_market(market, branching, DEFAULT_NODE_BUDGET)?;
    let lifted_claim = rmarket.lift_claim(theta);
    let legs_r: Vec<BTreeMap<usize, Vec<Rational>>> = (0..=horizon)
        .map(|t| {
            rmarket
                .market
                .tree
                .nodes_at(t)
                .into_iter()
                .map(|n| (n, legs[t][&rmarket.base_node[n]].clone()))
                .collect()
        })
        .collect();
    let strategy_r = HedgingStrategy { legs: legs_r };
    strategy_r
        .validate(&rmarket.market, &lifted_claim)
        .map_err(|e| MaximalityError::Internal(format!("lifted strategy re-check: {e}")))?;
    let displacements: BTreeMap<usize, BTreeMap<usize, Vec<Rational>>> = (0..horizon)
        .map(|t| (t, strategy_r.legs[t].clone()))
        .collect();
    let mut projections = BTreeMap::new();
    for t in 0..horizon {
        let np = null_projection(&rmarket.market, t, &displacements[&t])?;
        if !used_representatives && !np.trivial {
            return Err(MaximalityError::Internal(
                "pointed market produced nontrivial cancellable sections".into(),
            ));
        }
        projections.insert(t, np);
    }
    let restriction = if used_representatives {
        Some(&projections)
    } else {
        None
    };
    let mut steps = Vec::new();
    for &n in ns {
        if n < 1 || n > branching {
            return Err(MaximalityError::InvalidInput(format!(
                "step {n} outside 1..={branching}"
            )));
        }
        let gsets = TruncationSets {
            sets: (1..=horizon)
                .map(|t| (t, rmarket.truncation_set(t, n).into_iter().collect()))
                .collect(),
        };
        if n < branching {
            let cond =
                check_truncation_condition(&rmarket.market, &displacements, &gsets, restriction)?;
            if !cond.holds {
                return Err(MaximalityError::Truncation(format!(
                    "nonzero droppable section at time {}",
                    cond.failed_time.unwrap()
                )));
            }
        }
        let trunc = truncate_claim(&rmarket.market, &strategy_r, &gsets)?;
        let expected_bound =
            q(horizon as i64) * rmarket.tail_probability(n.min(rmarket.branching));
        if trunc.bound != expected_bound {
            return Err(MaximalityError::Internal(
                "truncation bound disagrees with the tail weight".into(),
            ));
        }
        let certificate = match find_consistent_process(&rmarket.market, false, Some(&trunc.claim))?
        {
            CppOutcome::Found(z) => z,
            _ => {
                return Err(MaximalityError::Internal(
                    "truncated claim is not certifiably maximal".into(),
                ))
            }
        };
        if !certificate.price(&rmarket.market, &trunc.claim).is_zero() {
            return Err(MaximalityError::Internal(
                "certificate does not price the truncated claim to zero".into(),
            ));
        }
        steps.push(ApproximationStep {
            n,
            claim: trunc.claim,
            strategy: trunc.strategy,
            certificate,
            bound: trunc.bound,
            disagreement: trunc.disagreement,
        });
    }
    Ok(ApproximationReport {
        randomized: rmarket,
        lifted_claim,
        steps,
        used_representatives,
    })
}

fn tail_residual(
    market: &Market,
    theta: &Claim,
    legs: &[BTreeMap<usize, Vec<Rational>>],
    t: usize,
) -> Claim {
    let d = market.dim;
    let values = market
        .tree
        .leaves()
        .iter()
        .map(|&l| {
            let mut v = theta.value(l).to_vec();
            for (s, leg) in legs.iter().enumerate().take(t) {
                let anc = ancestor_at(&market.tree, l, s);
                v = sub_vec(&v, &leg[&anc]);
            }
            (l, v)
        })
        .collect();
    Claim { dim: d, values }
}

/// Rewrites `correction·𝟙` over the node's subtree as a sum of cancellable
/// sections of strictly later cones and adds those sections to the legs.
fn push_into_lineality(
    market: &Market,
    legs: &mut [BTreeMap<usize, Vec<Rational>>],
    t: usize,
    node: usize,
    correction: &[Rational],
) -> Result<(), MaximalityError> {
    let d = market.dim;
    let horizon = market.tree.horizon;
    let leaves = market.tree.subtree_leaves(node);
    let mut cols: Vec<(usize, Vec<Rational>)> = Vec::new();
    for s in t + 1..=horizon {
        for mu in market.tree.nodes_at(s) {
            if ancestor_at(&market.tree, mu, t) != node {
                continue;
            }
            let own = node_cone(market, mu)?;
            for b in &own.lin {
                cols.push((mu, b.clone()));
            }
        }
    }
    let rows = leaves.len() * d;
    let mut a = vec![vec![Rational::zero(); cols.len()]; rows];
    let mut rhs = vec![Rational::zero(); rows];
    for (li, &l) in leaves.iter().enumerate() {
        for i in 0..d {
            rhs[li * d + i] = correction[i].clone();
            for (k, (mu, b)) in cols.iter().enumerate() {
                if ancestor_at(&market.tree, l, market.tree.time(*mu)) == *mu {
                    a[li * d + i][k] = b[i].clone();
                }
            }
        }
    }
    let sol = linalg::solve(&a, &rhs).ok_or_else(|| {
        MaximalityError::Internal(
            "correction is not spanned by later cancellable sections".into(),
        )
    })?;
    for (k, (mu, b)) in cols.iter().enumerate() {
        if sol[k].is_zero() {
            continue;
        }
        let s = market.tree.time(*mu);
        let cur = legs[s].get_mut(mu).unwrap();
        *cur = add_vec(cur, &scale_vec(&sol[k], b));
    }
    Ok(())
}
