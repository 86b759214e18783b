//! Bottom-up attainability recursions over subtrees.
//!
//! The decomposition machinery repeatedly asks, per node, which constant
//! positions a trader can reach using only trades inside that node's
//! subtree. Both variants here return exact polyhedral cones: plain
//! sections in R^d, and sections relative to a scaled target claim in
//! R^{d+1} (last coordinate = the scale).

use std::collections::BTreeMap;

use crate::dd::{DdCone, DdError};
use crate::market::{Claim, Market};
use crate::rational::{neg_vec, Rational};
use num_traits::One;

/// Cones of constant positions attainable inside subtrees.
#[derive(Debug, Clone)]
pub struct SectionCones {
    /// node -> {x : x·1 over the node's leaves is attainable trading at the
    /// node and below}
    pub from_node: BTreeMap<usize, DdCone>,
    /// node -> {x : x·1 attainable trading strictly below the node};
    /// the zero cone at terminal nodes
    pub after_node: BTreeMap<usize, DdCone>,
}

/// `from_node(μ) = K(μ) + ⋂_children from_node(c)`, with `from_node(leaf) =
/// K(leaf)`; `after_node` drops the node's own cone from that sum.
pub fn section_cones(market: &Market) -> Result<SectionCones, DdError> {
    let d = market.dim;
    let mut from_node = BTreeMap::new();
    let mut after_node = BTreeMap::new();
    for t in (0..=market.tree.horizon).rev() {
        for node in market.tree.nodes_at(t) {
            let own = DdCone::from_generators(d, market.node_generators(node), &[])?;
            let children = market.tree.children(node);
            if children.is_empty() {
                after_node.insert(node, DdCone::zero(d));
                from_node.insert(node, own);
                continue;
            }
            let mut after: Option<DdCone> = None;
            for &c in children {
                let rc: &DdCone = &from_node[&c];
                after = Some(match after {
                    None => rc.clone(),
                    Some(acc) => acc.intersect(rc)?,
                });
            }
            let after = after.unwrap();
            from_node.insert(node, own.minkowski_sum(&after)?);
            after_node.insert(node, after);
        }
    }
    Ok(SectionCones {
        from_node,
        after_node,
    })
}

/// Same recursions in R^{d+1}: `(x, c)` lies in the cone at μ iff the claim
/// `c·target − x·1`, restricted to μ's subtree, is attainable trading at μ
/// and below (`from_node`), or strictly below (`after_node`; at a terminal
/// node that leaves the single ray `(target(leaf), 1)`).
#[derive(Debug, Clone)]
pub struct ScaledSectionCones {
    pub from_node: BTreeMap<usize, DdCone>,
    pub after_node: BTreeMap<usize, DdCone>,
}

pub fn scaled_section_cones(
    market: &Market,
    target: &Claim,
) -> Result<ScaledSectionCones, DdError> {
    let d = market.dim;
    let mut from_node = BTreeMap::new();
    let mut after_node = BTreeMap::new();
    for t in (0..=market.tree.horizon).rev() {
        for node in market.tree.nodes_at(t) {
            let own: Vec<Vec<Rational>> = market
                .node_generators(node)
                .iter()
                .map(|g| extend(&neg_vec(g), None))
                .collect();
            let children = market.tree.children(node);
            let after = if children.is_empty() {
                DdCone::from_generators(
                    d + 1,
                    &[extend(target.value(node), Some(Rational::one()))],
                    &[],
                )?
            } else {
                let mut acc: Option<DdCone> = None;
                for &c in children {
                    let fc: &DdCone = &from_node[&c];
                    acc = Some(match acc {
                        None => fc.clone(),
                        Some(a) => a.intersect(fc)?,
                    });
                }
                acc.unwrap()
            };
            let own_cone = DdCone::from_generators(d + 1, &own, &[])?;
            from_node.insert(node, after.minkowski_sum(&own_cone)?);
            after_node.insert(node, after);
        }
    }
    Ok(ScaledSectionCones {
        from_node,
        after_node,
    })
}

fn extend(v: &[Rational], last: Option<Rational>) -> Vec<Rational> {
    let mut out = v.to_vec();
    out.push(last.unwrap_or_default());
    out
}
