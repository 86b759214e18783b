//! Finite filtered markets: scenario trees, bid-ask processes, per-node
//! trading cones, claims, scenario (de)serialization, and the randomized
//! product-market extension.

use crate::rational::{
    display_rational, format_rational, neg_vec, parse_rational, pow2_neg, q, scale_vec,
    sub_vec, Rational,
};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum MarketError {
    #[error("scenario document: {0}")]
    Schema(String),
    #[error("{0}")]
    Validation(String),
    #[error("node budget exceeded: {requested} nodes requested, {allowed} allowed")]
    NodeBudget { requested: usize, allowed: usize },
}

fn invalid(msg: impl Into<String>) -> MarketError {
    MarketError::Validation(msg.into())
}

// ---------------------------------------------------------------------------
// Scenario tree
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: usize,
    pub time: usize,
    pub parent: Option<usize>,
    /// Unconditional probability of reaching this node.
    pub prob: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiltrationTree {
    pub horizon: usize,
    pub nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
    leaves: Vec<usize>,
}

impl FiltrationTree {
    pub fn new(horizon: usize, mut nodes: Vec<TreeNode>) -> Result<Self, MarketError> {
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(invalid(format!(
                    "node ids must be dense integers 0..{}, found {}",
                    nodes.len(),
                    n.id
                )));
            }
        }
        let mut children = vec![Vec::new(); nodes.len()];
        let mut roots = 0usize;
        for n in &nodes {
            if !n.prob.is_positive() {
                return Err(invalid(format!(
                    "probability of node {} must be strictly positive",
                    n.id
                )));
            }
            match n.parent {
                None => {
                    roots += 1;
                    if n.time != 0 {
                        return Err(invalid(format!("root node {} not at time 0", n.id)));
                    }
                    if !n.prob.is_one() {
                        return Err(invalid(format!(
                            "root probability is {}, expected 1",
                            display_rational(&n.prob)
                        )));
                    }
                }
                Some(p) => {
                    let parent = nodes.get(p).ok_or_else(|| {
                        invalid(format!("node {} references unknown parent {}", n.id, p))
                    })?;
                    if parent.time + 1 != n.time {
                        return Err(invalid(format!(
                            "node {} at time {} has parent at time {}",
                            n.id, n.time, parent.time
                        )));
                    }
                    children[p].push(n.id);
                }
            }
        }
        if roots != 1 {
            return Err(invalid(format!("expected exactly one root, found {roots}")));
        }
        let mut leaves = Vec::new();
        for n in &nodes {
            if children[n.id].is_empty() {
                if n.time != horizon {
                    return Err(invalid(format!(
                        "node {} has no children but sits at time {} < horizon {}",
                        n.id, n.time, horizon
                    )));
                }
                leaves.push(n.id);
            } else {
                if n.time >= horizon {
                    return Err(invalid(format!(
                        "node {} at time {} >= horizon {} has children",
                        n.id, n.time, horizon
                    )));
                }
                let sum: Rational = children[n.id]
                    .iter()
                    .fold(Rational::zero(), |acc, &c| acc + &nodes[c].prob);
                if sum != n.prob {
                    return Err(invalid(format!(
                        "children of node {} sum to {}, expected {}",
                        n.id,
                        display_rational(&sum),
                        display_rational(&n.prob)
                    )));
                }
            }
        }
        Ok(FiltrationTree {
            horizon,
            nodes,
            children,
            leaves,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn prob(&self, id: usize) -> &Rational {
        &self.nodes[id].prob
    }

    pub fn time(&self, id: usize) -> usize {
        self.nodes[id].time
    }

    /// Leaves in canonical (ascending id) order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Position of a leaf node in the canonical leaf enumeration.
    pub fn leaf_index(&self, id: usize) -> Option<usize> {
        self.leaves.binary_search(&id).ok()
    }

    pub fn nodes_at(&self, t: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.time == t)
            .map(|n| n.id)
            .collect()
    }

    pub fn subtree_leaves(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(v) = stack.pop() {
            if self.children[v].is_empty() {
                out.push(v);
            } else {
                stack.extend(self.children[v].iter().copied());
            }
        }
        out.sort_unstable();
        out
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn root(&self) -> usize {
        self.nodes.iter().find(|n| n.parent.is_none()).unwrap().id
    }
}

// ---------------------------------------------------------------------------
// Bid-ask process
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BidAskProcess {
    /// node id -> d×d matrix; entry (i,j) is how many units of asset i buy
    /// one unit of asset j.
    pub matrices: BTreeMap<usize, Vec<Vec<Rational>>>,
}

impl BidAskProcess {
    pub fn validate(&self, tree: &FiltrationTree, dim: usize) -> Result<(), MarketError> {
        for n in &tree.nodes {
            let m = self.matrices.get(&n.id).ok_or_else(|| {
                invalid(format!("missing bid-ask matrix at node {}", n.id))
            })?;
            if m.len() != dim || m.iter().any(|row| row.len() != dim) {
                return Err(invalid(format!(
                    "bid-ask matrix at node {} is not {dim}×{dim}",
                    n.id
                )));
            }
            for (i, row) in m.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    if i == j && !v.is_one() {
                        return Err(invalid(format!(
                            "π^{{{a},{a}}} = {v} at node {id} violates π^{{i,i}} = 1",
                            a = i + 1,
                            v = display_rational(v),
                            id = n.id
                        )));
                    }
                    if !v.is_positive() {
                        return Err(invalid(format!(
                            "π^{{{},{}}} must be positive at node {}",
                            i + 1,
                            j + 1,
                            n.id
                        )));
                    }
                }
            }
            check_netting(m, dim, n.id)?;
        }
        Ok(())
    }

    /// Replaces every rate by the cheapest chain of exchanges realizing it
    /// (min-product closure). Fails if some exchange cycle multiplies wealth.
    pub fn repair_netting(&mut self, dim: usize) -> Result<(), MarketError> {
        for (node, m) in self.matrices.iter_mut() {
            for k in 0..dim {
                for i in 0..dim {
                    for j in 0..dim {
                        let via = &m[i][k] * &m[k][j];
                        if via < m[i][j] {
                            m[i][j] = via;
                        }
                    }
                }
            }
            for i in 0..dim {
                if m[i][i] < Rational::one() {
                    return Err(invalid(format!(
                        "exchange cycle through asset {} at node {} multiplies wealth; \
                         cannot repair netting",
                        i + 1,
                        node
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Chains of up to `dim` exchanges must never beat the direct rate.
fn check_netting(m: &[Vec<Rational>], dim: usize, node: usize) -> Result<(), MarketError> {
    // enumerate chains i0 → i1 → … → in, n ∈ {2..dim}, vertices may repeat
    let mut chain = vec![0usize; dim + 1];
    for edges in 2..=dim {
        let mut idx = vec![0usize; edges + 1];
        loop {
            chain[..=edges].copy_from_slice(&idx[..=edges]);
            let mut product = Rational::one();
            for w in 0..edges {
                product *= &m[chain[w]][chain[w + 1]];
            }
            if m[chain[0]][chain[edges]] > product {
                let pretty: Vec<String> =
                    chain[..=edges].iter().map(|i| (i + 1).to_string()).collect();
                return Err(invalid(format!(
                    "netting violated for chain {} at node {}: π^{{{},{}}} = {} > {}",
                    pretty.join("→"),
                    node,
                    chain[0] + 1,
                    chain[edges] + 1,
                    display_rational(&m[chain[0]][chain[edges]]),
                    display_rational(&product)
                )));
            }
            // odometer over {0..dim-1}^{edges+1}
            let mut p = 0;
            loop {
                idx[p] += 1;
                if idx[p] < dim {
                    break;
                }
                idx[p] = 0;
                p += 1;
                if p > edges {
                    break;
                }
            }
            if p > edges {
                break;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Trading cones
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingConeField {
    pub dim: usize,
    /// node id -> generator list (order is part of the representation)
    pub generators: BTreeMap<usize, Vec<Vec<Rational>>>,
}

impl TradingConeField {
    pub fn node_generators(&self, node: usize) -> &[Vec<Rational>] {
        &self.generators[&node]
    }
}

/// Per-node generators `{e_j − π^{i,j} e_i : i ≠ j}` in lexicographic (i,j)
/// order, followed by `−e_1 … −e_d`.
pub fn build_trading_cones(
    tree: &FiltrationTree,
    bidask: &BidAskProcess,
    dim: usize,
) -> TradingConeField {
    let mut generators = BTreeMap::new();
    for n in &tree.nodes {
        let m = &bidask.matrices[&n.id];
        let mut gens = Vec::with_capacity(dim * (dim - 1) + dim);
        for i in 0..dim {
            for j in 0..dim {
                if i == j {
                    continue;
                }
                let mut g = vec![Rational::zero(); dim];
                g[j] = Rational::one();
                g[i] = -m[i][j].clone();
                gens.push(g);
            }
        }
        for k in 0..dim {
            let mut g = vec![Rational::zero(); dim];
            g[k] = -Rational::one();
            gens.push(g);
        }
        generators.insert(n.id, gens);
    }
    TradingConeField { dim, generators }
}

// ---------------------------------------------------------------------------
// Claims
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub dim: usize,
    /// leaf node id -> payoff vector
    pub values: BTreeMap<usize, Vec<Rational>>,
}

impl Claim {
    pub fn zero(tree: &FiltrationTree, dim: usize) -> Self {
        let values = tree
            .leaves()
            .iter()
            .map(|&l| (l, vec![Rational::zero(); dim]))
            .collect();
        Claim { dim, values }
    }

    pub fn validate(&self, tree: &FiltrationTree, name: &str) -> Result<(), MarketError> {
        for &l in tree.leaves() {
            let v = self.values.get(&l).ok_or_else(|| {
                invalid(format!("claim \"{name}\" missing leaf {l}"))
            })?;
            if v.len() != self.dim {
                return Err(invalid(format!(
                    "claim \"{name}\" at leaf {l} has dimension {}, expected {}",
                    v.len(),
                    self.dim
                )));
            }
        }
        for &l in self.values.keys() {
            if tree.leaf_index(l).is_none() {
                return Err(invalid(format!(
                    "claim \"{name}\" defined on non-leaf node {l}"
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, leaf: usize) -> &[Rational] {
        &self.values[&leaf]
    }

    /// Flat vector in claim space: coordinates grouped by canonical leaf
    /// order, `d` asset entries per leaf.
    pub fn flatten(&self, tree: &FiltrationTree) -> Vec<Rational> {
        let mut out = Vec::with_capacity(tree.num_leaves() * self.dim);
        for &l in tree.leaves() {
            out.extend(self.values[&l].iter().cloned());
        }
        out
    }

    pub fn from_flat(tree: &FiltrationTree, dim: usize, flat: &[Rational]) -> Self {
        assert_eq!(flat.len(), tree.num_leaves() * dim);
        let values = tree
            .leaves()
            .iter()
            .enumerate()
            .map(|(k, &l)| (l, flat[k * dim..(k + 1) * dim].to_vec()))
            .collect();
        Claim { dim, values }
    }
}

// ---------------------------------------------------------------------------
// Market
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Market {
    pub dim: usize,
    pub tree: FiltrationTree,
    /// Present when cones were built from bid-ask data; hand-built generator
    /// markets carry `None`.
    pub bidask: Option<BidAskProcess>,
    pub cones: TradingConeField,
    pub claims: BTreeMap<String, Claim>,
}

impl Market {
    pub fn from_bidask(
        dim: usize,
        tree: FiltrationTree,
        bidask: BidAskProcess,
        claims: BTreeMap<String, Claim>,
    ) -> Result<Self, MarketError> {
        bidask.validate(&tree, dim)?;
        for (name, c) in &claims {
            c.validate(&tree, name)?;
        }
        let cones = build_trading_cones(&tree, &bidask, dim);
        Ok(Market {
            dim,
            tree,
            bidask: Some(bidask),
            cones,
            claims,
        })
    }

    pub fn from_generators(
        dim: usize,
        tree: FiltrationTree,
        generators: BTreeMap<usize, Vec<Vec<Rational>>>,
        claims: BTreeMap<String, Claim>,
    ) -> Result<Self, MarketError> {
        for n in &tree.nodes {
            let gens = generators.get(&n.id).ok_or_else(|| {
                invalid(format!("missing generator list at node {}", n.id))
            })?;
            if gens.is_empty() {
                return Err(invalid(format!("empty generator list at node {}", n.id)));
            }
            for g in gens {
                if g.len() != dim {
                    return Err(invalid(format!(
                        "generator at node {} has dimension {}, expected {dim}",
                        n.id,
                        g.len()
                    )));
                }
            }
        }
        for (name, c) in &claims {
            c.validate(&tree, name)?;
        }
        Ok(Market {
            dim,
            tree,
            bidask: None,
            cones: TradingConeField { dim, generators },
            claims,
        })
    }

    pub fn node_generators(&self, node: usize) -> &[Vec<Rational>] {
        self.cones.node_generators(node)
    }
}

// ---------------------------------------------------------------------------
// Scenario documents
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: usize,
    time: usize,
    parent: Option<usize>,
    prob: String,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    assets: usize,
    horizon: usize,
    nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bidask: Option<BTreeMap<String, Vec<Vec<String>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generators: Option<BTreeMap<String, Vec<Vec<String>>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    claims: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

fn parse_vec(v: &[String], what: &str) -> Result<Vec<Rational>, MarketError> {
    v.iter()
        .map(|s| {
            parse_rational(s).map_err(|e| MarketError::Schema(format!("{what}: {e}")))
        })
        .collect()
}

fn parse_node_key(k: &str) -> Result<usize, MarketError> {
    k.parse::<usize>()
        .map_err(|_| MarketError::Schema(format!("node key \"{k}\" is not an integer")))
}

/// Parses, validates and assembles a market from a scenario document.
/// With `repair_netting` the bid-ask matrices are replaced by their
/// min-product closure before validation instead of being rejected.
pub fn load_scenario(text: &str, repair_netting: bool) -> Result<Market, MarketError> {
    let doc: ScenarioDoc =
        serde_json::from_str(text).map_err(|e| MarketError::Schema(e.to_string()))?;
    if doc.assets == 0 {
        return Err(MarketError::Schema("assets must be at least 1".into()));
    }
    let nodes = doc
        .nodes
        .iter()
        .map(|n| {
            Ok(TreeNode {
                id: n.id,
                time: n.time,
                parent: n.parent,
                prob: parse_rational(&n.prob)
                    .map_err(|e| MarketError::Schema(format!("node {} prob: {e}", n.id)))?,
            })
        })
        .collect::<Result<Vec<_>, MarketError>>()?;
    let tree = FiltrationTree::new(doc.horizon, nodes)?;

    let mut claims = BTreeMap::new();
    for (name, per_leaf) in &doc.claims {
        let mut values = BTreeMap::new();
        for (k, v) in per_leaf {
            values.insert(
                parse_node_key(k)?,
                parse_vec(v, &format!("claim \"{name}\""))?,
            );
        }
        claims.insert(
            name.clone(),
            Claim {
                dim: doc.assets,
                values,
            },
        );
    }

    match (&doc.bidask, &doc.generators) {
        (Some(_), Some(_)) => Err(MarketError::Schema(
            "scenario carries both bidask and generators; exactly one is allowed".into(),
        )),
        (None, None) => Err(MarketError::Schema(
            "scenario carries neither bidask nor generators".into(),
        )),
        (Some(b), None) => {
            let mut matrices = BTreeMap::new();
            for (k, rows) in b {
                let id = parse_node_key(k)?;
                let m = rows
                    .iter()
                    .map(|r| parse_vec(r, &format!("bidask at node {id}")))
                    .collect::<Result<Vec<_>, _>>()?;
                matrices.insert(id, m);
            }
            let mut bidask = BidAskProcess { matrices };
            if repair_netting {
                bidask.repair_netting(doc.assets)?;
            }
            Market::from_bidask(doc.assets, tree, bidask, claims)
        }
        (None, Some(g)) => {
            let mut generators = BTreeMap::new();
            for (k, gens) in g {
                let id = parse_node_key(k)?;
                let list = gens
                    .iter()
                    .map(|v| parse_vec(v, &format!("generator at node {id}")))
                    .collect::<Result<Vec<_>, _>>()?;
                generators.insert(id, list);
            }
            Market::from_generators(doc.assets, tree, generators, claims)
        }
    }
}

pub fn save_scenario(market: &Market) -> String {
    let nodes = market
        .tree
        .nodes
        .iter()
        .map(|n| NodeDoc {
            id: n.id,
            time: n.time,
            parent: n.parent,
            prob: format_rational(&n.prob),
        })
        .collect();
    let fmt_vec = |v: &[Rational]| v.iter().map(format_rational).collect::<Vec<String>>();
    let (bidask, generators) = match &market.bidask {
        Some(b) => (
            Some(
                b.matrices
                    .iter()
                    .map(|(id, m)| (id.to_string(), m.iter().map(|r| fmt_vec(r)).collect()))
                    .collect(),
            ),
            None,
        ),
        None => (
            None,
            Some(
                market
                    .cones
                    .generators
                    .iter()
                    .map(|(id, g)| (id.to_string(), g.iter().map(|v| fmt_vec(v)).collect()))
                    .collect(),
            ),
        ),
    };
    let claims = market
        .claims
        .iter()
        .map(|(name, c)| {
            (
                name.clone(),
                c.values
                    .iter()
                    .map(|(l, v)| (l.to_string(), fmt_vec(v)))
                    .collect(),
            )
        })
        .collect();
    let doc = ScenarioDoc {
        assets: market.dim,
        horizon: market.tree.horizon,
        nodes,
        bidask,
        generators,
        claims,
    };
    serde_json::to_string_pretty(&doc).expect("scenario serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Two-asset geometric example family
// ---------------------------------------------------------------------------

/// One-period two-asset market over states ω ∈ {1..n_states} with weights
/// proportional to 2^{−ω}. Asset 2 trades one-for-one at time 0 with a steep
/// buy-back rate `k`; at time 1 the roles tighten to rates (k, 2). Carries
/// the claim "theta": buy one unit of asset 2 at time 0, sell 1/ω of it back
/// at time 1 for 1/(2ω) units of asset 1.
pub fn geometric_two_asset_market(k: &Rational, n_states: usize) -> Market {
    assert!(n_states >= 1);
    assert!(*k >= q(2), "buy-back rate must make the spread genuine");
    let norm = Rational::one() - pow2_neg(n_states as u32);
    let mut nodes = vec![TreeNode {
        id: 0,
        time: 0,
        parent: None,
        prob: Rational::one(),
    }];
    for w in 1..=n_states {
        nodes.push(TreeNode {
            id: w,
            time: 1,
            parent: Some(0),
            prob: pow2_neg(w as u32) / &norm,
        });
    }
    let tree = FiltrationTree::new(1, nodes).expect("family tree is valid by construction");

    let mut matrices = BTreeMap::new();
    matrices.insert(
        0,
        vec![
            vec![Rational::one(), Rational::one()],
            vec![k.clone(), Rational::one()],
        ],
    );
    for w in 1..=n_states {
        matrices.insert(
            w,
            vec![
                vec![Rational::one(), k.clone()],
                vec![q(2), Rational::one()],
            ],
        );
    }
    let bidask = BidAskProcess { matrices };

    // θ(ω) = (1 − 1/ω) e₂ − (1 − 1/(2ω)) e₁
    let mut theta = BTreeMap::new();
    for w in 1..=n_states {
        let inv = Rational::one() / q(w as i64);
        theta.insert(
            w,
            vec![
                -(Rational::one() - &inv / q(2)),
                Rational::one() - &inv,
            ],
        );
    }
    let mut claims = BTreeMap::new();
    claims.insert(
        "theta".to_string(),
        Claim {
            dim: 2,
            values: theta,
        },
    );

    Market::from_bidask(2, tree, bidask, claims).expect("family market is valid by construction")
}

// ---------------------------------------------------------------------------
// Randomized product market
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RandomizedMarket {
    /// The product market; claims of the base market are lifted by
    /// composition with the projection.
    pub market: Market,
    pub branching: usize,
    /// product node id -> base node id
    pub base_node: Vec<usize>,
    /// product node id -> its own randomization coordinate (None at root)
    pub branch_index: Vec<Option<usize>>,
}

pub const DEFAULT_NODE_BUDGET: usize = 50_000;

/// Independently at every period, splits each branch into `branching`
/// sub-branches carrying truncated-geometric weights 2^{−k}/(1−2^{−M}).
pub fn randomize_market(
    base: &Market,
    branching: usize,
    node_budget: usize,
) -> Result<RandomizedMarket, MarketError> {
    assert!(branching >= 1);
    let t_count = base.tree.horizon as u32;
    let requested = estimate_product_nodes(base, branching);
    if requested > node_budget {
        return Err(MarketError::NodeBudget {
            requested,
            allowed: node_budget,
        });
    }
    let _ = t_count;

    let weight_norm = Rational::one() - pow2_neg(branching as u32);
    let weight = |k: usize| pow2_neg(k as u32) / &weight_norm;

    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut base_node: Vec<usize> = Vec::new();
    let mut branch_index: Vec<Option<usize>> = Vec::new();
    let root = base.tree.root();
    nodes.push(TreeNode {
        id: 0,
        time: 0,
        parent: None,
        prob: Rational::one(),
    });
    base_node.push(root);
    branch_index.push(None);

    // breadth-first so product ids increase with time
    let mut frontier: Vec<usize> = vec![0];
    for _t in 0..base.tree.horizon {
        let mut next = Vec::new();
        for &pid in &frontier {
            let b = base_node[pid];
            let pprob = nodes[pid].prob.clone();
            let bprob = base.tree.prob(b).clone();
            for &bc in base.tree.children(b) {
                let ratio = base.tree.prob(bc) / &bprob;
                for k in 1..=branching {
                    let id = nodes.len();
                    nodes.push(TreeNode {
                        id,
                        time: nodes[pid].time + 1,
                        parent: Some(pid),
                        prob: &pprob * &ratio * weight(k),
                    });
                    base_node.push(bc);
                    branch_index.push(Some(k));
                    next.push(id);
                }
            }
        }
        frontier = next;
    }

    let tree = FiltrationTree::new(base.tree.horizon, nodes)?;

    let generators: BTreeMap<usize, Vec<Vec<Rational>>> = (0..tree.len())
        .map(|pid| (pid, base.node_generators(base_node[pid]).to_vec()))
        .collect();

    let mut claims = BTreeMap::new();
    let lift = |c: &Claim| -> Claim {
        let values = tree
            .leaves()
            .iter()
            .map(|&l| (l, c.values[&base_node[l]].clone()))
            .collect();
        Claim {
            dim: c.dim,
            values,
        }
    };
    for (name, c) in &base.claims {
        claims.insert(name.clone(), lift(c));
    }

    let market = Market::from_generators(base.dim, tree, generators, claims)?;
    Ok(RandomizedMarket {
        market,
        branching,
        base_node,
        branch_index,
    })
}

fn estimate_product_nodes(base: &Market, branching: usize) -> usize {
    let mut total = 1usize;
    let mut per_time = vec![0usize; base.tree.horizon + 1];
    for n in &base.tree.nodes {
        per_time[n.time] += 1;
    }
    let mut factor = 1usize;
    for t in 1..=base.tree.horizon {
        factor = factor.saturating_mul(branching);
        total = total.saturating_add(per_time[t].saturating_mul(factor));
    }
    total
}

impl RandomizedMarket {
    /// Lifts a claim of the base market through the projection.
    pub fn lift_claim(&self, base_claim: &Claim) -> Claim {
        let values = self
            .market
            .tree
            .leaves()
            .iter()
            .map(|&l| (l, base_claim.values[&self.base_node[l]].clone()))
            .collect();
        Claim {
            dim: base_claim.dim,
            values,
        }
    }

    /// Time-t product nodes whose own randomization coordinate is ≤ n.
    pub fn truncation_set(&self, t: usize, n: usize) -> Vec<usize> {
        assert!(t >= 1 && t <= self.market.tree.horizon);
        self.market
            .tree
            .nodes_at(t)
            .into_iter()
            .filter(|&id| self.branch_index[id].unwrap() <= n)
            .collect()
    }

    /// P((G^n_t)^c) — identical for every t by construction.
    pub fn tail_probability(&self, n: usize) -> Rational {
        assert!(n >= 1 && n <= self.branching);
        (pow2_neg(n as u32) - pow2_neg(self.branching as u32))
            / (Rational::one() - pow2_neg(self.branching as u32))
    }
}

// Convenience used by tests and examples.
pub fn unit_vector(dim: usize, i: usize) -> Vec<Rational> {
    let mut v = vec![Rational::zero(); dim];
    v[i] = Rational::one();
    v
}

pub fn exchange_generator(dim: usize, i: usize, j: usize, rate: &Rational) -> Vec<Rational> {
    let mut g = vec![Rational::zero(); dim];
    g[j] = Rational::one();
    g[i] = -rate.clone();
    g
}

pub fn claim_constant(tree: &FiltrationTree, v: &[Rational]) -> Claim {
    let values = tree.leaves().iter().map(|&l| (l, v.to_vec())).collect();
    Claim {
        dim: v.len(),
        values,
    }
}

pub fn claim_sub(a: &Claim, b: &Claim) -> Claim {
    let values = a
        .values
        .iter()
        .map(|(l, v)| (*l, sub_vec(v, &b.values[l])))
        .collect();
    Claim {
        dim: a.dim,
        values,
    }
}

pub fn claim_neg(a: &Claim) -> Claim {
    let values = a.values.iter().map(|(l, v)| (*l, neg_vec(v))).collect();
    Claim {
        dim: a.dim,
        values,
    }
}

pub fn claim_scale(a: &Claim, s: &Rational) -> Claim {
    let values = a
        .values
        .iter()
        .map(|(l, v)| (*l, scale_vec(s, v)))
        .collect();
    Claim {
        dim: a.dim,
        values,
    }
}
