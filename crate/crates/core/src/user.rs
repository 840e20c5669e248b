//! The generative user model: a tree-shaped Bayesian network over 0/1
//! relevance values, plus finite mixtures and explicit joint tables.
//!
//! A [`TreeNetwork`] draws the root's bit with expectation `μ(root)` and then
//! walks down the tree; each child copies its parent's bit `b`, except that it
//! flips with probability `q_b(child)`. The flip probabilities are derived
//! from a [`MeanFunction`] so that every node's marginal equals its mean:
//!
//! ```text
//! μ(u) = (1 - μ(v)) q0(u) + μ(v) (1 - q1(u))        v = parent(u)
//! q0(u) + q1(u) <= D(u, v) / μ(v)
//! ```
//!
//! The second line is the smallness condition; `D(u, v)` is the tree's
//! [`edge_length`](DocTree::edge_length).

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tree::{DocTree, NodeId};

const CONSTRAINT_TOL: f64 = 1e-12;

/// Per-node mean relevance `μ`, indexed by node id.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFunction {
    values: Vec<f64>,
}

impl MeanFunction {
    pub fn new(values: Vec<f64>) -> Self {
        MeanFunction { values }
    }

    pub fn get(&self, v: NodeId) -> f64 {
        self.values[v.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest leaf mean.
    pub fn floor(&self, tree: &DocTree) -> f64 {
        tree.leaves().iter().map(|&x| self.get(x)).fold(f64::INFINITY, f64::min)
    }
}

/// A sampled user: one relevance bit per tree node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelevanceVector {
    bits: Vec<bool>,
}

impl RelevanceVector {
    pub fn new(bits: Vec<bool>) -> Self {
        RelevanceVector { bits }
    }

    pub fn get(&self, v: NodeId) -> bool {
        self.bits[v.index()]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Flip probabilities `(q0, q1)` that move a parent mean to a child mean.
///
/// Decreasing means only flip 1 -> 0; increasing means only flip 0 -> 1.
pub fn mutation_probabilities(mu_parent: f64, mu_child: f64) -> Result<(f64, f64)> {
    let ok = |m: f64| (0.0..=1.0).contains(&m);
    if !ok(mu_parent) || !ok(mu_child) {
        return Err(Error::Domain(format!(
            "means must lie in [0, 1]: parent {mu_parent}, child {mu_child}"
        )));
    }
    if mu_parent == mu_child {
        Ok((0.0, 0.0))
    } else if mu_parent > mu_child {
        Ok((0.0, (mu_parent - mu_child) / mu_parent))
    } else {
        Ok(((mu_child - mu_parent) / (1.0 - mu_parent), 0.0))
    }
}

/// Extends leaf means (indexed by leaf position) to every node by averaging
/// children bottom-up.
pub fn extend_by_average(tree: &DocTree, leaf_means: &[f64]) -> Result<MeanFunction> {
    check_leaf_count(tree, leaf_means)?;
    let mut values = vec![0.0; tree.len()];
    for (&x, &m) in tree.leaves().iter().zip(leaf_means) {
        values[x.index()] = m;
    }
    for &v in tree.preorder().iter().rev() {
        let ch = tree.children(v);
        if !ch.is_empty() {
            values[v.index()] = ch.iter().map(|c| values[c.index()]).sum::<f64>() / ch.len() as f64;
        }
    }
    Ok(MeanFunction { values })
}

/// Extends leaf means to internal nodes keeping every parent-child pair
/// Lipschitz under [`DocTree::edge_length`], with values clamped to the range
/// of the leaf means.
pub fn extend_by_interval(tree: &DocTree, leaf_means: &[f64]) -> Result<MeanFunction> {
    check_leaf_count(tree, leaf_means)?;
    let lo = leaf_means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = leaf_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    extend_by_interval_in(tree, leaf_means, lo, hi)
}

/// As [`extend_by_interval`], with the target range `[lo, hi]` given.
///
/// Every internal node `x` must take a value in
/// `[max_z μ(z) - D(x,z), min_z μ(z) + D(x,z)]` over the leaves `z` below it.
/// Values are assigned root-down at the midpoint of what remains feasible
/// after intersecting with `[lo, hi]` and the parent's Lipschitz band.
pub fn extend_by_interval_in(tree: &DocTree, leaf_means: &[f64], lo: f64, hi: f64) -> Result<MeanFunction> {
    check_leaf_count(tree, leaf_means)?;
    if !(lo <= hi) {
        return Err(Error::param(format!("empty target range [{lo}, {hi}]")));
    }
    let n = tree.len();
    // (value, witness leaf) for the lower and upper envelopes
    let mut lower = vec![(f64::NEG_INFINITY, NodeId(0)); n];
    let mut upper = vec![(f64::INFINITY, NodeId(0)); n];
    for (&x, &m) in tree.leaves().iter().zip(leaf_means) {
        if !(lo - CONSTRAINT_TOL..=hi + CONSTRAINT_TOL).contains(&m) {
            return Err(Error::param(format!("leaf {x} mean {m} outside [{lo}, {hi}]")));
        }
        lower[x.index()] = (m, x);
        upper[x.index()] = (m, x);
    }
    for &v in tree.preorder().iter().rev() {
        for &c in tree.children(v) {
            let w = tree.edge_length(c);
            let (l, lw) = lower[c.index()];
            let (u, uw) = upper[c.index()];
            if l - w > lower[v.index()].0 {
                lower[v.index()] = (l - w, lw);
            }
            if u + w < upper[v.index()].0 {
                upper[v.index()] = (u + w, uw);
            }
        }
        let (l, z) = lower[v.index()];
        let (u, z2) = upper[v.index()];
        if l > u + CONSTRAINT_TOL {
            let m = |x: NodeId| leaf_means[tree.leaf_position(x).expect("witness is a leaf")];
            return Err(Error::NotLipschitz {
                x: z,
                y: z2,
                gap: (m(z) - m(z2)).abs(),
                distance: tree.path_distance(z, z2),
            });
        }
    }

    let mut values = vec![0.0; n];
    for &v in tree.preorder() {
        if tree.is_leaf(v) {
            values[v.index()] = leaf_means[tree.leaf_position(v).expect("leaf")];
            continue;
        }
        let mut a = lower[v.index()].0.max(lo);
        let mut b = upper[v.index()].0.min(hi);
        if let Some(p) = tree.parent(v) {
            let w = tree.edge_length(v);
            a = a.max(values[p.index()] - w);
            b = b.min(values[p.index()] + w);
        }
        if a > b + CONSTRAINT_TOL {
            return Err(Error::structural(format!("no feasible mean for node {v}: [{a}, {b}]")));
        }
        values[v.index()] = if a > b { a } else { 0.5 * (a + b) };
    }
    Ok(MeanFunction { values })
}

fn check_leaf_count(tree: &DocTree, leaf_means: &[f64]) -> Result<()> {
    if leaf_means.len() != tree.leaves().len() {
        return Err(Error::param(format!(
            "{} leaf means for {} leaves",
            leaf_means.len(),
            tree.leaves().len()
        )));
    }
    if let Some(m) = leaf_means.iter().find(|m| !m.is_finite()) {
        return Err(Error::param(format!("non-finite leaf mean {m}")));
    }
    Ok(())
}

/// Checks `|μ(x) - μ(y)| <= D(x, y)` over all leaf pairs, for the given metric.
pub fn check_leaf_lipschitz(tree: &DocTree, leaf_means: &[f64], metric: impl Fn(NodeId, NodeId) -> f64) -> Result<()> {
    let leaves = tree.leaves();
    for i in 0..leaves.len() {
        for j in i + 1..leaves.len() {
            let gap = (leaf_means[i] - leaf_means[j]).abs();
            let d = metric(leaves[i], leaves[j]);
            if gap > d + CONSTRAINT_TOL {
                return Err(Error::NotLipschitz {
                    x: leaves[i],
                    y: leaves[j],
                    gap,
                    distance: d,
                });
            }
        }
    }
    Ok(())
}

/// A validated Bayesian tree network.
#[derive(Clone, Debug)]
pub struct TreeNetwork {
    tree: Arc<DocTree>,
    mean: MeanFunction,
    q0: Vec<f64>,
    q1: Vec<f64>,
}

impl TreeNetwork {
    /// Derives flip probabilities from `mean` and validates the consistency
    /// and smallness constraints on every edge.
    pub fn new(tree: Arc<DocTree>, mean: MeanFunction) -> Result<Self> {
        if mean.values.len() != tree.len() {
            return Err(Error::param(format!(
                "{} means for {} nodes",
                mean.values.len(),
                tree.len()
            )));
        }
        let mut q0 = vec![0.0; tree.len()];
        let mut q1 = vec![0.0; tree.len()];
        let root_mean = mean.get(tree.root());
        if !(0.0..=1.0).contains(&root_mean) {
            return Err(Error::Domain(format!("root mean {root_mean}")));
        }
        for &u in &tree.preorder()[1..] {
            let v = tree.parent(u).expect("non-root");
            let (a, b) = mutation_probabilities(mean.get(v), mean.get(u))?;
            q0[u.index()] = a;
            q1[u.index()] = b;
        }
        Self::with_probabilities(tree, mean, q0, q1)
    }

    /// Builds a network from explicit flip tables, validating both constraints.
    pub fn with_probabilities(tree: Arc<DocTree>, mean: MeanFunction, q0: Vec<f64>, q1: Vec<f64>) -> Result<Self> {
        let net = TreeNetwork { tree, mean, q0, q1 };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let t = &self.tree;
        for &u in &t.preorder()[1..] {
            let v = t.parent(u).expect("non-root");
            let (mu, mv) = (self.mean.get(u), self.mean.get(v));
            let (a, b) = (self.q0[u.index()], self.q1[u.index()]);
            let edge = |reason: String| Error::EdgeConstraint {
                parent: v,
                child: u,
                reason,
            };
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(edge(format!("flip probabilities ({a}, {b}) outside [0, 1]")));
            }
            let implied = (1.0 - mv) * a + mv * (1.0 - b);
            if (implied - mu).abs() > CONSTRAINT_TOL {
                return Err(edge(format!("inconsistent: mean {mu} but flips imply {implied}")));
            }
            let d = t.edge_length(u);
            if mv > 0.0 && a + b > d / mv + CONSTRAINT_TOL {
                return Err(edge(format!(
                    "flips too large: q0 + q1 = {} > D/μ(parent) = {}",
                    a + b,
                    d / mv
                )));
            }
        }
        Ok(())
    }

    pub fn tree(&self) -> &Arc<DocTree> {
        &self.tree
    }

    pub fn mean(&self) -> &MeanFunction {
        &self.mean
    }

    pub fn q0(&self, v: NodeId) -> f64 {
        self.q0[v.index()]
    }

    pub fn q1(&self, v: NodeId) -> f64 {
        self.q1[v.index()]
    }

    /// Probability that `child` is 1 given its parent's bit.
    #[inline]
    pub fn p_one_given(&self, child: NodeId, parent_bit: bool) -> f64 {
        if parent_bit {
            1.0 - self.q1[child.index()]
        } else {
            self.q0[child.index()]
        }
    }

    /// `max(q0, q1) <= 1/2` on every edge.
    pub fn satisfies_weak_bound(&self) -> bool {
        self.tree.preorder()[1..]
            .iter()
            .all(|u| self.q0[u.index()] <= 0.5 && self.q1[u.index()] <= 0.5)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RelevanceVector {
        let t = &self.tree;
        let mut bits = vec![false; t.len()];
        bits[0] = rng.gen_bool(self.mean.get(t.root()).clamp(0.0, 1.0));
        for &u in &t.preorder()[1..] {
            let b = bits[t.parent(u).expect("non-root").index()];
            bits[u.index()] = rng.gen_bool(self.p_one_given(u, b));
        }
        RelevanceVector { bits }
    }

    /// Samples the bits of `targets` only, walking just the root paths that
    /// reach them. Same joint law as reading them off [`TreeNetwork::sample`].
    pub fn sample_nodes<R: Rng + ?Sized>(&self, targets: &[NodeId], rng: &mut R) -> Vec<bool> {
        let t = &self.tree;
        let mut known: Vec<(NodeId, bool)> = Vec::with_capacity(targets.len() * (t.max_depth() + 1));
        let root_bit = rng.gen_bool(self.mean.get(t.root()).clamp(0.0, 1.0));
        known.push((t.root(), root_bit));
        let lookup = |known: &[(NodeId, bool)], v: NodeId| known.iter().find(|(k, _)| *k == v).map(|&(_, b)| b);
        let mut path = Vec::new();
        targets
            .iter()
            .map(|&x| {
                path.clear();
                let mut v = x;
                let mut bit = loop {
                    if let Some(b) = lookup(&known, v) {
                        break b;
                    }
                    path.push(v);
                    v = t.parent(v).expect("root is known");
                };
                for &u in path.iter().rev() {
                    bit = rng.gen_bool(self.p_one_given(u, bit));
                    known.push((u, bit));
                }
                bit
            })
            .collect()
    }
}

/// An explicit distribution over leaf relevance vectors.
///
/// Internal nodes are relevant iff some leaf below them is.
#[derive(Clone, Debug)]
pub struct JointTable {
    tree: Arc<DocTree>,
    /// `(probability, bits by leaf position)`
    entries: Vec<(f64, Vec<bool>)>,
}

impl JointTable {
    pub fn new(tree: Arc<DocTree>, entries: Vec<(f64, Vec<bool>)>) -> Result<Self> {
        let n = tree.leaves().len();
        if let Some((_, bits)) = entries.iter().find(|(_, b)| b.len() != n) {
            return Err(Error::param(format!("entry has {} bits for {n} leaves", bits.len())));
        }
        if entries.iter().any(|(p, _)| !(*p >= 0.0)) {
            return Err(Error::param("negative probability in joint table"));
        }
        let total: f64 = entries.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::param(format!("joint table sums to {total}")));
        }
        Ok(JointTable { tree, entries })
    }

    /// Independent leaves with the given marginals.
    pub fn independent(tree: Arc<DocTree>, marginals: &[f64]) -> Result<Self> {
        let n = tree.leaves().len();
        if marginals.len() != n || n > 20 {
            return Err(Error::param(format!(
                "need one marginal per leaf (at most 20 leaves), got {} for {n}",
                marginals.len()
            )));
        }
        let entries = (0..1usize << n)
            .map(|mask| {
                let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                let p = bits
                    .iter()
                    .zip(marginals)
                    .map(|(&b, &m)| if b { m } else { 1.0 - m })
                    .product();
                (p, bits)
            })
            .collect();
        Self::new(tree, entries)
    }

    pub fn entries(&self) -> &[(f64, Vec<bool>)] {
        &self.entries
    }

    pub fn tree(&self) -> &Arc<DocTree> {
        &self.tree
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> &[bool] {
        let mut u: f64 = rng.gen();
        for (p, bits) in &self.entries {
            if u < *p {
                return bits;
            }
            u -= p;
        }
        &self.entries.last().expect("non-empty table").1
    }

    fn node_bit(&self, leaf_bits: &[bool], v: NodeId) -> bool {
        let t = &self.tree;
        t.leaves_under(v)
            .iter()
            .any(|&x| leaf_bits[t.leaf_position(x).expect("leaf")])
    }
}

/// A user distribution: one network, an explicit table, or a finite mixture.
#[derive(Clone, Debug)]
pub enum UserDistribution {
    Network(TreeNetwork),
    Table(JointTable),
    Mixture(Vec<(f64, UserDistribution)>),
}

impl UserDistribution {
    /// A mixture with positive weights summing to one, over a shared tree.
    pub fn mixture(components: Vec<(f64, UserDistribution)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::param("empty mixture"));
        }
        if components.iter().any(|(w, _)| !(*w > 0.0)) {
            return Err(Error::param("mixture weights must be positive"));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::param(format!("mixture weights sum to {total}")));
        }
        let tree = components[0].1.tree().clone();
        if components.iter().any(|(_, c)| !Arc::ptr_eq(c.tree(), &tree)) {
            return Err(Error::param("mixture components must share one tree"));
        }
        Ok(UserDistribution::Mixture(components))
    }

    pub fn tree(&self) -> &Arc<DocTree> {
        match self {
            UserDistribution::Network(n) => n.tree(),
            UserDistribution::Table(t) => t.tree(),
            UserDistribution::Mixture(c) => c[0].1.tree(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RelevanceVector {
        match self {
            UserDistribution::Network(n) => n.sample(rng),
            UserDistribution::Table(t) => {
                let leaf_bits = t.draw(rng).to_vec();
                let bits = t.tree.nodes().map(|v| t.node_bit(&leaf_bits, v)).collect();
                RelevanceVector { bits }
            }
            UserDistribution::Mixture(c) => pick(c, rng).sample(rng),
        }
    }

    /// Samples one user's bits at `targets` only.
    pub fn sample_nodes<R: Rng + ?Sized>(&self, targets: &[NodeId], rng: &mut R) -> Vec<bool> {
        match self {
            UserDistribution::Network(n) => n.sample_nodes(targets, rng),
            UserDistribution::Table(t) => {
                let leaf_bits = t.draw(rng);
                targets.iter().map(|&v| t.node_bit(leaf_bits, v)).collect()
            }
            UserDistribution::Mixture(c) => pick(c, rng).sample_nodes(targets, rng),
        }
    }
}

fn pick<'a, R: Rng + ?Sized>(components: &'a [(f64, UserDistribution)], rng: &mut R) -> &'a UserDistribution {
    let mut u: f64 = rng.gen();
    for (w, c) in components {
        if u < *w {
            return c;
        }
        u -= w;
    }
    &components.last().expect("non-empty mixture").1
}

/// Leaf means (by leaf position) peaked at the given documents:
/// `μ(x) = max(μ0, max_i (v_i - D(x, y_i)))`.
pub fn peaked_means(tree: &DocTree, peaks: &[(NodeId, f64)], mu0: f64) -> Result<Vec<f64>> {
    if !(mu0 > 0.0) {
        return Err(Error::param(format!("background mean must be positive, got {mu0}")));
    }
    if peaks.is_empty() {
        return Err(Error::param("at least one peak is required"));
    }
    for &(y, v) in peaks {
        tree.check(y)?;
        if !tree.is_leaf(y) {
            return Err(Error::param(format!("peak {y} is not a leaf")));
        }
        if !(v <= 0.5) {
            return Err(Error::param(format!("peak value {v} exceeds 1/2")));
        }
    }
    Ok(tree
        .leaves()
        .iter()
        .map(|&x| peaks.iter().map(|&(y, v)| v - tree.dist(x, y)).fold(mu0, f64::max))
        .collect())
}

/// Seats `n` customers by the Chinese Restaurant Process with concentration
/// `theta`; returns table sizes in opening order.
pub fn crp_tables<R: Rng + ?Sized>(n: usize, theta: f64, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::param("need at least one customer"));
    }
    if !(theta > 0.0) {
        return Err(Error::param(format!("theta must be positive, got {theta}")));
    }
    let mut tables: Vec<usize> = Vec::new();
    for seated in 0..n {
        let (p_new, _) = crp_seat_probabilities(&tables, theta);
        if rng.gen_bool(p_new) {
            tables.push(1);
            continue;
        }
        // existing table with probability proportional to its size
        let mut k = rng.gen_range(0..seated);
        let mut chosen = tables.len() - 1;
        for (i, &c) in tables.iter().enumerate() {
            if k < c {
                chosen = i;
                break;
            }
            k -= c;
        }
        tables[chosen] += 1;
    }
    Ok(tables)
}

/// Probability that the next customer opens a new table, and the
/// probability of joining each existing table.
pub fn crp_seat_probabilities(tables: &[usize], theta: f64) -> (f64, Vec<f64>) {
    let seated: usize = tables.iter().sum();
    let denom = seated as f64 + theta;
    (theta / denom, tables.iter().map(|&c| c as f64 / denom).collect())
}

/// Peak relevance for a table holding `count` of `n` customers:
/// `clamp(count / n, mu0 + 0.01, 1/2)`.
pub fn crp_peak_value(count: usize, n: usize, mu0: f64) -> f64 {
    (count as f64 / n as f64).clamp(mu0 + 0.01, 0.5)
}

/// Three independent documents with marginals `(1/2, 1/2, 1/3)`, all at
/// distance 1 from each other.
pub fn discussion3_instance() -> UserDistribution {
    let tree = Arc::new(metricless_tree(3).expect("valid star"));
    let table = JointTable::independent(tree, &[0.5, 0.5, 1.0 / 3.0]).expect("valid marginals");
    UserDistribution::Table(table)
}

/// A star with `n` leaves: distinct documents are at distance 1 and a
/// single document has width 1e-6, which stands in for the metric-less case.
pub fn metricless_tree(n: usize) -> Result<DocTree> {
    let mut parents = vec![None];
    parents.extend(std::iter::repeat_n(Some(0), n));
    DocTree::from_parents(&parents, 1e-6, 1.0, None)
}
