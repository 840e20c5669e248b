//! Exact checks of the user model's correlation guarantees on small random
//! instances.
//!
//! A family instance is a random edge-weighted tree with at most ten leaves,
//! leaf means in `[α, 1/2]` that are Lipschitz in the weighted path metric,
//! internal means from the interval extension, and flip probabilities from
//! the mean pairs. Every check enumerates all leaf pairs and all conditioning
//! sets up to a size bound and compares exact probabilities with the bound.

use std::sync::Arc;

use rand::Rng;

use crate::contextual::context_distance_by;
use crate::error::Result;
use crate::inference::{conditional_mean, discorrelation_prob};
use crate::tree::{DocTree, NodeId};
use crate::user::{extend_by_interval_in, MeanFunction, TreeNetwork, UserDistribution};

/// Slack allowed on every exact inequality.
pub const CHECK_TOL: f64 = 1e-9;

/// Shape of the random instance family.
#[derive(Clone, Copy, Debug)]
pub struct FamilyParams {
    pub max_leaves: usize,
    pub alpha: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    /// Largest conditioning set.
    pub max_set: usize,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            max_leaves: 10,
            alpha: 0.05,
            min_weight: 0.02,
            max_weight: 0.3,
            max_set: 3,
        }
    }
}

/// Pairwise distances between the leaves of a tree, indexed by leaf position.
#[derive(Clone, Debug)]
pub struct LeafMetric {
    leaves: Vec<NodeId>,
    pos: Vec<usize>,
    d: Vec<f64>,
}

impl LeafMetric {
    pub fn from_fn(tree: &DocTree, f: impl Fn(NodeId, NodeId) -> f64) -> Self {
        let leaves = tree.leaves().to_vec();
        let n = leaves.len();
        let mut pos = vec![usize::MAX; tree.len()];
        for (i, x) in leaves.iter().enumerate() {
            pos[x.index()] = i;
        }
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[i * n + j] = f(leaves[i], leaves[j]);
                }
            }
        }
        LeafMetric { leaves, pos, d }
    }

    /// Weighted path distance between leaves.
    pub fn path(tree: &DocTree) -> Self {
        Self::from_fn(tree, |x, y| tree.path_distance(x, y))
    }

    pub fn get(&self, x: NodeId, y: NodeId) -> f64 {
        let n = self.leaves.len();
        self.d[self.pos[x.index()] * n + self.pos[y.index()]]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Pointwise maximum of two metrics on the same leaves.
    pub fn max(&self, other: &LeafMetric) -> LeafMetric {
        LeafMetric {
            leaves: self.leaves.clone(),
            pos: self.pos.clone(),
            d: self.d.iter().zip(&other.d).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    /// Largest metric below this one that satisfies the triangle inequality.
    pub fn shortest_path_closure(&self) -> LeafMetric {
        let n = self.leaves.len();
        let mut d = self.d.clone();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i * n + k] + d[k * n + j];
                    if via < d[i * n + j] {
                        d[i * n + j] = via;
                    }
                }
            }
        }
        LeafMetric { d, ..self.clone() }
    }
}

/// One random family member.
#[derive(Clone, Debug)]
pub struct SmallInstance {
    pub tree: Arc<DocTree>,
    pub network: TreeNetwork,
    /// Smallest leaf mean.
    pub alpha: f64,
}

impl SmallInstance {
    pub fn distribution(&self) -> UserDistribution {
        UserDistribution::Network(self.network.clone())
    }

    pub fn leaf_means(&self) -> Vec<f64> {
        let m = self.network.mean();
        self.tree.leaves().iter().map(|&x| m.get(x)).collect()
    }

    /// `D_μ(x, y) = D(x, y) · min(1/α, 3/(μ(x) + μ(y)))` with `D` the path metric.
    pub fn d_mu(&self) -> LeafMetric {
        let m = self.network.mean();
        LeafMetric::from_fn(&self.tree, |x, y| {
            let scale = (1.0 / self.alpha).min(3.0 / (m.get(x) + m.get(y)));
            self.tree.path_distance(x, y) * scale
        })
    }

    /// A metric under which the instance is conditionally Lipschitz by the
    /// correlation bound: the shortest-path closure of `3 D_μ`.
    pub fn certified_metric(&self) -> LeafMetric {
        let d = self.d_mu();
        LeafMetric {
            d: d.d.iter().map(|v| 3.0 * v).collect(),
            ..d
        }
        .shortest_path_closure()
    }
}

/// A random rooted tree with 2 to `max_leaves` leaves and random edge
/// weights. Every internal node has at least two children.
pub fn random_weighted_tree<R: Rng + ?Sized>(
    rng: &mut R,
    max_leaves: usize,
    min_weight: f64,
    max_weight: f64,
) -> Result<DocTree> {
    let target = rng.gen_range(2..=max_leaves.max(2));
    // grow by splitting a random leaf into 2 or 3 children
    let mut parents: Vec<Option<usize>> = vec![None];
    let mut leaves = vec![0usize];
    while leaves.len() < target {
        let room = target - leaves.len() + 1;
        let fan = if room >= 3 { rng.gen_range(2..=3) } else { 2 };
        let at = rng.gen_range(0..leaves.len());
        let v = leaves.swap_remove(at);
        for _ in 0..fan {
            leaves.push(parents.len());
            parents.push(Some(v));
        }
    }
    let weights = (0..parents.len())
        .map(|v| {
            if v == 0 {
                0.0
            } else {
                rng.gen_range(min_weight..=max_weight)
            }
        })
        .collect();
    // the ε-exponential part is unused by the path metric; keep it valid
    DocTree::from_parents(&parents, 0.5, 1.0, Some(weights))
}

/// A random family member: leaf means take a clamped random walk down the
/// tree, stepping at most one edge weight per edge, then the internal means
/// are re-derived with the interval extension.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, p: &FamilyParams) -> Result<SmallInstance> {
    let tree = Arc::new(random_weighted_tree(rng, p.max_leaves, p.min_weight, p.max_weight)?);
    let leaf_means = random_leaf_means(rng, &tree, p.alpha);
    network_for(tree, &leaf_means, p.alpha)
}

/// Random leaf means on `tree`, Lipschitz in its path metric, in `[alpha, 1/2]`.
pub fn random_leaf_means<R: Rng + ?Sized>(rng: &mut R, tree: &DocTree, alpha: f64) -> Vec<f64> {
    let mut mu = vec![0.0; tree.len()];
    for &v in tree.preorder() {
        mu[v.index()] = match tree.parent(v) {
            None => rng.gen_range(alpha..=0.5),
            Some(p) => {
                let w = tree.edge_length(v);
                (mu[p.index()] + rng.gen_range(-w..=w)).clamp(alpha, 0.5)
            }
        };
    }
    tree.leaves().iter().map(|&x| mu[x.index()]).collect()
}

fn network_for(tree: Arc<DocTree>, leaf_means: &[f64], alpha: f64) -> Result<SmallInstance> {
    let mean: MeanFunction = extend_by_interval_in(&tree, leaf_means, alpha, 0.5)?;
    let network = TreeNetwork::new(tree.clone(), mean)?;
    let alpha = leaf_means.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SmallInstance { tree, network, alpha })
}

/// A second instance on the same tree with fresh leaf means.
pub fn sibling_instance<R: Rng + ?Sized>(rng: &mut R, base: &SmallInstance, p: &FamilyParams) -> Result<SmallInstance> {
    let leaf_means = random_leaf_means(rng, &base.tree, p.alpha);
    network_for(base.tree.clone(), &leaf_means, p.alpha)
}

/// All subsets of `items` with at most `max` elements, smallest first.
pub fn subsets_up_to(items: &[NodeId], max: usize) -> Vec<Vec<NodeId>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<(Vec<NodeId>, usize)> = vec![(Vec::new(), 0)];
    for _ in 0..max {
        let mut next = Vec::new();
        for (set, start) in &frontier {
            for (i, &x) in items.iter().enumerate().skip(*start) {
                let mut s = set.clone();
                s.push(x);
                out.push(s.clone());
                next.push((s, i + 1));
            }
        }
        frontier = next;
    }
    out
}

/// A single failed inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub x: NodeId,
    pub y: Option<NodeId>,
    pub set: Vec<NodeId>,
    pub other_set: Option<Vec<NodeId>>,
    pub value: f64,
    pub bound: f64,
}

/// Outcome of one check over one or more instances.
#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub checked: u64,
    pub violations: Vec<Violation>,
    /// Largest `value / bound` over checked cases with a positive bound.
    pub worst_ratio: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        self.violations.extend(other.violations);
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
    }

    fn observe(&mut self, value: f64, bound: f64, v: impl FnOnce() -> Violation) {
        self.checked += 1;
        if bound > 0.0 {
            self.worst_ratio = self.worst_ratio.max(value / bound);
        }
        if value > bound + CHECK_TOL {
            self.violations.push(v());
        }
    }
}

/// `Pr[π(x) != π(y) | Z_S] <= factor · D(x, y)` for all leaf pairs and sets.
pub fn check_correlation(
    dist: &UserDistribution,
    metric: &LeafMetric,
    factor: f64,
    max_set: usize,
) -> Result<CheckReport> {
    let leaves = metric.leaves();
    let mut report = CheckReport::default();
    for set in subsets_up_to(leaves, max_set) {
        for (i, &x) in leaves.iter().enumerate() {
            for &y in &leaves[i + 1..] {
                let value = discorrelation_prob(dist, x, y, &set)?;
                let bound = factor * metric.get(x, y);
                report.observe(value, bound, || Violation {
                    x,
                    y: Some(y),
                    set: set.clone(),
                    other_set: None,
                    value,
                    bound,
                });
            }
        }
    }
    Ok(report)
}

/// `|μ(x | Z_S) - μ(y | Z_S)| <= D(x, y)` for all leaf pairs and sets.
pub fn check_continuity(dist: &UserDistribution, metric: &LeafMetric, max_set: usize) -> Result<CheckReport> {
    let leaves = metric.leaves();
    let mut report = CheckReport::default();
    for set in subsets_up_to(leaves, max_set) {
        let means = leaves
            .iter()
            .map(|&x| conditional_mean(dist, x, &set))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..leaves.len() {
            for j in i + 1..leaves.len() {
                let value = (means[i] - means[j]).abs();
                let bound = metric.get(leaves[i], leaves[j]);
                report.observe(value, bound, || Violation {
                    x: leaves[i],
                    y: Some(leaves[j]),
                    set: set.clone(),
                    other_set: None,
                    value,
                    bound,
                });
            }
        }
    }
    Ok(report)
}

/// `|μ(x | Z_S) - μ(x | Z_S')| <= D̂(S, S')` for all documents and set pairs,
/// with `D̂` the context distance built on `metric`.
pub fn check_context_continuity(dist: &UserDistribution, metric: &LeafMetric, max_set: usize) -> Result<CheckReport> {
    let leaves = metric.leaves();
    let sets = subsets_up_to(leaves, max_set);
    let means = sets
        .iter()
        .map(|s| {
            leaves
                .iter()
                .map(|&x| conditional_mean(dist, x, s))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = CheckReport::default();
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            let bound = context_distance_by(&sets[a], &sets[b], |x, y| metric.get(x, y));
            for (i, &x) in leaves.iter().enumerate() {
                let value = (means[a][i] - means[b][i]).abs();
                report.observe(value, bound, || Violation {
                    x,
                    y: None,
                    set: sets[a].clone(),
                    other_set: Some(sets[b].clone()),
                    value,
                    bound,
                });
            }
        }
    }
    Ok(report)
}

/// Which metric the correlation and continuity checks measure distances with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckMetric {
    /// The weighted path metric the instance was built on.
    Path,
    /// The shortest-path closure of `3 D_μ`.
    Certified,
}

impl CheckMetric {
    pub fn of(self, inst: &SmallInstance) -> LeafMetric {
        match self {
            CheckMetric::Path => LeafMetric::path(&inst.tree),
            CheckMetric::Certified => inst.certified_metric(),
        }
    }
}

/// Results of the four suites over a family.
#[derive(Clone, Debug, Default)]
pub struct FamilyReport {
    pub instances: usize,
    pub scaled_correlation: CheckReport,
    pub correlation: CheckReport,
    pub context_continuity: CheckReport,
    pub mixture_continuity: CheckReport,
    /// Mixtures skipped because a component is not itself Lipschitz under
    /// the chosen metric.
    pub mixtures_skipped: usize,
}

impl FamilyReport {
    pub fn passed(&self) -> bool {
        self.scaled_correlation.passed()
            && self.correlation.passed()
            && self.context_continuity.passed()
            && self.mixture_continuity.passed()
    }
}

/// Runs every suite on `instances` random members drawn from `rng`.
pub fn verify_family<R: Rng + ?Sized>(
    rng: &mut R,
    params: &FamilyParams,
    instances: usize,
    metric: CheckMetric,
) -> Result<FamilyReport> {
    let mut report = FamilyReport {
        instances,
        ..FamilyReport::default()
    };
    for _ in 0..instances {
        let inst = random_instance(rng, params)?;
        let dist = inst.distribution();
        let d = metric.of(&inst);
        report
            .scaled_correlation
            .merge(check_correlation(&dist, &inst.d_mu(), 3.0, params.max_set)?);
        report
            .correlation
            .merge(check_correlation(&dist, &d, 2.0, params.max_set)?);
        report
            .context_continuity
            .merge(check_context_continuity(&dist, &d, params.max_set)?);

        let other = sibling_instance(rng, &inst, params)?;
        let joint = metric.of(&other).max(&d);
        let w = rng.gen_range(0.1..0.9);
        let premise = check_continuity(&dist, &joint, params.max_set)?.passed()
            && check_continuity(&other.distribution(), &joint, params.max_set)?.passed();
        if !premise {
            report.mixtures_skipped += 1;
            continue;
        }
        let mix = UserDistribution::mixture(vec![(w, dist), (1.0 - w, other.distribution())])?;
        report
            .mixture_continuity
            .merge(check_continuity(&mix, &joint, params.max_set)?);
    }
    Ok(report)
}
