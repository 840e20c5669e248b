//! Exact probabilistic queries on a [`UserDistribution`].
//!
//! Everything reduces to one primitive, [`prob_evidence`]: the probability
//! that a set of nodes takes prescribed bits. On a tree network it runs a
//! bottom-up message pass restricted to the root paths of the evidence nodes;
//! subtrees without evidence contribute a factor of one and are never
//! visited, so a query costs `O(|evidence| * depth)` regardless of tree size.
//! Mixtures combine their components linearly and explicit tables are summed.

use crate::error::{Error, Result};
use crate::tree::NodeId;
use crate::user::{JointTable, TreeNetwork, UserDistribution};

/// `Pr[π(v) = b for every (v, b) in evidence]`.
pub fn prob_evidence(dist: &UserDistribution, evidence: &[(NodeId, bool)]) -> f64 {
    match dist {
        UserDistribution::Network(net) => network_evidence(net, evidence),
        UserDistribution::Table(table) => table_evidence(table, evidence),
        UserDistribution::Mixture(components) => components.iter().map(|(w, c)| w * prob_evidence(c, evidence)).sum(),
    }
}

fn network_evidence(net: &TreeNetwork, evidence: &[(NodeId, bool)]) -> f64 {
    let t = net.tree();
    let root = t.root();
    let mut nodes: Vec<NodeId> = Vec::with_capacity(evidence.len() * (t.max_depth() + 1) + 1);
    nodes.push(root);
    for &(x, _) in evidence {
        let mut v = x;
        while v != root {
            nodes.push(v);
            v = t.parent(v).expect("non-root");
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    let slot = |v: NodeId| nodes.binary_search(&v).expect("node on an evidence path");

    // g[i][b] = Pr[evidence below nodes[i] | π(nodes[i]) = b]
    let mut g = vec![[1.0f64, 1.0f64]; nodes.len()];
    for &(x, bit) in evidence {
        g[slot(x)][usize::from(!bit)] = 0.0;
    }
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_unstable_by_key(|&i| std::cmp::Reverse(t.depth(nodes[i])));
    for i in order {
        let u = nodes[i];
        let Some(p) = t.parent(u) else { continue };
        let [g0, g1] = g[i];
        let j = slot(p);
        for b in [false, true] {
            let one = net.p_one_given(u, b);
            g[j][usize::from(b)] *= one * g1 + (1.0 - one) * g0;
        }
    }
    let [g0, g1] = g[slot(root)];
    let mu = net.mean().get(root);
    mu * g1 + (1.0 - mu) * g0
}

fn table_evidence(table: &JointTable, evidence: &[(NodeId, bool)]) -> f64 {
    let t = table.tree();
    table
        .entries()
        .iter()
        .filter(|(_, leaf_bits)| {
            evidence.iter().all(|&(v, bit)| {
                let on = t
                    .leaves_under(v)
                    .iter()
                    .any(|&x| leaf_bits[t.leaf_position(x).expect("leaf")]);
                on == bit
            })
        })
        .map(|(p, _)| p)
        .sum()
}

fn irrelevant(set: &[NodeId]) -> Vec<(NodeId, bool)> {
    set.iter().map(|&s| (s, false)).collect()
}

/// `Pr[Z_S]`: every document in `set` is irrelevant.
pub fn prob_all_irrelevant(dist: &UserDistribution, set: &[NodeId]) -> f64 {
    prob_evidence(dist, &irrelevant(set))
}

fn conditioning(dist: &UserDistribution, set: &[NodeId]) -> Result<(Vec<(NodeId, bool)>, f64)> {
    let ev = irrelevant(set);
    let p = prob_evidence(dist, &ev);
    if p > 0.0 {
        Ok((ev, p))
    } else {
        Err(Error::NullEvent(p))
    }
}

/// `μ(x | Z_S)`: probability that `x` is relevant given all of `set` is not.
pub fn conditional_mean(dist: &UserDistribution, x: NodeId, set: &[NodeId]) -> Result<f64> {
    let (mut ev, p) = conditioning(dist, set)?;
    if set.contains(&x) {
        return Ok(0.0);
    }
    ev.push((x, true));
    Ok((prob_evidence(dist, &ev) / p).clamp(0.0, 1.0))
}

/// `Pr[π(x) != π(y) | Z_S]`.
pub fn discorrelation_prob(dist: &UserDistribution, x: NodeId, y: NodeId, set: &[NodeId]) -> Result<f64> {
    let (ev, p) = conditioning(dist, set)?;
    if x == y {
        return Ok(0.0);
    }
    let joint = |bx: bool, by: bool| {
        let mut e = ev.clone();
        e.push((x, bx));
        e.push((y, by));
        prob_evidence(dist, &e)
    };
    Ok(((joint(true, false) + joint(false, true)) / p).clamp(0.0, 1.0))
}

/// Probability that a user scanning the slate top-down clicks something.
/// Repeated documents count once.
pub fn slate_click_prob(dist: &UserDistribution, slate: &[NodeId]) -> f64 {
    let mut docs = slate.to_vec();
    docs.sort_unstable();
    docs.dedup();
    1.0 - prob_all_irrelevant(dist, &docs)
}

/// Candidate sets up to this size resolve greedy ties exhaustively.
pub const GREEDY_TIE_SEARCH_LIMIT: usize = 12;
const TIE_TOL: f64 = 1e-12;

/// The fully informed greedy ranking: slot by slot, the document with the
/// highest conditional mean given that everything above it was skipped.
///
/// When several documents tie, small candidate sets (at most
/// [`GREEDY_TIE_SEARCH_LIMIT`]) follow every tied branch and return the
/// worst-valued greedy ranking; larger sets take the smallest node id.
/// Returns the ranking and its click probability.
pub fn greedy_ranking(dist: &UserDistribution, candidates: &[NodeId], k: usize) -> Result<(Vec<NodeId>, f64)> {
    if k == 0 || k > candidates.len() {
        return Err(Error::param(format!("k = {k} with {} candidates", candidates.len())));
    }
    let mut chosen = Vec::with_capacity(k);
    let explore = candidates.len() <= GREEDY_TIE_SEARCH_LIMIT;
    let best = greedy_extend(dist, candidates, k, &mut chosen, explore)?;
    Ok(best)
}

fn greedy_extend(
    dist: &UserDistribution,
    candidates: &[NodeId],
    k: usize,
    chosen: &mut Vec<NodeId>,
    explore: bool,
) -> Result<(Vec<NodeId>, f64)> {
    if chosen.len() == k {
        return Ok((chosen.clone(), slate_click_prob(dist, chosen)));
    }
    let p_skip = prob_all_irrelevant(dist, chosen);
    let mut tied: Vec<NodeId> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    for x in sorted {
        if chosen.contains(&x) {
            continue;
        }
        // a null conditioning event makes every remaining choice worth 0
        let value = if p_skip > 0.0 {
            conditional_mean(dist, x, chosen)?
        } else {
            0.0
        };
        if value > best + TIE_TOL {
            best = value;
            tied.clear();
            tied.push(x);
        } else if (value - best).abs() <= TIE_TOL {
            tied.push(x);
        }
    }
    if !explore {
        tied.truncate(1);
    }
    let mut worst: Option<(Vec<NodeId>, f64)> = None;
    for x in tied {
        chosen.push(x);
        let outcome = greedy_extend(dist, candidates, k, chosen, explore)?;
        chosen.pop();
        if worst.as_ref().is_none_or(|w| outcome.1 < w.1 - TIE_TOL) {
            worst = Some(outcome);
        }
    }
    worst.ok_or_else(|| Error::structural("no candidate left for greedy slot"))
}

/// Largest number of subsets [`brute_force_opt`] will enumerate.
pub const MAX_SUBSETS: u128 = 1_000_000;

/// The best `k`-subset of `candidates` by exhaustive search, and its value.
pub fn brute_force_opt(dist: &UserDistribution, candidates: &[NodeId], k: usize) -> Result<(Vec<NodeId>, f64)> {
    let n = candidates.len();
    if k == 0 || k > n {
        return Err(Error::param(format!("k = {k} with {n} candidates")));
    }
    let count = binomial(n as u128, k as u128);
    if count > MAX_SUBSETS {
        return Err(Error::TooManySubsets(count));
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: (Vec<NodeId>, f64) = (Vec::new(), f64::NEG_INFINITY);
    let mut slate = vec![NodeId(0); k];
    loop {
        for (s, &i) in slate.iter_mut().zip(&idx) {
            *s = candidates[i];
        }
        let value = slate_click_prob(dist, &slate);
        if value > best.1 {
            best = (slate.clone(), value);
        }
        // next combination in lexicographic order
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < n - k + p) else {
            break;
        };
        idx[pos] += 1;
        for p in pos + 1..k {
            idx[p] = idx[p - 1] + 1;
        }
    }
    Ok(best)
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::DocTree;
    use crate::user::{discussion3_instance, MeanFunction, TreeNetwork};
    use std::sync::Arc;

    const X1: NodeId = NodeId(1);
    const X2: NodeId = NodeId(2);
    const X3: NodeId = NodeId(3);

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn constant_network(m: f64) -> UserDistribution {
        let t = Arc::new(DocTree::balanced(2, 2, 0.5).unwrap());
        UserDistribution::Network(TreeNetwork::new(t.clone(), MeanFunction::new(vec![m; t.len()])).unwrap())
    }

    #[test]
    fn all_irrelevant_examples() {
        let d = constant_network(0.3);
        let leaves = d.tree().leaves().to_vec();
        assert_eq!(prob_all_irrelevant(&d, &[]), 1.0);
        assert!(close(prob_all_irrelevant(&d, &leaves[..1]), 0.7));
        assert!(close(prob_all_irrelevant(&d, &[leaves[0], leaves[3]]), 0.7));
    }

    #[test]
    fn conditional_mean_examples() {
        let d = discussion3_instance();
        assert_eq!(conditional_mean(&d, X1, &[X1]).unwrap(), 0.0);
        assert!(close(conditional_mean(&d, X3, &[]).unwrap(), 1.0 / 3.0));
        assert!(close(conditional_mean(&d, X3, &[X1]).unwrap(), 1.0 / 3.0));
        assert!(close(conditional_mean(&d, X2, &[X1]).unwrap(), 0.5));

        let sure = constant_network(1.0);
        let leaf = sure.tree().leaves()[0];
        assert!(matches!(
            conditional_mean(&sure, leaf, &[leaf]),
            Err(Error::NullEvent(_))
        ));
    }

    #[test]
    fn discorrelation_examples() {
        let d = discussion3_instance();
        assert_eq!(discorrelation_prob(&d, X1, X1, &[]).unwrap(), 0.0);
        let (mx, my) = (0.5, 1.0 / 3.0);
        let want = mx * (1.0 - my) + my * (1.0 - mx);
        assert!(close(discorrelation_prob(&d, X1, X3, &[]).unwrap(), want));
        let c = constant_network(0.4);
        let l = c.tree().leaves().to_vec();
        assert_eq!(discorrelation_prob(&c, l[0], l[3], &[l[1]]).unwrap(), 0.0);
    }

    #[test]
    fn slate_examples() {
        let d = discussion3_instance();
        assert!(close(slate_click_prob(&d, &[X1]), 0.5));
        assert!(close(slate_click_prob(&d, &[X1, X2]), 0.75));
        assert!(close(slate_click_prob(&d, &[X1, X3]), 2.0 / 3.0));
        assert!(close(slate_click_prob(&d, &[X1, X1]), 0.5));
    }

    #[test]
    fn greedy_and_opt_on_discussion3() {
        let d = discussion3_instance();
        let docs = [X1, X2, X3];
        let (slate, v) = greedy_ranking(&d, &docs, 2).unwrap();
        let mut s = slate.clone();
        s.sort();
        assert_eq!(s, vec![X1, X2]);
        assert!(close(v, 0.75));
        let (best, v) = brute_force_opt(&d, &docs, 2).unwrap();
        assert_eq!(best, vec![X1, X2]);
        assert!(close(v, 0.75));
        let (_, v) = brute_force_opt(&d, &docs, 3).unwrap();
        assert!(close(v, 1.0 - prob_all_irrelevant(&d, &docs)));
        let (top, v) = greedy_ranking(&d, &docs, 1).unwrap();
        assert_eq!(top, vec![X1]);
        assert!(close(v, 0.5));
        assert!(close(brute_force_opt(&d, &docs, 1).unwrap().1, 0.5));
    }

    #[test]
    fn brute_force_guard() {
        let d = constant_network(0.2);
        let many: Vec<NodeId> = (0..60).map(NodeId).collect();
        assert!(matches!(brute_force_opt(&d, &many, 10), Err(Error::TooManySubsets(_))));
        assert_eq!(binomial(5, 2), 10);
    }
}
