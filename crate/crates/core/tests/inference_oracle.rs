//! Exact queries against brute-force enumeration of every relevance vector.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankbandit::inference::{
    brute_force_opt, conditional_mean, discorrelation_prob, greedy_ranking, prob_all_irrelevant, slate_click_prob,
};
use rankbandit::properties::{random_instance, sibling_instance, subsets_up_to, FamilyParams};
use rankbandit::user::{JointTable, TreeNetwork};
use rankbandit::{DocTree, NodeId, UserDistribution};

/// Every full assignment of node bits with its probability under the network.
fn enumerate(net: &TreeNetwork) -> Vec<(f64, Vec<bool>)> {
    let t = net.tree();
    let n = t.len();
    assert!(n <= 16);
    let root_mean = net.mean().get(t.root());
    (0..1u32 << n)
        .filter_map(|mask| {
            let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let mut p = if bits[0] { root_mean } else { 1.0 - root_mean };
            for v in t.nodes().skip(1) {
                let parent = t.parent(v).unwrap();
                let one = net.p_one_given(v, bits[parent.index()]);
                p *= if bits[v.index()] { one } else { 1.0 - one };
            }
            (p > 0.0).then_some((p, bits))
        })
        .collect()
}

fn enumerate_dist(dist: &UserDistribution) -> Vec<(f64, Vec<bool>)> {
    match dist {
        UserDistribution::Network(net) => enumerate(net),
        UserDistribution::Mixture(c) => c
            .iter()
            .flat_map(|(w, d)| enumerate_dist(d).into_iter().map(move |(p, b)| (w * p, b)))
            .collect(),
        UserDistribution::Table(_) => unreachable!(),
    }
}

struct Oracle(Vec<(f64, Vec<bool>)>);

impl Oracle {
    fn prob(&self, pred: impl Fn(&[bool]) -> bool) -> f64 {
        self.0.iter().filter(|(_, b)| pred(b)).map(|(p, _)| p).sum()
    }

    fn none(&self, set: &[NodeId]) -> f64 {
        self.prob(|b| set.iter().all(|v| !b[v.index()]))
    }

    fn mean(&self, x: NodeId, set: &[NodeId]) -> f64 {
        self.prob(|b| b[x.index()] && set.iter().all(|v| !b[v.index()])) / self.none(set)
    }

    fn discorrelation(&self, x: NodeId, y: NodeId, set: &[NodeId]) -> f64 {
        self.prob(|b| b[x.index()] != b[y.index()] && set.iter().all(|v| !b[v.index()])) / self.none(set)
    }
}

fn small_instances(count: usize, seed: u64) -> Vec<UserDistribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = FamilyParams {
        max_leaves: 6,
        ..FamilyParams::default()
    };
    let mut out = Vec::new();
    while out.len() < count {
        let inst = random_instance(&mut rng, &p).unwrap();
        if inst.tree.len() > 12 {
            continue;
        }
        if out.len() % 3 == 2 {
            let other = sibling_instance(&mut rng, &inst, &p).unwrap();
            let w = rng.gen_range(0.2..0.8);
            out.push(
                UserDistribution::mixture(vec![(w, inst.distribution()), (1.0 - w, other.distribution())]).unwrap(),
            );
        } else {
            out.push(inst.distribution());
        }
    }
    out
}

#[test]
fn dp_matches_enumeration() {
    for dist in small_instances(30, 5) {
        let t = dist.tree().clone();
        let oracle = Oracle(enumerate_dist(&dist));
        let total: f64 = oracle.0.iter().map(|(p, _)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let nodes: Vec<NodeId> = t.nodes().collect();
        for set in subsets_up_to(&nodes, 2) {
            let none = prob_all_irrelevant(&dist, &set);
            assert!((none - oracle.none(&set)).abs() < 1e-9, "set {set:?}");
            if none < 1e-12 {
                continue;
            }
            for &x in t.leaves() {
                let m = conditional_mean(&dist, x, &set).unwrap();
                let want = if set.contains(&x) { 0.0 } else { oracle.mean(x, &set) };
                assert!((m - want).abs() < 1e-9, "μ({x} | {set:?}) = {m}, want {want}");
                for &y in t.leaves() {
                    let d = discorrelation_prob(&dist, x, y, &set).unwrap();
                    assert!((d - oracle.discorrelation(x, y, &set)).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn explicit_table_matches_its_own_sum() {
    let t = Arc::new(DocTree::balanced(2, 2, 0.5).unwrap());
    let table = JointTable::independent(t.clone(), &[0.1, 0.2, 0.3, 0.4]).unwrap();
    let dist = UserDistribution::Table(table);
    let leaves = t.leaves().to_vec();
    let none = prob_all_irrelevant(&dist, &leaves);
    assert!((none - 0.9 * 0.8 * 0.7 * 0.6).abs() < 1e-12);
    // independent leaves: conditioning on others leaves the marginal unchanged
    let m = conditional_mean(&dist, leaves[2], &leaves[..2]).unwrap();
    assert!((m - 0.3).abs() < 1e-12);
    // an internal node is relevant iff some leaf below it is
    let left = t.parent(leaves[0]).unwrap();
    let m = conditional_mean(&dist, left, &[]).unwrap();
    assert!((m - (1.0 - 0.9 * 0.8)).abs() < 1e-12);
}

#[test]
fn greedy_is_within_one_minus_inverse_e() {
    let bound = 1.0 - (-1.0f64).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = FamilyParams {
        max_leaves: 8,
        ..FamilyParams::default()
    };
    for _ in 0..30 {
        let inst = random_instance(&mut rng, &p).unwrap();
        let dist = inst.distribution();
        let docs = inst.tree.leaves().to_vec();
        for k in 1..=docs.len().min(3) {
            let (slate, g) = greedy_ranking(&dist, &docs, k).unwrap();
            let (_, opt) = brute_force_opt(&dist, &docs, k).unwrap();
            assert!((slate_click_prob(&dist, &slate) - g).abs() < 1e-12);
            assert!(g >= bound * opt - 1e-12, "greedy {g} vs opt {opt}");
            assert!(g <= opt + 1e-12);
        }
    }
}

#[test]
fn sampling_agrees_with_exact_queries() {
    let dist = &small_instances(3, 21)[2];
    let t = dist.tree().clone();
    let slate: Vec<NodeId> = t.leaves().iter().copied().take(3).collect();
    let exact_none = prob_all_irrelevant(dist, &slate);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200_000;
    let mut none = 0u32;
    let mut full_none = 0u32;
    for _ in 0..n {
        none += dist.sample_nodes(&slate, &mut rng).iter().all(|b| !b) as u32;
        let full = dist.sample(&mut rng);
        full_none += slate.iter().all(|&v| !full.get(v)) as u32;
    }
    let sd = (exact_none * (1.0 - exact_none) / n as f64).sqrt();
    for count in [none, full_none] {
        let freq = count as f64 / n as f64;
        assert!((freq - exact_none).abs() < 5.0 * sd + 1e-9, "{freq} vs {exact_none}");
    }
}
