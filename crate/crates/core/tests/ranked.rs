use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankbandit::bandit::{Choice, SlotRng};
use rankbandit::ranked::{make_ranked, simulate_click, PolicyConfig, RankedPolicy, ALGORITHMS};
use rankbandit::{DocTree, NodeId};

fn rng(seed: u64) -> SlotRng {
    SlotRng {
        select: ChaCha8Rng::seed_from_u64(seed),
        leaf: ChaCha8Rng::seed_from_u64(!seed),
    }
}

/// What slot `i` would pick for a few probe contexts and streams.
fn fingerprint(p: &RankedPolicy, i: usize, tree: &DocTree) -> Vec<Choice> {
    let leaves = tree.leaves();
    (0..6u64)
        .map(|probe| {
            let upper: Vec<NodeId> = (0..i)
                .map(|j| leaves[(probe as usize * 7 + j * 3) % leaves.len()])
                .collect();
            p.slot(i).select(&upper, &mut rng(probe)).unwrap()
        })
        .collect()
}

#[test]
fn slots_below_the_click_are_left_untouched() {
    let tree = Arc::new(DocTree::balanced(2, 5, 0.8).unwrap());
    let cfg = PolicyConfig::new(5_000);
    let k = 4;
    for name in ALGORITHMS.iter().filter(|n| n.starts_with("ranked")) {
        let mut p = make_ranked(name, &tree, k, &cfg).unwrap();
        let mut streams: Vec<SlotRng> = (0..k as u64).map(rng).collect();
        let mut coin = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let choices = p.compose(&mut streams).unwrap();
            let relevant: Vec<bool> = (0..k).map(|_| coin.gen_bool(0.2)).collect();
            let click = simulate_click(&relevant);
            let before: Vec<Vec<Choice>> = (0..k).map(|i| fingerprint(&p, i, &tree)).collect();
            let counts: Vec<usize> = (0..k).map(|i| p.slot(i).active_count()).collect();
            p.route(&choices, click).unwrap();
            if let Some(c) = click {
                for i in c + 1..k {
                    assert_eq!(
                        fingerprint(&p, i, &tree),
                        before[i],
                        "{name}: slot {i} changed below click {c}"
                    );
                    assert_eq!(p.slot(i).active_count(), counts[i]);
                }
            }
        }
    }
}

#[test]
fn compose_is_a_pure_function_of_the_streams() {
    let tree = Arc::new(DocTree::balanced(3, 3, 0.7).unwrap());
    let p = make_ranked("rankedContextualZooming+", &tree, 3, &PolicyConfig::new(1_000)).unwrap();
    let a = p.compose(&mut (0..3).map(rng).collect::<Vec<_>>()).unwrap();
    let b = p.compose(&mut (0..3).map(rng).collect::<Vec<_>>()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dedup_yields_distinct_documents_when_possible() {
    let tree = Arc::new(DocTree::balanced(2, 2, 0.5).unwrap());
    let mut cfg = PolicyConfig::new(1_000);
    cfg.dedup = true;
    // four documents, four slots: every slate is a permutation
    let p = make_ranked("rankedZooming+", &tree, 4, &cfg).unwrap();
    for seed in 0..50 {
        let choices = p
            .compose(&mut (0..4).map(|i| rng(seed * 10 + i)).collect::<Vec<_>>())
            .unwrap();
        let mut docs: Vec<NodeId> = choices.iter().map(|c| c.doc).collect();
        docs.sort();
        docs.dedup();
        assert_eq!(docs.len(), 4);
    }
}

#[test]
fn unknown_names_are_rejected() {
    let tree = Arc::new(DocTree::balanced(2, 2, 0.5).unwrap());
    for bad in ["rankedEXP3+", "rankedFoo", "UCB1", "ranked"] {
        assert!(make_ranked(bad, &tree, 2, &PolicyConfig::new(10)).is_err(), "{bad}");
    }
}
