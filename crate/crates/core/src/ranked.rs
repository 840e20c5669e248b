//! The k-slot ranked meta-algorithm.
//!
//! Each slot runs its own single-slot policy. Slots pick top-down, so slot
//! `i` sees the documents chosen above it. After the user's click, the
//! clicked slot is rewarded, the slots above it are told they got nothing,
//! and the slots below it are left as if the round never happened.
//!
//! Policy selection never mutates state, so leaving a slot untouched is an
//! exact rollback.

use std::sync::Arc;

use rand::Rng;

use crate::bandit::{
    exp3_default_gamma, Choice, Doubling, Exp3, HorizonConfig, PolicyFactory, SlotPolicy, SlotRng, Ucb1,
};
use crate::contextual::ContextualZooming;
use crate::error::{Error, Result};
use crate::inference::greedy_ranking;
use crate::metric::{Grid, GridInner, Zooming};
use crate::tree::{DocTree, NodeId};
use crate::user::UserDistribution;

/// Every name accepted by [`make_ranked`] and [`Ranker::new`].
pub const ALGORITHMS: &[&str] = &[
    "rankedUCB1",
    "rankedUCB1+",
    "rankedEXP3",
    "rankedGridUCB1",
    "rankedGridUCB1+",
    "rankedGridEXP3",
    "rankedZooming",
    "rankedZooming+",
    "rankedMCZooming",
    "rankedMCZooming+",
    "rankedContextualZooming",
    "rankedContextualZooming+",
    "random",
    "greedyOracle",
];

/// Knobs shared by every slot policy.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    /// Horizon `T` used by confidence radii and EXP3's default rate.
    pub horizon: u64,
    pub exp3_gamma: Option<f64>,
    pub grid_replay: bool,
    /// Resample a slot's document inside its region when it repeats one above.
    pub dedup: bool,
    /// Run every slot under the doubling trick instead of a fixed horizon.
    pub anytime: bool,
    /// Apply the correlation cap inside contextual zooming.
    pub contextual_caps: bool,
}

impl PolicyConfig {
    pub fn new(horizon: u64) -> Self {
        PolicyConfig {
            horizon,
            exp3_gamma: None,
            grid_replay: false,
            dedup: false,
            anytime: false,
            contextual_caps: true,
        }
    }
}

/// Builds the single-slot policy `name` for `slot` (0-based), e.g. `zooming+`
/// or `contextualZooming`.
pub fn make_slot(name: &str, tree: &Arc<DocTree>, slot: usize, cfg: &PolicyConfig) -> Result<Box<dyn SlotPolicy>> {
    let (base, optimistic) = match name.strip_suffix('+') {
        Some(b) => (b, true),
        None => (name, false),
    };
    let known = [
        "UCB1",
        "EXP3",
        "gridUCB1",
        "gridEXP3",
        "zooming",
        "MCZooming",
        "contextualZooming",
    ];
    if !known.contains(&base) || (optimistic && base.contains("EXP3")) {
        return Err(Error::UnknownAlgorithm(name.to_string()));
    }
    let tree = tree.clone();
    let cfg2 = cfg.clone();
    let base = base.to_string();
    let factory: PolicyFactory = Arc::new(move |horizon| {
        let h = HorizonConfig::new(horizon, optimistic)?;
        let gamma = |arms: usize| cfg2.exp3_gamma.unwrap_or_else(|| exp3_default_gamma(arms, horizon));
        let p: Box<dyn SlotPolicy> = match base.as_str() {
            "UCB1" => Box::new(Ucb1::new(tree.leaves().to_vec(), h)?),
            "EXP3" => Box::new(Exp3::new(tree.leaves().to_vec(), gamma(tree.leaves().len()))?),
            "gridUCB1" => Box::new(Grid::new(tree.clone(), GridInner::Ucb1, h, None, cfg2.grid_replay)?),
            "gridEXP3" => Box::new(Grid::new(
                tree.clone(),
                GridInner::Exp3,
                h,
                cfg2.exp3_gamma,
                cfg2.grid_replay,
            )?),
            "zooming" => Box::new(Zooming::new(tree.clone(), h)),
            "MCZooming" => Box::new(Zooming::with_correlation(tree.clone(), h)),
            "contextualZooming" if slot == 0 => Box::new(Zooming::new(tree.clone(), h)),
            "contextualZooming" => {
                Box::new(ContextualZooming::new(tree.clone(), h, slot).with_correlation(cfg2.contextual_caps))
            }
            _ => unreachable!("checked above"),
        };
        Ok(p)
    });
    if cfg.anytime {
        Ok(Box::new(Doubling::new(factory)?))
    } else {
        factory(cfg.horizon)
    }
}

/// One learner per slot.
#[derive(Clone)]
pub struct RankedPolicy {
    tree: Arc<DocTree>,
    slots: Vec<Box<dyn SlotPolicy>>,
    dedup: bool,
}

/// Assembles the ranked algorithm `name` (`ranked` + a slot policy name) with
/// `k` slots.
pub fn make_ranked(name: &str, tree: &Arc<DocTree>, k: usize, cfg: &PolicyConfig) -> Result<RankedPolicy> {
    let slot_name = name
        .strip_prefix("ranked")
        .ok_or_else(|| Error::UnknownAlgorithm(name.to_string()))?;
    let mut chars = slot_name.chars();
    let slot_name = match chars.next() {
        // rankedGridUCB1 -> gridUCB1, rankedZooming -> zooming; UCB1/EXP3/MC stay
        Some(c)
            if slot_name.starts_with("Grid")
                || slot_name.starts_with("Zooming")
                || slot_name.starts_with("Contextual") =>
        {
            c.to_lowercase().chain(chars).collect::<String>()
        }
        Some(_) => slot_name.to_string(),
        None => return Err(Error::UnknownAlgorithm(name.to_string())),
    };
    let slots = (0..k)
        .map(|i| make_slot(&slot_name, tree, i, cfg))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::UnknownAlgorithm(_) => Error::UnknownAlgorithm(name.to_string()),
            other => other,
        })?;
    RankedPolicy::from_slots(tree.clone(), slots, cfg.dedup)
}

impl RankedPolicy {
    pub fn from_slots(tree: Arc<DocTree>, slots: Vec<Box<dyn SlotPolicy>>, dedup: bool) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::param("a ranking needs at least one slot"));
        }
        Ok(RankedPolicy { tree, slots, dedup })
    }

    pub fn k(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, i: usize) -> &dyn SlotPolicy {
        self.slots[i].as_ref()
    }

    pub fn active_count(&self) -> usize {
        self.slots.iter().map(|s| s.active_count()).sum()
    }

    /// Picks documents top-down; `rngs[i]` is slot `i`'s stream.
    pub fn compose(&self, rngs: &mut [SlotRng]) -> Result<Vec<Choice>> {
        if rngs.len() != self.slots.len() {
            return Err(Error::param(format!(
                "{} rng streams for {} slots",
                rngs.len(),
                self.k()
            )));
        }
        let mut docs = Vec::with_capacity(self.k());
        let mut choices = Vec::with_capacity(self.k());
        for (slot, rng) in self.slots.iter().zip(rngs.iter_mut()) {
            let mut c = slot.select(&docs, rng)?;
            if self.dedup && docs.contains(&c.doc) {
                c.doc = resample_outside(&self.tree, c.region, &docs, &mut rng.leaf).unwrap_or(c.doc);
            }
            docs.push(c.doc);
            choices.push(c);
        }
        Ok(choices)
    }

    /// Applies the click outcome: reward 1 at `click`, 0 above it, nothing
    /// below. With no click every slot gets 0.
    pub fn route(&mut self, choices: &[Choice], click: Option<usize>) -> Result<()> {
        if choices.len() != self.k() {
            return Err(Error::param(format!(
                "{} choices for {} slots",
                choices.len(),
                self.k()
            )));
        }
        let docs: Vec<NodeId> = choices.iter().map(|c| c.doc).collect();
        let last = click.map_or(self.k(), |c| c + 1);
        for i in 0..last {
            self.slots[i].update(&choices[i], &docs[..i], Some(i) == click)?;
        }
        Ok(())
    }
}

/// A leaf under `region` that is not in `taken`, drawn uniformly at each
/// branch among subtrees that still have one. `None` if there is none.
fn resample_outside<R: Rng + ?Sized>(tree: &DocTree, region: NodeId, taken: &[NodeId], rng: &mut R) -> Option<NodeId> {
    let free = |v: NodeId| tree.leaves_under(v).iter().any(|x| !taken.contains(x));
    if !free(region) {
        return None;
    }
    let mut v = region;
    loop {
        let open: Vec<NodeId> = tree.children(v).iter().copied().filter(|&c| free(c)).collect();
        if open.is_empty() {
            return Some(v);
        }
        v = open[rng.gen_range(0..open.len())];
    }
}

/// The slot of the first relevant document, if any.
pub fn simulate_click(relevant: &[bool]) -> Option<usize> {
    relevant.iter().position(|&r| r)
}

/// A ranking algorithm: a learner or one of the two baselines.
#[derive(Clone)]
pub enum Ranker {
    Learner(RankedPolicy),
    /// Independent uniformly random documents in every slot.
    Random {
        tree: Arc<DocTree>,
        k: usize,
        dedup: bool,
    },
    /// The greedy ranking computed from the true user distribution.
    Greedy {
        slate: Vec<NodeId>,
    },
}

impl Ranker {
    pub fn new(name: &str, dist: &UserDistribution, k: usize, cfg: &PolicyConfig) -> Result<Self> {
        let tree = dist.tree();
        match name {
            "random" => Ok(Ranker::Random {
                tree: tree.clone(),
                k,
                dedup: cfg.dedup,
            }),
            "greedyOracle" => {
                if k > tree.leaves().len() {
                    return Err(Error::param(format!("{k} slots for {} documents", tree.leaves().len())));
                }
                let (slate, _) = greedy_ranking(dist, tree.leaves(), k)?;
                Ok(Ranker::Greedy { slate })
            }
            _ => make_ranked(name, tree, k, cfg).map(Ranker::Learner),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Ranker::Learner(p) => p.k(),
            Ranker::Random { k, .. } => *k,
            Ranker::Greedy { slate } => slate.len(),
        }
    }

    pub fn compose(&self, rngs: &mut [SlotRng]) -> Result<Vec<Choice>> {
        match self {
            Ranker::Learner(p) => p.compose(rngs),
            Ranker::Random { tree, k, dedup } => {
                let leaves = tree.leaves();
                let mut docs: Vec<NodeId> = Vec::with_capacity(*k);
                for rng in rngs.iter_mut().take(*k) {
                    let mut x = leaves[rng.leaf.gen_range(0..leaves.len())];
                    if *dedup && docs.len() < leaves.len() {
                        while docs.contains(&x) {
                            x = leaves[rng.leaf.gen_range(0..leaves.len())];
                        }
                    }
                    docs.push(x);
                }
                Ok(docs.into_iter().map(|d| fixed(d, leaves.len())).collect())
            }
            Ranker::Greedy { slate } => Ok(slate.iter().map(|&d| fixed(d, 1)).collect()),
        }
    }

    pub fn route(&mut self, choices: &[Choice], click: Option<usize>) -> Result<()> {
        match self {
            Ranker::Learner(p) => p.route(choices, click),
            _ => Ok(()),
        }
    }

    pub fn active_count(&self) -> usize {
        match self {
            Ranker::Learner(p) => p.active_count(),
            Ranker::Random { tree, k, .. } => tree.leaves().len() * k,
            Ranker::Greedy { slate } => slate.len(),
        }
    }
}

fn fixed(doc: NodeId, arms: usize) -> Choice {
    Choice {
        doc,
        arm: 0,
        region: doc,
        prob: 1.0 / arms as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::user::{discussion3_instance, metricless_tree};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rngs(k: usize) -> Vec<SlotRng> {
        (0..k as u64)
            .map(|i| SlotRng {
                select: ChaCha8Rng::seed_from_u64(i),
                leaf: ChaCha8Rng::seed_from_u64(100 + i),
            })
            .collect()
    }

    #[test]
    fn click_examples() {
        assert_eq!(simulate_click(&[false, false, false]), None);
        assert_eq!(simulate_click(&[true, true, true]), Some(0));
        assert_eq!(simulate_click(&[false, false, true, false]), Some(2));
    }

    #[test]
    fn registry_builds_every_learner() {
        let tree = Arc::new(DocTree::balanced(2, 3, 0.5).unwrap());
        let cfg = PolicyConfig::new(100);
        for name in ALGORITHMS.iter().filter(|n| n.starts_with("ranked")) {
            let p = make_ranked(name, &tree, 3, &cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(p.k(), 3);
            p.compose(&mut rngs(3)).unwrap();
        }
        for bad in ["rankedFoo", "zooming", "rankedEXP3+", "ranked"] {
            assert!(
                matches!(make_ranked(bad, &tree, 2, &cfg), Err(Error::UnknownAlgorithm(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn contextual_slot_one_is_plain_zooming() {
        let tree = Arc::new(DocTree::balanced(2, 3, 0.5).unwrap());
        let p = make_ranked("rankedContextualZooming", &tree, 2, &PolicyConfig::new(100)).unwrap();
        // slot 1 takes no context, slot 2 insists on exactly one upper document
        let mut r = rngs(1);
        assert!(p.slot(0).select(&[], &mut r[0]).is_ok());
        assert!(p.slot(1).select(&[], &mut r[0]).is_err());
        assert!(p.slot(1).select(&[tree.leaves()[0]], &mut r[0]).is_ok());
    }

    use std::sync::Mutex;

    type Log = Arc<Mutex<Vec<(usize, bool)>>>;

    #[derive(Clone)]
    struct Spy {
        slot: usize,
        log: Log,
    }

    impl SlotPolicy for Spy {
        fn select(&self, _upper: &[NodeId], _rng: &mut SlotRng) -> Result<Choice> {
            Ok(fixed(NodeId(1 + self.slot as u32), 1))
        }
        fn update(&mut self, _c: &Choice, upper: &[NodeId], reward: bool) -> Result<()> {
            assert_eq!(upper.len(), self.slot);
            self.log.lock().unwrap().push((self.slot, reward));
            Ok(())
        }
        fn active_count(&self) -> usize {
            1
        }
        fn box_clone(&self) -> Box<dyn SlotPolicy> {
            Box::new(self.clone())
        }
    }

    fn spied(k: usize) -> (RankedPolicy, Log) {
        let log = Log::default();
        let tree = Arc::new(metricless_tree(k).unwrap());
        let slots = (0..k)
            .map(|slot| Box::new(Spy { slot, log: log.clone() }) as Box<dyn SlotPolicy>)
            .collect();
        (RankedPolicy::from_slots(tree, slots, false).unwrap(), log)
    }

    #[test]
    fn click_rewards_slot_and_zeroes_those_above() {
        let (mut p, log) = spied(5);
        let choices = p.compose(&mut rngs(5)).unwrap();
        p.route(&choices, Some(2)).unwrap();
        assert_eq!(*log.lock().unwrap(), vec![(0, false), (1, false), (2, true)]);
    }

    #[test]
    fn click_in_top_slot_rolls_back_the_rest() {
        let (mut p, log) = spied(5);
        let choices = p.compose(&mut rngs(5)).unwrap();
        p.route(&choices, Some(0)).unwrap();
        assert_eq!(*log.lock().unwrap(), vec![(0, true)]);
    }

    #[test]
    fn no_click_zeroes_every_slot() {
        let (mut p, log) = spied(5);
        let choices = p.compose(&mut rngs(5)).unwrap();
        p.route(&choices, None).unwrap();
        assert_eq!(*log.lock().unwrap(), (0..5).map(|i| (i, false)).collect::<Vec<_>>());
    }

    #[test]
    fn dedup_avoids_repeats_when_possible() {
        let tree = Arc::new(DocTree::balanced(2, 2, 0.5).unwrap());
        let mut cfg = PolicyConfig::new(100);
        cfg.dedup = true;
        let p = make_ranked("rankedZooming+", &tree, 4, &cfg).unwrap();
        // all four slots play the root; dedup spreads them over the four leaves
        let mut docs: Vec<NodeId> = p.compose(&mut rngs(4)).unwrap().iter().map(|c| c.doc).collect();
        docs.sort();
        assert_eq!(docs, tree.leaves());
    }

    #[test]
    fn greedy_oracle_on_discussion3() {
        let d = discussion3_instance();
        let r = Ranker::new("greedyOracle", &d, 2, &PolicyConfig::new(10)).unwrap();
        let slate: Vec<NodeId> = r.compose(&mut rngs(2)).unwrap().iter().map(|c| c.doc).collect();
        assert!((crate::inference::slate_click_prob(&d, &slate) - 0.75).abs() < 1e-12);
    }
}
