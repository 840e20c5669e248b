//! Metric-aware single-slot policies on a [`DocTree`]: the zooming algorithm
//! and the GridBandit meta-algorithm.
//!
//! Both pick a subtree and then show a document drawn from it uniformly at
//! each branch. Zooming keeps a set of active subtrees that partitions the
//! leaves and splits a subtree once its confidence radius drops below its
//! width. Grid plays the depth-`i` subtrees as plain bandit arms for a fixed
//! number of rounds per level.
//!
//! With the correlation rule on, zooming caps each subtree's index at its
//! distance to the documents in the slots above (`μ(x | Z_S) <= D(x, S)`).

use std::cmp::Reverse;
use std::collections::HashMap;
use std::sync::Arc;

use crate::bandit::{
    conf_radius, exp3_default_gamma, ucb_index, ArmStats, Choice, Exp3, HorizonConfig, IndexOrder, Score, SlotPolicy,
    SlotRng, Ucb1,
};
use crate::error::{Error, Result};
use crate::tree::{DocTree, NodeId, SubtreeRef};

/// Index-cap per active subtree for a slot whose upper slots hold `upper`.
/// Empty when `upper` is empty.
pub fn correlation_caps(
    tree: &DocTree,
    active: impl IntoIterator<Item = SubtreeRef>,
    upper: &[NodeId],
) -> HashMap<SubtreeRef, f64> {
    if upper.is_empty() {
        return HashMap::new();
    }
    active
        .into_iter()
        .map(|u| (u, tree.subtree_distance_to_set(u, upper)))
        .collect()
}

/// Zooming over subtrees of a document tree.
#[derive(Clone, Debug)]
pub struct Zooming {
    tree: Arc<DocTree>,
    cfg: HorizonConfig,
    /// Stats of active subtrees, indexed by node id.
    stats: Vec<Option<ArmStats>>,
    order: IndexOrder<NodeId>,
    correlation: bool,
}

impl Zooming {
    pub fn new(tree: Arc<DocTree>, cfg: HorizonConfig) -> Self {
        let mut z = Zooming {
            stats: vec![None; tree.len()],
            tree,
            cfg,
            order: IndexOrder::new(),
            correlation: false,
        };
        z.activate(z.tree.root());
        z
    }

    /// Zooming with the correlation rule (`MCZooming`).
    pub fn with_correlation(tree: Arc<DocTree>, cfg: HorizonConfig) -> Self {
        let mut z = Self::new(tree, cfg);
        z.correlation = true;
        z
    }

    pub fn index(&self, stats: &ArmStats) -> f64 {
        ucb_index(stats, &self.cfg, 2.0)
    }

    fn activate(&mut self, u: SubtreeRef) {
        let s = ArmStats::default();
        self.order.insert((Reverse(Score(self.index(&s))), u));
        self.stats[u.index()] = Some(s);
    }

    pub fn is_active(&self, u: SubtreeRef) -> bool {
        self.stats.get(u.index()).is_some_and(|s| s.is_some())
    }

    pub fn stats(&self, u: SubtreeRef) -> Option<ArmStats> {
        self.stats.get(u.index()).copied().flatten()
    }

    /// Active subtrees in descending index order.
    pub fn active(&self) -> impl Iterator<Item = SubtreeRef> + '_ {
        self.order.iter().map(|&(_, u)| u)
    }

    pub fn tree(&self) -> &Arc<DocTree> {
        &self.tree
    }

    /// The active subtree with the highest (optionally capped) index; ties go
    /// to the smallest node id.
    pub fn best(&self, caps: Option<&dyn Fn(SubtreeRef) -> f64>) -> Result<SubtreeRef> {
        let mut iter = self.order.iter();
        let &(Reverse(Score(first_index)), first) =
            iter.next().ok_or_else(|| Error::structural("no active subtree"))?;
        let Some(cap) = caps else {
            return Ok(first);
        };
        let mut best = (first_index.min(cap(first)), first);
        for &(Reverse(Score(index)), u) in iter {
            // entries come in descending index order, so nothing further can win
            if index < best.0 || (index == best.0 && u > best.1) {
                break;
            }
            let capped = index.min(cap(u));
            if capped > best.0 || (capped == best.0 && u < best.1) {
                best = (capped, u);
            }
        }
        Ok(best.1)
    }

    /// Counts the pull of `u` and splits it when `conf_radius < width`.
    /// Returns the newly activated children (empty if `u` stays active).
    pub fn record(&mut self, u: SubtreeRef, reward: bool) -> Result<Vec<SubtreeRef>> {
        let mut s = self
            .stats(u)
            .ok_or_else(|| Error::structural(format!("subtree {u} is not active")))?;
        self.order.remove(&(Reverse(Score(self.index(&s))), u));
        s.record(reward);
        let children = self.tree.children(u);
        if !children.is_empty() && conf_radius(s.pulls, &self.cfg) < self.tree.width(u) {
            self.stats[u.index()] = None;
            let children = children.to_vec();
            for &c in &children {
                self.activate(c);
            }
            return Ok(children);
        }
        self.stats[u.index()] = Some(s);
        self.order.insert((Reverse(Score(self.index(&s))), u));
        Ok(Vec::new())
    }

    /// Checks that the active subtrees partition the leaves.
    pub fn check_partition(&self) -> Result<()> {
        let mut owner = vec![None::<NodeId>; self.tree.len()];
        for u in self.active() {
            for &x in self.tree.leaves_under(u) {
                if let Some(prev) = owner[x.index()].replace(u) {
                    return Err(Error::structural(format!("leaf {x} covered by both {prev} and {u}")));
                }
            }
        }
        match self.tree.leaves().iter().find(|x| owner[x.index()].is_none()) {
            Some(x) => Err(Error::structural(format!("leaf {x} is not covered"))),
            None => Ok(()),
        }
    }
}

impl SlotPolicy for Zooming {
    fn select(&self, upper: &[NodeId], rng: &mut SlotRng) -> Result<Choice> {
        let u = if self.correlation && !upper.is_empty() {
            let cap = |u: SubtreeRef| self.tree.subtree_distance_to_set(u, upper);
            self.best(Some(&cap))?
        } else {
            self.best(None)?
        };
        Ok(Choice {
            doc: self.tree.sample_leaf(u, &mut rng.leaf),
            arm: u.index(),
            region: u,
            prob: 1.0,
        })
    }

    fn update(&mut self, choice: &Choice, _upper: &[NodeId], reward: bool) -> Result<()> {
        self.record(choice.region, reward).map(|_| ())
    }

    fn active_count(&self) -> usize {
        self.order.len()
    }

    fn box_clone(&self) -> Box<dyn SlotPolicy> {
        Box::new(self.clone())
    }
}

/// Plain bandit used inside each grid phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridInner {
    Ucb1,
    Exp3,
}

#[derive(Clone, Debug)]
enum InnerState {
    Ucb(Ucb1),
    Exp(Exp3),
}

/// Grid meta-algorithm: phase `i` treats the depth-`i` subtrees (plus any
/// shallower leaves) as arms for `ceil(k ε^{-2i})` rounds, `k` being the arm
/// count. The deepest phase runs indefinitely.
#[derive(Clone, Debug)]
pub struct Grid {
    tree: Arc<DocTree>,
    kind: GridInner,
    cfg: HorizonConfig,
    exp3_gamma: Option<f64>,
    replay: bool,
    phase: usize,
    remaining: Option<u64>,
    inner: InnerState,
    /// Samples of the current phase, replayed into the next one if enabled.
    log: Vec<(NodeId, bool)>,
}

/// Depth-`i` subtrees together with leaves above depth `i`: a partition of
/// the leaves.
pub fn grid_arms(tree: &DocTree, depth: usize) -> Vec<SubtreeRef> {
    tree.preorder()
        .iter()
        .copied()
        .filter(|&v| tree.depth(v) == depth || (tree.depth(v) < depth && tree.is_leaf(v)))
        .collect()
}

/// Rounds in grid phase `i` with `arms` arms: `ceil(arms * ε^{-2i})`.
pub fn grid_phase_length(arms: usize, epsilon: f64, phase: usize) -> u64 {
    (arms as f64 * epsilon.powi(-2 * phase as i32)).ceil() as u64
}

impl Grid {
    pub fn new(
        tree: Arc<DocTree>,
        kind: GridInner,
        cfg: HorizonConfig,
        exp3_gamma: Option<f64>,
        replay: bool,
    ) -> Result<Self> {
        let mut g = Grid {
            inner: InnerState::Ucb(Ucb1::new(vec![tree.root()], cfg)?),
            tree,
            kind,
            cfg,
            exp3_gamma,
            replay,
            phase: 0,
            remaining: None,
            log: Vec::new(),
        };
        g.start_phase(0)?;
        Ok(g)
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    /// Rounds left in the current phase; `None` for the final phase.
    pub fn remaining(&self) -> Option<u64> {
        self.remaining
    }

    pub fn arms(&self) -> &[NodeId] {
        match &self.inner {
            InnerState::Ucb(u) => u.arms(),
            InnerState::Exp(e) => e.arms(),
        }
    }

    fn start_phase(&mut self, phase: usize) -> Result<()> {
        let arms = grid_arms(&self.tree, phase);
        let last = phase >= self.tree.max_depth();
        let length = grid_phase_length(arms.len(), self.tree.epsilon(), phase);
        let horizon = if last {
            self.cfg.horizon
        } else {
            length.min(self.cfg.horizon).max(1)
        };
        let cfg = HorizonConfig::new(horizon, self.cfg.optimistic)?;
        self.inner = match self.kind {
            GridInner::Ucb1 => InnerState::Ucb(Ucb1::new(arms.clone(), cfg)?),
            GridInner::Exp3 => {
                let gamma = self
                    .exp3_gamma
                    .unwrap_or_else(|| exp3_default_gamma(arms.len(), horizon));
                InnerState::Exp(Exp3::new(arms.clone(), gamma)?)
            }
        };
        self.phase = phase;
        self.remaining = (!last).then_some(length);
        let log = std::mem::take(&mut self.log);
        if self.replay {
            for (leaf, reward) in log {
                let arm = arms
                    .iter()
                    .position(|&a| self.tree.is_ancestor(a, leaf))
                    .expect("arms partition the leaves");
                self.feed(arm, reward)?;
            }
        }
        Ok(())
    }

    fn feed(&mut self, arm: usize, reward: bool) -> Result<()> {
        match &mut self.inner {
            InnerState::Ucb(u) => u.record(arm, reward),
            InnerState::Exp(e) => {
                let p = e.probabilities()[arm];
                e.record(arm, p, reward)
            }
        }
    }
}

impl SlotPolicy for Grid {
    fn select(&self, upper: &[NodeId], rng: &mut SlotRng) -> Result<Choice> {
        let inner = match &self.inner {
            InnerState::Ucb(u) => u.select(upper, rng)?,
            InnerState::Exp(e) => e.select(upper, rng)?,
        };
        Ok(Choice {
            doc: self.tree.sample_leaf(inner.region, &mut rng.leaf),
            ..inner
        })
    }

    fn update(&mut self, choice: &Choice, _upper: &[NodeId], reward: bool) -> Result<()> {
        match &mut self.inner {
            InnerState::Ucb(u) => u.record(choice.arm, reward)?,
            InnerState::Exp(e) => e.record(choice.arm, choice.prob, reward)?,
        }
        if self.replay {
            self.log.push((choice.doc, reward));
        }
        if let Some(left) = self.remaining.as_mut() {
            *left -= 1;
            if *left == 0 {
                self.start_phase(self.phase + 1)?;
            }
        }
        Ok(())
    }

    fn active_count(&self) -> usize {
        self.arms().len()
    }

    fn box_clone(&self) -> Box<dyn SlotPolicy> {
        Box::new(self.clone())
    }
}
