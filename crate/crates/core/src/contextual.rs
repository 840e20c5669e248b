//! Contextual zooming for a lower slot, where the context is the set of
//! documents already shown above it.
//!
//! Contexts live in a context tree whose level-`l` nodes are unordered
//! tuples of level-`l` document-tree nodes. The policy keeps active
//! rectangles `(u, û)` pairing a document subtree with a context node. The
//! rectangles containing a given context partition the documents. Context
//! nodes are created lazily, only when a rectangle is split.

use std::cmp::Reverse;
use std::collections::HashMap;
use std::sync::Arc;

use crate::bandit::{conf_radius, ArmStats, Choice, HorizonConfig, IndexOrder, Score, SlotPolicy, SlotRng};
use crate::error::{Error, Result};
use crate::tree::{DocTree, NodeId, SubtreeRef};

/// An unordered tuple of documents, stored sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextTuple(Vec<NodeId>);

impl ContextTuple {
    pub fn new(mut docs: Vec<NodeId>) -> Self {
        docs.sort_unstable();
        ContextTuple(docs)
    }

    pub fn docs(&self) -> &[NodeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A context-tree node: a sorted tuple of document-tree nodes at one level.
/// A member that is a leaf shallower than the level stands for itself.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextNode(Vec<NodeId>);

impl ContextNode {
    pub fn new(mut members: Vec<NodeId>) -> Self {
        members.sort_unstable();
        ContextNode(members)
    }

    /// The root `(r, ..., r)` for contexts of size `size`.
    pub fn root(tree: &DocTree, size: usize) -> Self {
        ContextNode(vec![tree.root(); size])
    }

    /// The level-`level` node containing context `h`.
    pub fn containing(tree: &DocTree, h: &ContextTuple, level: usize) -> Self {
        ContextNode::new(
            h.docs()
                .iter()
                .map(|&x| tree.ancestor_at(x, level.min(tree.depth(x))))
                .collect(),
        )
    }

    pub fn members(&self) -> &[NodeId] {
        &self.0
    }

    pub fn is_terminal(&self, tree: &DocTree) -> bool {
        self.0.iter().all(|&v| tree.is_leaf(v))
    }

    /// Whether context `h` falls inside this node.
    pub fn contains(&self, tree: &DocTree, h: &ContextTuple) -> bool {
        if h.len() != self.0.len() {
            return false;
        }
        let level = self.0.iter().map(|&v| tree.depth(v)).max().unwrap_or(0);
        ContextNode::containing(tree, h, level) == *self
    }
}

/// Minimum total cost of a set of pairs `(a, b)` that uses every element of
/// both sides at least once; `f64::INFINITY` if exactly one side is empty.
pub fn min_cost_edge_cover(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    assert!(n <= 16 && m <= 16, "edge cover is exponential in the side sizes");
    let full = (1usize << n, 1usize << m);
    let mut dp = vec![f64::INFINITY; full.0 * full.1];
    dp[0] = 0.0;
    for a in 0..full.0 {
        for b in 0..full.1 {
            let cur = dp[a * full.1 + b];
            if cur.is_infinite() {
                continue;
            }
            for (i, row) in cost.iter().enumerate() {
                for (j, &c) in row.iter().enumerate() {
                    let (na, nb) = (a | 1 << i, b | 1 << j);
                    if (na, nb) == (a, b) {
                        continue;
                    }
                    let slot = &mut dp[na * full.1 + nb];
                    *slot = slot.min(cur + c);
                }
            }
        }
    }
    dp[full.0 * full.1 - 1]
}

/// Context distance between two document sets: four times the cheapest way
/// to enumerate both sets side by side, repetitions allowed, summing the
/// document distance of each aligned pair.
pub fn context_distance(tree: &DocTree, s: &[NodeId], t: &[NodeId]) -> f64 {
    context_distance_by(s, t, |x, y| tree.dist(x, y))
}

/// [`context_distance`] under an arbitrary document metric.
pub fn context_distance_by(s: &[NodeId], t: &[NodeId], metric: impl Fn(NodeId, NodeId) -> f64) -> f64 {
    let dedup = |v: &[NodeId]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (s, t) = (dedup(s), dedup(t));
    if s.is_empty() || t.is_empty() {
        return if s.len() == t.len() { 0.0 } else { f64::INFINITY };
    }
    let cost: Vec<Vec<f64>> = s
        .iter()
        .map(|&x| t.iter().map(|&y| if x == y { 0.0 } else { metric(x, y) }).collect())
        .collect();
    4.0 * min_cost_edge_cover(&cost)
}

/// Children of a context node: all sorted tuples obtained by replacing every
/// internal member with one of its children. Empty when every member is a
/// leaf.
pub fn build_context_children(tree: &DocTree, node: &ContextNode) -> Vec<ContextNode> {
    if node.is_terminal(tree) {
        return Vec::new();
    }
    let mut out: Vec<Vec<NodeId>> = vec![Vec::new()];
    for &v in node.members() {
        let options: &[NodeId] = if tree.is_leaf(v) {
            std::slice::from_ref(&v)
        } else {
            tree.children(v)
        };
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |&c| {
                    let mut next = prefix.clone();
                    next.push(c);
                    next
                })
            })
            .collect();
    }
    let mut nodes: Vec<ContextNode> = out.into_iter().map(ContextNode::new).collect();
    nodes.sort();
    nodes.dedup();
    nodes
}

/// `ε^l (4i + 1)`: the width of a level-`l` rectangle for contexts of size `i`
/// when the root has diameter 1.
pub fn rectangle_width(context_size: usize, level: usize, epsilon: f64) -> f64 {
    epsilon.powi(level as i32) * (4 * context_size + 1) as f64
}

/// Diameter bound of `u × û`: `diam(u) + 4 Σ_j diam(û_j)`, where an internal
/// node's diameter is its width and a single document's is 0. Equals
/// `c · rectangle_width(i, l, ε)` when everything is internal at level `l`.
pub fn rectangle_width_of(tree: &DocTree, u: SubtreeRef, node: &ContextNode) -> f64 {
    let diam = |v: NodeId| if tree.is_leaf(v) { 0.0 } else { tree.width(v) };
    diam(u) + 4.0 * node.members().iter().map(|&v| diam(v)).sum::<f64>()
}

#[derive(Clone, Debug)]
struct Rectangle {
    doc: SubtreeRef,
    context: usize,
    stats: ArmStats,
    width: f64,
    active: bool,
}

#[derive(Clone, Debug)]
struct ContextSlot {
    node: ContextNode,
    level: usize,
    /// Active rectangles with this context node, by descending index.
    order: IndexOrder<usize>,
}

/// Contextual zooming for contexts of a fixed size.
#[derive(Clone, Debug)]
pub struct ContextualZooming {
    tree: Arc<DocTree>,
    cfg: HorizonConfig,
    context_size: usize,
    correlation: bool,
    rects: Vec<Rectangle>,
    contexts: Vec<ContextSlot>,
    context_ids: HashMap<ContextNode, usize>,
    active: usize,
}

impl ContextualZooming {
    pub fn new(tree: Arc<DocTree>, cfg: HorizonConfig, context_size: usize) -> Self {
        let root = ContextNode::root(&tree, context_size);
        let mut z = ContextualZooming {
            tree,
            cfg,
            context_size,
            correlation: false,
            rects: Vec::new(),
            contexts: Vec::new(),
            context_ids: HashMap::new(),
            active: 0,
        };
        let c = z.context_id(root, 0);
        z.activate(z.tree.root(), c);
        z
    }

    /// Caps each rectangle's index at `D(u, S)` for the current context `S`.
    pub fn with_correlation(mut self, on: bool) -> Self {
        self.correlation = on;
        self
    }

    pub fn context_size(&self) -> usize {
        self.context_size
    }

    pub fn tree(&self) -> &Arc<DocTree> {
        &self.tree
    }

    fn context_id(&mut self, node: ContextNode, level: usize) -> usize {
        if let Some(&id) = self.context_ids.get(&node) {
            return id;
        }
        let id = self.contexts.len();
        self.contexts.push(ContextSlot {
            node: node.clone(),
            level,
            order: IndexOrder::new(),
        });
        self.context_ids.insert(node, id);
        id
    }

    fn index_of(&self, r: &Rectangle) -> f64 {
        r.width + r.stats.mean() + conf_radius(r.stats.pulls, &self.cfg)
    }

    fn activate(&mut self, doc: SubtreeRef, context: usize) {
        let width = rectangle_width_of(&self.tree, doc, &self.contexts[context].node);
        let rect = Rectangle {
            doc,
            context,
            stats: ArmStats::default(),
            width,
            active: true,
        };
        let id = self.rects.len();
        let key = (Reverse(Score(self.index_of(&rect))), id);
        self.rects.push(rect);
        self.contexts[context].order.insert(key);
        self.active += 1;
    }

    /// Ids of context nodes that contain `h`, from the root down.
    fn context_path(&self, h: &ContextTuple) -> Vec<usize> {
        let mut path = Vec::new();
        let mut level = 0;
        loop {
            let node = ContextNode::containing(&self.tree, h, level);
            let Some(&id) = self.context_ids.get(&node) else { break };
            path.push(id);
            if node.is_terminal(&self.tree) {
                break;
            }
            level += 1;
        }
        path
    }

    /// Active rectangles whose context node contains `h`.
    pub fn containing(&self, h: &ContextTuple) -> Vec<(SubtreeRef, ContextNode)> {
        self.context_path(h)
            .into_iter()
            .flat_map(|c| {
                self.contexts[c]
                    .order
                    .iter()
                    .map(move |&(_, r)| (self.rects[r].doc, self.contexts[c].node.clone()))
            })
            .collect()
    }

    /// Index of a rectangle (without the cap), if it is active.
    pub fn index(&self, doc: SubtreeRef, node: &ContextNode) -> Option<f64> {
        let &c = self.context_ids.get(node)?;
        self.contexts[c]
            .order
            .iter()
            .find(|&&(_, r)| self.rects[r].doc == doc)
            .map(|&(Reverse(Score(i)), _)| i)
    }

    /// Highest-index active rectangle containing `h`, with the correlation
    /// cap applied against `upper` when enabled. Ties go to the oldest
    /// rectangle.
    fn best(&self, h: &ContextTuple, upper: &[NodeId]) -> Result<usize> {
        let cap = |u: SubtreeRef| {
            if self.correlation && !upper.is_empty() {
                self.tree.subtree_distance_to_set(u, upper)
            } else {
                f64::INFINITY
            }
        };
        let mut best: Option<(f64, usize)> = None;
        for c in self.context_path(h) {
            for &(Reverse(Score(index)), r) in &self.contexts[c].order {
                if let Some((b, br)) = best {
                    if index < b || (index == b && r > br) {
                        break;
                    }
                }
                let v = index.min(cap(self.rects[r].doc));
                if best.is_none_or(|(b, br)| v > b || (v == b && r < br)) {
                    best = Some((v, r));
                }
            }
        }
        best.map(|(_, r)| r)
            .ok_or_else(|| Error::structural("no active rectangle contains the context"))
    }

    fn record(&mut self, id: usize, reward: bool) -> Result<()> {
        let rect = self
            .rects
            .get(id)
            .filter(|r| r.active)
            .ok_or_else(|| Error::structural(format!("rectangle {id} is not active")))?;
        let (context, old) = (rect.context, self.index_of(rect));
        self.contexts[context].order.remove(&(Reverse(Score(old)), id));
        let rect = &mut self.rects[id];
        rect.stats.record(reward);
        let rect = self.rects[id].clone();
        let doc_children: Vec<NodeId> = match self.tree.children(rect.doc) {
            [] => vec![rect.doc],
            ch => ch.to_vec(),
        };
        let node = &self.contexts[context].node;
        let context_children = build_context_children(&self.tree, node);
        let splittable = doc_children[0] != rect.doc || !context_children.is_empty();
        if splittable && conf_radius(rect.stats.pulls, &self.cfg) < rect.width {
            self.rects[id].active = false;
            self.active -= 1;
            let level = self.contexts[context].level;
            let contexts: Vec<usize> = if context_children.is_empty() {
                vec![context]
            } else {
                context_children
                    .into_iter()
                    .map(|n| self.context_id(n, level + 1))
                    .collect()
            };
            for &d in &doc_children {
                for &c in &contexts {
                    self.activate(d, c);
                }
            }
        } else {
            let key = (Reverse(Score(self.index_of(&rect))), id);
            self.contexts[context].order.insert(key);
        }
        Ok(())
    }

    /// Checks that for context `h` every leaf lies in exactly one active
    /// rectangle.
    pub fn check_point_partition(&self, h: &ContextTuple) -> Result<()> {
        let mut hits = vec![0usize; self.tree.len()];
        for (u, _) in self.containing(h) {
            for &x in self.tree.leaves_under(u) {
                hits[x.index()] += 1;
            }
        }
        match self.tree.leaves().iter().find(|x| hits[x.index()] != 1) {
            Some(x) => Err(Error::structural(format!(
                "leaf {x} lies in {} active rectangles",
                hits[x.index()]
            ))),
            None => Ok(()),
        }
    }
}

impl SlotPolicy for ContextualZooming {
    fn select(&self, upper: &[NodeId], rng: &mut SlotRng) -> Result<Choice> {
        if upper.len() != self.context_size {
            return Err(Error::structural(format!(
                "expected a context of {} documents, got {}",
                self.context_size,
                upper.len()
            )));
        }
        let h = ContextTuple::new(upper.to_vec());
        let r = self.best(&h, upper)?;
        let u = self.rects[r].doc;
        Ok(Choice {
            doc: self.tree.sample_leaf(u, &mut rng.leaf),
            arm: r,
            region: u,
            prob: 1.0,
        })
    }

    fn update(&mut self, choice: &Choice, _upper: &[NodeId], reward: bool) -> Result<()> {
        self.record(choice.arm, reward)
    }

    fn active_count(&self) -> usize {
        self.active
    }

    fn box_clone(&self) -> Box<dyn SlotPolicy> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> SlotRng {
        SlotRng {
            select: ChaCha8Rng::seed_from_u64(1),
            leaf: ChaCha8Rng::seed_from_u64(2),
        }
    }

    fn optimistic() -> HorizonConfig {
        HorizonConfig::new(1000, true).unwrap()
    }

    #[test]
    fn rectangle_width_examples() {
        assert_eq!(rectangle_width(0, 0, 0.837), 1.0);
        assert_eq!(rectangle_width(2, 0, 0.837), 9.0);
        assert!((rectangle_width(4, 3, 0.837) - 9.9684).abs() < 1e-4);
        let t = DocTree::balanced(2, 4, 0.837).unwrap();
        let v = NodeId(3);
        let node = ContextNode::new(vec![NodeId(4), NodeId(5)]);
        assert!((rectangle_width_of(&t, v, &node) - rectangle_width(2, 2, 0.837)).abs() < 1e-12);
        let x = t.leaves()[0];
        assert_eq!(rectangle_width_of(&t, x, &ContextNode::new(vec![t.leaves()[3]])), 0.0);
        assert_eq!(
            rectangle_width_of(&t, x, &ContextNode::new(vec![NodeId(1)])),
            4.0 * 0.837
        );
    }

    #[test]
    fn context_children_examples() {
        let t = DocTree::balanced(2, 3, 0.5).unwrap();
        let one = ContextNode::new(vec![NodeId(1)]);
        assert_eq!(build_context_children(&t, &one).len(), 2);
        let same = ContextNode::new(vec![NodeId(1), NodeId(1)]);
        assert_eq!(build_context_children(&t, &same).len(), 3);
        let diff = ContextNode::new(vec![NodeId(1), NodeId(2)]);
        assert_eq!(build_context_children(&t, &diff).len(), 4);
        let leaves = ContextNode::new(vec![t.leaves()[0], t.leaves()[1]]);
        assert!(build_context_children(&t, &leaves).is_empty());
    }

    #[test]
    fn context_distance_examples() {
        let t = DocTree::balanced(2, 3, 0.5).unwrap();
        let l = t.leaves();
        assert_eq!(context_distance(&t, &[l[0], l[3]], &[l[3], l[0]]), 0.0);
        assert_eq!(context_distance(&t, &[l[0]], &[l[5]]), 4.0 * t.dist(l[0], l[5]));
        // {l0, l4} vs {l1, l5}: match l0-l1 and l4-l5, both at distance 0.25
        assert_eq!(context_distance(&t, &[l[0], l[4]], &[l[5], l[1]]), 4.0 * 0.5);
        // one document against two: it must be paired with both
        let d = context_distance(&t, &[l[0]], &[l[1], l[2]]);
        assert_eq!(d, 4.0 * (0.25 + 0.5));
        assert_eq!(context_distance(&t, &[], &[]), 0.0);
        assert!(context_distance(&t, &[], &[l[0]]).is_infinite());
    }

    #[test]
    fn containment_follows_ancestors() {
        let t = DocTree::balanced(2, 3, 0.5).unwrap();
        let l = t.leaves();
        let h = ContextTuple::new(vec![l[7], l[0]]);
        let node = ContextNode::containing(&t, &h, 1);
        assert_eq!(node.members(), &[NodeId(1), NodeId(2)]);
        assert!(node.contains(&t, &h));
        assert!(!ContextNode::new(vec![NodeId(1), NodeId(1)]).contains(&t, &h));
        assert!(ContextNode::root(&t, 2).contains(&t, &h));
    }

    #[test]
    fn fresh_policy_plays_root_rectangle() {
        let t = Arc::new(DocTree::balanced(2, 3, 0.5).unwrap());
        let z = ContextualZooming::new(t.clone(), optimistic(), 1);
        let c = z.select(&[t.leaves()[2]], &mut rng()).unwrap();
        assert_eq!(c.region, t.root());
        assert!(z.select(&[], &mut rng()).is_err());
    }

    #[test]
    fn binary_doc_times_pair_context_splits_into_six() {
        let t = Arc::new(DocTree::balanced(2, 3, 0.5).unwrap());
        let mut z = ContextualZooming::new(t.clone(), optimistic(), 2);
        let upper = [t.leaves()[0], t.leaves()[7]];
        let c = z.select(&upper, &mut rng()).unwrap();
        z.update(&c, &upper, false).unwrap();
        // (root, (root, root)) -> 2 documents × 3 unordered pairs
        assert_eq!(z.active_count(), 6);
        z.check_point_partition(&ContextTuple::new(upper.to_vec())).unwrap();
        for a in t.leaves() {
            for b in t.leaves() {
                z.check_point_partition(&ContextTuple::new(vec![*a, *b])).unwrap();
            }
        }
    }

    #[test]
    fn terminal_rectangle_never_splits() {
        let t = Arc::new(crate::user::metricless_tree(2).unwrap());
        let mut z = ContextualZooming::new(t.clone(), optimistic(), 1);
        let upper = [t.leaves()[0]];
        let c = z.select(&upper, &mut rng()).unwrap();
        z.update(&c, &upper, true).unwrap();
        assert_eq!(z.active_count(), 4);
        for _ in 0..200 {
            let c = z.select(&upper, &mut rng()).unwrap();
            assert!(t.is_leaf(c.region));
            z.update(&c, &upper, true).unwrap();
        }
        assert_eq!(z.active_count(), 4);
    }

    #[test]
    fn cap_steers_away_from_upper_document() {
        let t = Arc::new(crate::user::metricless_tree(2).unwrap());
        let mut z = ContextualZooming::new(t.clone(), optimistic(), 1).with_correlation(true);
        let upper = [t.leaves()[0]];
        let c = z.select(&upper, &mut rng()).unwrap();
        z.update(&c, &upper, false).unwrap();
        // both leaf rectangles for this context are fresh; the cap zeroes the duplicate
        for _ in 0..20 {
            let c = z.select(&upper, &mut rng()).unwrap();
            assert_eq!(c.doc, t.leaves()[1]);
            z.update(&c, &upper, false).unwrap();
        }
    }

    #[test]
    fn split_rectangles_use_level_width() {
        let t = Arc::new(DocTree::balanced(2, 2, 0.5).unwrap());
        let mut z = ContextualZooming::new(t.clone(), optimistic(), 1);
        let upper = [t.leaves()[0]];
        let c = z.select(&upper, &mut rng()).unwrap();
        z.update(&c, &upper, false).unwrap();
        let h = ContextTuple::new(upper.to_vec());
        let cands = z.containing(&h);
        assert_eq!(cands.len(), 2);
        for (u, n) in &cands {
            assert_eq!(t.depth(*u), 1);
            assert_eq!(rectangle_width_of(&t, *u, n), rectangle_width(1, 1, 0.5));
            let index = z.index(*u, n).unwrap();
            assert_eq!(index, rectangle_width(1, 1, 0.5) + 1.0);
        }
    }
}
