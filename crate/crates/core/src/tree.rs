//! Rooted document trees and the ε-exponential tree metric.
//!
//! Documents are the leaves of a [`DocTree`]. Two nodes `x != y` are at
//! distance `c * ε^depth(lca(x, y))`, where depth is counted from the root
//! (root = 0). The root subtree therefore has diameter `c` and every level
//! down shrinks the diameter by a factor of ε. The metric is an ultrametric.
//!
//! A tree may also carry explicit edge weights, in which case
//! [`DocTree::path_distance`] gives the weighted shortest-path metric used by
//! the generative user model.

use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// Dense node identifier. Node ids index every per-node table in the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A subtree, designated by its root node.
pub type SubtreeRef = NodeId;

/// An immutable rooted tree whose leaves are documents.
#[derive(Clone, Debug)]
pub struct DocTree {
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    depth: Vec<u32>,
    /// Leaves in depth-first order, so every subtree owns a contiguous range.
    leaves: Vec<NodeId>,
    leaf_range: Vec<(u32, u32)>,
    /// Pre-order entry/exit times for O(1) ancestor tests.
    enter: Vec<u32>,
    exit: Vec<u32>,
    preorder: Vec<NodeId>,
    epsilon: f64,
    scale: f64,
    /// `scale * epsilon^d` for every depth `d` present in the tree (plus one).
    pow: Vec<f64>,
    edge_weight: Option<Vec<f64>>,
}

impl DocTree {
    /// Builds a tree from a parent table. Exactly one entry must be `None`.
    ///
    /// `edge_weights[v]` is the weight of the edge from `v` to its parent; the
    /// root entry is ignored.
    pub fn from_parents(
        parents: &[Option<usize>],
        epsilon: f64,
        scale: f64,
        edge_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::param(format!("scale must be positive, got {scale}")));
        }
        let n = parents.len();
        if n == 0 {
            return Err(Error::structural("tree has no nodes"));
        }
        if n > u32::MAX as usize {
            return Err(Error::structural("too many nodes"));
        }
        let mut root = None;
        let mut children = vec![Vec::new(); n];
        for (v, p) in parents.iter().enumerate() {
            match *p {
                None => {
                    if root.replace(v).is_some() {
                        return Err(Error::structural("more than one root"));
                    }
                }
                Some(p) if p >= n => {
                    return Err(Error::structural(format!("node {v} has unknown parent {p}")));
                }
                Some(p) if p == v => {
                    return Err(Error::structural(format!("node {v} is its own parent")));
                }
                Some(p) => children[p].push(NodeId::from(v)),
            }
        }
        let root = root.ok_or_else(|| Error::structural("no root"))?;
        if root != 0 {
            return Err(Error::structural("root must be node 0"));
        }
        if let Some(w) = &edge_weights {
            if w.len() != n {
                return Err(Error::structural(format!("{} edge weights for {n} nodes", w.len())));
            }
            if let Some(v) = (1..n).find(|&v| !(w[v] >= 0.0 && w[v].is_finite())) {
                return Err(Error::param(format!("edge weight of node {v} is {}", w[v])));
            }
        }

        // Iterative DFS: depths, entry/exit times, leaf order.
        let mut depth = vec![u32::MAX; n];
        let mut enter = vec![0u32; n];
        let mut exit = vec![0u32; n];
        let mut leaf_range = vec![(0u32, 0u32); n];
        let mut leaves = Vec::new();
        let mut clock = 0u32;
        let mut preorder = vec![NodeId::from(root)];
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        depth[root] = 0;
        enter[root] = clock;
        leaf_range[root].0 = 0;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < children[v].len() {
                let c = children[v][*next].index();
                *next += 1;
                if depth[c] != u32::MAX {
                    return Err(Error::structural(format!("node {c} reached twice")));
                }
                depth[c] = depth[v] + 1;
                clock += 1;
                enter[c] = clock;
                preorder.push(NodeId::from(c));
                leaf_range[c].0 = leaves.len() as u32;
                stack.push((c, 0));
            } else {
                if children[v].is_empty() {
                    leaves.push(NodeId::from(v));
                }
                exit[v] = clock;
                leaf_range[v].1 = leaves.len() as u32;
                stack.pop();
            }
        }
        if let Some(v) = depth.iter().position(|&d| d == u32::MAX) {
            return Err(Error::structural(format!("node {v} is unreachable from the root")));
        }
        let max_depth = *depth.iter().max().unwrap_or(&0) as usize;
        let pow = (0..=max_depth + 1).map(|d| scale * epsilon.powi(d as i32)).collect();
        Ok(DocTree {
            parent: parents.iter().map(|p| p.map(NodeId::from)).collect(),
            children,
            depth,
            leaves,
            leaf_range,
            enter,
            exit,
            preorder,
            epsilon,
            scale,
            pow,
            edge_weight: edge_weights,
        })
    }

    /// A complete `branching`-ary tree with `branching^depth` leaves,
    /// numbered breadth-first from the root.
    pub fn balanced(branching: usize, depth: usize, epsilon: f64) -> Result<Self> {
        if branching < 2 {
            return Err(Error::param(format!("branching must be >= 2, got {branching}")));
        }
        if depth < 1 {
            return Err(Error::param("depth must be >= 1"));
        }
        check_epsilon(epsilon)?;
        let mut total: usize = 0;
        let mut level: usize = 1;
        for _ in 0..=depth {
            total = total
                .checked_add(level)
                .filter(|&t| t <= u32::MAX as usize / 2)
                .ok_or_else(|| Error::param("tree too large"))?;
            level = level.saturating_mul(branching);
        }
        let parents: Vec<Option<usize>> = (0..total)
            .map(|v| if v == 0 { None } else { Some((v - 1) / branching) })
            .collect();
        Self::from_parents(&parents, epsilon, 1.0, None)
    }

    /// Same tree with a different metric constant `c`.
    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::param(format!("scale must be positive, got {scale}")));
        }
        self.scale = scale;
        self.pow = (0..self.pow.len())
            .map(|d| scale * self.epsilon.powi(d as i32))
            .collect();
        Ok(self)
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len()).map(NodeId::from)
    }

    /// Every node, parents before children.
    pub fn preorder(&self) -> &[NodeId] {
        &self.preorder
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v.index() < self.len()
    }

    pub fn check(&self, v: NodeId) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::param(format!("unknown node {v}")))
        }
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.parent[v.index()]
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v.index()]
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        self.children[v.index()].is_empty()
    }

    pub fn depth(&self, v: NodeId) -> usize {
        self.depth[v.index()] as usize
    }

    pub fn max_depth(&self) -> usize {
        self.pow.len() - 2
    }

    /// Leaves of the subtree rooted at `u`, in depth-first order.
    pub fn leaves_under(&self, u: SubtreeRef) -> &[NodeId] {
        let (lo, hi) = self.leaf_range[u.index()];
        &self.leaves[lo as usize..hi as usize]
    }

    /// Position of `leaf` in [`DocTree::leaves`], if it is a leaf.
    pub fn leaf_position(&self, leaf: NodeId) -> Option<usize> {
        let (lo, hi) = self.leaf_range[leaf.index()];
        (self.is_leaf(leaf) && hi == lo + 1).then_some(lo as usize)
    }

    /// True when `a` is `b` or an ancestor of `b`.
    #[inline]
    pub fn is_ancestor(&self, a: NodeId, b: NodeId) -> bool {
        let (a, b) = (a.index(), b.index());
        self.enter[a] <= self.enter[b] && self.exit[b] <= self.exit[a]
    }

    /// Ancestor of `v` at depth `d <= depth(v)`.
    pub fn ancestor_at(&self, mut v: NodeId, d: usize) -> NodeId {
        while self.depth(v) > d {
            v = self.parent[v.index()].expect("non-root has a parent");
        }
        v
    }

    pub fn lca(&self, x: NodeId, y: NodeId) -> NodeId {
        if self.is_ancestor(x, y) {
            return x;
        }
        let mut v = x;
        while !self.is_ancestor(v, y) {
            v = self.parent[v.index()].expect("root is an ancestor of everything");
        }
        v
    }

    /// Depth of the least common ancestor of `x` and `y`.
    pub fn lca_depth(&self, x: NodeId, y: NodeId) -> Result<usize> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.depth(self.lca(x, y)))
    }

    /// `c * ε^depth`.
    #[inline]
    pub fn level_width(&self, depth: usize) -> f64 {
        self.pow
            .get(depth)
            .copied()
            .unwrap_or_else(|| self.scale * self.epsilon.powi(depth as i32))
    }

    /// The ε-exponential tree distance between two nodes.
    pub fn distance(&self, x: NodeId, y: NodeId) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.dist(x, y))
    }

    #[inline]
    pub(crate) fn dist(&self, x: NodeId, y: NodeId) -> f64 {
        if x == y {
            0.0
        } else {
            self.level_width(self.depth(self.lca(x, y)))
        }
    }

    /// Diameter bound `c * ε^depth(u)` of the subtree rooted at `u`.
    pub fn width(&self, u: SubtreeRef) -> f64 {
        self.level_width(self.depth(u))
    }

    /// Upper bound on `D(x, S)` valid for every leaf `x` under `u`: the width
    /// of `u` when `S` has a document inside `u`, otherwise the exact
    /// distance from `u`'s leaves to the nearest member of `S`.
    ///
    /// Returns `f64::INFINITY` for an empty `S`.
    pub fn subtree_distance_to_set(&self, u: SubtreeRef, set: &[NodeId]) -> f64 {
        let mut best = f64::INFINITY;
        let mut deepest = None::<usize>;
        for &y in set {
            if self.is_ancestor(u, y) {
                return self.width(u);
            }
            let d = self.depth(self.lca(u, y));
            if deepest.is_none_or(|cur| d > cur) {
                deepest = Some(d);
            }
        }
        if let Some(d) = deepest {
            best = self.level_width(d);
        }
        best
    }

    /// Picks a leaf under `u`, choosing uniformly among children at every
    /// branch on the way down.
    pub fn sample_leaf<R: Rng + ?Sized>(&self, u: SubtreeRef, rng: &mut R) -> NodeId {
        let mut v = u;
        loop {
            let ch = &self.children[v.index()];
            if ch.is_empty() {
                return v;
            }
            v = ch[rng.gen_range(0..ch.len())];
        }
    }

    pub fn has_edge_weights(&self) -> bool {
        self.edge_weight.is_some()
    }

    /// Length of the edge from `v` up to its parent: the configured weight if
    /// the tree carries weights, otherwise `D(v, parent(v)) = c * ε^depth(parent)`.
    /// Zero for the root.
    pub fn edge_length(&self, v: NodeId) -> f64 {
        match self.parent[v.index()] {
            None => 0.0,
            Some(p) => match &self.edge_weight {
                Some(w) => w[v.index()],
                None => self.width(p),
            },
        }
    }

    /// Shortest-path distance using [`DocTree::edge_length`] as edge weights.
    pub fn path_distance(&self, x: NodeId, y: NodeId) -> f64 {
        let z = self.lca(x, y);
        self.length_to_ancestor(x, z) + self.length_to_ancestor(y, z)
    }

    fn length_to_ancestor(&self, mut v: NodeId, anc: NodeId) -> f64 {
        let mut total = 0.0;
        while v != anc {
            total += self.edge_length(v);
            v = self.parent[v.index()].expect("ancestor above");
        }
        total
    }

    /// Writes the plain-text description: a header with `epsilon` and `scale`,
    /// then one line per node `id parent depth [weight]` (`-` for no parent).
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# rankbandit tree")?;
        writeln!(out, "epsilon {}", self.epsilon)?;
        writeln!(out, "scale {}", self.scale)?;
        for v in self.nodes() {
            let parent = match self.parent(v) {
                Some(p) => p.0.to_string(),
                None => "-".to_string(),
            };
            match &self.edge_weight {
                Some(w) if v.index() != 0 => writeln!(out, "{} {} {} {}", v.0, parent, self.depth(v), w[v.index()])?,
                _ => writeln!(out, "{} {} {}", v.0, parent, self.depth(v))?,
            }
        }
        Ok(())
    }

    /// Parses the format produced by [`DocTree::write_text`]. `origin` names the
    /// source in error messages.
    pub fn read_text<R: BufRead>(input: R, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut epsilon = None;
        let mut scale = 1.0;
        let mut rows: Vec<(usize, Option<usize>, usize, Option<f64>)> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| parse_err(lineno, format!("not a number: {s:?}")))
            };
            let int = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| parse_err(lineno, format!("not an integer: {s:?}")))
            };
            match fields[0] {
                "epsilon" if fields.len() == 2 => epsilon = Some(num(fields[1])?),
                "scale" if fields.len() == 2 => scale = num(fields[1])?,
                _ if (3..=4).contains(&fields.len()) => {
                    let id = int(fields[0])?;
                    let parent = if fields[1] == "-" { None } else { Some(int(fields[1])?) };
                    let depth = int(fields[2])?;
                    let weight = fields.get(3).map(|s| num(s)).transpose()?;
                    rows.push((id, parent, depth, weight));
                }
                _ => return Err(parse_err(lineno, format!("unrecognized line {line:?}"))),
            }
        }
        let epsilon = epsilon.ok_or_else(|| parse_err(0, "missing epsilon header".into()))?;
        rows.sort_by_key(|r| r.0);
        if let Some((pos, r)) = rows.iter().enumerate().find(|(i, r)| r.0 != *i) {
            return Err(parse_err(
                0,
                format!("node ids are not dense: expected {pos}, found {}", r.0),
            ));
        }
        let parents: Vec<Option<usize>> = rows.iter().map(|r| r.1).collect();
        let weighted = rows.iter().skip(1).filter(|r| r.3.is_some()).count();
        let weights = if weighted == 0 {
            None
        } else if weighted == rows.len() - 1 {
            Some(rows.iter().map(|r| r.3.unwrap_or(0.0)).collect())
        } else {
            return Err(parse_err(
                0,
                "either every non-root node has a weight or none does".into(),
            ));
        };
        let tree = DocTree::from_parents(&parents, epsilon, scale, weights)?;
        for r in &rows {
            if tree.depth(NodeId::from(r.0)) != r.2 {
                return Err(parse_err(
                    0,
                    format!(
                        "node {} declares depth {} but sits at depth {}",
                        r.0,
                        r.2,
                        tree.depth(NodeId::from(r.0))
                    ),
                ));
            }
        }
        Ok(tree)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("epsilon must lie in (0, 1), got {epsilon}")))
    }
}
