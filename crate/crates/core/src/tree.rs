//! Finite truncations of rooted trees stored as a breadth-first arena.
//!
//! Node ids are assigned in breadth-first order, so every parent id is smaller
//! than its children's ids and the children of a node occupy a contiguous id
//! range. Bottom-up passes are plain reverse iterations over the arena.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub first_child: u32,
    pub child_count: u32,
    pub depth: u32,
    pub backbone: bool,
}

/// How the tree was produced; decides which depth-`D` vertices are frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    /// Backbone only; every vertex has an infinite line of descent.
    Backbone,
    /// Backbone plus finite bushes (Harris decomposition).
    Conditioned,
    /// Plain Galton-Watson tree, no conditioning.
    Unconditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    truncation_depth: u32,
    kind: TreeKind,
}

impl Tree {
    #[inline]
    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn truncation_depth(&self) -> u32 {
        self.truncation_depth
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    #[inline]
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn ids(&self) -> impl DoubleEndedIterator<Item = NodeId> + ExactSizeIterator {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    #[inline]
    pub fn children(
        &self,
        id: NodeId,
    ) -> impl DoubleEndedIterator<Item = NodeId> + ExactSizeIterator {
        let n = &self.nodes[id.index()];
        (n.first_child..n.first_child + n.child_count).map(NodeId)
    }

    #[inline]
    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.index()].parent
    }

    #[inline]
    pub fn depth(&self, id: NodeId) -> u32 {
        self.nodes[id.index()].depth
    }

    #[inline]
    pub fn is_backbone(&self, id: NodeId) -> bool {
        self.nodes[id.index()].backbone
    }

    /// Vertices whose depth reaches the truncation level and whose subtree
    /// was cut there: backbone vertices at depth `D`, or any depth-`D` vertex
    /// of an unconditioned tree.
    #[inline]
    pub fn is_frontier(&self, id: NodeId) -> bool {
        let n = &self.nodes[id.index()];
        n.depth == self.truncation_depth && (n.backbone || self.kind == TreeKind::Unconditioned)
    }

    /// Whether the vertex belongs to the part of the tree that carries the
    /// escape structure (backbone; every vertex of an unconditioned tree).
    #[inline]
    pub fn is_structural(&self, id: NodeId) -> bool {
        self.kind == TreeKind::Unconditioned || self.nodes[id.index()].backbone
    }

    pub fn backbone_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.backbone).count()
    }

    /// Highest depth of any vertex.
    pub fn height(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Builds a tree from child lists over arbitrary labels, relabelling in
    /// breadth-first order while keeping each child list's order.
    pub fn from_children(
        children: &[Vec<usize>],
        backbone: &[bool],
        root: usize,
        truncation_depth: u32,
        kind: TreeKind,
    ) -> Result<Tree> {
        if children.len() != backbone.len() || root >= children.len() {
            return Err(Error::InvalidSet("child lists and flags disagree".into()));
        }
        let mut b = TreeBuilder::new(backbone[root], children.len().max(1));
        let mut label = vec![root];
        let mut i = 0;
        while i < label.len() {
            let old = label[i];
            for &c in &children[old] {
                if c >= children.len() {
                    return Err(Error::InvalidSet(format!("child label {c} out of range")));
                }
                label.push(c);
                if label.len() > children.len() {
                    return Err(Error::InvalidSet(
                        "child lists contain a cycle or shared child".into(),
                    ));
                }
            }
            b.push_children(NodeId(i as u32), children[old].iter().map(|&c| backbone[c]))?;
            i += 1;
        }
        Ok(b.finish(truncation_depth, kind))
    }

    /// Complete `d`-ary backbone tree of depth `depth`.
    pub fn regular(d: usize, depth: u32) -> Result<Tree> {
        let mut b = TreeBuilder::new(true, crate::treegen::DEFAULT_MAX_NODES);
        let mut i = 0;
        while i < b.len() {
            let id = NodeId(i as u32);
            if b.depth(id) < depth {
                b.push_children(id, std::iter::repeat_n(true, d))?;
            }
            i += 1;
        }
        Ok(b.finish(depth, TreeKind::Backbone))
    }

    fn child_lists(&self) -> Vec<Vec<usize>> {
        self.ids()
            .map(|id| self.children(id).map(NodeId::index).collect())
            .collect()
    }

    fn flags(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.backbone).collect()
    }

    /// Same tree with every child list randomly permuted.
    pub fn shuffled(&self, seed: u64) -> Tree {
        let mut rng = rng::stream(seed, 0);
        let mut lists = self.child_lists();
        for l in lists.iter_mut() {
            l.shuffle(&mut rng);
        }
        Tree::from_children(&lists, &self.flags(), 0, self.truncation_depth, self.kind)
            .expect("valid relabelling")
    }

    /// The backbone vertices only, in the same breadth-first order.
    pub fn backbone_restriction(&self) -> Tree {
        let lists: Vec<Vec<usize>> = self
            .ids()
            .map(|id| {
                self.children(id)
                    .filter(|c| self.is_backbone(*c))
                    .map(NodeId::index)
                    .collect()
            })
            .collect();
        Tree::from_children(
            &lists,
            &self.flags(),
            0,
            self.truncation_depth,
            TreeKind::Backbone,
        )
        .expect("valid restriction")
    }

    /// The subtree `T_x` with a new root attached above `x` (the planted tree `T_x'`).
    pub fn planted_subtree(&self, x: NodeId) -> Tree {
        let mut b = TreeBuilder::new(true, self.len() + 1);
        b.push_children(NodeId::ROOT, std::iter::once(self.is_backbone(x)))
            .expect("small");
        let mut map = vec![x];
        let mut i = 0;
        while i < map.len() {
            let old = map[i];
            let kids: Vec<NodeId> = self.children(old).collect();
            b.push_children(
                NodeId(i as u32 + 1),
                kids.iter().map(|c| self.is_backbone(*c)),
            )
            .expect("bounded by source");
            map.extend(kids);
            i += 1;
        }
        let depth = self.truncation_depth + 1 - self.depth(x);
        b.finish(depth, self.kind)
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        if self.nodes[0].parent.is_some() || self.nodes[0].depth != 0 {
            return Err("root must have no parent and depth 0".into());
        }
        for id in self.ids() {
            let n = self.node(id);
            if id != NodeId::ROOT && n.parent.is_none() {
                return Err(format!("{id:?} has no parent"));
            }
            let mut backbone_children = 0;
            for c in self.children(id) {
                let cn = self.node(c);
                if cn.parent != Some(id) {
                    return Err(format!("{c:?} does not point back to {id:?}"));
                }
                if cn.depth != n.depth + 1 {
                    return Err(format!("{c:?} depth mismatch"));
                }
                if cn.backbone && !n.backbone {
                    return Err(format!("backbone {c:?} below non-backbone {id:?}"));
                }
                backbone_children += cn.backbone as usize;
            }
            if n.backbone && n.depth < self.truncation_depth && backbone_children == 0 {
                return Err(format!(
                    "backbone {id:?} at depth {} has no backbone child",
                    n.depth
                ));
            }
            if n.backbone && n.depth > self.truncation_depth {
                return Err(format!("backbone {id:?} below truncation depth"));
            }
        }
        Ok(())
    }

    /// Graphviz rendering; backbone vertices are filled.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph gw {\n  node [shape=circle, label=\"\", width=0.15];\n");
        for id in self.ids() {
            let n = self.node(id);
            let style = if n.backbone {
                "style=filled, fillcolor=black"
            } else {
                "color=gray60"
            };
            let _ = writeln!(s, "  n{} [{}];", id.0, style);
        }
        for id in self.ids() {
            for c in self.children(id) {
                let _ = writeln!(s, "  n{} -> n{};", id.0, c.0);
            }
        }
        s.push_str("}\n");
        s
    }

    /// One vertex per line: `id parent_id depth backbone_flag`, root parent `-1`.
    pub fn to_lines(&self) -> String {
        let mut s = String::with_capacity(self.len() * 16);
        for id in self.ids() {
            let n = self.node(id);
            let parent = n.parent.map_or(-1, |p| p.0 as i64);
            let _ = writeln!(s, "{} {} {} {}", id.0, parent, n.depth, n.backbone as u8);
        }
        s
    }

    /// Parses the line format written by [`Tree::to_lines`].
    pub fn from_lines(text: &str, truncation_depth: u32, kind: TreeKind) -> Result<Tree> {
        let mut parents = Vec::new();
        let mut flags = Vec::new();
        for (lineno, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || {
                Error::Format(format!(
                    "line {}: expected `id parent depth flag`",
                    lineno + 1
                ))
            };
            if f.len() != 4 {
                return Err(bad());
            }
            let id: usize = f[0].parse().map_err(|_| bad())?;
            let parent: i64 = f[1].parse().map_err(|_| bad())?;
            if id != parents.len() {
                return Err(Error::Format(format!(
                    "line {}: ids must be consecutive",
                    lineno + 1
                )));
            }
            parents.push(parent);
            flags.push(f[3] == "1");
        }
        let mut lists = vec![Vec::new(); parents.len()];
        for (id, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= id {
                return Err(Error::Format(format!("vertex {id} has invalid parent {p}")));
            }
            lists[p as usize].push(id);
        }
        Tree::from_children(&lists, &flags, 0, truncation_depth, kind)
    }
}

/// Incremental breadth-first construction: children of vertex `i` must be
/// pushed before those of vertex `i + 1`.
#[derive(Debug)]
pub(crate) struct TreeBuilder {
    nodes: Vec<Node>,
    next_parent: u32,
    max_nodes: usize,
}

impl TreeBuilder {
    pub fn new(root_backbone: bool, max_nodes: usize) -> Self {
        let root = Node {
            parent: None,
            first_child: 1,
            child_count: 0,
            depth: 0,
            backbone: root_backbone,
        };
        Self {
            nodes: vec![root],
            next_parent: 0,
            max_nodes,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn depth(&self, id: NodeId) -> u32 {
        self.nodes[id.index()].depth
    }

    #[inline]
    pub fn is_backbone(&self, id: NodeId) -> bool {
        self.nodes[id.index()].backbone
    }

    /// Appends the children of `parent`, which must be the next unexpanded vertex.
    pub fn push_children(
        &mut self,
        parent: NodeId,
        flags: impl Iterator<Item = bool>,
    ) -> Result<()> {
        debug_assert!(
            parent.0 >= self.next_parent,
            "children pushed out of breadth-first order"
        );
        // Vertices skipped since the last expansion are leaves.
        while self.next_parent < parent.0 {
            let len = self.nodes.len() as u32;
            let n = &mut self.nodes[self.next_parent as usize];
            n.first_child = len;
            n.child_count = 0;
            self.next_parent += 1;
        }
        let first = self.nodes.len() as u32;
        let depth = self.nodes[parent.index()].depth + 1;
        for flag in flags {
            if self.nodes.len() >= self.max_nodes {
                return Err(Error::ResourceLimit {
                    what: "tree",
                    limit: self.max_nodes,
                });
            }
            self.nodes.push(Node {
                parent: Some(parent),
                first_child: 0,
                child_count: 0,
                depth,
                backbone: flag,
            });
        }
        let count = self.nodes.len() as u32 - first;
        let n = &mut self.nodes[parent.index()];
        n.first_child = first;
        n.child_count = count;
        self.next_parent = parent.0 + 1;
        Ok(())
    }

    pub fn finish(mut self, truncation_depth: u32, kind: TreeKind) -> Tree {
        let len = self.nodes.len() as u32;
        for n in self.nodes[self.next_parent as usize..].iter_mut() {
            n.first_child = len;
            n.child_count = 0;
        }
        Tree {
            nodes: self.nodes,
            truncation_depth,
            kind,
        }
    }
}
