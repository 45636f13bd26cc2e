//! Tree-shaped class hierarchies.
//!
//! Nodes are stored in a canonical order: sorted by level ascending (leaves
//! first, roots last), stable within a level with respect to the order in the
//! source file. Node ids are indices into that order, so leaf ids are exactly
//! `0..num_leaves()`.

use std::collections::HashMap;
use std::ops::Range;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a node in the canonical ordering.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("malformed hierarchy file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("hierarchy has no nodes")]
    Empty,
    #[error("hierarchy declares {0} levels, need at least 1")]
    NoLevels(usize),
    #[error("node `{node}`: level {level} outside 1..={levels}")]
    LevelOutOfRange { node: String, level: usize, levels: usize },
    #[error("node `{node}`: duplicate name")]
    DuplicateName { node: String },
    #[error("node `{node}`: multiple parents (`{first}` and `{second}`)")]
    MultipleParents { node: String, first: String, second: String },
    #[error("node `{node}`: unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("node `{node}`: orphan non-root at level {level}")]
    Orphan { node: String, level: usize },
    #[error("node `{node}`: root-level node has parent `{parent}`")]
    RootWithParent { node: String, parent: String },
    #[error("node `{node}`: level gap, level {level} but parent `{parent}` is at level {parent_level}")]
    LevelGap { node: String, level: usize, parent: String, parent_level: usize },
    #[error("node `{node}`: cycle in parent links")]
    Cycle { node: String },
    #[error("node `{node}`: internal node at level {level} has no children")]
    ChildlessInternal { node: String, level: usize },
    #[error("level {0} has no nodes")]
    EmptyLevel(usize),
    #[error("node id {id} is not a leaf")]
    NotALeaf { id: NodeId },
    #[error("node id {id} out of range ({len} nodes)")]
    UnknownId { id: NodeId, len: usize },
}

/// Which nodes count as mutually exclusive peers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerScope {
    /// Every other node on the same level.
    #[default]
    Level,
    /// Only nodes sharing the same parent; roots are peers of each other.
    Siblings,
}

impl std::str::FromStr for PeerScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "level" => Ok(PeerScope::Level),
            "siblings" => Ok(PeerScope::Siblings),
            other => Err(format!("unknown peer scope `{other}` (expected level|siblings)")),
        }
    }
}

/// On-disk representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyFile {
    pub name: String,
    pub levels: usize,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub name: String,
    pub level: usize,
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    /// 1 = leaf, `levels()` = root.
    pub level: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub peers: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    name: String,
    nodes: Vec<Node>,
    levels: usize,
    level_offsets: Vec<(usize, usize)>,
    t_matrix: Array2<bool>,
    p_matrix: Array2<bool>,
    peer_scope: PeerScope,
    peer_groups: Vec<Vec<NodeId>>,
    by_name: HashMap<String, NodeId>,
}

impl Hierarchy {
    /// Parses and validates a hierarchy file with level-wide peers.
    pub fn parse(text: &str) -> Result<Self, HierarchyError> {
        Self::parse_with_scope(text, PeerScope::Level)
    }

    pub fn parse_with_scope(text: &str, scope: PeerScope) -> Result<Self, HierarchyError> {
        let file: HierarchyFile = serde_json::from_str(text)?;
        Self::from_file(&file, scope)
    }

    pub fn from_file(file: &HierarchyFile, scope: PeerScope) -> Result<Self, HierarchyError> {
        if file.levels == 0 {
            return Err(HierarchyError::NoLevels(0));
        }
        if file.nodes.is_empty() {
            return Err(HierarchyError::Empty);
        }
        let levels = file.levels;

        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, rec) in file.nodes.iter().enumerate() {
            if rec.level == 0 || rec.level > levels {
                return Err(HierarchyError::LevelOutOfRange {
                    node: rec.name.clone(),
                    level: rec.level,
                    levels,
                });
            }
            if let Some(&prev) = seen.get(rec.name.as_str()) {
                let prev = &file.nodes[prev];
                return Err(match (&prev.parent, &rec.parent) {
                    (Some(a), Some(b)) if a != b => HierarchyError::MultipleParents {
                        node: rec.name.clone(),
                        first: a.clone(),
                        second: b.clone(),
                    },
                    _ => HierarchyError::DuplicateName { node: rec.name.clone() },
                });
            }
            seen.insert(&rec.name, i);
        }

        for rec in &file.nodes {
            match &rec.parent {
                None if rec.level != levels => {
                    return Err(HierarchyError::Orphan { node: rec.name.clone(), level: rec.level })
                }
                None => {}
                Some(p) => {
                    let Some(&pi) = seen.get(p.as_str()) else {
                        return Err(HierarchyError::UnknownParent {
                            node: rec.name.clone(),
                            parent: p.clone(),
                        });
                    };
                    if rec.level == levels {
                        return Err(HierarchyError::RootWithParent {
                            node: rec.name.clone(),
                            parent: p.clone(),
                        });
                    }
                    let parent_level = file.nodes[pi].level;
                    if parent_level != rec.level + 1 {
                        return Err(HierarchyError::LevelGap {
                            node: rec.name.clone(),
                            level: rec.level,
                            parent: p.clone(),
                            parent_level,
                        });
                    }
                }
            }
        }

        // Bounded walk: a cycle revisits its start within |V| steps.
        for (start, rec) in file.nodes.iter().enumerate() {
            let mut cur = start;
            for _ in 0..=file.nodes.len() {
                match &file.nodes[cur].parent {
                    None => break,
                    Some(p) => cur = seen[p.as_str()],
                }
                if cur == start {
                    return Err(HierarchyError::Cycle { node: rec.name.clone() });
                }
            }
        }

        // Canonical ordering: level ascending, file order within a level.
        let mut order: Vec<usize> = (0..file.nodes.len()).collect();
        order.sort_by_key(|&i| file.nodes[i].level);
        let mut file_to_id = vec![0usize; file.nodes.len()];
        for (id, &i) in order.iter().enumerate() {
            file_to_id[i] = id;
        }

        let mut nodes: Vec<Node> = order
            .iter()
            .enumerate()
            .map(|(id, &i)| {
                let rec = &file.nodes[i];
                Node {
                    id,
                    name: rec.name.clone(),
                    level: rec.level,
                    parent: rec.parent.as_ref().map(|p| file_to_id[seen[p.as_str()]]),
                    children: Vec::new(),
                    peers: Vec::new(),
                }
            })
            .collect();
        for id in 0..nodes.len() {
            if let Some(p) = nodes[id].parent {
                nodes[p].children.push(id);
            }
        }

        let mut level_offsets = Vec::with_capacity(levels);
        for level in 1..=levels {
            let start = nodes.partition_point(|n| n.level < level);
            let end = nodes.partition_point(|n| n.level <= level);
            if start == end {
                return Err(HierarchyError::EmptyLevel(level));
            }
            level_offsets.push((start, end - start));
        }

        for n in &nodes {
            if n.level > 1 && n.children.is_empty() {
                return Err(HierarchyError::ChildlessInternal { node: n.name.clone(), level: n.level });
            }
        }

        let by_name = nodes.iter().map(|n| (n.name.clone(), n.id)).collect();
        let mut h = Hierarchy {
            name: file.name.clone(),
            t_matrix: Array2::from_elem((nodes.len(), nodes.len()), false),
            p_matrix: Array2::from_elem((nodes.len(), nodes.len()), false),
            nodes,
            levels,
            level_offsets,
            peer_scope: scope,
            peer_groups: Vec::new(),
            by_name,
        };
        for n in &h.nodes {
            if let Some(p) = n.parent {
                h.t_matrix[[p, n.id]] = true;
            }
        }
        h.assign_peers(scope);
        Ok(h)
    }

    fn assign_peers(&mut self, scope: PeerScope) {
        let groups: Vec<Vec<NodeId>> = match scope {
            PeerScope::Level => (1..=self.levels).map(|l| self.level_range(l).collect()).collect(),
            PeerScope::Siblings => {
                let mut groups: Vec<Vec<NodeId>> = vec![self.roots().collect()];
                // Children lists are in id order; a parent's children form one group.
                groups.extend(
                    self.nodes.iter().rev().filter(|n| !n.children.is_empty()).map(|n| n.children.clone()),
                );
                groups.sort_by_key(|g| g[0]);
                groups
            }
        };
        self.p_matrix.fill(false);
        for n in &mut self.nodes {
            n.peers.clear();
        }
        for g in &groups {
            for &u in g {
                for &v in g {
                    if u != v {
                        self.p_matrix[[u, v]] = true;
                        self.nodes[u].peers.push(v);
                    }
                }
            }
        }
        self.peer_scope = scope;
        self.peer_groups = groups;
    }

    /// Same tree with a different peer relation.
    pub fn with_peer_scope(&self, scope: PeerScope) -> Self {
        let mut h = self.clone();
        h.assign_peers(scope);
        h
    }

    pub fn to_file(&self) -> HierarchyFile {
        HierarchyFile {
            name: self.name.clone(),
            levels: self.levels,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    name: n.name.clone(),
                    level: n.level,
                    parent: n.parent.map(|p| self.nodes[p].name.clone()),
                })
                .collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of levels `L`.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// `(start, count)` of each level in the canonical ordering, index 0 = level 1.
    pub fn level_offsets(&self) -> &[(usize, usize)] {
        &self.level_offsets
    }

    pub fn level_range(&self, level: usize) -> Range<NodeId> {
        let (start, count) = self.level_offsets[level - 1];
        start..start + count
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.level_offsets[level - 1].1
    }

    pub fn num_leaves(&self) -> usize {
        self.level_size(1)
    }

    pub fn num_roots(&self) -> usize {
        self.level_size(self.levels)
    }

    pub fn leaves(&self) -> Range<NodeId> {
        self.level_range(1)
    }

    pub fn roots(&self) -> Range<NodeId> {
        self.level_range(self.levels)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].level == 1
    }

    pub fn id_of(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    /// Parent→child incidence: `t[[u, v]]` iff `u` is the parent of `v`.
    pub fn t_matrix(&self) -> &Array2<bool> {
        &self.t_matrix
    }

    /// Peer incidence under the active [`PeerScope`].
    pub fn p_matrix(&self) -> &Array2<bool> {
        &self.p_matrix
    }

    pub fn peer_scope(&self) -> PeerScope {
        self.peer_scope
    }

    /// Disjoint node groups whose members are pairwise peers. The peer matrix
    /// factors as `Σ_g (1_g 1_gᵀ) − I` over these groups.
    pub fn peer_groups(&self) -> &[Vec<NodeId>] {
        &self.peer_groups
    }

    /// Nodes from `leaf` up to its root, ordered level 1..=L.
    pub fn path_to_root(&self, leaf: NodeId) -> Result<Vec<NodeId>, HierarchyError> {
        self.check_leaf(leaf)?;
        let mut path = Vec::with_capacity(self.levels);
        let mut cur = Some(leaf);
        while let Some(v) = cur {
            path.push(v);
            cur = self.nodes[v].parent;
        }
        Ok(path)
    }

    /// Multi-hot ground-truth vector for a leaf label: the leaf and all its ancestors.
    pub fn ancestor_closure(&self, leaf: NodeId) -> Result<Array1<f64>, HierarchyError> {
        let mut y = Array1::zeros(self.len());
        for v in self.path_to_root(leaf)? {
            y[v] = 1.0;
        }
        Ok(y)
    }

    /// One root-to-leaf path per leaf, in leaf id order; each path is ordered level 1..=L.
    pub fn enumerate_paths(&self) -> Vec<Vec<NodeId>> {
        self.leaves()
            .map(|leaf| self.path_to_root(leaf).expect("leaf ids are valid"))
            .collect()
    }

    /// Whether `path` (ordered level 1..=L) is a valid leaf-to-root chain.
    pub fn is_valid_path(&self, path: &[NodeId]) -> bool {
        if path.len() != self.levels || path.iter().any(|&v| v >= self.len()) {
            return false;
        }
        if !self.is_leaf(path[0]) || self.nodes[path[self.levels - 1]].parent.is_some() {
            return false;
        }
        path.windows(2).all(|w| self.nodes[w[0]].parent == Some(w[1]))
    }

    fn check_leaf(&self, id: NodeId) -> Result<(), HierarchyError> {
        if id >= self.len() {
            return Err(HierarchyError::UnknownId { id, len: self.len() });
        }
        if !self.is_leaf(id) {
            return Err(HierarchyError::NotALeaf { id });
        }
        Ok(())
    }

    /// A random uniform-depth forest with `levels` levels and at most
    /// `max_nodes` nodes. Every internal node gets at least one child.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, levels: usize, max_nodes: usize) -> Self {
        assert!(levels >= 1 && max_nodes >= levels);
        let mut nodes: Vec<NodeRecord> = Vec::new();
        // Level sizes never shrink going down, so a level of `n` nodes at
        // height `l` commits at least `n * l` nodes in total.
        let num_roots = rng.gen_range(1..=(max_nodes / levels).clamp(1, 4));
        let mut used = num_roots;
        let mut frontier: Vec<String> = (0..num_roots).map(|r| format!("n{levels}_{r}")).collect();
        for name in &frontier {
            nodes.push(NodeRecord { name: name.clone(), level: levels, parent: None });
        }
        for level in (1..levels).rev() {
            let cap = ((max_nodes - used) / level).min(frontier.len() * 4);
            let n = rng.gen_range(frontier.len()..=cap);
            let mut parents: Vec<usize> = (0..frontier.len()).collect();
            parents.extend((frontier.len()..n).map(|_| rng.gen_range(0..frontier.len())));
            parents.sort_unstable();
            let next: Vec<String> = (0..n).map(|i| format!("n{level}_{i}")).collect();
            for (name, &p) in next.iter().zip(&parents) {
                nodes.push(NodeRecord { name: name.clone(), level, parent: Some(frontier[p].clone()) });
            }
            used += n;
            frontier = next;
        }
        let file = HierarchyFile { name: "random".into(), levels, nodes };
        Hierarchy::from_file(&file, PeerScope::Level).expect("generated tree is valid")
    }
}
