//! Grounded hierarchy rules and the logic losses derived from them.

mod loss;
pub(crate) use loss::join_blocks;
mod maps;

pub use loss::{
    bce_loss, c_loss, d_loss, e_loss, objective, total_loss, BceReduction, LogicSums, LossConfig, LossError, LossReport, LossSummary,
    NodeLoss, RuleLoss, PIXEL_CHUNK,
};
pub use maps::{LabelMap, MapError, ScoreMap};

use serde::Serialize;

use crate::hierarchy::{Hierarchy, NodeId};

/// Composition, decomposition and exclusion instances of one hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleSet {
    /// `(v, parent)` for every non-root node.
    pub c_rules: Vec<(NodeId, NodeId)>,
    /// `(v, children)` for every non-leaf node.
    pub d_rules: Vec<(NodeId, Vec<NodeId>)>,
    /// `(v, peers)` for every node with at least one peer.
    pub e_rules: Vec<(NodeId, Vec<NodeId>)>,
    /// Disjoint cliques of mutual peers, size >= 2.
    pub peer_groups: Vec<Vec<NodeId>>,
    pub num_nodes: usize,
}

pub fn derive_rules(h: &Hierarchy) -> RuleSet {
    let mut c_rules = Vec::new();
    let mut d_rules = Vec::new();
    let mut e_rules = Vec::new();
    for node in h.nodes() {
        if let Some(p) = node.parent {
            c_rules.push((node.id, p));
        }
        if !node.children.is_empty() {
            d_rules.push((node.id, node.children.clone()));
        }
        if !node.peers.is_empty() {
            e_rules.push((node.id, node.peers.clone()));
        }
    }
    let peer_groups = h.peer_groups().iter().filter(|g| g.len() >= 2).cloned().collect();
    RuleSet { c_rules, d_rules, e_rules, peer_groups, num_nodes: h.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::hierarchy::PeerScope;

    #[test]
    fn toy_rules() {
        let h = fixtures::toy6();
        let id = |n: &str| h.id_of(n).unwrap();
        let r = derive_rules(&h);
        let mut c: Vec<_> = r.c_rules.iter().map(|&(v, p)| (h.node(v).name.as_str(), h.node(p).name.as_str())).collect();
        c.sort();
        assert_eq!(c, vec![("b", "a"), ("c", "a"), ("d", "b"), ("e", "b"), ("f", "c")]);
        let d: Vec<_> = r.d_rules.iter().map(|(v, cs)| (h.node(*v).name.clone(), cs.clone())).collect();
        assert!(d.contains(&("a".into(), vec![id("b"), id("c")])));
        assert!(d.contains(&("b".into(), vec![id("d"), id("e")])));
        assert!(d.contains(&("c".into(), vec![id("f")])));
        assert_eq!(d.len(), 3);
        // a is alone on its level
        assert_eq!(r.e_rules.len(), 5);
    }

    #[test]
    fn rule_counts() {
        for h in fixtures::all() {
            let r = derive_rules(&h);
            assert_eq!(r.c_rules.len(), h.len() - h.num_roots());
            assert_eq!(r.d_rules.len(), h.len() - h.num_leaves());
            let multi: usize = (1..=h.levels()).filter(|&l| h.level_size(l) >= 2).map(|l| h.level_size(l)).sum();
            assert_eq!(r.e_rules.len(), multi);
        }
        assert_eq!(derive_rules(&fixtures::mapillary()).c_rules.len(), 140);
    }

    #[test]
    fn singleton_has_no_rules() {
        let h = Hierarchy::parse(r#"{"name":"one","levels":1,"nodes":[{"name":"x","level":1,"parent":null}]}"#).unwrap();
        let r = derive_rules(&h);
        assert!(r.c_rules.is_empty() && r.d_rules.is_empty() && r.e_rules.is_empty());
        assert!(r.peer_groups.is_empty());
    }

    #[test]
    fn sibling_scope_groups() {
        let h = fixtures::toy6().with_peer_scope(PeerScope::Siblings);
        let r = derive_rules(&h);
        // {b,c} and {d,e}; f and a have no siblings
        assert_eq!(r.peer_groups.len(), 2);
        assert_eq!(r.e_rules.len(), 4);
    }
}
