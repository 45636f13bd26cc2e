//! Hierarchy-aware logic losses and logic-induced inference for
//! hierarchical semantic segmentation.

pub mod fixtures;
pub mod fuzzy;
pub mod hierarchy;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod rules;
pub mod trainer;

pub use fuzzy::FuzzyConfig;
pub use hierarchy::{Hierarchy, HierarchyError, Node, NodeId, PeerScope};
pub use rules::{derive_rules, LabelMap, LossConfig, LossReport, RuleSet, ScoreMap};
pub use inference::{decode_path, run_inference, Engine, EVariant, InferenceConfig, PathPrediction};
pub use metrics::{evaluate, violation_rate, EvalReport};
