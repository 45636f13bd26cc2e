//! Per-level segmentation quality and hierarchy consistency.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, NodeId};
use crate::inference::PathPrediction;
use crate::rules::{LabelMap, ScoreMap};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction covers {pred} pixels, labels cover {gt}")]
    PixelCount { pred: usize, gt: usize },
    #[error("prediction has {pred} levels, hierarchy has {hierarchy}")]
    LevelCount { pred: usize, hierarchy: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub name: String,
    pub level: usize,
    /// `None` when the class is absent from both labels and prediction.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pixel_count: usize,
    /// Percent, two decimals; index 0 is the leaf level.
    pub miou_per_level: Vec<f64>,
    /// Pixel accuracy in [0, 1]; index 0 is the leaf level.
    pub accuracy_per_level: Vec<f64>,
    pub per_class_iou: Vec<ClassIou>,
    /// Fraction of pixels whose per-level argmaxes form no valid path,
    /// measured on the scores before decoding.
    pub violation_rate: Option<f64>,
}

impl EvalReport {
    pub fn with_violation_rate(mut self, rate: f64) -> Self {
        self.violation_rate = Some(rate);
        self
    }
}

/// Per-level confusion counts, rows = ground truth, columns = prediction,
/// both indexed by offset within the level.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    pub levels: Vec<Array2<u64>>,
}

impl Confusion {
    pub fn new(h: &Hierarchy) -> Self {
        let levels = (1..=h.levels()).map(|l| Array2::zeros((h.level_size(l), h.level_size(l)))).collect();
        Confusion { levels }
    }

    pub fn accumulate(&mut self, pred: &PathPrediction, gt: &LabelMap, h: &Hierarchy) -> Result<(), MetricsError> {
        if pred.num_pixels() != gt.num_pixels() {
            return Err(MetricsError::PixelCount { pred: pred.num_pixels(), gt: gt.num_pixels() });
        }
        if pred.levels != h.levels() {
            return Err(MetricsError::LevelCount { pred: pred.levels, hierarchy: h.levels() });
        }
        for (k, &leaf) in gt.leaf_labels().iter().enumerate() {
            let truth = h.path_to_root(leaf).expect("labels are leaves");
            for (l, (&t, &p)) in truth.iter().zip(pred.path(k)).enumerate() {
                let start = h.level_range(l + 1).start;
                self.levels[l][[t - start, p - start]] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            *a += b;
        }
    }

    pub fn report(&self, h: &Hierarchy) -> EvalReport {
        let mut miou = Vec::with_capacity(self.levels.len());
        let mut acc = Vec::with_capacity(self.levels.len());
        let mut per_class = Vec::with_capacity(h.len());
        let mut pixel_count = 0;
        for (l, conf) in self.levels.iter().enumerate() {
            let total: u64 = conf.sum();
            pixel_count = total as usize;
            let diag: u64 = conf.diag().sum();
            acc.push(if total == 0 { 0.0 } else { diag as f64 / total as f64 });
            let mut ious = Vec::new();
            for (i, v) in h.level_range(l + 1).enumerate() {
                let tp = conf[[i, i]];
                let fn_ = conf.row(i).sum() - tp;
                let fp = conf.column(i).sum() - tp;
                let union = tp + fp + fn_;
                let iou = (union > 0).then(|| tp as f64 / union as f64);
                ious.extend(iou);
                per_class.push(ClassIou { name: h.node(v).name.clone(), level: l + 1, iou });
            }
            let mean = if ious.is_empty() { 0.0 } else { 100.0 * ious.iter().sum::<f64>() / ious.len() as f64 };
            miou.push((mean * 100.0).round() / 100.0);
        }
        EvalReport {
            pixel_count,
            miou_per_level: miou,
            accuracy_per_level: acc,
            per_class_iou: per_class,
            violation_rate: None,
        }
    }
}

pub fn evaluate(pred: &PathPrediction, gt: &LabelMap, h: &Hierarchy) -> Result<EvalReport, MetricsError> {
    let mut conf = Confusion::new(h);
    conf.accumulate(pred, gt, h)?;
    Ok(conf.report(h))
}

/// Evaluates leaf-only predictions, scoring coarser levels by mapping each
/// predicted leaf to its ancestors.
pub fn evaluate_leaves(leaves: &[NodeId], gt: &LabelMap, h: &Hierarchy) -> Result<EvalReport, MetricsError> {
    evaluate(&PathPrediction::from_leaves(h, leaves), gt, h)
}

/// Per-level argmax of every pixel (lowest id on ties), ordered level 1..=L.
pub fn level_argmax(s: &ScoreMap, h: &Hierarchy) -> Vec<Vec<NodeId>> {
    (0..s.num_pixels())
        .map(|k| {
            (1..=h.levels())
                .map(|l| {
                    let mut best = h.level_range(l).start;
                    for v in h.level_range(l) {
                        if s.get(v, k) > s.get(best, k) {
                            best = v;
                        }
                    }
                    best
                })
                .collect()
        })
        .collect()
}

/// Fraction of pixels whose per-level argmaxes do not form a valid path.
pub fn violation_rate(s: &ScoreMap, h: &Hierarchy) -> f64 {
    if s.num_pixels() == 0 {
        return 0.0;
    }
    let bad = level_argmax(s, h).iter().filter(|p| !h.is_valid_path(p)).count();
    bad as f64 / s.num_pixels() as f64
}
