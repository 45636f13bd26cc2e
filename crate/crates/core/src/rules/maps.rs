use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, HierarchyError, NodeId};

#[derive(Debug, Error)]
pub enum MapError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("score at node {node}, pixel {pixel} is {value}, outside [0, 1]")]
    OutOfRange { node: usize, pixel: usize, value: f64 },
    #[error("empty pixel set")]
    NoPixels,
    #[error("pixel {pixel}: label {label} is not a leaf id")]
    BadLabel { pixel: usize, label: usize },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// Per-node, per-pixel confidences, stored node-major as `[|V|, K]`.
///
/// `height * width == K`; maps without a spatial layout use `height = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    values: Array2<f64>,
    height: usize,
    width: usize,
}

impl ScoreMap {
    /// Wraps `[|V|, K]` values as a `1 × K` map. Entries must be finite and in [0, 1].
    pub fn new(values: Array2<f64>) -> Result<Self, MapError> {
        let k = values.ncols();
        Self::with_shape(values, 1, k)
    }

    pub fn with_shape(values: Array2<f64>, height: usize, width: usize) -> Result<Self, MapError> {
        if height * width != values.ncols() {
            return Err(MapError::Shape {
                expected: format!("{} pixels", height * width),
                found: format!("{} columns", values.ncols()),
            });
        }
        for ((node, pixel), &value) in values.indexed_iter() {
            if !(0.0..=1.0).contains(&value) {
                return Err(MapError::OutOfRange { node, pixel, value });
            }
        }
        Ok(Self::from_trusted(values, height, width))
    }

    /// Skips the range check. Callers guarantee the invariant (softmax output, etc).
    pub(crate) fn from_trusted(values: Array2<f64>, height: usize, width: usize) -> Self {
        debug_assert_eq!(height * width, values.ncols());
        // Row-major storage, so every node row is a contiguous slice.
        let values = if values.is_standard_layout() { values } else { values.as_standard_layout().into_owned() };
        ScoreMap { values, height, width }
    }

    /// Every column is the ancestor closure of the matching leaf.
    pub fn one_hot_paths(h: &Hierarchy, leaves: &[NodeId]) -> Result<Self, MapError> {
        let mut values = Array2::zeros((h.len(), leaves.len()));
        for (k, &leaf) in leaves.iter().enumerate() {
            values.column_mut(k).assign(&h.ancestor_closure(leaf)?);
        }
        Ok(ScoreMap::from_trusted(values, 1, leaves.len()))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_pixels(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn column(&self, pixel: usize) -> ArrayView1<'_, f64> {
        self.values.column(pixel)
    }

    pub fn get(&self, node: NodeId, pixel: usize) -> f64 {
        self.values[[node, pixel]]
    }

    pub fn check_for(&self, h: &Hierarchy) -> Result<(), MapError> {
        if self.num_nodes() != h.len() {
            return Err(MapError::Shape {
                expected: format!("{} nodes", h.len()),
                found: format!("{} nodes", self.num_nodes()),
            });
        }
        Ok(())
    }

    /// A `1 × n` map of the listed pixels, in the given order.
    pub fn select_pixels(&self, pixels: &[usize]) -> ScoreMap {
        let values = self.values.select(Axis(1), pixels);
        ScoreMap::from_trusted(values, 1, pixels.len())
    }

    /// Pixels `range`, flattened to `1 × n`.
    pub fn pixel_range(&self, range: std::ops::Range<usize>) -> ScoreMap {
        let n = range.len();
        ScoreMap::from_trusted(self.values.slice(s![.., range]).to_owned(), 1, n)
    }

    /// Concatenates two maps along the pixel axis.
    pub fn concat(&self, other: &ScoreMap) -> Result<ScoreMap, MapError> {
        if self.num_nodes() != other.num_nodes() {
            return Err(MapError::Shape {
                expected: format!("{} nodes", self.num_nodes()),
                found: format!("{} nodes", other.num_nodes()),
            });
        }
        let values = ndarray::concatenate(Axis(1), &[self.view(), other.view()]).expect("same row count");
        let k = values.ncols();
        Ok(ScoreMap::from_trusted(values, 1, k))
    }
}

/// Ground-truth leaf labels and their multi-hot ancestor closures.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    leaf_labels: Vec<NodeId>,
    y: Array2<f64>,
    height: usize,
    width: usize,
}

impl LabelMap {
    pub fn new(h: &Hierarchy, leaf_labels: Vec<NodeId>) -> Result<Self, MapError> {
        let k = leaf_labels.len();
        Self::with_shape(h, leaf_labels, 1, k)
    }

    pub fn with_shape(
        h: &Hierarchy,
        leaf_labels: Vec<NodeId>,
        height: usize,
        width: usize,
    ) -> Result<Self, MapError> {
        if height * width != leaf_labels.len() {
            return Err(MapError::Shape {
                expected: format!("{} pixels", height * width),
                found: format!("{} labels", leaf_labels.len()),
            });
        }
        if let Some((pixel, &label)) = leaf_labels.iter().enumerate().find(|(_, &l)| l >= h.num_leaves()) {
            return Err(MapError::BadLabel { pixel, label });
        }
        let mut y = Array2::zeros((h.len(), leaf_labels.len()));
        for (k, &leaf) in leaf_labels.iter().enumerate() {
            y.column_mut(k).assign(&h.ancestor_closure(leaf)?);
        }
        Ok(LabelMap { leaf_labels, y, height, width })
    }

    pub fn leaf_labels(&self) -> &[NodeId] {
        &self.leaf_labels
    }

    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn num_pixels(&self) -> usize {
        self.leaf_labels.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn select_pixels(&self, h: &Hierarchy, pixels: &[usize]) -> LabelMap {
        let labels = pixels.iter().map(|&k| self.leaf_labels[k]).collect();
        LabelMap::new(h, labels).expect("labels already validated")
    }
}
