//! Synthetic data and a small per-node sigmoid classifier trained with the
//! logic-augmented objective.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::fuzzy::FuzzyConfig;
use crate::hierarchy::{Hierarchy, NodeId};
use crate::inference::{decode_path, run_inference, InferenceConfig};
use crate::metrics::{evaluate, violation_rate, EvalReport};
use crate::rules::{derive_rules, objective, total_loss, LabelMap, LossConfig, LossError, RuleSet, ScoreMap};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Leaf-labelled Voronoi blobs on an H×W grid. Each leaf's prototype is the
/// sum of one random vector per node on its root path, so leaves sharing an
/// ancestor share part of their prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub num_blobs: usize,
    /// Standard deviation of each leaf's own prototype component.
    pub prototype_scale: f64,
    /// Each level up multiplies the component's standard deviation by this
    /// factor, so coarse classes separate more easily than fine ones.
    pub level_gain: f64,
    /// Standard deviation of the per-pixel feature noise.
    pub noise_sigma: f64,
    /// Fraction of pixels in the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The benchmark configuration used for loss A/B comparisons.
    pub fn standard(seed: u64) -> Self {
        SyntheticSpec {
            height: 128,
            width: 128,
            feature_dim: 256,
            num_blobs: 64,
            prototype_scale: 0.12,
            level_gain: 3.0,
            noise_sigma: 1.0,
            train_fraction: 0.5,
            seed,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Spec(m.into()));
        if self.height == 0 || self.width == 0 {
            return bad("grid must be non-empty");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if self.num_blobs == 0 {
            return bad("num_blobs must be positive");
        }
        if !(self.prototype_scale.is_finite() && self.prototype_scale >= 0.0) {
            return bad("prototype_scale must be finite and non-negative");
        }
        if !(self.level_gain.is_finite() && self.level_gain > 0.0) {
            return bad("level_gain must be finite and positive");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be finite and non-negative");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Features `[D, K]` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Array2<f64>,
    pub labels: LabelMap,
}

impl Samples {
    pub fn num_pixels(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, h: &Hierarchy, pixels: &[usize]) -> Samples {
        Samples { features: self.features.select(Axis(1), pixels), labels: self.labels.select_pixels(h, pixels) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub samples: Samples,
    /// `[D, |V_1|]`, column per leaf.
    pub prototypes: Array2<f64>,
}

impl SyntheticDataset {
    /// Random train / held-out split of the pixels, seeded from `SyntheticSpec::seed`.
    pub fn split(&self, h: &Hierarchy) -> (Samples, Samples) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x5eed_5eed);
        let k = self.samples.num_pixels();
        let mut idx: Vec<usize> = (0..k).collect();
        idx.shuffle(&mut rng);
        let n_train = ((k as f64 * self.spec.train_fraction).round() as usize).clamp(1, k.saturating_sub(1).max(1));
        let (a, b) = idx.split_at(n_train);
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        (self.samples.select(h, &a), self.samples.select(h, &b))
    }
}

/// Leaf label per pixel: the label of the nearest of `num_blobs` random
/// centres (lowest centre index on ties).
pub fn blob_layout<R: Rng>(rng: &mut R, h: &Hierarchy, height: usize, width: usize, num_blobs: usize) -> Vec<NodeId> {
    let centres: Vec<(f64, f64, NodeId)> = (0..num_blobs)
        .map(|_| (rng.gen_range(0.0..height as f64), rng.gen_range(0.0..width as f64), rng.gen_range(h.leaves())))
        .collect();
    let mut labels = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for &(cy, cx, leaf) in &centres {
                let d = (cy - py).powi(2) + (cx - px).powi(2);
                if d < best.0 {
                    best = (d, leaf);
                }
            }
            labels.push(best.1);
        }
    }
    labels
}

pub fn generate_dataset(h: &Hierarchy, spec: &SyntheticSpec) -> Result<SyntheticDataset, TrainError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = blob_layout(&mut rng, h, spec.height, spec.width, spec.num_blobs);

    let d = spec.feature_dim;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut node_vecs = Array2::from_shape_fn((d, h.len()), |_| unit.sample(&mut rng));
    for (v, mut col) in node_vecs.columns_mut().into_iter().enumerate() {
        col *= spec.prototype_scale * spec.level_gain.powi(h.node(v).level as i32 - 1);
    }
    let mut prototypes = Array2::zeros((d, h.num_leaves()));
    for leaf in h.leaves() {
        let mut col = prototypes.column_mut(leaf);
        for v in h.path_to_root(leaf).expect("leaf ids") {
            col += &node_vecs.column(v);
        }
    }

    let noise = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
    let k = labels.len();
    let mut features = Array2::zeros((d, k));
    for (j, &leaf) in labels.iter().enumerate() {
        for i in 0..d {
            features[[i, j]] = prototypes[[i, leaf]] + noise.sample(&mut rng);
        }
    }
    let labels = LabelMap::with_shape(h, labels, spec.height, spec.width).expect("labels are leaves");
    Ok(SyntheticDataset { spec: spec.clone(), samples: Samples { features, labels }, prototypes })
}

/// Per-node logistic classifier: `s = sigmoid(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLogicModel {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl LinearLogicModel {
    /// Weights and biases drawn uniformly from [-0.1, 0.1].
    pub fn init<R: Rng>(rng: &mut R, num_nodes: usize, feature_dim: usize) -> Self {
        let u = Uniform::new_inclusive(-0.1, 0.1);
        LinearLogicModel {
            weights: Array2::from_shape_fn((num_nodes, feature_dim), |_| u.sample(rng)),
            biases: Array1::from_shape_fn(num_nodes, |_| u.sample(rng)),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> ScoreMap {
        let mut z = self.weights.dot(&x);
        z += &self.biases.view().insert_axis(Axis(1));
        z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp()));
        let k = z.ncols();
        ScoreMap::from_trusted(z, 1, k)
    }

    /// One gradient-descent step given `∂L/∂s` for the scores produced from `x`.
    pub fn step(&mut self, x: ArrayView2<'_, f64>, s: &ScoreMap, grad_s: &Array2<f64>, lr: f64) {
        let dz = grad_s * &s.values().mapv(|v| v * (1.0 - v));
        let dw = dz.dot(&x.t());
        let db = dz.sum_axis(Axis(1));
        self.weights.scaled_add(-lr, &dw);
        self.biases.scaled_add(-lr, &db);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.biases.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub q: u32,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub use_c: bool,
    pub use_d: bool,
    pub use_e: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.2,
            q: 5,
            lr: 5.0,
            epochs: 10,
            batch_size: 256,
            seed: 0,
            use_c: true,
            use_d: true,
            use_e: true,
        }
    }
}

impl TrainConfig {
    pub fn bce_only(seed: u64) -> Self {
        TrainConfig { alpha: 0.0, use_c: false, use_d: false, use_e: false, seed, ..Self::default() }
    }

    pub fn loss_config(&self) -> Result<LossConfig, TrainError> {
        let fuzzy = FuzzyConfig::with_q(self.q).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(LossConfig {
            fuzzy,
            alpha: self.alpha,
            use_c: self.use_c,
            use_d: self.use_d,
            use_e: self.use_e,
            ..LossConfig::default()
        })
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        self.loss_config()?.validate()?;
        Ok(())
    }
}

/// One line of the training history. Epoch 0 is the model before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub l_e: f64,
    pub l_bce: f64,
    /// Held-out violation rate of the raw sigmoid scores.
    pub violation_rate: f64,
    /// Held-out accuracy of the decoded paths, leaf level first.
    pub accuracy_per_level: Vec<f64>,
    /// Wall time spent in optimizer steps this epoch.
    pub step_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LinearLogicModel,
    pub history: Vec<EpochRecord>,
    /// Held-out evaluation of the final model, decoded without message passing.
    pub final_report: EvalReport,
    pub step_seconds: f64,
    pub steps: usize,
}

/// Decoded held-out report for `model` after `inference` rounds.
pub fn evaluate_model(
    model: &LinearLogicModel,
    data: &Samples,
    h: &Hierarchy,
    inference: &InferenceConfig,
) -> EvalReport {
    let raw = model.forward(data.features.view());
    let rate = violation_rate(&raw, h);
    let refined = run_inference(&raw, h, inference);
    let pred = decode_path(&refined, h);
    evaluate(&pred, &data.labels, h).expect("shapes agree").with_violation_rate(rate)
}

#[allow(clippy::too_many_arguments)]
fn record(
    epoch: usize,
    model: &LinearLogicModel,
    train: &Samples,
    held_out: &Samples,
    h: &Hierarchy,
    rules: &RuleSet,
    loss: &LossConfig,
    step_seconds: f64,
) -> Result<EpochRecord, TrainError> {
    let s = model.forward(train.features.view());
    let rep = total_loss(&s, &train.labels, rules, loss)?;
    if !rep.total.is_finite() {
        return Err(TrainError::Diverged { epoch, step: 0, loss: rep.total });
    }
    let eval = evaluate_model(model, held_out, h, &InferenceConfig { iterations: 0, ..Default::default() });
    Ok(EpochRecord {
        epoch,
        total: rep.total,
        l_c: rep.l_c,
        l_d: rep.l_d,
        l_e: rep.l_e,
        l_bce: rep.l_bce,
        violation_rate: eval.violation_rate.unwrap_or(0.0),
        accuracy_per_level: eval.accuracy_per_level,
        step_seconds,
    })
}

pub fn train(
    h: &Hierarchy,
    mut model: LinearLogicModel,
    train: &Samples,
    held_out: &Samples,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let loss = cfg.loss_config()?;
    let rules = derive_rules(h);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.num_pixels()).collect();
    let mut history = vec![record(0, &model, train, held_out, h, &rules, &loss, 0.0)?];
    let mut total_seconds = 0.0;
    let mut steps = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let epoch_seconds = run_epoch(h, &mut model, train, &order, &rules, &loss, cfg, epoch)?;
        steps += order.len().div_ceil(cfg.batch_size);
        total_seconds += epoch_seconds;
        let rec = record(epoch, &model, train, held_out, h, &rules, &loss, epoch_seconds)?;
        debug!(epoch, total = rec.total, violation = rec.violation_rate, "epoch done");
        history.push(rec);
    }

    let final_report = evaluate_model(&model, held_out, h, &InferenceConfig { iterations: 0, ..Default::default() });
    Ok(TrainOutcome { model, history, final_report, step_seconds: total_seconds, steps })
}

/// One pass over `order` in batches. Returns the wall time spent inside the
/// steps (forward, objective, update), excluding batch gathering.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    h: &Hierarchy,
    model: &mut LinearLogicModel,
    train: &Samples,
    order: &[usize],
    rules: &RuleSet,
    loss: &LossConfig,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64, TrainError> {
    let mut seconds = 0.0;
    for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
        let x = train.features.select(Axis(1), batch);
        let labels = train.labels.select_pixels(h, batch);
        let start = Instant::now();
        let s = model.forward(x.view());
        let (value, grad) = objective(&s, &labels, rules, loss)?;
        if !value.is_finite() {
            return Err(TrainError::Diverged { epoch, step, loss: value });
        }
        model.step(x.view(), &s, &grad, cfg.lr);
        seconds += start.elapsed().as_secs_f64();
        if !model.is_finite() {
            return Err(TrainError::Diverged { epoch, step, loss: f64::NAN });
        }
    }
    Ok(seconds)
}

/// Step time of one epoch over `train` in pixel order, starting from `model`
/// (which is left untouched). Used to compare the cost of loss configurations
/// on identical batches.
pub fn time_epoch(h: &Hierarchy, model: &LinearLogicModel, train: &Samples, cfg: &TrainConfig) -> Result<f64, TrainError> {
    cfg.validate()?;
    let loss = cfg.loss_config()?;
    let rules = derive_rules(h);
    let order: Vec<usize> = (0..train.num_pixels()).collect();
    run_epoch(h, &mut model.clone(), train, &order, &rules, &loss, cfg, 1)
}

/// A finished demo run with the splits it used.
#[derive(Debug, Clone)]
pub struct DemoRun {
    pub outcome: TrainOutcome,
    pub train: Samples,
    pub held_out: Samples,
}

/// Generates the dataset for `spec`, initialises a model from `spec.seed`
/// and trains it under `cfg`.
pub fn run_demo(h: &Hierarchy, spec: &SyntheticSpec, cfg: &TrainConfig) -> Result<DemoRun, TrainError> {
    let data = generate_dataset(h, spec)?;
    let (train_set, held_out) = data.split(h);
    let model = LinearLogicModel::init(&mut ChaCha8Rng::seed_from_u64(spec.seed), h.len(), spec.feature_dim);
    let outcome = train(h, model, &train_set, &held_out, cfg)?;
    Ok(DemoRun { outcome, train: train_set, held_out })
}

/// One JSON object per line.
pub fn write_history<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    for rec in history {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Valid one-hot path maps with independent per-level label flips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub height: usize,
    pub width: usize,
    pub num_blobs: usize,
    /// Probability that a level's active node is moved to a random other
    /// node of the same level.
    pub flip_rate: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn standard(seed: u64) -> Self {
        CorruptionSpec { height: 64, width: 64, num_blobs: 64, flip_rate: 0.2, seed }
    }
}

pub fn corrupted_scores(h: &Hierarchy, spec: &CorruptionSpec) -> Result<(ScoreMap, LabelMap), TrainError> {
    if spec.height == 0 || spec.width == 0 || spec.num_blobs == 0 {
        return Err(TrainError::Spec("grid and blob count must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.flip_rate) {
        return Err(TrainError::Spec("flip_rate must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let leaves = blob_layout(&mut rng, h, spec.height, spec.width, spec.num_blobs);
    let mut values = Array2::zeros((h.len(), leaves.len()));
    for (k, &leaf) in leaves.iter().enumerate() {
        for (l, mut v) in h.path_to_root(leaf).expect("leaf ids").into_iter().enumerate() {
            let range = h.level_range(l + 1);
            if range.len() > 1 && rng.gen_bool(spec.flip_rate) {
                let mut other = rng.gen_range(range.start..range.end - 1);
                if other >= v {
                    other += 1;
                }
                v = other;
            }
            values[[v, k]] = 1.0;
        }
    }
    let s = ScoreMap::with_shape(values, spec.height, spec.width).expect("one-hot values");
    let labels = LabelMap::with_shape(h, leaves, spec.height, spec.width).expect("labels are leaves");
    Ok((s, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec { height: 16, width: 16, feature_dim: 32, ..SyntheticSpec::standard(seed) }
    }

    #[test]
    fn deterministic_generation() {
        let h = fixtures::toy6();
        let a = generate_dataset(&h, &small_spec(3)).unwrap();
        let b = generate_dataset(&h, &small_spec(3)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&h, &small_spec(4)).unwrap();
        assert_ne!(a.samples.features, c.samples.features);
    }

    #[test]
    fn noiseless_features_are_prototypes() {
        let h = fixtures::cityscapes();
        let spec = SyntheticSpec { noise_sigma: 0.0, prototype_scale: 1.0, ..small_spec(1) };
        let data = generate_dataset(&h, &spec).unwrap();
        let mut correct = 0;
        for (k, &leaf) in data.samples.labels.leaf_labels().iter().enumerate() {
            let x = data.samples.features.column(k);
            assert_eq!(x, data.prototypes.column(leaf));
            let nearest = (0..h.num_leaves())
                .min_by(|&a, &b| {
                    let da: f64 = (&x - &data.prototypes.column(a)).mapv(|v| v * v).sum();
                    let db: f64 = (&x - &data.prototypes.column(b)).mapv(|v| v * v).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            correct += usize::from(nearest == leaf);
        }
        assert_eq!(correct, data.samples.num_pixels());
    }

    #[test]
    fn invalid_specs() {
        let h = fixtures::toy6();
        assert!(generate_dataset(&h, &SyntheticSpec { feature_dim: 0, ..small_spec(0) }).is_err());
        assert!(generate_dataset(&h, &SyntheticSpec { train_fraction: 1.0, ..small_spec(0) }).is_err());
        assert!(generate_dataset(&h, &SyntheticSpec { noise_sigma: -1.0, ..small_spec(0) }).is_err());
    }

    #[test]
    fn zero_lr_keeps_model() {
        let h = fixtures::toy6();
        let data = generate_dataset(&h, &small_spec(5)).unwrap();
        let (tr, te) = data.split(&h);
        let model = LinearLogicModel::init(&mut ChaCha8Rng::seed_from_u64(0), h.len(), 32);
        let cfg = TrainConfig { lr: 0.0, epochs: 1, ..TrainConfig::default() };
        let out = train(&h, model.clone(), &tr, &te, &cfg).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.history[0].total, out.history[1].total);
        let direct = total_loss(&model.forward(tr.features.view()), &tr.labels, &derive_rules(&h), &cfg.loss_config().unwrap())
            .unwrap();
        assert_eq!(out.history[0].total, direct.total);
    }

    #[test]
    fn divergence_is_reported() {
        let h = fixtures::toy6();
        let data = generate_dataset(&h, &small_spec(5)).unwrap();
        let (tr, te) = data.split(&h);
        let mut model = LinearLogicModel::init(&mut ChaCha8Rng::seed_from_u64(0), h.len(), 32);
        model.weights[[2, 3]] = f64::NAN;
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let err = train(&h, model, &tr, &te, &cfg).unwrap_err();
        assert!(matches!(err, TrainError::Diverged { epoch: 0, .. }), "{err}");
    }

    #[test]
    fn init_range() {
        let m = LinearLogicModel::init(&mut ChaCha8Rng::seed_from_u64(9), 10, 20);
        assert!(m.weights.iter().chain(m.biases.iter()).all(|v| (-0.1..=0.1).contains(v)));
    }

    #[test]
    fn corruption_keeps_one_hot_levels() {
        let h = fixtures::mapillary();
        let (s, labels) = corrupted_scores(&h, &CorruptionSpec { height: 8, width: 8, ..CorruptionSpec::standard(2) })
            .unwrap();
        assert_eq!(labels.num_pixels(), 64);
        for k in 0..s.num_pixels() {
            for l in 1..=h.levels() {
                let sum: f64 = h.level_range(l).map(|v| s.get(v, k)).sum();
                assert_eq!(sum, 1.0);
            }
        }
        let (clean, _) = corrupted_scores(&h, &CorruptionSpec { flip_rate: 0.0, ..CorruptionSpec::standard(2) }).unwrap();
        assert_eq!(violation_rate(&clean, &h), 0.0);
    }
}
