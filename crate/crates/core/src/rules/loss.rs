use std::ops::Range;

use ndarray::{s, Array2, ArrayBase, ArrayView1, ArrayView2, ArrayViewMut2, Axis, DataMut, Ix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LabelMap, RuleSet, ScoreMap};
use crate::fuzzy::{pow_q, root_q, FuzzyConfig, FuzzyError};
use crate::hierarchy::{Hierarchy, NodeId};

/// Pixels per work unit. Partial sums are always reduced in chunk order, so
/// results do not depend on the thread count.
pub const PIXEL_CHUNK: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty pixel set")]
    NoPixels,
    #[error("score map has {found} nodes, rules expect {expected}")]
    NodeCount { expected: usize, found: usize },
    #[error("labels cover {labels} pixels, scores cover {scores}")]
    PixelCount { labels: usize, scores: usize },
    #[error("alpha must be finite and non-negative, got {0}")]
    BadAlpha(f64),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BceReduction {
    /// Mean over pixels and nodes.
    #[default]
    Mean,
    /// Sum over nodes, mean over pixels.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub fuzzy: FuzzyConfig,
    pub alpha: f64,
    pub use_c: bool,
    pub use_d: bool,
    pub use_e: bool,
    pub bce_reduction: BceReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            fuzzy: FuzzyConfig::default(),
            alpha: 0.2,
            use_c: true,
            use_d: true,
            use_e: true,
            bce_reduction: BceReduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        self.fuzzy.validate()?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(LossError::BadAlpha(self.alpha));
        }
        Ok(())
    }
}

/// One loss component: its value, per-node truth degree of the rule (`None`
/// where the node has no instance of it) and `∂L/∂s`.
#[derive(Debug, Clone)]
pub struct RuleLoss {
    pub value: f64,
    pub g: Vec<Option<f64>>,
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub l_c: f64,
    pub l_d: f64,
    pub l_e: f64,
    pub l_bce: f64,
    /// `alpha * (enabled logic terms) + l_bce`.
    pub total: f64,
    pub g_c: Vec<Option<f64>>,
    pub g_d: Vec<Option<f64>>,
    pub g_e: Vec<Option<f64>>,
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLoss {
    pub name: String,
    pub level: usize,
    pub g_c: Option<f64>,
    pub g_d: Option<f64>,
    pub g_e: Option<f64>,
}

/// Serializable view of a [`LossReport`] without the gradient tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub pixels: usize,
    pub q: u32,
    pub alpha: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub l_e: f64,
    pub l_bce: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub nodes: Vec<NodeLoss>,
}

impl LossReport {
    pub fn summary(&self, h: &Hierarchy, cfg: &LossConfig) -> LossSummary {
        let nodes = h
            .nodes()
            .iter()
            .map(|n| NodeLoss {
                name: n.name.clone(),
                level: n.level,
                g_c: self.g_c[n.id],
                g_d: self.g_d[n.id],
                g_e: self.g_e[n.id],
            })
            .collect();
        LossSummary {
            pixels: self.grad.ncols(),
            q: cfg.fuzzy.q,
            alpha: cfg.alpha,
            l_c: self.l_c,
            l_d: self.l_d,
            l_e: self.l_e,
            l_bce: self.l_bce,
            total: self.total,
            grad_norm: self.grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            nodes,
        }
    }
}

fn chunk_ranges(k: usize) -> Vec<Range<usize>> {
    (0..k).step_by(PIXEL_CHUNK).map(|a| a..(a + PIXEL_CHUNK).min(k)).collect()
}

fn map_chunks<T: Send>(s: ArrayView2<'_, f64>, f: impl Fn(ArrayView2<'_, f64>, Range<usize>) -> T + Sync) -> Vec<T> {
    let ranges = chunk_ranges(s.ncols());
    if ranges.len() == 1 {
        return vec![f(s, 0..s.ncols())];
    }
    ranges.into_par_iter().map(|r| f(s.slice(s![.., r.clone()]), r)).collect()
}

fn sum_in_order(parts: Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    parts.into_iter().fold(vec![0.0; n], |mut acc, p| {
        acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        acc
    })
}

/// Joins pixel blocks along the pixel axis into a row-major array.
/// `concatenate` may hand back a column-major result, which breaks the row
/// slicing used by the loss kernels.
pub(crate) fn join_blocks(rows: usize, mut blocks: Vec<Array2<f64>>) -> Array2<f64> {
    if blocks.len() == 1 && blocks[0].is_standard_layout() {
        return blocks.pop().expect("one block");
    }
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut at = 0;
    for b in &blocks {
        out.slice_mut(s![.., at..at + b.ncols()]).assign(b);
        at += b.ncols();
    }
    out
}

/// Runs `f` inside a function compiled for AVX2 when the CPU has it, so the
/// inlined loops use wider vectors. Only lane-wise adds and multiplies are
/// vectorized (never fused), so results are the same on every target.
#[inline(always)]
fn vectorized<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        #[target_feature(enable = "avx2")]
        fn run<R>(f: impl FnOnce() -> R) -> R {
            f()
        }
        // SAFETY: the CPU supports AVX2.
        return unsafe { run(f) };
    }
    f()
}

/// Node row of a column block. Score rows are contiguous by construction.
#[inline]
fn row<'a>(blk: &ArrayView2<'a, f64>, v: usize) -> &'a [f64] {
    blk.index_axis_move(Axis(0), v).to_slice().expect("contiguous rows")
}

#[inline]
fn row_mut<S: DataMut<Elem = f64>>(grad: &mut ArrayBase<S, Ix2>, v: usize) -> &mut [f64] {
    grad.row_mut(v).into_slice().expect("contiguous rows")
}

fn check(s: &ScoreMap, rules: &RuleSet, cfg: &FuzzyConfig) -> Result<(), LossError> {
    cfg.validate()?;
    if s.num_pixels() == 0 {
        return Err(LossError::NoPixels);
    }
    if s.num_nodes() != rules.num_nodes {
        return Err(LossError::NodeCount { expected: rules.num_nodes, found: s.num_nodes() });
    }
    Ok(())
}

/// `m^(1/q - 1)`, the chain factor through the q-th root. Zero at `m = 0`,
/// where every residual vanishes and zero is a valid subgradient.
#[inline]
fn root_slope(m: f64, q: u32) -> f64 {
    if m > 0.0 {
        root_q(m, q) / m
    } else {
        0.0
    }
}

#[inline(always)]
fn c_sums(blk: ArrayView2<'_, f64>, rules: &RuleSet, q: u32) -> Vec<f64> {
    rules
        .c_rules
        .iter()
        .map(|&(v, p)| row(&blk, v).iter().zip(row(&blk, p)).map(|(&a, &b)| pow_q(a - a * b, q)).sum())
        .collect()
}

/// Per pixel, the largest child score and its node, lowest id on ties.
#[inline(always)]
fn max_child(blk: &ArrayView2<'_, f64>, children: &[NodeId], best: &mut [f64], arg: &mut [NodeId]) {
    best.copy_from_slice(row(blk, children[0]));
    arg.fill(children[0]);
    for &c in &children[1..] {
        for ((b, a), &x) in best.iter_mut().zip(arg.iter_mut()).zip(row(blk, c)) {
            if x > *b || (x == *b && c < *a) {
                *b = x;
                *a = c;
            }
        }
    }
}

#[inline(always)]
fn d_sums(blk: ArrayView2<'_, f64>, rules: &RuleSet, q: u32) -> Vec<f64> {
    let mut best = vec![0.0; blk.ncols()];
    let mut arg = vec![0; blk.ncols()];
    rules
        .d_rules
        .iter()
        .map(|(v, children)| {
            max_child(&blk, children, &mut best, &mut arg);
            row(&blk, *v).iter().zip(&best).map(|(&a, &m)| pow_q(a - a * m, q)).sum()
        })
        .collect()
}

/// Rows of `s^q` for one peer group.
#[inline(always)]
fn group_powers(blk: &ArrayView2<'_, f64>, group: &[NodeId], q: u32) -> Array2<f64> {
    let mut x = Array2::zeros((group.len(), blk.ncols()));
    for (i, &v) in group.iter().enumerate() {
        for (o, &a) in row_mut(&mut x, i).iter_mut().zip(row(blk, v)) {
            *o = pow_q(a, q);
        }
    }
    x
}

/// Dot product with four interleaved partial sums (fixed order).
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let body = a.len() - a.len() % 4;
    for (x, y) in a[..body].chunks_exact(4).zip(b[..body].chunks_exact(4)) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = a[body..].iter().zip(&b[body..]).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn rows_of(x: &Array2<f64>) -> Vec<&[f64]> {
    x.outer_iter().map(|r| r.to_slice().expect("contiguous rows")).collect()
}

/// Symmetric Gram matrix of the rows of `x`.
#[inline(always)]
fn gram(x: &Array2<f64>) -> Array2<f64> {
    let rows = rows_of(x);
    let n = rows.len();
    // Scores are nonnegative, so an all-zero row has an exactly zero Gram row.
    let live: Vec<usize> = (0..n).filter(|&i| rows[i].iter().any(|&a| a != 0.0)).collect();
    let mut out = vec![0.0; n * n];
    for (a, &i) in live.iter().enumerate() {
        for &j in &live[a..] {
            let v = dot(rows[i], rows[j]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Array2::from_shape_vec((n, n), out).expect("n x n")
}

/// `out = Σ_j w[j] · xs[j]`, summed in row order.
#[inline(always)]
fn mix(out: &mut [f64], w: ArrayView1<'_, f64>, xs: &[&[f64]]) {
    out.fill(0.0);
    for (&wj, xj) in w.iter().zip(xs) {
        if wj != 0.0 {
            for (o, &e) in out.iter_mut().zip(*xj) {
                *o += wj * e;
            }
        }
    }
}

/// Per peer group, the Gram matrix of `s^q` over the block's pixels.
fn e_sums(blk: ArrayView2<'_, f64>, rules: &RuleSet, q: u32) -> Vec<Array2<f64>> {
    rules
        .peer_groups
        .iter()
        .map(|g| {
            gram(&group_powers(&blk, g, q))
        })
        .collect()
}

/// Mergeable power sums behind the three logic losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicSums {
    pub pixels: usize,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<Array2<f64>>,
}

impl LogicSums {
    pub fn of(s: &ScoreMap, rules: &RuleSet, q: u32) -> Self {
        let parts = map_chunks(s.view(), |blk, _| LogicSums {
            pixels: blk.ncols(),
            c: c_sums(blk, rules, q),
            d: d_sums(blk, rules, q),
            e: e_sums(blk, rules, q),
        });
        let mut acc = LogicSums::empty(rules);
        for p in &parts {
            acc.merge(p);
        }
        acc
    }

    pub fn empty(rules: &RuleSet) -> Self {
        LogicSums {
            pixels: 0,
            c: vec![0.0; rules.c_rules.len()],
            d: vec![0.0; rules.d_rules.len()],
            e: rules.peer_groups.iter().map(|g| Array2::zeros((g.len(), g.len()))).collect(),
        }
    }

    pub fn merge(&mut self, other: &LogicSums) {
        self.pixels += other.pixels;
        self.c.iter_mut().zip(&other.c).for_each(|(a, b)| *a += b);
        self.d.iter_mut().zip(&other.d).for_each(|(a, b)| *a += b);
        self.e.iter_mut().zip(&other.e).for_each(|(a, b)| *a += b);
    }

    /// `(L_C, L_D, L_E)` for the pixels accumulated so far.
    pub fn losses(&self, rules: &RuleSet, q: u32) -> (f64, f64, f64) {
        let k = self.pixels as f64;
        let mean_root = |sums: &[f64]| {
            if sums.is_empty() {
                0.0
            } else {
                sums.iter().map(|&x| root_q(x / k, q)).sum::<f64>() / sums.len() as f64
            }
        };
        let (l_e, _) = e_finish(&gram_roots(&self.e, q, k), rules);
        (mean_root(&self.c), mean_root(&self.d), l_e)
    }
}

/// Per group, `(Gram / k)^(1/q)`; the Gram is symmetric so each root is taken once.
fn gram_roots(grams: &[Array2<f64>], q: u32, k: f64) -> Vec<Array2<f64>> {
    grams
        .iter()
        .map(|gram| {
            let n = gram.nrows();
            let gram = gram.as_standard_layout();
            let src = gram.as_slice().expect("standard layout");
            let mut r = vec![0.0; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    let x = src[i * n + j];
                    if x != 0.0 {
                        let v = root_q(x / k, q);
                        r[i * n + j] = v;
                        r[j * n + i] = v;
                    }
                }
            }
            Array2::from_shape_vec((n, n), r).expect("n x n")
        })
        .collect()
}

/// `L_E` and per-node `G_E` from the group Gram roots.
fn e_finish(roots: &[Array2<f64>], rules: &RuleSet) -> (f64, Vec<Option<f64>>) {
    let mut g = vec![None; rules.num_nodes];
    let mut total = 0.0;
    for (group, r) in rules.peer_groups.iter().zip(roots) {
        let m = (group.len() - 1) as f64;
        for (i, &v) in group.iter().enumerate() {
            // The diagonal of `r` is zero, so the full row sum is the peer sum.
            let agg: f64 = r.row(i).iter().sum();
            let gv = 1.0 - agg / m;
            g[v] = Some(gv);
            total += 1.0 - gv;
        }
    }
    (total / rules.num_nodes as f64, g)
}

/// Where a component adds its gradient: `scale * ∂L/∂s` goes into the matrix.
type Sink<'a> = Option<(f64, &'a mut Array2<f64>)>;

/// Runs `f` on matching column chunks of `s` and `grad`.
fn for_chunks_mut(
    s: ArrayView2<'_, f64>,
    grad: &mut Array2<f64>,
    f: impl Fn(ArrayView2<'_, f64>, ArrayViewMut2<'_, f64>, Range<usize>) + Sync,
) {
    let mut views: Vec<_> = grad.axis_chunks_iter_mut(Axis(1), PIXEL_CHUNK).collect();
    if views.len() == 1 {
        let k = s.ncols();
        return f(s, views.pop().expect("one chunk"), 0..k);
    }
    views
        .into_par_iter()
        .zip(chunk_ranges(s.ncols()))
        .for_each(|(g, r)| f(s.slice(s![.., r.clone()]), g, r));
}

fn sink_shape(s: &ScoreMap, sink: &Sink<'_>) {
    if let Some((_, grad)) = sink {
        assert_eq!(grad.dim(), s.values().dim(), "gradient sink must match the score map");
    }
}

fn with_grad(
    s: &ScoreMap,
    rules: &RuleSet,
    cfg: &FuzzyConfig,
    part: Part,
) -> Result<RuleLoss, LossError> {
    let mut grad = Array2::zeros(s.values().raw_dim());
    let (value, g) = part(s, rules, cfg, Some((1.0, &mut grad)))?;
    Ok(RuleLoss { value, g, grad })
}

/// Composition loss: every non-root node implies its parent.
pub fn c_loss(s: &ScoreMap, rules: &RuleSet, cfg: &FuzzyConfig) -> Result<RuleLoss, LossError> {
    with_grad(s, rules, cfg, c_part)
}

/// Decomposition loss: every non-leaf node implies one of its children.
pub fn d_loss(s: &ScoreMap, rules: &RuleSet, cfg: &FuzzyConfig) -> Result<RuleLoss, LossError> {
    with_grad(s, rules, cfg, d_part)
}

/// Exclusion loss: pairwise exclusion between every node and each of its peers.
pub fn e_loss(s: &ScoreMap, rules: &RuleSet, cfg: &FuzzyConfig) -> Result<RuleLoss, LossError> {
    with_grad(s, rules, cfg, e_part)
}

/// Per-rule truth degrees and the chain coefficients `scale · m^(1/q-1) / (k n)`.
fn rule_coefs(sums: &[f64], nodes: impl Iterator<Item = NodeId>, num_nodes: usize, q: u32, k: f64, scale: f64)
    -> (f64, Vec<Option<f64>>, Vec<f64>) {
    let n = sums.len();
    let mut g = vec![None; num_nodes];
    let mut value = 0.0;
    let mut coef = vec![0.0; n];
    for ((i, v), &sum) in nodes.enumerate().zip(sums) {
        let m = sum / k;
        let gv = 1.0 - root_q(m, q);
        g[v] = Some(gv);
        value += 1.0 - gv;
        coef[i] = scale * root_slope(m, q) / (k * n as f64);
    }
    if n > 0 {
        value /= n as f64;
    }
    (value, g, coef)
}

fn c_part(s: &ScoreMap, rules: &RuleSet, cfg: &FuzzyConfig, sink: Sink<'_>) -> Result<(f64, Vec<Option<f64>>), LossError> {
    check(s, rules, cfg)?;
    sink_shape(s, &sink);
    let q = cfg.q;
    let k = s.num_pixels() as f64;
    let sums = sum_in_order(map_chunks(s.view(), |blk, _| vectorized(|| c_sums(blk, rules, q))), rules.c_rules.len());
    let scale = sink.as_ref().map_or(0.0, |(a, _)| *a);
    let (value, g, coef) = rule_coefs(&sums, rules.c_rules.iter().map(|r| r.0), rules.num_nodes, q, k, scale);
    let Some((_, grad)) = sink else {
        return Ok((value, g));
    };
    for_chunks_mut(s.view(), grad, |blk, mut grad, _| vectorized(|| {
        let mut d = vec![0.0; blk.ncols()];
        for (i, &(v, p)) in rules.c_rules.iter().enumerate() {
            if coef[i] == 0.0 {
                continue;
            }
            let (a, b) = (row(&blk, v), row(&blk, p));
            for ((dj, &aj), &bj) in d.iter_mut().zip(a).zip(b) {
                *dj = coef[i] * pow_q(aj - aj * bj, q - 1);
            }
            for ((g, &dj), &bj) in row_mut(&mut grad, v).iter_mut().zip(&d).zip(b) {
                *g += dj * (1.0 - bj);
            }
            for ((g, &dj), &aj) in row_mut(&mut grad, p).iter_mut().zip(&d).zip(a) {
                *g -= dj * aj;
            }
        }
    }));
    Ok((value, g))
}

fn d_part(s: &ScoreMap, rules: &RuleSet, cfg: &FuzzyConfig, sink: Sink<'_>) -> Result<(f64, Vec<Option<f64>>), LossError> {
    check(s, rules, cfg)?;
    sink_shape(s, &sink);
    let q = cfg.q;
    let k = s.num_pixels() as f64;
    let sums = sum_in_order(map_chunks(s.view(), |blk, _| vectorized(|| d_sums(blk, rules, q))), rules.d_rules.len());
    let scale = sink.as_ref().map_or(0.0, |(a, _)| *a);
    let (value, g, coef) = rule_coefs(&sums, rules.d_rules.iter().map(|r| r.0), rules.num_nodes, q, k, scale);
    let Some((_, grad)) = sink else {
        return Ok((value, g));
    };
    for_chunks_mut(s.view(), grad, |blk, mut grad, _| vectorized(|| {
        let mut best = vec![0.0; blk.ncols()];
        let mut arg = vec![0; blk.ncols()];
        let mut d = vec![0.0; blk.ncols()];
        for (i, (v, children)) in rules.d_rules.iter().enumerate() {
            if coef[i] == 0.0 {
                continue;
            }
            max_child(&blk, children, &mut best, &mut arg);
            let a = row(&blk, *v);
            for ((dj, &aj), &bj) in d.iter_mut().zip(a).zip(&best) {
                *dj = coef[i] * pow_q(aj - aj * bj, q - 1);
            }
            for ((g, &dj), &bj) in row_mut(&mut grad, *v).iter_mut().zip(&d).zip(&best) {
                *g += dj * (1.0 - bj);
            }
            for (j, &c) in arg.iter().enumerate() {
                grad[[c, j]] -= d[j] * a[j];
            }
        }
    }));
    Ok((value, g))
}

fn e_part(s: &ScoreMap, rules: &RuleSet, cfg: &FuzzyConfig, sink: Sink<'_>) -> Result<(f64, Vec<Option<f64>>), LossError> {
    check(s, rules, cfg)?;
    sink_shape(s, &sink);
    let q = cfg.q;
    let k = s.num_pixels() as f64;
    let mut grams: Vec<Array2<f64>> =
        rules.peer_groups.iter().map(|g| Array2::zeros((g.len(), g.len()))).collect();
    // The powers `s^q` per chunk and group are kept for the gradient pass.
    let powers = map_chunks(s.view(), |blk, _| {
        vectorized(|| rules.peer_groups.iter().map(|g| group_powers(&blk, g, q)).collect::<Vec<_>>())
    });
    for chunk in &powers {
        vectorized(|| grams.iter_mut().zip(chunk).for_each(|(a, x)| *a += &gram(x)));
    }
    let roots = gram_roots(&grams, q, k);
    let (value, g) = e_finish(&roots, rules);
    let Some((alpha, grad)) = sink else {
        return Ok((value, g));
    };

    // Γ[i, j] = ∂L_E/∂Gram[i, j]; the gradient w.r.t. X = s^q is (Γ + Γᵀ)X.
    let scale = 1.0 / (rules.num_nodes as f64 * q as f64 * k);
    let sym: Vec<Array2<f64>> = rules
        .peer_groups
        .iter()
        .zip(grams.iter().zip(&roots))
        .map(|(group, (gram, r))| {
            let n = group.len();
            let m = (n - 1) as f64;
            // Γ is symmetric, so Γ + Γᵀ = 2Γ. The slope m^(1/q - 1) is root / m.
            Array2::from_shape_fn((n, n), |(i, j)| {
                let x = gram[[i, j]] / k;
                if i == j || x <= 0.0 {
                    0.0
                } else {
                    alpha * (2.0 * scale / m * (r[[i, j]] / x))
                }
            })
        })
        .collect();

    for_chunks_mut(s.view(), grad, |blk, mut grad, r| vectorized(|| {
        let chunk = &powers[r.start / PIXEL_CHUNK];
        let mut dx = vec![0.0; blk.ncols()];
        for ((group, sym), x) in rules.peer_groups.iter().zip(&sym).zip(chunk) {
            let xs = rows_of(x);
            for (i, &v) in group.iter().enumerate() {
                mix(&mut dx, sym.row(i), &xs);
                for ((g, &dj), &a) in row_mut(&mut grad, v).iter_mut().zip(&dx).zip(row(&blk, v)) {
                    *g += dj * q as f64 * pow_q(a, q - 1);
                }
            }
        }
    }));
    Ok((value, g))
}

/// Binary cross-entropy against the multi-hot labels, scores clamped to
/// `[eps, 1 - eps]`. The clamp passes no gradient outside that range.
pub fn bce_loss(
    s: &ScoreMap,
    labels: &LabelMap,
    eps: f64,
    reduction: BceReduction,
) -> Result<(f64, Array2<f64>), LossError> {
    if s.num_pixels() == 0 {
        return Err(LossError::NoPixels);
    }
    if labels.num_pixels() != s.num_pixels() {
        return Err(LossError::PixelCount { labels: labels.num_pixels(), scores: s.num_pixels() });
    }
    if labels.y().nrows() != s.num_nodes() {
        return Err(LossError::NodeCount { expected: labels.y().nrows(), found: s.num_nodes() });
    }
    let norm = match reduction {
        BceReduction::Mean => (s.num_pixels() * s.num_nodes()) as f64,
        BceReduction::Sum => s.num_pixels() as f64,
    };
    let y = labels.y();
    let parts = map_chunks(s.view(), |blk, r| {
        let yb = y.slice(s![.., r]);
        let mut sum = 0.0;
        let mut grad = Array2::zeros(blk.raw_dim());
        for (v, yv) in yb.outer_iter().enumerate() {
            for ((g, &x), &t) in row_mut(&mut grad, v).iter_mut().zip(row(&blk, v)).zip(yv) {
                let c = x.clamp(eps, 1.0 - eps);
                sum -= if t == 1.0 {
                    c.ln()
                } else if t == 0.0 {
                    (1.0 - c).ln()
                } else {
                    t * c.ln() + (1.0 - t) * (1.0 - c).ln()
                };
                if x >= eps && x <= 1.0 - eps {
                    *g = (-t / c + (1.0 - t) / (1.0 - c)) / norm;
                }
            }
        }
        (sum, grad)
    });
    let mut value = 0.0;
    let mut blocks = Vec::with_capacity(parts.len());
    for (sum, grad) in parts {
        value += sum;
        blocks.push(grad);
    }
    Ok((value / norm, join_blocks(s.num_nodes(), blocks)))
}

/// Total loss and gradient over the enabled components only. The gradient is
/// accumulated exactly as in [`total_loss`], so the two agree bit for bit.
pub fn objective(
    s: &ScoreMap,
    labels: &LabelMap,
    rules: &RuleSet,
    cfg: &LossConfig,
) -> Result<(f64, Array2<f64>), LossError> {
    cfg.validate()?;
    let (l_bce, mut grad) = bce_loss(s, labels, cfg.fuzzy.eps, cfg.bce_reduction)?;
    let mut logic = 0.0;
    if cfg.alpha > 0.0 {
        for (on, part) in logic_parts(cfg) {
            if on {
                logic += part(s, rules, &cfg.fuzzy, Some((cfg.alpha, &mut grad)))?.0;
            }
        }
    }
    Ok((cfg.alpha * logic + l_bce, grad))
}

type Part = fn(&ScoreMap, &RuleSet, &FuzzyConfig, Sink<'_>) -> Result<(f64, Vec<Option<f64>>), LossError>;

fn logic_parts(cfg: &LossConfig) -> [(bool, Part); 3] {
    [(cfg.use_c, c_part), (cfg.use_d, d_part), (cfg.use_e, e_part)]
}

/// Every component's value and truth degrees; the gradient and total cover
/// the enabled components only.
pub fn total_loss(
    s: &ScoreMap,
    labels: &LabelMap,
    rules: &RuleSet,
    cfg: &LossConfig,
) -> Result<LossReport, LossError> {
    cfg.validate()?;
    let (l_bce, mut grad) = bce_loss(s, labels, cfg.fuzzy.eps, cfg.bce_reduction)?;
    let mut logic = 0.0;
    let mut parts = Vec::with_capacity(3);
    for (on, part) in logic_parts(cfg) {
        let sink = (on && cfg.alpha > 0.0).then_some((cfg.alpha, &mut grad));
        let (value, g) = part(s, rules, &cfg.fuzzy, sink)?;
        if on {
            logic += value;
        }
        parts.push((value, g));
    }
    let [(l_c, g_c), (l_d, g_d), (l_e, g_e)]: [(f64, Vec<Option<f64>>); 3] =
        parts.try_into().expect("three components");
    Ok(LossReport { l_c, l_d, l_e, l_bce, total: cfg.alpha * logic + l_bce, g_c, g_d, g_e, grad })
}
