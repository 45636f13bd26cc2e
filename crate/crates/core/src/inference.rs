//! Logic-induced inference: message passing over the hierarchy, level-wise
//! softmax, and top-scoring root-to-leaf path decoding.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hierarchy::{Hierarchy, NodeId};
use crate::rules::{ScoreMap, PIXEL_CHUNK};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Per-pixel loops over each node's neighbors.
    Reference,
    /// Row-wise operations on blocks of pixels.
    #[default]
    Matrix,
}

/// How received exclusion messages are weighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EVariant {
    /// Each peer's own message, weighted by that peer's score.
    #[default]
    PerPeer,
    /// The receiving node's message, weighted by the mean peer score.
    MeanPeer,
}

impl FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reference" => Ok(Engine::Reference),
            "matrix" => Ok(Engine::Matrix),
            _ => Err(format!("unknown engine '{s}' (expected reference or matrix)")),
        }
    }
}

impl FromStr for EVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-peer" => Ok(EVariant::PerPeer),
            "mean-peer" => Ok(EVariant::MeanPeer),
            _ => Err(format!("unknown e-variant '{s}' (expected per-peer or mean-peer)")),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Reference => "reference",
            Engine::Matrix => "matrix",
        })
    }
}

impl fmt::Display for EVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EVariant::PerPeer => "per-peer",
            EVariant::MeanPeer => "mean-peer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub iterations: usize,
    pub engine: Engine,
    pub e_variant: EVariant,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { iterations: 2, engine: Engine::Matrix, e_variant: EVariant::PerPeer }
    }
}

/// Composition message from `v` to its parent: `1 - s[v] + s[v]·s[p]`.
pub fn c_message(col: ArrayView1<'_, f64>, h: &Hierarchy, v: NodeId) -> Option<f64> {
    let p = h.node(v).parent?;
    Some(1.0 - col[v] + col[v] * col[p])
}

/// Decomposition message from `v` to each child: `1 - s[v] + s[v]·max(s[children])`.
pub fn d_message(col: ArrayView1<'_, f64>, h: &Hierarchy, v: NodeId) -> Option<f64> {
    let children = &h.node(v).children;
    if children.is_empty() {
        return None;
    }
    let m = children.iter().map(|&c| col[c]).fold(f64::NEG_INFINITY, f64::max);
    Some(1.0 - col[v] + col[v] * m)
}

/// Exclusion message from `v` to each peer: `-(1 - mean(s[v]·s[a]))`.
pub fn e_message(col: ArrayView1<'_, f64>, h: &Hierarchy, v: NodeId) -> Option<f64> {
    let peers = &h.node(v).peers;
    if peers.is_empty() {
        return None;
    }
    let sum: f64 = peers.iter().map(|&a| col[v] * col[a]).sum();
    Some(-(1.0 - sum / peers.len() as f64))
}

/// Raw (pre-softmax) update of one pixel, evaluated node by node.
fn reference_raw(col: ArrayView1<'_, f64>, h: &Hierarchy, variant: EVariant) -> Vec<f64> {
    h.nodes()
        .iter()
        .map(|node| {
            let v = node.id;
            let mut x = col[v];
            if !node.children.is_empty() {
                let sum: f64 = node.children.iter().map(|&c| col[c] * c_message(col, h, c).unwrap()).sum();
                x += sum / node.children.len() as f64;
            }
            if let Some(p) = node.parent {
                x += col[p] * d_message(col, h, p).unwrap();
            }
            if !node.peers.is_empty() {
                let m = node.peers.len() as f64;
                x += match variant {
                    EVariant::PerPeer => {
                        node.peers.iter().map(|&a| col[a] * e_message(col, h, a).unwrap()).sum::<f64>() / m
                    }
                    EVariant::MeanPeer => {
                        e_message(col, h, v).unwrap() * node.peers.iter().map(|&a| col[a]).sum::<f64>() / m
                    }
                };
            }
            x
        })
        .collect()
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn reference_block(s: ArrayView2<'_, f64>, h: &Hierarchy, cfg: &InferenceConfig) -> Array2<f64> {
    let mut out = s.to_owned();
    let mut col = vec![0.0; h.len()];
    for j in 0..s.ncols() {
        col.iter_mut().zip(s.column(j)).for_each(|(c, &x)| *c = x);
        for _ in 0..cfg.iterations {
            let view = ArrayView1::from(&col[..]);
            col = reference_raw(view, h, cfg.e_variant);
            for level in 1..=h.levels() {
                softmax_in_place(&mut col[h.level_range(level)]);
            }
        }
        if cfg.iterations == 0 {
            for level in 1..=h.levels() {
                softmax_in_place(&mut col[h.level_range(level)]);
            }
        }
        out.column_mut(j).iter_mut().zip(&col).for_each(|(o, &c)| *o = c);
    }
    out
}

/// Softmax over each level's rows, column by column, on a `[|V|, n]` block.
fn softmax_rows(x: &mut Array2<f64>, h: &Hierarchy) {
    let n = x.ncols();
    let mut max = vec![0.0; n];
    let mut sum = vec![0.0; n];
    for level in 1..=h.levels() {
        let range = h.level_range(level);
        max.fill(f64::NEG_INFINITY);
        for v in range.clone() {
            for (m, &a) in max.iter_mut().zip(x.row(v)) {
                *m = m.max(a);
            }
        }
        sum.fill(0.0);
        for v in range.clone() {
            let mut row = x.row_mut(v);
            let row = row.as_slice_mut().expect("standard layout");
            for ((a, m), s) in row.iter_mut().zip(&max).zip(sum.iter_mut()) {
                *a = (*a - m).exp();
                *s += *a;
            }
        }
        for v in range {
            let mut row = x.row_mut(v);
            for (a, s) in row.iter_mut().zip(&sum) {
                *a /= s;
            }
        }
    }
}

/// One synchronous update of a `[|V|, n]` block using row-wise operations:
/// C = diag(1/N)(T(S - S∘S) + T(S∘S)∘S), D = Tᵀ(S∘h_D), and the peer
/// operator applied as group sum minus self.
fn matrix_raw(s: ArrayView2<'_, f64>, h: &Hierarchy, variant: EVariant) -> Array2<f64> {
    let n = s.ncols();
    let mut raw = s.to_owned();
    let mut lin = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut top = vec![0.0; n];

    for node in h.nodes().iter().filter(|node| !node.children.is_empty()) {
        let v = node.id;
        let sv = s.row(v);
        let sv = sv.as_slice().expect("standard layout");

        lin.fill(0.0);
        sq.fill(0.0);
        top.fill(f64::NEG_INFINITY);
        for &c in &node.children {
            let sc = s.row(c);
            for (((l, q), t), &x) in lin.iter_mut().zip(sq.iter_mut()).zip(top.iter_mut()).zip(sc.iter()) {
                let xx = x * x;
                *l += x - xx;
                *q += xx;
                *t = t.max(x);
            }
        }
        let inv_n = 1.0 / node.children.len() as f64;
        let mut rv = raw.row_mut(v);
        for (((r, l), q), &x) in rv.iter_mut().zip(&lin).zip(&sq).zip(sv) {
            *r += (l + q * x) * inv_n;
        }
        // top becomes s_v·h_D(v), broadcast to every child
        for (t, &x) in top.iter_mut().zip(sv) {
            *t = x * (1.0 - x + x * *t);
        }
        for &c in &node.children {
            let mut rc = raw.row_mut(c);
            for (r, t) in rc.iter_mut().zip(&top) {
                *r += t;
            }
        }
    }

    let mut total = vec![0.0; n];
    let mut weighted: Vec<f64> = Vec::new();
    for group in h.peer_groups().iter().filter(|g| g.len() >= 2) {
        let inv_m = 1.0 / (group.len() - 1) as f64;
        total.fill(0.0);
        for &a in group {
            for (t, &x) in total.iter_mut().zip(s.row(a)) {
                *t += x;
            }
        }
        match variant {
            EVariant::PerPeer => {
                // weighted[a] = s_a·h_E(a), then E_v = (Σ_group weighted - weighted_v) / M
                weighted.clear();
                let mut wsum = vec![0.0; n];
                for &a in group {
                    for ((&x, t), ws) in s.row(a).iter().zip(&total).zip(wsum.iter_mut()) {
                        let w = x * -(1.0 - x * (t - x) * inv_m);
                        weighted.push(w);
                        *ws += w;
                    }
                }
                for (i, &v) in group.iter().enumerate() {
                    let own = &weighted[i * n..(i + 1) * n];
                    let mut rv = raw.row_mut(v);
                    for ((r, ws), w) in rv.iter_mut().zip(&wsum).zip(own) {
                        *r += (ws - w) * inv_m;
                    }
                }
            }
            EVariant::MeanPeer => {
                for &v in group {
                    let sv = s.row(v);
                    let mut rv = raw.row_mut(v);
                    for ((r, &x), t) in rv.iter_mut().zip(sv.iter()).zip(&total) {
                        let mean_peer = (t - x) * inv_m;
                        let hv = -(1.0 - x * mean_peer);
                        *r += hv * mean_peer;
                    }
                }
            }
        }
    }
    raw
}

fn matrix_block(s: ArrayView2<'_, f64>, h: &Hierarchy, cfg: &InferenceConfig) -> Array2<f64> {
    let mut cur = s.as_standard_layout().into_owned();
    for _ in 0..cfg.iterations {
        cur = matrix_raw(cur.view(), h, cfg.e_variant);
        softmax_rows(&mut cur, h);
    }
    if cfg.iterations == 0 {
        softmax_rows(&mut cur, h);
    }
    cur
}

fn run_blocks(s: &ScoreMap, f: impl Fn(ArrayView2<'_, f64>) -> Array2<f64> + Sync) -> ScoreMap {
    let k = s.num_pixels();
    let view = s.view();
    let blocks: Vec<Array2<f64>> = (0..k)
        .step_by(PIXEL_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|a| f(view.slice(s![.., a..(a + PIXEL_CHUNK).min(k)])))
        .collect();
    let values = crate::rules::join_blocks(s.num_nodes(), blocks);
    ScoreMap::from_trusted(values, s.height(), s.width())
}

/// Softmax over each level's entries, per pixel.
pub fn level_softmax(s: &ScoreMap, h: &Hierarchy) -> ScoreMap {
    run_blocks(s, |blk| {
        let mut x = blk.as_standard_layout().into_owned();
        softmax_rows(&mut x, h);
        x
    })
}

/// A single message-passing iteration followed by level softmax.
pub fn message_passing_step(s: &ScoreMap, h: &Hierarchy, cfg: &InferenceConfig) -> ScoreMap {
    run_inference(s, h, &InferenceConfig { iterations: 1, ..*cfg })
}

/// `cfg.iterations` rounds of message passing. With zero rounds the input is
/// only level-softmaxed.
pub fn run_inference(s: &ScoreMap, h: &Hierarchy, cfg: &InferenceConfig) -> ScoreMap {
    assert_eq!(s.num_nodes(), h.len(), "score map does not match hierarchy");
    match cfg.engine {
        Engine::Reference => run_blocks(s, |blk| reference_block(blk, h, cfg)),
        Engine::Matrix => run_blocks(s, |blk| matrix_block(blk, h, cfg)),
    }
}

/// Decoded root-to-leaf paths, one per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPrediction {
    pub levels: usize,
    pub height: usize,
    pub width: usize,
    /// Pixel-major; each path is ordered level 1..=L.
    pub nodes: Vec<NodeId>,
    pub scores: Vec<f64>,
}

impl PathPrediction {
    /// Paths implied by leaf predictions, laid out as `1 × K`.
    pub fn from_leaves(h: &Hierarchy, leaves: &[NodeId]) -> Self {
        let mut nodes = Vec::with_capacity(leaves.len() * h.levels());
        for &leaf in leaves {
            nodes.extend(h.path_to_root(leaf).expect("leaf ids"));
        }
        PathPrediction { levels: h.levels(), height: 1, width: leaves.len(), nodes, scores: vec![0.0; leaves.len()] }
    }

    pub fn num_pixels(&self) -> usize {
        self.scores.len()
    }

    pub fn path(&self, pixel: usize) -> &[NodeId] {
        &self.nodes[pixel * self.levels..(pixel + 1) * self.levels]
    }

    pub fn leaf(&self, pixel: usize) -> NodeId {
        self.nodes[pixel * self.levels]
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.num_pixels()).map(|k| self.leaf(k)).collect()
    }

    /// Node at `level` on each pixel's path.
    pub fn at_level(&self, level: usize) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.chunks(self.levels).map(move |p| p[level - 1])
    }

    /// Multi-hot encoding of the decoded paths.
    pub fn to_score_map(&self, h: &Hierarchy) -> ScoreMap {
        let mut values = Array2::zeros((h.len(), self.num_pixels()));
        for k in 0..self.num_pixels() {
            for &v in self.path(k) {
                values[[v, k]] = 1.0;
            }
        }
        ScoreMap::from_trusted(values, self.height, self.width)
    }
}

/// Best path through each pixel by leaf-to-root dynamic programming. Ties go
/// to the path with the lowest leaf id.
pub fn decode_path(s: &ScoreMap, h: &Hierarchy) -> PathPrediction {
    assert_eq!(s.num_nodes(), h.len(), "score map does not match hierarchy");
    let k = s.num_pixels();
    let levels = h.levels();
    let view = s.view();
    let parts: Vec<(Vec<NodeId>, Vec<f64>)> = (0..k)
        .step_by(PIXEL_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|a| {
            let b = (a + PIXEL_CHUNK).min(k);
            let mut nodes = Vec::with_capacity((b - a) * levels);
            let mut scores = Vec::with_capacity(b - a);
            let mut best = vec![0.0; h.len()];
            let mut leaf = vec![0; h.len()];
            let mut next = vec![0; h.len()];
            for j in a..b {
                let col = view.column(j);
                for node in h.nodes() {
                    let v = node.id;
                    if node.children.is_empty() {
                        best[v] = col[v];
                        leaf[v] = v;
                        continue;
                    }
                    let mut c_best = node.children[0];
                    for &c in &node.children[1..] {
                        if best[c] > best[c_best] || (best[c] == best[c_best] && leaf[c] < leaf[c_best]) {
                            c_best = c;
                        }
                    }
                    best[v] = col[v] + best[c_best];
                    leaf[v] = leaf[c_best];
                    next[v] = c_best;
                }
                let mut root = h.roots().start;
                for r in h.roots() {
                    if best[r] > best[root] || (best[r] == best[root] && leaf[r] < leaf[root]) {
                        root = r;
                    }
                }
                let start = nodes.len();
                nodes.resize(start + levels, 0);
                let mut v = root;
                for slot in (0..levels).rev() {
                    nodes[start + slot] = v;
                    if slot > 0 {
                        v = next[v];
                    }
                }
                scores.push(best[root]);
            }
            (nodes, scores)
        })
        .collect();
    let mut nodes = Vec::with_capacity(k * levels);
    let mut scores = Vec::with_capacity(k);
    for (n, s) in parts {
        nodes.extend(n);
        scores.extend(s);
    }
    PathPrediction { levels, height: s.height(), width: s.width(), nodes, scores }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;

    fn toy_col(pairs: &[(&str, f64)]) -> (Hierarchy, Array1<f64>) {
        let h = fixtures::toy6();
        let mut col = Array1::zeros(h.len());
        for &(n, x) in pairs {
            col[h.id_of(n).unwrap()] = x;
        }
        (h, col)
    }

    #[test]
    fn hand_evaluated_messages() {
        let (h, col) = toy_col(&[("a", 0.4), ("b", 0.9), ("c", 0.2), ("d", 0.8), ("e", 0.3), ("f", 0.1)]);
        let id = |n: &str| h.id_of(n).unwrap();
        assert_abs_diff_eq!(c_message(col.view(), &h, id("d")).unwrap(), 0.92, epsilon = 1e-12);
        assert_abs_diff_eq!(d_message(col.view(), &h, id("b")).unwrap(), 0.82, epsilon = 1e-12);
        assert_abs_diff_eq!(e_message(col.view(), &h, id("d")).unwrap(), -0.84, epsilon = 1e-12);
        assert_eq!(c_message(col.view(), &h, id("a")), None);
        assert_eq!(d_message(col.view(), &h, id("f")), None);
        assert_eq!(e_message(col.view(), &h, id("a")), None);
    }

    #[test]
    fn softmax_of_unit_spike() {
        let mut xs = [1.0, 0.0, 0.0];
        softmax_in_place(&mut xs);
        assert_abs_diff_eq!(xs[0], 0.576_116_884_765_829_1, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[1], 0.211_941_557_617_085_4, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[2], 0.211_941_557_617_085_4, epsilon = 1e-12);
    }

    #[test]
    fn decode_hand_example() {
        let (h, col) = toy_col(&[("a", 0.2), ("b", 0.5), ("c", 0.9), ("d", 0.7), ("e", 0.1), ("f", 0.4)]);
        let s = ScoreMap::new(col.insert_axis(ndarray::Axis(1))).unwrap();
        let p = decode_path(&s, &h);
        let names: Vec<_> = p.path(0).iter().rev().map(|&v| h.node(v).name.as_str()).collect();
        assert_eq!(names, ["a", "c", "f"]);
        assert_abs_diff_eq!(p.scores[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn decode_tie_prefers_lowest_leaf() {
        let h = fixtures::toy6();
        let s = ScoreMap::new(Array2::from_elem((h.len(), 1), 0.5)).unwrap();
        assert_eq!(decode_path(&s, &h).leaf(0), 0);
    }

    #[test]
    fn one_hot_path_is_stable() {
        let h = fixtures::toy6();
        for leaf in h.leaves() {
            let s = ScoreMap::one_hot_paths(&h, &[leaf]).unwrap();
            for engine in [Engine::Reference, Engine::Matrix] {
                let cfg = InferenceConfig { iterations: 1, engine, e_variant: EVariant::PerPeer };
                let out = message_passing_step(&s, &h, &cfg);
                for level in 1..=h.levels() {
                    let range = h.level_range(level);
                    let arg = range.clone().max_by(|&a, &b| out.get(a, 0).total_cmp(&out.get(b, 0)).then(b.cmp(&a)));
                    assert_eq!(s.get(arg.unwrap(), 0), 1.0);
                }
                assert_eq!(decode_path(&out, &h).leaf(0), leaf);
            }
        }
    }

    #[test]
    fn zero_iterations_only_normalize() {
        let h = fixtures::toy6();
        let s = ScoreMap::new(Array2::from_shape_fn((h.len(), 3), |(v, k)| ((v + 2 * k) % 5) as f64 / 4.0)).unwrap();
        for engine in [Engine::Reference, Engine::Matrix] {
            let cfg = InferenceConfig { iterations: 0, engine, ..InferenceConfig::default() };
            let out = run_inference(&s, &h, &cfg);
            let direct = level_softmax(&s, &h);
            for (a, b) in out.values().iter().zip(direct.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn symmetric_subtrees_stay_symmetric() {
        let text = r#"{"name":"sym","levels":2,"nodes":[
            {"name":"r1","level":2,"parent":null},{"name":"r2","level":2,"parent":null},
            {"name":"x1","level":1,"parent":"r1"},{"name":"y1","level":1,"parent":"r1"},
            {"name":"x2","level":1,"parent":"r2"},{"name":"y2","level":1,"parent":"r2"}]}"#;
        let h = Hierarchy::parse(text).unwrap();
        let id = |n: &str| h.id_of(n).unwrap();
        let s = ScoreMap::new(Array2::from_elem((h.len(), 1), 0.5)).unwrap();
        let out = run_inference(&s, &h, &InferenceConfig::default());
        assert_abs_diff_eq!(out.get(id("r1"), 0), out.get(id("r2"), 0), epsilon = 1e-15);
        assert_abs_diff_eq!(out.get(id("x1"), 0), out.get(id("x2"), 0), epsilon = 1e-15);
        assert_abs_diff_eq!(out.get(id("y1"), 0), out.get(id("y2"), 0), epsilon = 1e-15);
    }

    #[test]
    fn levels_sum_to_one() {
        let h = fixtures::cityscapes();
        let s = ScoreMap::new(Array2::from_shape_fn((h.len(), 2000), |(v, k)| ((v * 7 + k * 13) % 11) as f64 / 10.0))
            .unwrap();
        for variant in [EVariant::PerPeer, EVariant::MeanPeer] {
            let out = run_inference(&s, &h, &InferenceConfig { e_variant: variant, ..InferenceConfig::default() });
            for k in 0..out.num_pixels() {
                for level in 1..=h.levels() {
                    let sum: f64 = h.level_range(level).map(|v| out.get(v, k)).sum();
                    assert!((sum - 1.0).abs() <= 1e-9);
                }
            }
        }
    }
}
