//! Oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use hierlogic::fuzzy::FuzzyConfig;
use hierlogic::inference::{decode_path, run_inference, Engine, EVariant, InferenceConfig};
use hierlogic::rules::{bce_loss, c_loss, d_loss, e_loss, total_loss, BceReduction, LossConfig};
use hierlogic::{derive_rules, violation_rate, Hierarchy, LabelMap, PeerScope, RuleSet, ScoreMap};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-6;
pub const ENGINE_TOL: f64 = 1e-12;

pub fn random_scores(rng: &mut ChaCha8Rng, h: &Hierarchy, k: usize) -> ScoreMap {
    ScoreMap::new(Array2::from_shape_fn((h.len(), k), |_| rng.gen_range(0.0..1.0))).unwrap()
}

/// Scores in [0.05, 0.95] with every pair of siblings at least 1e-3 apart, so
/// the max inside the decomposition rule is differentiable at every entry.
pub fn tie_free_scores(rng: &mut ChaCha8Rng, h: &Hierarchy, k: usize) -> ScoreMap {
    let mut values = Array2::<f64>::zeros((h.len(), k));
    for j in 0..k {
        loop {
            for v in 0..h.len() {
                values[[v, j]] = rng.gen_range(0.05..0.95);
            }
            let ok = h.nodes().iter().all(|n| {
                n.children.iter().all(|&a| {
                    n.children.iter().all(|&b| a == b || (values[[a, j]] - values[[b, j]]).abs() >= 1e-3)
                })
            });
            if ok {
                break;
            }
        }
    }
    ScoreMap::new(values).unwrap()
}

pub fn finite_difference(s: &ScoreMap, f: &dyn Fn(&ScoreMap) -> f64) -> Array2<f64> {
    let base = s.values().clone();
    let mut grad = Array2::zeros(base.raw_dim());
    for idx in ndarray::indices(base.raw_dim()) {
        let mut up = base.clone();
        up[idx] += FD_STEP;
        let mut down = base.clone();
        down[idx] -= FD_STEP;
        let fu = f(&ScoreMap::new(up).unwrap());
        let fd = f(&ScoreMap::new(down).unwrap());
        grad[idx] = (fu - fd) / (2.0 * FD_STEP);
    }
    grad
}

pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let norm = |x: &Array2<f64>| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&(a - b)) / scale
    }
}

pub struct GradCase {
    pub h: Hierarchy,
    pub rules: RuleSet,
    pub s: ScoreMap,
    pub labels: LabelMap,
    pub q: u32,
}

/// 100 random trees (1 to 4 levels, both peer scopes) with 1 to 6 pixels and
/// q cycling through 1, 2, 3, 5.
pub fn grad_cases() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100)
        .map(|i| {
            let levels = rng.gen_range(1..=4);
            let scope = if i % 2 == 0 { PeerScope::Level } else { PeerScope::Siblings };
            let h = Hierarchy::random(&mut rng, levels, 30).with_peer_scope(scope);
            let k = rng.gen_range(1..=6);
            let s = tie_free_scores(&mut rng, &h, k);
            let labels = LabelMap::new(&h, (0..k).map(|_| rng.gen_range(0..h.num_leaves())).collect()).unwrap();
            let q = [1, 2, 3, 5][i % 4];
            GradCase { rules: derive_rules(&h), h, s, labels, q }
        })
        .collect()
}

pub type LossFn = fn(&GradCase, &ScoreMap) -> (f64, Array2<f64>);

fn fuzzy(c: &GradCase) -> FuzzyConfig {
    FuzzyConfig::with_q(c.q).unwrap()
}

/// Every differentiable objective, by name.
pub fn loss_fns() -> Vec<(&'static str, LossFn)> {
    vec![
        ("L_C", |c, s| {
            let r = c_loss(s, &c.rules, &fuzzy(c)).unwrap();
            (r.value, r.grad)
        }),
        ("L_D", |c, s| {
            let r = d_loss(s, &c.rules, &fuzzy(c)).unwrap();
            (r.value, r.grad)
        }),
        ("L_E", |c, s| {
            let r = e_loss(s, &c.rules, &fuzzy(c)).unwrap();
            (r.value, r.grad)
        }),
        ("L_BCE mean", |c, s| bce_loss(s, &c.labels, 1e-7, BceReduction::Mean).unwrap()),
        ("L_BCE sum", |c, s| bce_loss(s, &c.labels, 1e-7, BceReduction::Sum).unwrap()),
        ("total", |c, s| {
            let cfg = LossConfig { fuzzy: fuzzy(c), ..LossConfig::default() };
            let r = total_loss(s, &c.labels, &c.rules, &cfg).unwrap();
            (r.total, r.grad)
        }),
    ]
}

/// Relative error of the analytic gradient against central differences, per
/// case.
pub fn gradient_errors(cases: &[GradCase], f: LossFn) -> Vec<f64> {
    cases
        .iter()
        .map(|case| {
            let (_, analytic) = f(case, &case.s);
            let numeric = finite_difference(&case.s, &|s| f(case, s).0);
            rel_err(&analytic, &numeric)
        })
        .collect()
}

/// Largest absolute difference between the two engines over 50 random
/// instances, R cycling through 1, 2, 3, for both exclusion variants.
pub fn engine_max_diff() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let levels = rng.gen_range(1..=4);
        let scope = if i % 3 == 2 { PeerScope::Siblings } else { PeerScope::Level };
        let h = Hierarchy::random(&mut rng, levels, 40).with_peer_scope(scope);
        let k = rng.gen_range(1..=40);
        let s = random_scores(&mut rng, &h, k);
        let iterations = 1 + i % 3;
        for e_variant in [EVariant::PerPeer, EVariant::MeanPeer] {
            let cfg = |engine| InferenceConfig { iterations, engine, e_variant };
            let a = run_inference(&s, &h, &cfg(Engine::Reference));
            let b = run_inference(&s, &h, &cfg(Engine::Matrix));
            let diff = (a.values() - b.values()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            worst = worst.max(diff);
        }
    }
    worst
}

/// Best path by scoring every root-to-leaf path; ties go to the lowest leaf.
pub fn brute_force(s: &ScoreMap, h: &Hierarchy, pixel: usize) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for path in h.enumerate_paths() {
        let score: f64 = path.iter().map(|&v| s.get(v, pixel)).sum();
        let better = match &best {
            None => true,
            Some((p, b)) => score > *b || (score == *b && path[0] < p[0]),
        };
        if better {
            best = Some((path, score));
        }
    }
    best.unwrap()
}

/// Compares the decoder with brute force on 1000 random instances (at most 4
/// levels and 50 nodes). Returns the number of pixels checked.
pub fn check_decode() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pixels = 0;
    for i in 0..1000 {
        let levels = rng.gen_range(1..=4);
        let h = Hierarchy::random(&mut rng, levels, 50);
        if h.len() > 50 {
            return Err(format!("instance {i} has {} nodes", h.len()));
        }
        let k = rng.gen_range(1..=8);
        let mut s = random_scores(&mut rng, &h, k);
        if i % 2 == 1 {
            s = run_inference(&s, &h, &InferenceConfig::default());
        }
        let pred = decode_path(&s, &h);
        for j in 0..k {
            let (path, score) = brute_force(&s, &h, j);
            if pred.path(j) != path.as_slice() || (pred.scores[j] - score).abs() > 1e-12 {
                return Err(format!("instance {i}, pixel {j}: decoded {:?}, brute force {path:?}", pred.path(j)));
            }
        }
        let rate = violation_rate(&pred.to_score_map(&h), &h);
        if rate != 0.0 {
            return Err(format!("instance {i}: decoded violation rate {rate}"));
        }
        pixels += k;
    }
    Ok(pixels)
}

/// Type skeleton of a JSON value: objects keep their keys, arrays are
/// described by their first element, leaves become type names.
pub fn schema(v: &Value) -> Value {
    match v {
        Value::Null => json!("null"),
        Value::Bool(_) => json!("bool"),
        Value::Number(_) => json!("number"),
        Value::String(_) => json!("string"),
        Value::Array(items) => Value::Array(items.first().map(schema).into_iter().collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), schema(v))).collect::<Map<_, _>>()),
    }
}
