mod common;

use common::{check_decode, engine_max_diff, random_scores, ENGINE_TOL};
use hierlogic::inference::{decode_path, run_inference, Engine, EVariant, InferenceConfig};
use hierlogic::{fixtures, violation_rate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matrix_engine_matches_reference() {
    let worst = engine_max_diff();
    assert!(worst <= ENGINE_TOL, "max diff {worst:e}");
}

#[test]
fn engines_agree_on_large_fixture() {
    let h = fixtures::mapillary();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = random_scores(&mut rng, &h, 100);
    for e_variant in [EVariant::PerPeer, EVariant::MeanPeer] {
        let cfg = |engine| InferenceConfig { iterations: 2, engine, e_variant };
        let a = run_inference(&s, &h, &cfg(Engine::Reference));
        let b = run_inference(&s, &h, &cfg(Engine::Matrix));
        let diff = (a.values() - b.values()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(diff <= ENGINE_TOL, "{e_variant}: {diff:e}");
    }
}

#[test]
fn decode_matches_brute_force() {
    check_decode().unwrap();
}

#[test]
fn decode_on_fixtures_is_always_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for h in fixtures::all() {
        let s = random_scores(&mut rng, &h, 500);
        let pred = decode_path(&s, &h);
        assert_eq!(violation_rate(&pred.to_score_map(&h), &h), 0.0, "{}", h.name());
    }
}
