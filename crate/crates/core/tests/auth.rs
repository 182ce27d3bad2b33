use canloc_core::auth::{
    accepts, binary_cnn_specs, class_weights, identify_scores, train_auth, AuthBundle, AuthConfig, BinaryCnnModel,
    Identification, ACCEPT_THRESHOLD,
};
use canloc_core::roster::EcuRoster;
use canloc_core::Error;
use canloc_neural::Sequential;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LEN: usize = 32;
const LABELS: [&str; 5] = ["L1", "L2", "L3", "L4", "L5"];

fn untrained(ecu: &str, seed: u64) -> BinaryCnnModel {
    let cnn = Sequential::from_specs(&[1, LEN], &binary_cnn_specs(), seed).unwrap();
    BinaryCnnModel::from_parts(ecu.into(), cnn).unwrap()
}

fn bundle() -> AuthBundle {
    let models = LABELS.iter().enumerate().map(|(i, l)| untrained(l, i as u64)).collect();
    AuthBundle::new(EcuRoster::reference(), models).unwrap()
}

/// Two well separated shapes with small jitter, one positive in five.
fn toy_set(n: usize, seed: u64) -> Vec<(Vec<f64>, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..n {
        let pos = i % 5 == 0;
        let v = (0..LEN)
            .map(|j| {
                let base = if pos { (j as f64 / 4.0).sin() } else { 1.0 - (j as f64 / 7.0).cos() };
                0.5 + 0.4 * base + 0.02 * (rng.random::<f64>() - 0.5)
            })
            .collect();
        out.push((v, pos));
    }
    out
}

#[test]
fn acceptance_boundary_is_inclusive() {
    assert!(accepts(ACCEPT_THRESHOLD));
    assert!(accepts(0.9));
    assert!(!accepts(0.4999999999));
    assert!(!accepts(0.0));
}

#[test]
fn identification_rules() {
    let low = [0.1, 0.3, 0.2, 0.3, 0.0];
    assert_eq!(
        identify_scores(&LABELS, &low, false),
        Identification::Ecu { label: "L2".into(), score: 0.3, low_confidence: true }
    );
    assert_eq!(identify_scores(&LABELS, &low, true), Identification::Unknown);
    let high = [0.1, 0.6, 0.9, 0.9, 0.0];
    for compromised in [false, true] {
        assert_eq!(
            identify_scores(&LABELS, &high, compromised),
            Identification::Ecu { label: "L3".into(), score: 0.9, low_confidence: false }
        );
    }
    assert_eq!(Identification::Unknown.label(), "UNKNOWN");
}

#[test]
fn class_weight_hand_values() {
    let labels: Vec<bool> = (0..10).map(|i| i < 2).collect();
    let (neg, pos) = class_weights(&labels).unwrap();
    assert!((neg - 10.0 / 16.0).abs() < 1e-15);
    assert!((pos - 10.0 / 4.0).abs() < 1e-15);
    assert!(matches!(class_weights(&[true, true]), Err(Error::ClassAbsent(_))));
    assert!(matches!(class_weights(&[false]), Err(Error::ClassAbsent(_))));
}

proptest! {
    #[test]
    fn class_weights_balance_total_mass(labels in prop::collection::vec(any::<bool>(), 2..200)) {
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let (wn, wp) = class_weights(&labels).unwrap();
        let n = labels.len() as f64;
        // Each class carries half the weighted mass.
        prop_assert!((wp * pos as f64 - n / 2.0).abs() < 1e-9);
        prop_assert!((wn * (labels.len() - pos) as f64 - n / 2.0).abs() < 1e-9);
    }

    #[test]
    fn scores_are_probabilities(v in prop::collection::vec(-1.0f64..2.0, LEN)) {
        let s = untrained("L1", 4).score(&v).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }
}

#[test]
fn compiled_scores_match_the_training_graph() {
    let m = untrained("L1", 11);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let v: Vec<f64> = (0..LEN).map(|_| rng.random()).collect();
        let reference = m.cnn().predict(&[&v]).unwrap()[0][0];
        assert!((m.score(&v).unwrap() - reference).abs() < 1e-5);
    }
}

#[test]
fn authenticate_uses_the_claimed_owner() {
    let b = bundle();
    let v = vec![0.5; LEN];
    let scores = b.scores(&v).unwrap();
    for (i, e) in b.roster().entries().iter().enumerate() {
        for &id in &e.ids {
            let verdict = b.authenticate(&v, id, false).unwrap();
            assert_eq!(verdict.claimed_ecu, e.label);
            assert_eq!(verdict.score, scores[i]);
            assert_eq!(verdict.accepted, accepts(scores[i]));
            assert_eq!(verdict.identified_origin.is_some(), !verdict.accepted);
        }
    }
    assert!(matches!(b.authenticate(&v, 0x7FF, false), Err(Error::UnknownId(0x7FF))));
    assert!(matches!(b.authenticate(&v[1..], 0x0A0, false), Err(Error::LengthMismatch { .. })));
}

#[test]
fn bundle_round_trip_preserves_scores() {
    let b = bundle();
    let dir = tempfile::tempdir().unwrap();
    b.save(dir.path()).unwrap();
    let back = AuthBundle::load(dir.path()).unwrap();
    assert_eq!(back.roster(), b.roster());
    let v: Vec<f64> = (0..LEN).map(|j| (j as f64 * 0.3).sin() * 0.5 + 0.5).collect();
    assert_eq!(back.scores(&v).unwrap(), b.scores(&v).unwrap());
}

#[test]
fn bundle_rejects_mismatched_models() {
    let mut models: Vec<BinaryCnnModel> = LABELS.iter().map(|l| untrained(l, 0)).collect();
    models.swap(0, 1);
    assert!(AuthBundle::new(EcuRoster::reference(), models).is_err());
    let short: Vec<BinaryCnnModel> = LABELS[..4].iter().map(|l| untrained(l, 0)).collect();
    assert!(AuthBundle::new(EcuRoster::reference(), short).is_err());
}

#[test]
fn training_needs_both_classes() {
    let only_pos: Vec<(Vec<f64>, bool)> = (0..10).map(|_| (vec![0.5; LEN], true)).collect();
    assert!(matches!(train_auth("L1", &only_pos, &AuthConfig::default()), Err(Error::ClassAbsent(_))));
}

#[test]
fn weighted_training_recovers_the_minority_class() {
    let train = toy_set(200, 1);
    let cfg = AuthConfig {
        epochs: 60,
        learning_rate: 1e-3,
        ..AuthConfig::default()
    };
    let (m, _) = train_auth("L1", &train, &cfg).unwrap();
    let test = toy_set(250, 2);
    let pos: Vec<&Vec<f64>> = test.iter().filter(|(_, p)| *p).map(|(v, _)| v).collect();
    let recall = pos.iter().filter(|v| accepts(m.score(v).unwrap())).count() as f64 / pos.len() as f64;
    let fa = test.iter().filter(|(v, p)| !*p && accepts(m.score(v).unwrap())).count();
    assert!(recall >= 0.95, "recall {recall}");
    assert!(fa <= 4, "false accepts {fa}");
}
