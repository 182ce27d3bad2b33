mod common;

use std::sync::OnceLock;

use canloc_core::bussim::{
    build_network, generate_dataset, round_robin_schedule, AttackerProfile, NetworkConfig, SynthConfig,
    DETECTION_SAMPLE_RATE,
};
use canloc_core::dataset::{Campaign, SimFeature};
use canloc_core::detector::{
    autoencoder_specs, compute_threshold, train_detector, DetectorConfig, DetectorModel, KOfN,
};
use canloc_core::features::{ChannelMode, FeatureConfig, FeatureExtractor};
use canloc_core::Error;
use canloc_neural::{LayerSpec, Sequential};
use proptest::prelude::*;

#[test]
fn threshold_hand_values() {
    assert_eq!(compute_threshold(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 1.0);
    assert_eq!(compute_threshold(&[0.0, 2.0]).unwrap(), 2.0);
    assert!((compute_threshold(&[0.0, 0.0, 0.0, 4.0]).unwrap() - (1.0 + 3f64.sqrt())).abs() < 1e-12);
    assert!(matches!(compute_threshold(&[]), Err(Error::Empty(_))));
}

proptest! {
    #[test]
    fn threshold_matches_direct_evaluation(xs in prop::collection::vec(0.0f64..10.0, 1..200)) {
        let thr = compute_threshold(&xs).unwrap();
        let want = common::threshold_direct(&xs);
        prop_assert!((thr - want).abs() <= 1e-12 * want.abs().max(1.0));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!(thr >= mean);
    }
}

#[test]
fn autoencoder_shape_halves_then_quarters() {
    let specs = autoencoder_specs(320);
    let units: Vec<usize> = specs
        .iter()
        .filter_map(|s| match s {
            LayerSpec::Dense { units } => Some(*units),
            _ => None,
        })
        .collect();
    assert_eq!(units, vec![160, 80, 160, 320]);
    assert!(specs.iter().any(|s| matches!(s, LayerSpec::BatchNorm)));
}

fn untrained(len: usize) -> Sequential {
    Sequential::from_specs(&[len], &autoencoder_specs(len), 5).unwrap()
}

#[test]
fn decision_is_strictly_greater_than_thr() {
    let sig: Vec<f64> = (0..32).map(|i| (i as f64 / 7.0).sin().abs()).collect();
    let probe = DetectorModel::from_parts(untrained(32), 0.0).unwrap();
    let e = probe.reconstruction_error(&sig).unwrap();
    let at = DetectorModel::from_parts(untrained(32), e).unwrap();
    assert!(!at.is_bus_compromised(&sig).unwrap());
    let below = DetectorModel::from_parts(untrained(32), f64::from_bits(e.to_bits() - 1)).unwrap();
    assert!(below.is_bus_compromised(&sig).unwrap());
    assert!(matches!(at.is_bus_compromised(&sig[..31]), Err(_)));
}

#[test]
fn identical_validation_vectors_give_their_own_error() {
    let v: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    let tr = vec![v.clone(); 8];
    let val = vec![v.clone(); 4];
    let cfg = DetectorConfig {
        epochs: 3,
        batch_size: 4,
        ..DetectorConfig::default()
    };
    let m = train_detector(&tr, &val, &cfg).unwrap();
    assert_eq!(m.thr(), m.reconstruction_error(&v).unwrap());
    let again = train_detector(&tr, &val, &cfg).unwrap();
    assert_eq!(again.thr().to_bits(), m.thr().to_bits());
    assert!(train_detector(&[], &val, &cfg).is_err());
    assert!(train_detector(&tr, &[], &cfg).is_err());
    assert!(matches!(train_detector(&tr, &[vec![0.0; 15]], &cfg), Err(Error::LengthMismatch { .. })));
}

#[test]
fn save_load_keeps_threshold_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("det.bin");
    let m = DetectorModel::from_parts(untrained(24), 0.0123456789).unwrap();
    m.save(&p).unwrap();
    let back = DetectorModel::load(&p).unwrap();
    assert_eq!(back.thr().to_bits(), m.thr().to_bits());
    let sig = vec![0.3; 24];
    assert_eq!(back.reconstruction_error(&sig).unwrap(), m.reconstruction_error(&sig).unwrap());
}

#[test]
fn k_of_n_counts_the_sliding_window() {
    assert!(KOfN::new(0, 3).is_err());
    assert!(KOfN::new(4, 3).is_err());
    let mut v = KOfN::new(2, 3).unwrap();
    let got: Vec<bool> = [true, false, false, true, false, true, true].iter().map(|&b| v.push(b)).collect();
    assert_eq!(got, vec![false, false, false, false, false, true, true]);
    let mut one = KOfN::new(1, 1).unwrap();
    assert!(one.push(true));
    assert!(!one.push(false));
}

/// A detector trained once on simulated clean traffic.
fn trained() -> &'static (DetectorModel, FeatureExtractor) {
    static CELL: OnceLock<(DetectorModel, FeatureExtractor)> = OnceLock::new();
    CELL.get_or_init(|| {
        let ex = FeatureExtractor::new(FeatureConfig::new(ChannelMode::CanH, DETECTION_SAMPLE_RATE)).unwrap();
        let clean = Campaign::new(NetworkConfig::CLEAN, AttackerProfile::A1, 700, DETECTION_SAMPLE_RATE, 21)
            .features(&ex)
            .unwrap();
        let v: Vec<Vec<f64>> = clean.iter().map(|s| s.feature.values.clone()).collect();
        let m = train_detector(&v[..500], &v[500..], &DetectorConfig { seed: 1, ..DetectorConfig::default() }).unwrap();
        (m, ex)
    })
}

fn mean_error(m: &DetectorModel, f: &[SimFeature]) -> f64 {
    let v: Vec<&[f64]> = f.iter().map(|s| s.feature.values.as_slice()).collect();
    let e = m.reconstruction_errors(&v).unwrap();
    e.iter().sum::<f64>() / e.len() as f64
}

#[test]
fn clean_traffic_sits_below_and_insertion_above_thr() {
    let (m, ex) = trained();
    let clean = Campaign::new(NetworkConfig::CLEAN, AttackerProfile::A1, 200, DETECTION_SAMPLE_RATE, 77).features(ex).unwrap();
    let nw4 = Campaign::new(NetworkConfig::new(4).unwrap(), AttackerProfile::A1, 200, DETECTION_SAMPLE_RATE, 78)
        .features(ex)
        .unwrap();
    assert!(mean_error(m, &clean) < m.thr());
    assert!(mean_error(m, &nw4) > m.thr());
}

#[test]
fn larger_intruder_loading_never_lowers_the_error() {
    let (m, ex) = trained();
    let cfg = SynthConfig::new(DETECTION_SAMPLE_RATE);
    let mut last = 0.0;
    for scale in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let mut p = AttackerProfile::A1.params();
        p.c_tap *= scale;
        let bus = build_network(NetworkConfig::new(6).unwrap(), &p, "A1").unwrap();
        let schedule = round_robin_schedule(&bus, 100, false, 4, 5).unwrap();
        let traces = generate_dataset(&bus, &schedule, &cfg, 6).unwrap();
        let sigs: Vec<Vec<f64>> = traces.iter().map(|t| ex.extract(t).unwrap().values).collect();
        let e = m.reconstruction_errors(&sigs).unwrap();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        assert!(mean >= last, "scale {scale}: {mean:e} < {last:e}");
        last = mean;
    }
}

/// Per-sender detection accuracy, clean and compromised together, must
/// agree within two points.
#[test]
fn detection_accuracy_is_sender_independent() {
    let (m, ex) = trained();
    let mut per = std::collections::BTreeMap::<String, (usize, usize)>::new();
    let mut tally = |f: &[SimFeature], compromised: bool| {
        let v: Vec<&[f64]> = f.iter().map(|s| s.feature.values.as_slice()).collect();
        for (s, e) in f.iter().zip(m.reconstruction_errors(&v).unwrap()) {
            let slot = per.entry(s.source().to_string()).or_default();
            slot.0 += usize::from((e > m.thr()) == compromised);
            slot.1 += 1;
        }
    };
    tally(&Campaign::new(NetworkConfig::CLEAN, AttackerProfile::A1, 500, DETECTION_SAMPLE_RATE, 90).features(ex).unwrap(), false);
    for n in 4..=8 {
        let f = Campaign::new(NetworkConfig::new(n).unwrap(), AttackerProfile::A1, 100, DETECTION_SAMPLE_RATE, 90 + n as u64)
            .features(ex)
            .unwrap();
        tally(&f, true);
    }
    let acc: Vec<(String, f64)> = per.into_iter().map(|(k, (ok, n))| (k, ok as f64 / n as f64)).collect();
    let hi = acc.iter().map(|a| a.1).fold(f64::MIN, f64::max);
    let lo = acc.iter().map(|a| a.1).fold(f64::MAX, f64::min);
    assert!(hi - lo < 0.02, "per-sender accuracy {acc:?}");
}
