//! Glue between recorded traces and the three models: feature views,
//! training sets, and evaluation outcomes.

use canloc_neural::TrainHistory;
use rand_chacha::ChaCha8Rng;

use crate::auth::{accepts, train_auth, AuthBundle, AuthConfig};
use crate::bussim::{NetworkConfig, RawTrace, TapPoint, DETECTION_SAMPLE_RATE, FINGERPRINT_SAMPLE_RATE};
use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::features::{ChannelMode, FeatureConfig, FeatureExtractor};
use crate::localizer::{
    generate_signals, interleave_chronologically, locate_insertion_point, AugmentationConfig, AugmentedSignal,
    LocalizationInput, LocalizerModel,
};
use crate::metrics::{AuthOutcome, ConfusionMatrix};
use crate::roster::EcuRoster;

/// CAN-H at the detection rate.
pub fn detection_config() -> FeatureConfig {
    FeatureConfig::new(ChannelMode::CanH, DETECTION_SAMPLE_RATE)
}

/// CAN-L at the fingerprint rate.
pub fn location_config() -> FeatureConfig {
    FeatureConfig::new(ChannelMode::CanL, FINGERPRINT_SAMPLE_RATE)
}

/// Differential at the fingerprint rate.
pub fn auth_config() -> FeatureConfig {
    FeatureConfig::new(ChannelMode::Differential, FINGERPRINT_SAMPLE_RATE)
}

/// A feature with the ground truth recorded alongside its trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeature {
    pub values: Vec<f64>,
    pub claim: u16,
    pub source: String,
    pub attacker: bool,
    pub network: Option<NetworkConfig>,
}

/// Extracts every trace; frames with too few eligible edges are skipped
/// and counted, any other failure aborts.
pub fn extract_labeled(extractor: &FeatureExtractor, traces: &[RawTrace]) -> Result<(Vec<LabeledFeature>, usize)> {
    let mut out = Vec::with_capacity(traces.len());
    let mut skipped = 0;
    for t in traces {
        match extractor.extract(t) {
            Ok(f) => out.push(LabeledFeature {
                values: f.values,
                claim: t.tx_id,
                source: t.source_label.clone(),
                attacker: t.attacker,
                network: t.network,
            }),
            Err(Error::TooFewEdges { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

/// Splits off the last `fraction` of `items`, keeping order.
pub fn chronological_split<T: Clone>(items: &[T], fraction: f64) -> (Vec<T>, Vec<T>) {
    let n_val = ((items.len() as f64) * fraction).round() as usize;
    let cut = items.len() - n_val.min(items.len());
    (items[..cut].to_vec(), items[cut..].to_vec())
}

fn legit(f: &LabeledFeature, ecu: &str) -> bool {
    !f.attacker && f.source == ecu
}

/// Clean-bus features, in order.
pub fn clean_signals(features: &[LabeledFeature]) -> Result<Vec<Vec<f64>>> {
    let out: Vec<Vec<f64>> = features
        .iter()
        .filter(|f| f.network == Some(NetworkConfig::CLEAN) && !f.attacker)
        .map(|f| f.values.clone())
        .collect();
    if out.is_empty() {
        return Err(Error::ClassAbsent("Nw0".into()));
    }
    Ok(out)
}

/// Legitimate signals of each roster ECU, grouped by the insertion point of
/// the network they were recorded on.
pub fn insertion_sets(features: &[LabeledFeature], roster: &EcuRoster) -> Vec<Vec<(TapPoint, Vec<Vec<f64>>)>> {
    roster
        .labels()
        .map(|ecu| {
            TapPoint::INSERTION_POINTS
                .iter()
                .map(|&p| {
                    let sigs = features
                        .iter()
                        .filter(|f| legit(f, ecu) && insertion_point(f) == Some(p))
                        .map(|f| f.values.clone())
                        .collect();
                    (p, sigs)
                })
                .collect()
        })
        .collect()
}

fn insertion_point(f: &LabeledFeature) -> Option<TapPoint> {
    f.network.filter(|n| n.is_insertion()).and_then(|n| n.intrusion()).map(|(p, _)| p)
}

/// Augments each ECU's sets and merges them in acquisition order.
pub fn localizer_training_set(
    features: &[LabeledFeature],
    roster: &EcuRoster,
    aug: &AugmentationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AugmentedSignal>> {
    let per_ecu = insertion_sets(features, roster)
        .iter()
        .map(|sets| generate_signals(sets, aug, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(interleave_chronologically(per_ecu))
}

/// One-vs-rest labels for `ecu`: its own legitimate frames against all others.
pub fn auth_training_set(features: &[LabeledFeature], ecu: &str) -> Vec<(Vec<f64>, bool)> {
    features.iter().map(|f| (f.values.clone(), legit(f, ecu))).collect()
}

/// One classifier per roster ECU, with the loss curves in roster order.
pub fn train_auth_bundle(
    features: &[LabeledFeature],
    roster: &EcuRoster,
    cfg: &AuthConfig,
) -> Result<(AuthBundle, Vec<TrainHistory>)> {
    let (models, histories) = roster
        .labels()
        .map(|ecu| train_auth(ecu, &auth_training_set(features, ecu), cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((AuthBundle::new(roster.clone(), models)?, histories))
}

/// Every model judges every signal: a signal is legitimate for the model of
/// the ECU that sent it and an impostor for the others.
pub fn model_outcomes(bundle: &AuthBundle, features: &[LabeledFeature]) -> Result<Vec<AuthOutcome>> {
    let mut out = Vec::with_capacity(features.len() * bundle.roster().len());
    for f in features {
        for (ecu, model) in bundle.roster().labels().zip(bundle.models()) {
            out.push(AuthOutcome {
                claimed_ecu: ecu.to_string(),
                legitimate: legit(f, ecu),
                accepted: accepts(model.score(&f.values)?),
            });
        }
    }
    Ok(out)
}

/// Each frame judged by the model of the ECU owning its identifier.
pub fn claim_outcomes(bundle: &AuthBundle, features: &[LabeledFeature]) -> Result<Vec<AuthOutcome>> {
    features
        .iter()
        .map(|f| {
            let v = bundle.authenticate(&f.values, f.claim, false)?;
            Ok(AuthOutcome {
                legitimate: legit(f, &v.claimed_ecu),
                claimed_ecu: v.claimed_ecu,
                accepted: v.accepted,
            })
        })
        .collect()
}

pub const CLEAN: &str = "clean";
pub const COMPROMISED: &str = "compromised";

/// Clean versus compromised, judged frame by frame.
pub fn detection_confusion(model: &DetectorModel, features: &[LabeledFeature]) -> Result<ConfusionMatrix> {
    let mut c = ConfusionMatrix::new(vec![CLEAN.into(), COMPROMISED.into()]);
    let sigs: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
    let errors = model.reconstruction_errors(&sigs)?;
    for (f, e) in features.iter().zip(errors) {
        let network = f.network.ok_or_else(|| Error::TraceFormat("trace has no network tag".into()))?;
        let truth = if network == NetworkConfig::CLEAN { CLEAN } else { COMPROMISED };
        c.add(truth, if e > model.thr() { COMPROMISED } else { CLEAN })?;
    }
    Ok(c)
}

/// Groups of one legitimate signal per ECU, the `t`-th of each, from every
/// insertion network.
pub fn localization_groups(features: &[LabeledFeature], roster: &EcuRoster) -> Vec<(TapPoint, LocalizationInput)> {
    let mut out = Vec::new();
    for p in TapPoint::INSERTION_POINTS {
        let per_ecu: Vec<(String, Vec<&LabeledFeature>)> = roster
            .labels()
            .map(|ecu| {
                let v = features.iter().filter(|f| legit(f, ecu) && insertion_point(f) == Some(p)).collect();
                (ecu.to_string(), v)
            })
            .collect();
        let n = per_ecu.iter().map(|(_, v)| v.len()).min().unwrap_or(0);
        for t in 0..n {
            let signals = per_ecu.iter().map(|(ecu, v)| (ecu.clone(), v[t].values.clone())).collect();
            out.push((p, LocalizationInput { signals }));
        }
    }
    out
}

/// Majority-vote confusion over the insertion points.
pub fn localization_confusion(
    model: &LocalizerModel,
    groups: &[(TapPoint, LocalizationInput)],
    rng: &mut ChaCha8Rng,
) -> Result<ConfusionMatrix> {
    let mut c = ConfusionMatrix::new(model.classes().iter().map(|p| p.to_string()).collect());
    for (truth, input) in groups {
        let got = locate_insertion_point(input, model, rng)?;
        c.add(&truth.to_string(), &got.to_string())?;
    }
    Ok(c)
}
