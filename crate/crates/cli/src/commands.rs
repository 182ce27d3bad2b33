//! The four subcommands.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use canloc_core::auth::AuthBundle;
use canloc_core::config::Settings;
use canloc_core::dataset::Campaign;
use canloc_core::detector::DetectorModel;
use canloc_core::features::{FeatureConfig, FeatureExtractor};
use canloc_core::localizer::LocalizerModel;
use canloc_core::metrics::MetricsReport;
use canloc_core::orchestrator::{Alert, FramePipeline, Orchestrator, OrchestratorConfig, DEFAULT_FRAME_INTERVAL};
use canloc_core::pipeline::{auth_config, detection_config, extract_labeled, location_config, LabeledFeature};
use canloc_core::tracefile::TraceFile;
use canloc_core::Error;
use serde_json::json;

use crate::tasks::TaskRegistry;
use crate::CliError;

fn out_path(s: &Settings) -> Result<&Path, CliError> {
    s.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn io_err(e: io::Error) -> CliError {
    CliError::Data(Error::Io(e))
}

pub fn gen(s: &Settings) -> Result<(), CliError> {
    let out = out_path(s)?;
    let mut campaign = Campaign::new(s.network, s.attacker, s.frames, s.sample_rate, s.seed).active(s.active);
    campaign.noise_sigma = s.noise;
    let file = TraceFile::from_traces(campaign.traces()?)?;
    file.save(out)?;
    println!("{}", json!({ "traces": file.traces.len(), "network": s.network.to_string(), "seed": s.seed }));
    Ok(())
}

fn load_features(paths: &[PathBuf], cfg: FeatureConfig, s: &Settings) -> Result<Vec<LabeledFeature>, CliError> {
    let cfg = FeatureConfig {
        channel: s.channel.unwrap_or(cfg.channel),
        ..cfg
    };
    let extractor = FeatureExtractor::new(cfg)?;
    let mut all = Vec::new();
    for p in paths {
        let file = TraceFile::load(p)?;
        let (mut feats, skipped) = extract_labeled(&extractor, &file.traces)?;
        if skipped > 0 {
            eprintln!("{}: skipped {skipped} frames with too few edges", p.display());
        }
        all.append(&mut feats);
    }
    Ok(all)
}

pub fn train(task: &str, data: &[PathBuf], epochs: Option<usize>, s: &Settings) -> Result<(), CliError> {
    let registry = TaskRegistry::default();
    let task = registry.get(task)?;
    let out = out_path(s)?;
    let features = load_features(data, task.features(), s)?;
    let summary = task.train(&features, s, epochs, out)?;
    println!("{summary}");
    Ok(())
}

pub struct Limits {
    pub max_frr: Option<f64>,
    pub max_far: Option<f64>,
    pub min_accuracy: Option<f64>,
}

impl Limits {
    fn check(&self, r: &MetricsReport) -> Result<(), CliError> {
        let mut failures = Vec::new();
        for e in &r.ecus {
            if let (Some(max), Some(v)) = (self.max_frr, e.frr()) {
                if v > max {
                    failures.push(format!("{} FRR {v:.4} > {max}", e.ecu));
                }
            }
            if let (Some(max), Some(v)) = (self.max_far, e.far()) {
                if v > max {
                    failures.push(format!("{} FAR {v:.4} > {max}", e.ecu));
                }
            }
        }
        if let Some(min) = self.min_accuracy {
            match r.accuracy {
                Some(a) if a >= min => {}
                a => failures.push(format!("accuracy {a:?} < {min}")),
            }
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(CliError::Threshold(failures.join("; ")))
        }
    }
}

pub fn eval(task: &str, model: &Path, data: &[PathBuf], limits: &Limits, s: &Settings) -> Result<(), CliError> {
    let registry = TaskRegistry::default();
    let task = registry.get(task)?;
    let features = load_features(data, task.features(), s)?;
    let report = task.eval(model, &features, s)?;
    print!("{report}");
    if let Some(out) = &s.out {
        std::fs::write(out, report.to_json() + "\n").map_err(io_err)?;
    }
    limits.check(&report)
}

pub struct RunModels {
    pub detector: PathBuf,
    pub localizer: PathBuf,
    pub auth: PathBuf,
}

fn parse_vote(v: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--vote expects k/n, got `{v}`"));
    let (k, n) = v.split_once('/').ok_or_else(bad)?;
    Ok((k.trim().parse().map_err(|_| bad())?, n.trim().parse().map_err(|_| bad())?))
}

fn check_len(what: &str, model: usize, cfg: &FeatureConfig) -> Result<(), CliError> {
    if model != cfg.feature_len() {
        return Err(CliError::Data(Error::Model(format!(
            "{what} model expects {model} values, features have {}",
            cfg.feature_len()
        ))));
    }
    Ok(())
}

pub fn run(models: &RunModels, data: &Path, vote: Option<&str>, s: &Settings) -> Result<(), CliError> {
    let detector = DetectorModel::load(&models.detector)?;
    let localizer = LocalizerModel::load(&models.localizer)?;
    let auth = AuthBundle::load(&models.auth)?;
    let (dc, ac, lc) = (detection_config(), auth_config(), location_config());
    check_len("detector", detector.feature_len(), &dc)?;
    check_len("auth", auth.feature_len(), &ac)?;
    check_len("localizer", localizer.feature_len(), &lc)?;
    let pipeline = FramePipeline::new(dc, ac, lc)?;
    let cfg = OrchestratorConfig {
        tp: s.tp,
        vote: vote.map(parse_vote).transpose()?,
        seed: s.seed,
    };
    let mut orchestrator = Orchestrator::new(&detector, &auth, &localizer, cfg)?;
    let file = TraceFile::load(data)?;
    let stdout = io::stdout();
    let mut w = io::BufWriter::new(stdout.lock());
    let emit = |w: &mut io::BufWriter<io::StdoutLock<'_>>, alerts: Vec<Alert>| -> Result<(), CliError> {
        for a in alerts {
            writeln!(w, "{}", a.to_json_line()).map_err(io_err)?;
        }
        Ok(())
    };
    let mut skipped = 0;
    let mut end = 0.0;
    for (i, trace) in file.traces.iter().enumerate() {
        end = i as f64 * DEFAULT_FRAME_INTERVAL;
        let frame = match pipeline.frame(trace, end) {
            Ok(f) => f,
            Err(Error::TooFewEdges { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        emit(&mut w, orchestrator.ingest(&frame)?)?;
    }
    emit(&mut w, orchestrator.finish(end)?)?;
    w.flush().map_err(io_err)?;
    let stats = orchestrator.stats();
    eprintln!("{}", json!({ "stats": stats, "skipped": skipped }));
    Ok(())
}
