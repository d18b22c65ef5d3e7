//! Command implementations behind the `drowsy` binary.

use std::fmt;
use std::future::Future;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::classifier::build_classifier;
use crate::config::PipelineConfig;
use crate::dashboard::{self, DashboardConfig};
use crate::fusion::{judge_frame, FrameInputs};
use crate::geometry::compute_aspect_ratios;
use crate::ingest::{self, FrameRecord, Label, LiveSource, ScenarioSpec};
use crate::metrics::{self, ConfusionMatrix, RunEvaluation};
use crate::pipeline::{self, AlarmHook, EventSink, PipelineError, RunReport};
use crate::store::{self, EventStore};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or unreadable input (exit 1).
    Input(String),
    /// Failure while running (exit 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn input(e: impl fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Panicked(_) => runtime(e),
            _ => input(e),
        }
    }
}

/// Loads the config (defaults when no path is given) and the directory its
/// relative paths resolve against.
pub fn load_config(path: Option<&Path>) -> Result<(PipelineConfig, PathBuf), CliError> {
    let cfg = match path {
        Some(p) => PipelineConfig::load_or_init(p).map_err(input)?,
        None => PipelineConfig::default(),
    };
    Ok((cfg, PipelineConfig::base_dir(path)))
}

fn default_session(stream: &Path) -> String {
    stream
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "replay".into())
}

#[derive(Debug, Clone, Default)]
pub struct ReplayArgs {
    pub stream: PathBuf,
    pub config: Option<PathBuf>,
    /// Event file written from scratch by this run.
    pub out: PathBuf,
    /// Persistent store that also receives the events.
    pub store: Option<PathBuf>,
    pub session: Option<String>,
    pub quiet_alarms: bool,
}

/// Replays a stream through the full pipeline in lock-step.
pub fn cmd_replay(args: &ReplayArgs) -> Result<RunReport, CliError> {
    let (cfg, base) = load_config(args.config.as_deref())?;
    let mut classifier = build_classifier(&cfg.classifier, &base).map_err(input)?;
    let source = ingest::open_stream(&args.stream).map_err(|e| input(format!("{}: {e}", args.stream.display())))?;
    let out = EventStore::create(&args.out).map_err(runtime)?;
    let persistent = args.store.as_ref().map(EventStore::open).transpose().map_err(runtime)?;
    let session = args.session.clone().unwrap_or_else(|| default_session(&args.stream));
    let hook = if args.quiet_alarms {
        AlarmHook::disabled()
    } else {
        AlarmHook::spawn(cfg.alarm_hook.clone())
    };

    let mut out_sink = &out;
    let mut sinks: Vec<&mut dyn EventSink> = vec![&mut out_sink];
    let mut store_sink = persistent.as_ref();
    if let Some(s) = store_sink.as_mut() {
        sinks.push(s);
    }
    let report = pipeline::run_replay(source, &cfg, classifier.as_mut(), &session, &mut sinks, &hook)?;
    hook.finish();
    if report.lost_events > 0 {
        return Err(runtime(format!("{} events could not be stored", report.lost_events)));
    }
    Ok(report)
}

/// Writes a synthetic stream; returns the number of frames.
pub fn cmd_synth(spec_path: &Path, seed: u64, out: &Path, config: Option<&Path>) -> Result<usize, CliError> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| input(format!("{}: {e}", spec_path.display())))?;
    let spec: ScenarioSpec = toml::from_str(&text).map_err(|e| input(format!("{}: {e}", spec_path.display())))?;
    spec.validate().map_err(|e| input(format!("{}: {e}", spec_path.display())))?;
    let layout = match config {
        Some(_) => load_config(config)?.0.geometry.into(),
        None => Default::default(),
    };
    let records = ingest::synth_with_layout(&spec, seed, &layout);
    ingest::write_stream(out, &records).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    Ok(records.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    pub evaluation: RunEvaluation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.evaluation;
        writeln!(f, "frames:              {}", self.frames)?;
        writeln!(f, "sleepy episodes:     {} ({} with an alarm)", e.episodes, e.detected_episodes)?;
        writeln!(f, "alarms:              {} ({} on awake frames)", e.alarms, e.false_alarms)?;
        writeln!(f, "true alarm rate:     {:.4}", e.true_alarm_rate)?;
        write!(f, "false positive rate: {:.4}", e.false_positive_rate)?;
        if let Some(m) = &self.confusion {
            writeln!(f)?;
            writeln!(f, "per-frame confusion (positive = sleepy):")?;
            writeln!(f, "                predicted sleepy  predicted awake")?;
            writeln!(f, "  actual sleepy {:>16}  {:>15}", m.true_positive, m.false_negative)?;
            write!(f, "  actual awake  {:>16}  {:>15}", m.false_positive, m.true_negative)?;
        }
        if let Some(a) = self.accuracy {
            write!(f, "\naccuracy:            {a:.4}")?;
        }
        Ok(())
    }
}

/// Per-frame sleepy/awake predictions from geometry, classifier and fusion.
pub fn frame_predictions(records: &[FrameRecord], cfg: &PipelineConfig, base: &Path) -> Result<Vec<Label>, CliError> {
    let mut classifier = build_classifier(&cfg.classifier, base).map_err(input)?;
    let g = &cfg.geometry;
    Ok(records
        .iter()
        .map(|r| {
            let inputs = FrameInputs {
                t_ms: r.t_ms,
                ratios: compute_aspect_ratios(&r.landmark_frame(), &g.left_eye, &g.right_eye, &g.mouth),
                probability: classifier.classify(crate::classifier::ClassifierInput::Record(r)).ok(),
            };
            if judge_frame(&inputs, &cfg.fusion) {
                Label::Sleepy
            } else {
                Label::Awake
            }
        })
        .collect())
}

/// Scores an event log against a labeled stream.
pub fn cmd_eval(stream: &Path, events: &Path, config: Option<&Path>) -> Result<EvalReport, CliError> {
    let (cfg, base) = load_config(config)?;
    let records = ingest::read_stream(stream).map_err(|e| input(format!("{}: {e}", stream.display())))?;
    let events = store::read_events(events).map_err(input)?;
    let evaluation = metrics::evaluate_run(&events, &records, cfg.fusion.alarm_frame_threshold).map_err(input)?;
    let (confusion, accuracy) = match frame_predictions(&records, &cfg, &base) {
        Ok(pred) => {
            let truth: Vec<Label> = records.iter().filter_map(|r| r.label).collect();
            let m = metrics::confusion(&pred, &truth).map_err(input)?;
            (Some(m), m.accuracy().ok())
        }
        Err(e) => {
            log::warn!("per-frame predictions unavailable: {e}");
            (None, None)
        }
    };
    Ok(EvalReport {
        frames: records.len(),
        evaluation,
        confusion,
        accuracy,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ServeArgs {
    pub config: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub bind: Option<String>,
    pub read_only: bool,
}

pub fn dashboard_config(args: &ServeArgs) -> Result<DashboardConfig, CliError> {
    let (cfg, base) = load_config(args.config.as_deref())?;
    Ok(DashboardConfig {
        bind_address: args.bind.clone().unwrap_or(cfg.dashboard.bind),
        store_path: args.store.clone().unwrap_or_else(|| base.join(&cfg.store_path)),
        read_only: args.read_only || cfg.dashboard.read_only,
    })
}

/// Serves the dashboard until `shutdown` resolves.
pub async fn cmd_serve(args: &ServeArgs, shutdown: impl Future<Output = ()>) -> Result<(), CliError> {
    let cfg = dashboard_config(args)?;
    let handle = dashboard::serve(&cfg).await.map_err(runtime)?;
    eprintln!("dashboard on http://{} (store {})", handle.local_addr(), cfg.store_path.display());
    shutdown.await;
    handle.shutdown().await.map_err(runtime)
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub detector: String,
    pub config: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub session: Option<String>,
}

/// Live run fed by an external detector process.
pub fn cmd_run(args: &RunArgs) -> Result<RunReport, CliError> {
    let (cfg, base) = load_config(args.config.as_deref())?;
    let classifier = build_classifier(&cfg.classifier, &base).map_err(input)?;
    let store_path = args.store.clone().unwrap_or_else(|| base.join(&cfg.store_path));
    let store = EventStore::open(&store_path).map_err(runtime)?;
    let source = LiveSource::spawn(&args.detector).map_err(runtime)?;
    let session = args
        .session
        .clone()
        .unwrap_or_else(|| format!("live-{}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ")));
    let hook = AlarmHook::spawn(cfg.alarm_hook.clone());
    let mut sink = &store;
    let report = pipeline::run_live(source, &cfg, classifier, &session, &mut [&mut sink], &hook);
    hook.finish();
    let report = report?;
    if report.lost_events > 0 {
        return Err(runtime(format!("{} events could not be stored", report.lost_events)));
    }
    Ok(report)
}
