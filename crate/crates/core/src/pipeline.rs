//! End-to-end frame processing: source -> geometry -> classifier -> fusion ->
//! event sinks.
//!
//! Replay runs the classifier in lock-step with geometry and derives event
//! wall times from stream timestamps, so output is a pure function of the
//! inputs. Live mode classifies on a worker thread and joins its results with
//! a bounded staleness.

use std::fmt;
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::thread::{self, JoinHandle};

use serde::Serialize;

use crate::classifier::{Classifier, ClassifierError, ClassifierInput, Probability};
use crate::config::{GeometryConfig, PipelineConfig};
use crate::fusion::{Detector, FrameInputs, FusionConfigError, StepOutput};
use crate::geometry::{compute_aspect_ratios, AspectRatios};
use crate::ingest::{FrameRecord, IngestError};
use crate::store::{now_wall_time, replay_wall_time, Event, EventKind, EventStore, StoreError};

/// Where event wall times come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallClock {
    /// Fixed epoch plus stream `t_ms`.
    Replay,
    Real,
}

impl WallClock {
    fn stamp(self, t_ms: u64) -> String {
        match self {
            WallClock::Replay => replay_wall_time(t_ms),
            WallClock::Real => now_wall_time(),
        }
    }
}

pub trait EventSink {
    fn emit(&mut self, event: &Event) -> Result<(), StoreError>;
}

impl EventSink for &EventStore {
    fn emit(&mut self, event: &Event) -> Result<(), StoreError> {
        self.append(event)
    }
}

impl EventSink for Vec<Event> {
    fn emit(&mut self, event: &Event) -> Result<(), StoreError> {
        self.push(event.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RunReport {
    pub frames: u64,
    pub alarms: u64,
    pub yawns: u64,
    /// Frames without a valid mean eye aspect ratio.
    pub invalid_ratio_frames: u64,
    /// Frames for which the classifier produced no probability.
    pub classifier_unavailable: u64,
    /// Live mode: frames that used an earlier frame's classifier result.
    pub substituted_probabilities: u64,
    pub lost_events: u64,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames processed:       {}", self.frames)?;
        writeln!(f, "alarms:                 {}", self.alarms)?;
        writeln!(f, "yawns:                  {}", self.yawns)?;
        writeln!(f, "invalid-ratio frames:   {}", self.invalid_ratio_frames)?;
        writeln!(f, "classifier unavailable: {}", self.classifier_unavailable)?;
        writeln!(f, "substituted results:    {}", self.substituted_probabilities)?;
        write!(f, "lost events:            {}", self.lost_events)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Config(#[from] FusionConfigError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("{0} thread panicked")]
    Panicked(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome {
    pub ratios: AspectRatios,
    pub probability: Option<Probability>,
    pub output: StepOutput,
}

/// Runs alarm notifications off the frame-processing thread.
pub struct AlarmHook {
    tx: Option<mpsc::Sender<Event>>,
    handle: Option<JoinHandle<()>>,
}

impl AlarmHook {
    pub fn spawn(template: Option<String>) -> Self {
        let (tx, rx) = mpsc::channel::<Event>();
        let handle = thread::Builder::new()
            .name("alarm-hook".into())
            .spawn(move || {
                for ev in rx {
                    match &template {
                        None => eprintln!("ALARM session={} t_ms={} wall={}", ev.session_id, ev.t_ms, ev.wall_time),
                        Some(t) => {
                            let cmd = t
                                .replace("{t_ms}", &ev.t_ms.to_string())
                                .replace("{session}", &ev.session_id)
                                .replace("{wall}", &ev.wall_time);
                            match std::process::Command::new("sh").arg("-c").arg(&cmd).status() {
                                Ok(s) if s.success() => {}
                                Ok(s) => log::warn!("alarm hook `{cmd}` exited with {s}"),
                                Err(e) => log::warn!("alarm hook `{cmd}` failed: {e}"),
                            }
                        }
                    }
                }
            })
            .expect("spawn alarm hook thread");
        Self {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    /// A hook that does nothing.
    pub fn disabled() -> Self {
        Self { tx: None, handle: None }
    }

    fn notify(&self, ev: &Event) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(ev.clone());
        }
    }

    /// Waits for pending notifications to finish.
    pub fn finish(mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for AlarmHook {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Geometry, fusion and event emission for one session.
pub struct Pipeline {
    geometry: GeometryConfig,
    detector: Detector,
    session: String,
    clock: WallClock,
    report: RunReport,
}

impl Pipeline {
    pub fn new(cfg: &PipelineConfig, session: impl Into<String>, clock: WallClock) -> Result<Self, PipelineError> {
        Ok(Self {
            geometry: cfg.geometry,
            detector: Detector::new(cfg.fusion.clone())?,
            session: session.into(),
            clock,
            report: RunReport::default(),
        })
    }

    pub fn ratios(&self, record: &FrameRecord) -> AspectRatios {
        let g = &self.geometry;
        compute_aspect_ratios(&record.landmark_frame(), &g.left_eye, &g.right_eye, &g.mouth)
    }

    /// Fuses one frame and emits its events to every sink.
    pub fn process(
        &mut self,
        record: &FrameRecord,
        ratios: AspectRatios,
        probability: Option<Probability>,
        sinks: &mut [&mut dyn EventSink],
        hook: &AlarmHook,
    ) -> FrameOutcome {
        let output = self.detector.advance(&FrameInputs {
            t_ms: record.t_ms,
            ratios,
            probability,
        });
        self.report.frames += 1;
        if !ratios.ear_mean.is_valid() {
            self.report.invalid_ratio_frames += 1;
        }
        if probability.is_none() {
            self.report.classifier_unavailable += 1;
        }
        // Alarm before yawn when both fire on one frame.
        let kinds = [
            (output.alarm_event, EventKind::Alarm),
            (output.yawn_event, EventKind::Yawn),
        ];
        for (fired, kind) in kinds {
            if !fired {
                continue;
            }
            match kind {
                EventKind::Alarm => self.report.alarms += 1,
                EventKind::Yawn => self.report.yawns += 1,
            }
            let ev = Event::new(kind, record.t_ms, self.session.clone(), self.clock.stamp(record.t_ms));
            for sink in sinks.iter_mut() {
                if let Err(e) = sink.emit(&ev) {
                    self.report.lost_events += 1;
                    log::error!("lost {kind} event at t_ms={}: {e}", ev.t_ms);
                }
            }
            if kind == EventKind::Alarm {
                hook.notify(&ev);
            }
        }
        FrameOutcome {
            ratios,
            probability,
            output,
        }
    }

    pub fn report(&self) -> RunReport {
        self.report
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    fn note_substitution(&mut self) {
        self.report.substituted_probabilities += 1;
    }
}

fn classify_record(classifier: &mut dyn Classifier, record: &FrameRecord) -> Option<Probability> {
    match classifier.classify(ClassifierInput::Record(record)) {
        Ok(p) => Some(p),
        Err(e) => {
            log::debug!("{e}");
            None
        }
    }
}

/// Moves a record source onto its own thread behind a bounded queue.
pub fn spawn_source<I>(source: I, capacity: usize) -> (Receiver<Result<FrameRecord, IngestError>>, JoinHandle<()>)
where
    I: Iterator<Item = Result<FrameRecord, IngestError>> + Send + 'static,
{
    let (tx, rx) = mpsc::sync_channel(capacity.max(1));
    let handle = thread::Builder::new()
        .name("frame-source".into())
        .spawn(move || {
            for item in source {
                let stop = item.is_err();
                if tx.send(item).is_err() || stop {
                    break;
                }
            }
        })
        .expect("spawn source thread");
    (rx, handle)
}

/// Lock-step replay of a recorded or generated stream.
pub fn run_replay<I>(
    source: I,
    cfg: &PipelineConfig,
    classifier: &mut dyn Classifier,
    session: &str,
    sinks: &mut [&mut dyn EventSink],
    hook: &AlarmHook,
) -> Result<RunReport, PipelineError>
where
    I: Iterator<Item = Result<FrameRecord, IngestError>> + Send + 'static,
{
    let mut pipeline = Pipeline::new(cfg, session, WallClock::Replay)?;
    let (rx, handle) = spawn_source(source, cfg.buffer_size);
    let mut failure = None;
    for item in rx.iter() {
        match item {
            Ok(record) => {
                let ratios = pipeline.ratios(&record);
                let probability = classify_record(classifier, &record);
                pipeline.process(&record, ratios, probability, sinks, hook);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    drop(rx);
    handle.join().map_err(|_| PipelineError::Panicked("frame source"))?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(pipeline.report()),
    }
}

type ClassifierWorker = (SyncSender<(u64, FrameRecord)>, Receiver<(u64, Option<Probability>)>, JoinHandle<()>);

/// Classifier worker for live mode. It always classifies the newest queued
/// frame, dropping older ones, and reports `(frame index, result)`.
fn spawn_classifier(
    mut classifier: Box<dyn Classifier>,
) -> ClassifierWorker {
    let (frame_tx, frame_rx) = mpsc::sync_channel::<(u64, FrameRecord)>(64);
    let (result_tx, result_rx) = mpsc::channel();
    let handle = thread::Builder::new()
        .name("classifier".into())
        .spawn(move || {
            while let Ok(mut job) = frame_rx.recv() {
                while let Ok(newer) = frame_rx.try_recv() {
                    job = newer;
                }
                let p = classify_record(classifier.as_mut(), &job.1);
                if result_tx.send((job.0, p)).is_err() {
                    break;
                }
            }
        })
        .expect("spawn classifier thread");
    (frame_tx, result_rx, handle)
}

/// Live run: geometry on this thread, classification on a worker. A frame
/// uses its own classifier result when ready, otherwise the newest result at
/// most `staleness_frames` old; older than that, the joiner waits.
pub fn run_live<I>(
    source: I,
    cfg: &PipelineConfig,
    classifier: Box<dyn Classifier>,
    session: &str,
    sinks: &mut [&mut dyn EventSink],
    hook: &AlarmHook,
) -> Result<RunReport, PipelineError>
where
    I: Iterator<Item = Result<FrameRecord, IngestError>> + Send + 'static,
{
    let mut pipeline = Pipeline::new(cfg, session, WallClock::Real)?;
    let staleness = cfg.staleness_frames as u64;
    let (rx, source_handle) = spawn_source(source, cfg.buffer_size);
    let (frame_tx, result_rx, worker) = spawn_classifier(classifier);
    let mut latest: Option<(u64, Option<Probability>)> = None;
    let mut failure = None;

    for (index, item) in rx.iter().enumerate() {
        let index = index as u64;
        let record = match item {
            Ok(r) => r,
            Err(e) => {
                failure = Some(PipelineError::from(e));
                break;
            }
        };
        if frame_tx.send((index, record.clone())).is_err() {
            failure = Some(PipelineError::Panicked("classifier"));
            break;
        }
        let ratios = pipeline.ratios(&record);

        while let Ok(r) = result_rx.try_recv() {
            latest = Some(r);
        }
        let oldest_ok = index.saturating_sub(staleness);
        while latest.is_none_or(|(i, _)| i < oldest_ok) {
            match result_rx.recv() {
                Ok(r) => latest = Some(r),
                Err(_) => break,
            }
        }
        let probability = match latest {
            Some((i, p)) if i == index => p,
            Some((i, p)) if i >= oldest_ok => {
                pipeline.note_substitution();
                log::debug!("frame {index}: using classifier result of frame {i}");
                p
            }
            _ => {
                failure = Some(PipelineError::Panicked("classifier"));
                break;
            }
        };
        pipeline.process(&record, ratios, probability, sinks, hook);
    }

    drop(frame_tx);
    drop(rx);
    let worker_ok = worker.join().is_ok();
    let source_ok = source_handle.join().is_ok();
    if let Some(e) = failure {
        return Err(e);
    }
    if !worker_ok {
        return Err(PipelineError::Panicked("classifier"));
    }
    if !source_ok {
        return Err(PipelineError::Panicked("frame source"));
    }
    let report = pipeline.report();
    if report.substituted_probabilities > 0 {
        log::info!(
            "{} of {} frames used a substituted classifier result",
            report.substituted_probabilities,
            report.frames
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Backend, ScriptedClassifier};
    use crate::ingest::{synth_sequence, Mode, ScenarioSpec, Segment};

    fn stream(segments: Vec<Segment>) -> Vec<FrameRecord> {
        synth_sequence(&ScenarioSpec { fps: 30, segments }, 1)
    }

    fn replay(records: Vec<FrameRecord>) -> (RunReport, Vec<Event>) {
        let cfg = PipelineConfig::default();
        let mut events = Vec::new();
        let report = run_replay(
            records.into_iter().map(Ok),
            &cfg,
            &mut ScriptedClassifier,
            "t",
            &mut [&mut events],
            &AlarmHook::disabled(),
        )
        .unwrap();
        (report, events)
    }

    #[test]
    fn sixty_closed_frames_one_alarm() {
        let (report, events) = replay(stream(vec![
            Segment::new(30, Mode::Alert).with_probability(0.1),
            Segment::new(60, Mode::EyesClosed).with_probability(0.9),
            Segment::new(30, Mode::Alert).with_probability(0.1),
        ]));
        assert_eq!(report.alarms, 1);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].t_ms, 89 * 1000 / 30);
        assert_eq!(events[0].wall_time, replay_wall_time(events[0].t_ms));
    }

    #[test]
    fn yawn_segment_logs_one_yawn() {
        let (report, events) = replay(stream(vec![Segment::new(40, Mode::Yawning).with_probability(0.1)]));
        assert_eq!((report.yawns, report.alarms), (1, 0));
        assert_eq!(events[0].kind, EventKind::Yawn);
    }

    #[test]
    fn source_error_aborts() {
        let records: Vec<Result<FrameRecord, IngestError>> = vec![
            Ok(FrameRecord::probability_only(0, Some(Probability::ZERO))),
            Err(IngestError::EmptyRecord { line: 2 }),
        ];
        let cfg = PipelineConfig::default();
        let err = run_replay(records.into_iter(), &cfg, &mut ScriptedClassifier, "t", &mut [], &AlarmHook::disabled());
        assert!(matches!(err, Err(PipelineError::Ingest(IngestError::EmptyRecord { line: 2 }))));
    }

    /// Sleeps before answering so the joiner has to substitute.
    struct SlowScripted;

    impl Classifier for SlowScripted {
        fn backend(&self) -> Backend {
            Backend::Scripted
        }
        fn classify(&mut self, input: ClassifierInput<'_>) -> Result<Probability, ClassifierError> {
            thread::sleep(std::time::Duration::from_millis(2));
            ScriptedClassifier.classify(input)
        }
    }

    #[test]
    fn live_mode_bounds_staleness() {
        let records = stream(vec![Segment::new(120, Mode::NoFace).with_probability(0.9)]);
        let cfg = PipelineConfig::default();
        let mut events = Vec::new();
        let report = run_live(
            records.into_iter().map(Ok),
            &cfg,
            Box::new(SlowScripted),
            "live",
            &mut [&mut events],
            &AlarmHook::disabled(),
        )
        .unwrap();
        assert_eq!(report.frames, 120);
        assert_eq!(report.classifier_unavailable, 0);
        assert_eq!(report.alarms, 2);
    }

    #[test]
    fn live_mode_zero_staleness_is_lock_step() {
        let records = stream(vec![Segment::new(60, Mode::NoFace).with_probability(0.9)]);
        let cfg = PipelineConfig {
            staleness_frames: 0,
            ..Default::default()
        };
        let report = run_live(
            records.into_iter().map(Ok),
            &cfg,
            Box::new(SlowScripted),
            "live",
            &mut [],
            &AlarmHook::disabled(),
        )
        .unwrap();
        assert_eq!(report.substituted_probabilities, 0);
        assert_eq!(report.alarms, 1);
    }
}
