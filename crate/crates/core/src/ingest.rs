//! Frame record streams: the line-delimited file format, a seeded synthetic
//! scenario generator, and a live source fed by an external detector process.
//!
//! One record per line, fields in canonical order:
//!
//! ```text
//! {"t_ms": 0, "face": true, "pts": {"30": [0.09, 0.35, 0.0]}, "prob": 0.9, "img": null, "label": "sleepy"}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdout, Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::Probability;
use crate::geometry::{EyeSpec, LandmarkFrame, MouthSpec, Point3, LANDMARK_COUNT};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Sleepy,
    Awake,
}

/// One unit of the input stream.
///
/// `landmarks` is `None` when the detector found no face and reported no
/// points; that state is encoded on the wire as `"face": false, "pts": {}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t_ms: u64,
    pub landmarks: Option<LandmarkFrame>,
    pub probability: Option<Probability>,
    pub image_ref: Option<String>,
    pub label: Option<Label>,
}

impl FrameRecord {
    pub fn probability_only(t_ms: u64, probability: Option<Probability>) -> Self {
        Self {
            t_ms,
            landmarks: None,
            probability,
            image_ref: None,
            label: None,
        }
    }

    /// Landmarks to feed the geometry stage; a no-face frame when absent.
    pub fn landmark_frame(&self) -> LandmarkFrame {
        self.landmarks
            .clone()
            .unwrap_or_else(|| LandmarkFrame::no_face(self.t_ms))
    }

    pub fn to_line(&self) -> String {
        jsonl::to_line(&RecordWire::from(self))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    t_ms: u64,
    face: bool,
    #[serde(default)]
    pts: BTreeMap<u16, [f64; 3]>,
    #[serde(default)]
    prob: Option<f64>,
    #[serde(default)]
    img: Option<String>,
    #[serde(default)]
    label: Option<Label>,
}

impl From<&FrameRecord> for RecordWire {
    fn from(r: &FrameRecord) -> Self {
        let (face, pts) = match &r.landmarks {
            Some(lm) => (
                lm.face_found,
                lm.points.iter().map(|(&i, p)| (i, [p.x, p.y, p.z])).collect(),
            ),
            None => (false, BTreeMap::new()),
        };
        Self {
            t_ms: r.t_ms,
            face,
            pts,
            prob: r.probability.map(Probability::value),
            img: r.image_ref.clone(),
            label: r.label,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: {message}: {content}")]
    Parse {
        line: usize,
        message: String,
        content: String,
    },
    #[error("line {line}: timestamp {t_ms} precedes previous {previous}")]
    TimestampRegression { line: usize, previous: u64, t_ms: u64 },
    #[error("line {line}: landmark index {index} out of range (0..{LANDMARK_COUNT})")]
    IndexOutOfRange { line: usize, index: u16 },
    #[error("line {line}: landmark {index} has a non-finite coordinate")]
    NonFinite { line: usize, index: u16 },
    #[error("line {line}: probability {value} outside [0, 1]")]
    Probability { line: usize, value: f64 },
    #[error("line {line}: record carries no landmarks, probability or image")]
    EmptyRecord { line: usize },
    #[error("cannot spawn detector `{command}`: {source}")]
    Spawn { command: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl IngestError {
    pub fn is_io(&self) -> bool {
        matches!(self, IngestError::Io(_) | IngestError::Spawn { .. })
    }
}

/// Parses and validates one stream line. `line` is used for diagnostics.
pub fn parse_line(text: &str, line: usize) -> Result<FrameRecord, IngestError> {
    let wire: RecordWire = serde_json::from_str(text).map_err(|e| IngestError::Parse {
        line,
        message: e.to_string(),
        content: text.to_string(),
    })?;
    let mut points = BTreeMap::new();
    for (index, [x, y, z]) in wire.pts {
        if index >= LANDMARK_COUNT {
            return Err(IngestError::IndexOutOfRange { line, index });
        }
        let p = Point3::new(x, y, z);
        if !p.is_finite() {
            return Err(IngestError::NonFinite { line, index });
        }
        points.insert(index, p);
    }
    let probability = wire
        .prob
        .map(|value| Probability::new(value).map_err(|_| IngestError::Probability { line, value }))
        .transpose()?;
    let landmarks = (wire.face || !points.is_empty()).then_some(LandmarkFrame {
        t_ms: wire.t_ms,
        face_found: wire.face,
        points,
    });
    let face_present = landmarks.as_ref().is_some_and(|lm| lm.face_found);
    if !face_present && probability.is_none() && wire.img.is_none() {
        return Err(IngestError::EmptyRecord { line });
    }
    Ok(FrameRecord {
        t_ms: wire.t_ms,
        landmarks,
        probability,
        image_ref: wire.img,
        label: wire.label,
    })
}

/// Validating line reader over any buffered source.
pub struct StreamReader<R> {
    inner: R,
    line: usize,
    last_t: Option<u64>,
    buf: String,
    failed: bool,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line: 0,
            last_t: None,
            buf: String::new(),
            failed: false,
        }
    }

    pub fn lines_read(&self) -> usize {
        self.line
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<FrameRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
            self.line += 1;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            let result = parse_line(text, self.line).and_then(|rec| match self.last_t {
                Some(previous) if rec.t_ms < previous => Err(IngestError::TimestampRegression {
                    line: self.line,
                    previous,
                    t_ms: rec.t_ms,
                }),
                _ => {
                    self.last_t = Some(rec.t_ms);
                    Ok(rec)
                }
            });
            self.failed = result.is_err();
            return Some(result);
        }
    }
}

pub fn open_stream(path: &Path) -> io::Result<StreamReader<BufReader<File>>> {
    Ok(StreamReader::new(BufReader::new(File::open(path)?)))
}

pub fn read_stream(path: &Path) -> Result<Vec<FrameRecord>, IngestError> {
    open_stream(path)?.collect()
}

pub fn write_stream<'a>(path: &Path, records: impl IntoIterator<Item = &'a FrameRecord>) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for rec in records {
        writeln!(out, "{}", rec.to_line())?;
    }
    out.into_inner().map_err(|e| e.into_error())?.sync_all()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Alert,
    EyesClosed,
    Yawning,
    NoFace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_frames: u32,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<Probability>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Segment {
    pub fn new(duration_frames: u32, mode: Mode) -> Self {
        Self {
            duration_frames,
            mode,
            probability: None,
            label: None,
        }
    }

    pub fn with_probability(mut self, p: f64) -> Self {
        self.probability = Some(Probability::new(p).expect("probability in [0, 1]"));
        self
    }

    pub fn labeled(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub fps: u32,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("fps must be at least 1")]
    Fps,
    #[error("segment {0}: duration_frames must be at least 1")]
    Duration(usize),
    #[error("segment {0}: no_face segments need a probability")]
    NoFaceWithoutProbability(usize),
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.fps == 0 {
            return Err(ScenarioError::Fps);
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.duration_frames == 0 {
                return Err(ScenarioError::Duration(i));
            }
            if seg.mode == Mode::NoFace && seg.probability.is_none() {
                return Err(ScenarioError::NoFaceWithoutProbability(i));
            }
        }
        Ok(())
    }

    pub fn total_frames(&self) -> u64 {
        self.segments.iter().map(|s| s.duration_frames as u64).sum()
    }
}

/// Maximum per-coordinate jitter added to synthesized landmarks.
pub const SYNTH_JITTER: f64 = 0.005;

const EYE_WIDTH: f64 = 0.32;
const EYE_OPEN_EAR: f64 = 0.3;
const MOUTH_WIDTH: f64 = 0.4;
const MOUTH_CLOSED_MAR: f64 = 0.05;
const MOUTH_YAWN_MAR: f64 = 1.0;

/// Landmark indices used by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthLayout {
    pub left_eye: EyeSpec,
    pub right_eye: EyeSpec,
    pub mouth: MouthSpec,
}

impl Default for SynthLayout {
    fn default() -> Self {
        Self {
            left_eye: EyeSpec::LEFT,
            right_eye: EyeSpec::RIGHT,
            mouth: MouthSpec::DEFAULT,
        }
    }
}

fn place_eye(points: &mut BTreeMap<u16, Point3>, eye: &EyeSpec, cx: f64, cy: f64, ear: f64) {
    // EAR = 2h / W for this layout, with both lid pairs separated by 2h.
    let h = ear * EYE_WIDTH / 2.0;
    let left = cx - EYE_WIDTH / 2.0;
    let x1 = left + EYE_WIDTH / 3.0;
    let x2 = left + 2.0 * EYE_WIDTH / 3.0;
    let [p1, p2, p3, p4, p5, p6] = eye.indices();
    points.insert(p1, Point3::new(left, cy, 0.0));
    points.insert(p2, Point3::new(x1, cy - h, 0.0));
    points.insert(p3, Point3::new(x2, cy - h, 0.0));
    points.insert(p4, Point3::new(left + EYE_WIDTH, cy, 0.0));
    points.insert(p5, Point3::new(x2, cy + h, 0.0));
    points.insert(p6, Point3::new(x1, cy + h, 0.0));
}

fn place_mouth(points: &mut BTreeMap<u16, Point3>, mouth: &MouthSpec, mar: f64) {
    // MAR = 2v / W for this layout.
    let (cx, cy) = (0.5, 0.75);
    let v = mar * MOUTH_WIDTH / 2.0;
    let left = cx - MOUTH_WIDTH / 2.0;
    let xs = [left + 0.25 * MOUTH_WIDTH, cx, left + 0.75 * MOUTH_WIDTH];
    let [p1, p2, p3, p4, p5, p6, p7, p8] = mouth.indices();
    points.insert(p1, Point3::new(left, cy, 0.0));
    points.insert(p2, Point3::new(xs[0], cy - v, 0.0));
    points.insert(p3, Point3::new(xs[1], cy - v, 0.0));
    points.insert(p4, Point3::new(xs[2], cy - v, 0.0));
    points.insert(p5, Point3::new(left + MOUTH_WIDTH, cy, 0.0));
    points.insert(p6, Point3::new(xs[2], cy + v, 0.0));
    points.insert(p7, Point3::new(xs[1], cy + v, 0.0));
    points.insert(p8, Point3::new(xs[0], cy + v, 0.0));
}

/// Generates the frames described by `spec`. A pure function of its inputs.
pub fn synth_sequence(spec: &ScenarioSpec, seed: u64) -> Vec<FrameRecord> {
    synth_with_layout(spec, seed, &SynthLayout::default())
}

pub fn synth_with_layout(spec: &ScenarioSpec, seed: u64, layout: &SynthLayout) -> Vec<FrameRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fps = spec.fps.max(1) as u64;
    let mut out = Vec::with_capacity(spec.total_frames() as usize);
    let mut frame_index = 0u64;
    for seg in &spec.segments {
        for _ in 0..seg.duration_frames {
            let t_ms = frame_index * 1000 / fps;
            frame_index += 1;
            let landmarks = match seg.mode {
                Mode::NoFace => None,
                mode => {
                    let (ear, mar) = match mode {
                        Mode::EyesClosed => (0.0, MOUTH_CLOSED_MAR),
                        Mode::Yawning => (EYE_OPEN_EAR, MOUTH_YAWN_MAR),
                        _ => (EYE_OPEN_EAR, MOUTH_CLOSED_MAR),
                    };
                    let mut points = BTreeMap::new();
                    place_eye(&mut points, &layout.left_eye, 0.25, 0.35, ear);
                    place_eye(&mut points, &layout.right_eye, 0.75, 0.35, ear);
                    place_mouth(&mut points, &layout.mouth, mar);
                    for p in points.values_mut() {
                        p.x += rng.gen_range(-SYNTH_JITTER..=SYNTH_JITTER);
                        p.y += rng.gen_range(-SYNTH_JITTER..=SYNTH_JITTER);
                        p.z += rng.gen_range(-SYNTH_JITTER..=SYNTH_JITTER);
                    }
                    Some(LandmarkFrame {
                        t_ms,
                        face_found: true,
                        points,
                    })
                }
            };
            out.push(FrameRecord {
                t_ms,
                landmarks,
                probability: seg.probability,
                image_ref: None,
                label: seg.label,
            });
        }
    }
    out
}

/// Records read from an external detector's standard output.
///
/// A malformed line is yielded as an error (carrying the line content) and
/// ends the stream; the child is killed.
pub struct LiveSource {
    command: String,
    child: Child,
    reader: StreamReader<BufReader<ChildStdout>>,
    done: bool,
}

impl LiveSource {
    /// Runs `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, IngestError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| IngestError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdout = child.stdout.take().expect("stdout piped");
        Ok(Self {
            command: command.to_string(),
            child,
            reader: StreamReader::new(BufReader::new(stdout)),
            done: false,
        })
    }

    fn finish(&mut self, kill: bool) {
        self.done = true;
        if kill {
            let _ = self.child.kill();
        }
        match self.child.wait() {
            Ok(status) if status.success() => {
                if self.reader.lines_read() == 0 {
                    log::warn!("detector `{}` exited without producing frames", self.command);
                }
            }
            Ok(status) if !kill => log::warn!("detector `{}` exited with {status}", self.command),
            Ok(_) => {}
            Err(e) => log::warn!("detector `{}`: wait failed: {e}", self.command),
        }
    }
}

impl Iterator for LiveSource {
    type Item = Result<FrameRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.reader.next() {
            None => {
                self.finish(false);
                None
            }
            Some(Err(e)) => {
                log::error!("detector `{}`: protocol violation: {e}", self.command);
                self.finish(true);
                Some(Err(e))
            }
            Some(ok) => Some(ok),
        }
    }
}

impl Drop for LiveSource {
    fn drop(&mut self) {
        if !self.done {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_ear, compute_mar};
    use proptest::prelude::*;

    const CANONICAL: &str = r#"{"t_ms": 33, "face": true, "pts": {"0": [0.5, 0.25, -0.01], "30": [0.09, 0.35, 0.0]}, "prob": 0.9, "img": "frames/000033.png", "label": "sleepy"}"#;

    #[test]
    fn canonical_line_round_trips() {
        let rec = parse_line(CANONICAL, 1).unwrap();
        assert_eq!(rec.to_line(), CANONICAL);
        assert_eq!(rec.landmarks.as_ref().unwrap().points.len(), 2);
    }

    #[test]
    fn absent_fields_serialize_as_null() {
        let rec = FrameRecord::probability_only(5, Some(Probability::new(0.25).unwrap()));
        assert_eq!(
            rec.to_line(),
            r#"{"t_ms": 5, "face": false, "pts": {}, "prob": 0.25, "img": null, "label": null}"#
        );
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(
            parse_line(r#"{"t_ms": 0, "face": true, "pts": {"468": [0, 0, 0]}}"#, 4),
            Err(IngestError::IndexOutOfRange { line: 4, index: 468 })
        ));
        assert!(matches!(
            parse_line(r#"{"t_ms": 0, "face": false, "pts": {}, "prob": null}"#, 2),
            Err(IngestError::EmptyRecord { line: 2 })
        ));
        assert!(matches!(
            parse_line(r#"{"t_ms": 0, "face": false, "prob": 1.2}"#, 1),
            Err(IngestError::Probability { .. })
        ));
        let err = parse_line("{not json", 9).unwrap_err();
        assert!(err.to_string().starts_with("line 9"), "{err}");
        assert!(err.to_string().contains("{not json"));
    }

    #[test]
    fn timestamp_regression_reported_with_line() {
        let text = "{\"t_ms\": 10, \"face\": false, \"prob\": 0.1}\n\n{\"t_ms\": 9, \"face\": false, \"prob\": 0.1}\n";
        let out: Vec<_> = StreamReader::new(text.as_bytes()).collect();
        assert_eq!(out.len(), 2);
        assert!(matches!(
            out[1],
            Err(IngestError::TimestampRegression { line: 3, previous: 10, t_ms: 9 })
        ));
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert_eq!(StreamReader::new(&b""[..]).count(), 0);
    }

    fn scenario() -> ScenarioSpec {
        ScenarioSpec {
            fps: 30,
            segments: vec![
                Segment::new(20, Mode::Alert).with_probability(0.1),
                Segment::new(20, Mode::EyesClosed).with_probability(0.9),
                Segment::new(20, Mode::Yawning),
                Segment::new(5, Mode::NoFace).with_probability(0.7),
            ],
        }
    }

    #[test]
    fn generator_hits_mode_bands() {
        let frames = synth_sequence(&scenario(), 7);
        assert_eq!(frames.len(), 65);
        for (i, f) in frames.iter().enumerate() {
            let Some(lm) = &f.landmarks else {
                assert!(i >= 60);
                assert_eq!(f.probability.unwrap().value(), 0.7);
                continue;
            };
            let ear = (compute_ear(lm, &EyeSpec::LEFT).value().unwrap()
                + compute_ear(lm, &EyeSpec::RIGHT).value().unwrap())
                / 2.0;
            let mar = compute_mar(lm, &MouthSpec::DEFAULT).value().unwrap();
            match i / 20 {
                0 => assert!(ear > 0.21 && mar < 0.6, "alert {ear} {mar}"),
                1 => assert!(ear < 0.05, "closed {ear}"),
                _ => assert!(mar > 0.8 && ear > 0.21, "yawn {mar}"),
            }
        }
        assert_eq!(frames[30].t_ms, 1000);
    }

    #[test]
    fn generator_is_deterministic() {
        let a: Vec<String> = synth_sequence(&scenario(), 42).iter().map(FrameRecord::to_line).collect();
        let b: Vec<String> = synth_sequence(&scenario(), 42).iter().map(FrameRecord::to_line).collect();
        let c: Vec<String> = synth_sequence(&scenario(), 43).iter().map(FrameRecord::to_line).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scenario_validation() {
        let mut s = scenario();
        assert!(s.validate().is_ok());
        s.segments[3].probability = None;
        assert_eq!(s.validate(), Err(ScenarioError::NoFaceWithoutProbability(3)));
        s.fps = 0;
        assert_eq!(s.validate(), Err(ScenarioError::Fps));
    }

    fn arb_record() -> impl Strategy<Value = FrameRecord> {
        let pts = prop::collection::btree_map(0u16..LANDMARK_COUNT, (-2.0f64..2.0, -2.0f64..2.0, -1.0f64..1.0), 0..6);
        (
            0u64..1_000_000,
            any::<bool>(),
            pts,
            prop::option::of(0.0f64..=1.0),
            prop::option::of("[a-z0-9/_.]{1,12}"),
            prop::option::of(prop_oneof![Just(Label::Sleepy), Just(Label::Awake)]),
        )
            .prop_filter_map("record needs a payload", |(t_ms, face, pts, prob, img, label)| {
                let points: BTreeMap<u16, Point3> = pts.into_iter().map(|(i, (x, y, z))| (i, Point3::new(x, y, z))).collect();
                let landmarks = (face || !points.is_empty()).then_some(LandmarkFrame { t_ms, face_found: face, points });
                if !face && prob.is_none() && img.is_none() {
                    return None;
                }
                Some(FrameRecord {
                    t_ms,
                    landmarks,
                    probability: prob.map(|p| Probability::new(p).unwrap()),
                    image_ref: img,
                    label,
                })
            })
    }

    proptest! {
        #[test]
        fn parse_serialize_round_trip(rec in arb_record()) {
            let line = rec.to_line();
            let back = parse_line(&line, 1).unwrap();
            prop_assert_eq!(&back, &rec);
            prop_assert_eq!(back.to_line(), line);
        }
    }
}
