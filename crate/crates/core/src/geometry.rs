//! Eye and mouth aspect ratios from facial landmark coordinates.
//!
//! Both ratios are sums of vertical landmark distances divided by a multiple
//! of the horizontal distance, so they are invariant to uniform scale,
//! in-plane rotation and translation of the face.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of landmarks produced by the face mesh detector.
pub const LANDMARK_COUNT: u16 = 468;

/// Denominators at or below this are treated as degenerate.
pub const DEGENERACY_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Planar Euclidean distance. Depth is ignored.
pub fn distance(p: Point3, q: Point3) -> f64 {
    (p.x - q.x).hypot(p.y - q.y)
}

/// One frame of detector output: a sparse set of indexed landmarks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkFrame {
    pub t_ms: u64,
    pub face_found: bool,
    pub points: BTreeMap<u16, Point3>,
}

impl LandmarkFrame {
    pub fn new(t_ms: u64, face_found: bool) -> Self {
        Self {
            t_ms,
            face_found,
            points: BTreeMap::new(),
        }
    }

    pub fn no_face(t_ms: u64) -> Self {
        Self::new(t_ms, false)
    }

    pub fn with_point(mut self, index: u16, point: Point3) -> Self {
        self.points.insert(index, point);
        self
    }

    pub fn point(&self, index: u16) -> Option<Point3> {
        self.points.get(&index).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LandmarkSpecError {
    #[error("landmark index {0} out of range (0..{LANDMARK_COUNT})")]
    OutOfRange(u16),
    #[error("landmark index {0} repeated")]
    Duplicate(u16),
}

fn check_indices(indices: &[u16]) -> Result<(), LandmarkSpecError> {
    for (i, &idx) in indices.iter().enumerate() {
        if idx >= LANDMARK_COUNT {
            return Err(LandmarkSpecError::OutOfRange(idx));
        }
        if indices[..i].contains(&idx) {
            return Err(LandmarkSpecError::Duplicate(idx));
        }
    }
    Ok(())
}

/// Six eye landmarks: corners `p1`/`p4`, upper lid `p2`,`p3`, lower lid `p5`,`p6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u16; 6]", into = "[u16; 6]")]
pub struct EyeSpec([u16; 6]);

impl EyeSpec {
    pub const LEFT: EyeSpec = EyeSpec([30, 29, 28, 243, 22, 24]);
    pub const RIGHT: EyeSpec = EyeSpec([463, 258, 259, 359, 254, 252]);

    pub fn new(indices: [u16; 6]) -> Result<Self, LandmarkSpecError> {
        check_indices(&indices)?;
        Ok(Self(indices))
    }

    pub fn indices(&self) -> [u16; 6] {
        self.0
    }
}

impl TryFrom<[u16; 6]> for EyeSpec {
    type Error = LandmarkSpecError;
    fn try_from(value: [u16; 6]) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EyeSpec> for [u16; 6] {
    fn from(spec: EyeSpec) -> Self {
        spec.0
    }
}

/// Eight mouth landmarks: corners `p1`/`p5`, upper lip `p2..p4`, lower lip `p6..p8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u16; 8]", into = "[u16; 8]")]
pub struct MouthSpec([u16; 8]);

impl MouthSpec {
    pub const DEFAULT: MouthSpec = MouthSpec([61, 39, 0, 269, 287, 405, 17, 181]);

    pub fn new(indices: [u16; 8]) -> Result<Self, LandmarkSpecError> {
        check_indices(&indices)?;
        Ok(Self(indices))
    }

    pub fn indices(&self) -> [u16; 8] {
        self.0
    }
}

impl Default for MouthSpec {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<[u16; 8]> for MouthSpec {
    type Error = LandmarkSpecError;
    fn try_from(value: [u16; 8]) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<MouthSpec> for [u16; 8] {
    fn from(spec: MouthSpec) -> Self {
        spec.0
    }
}

/// Why a ratio could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidReason {
    NoFace,
    MissingLandmark(u16),
    DegenerateHorizontal,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::NoFace => f.write_str("no face"),
            InvalidReason::MissingLandmark(i) => write!(f, "missing landmark {i}"),
            InvalidReason::DegenerateHorizontal => f.write_str("degenerate horizontal distance"),
        }
    }
}

/// An aspect ratio, or the reason it is unavailable for this frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Valid(f64),
    Invalid(InvalidReason),
}

impl Ratio {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Ratio::Valid(v) => Some(v),
            Ratio::Invalid(_) => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Ratio::Valid(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectRatios {
    pub ear_left: Ratio,
    pub ear_right: Ratio,
    pub ear_mean: Ratio,
    pub mar: Ratio,
}

impl AspectRatios {
    pub fn all_invalid(reason: InvalidReason) -> Self {
        let r = Ratio::Invalid(reason);
        Self {
            ear_left: r,
            ear_right: r,
            ear_mean: r,
            mar: r,
        }
    }
}

fn gather<const N: usize>(frame: &LandmarkFrame, indices: [u16; N]) -> Result<[Point3; N], InvalidReason> {
    let mut pts = [Point3::default(); N];
    for (slot, idx) in pts.iter_mut().zip(indices) {
        *slot = frame.point(idx).ok_or(InvalidReason::MissingLandmark(idx))?;
    }
    Ok(pts)
}

fn ratio(vertical_sum: f64, horizontal: f64, pairs: f64) -> Ratio {
    if horizontal <= DEGENERACY_EPSILON {
        Ratio::Invalid(InvalidReason::DegenerateHorizontal)
    } else {
        Ratio::Valid(vertical_sum / (pairs * horizontal))
    }
}

pub fn compute_ear(frame: &LandmarkFrame, eye: &EyeSpec) -> Ratio {
    let [p1, p2, p3, p4, p5, p6] = match gather(frame, eye.0) {
        Ok(p) => p,
        Err(reason) => return Ratio::Invalid(reason),
    };
    ratio(distance(p2, p6) + distance(p3, p5), distance(p1, p4), 2.0)
}

pub fn compute_mar(frame: &LandmarkFrame, mouth: &MouthSpec) -> Ratio {
    let [p1, p2, p3, p4, p5, p6, p7, p8] = match gather(frame, mouth.0) {
        Ok(p) => p,
        Err(reason) => return Ratio::Invalid(reason),
    };
    ratio(
        distance(p2, p8) + distance(p3, p7) + distance(p4, p6),
        distance(p1, p5),
        3.0,
    )
}

pub fn compute_aspect_ratios(
    frame: &LandmarkFrame,
    left: &EyeSpec,
    right: &EyeSpec,
    mouth: &MouthSpec,
) -> AspectRatios {
    if !frame.face_found {
        return AspectRatios::all_invalid(InvalidReason::NoFace);
    }
    let ear_left = compute_ear(frame, left);
    let ear_right = compute_ear(frame, right);
    let ear_mean = match (ear_left, ear_right) {
        (Ratio::Valid(l), Ratio::Valid(r)) => Ratio::Valid((l + r) / 2.0),
        (Ratio::Invalid(reason), _) | (_, Ratio::Invalid(reason)) => Ratio::Invalid(reason),
    };
    AspectRatios {
        ear_left,
        ear_right,
        ear_mean,
        mar: compute_mar(frame, mouth),
    }
}
