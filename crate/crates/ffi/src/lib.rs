//! C ABI over `drowsy-core`.
//!
//! Every fallible call returns a [`DwStatus`]; the message for the most recent
//! failure on the calling thread is available from [`dw_last_error_message`].
//! Detectors and stores are opaque heap handles released by their `_free`
//! functions. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use drowsy_core::config::GeometryConfig;
use drowsy_core::fusion::{Detector, FrameInputs};
use drowsy_core::geometry::{compute_aspect_ratios, AspectRatios, InvalidReason, LandmarkFrame, Point3, Ratio};
use drowsy_core::ingest::parse_line;
use drowsy_core::store::{Event, EventKind, EventStore, StoreError};
use drowsy_core::{PipelineConfig, Probability};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwStatus {
    Ok = 0,
    /// A required pointer argument was null.
    ErrNull = 1,
    /// An argument was out of range or not valid UTF-8.
    ErrInvalidArg = 2,
    /// A stream line or config could not be parsed.
    ErrParse = 3,
    ErrIo = 4,
    /// An event was older than the last one appended for its session.
    ErrOrder = 5,
    /// Internal failure, including a caught panic.
    ErrInternal = 6,
}

/// Outcome of advancing a detector by one frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DwStep {
    pub sleepy_frame: bool,
    pub yawn: bool,
    pub alarm: bool,
}

/// Running counts of emitted events.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DwTotals {
    pub alarms: u64,
    pub yawns: u64,
}

/// Opaque detector: fusion state machine plus landmark layout.
pub struct DwDetector {
    detector: Detector,
    geometry: GeometryConfig,
}

/// Opaque handle on an append-only event log.
pub struct DwStore {
    store: EventStore,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: DwStatus, msg: impl Into<String>) -> DwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> DwStatus) -> DwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DwStatus::ErrInternal, "panic inside drowsy library"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, DwStatus> {
    if p.is_null() {
        return Err(fail(DwStatus::ErrNull, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DwStatus::ErrInvalidArg, format!("{name} is not valid UTF-8")))
}

fn store_status(e: StoreError) -> DwStatus {
    let status = match e {
        StoreError::Io { .. } => DwStatus::ErrIo,
        StoreError::Order { .. } => DwStatus::ErrOrder,
        StoreError::ReadOnly | StoreError::InvalidEvent(_) => DwStatus::ErrInvalidArg,
    };
    fail(status, e.to_string())
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dw_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn dw_sigmoid(x: f64) -> f64 {
    drowsy_core::sigmoid(x)
}

#[no_mangle]
pub extern "C" fn dw_swish(x: f64) -> f64 {
    drowsy_core::swish(x)
}

unsafe fn planar_frame<const N: usize>(xy: *const f64) -> LandmarkFrame {
    let coords = std::slice::from_raw_parts(xy, 2 * N);
    (0..N).fold(LandmarkFrame::new(0, true), |f, i| {
        f.with_point(i as u16, Point3::new(coords[2 * i], coords[2 * i + 1], 0.0))
    })
}

unsafe fn ratio_out(r: Ratio, out: *mut f64) -> DwStatus {
    match r {
        Ratio::Valid(v) => {
            *out = v;
            DwStatus::Ok
        }
        Ratio::Invalid(reason) => fail(DwStatus::ErrInvalidArg, reason.to_string()),
    }
}

/// Eye aspect ratio of six planar points `p1..p6`, given as
/// `[x1, y1, x2, y2, ..., x6, y6]`.
///
/// # Safety
/// `xy` must point to 12 readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn dw_compute_ear(xy: *const f64, out: *mut f64) -> DwStatus {
    if xy.is_null() || out.is_null() {
        return fail(DwStatus::ErrNull, "null argument");
    }
    let frame = planar_frame::<6>(xy);
    let eye = match drowsy_core::EyeSpec::new([0, 1, 2, 3, 4, 5]) {
        Ok(e) => e,
        Err(e) => return fail(DwStatus::ErrInternal, e.to_string()),
    };
    ratio_out(drowsy_core::compute_ear(&frame, &eye), out)
}

/// Mouth aspect ratio of eight planar points `p1..p8`, given as
/// `[x1, y1, ..., x8, y8]`.
///
/// # Safety
/// `xy` must point to 16 readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn dw_compute_mar(xy: *const f64, out: *mut f64) -> DwStatus {
    if xy.is_null() || out.is_null() {
        return fail(DwStatus::ErrNull, "null argument");
    }
    let frame = planar_frame::<8>(xy);
    let mouth = match drowsy_core::MouthSpec::new([0, 1, 2, 3, 4, 5, 6, 7]) {
        Ok(m) => m,
        Err(e) => return fail(DwStatus::ErrInternal, e.to_string()),
    };
    ratio_out(drowsy_core::compute_mar(&frame, &mouth), out)
}

/// Creates a detector from a TOML config (the same format the CLI reads),
/// or from defaults when `config_toml` is null.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be
/// writable. On success `*out` owns a handle to pass to [`dw_detector_free`].
#[no_mangle]
pub unsafe extern "C" fn dw_detector_new(config_toml: *const c_char, out: *mut *mut DwDetector) -> DwStatus {
    guard(|| {
        if out.is_null() {
            return fail(DwStatus::ErrNull, "out is null");
        }
        *out = ptr::null_mut();
        let cfg = if config_toml.is_null() {
            PipelineConfig::default()
        } else {
            let text = match str_arg(config_toml, "config_toml") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match PipelineConfig::from_toml(text, Path::new("<config>")) {
                Ok(c) => c,
                Err(e) => return fail(DwStatus::ErrParse, e.to_string()),
            }
        };
        let detector = match Detector::new(cfg.fusion) {
            Ok(d) => d,
            Err(e) => return fail(DwStatus::ErrInvalidArg, e.to_string()),
        };
        *out = Box::into_raw(Box::new(DwDetector {
            detector,
            geometry: cfg.geometry,
        }));
        DwStatus::Ok
    })
}

/// # Safety
/// `det` must be null or a handle from [`dw_detector_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dw_detector_free(det: *mut DwDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

unsafe fn advance(det: *mut DwDetector, inputs: &FrameInputs, out: *mut DwStep) {
    let s = (*det).detector.advance(inputs);
    if !out.is_null() {
        *out = DwStep {
            sleepy_frame: s.sleepy_frame,
            yawn: s.yawn_event,
            alarm: s.alarm_event,
        };
    }
}

/// Advances the detector by one stream line (a JSON frame record). The
/// line's `prob` field, when present, is the classifier probability.
///
/// # Safety
/// `det` must be a live handle, `line` a NUL-terminated string, and `out`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn dw_detector_step_line(det: *mut DwDetector, line: *const c_char, out: *mut DwStep) -> DwStatus {
    guard(|| {
        if det.is_null() {
            return fail(DwStatus::ErrNull, "detector is null");
        }
        let text = match str_arg(line, "line") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let record = match parse_line(text, 1) {
            Ok(r) => r,
            Err(e) => return fail(DwStatus::ErrParse, e.to_string()),
        };
        let g = &(*det).geometry;
        let inputs = FrameInputs {
            t_ms: record.t_ms,
            ratios: compute_aspect_ratios(&record.landmark_frame(), &g.left_eye, &g.right_eye, &g.mouth),
            probability: record.probability,
        };
        advance(det, &inputs, out);
        DwStatus::Ok
    })
}

fn optional_ratio(v: f64) -> Ratio {
    if v.is_finite() && v >= 0.0 {
        Ratio::Valid(v)
    } else {
        Ratio::Invalid(InvalidReason::NoFace)
    }
}

/// Advances the detector with precomputed signals. A NaN or negative `ear`,
/// `mar` or `prob` marks that signal as unavailable for this frame.
///
/// # Safety
/// `det` must be a live handle and `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn dw_detector_step_ratios(
    det: *mut DwDetector,
    t_ms: u64,
    ear: f64,
    mar: f64,
    prob: f64,
    out: *mut DwStep,
) -> DwStatus {
    guard(|| {
        if det.is_null() {
            return fail(DwStatus::ErrNull, "detector is null");
        }
        let probability = if prob.is_nan() || prob < 0.0 {
            None
        } else {
            match Probability::new(prob) {
                Ok(p) => Some(p),
                Err(e) => return fail(DwStatus::ErrInvalidArg, e.to_string()),
            }
        };
        let ear = optional_ratio(ear);
        let inputs = FrameInputs {
            t_ms,
            ratios: AspectRatios {
                ear_left: ear,
                ear_right: ear,
                ear_mean: ear,
                mar: optional_ratio(mar),
            },
            probability,
        };
        advance(det, &inputs, out);
        DwStatus::Ok
    })
}

/// Clears the frame counters; totals survive when `preserve_totals` is set.
///
/// # Safety
/// `det` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dw_detector_reset(det: *mut DwDetector, preserve_totals: bool) -> DwStatus {
    if det.is_null() {
        return fail(DwStatus::ErrNull, "detector is null");
    }
    (*det).detector.reset(preserve_totals);
    DwStatus::Ok
}

/// # Safety
/// `det` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dw_detector_totals(det: *const DwDetector, out: *mut DwTotals) -> DwStatus {
    if det.is_null() || out.is_null() {
        return fail(DwStatus::ErrNull, "null argument");
    }
    let t = (*det).detector.state().totals;
    *out = DwTotals {
        alarms: t.alarms,
        yawns: t.yawns,
    };
    DwStatus::Ok
}

/// Opens an event log, creating it unless `read_only` is set.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable. On success
/// `*out` owns a handle to pass to [`dw_store_free`].
#[no_mangle]
pub unsafe extern "C" fn dw_store_open(path: *const c_char, read_only: bool, out: *mut *mut DwStore) -> DwStatus {
    guard(|| {
        if out.is_null() {
            return fail(DwStatus::ErrNull, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let opened = if read_only {
            EventStore::open_read_only(path)
        } else {
            EventStore::open(path)
        };
        match opened {
            Ok(store) => {
                *out = Box::into_raw(Box::new(DwStore { store }));
                DwStatus::Ok
            }
            Err(e) => store_status(e),
        }
    })
}

/// # Safety
/// `store` must be null or a handle from [`dw_store_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dw_store_free(store: *mut DwStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Appends one event. `kind` is `"yawn"` or `"alarm"`; `wall` is an RFC 3339
/// timestamp, or null to stamp the current time.
///
/// # Safety
/// `store` must be a live handle; `kind` and `session` NUL-terminated
/// strings; `wall` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dw_store_append(
    store: *mut DwStore,
    kind: *const c_char,
    t_ms: u64,
    session: *const c_char,
    wall: *const c_char,
) -> DwStatus {
    guard(|| {
        if store.is_null() {
            return fail(DwStatus::ErrNull, "store is null");
        }
        let (kind, session) = match (str_arg(kind, "kind"), str_arg(session, "session")) {
            (Ok(k), Ok(s)) => (k, s),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let kind: EventKind = match kind.parse() {
            Ok(k) => k,
            Err(e) => return fail(DwStatus::ErrInvalidArg, format!("{e}")),
        };
        let wall = if wall.is_null() {
            drowsy_core::store::now_wall_time()
        } else {
            match str_arg(wall, "wall") {
                Ok(w) => w.to_owned(),
                Err(s) => return s,
            }
        };
        match (*store).store.append(&Event::new(kind, t_ms, session, wall)) {
            Ok(()) => DwStatus::Ok,
            Err(e) => store_status(e),
        }
    })
}

/// Counts events in the log, restricted to `session` when it is non-null.
///
/// # Safety
/// `store` must be a live handle, `session` null or NUL-terminated, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dw_store_summary(store: *const DwStore, session: *const c_char, out: *mut DwTotals) -> DwStatus {
    guard(|| {
        if store.is_null() || out.is_null() {
            return fail(DwStatus::ErrNull, "null argument");
        }
        let session = if session.is_null() {
            None
        } else {
            match str_arg(session, "session") {
                Ok(s) => Some(s),
                Err(s) => return s,
            }
        };
        match (*store).store.summary(session) {
            Ok(s) => {
                *out = DwTotals {
                    alarms: s.alarms,
                    yawns: s.yawns,
                };
                DwStatus::Ok
            }
            Err(e) => store_status(e),
        }
    })
}
