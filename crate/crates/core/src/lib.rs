//! Replayable driver drowsiness detection.
//!
//! Facial-landmark eye and mouth aspect ratios are fused with an image
//! classifier's sleepiness probability. A frame-counter state machine turns
//! sustained sleepy frames into alarms and sustained open-mouth runs into
//! yawns; events go to an append-only log served by a small dashboard.

pub mod classifier;
pub mod cli;
pub mod config;
pub mod dashboard;
pub mod fusion;
pub mod geometry;
pub mod ingest;
mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod store;

pub use classifier::{sigmoid, swish, Probability};
pub use config::PipelineConfig;
pub use fusion::{judge_frame, step, DrowsinessState, FrameInputs, FusionConfig, Policy, StepOutput};
pub use geometry::{compute_aspect_ratios, compute_ear, compute_mar, AspectRatios, EyeSpec, LandmarkFrame, MouthSpec, Point3, Ratio};
pub use ingest::{FrameRecord, Label};
pub use store::{Event, EventKind, EventStore, Summary};
