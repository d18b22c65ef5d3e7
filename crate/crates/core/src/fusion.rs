//! Per-frame fusion of the landmark and classifier verdicts, and the
//! frame-counter state machine that turns sleepy frames into alarms and
//! sustained open-mouth runs into yawns.

use serde::{Deserialize, Serialize};

use crate::classifier::Probability;
use crate::geometry::AspectRatios;

/// How the two per-frame verdicts are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Both must agree when both are available; a lone signal decides alone.
    #[default]
    Both,
    /// Either suffices.
    Either,
    CnnOnly,
    LandmarkOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub ear_close_threshold: f64,
    pub mar_yawn_threshold: f64,
    pub cnn_threshold: Probability,
    pub alarm_frame_threshold: u32,
    pub yawn_min_frames: u32,
    pub policy: Policy,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            ear_close_threshold: 0.21,
            mar_yawn_threshold: 0.6,
            cnn_threshold: Probability::new(0.5).expect("constant"),
            alarm_frame_threshold: 60,
            yawn_min_frames: 15,
            policy: Policy::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionConfigError {
    #[error("{0} must be a positive finite number")]
    NonPositive(&'static str),
    #[error("{0} must be at least 1")]
    ZeroFrames(&'static str),
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionConfigError> {
        for (name, v) in [
            ("ear_close_threshold", self.ear_close_threshold),
            ("mar_yawn_threshold", self.mar_yawn_threshold),
            ("cnn_threshold", self.cnn_threshold.value()),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FusionConfigError::NonPositive(name));
            }
        }
        if self.alarm_frame_threshold == 0 {
            return Err(FusionConfigError::ZeroFrames("alarm_frame_threshold"));
        }
        if self.yawn_min_frames == 0 {
            return Err(FusionConfigError::ZeroFrames("yawn_min_frames"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameInputs {
    pub t_ms: u64,
    pub ratios: AspectRatios,
    pub probability: Option<Probability>,
}

pub fn judge_frame(inputs: &FrameInputs, cfg: &FusionConfig) -> bool {
    let landmark = inputs
        .ratios
        .ear_mean
        .value()
        .map(|ear| ear < cfg.ear_close_threshold);
    let cnn = inputs.probability.map(|p| p >= cfg.cnn_threshold);
    match cfg.policy {
        Policy::Both => match (landmark, cnn) {
            (Some(l), Some(c)) => l && c,
            (Some(v), None) | (None, Some(v)) => v,
            (None, None) => false,
        },
        Policy::Either => landmark.unwrap_or(false) || cnn.unwrap_or(false),
        Policy::CnnOnly => cnn.unwrap_or(false),
        Policy::LandmarkOnly => landmark.unwrap_or(false),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub alarms: u64,
    pub yawns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DrowsinessState {
    pub sleepy_counter: u32,
    pub yawn_run: u32,
    pub yawn_latched: bool,
    pub totals: Totals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepOutput {
    pub sleepy_frame: bool,
    pub yawn_event: bool,
    pub alarm_event: bool,
}

/// Advances the state machine by one frame.
pub fn step(state: &DrowsinessState, inputs: &FrameInputs, cfg: &FusionConfig) -> (DrowsinessState, StepOutput) {
    let mut next = *state;
    let mut out = StepOutput {
        sleepy_frame: judge_frame(inputs, cfg),
        ..StepOutput::default()
    };

    if out.sleepy_frame {
        next.sleepy_counter += 1;
        if next.sleepy_counter >= cfg.alarm_frame_threshold {
            out.alarm_event = true;
            next.sleepy_counter = 0;
            next.totals.alarms += 1;
        }
    } else {
        next.sleepy_counter = 0;
    }

    match inputs.ratios.mar.value() {
        Some(mar) if mar > cfg.mar_yawn_threshold => {
            next.yawn_run = next.yawn_run.saturating_add(1);
            if !next.yawn_latched && next.yawn_run >= cfg.yawn_min_frames {
                next.yawn_latched = true;
                out.yawn_event = true;
                next.totals.yawns += 1;
            }
        }
        _ => {
            next.yawn_run = 0;
            next.yawn_latched = false;
        }
    }

    (next, out)
}

pub fn reset(state: &DrowsinessState, preserve_totals: bool) -> DrowsinessState {
    DrowsinessState {
        totals: if preserve_totals { state.totals } else { Totals::default() },
        ..DrowsinessState::default()
    }
}

/// Convenience owner of a state plus its config.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: FusionConfig,
    state: DrowsinessState,
}

impl Detector {
    pub fn new(cfg: FusionConfig) -> Result<Self, FusionConfigError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: DrowsinessState::default(),
        })
    }

    pub fn advance(&mut self, inputs: &FrameInputs) -> StepOutput {
        let (next, out) = step(&self.state, inputs, &self.cfg);
        self.state = next;
        out
    }

    pub fn reset(&mut self, preserve_totals: bool) {
        self.state = reset(&self.state, preserve_totals);
    }

    pub fn state(&self) -> &DrowsinessState {
        &self.state
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{InvalidReason, Ratio};

    fn inputs(ear: Option<f64>, mar: Option<f64>, prob: Option<f64>) -> FrameInputs {
        let r = |v: Option<f64>| v.map_or(Ratio::Invalid(InvalidReason::NoFace), Ratio::Valid);
        FrameInputs {
            t_ms: 0,
            ratios: AspectRatios {
                ear_left: r(ear),
                ear_right: r(ear),
                ear_mean: r(ear),
                mar: r(mar),
            },
            probability: prob.map(|p| Probability::new(p).unwrap()),
        }
    }

    #[test]
    fn agreement_and_fallback() {
        let cfg = FusionConfig::default();
        assert!(judge_frame(&inputs(Some(0.10), None, Some(0.9)), &cfg));
        assert!(judge_frame(&inputs(None, None, Some(0.9)), &cfg));
        assert!(!judge_frame(&inputs(Some(0.10), None, Some(0.2)), &cfg));
        assert!(!judge_frame(&inputs(None, None, None), &cfg));
    }

    // Literal table, one row per (landmark, cnn) combination:
    // landmark: 0 absent, 1 open eye, 2 closed eye
    // cnn:      0 absent, 1 below threshold, 2 at/above threshold
    // columns:  both, either, cnn_only, landmark_only
    const TRUTH: [[[bool; 4]; 3]; 3] = [
        [[false, false, false, false], [false, false, false, false], [true, true, true, false]],
        [[false, false, false, false], [false, false, false, false], [false, true, true, false]],
        [[true, true, false, true], [false, true, false, true], [true, true, true, true]],
    ];

    #[test]
    fn exhaustive_truth_table() {
        let ears = [None, Some(0.30), Some(0.10)];
        let probs = [None, Some(0.2), Some(0.5)];
        let policies = [Policy::Both, Policy::Either, Policy::CnnOnly, Policy::LandmarkOnly];
        for (li, ear) in ears.iter().enumerate() {
            for (ci, prob) in probs.iter().enumerate() {
                for (pi, policy) in policies.iter().enumerate() {
                    let cfg = FusionConfig {
                        policy: *policy,
                        ..Default::default()
                    };
                    assert_eq!(
                        judge_frame(&inputs(*ear, None, *prob), &cfg),
                        TRUTH[li][ci][pi],
                        "ear={ear:?} prob={prob:?} policy={policy:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn sixty_frames_one_alarm() {
        let cfg = FusionConfig::default();
        let mut d = Detector::new(cfg).unwrap();
        let sleepy = inputs(Some(0.05), None, Some(0.9));
        let fired: Vec<usize> = (1..=60).filter(|_| d.advance(&sleepy).alarm_event).collect();
        assert_eq!(fired, vec![60]);
        assert_eq!(d.state().sleepy_counter, 0);
    }

    #[test]
    fn fifty_nine_then_alert_never_fires() {
        let mut d = Detector::new(FusionConfig::default()).unwrap();
        let sleepy = inputs(Some(0.05), None, Some(0.9));
        let alert = inputs(Some(0.3), None, Some(0.1));
        for _ in 0..5 {
            for _ in 0..59 {
                assert!(!d.advance(&sleepy).alarm_event);
            }
            assert!(!d.advance(&alert).alarm_event);
            assert_eq!(d.state().sleepy_counter, 0);
        }
        assert_eq!(d.state().totals.alarms, 0);
    }

    #[test]
    fn yawn_latch_fires_once_per_run() {
        let cfg = FusionConfig::default();
        let mut d = Detector::new(cfg).unwrap();
        let open = inputs(Some(0.3), Some(0.9), None);
        let closed = inputs(Some(0.3), Some(0.1), None);
        let events: Vec<usize> = (1..=40).filter(|_| d.advance(&open).yawn_event).collect();
        assert_eq!(events, vec![15]);
        assert!(d.state().yawn_latched);
        d.advance(&closed);
        assert!(!d.state().yawn_latched);
        let again: Vec<usize> = (1..=15).filter(|_| d.advance(&open).yawn_event).collect();
        assert_eq!(again, vec![15]);
        assert_eq!(d.state().totals.yawns, 2);
    }

    #[test]
    fn reset_modes() {
        let s = DrowsinessState {
            sleepy_counter: 12,
            yawn_run: 20,
            yawn_latched: true,
            totals: Totals { alarms: 3, yawns: 2 },
        };
        assert_eq!(reset(&s, false), DrowsinessState::default());
        let kept = reset(&s, true);
        assert_eq!(kept.totals, Totals { alarms: 3, yawns: 2 });
        assert_eq!((kept.sleepy_counter, kept.yawn_run, kept.yawn_latched), (0, 0, false));
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::default().validate().is_ok());
        let bad = FusionConfig {
            alarm_frame_threshold: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(FusionConfigError::ZeroFrames("alarm_frame_threshold")));
        let bad = FusionConfig {
            ear_close_threshold: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FusionConfig {
            cnn_threshold: Probability::ZERO,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
