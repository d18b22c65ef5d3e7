//! Binary classification metrics (sleepy is the positive class) and
//! episode-level evaluation of alarm logs against labeled streams.

use serde::{Deserialize, Serialize};

use crate::ingest::{FrameRecord, Label};
use crate::store::{Event, EventKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truth} labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("frame {index} (t_ms={t_ms}) has no ground-truth label")]
    Unlabeled { index: usize, t_ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Sleepy, Label::Sleepy) => self.true_positive += 1,
            (Label::Sleepy, Label::Awake) => self.false_positive += 1,
            (Label::Awake, Label::Sleepy) => self.false_negative += 1,
            (Label::Awake, Label::Awake) => self.true_negative += 1,
        }
    }

    pub fn accuracy(&self) -> Result<f64, MetricsError> {
        accuracy(self)
    }
}

pub fn confusion(predictions: &[Label], truth: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        m.record(p, t);
    }
    Ok(m)
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match m.total() {
        0 => Err(MetricsError::Empty),
        total => Ok((m.true_positive + m.true_negative) as f64 / total as f64),
    }
}

/// A maximal run of sleepy-labeled frames long enough to warrant an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub start_ms: u64,
    pub end_ms: u64,
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub episodes: usize,
    pub detected_episodes: usize,
    pub alarms: usize,
    pub false_alarms: usize,
    /// Share of episodes containing at least one alarm.
    pub true_alarm_rate: f64,
    /// Share of alarms that landed on awake-labeled frames.
    pub false_positive_rate: f64,
}

fn labels(stream: &[FrameRecord]) -> Result<Vec<Label>, MetricsError> {
    stream
        .iter()
        .enumerate()
        .map(|(index, r)| r.label.ok_or(MetricsError::Unlabeled { index, t_ms: r.t_ms }))
        .collect()
}

pub fn episodes(stream: &[FrameRecord], min_frames: u32) -> Result<Vec<Episode>, MetricsError> {
    let labels = labels(stream)?;
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] != Label::Sleepy {
            i += 1;
            continue;
        }
        let start = i;
        while i < labels.len() && labels[i] == Label::Sleepy {
            i += 1;
        }
        if i - start >= min_frames as usize {
            out.push(Episode {
                start_ms: stream[start].t_ms,
                end_ms: stream[i - 1].t_ms,
                frames: i - start,
            });
        }
    }
    Ok(out)
}

/// Matches alarm events to the labeled stream by timestamp.
pub fn evaluate_run(events: &[Event], stream: &[FrameRecord], alarm_frame_threshold: u32) -> Result<RunEvaluation, MetricsError> {
    let labels = labels(stream)?;
    let episodes = episodes(stream, alarm_frame_threshold)?;
    let alarms: Vec<u64> = events
        .iter()
        .filter(|e| e.kind == EventKind::Alarm)
        .map(|e| e.t_ms)
        .collect();

    let detected = episodes
        .iter()
        .filter(|ep| alarms.iter().any(|&t| ep.start_ms <= t && t <= ep.end_ms))
        .count();

    // Label in force at time t: that of the last frame at or before t.
    let false_alarms = alarms
        .iter()
        .filter(|&&t| {
            let n = stream.partition_point(|r| r.t_ms <= t);
            n > 0 && labels[n - 1] == Label::Awake
        })
        .count();

    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(RunEvaluation {
        episodes: episodes.len(),
        detected_episodes: detected,
        alarms: alarms.len(),
        false_alarms,
        true_alarm_rate: ratio(detected, episodes.len()),
        false_positive_rate: ratio(false_alarms, alarms.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Probability;
    use crate::store::replay_wall_time;

    fn labeled(labels: &[Label]) -> Vec<FrameRecord> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let mut r = FrameRecord::probability_only(i as u64 * 10, Some(Probability::ZERO));
                r.label = Some(l);
                r
            })
            .collect()
    }

    fn alarm(t: u64) -> Event {
        Event::new(EventKind::Alarm, t, "s", replay_wall_time(t))
    }

    use Label::{Awake as A, Sleepy as S};

    #[test]
    fn perfect_and_inverted() {
        let truth = [S, A, S, S, A, A, S, A, S, A];
        let m = confusion(&truth, &truth).unwrap();
        assert_eq!((m.false_positive, m.false_negative), (0, 0));
        assert_eq!(m.accuracy().unwrap(), 1.0);
        let inverted: Vec<_> = truth.iter().map(|&l| if l == S { A } else { S }).collect();
        let m = confusion(&inverted, &truth).unwrap();
        assert_eq!((m.true_positive, m.true_negative), (0, 0));
        assert_eq!(m.accuracy().unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(
            confusion(&[S], &[S, A]),
            Err(MetricsError::LengthMismatch { predictions: 1, truth: 2 })
        );
        assert_eq!(accuracy(&ConfusionMatrix::default()), Err(MetricsError::Empty));
        let mut stream = labeled(&[S, S]);
        stream[1].label = None;
        assert_eq!(
            evaluate_run(&[], &stream, 1),
            Err(MetricsError::Unlabeled { index: 1, t_ms: 10 })
        );
    }

    #[test]
    fn small_matrix_accuracy() {
        let m = ConfusionMatrix {
            true_positive: 1,
            true_negative: 1,
            ..Default::default()
        };
        assert_eq!(accuracy(&m).unwrap(), 1.0);
    }

    #[test]
    fn one_episode_one_alarm() {
        let stream = labeled(&[A, A, S, S, S, A]);
        let r = evaluate_run(&[alarm(40)], &stream, 3).unwrap();
        assert_eq!((r.true_alarm_rate, r.false_positive_rate), (1.0, 0.0));
    }

    #[test]
    fn no_alarms_two_episodes() {
        let stream = labeled(&[S, S, A, S, S]);
        let r = evaluate_run(&[], &stream, 2).unwrap();
        assert_eq!(r.episodes, 2);
        assert_eq!((r.true_alarm_rate, r.false_positive_rate), (0.0, 0.0));
    }

    #[test]
    fn alarm_on_awake_frame_is_false_positive() {
        let stream = labeled(&[S, S, A, A]);
        let events = [alarm(15), alarm(25), Event::new(EventKind::Yawn, 30, "s", replay_wall_time(30))];
        let r = evaluate_run(&events, &stream, 2).unwrap();
        assert_eq!(r.alarms, 2);
        assert_eq!(r.false_alarms, 1);
        assert_eq!(r.false_positive_rate, 0.5);
        // t=15 falls between frames 1 (sleepy, t=10) and 2; it is outside the
        // episode span [0, 10] and so does not count as a detection.
        assert_eq!(r.true_alarm_rate, 0.0);
    }

    #[test]
    fn short_runs_are_not_episodes() {
        let stream = labeled(&[S, A, S, S, A]);
        assert!(episodes(&stream, 3).unwrap().is_empty());
        assert_eq!(episodes(&stream, 2).unwrap(), vec![Episode { start_ms: 20, end_ms: 30, frames: 2 }]);
    }
}
