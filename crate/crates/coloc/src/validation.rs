//! Infer lecture attendance from dwell segments and score the inference
//! against instructor ground truth.
//!
//! A student counts as `Present` at a lecture when any of their dwelling
//! segments at the lecture's room positively overlaps the lecture. A
//! (user, lecture) pair is `Unobserved` when the user produced no events
//! at all within a margin around the lecture — those rows carry no signal
//! either way and are excluded from scoring.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collocation::DwellIndex;
use crate::ingest::LogCorpus;
use crate::model::{ApRegistry, AttendanceRecord, Mark, Roster, Schedule, Timestamp};
use crate::segmentation::DwellSegment;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("no comparable (user, lecture) entries: every overlapping record is Unobserved")]
    NoComparableEntries,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad inference row: {0}")]
    BadInferenceRow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InferredMark {
    Present,
    Absent,
    /// No events near the lecture at all; excluded from scoring.
    Unobserved,
}

impl InferredMark {
    pub fn as_str(self) -> &'static str {
        match self {
            InferredMark::Present => "present",
            InferredMark::Absent => "absent",
            InferredMark::Unobserved => "unobserved",
        }
    }
}

impl std::str::FromStr for InferredMark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "present" => Ok(InferredMark::Present),
            "absent" => Ok(InferredMark::Absent),
            "unobserved" => Ok(InferredMark::Unobserved),
            other => Err(format!("unknown inferred mark {other:?}")),
        }
    }
}

/// Attendance as reconstructed from the logs: (user, index into the
/// user's section lecture list) -> inferred mark.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttendanceInference {
    pub entries: BTreeMap<(String, usize), InferredMark>,
}

/// Confusion counts and derived metrics for attendance inference.
/// `Present` is the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    pub false_discovery_rate: f64,
    pub false_negative_rate: f64,
    /// Unobserved entries that have a ground-truth row.
    pub unobserved_count: usize,
    /// Of those, the fraction whose truth says Present.
    pub unobserved_actually_present_fraction: f64,
}

/// Infer attendance for every (roster user, section lecture) pair.
///
/// The event corpus is needed alongside the dwells: observability is a
/// property of raw events (a user who only ever moved past the room has
/// no dwells yet was plainly observed).
pub fn infer_attendance(
    corpus: &LogCorpus,
    dwells: &[DwellSegment],
    roster: &Roster,
    schedule: &Schedule,
    registry: &ApRegistry,
    margin: i64,
) -> AttendanceInference {
    debug_assert!(
        schedule
            .lectures
            .iter()
            .all(|l| registry.room_keys().contains(&l.room)),
        "lecture rooms must exist in the registry"
    );
    let index = DwellIndex::new(dwells);
    let mut inference = AttendanceInference::default();
    for user in roster.users() {
        let Some(section) = roster.section(user) else {
            continue;
        };
        let event_times: Vec<Timestamp> = corpus
            .user_events(user)
            .iter()
            .map(|e| e.timestamp)
            .collect();
        for (idx, lecture) in schedule.section_lectures(section).iter().enumerate() {
            let lo = lecture.interval.start.offset(-margin);
            let hi = lecture.interval.end.offset(margin);
            let first = event_times.partition_point(|&t| t < lo);
            let observed = event_times.get(first).is_some_and(|&t| t <= hi);
            let mark = if !observed {
                InferredMark::Unobserved
            } else if index.user_covers_any(&lecture.room, user, &lecture.interval) {
                InferredMark::Present
            } else {
                InferredMark::Absent
            };
            inference.entries.insert((user.clone(), idx), mark);
        }
    }
    inference
}

/// Score an inference against ground truth over the shared (user, lecture)
/// keys, Unobserved rows excluded.
pub fn score(
    inference: &AttendanceInference,
    truth: &AttendanceRecord,
) -> Result<ReliabilityReport, ValidationError> {
    let (mut tp, mut fp, mut fne, mut tn) = (0usize, 0usize, 0usize, 0usize);
    let mut unobserved = 0usize;
    let mut unobserved_present = 0usize;
    for (key, mark) in &truth.entries {
        let Some(inferred) = inference.entries.get(key) else {
            continue;
        };
        match (inferred, mark) {
            (InferredMark::Unobserved, m) => {
                unobserved += 1;
                if *m == Mark::Present {
                    unobserved_present += 1;
                }
            }
            (InferredMark::Present, Mark::Present) => tp += 1,
            (InferredMark::Present, Mark::Absent) => fp += 1,
            (InferredMark::Absent, Mark::Present) => fne += 1,
            (InferredMark::Absent, Mark::Absent) => tn += 1,
        }
    }
    if tp + fp + fne + tn == 0 {
        return Err(ValidationError::NoComparableEntries);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fne);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ReliabilityReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fne,
        true_negatives: tn,
        precision,
        recall,
        f1,
        specificity: ratio(tn, tn + fp),
        false_discovery_rate: 1.0 - precision,
        false_negative_rate: 1.0 - recall,
        unobserved_count: unobserved,
        unobserved_actually_present_fraction: ratio(unobserved_present, unobserved),
    })
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

impl ReliabilityReport {
    /// Copy with every fraction rounded to 4 decimals (the on-disk form).
    pub fn rounded(&self) -> ReliabilityReport {
        ReliabilityReport {
            precision: round4(self.precision),
            recall: round4(self.recall),
            f1: round4(self.f1),
            specificity: round4(self.specificity),
            false_discovery_rate: round4(self.false_discovery_rate),
            false_negative_rate: round4(self.false_negative_rate),
            unobserved_actually_present_fraction: round4(
                self.unobserved_actually_present_fraction,
            ),
            ..self.clone()
        }
    }
}

/// Write `report.json` (4-decimal precision).
pub fn write_report_json(
    report: &ReliabilityReport,
    path: impl AsRef<Path>,
) -> Result<(), ValidationError> {
    let json = serde_json::to_string_pretty(&report.rounded())?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Write the inference as `user_id,lecture_index,mark` rows.
pub fn write_inference_csv(
    inference: &AttendanceInference,
    path: impl AsRef<Path>,
) -> Result<(), ValidationError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "lecture_index", "mark"])?;
    for ((user, idx), mark) in &inference.entries {
        w.write_record([user.as_str(), &idx.to_string(), mark.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_inference_csv(path: impl AsRef<Path>) -> Result<AttendanceInference, ValidationError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut entries = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        if row.len() != 3 {
            return Err(ValidationError::BadInferenceRow(format!(
                "expected 3 fields, found {}",
                row.len()
            )));
        }
        let idx: usize = row[1]
            .parse()
            .map_err(|e| ValidationError::BadInferenceRow(format!("{:?}: {e}", &row[1])))?;
        let mark: InferredMark = row[2].parse().map_err(ValidationError::BadInferenceRow)?;
        entries.insert((row[0].to_string(), idx), mark);
    }
    Ok(AttendanceInference { entries })
}
