//! Phase I: turn a user's raw association events into mobility-classified
//! dwell segments, then mark long silent stretches as disconnected.
//!
//! Between two successive events of one user there are three cases:
//!
//! * same room key — the user stayed put (stationary);
//! * different room keys, gap shorter than the mobility threshold — the
//!   user was moving; no dwell covers the gap;
//! * different room keys, gap at or above the threshold — the user is
//!   deemed to have dwelt at the *earlier* room until the later event.
//!
//! Contiguous stationary stretches at one room merge into maximal
//! segments. A second pass splits out any span between supporting events
//! that exceeds the disconnection threshold (the user was off-network,
//! not present).

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{LogCorpus, parse_timestamp, render_timestamp};
use crate::model::{
    ApRegistry, AttendanceRecord, Mark, ModelError, PipelineConfig, RoomKey, Roster, Schedule,
    ThresholdSetting, TimeInterval, Timestamp,
};

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error(
        "no qualifying different-AP event pairs inside padded lecture windows; \
         set mobility_threshold explicitly (typical campus-scale value: 233s)"
    )]
    NoMobilityPairs,
    #[error(
        "no verifiably attended lecture contains two or more events; \
         set disconnection_threshold explicitly (typical campus-scale value: 76m)"
    )]
    NoDisconnectionEvidence,
    #[error("user {user:?} not covered by the roster")]
    UnknownUser { user: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dwells row {row}: {reason}")]
    BadDwellRow { row: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DwellStatus {
    Dwelling,
    Disconnected,
}

impl DwellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DwellStatus::Dwelling => "dwelling",
            DwellStatus::Disconnected => "disconnected",
        }
    }
}

/// A maximal interval during which one user is inferred stationary at one
/// room (or provably absent from the network, for `Disconnected`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DwellSegment {
    pub user_id: String,
    pub room: RoomKey,
    pub interval: TimeInterval,
    pub status: DwellStatus,
    pub supporting_event_count: usize,
    /// Times of the supporting events, ascending. Retained between
    /// classification and disconnection filtering; the CSV round trip
    /// drops them but keeps the count.
    pub support_times: Vec<Timestamp>,
}

/// One event reduced to what segmentation needs: when and which room.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventPoint {
    pub timestamp: Timestamp,
    pub room: RoomKey,
}

/// Map a user's corpus events to room-resolved points (device-agnostic,
/// time-ordered).
pub fn event_points(
    corpus: &LogCorpus,
    registry: &ApRegistry,
    user: &str,
) -> Result<Vec<EventPoint>, ModelError> {
    corpus
        .user_events(user)
        .into_iter()
        .map(|ev| {
            Ok(EventPoint {
                timestamp: ev.timestamp,
                room: registry.room_key(&ev.ap_id)?,
            })
        })
        .collect()
}

/// Learn the mobility threshold: the 90th linear-interpolation quantile of
/// gaps between successive same-user events at *different APs*, restricted
/// to padded lecture windows (both events inside one merged window).
pub fn learn_mobility_threshold(
    corpus: &LogCorpus,
    schedule: &Schedule,
    margin: i64,
) -> Result<f64, SegmentationError> {
    let windows = merged_padded_windows(schedule, margin);
    if windows.is_empty() {
        return Err(SegmentationError::NoMobilityPairs);
    }
    let mut gaps: Vec<f64> = Vec::new();
    for user in corpus.users() {
        let events = corpus.user_events(user);
        for pair in events.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.ap_id == b.ap_id {
                continue;
            }
            if !same_window(&windows, a.timestamp, b.timestamp) {
                continue;
            }
            gaps.push(b.timestamp.since(a.timestamp) as f64);
        }
    }
    if gaps.is_empty() {
        return Err(SegmentationError::NoMobilityPairs);
    }
    Ok(quantile_linear(&mut gaps, 0.9))
}

/// Lecture intervals padded by `margin` on both sides and merged where they
/// overlap or touch, ascending.
pub(crate) fn merged_padded_windows(schedule: &Schedule, margin: i64) -> Vec<TimeInterval> {
    let mut spans: Vec<TimeInterval> = schedule
        .lectures
        .iter()
        .map(|l| l.interval.padded(margin))
        .collect();
    spans.sort_by_key(|s| (s.start, s.end));
    let mut merged: Vec<TimeInterval> = Vec::new();
    for s in spans {
        match merged.last_mut() {
            Some(last) if s.start <= last.end => {
                if s.end > last.end {
                    last.end = s.end;
                }
            }
            _ => merged.push(s),
        }
    }
    merged
}

/// Are both instants inside one merged window (closed endpoints)?
fn same_window(windows: &[TimeInterval], a: Timestamp, b: Timestamp) -> bool {
    let i = windows.partition_point(|w| w.end < a);
    match windows.get(i) {
        Some(w) => w.start <= a && b <= w.end,
        None => false,
    }
}

/// Linear-interpolation quantile over order statistics (sorts in place).
fn quantile_linear(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&q));
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = q * (values.len() as f64 - 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < values.len() {
        values[lo] + frac * (values[lo + 1] - values[lo])
    } else {
        values[lo]
    }
}

/// Classify one user's event stream and build maximal `Dwelling` segments.
/// Events must be time-ordered; all of the user's devices merged into one
/// stream.
pub fn classify_and_segment(
    user_id: &str,
    events: &[EventPoint],
    mobility_threshold: f64,
) -> Vec<DwellSegment> {
    let points = resolve_concurrent(events, mobility_threshold);
    let mut segments: Vec<DwellSegment> = Vec::new();

    // Each qualifying pair contributes a stationary interval at the earlier
    // event's room; contiguous same-room intervals merge.
    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let gap = b.timestamp.since(a.timestamp);
        let stationary = a.room == b.room || (gap as f64) >= mobility_threshold;
        if !stationary {
            continue; // moving: no dwell covers (a, b)
        }
        let supports_end = a.room == b.room;
        match segments.last_mut() {
            Some(seg)
                if seg.room == a.room && seg.interval.end == a.timestamp =>
            {
                seg.interval.end = b.timestamp;
                push_support(&mut seg.support_times, a.timestamp);
                if supports_end {
                    push_support(&mut seg.support_times, b.timestamp);
                }
                seg.supporting_event_count = seg.support_times.len();
            }
            _ => {
                let mut support_times = vec![a.timestamp];
                if supports_end {
                    support_times.push(b.timestamp);
                }
                segments.push(DwellSegment {
                    user_id: user_id.to_string(),
                    room: a.room.clone(),
                    interval: TimeInterval::new(a.timestamp, b.timestamp),
                    status: DwellStatus::Dwelling,
                    supporting_event_count: support_times.len(),
                    support_times,
                });
            }
        }
    }
    segments
}

fn push_support(times: &mut Vec<Timestamp>, t: Timestamp) {
    if times.last() != Some(&t) {
        times.push(t);
    }
}

/// Collapse duplicate events and resolve concurrent different-room events
/// at one timestamp: keep the room with the most of the user's events in
/// the surrounding ±threshold window; ties go to the lexicographically
/// earlier room key.
fn resolve_concurrent(events: &[EventPoint], mobility_threshold: f64) -> Vec<EventPoint> {
    // Collapse exact (timestamp, room) duplicates first.
    let mut distinct: Vec<EventPoint> = Vec::with_capacity(events.len());
    for ev in events {
        if distinct
            .iter()
            .rev()
            .take_while(|d| d.timestamp == ev.timestamp)
            .any(|d| d.room == ev.room)
        {
            continue;
        }
        distinct.push(ev.clone());
    }

    let mut out: Vec<EventPoint> = Vec::with_capacity(distinct.len());
    let mut i = 0;
    while i < distinct.len() {
        let t = distinct[i].timestamp;
        let mut j = i + 1;
        while j < distinct.len() && distinct[j].timestamp == t {
            j += 1;
        }
        if j - i == 1 {
            out.push(distinct[i].clone());
        } else {
            let winner = distinct[i..j]
                .iter()
                .map(|cand| {
                    let n = distinct
                        .iter()
                        .filter(|e| {
                            e.room == cand.room
                                && (e.timestamp.since(t).abs() as f64) <= mobility_threshold
                        })
                        .count();
                    (std::cmp::Reverse(n), &cand.room)
                })
                .min()
                .map(|(_, room)| room.clone())
                .expect("non-empty group");
            out.push(EventPoint { timestamp: t, room: winner });
        }
        i = j;
    }
    out
}

/// Learn the disconnection threshold: the longest gap between successive
/// events of any student during a lecture they verifiably attended.
pub fn learn_disconnection_threshold(
    corpus: &LogCorpus,
    attendance: &AttendanceRecord,
    schedule: &Schedule,
    roster: &Roster,
) -> Result<f64, SegmentationError> {
    let mut max_gap: Option<i64> = None;
    for ((user, idx), mark) in &attendance.entries {
        if *mark != Mark::Present {
            continue;
        }
        let section = roster
            .section(user)
            .ok_or_else(|| SegmentationError::UnknownUser { user: user.clone() })?;
        let lectures = schedule.section_lectures(section);
        let Some(lecture) = lectures.get(*idx) else {
            continue;
        };
        let events = corpus.user_events(user);
        let lo = events.partition_point(|e| e.timestamp < lecture.interval.start);
        let hi = events.partition_point(|e| e.timestamp <= lecture.interval.end);
        for pair in events[lo..hi].windows(2) {
            let gap = pair[1].timestamp.since(pair[0].timestamp);
            max_gap = Some(max_gap.map_or(gap, |m| m.max(gap)));
        }
    }
    match max_gap {
        Some(g) => Ok(g as f64),
        None => Err(SegmentationError::NoDisconnectionEvidence),
    }
}

/// Split any intra-segment span between successive supporting events that
/// strictly exceeds the threshold into a `Disconnected` segment. Requires
/// support times (i.e. segments fresh from [`classify_and_segment`]).
pub fn filter_disconnections(
    segments: Vec<DwellSegment>,
    disconnection_threshold: f64,
) -> Vec<DwellSegment> {
    let mut out = Vec::with_capacity(segments.len());
    for seg in segments {
        if seg.status != DwellStatus::Dwelling || seg.support_times.is_empty() {
            out.push(seg);
            continue;
        }
        debug_assert_eq!(seg.supporting_event_count, seg.support_times.len());
        // Checkpoints: every support plus the segment end (which is not a
        // support when the segment was extended to a different-room event).
        let mut checkpoints = seg.support_times.clone();
        let end_is_support = checkpoints.last() == Some(&seg.interval.end);
        if !end_is_support {
            checkpoints.push(seg.interval.end);
        }

        let mut piece_start = checkpoints[0];
        let mut piece_supports = vec![checkpoints[0]];
        let mut piece_open = true;
        for w in checkpoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            let b_supports = end_is_support || b != seg.interval.end;
            if (b.since(a) as f64) > disconnection_threshold {
                out.push(DwellSegment {
                    user_id: seg.user_id.clone(),
                    room: seg.room.clone(),
                    interval: TimeInterval::new(piece_start, a),
                    status: DwellStatus::Dwelling,
                    supporting_event_count: piece_supports.len(),
                    support_times: std::mem::take(&mut piece_supports),
                });
                out.push(DwellSegment {
                    user_id: seg.user_id.clone(),
                    room: seg.room.clone(),
                    interval: TimeInterval::new(a, b),
                    status: DwellStatus::Disconnected,
                    supporting_event_count: 0,
                    support_times: Vec::new(),
                });
                if b_supports {
                    piece_start = b;
                    piece_supports = vec![b];
                    piece_open = true;
                } else {
                    piece_open = false; // trailing disconnection; nothing follows
                }
            } else if b_supports {
                piece_supports.push(b);
            }
        }
        if piece_open {
            out.push(DwellSegment {
                user_id: seg.user_id.clone(),
                room: seg.room.clone(),
                interval: TimeInterval::new(piece_start, seg.interval.end),
                status: DwellStatus::Dwelling,
                supporting_event_count: piece_supports.len(),
                support_times: piece_supports,
            });
        }
    }
    out
}

/// Thresholds actually used by a Phase I run (learned or configured).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOneThresholds {
    pub mobility_secs: f64,
    pub disconnection_secs: f64,
}

/// Run all of Phase I over a corpus: learn whatever thresholds the config
/// leaves open, then classify and filter every user. Dwells come back
/// ordered by (user, start).
pub fn segment_corpus(
    corpus: &LogCorpus,
    registry: &ApRegistry,
    roster: &Roster,
    schedule: &Schedule,
    attendance: &AttendanceRecord,
    config: &PipelineConfig,
) -> Result<(Vec<DwellSegment>, PhaseOneThresholds), SegmentationError> {
    let mobility = match config.mobility_threshold {
        ThresholdSetting::Fixed(s) => s as f64,
        ThresholdSetting::Learn => {
            learn_mobility_threshold(corpus, schedule, config.margin_before_after)?
        }
    };
    let disconnection = match config.disconnection_threshold {
        ThresholdSetting::Fixed(s) => s as f64,
        ThresholdSetting::Learn => {
            learn_disconnection_threshold(corpus, attendance, schedule, roster)?
        }
    };
    // Users are independent; the final sort makes the ordering (and
    // therefore the output) identical regardless of thread count.
    let users: Vec<&String> = corpus.users().collect();
    let per_user: Vec<Result<Vec<DwellSegment>, SegmentationError>> = users
        .par_iter()
        .map(|user| {
            let points = event_points(corpus, registry, user)?;
            let segments = classify_and_segment(user, &points, mobility);
            Ok(filter_disconnections(segments, disconnection))
        })
        .collect();
    let mut dwells = Vec::new();
    for chunk in per_user {
        dwells.extend(chunk?);
    }
    dwells.sort_by(|a, b| {
        (&a.user_id, a.interval.start, a.interval.end)
            .cmp(&(&b.user_id, b.interval.start, b.interval.end))
    });
    Ok((
        dwells,
        PhaseOneThresholds {
            mobility_secs: mobility,
            disconnection_secs: disconnection,
        },
    ))
}

/// Write `dwells.csv`: user_id,building,room,start,end,status,events.
pub fn write_dwells_csv(
    dwells: &[DwellSegment],
    config: &PipelineConfig,
    path: impl AsRef<Path>,
) -> Result<(), SegmentationError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "building", "room", "start", "end", "status", "events"])?;
    for d in dwells {
        w.write_record([
            d.user_id.as_str(),
            d.room.building.as_str(),
            d.room.room.as_str(),
            &render_timestamp(d.interval.start, config),
            &render_timestamp(d.interval.end, config),
            d.status.as_str(),
            &d.supporting_event_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `dwells.csv` back. Support times are gone; counts survive.
pub fn load_dwells_csv(
    path: impl AsRef<Path>,
    config: &PipelineConfig,
) -> Result<Vec<DwellSegment>, SegmentationError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| SegmentationError::BadDwellRow { row: i + 2, reason };
        if rec.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", rec.len())));
        }
        let start = parse_timestamp(&rec[3], config).map_err(&bad)?;
        let end = parse_timestamp(&rec[4], config).map_err(&bad)?;
        let status = match &rec[5] {
            "dwelling" => DwellStatus::Dwelling,
            "disconnected" => DwellStatus::Disconnected,
            other => return Err(bad(format!("unknown status {other:?}"))),
        };
        let events: usize = rec[6].parse().map_err(|_| bad(format!("bad event count {:?}", &rec[6])))?;
        out.push(DwellSegment {
            user_id: rec[0].to_string(),
            room: RoomKey::new(&rec[1], &rec[2]),
            interval: TimeInterval::checked(start, end).map_err(|e| bad(e.to_string()))?,
            status,
            supporting_event_count: events,
            support_times: Vec::new(),
        });
    }
    Ok(out)
}

/// Distinct users appearing in a dwell list, ascending.
pub fn dwell_users(dwells: &[DwellSegment]) -> BTreeSet<&str> {
    dwells.iter().map(|d| d.user_id.as_str()).collect()
}
