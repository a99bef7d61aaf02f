//! Phase II: intersect dwell segments at room granularity into
//! collocation episodes, and bridge short absences.
//!
//! A raw episode is a maximal interval during which a fixed set of two or
//! more users all dwell at one room key. When the same set reappears at
//! the same room after a short gap — and at least one member kept dwelling
//! there throughout the gap — the flanking episodes are bridged into one,
//! the idea being that a brief walk-out (a phone call, a coffee) does not
//! end a working session.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{parse_timestamp, render_timestamp};
use crate::model::{PipelineConfig, RoomKey, Roster, TimeInterval, Timestamp};
use crate::segmentation::{DwellSegment, DwellStatus};

#[derive(Debug, Error)]
pub enum CollocationError {
    #[error(
        "no qualifying gaps between collocation episodes; \
         set gap_threshold explicitly (typical campus-scale value: 667s)"
    )]
    NoQualifyingGaps,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("episodes row {row}: {reason}")]
    BadEpisodeRow { row: usize, reason: String },
}

/// How an episode relates to the group's calendar; assigned by the
/// feature stage, `Other` until then.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Context {
    Scheduled,
    Class,
    Other,
}

impl Context {
    pub fn as_str(self) -> &'static str {
        match self {
            Context::Scheduled => "scheduled",
            Context::Class => "class",
            Context::Other => "other",
        }
    }
}

/// An interval during which a fixed set of users shares one room,
/// possibly spanning bridged gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollocationEpisode {
    pub members: BTreeSet<String>,
    pub room: RoomKey,
    pub interval: TimeInterval,
    pub bridged_gaps: Vec<TimeInterval>,
    pub context: Context,
}

impl CollocationEpisode {
    pub fn bridged_seconds(&self) -> i64 {
        self.bridged_gaps.iter().map(TimeInterval::duration_secs).sum()
    }

    /// Members joined by `;`, ascending — the CSV form.
    pub fn members_key(&self) -> String {
        self.members.iter().cloned().collect::<Vec<_>>().join(";")
    }
}

/// Per-(room, user) merged dwell intervals; answers "was some member of
/// this set dwelling at this room throughout this span?".
pub struct DwellIndex {
    by_room_user: HashMap<(RoomKey, String), Vec<TimeInterval>>,
}

impl DwellIndex {
    pub fn new(dwells: &[DwellSegment]) -> DwellIndex {
        let mut by_room_user: HashMap<(RoomKey, String), Vec<TimeInterval>> = HashMap::new();
        for d in dwells {
            if d.status != DwellStatus::Dwelling || d.interval.duration_secs() <= 0 {
                continue;
            }
            by_room_user
                .entry((d.room.clone(), d.user_id.clone()))
                .or_default()
                .push(d.interval);
        }
        for intervals in by_room_user.values_mut() {
            intervals.sort_by_key(|iv| (iv.start, iv.end));
            // Merge overlapping or touching spans per user.
            let mut merged: Vec<TimeInterval> = Vec::with_capacity(intervals.len());
            for iv in intervals.drain(..) {
                match merged.last_mut() {
                    Some(last) if iv.start <= last.end => {
                        if iv.end > last.end {
                            last.end = iv.end;
                        }
                    }
                    _ => merged.push(iv),
                }
            }
            *intervals = merged;
        }
        DwellIndex { by_room_user }
    }

    /// Is every second of `span` covered by at least one member's dwelling
    /// at `room`?
    pub fn members_cover(
        &self,
        room: &RoomKey,
        members: &BTreeSet<String>,
        span: &TimeInterval,
    ) -> bool {
        if span.duration_secs() <= 0 {
            return true;
        }
        let mut pieces: Vec<TimeInterval> = Vec::new();
        for user in members {
            if let Some(ivs) = self.by_room_user.get(&(room.clone(), user.clone())) {
                let lo = ivs.partition_point(|iv| iv.end <= span.start);
                pieces.extend(
                    ivs[lo..]
                        .iter()
                        .take_while(|iv| iv.start < span.end)
                        .copied(),
                );
            }
        }
        pieces.sort_by_key(|iv| (iv.start, iv.end));
        let mut cursor = span.start;
        for iv in pieces {
            if iv.start > cursor {
                return false;
            }
            if iv.end > cursor {
                cursor = iv.end;
            }
            if cursor >= span.end {
                return true;
            }
        }
        cursor >= span.end
    }

    /// Does `user` have any positive dwelling overlap with `span` at `room`?
    pub fn user_covers_any(&self, room: &RoomKey, user: &str, span: &TimeInterval) -> bool {
        let Some(ivs) = self.by_room_user.get(&(room.clone(), user.to_string())) else {
            return false;
        };
        let lo = ivs.partition_point(|iv| iv.end <= span.start);
        ivs.get(lo).is_some_and(|iv| iv.start < span.end)
    }
}

/// Maximal constant-membership overlaps of dwells, per room, for sets of
/// at least two users out of `users`. No bridging.
pub fn raw_overlaps(dwells: &[DwellSegment], users: &BTreeSet<String>) -> Vec<CollocationEpisode> {
    // Boundary deltas per room: (time, user, +1/-1).
    let mut per_room: BTreeMap<&RoomKey, Vec<(Timestamp, &str, i32)>> = BTreeMap::new();
    for d in dwells {
        if d.status != DwellStatus::Dwelling
            || d.interval.duration_secs() <= 0
            || !users.contains(&d.user_id)
        {
            continue;
        }
        let deltas = per_room.entry(&d.room).or_default();
        deltas.push((d.interval.start, &d.user_id, 1));
        deltas.push((d.interval.end, &d.user_id, -1));
    }

    let mut episodes = Vec::new();
    for (room, mut deltas) in per_room {
        deltas.sort_by_key(|&(t, u, delta)| (t, u.to_string(), delta));
        let mut counts: BTreeMap<&str, i32> = BTreeMap::new();
        let mut current: BTreeSet<&str> = BTreeSet::new();
        let mut open: Option<(BTreeSet<&str>, Timestamp)> = None;
        let mut i = 0;
        while i < deltas.len() {
            let t = deltas[i].0;
            while i < deltas.len() && deltas[i].0 == t {
                let (_, user, delta) = deltas[i];
                let c = counts.entry(user).or_insert(0);
                *c += delta;
                if *c > 0 {
                    current.insert(user);
                } else {
                    current.remove(user);
                }
                i += 1;
            }
            // Membership after the instant t; close/open runs on change.
            let keep = match &open {
                Some((set, _)) => *set == current,
                None => false,
            };
            if !keep {
                if let Some((set, start)) = open.take() {
                    episodes.push(CollocationEpisode {
                        members: set.iter().map(|s| s.to_string()).collect(),
                        room: room.clone(),
                        interval: TimeInterval::new(start, t),
                        bridged_gaps: Vec::new(),
                        context: Context::Other,
                    });
                }
                if current.len() >= 2 {
                    open = Some((current.clone(), t));
                }
            }
        }
        debug_assert!(open.is_none(), "occupancy must drain to zero");
    }
    sort_episodes(&mut episodes);
    episodes
}

pub(crate) fn sort_episodes(episodes: &mut [CollocationEpisode]) {
    episodes.sort_by(|a, b| {
        (&a.room, a.interval.start, a.interval.end, &a.members)
            .cmp(&(&b.room, b.interval.start, b.interval.end, &b.members))
    });
}

/// The gap between two successive episodes of one (member set, room key)
/// qualifies for bridging when some member kept dwelling at the room
/// throughout it. (The common-members condition holds by construction:
/// both flanks have the same set.)
fn qualifying_gap(
    prev: &CollocationEpisode,
    next: &CollocationEpisode,
    dwells: &DwellIndex,
) -> Option<TimeInterval> {
    debug_assert_eq!(prev.members, next.members);
    debug_assert_eq!(prev.room, next.room);
    let gap = TimeInterval::new(prev.interval.end, next.interval.start);
    if gap.duration_secs() <= 0 {
        return None;
    }
    dwells
        .members_cover(&prev.room, &prev.members, &gap)
        .then_some(gap)
}

/// Iterate successive same-(set, room) episode pairs, yielding qualifying
/// gap durations in seconds.
fn qualifying_gaps(
    episodes: &[CollocationEpisode],
    dwells: &DwellIndex,
    mut keep: impl FnMut(&CollocationEpisode) -> bool,
) -> Vec<i64> {
    let mut grouped: BTreeMap<(&BTreeSet<String>, &RoomKey), Vec<&CollocationEpisode>> =
        BTreeMap::new();
    for ep in episodes {
        if keep(ep) {
            grouped.entry((&ep.members, &ep.room)).or_default().push(ep);
        }
    }
    let mut gaps = Vec::new();
    for (_, mut eps) in grouped {
        eps.sort_by_key(|e| (e.interval.start, e.interval.end));
        for pair in eps.windows(2) {
            if let Some(gap) = qualifying_gap(pair[0], pair[1], dwells) {
                gaps.push(gap.duration_secs());
            }
        }
    }
    gaps
}

fn median_i64(mut values: Vec<i64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    })
}

/// Learn the gap threshold: the median qualifying gap across all episodes.
pub fn learn_gap_threshold(
    raw_episodes: &[CollocationEpisode],
    dwells: &[DwellSegment],
) -> Result<f64, CollocationError> {
    let index = DwellIndex::new(dwells);
    median_i64(qualifying_gaps(raw_episodes, &index, |_| true))
        .ok_or(CollocationError::NoQualifyingGaps)
}

/// Like [`learn_gap_threshold`] but restricted to episodes whose members
/// all belong to one project group — the default for the pipeline, since
/// the bridged sessions of interest are group work sessions.
pub fn learn_gap_threshold_within_groups(
    raw_episodes: &[CollocationEpisode],
    dwells: &[DwellSegment],
    roster: &Roster,
) -> Result<f64, CollocationError> {
    let index = DwellIndex::new(dwells);
    let same_group = |ep: &CollocationEpisode| {
        let mut groups = ep.members.iter().map(|u| roster.group(u));
        match groups.next() {
            Some(Some(first)) => groups.all(|g| g == Some(first)),
            _ => false,
        }
    };
    median_i64(qualifying_gaps(raw_episodes, &index, same_group))
        .ok_or(CollocationError::NoQualifyingGaps)
}

/// Merge successive same-(set, room) episodes across qualifying gaps
/// strictly below the threshold, left to right (chains merge transitively).
pub fn bridge_gaps(
    raw_episodes: &[CollocationEpisode],
    dwells: &[DwellSegment],
    gap_threshold: f64,
) -> Vec<CollocationEpisode> {
    let index = DwellIndex::new(dwells);
    let mut grouped: BTreeMap<(&BTreeSet<String>, &RoomKey), Vec<&CollocationEpisode>> =
        BTreeMap::new();
    for ep in raw_episodes {
        grouped.entry((&ep.members, &ep.room)).or_default().push(ep);
    }
    let mut out: Vec<CollocationEpisode> = Vec::with_capacity(raw_episodes.len());
    for (_, mut eps) in grouped {
        eps.sort_by_key(|e| (e.interval.start, e.interval.end));
        let mut iter = eps.into_iter();
        let mut current = iter.next().expect("groups are non-empty").clone();
        for next in iter {
            let bridge = qualifying_gap(&current, next, &index)
                .filter(|gap| (gap.duration_secs() as f64) < gap_threshold);
            match bridge {
                Some(gap) => {
                    current.interval.end = next.interval.end;
                    current.bridged_gaps.push(gap);
                    current.bridged_gaps.extend(next.bridged_gaps.iter().copied());
                }
                None => {
                    out.push(std::mem::replace(&mut current, next.clone()));
                }
            }
        }
        out.push(current);
    }
    sort_episodes(&mut out);
    out
}

/// Total collocation seconds per unordered user pair within `period`,
/// not counting time inside `exclude` intervals. A pair accrues whenever
/// both are members of an episode, whatever its size.
pub fn pairwise_durations(
    episodes: &[CollocationEpisode],
    period: &TimeInterval,
    exclude: &[TimeInterval],
) -> BTreeMap<(String, String), i64> {
    // Merge the exclusion list once.
    let mut excl: Vec<TimeInterval> = exclude
        .iter()
        .filter(|iv| iv.duration_secs() > 0)
        .copied()
        .collect();
    excl.sort_by_key(|iv| (iv.start, iv.end));
    let mut merged: Vec<TimeInterval> = Vec::with_capacity(excl.len());
    for iv in excl {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => {
                if iv.end > last.end {
                    last.end = iv.end;
                }
            }
            _ => merged.push(iv),
        }
    }

    let mut totals: BTreeMap<(String, String), i64> = BTreeMap::new();
    for ep in episodes {
        let Some(clipped) = ep.interval.overlap(period) else {
            continue;
        };
        let mut secs = clipped.duration_secs();
        let lo = merged.partition_point(|iv| iv.end <= clipped.start);
        for iv in merged[lo..].iter().take_while(|iv| iv.start < clipped.end) {
            if let Some(cut) = iv.overlap(&clipped) {
                secs -= cut.duration_secs();
            }
        }
        if secs <= 0 {
            continue;
        }
        let members: Vec<&String> = ep.members.iter().collect();
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                *totals
                    .entry((members[i].clone(), members[j].clone()))
                    .or_insert(0) += secs;
            }
        }
    }
    totals
}

/// Write `episodes.csv`: members,building,room,start,end,bridged_seconds.
pub fn write_episodes_csv(
    episodes: &[CollocationEpisode],
    config: &PipelineConfig,
    path: impl AsRef<Path>,
) -> Result<(), CollocationError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["members", "building", "room", "start", "end", "bridged_seconds"])?;
    for ep in episodes {
        w.write_record([
            ep.members_key().as_str(),
            ep.room.building.as_str(),
            ep.room.room.as_str(),
            &render_timestamp(ep.interval.start, config),
            &render_timestamp(ep.interval.end, config),
            &ep.bridged_seconds().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `episodes.csv` back. Individual bridged gap intervals are gone
/// (the dump keeps only their total); contexts reset to `Other`.
pub fn load_episodes_csv(
    path: impl AsRef<Path>,
    config: &PipelineConfig,
) -> Result<Vec<CollocationEpisode>, CollocationError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| CollocationError::BadEpisodeRow { row: i + 2, reason };
        if rec.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", rec.len())));
        }
        let members: BTreeSet<String> = rec[0].split(';').map(str::to_string).collect();
        if members.len() < 2 {
            return Err(bad("an episode needs at least two members".to_string()));
        }
        let start = parse_timestamp(&rec[3], config).map_err(&bad)?;
        let end = parse_timestamp(&rec[4], config).map_err(&bad)?;
        let bridged: i64 = rec[5].parse().map_err(|_| bad(format!("bad bridged_seconds {:?}", &rec[5])))?;
        let gap_stub = if bridged > 0 {
            vec![TimeInterval::new(start, start.offset(bridged))]
        } else {
            Vec::new()
        };
        out.push(CollocationEpisode {
            members,
            room: RoomKey::new(&rec[1], &rec[2]),
            interval: TimeInterval::checked(start, end).map_err(|e| bad(e.to_string()))?,
            bridged_gaps: gap_stub,
            context: Context::Other,
        });
    }
    Ok(out)
}
