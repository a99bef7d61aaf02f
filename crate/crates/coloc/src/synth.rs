//! Deterministic synthetic-campus simulator: ground-truth presence
//! timelines, rosters, schedules, attendance, project scores, and the
//! (optionally noise-corrupted) association logs they emit. The test
//! oracles in this workspace all rest on scenarios from here, so the
//! generator is built around guarantees that make the noiseless round
//! trip through the pipeline *exact*:
//!
//! * every visit logs its arrival and departure instants, with polls
//!   every 600 s in between, so dwell boundaries are event-supported;
//! * gaps between different-room visits come in two clusters — swift
//!   transits (20–60 s, the user is truly in between rooms) and
//!   "linger then move" pauses (90–600 s, the user stays put until the
//!   next event) — and the planted counts pin the learned mobility
//!   threshold strictly between the clusters;
//! * in-lecture poll gaps max out at exactly 600 s (the learned
//!   disconnection threshold), while off-campus absences last >= 2 h,
//!   so disconnection splitting recovers exactly the planted absences.
//!
//! Noise knobs reshape only the emitted logs (or, for ghost
//! attendance, the instructor record), never the physical timeline:
//! `p_ap_snap` relocates a lecture visit's events to a neighboring
//! room's AP (driving false negatives), `p_unlogged_attendance`
//! silences the device around a lecture (driving exclusions), and
//! `p_ghost_attendance` puts a student in the room whom the instructor
//! recorded absent (driving false positives).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::collocation::{sort_episodes, CollocationEpisode};
use crate::features::classify_context;
use crate::ingest::{
    write_attendance_csv, write_corpus_csv, write_registry_csv, write_roster_csv,
    write_schedule_csv, LogCorpus,
};
use crate::model::{
    AccessPoint, ApRegistry, AssociationEvent, AttendanceRecord, Category, Lecture, Mark, Meeting,
    PipelineConfig, RoomKey, Roster, Schedule, TimeInterval, Timestamp, UpdateType,
};
use crate::modeling::{write_scores_csv, ScoreTable};
use crate::segmentation::{merged_padded_windows, DwellSegment, DwellStatus};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("bad simulation config: {0}")]
    BadConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error(transparent)]
    Modeling(#[from] crate::modeling::ModelingError),
    #[error("bad truth timeline row: {0}")]
    BadTimelineRow(String),
}

/// Log-corruption knobs. All probabilities are per qualifying lecture
/// visit; the physical timeline is never perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseKnobs {
    /// Device off / on another network for the whole padded lecture
    /// window: all of the user's events there are dropped.
    pub p_unlogged_attendance: f64,
    /// Device associates to the neighboring hallway AP for the whole
    /// lecture visit.
    pub p_ap_snap: f64,
    /// Student attends but the instructor records them absent.
    pub p_ghost_attendance: f64,
    /// Uniform +/- jitter applied to poll instants (not arrivals or
    /// departures). Zero keeps in-visit gaps at exactly 600 s.
    pub poll_jitter_secs: i64,
}

impl Default for NoiseKnobs {
    fn default() -> Self {
        // Calibrated so end-to-end attendance inference lands near
        // precision 0.89 (= q / (q + (1-q) * p_ghost) with q = 0.7)
        // and recall 0.75 (= 1 - p_ap_snap).
        NoiseKnobs {
            p_unlogged_attendance: 0.07,
            p_ap_snap: 0.25,
            p_ghost_attendance: 0.29,
            poll_jitter_secs: 0,
        }
    }
}

impl NoiseKnobs {
    pub fn none() -> Self {
        NoiseKnobs {
            p_unlogged_attendance: 0.0,
            p_ap_snap: 0.0,
            p_ghost_attendance: 0.0,
            poll_jitter_secs: 0,
        }
    }
}

/// Score-generation knobs. The true score is a noisy affine function of
/// scheduled-meeting participation and the week-to-week *consistency*
/// (negated standard deviation) of that participation, so group
/// collocation patterns carry the recoverable signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreKnobs {
    pub base: f64,
    pub participation_weight: f64,
    pub consistency_weight: f64,
    pub noise_sd: f64,
    /// How strongly the six peer-evaluation columns echo participation.
    pub peer_signal: f64,
}

impl Default for ScoreKnobs {
    fn default() -> Self {
        ScoreKnobs {
            base: 72.0,
            participation_weight: 10.0,
            consistency_weight: 6.0,
            noise_sd: 6.0,
            peer_signal: 0.3,
        }
    }
}

impl ScoreKnobs {
    /// Pure-noise target: no model should find signal.
    pub fn null() -> Self {
        ScoreKnobs {
            participation_weight: 0.0,
            consistency_weight: 0.0,
            peer_signal: 0.0,
            ..ScoreKnobs::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub users: usize,
    pub weeks: usize,
    /// 0 = one section per 50 users (rounded up).
    pub sections: usize,
    pub group_size_min: usize,
    pub group_size_max: usize,
    /// Probability a student attends any given lecture of their section.
    pub attendance_rate: f64,
    /// Per-user meeting-participation propensity is drawn uniformly
    /// from this range.
    pub participation_low: f64,
    pub participation_high: f64,
    /// Probability an attendee briefly leaves a group meeting and
    /// returns (plants the collocation gap distribution).
    pub step_out_rate: f64,
    pub noise: NoiseKnobs,
    pub score: ScoreKnobs,
    /// Week index with group meetings every weekday instead of twice.
    pub midterm_week: Option<usize>,
    /// Skip event materialization (timeline, attendance and scores are
    /// still produced) for studies that run on ground truth only.
    pub emit_logs: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            users: 50,
            weeks: 4,
            sections: 0,
            group_size_min: 4,
            group_size_max: 6,
            attendance_rate: 0.7,
            participation_low: 0.25,
            participation_high: 0.95,
            step_out_rate: 0.2,
            noise: NoiseKnobs::default(),
            score: ScoreKnobs::default(),
            midterm_week: None,
            emit_logs: true,
        }
    }
}

impl SimConfig {
    pub fn noiseless(users: usize, weeks: usize) -> Self {
        SimConfig {
            users,
            weeks,
            noise: NoiseKnobs::none(),
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::BadConfig(msg));
        if self.users < 2 {
            return bad(format!("need at least 2 users, got {}", self.users));
        }
        if self.weeks == 0 {
            return bad("need at least 1 week".into());
        }
        if self.group_size_min < 2 || self.group_size_min > self.group_size_max {
            return bad(format!(
                "group sizes {}..{} are not a valid range",
                self.group_size_min, self.group_size_max
            ));
        }
        if self.group_size_max > self.users {
            return bad(format!(
                "group size {} exceeds the cohort of {}",
                self.group_size_max, self.users
            ));
        }
        if self.sections > self.users {
            return bad(format!(
                "{} sections cannot be filled by {} users",
                self.sections, self.users
            ));
        }
        for (name, p) in [
            ("attendance_rate", self.attendance_rate),
            ("participation_low", self.participation_low),
            ("participation_high", self.participation_high),
            ("step_out_rate", self.step_out_rate),
            ("p_unlogged_attendance", self.noise.p_unlogged_attendance),
            ("p_ap_snap", self.noise.p_ap_snap),
            ("p_ghost_attendance", self.noise.p_ghost_attendance),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.participation_low > self.participation_high {
            return bad("participation_low exceeds participation_high".into());
        }
        if let Some(w) = self.midterm_week {
            if w >= self.weeks {
                return bad(format!("midterm week {w} outside 0..{}", self.weeks));
            }
        }
        Ok(())
    }

    fn section_count(&self) -> usize {
        if self.sections > 0 {
            self.sections
        } else {
            self.users.div_ceil(50)
        }
    }
}

/// Per-user ground-truth presence: sorted, non-overlapping intervals;
/// every second outside them is off-room (moving, off-campus, off-grid).
pub type PresenceTimeline = BTreeMap<String, Vec<(RoomKey, TimeInterval)>>;

#[derive(Debug, Clone)]
pub struct SimScenario {
    pub seed: u64,
    pub config: SimConfig,
    pub pipeline_config: PipelineConfig,
    pub registry: ApRegistry,
    pub roster: Roster,
    pub schedule: Schedule,
    /// Instructor-recorded truth (ghost attendees appear Absent here
    /// even though the timeline has them in the room).
    pub attendance: AttendanceRecord,
    pub timeline: PresenceTimeline,
    pub corpus: LogCorpus,
    pub scores: ScoreTable,
    /// Dorm room -> residents (pairs; one odd room for odd cohorts).
    pub dorm_rooms: BTreeMap<RoomKey, Vec<String>>,
}

// Campus wall-clock anchors, in seconds from local midnight.
const H: i64 = 3600;
const DAY: i64 = 86_400;
const POLL: i64 = 600;
/// 2019-04-01 00:00 UTC, a Monday.
const TERM_START: i64 = 1_554_076_800;

/// Domain-separated deterministic RNG stream.
fn stream(seed: u64, domain: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; plenty for score noise.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

// ---------------------------------------------------------------------
// Campus layout

struct Campus {
    registry: ApRegistry,
    lecture_rooms: Vec<RoomKey>,
    halls: Vec<RoomKey>,
    library: RoomKey,
    dining: RoomKey,
    gym: RoomKey,
    quad: RoomKey,
    dorm_of: BTreeMap<String, RoomKey>,
    common_of: BTreeMap<String, RoomKey>,
}

fn build_campus(
    sections: usize,
    groups: &[String],
    users_shuffled: &[String],
) -> (Campus, BTreeMap<RoomKey, Vec<String>>) {
    let mut aps = Vec::new();
    let mut add = |building: &str, room: &str, category: Category| -> RoomKey {
        aps.push(AccessPoint {
            ap_id: format!("ap-{building}-{room}"),
            building_id: building.to_string(),
            room_id: room.to_string(),
            category,
        });
        RoomKey::new(building, room)
    };

    let lecture_rooms: Vec<RoomKey> = (0..sections)
        .map(|s| add("SCI", &format!("{}", 101 + s), Category::Academic))
        .collect();
    let halls: Vec<RoomKey> = (0..sections)
        .map(|s| add("SCI", &format!("h{s:02}"), Category::Academic))
        .collect();
    let library = add("LIB", "main", Category::Academic);
    let dining = add("DIN", "hall", Category::Dining);
    let gym = add("GYM", "floor", Category::Recreation);
    let quad = add("QUAD", "lawn", Category::GreenSpace);

    let mut dorm_of = BTreeMap::new();
    let mut dorm_rooms: BTreeMap<RoomKey, Vec<String>> = BTreeMap::new();
    for (i, chunk) in users_shuffled.chunks(2).enumerate() {
        let key = add("DORM", &format!("r{i:03}"), Category::Residential);
        for user in chunk {
            dorm_of.insert(user.clone(), key.clone());
        }
        dorm_rooms.insert(key, chunk.to_vec());
    }
    let common_of: BTreeMap<String, RoomKey> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.clone(), add("DORM", &format!("c{i:02}"), Category::Residential)))
        .collect();

    let campus = Campus {
        registry: ApRegistry::new(aps),
        lecture_rooms,
        halls,
        library,
        dining,
        gym,
        quad,
        dorm_of,
        common_of,
    };
    (campus, dorm_rooms)
}

/// Split one section into group sizes within [min, max]; errors when no
/// such partition exists (e.g. 7 users into 4..6). Picks the group
/// count first, then spreads the surplus round-robin, so any feasible
/// request succeeds.
fn group_sizes(
    n: usize,
    min: usize,
    max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, SynthError> {
    let k_min = n.div_ceil(max);
    let k_max = n / min;
    if k_min > k_max || k_min == 0 {
        return Err(SynthError::BadConfig(format!(
            "a section of {n} users cannot be split into groups of {min}..{max}"
        )));
    }
    let k = rng.random_range(k_min..=k_max);
    let mut sizes = vec![min; k];
    for j in 0..(n - k * min) {
        sizes[j % k] += 1;
    }
    sizes.shuffle(rng);
    Ok(sizes)
}

// ---------------------------------------------------------------------
// Visit plans

/// One planned stay. Anchors of `None` are resolved from the adjacent
/// slot's gap: a `None` arrival follows the previous visit's fixed
/// departure; a `None` departure precedes the next visit's fixed
/// arrival. Plans never leave both sides of one gap free.
#[derive(Debug, Clone)]
struct PlannedVisit {
    room: RoomKey,
    /// Where the device says it is (differs from `room` under AP snap).
    log_room: RoomKey,
    arr: Option<i64>,
    exit: Option<i64>,
}

impl PlannedVisit {
    fn anchored(room: &RoomKey, arr: i64, exit: i64) -> Self {
        PlannedVisit {
            room: room.clone(),
            log_room: room.clone(),
            arr: Some(arr),
            exit: Some(exit),
        }
    }

    fn filler(room: &RoomKey) -> Self {
        PlannedVisit {
            room: room.clone(),
            log_room: room.clone(),
            arr: None,
            exit: None,
        }
    }
}

/// Gap between consecutive visits, in seconds. `extend` (truth keeps
/// the user at the earlier room through the gap) is fully determined by
/// the gap length and whether the rooms match — mirroring exactly what
/// segmentation will reconstruct:
/// same room and <= 600 s -> merged; different rooms and 90..=600 s ->
/// attributed to the earlier room; anything longer -> split off.
#[derive(Debug, Clone, Copy)]
enum SlotGap {
    Fixed,
    Free(i64),
}

fn slot_extends(same_room: bool, gap: i64) -> bool {
    gap <= 600 && (same_room || gap >= 90)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SlotClass {
    /// Pair lands inside one merged padded lecture window for any gap
    /// in 20..=600: eligible for the planted threshold pool.
    Pool,
    /// Pair can never land inside a window: free choice of regime.
    Out,
    /// Membership would depend on the drawn gap: forced out with this
    /// exact gap.
    Forced(i64),
}

/// Classify the slot against the merged padded lecture windows, given
/// its one fixed endpoint. `fixed_is_departure` says whether the fixed
/// end is the earlier (departure) instant.
fn classify_slot(windows: &[TimeInterval], fixed: i64, fixed_is_departure: bool) -> SlotClass {
    let i = windows.partition_point(|w| w.end.0 < fixed);
    let Some(w) = windows.get(i) else {
        return SlotClass::Out;
    };
    if !(w.start.0 <= fixed && fixed <= w.end.0) {
        return SlotClass::Out;
    }
    let room_left = if fixed_is_departure {
        w.end.0 - fixed // arrival = fixed + gap must stay <= window end
    } else {
        fixed - w.start.0 // departure = fixed - gap must stay >= window start
    };
    if room_left >= 600 {
        SlotClass::Pool
    } else if room_left < 20 {
        SlotClass::Out
    } else {
        // Push the pair just outside the window, keeping the gap in a
        // planted cluster (never in the ambiguous 61..=89 band).
        let g = match room_left + 1 {
            g if g <= 60 => g,
            g if g < 90 => 90,
            g => g,
        };
        SlotClass::Forced(g)
    }
}

// ---------------------------------------------------------------------
// Simulation

struct UserPlan {
    visits: Vec<PlannedVisit>,
    slots: Vec<SlotGap>,
    suppress: Vec<TimeInterval>,
}

pub fn simulate(config: &SimConfig, seed: u64) -> Result<SimScenario, SynthError> {
    config.validate()?;
    let weeks = config.weeks;
    let window = TimeInterval::new(
        Timestamp(TERM_START),
        Timestamp(TERM_START + weeks as i64 * 7 * DAY),
    );
    let pipeline_config = PipelineConfig {
        study_window: window,
        ..PipelineConfig::default()
    };
    let margin = pipeline_config.margin_before_after;

    // Cohort: sections, groups, instructors, dorm pairs.
    let mut crng = stream(seed, "cohort");
    let users: Vec<String> = (0..config.users).map(|i| format!("u{i:03}")).collect();
    let n_sections = config.section_count();
    let base = config.users / n_sections;
    let rem = config.users % n_sections;
    let mut roster = Roster::default();
    let mut groups_order: Vec<String> = Vec::new();
    let mut members_of: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut cursor = 0usize;
    for s in 0..n_sections {
        let size = base + usize::from(s < rem);
        let section_users = &users[cursor..cursor + size];
        cursor += size;
        let section_id = format!("s{s}");
        roster
            .instructor_of
            .insert(section_id.clone(), format!("i{s}"));
        let sizes = group_sizes(size, config.group_size_min, config.group_size_max, &mut crng)?;
        let mut at = 0usize;
        for gs in sizes {
            let gid = format!("g{:02}", groups_order.len());
            let members: Vec<String> = section_users[at..at + gs].to_vec();
            at += gs;
            for u in &members {
                roster.group_of.insert(u.clone(), gid.clone());
                roster.section_of.insert(u.clone(), section_id.clone());
            }
            members_of.insert(gid.clone(), members);
            groups_order.push(gid);
        }
    }
    let mut users_shuffled = users.clone();
    users_shuffled.shuffle(&mut crng);
    let (campus, dorm_rooms) = build_campus(n_sections, &groups_order, &users_shuffled);

    // Schedule: lectures Mon/Wed/Fri at section-staggered hours;
    // meetings Tue/Thu evenings (every weekday in a midterm week).
    let days = weeks * 7;
    let mut schedule = Schedule::default();
    // (section -> ordered lecture list) with day index, for attendance.
    let mut section_lectures: Vec<Vec<(usize, TimeInterval)>> = vec![Vec::new(); n_sections];
    let mut meeting_days: Vec<usize> = Vec::new();
    for d in 0..days {
        let wd = d % 7;
        let day0 = TERM_START + d as i64 * DAY;
        if matches!(wd, 0 | 2 | 4) {
            for s in 0..n_sections {
                let hour = 9 + (s % 3) as i64;
                let iv = TimeInterval::new(
                    Timestamp(day0 + hour * H),
                    Timestamp(day0 + (hour + 1) * H),
                );
                schedule.lectures.push(Lecture {
                    section_id: format!("s{s}"),
                    interval: iv,
                    room: campus.lecture_rooms[s].clone(),
                });
                section_lectures[s].push((d, iv));
            }
        }
        let midterm = config.midterm_week == Some(d / 7);
        if matches!(wd, 1 | 3) || (midterm && wd < 5) {
            meeting_days.push(d);
            for gid in &groups_order {
                schedule.meetings.push(Meeting {
                    group_id: gid.clone(),
                    interval: TimeInterval::new(
                        Timestamp(day0 + 19 * H),
                        Timestamp(day0 + 21 * H),
                    ),
                    buildings: None,
                });
            }
        }
    }
    let windows = merged_padded_windows(&schedule, margin);

    // Per-user traits.
    let mut trng = stream(seed, "traits");
    let propensity: BTreeMap<&str, f64> = users
        .iter()
        .map(|u| {
            let c = trng.random_range(config.participation_low..=config.participation_high);
            (u.as_str(), c)
        })
        .collect();
    let homebody: BTreeMap<&str, i64> = users
        .iter()
        .map(|u| (u.as_str(), trng.random_range(-5400..=5400)))
        .collect();

    // Plan every user's term, one deterministic stream per user.
    let mut attendance = AttendanceRecord::default();
    let mut plans: Vec<UserPlan> = Vec::with_capacity(users.len());
    // (user idx, week) -> meetings attended, for the score generator.
    let mut attended_weekly: Vec<Vec<f64>> = vec![vec![0.0; weeks]; users.len()];

    for (ui, user) in users.iter().enumerate() {
        let mut rng = stream(seed, &format!("user/{user}"));
        let section: usize = roster.section(user).unwrap()[1..].parse().unwrap();
        let group = roster.group(user).unwrap().to_string();
        let dorm = campus.dorm_of[user].clone();
        let common = campus.common_of[&group].clone();
        let lib = campus.library.clone();
        let b_u = homebody[user.as_str()];
        let c_u = propensity[user.as_str()];

        let mut visits: Vec<PlannedVisit> = Vec::with_capacity(days * 10);
        let mut suppress: Vec<TimeInterval> = Vec::new();
        // Overnight dorm stay opened the evening before; day 0 starts
        // mid-sleep at the window edge.
        visits.push(PlannedVisit {
            room: dorm.clone(),
            log_room: dorm.clone(),
            arr: Some(window.start.0),
            exit: None,
        });
        let mut lecture_no = 0usize; // index into the section's ordered lectures

        for d in 0..days {
            let wd = d % 7;
            let day0 = TERM_START + d as i64 * DAY;
            let weekend = wd >= 5;

            // Close the overnight stay.
            let dorm_exit = if weekend {
                day0 + 9 * H + 1800 + rng.random_range(0..=1800)
            } else {
                day0 + 8 * H + rng.random_range(0..=1500)
            };
            visits.last_mut().unwrap().exit = Some(dorm_exit);

            if !weekend {
                visits.push(PlannedVisit::filler(&lib));
                // Lecture, if one is scheduled today and the student
                // shows up (honestly or as a ghost).
                if let Some(&(_, iv)) = section_lectures[section]
                    .get(lecture_no)
                    .filter(|(ld, _)| *ld == d)
                {
                    let idx = lecture_no;
                    lecture_no += 1;
                    let attends = rng.random_bool(config.attendance_rate);
                    attendance.entries.insert(
                        (user.clone(), idx),
                        if attends { Mark::Present } else { Mark::Absent },
                    );
                    let ghost = !attends && rng.random_bool(config.noise.p_ghost_attendance);
                    if attends || ghost {
                        let arr = iv.start.0 + rng.random_range(0..=600);
                        let exit = iv.end.0 + rng.random_range(0..=240);
                        let mut v = PlannedVisit::anchored(&campus.lecture_rooms[section], arr, exit);
                        if rng.random_bool(config.noise.p_unlogged_attendance) {
                            suppress.push(iv.padded(margin));
                        } else if rng.random_bool(config.noise.p_ap_snap) {
                            v.log_room = campus.halls[section].clone();
                        }
                        visits.push(v);
                        visits.push(PlannedVisit::filler(&lib));
                    }
                }
                // Lunch.
                visits.push(PlannedVisit::anchored(
                    &campus.dining,
                    day0 + 12 * H + 2700 + rng.random_range(0..=300),
                    day0 + 13 * H + 1500 + rng.random_range(0..=300),
                ));
                // Afternoon block.
                let roll: f64 = rng.random();
                if roll < 0.2 {
                    // Off campus: the filler ends on a hard anchor and
                    // the next visit is dinner, hours away.
                    let mut f = PlannedVisit::filler(&lib);
                    f.exit = Some(day0 + 14 * H + rng.random_range(0..=300));
                    visits.push(f);
                } else {
                    let room = if roll < 0.45 {
                        &campus.gym
                    } else if roll < 0.6 {
                        &campus.quad
                    } else {
                        &lib
                    };
                    visits.push(PlannedVisit::filler(&lib));
                    visits.push(PlannedVisit::anchored(
                        room,
                        day0 + 14 * H + rng.random_range(0..=600),
                        day0 + 16 * H + 1800 + rng.random_range(0..=600),
                    ));
                    visits.push(PlannedVisit::filler(&lib));
                }
                // Dinner.
                visits.push(PlannedVisit::anchored(
                    &campus.dining,
                    day0 + 17 * H + 3000 + rng.random_range(0..=300),
                    day0 + 18 * H + 1800 + rng.random_range(0..=240),
                ));
                // Evening: group meeting or straight home.
                let has_meeting = meeting_days.binary_search(&d).is_ok();
                let participates = has_meeting && rng.random_bool(c_u);
                let dorm_return = if participates {
                    attended_weekly[ui][d / 7] += 1.0;
                    visits.push(PlannedVisit::filler(&lib));
                    let arr = day0 + 19 * H + rng.random_range(0..=300);
                    let exit = day0 + 21 * H + rng.random_range(0..=240);
                    if rng.random_bool(config.step_out_rate) {
                        let out = day0 + 19 * H + 2400 + rng.random_range(0..=1200);
                        let back = out + 601 + rng.random_range(0..=299);
                        visits.push(PlannedVisit::anchored(&common, arr, out));
                        visits.push(PlannedVisit::anchored(&common, back, exit));
                    } else {
                        visits.push(PlannedVisit::anchored(&common, arr, exit));
                    }
                    visits.push(PlannedVisit::filler(&lib));
                    day0 + 21 * H + 1800 + rng.random_range(0..=1500)
                } else {
                    visits.push(PlannedVisit::filler(&lib));
                    day0 + 20 * H + 1800 + b_u + rng.random_range(0..=1500)
                };
                visits.push(PlannedVisit {
                    room: dorm.clone(),
                    log_room: dorm.clone(),
                    arr: Some(dorm_return),
                    exit: None,
                });
            } else {
                // Weekend: a long library block or an off-campus trip,
                // then the quad, dinner, home.
                if rng.random_bool(0.5) {
                    let mut f = PlannedVisit::filler(&lib);
                    f.exit = Some(day0 + 10 * H + 2700 + rng.random_range(0..=300));
                    visits.push(f);
                } else {
                    visits.push(PlannedVisit::filler(&lib));
                    visits.push(PlannedVisit::anchored(
                        &lib,
                        day0 + 11 * H + rng.random_range(0..=600),
                        day0 + 14 * H + 1800 + rng.random_range(0..=600),
                    ));
                    visits.push(PlannedVisit::filler(&lib));
                }
                visits.push(PlannedVisit::anchored(
                    &campus.quad,
                    day0 + 15 * H + 1800 + rng.random_range(0..=600),
                    day0 + 17 * H + rng.random_range(0..=600),
                ));
                visits.push(PlannedVisit::filler(&lib));
                visits.push(PlannedVisit::anchored(
                    &campus.dining,
                    day0 + 17 * H + 3000 + rng.random_range(0..=300),
                    day0 + 18 * H + 1800 + rng.random_range(0..=240),
                ));
                visits.push(PlannedVisit::filler(&lib));
                let dorm_return = day0 + 20 * H + b_u.max(-3600) + rng.random_range(0..=1500);
                visits.push(PlannedVisit {
                    room: dorm.clone(),
                    log_room: dorm.clone(),
                    arr: Some(dorm_return),
                    exit: None,
                });
            }
        }
        visits.last_mut().unwrap().exit = Some(window.end.0 - 60);

        // Resolve the gap of every fixed slot; defer pool-eligible ones.
        let mut slots: Vec<SlotGap> = Vec::with_capacity(visits.len() - 1);
        for i in 0..visits.len() - 1 {
            let (a, b) = (&visits[i], &visits[i + 1]);
            let same_room = a.room == b.room;
            let slot = match (a.exit, b.arr) {
                (Some(e), Some(arr)) => {
                    let gap = arr - e;
                    debug_assert!(
                        gap >= 2 * H || (same_room && (601..=900).contains(&gap)),
                        "hard-to-hard gap {gap} is neither an absence nor a step-out"
                    );
                    SlotGap::Fixed
                }
                (Some(e), None) => match same_room {
                    true => SlotGap::Free(rng.random_range(20..=60)),
                    false => match classify_slot(&windows, e, true) {
                        SlotClass::Pool => SlotGap::Free(0), // placeholder
                        SlotClass::Forced(g) => SlotGap::Free(g),
                        SlotClass::Out => SlotGap::Free(draw_free_gap(&mut rng)),
                    },
                },
                (None, Some(arr)) => match same_room {
                    true => SlotGap::Free(rng.random_range(20..=60)),
                    false => match classify_slot(&windows, arr, false) {
                        SlotClass::Pool => SlotGap::Free(0),
                        SlotClass::Forced(g) => SlotGap::Free(g),
                        SlotClass::Out => SlotGap::Free(draw_free_gap(&mut rng)),
                    },
                },
                (None, None) => unreachable!("two adjacent free visit ends"),
            };
            slots.push(slot);
        }
        plans.push(UserPlan { visits, slots, suppress });
    }

    // Fill the deferred pool slots so the 0.9 quantile of in-window
    // different-AP gaps lands strictly between the transit cluster
    // (max planted at 60) and the linger cluster (min planted at 90).
    let pool: Vec<(usize, usize)> = plans
        .iter()
        .enumerate()
        .flat_map(|(ui, p)| {
            p.slots
                .iter()
                .enumerate()
                .filter(|(_, s)| matches!(s, SlotGap::Free(0)))
                .map(move |(si, _)| (ui, si))
                .collect::<Vec<_>>()
        })
        .collect();
    if !pool.is_empty() {
        let mut prng = stream(seed, "pool");
        let n = pool.len();
        let swifts = (9 * (n - 1)).div_ceil(10);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut prng);
        for (k, &slot_pos) in order.iter().enumerate() {
            let (ui, si) = pool[slot_pos];
            let g = if k < swifts {
                if k == 0 { 60 } else { prng.random_range(20..=60) }
            } else if k == swifts {
                90
            } else {
                prng.random_range(90..=600)
            };
            plans[ui].slots[si] = SlotGap::Free(g);
        }
    }

    // Materialize times, truth intervals, and events.
    let mut timeline: PresenceTimeline = BTreeMap::new();
    let mut events: Vec<AssociationEvent> = Vec::new();
    let mut jrng = stream(seed, "jitter");
    for (ui, plan) in plans.iter().enumerate() {
        let user = &users[ui];
        let n = plan.visits.len();
        let mut arr_at = vec![0i64; n];
        let mut exit_at = vec![0i64; n];
        for i in 0..n {
            arr_at[i] = match plan.visits[i].arr {
                Some(t) => t,
                None => {
                    let e = plan.visits[i - 1]
                        .exit
                        .expect("soft arrival follows a fixed departure");
                    e + free_gap(&plan.slots[i - 1])
                }
            };
            exit_at[i] = match plan.visits[i].exit {
                Some(t) => t,
                None => {
                    let a = plan.visits[i + 1]
                        .arr
                        .expect("free departure precedes a fixed arrival");
                    a - free_gap(&plan.slots[i])
                }
            };
            debug_assert!(arr_at[i] < exit_at[i], "visit {i} of {user} is empty");
            if i > 0 {
                debug_assert!(exit_at[i - 1] < arr_at[i], "visits of {user} overlap");
            }
        }

        // Ground truth: extend through gaps the pipeline will merge.
        let mut truth: Vec<(RoomKey, TimeInterval)> = Vec::with_capacity(n);
        for i in 0..n {
            let mut end = exit_at[i];
            if i + 1 < n {
                let gap = arr_at[i + 1] - exit_at[i];
                let same = plan.visits[i].room == plan.visits[i + 1].room;
                debug_assert!(
                    same || gap <= 60 || gap >= 90,
                    "different-room gap {gap} in the ambiguous band"
                );
                if slot_extends(same, gap) {
                    end = arr_at[i + 1];
                }
            }
            let room = plan.visits[i].room.clone();
            match truth.last_mut() {
                Some((r, iv)) if *r == room && iv.end.0 == arr_at[i] => iv.end = Timestamp(end),
                _ => truth.push((
                    room,
                    TimeInterval::new(Timestamp(arr_at[i]), Timestamp(end)),
                )),
            }
        }
        timeline.insert(user.clone(), truth);

        if !config.emit_logs {
            continue;
        }
        let device = format!("02:00:00:00:{:02x}:{:02x}", ui / 256, ui % 256);
        let jitter = config.noise.poll_jitter_secs;
        for i in 0..n {
            let room = &plan.visits[i].log_room;
            let ap_id = format!("ap-{}-{}", room.building, room.room);
            let ap_label = format!("{}-{}", room.building, room.room);
            let mut push = |t: i64, kind: UpdateType| {
                if plan.suppress.iter().any(|s| s.start.0 <= t && t <= s.end.0) {
                    return;
                }
                events.push(AssociationEvent {
                    timestamp: Timestamp(t),
                    update_type: kind,
                    user_id: user.clone(),
                    device_id: device.clone(),
                    ap_id: ap_id.clone(),
                    ap_label: ap_label.clone(),
                });
            };
            push(arr_at[i], UpdateType::SnmpUpdate);
            let mut t = arr_at[i] + POLL;
            while t < exit_at[i] {
                let jittered = if jitter > 0 {
                    (t + jrng.random_range(-jitter..=jitter))
                        .clamp(arr_at[i] + 1, exit_at[i] - 1)
                } else {
                    t
                };
                push(jittered, UpdateType::SnmpPoll);
                t += POLL;
            }
            push(exit_at[i], UpdateType::SnmpPoll);
        }
    }
    let corpus = LogCorpus::from_events(events);

    // Scores: z-scored participation and week-to-week consistency plus
    // noise, clamped to a gradebook range.
    let mut srng = stream(seed, "scores");
    let scheduled = meeting_days.len() as f64;
    let part: Vec<f64> = (0..users.len())
        .map(|ui| {
            if scheduled == 0.0 {
                0.0
            } else {
                attended_weekly[ui].iter().sum::<f64>() / scheduled
            }
        })
        .collect();
    let consist: Vec<f64> = (0..users.len())
        .map(|ui| {
            let series = &attended_weekly[ui];
            let mean = series.iter().sum::<f64>() / series.len() as f64;
            let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / series.len() as f64;
            -var.sqrt()
        })
        .collect();
    let zscore = |vals: &[f64]| -> Vec<f64> {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        if sd == 0.0 {
            vec![0.0; vals.len()]
        } else {
            vals.iter().map(|v| (v - mean) / sd).collect()
        }
    };
    let (zp, zc) = (zscore(&part), zscore(&consist));
    let mut pe = Vec::with_capacity(users.len());
    let mut target = Vec::with_capacity(users.len());
    for ui in 0..users.len() {
        let grade = config.score.base
            + config.score.participation_weight * zp[ui]
            + config.score.consistency_weight * zc[ui]
            + config.score.noise_sd * normal(&mut srng);
        target.push(grade.clamp(0.0, 100.0));
        let mut cols = [0.0f64; 6];
        for c in &mut cols {
            *c = (3.5 + config.score.peer_signal * zp[ui] + 0.6 * normal(&mut srng))
                .clamp(1.0, 5.0);
        }
        pe.push(cols);
    }
    let scores = ScoreTable {
        user_ids: users.clone(),
        pe,
        target,
    };

    Ok(SimScenario {
        seed,
        config: config.clone(),
        pipeline_config,
        registry: campus.registry,
        roster,
        schedule,
        attendance,
        timeline,
        corpus,
        scores,
        dorm_rooms,
    })
}

fn draw_free_gap(rng: &mut ChaCha8Rng) -> i64 {
    if rng.random_bool(0.9) {
        rng.random_range(20..=60)
    } else {
        rng.random_range(90..=600)
    }
}

fn free_gap(slot: &SlotGap) -> i64 {
    match slot {
        SlotGap::Free(g) => {
            debug_assert!(*g >= 20, "unresolved pool slot");
            *g
        }
        SlotGap::Fixed => unreachable!("fixed slots have both anchors"),
    }
}

impl SimScenario {
    /// The ground-truth timeline as dwell segments (all `Dwelling`,
    /// support metadata empty) — what a perfect Phase I would emit.
    pub fn truth_dwells(&self) -> Vec<DwellSegment> {
        let mut out = Vec::new();
        for (user, stays) in &self.timeline {
            for (room, iv) in stays {
                out.push(DwellSegment {
                    user_id: user.clone(),
                    room: room.clone(),
                    interval: *iv,
                    status: DwellStatus::Dwelling,
                    supporting_event_count: 0,
                    support_times: Vec::new(),
                });
            }
        }
        out
    }

    /// True episodes over the whole cohort; see [`oracle_episodes`].
    pub fn oracle_episodes(&self, gap_threshold: f64) -> Vec<CollocationEpisode> {
        let all: BTreeSet<String> = self.timeline.keys().cloned().collect();
        oracle_episodes(
            &self.timeline,
            &all,
            gap_threshold,
            &self.schedule,
            &self.roster,
        )
    }

    /// Write every artifact the pipeline ingests, plus the ground
    /// truth, into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_corpus_csv(&self.corpus, &self.pipeline_config, dir.join("logs.csv"))?;
        write_registry_csv(&self.registry, dir.join("registry.csv"))?;
        write_roster_csv(&self.roster, dir.join("roster.csv"))?;
        write_schedule_csv(
            &self.schedule,
            &self.pipeline_config,
            dir.join("lectures.csv"),
            dir.join("meetings.csv"),
        )?;
        write_attendance_csv(&self.attendance, dir.join("attendance.csv"))?;
        write_scores_csv(&self.scores, dir.join("scores.csv"))?;
        write_truth_timeline_csv(&self.timeline, dir.join("truth_timeline.csv"))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Per-second oracle

/// Brute-force reference for collocation: walk every second of every
/// room's active span, tracking the occupant set from the timeline;
/// each maximal run of an unchanged set with >= 2 members is an
/// episode. Same-set episodes separated by a gap shorter than the
/// threshold merge when some member's presence covers every gap second
/// (checked second by second, repeated to a fixed point).
pub fn oracle_episodes(
    timeline: &PresenceTimeline,
    users: &BTreeSet<String>,
    gap_threshold: f64,
    schedule: &Schedule,
    roster: &Roster,
) -> Vec<CollocationEpisode> {
    // Gather per-room, per-user presence.
    let mut rooms: BTreeMap<&RoomKey, BTreeMap<&str, Vec<TimeInterval>>> = BTreeMap::new();
    for (user, stays) in timeline {
        if !users.contains(user) {
            continue;
        }
        for (room, iv) in stays {
            if iv.duration_secs() > 0 {
                rooms
                    .entry(room)
                    .or_default()
                    .entry(user)
                    .or_default()
                    .push(*iv);
            }
        }
    }

    let mut episodes: Vec<CollocationEpisode> = Vec::new();
    for (room, by_user) in &rooms {
        if by_user.len() < 2 {
            continue;
        }
        let locals: Vec<&str> = by_user.keys().copied().collect();
        let words = locals.len().div_ceil(64);
        // Second-indexed deltas, sorted.
        let mut deltas: Vec<(i64, usize, bool)> = Vec::new();
        for (li, user) in locals.iter().enumerate() {
            for iv in &by_user[user] {
                deltas.push((iv.start.0, li, true));
                deltas.push((iv.end.0, li, false));
            }
        }
        deltas.sort_unstable_by_key(|(t, li, on)| (*t, *li, *on));
        let lo = deltas.first().map(|d| d.0).unwrap();
        let hi = deltas.last().map(|d| d.0).unwrap();

        let mut mask = vec![0u64; words];
        let mut count = 0usize;
        let mut cursor = 0usize;
        let mut open: Option<(i64, Vec<u64>)> = None;
        for s in lo..=hi {
            while cursor < deltas.len() && deltas[cursor].0 == s {
                let (_, li, on) = deltas[cursor];
                let (w, b) = (li / 64, li % 64);
                if on {
                    mask[w] |= 1 << b;
                    count += 1;
                } else {
                    mask[w] &= !(1 << b);
                    count -= 1;
                }
                cursor += 1;
            }
            let unchanged = open.as_ref().is_some_and(|(_, m)| *m == mask);
            if unchanged {
                continue;
            }
            if let Some((start, m)) = open.take() {
                episodes.push(members_episode(room, &locals, &m, start, s));
            }
            if count >= 2 {
                open = Some((s, mask.clone()));
            }
        }
        debug_assert!(open.is_none(), "presence persists past the last boundary");
    }

    // Exhaustive bridging to a fixed point, always merging the
    // leftmost qualifying gap first.
    let mut merged = true;
    while merged {
        merged = false;
        episodes = sort_episodes_by_chain(episodes);
        let mut i = 0;
        while i + 1 < episodes.len() {
            let same_chain = episodes[i].room == episodes[i + 1].room
                && episodes[i].members == episodes[i + 1].members;
            if same_chain {
                let gap = TimeInterval::new(episodes[i].interval.end, episodes[i + 1].interval.start);
                let len = gap.duration_secs();
                if len > 0
                    && (len as f64) < gap_threshold
                    && gap_covered(&rooms[&episodes[i].room], &episodes[i].members, &gap)
                {
                    let next = episodes.remove(i + 1);
                    episodes[i].interval.end = next.interval.end;
                    episodes[i].bridged_gaps.push(gap);
                    episodes[i].bridged_gaps.extend(next.bridged_gaps);
                    merged = true;
                    continue;
                }
            }
            i += 1;
        }
    }

    for ep in &mut episodes {
        ep.context = classify_context(ep, schedule, roster);
    }
    sort_episodes(&mut episodes);
    episodes
}

fn members_episode(
    room: &RoomKey,
    locals: &[&str],
    mask: &[u64],
    start: i64,
    end: i64,
) -> CollocationEpisode {
    let members: BTreeSet<String> = locals
        .iter()
        .enumerate()
        .filter(|(li, _)| mask[li / 64] >> (li % 64) & 1 == 1)
        .map(|(_, u)| u.to_string())
        .collect();
    CollocationEpisode {
        members,
        room: room.clone(),
        interval: TimeInterval::new(Timestamp(start), Timestamp(end)),
        bridged_gaps: Vec::new(),
        context: crate::collocation::Context::Other,
    }
}

/// Every second of `gap` lies inside some member's presence interval?
fn gap_covered(
    by_user: &BTreeMap<&str, Vec<TimeInterval>>,
    members: &BTreeSet<String>,
    gap: &TimeInterval,
) -> bool {
    'sec: for s in gap.start.0..gap.end.0 {
        for m in members {
            if let Some(ivs) = by_user.get(m.as_str()) {
                if ivs.iter().any(|iv| iv.start.0 <= s && s < iv.end.0) {
                    continue 'sec;
                }
            }
        }
        return false;
    }
    true
}

/// Chain order for the bridging scan: room, then members, then time.
fn sort_episodes_by_chain(mut eps: Vec<CollocationEpisode>) -> Vec<CollocationEpisode> {
    eps.sort_by(|a, b| {
        (&a.room, &a.members, a.interval.start).cmp(&(&b.room, &b.members, b.interval.start))
    });
    eps
}

// ---------------------------------------------------------------------
// Truth timeline file

pub fn write_truth_timeline_csv(
    timeline: &PresenceTimeline,
    path: impl AsRef<Path>,
) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "building_id", "room_id", "start", "end"])?;
    for (user, stays) in timeline {
        for (room, iv) in stays {
            w.write_record([
                user.as_str(),
                &room.building,
                &room.room,
                &iv.start.0.to_string(),
                &iv.end.0.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_truth_timeline_csv(path: impl AsRef<Path>) -> Result<PresenceTimeline, SynthError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut timeline = PresenceTimeline::new();
    for row in r.records() {
        let row = row?;
        if row.len() != 5 {
            return Err(SynthError::BadTimelineRow(format!(
                "expected 5 fields, found {}",
                row.len()
            )));
        }
        let t = |i: usize| -> Result<i64, SynthError> {
            row[i]
                .parse()
                .map_err(|e| SynthError::BadTimelineRow(format!("{:?}: {e}", &row[i])))
        };
        timeline.entry(row[0].to_string()).or_default().push((
            RoomKey::new(&row[1], &row[2]),
            TimeInterval::new(Timestamp(t(3)?), Timestamp(t(4)?)),
        ));
    }
    Ok(timeline)
}
