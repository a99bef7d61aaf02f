//! Shared domain types: instants, intervals, rooms, rosters, schedules,
//! and the pipeline configuration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid interval: start {start} is after end {end}")]
    InvalidInterval { start: i64, end: i64 },
    #[error("unknown access point id {0:?}")]
    UnknownAp(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown category {0:?} (expected academic, dining, green_space, recreation, residential or other)")]
    UnknownCategory(String),
    #[error("unknown update type {0:?} (expected snmpupdate or snmppoll)")]
    UnknownUpdateType(String),
    #[error("unknown weekday {0:?}")]
    UnknownWeekday(String),
    #[error("ap label {0:?} does not split into building and room")]
    BadApLabel(String),
}

/// An instant with second resolution, stored as Unix seconds (UTC).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn unix(self) -> i64 {
        self.0
    }

    /// Shift by a signed number of seconds.
    pub fn offset(self, secs: i64) -> Timestamp {
        Timestamp(self.0 + secs)
    }

    /// Seconds from `earlier` to `self` (negative if `self` is earlier).
    pub fn since(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }
}

/// A closed-below, open-above span of time: an instant `t` lies inside
/// iff `start <= t < end`. `start == end` is allowed and denotes a
/// zero-length interval that contains nothing and overlaps nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeInterval {
    /// Build an interval, panicking if `start > end`. Use [`TimeInterval::checked`]
    /// for untrusted input.
    pub fn new(start: Timestamp, end: Timestamp) -> TimeInterval {
        assert!(
            start <= end,
            "interval start {} after end {}",
            start.0,
            end.0
        );
        TimeInterval { start, end }
    }

    pub fn checked(start: Timestamp, end: Timestamp) -> Result<TimeInterval, ModelError> {
        if start <= end {
            Ok(TimeInterval { start, end })
        } else {
            Err(ModelError::InvalidInterval {
                start: start.0,
                end: end.0,
            })
        }
    }

    pub fn duration_secs(&self) -> i64 {
        self.end.0 - self.start.0
    }

    pub fn contains_instant(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }

    /// Intersection, but only when it has positive length: intervals that
    /// merely touch at an endpoint do not overlap.
    pub fn overlap(&self, other: &TimeInterval) -> Option<TimeInterval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        if start < end {
            Some(TimeInterval { start, end })
        } else {
            None
        }
    }

    /// Widen by `margin` seconds on both sides.
    pub fn padded(&self, margin: i64) -> TimeInterval {
        TimeInterval::new(self.start.offset(-margin), self.end.offset(margin))
    }
}

/// Positive-length intersection of two intervals (see [`TimeInterval::overlap`]).
pub fn interval_overlap(a: &TimeInterval, b: &TimeInterval) -> Option<TimeInterval> {
    a.overlap(b)
}

/// What kind of SNMP record produced an association event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UpdateType {
    SnmpUpdate,
    SnmpPoll,
}

impl FromStr for UpdateType {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "snmpupdate" | "snmp_update" | "update" => Ok(UpdateType::SnmpUpdate),
            "snmppoll" | "snmp_poll" | "poll" => Ok(UpdateType::SnmpPoll),
            _ => Err(ModelError::UnknownUpdateType(s.to_string())),
        }
    }
}

impl fmt::Display for UpdateType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateType::SnmpUpdate => "snmpupdate",
            UpdateType::SnmpPoll => "snmppoll",
        })
    }
}

/// One raw log line: a device was associated to an access point at an instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationEvent {
    pub timestamp: Timestamp,
    pub update_type: UpdateType,
    pub user_id: String,
    pub device_id: String,
    pub ap_id: String,
    pub ap_label: String,
}

/// Semantic label of the building an access point lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Academic,
    Dining,
    GreenSpace,
    Recreation,
    Residential,
    Other,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Academic,
        Category::Dining,
        Category::GreenSpace,
        Category::Recreation,
        Category::Residential,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Academic => "academic",
            Category::Dining => "dining",
            Category::GreenSpace => "green_space",
            Category::Recreation => "recreation",
            Category::Residential => "residential",
            Category::Other => "other",
        }
    }
}

impl FromStr for Category {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "academic" => Ok(Category::Academic),
            "dining" => Ok(Category::Dining),
            "green_space" | "greenspace" | "green_spaces" => Ok(Category::GreenSpace),
            "recreation" | "recreational" => Ok(Category::Recreation),
            "residential" => Ok(Category::Residential),
            "other" => Ok(Category::Other),
            _ => Err(ModelError::UnknownCategory(s.to_string())),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The identity of a physical room. Several access points may serve the
/// same room; they all map to one key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RoomKey {
    pub building: String,
    pub room: String,
}

impl RoomKey {
    pub fn new(building: impl Into<String>, room: impl Into<String>) -> RoomKey {
        RoomKey {
            building: building.into(),
            room: room.into(),
        }
    }
}

impl fmt::Display for RoomKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.building, self.room)
    }
}

/// One WiFi access point and where it hangs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub ap_id: String,
    pub building_id: String,
    pub room_id: String,
    pub category: Category,
}

/// The room an access point serves. APs in the same room return equal keys.
pub fn room_key(ap: &AccessPoint) -> RoomKey {
    RoomKey::new(ap.building_id.clone(), ap.room_id.clone())
}

/// Split an AP label of the form `building-room` at the first dash.
pub fn split_ap_label(label: &str) -> Result<(String, String), ModelError> {
    match label.split_once('-') {
        Some((b, r)) if !b.is_empty() && !r.is_empty() => Ok((b.to_string(), r.to_string())),
        _ => Err(ModelError::BadApLabel(label.to_string())),
    }
}

/// All registered access points, looked up by id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ApRegistry {
    by_id: HashMap<String, AccessPoint>,
}

impl ApRegistry {
    pub fn new(aps: impl IntoIterator<Item = AccessPoint>) -> ApRegistry {
        ApRegistry {
            by_id: aps.into_iter().map(|ap| (ap.ap_id.clone(), ap)).collect(),
        }
    }

    pub fn get(&self, ap_id: &str) -> Result<&AccessPoint, ModelError> {
        self.by_id
            .get(ap_id)
            .ok_or_else(|| ModelError::UnknownAp(ap_id.to_string()))
    }

    pub fn room_key(&self, ap_id: &str) -> Result<RoomKey, ModelError> {
        Ok(room_key(self.get(ap_id)?))
    }

    pub fn category(&self, ap_id: &str) -> Result<Category, ModelError> {
        Ok(self.get(ap_id)?.category)
    }

    /// Category of a room (all its APs share one; validated at load time).
    pub fn room_category(&self, key: &RoomKey) -> Option<Category> {
        self.by_id
            .values()
            .find(|ap| ap.building_id == key.building && ap.room_id == key.room)
            .map(|ap| ap.category)
    }

    /// Category of a building (all its APs share one; validated at load time).
    pub fn building_category(&self, building: &str) -> Option<Category> {
        self.by_id
            .values()
            .find(|ap| ap.building_id == building)
            .map(|ap| ap.category)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AccessPoint> {
        self.by_id.values()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Distinct room keys across the registry.
    pub fn room_keys(&self) -> BTreeSet<RoomKey> {
        self.by_id.values().map(room_key).collect()
    }
}

/// Who studies where: every user belongs to exactly one project group and
/// one course section; each section has one instructor.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Roster {
    pub group_of: BTreeMap<String, String>,
    pub section_of: BTreeMap<String, String>,
    pub instructor_of: BTreeMap<String, String>,
}

impl Roster {
    /// All user ids, ascending.
    pub fn users(&self) -> impl Iterator<Item = &String> {
        self.group_of.keys()
    }

    pub fn group(&self, user: &str) -> Option<&str> {
        self.group_of.get(user).map(String::as_str)
    }

    pub fn section(&self, user: &str) -> Option<&str> {
        self.section_of.get(user).map(String::as_str)
    }

    pub fn instructor(&self, section: &str) -> Option<&str> {
        self.instructor_of.get(section).map(String::as_str)
    }

    /// Group ids in ascending order.
    pub fn groups(&self) -> BTreeSet<&str> {
        self.group_of.values().map(String::as_str).collect()
    }

    /// Members of one group, ascending by user id.
    pub fn members_of(&self, group: &str) -> Vec<&str> {
        self.group_of
            .iter()
            .filter(|(_, g)| g.as_str() == group)
            .map(|(u, _)| u.as_str())
            .collect()
    }
}

/// A lecture of one course section in one room.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lecture {
    pub section_id: String,
    pub interval: TimeInterval,
    pub room: RoomKey,
}

/// A self-reported group meeting window. `buildings` of `None` means
/// "anywhere"; otherwise the meeting counts only inside the named buildings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meeting {
    pub group_id: String,
    pub interval: TimeInterval,
    pub buildings: Option<BTreeSet<String>>,
}

/// Lectures and reported group meetings for the term.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub lectures: Vec<Lecture>,
    pub meetings: Vec<Meeting>,
}

impl Schedule {
    /// Lectures of one section ordered by (start, end). Attendance records
    /// refer to lectures by index into this list.
    pub fn section_lectures(&self, section_id: &str) -> Vec<&Lecture> {
        let mut ls: Vec<&Lecture> = self
            .lectures
            .iter()
            .filter(|l| l.section_id == section_id)
            .collect();
        ls.sort_by_key(|l| (l.interval.start, l.interval.end));
        ls
    }

    pub fn meetings_of(&self, group_id: &str) -> Vec<&Meeting> {
        self.meetings
            .iter()
            .filter(|m| m.group_id == group_id)
            .collect()
    }
}

/// Did a student attend a given lecture, per instructor records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mark {
    Present,
    Absent,
}

/// Instructor-reported attendance: (user, index into the user's section
/// lecture list) -> mark.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AttendanceRecord {
    pub entries: BTreeMap<(String, usize), Mark>,
}

/// A threshold that is either supplied or learned from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdSetting {
    Learn,
    /// Seconds.
    Fixed(i64),
}

impl ThresholdSetting {
    pub fn fixed(self) -> Option<i64> {
        match self {
            ThresholdSetting::Fixed(s) => Some(s),
            ThresholdSetting::Learn => None,
        }
    }
}

impl fmt::Display for ThresholdSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdSetting::Learn => f.write_str("learn"),
            ThresholdSetting::Fixed(s) => write!(f, "{s}s"),
        }
    }
}

impl FromStr for ThresholdSetting {
    type Err = ModelError;
    /// Accepts `learn`, plain seconds (`233`), or suffixed durations
    /// (`233s`, `76m`, `2h`).
    fn from_str(s: &str) -> Result<Self, ModelError> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("learn") {
            return Ok(ThresholdSetting::Learn);
        }
        let (num, mult) = match s.chars().last() {
            Some('s') => (&s[..s.len() - 1], 1),
            Some('m') => (&s[..s.len() - 1], 60),
            Some('h') => (&s[..s.len() - 1], 3600),
            _ => (s, 1),
        };
        num.trim()
            .parse::<i64>()
            .map(|n| ThresholdSetting::Fixed(n * mult))
            .map_err(|_| ModelError::InvalidConfig(format!("bad duration {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weekday {
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
    Sunday,
}

impl Weekday {
    /// 0 for Monday .. 6 for Sunday.
    pub fn index_from_monday(self) -> i64 {
        match self {
            Weekday::Monday => 0,
            Weekday::Tuesday => 1,
            Weekday::Wednesday => 2,
            Weekday::Thursday => 3,
            Weekday::Friday => 4,
            Weekday::Saturday => 5,
            Weekday::Sunday => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Weekday::Monday => "monday",
            Weekday::Tuesday => "tuesday",
            Weekday::Wednesday => "wednesday",
            Weekday::Thursday => "thursday",
            Weekday::Friday => "friday",
            Weekday::Saturday => "saturday",
            Weekday::Sunday => "sunday",
        }
    }
}

impl FromStr for Weekday {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "monday" | "mon" => Ok(Weekday::Monday),
            "tuesday" | "tue" => Ok(Weekday::Tuesday),
            "wednesday" | "wed" => Ok(Weekday::Wednesday),
            "thursday" | "thu" => Ok(Weekday::Thursday),
            "friday" | "fri" => Ok(Weekday::Friday),
            "saturday" | "sat" => Ok(Weekday::Saturday),
            "sunday" | "sun" => Ok(Weekday::Sunday),
            _ => Err(ModelError::UnknownWeekday(s.to_string())),
        }
    }
}

impl fmt::Display for Weekday {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything the pipeline needs to know that is not data: thresholds (or
/// the instruction to learn them), the scoring margin, ApEn parameters,
/// week anchoring, and how to resolve year-less log timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mobility_threshold: ThresholdSetting,
    pub disconnection_threshold: ThresholdSetting,
    pub gap_threshold: ThresholdSetting,
    /// Seconds of slack around a lecture when scoring attendance and
    /// deciding observability.
    pub margin_before_after: i64,
    pub apen_m: usize,
    /// ApEn tolerance as a fraction of the series' standard deviation.
    pub apen_r_factor: f64,
    pub week_anchor: Weekday,
    /// Fixed offset of campus local time from UTC, in minutes. Log
    /// timestamps are read as local time.
    pub utc_offset_minutes: i32,
    pub study_window: TimeInterval,
    /// Log timestamps carry no year; this resolves them.
    pub reference_year: i32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mobility_threshold: ThresholdSetting::Learn,
            disconnection_threshold: ThresholdSetting::Learn,
            gap_threshold: ThresholdSetting::Learn,
            margin_before_after: 30 * 60,
            apen_m: 2,
            apen_r_factor: 0.2,
            week_anchor: Weekday::Monday,
            utc_offset_minutes: 0,
            // A spring-term shaped window; callers normally override.
            study_window: TimeInterval::new(Timestamp(0), Timestamp(1)),
            reference_year: 2019,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        for (name, t) in [
            ("mobility_threshold", self.mobility_threshold),
            ("disconnection_threshold", self.disconnection_threshold),
            ("gap_threshold", self.gap_threshold),
        ] {
            if let ThresholdSetting::Fixed(s) = t {
                if s <= 0 {
                    return bad(format!("{name} must be positive, got {s}s"));
                }
            }
        }
        if self.margin_before_after <= 0 {
            return bad(format!(
                "margin_before_after must be positive, got {}s",
                self.margin_before_after
            ));
        }
        if self.apen_m < 1 {
            return bad("apen_m must be at least 1".to_string());
        }
        if !(self.apen_r_factor > 0.0 && self.apen_r_factor < 1.0) {
            return bad(format!(
                "apen_r_factor must lie in (0, 1), got {}",
                self.apen_r_factor
            ));
        }
        if self.study_window.duration_secs() <= 0 {
            return bad("study_window must have positive length".to_string());
        }
        if !(1970..=2100).contains(&self.reference_year) {
            return bad(format!("reference_year {} out of range", self.reference_year));
        }
        if self.utc_offset_minutes.abs() > 18 * 60 {
            return bad(format!(
                "utc_offset_minutes {} out of range",
                self.utc_offset_minutes
            ));
        }
        Ok(())
    }

    fn local_day(&self, t: Timestamp) -> i64 {
        (t.0 + i64::from(self.utc_offset_minutes) * 60).div_euclid(86_400)
    }

    /// Start (inclusive) of the anchored week containing `t`.
    pub fn week_start(&self, t: Timestamp) -> Timestamp {
        let day = self.local_day(t);
        // 1970-01-01 was a Thursday (index 3 from Monday).
        let weekday = (day + 3).rem_euclid(7);
        let back = (weekday - self.week_anchor.index_from_monday()).rem_euclid(7);
        let week_day0 = day - back;
        Timestamp(week_day0 * 86_400 - i64::from(self.utc_offset_minutes) * 60)
    }

    /// Week number of `t`, counting from the week containing the study
    /// window's start (week 0). Earlier instants get negative numbers.
    pub fn week_index(&self, t: Timestamp) -> i64 {
        let origin = self.week_start(self.study_window.start);
        (self.week_start(t).0 - origin.0).div_euclid(7 * 86_400)
    }

    /// Half-open list of week intervals covering the study window.
    pub fn study_weeks(&self) -> Vec<TimeInterval> {
        let mut weeks = Vec::new();
        let mut start = self.week_start(self.study_window.start);
        while start < self.study_window.end {
            let end = start.offset(7 * 86_400);
            weeks.push(TimeInterval::new(start, end));
            start = end;
        }
        weeks
    }
}
