//! Parse association logs, the AP registry, rosters, schedules, and
//! attendance records into domain values, with referential validation.
//!
//! Log timestamps look like `Apr 1 00:10:51` — no year. They are resolved
//! against `PipelineConfig::reference_year` in campus-local time
//! (`utc_offset_minutes`), rolling into the next year when the month is
//! earlier than the study window's opening month.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate};
use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    AccessPoint, ApRegistry, AssociationEvent, AttendanceRecord, Category, Lecture, Mark, Meeting,
    ModelError, PipelineConfig, RoomKey, Roster, Schedule, TimeInterval, Timestamp, UpdateType,
    split_ap_label,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    BadLine { line: u64, reason: String },
    #[error("{failed} of {total} lines unparseable ({frac:.2}%), above the {max:.2}% limit")]
    TooManyBadLines {
        failed: usize,
        total: usize,
        frac: f64,
        max: f64,
    },
    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

const MONTHS: [&str; 12] = [
    "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
];

/// Parse a year-less `Apr 1 00:10:51` timestamp as campus-local time.
pub fn parse_timestamp(s: &str, config: &PipelineConfig) -> Result<Timestamp, String> {
    let mut parts = s.split_whitespace();
    let (mon, day, time) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(d), Some(t), None) => (m, d, t),
        _ => return Err(format!("expected 'Mon D HH:MM:SS', got {s:?}")),
    };
    let month = MONTHS
        .iter()
        .position(|m| mon.eq_ignore_ascii_case(m))
        .ok_or_else(|| format!("unknown month {mon:?}"))? as u32
        + 1;
    let day: u32 = day.parse().map_err(|_| format!("bad day {day:?}"))?;
    let mut hms = time.split(':');
    let (h, m, sec) = match (hms.next(), hms.next(), hms.next(), hms.next()) {
        (Some(h), Some(m), Some(s), None) => (h, m, s),
        _ => return Err(format!("bad time {time:?}")),
    };
    let h: u32 = h.parse().map_err(|_| format!("bad hour {h:?}"))?;
    let m: u32 = m.parse().map_err(|_| format!("bad minute {m:?}"))?;
    let sec: u32 = sec.parse().map_err(|_| format!("bad second {sec:?}"))?;

    let offset = i64::from(config.utc_offset_minutes) * 60;
    let window_open_month = DateTime::from_timestamp(config.study_window.start.0 + offset, 0)
        .ok_or("study window start out of range")?
        .month();
    let year = if month < window_open_month {
        config.reference_year + 1
    } else {
        config.reference_year
    };
    let date = NaiveDate::from_ymd_opt(year, month, day)
        .ok_or_else(|| format!("no such date: {mon} {day} in {year}"))?;
    let naive = date
        .and_hms_opt(h, m, sec)
        .ok_or_else(|| format!("no such time: {time}"))?;
    Ok(Timestamp(naive.and_utc().timestamp() - offset))
}

/// Render an instant in the log format (`Apr 1 00:10:51`, campus-local).
pub fn render_timestamp(t: Timestamp, config: &PipelineConfig) -> String {
    let offset = i64::from(config.utc_offset_minutes) * 60;
    let dt = DateTime::from_timestamp(t.0 + offset, 0).expect("timestamp out of range");
    dt.format("%b %-d %H:%M:%S").to_string()
}

fn looks_like_mac(s: &str) -> bool {
    let bytes = s.as_bytes();
    bytes.len() == 17
        && bytes.chunks(3).all(|c| {
            c[0].is_ascii_hexdigit()
                && c[1].is_ascii_hexdigit()
                && (c.len() == 2 || c[2] == b':')
        })
}

/// Parse one log record: `timestamp,update_type,user_id,device_id,ap_id,ap_label`,
/// comma- or tab-separated.
pub fn parse_log_line(line: &str, config: &PipelineConfig) -> Result<AssociationEvent, String> {
    let sep = if line.contains('\t') { '\t' } else { ',' };
    let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, got {}", fields.len()));
    }
    let timestamp = parse_timestamp(fields[0], config)?;
    let update_type: UpdateType = fields[1].parse().map_err(|e| format!("{e}"))?;
    let user_id = fields[2].to_string();
    let device_id = fields[3].to_string();
    if user_id.is_empty() {
        return Err("empty user_id".to_string());
    }
    if !looks_like_mac(&device_id) {
        return Err(format!("malformed device MAC {device_id:?}"));
    }
    let ap_label = fields[5].to_string();
    split_ap_label(&ap_label).map_err(|e| format!("{e}"))?;
    Ok(AssociationEvent {
        timestamp,
        update_type,
        user_id,
        device_id,
        ap_id: fields[4].to_string(),
        ap_label,
    })
}

/// The canonical single-line rendering of an event; `parse_log_line` is its
/// inverse.
pub fn canonical_log_line(ev: &AssociationEvent, config: &PipelineConfig) -> String {
    format!(
        "{},{},{},{},{},{}",
        render_timestamp(ev.timestamp, config),
        ev.update_type,
        ev.user_id,
        ev.device_id,
        ev.ap_id,
        ev.ap_label
    )
}

/// All parsed events, time-ordered, with a per-user index.
#[derive(Debug, Clone, Default)]
pub struct LogCorpus {
    events: Vec<AssociationEvent>,
    per_user: BTreeMap<String, Vec<usize>>,
}

impl LogCorpus {
    /// Sort events by (timestamp, user, device, ap) and index them by user.
    pub fn from_events(mut events: Vec<AssociationEvent>) -> LogCorpus {
        events.sort_by(|a, b| {
            (a.timestamp, &a.user_id, &a.device_id, &a.ap_id, &a.ap_label)
                .cmp(&(b.timestamp, &b.user_id, &b.device_id, &b.ap_id, &b.ap_label))
        });
        let mut per_user: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, ev) in events.iter().enumerate() {
            per_user.entry(ev.user_id.clone()).or_default().push(i);
        }
        LogCorpus { events, per_user }
    }

    pub fn events(&self) -> &[AssociationEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = &String> {
        self.per_user.keys()
    }

    pub fn user_event_indices(&self, user: &str) -> &[usize] {
        self.per_user.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    /// One user's events in time order.
    pub fn user_events(&self, user: &str) -> Vec<&AssociationEvent> {
        self.user_event_indices(user)
            .iter()
            .map(|&i| &self.events[i])
            .collect()
    }

    /// Canonical CSV rendering; identical corpora serialize to identical bytes.
    pub fn to_canonical_csv(&self, config: &PipelineConfig) -> String {
        let mut out = String::from("timestamp,update_type,user_id,device_id,ap_id,ap_label\n");
        for ev in &self.events {
            out.push_str(&canonical_log_line(ev, config));
            out.push('\n');
        }
        out
    }
}

/// Bookkeeping from a corpus load: `parsed = kept + dropped_out_of_window`,
/// and `total_lines = parsed + failed`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub total_lines: usize,
    pub kept: usize,
    pub dropped_out_of_window: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Fail on the first bad line instead of skipping with a count.
    pub abort_on_bad_line: bool,
    /// Abort when more than this fraction of lines fail to parse.
    pub max_failed_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            abort_on_bad_line: false,
            max_failed_fraction: 0.01,
        }
    }
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    config: &PipelineConfig,
) -> Result<(LogCorpus, LoadStats), IngestError> {
    load_corpus_with(path, config, LoadOptions::default())
}

pub fn load_corpus_with(
    path: impl AsRef<Path>,
    config: &PipelineConfig,
    options: LoadOptions,
) -> Result<(LogCorpus, LoadStats), IngestError> {
    let reader = BufReader::new(File::open(path)?);
    load_corpus_from_reader(reader, config, options)
}

pub fn load_corpus_from_reader(
    reader: impl BufRead,
    config: &PipelineConfig,
    options: LoadOptions,
) -> Result<(LogCorpus, LoadStats), IngestError> {
    let mut stats = LoadStats::default();
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        // A header line is allowed (and produced by the canonical writer).
        if i == 0 {
            let first = trimmed
                .split(if trimmed.contains('\t') { '\t' } else { ',' })
                .next()
                .unwrap_or("")
                .trim();
            if first.eq_ignore_ascii_case("timestamp") {
                continue;
            }
        }
        stats.total_lines += 1;
        match parse_log_line(trimmed, config) {
            Ok(ev) => {
                if config.study_window.contains_instant(ev.timestamp) {
                    stats.kept += 1;
                    events.push(ev);
                } else {
                    stats.dropped_out_of_window += 1;
                }
            }
            Err(reason) => {
                if options.abort_on_bad_line {
                    return Err(IngestError::BadLine {
                        line: i as u64 + 1,
                        reason,
                    });
                }
                stats.failed += 1;
            }
        }
    }
    let frac = if stats.total_lines == 0 {
        0.0
    } else {
        stats.failed as f64 / stats.total_lines as f64
    };
    if frac > options.max_failed_fraction {
        return Err(IngestError::TooManyBadLines {
            failed: stats.failed,
            total: stats.total_lines,
            frac: frac * 100.0,
            max: options.max_failed_fraction * 100.0,
        });
    }
    Ok((LogCorpus::from_events(events), stats))
}

#[derive(Debug, Deserialize)]
struct ApRow {
    ap_id: String,
    building_id: String,
    room_id: String,
    category: String,
}

/// Load `aps.csv` (ap_id,building_id,room_id,category). Every AP of a room,
/// and every room of a building, must agree on the category.
pub fn load_registry(path: impl AsRef<Path>) -> Result<ApRegistry, IngestError> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut aps = Vec::new();
    let mut issues = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<ApRow>().enumerate() {
        let row = row?;
        let category: Category = match row.category.parse() {
            Ok(c) => c,
            Err(e) => {
                issues.push(format!("aps row {}: {e}", i + 2));
                continue;
            }
        };
        if let Some(prev) = seen.insert(row.ap_id.clone(), i) {
            issues.push(format!(
                "aps row {}: duplicate ap_id {:?} (first at row {})",
                i + 2,
                row.ap_id,
                prev + 2
            ));
            continue;
        }
        if row.building_id.is_empty() || row.room_id.is_empty() {
            issues.push(format!("aps row {}: empty building or room id", i + 2));
            continue;
        }
        aps.push(AccessPoint {
            ap_id: row.ap_id,
            building_id: row.building_id,
            room_id: row.room_id,
            category,
        });
    }
    let mut building_cat: BTreeMap<&str, Category> = BTreeMap::new();
    for ap in &aps {
        match building_cat.get(ap.building_id.as_str()) {
            None => {
                building_cat.insert(&ap.building_id, ap.category);
            }
            Some(&c) if c != ap.category => issues.push(format!(
                "building {:?} mixes categories {c} and {}",
                ap.building_id, ap.category
            )),
            _ => {}
        }
    }
    if issues.is_empty() {
        Ok(ApRegistry::new(aps))
    } else {
        Err(IngestError::Validation(issues))
    }
}

#[derive(Debug, Deserialize)]
struct RosterRow {
    user_id: String,
    group_id: String,
    section_id: String,
    instructor_id: String,
}

/// Load `roster.csv` (user_id,group_id,section_id,instructor_id).
pub fn load_roster(path: impl AsRef<Path>) -> Result<Roster, IngestError> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut roster = Roster::default();
    let mut issues = Vec::new();
    for (i, row) in rdr.deserialize::<RosterRow>().enumerate() {
        let row = row?;
        if roster.group_of.contains_key(&row.user_id) {
            issues.push(format!("roster row {}: duplicate user {:?}", i + 2, row.user_id));
            continue;
        }
        if let Some(prev) = roster.instructor_of.get(&row.section_id) {
            if prev != &row.instructor_id {
                issues.push(format!(
                    "roster row {}: section {:?} has two instructors ({prev:?}, {:?})",
                    i + 2,
                    row.section_id,
                    row.instructor_id
                ));
                continue;
            }
        }
        roster
            .instructor_of
            .insert(row.section_id.clone(), row.instructor_id);
        roster.section_of.insert(row.user_id.clone(), row.section_id);
        roster.group_of.insert(row.user_id, row.group_id);
    }
    if issues.is_empty() {
        Ok(roster)
    } else {
        Err(IngestError::Validation(issues))
    }
}

#[derive(Debug, Deserialize)]
struct LectureRow {
    section_id: String,
    start: String,
    end: String,
    building_id: String,
    room_id: String,
}

#[derive(Debug, Deserialize)]
struct MeetingRow {
    group_id: String,
    start: String,
    end: String,
    building_ids: String,
}

/// Load `lectures.csv` (section_id,start,end,building_id,room_id) and
/// `meetings.csv` (group_id,start,end,building_ids; `*` means anywhere,
/// several buildings separate with `;`).
pub fn load_schedule(
    lectures_path: impl AsRef<Path>,
    meetings_path: impl AsRef<Path>,
    config: &PipelineConfig,
) -> Result<Schedule, IngestError> {
    let mut issues = Vec::new();
    let mut schedule = Schedule::default();

    let mut rdr = csv::Reader::from_path(lectures_path.as_ref())?;
    for (i, row) in rdr.deserialize::<LectureRow>().enumerate() {
        let row = row?;
        let parse = |s: &str| {
            parse_timestamp(s, config).map_err(|e| format!("lectures row {}: {e}", i + 2))
        };
        let (start, end) = match (parse(&row.start), parse(&row.end)) {
            (Ok(s), Ok(e)) => (s, e),
            (a, b) => {
                issues.extend(a.err());
                issues.extend(b.err());
                continue;
            }
        };
        if start >= end {
            issues.push(format!("lectures row {}: degenerate interval", i + 2));
            continue;
        }
        schedule.lectures.push(Lecture {
            section_id: row.section_id,
            interval: TimeInterval::new(start, end),
            room: RoomKey::new(row.building_id, row.room_id),
        });
    }

    let mut rdr = csv::Reader::from_path(meetings_path.as_ref())?;
    for (i, row) in rdr.deserialize::<MeetingRow>().enumerate() {
        let row = row?;
        let parse = |s: &str| {
            parse_timestamp(s, config).map_err(|e| format!("meetings row {}: {e}", i + 2))
        };
        let (start, end) = match (parse(&row.start), parse(&row.end)) {
            (Ok(s), Ok(e)) => (s, e),
            (a, b) => {
                issues.extend(a.err());
                issues.extend(b.err());
                continue;
            }
        };
        if start >= end {
            issues.push(format!("meetings row {}: degenerate interval", i + 2));
            continue;
        }
        let buildings = if row.building_ids.trim() == "*" {
            None
        } else {
            let set: BTreeSet<String> = row
                .building_ids
                .split(';')
                .map(|b| b.trim().to_string())
                .filter(|b| !b.is_empty())
                .collect();
            if set.is_empty() {
                issues.push(format!("meetings row {}: empty building list", i + 2));
                continue;
            }
            Some(set)
        };
        schedule.meetings.push(Meeting {
            group_id: row.group_id,
            interval: TimeInterval::new(start, end),
            buildings,
        });
    }

    if issues.is_empty() {
        Ok(schedule)
    } else {
        Err(IngestError::Validation(issues))
    }
}

#[derive(Debug, Deserialize)]
struct AttendanceRow {
    user_id: String,
    lecture_index: usize,
    present: u8,
}

/// Load `attendance.csv` (user_id,lecture_index,present). Indices refer to
/// the user's section lecture list, in start order.
pub fn load_attendance(
    path: impl AsRef<Path>,
    roster: &Roster,
    schedule: &Schedule,
) -> Result<AttendanceRecord, IngestError> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut record = AttendanceRecord::default();
    let mut issues = Vec::new();
    let mut lectures_per_section: HashMap<&str, usize> = HashMap::new();
    for (i, row) in rdr.deserialize::<AttendanceRow>().enumerate() {
        let row = row?;
        let Some(section) = roster.section(&row.user_id) else {
            issues.push(format!(
                "attendance row {}: user {:?} not in roster",
                i + 2,
                row.user_id
            ));
            continue;
        };
        let n_lectures = *lectures_per_section
            .entry(section)
            .or_insert_with(|| schedule.section_lectures(section).len());
        if row.lecture_index >= n_lectures {
            issues.push(format!(
                "attendance row {}: lecture index {} out of range for section {:?} ({} lectures)",
                i + 2,
                row.lecture_index,
                section,
                n_lectures
            ));
            continue;
        }
        let mark = match row.present {
            1 => Mark::Present,
            0 => Mark::Absent,
            other => {
                issues.push(format!("attendance row {}: present must be 0/1, got {other}", i + 2));
                continue;
            }
        };
        record.entries.insert((row.user_id, row.lecture_index), mark);
    }
    if issues.is_empty() {
        Ok(record)
    } else {
        Err(IngestError::Validation(issues))
    }
}

/// Referential checks across inputs: lecture rooms and meeting buildings
/// must exist in the registry, and every roster section must hold lectures.
pub fn validate_cross_references(
    registry: &ApRegistry,
    roster: &Roster,
    schedule: &Schedule,
) -> Result<(), IngestError> {
    let mut issues = Vec::new();
    let rooms = registry.room_keys();
    let buildings: BTreeSet<&str> = registry.iter().map(|ap| ap.building_id.as_str()).collect();

    for lecture in &schedule.lectures {
        if !rooms.contains(&lecture.room) {
            issues.push(format!(
                "lecture for section {:?} references unregistered room {}",
                lecture.section_id, lecture.room
            ));
        }
    }
    let sections_with_lectures: BTreeSet<&str> = schedule
        .lectures
        .iter()
        .map(|l| l.section_id.as_str())
        .collect();
    for (user, section) in &roster.section_of {
        if !sections_with_lectures.contains(section.as_str()) {
            issues.push(format!(
                "roster user {user:?} references section {section:?} with no scheduled lectures"
            ));
        }
    }
    let groups = roster.groups();
    for meeting in &schedule.meetings {
        if !groups.contains(meeting.group_id.as_str()) {
            issues.push(format!(
                "meeting references unknown group {:?}",
                meeting.group_id
            ));
        }
        if let Some(named) = &meeting.buildings {
            for b in named {
                if !buildings.contains(b.as_str()) {
                    issues.push(format!(
                        "meeting for group {:?} references unregistered building {b:?}",
                        meeting.group_id
                    ));
                }
            }
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(IngestError::Validation(issues))
    }
}

/// Write a corpus in the canonical log format.
pub fn write_corpus_csv(
    corpus: &LogCorpus,
    config: &PipelineConfig,
    path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    let mut f = File::create(path)?;
    f.write_all(corpus.to_canonical_csv(config).as_bytes())?;
    Ok(())
}

pub fn write_registry_csv(registry: &ApRegistry, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ap_id", "building_id", "room_id", "category"])?;
    let mut aps: Vec<&AccessPoint> = registry.iter().collect();
    aps.sort_by(|a, b| a.ap_id.cmp(&b.ap_id));
    for ap in aps {
        w.write_record([
            ap.ap_id.as_str(),
            ap.building_id.as_str(),
            ap.room_id.as_str(),
            ap.category.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roster_csv(roster: &Roster, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "group_id", "section_id", "instructor_id"])?;
    for (user, group) in &roster.group_of {
        let section = roster.section(user).unwrap_or("");
        let instructor = roster.instructor(section).unwrap_or("");
        w.write_record([user.as_str(), group.as_str(), section, instructor])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schedule_csv(
    schedule: &Schedule,
    config: &PipelineConfig,
    lectures_path: impl AsRef<Path>,
    meetings_path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(lectures_path)?;
    w.write_record(["section_id", "start", "end", "building_id", "room_id"])?;
    for l in &schedule.lectures {
        w.write_record([
            l.section_id.as_str(),
            &render_timestamp(l.interval.start, config),
            &render_timestamp(l.interval.end, config),
            l.room.building.as_str(),
            l.room.room.as_str(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(meetings_path)?;
    w.write_record(["group_id", "start", "end", "building_ids"])?;
    for m in &schedule.meetings {
        let buildings = match &m.buildings {
            None => "*".to_string(),
            Some(set) => set.iter().cloned().collect::<Vec<_>>().join(";"),
        };
        w.write_record([
            m.group_id.as_str(),
            &render_timestamp(m.interval.start, config),
            &render_timestamp(m.interval.end, config),
            &buildings,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_attendance_csv(
    attendance: &AttendanceRecord,
    path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "lecture_index", "present"])?;
    for ((user, idx), mark) in &attendance.entries {
        let present = if *mark == Mark::Present { "1" } else { "0" };
        w.write_record([user.as_str(), &idx.to_string(), present])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a whole file as UTF-8 (small helper shared by the CLI).
pub fn read_to_string(path: impl AsRef<Path>) -> Result<String, IngestError> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}
