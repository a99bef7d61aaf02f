//! Week-level behavioral features and their semester summaries.
//!
//! Two families per user:
//!  * individual (5 per week): inferred lecture attendance count and dwell
//!    time at Any / Academic / Residential / Recreation buildings;
//!  * group collocation (9 contexts x absolute/relative = 18 per week),
//!    where a context is a (Scheduled | Class | Other) classification
//!    crossed with a building-category filter.
//!
//! Semester summaries compress each weekly series into mean, median,
//! population standard deviation and approximate entropy: 5*4 = 20
//! individual and 18*4 = 72 collocation values per user.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::collocation::{bridge_gaps, raw_overlaps, CollocationEpisode, Context};
use crate::model::{
    ApRegistry, Category, PipelineConfig, Roster, Schedule, TimeInterval,
};
use crate::segmentation::{DwellSegment, DwellStatus};
use crate::validation::{AttendanceInference, InferredMark};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("approximate entropy needs more than m = {m} points, got {n}")]
    SeriesTooShort { n: usize, m: usize },
    #[error("approximate entropy tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad feature row: {0}")]
    BadRow(String),
}

/// Building-category filter applied to collocation contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategoryFilter {
    Any,
    Academic,
    Residential,
    Recreation,
}

impl CategoryFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            CategoryFilter::Any => "any",
            CategoryFilter::Academic => "academic",
            CategoryFilter::Residential => "residential",
            CategoryFilter::Recreation => "recreation",
        }
    }

    pub fn admits(self, category: Category) -> bool {
        match self {
            CategoryFilter::Any => true,
            CategoryFilter::Academic => category == Category::Academic,
            CategoryFilter::Residential => category == Category::Residential,
            CategoryFilter::Recreation => category == Category::Recreation,
        }
    }
}

/// The nine collocation slots, in column order. Scheduled and Other get
/// the full category split; Class is inherently academic time.
pub const COLLOCATION_SLOTS: [(Context, CategoryFilter); 9] = [
    (Context::Scheduled, CategoryFilter::Any),
    (Context::Scheduled, CategoryFilter::Academic),
    (Context::Scheduled, CategoryFilter::Residential),
    (Context::Scheduled, CategoryFilter::Recreation),
    (Context::Class, CategoryFilter::Academic),
    (Context::Other, CategoryFilter::Any),
    (Context::Other, CategoryFilter::Academic),
    (Context::Other, CategoryFilter::Residential),
    (Context::Other, CategoryFilter::Recreation),
];

/// The five individual weekly features, in column order.
pub const INDIVIDUAL_NAMES: [&str; 5] = [
    "attendance",
    "dwell_any",
    "dwell_academic",
    "dwell_residential",
    "dwell_recreation",
];

pub const SUMMARY_STATS: [&str; 4] = ["mean", "median", "std", "apen"];

/// One user-week of raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyFeatures {
    pub user_id: String,
    pub week: usize,
    /// Lectures inferred Present this week.
    pub attendance: f64,
    /// Dwell seconds at [Any, Academic, Residential, Recreation].
    pub dwell: [f64; 4],
    /// Seconds the user spent in group episodes, per slot.
    pub collocation_abs: [f64; 9],
    /// Same, divided by the group's total collocated seconds in the slot.
    pub collocation_rel: [f64; 9],
}

impl WeeklyFeatures {
    pub fn individual(&self) -> [f64; 5] {
        [
            self.attendance,
            self.dwell[0],
            self.dwell[1],
            self.dwell[2],
            self.dwell[3],
        ]
    }

    /// Abs/rel pairs per slot: 18 values.
    pub fn collocation(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        for i in 0..9 {
            out[2 * i] = self.collocation_abs[i];
            out[2 * i + 1] = self.collocation_rel[i];
        }
        out
    }
}

/// Classify a group episode: Scheduled beats Class beats Other when
/// windows overlap (a reported meeting is the most specific signal).
pub fn classify_context(
    episode: &CollocationEpisode,
    schedule: &Schedule,
    roster: &Roster,
) -> Context {
    let group = episode.members.iter().find_map(|u| roster.group(u));
    if let Some(group) = group {
        let scheduled = schedule.meetings_of(group).iter().any(|m| {
            episode.interval.overlap(&m.interval).is_some()
                && m.buildings
                    .as_ref()
                    .is_none_or(|set| set.contains(&episode.room.building))
        });
        if scheduled {
            return Context::Scheduled;
        }
    }
    // Class time counts even outside the assigned lecture room, so only
    // the lecture *times* of the members' sections matter here.
    let mut sections: Vec<&str> = episode
        .members
        .iter()
        .filter_map(|u| roster.section(u))
        .collect();
    sections.sort_unstable();
    sections.dedup();
    for section in sections {
        for lecture in schedule.section_lectures(section) {
            if episode.interval.overlap(&lecture.interval).is_some() {
                return Context::Class;
            }
        }
    }
    Context::Other
}

/// Collocation episodes restricted to each group's members, bridged with
/// `gap_threshold` seconds and context-classified.
pub fn group_episodes(
    dwells: &[DwellSegment],
    roster: &Roster,
    schedule: &Schedule,
    gap_threshold: f64,
) -> BTreeMap<String, Vec<CollocationEpisode>> {
    // Partition the dwells up front; overlap detection and gap coverage
    // only ever look at the group's own members.
    let mut by_group: BTreeMap<&str, Vec<DwellSegment>> = BTreeMap::new();
    for d in dwells {
        if let Some(group) = roster.group(&d.user_id) {
            by_group.entry(group).or_default().push(d.clone());
        }
    }
    // Groups are independent; collecting into a BTreeMap keyed by group
    // keeps the result identical regardless of thread count.
    let groups: Vec<&str> = roster.groups().into_iter().collect();
    groups
        .par_iter()
        .map(|group| {
            let members = roster
                .members_of(group)
                .into_iter()
                .map(str::to_string)
                .collect();
            let group_dwells = by_group.get(group).map_or(&[][..], Vec::as_slice);
            let raw = raw_overlaps(group_dwells, &members);
            let mut bridged = bridge_gaps(&raw, group_dwells, gap_threshold);
            for ep in &mut bridged {
                ep.context = classify_context(ep, schedule, roster);
            }
            (group.to_string(), bridged)
        })
        .collect()
}

/// Everything weekly feature extraction reads.
pub struct FeatureInputs<'a> {
    pub inference: &'a AttendanceInference,
    pub dwells: &'a [DwellSegment],
    pub group_episodes: &'a BTreeMap<String, Vec<CollocationEpisode>>,
    pub roster: &'a Roster,
    pub schedule: &'a Schedule,
    pub registry: &'a ApRegistry,
    pub config: &'a PipelineConfig,
}

/// Seconds covered by the union of `intervals` (may overlap).
fn union_secs(mut intervals: Vec<TimeInterval>) -> i64 {
    intervals.retain(|iv| iv.duration_secs() > 0);
    intervals.sort_by_key(|iv| (iv.start, iv.end));
    let mut total = 0;
    let mut cursor = None;
    for iv in intervals {
        match cursor {
            Some((_, end)) if iv.start <= end => {
                if iv.end > end {
                    total += iv.end.0 - end.0;
                    cursor = Some((iv.start, iv.end));
                }
            }
            _ => {
                total += iv.duration_secs();
                cursor = Some((iv.start, iv.end));
            }
        }
    }
    total
}

impl FeatureInputs<'_> {
    /// Raw features for one user in one study week.
    pub fn weekly(&self, user: &str, week: usize) -> WeeklyFeatures {
        let weeks = self.config.study_weeks();
        let window = weeks[week];

        // Attendance: inferred-Present lectures starting this week.
        let section = self.roster.section(user);
        let mut attendance = 0u32;
        if let Some(section) = section {
            let lectures = self.schedule.section_lectures(section);
            for ((u, idx), mark) in &self.inference.entries {
                if u != user || *mark != InferredMark::Present {
                    continue;
                }
                let Some(lecture) = lectures.get(*idx) else {
                    continue;
                };
                if self.config.week_index(lecture.interval.start) == week as i64 {
                    attendance += 1;
                }
            }
        }

        // Dwell time by category. A user's dwells never overlap each
        // other, so plain summation equals union.
        let mut dwell = [0.0f64; 4];
        for d in self.dwells {
            if d.user_id != user || d.status != DwellStatus::Dwelling {
                continue;
            }
            let Some(part) = d.interval.overlap(&window) else {
                continue;
            };
            let secs = part.duration_secs() as f64;
            dwell[0] += secs;
            match self.registry.room_category(&d.room) {
                Some(Category::Academic) => dwell[1] += secs,
                Some(Category::Residential) => dwell[2] += secs,
                Some(Category::Recreation) => dwell[3] += secs,
                _ => {}
            }
        }

        let mut collocation_abs = [0.0f64; 9];
        let mut collocation_rel = [0.0f64; 9];
        let episodes = self
            .roster
            .group(user)
            .and_then(|g| self.group_episodes.get(g));
        if let Some(episodes) = episodes {
            for (slot, (ctx, cat)) in COLLOCATION_SLOTS.iter().enumerate() {
                let mut group_parts = Vec::new();
                let mut user_parts = Vec::new();
                for ep in episodes {
                    if ep.context != *ctx {
                        continue;
                    }
                    let room_cat = self
                        .registry
                        .room_category(&ep.room)
                        .unwrap_or(Category::Other);
                    if !cat.admits(room_cat) {
                        continue;
                    }
                    let Some(part) = ep.interval.overlap(&window) else {
                        continue;
                    };
                    group_parts.push(part);
                    if ep.members.contains(user) {
                        user_parts.push(part);
                    }
                }
                // Union, not sum: bridged episodes of different member
                // sets may overlap in time.
                let denom = union_secs(group_parts) as f64;
                let abs = union_secs(user_parts) as f64;
                collocation_abs[slot] = abs;
                collocation_rel[slot] = if denom > 0.0 { abs / denom } else { 0.0 };
            }
        }

        WeeklyFeatures {
            user_id: user.to_string(),
            week,
            attendance: f64::from(attendance),
            dwell,
            collocation_abs,
            collocation_rel,
        }
    }

    /// All users x all study weeks, sorted by (user, week).
    pub fn weekly_table(&self) -> Vec<WeeklyFeatures> {
        let n_weeks = self.config.study_weeks().len();
        let mut rows = Vec::new();
        for user in self.roster.users() {
            for week in 0..n_weeks {
                rows.push(self.weekly(user, week));
            }
        }
        rows
    }

    /// Semester feature vectors for every roster user.
    pub fn semester_table(&self) -> Vec<FeatureVector> {
        let table = self.weekly_table();
        let mut out = Vec::new();
        for user in self.roster.users() {
            let rows: Vec<&WeeklyFeatures> =
                table.iter().filter(|r| &r.user_id == user).collect();
            out.push(semester_summary(user, &rows, self.config));
        }
        out
    }
}

/// Approximate entropy per Pincus: ApEn(m, r) = phi_m(r) - phi_{m+1}(r),
/// Chebyshev distance, self-matches included.
pub fn approx_entropy(series: &[f64], m: usize, r: f64) -> Result<f64, FeatureError> {
    let n = series.len();
    if n <= m {
        return Err(FeatureError::SeriesTooShort { n, m });
    }
    if r <= 0.0 {
        return Err(FeatureError::BadTolerance(r));
    }
    let phi = |mm: usize| -> f64 {
        let count = n - mm + 1;
        let mut sum = 0.0;
        for i in 0..count {
            let mut matches = 0usize;
            for j in 0..count {
                if (0..mm).all(|k| (series[i + k] - series[j + k]).abs() <= r) {
                    matches += 1;
                }
            }
            sum += (matches as f64 / count as f64).ln();
        }
        sum / count as f64
    };
    Ok(phi(m) - phi(m + 1))
}

fn mean(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    series.iter().sum::<f64>() / series.len() as f64
}

fn median(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Population standard deviation.
fn pop_std(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let mu = mean(series);
    (series.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / series.len() as f64).sqrt()
}

/// [mean, median, std, apen] for one weekly series. ApEn is 0 for a
/// constant series (std 0 leaves no tolerance) and for series too short
/// to form a single template.
fn summarize(series: &[f64], config: &PipelineConfig) -> [f64; 4] {
    let std = pop_std(series);
    let apen = if std == 0.0 || series.len() <= config.apen_m {
        0.0
    } else {
        approx_entropy(series, config.apen_m, config.apen_r_factor * std)
            .expect("guarded: series long enough and tolerance positive")
    };
    [mean(series), median(series), std, apen]
}

/// Semester summary of one user: 20 individual + 72 collocation values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub user_id: String,
    pub individual: Vec<f64>,
    pub collocation: Vec<f64>,
}

impl FeatureVector {
    pub fn values(&self) -> Vec<f64> {
        let mut v = self.individual.clone();
        v.extend_from_slice(&self.collocation);
        v
    }
}

/// Collapse one user's weekly rows (any order) into the 92 summaries.
pub fn semester_summary(
    user_id: &str,
    weekly: &[&WeeklyFeatures],
    config: &PipelineConfig,
) -> FeatureVector {
    let mut rows: Vec<&WeeklyFeatures> = weekly.to_vec();
    rows.sort_by_key(|r| r.week);
    let series = |pick: &dyn Fn(&WeeklyFeatures) -> f64| -> Vec<f64> {
        rows.iter().map(|r| pick(r)).collect()
    };
    let mut individual = Vec::with_capacity(20);
    for i in 0..5 {
        individual.extend(summarize(&series(&|r| r.individual()[i]), config));
    }
    let mut collocation = Vec::with_capacity(72);
    for i in 0..18 {
        collocation.extend(summarize(&series(&|r| r.collocation()[i]), config));
    }
    FeatureVector {
        user_id: user_id.to_string(),
        individual,
        collocation,
    }
}

/// Column names for the 20 individual summaries.
pub fn individual_summary_names() -> Vec<String> {
    let mut names = Vec::with_capacity(20);
    for feature in INDIVIDUAL_NAMES {
        for stat in SUMMARY_STATS {
            names.push(format!("{feature}_{stat}"));
        }
    }
    names
}

/// Column names for the 72 collocation summaries:
/// `<context>_<category>_<variant>_<stat>`.
pub fn collocation_summary_names() -> Vec<String> {
    let mut names = Vec::with_capacity(72);
    for (ctx, cat) in COLLOCATION_SLOTS {
        for variant in ["abs", "rel"] {
            for stat in SUMMARY_STATS {
                names.push(format!(
                    "{}_{}_{variant}_{stat}",
                    ctx.as_str(),
                    cat.as_str()
                ));
            }
        }
    }
    names
}

pub fn all_summary_names() -> Vec<String> {
    let mut names = individual_summary_names();
    names.extend(collocation_summary_names());
    names
}

/// Write `features.csv`: one row per user, user_id + 92 named columns.
pub fn write_features_csv(
    vectors: &[FeatureVector],
    path: impl AsRef<Path>,
) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id".to_string()];
    header.extend(all_summary_names());
    w.write_record(&header)?;
    for v in vectors {
        let mut record = vec![v.user_id.clone()];
        record.extend(v.values().iter().map(|x| x.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Read `features.csv` back; returns (column names, vectors).
pub fn load_features_csv(
    path: impl AsRef<Path>,
) -> Result<(Vec<String>, Vec<FeatureVector>), FeatureError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("user_id") {
        return Err(FeatureError::BadRow(
            "features.csv must start with a user_id column".into(),
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if names.len() != 92 {
        return Err(FeatureError::BadRow(format!(
            "expected 92 feature columns, found {}",
            names.len()
        )));
    }
    let mut vectors = Vec::new();
    for row in r.records() {
        let row = row?;
        if row.len() != 93 {
            return Err(FeatureError::BadRow(format!(
                "expected 93 fields, found {}",
                row.len()
            )));
        }
        let mut values = Vec::with_capacity(92);
        for field in row.iter().skip(1) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|e| FeatureError::BadRow(format!("bad value {field:?}: {e}")))?,
            );
        }
        vectors.push(FeatureVector {
            user_id: row[0].to_string(),
            individual: values[..20].to_vec(),
            collocation: values[20..].to_vec(),
        });
    }
    Ok((names, vectors))
}
