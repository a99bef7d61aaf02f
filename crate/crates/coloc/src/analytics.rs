//! Downstream reports over collocation episodes: weekly interaction
//! graphs (lecture time excluded per user), their semester aggregate,
//! building-category space usage, and lecture punctuality.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::collocation::CollocationEpisode;
use crate::model::{
    ApRegistry, Category, PipelineConfig, Roster, Schedule, TimeInterval, Timestamp,
};
use crate::segmentation::{DwellSegment, DwellStatus};
use crate::validation::{AttendanceInference, InferredMark};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad row: {0}")]
    BadRow(String),
}

/// Undirected collocation-duration graph for one period. Edge keys are
/// ordered (a < b), so the graph is symmetric by construction; weights
/// are positive seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    /// "week-<n>" or "semester".
    pub period: String,
    /// Edge-incident users, annotated with their group id.
    pub nodes: BTreeMap<String, String>,
    pub edges: BTreeMap<(String, String), i64>,
}

impl InteractionGraph {
    fn empty(period: String) -> InteractionGraph {
        InteractionGraph {
            period,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
        }
    }

    fn add_edge(&mut self, a: &str, b: &str, secs: i64, roster: &Roster) {
        if secs <= 0 || a == b {
            return;
        }
        let key = if a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        *self.edges.entry(key).or_insert(0) += secs;
        for u in [a, b] {
            self.nodes
                .entry(u.to_string())
                .or_insert_with(|| roster.group(u).unwrap_or("unknown").to_string());
        }
    }

    /// Sum of the weights of all edges incident to `user`.
    pub fn node_strength(&self, user: &str) -> i64 {
        self.edges
            .iter()
            .filter(|((a, b), _)| a == user || b == user)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn total_weight(&self) -> i64 {
        self.edges.values().sum()
    }
}

/// Merged, sorted lecture intervals per section.
fn section_lecture_spans(schedule: &Schedule) -> BTreeMap<String, Vec<TimeInterval>> {
    let mut spans: BTreeMap<String, Vec<TimeInterval>> = BTreeMap::new();
    for lecture in &schedule.lectures {
        spans
            .entry(lecture.section_id.clone())
            .or_default()
            .push(lecture.interval);
    }
    for list in spans.values_mut() {
        list.sort_by_key(|iv| (iv.start, iv.end));
        let mut merged: Vec<TimeInterval> = Vec::with_capacity(list.len());
        for iv in list.drain(..) {
            match merged.last_mut() {
                Some(last) if iv.start <= last.end => {
                    if iv.end > last.end {
                        last.end = iv.end;
                    }
                }
                _ => merged.push(iv),
            }
        }
        *list = merged;
    }
    spans
}

/// Union of two merged interval lists, merged again.
fn merge_spans(a: &[TimeInterval], b: &[TimeInterval]) -> Vec<TimeInterval> {
    let mut all: Vec<TimeInterval> = a.iter().chain(b).copied().collect();
    all.sort_by_key(|iv| (iv.start, iv.end));
    let mut merged: Vec<TimeInterval> = Vec::with_capacity(all.len());
    for iv in all {
        match merged.last_mut() {
            Some(last) if iv.start <= last.end => {
                if iv.end > last.end {
                    last.end = iv.end;
                }
            }
            _ => merged.push(iv),
        }
    }
    merged
}

fn covered_secs(span: &TimeInterval, excludes: &[TimeInterval]) -> i64 {
    excludes
        .iter()
        .filter_map(|e| span.overlap(e))
        .map(|o| o.duration_secs())
        .sum()
}

/// One interaction graph per study week. An edge (u, v) accumulates the
/// pair's episode time inside the week, minus any overlap with u's or
/// v's own section lectures; other sections' lectures do not censor the
/// pair. Cross-group edges are kept.
pub fn weekly_graphs(
    episodes: &[CollocationEpisode],
    roster: &Roster,
    schedule: &Schedule,
    config: &PipelineConfig,
) -> Vec<InteractionGraph> {
    let lecture_spans = section_lecture_spans(schedule);
    let empty: Vec<TimeInterval> = Vec::new();
    let spans_of = |user: &str| -> &[TimeInterval] {
        roster
            .section(user)
            .and_then(|s| lecture_spans.get(s))
            .map_or(&empty[..], Vec::as_slice)
    };
    // Exclusion list per unordered section pair, built lazily.
    let mut pair_excl: BTreeMap<(String, String), Vec<TimeInterval>> = BTreeMap::new();

    let mut graphs = Vec::new();
    for (w, window) in config.study_weeks().iter().enumerate() {
        let mut graph = InteractionGraph::empty(format!("week-{w}"));
        for ep in episodes {
            let Some(clip) = ep.interval.overlap(window) else {
                continue;
            };
            let members: Vec<&String> = ep.members.iter().collect();
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    let (u, v) = (members[i].as_str(), members[j].as_str());
                    let mut sections = [
                        roster.section(u).unwrap_or(""),
                        roster.section(v).unwrap_or(""),
                    ];
                    sections.sort_unstable();
                    let key = (sections[0].to_string(), sections[1].to_string());
                    let excl = pair_excl.entry(key).or_insert_with(|| {
                        merge_spans(spans_of(u), spans_of(v))
                    });
                    let secs = clip.duration_secs() - covered_secs(&clip, excl);
                    graph.add_edge(u, v, secs, roster);
                }
            }
        }
        graphs.push(graph);
    }
    graphs
}

/// Edge-wise sum of the weekly graphs.
pub fn aggregate_graph(weekly: &[InteractionGraph]) -> InteractionGraph {
    let mut graph = InteractionGraph::empty("semester".to_string());
    for g in weekly {
        for ((a, b), w) in &g.edges {
            *graph.edges.entry((a.clone(), b.clone())).or_insert(0) += w;
        }
        for (user, group) in &g.nodes {
            graph.nodes.entry(user.clone()).or_insert_with(|| group.clone());
        }
    }
    graph
}

/// Collocated person-seconds per participant, by week and building
/// category.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceUsageRow {
    pub week: usize,
    pub category: Category,
    pub mean_seconds: f64,
}

/// For every (week, category) cell: sum of episode duration x member
/// count over episodes in rooms of that category, divided by the cohort
/// size. Categories with no registered buildings stay zero.
pub fn space_usage(
    episodes: &[CollocationEpisode],
    registry: &ApRegistry,
    config: &PipelineConfig,
    participants: usize,
) -> Vec<SpaceUsageRow> {
    let weeks = config.study_weeks();
    let mut cells: BTreeMap<(usize, &'static str), f64> = BTreeMap::new();
    for (w, window) in weeks.iter().enumerate() {
        for cat in Category::ALL {
            cells.insert((w, cat.as_str()), 0.0);
        }
        for ep in episodes {
            let Some(clip) = ep.interval.overlap(window) else {
                continue;
            };
            let Some(cat) = registry.room_category(&ep.room) else {
                continue;
            };
            let person_seconds = clip.duration_secs() as f64 * ep.members.len() as f64;
            *cells.get_mut(&(w, cat.as_str())).unwrap() += person_seconds;
        }
    }
    let denom = participants.max(1) as f64;
    cells
        .into_iter()
        .map(|((week, cat), total)| SpaceUsageRow {
            week,
            category: cat.parse().expect("category round-trip"),
            mean_seconds: total / denom,
        })
        .collect()
}

/// Arrival/departure offsets around one attended lecture: positive means
/// late (entered after start / left after end).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PunctualityRow {
    pub user_id: String,
    /// Index into the user's section lecture list.
    pub lecture_index: usize,
    pub entry_delta_secs: i64,
    pub exit_delta_secs: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PunctualityReport {
    pub rows: Vec<PunctualityRow>,
}

fn median_i64(mut values: Vec<i64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid] as f64
    } else {
        (values[mid - 1] + values[mid]) as f64 / 2.0
    })
}

impl PunctualityReport {
    pub fn median_entry_secs(&self) -> Option<f64> {
        median_i64(self.rows.iter().map(|r| r.entry_delta_secs).collect())
    }

    pub fn median_exit_secs(&self) -> Option<f64> {
        median_i64(self.rows.iter().map(|r| r.exit_delta_secs).collect())
    }
}

/// Entry/exit offsets for every lecture a user was inferred Present at:
/// earliest dwell start and latest dwell end among the user's dwells at
/// the lecture room that overlap the lecture.
pub fn punctuality(
    dwells: &[DwellSegment],
    inference: &AttendanceInference,
    roster: &Roster,
    schedule: &Schedule,
) -> PunctualityReport {
    let mut per_user: BTreeMap<&str, Vec<&DwellSegment>> = BTreeMap::new();
    for d in dwells {
        if d.status == DwellStatus::Dwelling {
            per_user.entry(&d.user_id).or_default().push(d);
        }
    }
    let mut rows = Vec::new();
    for ((user, idx), mark) in &inference.entries {
        if *mark != InferredMark::Present {
            continue;
        }
        let Some(section) = roster.section(user) else {
            continue;
        };
        let lectures = schedule.section_lectures(section);
        let Some(lecture) = lectures.get(*idx) else {
            continue;
        };
        let mut earliest: Option<Timestamp> = None;
        let mut latest: Option<Timestamp> = None;
        for d in per_user.get(user.as_str()).into_iter().flatten() {
            if d.room != lecture.room {
                continue;
            }
            let overlaps = d.interval.start < lecture.interval.end
                && d.interval.end > lecture.interval.start;
            if !overlaps {
                continue;
            }
            if earliest.is_none_or(|t| d.interval.start < t) {
                earliest = Some(d.interval.start);
            }
            if latest.is_none_or(|t| d.interval.end > t) {
                latest = Some(d.interval.end);
            }
        }
        let (Some(start), Some(end)) = (earliest, latest) else {
            continue; // Present without a matching dwell cannot happen,
                      // but stay defensive over hand-built inputs.
        };
        rows.push(PunctualityRow {
            user_id: user.clone(),
            lecture_index: *idx,
            entry_delta_secs: start.0 - lecture.interval.start.0,
            exit_delta_secs: end.0 - lecture.interval.end.0,
        });
    }
    PunctualityReport { rows }
}

// ---------------------------------------------------------------------
// Exports

/// Edge-list CSV: `user_a,user_b,seconds`, keys ascending.
pub fn write_graph_csv(
    graph: &InteractionGraph,
    path: impl AsRef<Path>,
) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_a", "user_b", "seconds"])?;
    for ((a, b), secs) in &graph.edges {
        w.write_record([a.as_str(), b.as_str(), &secs.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuild a graph from its edge list; node groups come from the roster.
pub fn load_graph_csv(
    path: impl AsRef<Path>,
    roster: &Roster,
    period: &str,
) -> Result<InteractionGraph, AnalyticsError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut graph = InteractionGraph::empty(period.to_string());
    for row in r.records() {
        let row = row?;
        if row.len() != 3 {
            return Err(AnalyticsError::BadRow(format!(
                "expected 3 fields, found {}",
                row.len()
            )));
        }
        let secs: i64 = row[2]
            .parse()
            .map_err(|e| AnalyticsError::BadRow(format!("bad seconds {:?}: {e}", &row[2])))?;
        graph.add_edge(&row[0], &row[1], secs, roster);
    }
    Ok(graph)
}

/// DOT rendering; nodes are colored by group (12-color wheel).
pub fn graph_to_dot(graph: &InteractionGraph) -> String {
    let mut groups: Vec<&String> = graph.nodes.values().collect();
    groups.sort();
    groups.dedup();
    let color_of = |group: &String| -> usize {
        groups.iter().position(|g| *g == group).unwrap_or(0) % 12 + 1
    };
    let mut out = String::new();
    let _ = writeln!(out, "graph \"{}\" {{", graph.period);
    let _ = writeln!(out, "  node [style=filled colorscheme=set312];");
    for (user, group) in &graph.nodes {
        let _ = writeln!(
            out,
            "  \"{user}\" [fillcolor={} tooltip=\"{group}\"];",
            color_of(group)
        );
    }
    for ((a, b), secs) in &graph.edges {
        let _ = writeln!(out, "  \"{a}\" -- \"{b}\" [weight={secs}];");
    }
    out.push_str("}\n");
    out
}

pub fn write_graph_dot(
    graph: &InteractionGraph,
    path: impl AsRef<Path>,
) -> Result<(), AnalyticsError> {
    std::fs::write(path, graph_to_dot(graph))?;
    Ok(())
}

pub fn write_space_usage_csv(
    rows: &[SpaceUsageRow],
    path: impl AsRef<Path>,
) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["week", "category", "mean_seconds"])?;
    for row in rows {
        w.write_record([
            row.week.to_string(),
            row.category.as_str().to_string(),
            row.mean_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_space_usage_csv(
    path: impl AsRef<Path>,
) -> Result<Vec<SpaceUsageRow>, AnalyticsError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.records() {
        let row = row?;
        let bad = |what: &str| AnalyticsError::BadRow(format!("bad {what} in {row:?}"));
        rows.push(SpaceUsageRow {
            week: row[0].parse().map_err(|_| bad("week"))?,
            category: row[1].parse().map_err(|_| bad("category"))?,
            mean_seconds: row[2].parse().map_err(|_| bad("mean_seconds"))?,
        });
    }
    Ok(rows)
}

pub fn write_punctuality_csv(
    report: &PunctualityReport,
    path: impl AsRef<Path>,
) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "lecture_index", "entry_delta_secs", "exit_delta_secs"])?;
    for row in &report.rows {
        w.write_record([
            row.user_id.clone(),
            row.lecture_index.to_string(),
            row.entry_delta_secs.to_string(),
            row.exit_delta_secs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_punctuality_csv(
    path: impl AsRef<Path>,
) -> Result<PunctualityReport, AnalyticsError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.records() {
        let row = row?;
        let bad = |what: &str| AnalyticsError::BadRow(format!("bad {what} in {row:?}"));
        rows.push(PunctualityRow {
            user_id: row[0].to_string(),
            lecture_index: row[1].parse().map_err(|_| bad("lecture_index"))?,
            entry_delta_secs: row[2].parse().map_err(|_| bad("entry_delta_secs"))?,
            exit_delta_secs: row[3].parse().map_err(|_| bad("exit_delta_secs"))?,
        });
    }
    Ok(PunctualityReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::{pairwise_durations, Context};
    use crate::model::{AccessPoint, Lecture, RoomKey};
    use std::collections::BTreeSet;

    const MON: i64 = 1_554_076_800; // 2019-04-01, a Monday

    fn iv(a: i64, b: i64) -> TimeInterval {
        TimeInterval::new(Timestamp(a), Timestamp(b))
    }

    fn config(weeks: i64) -> PipelineConfig {
        PipelineConfig {
            study_window: iv(MON, MON + weeks * 7 * 86_400),
            ..PipelineConfig::default()
        }
    }

    fn roster() -> Roster {
        let m = |v: &[(&str, &str)]| -> BTreeMap<String, String> {
            v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
        };
        Roster {
            group_of: m(&[("u1", "g1"), ("u2", "g1"), ("u3", "g1"), ("u4", "g2")]),
            section_of: m(&[("u1", "s1"), ("u2", "s1"), ("u3", "s1"), ("u4", "s2")]),
            instructor_of: m(&[("s1", "i1"), ("s2", "i2")]),
        }
    }

    fn episode(members: &[&str], room: (&str, &str), a: i64, b: i64) -> CollocationEpisode {
        CollocationEpisode {
            members: members.iter().map(|s| s.to_string()).collect(),
            room: RoomKey::new(room.0, room.1),
            interval: iv(a, b),
            bridged_gaps: vec![],
            context: Context::Other,
        }
    }

    fn registry() -> ApRegistry {
        let ap = |id: &str, b: &str, r: &str, c: Category| AccessPoint {
            ap_id: id.into(),
            building_id: b.into(),
            room_id: r.into(),
            category: c,
        };
        ApRegistry::new([
            ap("a1", "SCI", "101", Category::Academic),
            ap("a2", "DORM", "3", Category::Residential),
        ])
    }

    #[test]
    fn weekly_clique_from_group_meetings() {
        // 3 users meet 2 h every week, outside any lecture.
        let mut eps = Vec::new();
        for w in 0..2 {
            let at = MON + w * 7 * 86_400 + 18 * 3600;
            eps.push(episode(&["u1", "u2", "u3"], ("SCI", "101"), at, at + 7200));
        }
        let schedule = Schedule { lectures: vec![], meetings: vec![] };
        let graphs = weekly_graphs(&eps, &roster(), &schedule, &config(2));
        assert_eq!(graphs.len(), 2);
        for g in &graphs {
            assert_eq!(g.edges.len(), 3);
            assert!(g.edges.values().all(|&w| w == 7200));
            // Symmetric by construction: keys are ordered pairs.
            assert!(g.edges.keys().all(|(a, b)| a < b));
            assert_eq!(g.nodes["u1"], "g1");
        }
    }

    #[test]
    fn own_section_lectures_are_excluded_per_pair() {
        let schedule = Schedule {
            lectures: vec![Lecture {
                section_id: "s1".into(),
                interval: iv(MON + 9 * 3600, MON + 10 * 3600),
                room: RoomKey::new("SCI", "101"),
            }],
            meetings: vec![],
        };
        // u1 (s1) and u4 (s2) collocate across the s1 lecture hour.
        let eps = vec![episode(
            &["u1", "u4"],
            ("SCI", "101"),
            MON + 9 * 3600,
            MON + 11 * 3600,
        )];
        let graphs = weekly_graphs(&eps, &roster(), &schedule, &config(1));
        // One of the pair sits in s1, so its lecture censors the edge.
        assert_eq!(graphs[0].edges[&("u1".to_string(), "u4".to_string())], 3600);

        // An all-s2 pair in the same span keeps both hours.
        let mut r = roster();
        r.group_of.insert("u5".into(), "g2".into());
        r.section_of.insert("u5".into(), "s2".into());
        let eps = vec![episode(
            &["u4", "u5"],
            ("SCI", "101"),
            MON + 9 * 3600,
            MON + 11 * 3600,
        )];
        let graphs = weekly_graphs(&eps, &r, &schedule, &config(1));
        assert_eq!(graphs[0].edges[&("u4".to_string(), "u5".to_string())], 7200);
    }

    #[test]
    fn all_lecture_time_collocation_yields_empty_graphs() {
        let schedule = Schedule {
            lectures: vec![Lecture {
                section_id: "s1".into(),
                interval: iv(MON + 9 * 3600, MON + 11 * 3600),
                room: RoomKey::new("SCI", "101"),
            }],
            meetings: vec![],
        };
        let eps = vec![episode(
            &["u1", "u2"],
            ("SCI", "101"),
            MON + 9 * 3600,
            MON + 11 * 3600,
        )];
        let graphs = weekly_graphs(&eps, &roster(), &schedule, &config(1));
        assert!(graphs[0].edges.is_empty());
        assert!(graphs[0].nodes.is_empty());
    }

    #[test]
    fn aggregate_sums_weeks_and_one_week_is_identity() {
        let eps = vec![
            episode(&["u1", "u2"], ("SCI", "101"), MON + 3600, MON + 7200),
            episode(
                &["u1", "u2"],
                ("SCI", "101"),
                MON + 7 * 86_400 + 3600,
                MON + 7 * 86_400 + 5400,
            ),
        ];
        let schedule = Schedule { lectures: vec![], meetings: vec![] };
        let graphs = weekly_graphs(&eps, &roster(), &schedule, &config(2));
        let agg = aggregate_graph(&graphs);
        assert_eq!(agg.period, "semester");
        assert_eq!(agg.edges[&("u1".to_string(), "u2".to_string())], 3600 + 1800);
        // Single week aggregates to itself (modulo the period label).
        let one = aggregate_graph(&graphs[..1]);
        assert_eq!(one.edges, graphs[0].edges);
        // Empty weeks contribute nothing.
        let padded = aggregate_graph(&graphs);
        assert_eq!(padded.edges, agg.edges);
    }

    #[test]
    fn node_strength_matches_pairwise_durations() {
        // All users share section s1 (same exclusions for every pair),
        // so the module-level pairwise tally must agree edge for edge.
        let mut r = roster();
        r.section_of.insert("u4".into(), "s1".into());
        let schedule = Schedule {
            lectures: vec![Lecture {
                section_id: "s1".into(),
                interval: iv(MON + 9 * 3600, MON + 10 * 3600),
                room: RoomKey::new("SCI", "101"),
            }],
            meetings: vec![],
        };
        let eps = vec![
            episode(&["u1", "u2", "u4"], ("SCI", "101"), MON + 8 * 3600, MON + 12 * 3600),
            episode(&["u2", "u4"], ("DORM", "3"), MON + 20 * 3600, MON + 21 * 3600),
        ];
        let cfg = config(1);
        let graphs = weekly_graphs(&eps, &r, &schedule, &cfg);
        let week = cfg.study_weeks()[0];
        let excl = vec![iv(MON + 9 * 3600, MON + 10 * 3600)];
        let pairs = pairwise_durations(&eps, &week, &excl);
        for ((a, b), w) in &graphs[0].edges {
            assert_eq!(pairs[&(a.clone(), b.clone())], *w, "{a}-{b}");
        }
        assert_eq!(graphs[0].edges.len(), pairs.len());
        // Node strength is the row sum.
        let strength: i64 = pairs
            .iter()
            .filter(|((a, b), _)| a == "u2" || b == "u2")
            .map(|(_, w)| w)
            .sum();
        assert_eq!(graphs[0].node_strength("u2"), strength);
    }

    #[test]
    fn space_usage_splits_by_category_and_averages() {
        let eps = vec![
            episode(&["u1", "u2"], ("SCI", "101"), MON + 3600, MON + 7200), // 2 p-h
            episode(&["u1", "u2", "u3"], ("SCI", "101"), MON + 7200, MON + 9000), // 1.5 p-h
        ];
        let rows = space_usage(&eps, &registry(), &config(1), 4);
        assert_eq!(rows.len(), Category::ALL.len());
        for row in &rows {
            match row.category {
                Category::Academic => {
                    let person_secs = 2.0 * 3600.0 + 3.0 * 1800.0;
                    assert_eq!(row.mean_seconds, person_secs / 4.0);
                }
                _ => assert_eq!(row.mean_seconds, 0.0),
            }
            assert!(row.mean_seconds >= 0.0);
        }
    }

    #[test]
    fn punctuality_deltas_and_medians() {
        let schedule = Schedule {
            lectures: vec![
                Lecture {
                    section_id: "s1".into(),
                    interval: iv(MON + 9 * 3600, MON + 10 * 3600),
                    room: RoomKey::new("SCI", "101"),
                },
                Lecture {
                    section_id: "s1".into(),
                    interval: iv(MON + 86_400 + 9 * 3600, MON + 86_400 + 10 * 3600),
                    room: RoomKey::new("SCI", "101"),
                },
            ],
            meetings: vec![],
        };
        let dwell = |user: &str, a: i64, b: i64| DwellSegment {
            user_id: user.to_string(),
            room: RoomKey::new("SCI", "101"),
            interval: iv(a, b),
            status: DwellStatus::Dwelling,
            supporting_event_count: 2,
            support_times: vec![],
        };
        let dwells = vec![
            // Exactly on time for lecture 0.
            dwell("u1", MON + 9 * 3600, MON + 10 * 3600),
            // 10 min early in, 2 min late out for lecture 1; a second
            // dwell inside must not move the earliest/latest bounds.
            dwell("u1", MON + 86_400 + 9 * 3600 - 600, MON + 86_400 + 9 * 3600 + 900),
            dwell("u1", MON + 86_400 + 9 * 3600 + 1200, MON + 86_400 + 10 * 3600 + 120),
        ];
        let mut inference = AttendanceInference::default();
        inference.entries.insert(("u1".to_string(), 0), InferredMark::Present);
        inference.entries.insert(("u1".to_string(), 1), InferredMark::Present);
        // Absent rows are skipped even if a dwell exists.
        inference.entries.insert(("u2".to_string(), 0), InferredMark::Absent);
        let report = punctuality(&dwells, &inference, &roster(), &schedule);
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].entry_delta_secs, 0);
        assert_eq!(report.rows[0].exit_delta_secs, 0);
        assert_eq!(report.rows[1].entry_delta_secs, -600);
        assert_eq!(report.rows[1].exit_delta_secs, 120);
        assert_eq!(report.median_entry_secs(), Some(-300.0));
        assert_eq!(report.median_exit_secs(), Some(60.0));
        assert_eq!(PunctualityReport::default().median_entry_secs(), None);
    }

    #[test]
    fn graph_csv_round_trips_exactly() {
        let eps = vec![
            episode(&["u1", "u2"], ("SCI", "101"), MON + 3600, MON + 7200),
            episode(&["u2", "u4"], ("DORM", "3"), MON + 7200, MON + 9900),
        ];
        let schedule = Schedule { lectures: vec![], meetings: vec![] };
        let graphs = weekly_graphs(&eps, &roster(), &schedule, &config(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("week-0.csv");
        write_graph_csv(&graphs[0], &path).unwrap();
        let loaded = load_graph_csv(&path, &roster(), "week-0").unwrap();
        assert_eq!(loaded, graphs[0]);
    }

    #[test]
    fn dot_export_lists_nodes_and_edges() {
        let eps = vec![episode(&["u1", "u4"], ("SCI", "101"), MON + 3600, MON + 7200)];
        let schedule = Schedule { lectures: vec![], meetings: vec![] };
        let graphs = weekly_graphs(&eps, &roster(), &schedule, &config(1));
        let agg = aggregate_graph(&graphs);
        let dot = graph_to_dot(&agg);
        assert!(dot.starts_with("graph \"semester\" {"));
        assert!(dot.contains("\"u1\" -- \"u4\" [weight=3600];"));
        // Different groups get different fill colors.
        let color = |user: &str| {
            dot.lines()
                .find(|l| l.contains(&format!("\"{user}\" [")))
                .and_then(|l| l.split("fillcolor=").nth(1))
                .and_then(|t| t.split(' ').next())
                .map(str::to_string)
        };
        assert_ne!(color("u1"), color("u4"));
    }

    #[test]
    fn space_usage_and_punctuality_csv_round_trip() {
        let eps = vec![episode(&["u1", "u2"], ("SCI", "101"), MON + 3600, MON + 7200)];
        let rows = space_usage(&eps, &registry(), &config(1), 4);
        let dir = tempfile::tempdir().unwrap();
        let su = dir.path().join("space_usage.csv");
        write_space_usage_csv(&rows, &su).unwrap();
        assert_eq!(load_space_usage_csv(&su).unwrap(), rows);

        let report = PunctualityReport {
            rows: vec![PunctualityRow {
                user_id: "u1".into(),
                lecture_index: 3,
                entry_delta_secs: -300,
                exit_delta_secs: 120,
            }],
        };
        let pu = dir.path().join("punctuality.csv");
        write_punctuality_csv(&report, &pu).unwrap();
        assert_eq!(load_punctuality_csv(&pu).unwrap(), report);
    }

    #[test]
    fn edges_are_positive_and_never_self_loops() {
        // Zero-length clip and degenerate "pair" of one user vanish.
        let mut g = InteractionGraph::empty("week-0".to_string());
        g.add_edge("u1", "u1", 100, &roster());
        g.add_edge("u1", "u2", 0, &roster());
        g.add_edge("u2", "u1", 50, &roster());
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[&("u1".to_string(), "u2".to_string())], 50);
        let users: BTreeSet<&String> = g.nodes.keys().collect();
        assert_eq!(users.len(), 2);
    }
}
