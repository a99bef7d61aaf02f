//! The eight pipeline stages. Each one reads its predecessors' artifacts
//! from `<root>/<run>/<stage>/`, writes its own directory, and records a
//! `manifest.json` pinning everything that determined the output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _};
use serde::{Deserialize, Serialize};

use coloc::analytics::{
    aggregate_graph, punctuality, space_usage, weekly_graphs, write_graph_csv, write_graph_dot,
    write_punctuality_csv, write_space_usage_csv,
};
use coloc::collocation::{
    bridge_gaps, learn_gap_threshold, learn_gap_threshold_within_groups, load_episodes_csv,
    raw_overlaps, write_episodes_csv,
};
use coloc::features::{
    all_summary_names, group_episodes, load_features_csv, semester_summary, write_features_csv,
    FeatureInputs, FeatureVector, WeeklyFeatures,
};
use coloc::ingest::{
    load_attendance, load_corpus, load_registry, load_roster, load_schedule,
    validate_cross_references, write_corpus_csv, LogCorpus,
};
use coloc::model::{
    ApRegistry, AttendanceRecord, PipelineConfig, Roster, Schedule, ThresholdSetting,
};
use coloc::modeling::{load_scores_csv, run_study, summary_markdown, write_results_json};
use coloc::segmentation::{load_dwells_csv, segment_corpus, write_dwells_csv, DwellSegment};
use coloc::validation::{infer_attendance, score, write_inference_csv, AttendanceInference};
use rayon::prelude::*;

use crate::config::FileConfig;
use crate::manifest::{parse_duration_secs, RunManifest};

/// Everything a stage needs besides its own flags.
pub struct Ctx {
    pub run: String,
    pub run_dir: PathBuf,
    pub config: FileConfig,
    pub config_hash: String,
}

impl Ctx {
    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.run_dir.join(stage)
    }

    fn create_stage_dir(&self, stage: &str) -> anyhow::Result<PathBuf> {
        let dir = self.stage_dir(stage);
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(dir)
    }

    /// Resolve a predecessor artifact, with an actionable error when the
    /// stage that produces it has not run yet.
    fn input(&self, stage: &str, file: &str) -> anyhow::Result<PathBuf> {
        let path = self.stage_dir(stage).join(file);
        if !path.exists() {
            bail!(
                "missing {} — run `coloc {} --run {}` first",
                path.display(),
                stage,
                self.run
            );
        }
        Ok(path)
    }

    /// The pipeline settings for this run: the `[pipeline]` section of
    /// `--config` when present, otherwise the `pipeline.toml` written by
    /// `producer` into `dir`.
    fn resolve_pipeline(
        &self,
        manifest: &mut RunManifest,
        dir: &Path,
        producer: &str,
    ) -> anyhow::Result<PipelineConfig> {
        let config = match &self.config.pipeline {
            Some(p) => p.clone(),
            None => {
                let path = dir.join("pipeline.toml");
                if !path.exists() {
                    bail!(
                        "missing {} — run `coloc {} --run {}` first, or supply a [pipeline] \
                         section via --config",
                        path.display(),
                        producer,
                        self.run
                    );
                }
                manifest.hash_input("pipeline.toml", &path)?;
                let text = std::fs::read_to_string(&path)?;
                toml::from_str(&text)
                    .with_context(|| format!("cannot parse {}", path.display()))?
            }
        };
        config
            .validate()
            .context("invalid pipeline configuration")?;
        Ok(config)
    }
}

fn ms(start: Instant) -> u128 {
    start.elapsed().as_millis()
}

fn write_pipeline_toml(dir: &Path, config: &PipelineConfig) -> anyhow::Result<()> {
    let text = toml::to_string_pretty(config).context("cannot serialize pipeline settings")?;
    std::fs::write(dir.join("pipeline.toml"), text)?;
    Ok(())
}

/// `thresholds.json` written by `segment`.
#[derive(Debug, Serialize, Deserialize)]
struct SegmentThresholdsFile {
    mobility_secs: f64,
    disconnection_secs: f64,
}

/// `thresholds.json` written by `collocate`.
#[derive(Debug, Serialize, Deserialize)]
struct GapThresholdFile {
    gap_secs: f64,
    /// "fixed", "learned-within-groups", or "learned-all-pairs".
    source: String,
}

// ---------------------------------------------------------------------
// simulate

pub struct SimulateArgs {
    pub seed: Option<u64>,
    pub users: Option<usize>,
    pub weeks: Option<usize>,
}

const SIMULATE_ARTIFACTS: [&str; 9] = [
    "logs.csv",
    "registry.csv",
    "roster.csv",
    "lectures.csv",
    "meetings.csv",
    "attendance.csv",
    "scores.csv",
    "truth_timeline.csv",
    "pipeline.toml",
];

pub fn simulate(ctx: &Ctx, args: &SimulateArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("simulate", &ctx.config_hash);
    let mut cfg = ctx.config.simulate.clone();
    if let Some(u) = args.users {
        cfg.users = u;
        manifest.record_override("users", u);
    }
    if let Some(w) = args.weeks {
        cfg.weeks = w;
        manifest.record_override("weeks", w);
    }
    let seed = args.seed.unwrap_or(0);
    manifest.seed = Some(seed);

    let t = Instant::now();
    let scenario = coloc::synth::simulate(&cfg, seed).context("simulation failed")?;
    manifest.timings_ms.insert("simulate".into(), ms(t));

    let dir = ctx.create_stage_dir("simulate")?;
    let t = Instant::now();
    scenario.write_all(&dir).context("cannot write scenario")?;
    write_pipeline_toml(&dir, &scenario.pipeline_config)?;
    manifest.timings_ms.insert("write".into(), ms(t));
    for name in SIMULATE_ARTIFACTS {
        manifest.hash_output(name, &dir.join(name))?;
    }
    manifest.write(&dir)?;
    println!(
        "simulate: {} users, {} weeks, seed {} -> {} log events in {}",
        cfg.users,
        cfg.weeks,
        seed,
        scenario.corpus.len(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// ingest

pub fn ingest(ctx: &Ctx, input_dir: Option<&Path>) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("ingest", &ctx.config_hash);
    let src = match input_dir {
        Some(dir) => {
            manifest.record_override("input_dir", dir.display());
            dir.to_path_buf()
        }
        None => ctx.stage_dir("simulate"),
    };
    let locate = |file: &str| -> anyhow::Result<PathBuf> {
        let path = src.join(file);
        if path.exists() {
            return Ok(path);
        }
        if input_dir.is_some() {
            bail!("no {file} in {}", src.display());
        }
        bail!(
            "missing {} — run `coloc simulate --run {}` first, or point --input-dir at a \
             directory holding the raw artifacts",
            path.display(),
            ctx.run
        );
    };
    let logs_path = locate("logs.csv")?;
    let registry_path = locate("registry.csv")?;
    let roster_path = locate("roster.csv")?;
    let lectures_path = locate("lectures.csv")?;
    let meetings_path = locate("meetings.csv")?;
    for (name, path) in [
        ("logs.csv", &logs_path),
        ("registry.csv", &registry_path),
        ("roster.csv", &roster_path),
        ("lectures.csv", &lectures_path),
        ("meetings.csv", &meetings_path),
    ] {
        manifest.hash_input(name, path)?;
    }
    let pipeline = ctx.resolve_pipeline(&mut manifest, &src, "simulate")?;

    let t = Instant::now();
    let registry = load_registry(&registry_path).context("registry.csv")?;
    let roster = load_roster(&roster_path).context("roster.csv")?;
    let schedule =
        load_schedule(&lectures_path, &meetings_path, &pipeline).context("schedule")?;
    validate_cross_references(&registry, &roster, &schedule)
        .context("inputs do not cross-reference")?;
    let (corpus, stats) = load_corpus(&logs_path, &pipeline).context("logs.csv")?;
    let attendance_path = src.join("attendance.csv");
    let attendance = if attendance_path.exists() {
        manifest.hash_input("attendance.csv", &attendance_path)?;
        Some(load_attendance(&attendance_path, &roster, &schedule).context("attendance.csv")?)
    } else {
        None
    };
    let scores_path = src.join("scores.csv");
    let scores = if scores_path.exists() {
        manifest.hash_input("scores.csv", &scores_path)?;
        Some(load_scores_csv(&scores_path).context("scores.csv")?)
    } else {
        None
    };
    manifest.timings_ms.insert("load".into(), ms(t));

    let dir = ctx.create_stage_dir("ingest")?;
    let t = Instant::now();
    write_corpus_csv(&corpus, &pipeline, dir.join("corpus.csv"))?;
    coloc::ingest::write_registry_csv(&registry, dir.join("registry.csv"))?;
    coloc::ingest::write_roster_csv(&roster, dir.join("roster.csv"))?;
    coloc::ingest::write_schedule_csv(
        &schedule,
        &pipeline,
        dir.join("lectures.csv"),
        dir.join("meetings.csv"),
    )?;
    if let Some(att) = &attendance {
        coloc::ingest::write_attendance_csv(att, dir.join("attendance.csv"))?;
    }
    if let Some(sc) = &scores {
        coloc::modeling::write_scores_csv(sc, dir.join("scores.csv"))?;
    }
    write_pipeline_toml(&dir, &pipeline)?;
    let stats_json = serde_json::json!({
        "log_lines_total": stats.total_lines,
        "log_lines_kept": stats.kept,
        "log_lines_dropped_out_of_window": stats.dropped_out_of_window,
        "log_lines_failed": stats.failed,
        "users": corpus.users().count(),
        "access_points": registry.len(),
        "lectures": schedule.lectures.len(),
        "meetings": schedule.meetings.len(),
    });
    std::fs::write(
        dir.join("stats.json"),
        serde_json::to_string_pretty(&stats_json)? + "\n",
    )?;
    manifest.timings_ms.insert("write".into(), ms(t));

    let mut outputs = vec![
        "corpus.csv",
        "registry.csv",
        "roster.csv",
        "lectures.csv",
        "meetings.csv",
        "pipeline.toml",
        "stats.json",
    ];
    if attendance.is_some() {
        outputs.push("attendance.csv");
    }
    if scores.is_some() {
        outputs.push("scores.csv");
    }
    for name in outputs {
        manifest.hash_output(name, &dir.join(name))?;
    }
    manifest.write(&dir)?;
    println!(
        "ingest: kept {}/{} log lines ({} users, {} APs, {} lectures, {} meetings) -> {}",
        stats.kept,
        stats.total_lines,
        corpus.users().count(),
        registry.len(),
        schedule.lectures.len(),
        schedule.meetings.len(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// segment

pub struct SegmentArgs {
    pub mobility_threshold: Option<String>,
    pub disconnection_threshold: Option<String>,
}

/// Shared loader for everything downstream of ingest.
struct IngestArtifacts {
    pipeline: PipelineConfig,
    corpus: LogCorpus,
    registry: ApRegistry,
    roster: Roster,
    schedule: Schedule,
}

fn load_ingest(ctx: &Ctx, manifest: &mut RunManifest) -> anyhow::Result<IngestArtifacts> {
    let corpus_path = ctx.input("ingest", "corpus.csv")?;
    let registry_path = ctx.input("ingest", "registry.csv")?;
    let roster_path = ctx.input("ingest", "roster.csv")?;
    let lectures_path = ctx.input("ingest", "lectures.csv")?;
    let meetings_path = ctx.input("ingest", "meetings.csv")?;
    for (name, path) in [
        ("corpus.csv", &corpus_path),
        ("registry.csv", &registry_path),
        ("roster.csv", &roster_path),
        ("lectures.csv", &lectures_path),
        ("meetings.csv", &meetings_path),
    ] {
        manifest.hash_input(name, path)?;
    }
    let pipeline = ctx.resolve_pipeline(manifest, &ctx.stage_dir("ingest"), "ingest")?;
    let registry = load_registry(&registry_path).context("registry.csv")?;
    let roster = load_roster(&roster_path).context("roster.csv")?;
    let schedule =
        load_schedule(&lectures_path, &meetings_path, &pipeline).context("schedule")?;
    let (corpus, _) = load_corpus(&corpus_path, &pipeline).context("corpus.csv")?;
    Ok(IngestArtifacts {
        pipeline,
        corpus,
        registry,
        roster,
        schedule,
    })
}

pub fn segment(ctx: &Ctx, args: &SegmentArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("segment", &ctx.config_hash);
    let t = Instant::now();
    let mut arts = load_ingest(ctx, &mut manifest)?;

    if let Some(raw) = &args.mobility_threshold {
        manifest.record_override("mobility_threshold", raw);
    }
    if let Some(raw) = &args.disconnection_threshold {
        manifest.record_override("disconnection_threshold", raw);
    }
    let mobility_raw = args
        .mobility_threshold
        .clone()
        .or_else(|| ctx.config.segment.mobility_threshold.clone());
    if let Some(raw) = mobility_raw {
        arts.pipeline.mobility_threshold = ThresholdSetting::Fixed(
            parse_duration_secs(&raw).context("--mobility-threshold")?,
        );
    }
    let disconnection_raw = args
        .disconnection_threshold
        .clone()
        .or_else(|| ctx.config.segment.disconnection_threshold.clone());
    if let Some(raw) = disconnection_raw {
        arts.pipeline.disconnection_threshold = ThresholdSetting::Fixed(
            parse_duration_secs(&raw).context("--disconnection-threshold")?,
        );
    }

    let attendance_path = ctx.stage_dir("ingest").join("attendance.csv");
    let attendance = if attendance_path.exists() {
        manifest.hash_input("attendance.csv", &attendance_path)?;
        load_attendance(&attendance_path, &arts.roster, &arts.schedule)
            .context("attendance.csv")?
    } else {
        if arts.pipeline.disconnection_threshold == ThresholdSetting::Learn {
            bail!(
                "the disconnection threshold is learned from attendance.csv, which this run's \
                 ingest inputs lack — pass --disconnection-threshold (e.g. \"76min\") or \
                 provide attendance ground truth"
            );
        }
        AttendanceRecord::default()
    };
    manifest.timings_ms.insert("load".into(), ms(t));

    let t = Instant::now();
    let (dwells, thresholds) = segment_corpus(
        &arts.corpus,
        &arts.registry,
        &arts.roster,
        &arts.schedule,
        &attendance,
        &arts.pipeline,
    )
    .context("segmentation failed")?;
    manifest.timings_ms.insert("segment".into(), ms(t));

    let dir = ctx.create_stage_dir("segment")?;
    write_dwells_csv(&dwells, &arts.pipeline, dir.join("dwells.csv"))?;
    let file = SegmentThresholdsFile {
        mobility_secs: thresholds.mobility_secs,
        disconnection_secs: thresholds.disconnection_secs,
    };
    std::fs::write(
        dir.join("thresholds.json"),
        serde_json::to_string_pretty(&file)? + "\n",
    )?;
    manifest.hash_output("dwells.csv", &dir.join("dwells.csv"))?;
    manifest.hash_output("thresholds.json", &dir.join("thresholds.json"))?;
    manifest.write(&dir)?;
    println!(
        "segment: {} dwell segments; mobility threshold {:.1}s, disconnection threshold {:.1}s",
        dwells.len(),
        thresholds.mobility_secs,
        thresholds.disconnection_secs
    );
    Ok(())
}

// ---------------------------------------------------------------------
// collocate

pub struct CollocateArgs {
    pub gap_threshold: Option<String>,
    pub gap_learn_all_pairs: bool,
}

pub fn collocate(ctx: &Ctx, args: &CollocateArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("collocate", &ctx.config_hash);
    let t = Instant::now();
    let roster_path = ctx.input("ingest", "roster.csv")?;
    manifest.hash_input("roster.csv", &roster_path)?;
    let roster = load_roster(&roster_path).context("roster.csv")?;
    let pipeline = ctx.resolve_pipeline(&mut manifest, &ctx.stage_dir("ingest"), "ingest")?;
    let dwells_path = ctx.input("segment", "dwells.csv")?;
    manifest.hash_input("dwells.csv", &dwells_path)?;
    let dwells = load_dwells_csv(&dwells_path, &pipeline).context("dwells.csv")?;
    manifest.timings_ms.insert("load".into(), ms(t));

    if let Some(raw) = &args.gap_threshold {
        manifest.record_override("gap_threshold", raw);
    }
    if args.gap_learn_all_pairs {
        manifest.record_override("gap_learn_all_pairs", "true");
    }

    let t = Instant::now();
    let users: BTreeSet<String> = roster.users().cloned().collect();
    let raw = raw_overlaps(&dwells, &users);
    let gap_raw = args
        .gap_threshold
        .clone()
        .or_else(|| ctx.config.collocate.gap_threshold.clone());
    let all_pairs = args.gap_learn_all_pairs || ctx.config.collocate.learn_all_pairs;
    let learn_help = "no qualifying gaps to learn a bridge threshold from — pass \
                      --gap-threshold (e.g. \"11m7s\")";
    let (gap_secs, source) = match gap_raw {
        Some(s) => (
            parse_duration_secs(&s).context("--gap-threshold")? as f64,
            "fixed",
        ),
        None if all_pairs => (
            learn_gap_threshold(&raw, &dwells).context(learn_help)?,
            "learned-all-pairs",
        ),
        None => (
            learn_gap_threshold_within_groups(&raw, &dwells, &roster).context(learn_help)?,
            "learned-within-groups",
        ),
    };
    let episodes = bridge_gaps(&raw, &dwells, gap_secs);
    manifest.timings_ms.insert("collocate".into(), ms(t));

    let dir = ctx.create_stage_dir("collocate")?;
    write_episodes_csv(&episodes, &pipeline, dir.join("episodes.csv"))?;
    let file = GapThresholdFile {
        gap_secs,
        source: source.to_string(),
    };
    std::fs::write(
        dir.join("thresholds.json"),
        serde_json::to_string_pretty(&file)? + "\n",
    )?;
    manifest.hash_output("episodes.csv", &dir.join("episodes.csv"))?;
    manifest.hash_output("thresholds.json", &dir.join("thresholds.json"))?;
    manifest.write(&dir)?;
    println!(
        "collocate: {} raw overlaps -> {} episodes; gap threshold {:.1}s ({})",
        raw.len(),
        episodes.len(),
        gap_secs,
        source
    );
    Ok(())
}

// ---------------------------------------------------------------------
// validate

pub fn validate(ctx: &Ctx) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("validate", &ctx.config_hash);
    let t = Instant::now();
    let arts = load_ingest(ctx, &mut manifest)?;
    let attendance_path = ctx.stage_dir("ingest").join("attendance.csv");
    if !attendance_path.exists() {
        bail!(
            "missing {} — validation needs attendance ground truth, which synthetic runs \
             provide and real deployments may not (skip `coloc validate` in that case)",
            attendance_path.display()
        );
    }
    manifest.hash_input("attendance.csv", &attendance_path)?;
    let attendance =
        load_attendance(&attendance_path, &arts.roster, &arts.schedule).context("attendance.csv")?;
    let dwells_path = ctx.input("segment", "dwells.csv")?;
    manifest.hash_input("dwells.csv", &dwells_path)?;
    let dwells = load_dwells_csv(&dwells_path, &arts.pipeline).context("dwells.csv")?;
    manifest.timings_ms.insert("load".into(), ms(t));

    let t = Instant::now();
    let inference = infer_attendance(
        &arts.corpus,
        &dwells,
        &arts.roster,
        &arts.schedule,
        &arts.registry,
        arts.pipeline.margin_before_after,
    );
    let report = score(&inference, &attendance).context("scoring failed")?;
    manifest.timings_ms.insert("validate".into(), ms(t));

    let dir = ctx.create_stage_dir("validate")?;
    write_inference_csv(&inference, dir.join("inference.csv"))?;
    coloc::validation::write_report_json(&report, dir.join("report.json"))?;
    manifest.hash_output("inference.csv", &dir.join("inference.csv"))?;
    manifest.hash_output("report.json", &dir.join("report.json"))?;
    manifest.write(&dir)?;
    println!(
        "validate: precision {:.4}, recall {:.4}, F1 {:.4}; {} lecture slots unobserved",
        report.precision, report.recall, report.f1, report.unobserved_count
    );
    Ok(())
}

// ---------------------------------------------------------------------
// features

pub fn features(ctx: &Ctx) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("features", &ctx.config_hash);
    let t = Instant::now();
    let arts = load_ingest(ctx, &mut manifest)?;
    let dwells_path = ctx.input("segment", "dwells.csv")?;
    manifest.hash_input("dwells.csv", &dwells_path)?;
    let dwells = load_dwells_csv(&dwells_path, &arts.pipeline).context("dwells.csv")?;
    let gap_path = ctx.input("collocate", "thresholds.json")?;
    manifest.hash_input("collocate/thresholds.json", &gap_path)?;
    let gap: GapThresholdFile = serde_json::from_str(&std::fs::read_to_string(&gap_path)?)
        .with_context(|| format!("cannot parse {}", gap_path.display()))?;
    manifest.timings_ms.insert("load".into(), ms(t));

    let t = Instant::now();
    let inference = infer_attendance(
        &arts.corpus,
        &dwells,
        &arts.roster,
        &arts.schedule,
        &arts.registry,
        arts.pipeline.margin_before_after,
    );
    let episodes = group_episodes(&dwells, &arts.roster, &arts.schedule, gap.gap_secs);
    let vectors = feature_vectors(
        &inference,
        &dwells,
        &episodes,
        &arts.roster,
        &arts.schedule,
        &arts.registry,
        &arts.pipeline,
    );
    manifest.timings_ms.insert("features".into(), ms(t));

    let dir = ctx.create_stage_dir("features")?;
    write_features_csv(&vectors, dir.join("features.csv"))?;
    manifest.hash_output("features.csv", &dir.join("features.csv"))?;
    manifest.write(&dir)?;
    println!(
        "features: {} users x {} feature columns over {} weeks",
        vectors.len(),
        all_summary_names().len(),
        arts.pipeline.study_weeks().len()
    );
    Ok(())
}

/// Weekly rows then semester summaries for every roster user. Dwells are
/// pre-split by user so the weekly scans only touch the user's own rows.
#[allow(clippy::too_many_arguments)]
pub fn feature_vectors(
    inference: &AttendanceInference,
    dwells: &[DwellSegment],
    episodes: &BTreeMap<String, Vec<coloc::collocation::CollocationEpisode>>,
    roster: &Roster,
    schedule: &Schedule,
    registry: &ApRegistry,
    pipeline: &PipelineConfig,
) -> Vec<FeatureVector> {
    let mut by_user: BTreeMap<&str, Vec<DwellSegment>> = BTreeMap::new();
    for d in dwells {
        by_user.entry(&d.user_id).or_default().push(d.clone());
    }
    let weeks = pipeline.study_weeks().len();
    let users: Vec<&String> = roster.users().collect();
    users
        .par_iter()
        .map(|user| {
            let slice = by_user.get(user.as_str()).map_or(&[][..], Vec::as_slice);
            let inputs = FeatureInputs {
                inference,
                dwells: slice,
                group_episodes: episodes,
                roster,
                schedule,
                registry,
                config: pipeline,
            };
            let weekly: Vec<WeeklyFeatures> =
                (0..weeks).map(|w| inputs.weekly(user, w)).collect();
            let refs: Vec<&WeeklyFeatures> = weekly.iter().collect();
            semester_summary(user, &refs, pipeline)
        })
        .collect()
}

// ---------------------------------------------------------------------
// train

pub struct TrainArgs {
    pub seed: Option<u64>,
    pub max_k: Option<usize>,
    pub folds: Option<usize>,
}

pub fn train(ctx: &Ctx, args: &TrainArgs) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("train", &ctx.config_hash);
    let t = Instant::now();
    let features_path = ctx.input("features", "features.csv")?;
    manifest.hash_input("features.csv", &features_path)?;
    let (_, vectors) = load_features_csv(&features_path).context("features.csv")?;
    let scores_path = ctx.stage_dir("ingest").join("scores.csv");
    if !scores_path.exists() {
        bail!(
            "missing {} — training needs per-user scores (peer evaluations + target); \
             provide scores.csv among the ingest inputs",
            scores_path.display()
        );
    }
    manifest.hash_input("scores.csv", &scores_path)?;
    let scores = load_scores_csv(&scores_path).context("scores.csv")?;
    let roster_path = ctx.input("ingest", "roster.csv")?;
    manifest.hash_input("roster.csv", &roster_path)?;
    let roster = load_roster(&roster_path).context("roster.csv")?;
    manifest.timings_ms.insert("load".into(), ms(t));

    let mut study = ctx.config.train.clone();
    if let Some(seed) = args.seed {
        study.seed = seed;
        manifest.record_override("seed", seed);
    }
    if let Some(k) = args.max_k {
        study.max_k = k;
        manifest.record_override("max_k", k);
    }
    if let Some(f) = args.folds {
        study.folds = f;
        manifest.record_override("folds", f);
    }
    manifest.seed = Some(study.seed);

    let t = Instant::now();
    let result = run_study(&vectors, &scores, &roster, &study).context("study failed")?;
    manifest.timings_ms.insert("train".into(), ms(t));

    let dir = ctx.create_stage_dir("train")?;
    write_results_json(&result, dir.join("results.json"))?;
    std::fs::write(dir.join("summary.md"), summary_markdown(&result))?;
    manifest.hash_output("results.json", &dir.join("results.json"))?;
    manifest.hash_output("summary.md", &dir.join("summary.md"))?;
    manifest.write(&dir)?;

    println!("train: {} samples, seed {}", result.n_samples, study.seed);
    for m in &result.models {
        let r = m
            .pearson_r
            .map_or("r n/a".to_string(), |r| format!("r {r:+.3}"));
        println!(
            "  {:<12} {:<8} rmse {:.3}  {}  {}",
            m.name, m.estimator, m.rmse, r, m.significance
        );
    }
    for c in &result.comparisons {
        println!(
            "  {} vs {}: delta r {:+.3} in [{:+.3}, {:+.3}]{}",
            c.model_a,
            c.model_b,
            c.interval.difference,
            c.interval.lower,
            c.interval.upper,
            if c.significant { " (significant)" } else { "" }
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------
// report

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

pub fn report(ctx: &Ctx, format: OutputFormat) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("report", &ctx.config_hash);
    manifest.record_override(
        "format",
        match format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        },
    );
    let t = Instant::now();
    let arts = load_ingest(ctx, &mut manifest)?;
    let dwells_path = ctx.input("segment", "dwells.csv")?;
    manifest.hash_input("dwells.csv", &dwells_path)?;
    let dwells = load_dwells_csv(&dwells_path, &arts.pipeline).context("dwells.csv")?;
    let episodes_path = ctx.input("collocate", "episodes.csv")?;
    manifest.hash_input("episodes.csv", &episodes_path)?;
    let episodes = load_episodes_csv(&episodes_path, &arts.pipeline).context("episodes.csv")?;
    manifest.timings_ms.insert("load".into(), ms(t));

    let t = Instant::now();
    let weekly = weekly_graphs(&episodes, &arts.roster, &arts.schedule, &arts.pipeline);
    let semester = aggregate_graph(&weekly);
    let usage = space_usage(
        &episodes,
        &arts.registry,
        &arts.pipeline,
        arts.roster.users().count(),
    );
    let inference = infer_attendance(
        &arts.corpus,
        &dwells,
        &arts.roster,
        &arts.schedule,
        &arts.registry,
        arts.pipeline.margin_before_after,
    );
    let punct = punctuality(&dwells, &inference, &arts.roster, &arts.schedule);
    manifest.timings_ms.insert("report".into(), ms(t));

    let dir = ctx.create_stage_dir("report")?;
    match format {
        OutputFormat::Csv => {
            let mut names = Vec::new();
            for g in &weekly {
                let name = format!("graph_{}.csv", g.period);
                write_graph_csv(g, dir.join(&name))?;
                names.push(name);
            }
            write_graph_csv(&semester, dir.join("graph_semester.csv"))?;
            write_graph_dot(&semester, dir.join("graph_semester.dot"))?;
            write_space_usage_csv(&usage, dir.join("space_usage.csv"))?;
            write_punctuality_csv(&punct, dir.join("punctuality.csv"))?;
            names.extend([
                "graph_semester.csv".to_string(),
                "graph_semester.dot".to_string(),
                "space_usage.csv".to_string(),
                "punctuality.csv".to_string(),
            ]);
            for name in &names {
                manifest.hash_output(name, &dir.join(name))?;
            }
        }
        OutputFormat::Json => {
            let graph_json = |g: &coloc::analytics::InteractionGraph| {
                serde_json::json!({
                    "period": g.period,
                    "nodes": g.nodes,
                    "edges": g
                        .edges
                        .iter()
                        .map(|((a, b), secs)| {
                            serde_json::json!({"user_a": a, "user_b": b, "seconds": secs})
                        })
                        .collect::<Vec<_>>(),
                })
            };
            let mut graphs: Vec<_> = weekly.iter().map(graph_json).collect();
            graphs.push(graph_json(&semester));
            let body = serde_json::json!({
                "graphs": graphs,
                "space_usage": usage
                    .iter()
                    .map(|row| serde_json::json!({
                        "week": row.week,
                        "category": row.category.as_str(),
                        "mean_seconds": row.mean_seconds,
                    }))
                    .collect::<Vec<_>>(),
                "punctuality": {
                    "median_entry_secs": punct.median_entry_secs(),
                    "median_exit_secs": punct.median_exit_secs(),
                    "rows": punct
                        .rows
                        .iter()
                        .map(|r| serde_json::json!({
                            "user_id": r.user_id,
                            "lecture_index": r.lecture_index,
                            "entry_delta_secs": r.entry_delta_secs,
                            "exit_delta_secs": r.exit_delta_secs,
                        }))
                        .collect::<Vec<_>>(),
                },
            });
            std::fs::write(
                dir.join("report.json"),
                serde_json::to_string_pretty(&body)? + "\n",
            )?;
            manifest.hash_output("report.json", &dir.join("report.json"))?;
        }
    }
    manifest.write(&dir)?;
    let fmt_median = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:+.0}s"));
    println!(
        "report: {} weekly graphs, {} semester edges; median lecture entry {} / exit {}",
        weekly.len(),
        semester.edges.len(),
        fmt_median(punct.median_entry_secs()),
        fmt_median(punct.median_exit_secs()),
    );
    Ok(())
}
