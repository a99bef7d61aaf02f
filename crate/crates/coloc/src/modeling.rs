//! Performance estimation from behavioral features: per-fold preprocessing
//! (instructor-wise target scaling, mean imputation, standardization),
//! mutual-information feature selection with an inner-CV choice of k,
//! three estimators (OLS, CART regression tree, gradient boosting), group
//! k-fold evaluation, and correlation reporting with a dependent-
//! correlation comparison interval.
//!
//! Model families, named as in the results table: M_0 (train-median
//! baseline), M_PE (peer-evaluation scores only), M_iWF (individual
//! weekly-feature summaries), M_gWF (group collocation summaries),
//! M_iWF_gWF (both feature families).
//!
//! Matrices are column-major throughout: `x[j][i]` is feature j of sample
//! i. Missing values are NaN until imputation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::model::Roster;

#[derive(Debug, Error)]
pub enum ModelingError {
    #[error("need at least 2 training samples, got {0}")]
    DegenerateTrain(usize),
    #[error("need at least 3 paired samples for a correlation, got {0}")]
    TooFewSamples(usize),
    #[error("correlation undefined: {0} vector has zero variance")]
    ZeroVariance(&'static str),
    #[error("no groups to fold")]
    NoGroups,
    #[error("cannot split {groups} groups into {folds} folds")]
    FoldsExceedGroups { folds: usize, groups: usize },
    #[error("correlation triple (r_jk={0}, r_jh={1}, r_kh={2}) is not a valid correlation matrix")]
    BadCorrelationTriple(f64, f64, f64),
    #[error("{0} must lie strictly inside (-1, 1)")]
    BadCorrelation(&'static str),
    #[error("comparison needs n > 3, got {0}")]
    TooFewForComparison(usize),
    #[error("user {0} has no score row")]
    MissingScore(String),
    #[error("user {0} is not on the roster")]
    UnknownUser(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad score row: {0}")]
    BadScoreRow(String),
}

/// Peer-evaluation column names, fixed order (opaque survey scales).
pub const PE_COLUMNS: [&str; 6] = [
    "member_effectiveness",
    "team_satisfaction",
    "psychological_safety",
    "task_conflict",
    "relationship_conflict",
    "process_conflict",
];

/// Per-user peer-evaluation scores and the prediction target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub user_ids: Vec<String>,
    pub pe: Vec<[f64; 6]>,
    pub target: Vec<f64>,
}

impl ScoreTable {
    pub fn row_of(&self, user: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == user)
    }
}

pub fn write_scores_csv(
    scores: &ScoreTable,
    path: impl AsRef<Path>,
) -> Result<(), ModelingError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["user_id"];
    header.extend(PE_COLUMNS);
    header.push("grade");
    w.write_record(&header)?;
    for i in 0..scores.user_ids.len() {
        let mut rec = vec![scores.user_ids[i].clone()];
        rec.extend(scores.pe[i].iter().map(|v| v.to_string()));
        rec.push(scores.target[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_scores_csv(path: impl AsRef<Path>) -> Result<ScoreTable, ModelingError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut table = ScoreTable {
        user_ids: vec![],
        pe: vec![],
        target: vec![],
    };
    for row in r.records() {
        let row = row?;
        if row.len() != 8 {
            return Err(ModelingError::BadScoreRow(format!(
                "expected 8 fields, found {}",
                row.len()
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| ModelingError::BadScoreRow(format!("bad number {s:?}: {e}")))
        };
        let mut pe = [0.0; 6];
        for (slot, field) in pe.iter_mut().zip(row.iter().skip(1)) {
            *slot = num(field)?;
        }
        table.user_ids.push(row[0].to_string());
        table.pe.push(pe);
        table.target.push(num(&row[7])?);
    }
    Ok(table)
}

/// Study-wide hyperparameters; defaults are fixed for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub folds: usize,
    pub inner_folds: usize,
    /// Upper bound of the automatic k search: 1..=min(max_k, columns).
    pub max_k: usize,
    pub mi_bins: usize,
    /// Confidence level for correlation-difference intervals.
    pub confidence: f64,
    pub seed: u64,
    pub tree_depth: usize,
    pub boost_depth: usize,
    pub min_leaf: usize,
    pub rounds: usize,
    pub learning_rate: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            folds: 5,
            inner_folds: 3,
            max_k: 30,
            mi_bins: 8,
            confidence: 0.90,
            seed: 0,
            tree_depth: 5,
            boost_depth: 3,
            min_leaf: 5,
            rounds: 100,
            learning_rate: 0.1,
        }
    }
}

// ---------------------------------------------------------------------
// Target scaling

/// Per-instructor z-score parameters fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTransform {
    pub per_instructor: BTreeMap<String, (f64, f64)>,
    pub global: (f64, f64),
}

impl TargetTransform {
    pub fn apply(&self, instructor: Option<&str>, value: f64) -> f64 {
        let (mean, std) = instructor
            .and_then(|i| self.per_instructor.get(i))
            .copied()
            .unwrap_or(self.global);
        (value - mean) / std
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std == 0.0 { 1.0 } else { std })
}

/// Z-score targets within each instructor's training distribution. Every
/// row (train and test) is scaled with train-fitted statistics;
/// instructors with fewer than 2 training rows fall back to the global
/// transform, as does a user with no instructor on record.
pub fn scale_targets_by_instructor(
    scores: &[f64],
    users: &[String],
    roster: &Roster,
    train: &[usize],
) -> (Vec<f64>, TargetTransform) {
    let instructor_of = |user: &str| -> Option<String> {
        roster
            .section(user)
            .and_then(|s| roster.instructor(s))
            .map(str::to_string)
    };
    let train_values: Vec<f64> = train.iter().map(|&i| scores[i]).collect();
    let global = if train_values.is_empty() {
        (0.0, 1.0)
    } else {
        mean_std(&train_values)
    };
    let mut by_instructor: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &i in train {
        if let Some(instr) = instructor_of(&users[i]) {
            by_instructor.entry(instr).or_default().push(scores[i]);
        }
    }
    let per_instructor = by_instructor
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(k, v)| (k, mean_std(&v)))
        .collect();
    let transform = TargetTransform {
        per_instructor,
        global,
    };
    let scaled = scores
        .iter()
        .zip(users)
        .map(|(&v, u)| transform.apply(instructor_of(u).as_deref(), v))
        .collect();
    (scaled, transform)
}

// ---------------------------------------------------------------------
// Matrix transforms (column-major; NaN = missing)

/// Replace missing cells with the training mean of their column. A column
/// with no observed training value imputes to 0.
pub fn impute_mean(x: &[Vec<f64>], train: &[usize]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|col| {
            let observed: Vec<f64> = train
                .iter()
                .map(|&i| col[i])
                .filter(|v| !v.is_nan())
                .collect();
            let fill = if observed.is_empty() {
                0.0
            } else {
                observed.iter().sum::<f64>() / observed.len() as f64
            };
            col.iter()
                .map(|&v| if v.is_nan() { fill } else { v })
                .collect()
        })
        .collect()
}

/// Z-score each column with training statistics. Columns constant on the
/// training rows become identically zero.
pub fn standardize(x: &[Vec<f64>], train: &[usize]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|col| {
            let values: Vec<f64> = train.iter().map(|&i| col[i]).collect();
            let n = values.len().max(1) as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std =
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if std == 0.0 {
                vec![0.0; col.len()]
            } else {
                col.iter().map(|&v| (v - mean) / std).collect()
            }
        })
        .collect()
}

// ---------------------------------------------------------------------
// Mutual information

/// Equal-frequency bin ids over `rows` of one column. Ties share a bin;
/// heavily tied columns may occupy fewer than `bins` distinct bins.
fn equal_freq_bins(col: &[f64], rows: &[usize], bins: usize) -> Vec<usize> {
    let mut sorted: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = (1..bins).map(|j| sorted[j * n / bins]).collect();
    rows.iter()
        .map(|&i| edges.partition_point(|e| *e <= col[i]))
        .collect()
}

fn mutual_information(xb: &[usize], yb: &[usize], bins: usize) -> f64 {
    let n = xb.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut mx = vec![0usize; bins];
    let mut my = vec![0usize; bins];
    for (&a, &b) in xb.iter().zip(yb) {
        joint[a * bins + b] += 1;
        mx[a] += 1;
        my[b] += 1;
    }
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / ((mx[a] as f64 / n) * (my[b] as f64 / n))).ln();
            }
        }
    }
    mi
}

/// All column indices ranked by estimated mutual information with the
/// target over `rows`, descending; ties broken toward lower indices.
pub fn mi_rank(x: &[Vec<f64>], y: &[f64], rows: &[usize], bins: usize) -> Vec<usize> {
    let yb = equal_freq_bins(y, rows, bins);
    let mut scored: Vec<(usize, f64)> = x
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let xb = equal_freq_bins(col, rows, bins);
            (j, mutual_information(&xb, &yb, bins))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(j, _)| j).collect()
}

/// Top-k columns by mutual information with the target (all rows).
pub fn mi_select(x: &[Vec<f64>], y: &[f64], k: usize, bins: usize) -> Vec<usize> {
    let rows: Vec<usize> = (0..y.len()).collect();
    let mut top = mi_rank(x, y, &rows, bins);
    top.truncate(k);
    top
}

// ---------------------------------------------------------------------
// Estimators

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EstimatorKind {
    Linear,
    Tree,
    Boost,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] =
        [EstimatorKind::Linear, EstimatorKind::Tree, EstimatorKind::Boost];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Linear => "linear",
            EstimatorKind::Tree => "tree",
            EstimatorKind::Boost => "boost",
        }
    }
}

/// Gaussian elimination with partial pivoting; diagonal is jittered by
/// the caller, so pivots are nonzero.
fn solve_linear_system(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for i in 0..n {
        let mut p = i;
        for r in i + 1..n {
            if a[r][i].abs() > a[p][i].abs() {
                p = r;
            }
        }
        a.swap(i, p);
        b.swap(i, p);
        let pivot = a[i][i];
        for r in i + 1..n {
            let f = a[r][i] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in i..n {
                a[r][c] -= f * a[i][c];
            }
            b[r] -= f * b[i];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for c in i + 1..n {
            s -= a[i][c] * x[c];
        }
        x[i] = s / a[i][i];
    }
    x
}

/// OLS with intercept via normal equations; 1e-8 ridge jitter keeps the
/// system solvable when columns are collinear.
fn fit_ols(cols: &[&[f64]], y: &[f64], train: &[usize]) -> Vec<f64> {
    let k = cols.len();
    let dim = k + 1; // intercept last
    let value = |j: usize, row: usize| if j == k { 1.0 } else { cols[j][row] };
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![0.0; dim];
    for &row in train {
        for i in 0..dim {
            let vi = value(i, row);
            b[i] += vi * y[row];
            for j in i..dim {
                a[i][j] += vi * value(j, row);
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
        a[i][i] += 1e-8;
    }
    solve_linear_system(a, b)
}

fn predict_ols(coef: &[f64], cols: &[&[f64]], row: usize) -> f64 {
    let k = cols.len();
    let mut s = coef[k];
    for j in 0..k {
        s += coef[j] * cols[j][row];
    }
    s
}

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART regression tree over column-major data with presorted row lists.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy)]
struct TreeParams {
    max_depth: usize,
    min_leaf: usize,
}

impl Tree {
    pub fn predict(&self, cols: &[&[f64]], row: usize) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if cols[*feature][row] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// Rows of `train` sorted ascending by each column (stable in row order).
fn presort_columns(cols: &[&[f64]], train: &[usize]) -> Vec<Vec<u32>> {
    cols.iter()
        .map(|col| {
            let mut rows: Vec<u32> = train.iter().map(|&i| i as u32).collect();
            rows.sort_by(|&a, &b| {
                col[a as usize]
                    .total_cmp(&col[b as usize])
                    .then(a.cmp(&b))
            });
            rows
        })
        .collect()
}

/// Variance-reduction splitter. Ties go to the lowest feature index and
/// then the lowest threshold (features and positions scanned ascending,
/// strictly-better gain required to switch).
fn grow_tree(
    cols: &[&[f64]],
    y: &[f64],
    sorted: Vec<Vec<u32>>,
    depth_left: usize,
    params: TreeParams,
    nodes: &mut Vec<TreeNode>,
    importance: &mut [f64],
) -> usize {
    let rows = &sorted[0];
    let n = rows.len();
    let sum: f64 = rows.iter().map(|&i| y[i as usize]).sum();
    let sum2: f64 = rows.iter().map(|&i| y[i as usize] * y[i as usize]).sum();
    let mean = sum / n as f64;
    let sse = sum2 - sum * sum / n as f64;

    let leaf = |nodes: &mut Vec<TreeNode>| {
        nodes.push(TreeNode::Leaf { value: mean });
        nodes.len() - 1
    };
    if depth_left == 0 || n < 2 * params.min_leaf || sse <= 0.0 {
        return leaf(nodes);
    }

    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    for (j, order) in sorted.iter().enumerate() {
        let col = cols[j];
        let mut left_sum = 0.0;
        let mut left_sum2 = 0.0;
        for (pos, &row) in order[..n - 1].iter().enumerate() {
            let v = y[row as usize];
            left_sum += v;
            left_sum2 += v * v;
            let nl = pos + 1;
            let nr = n - nl;
            if nl < params.min_leaf || nr < params.min_leaf {
                continue;
            }
            let here = col[row as usize];
            let next = col[order[pos + 1] as usize];
            if here >= next {
                continue; // no boundary between equal values
            }
            let sse_l = left_sum2 - left_sum * left_sum / nl as f64;
            let right_sum = sum - left_sum;
            let sse_r = (sum2 - left_sum2) - right_sum * right_sum / nr as f64;
            let gain = sse - sse_l - sse_r;
            if best.is_none_or(|(g, _, _)| gain > g) {
                let mut threshold = (here + next) / 2.0;
                if threshold >= next {
                    threshold = here; // midpoint collapsed by rounding
                }
                best = Some((gain, j, threshold));
            }
        }
    }
    let Some((gain, feature, threshold)) = best else {
        return leaf(nodes);
    };
    if gain <= 0.0 {
        return leaf(nodes);
    }
    importance[feature] += gain;

    let split_col = cols[feature];
    let mut left_sorted = Vec::with_capacity(sorted.len());
    let mut right_sorted = Vec::with_capacity(sorted.len());
    for order in &sorted {
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for &row in order {
            if split_col[row as usize] <= threshold {
                l.push(row);
            } else {
                r.push(row);
            }
        }
        left_sorted.push(l);
        right_sorted.push(r);
    }
    drop(sorted);

    let placeholder = nodes.len();
    nodes.push(TreeNode::Leaf { value: mean });
    let left = grow_tree(cols, y, left_sorted, depth_left - 1, params, nodes, importance);
    let right = grow_tree(cols, y, right_sorted, depth_left - 1, params, nodes, importance);
    nodes[placeholder] = TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    };
    placeholder
}

fn fit_tree(
    cols: &[&[f64]],
    y: &[f64],
    sorted: Vec<Vec<u32>>,
    params: TreeParams,
    importance: &mut [f64],
) -> Tree {
    let mut nodes = Vec::new();
    grow_tree(cols, y, sorted, params.max_depth, params, &mut nodes, importance);
    Tree { nodes }
}

/// Least-squares gradient boosting: shrunken depth-bounded trees fit to
/// residuals, starting from the training mean.
#[derive(Debug, Clone)]
pub struct BoostModel {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Raw variance-reduction sums per feature, across all splits.
    pub importance: Vec<f64>,
}

impl BoostModel {
    pub fn predict(&self, cols: &[&[f64]], row: usize) -> f64 {
        self.staged_predict(cols, row, self.trees.len())
    }

    /// Prediction using only the first `rounds` trees.
    pub fn staged_predict(&self, cols: &[&[f64]], row: usize, rounds: usize) -> f64 {
        let mut f = self.init;
        for tree in &self.trees[..rounds] {
            f += self.learning_rate * tree.predict(cols, row);
        }
        f
    }
}

fn fit_boost(
    cols: &[&[f64]],
    y: &[f64],
    sorted: &[Vec<u32>],
    train: &[usize],
    cfg: &StudyConfig,
) -> BoostModel {
    let init = train.iter().map(|&i| y[i]).sum::<f64>() / train.len() as f64;
    let params = TreeParams {
        max_depth: cfg.boost_depth,
        min_leaf: cfg.min_leaf,
    };
    let mut residual = vec![0.0; y.len()];
    for &i in train {
        residual[i] = y[i] - init;
    }
    let mut model = BoostModel {
        init,
        learning_rate: cfg.learning_rate,
        trees: Vec::with_capacity(cfg.rounds),
        importance: vec![0.0; cols.len()],
    };
    for _ in 0..cfg.rounds {
        let tree = fit_tree(cols, &residual, sorted.to_vec(), params, &mut model.importance);
        for &i in train {
            residual[i] -= cfg.learning_rate * tree.predict(cols, i);
        }
        model.trees.push(tree);
    }
    model
}

/// Normalized, descending (feature name, share of variance reduction).
pub fn feature_importance(model: &BoostModel, names: &[String]) -> Vec<(String, f64)> {
    let total: f64 = model.importance.iter().sum();
    let mut pairs: Vec<(String, f64)> = names
        .iter()
        .zip(&model.importance)
        .map(|(n, &v)| (n.clone(), if total > 0.0 { v / total } else { 0.0 }))
        .collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs
}

/// Fit one estimator on the training rows of a column subset and predict
/// the test rows. Internal workhorse over column-major data.
fn fit_predict_rows(
    kind: EstimatorKind,
    cols: &[&[f64]],
    y: &[f64],
    train: &[usize],
    test: &[usize],
    cfg: &StudyConfig,
) -> Result<Vec<f64>, ModelingError> {
    if train.len() < 2 {
        return Err(ModelingError::DegenerateTrain(train.len()));
    }
    match kind {
        EstimatorKind::Linear => {
            let coef = fit_ols(cols, y, train);
            Ok(test.iter().map(|&r| predict_ols(&coef, cols, r)).collect())
        }
        EstimatorKind::Tree => {
            let sorted = presort_columns(cols, train);
            let params = TreeParams {
                max_depth: cfg.tree_depth,
                min_leaf: cfg.min_leaf,
            };
            let mut importance = vec![0.0; cols.len()];
            let tree = fit_tree(cols, y, sorted, params, &mut importance);
            Ok(test.iter().map(|&r| tree.predict(cols, r)).collect())
        }
        EstimatorKind::Boost => {
            let sorted = presort_columns(cols, train);
            let model = fit_boost(cols, y, &sorted, train, cfg);
            Ok(test.iter().map(|&r| model.predict(cols, r)).collect())
        }
    }
}

/// Row-major convenience wrapper: fit on (train_x, train_y), predict
/// test_x.
pub fn fit_predict(
    kind: EstimatorKind,
    train_x: &[Vec<f64>],
    train_y: &[f64],
    test_x: &[Vec<f64>],
    cfg: &StudyConfig,
) -> Result<Vec<f64>, ModelingError> {
    if train_x.len() < 2 {
        return Err(ModelingError::DegenerateTrain(train_x.len()));
    }
    let p = train_x[0].len();
    let n = train_x.len() + test_x.len();
    let mut cols = vec![Vec::with_capacity(n); p];
    for row in train_x.iter().chain(test_x) {
        for (j, v) in row.iter().enumerate() {
            cols[j].push(*v);
        }
    }
    let mut y = train_y.to_vec();
    y.resize(n, 0.0);
    let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let train: Vec<usize> = (0..train_x.len()).collect();
    let test: Vec<usize> = (train_x.len()..n).collect();
    fit_predict_rows(kind, &col_refs, &y, &train, &test, cfg)
}

/// Row-major gradient-boost fit, exposed for importance inspection and
/// staged-error checks.
pub fn fit_boost_rows(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    cfg: &StudyConfig,
) -> Result<(BoostModel, Vec<Vec<f64>>), ModelingError> {
    if train_x.len() < 2 {
        return Err(ModelingError::DegenerateTrain(train_x.len()));
    }
    let p = train_x[0].len();
    let mut cols = vec![Vec::with_capacity(train_x.len()); p];
    for row in train_x {
        for (j, v) in row.iter().enumerate() {
            cols[j].push(*v);
        }
    }
    let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let train: Vec<usize> = (0..train_x.len()).collect();
    let sorted = presort_columns(&col_refs, &train);
    let model = fit_boost(&col_refs, train_y, &sorted, &train, cfg);
    Ok((model, cols))
}

// ---------------------------------------------------------------------
// Cross-validation

/// Assign each sample's group wholly to one fold: groups are placed
/// largest-first into the currently smallest fold; the seed shuffles the
/// order among equal-sized groups.
pub fn group_kfold(
    groups: &[String],
    folds: usize,
    seed: u64,
) -> Result<Vec<usize>, ModelingError> {
    if groups.is_empty() || folds == 0 {
        return Err(ModelingError::NoGroups);
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    if folds > members.len() {
        return Err(ModelingError::FoldsExceedGroups {
            folds,
            groups: members.len(),
        });
    }
    let mut order: Vec<&str> = members.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.sort_by_key(|g| std::cmp::Reverse(members[g].len())); // stable
    let mut assignment = vec![0usize; groups.len()];
    let mut load = vec![0usize; folds];
    for g in order {
        let fold = (0..folds).min_by_key(|&f| (load[f], f)).unwrap();
        for &i in &members[g] {
            assignment[i] = fold;
        }
        load[fold] += members[g].len();
    }
    Ok(assignment)
}

// ---------------------------------------------------------------------
// Statistics

/// Product-moment correlation and its two-sided p-value (t distribution,
/// n-2 degrees of freedom).
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<(f64, f64), ModelingError> {
    let n = a.len();
    if n != b.len() || n < 3 {
        return Err(ModelingError::TooFewSamples(n.min(b.len())));
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 {
        return Err(ModelingError::ZeroVariance("first"));
    }
    if vb == 0.0 {
        return Err(ModelingError::ZeroVariance("second"));
    }
    let r = (cov / (va * vb).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if 1.0 - r * r <= f64::EPSILON {
        0.0
    } else {
        let t = r.abs() * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        2.0 * (1.0 - dist.cdf(t))
    };
    Ok((r, p))
}

/// Confidence interval for r_jk - r_jh, two dependent overlapping
/// correlations sharing variable j, after Zou (2007): Fisher-z limits per
/// correlation, recombined with the estimated correlation between the two
/// sample correlations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZouInterval {
    pub difference: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ZouInterval {
    /// The difference is significant when the interval excludes zero.
    pub fn significant(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

pub fn zou_compare(
    r_jk: f64,
    r_jh: f64,
    r_kh: f64,
    n: usize,
    confidence: f64,
) -> Result<ZouInterval, ModelingError> {
    if n <= 3 {
        return Err(ModelingError::TooFewForComparison(n));
    }
    for (r, name) in [(r_jk, "r_jk"), (r_jh, "r_jh"), (r_kh, "r_kh")] {
        if !(-1.0..=1.0).contains(&r) || r.abs() >= 1.0 {
            return Err(ModelingError::BadCorrelation(name));
        }
    }
    // The three correlations must form a positive semidefinite matrix.
    let det = 1.0 + 2.0 * r_jk * r_jh * r_kh - r_jk * r_jk - r_jh * r_jh - r_kh * r_kh;
    if det < -1e-12 {
        return Err(ModelingError::BadCorrelationTriple(r_jk, r_jh, r_kh));
    }
    let se = 1.0 / ((n - 3) as f64).sqrt();
    let zc = Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(0.5 + confidence / 2.0);
    let l1 = (r_jk.atanh() - zc * se).tanh();
    let u1 = (r_jk.atanh() + zc * se).tanh();
    let l2 = (r_jh.atanh() - zc * se).tanh();
    let u2 = (r_jh.atanh() + zc * se).tanh();
    let c = ((r_kh - r_jk * r_jh / 2.0) * (1.0 - r_jk * r_jk - r_jh * r_jh - r_kh * r_kh)
        + r_kh * r_kh * r_kh)
        / ((1.0 - r_jk * r_jk) * (1.0 - r_jh * r_jh));
    let diff = r_jk - r_jh;
    let lo_term = (r_jk - l1).powi(2) + (u2 - r_jh).powi(2)
        - 2.0 * c * (r_jk - l1) * (u2 - r_jh);
    let hi_term = (u1 - r_jk).powi(2) + (r_jh - l2).powi(2)
        - 2.0 * c * (u1 - r_jk) * (r_jh - l2);
    Ok(ZouInterval {
        difference: diff,
        lower: diff - lo_term.max(0.0).sqrt(),
        upper: diff + hi_term.max(0.0).sqrt(),
    })
}

pub fn significance_marker(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(p) if p < 0.1 => ".",
        _ => "-",
    }
}

// ---------------------------------------------------------------------
// The study driver

/// Which columns a model trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelName {
    Baseline,
    PeerEvaluation,
    IndividualWifi,
    GroupWifi,
    Combined,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Baseline => "M_0",
            ModelName::PeerEvaluation => "M_PE",
            ModelName::IndividualWifi => "M_iWF",
            ModelName::GroupWifi => "M_gWF",
            ModelName::Combined => "M_iWF_gWF",
        }
    }
}

/// A model family: its column subset and how to fit it.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: ModelName,
    pub columns: Vec<usize>,
    pub estimator: EstimatorKind,
    /// None = choose k by inner cross-validation.
    pub selection_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelOutcome {
    pub name: String,
    pub estimator: String,
    pub rmse: f64,
    pub pearson_r: Option<f64>,
    pub p_value: Option<f64>,
    pub significance: String,
    pub selected_k_by_fold: Vec<usize>,
    /// Union of selected column names across folds, sorted.
    pub selected_features: Vec<String>,
    /// Gradient-boost variance-reduction shares, averaged over folds.
    pub importances: Vec<(String, f64)>,
    #[serde(skip)]
    pub predictions: Vec<f64>,
    #[serde(skip)]
    pub actuals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonOutcome {
    pub model_a: String,
    pub model_b: String,
    pub r_a: f64,
    pub r_b: f64,
    pub interval: ZouInterval,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationResult {
    pub n_samples: usize,
    pub seed: u64,
    pub confidence: f64,
    pub models: Vec<ModelOutcome>,
    pub comparisons: Vec<ComparisonOutcome>,
    #[serde(skip)]
    pub row_users: Vec<String>,
}

impl EvaluationResult {
    pub fn model(&self, name: ModelName) -> Option<&ModelOutcome> {
        self.models.iter().find(|m| m.name == name.as_str())
    }
}

fn rmse(pred: &[f64], actual: &[f64]) -> f64 {
    let n = pred.len() as f64;
    (pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / n)
        .sqrt()
}

fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Pick k by 3-fold group CV on the outer-training rows, reusing the
/// outer fold's MI ranking and transforms. Smallest k wins ties.
#[allow(clippy::too_many_arguments)]
fn select_k(
    kind: EstimatorKind,
    cols: &[Vec<f64>],
    y: &[f64],
    ranked: &[usize],
    train: &[usize],
    groups: &[String],
    cfg: &StudyConfig,
    outer_fold: usize,
) -> Result<usize, ModelingError> {
    let max_k = cfg.max_k.min(ranked.len());
    if max_k <= 1 {
        return Ok(max_k.max(1));
    }
    let train_groups: Vec<String> = train.iter().map(|&i| groups[i].clone()).collect();
    let distinct: BTreeSet<&String> = train_groups.iter().collect();
    let inner_folds = cfg.inner_folds.min(distinct.len());
    if inner_folds < 2 {
        return Ok(max_k);
    }
    let assign = group_kfold(
        &train_groups,
        inner_folds,
        cfg.seed.wrapping_add(1 + outer_fold as u64),
    )?;
    // Per inner fold: presorted training rows for every ranked column, so
    // each k reuses the prefix.
    let ranked_cols: Vec<&[f64]> = ranked[..max_k].iter().map(|&j| cols[j].as_slice()).collect();
    let mut inner_splits = Vec::with_capacity(inner_folds);
    for fi in 0..inner_folds {
        let it_train: Vec<usize> = train
            .iter()
            .zip(&assign)
            .filter(|(_, &f)| f != fi)
            .map(|(&i, _)| i)
            .collect();
        let it_test: Vec<usize> = train
            .iter()
            .zip(&assign)
            .filter(|(_, &f)| f == fi)
            .map(|(&i, _)| i)
            .collect();
        if it_train.len() < 2 || it_test.is_empty() {
            continue;
        }
        let sorted = presort_columns(&ranked_cols, &it_train);
        inner_splits.push((it_train, it_test, sorted));
    }
    if inner_splits.is_empty() {
        return Ok(max_k);
    }
    let mut best = (f64::INFINITY, 1usize);
    for k in 1..=max_k {
        let subset: Vec<&[f64]> = ranked_cols[..k].to_vec();
        let mut sq = 0.0;
        let mut count = 0usize;
        for (it_train, it_test, sorted) in &inner_splits {
            let preds = match kind {
                EstimatorKind::Linear => {
                    let coef = fit_ols(&subset, y, it_train);
                    it_test
                        .iter()
                        .map(|&r| predict_ols(&coef, &subset, r))
                        .collect::<Vec<f64>>()
                }
                EstimatorKind::Tree => {
                    let params = TreeParams {
                        max_depth: cfg.tree_depth,
                        min_leaf: cfg.min_leaf,
                    };
                    let mut imp = vec![0.0; k];
                    let tree = fit_tree(&subset, y, sorted[..k].to_vec(), params, &mut imp);
                    it_test
                        .iter()
                        .map(|&r| tree.predict(&subset, r))
                        .collect::<Vec<f64>>()
                }
                EstimatorKind::Boost => {
                    let model = fit_boost(&subset, y, &sorted[..k], it_train, cfg);
                    it_test
                        .iter()
                        .map(|&r| model.predict(&subset, r))
                        .collect::<Vec<f64>>()
                }
            };
            for (p, &row) in preds.iter().zip(it_test.iter()) {
                sq += (p - y[row]) * (p - y[row]);
            }
            count += it_test.len();
        }
        let score = (sq / count as f64).sqrt();
        if score < best.0 {
            best = (score, k);
        }
    }
    Ok(best.1)
}

/// Evaluate the five model families over group k-fold splits, keeping the
/// RMSE-minimizing estimator per family, and compare the four feature
/// models' correlations pairwise.
pub fn run_study(
    features: &[FeatureVector],
    scores: &ScoreTable,
    roster: &Roster,
    cfg: &StudyConfig,
) -> Result<EvaluationResult, ModelingError> {
    // Assemble the design matrix: 6 PE + 20 individual + 72 collocation.
    let mut column_names: Vec<String> = PE_COLUMNS.iter().map(|s| s.to_string()).collect();
    column_names.extend(crate::features::all_summary_names());
    let n_cols = column_names.len();

    let mut users = Vec::with_capacity(features.len());
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(features.len()); n_cols];
    let mut raw_targets = Vec::with_capacity(features.len());
    let mut groups = Vec::with_capacity(features.len());
    for fv in features {
        let row = scores
            .row_of(&fv.user_id)
            .ok_or_else(|| ModelingError::MissingScore(fv.user_id.clone()))?;
        let group = roster
            .group(&fv.user_id)
            .ok_or_else(|| ModelingError::UnknownUser(fv.user_id.clone()))?;
        users.push(fv.user_id.clone());
        groups.push(group.to_string());
        raw_targets.push(scores.target[row]);
        for (j, v) in scores.pe[row]
            .iter()
            .chain(fv.individual.iter())
            .chain(fv.collocation.iter())
            .enumerate()
        {
            cols[j].push(*v);
        }
    }
    let n = users.len();
    if n < 2 {
        return Err(ModelingError::DegenerateTrain(n));
    }

    let pe_cols: Vec<usize> = (0..6).collect();
    let iwf_cols: Vec<usize> = (6..26).collect();
    let gwf_cols: Vec<usize> = (26..98).collect();
    let both_cols: Vec<usize> = (6..98).collect();
    let families: [(ModelName, &[usize]); 4] = [
        (ModelName::PeerEvaluation, &pe_cols),
        (ModelName::IndividualWifi, &iwf_cols),
        (ModelName::GroupWifi, &gwf_cols),
        (ModelName::Combined, &both_cols),
    ];

    let fold_of = group_kfold(&groups, cfg.folds, cfg.seed)?;

    // Accumulators: per (family, estimator) pooled predictions, selected
    // k and names per fold; importances per family from the boost fits.
    let mut preds: BTreeMap<(usize, EstimatorKind), Vec<f64>> = BTreeMap::new();
    let mut ks: BTreeMap<(usize, EstimatorKind), Vec<usize>> = BTreeMap::new();
    let mut names_sel: BTreeMap<(usize, EstimatorKind), BTreeSet<String>> = BTreeMap::new();
    let mut importances: Vec<Vec<f64>> = vec![vec![0.0; n_cols]; families.len()];
    for (fi, _) in families.iter().enumerate() {
        for kind in EstimatorKind::ALL {
            preds.insert((fi, kind), vec![0.0; n]);
            ks.insert((fi, kind), vec![]);
            names_sel.insert((fi, kind), BTreeSet::new());
        }
    }
    let mut baseline_preds = vec![0.0; n];
    let mut actuals = vec![0.0; n];

    for fold in 0..cfg.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        if train.len() < 2 {
            return Err(ModelingError::DegenerateTrain(train.len()));
        }
        let (y, _) = scale_targets_by_instructor(&raw_targets, &users, roster, &train);
        for &i in &test {
            actuals[i] = y[i];
        }
        let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let med = median_of(&train_y);
        for &i in &test {
            baseline_preds[i] = med;
        }

        for (fi, (_, columns)) in families.iter().enumerate() {
            let sub: Vec<Vec<f64>> = columns.iter().map(|&j| cols[j].clone()).collect();
            let sub = impute_mean(&sub, &train);
            let sub = standardize(&sub, &train);
            let ranked = mi_rank(&sub, &y, &train, cfg.mi_bins);
            for kind in EstimatorKind::ALL {
                let k = select_k(kind, &sub, &y, &ranked, &train, &groups, cfg, fold)?;
                let chosen: Vec<&[f64]> =
                    ranked[..k].iter().map(|&j| sub[j].as_slice()).collect();
                let out = match kind {
                    EstimatorKind::Boost => {
                        let sorted = presort_columns(&chosen, &train);
                        let model = fit_boost(&chosen, &y, &sorted, &train, cfg);
                        for (local, &j) in ranked[..k].iter().enumerate() {
                            importances[fi][columns[j]] += model.importance[local];
                        }
                        test.iter().map(|&r| model.predict(&chosen, r)).collect()
                    }
                    _ => fit_predict_rows(kind, &chosen, &y, &train, &test, cfg)?,
                };
                let slot = preds.get_mut(&(fi, kind)).unwrap();
                for (p, &row) in out.iter().zip(&test) {
                    slot[row] = *p;
                }
                ks.get_mut(&(fi, kind)).unwrap().push(k);
                let sel = names_sel.get_mut(&(fi, kind)).unwrap();
                for &j in &ranked[..k] {
                    sel.insert(column_names[columns[j]].clone());
                }
            }
        }
    }

    // Baseline outcome: constant per fold, so r is undefined.
    let mut models = vec![ModelOutcome {
        name: ModelName::Baseline.as_str().to_string(),
        estimator: "median".to_string(),
        rmse: rmse(&baseline_preds, &actuals),
        pearson_r: None,
        p_value: None,
        significance: "-".to_string(),
        selected_k_by_fold: vec![],
        selected_features: vec![],
        importances: vec![],
        predictions: baseline_preds,
        actuals: actuals.clone(),
    }];

    for (fi, (name, _)) in families.iter().enumerate() {
        // Keep the estimator with the lowest pooled RMSE.
        let mut winner = EstimatorKind::Linear;
        let mut best = f64::INFINITY;
        for kind in EstimatorKind::ALL {
            let e = rmse(&preds[&(fi, kind)], &actuals);
            if e < best {
                best = e;
                winner = kind;
            }
        }
        let predictions = preds[&(fi, winner)].clone();
        let (r, p) = match pearson_r(&predictions, &actuals) {
            Ok((r, p)) => (Some(r), Some(p)),
            Err(_) => (None, None),
        };
        let total: f64 = importances[fi].iter().sum();
        let mut imp: Vec<(String, f64)> = importances[fi]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(j, &v)| {
                (
                    column_names[j].clone(),
                    if total > 0.0 { v / total } else { 0.0 },
                )
            })
            .collect();
        imp.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        models.push(ModelOutcome {
            name: name.as_str().to_string(),
            estimator: winner.as_str().to_string(),
            rmse: best,
            pearson_r: r,
            p_value: p,
            significance: significance_marker(p).to_string(),
            selected_k_by_fold: ks[&(fi, winner)].clone(),
            selected_features: names_sel[&(fi, winner)].iter().cloned().collect(),
            importances: imp,
            predictions,
            actuals: actuals.clone(),
        });
    }

    // Pairwise dependent-correlation comparisons among the feature models.
    let mut comparisons = Vec::new();
    for a in 1..models.len() {
        for b in a + 1..models.len() {
            let (Some(r_a), Some(r_b)) = (models[a].pearson_r, models[b].pearson_r) else {
                continue;
            };
            let Ok((r_ab, _)) = pearson_r(&models[a].predictions, &models[b].predictions)
            else {
                continue;
            };
            let Ok(interval) = zou_compare(r_a, r_b, r_ab, n, cfg.confidence) else {
                continue;
            };
            comparisons.push(ComparisonOutcome {
                model_a: models[a].name.clone(),
                model_b: models[b].name.clone(),
                r_a,
                r_b,
                significant: interval.significant(),
                interval,
            });
        }
    }

    Ok(EvaluationResult {
        n_samples: n,
        seed: cfg.seed,
        confidence: cfg.confidence,
        models,
        comparisons,
        row_users: users,
    })
}

/// Render the per-model summary as a markdown table.
pub fn summary_markdown(result: &EvaluationResult) -> String {
    let mut out = String::from(
        "| Model | Estimator | k (per fold) | RMSE | r | p | sig |\n\
         |-------|-----------|--------------|------|---|---|-----|\n",
    );
    for m in &result.models {
        let ks = if m.selected_k_by_fold.is_empty() {
            "-".to_string()
        } else {
            m.selected_k_by_fold
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {:.4} | {} | {} | {} |\n",
            m.name,
            m.estimator,
            ks,
            m.rmse,
            fmt_opt(m.pearson_r),
            fmt_opt(m.p_value),
            m.significance
        ));
    }
    out.push_str(&format!(
        "\nSignificance: `**` p<0.01, `*` p<0.05, `.` p<0.1, `-` otherwise. \
         n = {} samples, {}% comparison intervals.\n",
        result.n_samples,
        (result.confidence * 100.0).round()
    ));
    if !result.comparisons.is_empty() {
        out.push_str("\n| Comparison | r_a | r_b | diff | CI | significant |\n");
        out.push_str("|------------|-----|-----|------|----|-------------|\n");
        for c in &result.comparisons {
            out.push_str(&format!(
                "| {} vs {} | {:.4} | {:.4} | {:.4} | [{:.4}, {:.4}] | {} |\n",
                c.model_a,
                c.model_b,
                c.r_a,
                c.r_b,
                c.interval.difference,
                c.interval.lower,
                c.interval.upper,
                if c.significant { "yes" } else { "no" }
            ));
        }
    }
    out
}

/// Write `results.json`.
pub fn write_results_json(
    result: &EvaluationResult,
    path: impl AsRef<Path>,
) -> Result<(), ModelingError> {
    let json = serde_json::to_string_pretty(result)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}
