//! The two prediction protocols: binary long-term success from one snapshot,
//! and pairwise relative success between apps of similar size, trained on
//! one period and tested on the next.

use std::io::Write;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{active_users, ActivityLog, AppId, AttributeTable, Day, SocialGraph};
use crate::error::{Error, Result};
use crate::features::{self, FeatureGroup, FeatureMatrix, FeatureOptions, FeatureSchema, FeatureVector, Imputer};
use crate::forest::{self, Evaluation, Forest, ForestConfig};
use crate::rng;
use crate::timeseries::MONTH_DAYS;

/// Ratio of MAU at the outcome day to MAU at the start day at or above which
/// an app counts as a success.
pub const SUCCESS_RATIO: f64 = 0.5;
/// Smallest minority-class share accepted by the binary task.
pub const MIN_MINORITY_SHARE: f64 = 0.1;
pub const TOP_FEATURES: usize = 2;

/// Inputs shared by both tasks.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    pub log: &'a ActivityLog,
    pub graph: &'a SocialGraph,
    pub attrs: &'a AttributeTable,
}

pub fn mau(log: &ActivityLog, app: AppId, day: Day) -> Result<usize> {
    active_users(log, app, day, MONTH_DAYS as u32)
}

/// `Some(true)` when `mau_t2 / mau_t1 >= 0.5`; `None` when `mau_t1 = 0`.
pub fn success_label(mau_t1: usize, mau_t2: usize) -> Option<bool> {
    (mau_t1 > 0).then(|| mau_t2 as f64 / mau_t1 as f64 >= SUCCESS_RATIO)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryLabel {
    pub app: AppId,
    pub mau_t1: usize,
    pub mau_t2: usize,
    pub ratio: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryLabeling {
    pub t1: Day,
    pub t2: Day,
    pub labels: Vec<BinaryLabel>,
    pub positive_fraction: f64,
}

fn check_mau_day(log: &ActivityLog, day: Day) -> Result<()> {
    if day > log.horizon_end() || (day.0 as usize) + 1 < MONTH_DAYS {
        return Err(Error::WindowOutsideHorizon {
            end: day.0,
            len: MONTH_DAYS as u32,
            horizon_end: log.horizon_end().0,
        });
    }
    Ok(())
}

/// Labels every app of `apps` with positive MAU at `t1`.
pub fn label_binary(log: &ActivityLog, apps: &[AppId], t1: Day, t2: Day) -> Result<BinaryLabeling> {
    if t2 <= t1 {
        return Err(Error::invalid(format!("outcome day {t2} must come after {t1}")));
    }
    check_mau_day(log, t1)?;
    check_mau_day(log, t2)?;
    let mut labels = Vec::new();
    for &app in apps {
        let m1 = mau(log, app, t1)?;
        let m2 = mau(log, app, t2)?;
        if let Some(positive) = success_label(m1, m2) {
            labels.push(BinaryLabel {
                app,
                mau_t1: m1,
                mau_t2: m2,
                ratio: m2 as f64 / m1 as f64,
                positive,
            });
        }
    }
    if labels.is_empty() {
        return Err(Error::insufficient(format!("no app has users in the month ending on day {t1}")));
    }
    let positive_fraction = labels.iter().filter(|l| l.positive).count() as f64 / labels.len() as f64;
    Ok(BinaryLabeling {
        t1,
        t2,
        labels,
        positive_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub name: String,
    pub groups: Vec<FeatureGroup>,
}

impl FeatureSet {
    pub fn all() -> Self {
        FeatureSet {
            name: "all".into(),
            groups: FeatureGroup::ALL.to_vec(),
        }
    }

    pub fn single(group: FeatureGroup) -> Self {
        FeatureSet {
            name: group.name().into(),
            groups: vec![group],
        }
    }

    /// All features, then each of the four main groups.
    pub fn standard() -> Vec<FeatureSet> {
        let mut v = vec![FeatureSet::all()];
        v.extend(
            [
                FeatureGroup::Temporal,
                FeatureGroup::Demographic,
                FeatureGroup::Retention,
                FeatureGroup::Social,
            ]
            .map(FeatureSet::single),
        );
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub feature_set: String,
    pub accuracy: f64,
    /// Ordered (positive, negative).
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    /// Accuracy of predicting the training majority class for every test row.
    pub baseline_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Highest-ranked features of this set in the all-features model.
    pub top_among_all: Vec<RankedFeature>,
    /// Highest-ranked features of the model trained on this set alone.
    pub top_within_class: Vec<RankedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinaryTaskConfig {
    /// Day of the snapshot that features describe.
    pub t1: u32,
    /// Outcome day.
    pub t2: u32,
    /// Share of apps used for training.
    pub train_fraction: f64,
    pub feature_sets: Vec<FeatureSet>,
    pub features: FeatureOptions,
    pub forest: ForestConfig,
    pub seed: u64,
}

impl Default for BinaryTaskConfig {
    fn default() -> Self {
        BinaryTaskConfig {
            t1: 359,
            t2: 539,
            train_fraction: 0.7,
            feature_sets: FeatureSet::standard(),
            features: FeatureOptions::default(),
            forest: ForestConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinaryTaskResult {
    pub labeling: BinaryLabeling,
    pub train_apps: Vec<AppId>,
    pub test_apps: Vec<AppId>,
    pub reports: Vec<TaskReport>,
    /// Imputed with training medians; rows follow the labeling.
    pub matrix: FeatureMatrix,
}

fn ranked(forest: &Forest, names: &[String], keep: impl Fn(usize) -> bool) -> Vec<RankedFeature> {
    forest
        .ranking()
        .into_iter()
        .filter(|&i| keep(i))
        .take(TOP_FEATURES)
        .map(|i| RankedFeature {
            name: names[i].clone(),
            importance: forest.oob_importance[i],
        })
        .collect()
}

fn rows_of(matrix: &FeatureMatrix, rows: &[usize], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|&r| cols.iter().map(|&c| matrix.rows[r][c]).collect()).collect()
}

fn majority_baseline(train: &[u8], test: &[u8]) -> f64 {
    let ones = train.iter().filter(|&&l| l == 1).count();
    let majority = u8::from(2 * ones > train.len());
    test.iter().filter(|&&l| l == majority).count() as f64 / test.len() as f64
}

fn schema_for(data: &TaskData, options: &FeatureOptions, sets: &[FeatureSet]) -> Result<FeatureSchema> {
    if sets.is_empty() {
        return Err(Error::InvalidConfig("at least one feature set is required".into()));
    }
    FeatureSchema::new(data.attrs, options.clone())
}

/// Labels apps at `(t1, t2)`, extracts features on the window ending at
/// `t1`, splits apps into train and test, and trains one forest per feature
/// set.
pub fn run_binary_task(data: &TaskData, cfg: &BinaryTaskConfig) -> Result<BinaryTaskResult> {
    cfg.forest.validate()?;
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidConfig("train_fraction must lie in (0, 1)".into()));
    }
    let apps: Vec<AppId> = data.log.app_ids().collect();
    let labeling = label_binary(data.log, &apps, Day(cfg.t1), Day(cfg.t2))?;
    let minority = labeling.positive_fraction.min(1.0 - labeling.positive_fraction);
    if minority < MIN_MINORITY_SHARE {
        return Err(Error::insufficient(format!(
            "minority class share {minority:.3} is below {MIN_MINORITY_SHARE}"
        )));
    }
    let schema = schema_for(data, &cfg.features, &cfg.feature_sets)?;
    let labeled: Vec<AppId> = labeling.labels.iter().map(|l| l.app).collect();
    let y: Vec<u8> = labeling.labels.iter().map(|l| u8::from(l.positive)).collect();
    let vectors = features::extract_all(&schema, data.log, data.graph, data.attrs, &labeled, Day(cfg.t1))?;

    let n = labeled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(cfg.seed, "binary-split", 0));
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n - 1);
    let (mut train, mut test) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    let matrix = features::feature_matrix(&schema, &vectors, Some(&train))?;
    let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let y_test: Vec<u8> = test.iter().map(|&i| y[i]).collect();
    let baseline = majority_baseline(&y_train, &y_test);

    let mut fitted = Vec::new();
    for (s, set) in cfg.feature_sets.iter().enumerate() {
        let cols = matrix.columns_in(&set.groups);
        if cols.is_empty() {
            return Err(Error::InvalidConfig(format!("feature set `{}` selects no columns", set.name)));
        }
        let fcfg = ForestConfig {
            seed: rng::derive_seed(cfg.forest.seed ^ cfg.seed, "binary-forest", s as u64),
            ..cfg.forest.clone()
        };
        let forest = forest::train(&rows_of(&matrix, &train, &cols), &y_train, &fcfg)?;
        let eval = forest.evaluate(&rows_of(&matrix, &test, &cols), &y_test)?;
        fitted.push((cols, forest, eval));
    }
    // Among-all rankings come from the widest model.
    let widest = (0..fitted.len()).max_by_key(|&i| (fitted[i].0.len(), usize::MAX - i)).unwrap_or(0);
    let (all_cols, all_forest, _) = &fitted[widest];
    let all_names: Vec<String> = all_cols.iter().map(|&c| matrix.names[c].clone()).collect();

    let reports = cfg
        .feature_sets
        .iter()
        .zip(&fitted)
        .map(|(set, (cols, forest, eval))| {
            let names: Vec<String> = cols.iter().map(|&c| matrix.names[c].clone()).collect();
            report(
                set,
                eval,
                baseline,
                train.len(),
                ranked(all_forest, &all_names, |i| set.groups.contains(&matrix.groups[all_cols[i]])),
                ranked(forest, &names, |_| true),
            )
        })
        .collect();
    Ok(BinaryTaskResult {
        train_apps: train.iter().map(|&i| labeled[i]).collect(),
        test_apps: test.iter().map(|&i| labeled[i]).collect(),
        labeling,
        reports,
        matrix,
    })
}

fn report(
    set: &FeatureSet,
    eval: &Evaluation,
    baseline: f64,
    n_train: usize,
    top_among_all: Vec<RankedFeature>,
    top_within_class: Vec<RankedFeature>,
) -> TaskReport {
    TaskReport {
        feature_set: set.name.clone(),
        accuracy: eval.accuracy,
        precision: eval.precision,
        recall: eval.recall,
        baseline_accuracy: baseline,
        n_train,
        n_test: eval.n,
        top_among_all,
        top_within_class,
    }
}

// ---------------------------------------------------------------------------
// Pairwise task
// ---------------------------------------------------------------------------

/// Ordered example: `label = 1` when `a` ends above `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairExample {
    pub a: AppId,
    pub b: AppId,
    pub label: u8,
}

/// Decile `0..deciles` of each app by ascending `(value, app id)`.
pub fn deciles(values: &[(AppId, usize)], deciles: usize) -> Vec<(AppId, usize)> {
    let mut v = values.to_vec();
    v.sort_by_key(|&(app, m)| (m, app));
    let n = v.len();
    v.iter()
        .enumerate()
        .map(|(rank, &(app, _))| (app, rank * deciles / n))
        .collect()
}

/// Pairs of apps in the same start decile whose outcome deciles differ by
/// at least `k`. Up to `max_pairs` unordered pairs are sampled; each yields
/// both orderings with opposite labels. Apps are ranked by `(MAU, id)`, so
/// labels follow the outcome order even when MAU ties.
pub fn build_pairs(
    start: &[(AppId, usize)],
    end: &[(AppId, usize)],
    n_deciles: usize,
    k: usize,
    max_pairs: usize,
    seed: u64,
) -> Result<Vec<PairExample>> {
    if n_deciles == 0 || max_pairs == 0 {
        return Err(Error::InvalidConfig("deciles and max_pairs must be positive".into()));
    }
    let mut start_d = deciles(start, n_deciles);
    start_d.sort_unstable();
    let mut end_rank: Vec<(AppId, usize, usize)> = {
        let mut v = end.to_vec();
        v.sort_by_key(|&(app, m)| (m, app));
        let n = v.len();
        v.iter()
            .enumerate()
            .map(|(r, &(app, _))| (app, r, r * n_deciles / n))
            .collect()
    };
    end_rank.sort_unstable();
    let outcome = |app: AppId| {
        end_rank
            .binary_search_by_key(&app, |e| e.0)
            .map(|i| (end_rank[i].1, end_rank[i].2))
            .map_err(|_| Error::invalid(format!("app {app} has no outcome value")))
    };
    let mut candidates = Vec::new();
    for (i, &(a, da)) in start_d.iter().enumerate() {
        let (ra, oa) = outcome(a)?;
        for &(b, db) in &start_d[i + 1..] {
            if da != db {
                continue;
            }
            let (rb, ob) = outcome(b)?;
            if oa.abs_diff(ob) >= k {
                candidates.push((a, b, u8::from(ra > rb)));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::insufficient(format!("no app pairs with outcome divergence >= {k}")));
    }
    let mut rng = rng::substream(seed, "pairs", k as u64);
    let chosen = if candidates.len() > max_pairs {
        let mut idx = index::sample(&mut rng, candidates.len(), max_pairs).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| candidates[i]).collect()
    } else {
        candidates
    };
    Ok(chosen
        .into_iter()
        .flat_map(|(a, b, l)| [PairExample { a, b, label: l }, PairExample { a: b, b: a, label: 1 - l }])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairwiseConfig {
    pub t0: u32,
    pub t1: u32,
    pub t2: u32,
    pub ks: Vec<usize>,
    pub deciles: usize,
    pub max_pairs: usize,
    pub feature_sets: Vec<FeatureSet>,
    pub features: FeatureOptions,
    pub forest: ForestConfig,
    /// Replace training labels with coin flips (null check).
    pub randomize_labels: bool,
    pub seed: u64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        PairwiseConfig {
            t0: 359,
            t1: 539,
            t2: 719,
            ks: (1..=9).collect(),
            deciles: 10,
            max_pairs: 5000,
            feature_sets: vec![FeatureSet::single(FeatureGroup::Temporal), FeatureSet::all()],
            features: FeatureOptions::default(),
            forest: ForestConfig::default(),
            randomize_labels: false,
            seed: 0,
        }
    }
}

/// Day ranges the protocol used; features end before outcomes begin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairwiseProtocol {
    pub train_feature_window: (Day, Day),
    pub train_outcome_window: (Day, Day),
    pub test_feature_window: (Day, Day),
    pub test_outcome_window: (Day, Day),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairwisePoint {
    pub k: usize,
    pub accuracy: f64,
    pub baseline_accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseCurve {
    pub feature_set: String,
    pub points: Vec<PairwisePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseResult {
    pub protocol: PairwiseProtocol,
    pub curves: Vec<PairwiseCurve>,
}

fn pair_rows(pairs: &[PairExample], rows: &[(AppId, Vec<f64>)]) -> Vec<Vec<f64>> {
    let find = |app: AppId| &rows[rows.binary_search_by_key(&app, |r| r.0).expect("pair apps have rows")].1;
    pairs
        .iter()
        .map(|p| {
            let mut r = find(p.a).clone();
            r.extend_from_slice(find(p.b));
            r
        })
        .collect()
}

fn mau_list(log: &ActivityLog, apps: &[AppId], day: Day) -> Result<Vec<(AppId, usize)>> {
    apps.iter().map(|&a| Ok((a, mau(log, a, day)?))).collect()
}

/// Trains on pairs formed at `(t0 -> t1)` with features ending at `t0`, and
/// tests on pairs formed at `(t1 -> t2)` with features ending at `t1`.
pub fn run_pairwise_task(data: &TaskData, cfg: &PairwiseConfig) -> Result<PairwiseResult> {
    cfg.forest.validate()?;
    let month = MONTH_DAYS as u32;
    if cfg.t0 + month > cfg.t1 || cfg.t1 + month > cfg.t2 {
        return Err(Error::InvalidConfig(format!(
            "snapshots must be at least {month} days apart: {} {} {}",
            cfg.t0, cfg.t1, cfg.t2
        )));
    }
    check_mau_day(data.log, Day(cfg.t2))?;
    let (t0, t1, t2) = (Day(cfg.t0), Day(cfg.t1), Day(cfg.t2));
    let schema = schema_for(data, &cfg.features, &cfg.feature_sets)?;
    let fstart = |end: Day| features::window_start(end, &schema.options);
    let outcome_window = |end: Day| (Day(end.0 + 1 - month), end);
    let protocol = PairwiseProtocol {
        train_feature_window: (fstart(t0)?, t0),
        train_outcome_window: outcome_window(t1),
        test_feature_window: (fstart(t1)?, t1),
        test_outcome_window: outcome_window(t2),
    };
    if protocol.train_feature_window.1 >= protocol.train_outcome_window.0
        || protocol.test_feature_window.1 >= protocol.test_outcome_window.0
    {
        return Err(Error::Invariant("feature windows overlap outcome windows".into()));
    }

    let all: Vec<AppId> = data.log.app_ids().collect();
    let live = |day: Day| -> Result<Vec<(AppId, usize)>> {
        Ok(mau_list(data.log, &all, day)?.into_iter().filter(|e| e.1 > 0).collect())
    };
    let train_start = live(t0)?;
    let test_start = live(t1)?;
    let train_apps: Vec<AppId> = train_start.iter().map(|e| e.0).collect();
    let test_apps: Vec<AppId> = test_start.iter().map(|e| e.0).collect();
    let train_end = mau_list(data.log, &train_apps, t1)?;
    let test_end = mau_list(data.log, &test_apps, t2)?;

    let train_vecs = features::extract_all(&schema, data.log, data.graph, data.attrs, &train_apps, t0)?;
    let test_vecs = features::extract_all(&schema, data.log, data.graph, data.attrs, &test_apps, t1)?;
    let train_refs: Vec<&FeatureVector> = train_vecs.iter().collect();
    let test_refs: Vec<&FeatureVector> = test_vecs.iter().collect();
    let imputer = Imputer::fit(&train_refs, schema.len());
    let train_m = imputer.transform(&schema, &train_refs);
    let test_m = imputer.transform(&schema, &test_refs);

    let mut curves: Vec<PairwiseCurve> = cfg
        .feature_sets
        .iter()
        .map(|s| PairwiseCurve {
            feature_set: s.name.clone(),
            points: Vec::new(),
        })
        .collect();
    for &k in &cfg.ks {
        let train_pairs = build_pairs(&train_start, &train_end, cfg.deciles, k, cfg.max_pairs, cfg.seed);
        let test_pairs = build_pairs(
            &test_start,
            &test_end,
            cfg.deciles,
            k,
            cfg.max_pairs,
            rng::derive_seed(cfg.seed, "test-pairs", 0),
        );
        let (mut train_pairs, test_pairs) = match (train_pairs, test_pairs) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("skipping k = {k}: {e}");
                continue;
            }
        };
        if cfg.randomize_labels {
            let mut r = rng::substream(cfg.seed, "random-labels", k as u64);
            for chunk in train_pairs.chunks_mut(2) {
                let l = r.gen_range(0..2u8);
                chunk[0].label = l;
                chunk[1].label = 1 - l;
            }
        }
        let y_train: Vec<u8> = train_pairs.iter().map(|p| p.label).collect();
        let y_test: Vec<u8> = test_pairs.iter().map(|p| p.label).collect();
        for (s, set) in cfg.feature_sets.iter().enumerate() {
            let cols = train_m.columns_in(&set.groups);
            if cols.is_empty() {
                return Err(Error::InvalidConfig(format!("feature set `{}` selects no columns", set.name)));
            }
            let sel = |m: &FeatureMatrix| -> Vec<(AppId, Vec<f64>)> {
                let mut v: Vec<(AppId, Vec<f64>)> = m
                    .apps
                    .iter()
                    .zip(&m.rows)
                    .map(|(&a, r)| (a, cols.iter().map(|&c| r[c]).collect()))
                    .collect();
                v.sort_by_key(|e| e.0);
                v
            };
            let fcfg = ForestConfig {
                seed: rng::derive_seed(cfg.forest.seed ^ cfg.seed, "pairwise-forest", (k * 1000 + s) as u64),
                ..cfg.forest.clone()
            };
            let forest = forest::train(&pair_rows(&train_pairs, &sel(&train_m)), &y_train, &fcfg)?;
            let eval = forest.evaluate(&pair_rows(&test_pairs, &sel(&test_m)), &y_test)?;
            curves[s].points.push(PairwisePoint {
                k,
                accuracy: eval.accuracy,
                baseline_accuracy: majority_baseline(&y_train, &y_test),
                n_train: y_train.len(),
                n_test: y_test.len(),
            });
        }
    }
    if curves.iter().all(|c| c.points.is_empty()) {
        return Err(Error::insufficient("no divergence threshold produced both train and test pairs"));
    }
    Ok(PairwiseResult { protocol, curves })
}

/// Writes `feature_set,k,accuracy,baseline,n_train,n_test`.
pub fn write_curves(result: &PairwiseResult, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature_set", "k", "accuracy", "baseline", "n_train", "n_test"])?;
    for c in &result.curves {
        for p in &c.points {
            w.write_record([
                c.feature_set.clone(),
                p.k.to_string(),
                p.accuracy.to_string(),
                p.baseline_accuracy.to_string(),
                p.n_train.to_string(),
                p.n_test.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
