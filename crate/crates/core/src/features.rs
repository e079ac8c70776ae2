//! Per-app feature vectors over a fixed observation window, grouped into
//! temporal, demographic, retention, social and SIRS features, plus the
//! imputed feature matrix consumed by the forest.
//!
//! Every value is `Option<f64>`: `None` marks a feature that is undefined
//! for the app (no users yet, a retention fit that failed, a SIRS fit that
//! did not converge). Missing values are imputed only when a matrix is
//! built, and each group gets a missingness indicator column.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActivityLog, AppActivity, AppId, AttributeTable, Day, SocialGraph};
use crate::error::{Error, Result};
use crate::retention::{self, RetentionParams};
use crate::sirs;
use crate::sociality;
use crate::stats;
use crate::timeseries::{self, ActivityWindow, Summary, MONTH_DAYS};

pub const SCHEMA_VERSION: &str = "appdyn-features/1";
/// Categories kept per categorical attribute; the rest go to `other`.
pub const TOP_CATEGORIES: usize = 10;
pub const RETENTION_OFFSETS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Temporal,
    Demographic,
    Retention,
    Social,
    Sirs,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Temporal,
        FeatureGroup::Demographic,
        FeatureGroup::Retention,
        FeatureGroup::Social,
        FeatureGroup::Sirs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Temporal => "temporal",
            FeatureGroup::Demographic => "demographic",
            FeatureGroup::Retention => "retention",
            FeatureGroup::Social => "social",
            FeatureGroup::Sirs => "sirs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown feature group `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOptions {
    pub months: usize,
    pub include_sirs: bool,
    pub sirs_budget: usize,
    /// Days predicted past the window; sampled every 7 days.
    pub sirs_pred_days: usize,
    pub seed: u64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            months: 12,
            include_sirs: false,
            sirs_budget: 20_000,
            sirs_pred_days: 84,
            seed: 0,
        }
    }
}

impl FeatureOptions {
    pub fn validate(&self) -> Result<()> {
        if self.months < 2 {
            return Err(Error::InvalidConfig("the window needs at least 2 months".into()));
        }
        if self.include_sirs && self.sirs_budget < sirs::MIN_BUDGET {
            return Err(Error::InvalidConfig(format!("sirs_budget must be at least {}", sirs::MIN_BUDGET)));
        }
        Ok(())
    }

    pub fn window_days(&self) -> usize {
        self.months * MONTH_DAYS
    }
}

/// Feature names and the category codes they depend on. Built once per run
/// so every app shares one schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSchema {
    pub version: &'static str,
    pub names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub countries: Vec<u16>,
    pub genders: Vec<u8>,
    pub ages: Vec<u8>,
    pub options: FeatureOptions,
}

const SERIES: [&str; 5] = ["dau", "wau", "mau", "users", "new_users"];
const ORDERS: [&str; 3] = ["", "_d1", "_d2"];
const STATS: [&str; 3] = ["med", "min", "max"];
const SOCIAL: [&str; 7] = ["deg_med", "deg_max", "using_med", "using_max", "soc_cond", "soc_meanfrac", "soc_ratio"];
const SIRS_PARAMS: [&str; 5] = ["sirs_s0", "sirs_alpha", "sirs_beta", "sirs_gamma", "sirs_epsilon"];

fn top_codes<T: Copy + Ord + std::hash::Hash>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut v: Vec<(T, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(TOP_CATEGORIES).map(|(c, _)| c).collect()
}

impl FeatureSchema {
    /// Top categories come from the whole attribute table, not from any one
    /// app, so the schema does not depend on the app list.
    pub fn new(attrs: &AttributeTable, options: FeatureOptions) -> Result<Self> {
        options.validate()?;
        let countries = top_codes(attrs.iter().map(|(_, a)| a.country));
        let genders = top_codes(attrs.iter().map(|(_, a)| a.gender));
        let ages = top_codes(attrs.iter().map(|(_, a)| a.age));

        let mut names = Vec::new();
        let mut groups = Vec::new();
        let mut push = |g: FeatureGroup, n: String| {
            groups.push(g);
            names.push(n);
        };
        for s in SERIES {
            for m in 1..=options.months {
                for o in ORDERS {
                    for st in STATS {
                        push(FeatureGroup::Temporal, format!("{s}{o}_mo{m}_{st}"));
                    }
                }
            }
            for o in ORDERS {
                for st in STATS {
                    push(FeatureGroup::Temporal, format!("{s}{o}_year_{st}"));
                }
            }
            for o in ORDERS {
                push(FeatureGroup::Temporal, format!("{s}{o}_dyear"));
            }
        }
        let mut cat = |attr: &str, codes: Vec<String>| {
            for c in codes.into_iter().chain(std::iter::once("other".to_string())) {
                push(FeatureGroup::Demographic, format!("{attr}_{c}_n"));
                push(FeatureGroup::Demographic, format!("{attr}_{c}_p"));
            }
        };
        cat("country", countries.iter().map(|c| c.to_string()).collect());
        cat("gender", genders.iter().map(|c| c.to_string()).collect());
        cat("age", ages.iter().map(|c| c.to_string()).collect());
        for k in 0..=7 {
            push(FeatureGroup::Demographic, format!("l7_{k}_n"));
            push(FeatureGroup::Demographic, format!("l7_{k}_p"));
        }
        for n in ["is30_n", "isnot30_n", "is30_p"] {
            push(FeatureGroup::Demographic, n.into());
        }
        for e in ["country", "gender", "age", "l7", "is30"] {
            push(FeatureGroup::Demographic, format!("entropy_{e}"));
        }
        for t in 1..=RETENTION_OFFSETS {
            push(FeatureGroup::Retention, format!("ret_n_{t}"));
        }
        for t in 1..=RETENTION_OFFSETS {
            push(FeatureGroup::Retention, format!("ret_p_{t}"));
        }
        for n in ["ret_a", "ret_xa", "ret_amp", "ret_x0"] {
            push(FeatureGroup::Retention, n.into());
        }
        for n in SOCIAL {
            push(FeatureGroup::Social, n.into());
        }
        if options.include_sirs {
            for n in SIRS_PARAMS {
                push(FeatureGroup::Sirs, n.into());
            }
            for w in 1..=options.sirs_pred_days / 7 {
                push(FeatureGroup::Sirs, format!("sirs_pred_w{w}"));
            }
        }
        Ok(FeatureSchema {
            version: SCHEMA_VERSION,
            names,
            groups,
            countries,
            genders,
            ages,
            options,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn groups_present(&self) -> Vec<FeatureGroup> {
        let mut g = self.groups.clone();
        g.dedup();
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureVector {
    pub app: AppId,
    pub window_end: Day,
    /// Aligned with [`FeatureSchema::names`].
    pub values: Vec<Option<f64>>,
}

impl FeatureVector {
    pub fn get(&self, schema: &FeatureSchema, name: &str) -> Option<f64> {
        schema.index_of(name).and_then(|i| self.values[i])
    }

    /// True when every feature of `group` is defined.
    pub fn group_complete(&self, schema: &FeatureSchema, group: FeatureGroup) -> bool {
        schema
            .groups
            .iter()
            .zip(&self.values)
            .filter(|(g, _)| **g == group)
            .all(|(_, v)| v.is_some())
    }
}

/// Window `[window_end + 1 - 30 months, window_end]`.
pub fn window_start(window_end: Day, options: &FeatureOptions) -> Result<Day> {
    let len = options.window_days();
    (window_end.0 as usize + 1)
        .checked_sub(len)
        .map(|s| Day(s as u32))
        .ok_or_else(|| Error::invalid(format!("a {len}-day window cannot end on day {window_end}")))
}

/// The app's events up to `window_end`, as a one-app log ending there.
fn truncated(activity: &AppActivity, app: AppId, window_end: Day) -> Result<ActivityLog> {
    let mut b = crate::data::AppActivityBuilder::default();
    for (u, days) in activity.iter() {
        let kept: Vec<Day> = days.iter().copied().filter(|d| *d <= window_end).collect();
        if !kept.is_empty() {
            b.push_user(u, kept);
        }
    }
    let mut log = ActivityLog::new(window_end);
    log.insert(app, b.finish())?;
    Ok(log)
}

struct Out<'a> {
    values: &'a mut Vec<Option<f64>>,
}

impl Out<'_> {
    fn push(&mut self, v: Option<f64>) {
        self.values.push(v.filter(|x| x.is_finite()));
    }

    fn summary(&mut self, s: Option<Summary>) {
        self.push(s.map(|s| s.med));
        self.push(s.map(|s| s.min));
        self.push(s.map(|s| s.max));
    }
}

fn temporal(out: &mut Out, series: &[f64], months: usize) {
    let per_month: Vec<[Vec<f64>; 3]> = (0..months)
        .map(|m| {
            let slice = series[m * MONTH_DAYS..(m + 1) * MONTH_DAYS].to_vec();
            let d1 = timeseries::diff(&slice);
            let d2 = timeseries::diff(&d1);
            [slice, d1, d2]
        })
        .collect();
    for month in &per_month {
        for values in month {
            out.summary(Summary::of(values));
        }
    }
    for o in 0..3 {
        let all: Vec<f64> = per_month.iter().flat_map(|m| m[o].iter().copied()).collect();
        out.summary(Summary::of(&all));
    }
    for o in 0..3 {
        let first = stats::median(&per_month[0][o]);
        let last = stats::median(&per_month[months - 1][o]);
        out.push(first.zip(last).map(|(f, l)| l - f));
    }
}

fn categorical<T: Copy + Ord>(out: &mut Out, values: &[T], top: &[T]) -> Option<f64> {
    let n = values.len();
    // Ordered so the entropy sum is reproducible.
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(*v).or_default() += 1;
    }
    let frac = |c: usize| (n > 0).then(|| c as f64 / n as f64);
    let mut kept = 0;
    for code in top {
        let c = counts.get(code).copied().unwrap_or(0);
        kept += c;
        out.push(Some(c as f64));
        out.push(frac(c));
    }
    out.push(Some((n - kept) as f64));
    out.push(frac(n - kept));
    entropy_of_counts(counts.values().copied(), n)
}

fn entropy_of_counts(counts: impl Iterator<Item = usize>, n: usize) -> Option<f64> {
    if n == 0 {
        return None;
    }
    let p: Vec<f64> = counts.map(|c| c as f64 / n as f64).collect();
    stats::entropy_bits(&p).ok()
}

fn median_max(values: &[f64]) -> (Option<f64>, Option<f64>) {
    (stats::median(values), values.iter().copied().reduce(f64::max))
}

/// Extracts one app's features over the window ending at `window_end`.
pub fn extract_features(
    schema: &FeatureSchema,
    log: &ActivityLog,
    graph: &SocialGraph,
    attrs: &AttributeTable,
    app: AppId,
    window_end: Day,
) -> Result<FeatureVector> {
    let opts = &schema.options;
    if window_end > log.horizon_end() {
        return Err(Error::WindowOutsideHorizon {
            end: window_end.0,
            len: opts.window_days() as u32,
            horizon_end: log.horizon_end().0,
        });
    }
    let start = window_start(window_end, opts)?;
    let activity = log.app(app)?;
    let len = opts.window_days();
    let mut values = Vec::with_capacity(schema.len());
    let mut out = Out { values: &mut values };

    // Temporal.
    let mut first_counts = vec![0u32; window_end.0 as usize + 1];
    for (_, days) in activity.iter() {
        if days[0] <= window_end {
            first_counts[days[0].0 as usize] += 1;
        }
    }
    let mut cumulative = Vec::with_capacity(first_counts.len());
    let mut acc = 0.0;
    for &c in &first_counts {
        acc += c as f64;
        cumulative.push(acc);
    }
    let from = start.0 as usize;
    for name in SERIES {
        let series: Vec<f64> = match name {
            "dau" | "wau" | "mau" => {
                let w = match name {
                    "dau" => ActivityWindow::Dau,
                    "wau" => ActivityWindow::Wau,
                    _ => ActivityWindow::Mau,
                };
                timeseries::daily_series(log, app, w, start, len)?.values
            }
            "users" => cumulative[from..].to_vec(),
            _ => first_counts[from..].iter().map(|&c| c as f64).collect(),
        };
        temporal(&mut out, &series, opts.months);
    }

    // Demographic, over users who adopted by the end of the window.
    let users: Vec<u32> = activity
        .iter()
        .filter(|(_, d)| d[0] <= window_end)
        .map(|(u, _)| u)
        .collect();
    let mut user_attrs = Vec::with_capacity(users.len());
    for &u in &users {
        user_attrs.push(
            *attrs
                .get(u)
                .ok_or_else(|| Error::invalid(format!("user {u} of app {app} has no attributes")))?,
        );
    }
    let n = users.len();
    let countries: Vec<u16> = user_attrs.iter().map(|a| a.country).collect();
    let genders: Vec<u8> = user_attrs.iter().map(|a| a.gender).collect();
    let ages: Vec<u8> = user_attrs.iter().map(|a| a.age).collect();
    let e_country = categorical(&mut out, &countries, &schema.countries);
    let e_gender = categorical(&mut out, &genders, &schema.genders);
    let e_age = categorical(&mut out, &ages, &schema.ages);
    let mut l7 = [0usize; 8];
    for a in &user_attrs {
        l7[a.fb_active_days_of_7 as usize] += 1;
    }
    for c in l7 {
        out.push(Some(c as f64));
        out.push((n > 0).then(|| c as f64 / n as f64));
    }
    let is30 = user_attrs.iter().filter(|a| a.is_mau).count();
    out.push(Some(is30 as f64));
    out.push(Some((n - is30) as f64));
    out.push((n > 0).then(|| is30 as f64 / n as f64));
    out.push(e_country);
    out.push(e_gender);
    out.push(e_age);
    out.push(entropy_of_counts(l7.into_iter(), n));
    out.push(entropy_of_counts([is30, n - is30].into_iter(), n));

    // Retention, from events inside the window's past only.
    let past = truncated(activity, app, window_end)?;
    let curve = retention::compute_retention(&past, app, RETENTION_OFFSETS)?;
    for t in 1..=RETENTION_OFFSETS as usize {
        out.push(Some(curve.n[t] as f64));
    }
    for t in 1..=RETENTION_OFFSETS as usize {
        out.push((curve.eligible[t] > 0).then(|| curve.p[t]));
    }
    match retention::fit_timedep(&curve).map(|f| f.params) {
        Ok(RetentionParams::Timedep { a, x_a }) => {
            out.push(Some(a));
            out.push(Some(x_a));
        }
        _ => {
            out.push(None);
            out.push(None);
        }
    }
    match retention::fit_exponential(&curve).map(|f| f.params) {
        Ok(RetentionParams::Exponential { amplitude, x0 }) => {
            out.push(Some(amplitude));
            out.push(Some(x0));
        }
        _ => {
            out.push(None);
            out.push(None);
        }
    }

    // Social.
    let mut mask = vec![false; graph.node_count()];
    for &u in &users {
        *mask
            .get_mut(u as usize)
            .ok_or_else(|| Error::invalid(format!("user {u} is not a node of the graph")))? = true;
    }
    let degrees: Vec<f64> = users.iter().map(|&u| graph.degree(u) as f64).collect();
    let using: Vec<f64> = users
        .iter()
        .map(|&u| graph.neighbors(u).iter().filter(|&&v| mask[v as usize]).count() as f64)
        .collect();
    let (dm, dx) = median_max(&degrees);
    let (um, ux) = median_max(&using);
    out.push(dm);
    out.push(dx);
    out.push(um);
    out.push(ux);
    let soc = sociality::sociality(log, graph, app, window_end)?;
    let pop = sociality::popularity(log, graph, app, window_end)?;
    out.push(soc.conditional);
    out.push(soc.mean_fraction);
    out.push(soc.conditional.filter(|_| pop > 0.0).map(|c| c / pop));

    // SIRS on the window's DAU.
    if opts.include_sirs {
        let weeks = opts.sirs_pred_days / 7;
        let dau = timeseries::daily_series(log, app, ActivityWindow::Dau, start, len)?.values;
        let seed = crate::rng::derive_seed(opts.seed, "features-sirs", app as u64);
        let fit = sirs::fit_sirs(&dau, opts.sirs_budget, seed)
            .ok()
            .filter(|f| f.converged);
        let pred = fit.as_ref().and_then(|f| sirs::predict_sirs(f, weeks * 7, false).ok());
        let p = fit.map(|f| f.params);
        out.push(p.map(|p| p.s0));
        out.push(p.map(|p| p.alpha));
        out.push(p.map(|p| p.beta));
        out.push(p.map(|p| p.gamma));
        out.push(p.map(|p| p.epsilon));
        for w in 1..=weeks {
            out.push(pred.as_ref().map(|p| p.values[w * 7 - 1]));
        }
    }

    if values.len() != schema.len() {
        return Err(Error::Invariant(format!(
            "extracted {} features, schema has {}",
            values.len(),
            schema.len()
        )));
    }
    Ok(FeatureVector { app, window_end, values })
}

/// Extracts features for every app in parallel; output follows `apps`.
pub fn extract_all(
    schema: &FeatureSchema,
    log: &ActivityLog,
    graph: &SocialGraph,
    attrs: &AttributeTable,
    apps: &[AppId],
    window_end: Day,
) -> Result<Vec<FeatureVector>> {
    apps.par_iter()
        .map(|&a| extract_features(schema, log, graph, attrs, a, window_end))
        .collect()
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense matrix with imputed values and one missingness column per group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub apps: Vec<AppId>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn row_of(&self, app: AppId) -> Option<usize> {
        self.apps.iter().position(|&a| a == app)
    }

    /// Columns belonging to any of `groups`.
    pub fn columns_in(&self, groups: &[FeatureGroup]) -> Vec<usize> {
        (0..self.names.len()).filter(|&c| groups.contains(&self.groups[c])).collect()
    }

    pub fn select(&self, columns: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: columns.iter().map(|&c| self.names[c].clone()).collect(),
            groups: columns.iter().map(|&c| self.groups[c]).collect(),
            apps: self.apps.clone(),
            rows: self.rows.iter().map(|r| columns.iter().map(|&c| r[c]).collect()).collect(),
        }
    }

    /// Writes a comment line with the schema version, then `app_id` and the
    /// feature columns.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "# schema: {SCHEMA_VERSION}")?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["app_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (app, row) in self.apps.iter().zip(&self.rows) {
            let mut rec = vec![app.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-feature medians of the training rows. Features never observed in
/// training impute to 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Imputer {
    pub medians: Vec<f64>,
}

impl Imputer {
    pub fn fit(vectors: &[&FeatureVector], n_features: usize) -> Imputer {
        let medians = (0..n_features)
            .map(|j| {
                let v: Vec<f64> = vectors.iter().filter_map(|fv| fv.values[j]).collect();
                stats::median(&v).unwrap_or(0.0)
            })
            .collect();
        Imputer { medians }
    }

    pub fn transform(&self, schema: &FeatureSchema, vectors: &[&FeatureVector]) -> FeatureMatrix {
        let present = schema.groups_present();
        let mut names = schema.names.clone();
        let mut groups = schema.groups.clone();
        for g in &present {
            names.push(format!("missing_{}", g.name()));
            groups.push(*g);
        }
        let rows = vectors
            .iter()
            .map(|fv| {
                let mut row: Vec<f64> = fv
                    .values
                    .iter()
                    .zip(&self.medians)
                    .map(|(v, m)| v.unwrap_or(*m))
                    .collect();
                for g in &present {
                    row.push(if fv.group_complete(schema, *g) { 0.0 } else { 1.0 });
                }
                row
            })
            .collect();
        FeatureMatrix {
            names,
            groups,
            apps: vectors.iter().map(|fv| fv.app).collect(),
            rows,
        }
    }
}

/// Matrix over `vectors`, imputing with medians of the rows listed in
/// `train` (all rows when `None`).
pub fn feature_matrix(schema: &FeatureSchema, vectors: &[FeatureVector], train: Option<&[usize]>) -> Result<FeatureMatrix> {
    if vectors.is_empty() {
        return Err(Error::invalid("feature matrix needs at least one app"));
    }
    let all: Vec<&FeatureVector> = vectors.iter().collect();
    let fit_rows: Vec<&FeatureVector> = match train {
        Some(idx) => idx
            .iter()
            .map(|&i| vectors.get(i).ok_or_else(|| Error::invalid(format!("training row {i} out of range"))))
            .collect::<Result<_>>()?,
        None => all.clone(),
    };
    Ok(Imputer::fit(&fit_rows, schema.len()).transform(schema, &all))
}

/// Extracts and assembles in one step, imputing over all apps.
pub fn build_matrix(
    schema: &FeatureSchema,
    log: &ActivityLog,
    graph: &SocialGraph,
    attrs: &AttributeTable,
    apps: &[AppId],
    window_end: Day,
) -> Result<FeatureMatrix> {
    if apps.is_empty() {
        return Err(Error::invalid("feature matrix needs at least one app"));
    }
    let vectors = extract_all(schema, log, graph, attrs, apps, window_end)?;
    feature_matrix(schema, &vectors, None)
}
