//! Daily active-user series, peak normalisation, within-month difference
//! statistics, k-means clustering of normalised series and the two-point
//! MAU transition matrix.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{active_users, ActivityLog, AppId, Day};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

pub const MONTH_DAYS: usize = 30;
pub const MAX_LLOYD_ITERATIONS: usize = 300;

/// Trailing window lengths for the three activity measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityWindow {
    Dau,
    Wau,
    Mau,
}

impl ActivityWindow {
    pub fn days(self) -> u32 {
        match self {
            ActivityWindow::Dau => 1,
            ActivityWindow::Wau => 7,
            ActivityWindow::Mau => 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailySeries {
    pub app: AppId,
    /// Day of `values[0]`.
    pub start: Day,
    pub values: Vec<f64>,
}

/// Active users per day over `len` days starting at `start`.
pub fn daily_series(log: &ActivityLog, app: AppId, window: ActivityWindow, start: Day, len: usize) -> Result<DailySeries> {
    let activity = log.app(app)?;
    let end = start.0 as u64 + len as u64;
    if len == 0 || end - 1 > log.horizon_end().0 as u64 {
        return Err(Error::WindowOutsideHorizon {
            end: (end.saturating_sub(1)) as u32,
            len: len as u32,
            horizon_end: log.horizon_end().0,
        });
    }
    let counts = activity.active_counts(window.days(), Day(end as u32 - 1));
    Ok(DailySeries {
        app,
        start,
        values: counts[start.0 as usize..].iter().map(|&c| c as f64).collect(),
    })
}

/// DAU over the first `len` days after the app's first event.
pub fn launch_series(log: &ActivityLog, app: AppId, len: usize) -> Result<DailySeries> {
    let activity = log.app(app)?;
    let first = activity
        .iter()
        .map(|(_, d)| d[0])
        .min()
        .ok_or_else(|| Error::insufficient(format!("app {app} has no events")))?;
    daily_series(log, app, ActivityWindow::Dau, first, len)
}

/// Divides by the maximum so the peak is exactly 1.
pub fn peak_normalize(series: &DailySeries) -> Result<DailySeries> {
    let peak = series.values.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("series of app {} has no positive value", series.app)));
    }
    Ok(DailySeries {
        values: series.values.iter().map(|v| v / peak).collect(),
        ..series.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub med: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        Some(Summary {
            med: stats::median(values)?,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaStats {
    pub value: Summary,
    pub delta: Summary,
    pub delta2: Summary,
}

pub(crate) fn diff(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Statistics of the values and of their first and second differences within
/// month `month` (1-based), i.e. days `[30(month-1), 30 month)` of `values`.
pub fn delta_stats(values: &[f64], month: usize) -> Result<DeltaStats> {
    let months = values.len() / MONTH_DAYS;
    if month == 0 || month > months {
        return Err(Error::invalid(format!(
            "month {month} outside 1..={months} for a series of {} days",
            values.len()
        )));
    }
    let slice = &values[(month - 1) * MONTH_DAYS..month * MONTH_DAYS];
    let d1 = diff(slice);
    let d2 = diff(&d1);
    let s = |v: &[f64]| Summary::of(v).expect("month slices are non-empty");
    Ok(DeltaStats {
        value: s(slice),
        delta: s(&d1),
        delta2: s(&d2),
    })
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Nearest centroid of every input series, in input order.
    pub assignment: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Mean L2 distance of training series to their nearest centroid.
    pub train_score: f64,
    /// Same on the test split; `None` when the split is empty.
    pub test_score: Option<f64>,
    /// Index of the winning restart.
    pub restart: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid (lowest index on ties) and its L2 distance.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, best.1.sqrt())
}

pub(crate) struct Lloyd {
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    #[cfg_attr(not(test), allow(dead_code))]
    pub objective: Vec<f64>,
}

pub(crate) fn lloyd(data: &[&[f64]], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> Lloyd {
    let dim = centroids[0].len();
    let mut assign = vec![usize::MAX; data.len()];
    let mut objective = Vec::new();
    for _ in 0..max_iter {
        let mut changed = false;
        let mut sse = 0.0;
        for (x, a) in data.iter().zip(assign.iter_mut()) {
            let (i, d) = nearest(x, &centroids);
            sse += d * d;
            if *a != i {
                *a = i;
                changed = true;
            }
        }
        objective.push(sse);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (x, &a) in data.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    Lloyd { centroids, objective }
}

fn mean_distance(data: &[&[f64]], centroids: &[Vec<f64>]) -> f64 {
    data.iter().map(|x| nearest(x, centroids).1).sum::<f64>() / data.len() as f64
}

/// Lloyd's algorithm with L2 distance, best of `restarts` initialisations
/// by training score. Restart `r` seeds from the first `k` entries of a
/// permutation that depends only on `(seed, r)`, so runs with different `k`
/// share their seed points.
pub fn kmeans_cluster(series: &[Vec<f64>], k: usize, restarts: usize, split: f64, seed: u64) -> Result<KMeansResult> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if restarts < 1 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    if !(split > 0.0 && split <= 1.0) {
        return Err(Error::invalid(format!("train split must lie in (0, 1], got {split}")));
    }
    let dim = series.first().map_or(0, Vec::len);
    if dim == 0 || series.iter().any(|s| s.len() != dim) {
        return Err(Error::invalid("series must be non-empty and of equal length"));
    }
    let mut order: Vec<usize> = (0..series.len()).collect();
    order.shuffle(&mut rng::substream(seed, "kmeans-split", 0));
    let n_train = ((series.len() as f64 * split).round() as usize).clamp(1, series.len());
    let (mut train, mut test) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    if k > train.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} training series", train.len())));
    }
    let train_data: Vec<&[f64]> = train.iter().map(|&i| series[i].as_slice()).collect();

    let runs: Vec<(f64, Vec<Vec<f64>>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut perm: Vec<usize> = (0..train_data.len()).collect();
            perm.shuffle(&mut rng::substream(seed, "kmeans-restart", r as u64));
            let init = perm[..k].iter().map(|&i| train_data[i].to_vec()).collect();
            let fit = lloyd(&train_data, init, MAX_LLOYD_ITERATIONS);
            (mean_distance(&train_data, &fit.centroids), fit.centroids)
        })
        .collect();
    let (restart, (train_score, centroids)) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .expect("at least one restart");
    let test_data: Vec<&[f64]> = test.iter().map(|&i| series[i].as_slice()).collect();
    let test_score = (!test_data.is_empty()).then(|| mean_distance(&test_data, &centroids));
    let assignment = series.iter().map(|s| nearest(s, &centroids).0).collect();
    Ok(KMeansResult {
        k,
        centroids,
        assignment,
        train,
        test,
        train_score,
        test_score,
        restart,
    })
}

/// Writes `k,centroid_idx,day,value`.
pub fn write_centroids(results: &[KMeansResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "centroid_idx", "day", "value"])?;
    for r in results {
        for (i, c) in r.centroids.iter().enumerate() {
            for (d, v) in c.iter().enumerate() {
                w.write_record([r.k.to_string(), i.to_string(), d.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `k,train,test`.
pub fn write_scores(results: &[KMeansResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "train", "test"])?;
    for r in results {
        w.write_record([
            r.k.to_string(),
            r.train_score.to_string(),
            crate::sociality::fmt_opt(r.test_score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// MAU transitions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MauTransition {
    pub bins_per_decade: u32,
    /// Lower MAU edge of each bin; bin 0 holds MAU = 0 and has edge 0.
    pub edges: Vec<f64>,
    /// `counts[b2][b1]`: apps in bin `b1` at `t1` and bin `b2` at `t2`.
    pub counts: Vec<Vec<u64>>,
    /// `counts` normalised within each column (fixed `t1` bin).
    pub conditional: Vec<Vec<f64>>,
}

impl MauTransition {
    /// Bin 0 for zero MAU, else `1 + floor(bins_per_decade * log10(mau))`.
    pub fn bin_of(mau: usize, bins_per_decade: u32) -> usize {
        if mau == 0 {
            0
        } else {
            // Nudge so exact powers of ten are not lost to rounding.
            1 + ((mau as f64).log10() * bins_per_decade as f64 + 1e-9).floor() as usize
        }
    }

    /// Dense grid, one row per `t2` bin, one column per `t1` bin.
    pub fn write_csv(&self, conditional: bool, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t2_bin_lo".to_string()];
        header.extend(self.edges.iter().map(|e| format!("t1_{e}")));
        w.write_record(&header)?;
        for (b2, edge) in self.edges.iter().enumerate() {
            let mut row = vec![edge.to_string()];
            if conditional {
                row.extend(self.conditional[b2].iter().map(|v| v.to_string()));
            } else {
                row.extend(self.counts[b2].iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mau_transition(log: &ActivityLog, apps: &[AppId], t1: Day, t2: Day, bins_per_decade: u32) -> Result<MauTransition> {
    if t1 >= t2 || t1.0 < 29 {
        return Err(Error::invalid(format!("need 29 <= t1 < t2, got t1 = {t1}, t2 = {t2}")));
    }
    if bins_per_decade == 0 {
        return Err(Error::invalid("bins_per_decade must be positive"));
    }
    let pairs: Vec<(usize, usize)> = apps
        .par_iter()
        .map(|&app| Ok((active_users(log, app, t1, 30)?, active_users(log, app, t2, 30)?)))
        .collect::<Result<_>>()?;
    let max = pairs.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0);
    let n_bins = MauTransition::bin_of(max, bins_per_decade) + 1;
    let mut counts = vec![vec![0u64; n_bins]; n_bins];
    for (m1, m2) in pairs {
        counts[MauTransition::bin_of(m2, bins_per_decade)][MauTransition::bin_of(m1, bins_per_decade)] += 1;
    }
    let mut conditional = vec![vec![0.0; n_bins]; n_bins];
    for b1 in 0..n_bins {
        let col: u64 = (0..n_bins).map(|b2| counts[b2][b1]).sum();
        if col > 0 {
            for b2 in 0..n_bins {
                conditional[b2][b1] = counts[b2][b1] as f64 / col as f64;
            }
        }
    }
    let edges = (0..n_bins)
        .map(|b| if b == 0 { 0.0 } else { 10f64.powf((b - 1) as f64 / bins_per_decade as f64) })
        .collect();
    Ok(MauTransition {
        bins_per_decade,
        edges,
        counts,
        conditional,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UserId;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> DailySeries {
        DailySeries {
            app: 0,
            start: Day(0),
            values: values.to_vec(),
        }
    }

    #[test]
    fn peak_normalize_examples() {
        assert_eq!(peak_normalize(&series(&[2.0, 4.0, 8.0])).unwrap().values, vec![0.25, 0.5, 1.0]);
        assert_eq!(peak_normalize(&series(&[5.0])).unwrap().values, vec![1.0]);
        assert!(peak_normalize(&series(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn daily_series_counts() {
        let events = vec![(0, 0, Day(0)), (0, 1, Day(0)), (0, 0, Day(2)), (0, 2, Day(5))];
        let log = ActivityLog::from_events(events, Some(Day(9))).unwrap();
        let dau = daily_series(&log, 0, ActivityWindow::Dau, Day(0), 6).unwrap();
        assert_eq!(dau.values, vec![2.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let wau = daily_series(&log, 0, ActivityWindow::Wau, Day(3), 3).unwrap();
        assert_eq!(wau.values, vec![2.0, 2.0, 3.0]);
        assert!(daily_series(&log, 0, ActivityWindow::Dau, Day(5), 6).is_err());
        assert_eq!(launch_series(&log, 0, 10).unwrap().values.len(), 10);
    }

    #[test]
    fn delta_stats_examples() {
        let constant = vec![3.0; 360];
        let s = delta_stats(&constant, 4).unwrap();
        assert_eq!((s.delta.min, s.delta.max, s.delta.med), (0.0, 0.0, 0.0));
        assert_eq!((s.delta2.min, s.delta2.max), (0.0, 0.0));
        let linear: Vec<f64> = (0..360).map(|i| 2.0 * i as f64).collect();
        let s = delta_stats(&linear, 12).unwrap();
        assert_eq!((s.delta.min, s.delta.max, s.delta.med), (2.0, 2.0, 2.0));
        assert_eq!((s.delta2.min, s.delta2.max), (0.0, 0.0));
        assert_eq!(s.value.min, 660.0);
        let mut v = vec![0.0; 360];
        v[..3].copy_from_slice(&[1.0, 3.0, 2.0]);
        let s = delta_stats(&v, 1).unwrap();
        assert_eq!((s.delta.min, s.delta.max), (-2.0, 2.0));
        assert_eq!((s.delta2.min, s.delta2.max), (-3.0, 2.0));
        assert!(delta_stats(&v, 0).is_err());
        assert!(delta_stats(&v, 13).is_err());
    }

    proptest! {
        #[test]
        fn delta_stats_match_brute_force(v in proptest::collection::vec(-50.0f64..50.0, 60..=90), month in 1usize..=2) {
            let s = delta_stats(&v, month).unwrap();
            let lo = (month - 1) * 30;
            let mut d1 = Vec::new();
            for i in lo + 1..lo + 30 { d1.push(v[i] - v[i - 1]); }
            let mut d2 = Vec::new();
            for i in lo + 2..lo + 30 { d2.push(v[i] - 2.0 * v[i - 1] + v[i - 2]); }
            let min = |x: &[f64]| x.iter().copied().fold(f64::INFINITY, f64::min);
            let max = |x: &[f64]| x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(s.delta.min, min(&d1));
            prop_assert_eq!(s.delta.max, max(&d1));
            prop_assert!((s.delta2.min - min(&d2)).abs() < 1e-9);
            prop_assert!((s.delta2.max - max(&d2)).abs() < 1e-9);
            let mut sorted = d1.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(s.delta.med, sorted[14]);
        }

        #[test]
        fn lloyd_objective_non_increasing(
            pts in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 10..40),
            k in 1usize..5,
        ) {
            let data: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
            let init = pts[..k].to_vec();
            let fit = lloyd(&data, init, 300);
            prop_assert!(fit.objective.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            let r = kmeans_cluster(&pts, k, 3, 1.0, 5).unwrap();
            for (s, &a) in pts.iter().zip(&r.assignment) {
                let d = dist2(s, &r.centroids[a]);
                prop_assert!(r.centroids.iter().all(|c| d <= dist2(s, c)));
            }
        }
    }

    #[test]
    fn kmeans_k1_is_mean() {
        let s: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let r = kmeans_cluster(&s, 1, 3, 1.0, 1).unwrap();
        assert_eq!(r.centroids, vec![vec![3.5, 7.0]]);
        assert_eq!(r.test_score, None);
        let r = kmeans_cluster(&s, 1, 3, 0.75, 1).unwrap();
        assert_eq!(r.train.len(), 6);
        let mean: Vec<f64> = (0..2)
            .map(|d| r.train.iter().map(|&i| s[i][d]).sum::<f64>() / 6.0)
            .collect();
        assert!(r.centroids[0].iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(r.test_score.is_some());
    }

    #[test]
    fn kmeans_errors_and_determinism() {
        let s: Vec<Vec<f64>> = (0..8).map(|i| vec![(i % 3) as f64]).collect();
        assert!(kmeans_cluster(&s, 0, 1, 1.0, 1).is_err());
        assert!(kmeans_cluster(&s, 9, 1, 1.0, 1).is_err());
        assert!(kmeans_cluster(&[vec![1.0], vec![1.0, 2.0]], 1, 1, 1.0, 1).is_err());
        let a = kmeans_cluster(&s, 3, 10, 0.75, 4).unwrap();
        let b = kmeans_cluster(&s, 3, 10, 0.75, 4).unwrap();
        assert_eq!(a, b);
    }

    fn log_with_mau(maus: &[(usize, usize)], t1: u32, t2: u32) -> ActivityLog {
        let mut events = Vec::new();
        for (app, &(m1, m2)) in maus.iter().enumerate() {
            for u in 0..m1 {
                events.push((app as AppId, u as UserId, Day(t1)));
            }
            for u in 0..m2 {
                events.push((app as AppId, u as UserId, Day(t2)));
            }
        }
        ActivityLog::from_events(events, Some(Day(t2))).unwrap()
    }

    #[test]
    fn single_app_on_diagonal() {
        let log = log_with_mau(&[(100, 100)], 40, 100);
        let m = mau_transition(&log, &[0], Day(40), Day(100), 1).unwrap();
        assert_eq!(m.counts.len(), 4);
        assert_eq!(m.counts[3][3], 1);
        assert_eq!(m.conditional[3][3], 1.0);
        assert_eq!(m.edges, vec![0.0, 1.0, 10.0, 100.0]);
        assert!(mau_transition(&log, &[0], Day(100), Day(40), 1).is_err());
        assert!(mau_transition(&log, &[0], Day(10), Day(40), 1).is_err());
    }

    #[test]
    fn columns_sum_to_one() {
        let maus = [(5, 0), (5, 50), (50, 7), (0, 3), (300, 300), (7, 2)];
        let log = log_with_mau(&maus, 40, 100);
        let apps: Vec<AppId> = (0..maus.len() as AppId).collect();
        let m = mau_transition(&log, &apps, Day(40), Day(100), 2).unwrap();
        assert_eq!(m.counts.iter().flatten().sum::<u64>(), maus.len() as u64);
        for b1 in 0..m.edges.len() {
            let s: f64 = m.conditional.iter().map(|row| row[b1]).sum();
            let c: u64 = m.counts.iter().map(|row| row[b1]).sum();
            if c > 0 {
                assert!((s - 1.0).abs() < 1e-9);
            } else {
                assert_eq!(s, 0.0);
            }
        }
        assert_eq!(m.counts[0][2], 1); // (5 -> 0)
    }
}
