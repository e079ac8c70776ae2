//! Adoption probability of non-users as a function of who their adopter
//! friends are: the attributes of a single adopter friend, or the induced
//! subgraph among two or three adopter friends.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::data::{ActivityLog, AppActivity, AppId, AttributeTable, Day, SocialGraph, UserId};
use crate::error::{Error, Result};
use crate::rng;
use crate::sociality::fmt_opt;
use crate::stats::{self, BootstrapBands};

/// Trailing window for the `active` user definition.
pub const ACTIVE_WINDOW_DAYS: u32 = 30;
pub const AGE_OFFSET_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum NeighborhoodClass {
    E2,
    K2,
    E3,
    P2uE1,
    P3,
    K3,
}

impl NeighborhoodClass {
    pub const ALL: [NeighborhoodClass; 6] = [Self::E2, Self::K2, Self::E3, Self::P2uE1, Self::P3, Self::K3];

    pub fn name(self) -> &'static str {
        match self {
            Self::E2 => "E2",
            Self::K2 => "K2",
            Self::E3 => "E3",
            Self::P2uE1 => "P2uE1",
            Self::P3 => "P3",
            Self::K3 => "K3",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Classifies the subgraph induced on 2 or 3 distinct friends.
pub fn classify_neighborhood(graph: &SocialGraph, friends: &[UserId]) -> Result<NeighborhoodClass> {
    let induced = |a: UserId, b: UserId| graph.has_edge(a, b) as u8;
    match *friends {
        [a, b] if a != b => Ok(if induced(a, b) == 1 {
            NeighborhoodClass::K2
        } else {
            NeighborhoodClass::E2
        }),
        [a, b, c] if a != b && b != c && a != c => Ok(match induced(a, b) + induced(b, c) + induced(a, c) {
            0 => NeighborhoodClass::E3,
            1 => NeighborhoodClass::P2uE1,
            2 => NeighborhoodClass::P3,
            _ => NeighborhoodClass::K3,
        }),
        _ => Err(Error::invalid(format!(
            "neighborhoods are defined on 2 or 3 distinct friends, got {friends:?}"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserDef {
    /// At least one event on or before the snapshot.
    #[default]
    Ever,
    /// At least one event in the trailing 30 days ending at the snapshot.
    Active,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NeighborhoodOptions {
    /// Defaults to the midpoint of the app's observed activity, moved back
    /// if needed so that the adoption horizon fits in the log.
    pub snapshot: Option<Day>,
    pub horizon: u32,
    pub user_def: UserDef,
    /// Cells with fewer exposed users report no probability.
    pub min_count: u64,
}

impl Default for NeighborhoodOptions {
    fn default() -> Self {
        NeighborhoodOptions {
            snapshot: None,
            horizon: 60,
            user_def: UserDef::Ever,
            min_count: 10,
        }
    }
}

impl NeighborhoodOptions {
    fn resolve_snapshot(&self, log: &ActivityLog, activity: &AppActivity) -> Result<Day> {
        let end = log.horizon_end().0;
        if self.horizon == 0 || self.horizon > end {
            return Err(Error::invalid(format!(
                "adoption horizon of {} days does not fit in a log ending on day {end}",
                self.horizon
            )));
        }
        let latest = end - self.horizon;
        match self.snapshot {
            Some(s) if s.0 > latest => Err(Error::WindowOutsideHorizon {
                end: s.0 + self.horizon,
                len: self.horizon,
                horizon_end: end,
            }),
            Some(s) => Ok(s),
            None => {
                let first = activity.iter().map(|(_, d)| d[0]).min().unwrap_or(Day(0));
                let last = activity.last_event_day().unwrap_or(Day(0));
                Ok(Day(((first.0 + last.0) / 2).min(latest)))
            }
        }
    }
}

/// One exposed user together with their adopter friends.
struct Exposure {
    user: UserId,
    friends: Vec<UserId>,
    adopted: bool,
}

/// Never-adopters at the snapshot with between 1 and `max_friends` adopter
/// friends (per `user_def`), and whether they adopt within the horizon.
fn exposures(
    graph: &SocialGraph,
    activity: &AppActivity,
    snapshot: Day,
    opts: &NeighborhoodOptions,
    max_friends: usize,
) -> Result<Vec<Exposure>> {
    let n = graph.node_count();
    let first = activity.first_days(n);
    if first.len() > n {
        return Err(Error::invalid("activity references users outside the graph"));
    }
    let active_from = snapshot.0.saturating_sub(ACTIVE_WINDOW_DAYS - 1);
    let counts_as_user = |days: &[Day]| -> bool {
        match opts.user_def {
            UserDef::Ever => days[0] <= snapshot,
            UserDef::Active => days.iter().any(|d| d.0 >= active_from && *d <= snapshot),
        }
    };
    let mut count = vec![0u32; n];
    let mut friends: BTreeMap<UserId, Vec<UserId>> = BTreeMap::new();
    for (u, days) in activity.iter() {
        if (u as usize) >= n {
            return Err(Error::invalid(format!("user {u} is not a node of the graph")));
        }
        if !counts_as_user(days) {
            continue;
        }
        for &v in graph.neighbors(u) {
            let never = first[v as usize].is_none_or(|d| d > snapshot);
            if !never {
                continue;
            }
            count[v as usize] += 1;
            if count[v as usize] as usize <= max_friends {
                friends.entry(v).or_default().push(u);
            }
        }
    }
    let end = snapshot.0 + opts.horizon;
    Ok(friends
        .into_iter()
        .filter(|(v, _)| count[*v as usize] as usize <= max_friends)
        .map(|(v, fr)| Exposure {
            user: v,
            friends: fr,
            adopted: first[v as usize].is_some_and(|d| d > snapshot && d.0 <= end),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassCell {
    pub exposed: u64,
    pub adopted: u64,
    pub prob: Option<f64>,
}

impl ClassCell {
    fn empty() -> Self {
        ClassCell {
            exposed: 0,
            adopted: 0,
            prob: None,
        }
    }

    fn finish(&mut self, min_count: u64) {
        self.prob = (self.exposed >= min_count.max(1)).then(|| self.adopted as f64 / self.exposed as f64);
    }
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborhoodAdoptionProfile {
    pub app: AppId,
    pub snapshot: Day,
    pub horizon: u32,
    /// Indexed in [`NeighborhoodClass::ALL`] order.
    pub cells: [ClassCell; 6],
}

impl NeighborhoodAdoptionProfile {
    pub fn cell(&self, class: NeighborhoodClass) -> &ClassCell {
        &self.cells[class.index()]
    }

    fn prob(&self, c: NeighborhoodClass) -> Option<f64> {
        self.cell(c).prob
    }

    pub fn k2_over_e2(&self) -> Option<f64> {
        ratio(self.prob(NeighborhoodClass::K2), self.prob(NeighborhoodClass::E2))
    }

    pub fn e3_over_k3(&self) -> Option<f64> {
        ratio(self.prob(NeighborhoodClass::E3), self.prob(NeighborhoodClass::K3))
    }

    pub fn k3_over_e3(&self) -> Option<f64> {
        ratio(self.prob(NeighborhoodClass::K3), self.prob(NeighborhoodClass::E3))
    }

    pub fn p2ue1_over_k3(&self) -> Option<f64> {
        ratio(self.prob(NeighborhoodClass::P2uE1), self.prob(NeighborhoodClass::K3))
    }

    pub fn p3_over_k3(&self) -> Option<f64> {
        ratio(self.prob(NeighborhoodClass::P3), self.prob(NeighborhoodClass::K3))
    }
}

pub fn adoption_by_class(
    graph: &SocialGraph,
    log: &ActivityLog,
    app: AppId,
    opts: &NeighborhoodOptions,
) -> Result<NeighborhoodAdoptionProfile> {
    let activity = log.app(app)?;
    let snapshot = opts.resolve_snapshot(log, activity)?;
    let mut cells = [ClassCell::empty(); 6];
    for e in exposures(graph, activity, snapshot, opts, 3)? {
        if e.friends.len() < 2 {
            continue;
        }
        let cell = &mut cells[classify_neighborhood(graph, &e.friends)?.index()];
        cell.exposed += 1;
        cell.adopted += e.adopted as u64;
    }
    cells.iter_mut().for_each(|c| c.finish(opts.min_count));
    Ok(NeighborhoodAdoptionProfile {
        app,
        snapshot,
        horizon: opts.horizon,
        cells,
    })
}

/// Writes `app_id,class,exposed,adopted,prob` rows.
pub fn write_profiles(profiles: &[NeighborhoodAdoptionProfile], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "class", "exposed", "adopted", "prob"])?;
    for p in profiles {
        for class in NeighborhoodClass::ALL {
            let c = p.cell(class);
            w.write_record([
                p.app.to_string(),
                class.name().to_string(),
                c.exposed.to_string(),
                c.adopted.to_string(),
                fmt_opt(c.prob),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `app_id,k2_e2,e3_k3,p2ue1_k3,p3_k3` rows.
pub fn write_ratios(profiles: &[NeighborhoodAdoptionProfile], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "k2_e2", "e3_k3", "p2ue1_k3", "p3_k3"])?;
    for p in profiles {
        w.write_record([
            p.app.to_string(),
            fmt_opt(p.k2_over_e2()),
            fmt_opt(p.e3_over_k3()),
            fmt_opt(p.p2ue1_over_k3()),
            fmt_opt(p.p3_over_k3()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Single adopter friend: attributes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    #[default]
    Country,
}

/// Ratio of one cell to a pooled group of cells, per user index and pooled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSummary {
    /// `(user index, ratio)` for every user index with a defined ratio.
    pub per_index: Vec<(usize, f64)>,
    pub pooled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeAdoptionTable {
    pub app: AppId,
    pub snapshot: Day,
    /// Attribute values by index; index 0 is the modal value among users.
    pub values: Vec<u16>,
    /// `cells[i][j]`: exposed users with value index `i` whose single
    /// adopter friend has value index `j`.
    pub cells: Vec<Vec<ClassCell>>,
    /// `a(0,0) / a(0, j != 0)`.
    pub modal_same_vs_other: Option<f64>,
    /// `a(i,i) / a(i,0)` for `i != 0`.
    pub same_vs_modal: RatioSummary,
    /// `a(i,i) / a(i, j not in {i, 0})` for `i != 0`.
    pub same_vs_third: RatioSummary,
}

fn attribute_value(attrs: &AttributeTable, u: UserId, attribute: Attribute) -> Result<u16> {
    let a = attrs
        .get(u)
        .ok_or_else(|| Error::invalid(format!("user {u} has no attributes")))?;
    Ok(match attribute {
        Attribute::Country => a.country,
    })
}

fn users_at(activity: &AppActivity, snapshot: Day) -> impl Iterator<Item = UserId> + '_ {
    activity.iter().filter(move |(_, d)| d[0] <= snapshot).map(|(u, _)| u)
}

fn pooled_rate(cells: &[&ClassCell], min_count: u64) -> Option<f64> {
    let exposed: u64 = cells.iter().map(|c| c.exposed).sum();
    let adopted: u64 = cells.iter().map(|c| c.adopted).sum();
    (exposed >= min_count.max(1)).then(|| adopted as f64 / exposed as f64)
}

pub fn attribute_adoption(
    graph: &SocialGraph,
    log: &ActivityLog,
    app: AppId,
    attrs: &AttributeTable,
    attribute: Attribute,
    opts: &NeighborhoodOptions,
) -> Result<AttributeAdoptionTable> {
    let activity = log.app(app)?;
    let snapshot = opts.resolve_snapshot(log, activity)?;
    let exposed: Vec<Exposure> = exposures(graph, activity, snapshot, opts, 1)?;

    let mut user_counts: BTreeMap<u16, u64> = BTreeMap::new();
    for u in users_at(activity, snapshot) {
        *user_counts.entry(attribute_value(attrs, u, attribute)?).or_default() += 1;
    }
    let mut pairs = Vec::with_capacity(exposed.len());
    for e in &exposed {
        let vu = attribute_value(attrs, e.user, attribute)?;
        let vf = attribute_value(attrs, e.friends[0], attribute)?;
        user_counts.entry(vu).or_insert(0);
        user_counts.entry(vf).or_insert(0);
        pairs.push((vu, vf, e.adopted));
    }
    let mut values: Vec<(u16, u64)> = user_counts.into_iter().collect();
    values.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let values: Vec<u16> = values.into_iter().map(|(v, _)| v).collect();
    let index: BTreeMap<u16, usize> = values.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    let k = values.len();
    let mut cells = vec![vec![ClassCell::empty(); k]; k];
    for (vu, vf, adopted) in pairs {
        let cell = &mut cells[index[&vu]][index[&vf]];
        cell.exposed += 1;
        cell.adopted += adopted as u64;
    }
    cells.iter_mut().flatten().for_each(|c| c.finish(opts.min_count));

    let m = opts.min_count;
    let modal_same_vs_other = if k > 1 {
        ratio(cells[0][0].prob, pooled_rate(&cells[0][1..].iter().collect::<Vec<_>>(), m))
    } else {
        None
    };
    let mut same_modal = Vec::new();
    let mut same_third = Vec::new();
    let (mut diag, mut modal, mut third) = (Vec::new(), Vec::new(), Vec::new());
    for i in 1..k {
        let others: Vec<&ClassCell> = (1..k).filter(|&j| j != i).map(|j| &cells[i][j]).collect();
        if let Some(r) = ratio(cells[i][i].prob, cells[i][0].prob) {
            same_modal.push((i, r));
        }
        if let Some(r) = ratio(cells[i][i].prob, pooled_rate(&others, m)) {
            same_third.push((i, r));
        }
        diag.push(&cells[i][i]);
        modal.push(&cells[i][0]);
        third.extend(others);
    }
    Ok(AttributeAdoptionTable {
        app,
        snapshot,
        values,
        modal_same_vs_other,
        same_vs_modal: RatioSummary {
            per_index: same_modal,
            pooled: ratio(pooled_rate(&diag, m), pooled_rate(&modal, m)),
        },
        same_vs_third: RatioSummary {
            per_index: same_third,
            pooled: ratio(pooled_rate(&diag, m), pooled_rate(&third, m)),
        },
        cells,
    })
}

/// Writes `app_id,user_index,friend_index,user_value,friend_value,exposed,adopted,prob`.
pub fn write_attribute_tables(tables: &[AttributeAdoptionTable], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "app_id",
        "user_index",
        "friend_index",
        "user_value",
        "friend_value",
        "exposed",
        "adopted",
        "prob",
    ])?;
    for t in tables {
        for (i, row) in t.cells.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                if c.exposed == 0 {
                    continue;
                }
                w.write_record([
                    t.app.to_string(),
                    i.to_string(),
                    j.to_string(),
                    t.values[i].to_string(),
                    t.values[j].to_string(),
                    c.exposed.to_string(),
                    c.adopted.to_string(),
                    fmt_opt(c.prob),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Single adopter friend: age offsets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeOffsetBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub prob: f64,
    pub bands: BootstrapBands,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeOffsetCurve {
    /// `bins + 1` edges: the first offset of each bin, then the maximum.
    pub edges: Vec<f64>,
    pub bins: Vec<AgeOffsetBin>,
}

/// Sorts by offset and splits into equal-population bins (sizes differ by
/// at most one).
fn offset_curve(mut sample: Vec<(f64, UserId, bool)>, n_boot: usize, seed: u64) -> Result<AgeOffsetCurve> {
    sample.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = sample.len();
    let mut bins = Vec::with_capacity(AGE_OFFSET_BINS);
    let mut edges = Vec::with_capacity(AGE_OFFSET_BINS + 1);
    for b in 0..AGE_OFFSET_BINS {
        let (start, end) = (b * n / AGE_OFFSET_BINS, (b + 1) * n / AGE_OFFSET_BINS);
        let chunk = &sample[start..end];
        let outcomes: Vec<f64> = chunk.iter().map(|s| s.2 as u8 as f64).collect();
        let bands = stats::bootstrap_mean_ci(&outcomes, n_boot, rng::derive_seed(seed, "age-bin", b as u64))?;
        edges.push(chunk[0].0);
        bins.push(AgeOffsetBin {
            lo: chunk[0].0,
            hi: chunk[chunk.len() - 1].0,
            n: chunk.len(),
            prob: bands.mean,
            bands,
        });
    }
    edges.push(sample[n - 1].0);
    Ok(AgeOffsetCurve { edges, bins })
}

/// Adoption probability of users with exactly one adopter friend, binned by
/// the friend's and by the user's age offset from the median age of the
/// app's users. Returns `(friend curve, user curve)`.
#[allow(clippy::too_many_arguments)]
pub fn age_offset_curves(
    graph: &SocialGraph,
    log: &ActivityLog,
    app: AppId,
    attrs: &AttributeTable,
    opts: &NeighborhoodOptions,
    n_boot: usize,
    min_bin_size: usize,
    seed: u64,
) -> Result<(AgeOffsetCurve, AgeOffsetCurve)> {
    let activity = log.app(app)?;
    let snapshot = opts.resolve_snapshot(log, activity)?;
    let exposed = exposures(graph, activity, snapshot, opts, 1)?;
    let needed = AGE_OFFSET_BINS * min_bin_size.max(1);
    if exposed.len() < needed {
        return Err(Error::insufficient(format!(
            "{} exposed users, need at least {needed} to form {AGE_OFFSET_BINS} bins",
            exposed.len()
        )));
    }
    let age = |u: UserId| -> Result<f64> {
        attrs
            .get(u)
            .map(|a| a.age as f64)
            .ok_or_else(|| Error::invalid(format!("user {u} has no attributes")))
    };
    let user_ages: Vec<f64> = users_at(activity, snapshot).map(age).collect::<Result<_>>()?;
    let median = stats::median(&user_ages).ok_or_else(|| Error::insufficient("app has no users at the snapshot"))?;
    let mut friend_sample = Vec::with_capacity(exposed.len());
    let mut user_sample = Vec::with_capacity(exposed.len());
    for e in &exposed {
        friend_sample.push((age(e.friends[0])? - median, e.user, e.adopted));
        user_sample.push((age(e.user)? - median, e.user, e.adopted));
    }
    let app_seed = rng::derive_seed(seed, "age-offset", app as u64);
    Ok((
        offset_curve(friend_sample, n_boot, rng::derive_seed(app_seed, "friend", 0))?,
        offset_curve(user_sample, n_boot, rng::derive_seed(app_seed, "user", 0))?,
    ))
}

/// Writes `app_id,curve,bin,lo,hi,n,prob,band68_lo,...,band997_hi`.
pub fn write_age_curves(curves: &[(AppId, AgeOffsetCurve, AgeOffsetCurve)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "app_id", "curve", "bin", "lo", "hi", "n", "prob", "band68_lo", "band68_hi", "band95_lo", "band95_hi",
        "band997_lo", "band997_hi",
    ])?;
    for (app, friend, user) in curves {
        for (name, curve) in [("friend", friend), ("user", user)] {
            for (i, b) in curve.bins.iter().enumerate() {
                w.write_record([
                    app.to_string(),
                    name.to_string(),
                    i.to_string(),
                    b.lo.to_string(),
                    b.hi.to_string(),
                    b.n.to_string(),
                    b.prob.to_string(),
                    b.bands.band68.0.to_string(),
                    b.bands.band68.1.to_string(),
                    b.bands.band95.0.to_string(),
                    b.bands.band95.1.to_string(),
                    b.bands.band997.0.to_string(),
                    b.bands.band997.1.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UserAttributes;
    use proptest::prelude::*;

    fn opts(snapshot: u32, horizon: u32, min_count: u64) -> NeighborhoodOptions {
        NeighborhoodOptions {
            snapshot: Some(Day(snapshot)),
            horizon,
            user_def: UserDef::Ever,
            min_count,
        }
    }

    #[test]
    fn classify_examples() {
        let g = SocialGraph::from_edges(4, [(0, 1), (1, 2), (0, 2)], 10).unwrap();
        assert_eq!(classify_neighborhood(&g, &[0, 3]).unwrap(), NeighborhoodClass::E2);
        assert_eq!(classify_neighborhood(&g, &[0, 1]).unwrap(), NeighborhoodClass::K2);
        assert_eq!(classify_neighborhood(&g, &[0, 1, 2]).unwrap(), NeighborhoodClass::K3);
        let g = SocialGraph::from_edges(4, [(0, 1), (1, 2)], 10).unwrap();
        assert_eq!(classify_neighborhood(&g, &[0, 1, 3]).unwrap(), NeighborhoodClass::P2uE1);
        assert_eq!(classify_neighborhood(&g, &[0, 1, 2]).unwrap(), NeighborhoodClass::P3);
        assert_eq!(classify_neighborhood(&g, &[3, 0, 2]).unwrap(), NeighborhoodClass::E3);
        assert!(classify_neighborhood(&g, &[0]).is_err());
        assert!(classify_neighborhood(&g, &[0, 1, 2, 3]).is_err());
        assert!(classify_neighborhood(&g, &[0, 0]).is_err());
    }

    #[test]
    fn toy_k2_cell() {
        // a=0, b=1, c=2; d=3, e=4 unrelated.
        let g = SocialGraph::from_edges(5, [(0, 1), (0, 2), (1, 2), (3, 4)], 10).unwrap();
        let events = vec![(0, 1, Day(0)), (0, 2, Day(0)), (0, 0, Day(3))];
        let log = ActivityLog::from_events(events, Some(Day(10))).unwrap();
        let p = adoption_by_class(&g, &log, 0, &opts(1, 5, 1)).unwrap();
        let k2 = p.cell(NeighborhoodClass::K2);
        assert_eq!((k2.exposed, k2.adopted, k2.prob), (1, 1, Some(1.0)));
        assert_eq!(p.cell(NeighborhoodClass::E2).prob, None);
        assert_eq!(p.k2_over_e2(), None);
    }

    #[test]
    fn no_pair_exposure_flags_cells() {
        let g = SocialGraph::from_edges(3, [(0, 1)], 10).unwrap();
        let log = ActivityLog::from_events(vec![(0, 0, Day(0))], Some(Day(10))).unwrap();
        let p = adoption_by_class(&g, &log, 0, &opts(1, 5, 1)).unwrap();
        assert!(p.cells.iter().all(|c| c.exposed == 0 && c.prob.is_none()));
    }

    #[test]
    fn horizon_must_fit() {
        let g = SocialGraph::empty(3, 10);
        let log = ActivityLog::from_events(vec![(0, 0, Day(0))], Some(Day(10))).unwrap();
        assert!(adoption_by_class(&g, &log, 0, &opts(8, 5, 1)).is_err());
        let p = adoption_by_class(&g, &log, 0, &NeighborhoodOptions { horizon: 5, ..Default::default() }).unwrap();
        assert_eq!(p.snapshot, Day(0));
    }

    #[test]
    fn active_definition_drops_lapsed_friends() {
        let g = SocialGraph::from_edges(3, [(0, 2), (1, 2)], 10).unwrap();
        let events = vec![(0, 0, Day(0)), (0, 1, Day(0)), (0, 1, Day(40))];
        let log = ActivityLog::from_events(events, Some(Day(60))).unwrap();
        let mut o = opts(45, 10, 1);
        let p = adoption_by_class(&g, &log, 0, &o).unwrap();
        assert_eq!(p.cell(NeighborhoodClass::E2).exposed, 1);
        o.user_def = UserDef::Active;
        let p = adoption_by_class(&g, &log, 0, &o).unwrap();
        assert_eq!(p.cell(NeighborhoodClass::E2).exposed, 0);
    }

    fn table(countries: &[u16], ages: &[u8]) -> AttributeTable {
        AttributeTable::new(
            countries
                .iter()
                .zip(ages)
                .map(|(&c, &a)| UserAttributes {
                    country: c,
                    gender: 0,
                    age: a,
                    fb_active_days_of_7: 7,
                    is_mau: true,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_country_table_is_one_by_one() {
        let g = SocialGraph::from_edges(4, [(0, 1), (2, 3)], 10).unwrap();
        let log = ActivityLog::from_events(vec![(0, 0, Day(0)), (0, 2, Day(0)), (0, 1, Day(2))], Some(Day(10))).unwrap();
        let t = attribute_adoption(&g, &log, 0, &table(&[5; 4], &[20; 4]), Attribute::Country, &opts(0, 5, 1)).unwrap();
        assert_eq!(t.values, vec![5]);
        assert_eq!(t.cells[0][0].exposed, 2);
        assert_eq!(t.cells[0][0].adopted, 1);
        assert_eq!(t.modal_same_vs_other, None);
        assert_eq!(t.same_vs_modal.pooled, None);
    }

    #[test]
    fn attribute_indices_and_ratios() {
        // Users 0,1 (country 7, modal) and 2 (country 3). Exposed 3..9.
        let edges = [(0, 3), (0, 4), (2, 5), (2, 6), (1, 7), (2, 8)];
        let g = SocialGraph::from_edges(9, edges, 10).unwrap();
        let countries = [7, 7, 3, 7, 3, 7, 3, 7, 3];
        let events = vec![(0, 0, Day(0)), (0, 1, Day(0)), (0, 2, Day(0)), (0, 3, Day(2)), (0, 6, Day(2)), (0, 4, Day(3))];
        let log = ActivityLog::from_events(events, Some(Day(10))).unwrap();
        let t = attribute_adoption(&g, &log, 0, &table(&countries, &[20; 9]), Attribute::Country, &opts(0, 5, 1)).unwrap();
        assert_eq!(t.values, vec![7, 3]);
        // (user 7, friend 7): users 3, 7 -> 1 of 2.
        assert_eq!((t.cells[0][0].exposed, t.cells[0][0].adopted), (2, 1));
        // (user 7, friend 3): user 5 -> 0 of 1.
        assert_eq!((t.cells[0][1].exposed, t.cells[0][1].adopted), (1, 0));
        // (user 3, friend 7): user 4 -> 1 of 1; (3,3): users 6, 8 -> 1 of 2.
        assert_eq!((t.cells[1][0].exposed, t.cells[1][0].adopted), (1, 1));
        assert_eq!((t.cells[1][1].exposed, t.cells[1][1].adopted), (2, 1));
        assert_eq!(t.modal_same_vs_other, None); // denominator rate is 0
        assert_eq!(t.same_vs_modal.per_index, vec![(1, 0.5)]);
        assert_eq!(t.same_vs_modal.pooled, Some(0.5));
        assert_eq!(t.same_vs_third.pooled, None);
    }

    #[test]
    fn age_curves_all_adopt_and_reproducible() {
        // Star pairs: adopter 2i, exposed 2i+1, all exposed adopt on day 2.
        let pairs = 40u32;
        let edges: Vec<_> = (0..pairs).map(|i| (2 * i, 2 * i + 1)).collect();
        let g = SocialGraph::from_edges(2 * pairs as usize, edges, 10).unwrap();
        let mut events = Vec::new();
        for i in 0..pairs {
            events.push((0, 2 * i, Day(0)));
            events.push((0, 2 * i + 1, Day(2)));
        }
        let log = ActivityLog::from_events(events, Some(Day(10))).unwrap();
        let ages: Vec<u8> = (0..2 * pairs).map(|u| (18 + u % 37) as u8).collect();
        let attrs = table(&vec![0; 2 * pairs as usize], &ages);
        let o = opts(0, 5, 1);
        let (f, u) = age_offset_curves(&g, &log, 0, &attrs, &o, 1000, 2, 9).unwrap();
        for curve in [&f, &u] {
            assert_eq!(curve.bins.len(), 20);
            assert_eq!(curve.edges.len(), 21);
            assert!(curve.bins.iter().all(|b| b.prob == 1.0 && b.bands.band997 == (1.0, 1.0) && b.n == 2));
            assert!(curve.edges.windows(2).all(|w| w[0] <= w[1]));
        }
        let again = age_offset_curves(&g, &log, 0, &attrs, &o, 1000, 2, 9).unwrap();
        assert_eq!((f, u), again);
        assert!(age_offset_curves(&g, &log, 0, &attrs, &o, 1000, 3, 9).is_err());
    }

    fn brute_force_cells(g: &SocialGraph, first: &[Option<u32>], snapshot: u32, horizon: u32) -> [(u64, u64); 6] {
        let n = first.len();
        let mut cells = [(0u64, 0u64); 6];
        for v in 0..n {
            if first[v].is_some_and(|d| d <= snapshot) {
                continue;
            }
            let fr: Vec<UserId> = (0..n)
                .filter(|&u| g.has_edge(u as u32, v as u32) && first[u].is_some_and(|d| d <= snapshot))
                .map(|u| u as UserId)
                .collect();
            if fr.len() == 2 || fr.len() == 3 {
                // Count induced edges directly.
                let mut e = 0;
                for i in 0..fr.len() {
                    for j in i + 1..fr.len() {
                        e += g.has_edge(fr[i], fr[j]) as usize;
                    }
                }
                let idx = if fr.len() == 2 { e } else { 2 + e.min(3) };
                let adopted = first[v].is_some_and(|d| d > snapshot && d <= snapshot + horizon);
                cells[idx].0 += 1;
                cells[idx].1 += adopted as u64;
            }
        }
        cells
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            n in 3usize..50,
            edges in proptest::collection::vec((0u32..50, 0u32..50), 0..200),
            first in proptest::collection::vec(proptest::option::of(0u32..20), 50),
        ) {
            let edges: Vec<_> = edges.into_iter().filter(|(a, b)| (*a as usize) < n && (*b as usize) < n && a != b).collect();
            let g = SocialGraph::from_edges(n, edges, 5000).unwrap();
            let first = &first[..n];
            let events: Vec<_> = first.iter().enumerate().filter_map(|(u, d)| d.map(|d| (0, u as UserId, Day(d)))).collect();
            let log = ActivityLog::from_events(events, Some(Day(30))).unwrap();
            if log.app(0).is_err() {
                return Ok(());
            }
            let p = adoption_by_class(&g, &log, 0, &opts(8, 7, 1)).unwrap();
            let want = brute_force_cells(&g, first, 8, 7);
            for (cell, (e, a)) in p.cells.iter().zip(want) {
                prop_assert_eq!((cell.exposed, cell.adopted), (e, a));
                prop_assert!(cell.adopted <= cell.exposed);
            }
        }
    }
}
