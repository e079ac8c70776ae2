//! Users, friendship graphs and daily activity logs.
//!
//! All types are immutable after construction. On-disk forms are canonical:
//! edges are written as `(min_id, max_id)` in sorted order and activity rows
//! are sorted by `(app, user, day)`, so loading and re-writing a file is
//! byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = u32;
pub type AppId = u32;

/// Friend limit of the host platform, used as the default degree cap.
pub const DEFAULT_DEGREE_CAP: usize = 5000;

/// Days since the dataset epoch (day 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Day(pub u32);

impl Day {
    pub fn index(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for Day {
    fn from(d: u32) -> Self {
        Day(d)
    }
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

/// Undirected friendship graph in compressed adjacency form.
///
/// Nodes are `0..node_count`. Neighbor lists are sorted, with no self-loops,
/// no duplicates, and no node above `degree_cap`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocialGraph {
    node_count: usize,
    degree_cap: usize,
    offsets: Vec<usize>,
    neighbors: Vec<UserId>,
}

impl SocialGraph {
    /// Builds a graph from an edge list, rejecting self-loops and nodes whose
    /// degree would exceed `degree_cap`. Symmetric and repeated pairs are
    /// merged.
    pub fn from_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = (UserId, UserId)>,
        degree_cap: usize,
    ) -> Result<Self> {
        let pairs = normalize_edges(node_count, edges)?;
        let graph = Self::from_sorted_pairs(node_count, degree_cap, &pairs);
        if let Some(node) = (0..node_count).find(|&u| graph.degree(u as UserId) > degree_cap) {
            return Err(Error::DegreeCap {
                node: node as u32,
                cap: degree_cap,
            });
        }
        Ok(graph)
    }

    /// Like [`SocialGraph::from_edges`], but drops (in edge order) any edge that
    /// would push an endpoint over the cap. Returns the graph and the number of
    /// dropped edges.
    pub fn from_edges_capped(
        node_count: usize,
        edges: impl IntoIterator<Item = (UserId, UserId)>,
        degree_cap: usize,
    ) -> Result<(Self, usize)> {
        let mut degree = vec![0usize; node_count];
        let mut kept = Vec::new();
        let mut dropped = 0;
        let mut seen = std::collections::HashSet::new();
        for (a, b) in edges {
            check_pair(node_count, a, b)?;
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                continue;
            }
            if degree[a as usize] >= degree_cap || degree[b as usize] >= degree_cap {
                dropped += 1;
                continue;
            }
            degree[a as usize] += 1;
            degree[b as usize] += 1;
            kept.push(key);
        }
        kept.sort_unstable();
        Ok((Self::from_sorted_pairs(node_count, degree_cap, &kept), dropped))
    }

    fn from_sorted_pairs(node_count: usize, degree_cap: usize, pairs: &[(UserId, UserId)]) -> Self {
        let mut degree = vec![0usize; node_count];
        for &(a, b) in pairs {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..node_count].to_vec();
        let mut neighbors = vec![0; offsets[node_count]];
        for &(a, b) in pairs {
            neighbors[fill[a as usize]] = b;
            fill[a as usize] += 1;
            neighbors[fill[b as usize]] = a;
            fill[b as usize] += 1;
        }
        for u in 0..node_count {
            neighbors[offsets[u]..offsets[u + 1]].sort_unstable();
        }
        SocialGraph {
            node_count,
            degree_cap,
            offsets,
            neighbors,
        }
    }

    pub fn empty(node_count: usize, degree_cap: usize) -> Self {
        Self::from_sorted_pairs(node_count, degree_cap, &[])
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn degree_cap(&self) -> usize {
        self.degree_cap
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn neighbors(&self, u: UserId) -> &[UserId] {
        let u = u as usize;
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: UserId) -> usize {
        let u = u as usize;
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, a: UserId, b: UserId) -> bool {
        let (small, large) = if self.degree(a) <= self.degree(b) { (a, b) } else { (b, a) };
        self.neighbors(small).binary_search(&large).is_ok()
    }

    /// Edges as `(min, max)` pairs in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (UserId, UserId)> + '_ {
        (0..self.node_count as UserId).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    /// Returns a copy with at least `node_count` nodes (isolated nodes appended).
    pub fn with_node_count(&self, node_count: usize) -> Self {
        if node_count <= self.node_count {
            return self.clone();
        }
        let mut offsets = self.offsets.clone();
        let last = *offsets.last().unwrap();
        offsets.resize(node_count + 1, last);
        SocialGraph {
            node_count,
            degree_cap: self.degree_cap,
            offsets,
            neighbors: self.neighbors.clone(),
        }
    }
}

fn check_pair(node_count: usize, a: UserId, b: UserId) -> Result<()> {
    if a == b {
        return Err(Error::invalid(format!("self-loop on node {a}")));
    }
    if a as usize >= node_count || b as usize >= node_count {
        return Err(Error::invalid(format!(
            "edge ({a},{b}) references a node outside 0..{node_count}"
        )));
    }
    Ok(())
}

fn normalize_edges(
    node_count: usize,
    edges: impl IntoIterator<Item = (UserId, UserId)>,
) -> Result<Vec<(UserId, UserId)>> {
    let mut pairs = Vec::new();
    for (a, b) in edges {
        check_pair(node_count, a, b)?;
        pairs.push((a.min(b), a.max(b)));
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

/// Loads a `user_a,user_b` CSV. The node count is one past the largest id.
pub fn load_graph(path: impl AsRef<Path>, degree_cap: usize) -> Result<SocialGraph> {
    let path = path.as_ref();
    let mut edges = Vec::new();
    let mut max_id: Option<u32> = None;
    for_each_row(path, &["user_a", "user_b"], |line, fields| {
        let a: u32 = parse_field(path, line, fields[0])?;
        let b: u32 = parse_field(path, line, fields[1])?;
        if a == b {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("self-loop on node {a}"),
            });
        }
        max_id = Some(max_id.map_or(a.max(b), |m| m.max(a).max(b)));
        edges.push((a, b));
        Ok(())
    })?;
    let node_count = max_id.map_or(0, |m| m as usize + 1);
    SocialGraph::from_edges(node_count, edges, degree_cap)
}

pub fn write_graph(graph: &SocialGraph, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_a", "user_b"])?;
    for (a, b) in graph.edges() {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Attributes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAttributes {
    pub country: u16,
    pub gender: u8,
    pub age: u8,
    /// Days out of the last 7 the user was active on the host platform.
    pub fb_active_days_of_7: u8,
    pub is_mau: bool,
}

impl UserAttributes {
    pub fn validate(&self) -> Result<()> {
        if self.fb_active_days_of_7 > 7 {
            return Err(Error::invalid(format!(
                "fb_active_days_of_7 = {} exceeds 7",
                self.fb_active_days_of_7
            )));
        }
        Ok(())
    }
}

/// Attributes for users `0..len`, indexed by user id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttributeTable {
    users: Vec<UserAttributes>,
}

impl AttributeTable {
    pub fn new(users: Vec<UserAttributes>) -> Result<Self> {
        for u in &users {
            u.validate()?;
        }
        Ok(AttributeTable { users })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn get(&self, user: UserId) -> Option<&UserAttributes> {
        self.users.get(user as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, &UserAttributes)> {
        self.users.iter().enumerate().map(|(i, a)| (i as UserId, a))
    }
}

impl std::ops::Index<UserId> for AttributeTable {
    type Output = UserAttributes;

    fn index(&self, user: UserId) -> &UserAttributes {
        &self.users[user as usize]
    }
}

const ATTRIBUTE_HEADER: [&str; 6] = ["user_id", "country", "gender", "age", "fb_l7", "is_mau"];

/// Loads a `user_id,country,gender,age,fb_l7,is_mau` CSV. Ids must cover
/// `0..n` exactly once.
pub fn load_attributes(path: impl AsRef<Path>) -> Result<AttributeTable> {
    let path = path.as_ref();
    let rows = read_rows(path, &ATTRIBUTE_HEADER)?;
    let mut slots: Vec<Option<UserAttributes>> = vec![None; rows.len()];
    for (line, f) in rows {
        let id: usize = parse_field(path, line, &f[0])?;
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if id >= slots.len() {
            return Err(perr(format!("user id {id} outside 0..{}", slots.len())));
        }
        if slots[id].is_some() {
            return Err(perr(format!("duplicate user id {id}")));
        }
        let is_mau = match f[5].as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(perr(format!("is_mau must be 0/1, got {other:?}"))),
        };
        let attrs = UserAttributes {
            country: parse_field(path, line, &f[1])?,
            gender: parse_field(path, line, &f[2])?,
            age: parse_field(path, line, &f[3])?,
            fb_active_days_of_7: parse_field(path, line, &f[4])?,
            is_mau,
        };
        attrs.validate().map_err(|e| perr(e.to_string()))?;
        slots[id] = Some(attrs);
    }
    // Every slot is filled: ids are distinct and bounded by the row count.
    AttributeTable::new(slots.into_iter().map(Option::unwrap).collect())
}

pub fn write_attributes(table: &AttributeTable, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ATTRIBUTE_HEADER)?;
    for (id, a) in table.iter() {
        w.write_record([
            id.to_string(),
            a.country.to_string(),
            a.gender.to_string(),
            a.age.to_string(),
            a.fb_active_days_of_7.to_string(),
            u8::from(a.is_mau).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Activity
// ---------------------------------------------------------------------------

/// Deduplicated active days of every user of one app.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AppActivity {
    users: Vec<UserId>,
    offsets: Vec<usize>,
    days: Vec<Day>,
}

impl AppActivity {
    /// Builds from `(user, day)` events in any order; duplicates are merged.
    pub fn from_events(mut events: Vec<(UserId, Day)>) -> Self {
        events.sort_unstable();
        events.dedup();
        let mut b = AppActivityBuilder::default();
        let mut i = 0;
        while i < events.len() {
            let user = events[i].0;
            let mut j = i;
            while j < events.len() && events[j].0 == user {
                j += 1;
            }
            b.push_user(user, events[i..j].iter().map(|e| e.1));
            i = j;
        }
        b.finish()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn event_count(&self) -> usize {
        self.days.len()
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, &[Day])> + '_ {
        self.users
            .iter()
            .enumerate()
            .map(move |(i, &u)| (u, &self.days[self.offsets[i]..self.offsets[i + 1]]))
    }

    pub fn days_of(&self, user: UserId) -> Option<&[Day]> {
        let i = self.users.binary_search(&user).ok()?;
        Some(&self.days[self.offsets[i]..self.offsets[i + 1]])
    }

    pub fn first_day(&self, user: UserId) -> Option<Day> {
        self.days_of(user).map(|d| d[0])
    }

    pub fn last_event_day(&self) -> Option<Day> {
        self.iter().map(|(_, d)| *d.last().unwrap()).max()
    }

    /// Per-user first event day, indexed by user id over `0..node_count`.
    pub fn first_days(&self, node_count: usize) -> Vec<Option<Day>> {
        let mut out = vec![None; node_count];
        for (u, d) in self.iter() {
            if (u as usize) < node_count {
                out[u as usize] = Some(d[0]);
            }
        }
        out
    }

    /// Distinct users active in the trailing `window_len` days ending at each
    /// day `0..=last_day`.
    pub fn active_counts(&self, window_len: u32, last_day: Day) -> Vec<u32> {
        let n = last_day.0 as usize + 1;
        let mut diff = vec![0i64; n + 1];
        let w = window_len.max(1);
        for (_, days) in self.iter() {
            // A user counts on day t iff some event d satisfies d <= t <= d + w - 1.
            let mut cur: Option<(u32, u32)> = None;
            for d in days {
                let (s, e) = (d.0, d.0 + w - 1);
                match cur {
                    Some((cs, ce)) if s <= ce + 1 => cur = Some((cs, ce.max(e))),
                    Some((cs, ce)) => {
                        add_interval(&mut diff, cs, ce, n);
                        cur = Some((s, e));
                    }
                    None => cur = Some((s, e)),
                }
            }
            if let Some((cs, ce)) = cur {
                add_interval(&mut diff, cs, ce, n);
            }
        }
        let mut out = Vec::with_capacity(n);
        let mut acc = 0i64;
        for d in diff.iter().take(n) {
            acc += d;
            out.push(acc as u32);
        }
        out
    }
}

fn add_interval(diff: &mut [i64], start: u32, end: u32, n: usize) {
    let s = start as usize;
    if s >= n {
        return;
    }
    let e = (end as usize).min(n - 1);
    diff[s] += 1;
    diff[e + 1] -= 1;
}

/// Incremental builder; users must be pushed in increasing id order with
/// sorted days.
#[derive(Debug, Default)]
pub struct AppActivityBuilder {
    inner: AppActivity,
}

impl AppActivityBuilder {
    pub fn push_user(&mut self, user: UserId, days: impl IntoIterator<Item = Day>) {
        let a = &mut self.inner;
        if a.offsets.is_empty() {
            a.offsets.push(0);
        }
        debug_assert!(a.users.last().is_none_or(|&last| last < user));
        let start = a.days.len();
        for d in days {
            if a.days.len() > start && *a.days.last().unwrap() == d {
                continue;
            }
            debug_assert!(a.days.len() == start || *a.days.last().unwrap() < d);
            a.days.push(d);
        }
        if a.days.len() == start {
            return;
        }
        a.users.push(user);
        a.offsets.push(a.days.len());
    }

    pub fn finish(mut self) -> AppActivity {
        if self.inner.offsets.is_empty() {
            self.inner.offsets.push(0);
        }
        self.inner
    }
}

/// Per-app daily activity over the horizon `0..=horizon_end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityLog {
    horizon_end: Day,
    apps: BTreeMap<AppId, AppActivity>,
}

impl ActivityLog {
    pub fn new(horizon_end: Day) -> Self {
        ActivityLog {
            horizon_end,
            apps: BTreeMap::new(),
        }
    }

    /// Builds a log from raw `(app, user, day)` events. The horizon defaults to
    /// the last event day.
    pub fn from_events(events: Vec<(AppId, UserId, Day)>, horizon_end: Option<Day>) -> Result<Self> {
        let last = events.iter().map(|e| e.2).max();
        let horizon_end = match (horizon_end, last) {
            (Some(h), Some(l)) if l > h => {
                return Err(Error::invalid(format!(
                    "event on day {l} lies beyond the horizon end {h}"
                )))
            }
            (Some(h), _) => h,
            (None, l) => l.unwrap_or_default(),
        };
        let mut grouped: BTreeMap<AppId, Vec<(UserId, Day)>> = BTreeMap::new();
        for (app, user, day) in events {
            grouped.entry(app).or_default().push((user, day));
        }
        let apps = grouped
            .into_iter()
            .map(|(app, ev)| (app, AppActivity::from_events(ev)))
            .collect();
        Ok(ActivityLog { horizon_end, apps })
    }

    pub fn insert(&mut self, app: AppId, activity: AppActivity) -> Result<()> {
        if let Some(last) = activity.last_event_day() {
            if last > self.horizon_end {
                return Err(Error::invalid(format!(
                    "app {app} has an event on day {last} beyond the horizon end {}",
                    self.horizon_end
                )));
            }
        }
        self.apps.insert(app, activity);
        Ok(())
    }

    pub fn horizon_end(&self) -> Day {
        self.horizon_end
    }

    pub fn app(&self, app: AppId) -> Result<&AppActivity> {
        self.apps.get(&app).ok_or(Error::UnknownApp(app))
    }

    pub fn app_ids(&self) -> impl Iterator<Item = AppId> + '_ {
        self.apps.keys().copied()
    }

    pub fn apps(&self) -> impl Iterator<Item = (AppId, &AppActivity)> {
        self.apps.iter().map(|(&k, v)| (k, v))
    }

    pub fn app_count(&self) -> usize {
        self.apps.len()
    }

    pub fn event_count(&self) -> usize {
        self.apps.values().map(AppActivity::event_count).sum()
    }
}

/// Loads an `app_id,user_id,day` CSV.
pub fn load_log(path: impl AsRef<Path>, horizon_end: Option<Day>) -> Result<ActivityLog> {
    let path = path.as_ref();
    let mut events = Vec::new();
    for_each_row(path, &["app_id", "user_id", "day"], |line, f| {
        let app: u32 = parse_field(path, line, f[0])?;
        let user: u32 = parse_field(path, line, f[1])?;
        let day: u32 = parse_field(path, line, f[2])?;
        events.push((app, user, Day(day)));
        Ok(())
    })?;
    ActivityLog::from_events(events, horizon_end)
}

pub fn write_log(log: &ActivityLog, out: impl Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "app_id,user_id,day")?;
    for (app, activity) in log.apps() {
        for (user, days) in activity.iter() {
            for d in days {
                writeln!(w, "{app},{user},{d}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Aggregations
// ---------------------------------------------------------------------------

/// Distinct users of `app` with at least one event in the trailing window of
/// `window_len` days ending at `window_end` (inclusive). Lengths 1, 7 and 30
/// give DAU, WAU and MAU.
pub fn active_users(log: &ActivityLog, app: AppId, window_end: Day, window_len: u32) -> Result<usize> {
    if window_len == 0 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    let activity = log.app(app)?;
    if window_end > log.horizon_end() || window_end.0 + 1 < window_len {
        return Err(Error::WindowOutsideHorizon {
            end: window_end.0,
            len: window_len,
            horizon_end: log.horizon_end().0,
        });
    }
    let start = Day(window_end.0 + 1 - window_len);
    Ok(activity
        .iter()
        .filter(|(_, days)| {
            let i = days.partition_point(|&d| d < start);
            i < days.len() && days[i] <= window_end
        })
        .count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSpan {
    pub user: UserId,
    pub first: Day,
    pub last: Day,
}

/// First and last active day of every user of `app`, sorted by user id.
pub fn user_spans(log: &ActivityLog, app: AppId) -> Result<Vec<UserSpan>> {
    Ok(log
        .app(app)?
        .iter()
        .map(|(user, days)| UserSpan {
            user,
            first: days[0],
            last: *days.last().unwrap(),
        })
        .collect())
}

/// Counts users by (first-login bin, last-login bin). Cell `[i][j]` is
/// populated only for `j >= i`.
pub fn first_last_matrix(spans: &[UserSpan], bin_days: u32) -> Result<Vec<Vec<u64>>> {
    if bin_days == 0 {
        return Err(Error::invalid("bin_days must be at least 1"));
    }
    let bins = spans
        .iter()
        .map(|s| s.last.0 / bin_days + 1)
        .max()
        .unwrap_or(0) as usize;
    let mut m = vec![vec![0u64; bins]; bins];
    for s in spans {
        if s.first > s.last {
            return Err(Error::invalid(format!("span of user {} ends before it starts", s.user)));
        }
        m[(s.first.0 / bin_days) as usize][(s.last.0 / bin_days) as usize] += 1;
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

/// Reads a headed CSV and returns `(line number, fields)` rows.
pub(crate) fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for_each_row(path, header, |line, fields| {
        rows.push((line, fields.iter().map(|f| f.to_string()).collect()));
        Ok(())
    })?;
    Ok(rows)
}

/// Streams the rows of a headed CSV as `(line number, fields)` without
/// allocating per row.
pub(crate) fn for_each_row(
    path: &Path,
    header: &[&str],
    mut f: impl FnMut(usize, &[&str]) -> Result<()>,
) -> Result<()> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        None => return Ok(()),
        Some((_, first)) => {
            let got: Vec<&str> = first.trim_end_matches('\r').split(',').map(str::trim).collect();
            if got != header {
                return Err(perr(1, format!("expected header {:?}, got {:?}", header.join(","), first)));
            }
        }
    }
    let mut fields: Vec<&str> = Vec::with_capacity(header.len());
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        fields.clear();
        fields.extend(line.split(',').map(str::trim));
        if fields.len() != header.len() {
            return Err(perr(
                i + 1,
                format!("expected {} fields, got {}", header.len(), fields.len()),
            ));
        }
        f(i + 1, &fields)?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse {s:?}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_graph_merges_symmetric_pairs() {
        let f = tmp_file("user_a,user_b\n1,2\n2,1\n2,3\n");
        let g = load_graph(f.path(), DEFAULT_DEGREE_CAP).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.node_count(), 4);
        assert!(g.has_edge(2, 1));
        assert!(!g.has_edge(1, 3));
    }

    #[test]
    fn load_graph_empty_and_header_only() {
        let f = tmp_file("");
        assert_eq!(load_graph(f.path(), 10).unwrap().edge_count(), 0);
        let f = tmp_file("user_a,user_b\n");
        assert_eq!(load_graph(f.path(), 10).unwrap().edge_count(), 0);
    }

    #[test]
    fn load_graph_rejects_self_loop_and_garbage() {
        let f = tmp_file("user_a,user_b\n1,1\n");
        assert!(matches!(load_graph(f.path(), 10), Err(Error::Parse { line: 2, .. })));
        let f = tmp_file("user_a,user_b\n1,x\n");
        assert!(matches!(load_graph(f.path(), 10), Err(Error::Parse { .. })));
        let f = tmp_file("a,b\n1,2\n");
        assert!(matches!(load_graph(f.path(), 10), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn load_graph_enforces_degree_cap() {
        let f = tmp_file("user_a,user_b\n0,1\n0,2\n0,3\n");
        assert!(matches!(load_graph(f.path(), 2), Err(Error::DegreeCap { node: 0, cap: 2 })));
        assert!(load_graph(f.path(), 3).is_ok());
    }

    #[test]
    fn capped_construction_drops_overflow() {
        let (g, dropped) = SocialGraph::from_edges_capped(4, [(0, 1), (0, 2), (0, 3), (1, 0)], 2).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(g.degree(0), 2);
    }

    #[test]
    fn graph_round_trip_is_canonical() {
        let f = tmp_file("user_a,user_b\n3,1\n0,2\n1,0\n");
        let g = load_graph(f.path(), 10).unwrap();
        let mut out = Vec::new();
        write_graph(&g, &mut out).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), "user_a,user_b\n0,1\n0,2\n1,3\n");
        let f2 = tmp_file(std::str::from_utf8(&out).unwrap());
        let mut out2 = Vec::new();
        write_graph(&load_graph(f2.path(), 10).unwrap(), &mut out2).unwrap();
        assert_eq!(out, out2);
    }

    fn log_of(events: &[(u32, u32, u32)], horizon: u32) -> ActivityLog {
        ActivityLog::from_events(
            events.iter().map(|&(a, u, d)| (a, u, Day(d))).collect(),
            Some(Day(horizon)),
        )
        .unwrap()
    }

    #[test]
    fn active_users_windows() {
        let log = log_of(&[(0, 7, 3), (0, 7, 4)], 40);
        assert_eq!(active_users(&log, 0, Day(4), 1).unwrap(), 1);
        assert_eq!(active_users(&log, 0, Day(30), 30).unwrap(), 1);
        let log = log_of(&[(0, 1, 10), (0, 2, 10)], 40);
        assert_eq!(active_users(&log, 0, Day(40), 30).unwrap(), 0);
        assert_eq!(active_users(&log, 0, Day(39), 30).unwrap(), 2);
        assert!(matches!(active_users(&log, 9, Day(4), 1), Err(Error::UnknownApp(9))));
        assert!(matches!(
            active_users(&log, 0, Day(41), 1),
            Err(Error::WindowOutsideHorizon { .. })
        ));
        assert!(matches!(
            active_users(&log, 0, Day(5), 30),
            Err(Error::WindowOutsideHorizon { .. })
        ));
    }

    #[test]
    fn active_counts_match_direct_windows() {
        let log = log_of(
            &[(0, 1, 0), (0, 1, 5), (0, 1, 6), (0, 2, 3), (0, 2, 40), (0, 3, 12), (0, 3, 13)],
            60,
        );
        let app = log.app(0).unwrap();
        for w in [1u32, 7, 30] {
            let series = app.active_counts(w, Day(60));
            for (t, &v) in series.iter().enumerate() {
                let direct = app
                    .iter()
                    .filter(|(_, days)| days.iter().any(|d| d.0 as usize <= t && t < (d.0 + w) as usize))
                    .count();
                assert_eq!(v as usize, direct, "w={w} t={t}");
            }
        }
    }

    #[test]
    fn spans_sorted_by_user() {
        let log = log_of(&[(0, 9, 3), (0, 9, 5), (0, 9, 7), (0, 2, 3)], 10);
        let spans = user_spans(&log, 0).unwrap();
        assert_eq!(
            spans,
            vec![
                UserSpan { user: 2, first: Day(3), last: Day(3) },
                UserSpan { user: 9, first: Day(3), last: Day(7) },
            ]
        );
    }

    #[test]
    fn first_last_matrix_examples() {
        let m = first_last_matrix(&[UserSpan { user: 0, first: Day(3), last: Day(7) }], 1).unwrap();
        let total: u64 = m.iter().flatten().sum();
        assert_eq!(total, 1);
        assert_eq!(m[3][7], 1);
        let m = first_last_matrix(
            &[
                UserSpan { user: 0, first: Day(0), last: Day(0) },
                UserSpan { user: 1, first: Day(0), last: Day(0) },
            ],
            1,
        )
        .unwrap();
        assert_eq!(m, vec![vec![2]]);
        assert!(first_last_matrix(&[], 0).is_err());
    }

    #[test]
    fn log_round_trip_is_canonical() {
        let log = log_of(&[(2, 1, 5), (0, 3, 1), (0, 3, 1), (0, 1, 2)], 9);
        let mut out = Vec::new();
        write_log(&log, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out.clone()).unwrap(),
            "app_id,user_id,day\n0,1,2\n0,3,1\n2,1,5\n"
        );
        let f = tmp_file(std::str::from_utf8(&out).unwrap());
        let back = load_log(f.path(), Some(Day(9))).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn log_rejects_events_past_horizon() {
        assert!(ActivityLog::from_events(vec![(0, 0, Day(5))], Some(Day(4))).is_err());
    }

    #[test]
    fn attributes_round_trip_and_validation() {
        let f = tmp_file("user_id,country,gender,age,fb_l7,is_mau\n1,3,1,25,7,1\n0,2,0,40,0,0\n");
        let t = load_attributes(f.path()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[1].country, 3);
        assert!(!t[0].is_mau);
        let mut out = Vec::new();
        write_attributes(&t, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "user_id,country,gender,age,fb_l7,is_mau\n0,2,0,40,0,0\n1,3,1,25,7,1\n"
        );
        let f = tmp_file("user_id,country,gender,age,fb_l7,is_mau\n0,2,0,40,8,0\n");
        assert!(load_attributes(f.path()).is_err());
        let f = tmp_file("user_id,country,gender,age,fb_l7,is_mau\n0,2,0,40,1,0\n0,2,0,40,1,0\n");
        assert!(load_attributes(f.path()).is_err());
    }
}
