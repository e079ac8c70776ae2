//! Synthetic social graphs, user attributes and app ecosystems.
//!
//! Adoption follows a daily hazard `clamp(alpha * aff(u) + beta * g(u), 0, 1)`
//! where `g(u)` summarises the friends of `u` who already adopted. Hazards
//! only change when a friend adopts, so the simulation draws geometric
//! waiting times and redraws them on change instead of flipping a coin for
//! every user every day; by memorylessness the two are equal in law.
//! Adopters then live for a planted lifetime `L` with survival
//! `P(L >= t) = exp(-x_a t^(1-a) / (1-a))` and are active on each day of it
//! with probability `engagement_rho`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    ActivityLog, AppActivity, AppActivityBuilder, AppId, AttributeTable, Day, SocialGraph, UserAttributes, UserId,
    DEFAULT_DEGREE_CAP,
};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Users within this many years of `target_age` match an age target.
pub const AGE_MATCH_BAND: f64 = 5.0;

// ---------------------------------------------------------------------------
// Graphs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum GraphModel {
    ErdosRenyi { edge_prob: f64 },
    /// Ring lattice of even degree `ring_degree`, each edge rewired with
    /// probability `rewire_prob`.
    WattsStrogatz { ring_degree: usize, rewire_prob: f64 },
    /// Preferential attachment of `attachment_degree` edges per new node.
    BarabasiAlbert { attachment_degree: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphGenConfig {
    #[serde(flatten)]
    pub model: GraphModel,
    pub node_count: usize,
    #[serde(default = "default_degree_cap")]
    pub degree_cap: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_degree_cap() -> usize {
    DEFAULT_DEGREE_CAP
}

impl GraphGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_count < 2 {
            return Err(Error::InvalidConfig("node_count must be at least 2".into()));
        }
        match self.model {
            GraphModel::ErdosRenyi { edge_prob } => check_prob("edge_prob", edge_prob)?,
            GraphModel::WattsStrogatz { ring_degree, rewire_prob } => {
                check_prob("rewire_prob", rewire_prob)?;
                if ring_degree % 2 != 0 || ring_degree >= self.node_count {
                    return Err(Error::InvalidConfig(format!(
                        "ring_degree must be even and below node_count, got {ring_degree}"
                    )));
                }
            }
            GraphModel::BarabasiAlbert { attachment_degree } => {
                if attachment_degree == 0 || attachment_degree >= self.node_count {
                    return Err(Error::InvalidConfig(format!(
                        "attachment_degree must be in 1..node_count, got {attachment_degree}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("{name} must lie in [0,1], got {p}")));
    }
    Ok(())
}

/// Generates a graph. Edges that would exceed the degree cap are dropped and
/// the count is logged.
pub fn generate_graph(cfg: &GraphGenConfig) -> Result<SocialGraph> {
    cfg.validate()?;
    let n = cfg.node_count;
    let mut rng = rng::substream(cfg.seed, "graph", 0);
    let edges = match cfg.model {
        GraphModel::ErdosRenyi { edge_prob } => erdos_renyi(n, edge_prob, &mut rng),
        GraphModel::WattsStrogatz { ring_degree, rewire_prob } => watts_strogatz(n, ring_degree, rewire_prob, &mut rng),
        GraphModel::BarabasiAlbert { attachment_degree } => barabasi_albert(n, attachment_degree, &mut rng),
    };
    let (graph, dropped) = SocialGraph::from_edges_capped(n, edges, cfg.degree_cap)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} edges exceeding the degree cap of {}", cfg.degree_cap);
    }
    Ok(graph)
}

/// G(n, p) via geometric skipping over the lower triangle.
fn erdos_renyi(n: usize, p: f64, rng: &mut Rng) -> Vec<(UserId, UserId)> {
    let mut edges = Vec::new();
    if p <= 0.0 {
        return edges;
    }
    if p >= 1.0 {
        for v in 1..n {
            for w in 0..v {
                edges.push((w as UserId, v as UserId));
            }
        }
        return edges;
    }
    let log_q = (-p).ln_1p();
    let (mut v, mut w): (usize, i64) = (1, -1);
    while v < n {
        let r: f64 = 1.0 - rng.gen::<f64>();
        w += 1 + (r.ln() / log_q).floor() as i64;
        while w >= v as i64 && v < n {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            edges.push((w as UserId, v as UserId));
        }
    }
    edges
}

fn watts_strogatz(n: usize, k: usize, beta: f64, rng: &mut Rng) -> Vec<(UserId, UserId)> {
    let mut set: HashSet<(UserId, UserId)> = HashSet::new();
    let key = |a: usize, b: usize| ((a.min(b)) as UserId, (a.max(b)) as UserId);
    let mut lattice = Vec::with_capacity(n * k / 2);
    for u in 0..n {
        for j in 1..=k / 2 {
            let e = key(u, (u + j) % n);
            set.insert(e);
            lattice.push((u, (u + j) % n));
        }
    }
    for (u, v) in lattice {
        if rng.gen::<f64>() >= beta {
            continue;
        }
        // Rewire the far end of (u, v) to a uniform node that keeps the graph simple.
        if set.len() >= n * (n - 1) / 2 {
            continue;
        }
        let mut w;
        let mut tries = 0;
        loop {
            w = rng.gen_range(0..n);
            tries += 1;
            if (w != u && !set.contains(&key(u, w))) || tries > 100 {
                break;
            }
        }
        if w == u || set.contains(&key(u, w)) {
            continue;
        }
        set.remove(&key(u, v));
        set.insert(key(u, w));
    }
    let mut edges: Vec<_> = set.into_iter().collect();
    edges.sort_unstable();
    edges
}

fn barabasi_albert(n: usize, m: usize, rng: &mut Rng) -> Vec<(UserId, UserId)> {
    let mut edges = Vec::with_capacity(n * m);
    // Endpoint multiset: sampling from it is sampling proportional to degree.
    let mut targets: Vec<UserId> = Vec::with_capacity(2 * n * m);
    let seed_nodes = m + 1;
    for v in 1..seed_nodes {
        for w in 0..v {
            edges.push((w as UserId, v as UserId));
            targets.push(w as UserId);
            targets.push(v as UserId);
        }
    }
    let mut chosen: Vec<UserId> = Vec::with_capacity(m);
    for v in seed_nodes..n {
        chosen.clear();
        while chosen.len() < m {
            let t = targets[rng.gen_range(0..targets.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            edges.push((t, v as UserId));
            targets.push(t);
            targets.push(v as UserId);
        }
    }
    edges
}

// ---------------------------------------------------------------------------
// Attributes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeDistribution {
    pub mean: f64,
    pub sd: f64,
    pub min: u8,
    pub max: u8,
}

impl Default for AgeDistribution {
    fn default() -> Self {
        AgeDistribution {
            mean: 30.0,
            sd: 10.0,
            min: 13,
            max: 90,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDistributions {
    /// Weights over country codes `0..len`.
    pub country: Vec<f64>,
    /// Weights over gender codes `0..len`.
    pub gender: Vec<f64>,
    #[serde(default)]
    pub age: AgeDistribution,
    /// Weights over `0..=7` active days out of 7.
    pub fb_l7: Vec<f64>,
    pub is_mau_prob: f64,
}

impl Default for AttributeDistributions {
    fn default() -> Self {
        AttributeDistributions {
            country: vec![0.5, 0.2, 0.1, 0.1, 0.05, 0.05],
            gender: vec![0.48, 0.48, 0.04],
            age: AgeDistribution::default(),
            fb_l7: vec![0.05, 0.05, 0.05, 0.05, 0.1, 0.1, 0.2, 0.4],
            is_mau_prob: 0.9,
        }
    }
}

/// Cumulative weights for inverse-CDF sampling.
#[derive(Debug, Clone)]
struct Categorical {
    cumulative: Vec<f64>,
}

impl Categorical {
    fn new(name: &str, weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig(format!("{name} weights must be non-negative and non-empty")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig(format!("{name} weights sum to zero")));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Categorical { cumulative })
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.gen();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }
}

/// Samples attributes for every node. With `homophily_weight > 0` countries
/// are assigned in randomized breadth-first order and each node copies the
/// country of a random already-labelled neighbour with that probability.
pub fn assign_attributes(
    graph: &SocialGraph,
    dist: &AttributeDistributions,
    homophily_weight: f64,
    seed: u64,
) -> Result<AttributeTable> {
    check_prob("homophily_weight", homophily_weight)?;
    check_prob("is_mau_prob", dist.is_mau_prob)?;
    if dist.fb_l7.len() > 8 {
        return Err(Error::InvalidConfig("fb_l7 has more than 8 weights".into()));
    }
    let country = Categorical::new("country", &dist.country)?;
    let gender = Categorical::new("gender", &dist.gender)?;
    let fb_l7 = Categorical::new("fb_l7", &dist.fb_l7)?;
    if dist.age.min > dist.age.max || dist.age.sd < 0.0 {
        return Err(Error::InvalidConfig("invalid age distribution".into()));
    }
    let age = Normal::new(dist.age.mean, dist.age.sd.max(1e-9))
        .map_err(|e| Error::InvalidConfig(format!("age distribution: {e}")))?;

    let n = graph.node_count();
    let mut rng = rng::substream(seed, "attributes", 0);
    let mut users = Vec::with_capacity(n);
    for _ in 0..n {
        let a = age.sample(&mut rng).round().clamp(dist.age.min as f64, dist.age.max as f64) as u8;
        users.push(UserAttributes {
            country: country.sample(&mut rng) as u16,
            gender: gender.sample(&mut rng) as u8,
            age: a,
            fb_active_days_of_7: fb_l7.sample(&mut rng) as u8,
            is_mau: rng.gen::<f64>() < dist.is_mau_prob,
        });
    }

    if homophily_weight > 0.0 {
        let mut prop_rng = rng::substream(seed, "homophily", 0);
        let mut labelled = vec![false; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut prop_rng);
        let mut queue = VecDeque::new();
        let mut seen = vec![false; n];
        let mut labelled_friends: Vec<UserId> = Vec::new();
        for &root in &order {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            queue.push_back(root);
            while let Some(u) = queue.pop_front() {
                labelled_friends.clear();
                labelled_friends.extend(graph.neighbors(u as UserId).iter().filter(|&&v| labelled[v as usize]));
                if !labelled_friends.is_empty() && prop_rng.gen::<f64>() < homophily_weight {
                    let v = labelled_friends[prop_rng.gen_range(0..labelled_friends.len())];
                    users[u].country = users[v as usize].country;
                }
                labelled[u] = true;
                let mut next: Vec<UserId> = graph
                    .neighbors(u as UserId)
                    .iter()
                    .copied()
                    .filter(|&v| !seen[v as usize])
                    .collect();
                next.shuffle(&mut prop_rng);
                for v in next {
                    seen[v as usize] = true;
                    queue.push_back(v as usize);
                }
            }
        }
    }
    AttributeTable::new(users)
}

// ---------------------------------------------------------------------------
// Apps
// ---------------------------------------------------------------------------

/// How adopter friends translate into social adoption pressure `g(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocialMode {
    /// Number of adopter friends.
    #[default]
    Count,
    /// Adopter friends plus edges among them.
    Edges,
    /// Connected components among adopter friends.
    Components,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppRegime {
    #[serde(default = "default_regime_name")]
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub social_mode: SocialMode,
    #[serde(default)]
    pub target_country: Option<u16>,
    #[serde(default)]
    pub target_age: Option<f64>,
    #[serde(default = "one")]
    pub affinity_boost: f64,
    pub retention_a: f64,
    pub retention_xa: f64,
    #[serde(default = "one")]
    pub engagement_rho: f64,
    #[serde(default)]
    pub reactivation_eps: f64,
    pub horizon: u32,
}

fn default_regime_name() -> String {
    "default".into()
}

fn one() -> f64 {
    1.0
}

impl AppRegime {
    pub fn validate(&self) -> Result<()> {
        check_prob("alpha", self.alpha)?;
        check_prob("beta", self.beta)?;
        check_prob("reactivation_eps", self.reactivation_eps)?;
        if !(self.affinity_boost >= 1.0) {
            return Err(Error::InvalidConfig("affinity_boost must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.retention_a) {
            return Err(Error::InvalidConfig("retention_a must lie in [0,1)".into()));
        }
        if !(self.retention_xa >= 0.0) {
            return Err(Error::InvalidConfig("retention_xa must be non-negative".into()));
        }
        if !(self.engagement_rho > 0.0 && self.engagement_rho <= 1.0) {
            return Err(Error::InvalidConfig("engagement_rho must lie in (0,1]".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least one day".into()));
        }
        Ok(())
    }

    fn matches_target(&self, a: &UserAttributes) -> bool {
        if self.target_country.is_none() && self.target_age.is_none() {
            return false;
        }
        self.target_country.is_none_or(|c| c == a.country)
            && self.target_age.is_none_or(|t| (a.age as f64 - t).abs() <= AGE_MATCH_BAND)
    }

    /// Draws a lifetime with survival `exp(-x_a t^(1-a) / (1-a))`.
    fn draw_lifetime(&self, rng: &mut Rng) -> f64 {
        if self.retention_xa <= 0.0 {
            return f64::INFINITY;
        }
        let e: f64 = Exp1.sample(rng);
        let one_minus_a = 1.0 - self.retention_a;
        (one_minus_a * e / self.retention_xa).powf(1.0 / one_minus_a)
    }
}

/// Days of failure before the first success of a Bernoulli(h) sequence.
fn geometric_wait(h: f64, rng: &mut Rng) -> u64 {
    if h >= 1.0 {
        return 0;
    }
    let u: f64 = 1.0 - rng.gen::<f64>();
    let w = (u.ln() / (-h).ln_1p()).floor();
    if w.is_finite() && w < u64::MAX as f64 {
        w as u64
    } else {
        u64::MAX
    }
}

struct Adoption<'g> {
    graph: &'g SocialGraph,
    regime: &'g AppRegime,
    adopted: Vec<bool>,
    adopt_day: Vec<u32>,
    friend_count: Vec<u32>,
    friend_edges: Vec<u32>,
    base_hazard: Vec<f64>,
    version: Vec<u32>,
}

impl Adoption<'_> {
    fn social_pressure(&self, u: UserId) -> f64 {
        let u_idx = u as usize;
        match self.regime.social_mode {
            SocialMode::Count => self.friend_count[u_idx] as f64,
            SocialMode::Edges => (self.friend_count[u_idx] + self.friend_edges[u_idx]) as f64,
            SocialMode::Components => {
                if self.friend_count[u_idx] == 0 {
                    return 0.0;
                }
                let friends: Vec<UserId> = self
                    .graph
                    .neighbors(u)
                    .iter()
                    .copied()
                    .filter(|&v| self.adopted[v as usize])
                    .collect();
                component_count(self.graph, &friends) as f64
            }
        }
    }

    fn hazard(&self, u: UserId) -> f64 {
        let social = if self.regime.beta > 0.0 {
            self.regime.beta * self.social_pressure(u)
        } else {
            0.0
        };
        (self.base_hazard[u as usize] + social).clamp(0.0, 1.0)
    }
}

/// Connected components of the subgraph induced on `nodes`.
pub(crate) fn component_count(graph: &SocialGraph, nodes: &[UserId]) -> usize {
    let k = nodes.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut comps = k;
    for i in 0..k {
        for j in i + 1..k {
            if graph.has_edge(nodes[i], nodes[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                    comps -= 1;
                }
            }
        }
    }
    comps
}

/// Simulates one app over `regime.horizon` days.
pub fn simulate_app(graph: &SocialGraph, attrs: &AttributeTable, regime: &AppRegime, seed: u64) -> Result<AppActivity> {
    regime.validate()?;
    let n = graph.node_count();
    if attrs.len() < n {
        return Err(Error::invalid(format!(
            "attribute table covers {} users but the graph has {n}",
            attrs.len()
        )));
    }
    let horizon = regime.horizon as u64;
    let mut rng = rng::substream(seed, "adoption", 0);

    let base_hazard: Vec<f64> = (0..n)
        .map(|u| {
            let aff = if regime.matches_target(&attrs[u as UserId]) {
                regime.affinity_boost
            } else {
                1.0
            };
            (regime.alpha * aff).clamp(0.0, 1.0)
        })
        .collect();
    let mut sim = Adoption {
        graph,
        regime,
        adopted: vec![false; n],
        adopt_day: vec![u32::MAX; n],
        friend_count: vec![0; n],
        friend_edges: vec![0; n],
        base_hazard,
        version: vec![0; n],
    };

    let mut heap: BinaryHeap<Reverse<(u64, UserId, u32)>> = BinaryHeap::new();
    for u in 0..n {
        let h = sim.base_hazard[u];
        if h > 0.0 {
            let day = geometric_wait(h, &mut rng);
            if day < horizon {
                heap.push(Reverse((day, u as UserId, 0)));
            }
        }
    }

    let mut batch: Vec<UserId> = Vec::new();
    let mut touched: Vec<UserId> = Vec::new();
    let mut touched_mark = vec![false; n];
    while let Some(&Reverse((day, _, _))) = heap.peek() {
        batch.clear();
        while let Some(&Reverse((d, u, ver))) = heap.peek() {
            if d != day {
                break;
            }
            heap.pop();
            if !sim.adopted[u as usize] && sim.version[u as usize] == ver {
                batch.push(u);
            }
        }
        if regime.beta <= 0.0 {
            for &v in &batch {
                sim.adopted[v as usize] = true;
                sim.adopt_day[v as usize] = day as u32;
            }
            continue;
        }
        touched.clear();
        for &v in &batch {
            sim.adopted[v as usize] = true;
            sim.adopt_day[v as usize] = day as u32;
            for &u in graph.neighbors(v) {
                if sim.adopted[u as usize] {
                    continue;
                }
                sim.friend_count[u as usize] += 1;
                if regime.social_mode == SocialMode::Edges {
                    let closed = graph
                        .neighbors(v)
                        .iter()
                        .filter(|&&w| w != u && sim.adopted[w as usize] && w != v && graph.has_edge(u, w))
                        .count();
                    sim.friend_edges[u as usize] += closed as u32;
                }
                if !touched_mark[u as usize] {
                    touched_mark[u as usize] = true;
                    touched.push(u);
                }
            }
        }
        // New pressure applies from the following day.
        for &u in &touched {
            touched_mark[u as usize] = false;
            if sim.adopted[u as usize] {
                continue;
            }
            sim.version[u as usize] += 1;
            let h = sim.hazard(u);
            if h > 0.0 {
                let wait = geometric_wait(h, &mut rng);
                let next = (day + 1).saturating_add(wait);
                if next < horizon {
                    heap.push(Reverse((next, u, sim.version[u as usize])));
                }
            }
        }
    }

    // Base activity from planted lifetimes.
    let mut life_rng = rng::substream(seed, "lifetime", 0);
    let mut base: Vec<(UserId, Vec<Day>, f64)> = Vec::new();
    for u in 0..n {
        if !sim.adopted[u] {
            continue;
        }
        let d0 = sim.adopt_day[u] as u64;
        let lifetime = regime.draw_lifetime(&mut life_rng);
        let mut days = vec![Day(d0 as u32)];
        let last = if lifetime.is_finite() {
            (d0 as f64 + lifetime.floor()).min((horizon - 1) as f64) as u64
        } else {
            horizon - 1
        };
        for d in d0 + 1..=last {
            if regime.engagement_rho >= 1.0 || life_rng.gen::<f64>() < regime.engagement_rho {
                days.push(Day(d as u32));
            }
        }
        base.push((u as UserId, days, lifetime));
    }

    if regime.reactivation_eps > 0.0 {
        reactivate(graph, regime, &mut base, horizon as usize, seed);
    }

    let mut builder = AppActivityBuilder::default();
    for (u, days, _) in base {
        builder.push_user(u, days);
    }
    Ok(builder.finish())
}

/// After a lifetime ends, each day the user returns with probability
/// `reactivation_eps` if at least one friend is active that day (base
/// activity only).
fn reactivate(graph: &SocialGraph, regime: &AppRegime, base: &mut [(UserId, Vec<Day>, f64)], horizon: usize, seed: u64) {
    let index: std::collections::HashMap<UserId, usize> = base.iter().enumerate().map(|(i, b)| (b.0, i)).collect();
    let mut rng = rng::substream(seed, "reactivation", 0);
    let mut friend_active = vec![false; horizon];
    let mut extra: Vec<Vec<Day>> = vec![Vec::new(); base.len()];
    for (i, (u, days, lifetime)) in base.iter().enumerate() {
        if !lifetime.is_finite() {
            continue;
        }
        let end = days[0].0 as f64 + lifetime.floor();
        if end + 1.0 >= horizon as f64 {
            continue;
        }
        friend_active.iter_mut().for_each(|x| *x = false);
        for v in graph.neighbors(*u) {
            if let Some(&j) = index.get(v) {
                for d in &base[j].1 {
                    friend_active[d.0 as usize] = true;
                }
            }
        }
        for (d, &fa) in friend_active.iter().enumerate().skip(end as usize + 1) {
            if fa && rng.gen::<f64>() < regime.reactivation_eps {
                extra[i].push(Day(d as u32));
            }
        }
    }
    for (b, e) in base.iter_mut().zip(extra) {
        if !e.is_empty() {
            b.1.extend(e);
            b.1.sort_unstable();
            b.1.dedup();
        }
    }
}

// ---------------------------------------------------------------------------
// Ecosystems
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedRegime {
    pub regime: AppRegime,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcosystemSpec {
    pub app_count: usize,
    pub regimes: Vec<WeightedRegime>,
    #[serde(default)]
    pub seed: u64,
}

impl EcosystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.app_count > 0 && self.regimes.is_empty() {
            return Err(Error::InvalidConfig("ecosystem has apps but no regimes".into()));
        }
        for r in &self.regimes {
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::InvalidConfig(format!("regime {} has non-positive weight", r.regime.name)));
            }
            r.regime.validate()?;
        }
        Ok(())
    }

    pub fn horizon(&self) -> u32 {
        self.regimes.iter().map(|r| r.regime.horizon).max().unwrap_or(1)
    }
}

/// Per-app planted regime names.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub labels: Vec<(AppId, String)>,
}

impl GroundTruth {
    pub fn regime_of(&self, app: AppId) -> Option<&str> {
        self.labels
            .binary_search_by_key(&app, |(a, _)| *a)
            .ok()
            .map(|i| self.labels[i].1.as_str())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["app_id", "regime_name"])?;
        for (app, name) in &self.labels {
            w.write_record([app.to_string(), name.clone()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let rows = crate::data::read_rows(path, &["app_id", "regime_name"])?;
        let mut labels = Vec::with_capacity(rows.len());
        for (line, f) in rows {
            let app = f[0].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("cannot parse app id {:?}", f[0]),
            })?;
            labels.push((app, f[1].clone()));
        }
        labels.sort();
        Ok(GroundTruth { labels })
    }
}

/// Simulates `spec.app_count` apps in parallel. App `i` draws its regime and
/// its seed from substreams of `(spec.seed, i)`, so the result does not
/// depend on the number of worker threads.
pub fn simulate_ecosystem(
    spec: &EcosystemSpec,
    graph: &SocialGraph,
    attrs: &AttributeTable,
) -> Result<(ActivityLog, GroundTruth)> {
    spec.validate()?;
    let weights: Vec<f64> = spec.regimes.iter().map(|r| r.weight).collect();
    let mut log = ActivityLog::new(Day(spec.horizon() - 1));
    if spec.app_count == 0 {
        return Ok((log, GroundTruth::default()));
    }
    let chooser = Categorical::new("regime", &weights)?;
    let apps: Vec<(AppId, usize, AppActivity)> = (0..spec.app_count)
        .into_par_iter()
        .map(|i| {
            let mut pick = rng::substream(spec.seed, "regime", i as u64);
            let r = chooser.sample(&mut pick);
            let app_seed = rng::derive_seed(spec.seed, "app", i as u64);
            simulate_app(graph, attrs, &spec.regimes[r].regime, app_seed).map(|a| (i as AppId, r, a))
        })
        .collect::<Result<_>>()?;
    let mut truth = GroundTruth::default();
    for (app, r, activity) in apps {
        truth.labels.push((app, spec.regimes[r].regime.name.clone()));
        log.insert(app, activity)?;
    }
    Ok((log, truth))
}
