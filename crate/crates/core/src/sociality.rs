//! Popularity `p(x)`, sociality `p(x|y)` and the popularity-sociality plane.
//!
//! A user "uses" an app as of day `t` when they have at least one event on
//! or before `t`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{ActivityLog, AppActivity, AppId, Day, SocialGraph};
use crate::error::{Error, Result};

/// Log10 bins per axis of the sociality histogram.
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SocialityEstimate {
    /// `P(user | at least one friend is a user)`; `None` when nobody has a
    /// user friend.
    pub conditional: Option<f64>,
    /// Mean over users with at least one friend of the fraction of their
    /// friends who are users; `None` when there are no such users.
    pub mean_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SocialityPoint {
    pub app: AppId,
    pub n_users: usize,
    pub popularity: f64,
    pub sociality_conditional: Option<f64>,
    pub sociality_meanfrac: Option<f64>,
    /// `p(x|y) / p(x)`, `None` when either side is undefined or `p(x) = 0`.
    pub ratio: Option<f64>,
}

/// Adopter mask over graph nodes as of `as_of`.
pub(crate) fn user_mask(activity: &AppActivity, node_count: usize, as_of: Day) -> Result<Vec<bool>> {
    let mut mask = vec![false; node_count];
    for (user, days) in activity.iter() {
        if days[0] <= as_of {
            let slot = mask
                .get_mut(user as usize)
                .ok_or_else(|| Error::invalid(format!("user {user} is not a node of the graph")))?;
            *slot = true;
        }
    }
    Ok(mask)
}

fn check_as_of(log: &ActivityLog, as_of: Day) -> Result<()> {
    if as_of > log.horizon_end() {
        return Err(Error::invalid(format!(
            "day {as_of} lies past the log horizon {}",
            log.horizon_end()
        )));
    }
    Ok(())
}

pub fn popularity(log: &ActivityLog, graph: &SocialGraph, app: AppId, as_of: Day) -> Result<f64> {
    check_as_of(log, as_of)?;
    let mask = user_mask(log.app(app)?, graph.node_count(), as_of)?;
    Ok(popularity_of(&mask))
}

fn popularity_of(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
}

pub fn sociality(log: &ActivityLog, graph: &SocialGraph, app: AppId, as_of: Day) -> Result<SocialityEstimate> {
    check_as_of(log, as_of)?;
    let mask = user_mask(log.app(app)?, graph.node_count(), as_of)?;
    Ok(sociality_of(graph, &mask))
}

fn sociality_of(graph: &SocialGraph, mask: &[bool]) -> SocialityEstimate {
    let mut exposed = vec![false; mask.len()];
    let mut frac_sum = 0.0;
    let mut frac_n = 0usize;
    for (u, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let nbrs = graph.neighbors(u as u32);
        let mut user_friends = 0usize;
        for &v in nbrs {
            exposed[v as usize] = true;
            if mask[v as usize] {
                user_friends += 1;
            }
        }
        if !nbrs.is_empty() {
            frac_sum += user_friends as f64 / nbrs.len() as f64;
            frac_n += 1;
        }
    }
    let n_exposed = exposed.iter().filter(|&&e| e).count();
    let n_exposed_users = exposed.iter().zip(mask).filter(|(&e, &m)| e && m).count();
    SocialityEstimate {
        conditional: (n_exposed > 0).then(|| n_exposed_users as f64 / n_exposed as f64),
        mean_fraction: (frac_n > 0).then(|| frac_sum / frac_n as f64),
    }
}

fn point(log: &ActivityLog, graph: &SocialGraph, app: AppId, as_of: Day) -> Result<SocialityPoint> {
    let mask = user_mask(log.app(app)?, graph.node_count(), as_of)?;
    let pop = popularity_of(&mask);
    let soc = sociality_of(graph, &mask);
    Ok(SocialityPoint {
        app,
        n_users: mask.iter().filter(|&&m| m).count(),
        popularity: pop,
        sociality_conditional: soc.conditional,
        sociality_meanfrac: soc.mean_fraction,
        ratio: match soc.conditional {
            Some(c) if pop > 0.0 => Some(c / pop),
            _ => None,
        },
    })
}

/// Log-binned 2-D histogram; `counts[s][p]` is sociality bin `s`,
/// popularity bin `p`. Both axes span `[lo, 0]` in log10.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocialityHistogram {
    pub lo: f64,
    pub bins: usize,
    pub counts: Vec<Vec<u64>>,
    /// Counts divided by the smallest nonzero count.
    pub normalized: Vec<Vec<f64>>,
}

impl SocialityHistogram {
    fn new(node_count: usize) -> Self {
        let lo = -(node_count.max(10) as f64).log10();
        SocialityHistogram {
            lo,
            bins: HISTOGRAM_BINS,
            counts: vec![vec![0; HISTOGRAM_BINS]; HISTOGRAM_BINS],
            normalized: vec![vec![0.0; HISTOGRAM_BINS]; HISTOGRAM_BINS],
        }
    }

    pub fn bin_of(&self, value: f64) -> usize {
        let t = (value.log10() - self.lo) / -self.lo;
        ((t * self.bins as f64).floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo + (-self.lo) * i as f64 / self.bins as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn normalize(&mut self) {
        let min = self.counts.iter().flatten().copied().filter(|&c| c > 0).min();
        if let Some(min) = min {
            for (row, nrow) in self.counts.iter().zip(&mut self.normalized) {
                for (c, n) in row.iter().zip(nrow.iter_mut()) {
                    *n = *c as f64 / min as f64;
                }
            }
        }
    }

    /// Long-format grid with log10 bin edges on both axes.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "pop_bin",
            "soc_bin",
            "log10_pop_lo",
            "log10_pop_hi",
            "log10_soc_lo",
            "log10_soc_hi",
            "count",
            "normalized",
        ])?;
        for s in 0..self.bins {
            for p in 0..self.bins {
                w.write_record([
                    p.to_string(),
                    s.to_string(),
                    self.edge(p).to_string(),
                    self.edge(p + 1).to_string(),
                    self.edge(s).to_string(),
                    self.edge(s + 1).to_string(),
                    self.counts[s][p].to_string(),
                    self.normalized[s][p].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocialityMap {
    /// Apps with a defined conditional sociality, in input order.
    pub points: Vec<SocialityPoint>,
    pub histogram: SocialityHistogram,
}

/// Computes a point per app and bins every app with positive popularity and
/// sociality.
pub fn sociality_map(log: &ActivityLog, graph: &SocialGraph, apps: &[AppId], as_of: Day) -> Result<SocialityMap> {
    if apps.is_empty() {
        return Err(Error::invalid("sociality map needs at least one app"));
    }
    check_as_of(log, as_of)?;
    let all: Vec<SocialityPoint> = apps
        .par_iter()
        .map(|&app| point(log, graph, app, as_of))
        .collect::<Result<_>>()?;
    let points: Vec<SocialityPoint> = all.into_iter().filter(|p| p.sociality_conditional.is_some()).collect();
    let mut histogram = SocialityHistogram::new(graph.node_count());
    for p in &points {
        let soc = p.sociality_conditional.unwrap_or(0.0);
        if p.popularity > 0.0 && soc > 0.0 {
            let (pb, sb) = (histogram.bin_of(p.popularity), histogram.bin_of(soc));
            histogram.counts[sb][pb] += 1;
        }
    }
    histogram.normalize();
    Ok(SocialityMap { points, histogram })
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes `app_id,n_users,popularity,sociality_cond,sociality_meanfrac,ratio`;
/// undefined values are `NA`.
pub fn write_points(points: &[SocialityPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "n_users", "popularity", "sociality_cond", "sociality_meanfrac", "ratio"])?;
    for p in points {
        w.write_record([
            p.app.to_string(),
            p.n_users.to_string(),
            p.popularity.to_string(),
            fmt_opt(p.sociality_conditional),
            fmt_opt(p.sociality_meanfrac),
            fmt_opt(p.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
