//! Censored retention curves and the two retention models: exponential
//! decay fitted from the second day, `P(t) = A exp(-x0 t)`, and the
//! time-dependent hazard model `P(t) = exp(-x_a t^(1-a) / (1-a))`.

use std::io::Write;

use serde::Serialize;

use crate::data::{ActivityLog, AppId};
use crate::error::{Error, Result};
use crate::optim::NelderMead;

/// Offsets with fewer eligible users than this are not fitted.
pub const MIN_ELIGIBLE: u64 = 30;
/// Minimum number of fit offsets.
pub const MIN_FIT_POINTS: usize = 5;
pub const MAX_A: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionCurve {
    /// Users entering the curve.
    pub n0: u64,
    /// `n[t]`: users active exactly `t` days after their first login.
    pub n: Vec<u64>,
    /// `eligible[t]`: users whose first login is at least `t` days before
    /// the end of the log.
    pub eligible: Vec<u64>,
    /// `n[t] / eligible[t]`, or 0 when nobody is eligible.
    pub p: Vec<f64>,
}

impl RetentionCurve {
    /// Builds a curve from probabilities with a constant eligible count.
    pub fn from_probabilities(p: &[f64], eligible: u64) -> Self {
        RetentionCurve {
            n0: eligible,
            n: p.iter().map(|x| (x * eligible as f64).round() as u64).collect(),
            eligible: vec![eligible; p.len()],
            p: p.to_vec(),
        }
    }

    pub fn max_offset(&self) -> usize {
        self.p.len().saturating_sub(1)
    }
}

pub fn compute_retention(log: &ActivityLog, app: AppId, max_offset: u32) -> Result<RetentionCurve> {
    let activity = log.app(app)?;
    let end = log.horizon_end().0;
    if max_offset > end {
        return Err(Error::invalid(format!(
            "max offset {max_offset} exceeds the log horizon ending on day {end}"
        )));
    }
    let len = max_offset as usize + 1;
    let mut n = vec![0u64; len];
    // A user with `end - first = slack` is eligible for every t <= slack.
    let mut by_slack = vec![0u64; len];
    for (_, days) in activity.iter() {
        let first = days[0].0;
        let slack = ((end - first) as usize).min(len - 1);
        by_slack[slack] += 1;
        for d in days {
            let off = (d.0 - first) as usize;
            if off < len {
                n[off] += 1;
            }
        }
    }
    let mut eligible = vec![0u64; len];
    let mut acc = 0;
    for t in (0..len).rev() {
        acc += by_slack[t];
        eligible[t] = acc;
    }
    let p = n
        .iter()
        .zip(&eligible)
        .map(|(&k, &e)| if e == 0 { 0.0 } else { k as f64 / e as f64 })
        .collect();
    Ok(RetentionCurve {
        n0: eligible[0],
        n,
        eligible,
        p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum RetentionParams {
    Exponential { amplitude: f64, x0: f64 },
    Timedep { a: f64, x_a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetentionFit {
    pub params: RetentionParams,
    /// Weighted RMS residual (weights = eligible counts), in log space
    /// unless `fallback` is set, in which case it is on `P` directly.
    pub rmse: f64,
    /// Inclusive offset range used.
    pub fit_range: (u32, u32),
    pub converged: bool,
    /// Set when zeros in range forced a nonlinear fit on `P`.
    pub fallback: bool,
}

impl RetentionFit {
    pub fn model_name(&self) -> &'static str {
        match self.params {
            RetentionParams::Exponential { .. } => "exponential",
            RetentionParams::Timedep { .. } => "timedep",
        }
    }
}

/// Model value at offset `t`, clamped to `[0, 1]`.
pub fn predict_retention(fit: &RetentionFit, t: f64) -> f64 {
    let v = match fit.params {
        RetentionParams::Exponential { amplitude, x0 } => amplitude * (-x0 * t).exp(),
        RetentionParams::Timedep { a, x_a } => (-x_a * timedep_basis(t, a)).exp(),
    };
    v.clamp(0.0, 1.0)
}

fn timedep_basis(t: f64, a: f64) -> f64 {
    t.powf(1.0 - a) / (1.0 - a)
}

/// `(t, ln P(t), weight, P(t))` for offsets in `from..` with enough eligible users,
/// stopping at the first zero count when `stop_at_zero`.
fn fit_points(curve: &RetentionCurve, from: usize, stop_at_zero: bool) -> Vec<(f64, f64, f64, f64)> {
    let mut pts = Vec::new();
    for t in from..curve.p.len() {
        if curve.eligible[t] < MIN_ELIGIBLE {
            break;
        }
        if stop_at_zero && curve.n[t] == 0 {
            break;
        }
        let p = curve.p[t];
        pts.push((t as f64, if p > 0.0 { p.ln() } else { f64::NEG_INFINITY }, curve.eligible[t] as f64, p));
    }
    pts
}

fn range_of(pts: &[(f64, f64, f64, f64)]) -> (u32, u32) {
    (pts[0].0 as u32, pts[pts.len() - 1].0 as u32)
}

fn require_points(pts: &[(f64, f64, f64, f64)]) -> Result<()> {
    if pts.len() < MIN_FIT_POINTS {
        return Err(Error::insufficient(format!(
            "{} fit offsets with at least {MIN_ELIGIBLE} eligible users, need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    Ok(())
}

/// Weighted log-linear regression of `ln P(t)` on `t` over `t >= 2`.
pub fn fit_exponential(curve: &RetentionCurve) -> Result<RetentionFit> {
    let pts = fit_points(curve, 2, false);
    require_points(&pts)?;
    if pts.iter().any(|p| p.3 <= 0.0) {
        return fit_exponential_direct(&pts);
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mt = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mt).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let sse: f64 = pts.iter().map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(RetentionFit {
        params: RetentionParams::Exponential {
            amplitude: intercept.exp(),
            x0: -slope,
        },
        rmse: (sse / sw).sqrt(),
        fit_range: range_of(&pts),
        converged: true,
        fallback: false,
    })
}

fn fit_exponential_direct(pts: &[(f64, f64, f64, f64)]) -> Result<RetentionFit> {
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let sse = |x: &[f64]| -> f64 { pts.iter().map(|p| p.2 * (p.3 - x[0] * (-x[1] * p.0).exp()).powi(2)).sum() };
    let start = [pts[0].3.max(1e-3), 0.1];
    let nm = NelderMead::new(vec![(0.0, 10.0), (0.0, 50.0)], vec![0.1, 0.05]).max_evals(5000);
    let m = nm.minimize(sse, &start);
    Ok(RetentionFit {
        params: RetentionParams::Exponential {
            amplitude: m.x[0],
            x0: m.x[1],
        },
        rmse: (m.value / sw).sqrt(),
        fit_range: range_of(pts),
        converged: m.converged,
        fallback: true,
    })
}

/// Optimal `x_a` for fixed `a` and the resulting weighted SSE.
fn profile(pts: &[(f64, f64, f64, f64)], a: f64) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    for p in pts {
        let g = timedep_basis(p.0, a);
        num += p.2 * g * p.1;
        den += p.2 * g * g;
    }
    let x_a = (-num / den).max(0.0);
    let sse = pts
        .iter()
        .map(|p| p.2 * (p.1 + x_a * timedep_basis(p.0, a)).powi(2))
        .sum();
    (x_a, sse)
}

fn timedep_points(curve: &RetentionCurve) -> Result<Vec<(f64, f64, f64, f64)>> {
    let pts = fit_points(curve, 1, true);
    require_points(&pts)?;
    Ok(pts)
}

fn timedep_fit(pts: &[(f64, f64, f64, f64)], a: f64, x_a: f64, sse: f64, converged: bool) -> RetentionFit {
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    RetentionFit {
        params: RetentionParams::Timedep { a, x_a },
        rmse: (sse / sw).sqrt(),
        fit_range: range_of(pts),
        converged,
        fallback: false,
    }
}

/// Fits `(a, x_a)` over `t >= 1` up to the first offset with no returning
/// users. A grid over `a` seeds a simplex search on the profile objective,
/// in which `x_a` is always the closed-form optimum.
pub fn fit_timedep(curve: &RetentionCurve) -> Result<RetentionFit> {
    let pts = timedep_points(curve)?;
    let (mut best_a, mut best) = (0.0, profile(&pts, 0.0));
    for i in 1..20 {
        let a = i as f64 * 0.05;
        let r = profile(&pts, a);
        if r.1 < best.1 {
            best_a = a;
            best = r;
        }
    }
    let nm = NelderMead::new(vec![(0.0, MAX_A)], vec![0.02]).max_evals(500).tolerances(1e-15, 1e-9);
    let m = nm.minimize(|x| profile(&pts, x[0]).1, &[best_a]);
    if m.value <= best.1 {
        let (x_a, sse) = profile(&pts, m.x[0]);
        Ok(timedep_fit(&pts, m.x[0], x_a, sse, m.converged))
    } else {
        Ok(timedep_fit(&pts, best_a, best.0, best.1, false))
    }
}

/// Time-dependent fit with `a` held fixed.
pub fn fit_timedep_fixed_a(curve: &RetentionCurve, a: f64) -> Result<RetentionFit> {
    if !(0.0..=MAX_A).contains(&a) {
        return Err(Error::invalid(format!("a must lie in [0, {MAX_A}], got {a}")));
    }
    let pts = timedep_points(curve)?;
    let (x_a, sse) = profile(&pts, a);
    Ok(timedep_fit(&pts, a, x_a, sse, true))
}

/// Exponential with the amplitude pinned to 1 on the time-dependent fit
/// range; the time-dependent model nests it at `a = 0`.
pub fn fit_exponential_unit(curve: &RetentionCurve) -> Result<RetentionFit> {
    let fit = fit_timedep_fixed_a(curve, 0.0)?;
    let RetentionParams::Timedep { x_a, .. } = fit.params else {
        unreachable!()
    };
    Ok(RetentionFit {
        params: RetentionParams::Exponential { amplitude: 1.0, x0: x_a },
        ..fit
    })
}

/// Writes `app_id,model,A,x0,a,x_a,rmse,converged`; parameters that do not
/// belong to the model are empty.
pub fn write_fits(fits: &[(AppId, RetentionFit)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "model", "A", "x0", "a", "x_a", "rmse", "converged"])?;
    for (app, f) in fits {
        let (amp, x0, a, x_a) = match f.params {
            RetentionParams::Exponential { amplitude, x0 } => (amplitude.to_string(), x0.to_string(), String::new(), String::new()),
            RetentionParams::Timedep { a, x_a } => (String::new(), String::new(), a.to_string(), x_a.to_string()),
        };
        w.write_record([
            app.to_string(),
            f.model_name().to_string(),
            amp,
            x0,
            a,
            x_a,
            f.rmse.to_string(),
            f.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `app_id,t,n,eligible,p`.
pub fn write_curves(curves: &[(AppId, RetentionCurve)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "t", "n", "eligible", "p"])?;
    for (app, c) in curves {
        for t in 0..c.p.len() {
            w.write_record([
                app.to_string(),
                t.to_string(),
                c.n[t].to_string(),
                c.eligible[t].to_string(),
                c.p[t].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
