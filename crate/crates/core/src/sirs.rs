//! Mean-field SIRS dynamics for daily active users: unexposed susceptibles
//! `U` adopt spontaneously (`alpha`) or socially (`beta A / S0`), actives
//! `A` lapse at rate `gamma` into inactives `I`, who return at rate
//! `epsilon A / S0`.

use std::io::Write;

use rand::Rng as _;
use serde::Serialize;

use crate::data::AppId;
use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::rng;

pub const MIN_WINDOW: usize = 30;
pub const MIN_BUDGET: usize = 1000;
/// A fit converges when its window RMSE is at most this fraction of the peak.
pub const CONVERGENCE_FRACTION: f64 = 0.05;
pub const MAX_EPSILON: f64 = 10.0;
/// Largest `S0` tried, as a multiple of the observed peak.
pub const MAX_POOL_FACTOR: f64 = 1000.0;
/// Rates below `10^LOG_RATE_FLOOR` are treated as zero during refinement.
const LOG_RATE_FLOOR: f64 = -7.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SirsParams {
    pub s0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl SirsParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.s0 > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.epsilon >= 0.0
            && [self.s0, self.alpha, self.beta, self.epsilon].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid SIRS parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SirsState {
    pub u: f64,
    pub a: f64,
    pub i: f64,
}

impl SirsState {
    pub fn initial(params: &SirsParams, a0: f64, i0: f64) -> Result<Self> {
        if a0 < 0.0 || i0 < 0.0 || a0 + i0 > params.s0 {
            return Err(Error::invalid(format!(
                "initial actives {a0} and inactives {i0} do not fit in a pool of {}",
                params.s0
            )));
        }
        Ok(SirsState {
            u: params.s0 - a0 - i0,
            a: a0,
            i: i0,
        })
    }

    /// One day of the discrete dynamics.
    pub fn step(&self, p: &SirsParams) -> SirsState {
        let r = (p.alpha + p.beta * self.a / p.s0).min(1.0);
        let adopt = self.u * r;
        let lapse = p.gamma * self.a;
        let back = (p.epsilon * self.i * self.a / p.s0).min(self.i);
        SirsState {
            u: self.u - adopt,
            a: self.a + adopt - lapse + back,
            i: self.i + lapse - back,
        }
    }

    /// Errors unless all compartments are non-negative and sum to `S0`.
    pub fn check(&self, p: &SirsParams, t: usize) -> Result<()> {
        let total = self.u + self.a + self.i;
        if self.u < 0.0 || self.a < 0.0 || self.i < 0.0 || (total - p.s0).abs() > 1e-6 * p.s0 {
            return Err(Error::Invariant(format!(
                "SIRS state {self:?} at step {t} breaks conservation of S0 = {}",
                p.s0
            )));
        }
        Ok(())
    }
}

/// Rolls `steps` days forward from `state`; returns `A` after each step and
/// the final state.
fn rollout(params: &SirsParams, mut state: SirsState, steps: usize) -> Result<(Vec<f64>, SirsState)> {
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        state = state.step(params);
        state.check(params, t + 1)?;
        out.push(state.a);
    }
    Ok((out, state))
}

/// `A(t)` for `t = 0..horizon`, starting from `A(0) = a0`, `I(0) = i0`.
pub fn simulate_sirs(params: &SirsParams, horizon: usize, a0: f64, i0: f64) -> Result<Vec<f64>> {
    params.validate()?;
    let state = SirsState::initial(params, a0, i0)?;
    state.check(params, 0)?;
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let (mut rest, _) = rollout(params, state, horizon - 1)?;
    rest.insert(0, a0);
    Ok(rest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SirsFit {
    pub params: SirsParams,
    pub a0: f64,
    pub window_len: usize,
    pub peak: f64,
    pub rmse: f64,
    pub converged: bool,
    /// State on the last day of the window.
    pub end_state: SirsState,
}

fn trajectory_rmse(params: &SirsParams, observed: &[f64]) -> f64 {
    let Ok(mut state) = SirsState::initial(params, observed[0], 0.0) else {
        return f64::INFINITY;
    };
    let mut sse = 0.0;
    for &obs in &observed[1..] {
        state = state.step(params);
        sse += (state.a - obs).powi(2);
    }
    (sse / observed.len() as f64).sqrt()
}

/// Search coordinates: `(ln S0, alpha, beta, gamma, epsilon)`.
fn to_params(x: &[f64]) -> SirsParams {
    SirsParams {
        s0: x[0].exp(),
        alpha: x[1],
        beta: x[2],
        gamma: x[3],
        epsilon: x[4],
    }
}

/// Monte Carlo fit: random search over the prior box, then simplex
/// refinement of the best few candidates. `A0` is the first observation and
/// `I0 = 0`.
pub fn fit_sirs(observed: &[f64], budget: usize, seed: u64) -> Result<SirsFit> {
    if observed.len() < MIN_WINDOW {
        return Err(Error::insufficient(format!(
            "SIRS fit needs at least {MIN_WINDOW} days, got {}",
            observed.len()
        )));
    }
    if budget < MIN_BUDGET {
        return Err(Error::invalid(format!("budget must be at least {MIN_BUDGET}")));
    }
    if observed.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("observed series must be finite and non-negative"));
    }
    let peak = observed.iter().copied().fold(0.0, f64::max);
    let a0 = observed[0];
    if peak == 0.0 {
        let params = SirsParams {
            s0: 1.0,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            epsilon: 0.0,
        };
        return finish(params, observed, 0.0, true);
    }

    let bounds = [
        (peak.ln(), (MAX_POOL_FACTOR * peak).ln()),
        (0.0, 1.0),
        (0.0, 1.0),
        (0.0, 1.0),
        (0.0, MAX_EPSILON),
    ];
    let objective = |x: &[f64]| trajectory_rmse(&to_params(x), observed);

    let n_random = budget / 2;
    let mut rng = rng::substream(seed, "sirs-search", 0);
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n_random);
    for _ in 0..n_random {
        let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        candidates.push((objective(&x), x));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Rates span orders of magnitude, so the simplex works on log10 rates.
    let log_bounds: Vec<(f64, f64)> = bounds
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| if i == 0 { (lo, hi) } else { (LOG_RATE_FLOOR, hi.log10()) })
        .collect();
    let to_log = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| if i == 0 { v } else { v.max(10f64.powf(LOG_RATE_FLOOR)).log10() })
            .collect()
    };
    let from_log = |z: &[f64]| -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &v)| if i == 0 { v } else if v <= LOG_RATE_FLOOR { 0.0 } else { 10f64.powf(v) })
            .collect()
    };
    let log_objective = |z: &[f64]| objective(&from_log(z));

    // Best candidate within each stratum of ln S0, so that the refinement
    // does not start every simplex in the same basin.
    const STARTS: usize = 6;
    let (lo, hi) = bounds[0];
    let mut starts: Vec<&Vec<f64>> = Vec::with_capacity(STARTS);
    for k in 0..STARTS {
        let (a, b) = (lo + (hi - lo) * k as f64 / STARTS as f64, lo + (hi - lo) * (k + 1) as f64 / STARTS as f64);
        if let Some((_, x)) = candidates.iter().find(|(_, x)| x[0] >= a && x[0] <= b) {
            starts.push(x);
        }
    }
    let per_start = (budget - n_random) / starts.len().max(1);
    let steps: Vec<f64> = log_bounds.iter().map(|&(lo, hi)| 0.1 * (hi - lo)).collect();
    let mut best = candidates[0].clone();
    for start in starts {
        // Restart the simplex from its own optimum until the share is spent.
        let mut z = to_log(start);
        let mut current = log_objective(&z);
        let mut left = per_start;
        let mut scale = 1.0;
        while left > 0 {
            let step: Vec<f64> = steps.iter().map(|s| s * scale).collect();
            let m = NelderMead::new(log_bounds.clone(), step).max_evals(left).minimize(log_objective, &z);
            left = left.saturating_sub(m.evals);
            let improved = m.value < current;
            if improved {
                z = m.x;
                current = m.value;
            }
            if current < best.0 {
                best = (current, from_log(&z));
            }
            if !improved {
                scale *= 0.3;
                if scale < 1e-4 {
                    break;
                }
            }
        }
    }
    let params = to_params(&best.1);
    let converged = best.0 <= CONVERGENCE_FRACTION * peak;
    finish(params, observed, best.0, converged).map(|mut f| {
        f.peak = peak;
        f.a0 = a0;
        f
    })
}

fn finish(params: SirsParams, observed: &[f64], rmse: f64, converged: bool) -> Result<SirsFit> {
    let state = SirsState::initial(&params, observed[0], 0.0)?;
    let (_, end_state) = rollout(&params, state, observed.len() - 1)?;
    Ok(SirsFit {
        params,
        a0: observed[0],
        window_len: observed.len(),
        peak: observed.iter().copied().fold(0.0, f64::max),
        rmse,
        converged,
        end_state,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SirsPrediction {
    /// `values[k]` is the prediction `k + 1` days after the window.
    pub values: Vec<f64>,
    /// Set when a nonconverged fit was forced.
    pub low_confidence: bool,
}

/// Continues the rollout from the end of the fitted window. Nonconverged
/// fits are refused unless `force` is set.
pub fn predict_sirs(fit: &SirsFit, horizon: usize, force: bool) -> Result<SirsPrediction> {
    if !fit.converged && !force {
        return Err(Error::invalid("SIRS fit did not converge; force to predict anyway"));
    }
    let (values, _) = rollout(&fit.params, fit.end_state, horizon)?;
    Ok(SirsPrediction {
        values,
        low_confidence: !fit.converged,
    })
}

/// Writes `app_id,S0,alpha,beta,gamma,epsilon,rmse,converged`.
pub fn write_fits(fits: &[(AppId, SirsFit)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "S0", "alpha", "beta", "gamma", "epsilon", "rmse", "converged"])?;
    for (app, f) in fits {
        let p = &f.params;
        w.write_record([
            app.to_string(),
            p.s0.to_string(),
            p.alpha.to_string(),
            p.beta.to_string(),
            p.gamma.to_string(),
            p.epsilon.to_string(),
            f.rmse.to_string(),
            f.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `app_id,day,pred,low_confidence` with `day` counted from the end
/// of the window.
pub fn write_predictions(preds: &[(AppId, SirsPrediction)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["app_id", "day", "pred", "low_confidence"])?;
    for (app, p) in preds {
        for (k, v) in p.values.iter().enumerate() {
            w.write_record([app.to_string(), (k + 1).to_string(), v.to_string(), p.low_confidence.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
