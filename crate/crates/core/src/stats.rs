//! Kolmogorov–Smirnov test, bootstrap bands, binomial error bars and entropy.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// z-value of the two-sided 99.999% normal interval used for retention error bars.
pub const BINOMIAL_BAND_Z: f64 = 4.4172;

pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample, two-sided Kolmogorov–Smirnov test with the asymptotic
/// p-value `Q((sqrt(n_e) + 0.12 + 0.11/sqrt(n_e)) * D)`.
pub fn ks_test(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS test needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::invalid("KS test sample contains NaN"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);

    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }

    let ne = na * nb / (na + nb);
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

/// Kolmogorov survival function `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`,
/// clamped to `[0, 1]`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Percentile bootstrap of the sample mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBands {
    pub mean: f64,
    /// Median of the bootstrap means.
    pub median: f64,
    pub band68: (f64, f64),
    pub band95: (f64, f64),
    pub band997: (f64, f64),
    pub n_boot: usize,
}

pub fn bootstrap_mean_ci(sample: &[f64], n_boot: usize, seed: u64) -> Result<BootstrapBands> {
    if sample.is_empty() {
        return Err(Error::invalid("bootstrap needs a non-empty sample"));
    }
    if n_boot < MIN_BOOTSTRAP {
        return Err(Error::invalid(format!("bootstrap needs at least {MIN_BOOTSTRAP} resamples")));
    }
    let n = sample.len();
    let mut rng = rng::substream(seed, "bootstrap", 0);
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| sample[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let band = |level: f64| {
        let tail = (1.0 - level) / 2.0;
        (quantile_sorted(&means, tail), quantile_sorted(&means, 1.0 - tail))
    };
    Ok(BootstrapBands {
        mean: sample.iter().sum::<f64>() / n as f64,
        median: quantile_sorted(&means, 0.5),
        band68: band(0.68),
        band95: band(0.95),
        band997: band(0.997),
        n_boot,
    })
}

/// Half-width of the 99.999% normal-approximation interval for a proportion.
pub fn binomial_band(p_hat: f64, n: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hat) || n == 0 {
        return Err(Error::invalid(format!("binomial band needs p in [0,1] and n >= 1, got p={p_hat}, n={n}")));
    }
    Ok(BINOMIAL_BAND_Z * (p_hat * (1.0 - p_hat) / n as f64).sqrt())
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy_bits(distribution: &[f64]) -> Result<f64> {
    if let Some(p) = distribution.iter().find(|p| **p < 0.0 || p.is_nan()) {
        return Err(Error::invalid(format!("negative or NaN probability {p}")));
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
    }
    Ok(distribution
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum::<f64>()
        .max(0.0))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Median; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
