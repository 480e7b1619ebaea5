//! Small statistics toolbox for the Monte Carlo checks: seed derivation,
//! Wilson intervals, mean intervals, goodness-of-fit and trend tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// One SplitMix64 step; used to derive independent per-run seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `k` under the master seed: a fixed ladder, so results do not
/// depend on scheduling.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    splitmix64(splitmix64(master) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Two-sided critical value for confidence `level` (e.g. 0.99).
pub fn z_for(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// Wilson score interval.
pub fn wilson(successes: u64, trials: u64, level: f64) -> Proportion {
    if trials == 0 {
        return Proportion { successes, trials, p_hat: f64::NAN, lo: 0.0, hi: 1.0, level };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = z_for(level);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Proportion { successes, trials, p_hat: p, lo: (centre - half).max(0.0), hi: (centre + half).min(1.0), level }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// Normal-approximation interval for a sample mean.
pub fn mean_ci(xs: &[f64], level: f64) -> MeanCi {
    let n = xs.len();
    if n == 0 {
        return MeanCi { n, mean: f64::NAN, se: f64::NAN, lo: f64::NAN, hi: f64::NAN, level };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    let se = (var / n as f64).sqrt();
    let z = z_for(level);
    MeanCi { n, mean, se, lo: mean - z * se, hi: mean + z * se, level }
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(stat: f64, df: f64) -> f64 {
    1.0 - ChiSquared::new(df).expect("positive df").cdf(stat)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Pearson goodness of fit; cells with expected count below 5 are pooled
/// into their neighbour.
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> ChiSquareTest {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&a, &b) in observed.iter().zip(expected) {
        o += a;
        e += b;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match cells.last_mut() {
            Some(c) => {
                c.0 += o;
                c.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    let statistic: f64 = cells.iter().map(|&(o, e)| (o - e).powi(2) / e).sum();
    let df = (cells.len().max(2) - 1) as f64;
    ChiSquareTest { statistic, df, p_value: chi_square_sf(statistic, df) }
}

/// Total-variation distance of two probability vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n).map(|i| (p.get(i).unwrap_or(&0.0) - q.get(i).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// Asymptotic two-sample Kolmogorov–Smirnov test; returns (D, p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (0.0, 1.0);
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_sf(lam))
}

fn kolmogorov_sf(lam: f64) -> f64 {
    if lam < 1e-3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * lam * lam).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Weighted least squares y = a + b x.
pub fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        sxx += w[i] * (x[i] - mx).powi(2);
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = (x.len() as f64 - 2.0).max(1.0);
    let rss: f64 = (0..x.len()).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let slope_se = (rss / dof / sxx).sqrt();
    LineFit { slope, intercept, slope_se }
}

/// Log-linear fit of an empirical tail P[V > x] at the given thresholds,
/// weighted by inverse binomial variance of the log; thresholds with no
/// exceedance are dropped.
pub fn log_tail_fit(samples: &[f64], thresholds: &[f64]) -> Option<LineFit> {
    let n = samples.len() as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for &x in thresholds {
        let k = samples.iter().filter(|&&v| v > x).count() as f64;
        if k > 0.0 {
            let p = k / n;
            xs.push(x);
            ys.push(p.ln());
            ws.push(k / (1.0 - p).max(1.0 / n));
        }
    }
    (xs.len() >= 2).then(|| weighted_line(&xs, &ys, &ws))
}

/// One-sided z test that a proportion sequence decreases along `x`:
/// true when the fitted slope is negative, or when all values are already
/// within one Wilson half-width of zero and nonincreasing.
pub fn decreasing_trend(x: &[f64], props: &[Proportion]) -> bool {
    let y: Vec<f64> = props.iter().map(|p| p.p_hat).collect();
    let w: Vec<f64> = props
        .iter()
        .map(|p| {
            let v = (p.p_hat * (1.0 - p.p_hat)).max(1.0 / (p.trials as f64).powi(2));
            p.trials as f64 / v
        })
        .collect();
    if y.iter().all(|&v| v == y[0]) {
        return false;
    }
    let f = weighted_line(x, &y, &w);
    f.slope < 0.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    pub slope: f64,
    pub slope_se: f64,
    pub z: f64,
    /// One-sided p-value for a negative slope.
    pub p_decreasing: f64,
    /// One-sided p-value for a positive slope.
    pub p_increasing: f64,
}

/// Weighted regression of proportions on `x` with binomial variances treated
/// as known (floored at 1/n² so empty or full cells keep a finite weight).
pub fn trend_test(x: &[f64], props: &[Proportion]) -> TrendTest {
    let w: Vec<f64> = props
        .iter()
        .map(|p| {
            let n = p.trials as f64;
            n / (p.p_hat * (1.0 - p.p_hat)).max(1.0 / (n * n))
        })
        .collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = props.iter().zip(&w).map(|(p, b)| p.p_hat * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(props).zip(&w).map(|((a, p), b)| b * (a - mx) * (p.p_hat - my)).sum();
    let slope = sxy / sxx;
    let slope_se = (1.0 / sxx).sqrt();
    let z = slope / slope_se;
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    TrendTest { slope, slope_se, z, p_decreasing: phi.cdf(z), p_increasing: 1.0 - phi.cdf(z) }
}

/// Log-linear fit ln p ≈ a + b x over the cells with at least one success,
/// weighted by the inverse delta-method variance k/(1−p).
pub fn log_linear_fit(x: &[f64], props: &[Proportion]) -> Option<LineFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for (&xi, p) in x.iter().zip(props) {
        if p.successes > 0 {
            xs.push(xi);
            ys.push(p.p_hat.ln());
            ws.push(p.successes as f64 / (1.0 - p.p_hat).max(1.0 / p.trials as f64));
        }
    }
    (xs.len() >= 2).then(|| weighted_line(&xs, &ys, &ws))
}

/// One-sided p-value that the true slope has sign `sign` (±1), from a fit.
pub fn slope_sign_p(fit: &LineFit, sign: f64) -> f64 {
    let z = sign * fit.slope / fit.slope_se;
    if !z.is_finite() {
        return if sign * fit.slope > 0.0 { 0.0 } else { 1.0 };
    }
    1.0 - Normal::new(0.0, 1.0).expect("standard normal").cdf(z)
}

/// Two independent proportions: difference a − b with a normal interval.
pub fn difference_ci(a: &Proportion, b: &Proportion, level: f64) -> (f64, f64, f64) {
    let d = a.p_hat - b.p_hat;
    let se = (a.p_hat * (1.0 - a.p_hat) / a.trials as f64 + b.p_hat * (1.0 - b.p_hat) / b.trials as f64).sqrt();
    let z = z_for(level);
    (d, d - z * se, d + z * se)
}

/// Empirical quantile by linear interpolation on the sorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}

/// Exact two-sided sign test p-value for k positives out of n.
pub fn sign_test(k: u64, n: u64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let m = k.min(n - k);
    let mut tail = 0.0;
    let mut logc = 0.0f64;
    for i in 0..=m {
        if i > 0 {
            logc += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (logc - n as f64 * 2f64.ln()).exp();
    }
    (2.0 * tail).min(1.0)
}
