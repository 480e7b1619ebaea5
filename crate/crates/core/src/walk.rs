//! Abstract steered renewal walks: (S_n, T_n) with S reflected toward 0,
//! the free walk S⁺ driven by the same steps, hitting times, the overshoot
//! bound with an exact summation oracle, the cone experiment and the box
//! chain schedule.

use std::ops::Bound;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{derive_seed, wilson, Proportion};

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("empty support")]
    Empty,
    #[error("weights must be positive and finite")]
    Weight,
    #[error("renewal times must be positive and finite")]
    Tau,
    #[error("step law has nonpositive drift {0}")]
    Drift(f64),
    #[error("malformed set: {0}")]
    Set(String),
    #[error("β = {beta} is not below β̄ = {beta_bar}")]
    Beta { beta: f64, beta_bar: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Result<Vec<f64>, WalkError> {
    let w: Vec<f64> = weights.collect();
    if w.is_empty() {
        return Err(WalkError::Empty);
    }
    if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(WalkError::Weight);
    }
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    Ok(w.iter()
        .map(|v| {
            acc += v / total;
            acc
        })
        .collect())
}

/// Finite-support laws of X and τ, drawn independently.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDistribution {
    /// (value, probability), probabilities normalized.
    pub x: Vec<(i64, f64)>,
    pub tau: Vec<(f64, f64)>,
    #[serde(skip)]
    x_cum: Vec<f64>,
    #[serde(skip)]
    tau_cum: Vec<f64>,
}

impl StepDistribution {
    pub fn new(x: Vec<(i64, f64)>, tau: Vec<(f64, f64)>) -> Result<Self, WalkError> {
        let x_cum = cumulative(x.iter().map(|p| p.1))?;
        let tau_cum = cumulative(tau.iter().map(|p| p.1))?;
        if tau.iter().any(|p| !(p.0 > 0.0 && p.0.is_finite())) {
            return Err(WalkError::Tau);
        }
        let norm = |c: &[f64]| -> Vec<f64> {
            let mut prev = 0.0;
            c.iter()
                .map(|&v| {
                    let p = v - prev;
                    prev = v;
                    p
                })
                .collect()
        };
        let px = norm(&x_cum);
        let pt = norm(&tau_cum);
        let d = StepDistribution {
            x: x.iter().zip(px).map(|(a, p)| (a.0, p)).collect(),
            tau: tau.iter().zip(pt).map(|(a, p)| (a.0, p)).collect(),
            x_cum,
            tau_cum,
        };
        if d.mu() <= 0.0 {
            return Err(WalkError::Drift(d.mu()));
        }
        Ok(d)
    }

    /// X ≡ x, τ ≡ 1.
    pub fn deterministic(x: i64) -> Result<Self, WalkError> {
        Self::new(vec![(x, 1.0)], vec![(1.0, 1.0)])
    }

    pub fn mu(&self) -> f64 {
        self.x.iter().map(|&(v, p)| v as f64 * p).sum()
    }
    pub fn nu(&self) -> f64 {
        self.tau.iter().map(|&(v, p)| v * p).sum()
    }
    pub fn beta_bar(&self) -> f64 {
        self.mu() / self.nu()
    }
    pub fn max_x(&self) -> i64 {
        self.x.iter().map(|p| p.0).max().expect("nonempty")
    }
    pub fn min_x(&self) -> i64 {
        self.x.iter().map(|p| p.0).min().expect("nonempty")
    }
    /// P[X ≥ i].
    pub fn tail(&self, i: i64) -> f64 {
        self.x.iter().filter(|p| p.0 >= i).map(|p| p.1).sum()
    }

    fn pick(cum: &[f64], rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        cum.partition_point(|&c| c <= u).min(cum.len() - 1)
    }

    pub fn draw(&self, rng: &mut impl Rng) -> (i64, f64) {
        (self.x[Self::pick(&self.x_cum, rng)].0, self.tau[Self::pick(&self.tau_cum, rng)].0)
    }
}

/// Streaming state of (S, S⁺, T).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Walker {
    pub n: usize,
    pub s: i64,
    pub s_plus: i64,
    pub t: f64,
}

impl Walker {
    pub fn new(x0: i64, t0: f64) -> Self {
        Walker { n: 0, s: x0, s_plus: x0, t: t0 }
    }

    /// One step; S moves by +X from S ≤ 0 and by −X from S > 0.
    pub fn step(&mut self, dist: &StepDistribution, rng: &mut impl Rng) {
        let (x, tau) = dist.draw(rng);
        self.s += if self.s <= 0 { x } else { -x };
        self.s_plus += x;
        self.t += tau;
        self.n += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkRun {
    pub start: (i64, f64),
    pub seed: u64,
    pub s: Vec<i64>,
    pub s_plus: Vec<i64>,
    pub t: Vec<f64>,
}

pub fn simulate_walk(dist: &StepDistribution, start: (i64, f64), n_steps: usize, seed: u64) -> WalkRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Walker::new(start.0, start.1);
    let mut run = WalkRun {
        start,
        seed,
        s: Vec::with_capacity(n_steps + 1),
        s_plus: Vec::with_capacity(n_steps + 1),
        t: Vec::with_capacity(n_steps + 1),
    };
    for k in 0..=n_steps {
        if k > 0 {
            w.step(dist, &mut rng);
        }
        run.s.push(w.s);
        run.s_plus.push(w.s_plus);
        run.t.push(w.t);
    }
    run
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coord {
    S,
    SPlus,
    T,
}

/// An interval or half-line of the real line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HitSet {
    pub lo: Bound<f64>,
    pub hi: Bound<f64>,
}

impl HitSet {
    pub fn new(lo: Bound<f64>, hi: Bound<f64>) -> Result<Self, WalkError> {
        let val = |b: &Bound<f64>| match b {
            Bound::Included(v) | Bound::Excluded(v) => Some(*v),
            Bound::Unbounded => None,
        };
        if val(&lo).is_some_and(f64::is_nan) || val(&hi).is_some_and(f64::is_nan) {
            return Err(WalkError::Set("NaN endpoint".into()));
        }
        if let (Some(a), Some(b)) = (val(&lo), val(&hi)) {
            let closed = matches!((lo, hi), (Bound::Included(_), Bound::Included(_)));
            if a > b || (a == b && !closed) {
                return Err(WalkError::Set(format!("empty interval {lo:?}..{hi:?}")));
            }
        }
        Ok(HitSet { lo, hi })
    }
    /// [a, ∞)
    pub fn at_least(a: f64) -> Self {
        HitSet { lo: Bound::Included(a), hi: Bound::Unbounded }
    }
    /// (a, ∞)
    pub fn above(a: f64) -> Self {
        HitSet { lo: Bound::Excluded(a), hi: Bound::Unbounded }
    }
    /// (−∞, a]
    pub fn at_most(a: f64) -> Self {
        HitSet { lo: Bound::Unbounded, hi: Bound::Included(a) }
    }
    pub fn contains(&self, v: f64) -> bool {
        let lo = match self.lo {
            Bound::Included(a) => v >= a,
            Bound::Excluded(a) => v > a,
            Bound::Unbounded => true,
        };
        let hi = match self.hi {
            Bound::Included(b) => v <= b,
            Bound::Excluded(b) => v < b,
            Bound::Unbounded => true,
        };
        lo && hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hit {
    At(usize),
    /// Not hit within the recorded run.
    Censored,
}

/// h_A = inf{n ≥ 0 : coordinate_n ∈ A}.
pub fn hitting_time(run: &WalkRun, which: Coord, set: &HitSet) -> Hit {
    let n = run.t.len();
    let value = |k: usize| match which {
        Coord::S => run.s[k] as f64,
        Coord::SPlus => run.s_plus[k] as f64,
        Coord::T => run.t[k],
    };
    (0..n).find(|&k| set.contains(value(k))).map_or(Hit::Censored, Hit::At)
}

fn run_parallel<T: Send>(n_runs: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> T + Sync) -> Vec<T> {
    (0..n_runs as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k));
            f(&mut rng)
        })
        .collect()
}

fn count(v: &[bool]) -> u64 {
    v.iter().filter(|&&b| b).count() as u64
}

/// min over θ ≥ 0 of E[e^{−θX}]; P[Z_n = 0] ≤ P[Z_n ≤ 0] ≤ ρⁿ.
pub fn chernoff_rate(dist: &StepDistribution) -> f64 {
    if dist.min_x() >= 0 {
        return dist.x.iter().filter(|p| p.0 == 0).map(|p| p.1).sum();
    }
    let f = |th: f64| dist.x.iter().map(|&(v, p)| p * (-th * v as f64).exp()).sum::<f64>();
    let (mut a, mut b) = (0.0, 1.0);
    while f(b) < f(b / 2.0) && b < 1e3 {
        b *= 2.0;
    }
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    f(0.5 * (a + b)).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenSum {
    /// Σ_{n ≤ N} P[Z_n = 0], exact.
    pub partial: f64,
    /// ρ^{N+1} / (1 − ρ), bound on the rest.
    pub envelope: f64,
    pub terms: usize,
    pub rho: f64,
}

/// Σ_n P[Z_n = 0] by exact convolution, truncated once the geometric
/// envelope is below `tol`.
pub fn green_at_zero(dist: &StepDistribution, tol: f64) -> Result<GreenSum, WalkError> {
    let rho = chernoff_rate(dist);
    if rho >= 1.0 {
        return Err(WalkError::Drift(dist.mu()));
    }
    let (lo, hi) = (dist.min_x(), dist.max_x());
    // pmf of Z_n on [n·lo, n·hi]
    let mut pmf = vec![1.0];
    let mut offset = 0i64;
    let mut partial = 1.0;
    let mut n = 0usize;
    let mut rho_pow = rho;
    loop {
        let envelope = rho_pow * rho / (1.0 - rho);
        if envelope < tol || n > 1_000_000 {
            return Ok(GreenSum { partial, envelope, terms: n + 1, rho });
        }
        let mut next = vec![0.0; pmf.len() + (hi - lo) as usize];
        for (i, &p) in pmf.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for &(v, q) in &dist.x {
                next[i + (v - lo) as usize] += p * q;
            }
        }
        offset += lo;
        pmf = next;
        n += 1;
        rho_pow *= rho;
        let zero = -offset;
        if zero >= 0 && (zero as usize) < pmf.len() {
            partial += pmf[zero as usize];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvershootCheck {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub green: GreenSum,
    /// Σ_{i > x} P[X ≥ i].
    pub tail_sum: f64,
    pub n_runs: usize,
    pub pass: bool,
}

/// P[h_{[ℓ,∞)} < ∞, Z_h − ℓ ≥ x] by Monte Carlo against the bound
/// (Σ_n P[Z_n = 0]) · (Σ_{i>x} P[X ≥ i]).
pub fn overshoot_bound_check(
    dist: &StepDistribution,
    ell: i64,
    x: i64,
    n_runs: usize,
    seed: u64,
) -> Result<OvershootCheck, WalkError> {
    if ell <= 0 || x <= 0 || n_runs == 0 {
        return Err(WalkError::Argument(format!("need ℓ > 0, x > 0, runs > 0 (ℓ={ell}, x={x})")));
    }
    let green = green_at_zero(dist, 1e-12)?;
    let tail_sum: f64 = (x + 1..=dist.max_x().max(x)).map(|i| dist.tail(i)).sum();
    let rhs = (green.partial + green.envelope) * tail_sum;
    let hits = run_parallel(n_runs, seed, |rng| {
        let mut w = Walker::new(0, 0.0);
        while w.s_plus < ell {
            w.step(dist, rng);
        }
        w.s_plus - ell >= x
    });
    let p = count(&hits) as f64 / n_runs as f64;
    let lhs_se = (p * (1.0 - p) / n_runs as f64).sqrt();
    Ok(OvershootCheck { lhs: p, lhs_se, rhs, green, tail_sum, n_runs, pass: p <= rhs + 3.0 * lhs_se })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeResult {
    pub freq: Proportion,
    pub beta_bar: f64,
    /// Whether |x0| ≤ βt, the hypothesis of the cone statement.
    pub in_cone: bool,
}

/// Frequency of (S, T) at h^T_{[t,∞)} lying in [−ℓ, ℓ] × [t, t + ℓ], from
/// (x0, 0).
pub fn cone_experiment(
    dist: &StepDistribution,
    beta: f64,
    ell: f64,
    t: f64,
    n_runs: usize,
    x0: i64,
    seed: u64,
) -> Result<ConeResult, WalkError> {
    let beta_bar = dist.beta_bar();
    if beta >= beta_bar {
        return Err(WalkError::Beta { beta, beta_bar });
    }
    let hits = run_parallel(n_runs, seed, |rng| {
        let mut w = Walker::new(x0, 0.0);
        while w.t < t {
            w.step(dist, rng);
        }
        (w.s as f64).abs() <= ell && w.t <= t + ell
    });
    Ok(ConeResult { freq: wilson(count(&hits), n_runs as u64, 0.99), beta_bar, in_cone: (x0 as f64).abs() <= beta * t })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeBox {
    pub half_width: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxChain {
    /// s_0 = t, s_{i+1} = s_i − (ℓ + i)⁴, down to the first nonpositive value.
    pub s: Vec<f64>,
    pub k: usize,
    /// t_0 = 0 < t_1 < … < t_{k+1} = t.
    pub times: Vec<f64>,
    /// B_1 … B_{k+1}.
    pub boxes: Vec<SpaceTimeBox>,
}

pub fn box_chain(ell: f64, t: f64) -> Result<BoxChain, WalkError> {
    if !(ell > 0.0 && t > 0.0 && ell.is_finite() && t.is_finite()) {
        return Err(WalkError::Argument(format!("need ℓ, t > 0 (ℓ={ell}, t={t})")));
    }
    let mut s = vec![t];
    let mut i = 0;
    while *s.last().expect("nonempty") > 0.0 {
        let next = s[i] - (ell + i as f64).powi(4);
        s.push(next);
        i += 1;
    }
    let k = s.len() - 2;
    let mut times = vec![0.0];
    times.extend((1..=k + 1).map(|i| s[k + 1 - i]));
    let boxes = (1..=k + 1)
        .map(|i| {
            let w = ell + (k + 1 - i) as f64;
            SpaceTimeBox { half_width: w, t_lo: times[i], t_hi: times[i] + w }
        })
        .collect();
    Ok(BoxChain { s, k, times, boxes })
}

/// Frequency of {|S_n| ≤ 2m for all n ≤ m⁶} from S_0 = x0.
pub fn inside_interval(dist: &StepDistribution, m: i64, x0: i64, n_runs: usize, seed: u64) -> Proportion {
    let steps = (m as u64).pow(6);
    let ok = run_parallel(n_runs, seed, |rng| {
        let mut w = Walker::new(x0, 0.0);
        for _ in 0..steps {
            if w.s.abs() > 2 * m {
                return false;
            }
            w.step(dist, rng);
        }
        w.s.abs() <= 2 * m
    });
    wilson(count(&ok), n_runs as u64, 0.99)
}

/// Frequency of landing in [−m/2, m/2] × [t, t + m] at h^T_{[t,∞)}, from
/// (x0, 0).
pub fn here_to_there(dist: &StepDistribution, m: i64, t: f64, x0: i64, n_runs: usize, seed: u64) -> Proportion {
    let ok = run_parallel(n_runs, seed, |rng| {
        let mut w = Walker::new(x0, 0.0);
        while w.t < t {
            w.step(dist, rng);
        }
        (w.s as f64).abs() <= m as f64 / 2.0 && w.t <= t + m as f64
    });
    wilson(count(&ok), n_runs as u64, 0.99)
}

/// Frequency of {S⁺_n ≥ βT_n − ℓ for all n ≤ n_max} from (0, 0).
pub fn right_line(dist: &StepDistribution, beta: f64, ell: f64, n_max: usize, n_runs: usize, seed: u64) -> Proportion {
    let ok = run_parallel(n_runs, seed, |rng| {
        let mut w = Walker::new(0, 0.0);
        for _ in 0..n_max {
            w.step(dist, rng);
            if (w.s_plus as f64) < beta * w.t - ell {
                return false;
            }
        }
        true
    });
    wilson(count(&ok), n_runs as u64, 0.99)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    pub ns: Vec<usize>,
    pub inside: Vec<Proportion>,
    /// Fitted ĉ in 1 − p_n ≈ 2e^{−ĉn}; None when too few misses.
    pub c_hat: Option<f64>,
}

/// P[(ρ − ε)n ≤ Z_n ≤ (ρ + ε)n] along `ns`, Z the free walk from 0.
pub fn concentration(dist: &StepDistribution, eps: f64, ns: &[usize], n_runs: usize, seed: u64) -> Concentration {
    let rho = dist.mu();
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let paths = run_parallel(n_runs, seed, |rng| {
        let mut w = Walker::new(0, 0.0);
        let mut at = Vec::with_capacity(ns.len());
        for k in 1..=n_max {
            w.step(dist, rng);
            if ns.contains(&k) {
                at.push((k, w.s_plus));
            }
        }
        at
    });
    let inside: Vec<Proportion> = ns
        .iter()
        .map(|&n| {
            let nf = n as f64;
            let k = paths
                .iter()
                .filter(|p| {
                    p.iter()
                        .find(|q| q.0 == n)
                        .is_some_and(|q| q.1 as f64 >= (rho - eps) * nf && q.1 as f64 <= (rho + eps) * nf)
                })
                .count();
            wilson(k as u64, n_runs as u64, 0.99)
        })
        .collect();
    let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for (n, p) in ns.iter().zip(&inside) {
        let miss = p.trials - p.successes;
        if miss > 0 {
            xs.push(*n as f64);
            ys.push((miss as f64 / p.trials as f64 / 2.0).ln());
            ws.push(miss as f64);
        }
    }
    let c_hat = (xs.len() >= 2).then(|| -crate::stats::weighted_line(&xs, &ys, &ws).slope);
    Concentration { ns: ns.to_vec(), inside, c_hat }
}
