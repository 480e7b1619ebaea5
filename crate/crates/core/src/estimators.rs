//! Desk-scale Monte Carlo estimators: λ_c brackets, survival and cone
//! surrogates, complete-convergence checks, bound fits, the renewal drift
//! experiments and the pathwise invariant audit.
//!
//! Every estimator is a deterministic function of its config and master
//! seed: run k uses `derive_seed`, runs are mapped in parallel and collected
//! in index order, and all reductions are sums.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ancestor::{
    build_ingredient2, build_renewal_point, AncestorError, CensorReason, Orientation, RenewalOutcome,
};
use crate::graphical::{
    sample_harris, sample_symmetric, stream_symmetric, EventStream, EventKind, HarrisError, LatticeWindow, Point,
};
use crate::paths::{fsip_reach_set, reach_set, reachable, Anchor, Mode, PathError};
use crate::process::{evolve, evolve_one_type, sweep_events, Configuration, OneTypeRate, ProcessError};
use crate::stats::{
    derive_seed, difference_ci, ks_two_sample, log_linear_fit, mean_ci, quantile, slope_sign_p, splitmix64,
    trend_test, tv_distance, wilson, MeanCi, Proportion, TrendTest,
};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Harris(#[from] HarrisError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Ancestor(#[from] AncestorError),
    #[error("parameter violation: {0}")]
    Params(String),
    #[error("survival curve decreases beyond its intervals between λ = {0} and λ = {1}; increase n_runs")]
    NonMonotone(f64, f64),
    #[error("threshold {threshold} is not bracketed by the grid at horizon {horizon}")]
    NotBracketed { threshold: f64, horizon: f64 },
    #[error("no surviving runs")]
    NoSurvivors,
    #[error("observation window has {0} sites, at most 4 are allowed")]
    WindowTooLarge(usize),
    #[error("observation site {0:?} lies outside the lattice window")]
    Site(Point),
}

type Result<T> = std::result::Result<T, EstimatorError>;

/// Model and truncation parameters shared by the multitype estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: usize,
    pub r: i64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Window radius M (ℓ1 ball).
    pub m: i64,
    /// Horizon T_h.
    pub horizon: f64,
}

impl ModelParams {
    pub fn window(&self) -> Result<LatticeWindow> {
        Ok(LatticeWindow::new(self.d, self.m, self.r, self.horizon)?)
    }

    fn check_rates(&self) -> Result<()> {
        if !(self.lambda1 >= self.lambda2 && self.lambda2 >= 0.0 && self.lambda1.is_finite()) {
            return Err(EstimatorError::Params(format!(
                "need λ1 ≥ λ2 ≥ 0, got λ1 = {}, λ2 = {}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Initial configurations, built identically for every run (except the
/// product measure, which draws from a per-run stream).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Empty,
    /// A 1 at the origin, 0 elsewhere.
    SingleOne,
    /// A 1 at the origin, 2 elsewhere.
    SingleOneAmongTwos,
    AllOnes,
    AllTwos,
    /// `inner` on B_0(radius), `outer` elsewhere.
    Block { radius: i64, inner: u8, outer: u8 },
    /// Independent sites: 1 w.p. p1, 2 w.p. p2, else 0.
    Product { p1: f64, p2: f64 },
}

impl InitialCondition {
    pub fn build(&self, w: &LatticeWindow, seed: u64) -> Result<Configuration> {
        let origin = vec![0; w.dim()];
        Ok(match *self {
            InitialCondition::Empty => Configuration::filled(w, 0),
            InitialCondition::SingleOne => Configuration::single(w, &origin, 1, 0)?,
            InitialCondition::SingleOneAmongTwos => Configuration::single(w, &origin, 1, 2)?,
            InitialCondition::AllOnes => Configuration::filled(w, 1),
            InitialCondition::AllTwos => Configuration::filled(w, 2),
            InitialCondition::Block { radius, inner, outer } => Configuration::block(w, radius, inner, outer),
            InitialCondition::Product { p1, p2 } => {
                if !(p1 >= 0.0 && p2 >= 0.0 && p1 + p2 <= 1.0) {
                    return Err(EstimatorError::Params(format!("bad product densities p1 = {p1}, p2 = {p2}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x1A17_5EED));
                let state = (0..w.n_sites())
                    .map(|_| {
                        let u: f64 = rng.gen();
                        if u < p1 {
                            1
                        } else if u < p1 + p2 {
                            2
                        } else {
                            0
                        }
                    })
                    .collect();
                Configuration::new(w, state)?
            }
        })
    }
}

/// Seed of run `k` in sub-experiment `stream`.
fn ladder(seed: u64, stream: u64, k: u64) -> u64 {
    derive_seed(derive_seed(seed, stream), k)
}

/// What a streamed multitype run reports.
#[derive(Clone, Debug)]
struct RunRecord {
    /// Time the 1's vanished (∞ if alive at the end).
    ones_ext: f64,
    twos_ext: f64,
    /// A 1 was born within R of the window boundary.
    ones_boundary: bool,
    /// Cone slope, for runs whose 1's are alive at the end.
    slope: Option<f64>,
}

/// Runs the multitype process on a lazily sampled system up to `t_end`.
/// Stops once the 1's are gone and either `stop_ones` is set or the 2's are
/// gone too; `state` is then ξ at the stopping time.
fn simulate(
    w: &LatticeWindow,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
    state: &mut [u8],
    t_end: f64,
    stop_ones: bool,
    cone_t0: Option<f64>,
) -> Result<RunRecord> {
    let ones = state.iter().filter(|&&s| s == 1).count();
    let twos = state.iter().filter(|&&s| s == 2).count();
    let mut rec = RunRecord {
        ones_ext: if ones == 0 { 0.0 } else { f64::INFINITY },
        twos_ext: if twos == 0 { 0.0 } else { f64::INFINITY },
        ones_boundary: false,
        slope: None,
    };
    if !(lambda1 >= lambda2 && lambda2 >= 0.0 && lambda1.is_finite()) {
        return Err(HarrisError::Rates { lambda1, lambda2 }.into());
    }
    let mut min_slope = f64::INFINITY;
    if !(ones == 0 && (stop_ones || twos == 0)) {
        // λ2 = 0 and λ1 = λ2 are legal here, unlike for the sampler
        let events = EventStream::new(w, lambda1, lambda2, seed);
        sweep_events(w, events, state, t_end, true, |tr, c, _| {
            let x = tr.site as usize;
            if tr.new == 1 && w.near_boundary(x) {
                rec.ones_boundary = true;
            }
            if let Some(t0) = cone_t0 {
                if tr.old == 2 && tr.time >= t0 {
                    min_slope = min_slope.min(w.offset_norm(x) as f64 / tr.time);
                }
            }
            if c.ones == 0 && rec.ones_ext.is_infinite() {
                rec.ones_ext = tr.time;
            }
            if c.twos == 0 && rec.twos_ext.is_infinite() {
                rec.twos_ext = tr.time;
            }
            !(c.ones == 0 && (stop_ones || c.twos == 0))
        });
    }
    if cone_t0.is_some() && rec.ones_ext.is_infinite() {
        for (i, &s) in state.iter().enumerate() {
            if s == 2 {
                min_slope = min_slope.min(w.offset_norm(i) as f64 / t_end);
            }
        }
        rec.slope = Some(min_slope.min(w.radius() as f64 / t_end));
    }
    Ok(rec)
}

// ---------------------------------------------------------------------------
// λ_c

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaCConfig {
    pub d: usize,
    pub r: i64,
    pub m: i64,
    /// Longer horizon; the curves are also read at half of it.
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub n_runs: u64,
    /// Survival-frequency level whose crossing defines the bracket.
    pub threshold: f64,
    /// Refinement rounds after the initial grid.
    pub rounds: usize,
    pub refine_points: usize,
    pub level: f64,
    pub seed: u64,
}

/// Survival frequency of the single-site one-type process at one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub horizon: f64,
    pub lambdas: Vec<f64>,
    pub freq: Vec<Proportion>,
    /// Runs per λ whose process touched the window boundary.
    pub boundary: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaCRound {
    pub curves: Vec<SurvivalCurve>,
    pub bracket: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaCEstimate {
    pub bracket: [f64; 2],
    pub rounds: Vec<LambdaCRound>,
    pub note: String,
}

impl LambdaCEstimate {
    /// A rate strictly between the bracket and `lambda1`.
    pub fn mid_to(&self, lambda1: f64) -> f64 {
        0.5 * (self.bracket[1] + lambda1)
    }
}

/// Survival curves at `horizon / 2` and `horizon` for all rates at once: one
/// rate-max(λ) system per run, each arrow carrying a uniform mark u and
/// counting for rate λ iff u·max(λ) < λ. The coupling makes every run
/// monotone in λ, so the curves are nondecreasing pathwise.
pub fn survival_curves(d: usize, r: i64, m: i64, horizon: f64, lambdas: &[f64], n_runs: u64, seed: u64, level: f64) -> Result<[SurvivalCurve; 2]> {
    if lambdas.is_empty() || lambdas.windows(2).any(|p| !(p[0] < p[1])) || !(lambdas[0] > 0.0) {
        return Err(EstimatorError::Params("λ grid must be positive and strictly increasing".into()));
    }
    let w = LatticeWindow::new(d, m, r, horizon)?;
    let origin = w.index(&vec![0; d]).expect("origin");
    let k = lambdas.len();
    let lmax = lambdas[k - 1];
    let runs: Vec<(Vec<f64>, usize)> = (0..n_runs)
        .into_par_iter()
        .map(|run| -> Result<(Vec<f64>, usize)> {
            let s = derive_seed(seed, run);
            let mut marks = ChaCha8Rng::seed_from_u64(splitmix64(s ^ 0x0A4C_5EED));
            // level[x]: smallest rate index whose process occupies x (k = none)
            let mut lvl = vec![k; w.n_sites()];
            lvl[origin] = 0;
            let mut count = vec![0usize; k + 1];
            count[0] = 1;
            let mut min_alive = 0;
            let mut ext = vec![f64::INFINITY; k];
            let mut bmin = k;
            for ev in stream_symmetric(&w, lmax, s)? {
                match ev.kind {
                    EventKind::Death => {
                        let x = ev.from as usize;
                        let old = lvl[x];
                        if old < k {
                            count[old] -= 1;
                            lvl[x] = k;
                            while min_alive < k && count[min_alive] == 0 {
                                ext[min_alive] = ev.time;
                                min_alive += 1;
                            }
                            if min_alive == k {
                                break;
                            }
                        }
                    }
                    _ => {
                        let u: f64 = marks.gen::<f64>() * lmax;
                        let (x, y) = (ev.from as usize, ev.to as usize);
                        let j = lambdas.partition_point(|&l| l <= u).max(lvl[x]);
                        if j < lvl[y] {
                            if lvl[y] < k {
                                count[lvl[y]] -= 1;
                            }
                            lvl[y] = j;
                            count[j] += 1;
                            if w.near_boundary(y) {
                                bmin = bmin.min(j);
                            }
                        }
                    }
                }
            }
            // processes below the smallest live index are extinct
            Ok((ext, bmin))
        })
        .collect::<Result<_>>()?;
    let curve = |h: f64| SurvivalCurve {
        horizon: h,
        lambdas: lambdas.to_vec(),
        freq: (0..k)
            .map(|j| wilson(runs.iter().filter(|(e, _)| e[j] > h).count() as u64, n_runs, level))
            .collect(),
        boundary: (0..k).map(|j| runs.iter().filter(|(_, b)| *b <= j).count() as u64).collect(),
    };
    Ok([curve(horizon / 2.0), curve(horizon)])
}

fn bracket_of(c: &SurvivalCurve, threshold: f64) -> Result<[f64; 2]> {
    for i in 0..c.freq.len() {
        for j in i + 1..c.freq.len() {
            if c.freq[i].lo > c.freq[j].hi {
                return Err(EstimatorError::NonMonotone(c.lambdas[i], c.lambdas[j]));
            }
        }
    }
    let below = (0..c.freq.len()).filter(|&i| c.freq[i].hi < threshold).last();
    let above = (0..c.freq.len()).find(|&i| c.freq[i].lo > threshold);
    match (below, above) {
        (Some(a), Some(b)) if a < b => Ok([c.lambdas[a], c.lambdas[b]]),
        _ => Err(EstimatorError::NotBracketed { threshold, horizon: c.horizon }),
    }
}

/// Bracket for λ_c: the rates where the single-site survival frequency
/// crosses `threshold` at either horizon, refined by re-gridding the
/// bracket with fresh runs. A finite-size, finite-time surrogate only.
pub fn estimate_lambda_c(cfg: &LambdaCConfig) -> Result<LambdaCEstimate> {
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(EstimatorError::Params(format!("threshold {} outside (0, 1)", cfg.threshold)));
    }
    let mut grid = cfg.grid.clone();
    let mut rounds = Vec::new();
    let mut bracket = [f64::NAN; 2];
    for round in 0..=cfg.rounds {
        let curves = survival_curves(cfg.d, cfg.r, cfg.m, cfg.horizon, &grid, cfg.n_runs, derive_seed(cfg.seed, round as u64), cfg.level)?;
        let b = match (bracket_of(&curves[0], cfg.threshold), bracket_of(&curves[1], cfg.threshold)) {
            (Ok(a), Ok(b)) => [a[0].min(b[0]), a[1].max(b[1])],
            (Err(e), _) | (_, Err(e)) if round == 0 => return Err(e),
            // a refinement that no longer brackets keeps the previous answer
            _ => {
                rounds.push(LambdaCRound { curves: curves.to_vec(), bracket });
                break;
            }
        };
        bracket = b;
        rounds.push(LambdaCRound { curves: curves.to_vec(), bracket });
        let n = cfg.refine_points.max(3);
        grid = (0..n).map(|i| bracket[0] + (bracket[1] - bracket[0]) * i as f64 / (n - 1) as f64).collect();
    }
    Ok(LambdaCEstimate {
        bracket,
        rounds,
        note: format!(
            "finite-size/finite-time surrogate: window radius {}, horizons {} and {}, threshold {}",
            cfg.m,
            cfg.horizon / 2.0,
            cfg.horizon,
            cfg.threshold
        ),
    })
}

// ---------------------------------------------------------------------------
// Survival and cone

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalConfig {
    pub params: ModelParams,
    pub initial: InitialCondition,
    pub n_runs: u64,
    pub seed: u64,
    pub level: f64,
    /// Keep simulating after the 1's die so that the 2's are observed.
    pub track_twos: bool,
    /// Estimated λ_c bracket; when given, λ1 must lie above it.
    pub lambda_c: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Censoring {
    /// Runs in which a 1 was born within R of the window boundary.
    pub ones_near_boundary: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub params: ModelParams,
    pub initial: InitialCondition,
    pub n_runs: u64,
    /// T_h / 2 and T_h.
    pub horizons: [f64; 2],
    /// 𝒮1 surrogate: some 1 alive at the horizon.
    pub s1: [Proportion; 2],
    /// 𝒮2 surrogate, when tracked.
    pub s2: Option<[Proportion; 2]>,
    /// s1(T_h / 2) − s1(T_h).
    pub s1_drift: f64,
    pub censoring: Censoring,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeEstimate {
    /// Cone start t0 = T_h / 2.
    pub t0: f64,
    pub survivors: u64,
    /// Per surviving run: the largest a such that no 2 occupies (x, t)
    /// with t ∈ [t0, T_h] and ‖x‖ ≤ a t, capped at M / T_h.
    pub slopes: Vec<f64>,
    pub quantile: f64,
    /// α̂: the `quantile` of the slopes.
    pub alpha_hat: f64,
    /// Fraction of survivors with a positive slope.
    pub positive: Proportion,
}

fn check_survival(cfg: &SurvivalConfig) -> Result<()> {
    let p = &cfg.params;
    p.check_rates()?;
    if !(p.lambda1 > p.lambda2) {
        return Err(EstimatorError::Params("survival estimates need λ1 > λ2".into()));
    }
    if let Some(b) = cfg.lambda_c {
        if !(p.lambda1 > b[1]) {
            return Err(EstimatorError::Params(format!("λ1 = {} is not above the λ_c bracket {:?}", p.lambda1, b)));
        }
    }
    if cfg.n_runs == 0 {
        return Err(EstimatorError::Params("n_runs must be positive".into()));
    }
    Ok(())
}

fn survival_runs(cfg: &SurvivalConfig, cone: bool) -> Result<Vec<RunRecord>> {
    let p = &cfg.params;
    let w = p.window()?;
    let t0 = cone.then_some(p.horizon / 2.0);
    (0..cfg.n_runs)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(cfg.seed, k);
            let mut state = cfg.initial.build(&w, s)?.states().to_vec();
            simulate(&w, p.lambda1, p.lambda2, s, &mut state, p.horizon, !cfg.track_twos, t0)
        })
        .collect()
}

fn summarize_survival(cfg: &SurvivalConfig, runs: &[RunRecord]) -> SurvivalEstimate {
    let p = &cfg.params;
    let hs = [p.horizon / 2.0, p.horizon];
    let count = |f: &dyn Fn(&RunRecord) -> bool| runs.iter().filter(|r| f(r)).count() as u64;
    let s1 = hs.map(|h| wilson(count(&|r| r.ones_ext > h), cfg.n_runs, cfg.level));
    let s2 = cfg.track_twos.then(|| hs.map(|h| wilson(count(&|r| r.twos_ext > h), cfg.n_runs, cfg.level)));
    SurvivalEstimate {
        params: p.clone(),
        initial: cfg.initial.clone(),
        n_runs: cfg.n_runs,
        horizons: hs,
        s1,
        s2,
        s1_drift: s1[0].p_hat - s1[1].p_hat,
        censoring: Censoring { ones_near_boundary: count(&|r| r.ones_boundary) },
    }
}

fn summarize_cone(cfg: &SurvivalConfig, runs: &[RunRecord], q: f64) -> Result<ConeEstimate> {
    let slopes: Vec<f64> = runs.iter().filter_map(|r| r.slope).collect();
    if slopes.is_empty() {
        return Err(EstimatorError::NoSurvivors);
    }
    let n = slopes.len() as u64;
    Ok(ConeEstimate {
        t0: cfg.params.horizon / 2.0,
        survivors: n,
        alpha_hat: quantile(&slopes, q),
        quantile: q,
        positive: wilson(slopes.iter().filter(|&&a| a > 0.0).count() as u64, n, cfg.level),
        slopes,
    })
}

/// 𝒮1 / 𝒮2 horizon surrogates at T_h / 2 and T_h.
pub fn estimate_survival(cfg: &SurvivalConfig) -> Result<SurvivalEstimate> {
    check_survival(cfg)?;
    Ok(summarize_survival(cfg, &survival_runs(cfg, false)?))
}

/// Cone slopes of the runs whose 1's survive to T_h.
pub fn estimate_cone(cfg: &SurvivalConfig, q: f64) -> Result<ConeEstimate> {
    check_survival(cfg)?;
    summarize_cone(cfg, &survival_runs(cfg, true)?, q)
}

/// Both of the above from one ensemble.
pub fn estimate_survival_and_cone(cfg: &SurvivalConfig, q: f64) -> Result<(SurvivalEstimate, ConeEstimate)> {
    check_survival(cfg)?;
    let runs = survival_runs(cfg, true)?;
    Ok((summarize_survival(cfg, &runs), summarize_cone(cfg, &runs, q)?))
}

// ---------------------------------------------------------------------------
// Symmetric contrast

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub d: usize,
    pub r: i64,
    pub m: i64,
    /// Common rate of the symmetric arm.
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub horizons: Vec<f64>,
    pub n_runs: u64,
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastArm {
    pub lambda1: f64,
    pub lambda2: f64,
    pub horizons: Vec<f64>,
    /// 𝒮1 surrogate per horizon, from independent ensembles.
    pub freq: Vec<Proportion>,
    pub trend: TrendTest,
    pub strictly_decreasing: bool,
    /// freq(first horizon) − freq(last horizon) with its interval.
    pub drift: (f64, f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub symmetric: ContrastArm,
    pub asymmetric: ContrastArm,
}

fn contrast_arm(cfg: &ContrastConfig, l1: f64, l2: f64, stream: u64) -> Result<ContrastArm> {
    let mut freq = Vec::new();
    for (i, &h) in cfg.horizons.iter().enumerate() {
        let w = LatticeWindow::new(cfg.d, cfg.m, cfg.r, h)?;
        let xi0 = InitialCondition::SingleOneAmongTwos.build(&w, 0)?;
        let alive = (0..cfg.n_runs)
            .into_par_iter()
            .map(|k| -> Result<bool> {
                let mut state = xi0.states().to_vec();
                let rec = simulate(&w, l1, l2, ladder(cfg.seed, stream * 64 + i as u64, k), &mut state, h, true, None)?;
                Ok(rec.ones_ext > h)
            })
            .collect::<Result<Vec<bool>>>()?;
        freq.push(wilson(alive.iter().filter(|&&a| a).count() as u64, cfg.n_runs, cfg.level));
    }
    let trend = trend_test(&cfg.horizons, &freq);
    let strictly_decreasing = freq.windows(2).all(|p| p[0].p_hat > p[1].p_hat);
    let drift = difference_ci(&freq[0], freq.last().expect("horizons"), cfg.level);
    Ok(ContrastArm { lambda1: l1, lambda2: l2, horizons: cfg.horizons.clone(), freq, trend, strictly_decreasing, drift })
}

/// A single 1 among 2's: with λ1 = λ2 the 1's survival frequency keeps
/// falling with the horizon, with λ1 > λ2 it settles.
pub fn symmetric_contrast(cfg: &ContrastConfig) -> Result<ContrastReport> {
    if cfg.horizons.len() < 2 || cfg.horizons.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(EstimatorError::Params("need at least two increasing horizons".into()));
    }
    if !(cfg.lambda1 > cfg.lambda2) {
        return Err(EstimatorError::Params("the asymmetric arm needs λ1 > λ2".into()));
    }
    Ok(ContrastReport {
        symmetric: contrast_arm(cfg, cfg.lambda, cfg.lambda, 1)?,
        asymmetric: contrast_arm(cfg, cfg.lambda1, cfg.lambda2, 2)?,
    })
}

// ---------------------------------------------------------------------------
// Complete convergence

/// Histogram of ξ_t restricted to a few sites; cell Σ_i ξ(w_i) 3^i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub sites: Vec<Point>,
    pub time: f64,
    pub histogram: Vec<u64>,
    pub n_runs: u64,
}

impl EmpiricalMeasure {
    pub fn probabilities(&self) -> Vec<f64> {
        self.histogram.iter().map(|&c| c as f64 / self.n_runs.max(1) as f64).collect()
    }

    fn point_mass_zero(sites: &[Point], time: f64) -> Self {
        let mut histogram = vec![0; 3usize.pow(sites.len() as u32)];
        histogram[0] = 1;
        EmpiricalMeasure { sites: sites.to_vec(), time, histogram, n_runs: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    /// The horizon is the observation time t.
    pub params: ModelParams,
    pub initial: InitialCondition,
    pub sites: Vec<Point>,
    pub n_runs: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub direct: EmpiricalMeasure,
    pub mu1: Option<EmpiricalMeasure>,
    pub mu2: Option<EmpiricalMeasure>,
    /// P̂(𝒮1), P̂(𝒮1ᶜ ∩ 𝒮2), P̂((𝒮1 ∪ 𝒮2)ᶜ) from the direct runs.
    pub weights: [f64; 3],
    pub mixture: Vec<f64>,
    pub tv: f64,
}

struct Snapshot {
    cell: usize,
    ones: bool,
    twos: bool,
}

fn snapshots(p: &ModelParams, initial: &InitialCondition, idx: &[usize], n_runs: u64, seed: u64) -> Result<Vec<Snapshot>> {
    let w = p.window()?;
    (0..n_runs)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, k);
            let mut state = initial.build(&w, s)?.states().to_vec();
            let rec = simulate(&w, p.lambda1, p.lambda2, s, &mut state, p.horizon, false, None)?;
            let cell = idx.iter().rev().fold(0, |acc, &i| acc * 3 + state[i] as usize);
            Ok(Snapshot { cell, ones: rec.ones_ext > p.horizon, twos: rec.twos_ext > p.horizon })
        })
        .collect()
}

fn measure(sites: &[Point], time: f64, snaps: &[Snapshot]) -> EmpiricalMeasure {
    let mut histogram = vec![0; 3usize.pow(sites.len() as u32)];
    for s in snaps {
        histogram[s.cell] += 1;
    }
    EmpiricalMeasure { sites: sites.to_vec(), time, histogram, n_runs: snaps.len() as u64 }
}

fn observation_sites(w: &LatticeWindow, sites: &[Point]) -> Result<Vec<usize>> {
    if sites.len() > 4 {
        return Err(EstimatorError::WindowTooLarge(sites.len()));
    }
    sites.iter().map(|p| w.index(p).ok_or_else(|| EstimatorError::Site(p.clone()))).collect()
}

/// TV distance between the law of ξ_t on W and the mixture
/// P̂(𝒮1) μ̄1 + P̂(𝒮1ᶜ ∩ 𝒮2) μ̄2 + P̂(rest) δ_0, where μ̄1, μ̄2 are the laws
/// at t from the all-1 and all-2 starts and the weights are the horizon
/// survival frequencies of the same direct runs.
pub fn complete_convergence_check(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let p = &cfg.params;
    p.check_rates()?;
    let w = p.window()?;
    let idx = observation_sites(&w, &cfg.sites)?;
    let t = p.horizon;
    let direct_runs = snapshots(p, &cfg.initial, &idx, cfg.n_runs, derive_seed(cfg.seed, 0))?;
    let n = cfg.n_runs.max(1) as f64;
    let a = direct_runs.iter().filter(|s| s.ones).count() as f64 / n;
    let b = direct_runs.iter().filter(|s| !s.ones && s.twos).count() as f64 / n;
    let weights = [a, b, 1.0 - a - b];
    let direct = measure(&cfg.sites, t, &direct_runs);
    let reference = |init: InitialCondition, stream: u64| -> Result<EmpiricalMeasure> {
        Ok(measure(&cfg.sites, t, &snapshots(p, &init, &idx, cfg.n_runs, derive_seed(cfg.seed, stream))?))
    };
    let mu1 = if a > 0.0 { Some(reference(InitialCondition::AllOnes, 1)?) } else { None };
    let mu2 = if b > 0.0 { Some(reference(InitialCondition::AllTwos, 2)?) } else { None };
    let cells = direct.histogram.len();
    let mut mixture = EmpiricalMeasure::point_mass_zero(&cfg.sites, t).probabilities().iter().map(|q| q * weights[2]).collect::<Vec<_>>();
    for (m, wt) in [(&mu1, a), (&mu2, b)] {
        if let Some(m) = m {
            for (c, q) in m.probabilities().into_iter().enumerate().take(cells) {
                mixture[c] += wt * q;
            }
        }
    }
    let tv = tv_distance(&direct.probabilities(), &mixture);
    Ok(ConvergenceReport { direct, mu1, mu2, weights, mixture, tv })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuhauserReport {
    pub direct: EmpiricalMeasure,
    pub mu1: EmpiricalMeasure,
    pub tv: f64,
}

/// Product start with 1's present against the all-1 start: the laws of ξ_t
/// on W should agree.
pub fn neuhauser_check(params: &ModelParams, p1: f64, p2: f64, sites: &[Point], n_runs: u64, seed: u64) -> Result<NeuhauserReport> {
    params.check_rates()?;
    if !(p1 > 0.0) {
        return Err(EstimatorError::Params("the product start needs p1 > 0".into()));
    }
    let w = params.window()?;
    let idx = observation_sites(&w, sites)?;
    let t = params.horizon;
    let direct = measure(sites, t, &snapshots(params, &InitialCondition::Product { p1, p2 }, &idx, n_runs, derive_seed(seed, 0))?);
    let mu1 = measure(sites, t, &snapshots(params, &InitialCondition::AllOnes, &idx, n_runs, derive_seed(seed, 1))?);
    let tv = tv_distance(&direct.probabilities(), &mu1.probabilities());
    Ok(NeuhauserReport { direct, mu1, tv })
}

// ---------------------------------------------------------------------------
// Bound fits

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundId {
    Eq7,
    Eq8,
    Eq9,
    Eq10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFitConfig {
    pub which: BoundId,
    pub d: usize,
    pub r: i64,
    /// One-type rate (supercritical).
    pub lambda: f64,
    pub m: i64,
    /// Survival horizon for Eq8 / Eq9.
    pub horizon: f64,
    /// Eq7: distances x; Eq8: times t; Eq9: seed-set sizes; Eq10: times t.
    pub grid: Vec<f64>,
    /// Eq7 only: times t.
    pub times: Vec<f64>,
    pub n_runs: u64,
    pub level: f64,
    pub seed: u64,
    /// Estimated λ_c bracket; when given, λ must lie above it.
    pub lambda_c: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    pub name: String,
    pub value: f64,
    pub se: f64,
    /// One-sided p-value that the exponent is ≤ 0.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub t: f64,
    pub freq: Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFit {
    pub which: BoundId,
    /// All exponents are positive in the paper's parametrization.
    pub exponents: Vec<Exponent>,
    pub p_value: f64,
    pub sign_ok: bool,
    pub curve: Vec<CurvePoint>,
}

/// Fits ln p = a + slope · x and reports `sign · slope` as a positive
/// exponent.
fn exponent(name: &str, x: &[f64], props: &[Proportion], sign: f64) -> Exponent {
    match log_linear_fit(x, props) {
        Some(f) => Exponent { name: name.into(), value: sign * f.slope, se: f.slope_se, p_value: slope_sign_p(&f, sign) },
        None => Exponent { name: name.into(), value: f64::NAN, se: f64::NAN, p_value: 1.0 },
    }
}

/// Per-run summary of a single-site (or block) one-type run.
struct OneTypeRun {
    /// First time the process reaches ‖z‖ ≥ k, for k = 0..=M.
    reach: Vec<f64>,
    ext: f64,
}

fn one_type_run(w: &LatticeWindow, lambda: f64, seed: u64, start: &[usize], t_end: f64) -> Result<OneTypeRun> {
    let mut state = vec![0u8; w.n_sites()];
    for &x in start {
        state[x] = 1;
    }
    let mut reach = vec![f64::INFINITY; w.radius() as usize + 1];
    for &x in start {
        for r in reach.iter_mut().take(w.offset_norm(x) as usize + 1) {
            *r = 0.0;
        }
    }
    let mut ext = f64::INFINITY;
    sweep_events(w, stream_symmetric(w, lambda, seed)?, &mut state, t_end, false, |tr, c, _| {
        if tr.new == 1 {
            let k = w.offset_norm(tr.site as usize) as usize;
            for r in reach[..=k].iter_mut().rev() {
                if r.is_finite() {
                    break;
                }
                *r = tr.time;
            }
        }
        if c.ones == 0 {
            ext = tr.time;
            return false;
        }
        true
    });
    Ok(OneTypeRun { reach, ext })
}

pub fn bound_fit(cfg: &BoundFitConfig) -> Result<BoundFit> {
    if let Some(b) = cfg.lambda_c {
        if !(cfg.lambda > b[1]) {
            return Err(EstimatorError::Params(format!("λ = {} is not above the λ_c bracket {:?}", cfg.lambda, b)));
        }
    }
    if cfg.grid.len() < 2 {
        return Err(EstimatorError::Params("a fit needs at least two grid points".into()));
    }
    let lvl = cfg.level;
    let n = cfg.n_runs;
    match cfg.which {
        BoundId::Eq7 => {
            let t_max = cfg.times.iter().cloned().fold(f64::NAN, f64::max);
            if cfg.times.len() < 2 || !(t_max > 0.0) {
                return Err(EstimatorError::Params("Eq7 needs at least two positive times".into()));
            }
            let w = LatticeWindow::new(cfg.d, cfg.m, cfg.r, t_max)?;
            if cfg.grid.iter().any(|&x| x < 0.0 || x + 1.0 > cfg.m as f64) {
                return Err(EstimatorError::Params("Eq7 distances must satisfy 0 ≤ x < M".into()));
            }
            let o = w.index(&vec![0; cfg.d]).expect("origin");
            let runs = (0..n)
                .into_par_iter()
                .map(|k| one_type_run(&w, cfg.lambda, derive_seed(cfg.seed, k), &[o], t_max))
                .collect::<Result<Vec<_>>>()?;
            // P[∃ s ≤ t: (0,0) ⇝ (z,s), ‖z‖ > x] = P[reach(⌊x⌋+1) ≤ t]
            let freq = |x: f64, t: f64| {
                let k = x.floor() as usize + 1;
                wilson(runs.iter().filter(|r| r.reach[k] <= t).count() as u64, n, lvl)
            };
            let mut curve = Vec::new();
            for &t in &cfg.times {
                for &x in &cfg.grid {
                    curve.push(CurvePoint { x, t, freq: freq(x, t) });
                }
            }
            let t_mid = cfg.times[cfg.times.len() / 2];
            let by_x: Vec<Proportion> = cfg.grid.iter().map(|&x| freq(x, t_mid)).collect();
            let x_mid = cfg.grid[cfg.grid.len() / 2];
            let by_t: Vec<Proportion> = cfg.times.iter().map(|&t| freq(x_mid, t)).collect();
            let exps = vec![exponent("b2", &cfg.grid, &by_x, -1.0), exponent("b1", &cfg.times, &by_t, 1.0)];
            Ok(finish(BoundId::Eq7, exps, curve, lvl))
        }
        BoundId::Eq8 | BoundId::Eq9 => {
            let w = LatticeWindow::new(cfg.d, cfg.m, cfg.r, cfg.horizon)?;
            let sizes: Vec<usize> = if cfg.which == BoundId::Eq9 {
                cfg.grid.iter().map(|&k| k as usize).collect()
            } else {
                vec![1]
            };
            let mut curve = Vec::new();
            let mut props = Vec::new();
            for (si, &size) in sizes.iter().enumerate() {
                let start: Vec<usize> = (0..size as i64)
                    .map(|j| {
                        let mut p = vec![0; cfg.d];
                        p[0] = j;
                        w.index(&p).ok_or_else(|| EstimatorError::Site(p))
                    })
                    .collect::<Result<_>>()?;
                let ext = (0..n)
                    .into_par_iter()
                    .map(|k| Ok(one_type_run(&w, cfg.lambda, ladder(cfg.seed, si as u64, k), &start, cfg.horizon)?.ext))
                    .collect::<Result<Vec<f64>>>()?;
                if cfg.which == BoundId::Eq8 {
                    for &t in &cfg.grid {
                        let f = wilson(ext.iter().filter(|&&e| t < e && e.is_finite()).count() as u64, n, lvl);
                        curve.push(CurvePoint { x: 0.0, t, freq: f });
                        props.push(f);
                    }
                } else {
                    let f = wilson(ext.iter().filter(|e| e.is_finite()).count() as u64, n, lvl);
                    curve.push(CurvePoint { x: size as f64, t: cfg.horizon, freq: f });
                    props.push(f);
                }
            }
            let (name, id) = if cfg.which == BoundId::Eq8 { ("c_bar", BoundId::Eq8) } else { ("c_bar_1", BoundId::Eq9) };
            Ok(finish(id, vec![exponent(name, &cfg.grid, &props, -1.0)], curve, lvl))
        }
        BoundId::Eq10 => {
            let mut curve = Vec::new();
            let mut props = Vec::new();
            for (ti, &t) in cfg.grid.iter().enumerate() {
                let w = LatticeWindow::new(cfg.d, cfg.m, cfg.r, t)?;
                let o = w.index(&vec![0; cfg.d]).expect("origin");
                let mut yp = vec![0; cfg.d];
                yp[0] = t.sqrt().floor() as i64;
                let y = w.index(&yp).ok_or_else(|| EstimatorError::Site(yp.clone()))?;
                let fails = (0..n)
                    .into_par_iter()
                    .map(|k| -> Result<bool> {
                        let h = sample_symmetric(&w, cfg.lambda, ladder(cfg.seed, ti as u64, k))?;
                        let fwd = reach_set(&h, &Anchor::Point(o, 0.0), t, Mode::Basic)?;
                        if !fwd.iter().any(|&b| b) || fwd[y] {
                            return Ok(false);
                        }
                        Ok(reachable(&h, &Anchor::Level(0.0), &Anchor::Point(y, t), Mode::Basic)?.is_some())
                    })
                    .collect::<Result<Vec<bool>>>()?;
                let f = wilson(fails.iter().filter(|&&b| b).count() as u64, n, lvl);
                curve.push(CurvePoint { x: yp[0] as f64, t, freq: f });
                props.push(f);
            }
            let mut fit = finish(BoundId::Eq10, vec![exponent("decay", &cfg.grid, &props, -1.0)], curve, lvl);
            // the failure frequency must also stay bounded away from 1
            fit.sign_ok &= props.iter().all(|p| p.hi < 1.0);
            Ok(fit)
        }
    }
}

fn finish(which: BoundId, exponents: Vec<Exponent>, curve: Vec<CurvePoint>, level: f64) -> BoundFit {
    let p_value = exponents.iter().map(|e| e.p_value).fold(0.0, f64::max);
    BoundFit { which, sign_ok: p_value < 1.0 - level, p_value, exponents, curve }
}

// ---------------------------------------------------------------------------
// Renewal drift

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftScanConfig {
    pub d: usize,
    pub r: i64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub ls: Vec<i64>,
    /// Window radius is L + margin.
    pub margin: i64,
    pub horizon: f64,
    pub n_runs: u64,
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub l: i64,
    pub runs: u64,
    /// Runs in A = {(Le1,0) ⇝ ∞} ∪ {(−Le1,0) ⇝ ∞} (horizon surrogate).
    pub in_a: u64,
    pub pair_extinct: u64,
    pub boundary: u64,
    /// Z*·e1 over the runs in A.
    pub mean: MeanCi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftScan {
    pub rows: Vec<DriftRow>,
    /// Smallest L whose interval lies above 0.
    pub chosen: Option<i64>,
}

/// Scans L upward and stops at the first L with E[Z*·e1 | A] > 0 at the
/// configured confidence.
pub fn drift_scan(cfg: &DriftScanConfig) -> Result<DriftScan> {
    if !(cfg.lambda1 >= cfg.lambda2) {
        return Err(EstimatorError::Params("need λ1 ≥ λ2".into()));
    }
    let mut rows = Vec::new();
    for (li, &l) in cfg.ls.iter().enumerate() {
        let w = LatticeWindow::new(cfg.d, l + cfg.margin, cfg.r, cfg.horizon)?;
        let out = (0..cfg.n_runs)
            .into_par_iter()
            .map(|k| -> Result<(Option<f64>, Option<CensorReason>)> {
                let h = sample_harris(&w, cfg.lambda1, cfg.lambda2, ladder(cfg.seed, li as u64, k))?;
                let ing = build_ingredient2(&h, l, Orientation::Plus)?;
                Ok((ing.found.map(|(z, _)| z[0] as f64), ing.censored))
            })
            .collect::<Result<Vec<_>>>()?;
        let zs: Vec<f64> = out.iter().filter_map(|o| o.0).collect();
        let count = |r: CensorReason| out.iter().filter(|o| o.1 == Some(r)).count() as u64;
        let row = DriftRow {
            l,
            runs: cfg.n_runs,
            in_a: zs.len() as u64,
            pair_extinct: count(CensorReason::PairExtinct),
            boundary: count(CensorReason::Boundary),
            mean: mean_ci(&zs, cfg.level),
        };
        let done = row.mean.n > 1 && row.mean.lo > 0.0;
        rows.push(row);
        if done {
            return Ok(DriftScan { rows, chosen: Some(l) });
        }
    }
    Ok(DriftScan { rows, chosen: None })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalDriftConfig {
    pub params: ModelParams,
    pub l: i64,
    /// Stop once this many runs have (0,0) surviving to the horizon.
    pub target_survivors: u64,
    pub max_attempts: u64,
    pub batch: u64,
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenewalDrift {
    pub attempts: u64,
    pub survivors: u64,
    pub found: u64,
    /// Censoring reasons among survivors.
    pub censored: BTreeMap<String, u64>,
    /// Cases 1–6 among found points.
    pub cases: [u64; 6],
    /// X·e1 over the found points.
    pub mean_x1: Option<MeanCi>,
    pub points: Vec<(Point, f64)>,
}

/// Samples systems until enough have (0,0) ⇝ horizon, builds (X, T) on each
/// and reports the mean of X·e1.
pub fn renewal_drift(cfg: &RenewalDriftConfig) -> Result<RenewalDrift> {
    let p = &cfg.params;
    p.check_rates()?;
    let w = p.window()?;
    let mut res = RenewalDrift {
        attempts: 0,
        survivors: 0,
        found: 0,
        censored: BTreeMap::new(),
        cases: [0; 6],
        mean_x1: None,
        points: Vec::new(),
    };
    let batch = cfg.batch.max(1);
    let mut start = 0;
    'outer: while start < cfg.max_attempts {
        let end = (start + batch).min(cfg.max_attempts);
        let outcomes = (start..end)
            .into_par_iter()
            .map(|k| -> Result<RenewalOutcome> {
                let h = sample_harris(&w, p.lambda1, p.lambda2, derive_seed(cfg.seed, k))?;
                Ok(build_renewal_point(&h, cfg.l)?)
            })
            .collect::<Result<Vec<_>>>()?;
        for o in outcomes {
            res.attempts += 1;
            match o {
                RenewalOutcome::Censored { reason: CensorReason::OriginDies, .. } => {}
                RenewalOutcome::Censored { reason, .. } => {
                    res.survivors += 1;
                    *res.censored.entry(format!("{reason:?}")).or_insert(0) += 1;
                }
                RenewalOutcome::Found(pt) => {
                    res.survivors += 1;
                    res.found += 1;
                    res.cases[pt.case as usize - 1] += 1;
                    res.points.push((pt.x.clone(), pt.t));
                }
            }
            if res.survivors >= cfg.target_survivors {
                break 'outer;
            }
        }
        start = end;
    }
    if !res.points.is_empty() {
        let xs: Vec<f64> = res.points.iter().map(|(x, _)| x[0] as f64).collect();
        res.mean_x1 = Some(mean_ci(&xs, cfg.level));
    }
    Ok(res)
}

/// Per-coordinate two-sample KS tests of (|X·e_i|, T) between two samples
/// of renewal points (e.g. two reflection vectors); p-values per coordinate,
/// T last.
pub fn kappa_invariance(a: &[(Point, f64)], b: &[(Point, f64)]) -> Vec<f64> {
    let d = a.first().or(b.first()).map_or(0, |p| p.0.len());
    let mut out: Vec<f64> = (0..d)
        .map(|i| {
            let xa: Vec<f64> = a.iter().map(|p| p.0[i].abs() as f64).collect();
            let xb: Vec<f64> = b.iter().map(|p| p.0[i].abs() as f64).collect();
            ks_two_sample(&xa, &xb).1
        })
        .collect();
    let ta: Vec<f64> = a.iter().map(|p| p.1).collect();
    let tb: Vec<f64> = b.iter().map(|p| p.1).collect();
    out.push(ks_two_sample(&ta, &tb).1);
    out
}

// ---------------------------------------------------------------------------
// Audit

/// Membership in G(n, u1, u2): no 2 in B_0(u2) and more than n 1's in
/// B_0(u1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GSetPredicate {
    pub n: usize,
    pub u1: f64,
    pub u2: f64,
}

impl GSetPredicate {
    pub fn contains(&self, xi: &Configuration) -> bool {
        let w = xi.window();
        let s = xi.states();
        let mut ones = 0;
        for (i, &v) in s.iter().enumerate() {
            let r = w.offset_norm(i) as f64;
            if v == 2 && r <= self.u2 {
                return false;
            }
            if v == 1 && r <= self.u1 {
                ones += 1;
            }
        }
        ones > self.n
    }

    /// The comparison order: `self` ⊆ `other` is implied.
    pub fn implies(&self, other: &GSetPredicate) -> bool {
        self.n >= other.n && self.u1 <= other.u1 && self.u2 >= other.u2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub params: ModelParams,
    pub n_systems: u64,
    /// Checkpoint times per system (equally spaced, the last at T_h).
    pub checkpoints: usize,
    /// Densities of the random starts.
    pub p1: f64,
    pub p2: f64,
    pub gset_trials: u64,
    /// Block survival: the 1-block radii, with 2's outside.
    pub block_radii: Vec<i64>,
    pub block_params: ModelParams,
    pub block_runs: u64,
    /// Significance of the block trend test.
    pub alpha: f64,
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditItem {
    pub name: String,
    pub checks: u64,
    pub violations: u64,
    pub passed: bool,
    pub detail: String,
    pub counterexamples: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub items: Vec<AuditItem>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }
    pub fn item(&self, name: &str) -> Option<&AuditItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

/// Names of the exact pathwise invariants, in report order.
pub const PATHWISE_INVARIANTS: [&str; 7] = [
    "twos_from_basic_paths",
    "ones_from_selective_paths",
    "basic_paths_keep_sites_occupied",
    "occupied_sites_from_selective_paths",
    "free_selective_paths_carry_ones",
    "one_type_from_selective_paths",
    "all_ones_from_selective_paths",
];

#[derive(Default)]
struct Tally {
    checks: [u64; 7],
    violations: [u64; 7],
    examples: [Vec<String>; 7],
}

impl Tally {
    fn record(&mut self, k: usize, ok: bool, what: impl FnOnce() -> String) {
        self.checks[k] += 1;
        if !ok {
            self.violations[k] += 1;
            if self.examples[k].len() < 5 {
                self.examples[k].push(what());
            }
        }
    }

    fn merge(mut self, o: Tally) -> Tally {
        for k in 0..7 {
            self.checks[k] += o.checks[k];
            self.violations[k] += o.violations[k];
            let room = 5 - self.examples[k].len().min(5);
            self.examples[k].extend(o.examples[k].iter().take(room).cloned());
        }
        self
    }
}

fn subset(a: &[bool], b: &[bool]) -> Option<usize> {
    a.iter().zip(b).position(|(&x, &y)| x && !y)
}

fn sites_where(s: &[u8], f: impl Fn(u8) -> bool) -> Vec<usize> {
    s.iter().enumerate().filter(|(_, &v)| f(v)).map(|(i, _)| i).collect()
}

fn reach_from(h: &crate::graphical::AugmentedHarrisSystem, src: &[usize], t: f64, mode: Mode) -> Result<Vec<bool>> {
    if src.is_empty() {
        return Ok(vec![false; h.n_sites()]);
    }
    Ok(reach_set(h, &Anchor::Set(src.to_vec(), 0.0), t, mode)?)
}

/// Runs every exact pathwise invariant on one system and start.
fn audit_system(h: &crate::graphical::AugmentedHarrisSystem, xi0: &Configuration, times: &[f64], seed: u64) -> Result<Tally> {
    let mut tally = Tally::default();
    let w = h.window();
    let traj = evolve(xi0, h, h.horizon())?;
    let s0 = xi0.states();
    let twos0 = sites_where(s0, |v| v == 2);
    let ones0 = sites_where(s0, |v| v == 1);
    let occ0 = sites_where(s0, |v| v != 0);
    // a {0,1} start for the one-type identities
    let zeta0 = Configuration::new(w, s0.iter().map(|&v| (v == 1) as u8).collect())?;
    let zeta = evolve_one_type(&zeta0, h, OneTypeRate::Lambda1WithSelective, h.horizon())?;
    let full = evolve_one_type(&Configuration::filled(w, 1), h, OneTypeRate::Lambda1WithSelective, h.horizon())?;
    let all: Vec<usize> = (0..w.n_sites()).collect();
    for &t in times {
        let xi = traj.config_at(t);
        let s = xi.states();
        let is = |v: u8| s.iter().map(|&x| x == v).collect::<Vec<bool>>();
        let nonzero: Vec<bool> = s.iter().map(|&x| x != 0).collect();
        let ctx = |k: usize, x: usize| format!("seed {seed}, t = {t}, site {:?}, invariant {}", w.point(x), PATHWISE_INVARIANTS[k]);

        let b2 = reach_from(h, &twos0, t, Mode::Basic)?;
        let v = subset(&is(2), &b2);
        tally.record(0, v.is_none(), || ctx(0, v.unwrap()));

        let s1 = reach_from(h, &ones0, t, Mode::Selective)?;
        let v = subset(&is(1), &s1);
        tally.record(1, v.is_none(), || ctx(1, v.unwrap()));

        let b0 = reach_from(h, &occ0, t, Mode::Basic)?;
        let v = subset(&b0, &nonzero);
        tally.record(2, v.is_none(), || ctx(2, v.unwrap()));

        let s0r = reach_from(h, &occ0, t, Mode::Selective)?;
        let v = subset(&nonzero, &s0r);
        tally.record(3, v.is_none(), || ctx(3, v.unwrap()));

        let f1 = fsip_reach_set(h, &ones0, 0.0, t)?;
        let v = subset(&f1, &is(1));
        tally.record(4, v.is_none(), || ctx(4, v.unwrap()));

        let z = zeta.config_at(t);
        let zs: Vec<bool> = z.states().iter().map(|&x| x == 1).collect();
        let v = zs.iter().zip(&s1).position(|(a, b)| a != b);
        tally.record(5, v.is_none(), || ctx(5, v.unwrap()));

        let fz: Vec<bool> = full.config_at(t).states().iter().map(|&x| x == 1).collect();
        let sl = reach_from(h, &all, t, Mode::Selective)?;
        let v = fz.iter().zip(&sl).position(|(a, b)| a != b);
        tally.record(6, v.is_none(), || ctx(6, v.unwrap()));
    }
    Ok(tally)
}

/// Pathwise audit of a given batch of (system, start) pairs at the given
/// checkpoint times.
pub fn audit_batch(batch: &[(crate::graphical::AugmentedHarrisSystem, Configuration)], times: &[f64]) -> Result<Vec<AuditItem>> {
    let tally = batch
        .par_iter()
        .enumerate()
        .map(|(i, (h, xi0))| audit_system(h, xi0, times, i as u64))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(Tally::default(), Tally::merge);
    Ok(items_of(tally))
}

fn items_of(tally: Tally) -> Vec<AuditItem> {
    (0..7)
        .map(|k| AuditItem {
            name: PATHWISE_INVARIANTS[k].into(),
            checks: tally.checks[k],
            violations: tally.violations[k],
            passed: tally.violations[k] == 0,
            detail: String::new(),
            counterexamples: tally.examples[k].clone(),
        })
        .collect()
}

/// Pathwise inclusions and identities on random systems, G-set
/// monotonicity, and the survival-from-big-block trend.
pub fn invariant_audit(cfg: &AuditConfig) -> Result<AuditReport> {
    let p = &cfg.params;
    p.check_rates()?;
    let w = p.window()?;
    let n_cp = cfg.checkpoints.max(1);
    let times: Vec<f64> = (1..=n_cp).map(|i| p.horizon * i as f64 / n_cp as f64).collect();
    let tally = (0..cfg.n_systems)
        .into_par_iter()
        .map(|k| -> Result<Tally> {
            let s = ladder(cfg.seed, 0, k);
            let h = sample_harris(&w, p.lambda1, p.lambda2, s)?;
            let xi0 = InitialCondition::Product { p1: cfg.p1, p2: cfg.p2 }.build(&w, s)?;
            audit_system(&h, &xi0, &times, s)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(Tally::default(), Tally::merge);
    let mut items = items_of(tally);
    items.push(gset_audit(&w, cfg)?);
    items.push(block_trend(cfg)?);
    Ok(AuditReport { items })
}

fn gset_audit(w: &LatticeWindow, cfg: &AuditConfig) -> Result<AuditItem> {
    let m = w.radius() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut violations = 0;
    let mut examples = Vec::new();
    for k in 0..cfg.gset_trials {
        let p1: f64 = rng.gen();
        let xi = InitialCondition::Product { p1, p2: rng.gen::<f64>() * (1.0 - p1) }.build(w, ladder(cfg.seed, 2, k))?;
        let g = GSetPredicate { n: rng.gen_range(0..6), u1: rng.gen::<f64>() * m, u2: rng.gen::<f64>() * m };
        let g2 = GSetPredicate {
            n: rng.gen_range(0..=g.n),
            u1: g.u1 + rng.gen::<f64>() * (m - g.u1),
            u2: rng.gen::<f64>() * g.u2,
        };
        debug_assert!(g.implies(&g2));
        if g.contains(&xi) && !g2.contains(&xi) {
            violations += 1;
            if examples.len() < 5 {
                examples.push(format!("{g:?} ⊄ {g2:?} at trial {k}"));
            }
        }
    }
    Ok(AuditItem {
        name: "g_set_monotone".into(),
        checks: cfg.gset_trials,
        violations,
        passed: violations == 0,
        detail: String::new(),
        counterexamples: examples,
    })
}

fn block_trend(cfg: &AuditConfig) -> Result<AuditItem> {
    let bp = &cfg.block_params;
    let mut props = Vec::new();
    for (i, &m) in cfg.block_radii.iter().enumerate() {
        let sc = SurvivalConfig {
            params: bp.clone(),
            initial: InitialCondition::Block { radius: m, inner: 1, outer: 2 },
            n_runs: cfg.block_runs,
            seed: ladder(cfg.seed, 3, i as u64),
            level: cfg.level,
            track_twos: false,
            lambda_c: None,
        };
        let est = summarize_survival(&sc, &survival_runs(&sc, false)?);
        props.push(est.s1[1]);
    }
    let x: Vec<f64> = cfg.block_radii.iter().map(|&m| m as f64).collect();
    let t = trend_test(&x, &props);
    let passed = t.p_increasing < cfg.alpha;
    Ok(AuditItem {
        name: "block_survival_increasing".into(),
        checks: props.len() as u64,
        violations: (!passed) as u64,
        passed,
        detail: format!(
            "radii {:?}: frequencies {:?}, slope {:.4}, z {:.2}, p {:.2e}",
            cfg.block_radii,
            props.iter().map(|p| p.p_hat).collect::<Vec<_>>(),
            t.slope,
            t.z,
            t.p_increasing
        ),
        counterexamples: Vec::new(),
    })
}
